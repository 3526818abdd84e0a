use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::Container;
use crate::error::{Error, Result};

/// Two independent shuffled index streams: one over hazy images that defines
/// the epoch, one over clean images that is never keyed by the hazy index.
#[derive(Clone, Debug)]
pub struct UnpairedSampler {
    rng_x: ChaCha8Rng,
    rng_y: ChaCha8Rng,
    order_x: Vec<usize>,
    order_y: Vec<usize>,
    pos_x: usize,
    pos_y: usize,
    epoch: u64,
}

impl UnpairedSampler {
    pub fn new(n_x: usize, n_y: usize, seed: u64) -> Result<Self> {
        if n_x == 0 || n_y == 0 {
            return Err(Error::Param(format!("sampler needs non-empty sets, got {n_x} hazy / {n_y} clean")));
        }
        let mut rng_x = ChaCha8Rng::seed_from_u64(seed);
        rng_x.set_stream(1);
        let mut rng_y = ChaCha8Rng::seed_from_u64(seed);
        rng_y.set_stream(2);
        let mut order_x: Vec<usize> = (0..n_x).collect();
        let mut order_y: Vec<usize> = (0..n_y).collect();
        order_x.shuffle(&mut rng_x);
        order_y.shuffle(&mut rng_y);
        Ok(Self {
            rng_x,
            rng_y,
            order_x,
            order_y,
            pos_x: 0,
            pos_y: 0,
            epoch: 0,
        })
    }

    pub fn epoch_len(&self) -> usize {
        self.order_x.len()
    }

    /// Completed epochs.
    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    /// Next `(hazy_index, clean_index)` pair.
    pub fn next_pair(&mut self) -> (usize, usize) {
        let i = self.order_x[self.pos_x];
        self.pos_x += 1;
        if self.pos_x == self.order_x.len() {
            self.order_x.shuffle(&mut self.rng_x);
            self.pos_x = 0;
            self.epoch += 1;
        }
        let j = self.order_y[self.pos_y];
        self.pos_y += 1;
        if self.pos_y == self.order_y.len() {
            self.order_y.shuffle(&mut self.rng_y);
            self.pos_y = 0;
        }
        (i, j)
    }

    pub fn save(&self, c: &mut Container, prefix: &str) {
        for (name, rng) in [("rng_x", &self.rng_x), ("rng_y", &self.rng_y)] {
            let seed = rng.get_seed();
            let mut v: Vec<u64> = seed
                .chunks_exact(8)
                .map(|b| u64::from_le_bytes(b.try_into().expect("8 bytes")))
                .collect();
            v.push(rng.get_stream());
            let wp = rng.get_word_pos();
            v.push(wp as u64);
            v.push((wp >> 64) as u64);
            c.put_ints(&format!("{prefix}.{name}"), v);
        }
        let idx = |o: &[usize]| o.iter().map(|&i| i as u64).collect();
        c.put_ints(&format!("{prefix}.order_x"), idx(&self.order_x));
        c.put_ints(&format!("{prefix}.order_y"), idx(&self.order_y));
        c.put_ints(
            &format!("{prefix}.cursor"),
            vec![self.pos_x as u64, self.pos_y as u64, self.epoch],
        );
    }

    pub fn load(c: &Container, prefix: &str) -> Result<Self> {
        let rng = |name: &str| -> Result<ChaCha8Rng> {
            let v = c.ints(&format!("{prefix}.{name}"))?;
            if v.len() != 7 {
                return Err(Error::Checkpoint(format!("{prefix}.{name}: bad rng state")));
            }
            let mut seed = [0u8; 32];
            for (chunk, w) in seed.chunks_exact_mut(8).zip(&v[..4]) {
                chunk.copy_from_slice(&w.to_le_bytes());
            }
            let mut r = ChaCha8Rng::from_seed(seed);
            r.set_stream(v[4]);
            r.set_word_pos(v[5] as u128 | (v[6] as u128) << 64);
            Ok(r)
        };
        let order = |name: &str| -> Result<Vec<usize>> {
            Ok(c.ints(&format!("{prefix}.{name}"))?.iter().map(|&i| i as usize).collect())
        };
        let order_x = order("order_x")?;
        let order_y = order("order_y")?;
        let cursor = c.ints(&format!("{prefix}.cursor"))?;
        let [pos_x, pos_y, epoch] = cursor else {
            return Err(Error::Checkpoint(format!("{prefix}.cursor: bad length")));
        };
        let (pos_x, pos_y) = (*pos_x as usize, *pos_y as usize);
        if order_x.is_empty() || order_y.is_empty() || pos_x >= order_x.len() || pos_y >= order_y.len() {
            return Err(Error::Checkpoint(format!("{prefix}: inconsistent sampler state")));
        }
        Ok(Self {
            rng_x: rng("rng_x")?,
            rng_y: rng("rng_y")?,
            order_x,
            order_y,
            pos_x,
            pos_y,
            epoch: *epoch,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_hazy_index_once_per_epoch() {
        let mut s = UnpairedSampler::new(7, 3, 1).unwrap();
        for e in 0..3 {
            let mut seen: Vec<usize> = (0..7).map(|_| s.next_pair().0).collect();
            seen.sort();
            assert_eq!(seen, (0..7).collect::<Vec<_>>());
            assert_eq!(s.epoch(), e + 1);
        }
    }

    #[test]
    fn clean_stream_ignores_hazy_index() {
        // Same seed, different hazy-set sizes: clean stream must be identical.
        let mut a = UnpairedSampler::new(4, 5, 9).unwrap();
        let mut b = UnpairedSampler::new(11, 5, 9).unwrap();
        let ya: Vec<_> = (0..20).map(|_| a.next_pair().1).collect();
        let yb: Vec<_> = (0..20).map(|_| b.next_pair().1).collect();
        assert_eq!(ya, yb);
    }

    #[test]
    fn save_load_continues_identically() {
        let mut s = UnpairedSampler::new(5, 4, 3).unwrap();
        for _ in 0..7 {
            s.next_pair();
        }
        let mut c = Container::new();
        s.save(&mut c, "sampler");
        let c = Container::from_bytes(&c.to_bytes()).unwrap();
        let mut r = UnpairedSampler::load(&c, "sampler").unwrap();
        assert_eq!(r.epoch(), s.epoch());
        for _ in 0..30 {
            assert_eq!(r.next_pair(), s.next_pair());
        }
    }

    #[test]
    fn empty_sets_rejected() {
        assert!(UnpairedSampler::new(0, 3, 0).is_err());
        assert!(UnpairedSampler::new(3, 0, 0).is_err());
    }
}
