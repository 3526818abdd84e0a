//! Training objectives.
//!
//! Adversarial terms use the least-squares form. The generator objective is
//! `L = L_adv + lambda_cycle * L_cyc + gamma * L_perc`, where `L_cyc` is the
//! L1 reconstruction error of both cycles and `L_perc` the squared feature
//! distance of both cycles at every tap of the frozen extractor.

use crate::data::Image;
use crate::error::{Error, Result};
use crate::nets::Features;
use crate::tensor::{Tape, Tensor, Var};

/// Ratio between the cycle weight and the perceptual weight.
pub const CYCLE_TO_PERCEPTUAL_RATIO: f64 = 1e5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PerceptualNorm {
    /// Squared distance averaged over each tap's elements.
    Mean,
    /// Plain squared L2 norm per tap.
    Sum,
}

impl std::str::FromStr for PerceptualNorm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Self::Mean),
            "sum" => Ok(Self::Sum),
            _ => Err(Error::Config(format!("perceptual_norm must be mean or sum, got {s:?}"))),
        }
    }
}

impl std::fmt::Display for PerceptualNorm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Mean => "mean",
            Self::Sum => "sum",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda_cycle: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self::standard()
    }
}

impl LossWeights {
    /// `lambda_cycle = 10`, `gamma = lambda_cycle / 1e5 = 1e-4`.
    pub fn standard() -> Self {
        let lambda_cycle = 10.0;
        Self {
            lambda_cycle,
            gamma: lambda_cycle / CYCLE_TO_PERCEPTUAL_RATIO,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda_cycle", self.lambda_cycle), ("gamma", self.gamma)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Param(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// `mean((D(real) - 1)^2) + mean(D(fake)^2)`.
pub fn lsgan_discriminator(tape: &mut Tape, real: Var, fake: Var) -> Var {
    let r = tape.add_scalar(real, -1.0);
    let r = tape.square(r);
    let r = tape.mean(r);
    let f = tape.square(fake);
    let f = tape.mean(f);
    tape.add(r, f).expect("scalars")
}

/// `mean((D(fake) - 1)^2)`.
pub fn lsgan_generator(tape: &mut Tape, fake: Var) -> Var {
    let f = tape.add_scalar(fake, -1.0);
    let f = tape.square(f);
    tape.mean(f)
}

/// `(d_loss, g_loss)` for a pair of score maps.
pub fn adversarial_losses(d_real: &Tensor, d_fake: &Tensor) -> Result<(f64, f64)> {
    if !d_real.all_finite() || !d_fake.all_finite() {
        return Err(Error::Param("non-finite discriminator scores".into()));
    }
    let mean = |t: &Tensor, f: &dyn Fn(f64) -> f64| t.data().iter().map(|&v| f(v)).sum::<f64>() / t.len() as f64;
    let d = mean(d_real, &|v| (v - 1.0) * (v - 1.0)) + mean(d_fake, &|v| v * v);
    let g = mean(d_fake, &|v| (v - 1.0) * (v - 1.0));
    Ok((d, g))
}

/// Mean absolute difference between an image and its reconstruction.
pub fn cycle_loss(tape: &mut Tape, x: Var, cyc: Var) -> Result<Var> {
    let d = tape.sub(x, cyc)?;
    let d = tape.abs(d);
    Ok(tape.mean(d))
}

pub fn cycle_loss_value(x: &Image, cyc: &Image) -> Result<f64> {
    x.check_same_dims(cyc, "cycle_loss")?;
    let n = x.data().len() as f64;
    Ok(x.data().iter().zip(cyc.data()).map(|(a, b)| (a - b).abs()).sum::<f64>() / n)
}

/// Squared feature distance between `a` and `b`, summed over taps.
pub fn perceptual_distance(
    tape: &mut Tape,
    phi: &dyn Features,
    a: Var,
    b: Var,
    norm: PerceptualNorm,
) -> Result<Var> {
    let fa = phi.features(tape, a)?;
    let fb = phi.features(tape, b)?;
    let mut total: Option<Var> = None;
    for (ta, tb) in fa.into_iter().zip(fb) {
        let d = tape.sub(ta, tb)?;
        let d = tape.square(d);
        let term = match norm {
            PerceptualNorm::Mean => tape.mean(d),
            PerceptualNorm::Sum => tape.sum(d),
        };
        total = Some(match total {
            Some(t) => tape.add(t, term)?,
            None => term,
        });
    }
    total.ok_or_else(|| Error::Contract("feature extractor produced no taps".into()))
}

/// `||phi(x) - phi(cyc_x)||^2 + ||phi(y) - phi(cyc_y)||^2`.
pub fn cyclic_perceptual_loss(
    tape: &mut Tape,
    phi: &dyn Features,
    (x, cyc_x): (Var, Var),
    (y, cyc_y): (Var, Var),
    norm: PerceptualNorm,
) -> Result<Var> {
    let px = perceptual_distance(tape, phi, x, cyc_x, norm)?;
    let py = perceptual_distance(tape, phi, y, cyc_y, norm)?;
    tape.add(px, py)
}

/// Value-only form of [`cyclic_perceptual_loss`].
pub fn cyclic_perceptual_value(
    phi: &dyn Features,
    (x, cyc_x): (&Image, &Image),
    (y, cyc_y): (&Image, &Image),
    norm: PerceptualNorm,
) -> Result<f64> {
    let mut tape = Tape::new();
    let mut c = |img: &Image| tape.constant(img.to_tensor());
    let vars = (c(x), c(cyc_x), c(y), c(cyc_y));
    let l = cyclic_perceptual_loss(&mut tape, phi, (vars.0, vars.1), (vars.2, vars.3), norm)?;
    Ok(tape.value(l).item())
}

/// Unweighted generator-side loss terms.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossComponents {
    /// Sum of both generators' adversarial terms.
    pub adversarial: f64,
    /// Sum of both cycles' L1 terms.
    pub cycle: f64,
    pub perceptual: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Objective {
    pub total: f64,
    pub adversarial: f64,
    pub weighted_cycle: f64,
    pub weighted_perceptual: f64,
}

pub fn full_objective(c: &LossComponents, w: &LossWeights) -> Result<Objective> {
    w.validate()?;
    for (name, v) in [
        ("adversarial", c.adversarial),
        ("cycle", c.cycle),
        ("perceptual", c.perceptual),
    ] {
        if !v.is_finite() {
            return Err(Error::Param(format!("{name} loss is not finite: {v}")));
        }
    }
    let weighted_cycle = w.lambda_cycle * c.cycle;
    let weighted_perceptual = w.gamma * c.perceptual;
    Ok(Objective {
        total: c.adversarial + weighted_cycle + weighted_perceptual,
        adversarial: c.adversarial,
        weighted_cycle,
        weighted_perceptual,
    })
}

/// Tape form of [`full_objective`] over already-recorded scalar terms.
pub fn objective_on_tape(
    tape: &mut Tape,
    adversarial: Var,
    cycle: Var,
    perceptual: Option<Var>,
    w: &LossWeights,
) -> Result<Var> {
    w.validate()?;
    let c = tape.scale(cycle, w.lambda_cycle);
    let mut total = tape.add(adversarial, c)?;
    if let Some(p) = perceptual {
        let p = tape.scale(p, w.gamma);
        total = tape.add(total, p)?;
    }
    Ok(total)
}

/// Warns when the weighted perceptual term outweighs the weighted cycle term,
/// which tends to wash out colour.
pub fn balance_warning(c: &LossComponents, w: &LossWeights) -> Option<String> {
    let p = w.gamma * c.perceptual;
    let cyc = w.lambda_cycle * c.cycle;
    (p > cyc).then(|| {
        format!("weighted perceptual loss {p:.4e} exceeds weighted cycle loss {cyc:.4e}; consider lowering gamma")
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Padding;

    #[test]
    fn standard_weights_ratio() {
        let w = LossWeights::standard();
        assert_eq!(w.lambda_cycle, 10.0);
        assert_eq!(w.gamma, 1e-4);
        assert_eq!(w.gamma, w.lambda_cycle / 1e5);
    }

    #[test]
    fn adversarial_examples() {
        let ones = Tensor::full(&[4, 4, 1], 1.0);
        let zeros = Tensor::zeros(&[4, 4, 1]);
        assert_eq!(adversarial_losses(&ones, &zeros).unwrap().0, 0.0);
        assert_eq!(adversarial_losses(&zeros, &ones).unwrap().1, 0.0);
        let half = Tensor::full(&[4, 4, 1], 0.5);
        assert_eq!(adversarial_losses(&half, &half).unwrap(), (0.5, 0.25));
        let nan = Tensor::full(&[1], f64::NAN);
        assert!(adversarial_losses(&nan, &half).is_err());
    }

    #[test]
    fn adversarial_tape_matches_values() {
        let real = Tensor::from_fn(&[3, 3, 1], |i| 0.1 * i as f64 - 0.2);
        let fake = Tensor::from_fn(&[3, 3, 1], |i| 0.7 - 0.05 * i as f64);
        let mut tape = Tape::new();
        let (r, f) = (tape.constant(real.clone()), tape.constant(fake.clone()));
        let d = lsgan_discriminator(&mut tape, r, f);
        let g = lsgan_generator(&mut tape, f);
        let (dv, gv) = adversarial_losses(&real, &fake).unwrap();
        assert!((tape.value(d).item() - dv).abs() < 1e-15);
        assert!((tape.value(g).item() - gv).abs() < 1e-15);
    }

    #[test]
    fn cycle_loss_examples() {
        let x = Image::from_fn(4, 4, 3, |y, x, c| 0.05 * (y + x + c) as f64);
        assert_eq!(cycle_loss_value(&x, &x).unwrap(), 0.0);
        let shifted = x.map(|v| v + 0.2);
        assert!((cycle_loss_value(&x, &shifted).unwrap() - 0.2).abs() < 1e-15);
        assert!(cycle_loss_value(&x, &Image::filled(4, 5, 3, 0.0)).is_err());
    }

    #[test]
    fn cycle_loss_tape_matches_direct_sum() {
        let a = Image::from_fn(5, 3, 3, |y, x, c| ((y * 7 + x * 3 + c) % 11) as f64 / 11.0);
        let b = Image::from_fn(5, 3, 3, |y, x, c| ((y * 5 + x + 2 * c) % 13) as f64 / 13.0);
        let mut direct = 0.0;
        for (p, q) in a.data().iter().zip(b.data()) {
            direct += (p - q).abs();
        }
        direct /= 45.0;
        let mut tape = Tape::new();
        let (va, vb) = (tape.constant(a.to_tensor()), tape.constant(b.to_tensor()));
        let l = cycle_loss(&mut tape, va, vb).unwrap();
        assert!((tape.value(l).item() - direct).abs() < 1e-12);
    }

    /// One 1x1 conv layer, tapped once.
    struct ToyPhi(Tensor);

    impl Features for ToyPhi {
        fn features(&self, tape: &mut Tape, x: Var) -> Result<Vec<Var>> {
            let k = tape.constant(self.0.clone());
            Ok(vec![tape.conv2d(x, k, 1, Padding::Valid)?])
        }
    }

    #[test]
    fn toy_perceptual_matches_hand_computation() {
        // phi(p) = 2 * p[0] - p[1] per pixel, two-channel 2x2 images.
        let phi = ToyPhi(Tensor::new(vec![1, 1, 2, 1], vec![2.0, -1.0]).unwrap());
        let img = |v: [f64; 8]| Image::new(2, 2, 2, v.to_vec()).unwrap();
        let x = img([0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8]);
        let cx = img([0.2, 0.2, 0.3, 0.1, 0.5, 0.9, 0.0, 0.8]);
        let y = img([1.0, 0.0, 0.0, 1.0, 0.5, 0.5, 0.25, 0.75]);
        let cy = img([1.0, 0.5, 0.0, 1.0, 0.5, 0.5, 0.25, 0.25]);
        // phi(x)  = [0.0, 0.2, 0.4, 0.6];  phi(cx) = [0.2, 0.5, 0.1, -0.8]
        // diffs   = [-0.2, -0.3, 0.3, 1.4]  -> 0.04 + 0.09 + 0.09 + 1.96 = 2.18
        // phi(y)  = [2.0, -1.0, 0.5, -0.25]; phi(cy) = [1.5, -1.0, 0.5, 0.25]
        // diffs   = [0.5, 0, 0, -0.5]        -> 0.5
        let sum = cyclic_perceptual_value(&phi, (&x, &cx), (&y, &cy), PerceptualNorm::Sum).unwrap();
        assert!((sum - 2.68).abs() < 1e-12, "{sum}");
        let mean = cyclic_perceptual_value(&phi, (&x, &cx), (&y, &cy), PerceptualNorm::Mean).unwrap();
        assert!((mean - (2.18 / 4.0 + 0.5 / 4.0)).abs() < 1e-12, "{mean}");
    }

    #[test]
    fn perceptual_zero_on_identity_and_symmetric() {
        let phi = ToyPhi(Tensor::new(vec![1, 1, 3, 2], vec![1.0, 0.5, -1.0, 2.0, 0.3, 0.1]).unwrap());
        let a = Image::from_fn(3, 3, 3, |y, x, c| ((y + 2 * x + c) % 5) as f64 / 5.0);
        let b = Image::from_fn(3, 3, 3, |y, x, c| ((3 * y + x + c) % 7) as f64 / 7.0);
        let norm = PerceptualNorm::Mean;
        assert_eq!(cyclic_perceptual_value(&phi, (&a, &a), (&b, &b), norm).unwrap(), 0.0);
        let ab = cyclic_perceptual_value(&phi, (&a, &b), (&b, &a), norm).unwrap();
        let ba = cyclic_perceptual_value(&phi, (&b, &a), (&a, &b), norm).unwrap();
        assert_eq!(ab, ba);
        assert!(ab > 0.0);
    }

    #[test]
    fn objective_examples() {
        let c = LossComponents {
            adversarial: 1.0,
            cycle: 0.3,
            perceptual: 500.0,
        };
        let w = LossWeights {
            lambda_cycle: 10.0,
            gamma: 1e-4,
        };
        let o = full_objective(&c, &w).unwrap();
        assert!((o.total - 4.05).abs() < 1e-12);

        let no_perc = full_objective(&c, &LossWeights { gamma: 0.0, ..w }).unwrap();
        assert_eq!(no_perc.total, c.adversarial + w.lambda_cycle * c.cycle);

        let doubled = full_objective(&c, &LossWeights { gamma: 2e-4, ..w }).unwrap();
        assert!((doubled.total - o.total - 1e-4 * 500.0).abs() < 1e-12);

        assert!(full_objective(&c, &LossWeights { gamma: -1.0, ..w }).is_err());
    }

    #[test]
    fn objective_gamma_derivative_is_perceptual_loss() {
        let perc_value = 123.456;
        let mut tape = Tape::new();
        let adv = tape.constant(Tensor::scalar(0.7));
        let cyc = tape.constant(Tensor::scalar(0.2));
        let perc = tape.constant(Tensor::scalar(perc_value));
        let gamma = tape.leaf(Tensor::scalar(1e-4));
        let c = tape.scale(cyc, 10.0);
        let base = tape.add(adv, c).unwrap();
        let gp = tape.mul(gamma, perc).unwrap();
        let total = tape.add(base, gp).unwrap();
        let g = tape.backward(total).unwrap();
        assert_eq!(g.get(gamma).unwrap().item(), perc_value);
    }

    #[test]
    fn balance_warning_fires_only_when_perceptual_dominates() {
        let w = LossWeights::standard();
        let quiet = LossComponents { adversarial: 0.5, cycle: 0.1, perceptual: 100.0 };
        assert!(balance_warning(&quiet, &w).is_none());
        let loud = LossComponents { adversarial: 0.5, cycle: 0.1, perceptual: 1e5 };
        assert!(balance_warning(&loud, &w).is_some());
    }
}
