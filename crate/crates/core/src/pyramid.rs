//! Gaussian/Laplacian pyramids with the 5-tap binomial kernel and reflected
//! borders, and top-layer replacement for upscaling a small dehazed image.

use crate::data::Image;
use crate::error::{Error, Result};
use crate::tensor::reflect_index;

pub const KERNEL: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];

/// Laplacian bands, finest first, plus the coarsest Gaussian level.
#[derive(Clone, Debug, PartialEq)]
pub struct PyramidStack {
    pub bands: Vec<Image>,
    pub top: Image,
}

impl PyramidStack {
    pub fn levels(&self) -> usize {
        self.bands.len()
    }
}

/// Separable 5-tap filter with reflect-101 borders, each tap scaled by `gain`.
fn blur(img: &Image, gain: f64) -> Image {
    let (h, w, c) = img.dims();
    let src = img.data();
    let mut rows = vec![0.0; src.len()];
    for y in 0..h {
        for x in 0..w {
            for (i, k) in KERNEL.iter().enumerate() {
                let sx = reflect_index(x as isize + i as isize - 2, w);
                let s = &src[(y * w + sx) * c..][..c];
                let d = &mut rows[(y * w + x) * c..][..c];
                for (d, s) in d.iter_mut().zip(s) {
                    *d += gain * k * s;
                }
            }
        }
    }
    let mut out = vec![0.0; src.len()];
    for y in 0..h {
        for (i, k) in KERNEL.iter().enumerate() {
            let sy = reflect_index(y as isize + i as isize - 2, h);
            let s = &rows[sy * w * c..][..w * c];
            let d = &mut out[y * w * c..][..w * c];
            for (d, s) in d.iter_mut().zip(s) {
                *d += gain * k * s;
            }
        }
    }
    Image::new(h, w, c, out).expect("same dims")
}

pub fn pyr_down(img: &Image) -> Result<Image> {
    let (h, w, c) = img.dims();
    if h < 2 || w < 2 {
        return Err(Error::shape("pyr_down", "at least 2x2", format!("{h}x{w}")));
    }
    let b = blur(img, 1.0);
    Ok(Image::from_fn(h.div_ceil(2), w.div_ceil(2), c, |y, x, ch| b.get(2 * y, 2 * x, ch)))
}

/// Zero-insertion upsampling to `(height, width)` followed by the kernel
/// scaled by 2 per axis.
pub fn pyr_up(img: &Image, height: usize, width: usize) -> Result<Image> {
    let (h, w, c) = img.dims();
    if height.div_ceil(2) != h || width.div_ceil(2) != w || height < 2 || width < 2 {
        return Err(Error::shape(
            "pyr_up",
            format!("target whose half is {h}x{w}"),
            format!("{height}x{width}"),
        ));
    }
    let mut up = Image::filled(height, width, c, 0.0);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                up.set(2 * y, 2 * x, ch, img.get(y, x, ch));
            }
        }
    }
    Ok(blur(&up, 2.0))
}

/// Dimensions of every Gaussian level `0..=levels`, or an error if the top
/// would be smaller than 2x2.
pub fn level_dims(height: usize, width: usize, levels: usize) -> Result<Vec<(usize, usize)>> {
    if levels == 0 {
        return Err(Error::Param("pyramid needs at least one level".into()));
    }
    let mut dims = vec![(height, width)];
    for _ in 0..levels {
        let (h, w) = *dims.last().expect("non-empty");
        dims.push((h.div_ceil(2), w.div_ceil(2)));
    }
    let (th, tw) = dims[levels];
    // Going down from a 2-pixel axis yields 1, so check every level but the input.
    if dims[1..].iter().any(|&(h, w)| h < 2 || w < 2) || height < 2 || width < 2 {
        return Err(Error::shape(
            "laplacian_build",
            format!("image whose {levels}-level top is at least 2x2"),
            format!("{height}x{width} (top {th}x{tw})"),
        ));
    }
    Ok(dims)
}

/// With `levels = L`: `top = G_L` and `bands[i] = G_i - up(G_{i+1})` for
/// `i < L`, so a one-level pyramid has a single band.
pub fn laplacian_build(img: &Image, levels: usize) -> Result<PyramidStack> {
    level_dims(img.height(), img.width(), levels)?;
    let mut bands = Vec::with_capacity(levels);
    let mut g = img.clone();
    for _ in 0..levels {
        let next = pyr_down(&g)?;
        let up = pyr_up(&next, g.height(), g.width())?;
        bands.push(g.zip_map(&up, |a, b| a - b)?);
        g = next;
    }
    Ok(PyramidStack { bands, top: g })
}

pub fn laplacian_collapse(p: &PyramidStack) -> Result<Image> {
    let mut cur = p.top.clone();
    for band in p.bands.iter().rev() {
        if band.channels() != cur.channels() {
            return Err(Error::shape("laplacian_collapse", format!("{} channels", cur.channels()), format!("{}", band.channels())));
        }
        let up = pyr_up(&cur, band.height(), band.width())?;
        cur = up.zip_map(band, |a, b| a + b)?;
    }
    Ok(cur)
}

/// Swaps the top of `hazy_full`'s pyramid for `dehazed_small` and collapses,
/// keeping the hazy image's detail bands.
pub fn dehaze_upscale(hazy_full: &Image, dehazed_small: &Image, levels: usize) -> Result<Image> {
    let mut stack = laplacian_build(hazy_full, levels)?;
    if stack.top.dims() != dehazed_small.dims() {
        return Err(Error::shape(
            "dehaze_upscale",
            format!("{:?}", stack.top.dims()),
            format!("{:?}", dehazed_small.dims()),
        ));
    }
    stack.top = dehazed_small.clone();
    Ok(laplacian_collapse(&stack)?.clamp01())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(h: usize, w: usize, c: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(h, w, c, |_, _, _| rng.random())
    }

    fn refl(i: isize, n: usize) -> usize {
        // Mirror without repeating the edge sample, written out by hand.
        let n = n as isize;
        let mut i = i;
        loop {
            if i < 0 {
                i = -i;
            } else if i >= n {
                i = 2 * (n - 1) - i;
            } else {
                return i as usize;
            }
        }
    }

    #[test]
    fn constants_survive_down_and_up() {
        let c = Image::filled(7, 5, 2, 0.37);
        let d = pyr_down(&c).unwrap();
        assert_eq!(d.dims(), (4, 3, 2));
        assert!(d.data().iter().all(|v| (v - 0.37).abs() < 1e-15));
        let u = pyr_up(&d, 7, 5).unwrap();
        assert!(u.data().iter().all(|v| (v - 0.37).abs() < 1e-14));
        assert_eq!(pyr_down(&Image::filled(4, 4, 1, 0.0)).unwrap().dims(), (2, 2, 1));
        assert_eq!(pyr_up(&Image::filled(2, 2, 1, 0.0), 4, 4).unwrap().dims(), (4, 4, 1));
    }

    #[test]
    fn pyr_down_matches_direct_filter() {
        let img = random(8, 8, 1, 3);
        let d = pyr_down(&img).unwrap();
        for y in 0..4 {
            for x in 0..4 {
                let mut want = 0.0;
                for i in 0..5 {
                    for j in 0..5 {
                        let sy = refl(2 * y as isize + i as isize - 2, 8);
                        let sx = refl(2 * x as isize + j as isize - 2, 8);
                        want += KERNEL[i] * KERNEL[j] * img.get(sy, sx, 0);
                    }
                }
                assert!((d.get(y, x, 0) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn pyr_up_matches_direct_filter() {
        let img = random(3, 4, 2, 5);
        let (h, w) = (5, 8);
        let u = pyr_up(&img, h, w).unwrap();
        let z = |y: usize, x: usize, c: usize| {
            if y % 2 == 0 && x % 2 == 0 {
                img.get(y / 2, x / 2, c)
            } else {
                0.0
            }
        };
        for y in 0..h {
            for x in 0..w {
                for c in 0..2 {
                    let mut want = 0.0;
                    for i in 0..5 {
                        for j in 0..5 {
                            let sy = refl(y as isize + i as isize - 2, h);
                            let sx = refl(x as isize + j as isize - 2, w);
                            want += 4.0 * KERNEL[i] * KERNEL[j] * z(sy, sx, c);
                        }
                    }
                    assert!((u.get(y, x, c) - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn bad_shapes() {
        assert!(pyr_down(&Image::filled(1, 1, 1, 0.0)).is_err());
        assert!(pyr_up(&Image::filled(2, 2, 1, 0.0), 6, 4).is_err());
        assert!(laplacian_build(&Image::filled(8, 8, 1, 0.0), 3).is_err());
        assert!(laplacian_build(&Image::filled(8, 8, 1, 0.0), 0).is_err());
        let img = random(16, 16, 3, 1);
        assert!(dehaze_upscale(&img, &Image::filled(4, 4, 3, 0.0), 1).is_err());
    }

    #[test]
    fn one_level_has_one_band() {
        let img = random(10, 12, 1, 2);
        let p = laplacian_build(&img, 1).unwrap();
        assert_eq!(p.levels(), 1);
        assert_eq!(p.top, pyr_down(&img).unwrap());
    }

    #[test]
    fn constant_image_has_flat_bands() {
        let p = laplacian_build(&Image::filled(32, 24, 3, 0.6), 3).unwrap();
        assert!(p.bands.iter().all(|b| b.data().iter().all(|v| v.abs() < 1e-14)));
        assert!(p.top.data().iter().all(|v| (v - 0.6).abs() < 1e-14));
    }

    #[test]
    fn roundtrip_and_own_top() {
        let img = random(32, 32, 3, 9);
        let p = laplacian_build(&img, 3).unwrap();
        assert!(laplacian_collapse(&p).unwrap().max_abs_diff(&img) < 1e-12);
        let again = dehaze_upscale(&img, &p.top, 3).unwrap();
        assert!(again.max_abs_diff(&img) < 1e-12);
    }

    #[test]
    fn shifted_top_shifts_output() {
        let img = random(20, 18, 1, 4).map(|v| 0.2 + 0.5 * v);
        let p = laplacian_build(&img, 2).unwrap();
        let out = dehaze_upscale(&img, &p.top.map(|v| v + 0.1), 2).unwrap();
        let shifted = img.map(|v| v + 0.1);
        assert!(out.max_abs_diff(&shifted) < 1e-12);
    }
}
