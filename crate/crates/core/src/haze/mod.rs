//! Atmospheric scattering: `I = J t + A (1 - t)` with `t = exp(-beta d)`.

mod scene;

pub use scene::{render_scene, synthesize_dataset, ManifestRow, SynthConfig, CLEAN_DIR, HAZY_DIR, MANIFEST_FILE};

use crate::data::Image;
use crate::error::{Error, Result};

/// Transmission floor used when inverting the model.
pub const DEFAULT_T_FLOOR: f64 = 0.1;

/// Per-pixel scene depth, stored as a single-channel image.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap(Image);

impl DepthMap {
    pub fn new(depth: Image) -> Result<Self> {
        if depth.channels() != 1 {
            return Err(Error::shape("depth map", "1 channel", depth.channels().to_string()));
        }
        if let Some(v) = depth.data().iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::Param(format!("depth values must be finite and >= 0, found {v}")));
        }
        Ok(Self(depth))
    }

    pub fn image(&self) -> &Image {
        &self.0
    }
}

/// Global airlight (one value per channel) and scattering coefficient.
#[derive(Clone, Debug, PartialEq)]
pub struct HazeParams {
    pub airlight: Vec<f64>,
    pub beta: f64,
}

impl HazeParams {
    pub fn validate(&self, channels: usize) -> Result<()> {
        if self.airlight.len() != channels {
            return Err(Error::shape("airlight", channels.to_string(), self.airlight.len().to_string()));
        }
        if self.airlight.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(Error::Param(format!("airlight must lie in [0,1], got {:?}", self.airlight)));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::Param(format!("beta must be finite and >= 0, got {}", self.beta)));
        }
        Ok(())
    }

    /// Hazy version of `clean` seen through `depth`.
    pub fn apply(&self, clean: &Image, depth: &DepthMap) -> Result<Image> {
        self.validate(clean.channels())?;
        let t = transmission_from_depth(depth, self.beta)?;
        synthesize_haze(clean, &t, &self.airlight)
    }
}

pub fn transmission_from_depth(d: &DepthMap, beta: f64) -> Result<Image> {
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::Param(format!("beta must be finite and >= 0, got {beta}")));
    }
    Ok(d.0.map(|v| (-beta * v).exp()))
}

fn check_pair(img: &Image, t: &Image, a: &[f64], op: &'static str) -> Result<()> {
    let (h, w, c) = img.dims();
    if t.dims() != (h, w, 1) {
        return Err(Error::shape(op, format!("transmission {h}x{w}x1"), format!("{:?}", t.dims())));
    }
    if a.len() != c {
        return Err(Error::shape(op, format!("{c} airlight values"), a.len().to_string()));
    }
    Ok(())
}

/// Applies the scattering model per pixel. `t` is `H x W x 1`.
pub fn synthesize_haze(j: &Image, t: &Image, a: &[f64]) -> Result<Image> {
    check_pair(j, t, a, "synthesize_haze")?;
    if let Some(v) = t.data().iter().find(|v| !(**v > 0.0 && **v <= 1.0)) {
        return Err(Error::Param(format!("transmission must lie in (0,1], found {v}")));
    }
    let c = j.channels();
    Ok(Image::from_fn(j.height(), j.width(), c, |y, x, ch| {
        let tv = t.get(y, x, 0);
        j.get(y, x, ch) * tv + a[ch] * (1.0 - tv)
    }))
}

/// Inverts [`synthesize_haze`] with `t` floored at `t_floor`, clamped to [0,1].
pub fn recover_radiance(i: &Image, t: &Image, a: &[f64], t_floor: f64) -> Result<Image> {
    check_pair(i, t, a, "recover_radiance")?;
    if !(t_floor > 0.0) {
        return Err(Error::Param(format!("t_floor must be > 0, got {t_floor}")));
    }
    let c = i.channels();
    Ok(Image::from_fn(i.height(), i.width(), c, |y, x, ch| {
        let tv = t.get(y, x, 0).max(t_floor);
        ((i.get(y, x, ch) - a[ch] * (1.0 - tv)) / tv).clamp(0.0, 1.0)
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn px(v: f64) -> Image {
        Image::filled(1, 1, 1, v)
    }

    #[test]
    fn transmission_examples() {
        let d = DepthMap::new(Image::from_fn(2, 3, 1, |y, x, _| (y * 3 + x) as f64)).unwrap();
        let t = transmission_from_depth(&d, 0.0).unwrap();
        assert!(t.data().iter().all(|&v| v == 1.0));
        let zero = DepthMap::new(Image::filled(2, 2, 1, 0.0)).unwrap();
        assert!(transmission_from_depth(&zero, 3.0).unwrap().data().iter().all(|&v| v == 1.0));
        let ln2 = DepthMap::new(px(2f64.ln())).unwrap();
        assert!((transmission_from_depth(&ln2, 1.0).unwrap().get(0, 0, 0) - 0.5).abs() < 1e-15);
        assert!(transmission_from_depth(&ln2, -1.0).is_err());
        assert!(DepthMap::new(px(-1.0)).is_err());
    }

    #[test]
    fn scattering_examples() {
        assert_eq!(synthesize_haze(&px(0.5), &px(0.5), &[1.0]).unwrap().get(0, 0, 0), 0.75);
        assert_eq!(recover_radiance(&px(0.75), &px(0.5), &[1.0], DEFAULT_T_FLOOR).unwrap().get(0, 0, 0), 0.5);
        let j = Image::from_fn(3, 4, 3, |y, x, c| ((y + 2 * x + c) % 5) as f64 / 4.0);
        let one = Image::filled(3, 4, 1, 1.0);
        assert_eq!(synthesize_haze(&j, &one, &[0.8; 3]).unwrap(), j);
        assert_eq!(recover_radiance(&j, &one, &[0.8; 3], 0.1).unwrap(), j);
        let tiny = Image::filled(3, 4, 1, 1e-12);
        let i = synthesize_haze(&j, &tiny, &[0.3, 0.6, 0.9]).unwrap();
        for y in 0..3 {
            for x in 0..4 {
                for (c, a) in [0.3, 0.6, 0.9].iter().enumerate() {
                    assert!((i.get(y, x, c) - a).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn shape_errors() {
        let j = Image::filled(2, 2, 3, 0.5);
        assert!(synthesize_haze(&j, &Image::filled(2, 3, 1, 0.5), &[0.8; 3]).is_err());
        assert!(synthesize_haze(&j, &Image::filled(2, 2, 1, 0.5), &[0.8; 2]).is_err());
        assert!(synthesize_haze(&j, &Image::filled(2, 2, 1, 0.0), &[0.8; 3]).is_err());
        assert!(recover_radiance(&j, &Image::filled(2, 2, 1, 0.5), &[0.8; 3], 0.0).is_err());
    }

    proptest! {
        #[test]
        fn roundtrip(j in 0.0f64..=1.0, t in 0.2f64..=1.0, a in 0.0f64..=1.0) {
            let i = synthesize_haze(&px(j), &px(t), &[a]).unwrap();
            let back = recover_radiance(&i, &px(t), &[a], DEFAULT_T_FLOOR).unwrap();
            prop_assert!((back.get(0, 0, 0) - j).abs() < 1e-10);
        }

        #[test]
        fn hazy_lies_between_scene_and_airlight(j in 0.0f64..=1.0, d in 0.0f64..5.0, beta in 0.0f64..3.0, a in 0.0f64..=1.0) {
            let p = HazeParams { airlight: vec![a], beta };
            let i = p.apply(&px(j), &DepthMap::new(px(d)).unwrap()).unwrap().get(0, 0, 0);
            prop_assert!(i >= j.min(a) - 1e-15 && i <= j.max(a) + 1e-15);
        }

        #[test]
        fn more_scattering_brightens_toward_airlight(j in 0.0f64..0.7, d in 0.1f64..3.0, beta in 0.0f64..2.0, db in 0.01f64..1.0) {
            let depth = DepthMap::new(px(d)).unwrap();
            let lo = HazeParams { airlight: vec![0.8], beta }.apply(&px(j), &depth).unwrap();
            let hi = HazeParams { airlight: vec![0.8], beta: beta + db }.apply(&px(j), &depth).unwrap();
            prop_assert!(hi.get(0, 0, 0) > lo.get(0, 0, 0));
        }
    }
}
