//! Random-crop augmentation: pick a random pixel, then a random crop extent
//! that fits from there, cut it out and resize it to the network input size.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Image;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AugmentConfig {
    /// Number of crops per source image.
    pub factor: usize,
    pub min_crop: usize,
    pub max_crop: usize,
    /// Crops are resized to `out_size x out_size`.
    pub out_size: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Crop {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
    pub image: Image,
}

pub fn augment(img: &Image, cfg: &AugmentConfig, seed: u64) -> Result<Vec<Crop>> {
    if cfg.min_crop == 0 || cfg.min_crop > cfg.max_crop || cfg.out_size == 0 {
        return Err(Error::Param(format!(
            "crop range {}..={} / output size {} is invalid",
            cfg.min_crop, cfg.max_crop, cfg.out_size
        )));
    }
    if cfg.min_crop > img.width() || cfg.min_crop > img.height() {
        return Err(Error::Param(format!(
            "minimum crop {} exceeds image {}x{}",
            cfg.min_crop,
            img.height(),
            img.width()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut crops = Vec::with_capacity(cfg.factor);
    for _ in 0..cfg.factor {
        let x = rng.random_range(0..=img.width() - cfg.min_crop);
        let y = rng.random_range(0..=img.height() - cfg.min_crop);
        let w = rng.random_range(cfg.min_crop..=cfg.max_crop.min(img.width() - x));
        let h = rng.random_range(cfg.min_crop..=cfg.max_crop.min(img.height() - y));
        let image = img.crop(y, x, h, w)?.resize_bilinear(cfg.out_size, cfg.out_size)?;
        crops.push(Crop { x, y, w, h, image });
    }
    Ok(crops)
}
