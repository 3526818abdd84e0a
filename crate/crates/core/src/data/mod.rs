//! Images on disk and in memory, crop augmentation, and quality metrics.

mod augment;
mod image;
mod io;
mod metrics;

pub use self::image::Image;
pub use augment::{augment, AugmentConfig, Crop};
pub use io::{list_pngs, load_png, save_png};
pub use metrics::{psnr, ssim, QualityReport, SsimParams, PSNR_CAP};
