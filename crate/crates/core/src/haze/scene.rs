//! Procedural clean scenes with smooth depth, and paired hazy datasets.
//!
//! Scenes are continuous functions of normalized coordinates, so one seed can
//! be rendered at several resolutions with the same content.

use std::f64::consts::TAU;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{DepthMap, HazeParams};
use crate::data::{save_png, Image};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.tsv";

struct Blob {
    u: f64,
    v: f64,
    radius: f64,
    color: [f64; 3],
    depth_bump: f64,
}

struct Scene {
    top: [f64; 3],
    bottom: [f64; 3],
    checker: (f64, f64, f64, f64),
    checker_period: f64,
    checker_colors: [[f64; 3]; 2],
    blobs: Vec<Blob>,
    far: f64,
    near: f64,
}

fn color(rng: &mut ChaCha8Rng) -> [f64; 3] {
    [rng.random_range(0.05..0.95), rng.random_range(0.05..0.95), rng.random_range(0.05..0.95)]
}

fn smoothstep(e0: f64, e1: f64, x: f64) -> f64 {
    let t = ((x - e0) / (e1 - e0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

impl Scene {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        let u0 = rng.random_range(0.0..0.5);
        let v0 = rng.random_range(0.2..0.6);
        let checker = (u0, u0 + rng.random_range(0.25..0.5), v0, v0 + rng.random_range(0.2..0.4));
        let blobs = (0..rng.random_range(2..=4))
            .map(|_| Blob {
                u: rng.random(),
                v: rng.random(),
                radius: rng.random_range(0.06..0.18),
                color: color(rng),
                depth_bump: rng.random_range(-0.3..0.3),
            })
            .collect();
        Self {
            top: color(rng),
            bottom: color(rng),
            checker,
            checker_period: rng.random_range(0.08..0.16),
            checker_colors: [color(rng), color(rng)],
            blobs,
            far: rng.random_range(1.2..1.8),
            near: rng.random_range(0.1..0.4),
        }
    }

    /// Radiance and depth at normalized position `(u, v)`, `v` pointing down.
    fn sample(&self, u: f64, v: f64) -> ([f64; 3], f64) {
        let mut rgb = [0.0; 3];
        for (c, out) in rgb.iter_mut().enumerate() {
            *out = self.top[c] + (self.bottom[c] - self.top[c]) * v;
        }
        // Horizon-like layout: top of the frame is far away.
        let mut depth = self.near + (self.far - self.near) * (1.0 - v).powf(1.2);

        let (u0, u1, v0, v1) = self.checker;
        let edge = 0.01;
        let inside = smoothstep(u0 - edge, u0 + edge, u) * (1.0 - smoothstep(u1 - edge, u1 + edge, u))
            * smoothstep(v0 - edge, v0 + edge, v) * (1.0 - smoothstep(v1 - edge, v1 + edge, v));
        if inside > 0.0 {
            let p = self.checker_period;
            let s = 0.5 + 0.5 * (6.0 * (TAU * u / p).sin() * (TAU * v / p).sin()).tanh();
            for (c, out) in rgb.iter_mut().enumerate() {
                let cc = self.checker_colors[0][c] * s + self.checker_colors[1][c] * (1.0 - s);
                *out += inside * (cc - *out);
            }
            depth -= 0.2 * inside;
        }
        for b in &self.blobs {
            let r2 = ((u - b.u).powi(2) + (v - b.v).powi(2)) / (b.radius * b.radius);
            let alpha = (-0.5 * r2).exp();
            for (c, out) in rgb.iter_mut().enumerate() {
                *out += alpha * (b.color[c] - *out);
            }
            depth += alpha * b.depth_bump;
        }
        (rgb, depth.max(0.0))
    }
}

/// Renders the scene for `seed` at `height x width` (1 or 3 channels).
pub fn render_scene(seed: u64, height: usize, width: usize, channels: usize) -> Result<(Image, DepthMap)> {
    if channels != 1 && channels != 3 {
        return Err(Error::Param(format!("scenes have 1 or 3 channels, got {channels}")));
    }
    if height == 0 || width == 0 {
        return Err(Error::Param("scene size must be non-zero".into()));
    }
    let scene = Scene::random(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut img = Image::filled(height, width, channels, 0.0);
    let mut depth = Image::filled(height, width, 1, 0.0);
    for y in 0..height {
        for x in 0..width {
            let (rgb, d) = scene.sample((x as f64 + 0.5) / width as f64, (y as f64 + 0.5) / height as f64);
            if channels == 3 {
                for (c, v) in rgb.iter().enumerate() {
                    img.set(y, x, c, v.clamp(0.0, 1.0));
                }
            } else {
                let l = 0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2];
                img.set(y, x, 0, l.clamp(0.0, 1.0));
            }
            depth.set(y, x, 0, d);
        }
    }
    Ok((img, DepthMap::new(depth)?))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub count: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    pub airlight: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            count: 20,
            height: 64,
            width: 64,
            channels: 3,
            beta_min: 0.5,
            beta_max: 1.5,
            airlight: 0.8,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestRow {
    pub index: usize,
    /// Scene seed; re-rendering it at another size gives the same content.
    pub scene_seed: u64,
    pub airlight: f64,
    pub beta: f64,
}

impl ManifestRow {
    pub fn clean_name(&self) -> String {
        format!("clean_{:04}.png", self.index)
    }

    pub fn hazy_name(&self) -> String {
        format!("hazy_{:04}.png", self.index)
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.beta_min && self.beta_min <= self.beta_max && self.beta_max.is_finite()) {
            return Err(Error::Param(format!("beta range {}..{} is invalid", self.beta_min, self.beta_max)));
        }
        if !(0.0..=1.0).contains(&self.airlight) {
            return Err(Error::Param(format!("airlight must lie in [0,1], got {}", self.airlight)));
        }
        Ok(())
    }

    /// Scene seeds and scattering coefficients, one per image.
    pub fn rows(&self) -> Result<Vec<ManifestRow>> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        Ok((0..self.count)
            .map(|index| {
                let scene_seed = rng.random();
                let beta = if self.beta_max > self.beta_min {
                    rng.random_range(self.beta_min..=self.beta_max)
                } else {
                    self.beta_min
                };
                ManifestRow {
                    index,
                    scene_seed,
                    airlight: self.airlight,
                    beta,
                }
            })
            .collect())
    }

    /// Renders `(clean, hazy)` for one row at the given size.
    pub fn render(&self, row: &ManifestRow, height: usize, width: usize) -> Result<(Image, Image)> {
        let (clean, depth) = render_scene(row.scene_seed, height, width, self.channels)?;
        let params = HazeParams {
            airlight: vec![row.airlight; self.channels],
            beta: row.beta,
        };
        let hazy = params.apply(&clean, &depth)?;
        Ok((clean, hazy))
    }
}

pub const CLEAN_DIR: &str = "clean";
pub const HAZY_DIR: &str = "hazy";

/// Writes `clean/clean_####.png`, `hazy/hazy_####.png` and the manifest
/// into `out`, so the two subdirectories can be fed to training directly.
pub fn synthesize_dataset(cfg: &SynthConfig, out: &Path) -> Result<Vec<ManifestRow>> {
    let rows = cfg.rows()?;
    for d in [CLEAN_DIR, HAZY_DIR] {
        let p = out.join(d);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let mut manifest = String::from("index\tclean\thazy\tscene_seed\tairlight\tbeta\n");
    for row in &rows {
        let (clean, hazy) = cfg.render(row, cfg.height, cfg.width)?;
        save_png(&out.join(CLEAN_DIR).join(row.clean_name()), &clean)?;
        save_png(&out.join(HAZY_DIR).join(row.hazy_name()), &hazy)?;
        let _ = writeln!(
            manifest,
            "{}\t{CLEAN_DIR}/{}\t{HAZY_DIR}/{}\t{}\t{}\t{}",
            row.index,
            row.clean_name(),
            row.hazy_name(),
            row.scene_seed,
            row.airlight,
            row.beta
        );
    }
    let path = out.join(MANIFEST_FILE);
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
    Ok(rows)
}
