//! PSNR and Gaussian-window SSIM.
//!
//! SSIM is evaluated per channel over every fully-contained window (no
//! padding) and averaged over the map and then over channels.

use std::fmt::Write as _;

use super::Image;
use crate::error::{Error, Result};

/// Reported PSNR for identical images, and the upper bound for all others.
pub const PSNR_CAP: f64 = 99.0;

pub fn psnr(a: &Image, b: &Image, peak: f64) -> Result<f64> {
    a.check_same_dims(b, "psnr")?;
    let n = a.data().len() as f64;
    let mse = a.data().iter().zip(b.data()).map(|(p, q)| (p - q) * (p - q)).sum::<f64>() / n;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (peak * peak / mse).log10()).min(PSNR_CAP))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub peak: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            peak: 1.0,
        }
    }
}

impl SsimParams {
    /// Normalized 1D Gaussian taps.
    pub fn taps(&self) -> Vec<f64> {
        let r = (self.window / 2) as f64;
        let raw: Vec<f64> = (0..self.window)
            .map(|i| {
                let d = i as f64 - r;
                (-d * d / (2.0 * self.sigma * self.sigma)).exp()
            })
            .collect();
        let s: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / s).collect()
    }

    pub fn c1(&self) -> f64 {
        (self.k1 * self.peak).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.peak).powi(2)
    }
}

/// Valid-mode separable filtering of one plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (ho, wo) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * wo];
    for y in 0..h {
        for x in 0..wo {
            rows[y * wo + x] = taps.iter().enumerate().map(|(i, t)| t * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ho * wo];
    for y in 0..ho {
        for x in 0..wo {
            out[y * wo + x] = taps.iter().enumerate().map(|(i, t)| t * rows[(y + i) * wo + x]).sum();
        }
    }
    out
}

pub fn ssim(a: &Image, b: &Image, params: &SsimParams) -> Result<f64> {
    a.check_same_dims(b, "ssim")?;
    let (h, w, c) = a.dims();
    if params.window == 0 || params.window % 2 == 0 {
        return Err(Error::Param(format!("ssim window must be odd, got {}", params.window)));
    }
    if h < params.window || w < params.window {
        return Err(Error::shape(
            "ssim",
            format!("at least {0}x{0}", params.window),
            format!("{h}x{w}"),
        ));
    }
    let taps = params.taps();
    let (c1, c2) = (params.c1(), params.c2());
    let mut total = 0.0;
    for ch in 0..c {
        let pa: Vec<f64> = a.data().iter().skip(ch).step_by(c).copied().collect();
        let pb: Vec<f64> = b.data().iter().skip(ch).step_by(c).copied().collect();
        let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(x, y)| x * y).collect::<Vec<_>>();
        let mu_a = filter_valid(&pa, h, w, &taps);
        let mu_b = filter_valid(&pb, h, w, &taps);
        let e_aa = filter_valid(&prod(&pa, &pa), h, w, &taps);
        let e_bb = filter_valid(&prod(&pb, &pb), h, w, &taps);
        let e_ab = filter_valid(&prod(&pa, &pb), h, w, &taps);
        let n = mu_a.len();
        let mut sum = 0.0;
        for i in 0..n {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = e_aa[i] - ma * ma;
            let vb = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
        total += sum / n as f64;
    }
    Ok(total / c as f64)
}

/// Per-image PSNR/SSIM rows plus dataset means.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct QualityReport {
    pub rows: Vec<(String, f64, f64)>,
}

impl QualityReport {
    pub fn push(&mut self, name: impl Into<String>, psnr: f64, ssim: f64) {
        self.rows.push((name.into(), psnr, ssim));
    }

    pub fn mean_psnr(&self) -> f64 {
        self.rows.iter().map(|r| r.1).sum::<f64>() / self.rows.len().max(1) as f64
    }

    pub fn mean_ssim(&self) -> f64 {
        self.rows.iter().map(|r| r.2).sum::<f64>() / self.rows.len().max(1) as f64
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        s.push_str("# psnr: 10*log10(1/mse) over all channels, capped at 99 dB\n");
        s.push_str("# ssim: 11-tap gaussian window, sigma 1.5, k1 0.01, k2 0.03, per-channel mean\n");
        s.push_str("filename\tpsnr\tssim\n");
        for (name, p, q) in &self.rows {
            let _ = writeln!(s, "{name}\t{p:.6}\t{q:.6}");
        }
        let _ = writeln!(s, "mean\t{:.6}\t{:.6}", self.mean_psnr(), self.mean_ssim());
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_examples() {
        let a = Image::filled(8, 8, 3, 0.3);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), PSNR_CAP);
        let b = a.map(|v| v + 0.1);
        assert!((psnr(&a, &b, 1.0).unwrap() - 20.0).abs() < 1e-9);
        let black = Image::filled(4, 4, 1, 0.0);
        let white = Image::filled(4, 4, 1, 1.0);
        assert_eq!(psnr(&black, &white, 1.0).unwrap(), 0.0);
        assert!(psnr(&black, &a, 1.0).is_err());
    }

    #[test]
    fn ssim_of_constants_closed_form() {
        let p = SsimParams::default();
        let a = Image::filled(16, 16, 1, 0.2);
        let b = Image::filled(16, 16, 1, 0.6);
        let c1 = p.c1();
        let want = (2.0 * 0.2 * 0.6 + c1) / (0.04 + 0.36 + c1);
        assert!((ssim(&a, &b, &p).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn ssim_identity_and_small_input() {
        let p = SsimParams::default();
        let a = Image::from_fn(12, 14, 3, |y, x, c| ((y * 3 + x * 5 + c) % 9) as f64 / 9.0);
        assert!((ssim(&a, &a, &p).unwrap() - 1.0).abs() < 1e-12);
        let small = Image::filled(10, 20, 1, 0.5);
        assert!(ssim(&small, &small, &p).is_err());
    }

    #[test]
    fn report_tsv_layout() {
        let mut r = QualityReport::default();
        r.push("a.png", 20.0, 0.5);
        r.push("b.png", 30.0, 0.7);
        let tsv = r.to_tsv();
        let lines: Vec<_> = tsv.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(lines[0], "filename\tpsnr\tssim");
        assert_eq!(lines[1], "a.png\t20.000000\t0.500000");
        assert_eq!(lines[3], "mean\t25.000000\t0.600000");
    }
}
