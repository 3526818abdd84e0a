use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `H x W x C` image with f64 samples, channel-last, nominally in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::shape(
                "Image::new",
                format!("{height}x{width}x{channels}"),
                format!("{} samples", data.len()),
            ));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self {
            height,
            width,
            channels,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f64) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    pub fn clamp01(mut self) -> Self {
        self.data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        self
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..*self
        }
    }

    /// Elementwise combination of two same-shape images.
    pub fn zip_map(&self, other: &Image, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.check_same_dims(other, "zip_map")?;
        Ok(Self {
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
            ..*self
        })
    }

    pub fn check_same_dims(&self, other: &Image, op: &'static str) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::shape(
                op,
                format!("{:?}", self.dims()),
                format!("{:?}", other.dims()),
            ));
        }
        Ok(())
    }

    /// Sub-image `[y, y + h) x [x, x + w)`.
    pub fn crop(&self, y: usize, x: usize, h: usize, w: usize) -> Result<Self> {
        if y + h > self.height || x + w > self.width || h == 0 || w == 0 {
            return Err(Error::Param(format!(
                "crop ({y},{x}) {h}x{w} outside {}x{}",
                self.height, self.width
            )));
        }
        Ok(Self::from_fn(h, w, self.channels, |r, c, ch| self.get(y + r, x + c, ch)))
    }

    pub fn max_abs_diff(&self, other: &Image) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![self.height, self.width, self.channels], self.data.clone())
            .expect("image dims match data")
    }

    pub fn from_tensor(t: Tensor) -> Result<Self> {
        let (h, w, c) = t.hwc("Image::from_tensor")?;
        Self::new(h, w, c, t.into_data())
    }

    /// Bilinear resampling with pixel-centre alignment and edge clamping.
    pub fn resize_bilinear(&self, height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Param("resize to an empty image".into()));
        }
        if (height, width) == (self.height, self.width) {
            return Ok(self.clone());
        }
        let sy = self.height as f64 / height as f64;
        let sx = self.width as f64 / width as f64;
        let coord = |o: usize, scale: f64, n: usize| {
            let p = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (n - 1) as f64);
            let i0 = p.floor() as usize;
            let i1 = (i0 + 1).min(n - 1);
            (i0, i1, p - i0 as f64)
        };
        let ys: Vec<_> = (0..height).map(|y| coord(y, sy, self.height)).collect();
        let xs: Vec<_> = (0..width).map(|x| coord(x, sx, self.width)).collect();
        Ok(Self::from_fn(height, width, self.channels, |y, x, c| {
            let (y0, y1, fy) = ys[y];
            let (x0, x1, fx) = xs[x];
            let top = self.get(y0, x0, c) * (1.0 - fx) + self.get(y0, x1, c) * fx;
            let bot = self.get(y1, x0, c) * (1.0 - fx) + self.get(y1, x1, c) * fx;
            top * (1.0 - fy) + bot * fy
        }))
    }

    /// Reflect-pads bottom and right edges so both dims are multiples of `m`.
    pub fn pad_to_multiple(&self, m: usize) -> Self {
        let h = self.height.div_ceil(m) * m;
        let w = self.width.div_ceil(m) * m;
        if (h, w) == (self.height, self.width) {
            return self.clone();
        }
        use crate::tensor::reflect_index as r;
        Self::from_fn(h, w, self.channels, |y, x, c| {
            self.get(r(y as isize, self.height), r(x as isize, self.width), c)
        })
    }
}
