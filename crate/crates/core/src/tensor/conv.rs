use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Reflect-pad by `(k - 1) / 2`; output is `ceil(H / stride)`.
    SameReflect,
    /// No padding; output is `(H - k) / stride + 1`.
    Valid,
}

/// Reflect-101 index mapping (`-1 -> 1`, `n -> n - 2`).
pub fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut i = i.rem_euclid(period);
    if i >= n as isize {
        i = period - i;
    }
    i as usize
}

/// Precomputed patch geometry: for each output pixel and kernel tap, the
/// flat spatial index of the input pixel it reads.
#[derive(Debug)]
pub(crate) struct ConvGeom {
    pub cin: usize,
    pub cout: usize,
    pub in_hw: usize,
    pub ho: usize,
    pub wo: usize,
    pub taps: usize,
    index: Vec<u32>,
}

impl ConvGeom {
    pub fn new(input: &[usize], kernel: &[usize], stride: usize, padding: Padding) -> Result<Self> {
        let (h, w, cin) = match *input {
            [h, w, c] => (h, w, c),
            _ => return Err(Error::shape("conv2d", "input [H, W, Cin]", format!("{input:?}"))),
        };
        let (kh, kw, kcin, cout) = match *kernel {
            [a, b, c, d] => (a, b, c, d),
            _ => {
                return Err(Error::shape(
                    "conv2d",
                    "kernel [kH, kW, Cin, Cout]",
                    format!("{kernel:?}"),
                ))
            }
        };
        if kcin != cin {
            return Err(Error::shape("conv2d", format!("kernel Cin {cin}"), kcin));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::Param(format!("conv2d kernel must be odd, got {kh}x{kw}")));
        }
        if stride == 0 {
            return Err(Error::Param("conv2d stride must be >= 1".into()));
        }
        let (ho, wo, pad_h, pad_w) = match padding {
            Padding::SameReflect => (h.div_ceil(stride), w.div_ceil(stride), kh / 2, kw / 2),
            Padding::Valid => {
                if h < kh || w < kw {
                    return Err(Error::shape(
                        "conv2d",
                        format!("input at least {kh}x{kw}"),
                        format!("{h}x{w}"),
                    ));
                }
                ((h - kh) / stride + 1, (w - kw) / stride + 1, 0, 0)
            }
        };
        let taps = kh * kw;
        let mut index = Vec::with_capacity(ho * wo * taps);
        for oy in 0..ho {
            for ox in 0..wo {
                for dy in 0..kh {
                    let iy = reflect((oy * stride + dy) as isize - pad_h as isize, h);
                    for dx in 0..kw {
                        let ix = reflect((ox * stride + dx) as isize - pad_w as isize, w);
                        index.push((iy * w + ix) as u32);
                    }
                }
            }
        }
        Ok(Self {
            cin,
            cout,
            in_hw: h * w,
            ho,
            wo,
            taps,
            index,
        })
    }

    fn rows(&self) -> usize {
        self.ho * self.wo
    }

    fn cols(&self) -> usize {
        self.taps * self.cin
    }

    pub fn im2col(&self, input: &[f64]) -> Vec<f64> {
        let cin = self.cin;
        let mut patches = vec![0.0; self.rows() * self.cols()];
        for (dst, &src) in patches.chunks_exact_mut(cin).zip(&self.index) {
            let s = src as usize * cin;
            dst.copy_from_slice(&input[s..s + cin]);
        }
        patches
    }

    fn col2im(&self, patches: &[f64]) -> Vec<f64> {
        let cin = self.cin;
        let mut out = vec![0.0; self.in_hw * cin];
        for (src, &dst) in patches.chunks_exact(cin).zip(&self.index) {
            let d = dst as usize * cin;
            for (o, v) in out[d..d + cin].iter_mut().zip(src) {
                *o += v;
            }
        }
        out
    }

    pub fn forward(&self, input: &[f64], kernel: &[f64]) -> Vec<f64> {
        let patches = self.im2col(input);
        let mut out = vec![0.0; self.rows() * self.cout];
        gemm(
            self.rows(),
            self.cols(),
            self.cout,
            Operand::plain(&patches, self.cols()),
            Operand::plain(kernel, self.cout),
            &mut out,
        );
        out
    }

    pub fn grad_kernel(&self, input: &[f64], dout: &[f64]) -> Vec<f64> {
        let patches = self.im2col(input);
        let mut dk = vec![0.0; self.cols() * self.cout];
        // dK = P^T dY
        gemm(
            self.cols(),
            self.rows(),
            self.cout,
            Operand::transposed(&patches, self.cols()),
            Operand::plain(dout, self.cout),
            &mut dk,
        );
        dk
    }

    pub fn grad_input(&self, kernel: &[f64], dout: &[f64]) -> Vec<f64> {
        let mut dpatches = vec![0.0; self.rows() * self.cols()];
        // dP = dY K^T
        gemm(
            self.rows(),
            self.cout,
            self.cols(),
            Operand::plain(dout, self.cout),
            Operand::transposed(kernel, self.cout),
            &mut dpatches,
        );
        self.col2im(&dpatches)
    }
}

/// Row-major matrix operand, optionally read transposed.
struct Operand<'a> {
    data: &'a [f64],
    rs: isize,
    cs: isize,
}

impl<'a> Operand<'a> {
    /// Stored as `[rows, ld]`, used as is.
    fn plain(data: &'a [f64], ld: usize) -> Self {
        Self {
            data,
            rs: ld as isize,
            cs: 1,
        }
    }

    /// Stored as `[cols, ld]`, used transposed.
    fn transposed(data: &'a [f64], ld: usize) -> Self {
        Self {
            data,
            rs: 1,
            cs: ld as isize,
        }
    }
}

/// `c = a * b` with `a: m x k`, `b: k x n`, `c: m x n` row-major.
fn gemm(m: usize, k: usize, n: usize, a: Operand<'_>, b: Operand<'_>, c: &mut [f64]) {
    assert!(a.data.len() >= m * k && b.data.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: bounds asserted above; the strides describe exactly the
    // row-major layouts of `a` (m x k), `b` (k x n) and `c` (m x n).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.rs,
            a.cs,
            b.data.as_ptr(),
            b.rs,
            b.cs,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Convolution of an `[H, W, Cin]` tensor with a `[kH, kW, Cin, Cout]` kernel.
pub fn conv2d(input: &Tensor, kernel: &Tensor, stride: usize, padding: Padding) -> Result<Tensor> {
    let geom = ConvGeom::new(input.shape(), kernel.shape(), stride, padding)?;
    let out = geom.forward(input.data(), kernel.data());
    Tensor::new(vec![geom.ho, geom.wo, geom.cout], out)
}
