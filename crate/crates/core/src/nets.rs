//! Generators, patch discriminators and the frozen feature extractor.
//!
//! Parameters live in plain [`ParamSet`]s; a forward pass registers them on a
//! [`Tape`] (as trainable leaves or as constants) and wires up the layers.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::checkpoint::Container;
use crate::data::Image;
use crate::error::{Error, Result};
use crate::tensor::{AdamConfig, AdamState, Padding, Tape, Tensor, Var};

const NORM_EPS: f64 = 1e-5;
const INIT_STD: f64 = 0.02;

/// Named parameter tensors of one network, in layer order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet {
    pub names: Vec<String>,
    pub tensors: Vec<Tensor>,
}

impl ParamSet {
    fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    fn push(&mut self, name: String, t: Tensor) {
        self.names.push(name);
        self.tensors.push(t);
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Places every tensor on the tape, trainable or frozen.
    pub fn register(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        self.tensors
            .iter()
            .map(|t| {
                if trainable {
                    tape.leaf(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::all_finite)
    }

    /// FNV-1a over the shapes and bit patterns of all tensors.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for b in bytes {
                h ^= *b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        for t in &self.tensors {
            for d in t.shape() {
                eat(&(*d as u64).to_le_bytes());
            }
            for v in t.data() {
                eat(&v.to_bits().to_le_bytes());
            }
        }
        h
    }

    pub fn scale_all(&mut self, c: f64) {
        for t in &mut self.tensors {
            t.data_mut().iter_mut().for_each(|v| *v *= c);
        }
    }
}

fn normal_tensor(shape: &[usize], std: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let dist = Normal::new(0.0, std).expect("finite std");
    Tensor::from_fn(shape, |_| dist.sample(rng))
}

/// Kernel with orthonormal columns when viewed as `[kH*kW*Cin, Cout]`,
/// scaled by `gain`. Falls back to orthonormal rows when `Cout` exceeds the
/// fan-in.
fn orthogonal_kernel(shape: &[usize], gain: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let fan_in = shape[0] * shape[1] * shape[2];
    let cout = shape[3];
    let (rows, cols, transpose) = if cout <= fan_in {
        (fan_in, cout, false)
    } else {
        (cout, fan_in, true)
    };
    let dist = Normal::new(0.0, 1.0).expect("unit normal");
    // column-major working matrix: cols vectors of length rows
    let mut q: Vec<Vec<f64>> = (0..cols)
        .map(|_| (0..rows).map(|_| dist.sample(rng)).collect())
        .collect();
    for j in 0..cols {
        for i in 0..j {
            let dot: f64 = q[j].iter().zip(&q[i]).map(|(a, b)| a * b).sum();
            let (head, tail) = q.split_at_mut(j);
            for (a, b) in tail[0].iter_mut().zip(&head[i]) {
                *a -= dot * b;
            }
        }
        let norm = q[j].iter().map(|a| a * a).sum::<f64>().sqrt();
        q[j].iter_mut().for_each(|a| *a /= norm);
    }
    let mut data = vec![0.0; fan_in * cout];
    for (j, col) in q.iter().enumerate() {
        for (i, v) in col.iter().enumerate() {
            // entry (r, c) of the [fan_in, cout] matrix
            let (r, c) = if transpose { (j, i) } else { (i, j) };
            data[r * cout + c] = gain * v;
        }
    }
    Tensor::new(shape.to_vec(), data).expect("shape matches")
}

/// Convolutional image-to-image generator: stem, strided downsampling,
/// residual blocks, nearest-neighbour upsampling, output projection.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorSpec {
    pub channels: usize,
    pub base_width: usize,
    pub downsamples: usize,
    pub res_blocks: usize,
    pub outer_kernel: usize,
    /// Output is `sigmoid(logit(x) + r)` instead of `sigmoid(r)`, so a zero
    /// residual `r` maps the input to itself.
    pub identity_skip: bool,
    /// Start the output projection at zero, making the untrained generator an
    /// exact identity. Off by default: an identity start has no cycle error
    /// to reduce and tends to drift away from it under the adversarial term.
    pub zero_init_output: bool,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self {
            channels: 3,
            base_width: 16,
            downsamples: 2,
            res_blocks: 3,
            outer_kernel: 7,
            identity_skip: true,
            zero_init_output: false,
        }
    }
}

impl GeneratorSpec {
    /// Spatial dims must be multiples of this.
    pub fn size_multiple(&self) -> usize {
        1 << self.downsamples
    }

    fn widest(&self) -> usize {
        self.base_width << self.downsamples
    }
}

const LOGIT_EPS: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct Generator {
    pub spec: GeneratorSpec,
    pub params: ParamSet,
}

impl Generator {
    pub fn init(spec: GeneratorSpec, rng: &mut ChaCha8Rng) -> Self {
        let mut p = ParamSet::new();
        let k = spec.outer_kernel;
        let mut width = spec.base_width;
        p.push(
            "stem".into(),
            normal_tensor(&[k, k, spec.channels, width], INIT_STD, rng),
        );
        for i in 0..spec.downsamples {
            p.push(format!("down{i}"), normal_tensor(&[3, 3, width, 2 * width], INIT_STD, rng));
            width *= 2;
        }
        for i in 0..spec.res_blocks {
            for j in 0..2 {
                p.push(format!("res{i}.{j}"), normal_tensor(&[3, 3, width, width], INIT_STD, rng));
            }
        }
        for i in 0..spec.downsamples {
            p.push(format!("up{i}"), normal_tensor(&[3, 3, width, width / 2], INIT_STD, rng));
            width /= 2;
        }
        let out_shape = [k, k, width, spec.channels];
        let out = if spec.zero_init_output {
            Tensor::zeros(&out_shape)
        } else {
            normal_tensor(&out_shape, INIT_STD, rng)
        };
        p.push("out".into(), out);
        p.push("out.bias".into(), Tensor::zeros(&[spec.channels]));
        debug_assert_eq!(width, spec.base_width);
        debug_assert!(spec.widest() >= spec.base_width);
        Self { spec, params: p }
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        let m = self.spec.size_multiple();
        match *shape {
            [h, w, c] if c == self.spec.channels && h % m == 0 && w % m == 0 && h > 0 && w > 0 => Ok(()),
            _ => Err(Error::shape(
                "generator",
                format!("[H, W, {}] with H, W multiples of {m}", self.spec.channels),
                format!("{shape:?}"),
            )),
        }
    }

    /// Records the forward pass; `p` are this generator's parameters on `tape`.
    pub fn forward(&self, tape: &mut Tape, p: &[Var], x: Var) -> Result<Var> {
        self.check_input(tape.value(x).shape())?;
        let s = &self.spec;
        let mut i = 0;
        let mut next = || {
            i += 1;
            p[i - 1]
        };
        let conv_norm_relu = |tape: &mut Tape, h: Var, k: Var, stride: usize| -> Result<Var> {
            let h = tape.conv2d(h, k, stride, Padding::SameReflect)?;
            let h = tape.instance_norm(h, NORM_EPS)?;
            Ok(tape.relu(h))
        };

        let mut h = conv_norm_relu(tape, x, next(), 1)?;
        for _ in 0..s.downsamples {
            h = conv_norm_relu(tape, h, next(), 2)?;
        }
        for _ in 0..s.res_blocks {
            let r = conv_norm_relu(tape, h, next(), 1)?;
            let r = tape.conv2d(r, next(), 1, Padding::SameReflect)?;
            let r = tape.instance_norm(r, NORM_EPS)?;
            h = tape.add(h, r)?;
        }
        for _ in 0..s.downsamples {
            let u = tape.upsample2(h)?;
            h = conv_norm_relu(tape, u, next(), 1)?;
        }
        let r = tape.conv2d(h, next(), 1, Padding::SameReflect)?;
        let r = tape.bias_add(r, next())?;
        let pre = if s.identity_skip {
            let lx = tape.logit(x, LOGIT_EPS);
            tape.add(lx, r)?
        } else {
            r
        };
        Ok(tape.sigmoid(pre))
    }

    /// Inference on an image whose dims are multiples of [`GeneratorSpec::size_multiple`].
    pub fn generate(&self, img: &Image) -> Result<Image> {
        let mut tape = Tape::new();
        let p = self.params.register(&mut tape, false);
        let x = tape.constant(img.to_tensor());
        let y = self.forward(&mut tape, &p, x)?;
        Image::from_tensor(tape.value(y).clone())
    }

    /// Inference on any size: reflect-pads to the size multiple, crops back.
    pub fn generate_any(&self, img: &Image) -> Result<Image> {
        let padded = img.pad_to_multiple(self.spec.size_multiple());
        let out = self.generate(&padded)?;
        if out.dims() == img.dims() {
            return Ok(out);
        }
        out.crop(0, 0, img.height(), img.width())
    }
}

/// Patch classifier: strided conv stack ending in a one-channel score map.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscriminatorSpec {
    pub channels: usize,
    pub widths: Vec<usize>,
    pub slope: f64,
}

impl Default for DiscriminatorSpec {
    fn default() -> Self {
        Self {
            channels: 3,
            widths: vec![16, 32, 64],
            slope: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator {
    pub spec: DiscriminatorSpec,
    pub params: ParamSet,
}

impl Discriminator {
    pub fn init(spec: DiscriminatorSpec, rng: &mut ChaCha8Rng) -> Self {
        let mut p = ParamSet::new();
        let mut cin = spec.channels;
        for (i, &w) in spec.widths.iter().enumerate() {
            p.push(format!("conv{i}"), normal_tensor(&[3, 3, cin, w], INIT_STD, rng));
            if i == 0 {
                p.push("conv0.bias".into(), Tensor::zeros(&[w]));
            }
            cin = w;
        }
        p.push("score".into(), normal_tensor(&[3, 3, cin, 1], INIT_STD, rng));
        p.push("score.bias".into(), Tensor::zeros(&[1]));
        Self { spec, params: p }
    }

    /// Output spatial size for an input dimension.
    pub fn score_size(&self, n: usize) -> usize {
        self.spec.widths.iter().fold(n, |n, _| n.div_ceil(2))
    }

    pub fn forward(&self, tape: &mut Tape, p: &[Var], x: Var) -> Result<Var> {
        match tape.value(x).shape() {
            [_, _, c] if *c == self.spec.channels => {}
            s => {
                return Err(Error::shape(
                    "discriminator",
                    format!("[H, W, {}]", self.spec.channels),
                    format!("{s:?}"),
                ))
            }
        }
        let mut it = p.iter().copied();
        let mut h = x;
        for i in 0..self.spec.widths.len() {
            h = tape.conv2d(h, it.next().unwrap(), 2, Padding::SameReflect)?;
            h = if i == 0 {
                tape.bias_add(h, it.next().unwrap())?
            } else {
                tape.instance_norm(h, NORM_EPS)?
            };
            h = tape.leaky_relu(h, self.spec.slope);
        }
        let s = tape.conv2d(h, it.next().unwrap(), 1, Padding::SameReflect)?;
        tape.bias_add(s, it.next().unwrap())
    }

    pub fn score(&self, img: &Image) -> Result<Tensor> {
        let mut tape = Tape::new();
        let p = self.params.register(&mut tape, false);
        let x = tape.constant(img.to_tensor());
        let s = self.forward(&mut tape, &p, x)?;
        Ok(tape.value(s).clone())
    }
}

/// Anything that maps an image on the tape to a list of feature maps.
pub trait Features {
    fn features(&self, tape: &mut Tape, x: Var) -> Result<Vec<Var>>;
}

/// Frozen five-stage conv/ReLU/max-pool stack tapped after the second and
/// fifth pooling stages (1/4 and 1/32 of the input resolution).
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureExtractor {
    pub channels: usize,
    pub params: ParamSet,
}

pub const PHI_WIDTHS: [usize; 5] = [8, 16, 32, 32, 32];
const PHI_TAPS: [usize; 2] = [1, 4];
const PHI_GAIN: f64 = std::f64::consts::SQRT_2;

impl FeatureExtractor {
    pub fn seeded(channels: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamSet::new();
        let mut cin = channels;
        for (i, &w) in PHI_WIDTHS.iter().enumerate() {
            p.push(format!("phi.conv{i}"), orthogonal_kernel(&[3, 3, cin, w], PHI_GAIN, &mut rng));
            cin = w;
        }
        Self { channels, params: p }
    }

    fn expected_shapes(channels: usize) -> Vec<Vec<usize>> {
        let mut cin = channels;
        PHI_WIDTHS
            .iter()
            .map(|&w| {
                let s = vec![3, 3, cin, w];
                cin = w;
                s
            })
            .collect()
    }

    /// Loads externally supplied weights with the same topology
    /// (`phi.conv0` .. `phi.conv4`, each `[3, 3, Cin, Cout]`).
    pub fn load(path: &Path, channels: usize) -> Result<Self> {
        let file = Container::read(path)?;
        let mut p = ParamSet::new();
        for (i, shape) in Self::expected_shapes(channels).into_iter().enumerate() {
            let name = format!("phi.conv{i}");
            let t = file.tensor(&name)?;
            if t.shape() != shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "{name}: expected shape {shape:?}, found {:?}",
                    t.shape()
                )));
            }
            p.push(name, t.clone());
        }
        Ok(Self { channels, params: p })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut file = Container::new();
        for (n, t) in self.params.names.iter().zip(&self.params.tensors) {
            file.put_tensor(n, t.clone());
        }
        file.write(path)
    }

    pub fn check_input(&self, shape: &[usize]) -> Result<()> {
        match *shape {
            [h, w, c] if c == self.channels && h % 32 == 0 && w % 32 == 0 && h > 0 && w > 0 => Ok(()),
            _ => Err(Error::shape(
                "phi",
                format!("[H, W, {}] with H, W multiples of 32", self.channels),
                format!("{shape:?}"),
            )),
        }
    }

    /// Both taps as plain tensors.
    pub fn extract(&self, img: &Image) -> Result<(Tensor, Tensor)> {
        let mut tape = Tape::new();
        let x = tape.constant(img.to_tensor());
        let f = self.features(&mut tape, x)?;
        Ok((tape.value(f[0]).clone(), tape.value(f[1]).clone()))
    }
}

impl Features for FeatureExtractor {
    fn features(&self, tape: &mut Tape, x: Var) -> Result<Vec<Var>> {
        self.check_input(tape.value(x).shape())?;
        let p = self.params.register(tape, false);
        let mut taps = Vec::with_capacity(PHI_TAPS.len());
        let mut h = x;
        for (i, k) in p.into_iter().enumerate() {
            h = tape.conv2d(h, k, 1, Padding::SameReflect)?;
            h = tape.relu(h);
            h = tape.max_pool2(h)?;
            if PHI_TAPS.contains(&i) {
                taps.push(h);
            }
        }
        Ok(taps)
    }
}

/// Everything that changes during training.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    /// Hazy to clean.
    pub g: Generator,
    /// Clean to hazy.
    pub f: Generator,
    /// Judges the hazy domain.
    pub dx: Discriminator,
    /// Judges the clean domain.
    pub dy: Discriminator,
    pub opt_g: AdamState,
    pub opt_f: AdamState,
    pub opt_dx: AdamState,
    pub opt_dy: AdamState,
    pub step: u64,
}

impl ModelState {
    /// Initial parameters are a pure function of `(seed, specs)`.
    pub fn init(gen: &GeneratorSpec, disc: &DiscriminatorSpec, adam: AdamConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = Generator::init(gen.clone(), &mut rng);
        let f = Generator::init(gen.clone(), &mut rng);
        let dx = Discriminator::init(disc.clone(), &mut rng);
        let dy = Discriminator::init(disc.clone(), &mut rng);
        Self {
            opt_g: AdamState::new(adam, &g.params.tensors),
            opt_f: AdamState::new(adam, &f.params.tensors),
            opt_dx: AdamState::new(adam, &dx.params.tensors),
            opt_dy: AdamState::new(adam, &dy.params.tensors),
            g,
            f,
            dx,
            dy,
            step: 0,
        }
    }

    pub fn all_finite(&self) -> bool {
        [&self.g.params, &self.f.params, &self.dx.params, &self.dy.params]
            .iter()
            .all(|p| p.all_finite())
    }
}
