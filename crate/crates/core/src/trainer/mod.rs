//! Unpaired training loop, checkpoints and inference.

mod config;
mod sampler;

pub use config::{TrainConfig, UpdateOrder};
pub use sampler::UnpairedSampler;

use std::fs;
use std::path::{Path, PathBuf};

use crate::checkpoint::Container;
use crate::data::{list_pngs, load_png, Image};
use crate::error::{Error, Result};
use crate::losses::{
    cycle_loss, cyclic_perceptual_loss, lsgan_discriminator, lsgan_generator, objective_on_tape,
};
use crate::nets::{Discriminator, FeatureExtractor, Generator, ModelState, ParamSet};
use crate::pyramid;
use crate::tensor::{adam_step, AdamState, Tape, Tensor, Var};

/// Loss values recorded for one training step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLosses {
    pub step: u64,
    pub d_x: f64,
    pub d_y: f64,
    pub g_adv: f64,
    pub cycle: f64,
    pub perceptual: f64,
    pub total: f64,
}

impl StepLosses {
    pub const TSV_HEADER: &'static str = "step\td_x\td_y\tg_adv\tcycle\tperceptual\ttotal";

    /// Full-precision fields so the log reproduces the in-memory values.
    pub fn to_tsv(&self) -> String {
        format!(
            "{}\t{:e}\t{:e}\t{:e}\t{:e}\t{:e}\t{:e}",
            self.step, self.d_x, self.d_y, self.g_adv, self.cycle, self.perceptual, self.total
        )
    }

    pub fn from_tsv(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 7 {
            return Err(Error::Param(format!("expected 7 fields, got {}", f.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| Error::Param(format!("bad number {s:?}")));
        Ok(Self {
            step: f[0].parse().map_err(|_| Error::Param(format!("bad step {:?}", f[0])))?,
            d_x: num(f[1])?,
            d_y: num(f[2])?,
            g_adv: num(f[3])?,
            cycle: num(f[4])?,
            perceptual: num(f[5])?,
            total: num(f[6])?,
        })
    }
}

fn check_finite(step: u64, terms: &[(&str, f64)]) -> Result<()> {
    if let Some((name, _)) = terms.iter().find(|(_, v)| !v.is_finite()) {
        let detail = terms
            .iter()
            .map(|(n, v)| format!("{n}={v}"))
            .collect::<Vec<_>>()
            .join(" ");
        return Err(Error::Numerical {
            term: name.to_string(),
            step,
            detail,
        });
    }
    Ok(())
}

/// Generator-side pass: losses and gradients for `G` and `F`, plus the
/// translated images the discriminators are trained on.
pub struct GeneratorPass {
    pub grads_g: Vec<Tensor>,
    pub grads_f: Vec<Tensor>,
    pub g_adv: f64,
    pub cycle: f64,
    pub perceptual: f64,
    pub total: f64,
    /// `G(x)`, detached.
    pub fake_y: Tensor,
    /// `F(y)`, detached.
    pub fake_x: Tensor,
}

/// Generator-side objective recorded on a tape.
pub struct GeneratorTerms {
    pub params_g: Vec<Var>,
    pub params_f: Vec<Var>,
    pub adv: Var,
    pub cycle: Var,
    pub perceptual: Var,
    pub total: Var,
    pub fake_y: Var,
    pub fake_x: Var,
}

/// Records the full generator objective for one `(x, y)` pair. `G` and `F`
/// are trainable leaves, the discriminators are constants.
pub fn record_generator_objective(
    tape: &mut Tape,
    state: &ModelState,
    phi: &FeatureExtractor,
    x: &Image,
    y: &Image,
    cfg: &TrainConfig,
) -> Result<GeneratorTerms> {
    let pg = state.g.params.register(tape, true);
    let pf = state.f.params.register(tape, true);
    let pdx = state.dx.params.register(tape, false);
    let pdy = state.dy.params.register(tape, false);
    let xv = tape.constant(x.to_tensor());
    let yv = tape.constant(y.to_tensor());

    let fake_y = state.g.forward(tape, &pg, xv)?;
    let cyc_x = state.f.forward(tape, &pf, fake_y)?;
    let fake_x = state.f.forward(tape, &pf, yv)?;
    let cyc_y = state.g.forward(tape, &pg, fake_x)?;

    let sy = state.dy.forward(tape, &pdy, fake_y)?;
    let sx = state.dx.forward(tape, &pdx, fake_x)?;
    let adv_g = lsgan_generator(tape, sy);
    let adv_f = lsgan_generator(tape, sx);
    let adv = tape.add(adv_g, adv_f)?;

    let cx = cycle_loss(tape, xv, cyc_x)?;
    let cy = cycle_loss(tape, yv, cyc_y)?;
    let cycle = tape.add(cx, cy)?;

    let perceptual = cyclic_perceptual_loss(tape, phi, (xv, cyc_x), (yv, cyc_y), cfg.perceptual_norm)?;
    // With gamma = 0 the perceptual term is reported but not differentiated.
    let perc_in_loss = (cfg.weights.gamma != 0.0).then_some(perceptual);
    let total = objective_on_tape(tape, adv, cycle, perc_in_loss, &cfg.weights)?;
    Ok(GeneratorTerms {
        params_g: pg,
        params_f: pf,
        adv,
        cycle,
        perceptual,
        total,
        fake_y,
        fake_x,
    })
}

/// Generator objective and its gradients for `G` and `F`.
pub fn generator_pass(
    state: &ModelState,
    phi: &FeatureExtractor,
    x: &Image,
    y: &Image,
    cfg: &TrainConfig,
) -> Result<GeneratorPass> {
    let mut tape = Tape::new();
    let t = record_generator_objective(&mut tape, state, phi, x, y, cfg)?;
    let values = [
        ("g_adv", tape.value(t.adv).item()),
        ("cycle", tape.value(t.cycle).item()),
        ("perceptual", tape.value(t.perceptual).item()),
        ("total", tape.value(t.total).item()),
    ];
    check_finite(state.step, &values)?;

    let grads = tape.backward(t.total)?;
    Ok(GeneratorPass {
        grads_g: t.params_g.iter().map(|&v| grads.wrt(&tape, v)).collect(),
        grads_f: t.params_f.iter().map(|&v| grads.wrt(&tape, v)).collect(),
        g_adv: values[0].1,
        cycle: values[1].1,
        perceptual: values[2].1,
        total: values[3].1,
        fake_y: tape.value(t.fake_y).clone(),
        fake_x: tape.value(t.fake_x).clone(),
    })
}

/// Discriminator losses `(d_x, d_y)` and gradients for `Dx`, `Dy`.
pub fn discriminator_pass(
    state: &ModelState,
    x: &Image,
    y: &Image,
    fake_x: &Tensor,
    fake_y: &Tensor,
) -> Result<(f64, f64, Vec<Tensor>, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let pdx = state.dx.params.register(&mut tape, true);
    let pdy = state.dy.params.register(&mut tape, true);
    let xv = tape.constant(x.to_tensor());
    let yv = tape.constant(y.to_tensor());
    let fx = tape.constant(fake_x.clone());
    let fy = tape.constant(fake_y.clone());

    let real_x = state.dx.forward(&mut tape, &pdx, xv)?;
    let gen_x = state.dx.forward(&mut tape, &pdx, fx)?;
    let d_x = lsgan_discriminator(&mut tape, real_x, gen_x);
    let real_y = state.dy.forward(&mut tape, &pdy, yv)?;
    let gen_y = state.dy.forward(&mut tape, &pdy, fy)?;
    let d_y = lsgan_discriminator(&mut tape, real_y, gen_y);
    let both = tape.add(d_x, d_y)?;

    let (dxv, dyv) = (tape.value(d_x).item(), tape.value(d_y).item());
    check_finite(state.step, &[("d_x", dxv), ("d_y", dyv)])?;
    let grads = tape.backward(both)?;
    Ok((
        dxv,
        dyv,
        pdx.iter().map(|&v| grads.wrt(&tape, v)).collect(),
        pdy.iter().map(|&v| grads.wrt(&tape, v)).collect(),
    ))
}

fn apply(params: &mut ParamSet, grads: &[Tensor], opt: &mut AdamState) -> Result<()> {
    adam_step(&mut params.tensors, grads, opt)
}

/// One joint generator update and one update per discriminator.
pub fn train_step(
    state: &mut ModelState,
    phi: &FeatureExtractor,
    x: &Image,
    y: &Image,
    cfg: &TrainConfig,
) -> Result<StepLosses> {
    let (gen, d_x, d_y) = match cfg.update_order {
        UpdateOrder::GeneratorsFirst => {
            let gen = generator_pass(state, phi, x, y, cfg)?;
            let (d_x, d_y, gdx, gdy) = discriminator_pass(state, x, y, &gen.fake_x, &gen.fake_y)?;
            apply(&mut state.g.params, &gen.grads_g, &mut state.opt_g)?;
            apply(&mut state.f.params, &gen.grads_f, &mut state.opt_f)?;
            apply(&mut state.dx.params, &gdx, &mut state.opt_dx)?;
            apply(&mut state.dy.params, &gdy, &mut state.opt_dy)?;
            (gen, d_x, d_y)
        }
        UpdateOrder::DiscriminatorsFirst => {
            let fake_y = state.g.generate(x)?.to_tensor();
            let fake_x = state.f.generate(y)?.to_tensor();
            let (d_x, d_y, gdx, gdy) = discriminator_pass(state, x, y, &fake_x, &fake_y)?;
            apply(&mut state.dx.params, &gdx, &mut state.opt_dx)?;
            apply(&mut state.dy.params, &gdy, &mut state.opt_dy)?;
            let gen = generator_pass(state, phi, x, y, cfg)?;
            apply(&mut state.g.params, &gen.grads_g, &mut state.opt_g)?;
            apply(&mut state.f.params, &gen.grads_f, &mut state.opt_f)?;
            (gen, d_x, d_y)
        }
    };
    if !state.all_finite() {
        return Err(Error::Numerical {
            term: "parameters".into(),
            step: state.step,
            detail: "non-finite parameter after update".into(),
        });
    }
    let losses = StepLosses {
        step: state.step,
        d_x,
        d_y,
        g_adv: gen.g_adv,
        cycle: gen.cycle,
        perceptual: gen.perceptual,
        total: gen.total,
    };
    state.step += 1;
    Ok(losses)
}

/// Builds the perceptual feature extractor a config asks for.
pub fn feature_extractor(cfg: &TrainConfig) -> Result<FeatureExtractor> {
    match &cfg.phi_weights {
        Some(p) => FeatureExtractor::load(p, cfg.generator.channels),
        None => Ok(FeatureExtractor::seeded(cfg.generator.channels, cfg.phi_seed)),
    }
}

/// Brings an image to the training size: no-op if it already matches,
/// otherwise a bilinear resize.
pub fn fit_to_size(img: Image, size: usize) -> Result<Image> {
    if img.height() == size && img.width() == size {
        Ok(img)
    } else {
        img.resize_bilinear(size, size)
    }
}

/// Training session over in-memory image sets.
pub struct Trainer {
    pub cfg: TrainConfig,
    pub state: ModelState,
    pub phi: FeatureExtractor,
    sampler: UnpairedSampler,
    hazy: Vec<Image>,
    clean: Vec<Image>,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, hazy: Vec<Image>, clean: Vec<Image>) -> Result<Self> {
        cfg.validate()?;
        let state = ModelState::init(&cfg.generator, &cfg.discriminator, cfg.adam, cfg.seed);
        let sampler = UnpairedSampler::new(hazy.len(), clean.len(), cfg.seed)?;
        Self::assemble(cfg, state, sampler, hazy, clean)
    }

    fn assemble(
        cfg: TrainConfig,
        state: ModelState,
        sampler: UnpairedSampler,
        hazy: Vec<Image>,
        clean: Vec<Image>,
    ) -> Result<Self> {
        let n = cfg.image_size;
        let c = cfg.generator.channels;
        for img in hazy.iter().chain(&clean) {
            if img.dims() != (n, n, c) {
                return Err(Error::shape("trainer", format!("{n}x{n}x{c} images"), format!("{:?}", img.dims())));
            }
        }
        let phi = feature_extractor(&cfg)?;
        Ok(Self {
            cfg,
            state,
            phi,
            sampler,
            hazy,
            clean,
        })
    }

    /// Continues a run from a checkpoint written by [`Trainer::checkpoint`].
    pub fn resume(ckpt: &Container, hazy: Vec<Image>, clean: Vec<Image>) -> Result<Self> {
        let cfg = TrainConfig::from_kv(ckpt.text("config")?)?;
        let state = load_state(ckpt, &cfg)?;
        let sampler = UnpairedSampler::load(ckpt, "sampler")?;
        if sampler.epoch_len() != hazy.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint sampled {} hazy images, {} supplied",
                sampler.epoch_len(),
                hazy.len()
            )));
        }
        let t = Self::assemble(cfg, state, sampler, hazy, clean)?;
        let fp = ckpt.int("phi.fingerprint")?;
        if fp != t.phi.params.fingerprint() {
            return Err(Error::Checkpoint("feature extractor differs from the checkpointed one".into()));
        }
        Ok(t)
    }

    pub fn epoch(&self) -> u64 {
        self.sampler.epoch()
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.sampler.epoch_len()
    }

    pub fn step(&mut self) -> Result<StepLosses> {
        let (i, j) = self.sampler.next_pair();
        train_step(&mut self.state, &self.phi, &self.hazy[i], &self.clean[j], &self.cfg)
    }

    pub fn run_epoch(&mut self) -> Result<Vec<StepLosses>> {
        (0..self.steps_per_epoch()).map(|_| self.step()).collect()
    }

    pub fn checkpoint(&self) -> Container {
        let mut c = Container::new();
        c.put_text("format", "cycle-dehaze checkpoint");
        c.put_text("config", self.cfg.to_kv());
        save_state(&mut c, &self.state);
        self.sampler.save(&mut c, "sampler");
        c.put_ints("phi.fingerprint", vec![self.phi.params.fingerprint()]);
        c
    }
}

fn put_params(c: &mut Container, prefix: &str, p: &ParamSet) {
    for (n, t) in p.names.iter().zip(&p.tensors) {
        c.put_tensor(&format!("{prefix}.{n}"), t.clone());
    }
}

fn get_params(c: &Container, prefix: &str, template: &ParamSet) -> Result<ParamSet> {
    let mut out = template.clone();
    for (n, t) in out.names.iter().zip(out.tensors.iter_mut()) {
        let name = format!("{prefix}.{n}");
        let stored = c.tensor(&name)?;
        if stored.shape() != t.shape() {
            return Err(Error::Checkpoint(format!(
                "{name}: checkpoint shape {:?} does not match architecture {:?}",
                stored.shape(),
                t.shape()
            )));
        }
        *t = stored.clone();
    }
    Ok(out)
}

fn put_adam(c: &mut Container, prefix: &str, a: &AdamState) {
    for (i, (m, v)) in a.m.iter().zip(&a.v).enumerate() {
        c.put_tensor(&format!("{prefix}.m{i}"), m.clone());
        c.put_tensor(&format!("{prefix}.v{i}"), v.clone());
    }
    c.put_ints(&format!("{prefix}.step"), vec![a.step]);
}

fn get_adam(c: &Container, prefix: &str, template: &AdamState) -> Result<AdamState> {
    let mut out = template.clone();
    for (i, (m, v)) in out.m.iter_mut().zip(out.v.iter_mut()).enumerate() {
        for (slot, key) in [(m, format!("{prefix}.m{i}")), (v, format!("{prefix}.v{i}"))] {
            let stored = c.tensor(&key)?;
            if stored.shape() != slot.shape() {
                return Err(Error::Checkpoint(format!("{key}: shape mismatch")));
            }
            *slot = stored.clone();
        }
    }
    out.step = c.int(&format!("{prefix}.step"))?;
    Ok(out)
}

pub fn save_state(c: &mut Container, s: &ModelState) {
    c.put_ints("step", vec![s.step]);
    put_params(c, "g", &s.g.params);
    put_params(c, "f", &s.f.params);
    put_params(c, "dx", &s.dx.params);
    put_params(c, "dy", &s.dy.params);
    put_adam(c, "opt_g", &s.opt_g);
    put_adam(c, "opt_f", &s.opt_f);
    put_adam(c, "opt_dx", &s.opt_dx);
    put_adam(c, "opt_dy", &s.opt_dy);
}

/// Restores a [`ModelState`] whose architecture is given by `cfg`.
pub fn load_state(c: &Container, cfg: &TrainConfig) -> Result<ModelState> {
    let t = ModelState::init(&cfg.generator, &cfg.discriminator, cfg.adam, cfg.seed);
    Ok(ModelState {
        g: Generator {
            params: get_params(c, "g", &t.g.params)?,
            ..t.g
        },
        f: Generator {
            params: get_params(c, "f", &t.f.params)?,
            ..t.f
        },
        dx: Discriminator {
            params: get_params(c, "dx", &t.dx.params)?,
            ..t.dx
        },
        dy: Discriminator {
            params: get_params(c, "dy", &t.dy.params)?,
            ..t.dy
        },
        opt_g: get_adam(c, "opt_g", &t.opt_g)?,
        opt_f: get_adam(c, "opt_f", &t.opt_f)?,
        opt_dx: get_adam(c, "opt_dx", &t.opt_dx)?,
        opt_dy: get_adam(c, "opt_dy", &t.opt_dy)?,
        step: c.int("step")?,
    })
}

/// The dehazing generator `G` and the config it was trained with.
pub fn load_generator(path: &Path) -> Result<(TrainConfig, Generator)> {
    let c = Container::read(path)?;
    let cfg = TrainConfig::from_kv(c.text("config")?)?;
    let template = Generator::init(cfg.generator.clone(), &mut rand::SeedableRng::seed_from_u64(0));
    let params = get_params(&c, "g", &template.params)?;
    Ok((cfg, Generator { params, ..template }))
}

/// Number of pyramid levels that brings `(h, w)` down to at most `size`.
pub fn levels_for(h: usize, w: usize, size: usize) -> usize {
    let (mut h, mut w, mut l) = (h, w, 0);
    while h.max(w) > size && h.min(w) >= 2 {
        h = h.div_ceil(2);
        w = w.div_ceil(2);
        l += 1;
    }
    l
}

/// Dehazes a full-resolution image.
///
/// The network runs on the Gaussian-pyramid top of the input. With
/// `use_pyramid` the result replaces that top and the hazy image's detail
/// bands are collapsed back on; otherwise the small output is only upsampled.
pub fn dehaze(g: &Generator, image_size: usize, hazy: &Image, use_pyramid: bool) -> Result<Image> {
    let levels = levels_for(hazy.height(), hazy.width(), image_size);
    if levels == 0 {
        return g.generate_any(hazy);
    }
    let stack = pyramid::laplacian_build(hazy, levels)?;
    let small = g.generate_any(&stack.top)?;
    if use_pyramid {
        pyramid::dehaze_upscale(hazy, &small, levels)
    } else {
        let zeroed = pyramid::PyramidStack {
            bands: stack
                .bands
                .iter()
                .map(|b| Image::filled(b.height(), b.width(), b.channels(), 0.0))
                .collect(),
            top: small,
        };
        Ok(pyramid::laplacian_collapse(&zeroed)?.clamp01())
    }
}

/// Loads every PNG in `dir`, fitted to the training size.
pub fn load_dir(dir: &Path, size: usize, channels: usize) -> Result<Vec<Image>> {
    let files = list_pngs(dir)?;
    if files.is_empty() {
        return Err(Error::Param(format!("no PNG images in {}", dir.display())));
    }
    files
        .iter()
        .map(|p| {
            let img = load_png(p)?;
            if img.channels() != channels {
                return Err(Error::Decode {
                    path: p.clone(),
                    msg: format!("expected {channels} channels, found {}", img.channels()),
                });
            }
            fit_to_size(img, size)
        })
        .collect()
}

#[derive(Debug)]
pub struct TrainSummary {
    pub final_checkpoint: PathBuf,
    pub loss_curve: PathBuf,
    pub steps: u64,
    /// Mean cycle loss per epoch.
    pub epoch_cycle: Vec<f64>,
}

pub const CURVE_FILE: &str = "loss_curve.tsv";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";

/// Trains until `cfg.epochs` epochs are complete, writing the loss curve,
/// periodic checkpoints and `final.ckpt` into `out`. The curve of a resumed
/// run holds only the steps taken by that run.
pub fn train(cfg: &TrainConfig, out: &Path, resume: Option<&Path>, mut progress: impl FnMut(&str)) -> Result<TrainSummary> {
    cfg.validate()?;
    let (hazy_dir, clean_dir) = match (&cfg.hazy_dir, &cfg.clean_dir) {
        (Some(h), Some(c)) => (h.clone(), c.clone()),
        _ => return Err(Error::Config("hazy_dir and clean_dir are required".into())),
    };
    let c = cfg.generator.channels;
    let hazy = load_dir(&hazy_dir, cfg.image_size, c)?;
    let clean = load_dir(&clean_dir, cfg.image_size, c)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;

    // A resumed run keeps the checkpoint's settings except for the epoch target.
    let mut trainer = match resume {
        Some(p) => {
            let mut t = Trainer::resume(&Container::read(p)?, hazy, clean)?;
            t.cfg.epochs = cfg.epochs;
            t
        }
        None => Trainer::new(cfg.clone(), hazy, clean)?,
    };
    let curve_path = out.join(CURVE_FILE);
    let mut curve = String::from(StepLosses::TSV_HEADER);
    curve.push('\n');
    let mut epoch_cycle = Vec::new();
    let target = trainer.cfg.epochs as u64;
    while trainer.epoch() < target {
        let epoch = trainer.epoch() + 1;
        let mut cyc_sum = 0.0;
        let n = trainer.steps_per_epoch();
        for _ in 0..n {
            let s = trainer.step()?;
            curve.push_str(&s.to_tsv());
            curve.push('\n');
            cyc_sum += s.cycle;
            let interval = trainer.cfg.checkpoint_interval;
            if interval > 0 && trainer.state.step % interval == 0 {
                let p = out.join(format!("step_{:06}.ckpt", trainer.state.step));
                trainer.checkpoint().write(&p)?;
            }
        }
        epoch_cycle.push(cyc_sum / n as f64);
        fs::write(&curve_path, &curve).map_err(|e| Error::io(&curve_path, e))?;
        progress(&format!(
            "epoch {epoch}/{target} step {} mean cycle {:.5}",
            trainer.state.step,
            cyc_sum / n as f64
        ));
    }
    fs::write(&curve_path, &curve).map_err(|e| Error::io(&curve_path, e))?;
    let final_checkpoint = out.join(FINAL_CHECKPOINT);
    trainer.checkpoint().write(&final_checkpoint)?;
    Ok(TrainSummary {
        final_checkpoint,
        loss_curve: curve_path,
        steps: trainer.state.step,
        epoch_cycle,
    })
}
