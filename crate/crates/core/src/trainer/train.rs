use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::codec::estimate_memory;
use crate::data::{Dataset, Splits};
use crate::error::{Error, Result};
use crate::export::export_container;
use crate::pruning::{group_prune, SparsityTarget};
use crate::quantize::{calibrate_activations, ActivationParams};
use crate::schedule::{ScheduleConfig, ScheduleState, SPARSITY_CEILING};

use super::network::{Grads, Network};
use super::ops::{argmax, softmax_xent};
use super::optim::{cosine_lr, Sgd};

/// Samples per gradient work item. Fixed so the reduction order does not
/// depend on the thread count.
const GRAD_CHUNK: usize = 16;
/// Sparsity added per post-training tightening step.
const DRIFT_STEP: f64 = 0.005;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    East,
    Wp,
    Dense,
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "east" => Ok(Mode::East),
            "wp" => Ok(Mode::Wp),
            "dense" => Ok(Mode::Dense),
            other => Err(Error::Config(format!("unknown mode {other:?} (east, wp or dense)"))),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::East => "east",
            Mode::Wp => "wp",
            Mode::Dense => "dense",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Augment {
    pub flip: bool,
    /// Zero padding before a random crop back to the input size.
    pub pad: usize,
}

impl Default for Augment {
    fn default() -> Self {
        Self { flip: true, pad: 4 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    /// Epochs of linear per-batch ramp from lr0 / steps up to the cosine value.
    pub warmup_epochs: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Byte budget for the exported container. Required unless dense.
    pub target_memory: Option<usize>,
    pub mode: Mode,
    pub augment: Augment,
    /// Validation images used to calibrate activation binary points.
    pub calib_samples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            batch_size: 128,
            lr0: 0.1,
            warmup_epochs: 1,
            momentum: 0.9,
            weight_decay: 5e-4,
            seed: 0,
            target_memory: None,
            mode: Mode::East,
            augment: Augment::default(),
            calib_samples: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, net: &Network) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(Error::Config("lr0 must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return Err(Error::Config("momentum must be in [0, 1) and weight_decay non-negative".into()));
        }
        if self.calib_samples == 0 {
            return Err(Error::Config("calib_samples must be at least 1".into()));
        }
        let header = crate::codec::header_len(net.layers().len() + net.weighted_layers().len() + 1);
        match self.target_memory {
            None if self.mode != Mode::Dense => Err(Error::Config(format!("{} mode needs target_memory_bytes", self.mode))),
            Some(m) if m <= header => Err(Error::Config(format!(
                "target of {m} bytes does not exceed the {header}-byte container header"
            ))),
            _ => Ok(()),
        }
    }
}

/// One row of the per-epoch log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub val_acc: f64,
    pub sparsity: f64,
    pub gs: usize,
    /// Estimated container bytes after this epoch's pruning.
    pub bytes: usize,
    pub frozen: bool,
}

pub fn write_epoch_csv<W: Write>(logs: &[EpochLog], mut w: W) -> std::io::Result<()> {
    writeln!(w, "epoch,loss,val_acc,sparsity,gs,bytes,frozen")?;
    for l in logs {
        writeln!(
            w,
            "{},{:.6},{:.4},{:.6},{},{},{}",
            l.epoch, l.loss, l.val_acc, l.sparsity, l.gs, l.bytes, u8::from(l.frozen)
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: Network,
    pub logs: Vec<EpochLog>,
    pub container: Vec<u8>,
    pub activations: ActivationParams,
    /// First epoch whose estimate met the budget.
    pub freeze_epoch: Option<usize>,
}

impl TrainOutcome {
    /// Epochs spent before the budget was first met (freeze epoch + 1).
    pub fn epochs_to_constraint(&self) -> Option<usize> {
        self.freeze_epoch.map(|e| e + 1)
    }
}

fn augment_into(src: &[f32], (h, w, c): (usize, usize, usize), flip: bool, dy: usize, dx: usize, pad: usize, out: &mut Vec<f32>) {
    out.clear();
    out.resize(src.len(), 0.0);
    for y in 0..h {
        let sy = (y + dy) as isize - pad as isize;
        if sy < 0 || sy >= h as isize {
            continue;
        }
        for x in 0..w {
            let sx = (x + dx) as isize - pad as isize;
            if sx < 0 || sx >= w as isize {
                continue;
            }
            let sx = if flip { w - 1 - sx as usize } else { sx as usize };
            let s = (sy as usize * w + sx) * c;
            out[(y * w + x) * c..][..c].copy_from_slice(&src[s..s + c]);
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct AugDraw {
    flip: bool,
    dy: usize,
    dx: usize,
}

fn draw_augment(rng: &mut ChaCha8Rng, a: &Augment) -> AugDraw {
    let flip = a.flip && rng.gen::<bool>();
    let (dy, dx) = if a.pad > 0 {
        (rng.gen_range(0..=2 * a.pad), rng.gen_range(0..=2 * a.pad))
    } else {
        (0, 0)
    };
    AugDraw { flip, dy, dx }
}

/// Summed gradients and loss over `batch`, reduced in sample order.
fn batch_gradients(net: &Network, data: &Dataset, batch: &[usize], draws: &[AugDraw], pad: usize) -> Result<(Grads, f64)> {
    let partials: Vec<Result<(Grads, f64)>> = batch
        .par_chunks(GRAD_CHUNK)
        .zip(draws.par_chunks(GRAD_CHUNK))
        .map(|(idx, dr)| {
            let mut g = Grads::zeros_like(net);
            let mut loss = 0.0f64;
            let mut img = Vec::new();
            for (&i, d) in idx.iter().zip(dr) {
                augment_into(data.image(i), data.shape(), d.flip, d.dy, d.dx, pad, &mut img);
                let trace = net.trace(&img)?;
                let (l, dlogits) = softmax_xent(trace.logits(), usize::from(data.label(i)));
                loss += f64::from(l);
                net.backward_sample(&trace, &dlogits, &mut g);
            }
            Ok((g, loss))
        })
        .collect();
    let mut iter = partials.into_iter();
    let (mut grads, mut loss) = iter.next().expect("non-empty batch")?;
    for p in iter {
        let (g, l) = p?;
        grads.add_assign(&g);
        loss += l;
    }
    Ok((grads, loss))
}

/// Linear warmup: batches already taken and the length of the ramp.
#[derive(Debug, Clone, Copy)]
struct Warmup {
    done: usize,
    steps: usize,
}

impl Warmup {
    const NONE: Self = Self { done: 0, steps: 0 };

    fn scale(self, batch: usize) -> f64 {
        let step = self.done + batch;
        if step < self.steps {
            (step + 1) as f64 / self.steps as f64
        } else {
            1.0
        }
    }
}

/// One pass over the training set. Returns the mean training loss.
fn train_epoch(
    net: &mut Network,
    opt: &mut Sgd,
    data: &Dataset,
    cfg: &TrainConfig,
    lr: f64,
    warmup: Warmup,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(rng);
    let mut total = 0.0;
    for (i, batch) in order.chunks(cfg.batch_size).enumerate() {
        let draws: Vec<AugDraw> = batch.iter().map(|_| draw_augment(rng, &cfg.augment)).collect();
        let (mut grads, loss) = batch_gradients(net, data, batch, &draws, cfg.augment.pad)?;
        grads.scale(1.0 / batch.len() as f32);
        opt.step(net, &grads, lr * warmup.scale(i));
        total += loss;
    }
    Ok(total / data.len().max(1) as f64)
}

/// Top-1 accuracy of the float network.
pub fn evaluate_float(net: &Network, data: &Dataset) -> Result<f64> {
    let hits: Vec<Result<bool>> = (0..data.len())
        .into_par_iter()
        .map(|i| Ok(argmax(&net.logits(data.image(i))?) == usize::from(data.label(i))))
        .collect();
    let mut correct = 0usize;
    for h in hits {
        correct += usize::from(h?);
    }
    Ok(correct as f64 / data.len().max(1) as f64)
}

/// Recompute every weighted layer's mask at `sparsity` with groups of `gs`.
fn prune_all(net: &mut Network, sparsity: f64, gs: usize) -> Result<()> {
    let target = SparsityTarget::new(sparsity)?;
    for layer in net.weighted_layers() {
        let p = net.params_mut(layer).expect("weighted layer");
        let mask = group_prune(p.weight().data(), target, gs);
        p.set_mask(mask)?;
    }
    Ok(())
}

fn calibrate(net: &Network, val: &Dataset, n: usize) -> Result<ActivationParams> {
    let calib = val.head(n);
    calibrate_activations(net, calib.iter().map(|(img, _)| img))
}

/// Train `net` on `data` in the mode given by `cfg`.
pub fn train(net: Network, data: &Splits, cfg: &TrainConfig, sched: &ScheduleConfig) -> Result<TrainOutcome> {
    cfg.validate(&net)?;
    sched.validate()?;
    if data.train.is_empty() || data.val.is_empty() {
        return Err(Error::Config("training and validation sets must be non-empty".into()));
    }
    if data.train.shape() != net.input_shape() {
        return Err(Error::ShapeMismatch(format!(
            "data {:?} vs network input {:?}",
            data.train.shape(),
            net.input_shape()
        )));
    }
    let mut net = net;
    net.set_normalization(data.normalization.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Sgd::new(&net, cfg.momentum, cfg.weight_decay);
    let pruning = cfg.mode != Mode::Dense;
    let budget = cfg.target_memory.unwrap_or(usize::MAX);

    let mut state = ScheduleState::initial(sched);
    let mut logs = Vec::with_capacity(cfg.epochs);
    let mut best_bytes = usize::MAX;
    let batches = data.train.len().div_ceil(cfg.batch_size);
    for e in 0..cfg.epochs {
        let lr = cosine_lr(e, cfg.epochs, cfg.lr0);
        let warmup = Warmup {
            done: e * batches,
            steps: cfg.warmup_epochs * batches,
        };
        let loss = train_epoch(&mut net, &mut opt, &data.train, cfg, lr, warmup, &mut rng)?;
        let gs = if cfg.mode == Mode::Wp { 1 } else { state.current_gs };
        if pruning && !state.frozen {
            prune_all(&mut net, state.current_sparsity, gs)?;
            opt.reset_pruned(&net);
        }
        let bytes = estimate_memory(&net)?.total_bytes;
        best_bytes = best_bytes.min(bytes);
        let met = pruning && bytes <= budget;
        logs.push(EpochLog {
            epoch: e,
            loss,
            val_acc: evaluate_float(&net, &data.val)?,
            sparsity: net.sparsity(),
            gs: if pruning { gs } else { 1 },
            bytes,
            frozen: state.frozen || met,
        });
        state = state.advance(sched, met);
    }

    let mut acts = calibrate(&net, &data.val, cfg.calib_samples)?;
    let mut container = export_container(&net, &acts)?;
    if let Some(target) = cfg.target_memory {
        if container.len() > target && (!pruning || !state.frozen) {
            return Err(Error::ConstraintUnreachable {
                target,
                best: best_bytes.min(container.len()),
            });
        }
        // fine-tuning may have moved weights enough to grow the encoded size
        let gs = if cfg.mode == Mode::Wp { 1 } else { state.current_gs };
        let mut sparsity = state.current_sparsity;
        while container.len() > target {
            sparsity += DRIFT_STEP;
            if sparsity > SPARSITY_CEILING {
                return Err(Error::ConstraintUnreachable {
                    target,
                    best: container.len(),
                });
            }
            prune_all(&mut net, sparsity, gs)?;
            opt.reset_pruned(&net);
            let lr = cosine_lr(cfg.epochs - 1, cfg.epochs, cfg.lr0);
            let loss = train_epoch(&mut net, &mut opt, &data.train, cfg, lr, Warmup::NONE, &mut rng)?;
            acts = calibrate(&net, &data.val, cfg.calib_samples)?;
            container = export_container(&net, &acts)?;
            logs.push(EpochLog {
                epoch: logs.len(),
                loss,
                val_acc: evaluate_float(&net, &data.val)?,
                sparsity: net.sparsity(),
                gs,
                bytes: container.len(),
                frozen: true,
            });
        }
    }
    Ok(TrainOutcome {
        net,
        logs,
        container,
        activations: acts,
        freeze_epoch: state.freeze_epoch,
    })
}

fn with_mode(cfg: &TrainConfig, mode: Mode) -> TrainConfig {
    TrainConfig { mode, ..cfg.clone() }
}

/// Memory-constrained training with growing group size.
pub fn train_east(net: Network, data: &Splits, cfg: &TrainConfig, sched: &ScheduleConfig) -> Result<TrainOutcome> {
    train(net, data, &with_mode(cfg, Mode::East), sched)
}

/// The same loop with group size pinned to 1.
pub fn train_wp(net: Network, data: &Splits, cfg: &TrainConfig, sched: &ScheduleConfig) -> Result<TrainOutcome> {
    train(net, data, &with_mode(cfg, Mode::Wp), sched)
}

/// Unpruned training; the budget, if any, is only checked at export.
pub fn train_dense(net: Network, data: &Splits, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train(net, data, &with_mode(cfg, Mode::Dense), &ScheduleConfig::default())
}
