//! Commands behind the `east` binary, the key=value run configuration and
//! the output bookkeeping shared by them.
//!
//! Configuration files hold one `key = value` pair per line; `#` starts a
//! comment. Relative paths are resolved against the directory of the file.
//!
//! ```text
//! data = cifar-10-batches-bin
//! train_n = 8000
//! val_n = 1000
//! test_n = 2000
//! epochs = 40
//! mode = east
//! target_memory_bytes = 12000
//! out_dir = runs/east-12k
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::codec::{ModelContainer, MemoryReport};
use crate::data::{ingest_cifar_binary, read_test_set, Dataset, Splits, CLASSES};
use crate::error::{Error, Result};
use crate::export::{export_checkpoint, export_container, import_checkpoint, read_normalization, topology};
use crate::pruning::{group_prune, SparsityTarget};
use crate::quantize::ActivationParams;
use crate::runtime::{evaluate_container, Runtime};
use crate::schedule::{ScheduleConfig, SPARSITY_CEILING};
use crate::trainer::{evaluate_float, train, write_epoch_csv, ActShape, Mode, Network, TrainConfig, TrainOutcome};

pub const SEED_ENV: &str = "EAST_SEED";
pub const CONTAINER_FILE: &str = "model.east";
pub const CHECKPOINT_FILE: &str = "checkpoint.east";
pub const EPOCH_LOG_FILE: &str = "epochs.csv";
pub const SWEEP_FILE: &str = "sweep.csv";

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data: PathBuf,
    pub train_n: usize,
    pub val_n: usize,
    pub test_n: usize,
    pub train: TrainConfig,
    pub schedule: ScheduleConfig,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: PathBuf::new(),
            train_n: 8000,
            val_n: 1000,
            test_n: 2000,
            train: TrainConfig::default(),
            schedule: ScheduleConfig::default(),
            out_dir: PathBuf::from("east-out"),
        }
    }
}

fn parse_value<T: FromStr>(line: usize, key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("line {line}: invalid value {value:?} for {key}")))
}

fn parse_bool(line: usize, key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("line {line}: invalid value {value:?} for {key}"))),
    }
}

impl RunConfig {
    /// Parse key=value text. Relative paths are joined onto `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let n = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {n}: expected key = value")))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {n}: duplicate key {key}")));
            }
            let t = &mut cfg.train;
            let s = &mut cfg.schedule;
            match key {
                "data" => cfg.data = base.join(value),
                "train_n" => cfg.train_n = parse_value(n, key, value)?,
                "val_n" => cfg.val_n = parse_value(n, key, value)?,
                "test_n" => cfg.test_n = parse_value(n, key, value)?,
                "epochs" => t.epochs = parse_value(n, key, value)?,
                "batch_size" => t.batch_size = parse_value(n, key, value)?,
                "lr0" => t.lr0 = parse_value(n, key, value)?,
                "warmup_epochs" => t.warmup_epochs = parse_value(n, key, value)?,
                "momentum" => t.momentum = parse_value(n, key, value)?,
                "weight_decay" => t.weight_decay = parse_value(n, key, value)?,
                "seed" => t.seed = parse_value(n, key, value)?,
                "mode" => t.mode = value.parse()?,
                "target_memory_bytes" => t.target_memory = Some(parse_value(n, key, value)?),
                "calib_samples" => t.calib_samples = parse_value(n, key, value)?,
                "augment_flip" => t.augment.flip = parse_bool(n, key, value)?,
                "augment_pad" => t.augment.pad = parse_value(n, key, value)?,
                "initial_sparsity" => s.initial_sparsity = parse_value(n, key, value)?,
                "sparsity_step" => s.base_step = parse_value(n, key, value)?,
                "halve_epochs" => {
                    s.halve_epochs = value
                        .split(',')
                        .map(str::trim)
                        .filter(|v| !v.is_empty())
                        .map(|v| parse_value(n, key, v))
                        .collect::<Result<_>>()?
                }
                "gs_start_epoch" => s.gs_start_epoch = parse_value(n, key, value)?,
                "gs_step_interval" => s.gs_step_interval = parse_value(n, key, value)?,
                "max_group_size" => s.max_group_size = parse_value(n, key, value)?,
                "out_dir" => cfg.out_dir = base.join(value),
                other => return Err(Error::Config(format!("line {n}: unknown key {other:?}"))),
            }
        }
        if !seen.contains("data") {
            return Err(Error::Config("missing required key data".into()));
        }
        if !seen.contains("out_dir") {
            cfg.out_dir = base.join(&cfg.out_dir);
        }
        cfg.schedule.validate()?;
        Ok(cfg)
    }

    /// Read a configuration file and apply the `EAST_SEED` override.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut cfg = Self::parse(&text, base)?;
        cfg.apply_seed_override(std::env::var(SEED_ENV).ok().as_deref())?;
        Ok(cfg)
    }

    pub fn apply_seed_override(&mut self, value: Option<&str>) -> Result<()> {
        if let Some(v) = value {
            self.train.seed = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer")))?;
        }
        Ok(())
    }

    /// Check paths before any work starts.
    pub fn validate_paths(&self) -> Result<()> {
        if !self.data.exists() {
            return Err(Error::Config(format!("dataset {} does not exist", self.data.display())));
        }
        if self.out_dir.exists() && !self.out_dir.is_dir() {
            return Err(Error::Config(format!("{} is not a directory", self.out_dir.display())));
        }
        Ok(())
    }

    pub fn load_data(&self) -> Result<Splits> {
        ingest_cifar_binary(&self.data, self.train_n, self.val_n, self.test_n)
    }
}

/// Files written by a command; removed again unless the command commits.
#[derive(Debug, Default)]
pub struct Outputs {
    written: Vec<PathBuf>,
    committed: bool,
}

impl Outputs {
    pub fn write(&mut self, path: &Path, bytes: &[u8]) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        self.written.push(path.to_path_buf());
        fs::write(path, bytes)?;
        Ok(())
    }

    pub fn commit(mut self) {
        self.committed = true;
    }
}

impl Drop for Outputs {
    fn drop(&mut self) {
        if !self.committed {
            for p in &self.written {
                let _ = fs::remove_file(p);
            }
        }
    }
}

/// The toy classifier with He initialization from its own RNG stream.
pub fn initial_network(input: ActShape, seed: u64) -> Result<Network> {
    let mut net = Network::toy(input, CLASSES)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    net.init_he(&mut rng);
    Ok(net)
}

/// Write `container` and confirm its size on disk against the budget.
fn write_checked(out: &mut Outputs, path: &Path, container: &[u8], target: Option<usize>) -> Result<u64> {
    out.write(path, container)?;
    let on_disk = fs::metadata(path)?.len();
    if let Some(t) = target {
        if on_disk > t as u64 {
            return Err(Error::ConstraintUnreachable {
                target: t,
                best: on_disk as usize,
            });
        }
    }
    Ok(on_disk)
}

fn csv_bytes(outcome: &TrainOutcome) -> Vec<u8> {
    let mut buf = Vec::new();
    write_epoch_csv(&outcome.logs, &mut buf).expect("writing to memory");
    buf
}

/// `east train`: run the configured mode, write the container, the float
/// checkpoint and the epoch log into `out_dir`.
pub fn cmd_train(cfg: &RunConfig) -> Result<String> {
    cfg.validate_paths()?;
    let data = cfg.load_data()?;
    let net = initial_network(data.train.shape(), cfg.train.seed)?;
    let outcome = train(net, &data, &cfg.train, &cfg.schedule)?;

    let mut out = Outputs::default();
    let container_path = cfg.out_dir.join(CONTAINER_FILE);
    let size = write_checked(&mut out, &container_path, &outcome.container, cfg.train.target_memory)?;
    out.write(
        &cfg.out_dir.join(CHECKPOINT_FILE),
        &export_checkpoint(&outcome.net, &outcome.activations)?,
    )?;
    out.write(&cfg.out_dir.join(EPOCH_LOG_FILE), &csv_bytes(&outcome))?;

    let float_acc = evaluate_float(&outcome.net, &data.test)?;
    let quant_acc = evaluate_container(&outcome.container, &data.test)?;
    out.commit();

    let mut s = String::new();
    writeln!(s, "mode {}", cfg.train.mode).ok();
    writeln!(s, "container {} ({size} bytes)", container_path.display()).ok();
    if let Some(t) = cfg.train.target_memory {
        writeln!(s, "target {t} bytes").ok();
    }
    match outcome.freeze_epoch {
        Some(e) => writeln!(s, "frozen at epoch {e}").ok(),
        None => writeln!(s, "never frozen").ok(),
    };
    writeln!(s, "sparsity {:.4}", outcome.net.sparsity()).ok();
    writeln!(s, "compression ratio {:.2}", outcome.net.float_bytes() as f64 / size as f64).ok();
    writeln!(s, "test top-1 float {float_acc:.4} fixed-point {quant_acc:.4}").ok();
    Ok(s)
}

/// Result of post-training compression.
#[derive(Debug, Clone)]
pub struct Compressed {
    pub net: Network,
    pub container: Vec<u8>,
    pub sparsity: f64,
    pub group_size: usize,
}

fn pruned_copy(net: &Network, sparsity: f64, gs: usize) -> Result<Network> {
    let mut net = net.clone();
    let target = SparsityTarget::new(sparsity)?;
    for layer in net.weighted_layers() {
        let p = net.params_mut(layer).expect("weighted layer");
        let mask = group_prune(p.weight().data(), target, gs);
        p.set_mask(mask)?;
    }
    Ok(net)
}

/// Squared magnitude of the weights `pruned` zeroes that `original` kept.
fn removed_energy(original: &Network, pruned: &Network) -> f64 {
    original
        .weighted_layers()
        .into_iter()
        .map(|l| {
            let a = original.params(l).expect("weighted layer").weight().data();
            let b = pruned.params(l).expect("weighted layer").weight().data();
            a.iter()
                .zip(b)
                .filter(|(_, &w)| w == 0.0)
                .map(|(&w, _)| f64::from(w) * f64::from(w))
                .sum::<f64>()
        })
        .sum()
}

/// Prune a trained network until its container fits `target`, without
/// retraining. Every group size up to `max_group_size` is tried with the
/// least sparsity that fits (bisection); the candidate removing the least
/// weight energy wins, ties going to the smaller group.
pub fn compress_network(
    net: &Network,
    acts: &ActivationParams,
    target: usize,
    max_group_size: usize,
) -> Result<Compressed> {
    let dense = export_container(net, acts)?;
    if dense.len() <= target {
        return Ok(Compressed {
            net: net.clone(),
            container: dense,
            sparsity: net.sparsity(),
            group_size: 1,
        });
    }
    let floor = net.sparsity();
    let mut best_bytes = dense.len();
    let mut best: Option<(f64, Compressed)> = None;
    for gs in 1..=max_group_size.max(1) {
        let try_at = |s: f64| -> Result<Compressed> {
            let candidate = pruned_copy(net, s, gs)?;
            let container = export_container(&candidate, acts)?;
            Ok(Compressed {
                net: candidate,
                container,
                sparsity: s,
                group_size: gs,
            })
        };
        let mut found = try_at(SPARSITY_CEILING)?;
        best_bytes = best_bytes.min(found.container.len());
        if found.container.len() > target {
            continue;
        }
        let (mut lo, mut hi) = (floor, SPARSITY_CEILING);
        for _ in 0..14 {
            let mid = 0.5 * (lo + hi);
            let trial = try_at(mid)?;
            if trial.container.len() <= target {
                hi = mid;
                found = trial;
            } else {
                lo = mid;
            }
        }
        let energy = removed_energy(net, &found.net);
        if best.as_ref().map_or(true, |(e, _)| energy < *e) {
            best = Some((energy, found));
        }
    }
    best.map(|(_, c)| c).ok_or(Error::ConstraintUnreachable { target, best: best_bytes })
}

fn default_compressed_path(model: &Path) -> PathBuf {
    let stem = model.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
    model.with_file_name(format!("{stem}.compressed.east"))
}

fn normalized_test_set(path: &Path, norm: &crate::trainer::Normalization) -> Result<Dataset> {
    let mut ds = read_test_set(path)?;
    ds.normalize(norm);
    Ok(ds)
}

/// `east compress`: post-training pruning, quantization and encoding of a
/// float checkpoint under a byte budget.
pub fn cmd_compress(model: &Path, target: usize, data: Option<&Path>, out_path: Option<&Path>) -> Result<String> {
    let bytes = fs::read(model)?;
    let ck = import_checkpoint(&bytes)?;
    let test = data.map(|d| normalized_test_set(d, ck.net.normalization())).transpose()?;
    let result = compress_network(&ck.net, &ck.activations, target, ScheduleConfig::default().max_group_size)?;

    let path = out_path.map_or_else(|| default_compressed_path(model), Path::to_path_buf);
    let mut out = Outputs::default();
    let size = write_checked(&mut out, &path, &result.container, Some(target))?;

    let mut s = String::new();
    writeln!(s, "container {} ({size} bytes, target {target})", path.display()).ok();
    writeln!(s, "sparsity {:.4} group size {}", result.net.sparsity(), result.group_size).ok();
    writeln!(s, "compression ratio {:.2}", ck.net.float_bytes() as f64 / size as f64).ok();
    if let Some(test) = &test {
        let before = evaluate_float(&ck.net, test)?;
        let after = evaluate_container(&result.container, test)?;
        writeln!(s, "top-1 float {before:.4} compressed fixed-point {after:.4}").ok();
    }
    out.commit();
    Ok(s)
}

/// `east eval`: top-1 accuracy of a container on the test records at `data`.
/// With `report`, the per-layer inference report of the first image is
/// written there as CSV.
pub fn cmd_eval(container: &Path, data: &Path, report: Option<&Path>) -> Result<String> {
    let bytes = fs::read(container)?;
    let parsed = ModelContainer::parse(&bytes)?;
    let norm = read_normalization(&parsed)?;
    let test = normalized_test_set(data, &norm)?;
    let float = parsed.entries()[0].float_payload;
    let acc = if float {
        evaluate_float(&import_checkpoint(&bytes)?.net, &test)?
    } else {
        evaluate_container(&bytes, &test)?
    };
    let mut out = Outputs::default();
    if let Some(path) = report {
        if float {
            return Err(Error::Config("inference reports need a fixed-point container".into()));
        }
        let mut rt = Runtime::new(&bytes)?;
        let q = rt.quantize_input(test.image(0));
        let (_, stats) = rt.run(&q)?;
        let mut buf = Vec::new();
        stats.write_report(&rt.plan(), &mut buf)?;
        out.write(path, &buf)?;
    }
    out.commit();
    Ok(format!("top-1 {acc:.4} on {} images\n", test.len()))
}

/// `east inspect`: header, per-layer sizes, sparsity, binary points and CR.
pub fn cmd_inspect(container: &Path) -> Result<String> {
    let bytes = fs::read(container)?;
    let c = ModelContainer::parse(&bytes)?;
    let topo = topology(&c)?;
    let report = MemoryReport::of_container(&c);
    let mut s = String::new();
    writeln!(s, "file {} ({} bytes)", container.display(), bytes.len()).ok();
    writeln!(s, "layer_count {}", c.layer_count()).ok();
    writeln!(s, "header_bytes {}", c.header_bytes()).ok();
    writeln!(
        s,
        "{:>3} {:<16} {:>22} {:>8} {:>8} {:>8} {:>4} {:>4} {:>4}",
        "#", "kind", "dims", "raw", "stored", "zeros", "w_f", "a_f", "b_f"
    )
    .ok();
    let mut scratch = vec![0u8; c.max_raw_len()];
    let mut params = 0u64;
    for (i, e) in c.entries().iter().enumerate() {
        let zeros = if e.kind.is_parameter_block() {
            params += e.dims_product();
            let view = c.unpack_layer(i, &mut scratch)?;
            let z = if e.float_payload {
                view.f32_data().iter().filter(|v| **v == 0.0).count()
            } else {
                view.qdata().iter().filter(|v| **v == 0).count()
            };
            format!("{:.4}", z as f64 / e.dims_product().max(1) as f64)
        } else {
            "-".to_string()
        };
        writeln!(
            s,
            "{:>3} {:<16} {:>22} {:>8} {:>8} {:>8} {:>4} {:>4} {:>4}",
            i,
            format!("{}{}", e.kind.name(), if e.float_payload { "(f32)" } else { "" }),
            format!("{:?}", e.dims),
            e.raw_len,
            e.compressed_len,
            zeros,
            e.weight_frac_bits,
            e.act_frac_bits,
            e.bias_frac_bits
        )
        .ok();
    }
    let blocks: usize = report.per_layer_bytes.iter().sum();
    writeln!(s, "blocks_bytes {blocks}").ok();
    writeln!(s, "total_bytes {}", report.total_bytes).ok();
    writeln!(s, "input {:?}, {} layers", topo.input, topo.layers.len()).ok();
    let float_bytes = params * 4;
    writeln!(s, "float_bytes {float_bytes}").ok();
    writeln!(s, "compression_ratio {:.2}", report.compression_ratio(float_bytes as usize)).ok();
    if !c.entries()[0].float_payload {
        let plan = Runtime::new(&bytes)?.plan();
        writeln!(s, "weight_scratch_bytes {}", plan.weight_scratch_bytes).ok();
        writeln!(s, "activation_bytes {}", plan.activation_bytes).ok();
    }
    Ok(s)
}

/// One row of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub target: usize,
    pub east: Option<SweepPoint>,
    pub wp: Option<SweepPoint>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub bytes: usize,
    pub compression_ratio: f64,
    pub sparsity: f64,
    pub accuracy: f64,
    pub freeze_epoch: Option<usize>,
}

fn sweep_point(outcome: &TrainOutcome, test: &Dataset) -> Result<SweepPoint> {
    Ok(SweepPoint {
        bytes: outcome.container.len(),
        compression_ratio: outcome.net.float_bytes() as f64 / outcome.container.len() as f64,
        sparsity: outcome.net.sparsity(),
        accuracy: evaluate_container(&outcome.container, test)?,
        freeze_epoch: outcome.freeze_epoch,
    })
}

/// Train EAST and WP from the same initialization at every target.
/// Targets the schedule cannot reach yield empty points.
pub fn sweep(cfg: &RunConfig, data: &Splits, targets: &[usize]) -> Result<Vec<SweepRow>> {
    let net = initial_network(data.train.shape(), cfg.train.seed)?;
    let mut rows = Vec::with_capacity(targets.len());
    for &target in targets {
        let point = |mode: Mode| -> Result<Option<SweepPoint>> {
            let tc = TrainConfig {
                mode,
                target_memory: Some(target),
                ..cfg.train.clone()
            };
            match train(net.clone(), data, &tc, &cfg.schedule) {
                Ok(o) => Ok(Some(sweep_point(&o, &data.test)?)),
                Err(Error::ConstraintUnreachable { .. }) => Ok(None),
                Err(e) => Err(e),
            }
        };
        rows.push(SweepRow {
            target,
            east: point(Mode::East)?,
            wp: point(Mode::Wp)?,
        });
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("M_t,CR,S_wp,S_east,A_wp,A_east\n");
    let f = |p: Option<SweepPoint>, g: fn(&SweepPoint) -> f64| p.map_or_else(|| "NA".to_string(), |p| format!("{:.4}", g(&p)));
    for r in rows {
        // CR of the EAST container, the method under test
        writeln!(
            s,
            "{},{},{},{},{},{}",
            r.target,
            r.east.map_or_else(|| "NA".to_string(), |p| format!("{:.2}", p.compression_ratio)),
            f(r.wp, |p| p.sparsity),
            f(r.east, |p| p.sparsity),
            f(r.wp, |p| p.accuracy),
            f(r.east, |p| p.accuracy),
        )
        .ok();
    }
    s
}

/// `east sweep`: EAST against WP over several budgets, as CSV.
pub fn cmd_sweep(cfg: &RunConfig, targets: &[usize]) -> Result<String> {
    if targets.is_empty() {
        return Err(Error::Config("no targets given".into()));
    }
    cfg.validate_paths()?;
    let data = cfg.load_data()?;
    let rows = sweep(cfg, &data, targets)?;
    let csv = sweep_csv(&rows);
    let mut out = Outputs::default();
    out.write(&cfg.out_dir.join(SWEEP_FILE), csv.as_bytes())?;
    out.commit();
    Ok(csv)
}

/// Parse a comma-separated list of byte counts.
pub fn parse_targets(list: &str) -> Result<Vec<usize>> {
    list.split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .map(|v| v.parse().map_err(|_| Error::Config(format!("invalid target {v:?}"))))
        .collect()
}
