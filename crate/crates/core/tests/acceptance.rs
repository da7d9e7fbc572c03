//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Training results are shared between criteria and the dense
//! checkpoint is cached under the cargo target directory.

mod common;

use std::cell::OnceCell;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use east::cli::{cmd_compress, cmd_train, initial_network, RunConfig, CHECKPOINT_FILE, CONTAINER_FILE};
use east::codec::{header_len, lz4_compress, lz4_decompress, LayerKind, ModelContainer};
use east::data::{synthetic, write_cifar_dir, Splits};
use east::export::{export_checkpoint, export_container, import_checkpoint, Checkpoint};
use east::pruning::{group_prune, magnitude_prune, PruneMask, SparsityTarget};
use east::quantize::calibrate_activations;
use east::runtime::{evaluate_container, Runtime};
use east::schedule::{group_size_at, target_sparsity, ScheduleConfig, ScheduleState};
use east::trainer::{evaluate_float, train, train_dense, write_epoch_csv, EpochLog, Mode, Network, TrainConfig, TrainOutcome};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SIDE: usize = 16;
const TRAIN_N: usize = 4000;
const VAL_N: usize = 500;
const TEST_N: usize = 1000;
const DATA_SEED: u64 = 1;
const SEED: u64 = 0;
const DENSE_EPOCHS: usize = 20;
const EPOCHS: usize = 40;
const BATCH: usize = 64;
const LR0: f64 = 0.05;

fn schedule() -> ScheduleConfig {
    ScheduleConfig {
        initial_sparsity: 0.30,
        base_step: 0.06,
        halve_epochs: vec![8, 14],
        gs_start_epoch: 4,
        gs_step_interval: 2,
        max_group_size: 16,
    }
}

fn train_config(mode: Mode, epochs: usize, target: Option<usize>) -> TrainConfig {
    TrainConfig {
        mode,
        epochs,
        batch_size: BATCH,
        lr0: LR0,
        seed: SEED,
        target_memory: target,
        ..Default::default()
    }
}

fn cache_dir() -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    fs::create_dir_all(&dir).unwrap();
    dir
}

struct Pair {
    target: usize,
    east: TrainOutcome,
    wp: TrainOutcome,
    east_acc: f64,
    wp_acc: f64,
    elapsed: Duration,
}

fn epoch_of(o: &TrainOutcome) -> String {
    o.epochs_to_constraint().map_or_else(|| "never".into(), |e| e.to_string())
}

impl Pair {
    fn summary(&self) -> String {
        format!(
            "M_t {} B: EAST S {:.4} A {:.3} ({} B, met at epoch {}); WP S {:.4} A {:.3} ({} B, met at epoch {}); {:.0}s",
            self.target,
            self.east.net.sparsity(),
            self.east_acc,
            self.east.container.len(),
            epoch_of(&self.east),
            self.wp.net.sparsity(),
            self.wp_acc,
            self.wp.container.len(),
            epoch_of(&self.wp),
            self.elapsed.as_secs_f64()
        )
    }
}

/// Lazily computed state shared by several criteria.
#[derive(Default)]
struct Ctx {
    data: OnceCell<Splits>,
    dense: OnceCell<(Checkpoint, Option<Duration>)>,
    tight: OnceCell<Pair>,
    loose: OnceCell<Pair>,
}

impl Ctx {
    fn data(&self) -> &Splits {
        self.data.get_or_init(|| {
            let p = synthetic::Params { side: SIDE, ..Default::default() };
            synthetic::splits(TRAIN_N, VAL_N, TEST_N, &p, DATA_SEED)
        })
    }

    /// Dense float checkpoint with calibrated activations, and the time
    /// spent training it when the cache was cold.
    fn dense(&self) -> &(Checkpoint, Option<Duration>) {
        self.dense.get_or_init(|| {
            let path = cache_dir().join(format!(
                "dense-{}-s{SIDE}-n{TRAIN_N}-e{DENSE_EPOCHS}-lr{LR0}-seed{SEED}.east",
                env!("CARGO_PKG_VERSION")
            ));
            if let Ok(bytes) = fs::read(&path) {
                if let Ok(ck) = import_checkpoint(&bytes) {
                    return (ck, None);
                }
            }
            let t = Instant::now();
            let data = self.data();
            let net = initial_network(data.train.shape(), SEED).unwrap();
            let out = train_dense(net, data, &train_config(Mode::Dense, DENSE_EPOCHS, None)).unwrap();
            fs::write(&path, export_checkpoint(&out.net, &out.activations).unwrap()).unwrap();
            let ck = Checkpoint {
                net: out.net,
                activations: out.activations,
            };
            (ck, Some(t.elapsed()))
        })
    }

    fn dense_container(&self) -> Vec<u8> {
        let (ck, _) = self.dense();
        export_container(&ck.net, &ck.activations).unwrap()
    }

    fn pair<'a>(&'a self, cell: &'a OnceCell<Pair>, fraction: f64) -> &'a Pair {
        cell.get_or_init(|| {
            let t = Instant::now();
            let data = self.data();
            let target = (self.dense_container().len() as f64 * fraction) as usize;
            let net = initial_network(data.train.shape(), SEED).unwrap();
            let run = |mode| train(net.clone(), data, &train_config(mode, EPOCHS, Some(target)), &schedule()).unwrap();
            let (east, wp) = (run(Mode::East), run(Mode::Wp));
            let east_acc = evaluate_container(&east.container, &data.test).unwrap();
            let wp_acc = evaluate_container(&wp.container, &data.test).unwrap();
            Pair {
                target,
                east,
                wp,
                east_acc,
                wp_acc,
                elapsed: t.elapsed(),
            }
        })
    }

    fn tight(&self) -> &Pair {
        self.pair(&self.tight, 0.15)
    }

    fn loose(&self) -> &Pair {
        self.pair(&self.loose, 0.80)
    }
}

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn(&Ctx) -> Outcome);

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn lz4_exactness(_: &Ctx) -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut buffers: Vec<Vec<u8>> = (0..1000)
        .map(|i| {
            // log-uniform lengths over 1 B..64 KiB
            let len = (2f64.powf(rng.gen_range(0.0..16.0)) as usize).clamp(1, 65_536);
            match i % 4 {
                0 => (0..len).map(|_| rng.gen()).collect(),
                1 => (0..len).map(|_| if rng.gen_bool(0.7) { 0 } else { rng.gen() }).collect(),
                2 => (0..len).map(|_| rng.gen_range(0..4u8)).collect(),
                _ => {
                    let period = rng.gen_range(1..64);
                    let pat: Vec<u8> = (0..period).map(|_| rng.gen()).collect();
                    (0..len).map(|j| pat[j % period]).collect()
                }
            }
        })
        .collect();
    let random_count = buffers.len();
    // adversarial: empty, end-of-block limits, long runs, offsets at the window edge
    buffers.push(Vec::new());
    for n in [1, 4, 5, 11, 12, 13, 15, 16, 17, 19, 255, 256, 270, 65_535, 65_536] {
        buffers.push(vec![0; n]);
    }
    buffers.push((0..65_536u32).map(|v| (v % 255) as u8).collect());
    let mut far: Vec<u8> = (0..70_000).map(|_| rng.gen()).collect();
    let head: Vec<u8> = far[..64].to_vec();
    far[65_535..65_535 + 64].copy_from_slice(&head);
    buffers.push(far);
    buffers.push((0..20_000u32).map(|v| if v % 300 < 290 { 7 } else { v as u8 }).collect());

    let (mut ours_total, mut ref_total) = (0usize, 0usize);
    for (i, raw) in buffers.iter().enumerate() {
        let ours = lz4_compress(raw);
        ensure(lz4_decompress(&ours, raw.len()).map_err(|e| e.to_string())? == *raw, format!("round trip {i}"))?;
        let via_ref = lz4_flex::block::decompress(&ours, raw.len()).map_err(|e| format!("reference decode {i}: {e}"))?;
        ensure(via_ref == *raw, format!("reference decode {i} differs"))?;
        let theirs = lz4_flex::block::compress(raw);
        let back = lz4_decompress(&theirs, raw.len()).map_err(|e| format!("decode of reference block {i}: {e}"))?;
        ensure(back == *raw, format!("decode of reference block {i} differs"))?;
        ours_total += ours.len();
        ref_total += theirs.len();
    }
    let elapsed = t.elapsed();
    ensure(elapsed < Duration::from_secs(30), format!("took {elapsed:?}"))?;
    Ok(format!(
        "{random_count} random + {} adversarial buffers, both directions against reference; sizes {ours_total} vs {ref_total} B; {:.1}s",
        buffers.len() - random_count,
        elapsed.as_secs_f64()
    ))
}

fn dense_incompressible(ctx: &Ctx) -> Outcome {
    let t = Instant::now();
    let (_, trained) = ctx.dense();
    let bytes = ctx.dense_container();
    let c = ModelContainer::parse(&bytes).map_err(|e| e.to_string())?;
    let raw = header_len(c.layer_count()) + c.entries().iter().map(|e| e.raw_len as usize).sum::<usize>();
    let ratio = bytes.len() as f64 / raw as f64;
    let elapsed = t.elapsed();
    ensure(ratio >= 0.95, format!("container {} B is {ratio:.4} of raw {raw} B", bytes.len()))?;
    ensure(elapsed < Duration::from_secs(60), format!("took {elapsed:?}"))?;
    Ok(format!(
        "container {} B = {:.2}% of raw quantized {raw} B; {:.1}s ({})",
        bytes.len(),
        ratio * 100.0,
        elapsed.as_secs_f64(),
        if trained.is_some() { "trained checkpoint" } else { "cached checkpoint" }
    ))
}

fn encoding_awareness(ctx: &Ctx) -> Outcome {
    let (ck, _) = ctx.dense();
    let target = SparsityTarget::new(0.59).unwrap();
    let masked = |f: &dyn Fn(&[f32]) -> PruneMask| -> (Network, usize) {
        let mut net = ck.net.clone();
        for l in net.weighted_layers() {
            let p = net.params_mut(l).unwrap();
            let m = f(p.weight().data());
            p.set_mask(m).unwrap();
        }
        let bytes = export_container(&net, &ck.activations).unwrap();
        let c = ModelContainer::parse(&bytes).unwrap();
        let weights = c
            .entries()
            .iter()
            .filter(|e| matches!(e.kind, LayerKind::Conv2d | LayerKind::FullyConnected))
            .map(|e| e.compressed_len as usize)
            .sum();
        (net, weights)
    };
    let (scattered_net, scattered) = masked(&|w| magnitude_prune(w, target));
    let (grouped_net, grouped) = masked(&|w| group_prune(w, target, 4));
    let reduction = 1.0 - grouped as f64 / scattered as f64;
    ensure(
        (scattered_net.sparsity() - grouped_net.sparsity()).abs() < 0.005,
        format!("sparsities differ: {} vs {}", scattered_net.sparsity(), grouped_net.sparsity()),
    )?;
    ensure(reduction >= 0.20, format!("GS=4 weights {grouped} B vs scattered {scattered} B: {:.1}% smaller", reduction * 100.0))?;
    Ok(format!(
        "weight blocks at sparsity {:.4}: scattered {scattered} B, GS=4 {grouped} B ({:.1}% smaller)",
        grouped_net.sparsity(),
        reduction * 100.0
    ))
}

fn quantization_fidelity(ctx: &Ctx) -> Outcome {
    let (ck, _) = ctx.dense();
    let test = &ctx.data().test;
    let float = evaluate_float(&ck.net, test).map_err(|e| e.to_string())?;
    let bytes = ctx.dense_container();
    let quant = evaluate_container(&bytes, test).map_err(|e| e.to_string())?;
    let drop = (float - quant) * 100.0;
    let ckb = export_checkpoint(&ck.net, &ck.activations).unwrap();
    let weight_bytes = |b: &[u8]| -> usize {
        ModelContainer::parse(b)
            .unwrap()
            .entries()
            .iter()
            .filter(|e| matches!(e.kind, LayerKind::Conv2d | LayerKind::FullyConnected))
            .map(|e| e.raw_len as usize)
            .sum()
    };
    let (f32_bytes, q8_bytes) = (weight_bytes(&ckb), weight_bytes(&bytes));
    ensure(drop <= 2.0, format!("float {float:.4} -> 8-bit {quant:.4}"))?;
    ensure(f32_bytes == 4 * q8_bytes, format!("weight payloads {f32_bytes} vs {q8_bytes}"))?;
    Ok(format!(
        "top-1 float {:.2}% -> 8-bit {:.2}% (drop {drop:.2} points); weight payload {f32_bytes} -> {q8_bytes} B (4x)",
        float * 100.0,
        quant * 100.0
    ))
}

fn east_vs_wp(ctx: &Ctx) -> Outcome {
    let tight = ctx.tight();
    let loose = ctx.loose();
    let mut notes = vec![format!("tight {}", tight.summary()), format!("loose {}", loose.summary())];
    let (se, sw) = (tight.east.net.sparsity(), tight.wp.net.sparsity());
    let gap = (tight.east_acc - tight.wp_acc) * 100.0;
    notes.push(format!("tight dA = {gap:+.2} points{}", if gap > 0.0 { " (EAST ahead)" } else { "" }));
    let loose_gap = (loose.east_acc - loose.wp_acc) * 100.0;
    notes.push(format!("loose dA = {loose_gap:+.2} points"));
    let detail = notes.join("\n      ");
    ensure(se < sw, format!("S_EAST {se} not below S_WP {sw}\n      {detail}"))?;
    ensure(gap >= -0.5, format!("A_EAST trails A_WP by {:.2} points\n      {detail}", -gap))?;
    ensure(loose_gap.abs() <= 1.0, format!("loose-budget accuracies differ by {loose_gap:.2} points\n      {detail}"))?;
    ensure(
        tight.elapsed + loose.elapsed < Duration::from_secs(30 * 60),
        format!("pairs took {:?}", tight.elapsed + loose.elapsed),
    )?;
    Ok(detail)
}

fn parse_log(csv: &str) -> Vec<(usize, usize, bool)> {
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("epoch,loss,val_acc,sparsity,gs,bytes,frozen"));
    lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[4].parse().unwrap(), f[5].parse().unwrap(), f[6] == "1")
        })
        .collect()
}

fn csv_of(logs: &[EpochLog], name: &str) -> String {
    let path = cache_dir().join(name);
    write_epoch_csv(logs, fs::File::create(&path).unwrap()).unwrap();
    fs::read_to_string(path).unwrap()
}

fn acceleration(ctx: &Ctx) -> Outcome {
    let tight = ctx.tight();
    let (e, w) = (tight.east.epochs_to_constraint(), tight.wp.epochs_to_constraint());
    let (e, w) = (e.ok_or("EAST never met the budget")?, w.ok_or("WP never met the budget")?);
    ensure(e < w, format!("EAST met the budget at epoch {e}, WP at {w}"))?;

    // memory drop per epoch before the freeze, from the written CSV
    let rows = parse_log(&csv_of(&tight.east.logs, "east_tight.csv"));
    let mut steps = Vec::new();
    for i in 2..=e {
        let (gs, bytes, _) = rows[i];
        let (prev_gs, prev_bytes, _) = rows[i - 1];
        if gs > prev_gs {
            let drop = prev_bytes as i64 - bytes as i64;
            let before = rows[i - 2].1 as i64 - prev_bytes as i64;
            steps.push((i, prev_gs, gs, before, drop));
        }
    }
    ensure(!steps.is_empty(), "no group-size step before the freeze")?;
    let desc: Vec<String> = steps
        .iter()
        .map(|(i, a, b, before, drop)| format!("epoch {i} GS {a}->{b}: drop {before} -> {drop} B"))
        .collect();
    for &(i, _, _, before, drop) in &steps {
        ensure(drop > before, format!("no slope increase at epoch {i}: {}", desc.join("; ")))?;
    }
    Ok(format!("EAST met M_t at epoch {e}, WP at epoch {w} ({} sooner); {}", w - e, desc.join("; ")))
}

fn constraint_hardness(_: &Ctx) -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = dir.path();
    write_cifar_dir(&root.join("cifar"), &synthetic::records(800, 31), &synthetic::records(200, 32)).map_err(|e| e.to_string())?;
    let mut checked = Vec::new();
    let mut checkpoint = None;
    for (mode, target) in [("east", 16_000usize), ("wp", 20_000)] {
        let text = format!(
            "data = cifar\nout_dir = {mode}\ntrain_n = 600\nval_n = 200\ntest_n = 200\nepochs = 8\nbatch_size = 32\n\
             lr0 = 0.05\nmode = {mode}\ntarget_memory_bytes = {target}\ninitial_sparsity = 0.4\nsparsity_step = 0.1\n\
             gs_start_epoch = 1\ngs_step_interval = 1\nhalve_epochs = 20\n"
        );
        let cfg_path = root.join(format!("{mode}.cfg"));
        fs::write(&cfg_path, text).unwrap();
        let cfg = RunConfig::load(&cfg_path).map_err(|e| e.to_string())?;
        cmd_train(&cfg).map_err(|e| format!("{mode} train: {e}"))?;
        let size = fs::metadata(cfg.out_dir.join(CONTAINER_FILE)).unwrap().len() as usize;
        ensure(size <= target, format!("{mode} container {size} B over {target} B"))?;
        checked.push(format!("train {mode} {size}/{target}"));
        checkpoint = Some(cfg.out_dir.join(CHECKPOINT_FILE));
    }
    let ck = checkpoint.unwrap();
    for target in [30_000usize, 20_000, 12_000, 8_000, 4_000, 2_000] {
        let out = root.join(format!("c{target}.east"));
        cmd_compress(&ck, target, None, Some(&out)).map_err(|e| format!("compress {target}: {e}"))?;
        let size = fs::metadata(&out).unwrap().len() as usize;
        ensure(size <= target, format!("compressed container {size} B over {target} B"))?;
        checked.push(format!("compress {size}/{target}"));
    }
    let none = root.join("none.east");
    ensure(cmd_compress(&ck, 500, None, Some(&none)).is_err(), "500 B budget accepted")?;
    ensure(!none.exists(), "over-budget container left on disk")?;
    Ok(format!("{}; 500 B budget refused with no file", checked.join(", ")))
}

fn gradients(_: &Ctx) -> Outcome {
    let t = Instant::now();
    let mut worst = 0.0f64;
    let mut params = 0;
    for seed in common::GRAD_SEEDS {
        let r = common::gradient_check(seed, 1e-3);
        ensure(r.parameters <= 1000 && r.checked == r.parameters, "not every parameter checked")?;
        ensure(r.kinks == 0, format!("seed {seed}: perturbation crossed a kink"))?;
        ensure(r.max_rel_error < 1e-3, format!("seed {seed}: max relative error {:.3e}", r.max_rel_error))?;
        worst = worst.max(r.max_rel_error);
        params = r.parameters;
    }
    Ok(format!(
        "{} nets x {params} parameters, h = 1e-3, max relative error {worst:.2e}; {:.1}s",
        common::GRAD_SEEDS.len(),
        t.elapsed().as_secs_f64()
    ))
}

fn schedule_suite(_: &Ctx) -> Outcome {
    let cfg = ScheduleConfig::default();
    for (e, want) in [(0, 0.30), (10, 0.40), (30, 0.55)] {
        let got = target_sparsity(&cfg, e);
        ensure((got - want).abs() < 1e-12, format!("target_sparsity({e}) = {got}"))?;
    }
    for (e, want) in [(0, 1), (19, 1), (20, 2), (35, 3)] {
        let got = group_size_at(&cfg, e);
        ensure(got == want, format!("group_size_at({e}) = {got}"))?;
    }
    let mut state = ScheduleState::initial(&cfg);
    for e in 0..25 {
        state = state.advance(&cfg, e == 22);
    }
    ensure(state.frozen && state.freeze_epoch == Some(22), "freeze not latched at epoch 22")?;
    let latched = (state.current_sparsity, state.current_gs);
    ensure(latched == (target_sparsity(&cfg, 22), group_size_at(&cfg, 22)), "latched values differ")?;
    for met in [false, true, false] {
        state = state.advance(&cfg, met);
        ensure((state.current_sparsity, state.current_gs) == latched && state.frozen, "frozen state moved")?;
    }
    ensure(state.freeze_epoch == Some(22), "freeze epoch changed")?;
    Ok("sparsity 0.30/0.40/0.55 at epochs 0/10/30, GS 1/1/2/3 at 0/19/20/35, freeze latched".into())
}

fn runtime_equivalence(ctx: &Ctx) -> Outcome {
    let test = &ctx.data().test;
    let containers = [("dense", ctx.dense_container()), ("EAST tight", ctx.tight().east.container.clone())];
    let mut notes = Vec::new();
    for (name, bytes) in &containers {
        let mut rt = Runtime::new(bytes).map_err(|e| e.to_string())?;
        let pre = rt.predecode().map_err(|e| e.to_string())?;
        let plan = rt.plan();
        let mut peak = 0;
        for i in 0..test.len() {
            let q = rt.quantize_input(test.image(i));
            let (streamed, stats) = rt.run(&q).map_err(|e| e.to_string())?;
            let direct = rt.run_predecoded(&pre, &q).map_err(|e| e.to_string())?;
            ensure(streamed == direct, format!("{name}: logits differ on image {i}"))?;
            ensure(
                stats.peak_scratch_bytes <= plan.weight_scratch_bytes,
                format!("{name}: scratch {} over plan {}", stats.peak_scratch_bytes, plan.weight_scratch_bytes),
            )?;
            peak = peak.max(stats.peak_scratch_bytes);
        }
        notes.push(format!("{name}: {} images identical, peak scratch {peak}/{} B", test.len(), plan.weight_scratch_bytes));
    }
    // a container calibrated on different samples still agrees with itself
    let (ck, _) = ctx.dense();
    let acts = calibrate_activations(&ck.net, test.head(10).iter().map(|(x, _)| x)).unwrap();
    let other = export_container(&ck.net, &acts).unwrap();
    let mut rt = Runtime::new(&other).unwrap();
    let pre = rt.predecode().unwrap();
    for i in 0..50 {
        let q = rt.quantize_input(test.image(i));
        ensure(rt.run(&q).unwrap().0 == rt.run_predecoded(&pre, &q).unwrap(), "recalibrated container differs")?;
    }
    Ok(notes.join("; "))
}

fn main() {
    let ctx = Ctx::default();
    let criteria: [Criterion; 10] = [
        ("LZ4 bit-exactness", lz4_exactness),
        ("dense incompressibility", dense_incompressible),
        ("encoding-awareness", encoding_awareness),
        ("quantization fidelity", quantization_fidelity),
        ("EAST vs WP under tight and loose budgets", east_vs_wp),
        ("compression acceleration", acceleration),
        ("constraint hardness", constraint_hardness),
        ("gradient correctness", gradients),
        ("schedule suite", schedule_suite),
        ("runtime equivalence", runtime_equivalence),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let result = catch_unwind(AssertUnwindSafe(|| f(&ctx)))
            .unwrap_or_else(|p| Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panic".into())));
        match result {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {why}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
