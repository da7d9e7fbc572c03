//! The command-line workflow end to end on a generated CIFAR-10 style
//! directory: train under a budget, inspect, evaluate, recompress smaller.
//!
//! cargo run --release --example cli_workflow -- [work_dir]

use std::fs;
use std::path::PathBuf;

use east::cli::{cmd_compress, cmd_eval, cmd_inspect, cmd_train, RunConfig, CHECKPOINT_FILE, CONTAINER_FILE};
use east::data::{synthetic, write_cifar_dir};

fn main() -> east::Result<()> {
    let work = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "east-workflow".into()));
    write_cifar_dir(&work.join("cifar"), &synthetic::records(3500, 1), &synthetic::records(500, 2))?;
    let config = work.join("run.cfg");
    fs::write(
        &config,
        "data = cifar\nout_dir = run\ntrain_n = 3000\nval_n = 500\ntest_n = 500\n\
         epochs = 16\nbatch_size = 64\nlr0 = 0.05\nmode = east\ntarget_memory_bytes = 12000\n\
         initial_sparsity = 0.3\nsparsity_step = 0.05\nhalve_epochs = 8\ngs_start_epoch = 3\ngs_step_interval = 2\n",
    )?;
    let cfg = RunConfig::load(&config)?;
    print!("{}", cmd_train(&cfg)?);

    let model = cfg.out_dir.join(CONTAINER_FILE);
    print!("{}", cmd_inspect(&model)?);
    print!("{}", cmd_eval(&model, &work.join("cifar"), Some(&work.join("report.csv")))?);

    let smaller = work.join("small.east");
    print!(
        "{}",
        cmd_compress(&cfg.out_dir.join(CHECKPOINT_FILE), 8000, Some(&work.join("cifar")), Some(&smaller))?
    );
    Ok(())
}
