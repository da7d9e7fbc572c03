//! EAST against weight pruning over several budgets, printed as CSV.
//!
//! cargo run --release --example sweep_table

use std::path::PathBuf;

use east::cli::{sweep, sweep_csv, RunConfig};
use east::data::synthetic;
use east::schedule::ScheduleConfig;
use east::trainer::TrainConfig;

fn main() -> east::Result<()> {
    let params = synthetic::Params { side: 16, ..Default::default() };
    let data = synthetic::splits(2000, 300, 500, &params, 5);
    let cfg = RunConfig {
        data: PathBuf::new(),
        train: TrainConfig { epochs: 16, batch_size: 64, lr0: 0.05, ..Default::default() },
        schedule: ScheduleConfig {
            base_step: 0.08,
            halve_epochs: vec![6, 10],
            gs_start_epoch: 3,
            gs_step_interval: 2,
            ..Default::default()
        },
        ..Default::default()
    };
    let rows = sweep(&cfg, &data, &[20_000, 10_000, 5_000, 500])?;
    print!("{}", sweep_csv(&rows));
    Ok(())
}
