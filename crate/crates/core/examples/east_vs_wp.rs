//! Train EAST and the weight-pruning baseline under the same tight budget
//! and write both epoch logs, ready for a memory-per-epoch plot.
//!
//! cargo run --release --example east_vs_wp -- [out_dir]

use std::fs::File;
use std::path::PathBuf;

use east::cli::initial_network;
use east::codec::estimate_memory;
use east::data::synthetic;
use east::runtime::evaluate_container;
use east::schedule::ScheduleConfig;
use east::trainer::{train, write_epoch_csv, Mode, TrainConfig};

fn main() -> east::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "east-vs-wp".into()));
    std::fs::create_dir_all(&out)?;
    let params = synthetic::Params { side: 16, ..Default::default() };
    let data = synthetic::splits(4000, 500, 1000, &params, 1);
    let net = initial_network(data.train.shape(), 0)?;
    let target = estimate_memory(&net)?.total_bytes * 15 / 100;
    let sched = ScheduleConfig {
        initial_sparsity: 0.3,
        base_step: 0.06,
        halve_epochs: vec![8, 14],
        gs_start_epoch: 4,
        gs_step_interval: 2,
        max_group_size: 16,
    };
    println!("budget {target} bytes");
    for mode in [Mode::East, Mode::Wp] {
        let cfg = TrainConfig {
            mode,
            epochs: 40,
            batch_size: 64,
            lr0: 0.05,
            target_memory: Some(target),
            ..Default::default()
        };
        let o = train(net.clone(), &data, &cfg, &sched)?;
        write_epoch_csv(&o.logs, File::create(out.join(format!("{mode}.csv")))?)?;
        println!(
            "{mode}: met budget at epoch {}, sparsity {:.3}, {} bytes, top-1 {:.3}",
            o.epochs_to_constraint().map_or_else(|| "never".into(), |e| e.to_string()),
            o.net.sparsity(),
            o.container.len(),
            evaluate_container(&o.container, &data.test)?
        );
    }
    Ok(())
}
