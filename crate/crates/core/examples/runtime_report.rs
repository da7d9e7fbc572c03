//! Fixed-point inference from a container with a time-shared weight scratch,
//! followed by the per-layer report.
//!
//! cargo run --release --example runtime_report

use east::cli::initial_network;
use east::data::synthetic;
use east::export::export_container;
use east::quantize::calibrate_activations;
use east::runtime::Runtime;
use east::trainer::{argmax, train_dense, TrainConfig};

fn main() -> east::Result<()> {
    let params = synthetic::Params { side: 16, ..Default::default() };
    let data = synthetic::splits(1000, 200, 200, &params, 3);
    let net = initial_network(data.train.shape(), 0)?;
    let cfg = TrainConfig { epochs: 5, batch_size: 64, lr0: 0.05, ..Default::default() };
    let trained = train_dense(net, &data, &cfg)?.net;
    let acts = calibrate_activations(&trained, data.val.head(100).iter().map(|(x, _)| x))?;
    let bytes = export_container(&trained, &acts)?;

    let mut rt = Runtime::new(&bytes)?;
    let q = rt.quantize_input(data.test.image(0));
    let (logits, stats) = rt.run(&q)?;
    println!("label {} predicted {} logits {logits:?}", data.test.label(0), argmax(&logits));
    stats.write_report(&rt.plan(), std::io::stdout().lock())?;
    Ok(())
}
