//! The sparsity and group-size schedule, and how a met constraint freezes it.
//!
//! cargo run --example schedule_table

use east::schedule::{group_size_at, target_sparsity, ScheduleConfig, ScheduleState};

fn main() {
    let cfg = ScheduleConfig::default();
    println!("epoch  sparsity  gs");
    for e in [0, 10, 19, 20, 21, 30, 35, 50, 60, 100] {
        println!("{e:>5}  {:>8.4}  {:>2}", target_sparsity(&cfg, e), group_size_at(&cfg, e));
    }

    // pretend the budget is first met after epoch 33
    let mut state = ScheduleState::initial(&cfg);
    for e in 0..40 {
        state = state.advance(&cfg, e == 33);
    }
    println!(
        "frozen at epoch {:?} with sparsity {:.4} and gs {}",
        state.freeze_epoch, state.current_sparsity, state.current_gs
    );
}
