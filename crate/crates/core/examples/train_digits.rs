//! Trains a dense Lenet 300-100 on MNIST digits for a few thousand steps.
//!
//! cargo run --release -p ticket-core --example train_digits -- data 2000

use std::path::PathBuf;
use std::time::Instant;

use ticket_core::{load_split, run_strategy, AttackConfig, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "data".into()));
    let iterations: usize = args.next().map_or(Ok(2000), |s| s.parse())?;
    let adversarial = args.next().is_some_and(|s| s == "fgsm");

    let split = load_split(&dir, "digits", 10_000, 0)?;
    let cfg = TrainConfig {
        iterations_per_round: iterations,
        eval_every: 500.min(iterations),
        pruning_rounds: 1,
        eval_subset: Some(2000),
        train_attack: if adversarial {
            AttackConfig::default_fgsm()
        } else {
            AttackConfig::none()
        },
        ..TrainConfig::default()
    };
    let t = Instant::now();
    let out = run_strategy(&cfg, &split)?;
    for r in &out[0].records {
        println!(
            "it {:>6}  test nat {:.4}  test fgsm {:.4}  val loss {:.4}",
            r.iteration, r.test.natural_acc, r.test.adv_acc, r.validation.natural_loss
        );
    }
    println!("{:.1}s", t.elapsed().as_secs_f64());
    Ok(())
}
