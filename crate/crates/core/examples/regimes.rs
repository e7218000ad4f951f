//! Trains every regime of the benchmark ladder and prints test mIOU per seed.
//!
//! `cargo run --release -p pointsup-core --example regimes -- [seeds] [config.json]`

use std::time::Instant;

use pointsup_core::experiment::{build_dataset, run_regime, BenchmarkConfig, Regime};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().collect();
    let seeds: u64 = args.get(1).map(|s| s.parse()).transpose()?.unwrap_or(3);
    let cfg: BenchmarkConfig = match args.get(2) {
        Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)?,
        None => BenchmarkConfig::default(),
    };
    let mut means = vec![0.0; Regime::LADDER.len()];
    for seed in 0..seeds {
        let data = build_dataset(&cfg, seed)?;
        for (k, regime) in Regime::LADDER.into_iter().enumerate() {
            let t = Instant::now();
            let r = run_regime(&cfg, &data, regime, seed)?;
            let last = r.loss_history.last().copied().unwrap_or(f64::NAN);
            println!(
                "seed {seed} {regime:<16} mIOU {:5.1}  loss {:8.4} -> {:8.4}  {:.1}s",
                100.0 * r.report.mean_iou,
                r.loss_history.first().copied().unwrap_or(f64::NAN),
                last,
                t.elapsed().as_secs_f64()
            );
            means[k] += 100.0 * r.report.mean_iou / seeds as f64;
        }
    }
    for (regime, m) in Regime::LADDER.iter().zip(&means) {
        println!("{regime:<16} {m:5.1}");
    }
    Ok(())
}
