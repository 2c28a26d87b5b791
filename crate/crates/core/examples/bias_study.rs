//! Runs the planted-bias study on a few seeds and prints before/after
//! metrics. Usage: `cargo run --release --example bias_study [seeds]`.

use std::time::Instant;

use explreg::pipeline::{run, Resources};
use explreg::synthetic::{self, SynthConfig, SyntheticWorld};

fn main() -> explreg::Result<()> {
    let seeds: u64 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(3);
    for seed in 0..seeds {
        let t = Instant::now();
        let world = SyntheticWorld::generate(&SynthConfig {
            seed,
            ..Default::default()
        })?;
        let mut cfg = synthetic::run_config(seed)?;
        for kv in std::env::args().skip(2) {
            if let Some((k, v)) = kv.split_once('=') {
                cfg.set(k, v)?;
            }
        }
        let res = Resources::from_world(&world, &cfg)?;
        let out = run(&res, &cfg)?;
        println!(
            "seed {seed}: rules {} strict {} soft {} neg {} | target F1 {:.3} -> {:.3} | FPRD {:.3} -> {:.3} | source F1 {:.3} -> {:.3} | steps {} best {} | {:.1}s",
            out.parse.rules.len(),
            out.matches.summary.strict,
            out.matches.summary.soft,
            out.matches.summary.balanced,
            out.source_metrics.target_f1.unwrap_or(f64::NAN),
            out.metrics.target_f1.unwrap_or(f64::NAN),
            out.source_metrics.fprd.unwrap_or(f64::NAN),
            out.metrics.fprd.unwrap_or(f64::NAN),
            out.source_metrics.source_f1.unwrap_or(f64::NAN),
            out.metrics.source_f1.unwrap_or(f64::NAN),
            out.refined.steps,
            out.refined.best_step,
            t.elapsed().as_secs_f64()
        );
        println!("  per-term before {:?}", out.source_metrics.per_term);
        println!("  per-term after  {:?}", out.metrics.per_term);
        for (id, why) in &out.parse.discarded {
            println!("  discarded {id}: {why}");
        }
        for e in &out.parse.errors {
            println!("  error {e:?}");
        }
    }
    Ok(())
}
