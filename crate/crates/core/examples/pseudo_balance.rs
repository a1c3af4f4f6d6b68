//! Pseudo-balance benchmark: the aggregate bias cancels, the per-bucket bias
//! does not. Trains the full model and prints the bucket table.

use dadf::benchmark::{self, BenchmarkConfig};
use dadf::eval::{evaluate, max_ratio_deviation, EvalConfig};
use dadf::training::{TrainConfig, Variant};

fn main() -> dadf::Result<()> {
    let b = benchmark::pseudo_balance(&BenchmarkConfig {
        n: 20_000,
        ..BenchmarkConfig::default()
    })?;
    let cfg = TrainConfig {
        max_epochs: 8,
        ..TrainConfig::default()
    };
    let outcome = b.train(Variant::Full, &cfg)?;
    let report = evaluate(&outcome.model, "full", &b.splits.test, &b.outputs[2], &EvalConfig::default())?;

    println!("MAE {:.2} (base {:.2}), XAUC {:.4} (base {:.4})", report.mae, report.base_mae, report.xauc, report.base_xauc);
    println!("{:>8} {:>8} {:>6} {:>10} {:>10} {:>8} {:>8}", "lower", "upper", "n", "ratio", "base", "mae", "base");
    for r in &report.buckets.by_watch_time {
        let upper = r.upper.map_or("inf".to_string(), |u| format!("{u:.0}"));
        let f = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.3}"));
        println!(
            "{:>8.0} {upper:>8} {:>6} {:>10} {:>10} {:>8} {:>8}",
            r.lower,
            r.count,
            f(r.bias_ratio),
            f(r.base_bias_ratio),
            f(r.mae),
            f(r.base_mae)
        );
    }
    println!(
        "max |ratio - 1|: {:.3} -> {:.3}",
        max_ratio_deviation(&report.buckets.by_watch_time, true),
        max_ratio_deviation(&report.buckets.by_watch_time, false)
    );
    println!("learned lambdas: {:?}", outcome.model.lambdas());
    Ok(())
}
