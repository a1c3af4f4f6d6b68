//! Sensitivity of the corrected MAE to the number of duration groups.

use dadf::benchmark::{self, BenchmarkConfig};
use dadf::data::{fit_bucketing, BucketMode};
use dadf::eval::{bucket_sensitivity_sweep, mae, xauc, SweepPoint};
use dadf::training::{train_dadf, TrainConfig};

fn main() -> dadf::Result<()> {
    let b = benchmark::pseudo_balance(&BenchmarkConfig {
        n: 15_000,
        ..BenchmarkConfig::default()
    })?;
    let d: Vec<f64> = b.splits.train.iter().map(|r| r.duration_s).collect();
    let y = b.test_labels();
    let cfg = TrainConfig {
        max_epochs: 5,
        ..TrainConfig::default()
    };
    let report = bucket_sensitivity_sweep(&[1, 2, 4, 8], |k| {
        let bucketing = fit_bucketing(&d, k, BucketMode::EqualFrequency, None)?;
        let outcome = train_dadf(&b.train_data(), &bucketing, &cfg)?;
        let p = b.predictions(&outcome.model)?;
        Ok(SweepPoint {
            k,
            mae: mae(&y, &p)?,
            xauc: xauc(&y, &p, None, 0)?.value,
            domain_clamps: outcome.domain_clamps(),
        })
    })?;
    for p in &report.points {
        println!("K = {}: MAE {:.3}, XAUC {:.4}, clamps {}", p.k, p.mae, p.xauc, p.domain_clamps);
    }
    println!("relative MAE range {:.3}", report.relative_range);
    Ok(())
}
