//! Trains every model variant on one shared frozen first stage.

use dadf::benchmark::{self, BenchmarkConfig};
use dadf::training::{TrainConfig, Variant};

fn main() -> dadf::Result<()> {
    let b = benchmark::pseudo_balance(&BenchmarkConfig {
        n: 15_000,
        ..BenchmarkConfig::default()
    })?;
    let cfg = TrainConfig {
        max_epochs: 6,
        ..TrainConfig::default()
    };
    let (base_mae, base_xauc) = b.base_score()?;
    println!("{:<18} {:>8} {:>8}", "variant", "MAE", "XAUC");
    println!("{:<18} {base_mae:>8.3} {base_xauc:>8.4}", "first stage");
    for v in Variant::ALL {
        let s = b.score(&b.train(v, &cfg)?)?;
        println!("{:<18} {:>8.3} {:>8.4}", v.name(), s.mae, s.xauc);
    }
    Ok(())
}
