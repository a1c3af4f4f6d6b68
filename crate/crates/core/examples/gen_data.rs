//! Generates a synthetic corpus, splits it 8:1:1 and prints label statistics.

use dadf::data::{generate_synthetic, split, GeneratorConfig, SplitSpec};
use dadf::stats;

fn main() -> dadf::Result<()> {
    let data = generate_synthetic(20_000, 7, &GeneratorConfig::default())?;
    let s = split(&data, &SplitSpec::default())?;
    println!("train {} / val {} / test {}", s.train.len(), s.val.len(), s.test.len());

    let y: Vec<f64> = data.iter().map(|r| r.watch_time_s).collect();
    let d: Vec<f64> = data.iter().map(|r| r.duration_s).collect();
    println!(
        "watch time: mean {:.1}s, median {:.1}s, p99 {:.1}s, skewness {:.2}",
        stats::mean(&y),
        stats::median(&y),
        stats::quantile(&y, 0.99),
        stats::skewness(&y)
    );
    println!(
        "duration: mean {:.1}s, median {:.1}s, skewness {:.2}",
        stats::mean(&d),
        stats::median(&d),
        stats::skewness(&d)
    );
    let zero = y.iter().filter(|v| **v == 0.0).count();
    println!("zero-watch impressions: {:.1}%", 100.0 * zero as f64 / y.len() as f64);
    Ok(())
}
