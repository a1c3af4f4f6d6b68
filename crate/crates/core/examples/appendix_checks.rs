//! Numerical checks: tail inheritance under a multiplicative factor and the
//! risk gap between global and per-group constant corrections.

use dadf::eval::{check_long_tail_inheritance, check_oracle_risk, LongTailConfig, OracleRiskConfig};

fn main() -> dadf::Result<()> {
    let lt = check_long_tail_inheritance(&LongTailConfig {
        n: 400_000,
        ..LongTailConfig::default()
    })?;
    println!("survival ratios (tolerance {}, thin tail {}):", lt.tolerance, lt.thin_tail);
    for p in &lt.points {
        let f = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.3}"));
        println!("  t {:>7.2}: Y {:>6}  R {:>6}  ({} / {} beyond t)", p.t, f(p.ratio_y), f(p.ratio_r), p.exceed_y, p.exceed_r);
    }
    println!("long-tailed: {}", lt.long_tailed);

    let r = check_oracle_risk(&OracleRiskConfig::default())?;
    println!(
        "global risk {:.4} (expected {:.4}), per-group {:.4} (expected {:.4}), gap {:.4} (expected {:.4})",
        r.r0, r.expected_r0, r.rg, r.expected_rg, r.gap, r.expected_gap
    );
    println!("dominance holds: {}, gap matches: {}", r.dominance_holds, r.gap_matches);
    Ok(())
}
