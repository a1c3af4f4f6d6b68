//! Exact and sampled XAUC, plus the per-user average.

use dadf::eval::{per_user_xauc, xauc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> dadf::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let n = 20_000;
    let y: Vec<f64> = (0..n).map(|_| (rng.random::<f64>() * 300.0).floor()).collect();
    let p: Vec<f64> = y.iter().map(|v| v + rng.random::<f64>() * 150.0).collect();
    let users: Vec<u64> = (0..n).map(|_| rng.random_range(0..500)).collect();

    let exact = xauc(&y, &p, Some(u64::MAX), 0)?;
    println!("exact:   {:.5} over {} pairs", exact.value, exact.evaluated_pairs);
    for cap in [10_000u64, 1_000_000] {
        let s = xauc(&y, &p, Some(cap), 1)?;
        println!("sampled: {:.5} over {} of {} pairs", s.value, s.evaluated_pairs, s.comparable_pairs);
    }
    let pu = per_user_xauc(&users, &y, &p)?;
    println!("per-user: {:.5} across {} users ({} pairs)", pu.value, pu.users, pu.comparable_pairs);
    Ok(())
}
