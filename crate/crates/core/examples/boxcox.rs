//! The per-group power transform: forward, inverse and what it does to skew.

use dadf::stats;
use dadf::transform::{boxcox_forward, boxcox_inverse, DEFAULT_EPS, DEFAULT_ZERO_BRANCH_TOL};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};

fn main() -> dadf::Result<()> {
    let (eps, tol) = (DEFAULT_EPS, DEFAULT_ZERO_BRANCH_TOL);
    for lambda in [-1.0, 0.0, 0.5, 1.0, 2.0] {
        let z = boxcox_forward(2.5, lambda, eps, tol)?;
        let back = boxcox_inverse(z, lambda, eps, tol)?;
        println!("lambda {lambda:>4}: T(2.5) = {z:>8.5}, inverse = {back:.12}");
    }

    // Multiplicative factors are right-skewed; a small lambda pulls them in.
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let dist = LogNormal::new(0.0, 0.8).expect("valid lognormal");
    let b: Vec<f64> = (0..50_000).map(|_| dist.sample(&mut rng)).collect();
    println!("raw factors: skewness {:.2}", stats::skewness(&b));
    for lambda in [1.0, 0.5, 0.0] {
        let z: Vec<f64> = b
            .iter()
            .map(|&v| boxcox_forward(v, lambda, eps, tol))
            .collect::<dadf::Result<_>>()?;
        println!("lambda {lambda}: skewness {:.2}, variance {:.3}", stats::skewness(&z), stats::variance(&z));
    }
    Ok(())
}
