//! Finite-difference check of the training objective's gradients.

use dadf::correction::{DadfModel, InputScaler, NetConfig};
use dadf::data::{fit_bucketing, generate_synthetic, BucketMode, GeneratorConfig, Impression};
use dadf::first_stage::{biased_oracle_first_stage, FirstStageOutput, OracleConfig};
use dadf::numeric::{finite_diff_check, Selection};
use dadf::training::{objective, LossWeights};

fn main() -> dadf::Result<()> {
    let gen = GeneratorConfig {
        no_play_prob: 0.0,
        ..GeneratorConfig::default()
    };
    let data = generate_synthetic(500, 4, &gen)?;
    let outs = biased_oracle_first_stage(&data, &OracleConfig::default())?;
    let d: Vec<f64> = data.iter().map(|r| r.duration_s).collect();
    let bucketing = fit_bucketing(&d, 2, BucketMode::EqualFrequency, None)?;
    let model = DadfModel::new(NetConfig::default(), bucketing, InputScaler::fit(&data, &outs)?, true, 0)?;
    let mut store = model.store.clone();
    store.value_mut(model.lambda).data_mut().copy_from_slice(&[0.3, 1.2]);

    let rows: Vec<&Impression> = data.iter().take(32).collect();
    let os: Vec<&FirstStageOutput> = outs.iter().take(32).collect();
    let batch = model.batch(&rows, &os)?;
    let y: Vec<f64> = rows.iter().map(|r| r.watch_time_s).collect();
    let w = LossWeights::default();

    let report = finite_diff_check(
        &mut store,
        |g, s| Ok(objective(g, &model, s, &batch, &y, &w)?.total),
        &Selection::Sampled {
            per_param: 3,
            seed: 0,
            exhaustive: vec!["dadf.lambda".into()],
        },
        1e-5,
        1e-4,
    )?;
    println!("checked {} coordinates, max relative error {:.2e}", report.entries.len(), report.max_rel_error);
    if let Some(e) = report.worst() {
        println!("worst: {}[{}] analytic {:.6e} numeric {:.6e}", e.param, e.index, e.analytic, e.numeric);
    }
    println!("passed: {}", report.passed());
    Ok(())
}
