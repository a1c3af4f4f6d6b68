use dadf::benchmark::{self, BenchmarkConfig};
use dadf::data::{generate_synthetic, split, Bucketing, GeneratorConfig, SplitSpec};
use dadf::first_stage::{
    biased_oracle_first_stage, freeze_and_emit, train_first_stage, Backbone, BiasProfile, FirstStageHyper,
    OracleConfig,
};
use dadf::training::{train_dadf, train_variant, TrainConfig, TrainData, Variant};

#[test]
fn identity_bias_oracle_learns_unit_correction() {
    let gen = GeneratorConfig {
        no_play_prob: 0.0,
        ..GeneratorConfig::default()
    };
    let data = generate_synthetic(12_000, 8, &gen).unwrap();
    let s = split(&data, &SplitSpec::default()).unwrap();
    let oc = OracleConfig {
        profile: BiasProfile::identity(),
        noise_sd: 0.0,
        ..OracleConfig::default()
    };
    let (tr, va) = (
        biased_oracle_first_stage(&s.train, &oc).unwrap(),
        biased_oracle_first_stage(&s.val, &oc).unwrap(),
    );
    let d: Vec<f64> = s.train.iter().map(|r| r.duration_s).collect();
    let bucketing = dadf::data::fit_bucketing(&d, 3, dadf::data::BucketMode::EqualFrequency, None).unwrap();
    let td = TrainData {
        train: &s.train,
        train_out: &tr,
        val: &s.val,
        val_out: &va,
    };
    let cfg = TrainConfig {
        max_epochs: 8,
        ..TrainConfig::default()
    };
    let out = train_dadf(&td, &bucketing, &cfg).unwrap();
    let preds = out.model.predict(&s.val, &va).unwrap();
    let inside = preds.iter().filter(|p| (0.95..=1.05).contains(&p.b_hat)).count();
    let frac = inside as f64 / preds.len() as f64;
    assert!(frac >= 0.99, "only {:.2}% of b_hat within 5% of one", 100.0 * frac);
}

#[test]
fn learned_first_stage_is_untouched_by_correction_training() {
    let data = generate_synthetic(4000, 2, &GeneratorConfig::default()).unwrap();
    let s = split(&data, &SplitSpec::default()).unwrap();
    let hyper = FirstStageHyper {
        epochs: 2,
        hidden: vec![32, 16],
        ..FirstStageHyper::default()
    };
    let mut fs = train_first_stage(Backbone::Vr, &s.train, &s.val, &hyper).unwrap();
    let tr = freeze_and_emit(&mut fs, &s.train).unwrap();
    let va = freeze_and_emit(&mut fs, &s.val).unwrap();
    let snapshot = serde_json::to_string(&fs).unwrap();
    let td = TrainData {
        train: &s.train,
        train_out: &tr,
        val: &s.val,
        val_out: &va,
    };
    let cfg = TrainConfig {
        max_epochs: 2,
        ..TrainConfig::default()
    };
    train_dadf(&td, &Bucketing::single(), &cfg).unwrap();
    assert_eq!(serde_json::to_string(&fs).unwrap(), snapshot);
    assert_eq!(freeze_and_emit(&mut fs, &s.val).unwrap(), va);
}

#[test]
fn regulariser_keeps_group_variance_bounded() {
    let b = benchmark::pseudo_balance(&BenchmarkConfig {
        n: 20_000,
        ..BenchmarkConfig::default()
    })
    .unwrap();
    let cfg = TrainConfig {
        max_epochs: 6,
        ..TrainConfig::default()
    };
    let out = b.train(Variant::Full, &cfg).unwrap();
    for h in &out.history {
        for m in h.moments.iter().filter(|m| m.active) {
            assert!((0.05..=2.0).contains(&m.var), "epoch {}: Var(z) = {}", h.epoch, m.var);
        }
    }
}

#[test]
fn pseudo_balance_variants_improve_on_the_base() {
    let b = benchmark::pseudo_balance(&BenchmarkConfig {
        n: 12_000,
        ..BenchmarkConfig::default()
    })
    .unwrap();
    let (base_mae, _) = b.base_score().unwrap();
    let cfg = TrainConfig {
        max_epochs: 6,
        ..TrainConfig::default()
    };
    for v in [Variant::Full, Variant::GlobalCorrection] {
        let s = b.score(&b.train(v, &cfg).unwrap()).unwrap();
        assert!(s.mae < base_mae, "{v}: {} vs base {base_mae}", s.mae);
    }
}

#[test]
fn frozen_lambda_variants_keep_their_lambda() {
    let b = benchmark::pseudo_balance(&BenchmarkConfig {
        n: 4000,
        ..BenchmarkConfig::default()
    })
    .unwrap();
    let cfg = TrainConfig {
        max_epochs: 2,
        ..TrainConfig::default()
    };
    let nd = train_variant(Variant::NoDist, &b.train_data(), &b.bucketing, &cfg).unwrap();
    assert!(nd.model.lambdas().iter().all(|l| *l == 1.0));
    assert_eq!(nd.model.num_groups(), b.bucketing.num_groups());
    let gc = train_variant(Variant::GlobalCorrection, &b.train_data(), &b.bucketing, &cfg).unwrap();
    assert_eq!(gc.model.lambdas(), vec![0.0]);
    assert!(!gc.model.use_aux);
    let nf = train_variant(Variant::NoFactor, &b.train_data(), &b.bucketing, &cfg).unwrap();
    assert_eq!(nf.model.num_groups(), 1);
}
