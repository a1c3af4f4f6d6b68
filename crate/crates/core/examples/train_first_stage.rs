//! Trains the value-regression first stage, freezes it and inspects the
//! signals it hands to the correction stage.

use dadf::data::{generate_synthetic, split, GeneratorConfig, SplitSpec};
use dadf::eval::{mae, xauc};
use dadf::first_stage::{freeze_and_emit, train_first_stage, Backbone, FirstStageHyper};

fn main() -> dadf::Result<()> {
    let data = generate_synthetic(10_000, 3, &GeneratorConfig::default())?;
    let s = split(&data, &SplitSpec::default())?;
    let hyper = FirstStageHyper {
        epochs: 4,
        hidden: vec![64, 32],
        ..FirstStageHyper::default()
    };
    for backbone in [Backbone::Vr, Backbone::Wlr] {
        let mut model = train_first_stage(backbone, &s.train, &s.val, &hyper)?;
        let out = freeze_and_emit(&mut model, &s.test)?;
        let y: Vec<f64> = s.test.iter().map(|r| r.watch_time_s).collect();
        let p: Vec<f64> = out.iter().map(|o| o.y_hat0).collect();
        println!(
            "{backbone:?}: test MAE {:.2}, XAUC {:.4}, {} epochs, rep dim {}",
            mae(&y, &p)?,
            xauc(&y, &p, None, 0)?.value,
            model.history.len(),
            out[0].rep_dim()
        );
    }
    Ok(())
}
