//! Finite-difference checks of a GRU step and of a whole model's loss.
//!
//! `cargo run --release --example gradcheck -- [eps]`
//!
//! Most model gradients are tiny, so small steps drown in rounding noise;
//! the default step is 1e-3.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use bifocal::autodiff::{finite_diff_check_many, Tensor};
use bifocal::data::{synth_generate, SynthConfig, Vocabulary};
use bifocal::layers::{gru_step, GruParams};
use bifocal::model::{GatingVariant, Model};
use bifocal::training::{gradcheck_model, prepare, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let eps: f64 = std::env::args().nth(1).map_or(Ok(1e-3), |s| s.parse())?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (input, hidden) = (3, 4);
    let point: Vec<Tensor> = [
        vec![3 * hidden, input],
        vec![3 * hidden, hidden],
        vec![3 * hidden],
        vec![3 * hidden],
        vec![input],
        vec![hidden],
    ]
    .iter()
    .map(|s| Tensor::uniform(s, 0.8, &mut rng))
    .collect();
    let report = finite_diff_check_many(
        |tape, v| {
            let p = GruParams {
                w_x: v[0],
                w_h: v[1],
                b_x: v[2],
                b_h: v[3],
                hidden,
            };
            let h = gru_step(tape, &p, v[4], v[5]).expect("shapes match");
            Ok(tape.sum(h))
        },
        &point,
        1e-5,
    )?;
    println!("gru step: max relative error {:.2e}", report.max_rel_error);

    let data = synth_generate(3, 1, &SynthConfig::default());
    let vocab = Vocabulary::build(&data, 1000);
    let ex = prepare(&data, &vocab)?.remove(0);
    let small = TrainConfig {
        hidden: 4,
        embed: 3,
        ..Default::default()
    };
    for (name, cfg) in [
        ("full (history gru)", small.clone()),
        (
            "full (previous context)",
            TrainConfig {
                gating_variant: GatingVariant::Prev,
                ..small.clone()
            },
        ),
        (
            "no gating",
            TrainConfig {
                gating: false,
                ..small.clone()
            },
        ),
        (
            "basic",
            TrainConfig {
                bifocal: false,
                gating: false,
                ..small.clone()
            },
        ),
    ] {
        let model = Model::new(cfg.model_config(&vocab), 1)?;
        let r = gradcheck_model(&model, &ex, 200, eps, 2)?;
        println!(
            "{name}: {} coordinates, max relative error {:.2e}",
            r.checked, r.max_rel_error
        );
    }
    Ok(())
}
