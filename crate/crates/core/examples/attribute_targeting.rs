//! Overrides one attribute target and shows how the attribute loss reacts.

use std::collections::BTreeMap;

use latent_deid::attributes::{attribute_index, set_attribute_targets};
use latent_deid::image::synthetic_face;
use latent_deid::losses::{attribute_loss, attribute_loss_with, AttributeDistribution, KlVariant};
use latent_deid::providers::{toy_attribute_predictor, AttributePredictor};

fn main() -> latent_deid::Result<()> {
    let x = synthetic_face(32, 32, 0);
    let source = AttributeDistribution::new(toy_attribute_predictor().predict(&x)?)?;
    let smile = attribute_index("smile")?;
    println!("source P(Smiling) = {:.4}", source.probs()[smile]);

    for p in [0.1, 0.5, 0.9] {
        let target = set_attribute_targets(&source, &BTreeMap::from([("Smile".to_string(), p)]))?;
        println!(
            "target {p:.1}: loss {:.5} (bernoulli {:.5})",
            attribute_loss(&target, &source)?,
            attribute_loss_with(&target, &source, KlVariant::Bernoulli)?
        );
    }

    match attribute_index("Whiskers") {
        Ok(_) => unreachable!(),
        Err(e) => println!("unknown name: {e}"),
    }
    Ok(())
}
