//! Cross-cycle translation, the alternating three-optimizer update, and
//! reproducible runs with checkpoints.

mod checkpoint;
mod graph;
mod run;
mod step;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MANIFEST};
pub use graph::{
    build_adversarial, build_translation, content_discriminator_loss, domain_discriminator_loss, weighted_total,
    AdversarialGraph, StepNoise, TranslationGraph,
};
pub use run::{run_training, Run, RunOptions, METRICS_FILE};
pub use step::{adam_config, TrainState};

use rand::Rng;

use crate::error::Result;
use crate::image::Image;
use crate::networks::{AttributeCode, ContentCode, Translator};

/// Codes of the two real inputs.
#[derive(Clone, Debug)]
pub struct TranslationCodes {
    pub content_x: ContentCode,
    pub content_y: ContentCode,
    pub attr_x: AttributeCode,
    pub attr_y: AttributeCode,
}

/// First stage: `u = G_X(E^c_Y(y), E^a_X(x))`, `v = G_Y(E^c_X(x), E^a_Y(y))`.
pub fn forward_translation<M: Translator, R: Rng + ?Sized>(
    model: &M,
    x: &Image,
    y: &Image,
    rng: &mut R,
) -> Result<(Image, Image, TranslationCodes)> {
    let content_x = model.encode_content(x)?;
    let content_y = model.encode_content(y)?;
    let attr_x = model.encode_attribute(x, rng)?;
    let attr_y = model.encode_attribute(y, rng)?;
    let u = model.generate(&content_y, &attr_x, x.domain())?;
    let v = model.generate(&content_x, &attr_y, y.domain())?;
    Ok((
        u,
        v,
        TranslationCodes {
            content_x,
            content_y,
            attr_x,
            attr_y,
        },
    ))
}

/// Second stage: `x̂ = G_X(E^c_Y(v), E^a_X(u))`, `ŷ = G_Y(E^c_X(u), E^a_Y(v))`.
pub fn backward_translation<M: Translator, R: Rng + ?Sized>(
    model: &M,
    u: &Image,
    v: &Image,
    rng: &mut R,
) -> Result<(Image, Image)> {
    let (xhat, yhat, _) = forward_translation(model, u, v, rng)?;
    Ok((xhat, yhat))
}
