//! Test-time translation: random attributes, example-guided transfer and
//! attribute interpolation. Nothing here mutates a model.

use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::image::{write_strip, Image};
use crate::networks::{AttributeCode, Translator};

/// `n` translations of `x` into the other domain with `z ~ N(0, I)`.
pub fn translate_random<M: Translator, R: Rng + ?Sized>(model: &M, x: &Image, n: usize, rng: &mut R) -> Result<Vec<Image>> {
    if n == 0 {
        return Err(Error::Protocol("at least one sample is required".into()));
    }
    let target = x.domain().other();
    let content = model.encode_content(x)?;
    (0..n)
        .map(|_| {
            let z = AttributeCode::sample_prior(model.attr_dim(), target, rng);
            model.generate(&content, &z, target)
        })
        .collect()
}

/// Content of `content_img` rendered with the posterior mean attribute of
/// `attribute_img`, in `attribute_img`'s domain.
pub fn translate_guided<M: Translator>(model: &M, content_img: &Image, attribute_img: &Image) -> Result<Image> {
    let content = model.encode_content(content_img)?;
    let attr = model.encode_posterior(attribute_img)?.mean();
    model.generate(&content, &attr, attribute_img.domain())
}

/// Outputs at `z_t = a + t·(b − a)` for `steps` evenly spaced `t ∈ [0, 1]`,
/// in `attr_a`'s domain.
pub fn interpolate_attributes<M: Translator>(
    model: &M,
    x: &Image,
    attr_a: &AttributeCode,
    attr_b: &AttributeCode,
    steps: usize,
) -> Result<Vec<Image>> {
    if steps < 2 {
        return Err(Error::Protocol(format!("interpolation needs at least 2 steps, got {steps}")));
    }
    if attr_a.dim() != attr_b.dim() {
        return Err(Error::Shape {
            context: "interpolation endpoints".into(),
            expected: vec![attr_a.dim()],
            actual: vec![attr_b.dim()],
        });
    }
    let content = model.encode_content(x)?;
    (0..steps)
        .map(|i| {
            let t = i as f32 / (steps - 1) as f32;
            let z = if i == 0 {
                attr_a.clone()
            } else if i + 1 == steps {
                AttributeCode::from_value(attr_b.value.clone(), attr_a.domain)
            } else {
                attr_a.lerp(attr_b, t)
            };
            model.generate(&content, &z, attr_a.domain)
        })
        .collect()
}

/// `input | out_1 … out_n` as a single PNG.
pub fn write_grid(path: &Path, input: &Image, outputs: &[Image]) -> Result<()> {
    let mut row = Vec::with_capacity(outputs.len() + 1);
    row.push(input.clone());
    row.extend_from_slice(outputs);
    write_strip(path, &row)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::LinearWorld;
    use crate::image::Domain;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn guided_output_follows_the_attribute_image() {
        let w = LinearWorld::standard();
        let x = w.render([0.1, -0.05], 0.2, Domain::X).unwrap();
        let y = w.render([-0.15, 0.1], -0.1, Domain::Y).unwrap();
        let out = translate_guided(&w, &x, &y).unwrap();
        assert_eq!(out.domain(), Domain::Y);
        let (c, a) = w.factors(&out);
        assert!((c[0] - 0.1).abs() < 1e-6 && (c[1] + 0.05).abs() < 1e-6 && (a + 0.1).abs() < 1e-6);
        let x2 = w.render([0.0, 0.2], -0.2, Domain::X).unwrap();
        assert_eq!(translate_guided(&w, &x, &x2).unwrap().domain(), Domain::X);
    }

    #[test]
    fn random_samples_target_the_other_domain() {
        let w = LinearWorld::standard();
        let x = w.render([0.1, -0.05], 0.2, Domain::X).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = translate_random(&w, &x, 5, &mut rng).unwrap();
        assert_eq!(out.len(), 5);
        assert!(out.iter().all(|i| i.domain() == Domain::Y));
    }

    #[test]
    fn rejects_degenerate_requests() {
        let w = LinearWorld::standard();
        let x = w.render([0.0, 0.0], 0.0, Domain::X).unwrap();
        let a = AttributeCode::from_value(vec![0.1], Domain::Y);
        assert!(interpolate_attributes(&w, &x, &a, &a, 1).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(translate_random(&w, &x, 0, &mut rng).is_err());
    }
}
