//! A linear two-domain world with exactly invertible encoders and generators.
//!
//! Content is `c ∈ R²`, the attribute is `a ∈ R`, and an image is the 3×1×1
//! array `x = A_X c + b_X a` (likewise for Y). Encoders apply the inverse of
//! `[A | b]`, generators apply `[A | b]` itself, and the attribute posterior
//! is degenerate (log-variance at its lower clamp) so sampling returns `mu`.

use autograd::Tensor;

use crate::error::{Error, Result};
use crate::image::{Domain, Image};
use crate::networks::{AttributeCode, ContentCode, Translator, LOGVAR_MIN};

type Mat3 = [[f64; 3]; 3];

fn invert(m: &Mat3) -> Option<Mat3> {
    let c = |r: usize, k: usize| {
        let (r1, r2) = ((r + 1) % 3, (r + 2) % 3);
        let (k1, k2) = ((k + 1) % 3, (k + 2) % 3);
        m[r1][k1] * m[r2][k2] - m[r1][k2] * m[r2][k1]
    };
    let det = m[0][0] * c(0, 0) + m[0][1] * c(0, 1) + m[0][2] * c(0, 2);
    if det.abs() < 1e-9 {
        return None;
    }
    let mut inv = [[0.0; 3]; 3];
    for (r, row) in inv.iter_mut().enumerate() {
        for (k, v) in row.iter_mut().enumerate() {
            *v = c(k, r) / det;
        }
    }
    Some(inv)
}

fn apply(m: &Mat3, v: [f64; 3]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for (o, row) in out.iter_mut().zip(m) {
        *o = row.iter().zip(&v).map(|(a, b)| a * b).sum();
    }
    out
}

#[derive(Clone, Debug)]
pub struct LinearWorld {
    /// `[A_d | b_d]` per domain.
    mix: [Mat3; 2],
    unmix: [Mat3; 2],
}

impl LinearWorld {
    /// `mix[d]` columns 0–1 hold `A_d`, column 2 holds `b_d`.
    pub fn new(mix_x: Mat3, mix_y: Mat3) -> Result<Self> {
        let inv = |m: &Mat3| {
            invert(m).ok_or_else(|| Error::Protocol("linear world mixing matrix is singular".into()))
        };
        Ok(Self {
            unmix: [inv(&mix_x)?, inv(&mix_y)?],
            mix: [mix_x, mix_y],
        })
    }

    /// A fixed well-conditioned instance.
    pub fn standard() -> Self {
        Self::new(
            [[0.8, 0.1, 0.3], [-0.2, 0.7, 0.4], [0.1, -0.3, 0.9]],
            [[0.5, -0.4, 0.6], [0.3, 0.6, -0.2], [-0.4, 0.2, 0.7]],
        )
        .expect("standard world is invertible")
    }

    /// Renders factors into domain `d`. Keep `|c|, |a| ≤ 0.25` to stay in `[-1, 1]`.
    pub fn render(&self, content: [f64; 2], attr: f64, d: Domain) -> Result<Image> {
        let x = apply(&self.mix[d.index()], [content[0], content[1], attr]);
        Image::new(Tensor::new(&[3, 1, 1], x.iter().map(|&v| v as f32).collect()), d)
    }

    /// Exact `(c, a)` of an image in its own domain.
    pub fn factors(&self, img: &Image) -> ([f64; 2], f64) {
        let p = img.pixels().data();
        let f = apply(&self.unmix[img.domain().index()], [p[0] as f64, p[1] as f64, p[2] as f64]);
        ([f[0], f[1]], f[2])
    }
}

impl Translator for LinearWorld {
    fn attr_dim(&self) -> usize {
        1
    }

    fn encode_content(&self, img: &Image) -> Result<ContentCode> {
        let (c, _) = self.factors(img);
        ContentCode::new(Tensor::new(&[2, 1, 1], vec![c[0] as f32, c[1] as f32]))
    }

    fn encode_posterior(&self, img: &Image) -> Result<AttributeCode> {
        let (_, a) = self.factors(img);
        let mu = vec![a as f32];
        Ok(AttributeCode {
            value: mu.clone(),
            mu: Some(mu),
            logvar: Some(vec![LOGVAR_MIN as f32]),
            domain: img.domain(),
        })
    }

    fn generate(&self, content: &ContentCode, attr: &AttributeCode, domain: Domain) -> Result<Image> {
        let c = content.features().data();
        if c.len() != 2 || attr.value.len() != 1 {
            return Err(Error::Shape {
                context: "linear world generator".into(),
                expected: vec![2, 1],
                actual: vec![c.len(), attr.value.len()],
            });
        }
        let x = apply(&self.mix[domain.index()], [c[0] as f64, c[1] as f64, attr.value[0] as f64]);
        Image::from_clamped(Tensor::new(&[3, 1, 1], x.iter().map(|&v| v as f32).collect()), domain)
    }
}
