//! Terms of the training objective.
//!
//! Every term exists twice: as a graph op (used for training and gradient
//! checks) and as a plain function over values (used for reporting and as an
//! oracle). All reductions are per-element means; terms that exist once per
//! domain are summed over the two domains by the training step.

use autograd::{Graph, Scalar, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::networks::ContentCode;

/// Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` before taking logs.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub content_adv: f64,
    pub cross_cycle: f64,
    pub domain_adv: f64,
    pub recon: f64,
    pub latent: f64,
    pub kl: f64,
    pub content_l1: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            content_adv: 1.0,
            cross_cycle: 10.0,
            domain_adv: 1.0,
            recon: 10.0,
            latent: 10.0,
            kl: 0.01,
            content_l1: 0.01,
        }
    }
}

/// Encoder/generator-side terms of one step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub adv_content: f64,
    pub cc: f64,
    pub adv_domain: f64,
    pub recon: f64,
    pub latent: f64,
    pub kl: f64,
    pub content_l1: f64,
}

impl LossTerms {
    /// `(name, value)` pairs in metrics-column order.
    pub fn named(&self) -> [(&'static str, f64); 7] {
        [
            ("adv_content", self.adv_content),
            ("cc", self.cc),
            ("adv_domain", self.adv_domain),
            ("recon", self.recon),
            ("latent", self.latent),
            ("kl", self.kl),
            ("content_l1", self.content_l1),
        ]
    }
}

/// Weighted sum of the encoder/generator-side terms.
pub fn total_objective(terms: &LossTerms, w: &LossWeights) -> f64 {
    w.content_adv * terms.adv_content
        + w.cross_cycle * terms.cc
        + w.domain_adv * terms.adv_domain
        + w.recon * terms.recon
        + w.latent * terms.latent
        + w.kl * terms.kl
        + w.content_l1 * terms.content_l1
}

pub const METRICS_HEADER: &str = "step,total,adv_content,cc,adv_domain,recon,latent,kl,content_l1,d_x,d_y,d_c";

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub terms: LossTerms,
    pub total: f64,
    pub d_x: f64,
    pub d_y: f64,
    pub d_c: f64,
    /// Some discriminator output hit the probability clamp.
    pub saturated: bool,
}

impl LossReport {
    pub fn new(terms: LossTerms, weights: &LossWeights, d_x: f64, d_y: f64, d_c: f64, saturated: bool) -> Self {
        Self {
            total: total_objective(&terms, weights),
            terms,
            d_x,
            d_y,
            d_c,
            saturated,
        }
    }

    /// One metrics row; floats use the shortest round-trip representation.
    pub fn csv_row(&self, step: u64) -> String {
        let t = &self.terms;
        let vals = [
            self.total,
            t.adv_content,
            t.cc,
            t.adv_domain,
            t.recon,
            t.latent,
            t.kl,
            t.content_l1,
            self.d_x,
            self.d_y,
            self.d_c,
        ];
        let mut row = step.to_string();
        for v in vals {
            row.push(',');
            row.push_str(&format!("{v:?}"));
        }
        row
    }

    /// Name of the first non-finite scalar, if any.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        for (name, v) in self.terms.named() {
            if !v.is_finite() {
                return Some(name);
            }
        }
        [("d_x", self.d_x), ("d_y", self.d_y), ("d_c", self.d_c), ("total", self.total)]
            .into_iter()
            .find(|(_, v)| !v.is_finite())
            .map(|(n, _)| n)
    }
}

// ---------------------------------------------------------------- values

pub fn clamp_prob(p: f64) -> (f64, bool) {
    let c = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    (c, c != p)
}

fn mean_log(ps: &[f64], complement: bool, saturated: &mut bool) -> f64 {
    let s: f64 = ps
        .iter()
        .map(|&p| {
            let (c, sat) = clamp_prob(p);
            *saturated |= sat;
            if complement {
                (1.0 - c).ln()
            } else {
                c.ln()
            }
        })
        .sum();
    s / ps.len() as f64
}

/// Adversarial losses computed from discriminator outputs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdversarialValue {
    pub generator_side: f64,
    pub discriminator_side: f64,
    pub saturated: bool,
}

/// Content adversarial loss from `p = D^c(code)`; domain X carries label 1.
pub fn content_adversarial_from_probs(p_x: &[f64], p_y: &[f64]) -> AdversarialValue {
    let mut saturated = false;
    let lx = mean_log(p_x, false, &mut saturated);
    let ly1 = mean_log(p_y, true, &mut saturated);
    let discriminator_side = -lx - ly1;
    let lx1 = mean_log(p_x, true, &mut saturated);
    let ly = mean_log(p_y, false, &mut saturated);
    let generator_side = -0.25 * (lx + lx1 + ly + ly1);
    AdversarialValue {
        generator_side,
        discriminator_side,
        saturated,
    }
}

/// Non-saturating domain adversarial loss from `D(real)` and `D(fake)`.
pub fn domain_adversarial_from_probs(real: &[f64], fake: &[f64]) -> AdversarialValue {
    let mut saturated = false;
    let lr = mean_log(real, false, &mut saturated);
    let lf1 = mean_log(fake, true, &mut saturated);
    let lf = mean_log(fake, false, &mut saturated);
    AdversarialValue {
        generator_side: -lf,
        discriminator_side: -lr - lf1,
        saturated,
    }
}

/// Per-element mean absolute difference.
pub fn mean_abs_diff(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Shape {
            context: "mean_abs_diff".into(),
            expected: vec![a.len()],
            actual: vec![b.len()],
        });
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64)
}

pub fn self_reconstruction_loss(x: &Image, x_rec: &Image) -> Result<f64> {
    x.l1_distance(x_rec)
}

pub fn cross_cycle_loss(x: &Image, y: &Image, xhat: &Image, yhat: &Image) -> Result<f64> {
    Ok(x.l1_distance(xhat)? + y.l1_distance(yhat)?)
}

/// `½ Σ (mu² + exp(logvar) − 1 − logvar)` for one posterior.
pub fn kl_divergence(mu: &[f64], logvar: &[f64]) -> f64 {
    0.5 * mu
        .iter()
        .zip(logvar)
        .map(|(m, lv)| m * m + lv.exp() - 1.0 - lv)
        .sum::<f64>()
}

pub fn latent_regression_loss(z: &[f64], z_rec: &[f64]) -> Result<f64> {
    mean_abs_diff(z, z_rec)
}

pub fn content_l1_regularizer(code: &ContentCode) -> f64 {
    let d = code.features().data();
    d.iter().map(|v| v.abs() as f64).sum::<f64>() / d.len() as f64
}

// ---------------------------------------------------------------- graph ops

/// `mean |a − b|`.
pub fn g_l1<T: Scalar>(g: &mut Graph<T>, a: Var, b: Var) -> Result<Var> {
    let d = g.sub(a, b)?;
    let d = g.abs(d);
    Ok(g.mean(d))
}

/// `mean |a|`.
pub fn g_mean_abs<T: Scalar>(g: &mut Graph<T>, a: Var) -> Var {
    let d = g.abs(a);
    g.mean(d)
}

/// Batch-averaged KL of `N(mu, exp(logvar))` against `N(0, I)`; inputs `[n, a]`.
pub fn g_kl<T: Scalar>(g: &mut Graph<T>, mu: Var, logvar: Var) -> Result<Var> {
    let n = g.shape(mu)[0];
    let m2 = g.mul(mu, mu)?;
    let e = g.exp(logvar);
    let s = g.add(m2, e)?;
    let s = g.sub(s, logvar)?;
    let s = g.affine(s, 1.0, -1.0);
    let s = g.sum(s);
    Ok(g.scale(s, 0.5 / n as f64))
}

/// `−mean log p` with clamping; the flag reports whether the clamp was hit.
pub fn g_neg_log<T: Scalar>(g: &mut Graph<T>, p: Var) -> (Var, bool) {
    let saturated = g.value(p).data().iter().any(|&v| clamp_prob(v.as_f64()).1);
    let c = g.clamp(p, PROB_EPS, 1.0 - PROB_EPS);
    let l = g.ln(c);
    let m = g.mean(l);
    (g.scale(m, -1.0), saturated)
}

/// `−mean log(1 − p)` with clamping.
pub fn g_neg_log_complement<T: Scalar>(g: &mut Graph<T>, p: Var) -> (Var, bool) {
    let saturated = g.value(p).data().iter().any(|&v| clamp_prob(v.as_f64()).1);
    let c = g.clamp(p, PROB_EPS, 1.0 - PROB_EPS);
    let q = g.affine(c, -1.0, 1.0);
    let l = g.ln(q);
    let m = g.mean(l);
    (g.scale(m, -1.0), saturated)
}

/// Discriminator-side binary cross-entropy: `−log D(pos) − log(1 − D(neg))`.
pub fn g_discriminator_bce<T: Scalar>(g: &mut Graph<T>, p_pos: Var, p_neg: Var) -> Result<(Var, bool)> {
    let (a, s1) = g_neg_log(g, p_pos);
    let (b, s2) = g_neg_log_complement(g, p_neg);
    Ok((g.add(a, b)?, s1 || s2))
}

/// Encoder-side content adversarial loss, `−½[log p + log(1 − p)]` averaged
/// over the codes of both domains.
pub fn g_content_confusion<T: Scalar>(g: &mut Graph<T>, p_x: Var, p_y: Var) -> Result<(Var, bool)> {
    let mut parts = Vec::with_capacity(4);
    let mut saturated = false;
    for p in [p_x, p_y] {
        let (a, s1) = g_neg_log(g, p);
        let (b, s2) = g_neg_log_complement(g, p);
        saturated |= s1 || s2;
        parts.push(a);
        parts.push(b);
    }
    let mut acc = parts[0];
    for &p in &parts[1..] {
        acc = g.add(acc, p)?;
    }
    Ok((g.scale(acc, 0.25), saturated))
}

#[cfg(test)]
mod tests {
    use super::*;
    use autograd::Tensor;

    #[test]
    fn unit_terms_weighted_total() {
        let ones = LossTerms {
            adv_content: 1.0,
            cc: 1.0,
            adv_domain: 1.0,
            recon: 1.0,
            latent: 1.0,
            kl: 1.0,
            content_l1: 1.0,
        };
        assert!((total_objective(&ones, &LossWeights::default()) - 32.02).abs() < 1e-12);
        assert_eq!(total_objective(&LossTerms::default(), &LossWeights::default()), 0.0);
        let mut w = LossWeights::default();
        w.cross_cycle *= 2.0;
        let t = LossTerms { cc: 0.37, ..ones };
        let diff = total_objective(&t, &w) - total_objective(&t, &LossWeights::default());
        assert!((diff - 0.37 * 10.0).abs() < 1e-12);
    }

    #[test]
    fn discriminator_side_examples() {
        let v = content_adversarial_from_probs(&[0.9], &[0.1]);
        assert!((v.discriminator_side - (-2.0 * 0.9f64.ln())).abs() < 1e-12);
        assert!((v.discriminator_side - 0.2107).abs() < 1e-4);
        let v = domain_adversarial_from_probs(&[0.5], &[0.9]);
        assert!((v.generator_side - 0.1054).abs() < 1e-4);
        let v = domain_adversarial_from_probs(&[1.0], &[0.0]);
        assert!(v.discriminator_side < 1e-6 && v.saturated);
    }

    #[test]
    fn graph_and_value_forms_agree() {
        let mut g = Graph::<f64>::inference();
        let px = g.constant(Tensor::new(&[2, 1], vec![0.3, 0.8]));
        let py = g.constant(Tensor::new(&[2, 1], vec![0.6, 0.1]));
        let (enc, _) = g_content_confusion(&mut g, px, py).unwrap();
        let (dis, _) = g_discriminator_bce(&mut g, px, py).unwrap();
        let v = content_adversarial_from_probs(&[0.3, 0.8], &[0.6, 0.1]);
        assert!((g.value(enc).item() - v.generator_side).abs() < 1e-12);
        assert!((g.value(dis).item() - v.discriminator_side).abs() < 1e-12);

        let mu = g.constant(Tensor::new(&[2, 2], vec![1.0, -0.5, 0.0, 2.0]));
        let lv = g.constant(Tensor::new(&[2, 2], vec![0.3, 0.0, -1.0, 1.5]));
        let kl = g_kl(&mut g, mu, lv).unwrap();
        let expect = (kl_divergence(&[1.0, -0.5], &[0.3, 0.0]) + kl_divergence(&[0.0, 2.0], &[-1.0, 1.5])) / 2.0;
        assert!((g.value(kl).item() - expect).abs() < 1e-12);
    }

    #[test]
    fn csv_row_matches_header_width() {
        let r = LossReport::default();
        assert_eq!(r.csv_row(3).split(',').count(), METRICS_HEADER.split(',').count());
        assert!(r.csv_row(3).starts_with("3,"));
    }
}
