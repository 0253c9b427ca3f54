use autograd::{Graph, Scalar, Tensor, Var};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::image::Domain;
use crate::losses::{self, LossTerms, LossWeights};
use crate::networks::{reparameterize, Model};

/// Every random draw of one step, sampled in a fixed order.
#[derive(Clone, Debug, PartialEq)]
pub struct StepNoise<T> {
    /// Reparameterization noise for `E^a_X(x)`, `E^a_Y(y)`, `E^a_X(u)`, `E^a_Y(v)`.
    pub eps_x: Tensor<T>,
    pub eps_y: Tensor<T>,
    pub eps_u: Tensor<T>,
    pub eps_v: Tensor<T>,
    /// Prior samples for the latent regression path.
    pub z_x: Tensor<T>,
    pub z_y: Tensor<T>,
}

impl<T: Scalar> StepNoise<T> {
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, batch: usize, attr_dim: usize) -> Self {
        let mut draw = || {
            Tensor::from_fn(&[batch, attr_dim], |_| {
                let z: f32 = StandardNormal.sample(rng);
                T::from_f64_lossy(z as f64)
            })
        };
        Self {
            eps_x: draw(),
            eps_y: draw(),
            eps_u: draw(),
            eps_v: draw(),
            z_x: draw(),
            z_y: draw(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> StepNoise<U> {
        StepNoise {
            eps_x: self.eps_x.cast(),
            eps_y: self.eps_y.cast(),
            eps_u: self.eps_u.cast(),
            eps_v: self.eps_v.cast(),
            z_x: self.z_x.cast(),
            z_y: self.z_y.cast(),
        }
    }
}

/// Nodes of the two-stage translation and the non-adversarial terms.
#[derive(Clone, Copy, Debug)]
pub struct TranslationGraph {
    pub c_x: Var,
    pub c_y: Var,
    pub mu_x: Var,
    pub logvar_x: Var,
    pub mu_y: Var,
    pub logvar_y: Var,
    pub u: Var,
    pub v: Var,
    pub xhat: Var,
    pub yhat: Var,
    pub x_rec: Var,
    pub y_rec: Var,
    /// `G_X(c_y, z_x)` and `G_Y(c_x, z_y)`.
    pub rand_x: Var,
    pub rand_y: Var,
    pub cc: Var,
    pub recon: Var,
    pub latent: Var,
    pub kl: Var,
    pub content_l1: Var,
}

/// Records both translation stages, self-reconstructions, latent
/// regression, KL and the content regularizer for batches `x` and `y`.
pub fn build_translation<T: Scalar>(
    model: &Model<T>,
    g: &mut Graph<T>,
    x: Var,
    y: Var,
    noise: &StepNoise<T>,
) -> Result<TranslationGraph> {
    use Domain::{X, Y};
    let c_x = model.content_encode(g, x, X)?;
    let c_y = model.content_encode(g, y, Y)?;
    let (mu_x, logvar_x) = model.attribute_encode(g, x, X)?;
    let (mu_y, logvar_y) = model.attribute_encode(g, y, Y)?;
    let a_x = reparameterize(g, mu_x, logvar_x, &noise.eps_x)?;
    let a_y = reparameterize(g, mu_y, logvar_y, &noise.eps_y)?;

    let u = model.generate(g, c_y, a_x, X)?;
    let v = model.generate(g, c_x, a_y, Y)?;

    let c_u = model.content_encode(g, u, X)?;
    let c_v = model.content_encode(g, v, Y)?;
    let (mu_u, logvar_u) = model.attribute_encode(g, u, X)?;
    let (mu_v, logvar_v) = model.attribute_encode(g, v, Y)?;
    let a_u = reparameterize(g, mu_u, logvar_u, &noise.eps_u)?;
    let a_v = reparameterize(g, mu_v, logvar_v, &noise.eps_v)?;
    let xhat = model.generate(g, c_v, a_u, X)?;
    let yhat = model.generate(g, c_u, a_v, Y)?;
    let cc_x = losses::g_l1(g, xhat, x)?;
    let cc_y = losses::g_l1(g, yhat, y)?;
    let cc = g.add(cc_x, cc_y)?;

    let x_rec = model.generate(g, c_x, a_x, X)?;
    let y_rec = model.generate(g, c_y, a_y, Y)?;
    let r_x = losses::g_l1(g, x_rec, x)?;
    let r_y = losses::g_l1(g, y_rec, y)?;
    let recon = g.add(r_x, r_y)?;

    let kl_x = losses::g_kl(g, mu_x, logvar_x)?;
    let kl_y = losses::g_kl(g, mu_y, logvar_y)?;
    let kl = g.add(kl_x, kl_y)?;

    let z_x = g.constant(noise.z_x.clone());
    let z_y = g.constant(noise.z_y.clone());
    let rand_x = model.generate(g, c_y, z_x, X)?;
    let rand_y = model.generate(g, c_x, z_y, Y)?;
    let (mu_rx, _) = model.attribute_encode(g, rand_x, X)?;
    let (mu_ry, _) = model.attribute_encode(g, rand_y, Y)?;
    let l_x = losses::g_l1(g, mu_rx, z_x)?;
    let l_y = losses::g_l1(g, mu_ry, z_y)?;
    let latent = g.add(l_x, l_y)?;

    let n_x = losses::g_mean_abs(g, c_x);
    let n_y = losses::g_mean_abs(g, c_y);
    let content_l1 = g.add(n_x, n_y)?;

    Ok(TranslationGraph {
        c_x,
        c_y,
        mu_x,
        logvar_x,
        mu_y,
        logvar_y,
        u,
        v,
        xhat,
        yhat,
        x_rec,
        y_rec,
        rand_x,
        rand_y,
        cc,
        recon,
        latent,
        kl,
        content_l1,
    })
}

/// Encoder/generator-side adversarial terms.
#[derive(Clone, Copy, Debug)]
pub struct AdversarialGraph {
    /// `−log D_X(u) − log D_Y(v)`.
    pub adv_domain: Var,
    /// Content confusion term; absent when training without `D^c`.
    pub adv_content: Option<Var>,
    pub saturated: bool,
}

pub fn build_adversarial<T: Scalar>(
    model: &Model<T>,
    g: &mut Graph<T>,
    t: &TranslationGraph,
    with_content: bool,
) -> Result<AdversarialGraph> {
    let p_u = model.discriminate_domain(g, t.u, Domain::X)?;
    let p_v = model.discriminate_domain(g, t.v, Domain::Y)?;
    let (a, s1) = losses::g_neg_log(g, p_u);
    let (b, s2) = losses::g_neg_log(g, p_v);
    let adv_domain = g.add(a, b)?;
    let mut saturated = s1 || s2;
    let adv_content = if with_content {
        let p_x = model.discriminate_content(g, t.c_x)?;
        let p_y = model.discriminate_content(g, t.c_y)?;
        let (l, s) = losses::g_content_confusion(g, p_x, p_y)?;
        saturated |= s;
        Some(l)
    } else {
        None
    };
    Ok(AdversarialGraph {
        adv_domain,
        adv_content,
        saturated,
    })
}

/// `Σ λ_i · term_i` as a graph node, plus the term values.
pub fn weighted_total<T: Scalar>(
    g: &mut Graph<T>,
    t: &TranslationGraph,
    adv: &AdversarialGraph,
    w: &LossWeights,
) -> Result<(Var, LossTerms)> {
    let mut parts = vec![
        (t.cc, w.cross_cycle),
        (adv.adv_domain, w.domain_adv),
        (t.recon, w.recon),
        (t.latent, w.latent),
        (t.kl, w.kl),
        (t.content_l1, w.content_l1),
    ];
    if let Some(c) = adv.adv_content {
        parts.push((c, w.content_adv));
    }
    let mut total = g.scale(parts[0].0, parts[0].1);
    for &(v, lambda) in &parts[1..] {
        let s = g.scale(v, lambda);
        total = g.add(total, s)?;
    }
    let val = |v: Var| g.value(v).item().as_f64();
    let terms = LossTerms {
        adv_content: adv.adv_content.map(val).unwrap_or(0.0),
        cc: val(t.cc),
        adv_domain: val(adv.adv_domain),
        recon: val(t.recon),
        latent: val(t.latent),
        kl: val(t.kl),
        content_l1: val(t.content_l1),
    };
    Ok((total, terms))
}

/// `(−log D_X(x) − log(1 − D_X(u)), −log D_Y(y) − log(1 − D_Y(v)), saturated)`.
pub fn domain_discriminator_loss<T: Scalar>(
    model: &Model<T>,
    g: &mut Graph<T>,
    x: Var,
    y: Var,
    u: Var,
    v: Var,
) -> Result<(Var, Var, bool)> {
    let p_x = model.discriminate_domain(g, x, Domain::X)?;
    let p_u = model.discriminate_domain(g, u, Domain::X)?;
    let p_y = model.discriminate_domain(g, y, Domain::Y)?;
    let p_v = model.discriminate_domain(g, v, Domain::Y)?;
    let (d_x, s1) = losses::g_discriminator_bce(g, p_x, p_u)?;
    let (d_y, s2) = losses::g_discriminator_bce(g, p_y, p_v)?;
    Ok((d_x, d_y, s1 || s2))
}

/// `−log D^c(c_x) − log(1 − D^c(c_y))`.
pub fn content_discriminator_loss<T: Scalar>(
    model: &Model<T>,
    g: &mut Graph<T>,
    c_x: Var,
    c_y: Var,
) -> Result<(Var, bool)> {
    let p_x = model.discriminate_content(g, c_x)?;
    let p_y = model.discriminate_content(g, c_y)?;
    losses::g_discriminator_bce(g, p_x, p_y)
}
