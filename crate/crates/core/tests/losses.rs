use autograd::{Graph, Tensor};
use dispair::image::Image;
use dispair::losses::*;
use dispair::{ContentCode, Domain};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn constant(v: f32, domain: Domain) -> Image {
    Image::new(Tensor::full(&[3, 4, 4], v), domain).unwrap()
}

#[test]
fn content_discriminator_side_at_confident_scores() {
    let v = content_adversarial_from_probs(&[0.9], &[0.1]);
    assert!((v.discriminator_side - 0.2107).abs() < 1e-4);
    assert!(!v.saturated);
}

#[test]
fn domain_adversarial_examples() {
    let v = domain_adversarial_from_probs(&[0.5], &[0.9]);
    assert!((v.generator_side - 0.1054).abs() < 1e-4);
    let perfect = domain_adversarial_from_probs(&[1.0 - 1e-12], &[1e-12]);
    assert!(perfect.discriminator_side < 1e-6);
    assert!(perfect.saturated);
}

#[test]
fn probabilities_are_clamped_and_flagged() {
    let (p, sat) = clamp_prob(0.0);
    assert_eq!(p, PROB_EPS);
    assert!(sat);
    let (p, sat) = clamp_prob(1.0);
    assert_eq!(p, 1.0 - PROB_EPS);
    assert!(sat);
    let v = domain_adversarial_from_probs(&[0.0], &[1.0]);
    assert!(v.discriminator_side.is_finite() && v.generator_side.is_finite());
}

#[test]
fn encoder_side_content_loss_is_minimal_at_one_half() {
    let at_half = content_adversarial_from_probs(&[0.5], &[0.5]).generator_side;
    assert!((at_half - 2f64.ln()).abs() < 1e-12);
    for i in 1..100 {
        let p = i as f64 / 100.0;
        for q in [0.05, 0.3, 0.5, 0.8] {
            let v = content_adversarial_from_probs(&[p], &[q]).generator_side;
            assert!(v >= at_half - 1e-12, "p={p} q={q}: {v}");
        }
    }
}

#[test]
fn cross_cycle_and_self_reconstruction_examples() {
    let x = constant(0.2, Domain::X);
    let y = constant(-0.4, Domain::Y);
    assert_eq!(cross_cycle_loss(&x, &y, &x, &y).unwrap(), 0.0);
    let xhat = constant(0.5, Domain::X);
    assert!((cross_cycle_loss(&x, &y, &xhat, &y).unwrap() - 0.3).abs() < 1e-6);
    assert_eq!(self_reconstruction_loss(&x, &x).unwrap(), 0.0);
    let shifted = constant(0.3, Domain::X);
    assert!((self_reconstruction_loss(&x, &shifted).unwrap() - 0.1).abs() < 1e-6);
    let small = Image::new(Tensor::full(&[3, 2, 2], 0.0), Domain::X).unwrap();
    assert!(self_reconstruction_loss(&x, &small).is_err());
}

#[test]
fn latent_and_content_regularizer_examples() {
    assert_eq!(latent_regression_loss(&[0.3; 8], &[0.3; 8]).unwrap(), 0.0);
    assert_eq!(latent_regression_loss(&[1.0; 8], &[0.0; 8]).unwrap(), 1.0);
    assert!(latent_regression_loss(&[1.0; 8], &[0.0; 4]).is_err());
    let zero = ContentCode::new(Tensor::zeros(&[4, 2, 2])).unwrap();
    assert_eq!(content_l1_regularizer(&zero), 0.0);
    let pm = ContentCode::new(Tensor::from_fn(&[4, 2, 2], |i| if i % 2 == 0 { 0.5 } else { -0.5 })).unwrap();
    assert!((content_l1_regularizer(&pm) - 0.5).abs() < 1e-12);
}

/// KL(N(mu, σ²) ‖ N(0, 1)) estimated as the sample mean of log q − log p.
fn kl_monte_carlo(mu: f64, logvar: f64, n: usize, rng: &mut ChaCha8Rng) -> (f64, f64) {
    let sd = (0.5 * logvar).exp();
    let q = Normal::new(mu, sd).unwrap();
    let samples: Vec<f64> = (0..n)
        .map(|_| {
            let z = q.sample(rng);
            let log_q = -0.5 * ((z - mu) / sd).powi(2) - sd.ln();
            let log_p = -0.5 * z * z;
            log_q - log_p
        })
        .collect();
    let mean = samples.iter().sum::<f64>() / n as f64;
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

#[test]
fn kl_matches_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for &(mu, lv) in &[(0.0, 0.0), (1.0, 0.0), (0.0, 4f64.ln()), (-0.7, -1.2), (1.5, 0.8)] {
        let (est, se) = kl_monte_carlo(mu, lv, 200_000, &mut rng);
        let exact = kl_divergence(&[mu], &[lv]);
        assert!((est - exact).abs() < 4.0 * se + 1e-9, "mu={mu} lv={lv}: mc {est} ± {se}, closed form {exact}");
    }
}

#[test]
fn kl_is_batch_averaged_in_graph_form() {
    let mut g = Graph::<f64>::inference();
    let mu = g.constant(Tensor::new(&[2, 2], vec![1.0, 0.0, 0.0, 0.0]));
    let lv = g.constant(Tensor::zeros(&[2, 2]));
    let kl = g_kl(&mut g, mu, lv).unwrap();
    assert!((g.value(kl).item() - 0.25).abs() < 1e-12);
}

#[test]
fn total_objective_defaults() {
    let w = LossWeights::default();
    assert_eq!(
        [w.content_adv, w.cross_cycle, w.domain_adv, w.recon, w.latent, w.kl, w.content_l1],
        [1.0, 10.0, 1.0, 10.0, 10.0, 0.01, 0.01]
    );
    let report = LossReport::new(LossTerms::default(), &w, 0.0, 0.0, 0.0, false);
    assert_eq!(report.total, 0.0);
    assert_eq!(report.csv_row(3).split(',').count(), METRICS_HEADER.split(',').count());
}

#[test]
fn non_finite_terms_are_named() {
    let terms = LossTerms {
        latent: f64::NAN,
        ..LossTerms::default()
    };
    let report = LossReport::new(terms, &LossWeights::default(), 0.0, 0.0, 0.0, false);
    assert_eq!(report.first_non_finite(), Some("latent"));
}

fn vec_f64(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0f64..3.0, len)
}

proptest! {
    #[test]
    fn kl_is_nonnegative(mu in vec_f64(8), lv in prop::collection::vec(-10.0f64..10.0, 8)) {
        prop_assert!(kl_divergence(&mu, &lv) >= 0.0);
    }

    #[test]
    fn l1_terms_are_nonnegative_and_symmetric(a in vec_f64(16), b in vec_f64(16)) {
        let ab = mean_abs_diff(&a, &b).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(ab, mean_abs_diff(&b, &a).unwrap());
        prop_assert_eq!(mean_abs_diff(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn total_is_linear_in_terms(t in prop::collection::vec(0.0f64..5.0, 7), s in 0.0f64..4.0) {
        let terms = LossTerms { adv_content: t[0], cc: t[1], adv_domain: t[2], recon: t[3], latent: t[4], kl: t[5], content_l1: t[6] };
        let scaled = LossTerms { adv_content: s * t[0], cc: s * t[1], adv_domain: s * t[2], recon: s * t[3], latent: s * t[4], kl: s * t[5], content_l1: s * t[6] };
        let w = LossWeights::default();
        let a = total_objective(&terms, &w);
        prop_assert!((total_objective(&scaled, &w) - s * a).abs() < 1e-9 * (1.0 + a));
        let by_hand: f64 = terms.named().iter().map(|(n, v)| v * match *n {
            "adv_content" => w.content_adv, "cc" => w.cross_cycle, "adv_domain" => w.domain_adv,
            "recon" => w.recon, "latent" => w.latent, "kl" => w.kl, _ => w.content_l1,
        }).sum();
        prop_assert!((a - by_hand).abs() < 1e-9 * (1.0 + a));
    }

    #[test]
    fn graph_and_value_forms_agree(mu in vec_f64(6), lv in prop::collection::vec(-5.0f64..5.0, 6),
                                   p in prop::collection::vec(0.01f64..0.99, 3), q in prop::collection::vec(0.01f64..0.99, 3)) {
        let mut g = Graph::<f64>::inference();
        let m = g.constant(Tensor::new(&[2, 3], mu.clone()));
        let l = g.constant(Tensor::new(&[2, 3], lv.clone()));
        let kl = g_kl(&mut g, m, l).unwrap();
        let per_row = (kl_divergence(&mu[..3], &lv[..3]) + kl_divergence(&mu[3..], &lv[3..])) / 2.0;
        prop_assert!((g.value(kl).item() - per_row).abs() < 1e-9);

        let pv = g.constant(Tensor::new(&[3, 1], p.clone()));
        let qv = g.constant(Tensor::new(&[3, 1], q.clone()));
        let (d, _) = g_discriminator_bce(&mut g, pv, qv).unwrap();
        let (c, _) = g_content_confusion(&mut g, pv, qv).unwrap();
        let dom = domain_adversarial_from_probs(&p, &q);
        let con = content_adversarial_from_probs(&p, &q);
        prop_assert!((g.value(d).item() - dom.discriminator_side).abs() < 1e-9);
        prop_assert!((g.value(d).item() - con.discriminator_side).abs() < 1e-9);
        prop_assert!((g.value(c).item() - con.generator_side).abs() < 1e-9);
    }
}
