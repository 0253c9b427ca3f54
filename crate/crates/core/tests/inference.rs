use dispair::analytic::LinearWorld;
use dispair::data::make_synthetic_dataset;
use dispair::inference::*;
use dispair::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_model() -> Model<f32> {
    let arch = ArchConfig {
        image_size: 16,
        base_channels: 4,
        content_channels: 4,
        disc_channels: 4,
        res_blocks: 1,
        outer_kernel: 3,
        ..ArchConfig::default()
    };
    Model::new(&arch, 7).unwrap()
}

fn shapes() -> (Vec<Image>, Vec<Image>) {
    let ds = make_synthetic_dataset(3, 16, 0).unwrap();
    (ds.data.domain(Domain::X).to_vec(), ds.data.domain(Domain::Y).to_vec())
}

#[test]
fn random_translation_targets_the_other_domain() {
    let m = small_model();
    let (xs, ys) = shapes();
    let outs = translate_random(&m, &xs[0], 5, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    assert_eq!(outs.len(), 5);
    assert!(outs.iter().all(|o| o.domain() == Domain::Y));
    let back = translate_random(&m, &ys[0], 2, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    assert!(back.iter().all(|o| o.domain() == Domain::X));
    assert!(translate_random(&m, &xs[0], 0, &mut ChaCha8Rng::seed_from_u64(1)).is_err());
}

#[test]
fn random_translation_is_seeded() {
    let m = small_model();
    let (xs, _) = shapes();
    let a = translate_random(&m, &xs[1], 4, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    let b = translate_random(&m, &xs[1], 4, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a[0], a[1]);
}

#[test]
fn guided_translation_takes_the_attribute_domain() {
    let m = small_model();
    let (xs, ys) = shapes();
    assert_eq!(translate_guided(&m, &xs[0], &ys[0]).unwrap().domain(), Domain::Y);
    assert_eq!(translate_guided(&m, &xs[0], &xs[1]).unwrap().domain(), Domain::X);
    assert_eq!(translate_guided(&m, &ys[0], &xs[1]).unwrap().domain(), Domain::X);
}

#[test]
fn guided_translation_is_exact_in_the_linear_world() {
    let w = LinearWorld::standard();
    let cases = [([0.1, -0.2], 0.05, [-0.15, 0.2], -0.1), ([0.0, 0.25], 0.2, [0.2, 0.1], 0.0)];
    for (c1, a1, c2, a2) in cases {
        for (dc, da) in [(Domain::X, Domain::Y), (Domain::Y, Domain::X), (Domain::X, Domain::X)] {
            let content_img = w.render(c1, a1, dc).unwrap();
            let attr_img = w.render(c2, a2, da).unwrap();
            let out = translate_guided(&w, &content_img, &attr_img).unwrap();
            let (c, a) = w.factors(&out);
            assert_eq!(out.domain(), da);
            assert!((c[0] - c1[0]).abs() < 1e-5 && (c[1] - c1[1]).abs() < 1e-5);
            assert!((a - a2).abs() < 1e-5);
        }
    }
}

#[test]
fn interpolation_endpoints_match_guided_outputs() {
    let m = small_model();
    let (xs, ys) = shapes();
    let a = m.encode_posterior(&ys[0]).unwrap().mean();
    let b = m.encode_posterior(&ys[1]).unwrap().mean();
    let outs = interpolate_attributes(&m, &xs[0], &a, &b, 5).unwrap();
    assert_eq!(outs.len(), 5);
    assert_eq!(outs[0], translate_guided(&m, &xs[0], &ys[0]).unwrap());
    assert_eq!(outs[4], translate_guided(&m, &xs[0], &ys[1]).unwrap());
    assert!(outs.iter().all(|o| o.domain() == Domain::Y));
}

#[test]
fn equal_endpoints_give_identical_outputs() {
    let m = small_model();
    let (xs, _) = shapes();
    let z = AttributeCode::sample_prior(8, Domain::Y, &mut ChaCha8Rng::seed_from_u64(3));
    let outs = interpolate_attributes(&m, &xs[2], &z, &z, 4).unwrap();
    assert!(outs.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn interpolation_is_linear_in_the_linear_world() {
    let w = LinearWorld::standard();
    let x = w.render([0.1, 0.1], 0.0, Domain::X).unwrap();
    let a = AttributeCode::from_value(vec![-0.2], Domain::Y);
    let b = AttributeCode::from_value(vec![0.2], Domain::Y);
    let outs = interpolate_attributes(&w, &x, &a, &b, 5).unwrap();
    let attrs: Vec<f64> = outs.iter().map(|o| w.factors(o).1).collect();
    for (i, v) in attrs.iter().enumerate() {
        assert!((v - (-0.2 + 0.1 * i as f64)).abs() < 1e-5, "{attrs:?}");
    }
}

#[test]
fn interpolation_needs_two_steps_and_matching_dims() {
    let m = small_model();
    let (xs, _) = shapes();
    let z = AttributeCode::from_value(vec![0.0; 8], Domain::Y);
    assert!(matches!(interpolate_attributes(&m, &xs[0], &z, &z, 1), Err(Error::Protocol(_))));
    let short = AttributeCode::from_value(vec![0.0; 3], Domain::Y);
    assert!(matches!(interpolate_attributes(&m, &xs[0], &z, &short, 3), Err(Error::Shape { .. })));
}

#[test]
fn inference_leaves_the_model_untouched() {
    let m = small_model();
    let ids: Vec<_> = m.params().ids().collect();
    let before = m.digest(&ids);
    let (xs, ys) = shapes();
    translate_random(&m, &xs[0], 3, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    translate_guided(&m, &xs[0], &ys[0]).unwrap();
    assert_eq!(m.digest(&ids), before);
}

#[test]
fn grid_is_written_as_one_strip() {
    let tmp = tempfile::tempdir().unwrap();
    let (xs, _) = shapes();
    let outs = vec![xs[1].clone(), xs[2].clone()];
    let path = tmp.path().join("grid.png");
    write_grid(&path, &xs[0], &outs).unwrap();
    let img = ::image::open(&path).unwrap();
    assert_eq!((img.width(), img.height()), (48, 16));
}
