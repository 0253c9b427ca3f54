use autograd::Tensor;
use dispair::analytic::LinearWorld;
use dispair::data::*;
use dispair::evaluation::*;
use dispair::*;

fn tiny_config() -> TrainConfig {
    TrainConfig {
        arch: ArchConfig {
            image_size: 16,
            base_channels: 4,
            content_channels: 4,
            disc_channels: 4,
            res_blocks: 1,
            outer_kernel: 3,
            ..ArchConfig::default()
        },
        total_steps: 4,
        checkpoint_interval: 4,
        seed: 2,
        ..TrainConfig::default()
    }
}

fn model(seed: u64) -> Model<f32> {
    Model::new(&tiny_config().arch, seed).unwrap()
}

fn images(n: usize) -> Vec<Image> {
    make_synthetic_dataset(n, 16, 0).unwrap().data.domain(Domain::X).to_vec()
}

fn protocol(distance: Distance) -> DiversityProtocol {
    DiversityProtocol {
        n_images: 4,
        n_pairs: 10,
        distance,
    }
}

const DISTANCES: [Distance; 3] = [Distance::PixelL1, Distance::PixelL2, Distance::ContentFeatureL2];

#[test]
fn attribute_blind_model_has_zero_diversity() {
    let mut m = model(1);
    m.set_ignore_attribute(true);
    for d in DISTANCES {
        let r = diversity_score(&m, &images(4), &protocol(d), "attribute_ignored", 0, &mut eval_rng(0)).unwrap();
        assert_eq!(r.value, 0.0, "{}", d.name());
        assert_eq!(r.n_pairs, 10);
    }
}

#[test]
fn an_untrained_model_is_already_diverse() {
    let m = model(1);
    let r = diversity_score(&m, &images(4), &protocol(Distance::PixelL1), "full", 0, &mut eval_rng(0)).unwrap();
    assert!(r.value > 0.0);
    assert!(r.std.is_some());
    assert_eq!(r.metric, "diversity_pixel_l1");
}

#[test]
fn pairs_are_split_across_images() {
    let m = model(1);
    let p = DiversityProtocol {
        n_images: 3,
        n_pairs: 7,
        distance: Distance::PixelL2,
    };
    let r = diversity_score(&m, &images(5), &p, "full", 0, &mut eval_rng(0)).unwrap();
    assert_eq!((r.n_images, r.n_pairs), (3, 7));
}

#[test]
fn too_few_images_is_a_protocol_error() {
    let m = model(1);
    let err = diversity_score(&m, &images(2), &protocol(Distance::PixelL1), "full", 0, &mut eval_rng(0)).unwrap_err();
    assert!(matches!(err, Error::Protocol(_)), "{err}");
}

#[test]
fn evaluation_is_deterministic_and_read_only() {
    let m = model(3);
    let ids: Vec<_> = m.params().ids().collect();
    let before = m.digest(&ids);
    let run = || diversity_score(&m, &images(4), &protocol(Distance::ContentFeatureL2), "full", 5, &mut eval_rng(5)).unwrap();
    assert_eq!(run(), run());
    assert_eq!(m.digest(&ids), before);
}

#[test]
fn linear_world_reconstructs_pairs_exactly() {
    let w = LinearWorld::standard();
    let pairs = [([0.1, -0.2], 0.05, -0.1), ([0.2, 0.0], -0.2, 0.15), ([-0.1, 0.1], 0.0, 0.2)]
        .iter()
        .map(|&(c, ax, ay)| (w.render(c, ax, Domain::X).unwrap(), w.render(c, ay, Domain::Y).unwrap()))
        .collect();
    let r = reconstruction_error(&w, &PairedSet { pairs }, "analytic").unwrap();
    assert!(r.value < 1e-6, "{}", r.value);
    assert_eq!(r.variant, "analytic");
    assert!(reconstruction_error(&w, &PairedSet { pairs: vec![] }, "analytic").is_err());
}

#[test]
fn reconstruction_of_an_exact_copy_is_zero() {
    struct Copy(Image);
    impl Translator for Copy {
        fn attr_dim(&self) -> usize {
            1
        }
        fn encode_content(&self, _: &Image) -> Result<ContentCode> {
            ContentCode::new(Tensor::zeros(&[1, 1, 1]))
        }
        fn encode_posterior(&self, img: &Image) -> Result<AttributeCode> {
            Ok(AttributeCode::from_value(vec![0.0], img.domain()))
        }
        fn generate(&self, _: &ContentCode, _: &AttributeCode, d: Domain) -> Result<Image> {
            Ok(self.0.clone().with_domain(d))
        }
    }
    let ds = make_paired_synthetic(1, 16, 0).unwrap().0;
    let model = Copy(ds.pairs[0].1.clone());
    assert_eq!(reconstruction_error(&model, &ds, "copy").unwrap().value, 0.0);
}

#[test]
fn translated_training_rows_keep_their_labels() {
    let m = model(1);
    let spec = DigitSpec {
        count: 6,
        size: 16,
        channels: 3,
        seed: 0,
    };
    let source = make_source_digits(&spec).unwrap();
    let rows = translate_labeled(&m, &source, 3, &mut eval_rng(0)).unwrap();
    assert_eq!(rows.len(), 18);
    for (i, r) in rows.iter().enumerate() {
        assert_eq!(r.label(), source[i / 3].label());
        assert_eq!(r.domain(), Domain::Y);
    }
    assert_eq!(translate_labeled(&m, &source, 1, &mut eval_rng(0)).unwrap().len(), 6);
    let unlabeled = vec![source[0].clone().with_label(None)];
    assert!(translate_labeled(&m, &unlabeled, 1, &mut eval_rng(0)).is_err());
}

#[test]
fn adaptation_scoring_needs_target_labels() {
    let m = model(1);
    let spec = DigitSpec {
        count: 4,
        size: 16,
        channels: 3,
        seed: 0,
    };
    let source = make_source_digits(&spec).unwrap();
    let target: Vec<Image> = make_target_digits(&spec).unwrap().into_iter().map(|i| i.with_label(None)).collect();
    let clf = ClassifierConfig {
        epochs: 1,
        ..ClassifierConfig::default()
    };
    let err = domain_adaptation_eval(&m, &source, &target, 1, &clf, "full", &mut eval_rng(0)).unwrap_err();
    assert!(matches!(err, Error::Protocol(_)), "{err}");
    assert!(source_only_eval(&source, &target, &clf).is_err());
}

#[test]
fn classifier_learns_separable_digits() {
    let spec = |seed| DigitSpec {
        count: 300,
        size: 16,
        channels: 3,
        seed,
    };
    let train = make_source_digits(&spec(1)).unwrap();
    let test = make_source_digits(&spec(2)).unwrap();
    let acc = train_and_score(&train, &test, &ClassifierConfig::default()).unwrap();
    assert!(acc > 80.0, "accuracy {acc}");
}

#[test]
fn ablation_reports_name_their_variant() {
    let cfg = TrainConfig {
        dataset: DatasetSpec::Synthetic { count: 8 },
        ..tiny_config()
    };
    let data = dataset_from_config(&cfg).unwrap();
    let (paired, _) = make_paired_synthetic(3, 16, 9).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let p = protocol(Distance::PixelL1);
    let eval_images = data.domain(Domain::X).to_vec();
    for v in Variant::ALL {
        let res = run_ablation(&cfg, v, &data, &eval_images, &paired, &p, &tmp.path().join(v.name())).unwrap();
        assert_eq!(res.reports.len(), 2);
        assert!(res.reports.iter().all(|r| r.variant == v.name() && r.seed == cfg.seed));
        if v == Variant::AttributeIgnored {
            assert_eq!(res.reports[0].value, 0.0);
        } else {
            assert!(res.reports[0].value > 0.0);
        }
    }
}

#[test]
fn reports_serialize_to_csv() {
    let r = EvalReport {
        metric: "diversity_pixel_l1".into(),
        variant: "full".into(),
        value: 0.448,
        std: Some(0.012),
        n_images: 100,
        n_pairs: 1000,
        seed: 0,
    };
    assert_eq!(r.table_cell(), ".448 ± .012");
    let csv = reports_to_csv(&[r]);
    assert_eq!(csv.lines().next().unwrap(), EVAL_HEADER);
    assert_eq!(csv.lines().nth(1).unwrap(), "diversity_pixel_l1,full,0.448,0.012,100,1000,0");
    assert_eq!("pixel_l2".parse::<Distance>().unwrap(), Distance::PixelL2);
    assert!("lpips".parse::<Distance>().is_err());
}
