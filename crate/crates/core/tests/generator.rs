use domexp_core::data::{generate_domains, split, ClassLayout, DomainTransform};
use domexp_core::fusion::{accuracy, entropy_accuracy_report, Probe};
use domexp_core::nn::{train_classifier, TrainConfig};
use domexp_core::pipeline::{model_rng, run_benchmark, BenchmarkConfig};
use domexp_core::{DomainDataset, MlpModel, PredictionBatch, SplitSpec, SyntheticDomainConfig};

fn quick_train() -> TrainConfig {
    TrainConfig {
        hidden: vec![64],
        epochs: 20,
        learning_rate: 0.02,
        momentum: 0.9,
        ..TrainConfig::default()
    }
}

fn trained_on(ds: &DomainDataset, num_classes: usize, cfg: &TrainConfig) -> MlpModel {
    let mut rng = model_rng(17, 0);
    let mut model = MlpModel::init(ds.feature_dim(), &cfg.hidden, num_classes, &mut rng).unwrap();
    train_classifier(
        &mut model,
        ds.features().view(),
        ds.labels().unwrap(),
        cfg,
        &mut rng,
    )
    .unwrap();
    model
}

fn accuracy_on(model: &MlpModel, ds: &DomainDataset) -> f64 {
    let pred = PredictionBatch::from_scores(model.logits(ds.features().view()).unwrap());
    accuracy(&pred, ds.labels().unwrap()).unwrap()
}

#[test]
fn identity_transforms_give_indistinguishable_domains() {
    let cfg = SyntheticDomainConfig {
        sources: vec![DomainTransform::identity(); 3],
        new_domain: DomainTransform::identity(),
        seed: 2,
        ..SyntheticDomainConfig::default()
    };
    let domains = generate_domains(&cfg).unwrap();
    assert!(domains.iter().all(|d| d.len() == 1000));
    let parts = split(&domains[0], &SplitSpec::default()).unwrap();
    let model = trained_on(&parts.train, cfg.num_classes, &quick_train());
    let own = accuracy_on(&model, &parts.test);
    for other in &domains[1..] {
        let acc = accuracy_on(&model, other);
        assert!(
            (acc - own).abs() <= 0.03,
            "{}: {acc} vs own {own}",
            other.name()
        );
    }
}

#[test]
fn half_turn_on_a_ring_defeats_source_models() {
    let ring = |deg: f64| DomainTransform {
        rotation_deg: deg,
        rotation_plane: Some([0, 1]),
        ..DomainTransform::identity()
    };
    let cfg = SyntheticDomainConfig {
        num_classes: 4,
        feature_dim: 2,
        class_layout: ClassLayout::Ring { radius: 5.0 },
        sources: vec![ring(0.0), ring(0.0)],
        new_domain: ring(180.0),
        seed: 4,
        ..SyntheticDomainConfig::default()
    };
    let domains = generate_domains(&cfg).unwrap();
    let parts = split(&domains[0], &SplitSpec::default()).unwrap();
    let model = trained_on(&parts.train, cfg.num_classes, &quick_train());
    let chance = 1.0 / cfg.num_classes as f64;
    assert!(accuracy_on(&model, &parts.test) > 0.9);
    let rotated = accuracy_on(&model, &domains[2]);
    assert!(
        rotated <= chance + 0.05,
        "accuracy {rotated} after a half turn"
    );
}

#[test]
fn far_translated_source_gets_the_largest_weight() {
    for seed in 0..3 {
        let mut cfg = BenchmarkConfig::default().with_seed(seed);
        cfg.synthetic.sources = vec![
            DomainTransform::identity(),
            DomainTransform::rotated(0.0, 5.0),
            DomainTransform::identity(),
        ];
        cfg.synthetic.new_domain = DomainTransform::identity();
        cfg.hyperparams.epochs = 1;
        let out = run_benchmark(&cfg).unwrap();
        let w = &out.expansion.weights[0].weights;
        let top = (0..w.len()).max_by(|&a, &b| w[a].total_cmp(&w[b])).unwrap();
        assert_eq!(top, 1, "seed {seed}: weights {w:?}");
    }
}

#[test]
fn entropy_falls_as_accuracy_rises_across_graded_models() {
    let out = run_benchmark(&BenchmarkConfig::default().with_seed(1)).unwrap();
    let originals = out.expansion.ensemble.originals();
    let names = ["a", "b", "c"];
    let probes: Vec<Probe<'_>> = originals
        .iter()
        .zip(names)
        .flat_map(|(model, name)| {
            out.domains.iter().map(move |d| Probe {
                model_name: name,
                model,
                data: &d.test,
            })
        })
        .collect();
    let report = entropy_accuracy_report(&probes).unwrap();
    assert_eq!(report.points.len(), 12);
    assert!(!report.degenerate);
    assert!(report.spearman.unwrap() <= -0.5, "{:?}", report.spearman);
}

#[test]
fn default_benchmark_loss_total_does_not_increase() {
    let out = run_benchmark(&BenchmarkConfig::default().with_seed(7)).unwrap();
    let totals = out.expansion.round_totals();
    assert_eq!(totals.len(), out.expansion.weights.len());
    assert!(
        totals.last().unwrap() <= totals.first().unwrap(),
        "{totals:?}"
    );
}
