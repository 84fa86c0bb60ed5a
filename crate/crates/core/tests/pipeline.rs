//! End to end: simulate, train, persist, reload, explain.

use smoothlime::datasets::{generate_simulated, split_dataset};
use smoothlime::experiments::{test_points, ExperimentConfig};
use smoothlime::explainers::{clime, expected_explanation_mc, explanation_distance, smoothgrad};
use smoothlime::model::{load_model, save_model, train};
use smoothlime::{AnyModel, Norm, PerturbationConfig, TrainConfig};

#[test]
fn saved_model_explains_like_the_trained_one() {
    let data = split_dataset(&generate_simulated(1000, 8), 0.8, 8).unwrap();
    let (model, _) = train(&data, &TrainConfig::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    save_model(&AnyModel::from(model.clone()), &path).unwrap();
    let loaded = load_model(&path).unwrap();

    let cfg = PerturbationConfig::new(vec![0.2, -0.4], 1.0, 2000, 3).unwrap();
    assert_eq!(smoothgrad(&model, &cfg).unwrap(), smoothgrad(&loaded, &cfg).unwrap());
    assert_eq!(clime(&model, &cfg).unwrap(), clime(&loaded, &cfg).unwrap());
}

#[test]
fn both_methods_approach_the_expected_explanation() {
    let data = split_dataset(&generate_simulated(1000, 0), 0.8, 0).unwrap();
    let (model, _) = train(&data, &TrainConfig::default()).unwrap();
    let points = test_points(&data, &ExperimentConfig::default()).unwrap();
    assert_eq!(points.len(), 50);

    let (mut between, mut sg_oracle, mut cl_oracle) = (0.0, 0.0, 0.0);
    for (i, x) in points.iter().enumerate() {
        let i = i as u64;
        let sg = smoothgrad(&model, &PerturbationConfig::new(x.clone(), 1.0, 100_000, 3 * i).unwrap()).unwrap();
        let cl = clime(&model, &PerturbationConfig::new(x.clone(), 1.0, 100_000, 3 * i + 1).unwrap()).unwrap();
        let oracle = expected_explanation_mc(&model, x, 1.0, 1_000_000, 3 * i + 2).unwrap();
        between += explanation_distance(&sg, &cl, Norm::L1).unwrap();
        sg_oracle += explanation_distance(&sg, &oracle, Norm::L1).unwrap();
        cl_oracle += explanation_distance(&cl, &oracle, Norm::L1).unwrap();
    }
    let m = points.len() as f64;
    let (between, sg_oracle, cl_oracle) = (between / m, sg_oracle / m, cl_oracle / m);
    assert!(between <= 0.05, "smoothgrad vs clime {between}");
    assert!(sg_oracle <= 0.05, "smoothgrad vs oracle {sg_oracle}");
    assert!(cl_oracle <= 0.05, "clime vs oracle {cl_oracle}");
}
