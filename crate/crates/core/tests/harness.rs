use hybridseg::dataset::Dataset;
use hybridseg::events::io::read_pgm;
use hybridseg::events::synthetic::SynthConfig;
use hybridseg::harness::{
    ablation, predict_sample, run_eval, timestep_sweep, DataConfig, EvalOptions, EvalReport, ExperimentConfig,
    Toggles,
};
use hybridseg::metrics::{confusion, metrics};
use hybridseg::network::{HybridNetwork, NetworkConfig, TrainConfig, IGNORE_INDEX};

fn tiny_experiment() -> ExperimentConfig {
    ExperimentConfig {
        network: NetworkConfig {
            scales: vec![(2, 8), (4, 16)],
            ..NetworkConfig::default()
        },
        train: TrainConfig {
            iterations: 4,
            warmup: 1,
            batch_size: 2,
            ..TrainConfig::default()
        },
        data: DataConfig {
            synth: SynthConfig {
                width: 32,
                height: 32,
                ..SynthConfig::default()
            },
            train_samples: 4,
            test_samples: 2,
            ..DataConfig::default()
        },
    }
}

#[test]
fn emitted_images_and_report_match_the_predictions() {
    let exp = tiny_experiment();
    let net = HybridNetwork::build(exp.network.clone()).unwrap();
    let (_, test) = exp.data.generate().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let opts = EvalOptions {
        emit_images: Some(dir.path().join("images")),
        report: Some(dir.path().join("report.json")),
        ..EvalOptions::new(IGNORE_INDEX)
    };
    let report = run_eval(&net, &test, &opts).unwrap();

    let prepared = test.prepare(exp.network.bins).unwrap();
    let mut preds = Vec::new();
    let mut gts = Vec::new();
    for (i, s) in prepared.iter().enumerate() {
        let pred = predict_sample(&net, s).unwrap();
        let (w, h, pixels) = read_pgm(dir.path().join(format!("images/pred_{i:04}.pgm"))).unwrap();
        assert_eq!((w, h), (32, 32));
        assert_eq!(pixels.iter().map(|&p| p as usize).collect::<Vec<_>>(), pred);
        assert!(dir.path().join(format!("images/pred_{i:04}.ppm")).exists());
        preds.extend(pred);
        gts.extend(s.labels.iter().copied());
    }
    let m = metrics(&confusion(&preds, &gts, 3, IGNORE_INDEX).unwrap()).unwrap();
    assert_eq!(report.miou, m.miou);
    assert_eq!(report.accuracy, m.accuracy);

    let text = std::fs::read_to_string(dir.path().join("report.json")).unwrap();
    let parsed: EvalReport = serde_json::from_str(&text).unwrap();
    assert_eq!(parsed, report);
}

#[test]
fn labels_equal_to_predictions_score_perfectly() {
    let exp = tiny_experiment();
    let net = HybridNetwork::build(exp.network.clone()).unwrap();
    let mut data = Dataset::synthetic(9, 1, &exp.data.synth).unwrap();
    let prepared = data.prepare(exp.network.bins).unwrap();
    let pred = predict_sample(&net, &prepared[0]).unwrap();
    data.samples[0].labels = pred.iter().map(|&c| c as u8).collect();
    let report = run_eval(&net, &data, &EvalOptions::new(IGNORE_INDEX)).unwrap();
    assert_eq!(report.accuracy, 1.0);
    assert_eq!(report.miou, 1.0);
}

#[test]
fn sweep_rows_follow_the_list_and_repeat_exactly() {
    let exp = tiny_experiment();
    let one = timestep_sweep(&exp, &[1], &mut |_| {}).unwrap();
    assert_eq!(one.len(), 1);
    assert_eq!(one[0].timesteps, 1);
    let a = timestep_sweep(&exp, &[1, 3], &mut |_| {}).unwrap();
    let b = timestep_sweep(&exp, &[1, 3], &mut |_| {}).unwrap();
    assert_eq!(a, b);
    assert_eq!(a[0], one[0]);
    assert!(timestep_sweep(&exp, &[0], &mut |_| {}).is_err());
}

#[test]
fn ablation_extremes() {
    let exp = tiny_experiment();
    let sets = [
        Toggles {
            atw: false,
            eds: false,
            csf: false,
        },
        Toggles {
            atw: true,
            eds: true,
            csf: true,
        },
    ];
    let rows = ablation(&exp, &sets, &mut |_| {}).unwrap();
    assert_eq!(rows.len(), sets.len());
    assert!(rows[0].accuracy.is_finite() && rows[0].miou.is_finite());
    assert!(rows[1].params > rows[0].params);
    assert_eq!(rows[0].label, "F-E");
    assert_eq!(rows[1].label, "F-E+ATW+EDS+CSF");
}
