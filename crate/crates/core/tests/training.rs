use tract::data::{batches, Standardization, StdMode, SynthBlobs};
use tract::nn::{forward, init_params, loss_and_backward, predictions, LayerSpec, ModelSpec};
use tract::optim::{OptKind, OptimizerRouting, OptimizerSettings, RoutedOptimizer};
use tract::params_io::{read_params, write_params};
use tract::TrActConfig;

fn linear_model(classes: usize) -> ModelSpec {
    ModelSpec {
        channels: 1,
        height: 8,
        width: 8,
        layers: vec![
            LayerSpec::FirstDense { inputs: 64, outputs: classes },
            LayerSpec::SoftmaxCrossEntropy { classes, label_smoothing: 0.0 },
        ],
    }
}

fn fit_linear(tract: TrActConfig) -> f64 {
    let mut gen = SynthBlobs::new(4, 50, (1, 8, 8), 3);
    gen.separation = 40.0;
    gen.noise = 4.0;
    let ds = gen.generate(0);
    let std = Standardization::fit(&ds, StdMode::PerChannelStandard).unwrap();
    let spec = linear_model(4);
    let mut params = init_params(&spec, 1).unwrap();
    let mut opt = RoutedOptimizer::new(OptimizerRouting::uniform(OptKind::Sgd), &OptimizerSettings::default()).unwrap();
    for epoch in 1..=20 {
        for idx in batches(ds.count, 32, 5, epoch) {
            let batch = std.apply(&ds, &idx).unwrap();
            let labels: Vec<usize> = idx.iter().map(|&i| ds.labels[i] as usize).collect();
            let (_, res) = loss_and_backward(&spec, &params, &batch, &labels, &tract).unwrap();
            opt.step(&mut params, &res.grads, 0.05).unwrap();
        }
    }
    let all: Vec<usize> = (0..ds.count).collect();
    let (logits, _) = forward(&spec, &params, &std.apply(&ds, &all).unwrap()).unwrap();
    let hits = predictions(&logits).iter().zip(&ds.labels).filter(|(p, l)| **p == **l as usize).count();
    hits as f64 / ds.count as f64
}

#[test]
fn separated_blobs_are_fit_exactly_by_a_linear_layer() {
    assert_eq!(fit_linear(TrActConfig::disabled()), 1.0);
    assert_eq!(fit_linear(TrActConfig::default()), 1.0);
}

#[test]
fn params_survive_a_file_round_trip() {
    let spec = linear_model(3);
    let params = init_params(&spec, 9).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.trct");
    write_params(&path, &params).unwrap();
    let back = read_params(&path).unwrap();
    let want: Vec<f64> = params.flatten().iter().map(|v| *v as f32 as f64).collect();
    assert_eq!(back.flatten(), want);
}
