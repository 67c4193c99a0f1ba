//! Training runs, per-batch diagnostics and the step-time benchmark.

use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use crate::data::{batches, load_cifar10_bin, load_idx, RawDataset, Standardization, StdMode, SynthBlobs};
use crate::error::{Error, Result};
use crate::linalg::{frob_norm, Mat};
use crate::nn::{
    backward, forward, init_params, loss_and_backward, loss_and_grad, predictions, LayerSpec, ModelSpec,
    ParamStore,
};
use crate::optim::{lr_at, LrSchedule, OptKind, OptimizerRouting, OptimizerSettings, RoutedOptimizer};
use crate::params_io::write_params;
use crate::precond::{
    gram, standard_grad, standard_update_z, tract_grad_with, tract_update_z, SolveRoute, TrActConfig,
};
use crate::sample::cosine;
use crate::spectral::condition_number;
use crate::unfold::ConvGeom;

pub const CSV_HEADER: &str = "run_id,seed,epoch,split,loss,top1,wall_seconds,lambda,tract,lr_now";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetKind {
    Mnist,
    Cifar10,
    Synth,
}

impl FromStr for DatasetKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mnist" => Ok(DatasetKind::Mnist),
            "cifar10" => Ok(DatasetKind::Cifar10),
            "synth" => Ok(DatasetKind::Synth),
            _ => Err(Error::InvalidArgument(format!("unknown dataset '{s}' (mnist|cifar10|synth)"))),
        }
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DatasetKind::Mnist => "mnist",
            DatasetKind::Cifar10 => "cifar10",
            DatasetKind::Synth => "synth",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Mlp,
    Cnn,
    PatchMlp,
}

impl FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mlp" => Ok(Preset::Mlp),
            "cnn" => Ok(Preset::Cnn),
            "patch-mlp" => Ok(Preset::PatchMlp),
            _ => Err(Error::InvalidArgument(format!("unknown model '{s}' (mlp|cnn|patch-mlp)"))),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Mlp => "mlp",
            Preset::Cnn => "cnn",
            Preset::PatchMlp => "patch-mlp",
        })
    }
}

impl Preset {
    /// Layer chain for images of shape `c×h×w` with `classes` outputs.
    /// `smoothing` overrides the preset's label smoothing.
    pub fn build(self, c: usize, h: usize, w: usize, classes: usize, smoothing: Option<f64>) -> Result<ModelSpec> {
        let layers = match self {
            Preset::Mlp => vec![
                LayerSpec::FirstDense { inputs: c * h * w, outputs: 256 },
                LayerSpec::Relu,
                LayerSpec::Dense { inputs: 256, outputs: classes },
                LayerSpec::SoftmaxCrossEntropy { classes, label_smoothing: smoothing.unwrap_or(0.0) },
            ],
            Preset::Cnn => vec![
                LayerSpec::FirstConv { geom: ConvGeom::square(3, 1, 1), out_channels: 32 },
                LayerSpec::Relu,
                LayerSpec::GlobalAvgPool,
                LayerSpec::Dense { inputs: 32, outputs: 64 },
                LayerSpec::Relu,
                LayerSpec::Dense { inputs: 64, outputs: classes },
                LayerSpec::SoftmaxCrossEntropy { classes, label_smoothing: smoothing.unwrap_or(0.0) },
            ],
            Preset::PatchMlp => vec![
                LayerSpec::FirstPatchEmbed { patch: 4, dim: 64 },
                LayerSpec::Relu,
                LayerSpec::GlobalAvgPool,
                LayerSpec::Dense { inputs: 64, outputs: 128 },
                LayerSpec::Relu,
                LayerSpec::Dense { inputs: 128, outputs: classes },
                LayerSpec::SoftmaxCrossEntropy { classes, label_smoothing: smoothing.unwrap_or(0.1) },
            ],
        };
        let spec = ModelSpec { channels: c, height: h, width: w, layers };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScheduleKind {
    Constant,
    Cosine,
    Step,
}

impl FromStr for ScheduleKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(ScheduleKind::Constant),
            "cosine" => Ok(ScheduleKind::Cosine),
            "step" => Ok(ScheduleKind::Step),
            _ => Err(Error::InvalidArgument(format!("unknown schedule '{s}' (constant|cosine|step)"))),
        }
    }
}

impl ScheduleKind {
    pub fn schedule(self, total_steps: usize) -> LrSchedule {
        match self {
            ScheduleKind::Constant => LrSchedule::Constant,
            ScheduleKind::Cosine => LrSchedule::Cosine { total_steps },
            ScheduleKind::Step => LrSchedule::thirds(total_steps, 0.1),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub dataset: DatasetKind,
    pub data_dir: Option<PathBuf>,
    /// Keep only the first `n` training examples (synth: total generated).
    pub train_size: Option<usize>,
    pub test_size: Option<usize>,
    /// Seed of the synthetic blobs; independent of the run seed.
    pub data_seed: u64,
    pub model: Preset,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptKind,
    pub first_layer_optimizer: Option<OptKind>,
    pub lr: f64,
    pub schedule: ScheduleKind,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lambda: f64,
    pub tract: bool,
    pub standardize: StdMode,
    pub label_smoothing: Option<f64>,
    pub seed: u64,
    pub out: Option<PathBuf>,
    /// When off, `wall_seconds` is written as 0 so reruns compare byte for byte.
    pub timing: bool,
    pub run_id: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: DatasetKind::Synth,
            data_dir: None,
            train_size: None,
            test_size: None,
            data_seed: 0,
            model: Preset::Mlp,
            epochs: 10,
            batch_size: 128,
            optimizer: OptKind::Sgd,
            first_layer_optimizer: None,
            lr: 0.05,
            schedule: ScheduleKind::Constant,
            momentum: 0.9,
            weight_decay: 0.0,
            lambda: 0.1,
            tract: true,
            standardize: StdMode::PerChannelStandard,
            label_smoothing: None,
            seed: 0,
            out: None,
            timing: true,
            run_id: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidArgument(format!("bad value '{value}' for {key}")))
}

fn parse_switch(key: &str, value: &str) -> Result<bool> {
    match value {
        "on" | "true" | "1" | "yes" => Ok(true),
        "off" | "false" | "0" | "no" => Ok(false),
        _ => Err(Error::InvalidArgument(format!("bad value '{value}' for {key} (on|off)"))),
    }
}

impl RunConfig {
    /// Sets one field by its flag name (`batch-size` or `batch_size`).
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().trim_start_matches("--").replace('_', "-");
        let v = value.trim();
        match key.as_str() {
            "dataset" => self.dataset = v.parse()?,
            "data-dir" => self.data_dir = Some(PathBuf::from(v)),
            "train-size" => self.train_size = Some(parse(&key, v)?),
            "test-size" => self.test_size = Some(parse(&key, v)?),
            "data-seed" => self.data_seed = parse(&key, v)?,
            "model" => self.model = v.parse()?,
            "epochs" => self.epochs = parse(&key, v)?,
            "batch-size" => self.batch_size = parse(&key, v)?,
            "optimizer" => self.optimizer = v.parse()?,
            "first-layer-optimizer" => self.first_layer_optimizer = Some(v.parse()?),
            "lr" => self.lr = parse(&key, v)?,
            "schedule" => self.schedule = v.parse()?,
            "momentum" => self.momentum = parse(&key, v)?,
            "weight-decay" => self.weight_decay = parse(&key, v)?,
            "lambda" => self.lambda = parse(&key, v)?,
            "tract" => self.tract = parse_switch(&key, v)?,
            "standardize" => self.standardize = v.parse()?,
            "label-smoothing" => self.label_smoothing = Some(parse(&key, v)?),
            "seed" => self.seed = parse(&key, v)?,
            "out" => self.out = Some(PathBuf::from(v)),
            "timing" => self.timing = parse_switch(&key, v)?,
            "run-id" => self.run_id = Some(v.to_string()),
            _ => return Err(Error::InvalidArgument(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    /// Applies a `key = value` file; `#` starts a comment.
    pub fn apply_file_text(&mut self, text: &str) -> Result<()> {
        for (no, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidArgument(format!("config line {}: expected key=value", no + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.epochs == 0 {
            return bad("epochs must be positive".into());
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be positive, got {}", self.lambda));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum {} outside [0, 1)", self.momentum));
        }
        if !(self.weight_decay >= 0.0) {
            return bad(format!("weight decay must be non-negative, got {}", self.weight_decay));
        }
        if matches!(self.train_size, Some(0)) || matches!(self.test_size, Some(0)) {
            return bad("split sizes must be positive".into());
        }
        if let Some(ls) = self.label_smoothing {
            if !(0.0..1.0).contains(&ls) {
                return bad(format!("label smoothing {ls} outside [0, 1)"));
            }
        }
        Ok(())
    }

    pub fn tract_config(&self) -> TrActConfig {
        if self.tract {
            TrActConfig::new(self.lambda)
        } else {
            TrActConfig::disabled()
        }
    }

    pub fn routing(&self) -> OptimizerRouting {
        OptimizerRouting {
            first_layer: self.first_layer_optimizer.unwrap_or(self.optimizer),
            rest: self.optimizer,
        }
    }

    pub fn settings(&self) -> OptimizerSettings {
        OptimizerSettings {
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            ..OptimizerSettings::default()
        }
    }

    pub fn run_id(&self) -> String {
        self.run_id.clone().unwrap_or_else(|| {
            format!(
                "{}-{}-{}-lam{}-lr{}-s{}",
                self.model,
                self.dataset,
                if self.tract { "tract" } else { "base" },
                self.lambda,
                self.lr,
                self.seed
            )
        })
    }
}

/// Train and test splits, raw bytes.
#[derive(Clone, Debug)]
pub struct Splits {
    pub train: RawDataset,
    pub test: RawDataset,
}

fn data_dir(cfg: &RunConfig) -> Result<&Path> {
    cfg.data_dir
        .as_deref()
        .ok_or_else(|| Error::Data(format!("dataset {} needs --data-dir", cfg.dataset)))
}

pub fn load_splits(cfg: &RunConfig) -> Result<Splits> {
    let (train, test) = match cfg.dataset {
        DatasetKind::Synth => {
            let per_class = |n: usize| n.div_ceil(10);
            let mut gen = SynthBlobs::new(10, per_class(cfg.train_size.unwrap_or(10_000)), (1, 28, 28), cfg.data_seed);
            let train = gen.generate(0);
            gen.per_class = per_class(cfg.test_size.unwrap_or(2_000));
            (train, gen.generate(1))
        }
        DatasetKind::Mnist => {
            let dir = data_dir(cfg)?;
            (
                load_idx(&dir.join("train-images-idx3-ubyte"), &dir.join("train-labels-idx1-ubyte"))?,
                load_idx(&dir.join("t10k-images-idx3-ubyte"), &dir.join("t10k-labels-idx1-ubyte"))?,
            )
        }
        DatasetKind::Cifar10 => {
            let dir = data_dir(cfg)?;
            let mut train = load_cifar10_bin(&dir.join("data_batch_1.bin"))?;
            for i in 2..=5 {
                train = train.concat(&load_cifar10_bin(&dir.join(format!("data_batch_{i}.bin")))?)?;
            }
            (train, load_cifar10_bin(&dir.join("test_batch.bin"))?)
        }
    };
    let train = match cfg.train_size {
        Some(n) => train.take(n),
        None => train,
    };
    let test = match cfg.test_size {
        Some(n) => test.take(n),
        None => test,
    };
    if train.is_empty() {
        return Err(Error::Data("training split is empty".into()));
    }
    Ok(Splits { train, test })
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub run_id: String,
    pub seed: u64,
    pub epoch: usize,
    /// `train`, `test`, or `aborted`.
    pub split: String,
    pub loss: f64,
    pub top1: f64,
    pub wall_seconds: f64,
    pub lambda: f64,
    pub tract: bool,
    pub lr_now: f64,
}

impl MetricsRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{:.3},{},{},{}",
            self.run_id,
            self.seed,
            self.epoch,
            self.split,
            self.loss,
            self.top1,
            self.wall_seconds,
            self.lambda,
            if self.tract { "on" } else { "off" },
            self.lr_now
        )
    }
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.csv_line());
        s.push('\n');
    }
    s
}

/// Mean loss and top-1 accuracy over a whole split.
pub fn evaluate(spec: &ModelSpec, params: &ParamStore, std: &Standardization, ds: &RawDataset) -> Result<(f64, f64)> {
    const CHUNK: usize = 500;
    let (mut loss_sum, mut correct) = (0.0, 0usize);
    let idx: Vec<usize> = (0..ds.count).collect();
    for chunk in idx.chunks(CHUNK) {
        let batch = std.apply(ds, chunk)?;
        let labels: Vec<usize> = chunk.iter().map(|&i| ds.labels[i] as usize).collect();
        let (logits, _) = forward(spec, params, &batch)?;
        let (loss, _) = loss_and_grad(&logits, &labels, spec.label_smoothing())?;
        loss_sum += loss * chunk.len() as f64;
        correct += predictions(&logits).iter().zip(&labels).filter(|(p, l)| p == l).count();
    }
    let n = ds.count.max(1) as f64;
    Ok((loss_sum / n, correct as f64 / n))
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub rows: Vec<MetricsRow>,
    pub params: ParamStore,
    pub aborted: bool,
}

impl TrainOutcome {
    pub fn loss_at(&self, epoch: usize, split: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.epoch == epoch && r.split == split)
            .map(|r| r.loss)
    }

    pub fn final_row(&self, split: &str) -> Option<&MetricsRow> {
        self.rows.iter().rev().find(|r| r.split == split)
    }
}

pub fn model_for(cfg: &RunConfig, splits: &Splits) -> Result<ModelSpec> {
    let t = &splits.train;
    cfg.model.build(t.c, t.h, t.w, t.classes, cfg.label_smoothing)
}

/// Runs the configured training on already-loaded splits. Epoch 0 rows
/// evaluate the initial parameters.
pub fn train_on(cfg: &RunConfig, splits: &Splits) -> Result<TrainOutcome> {
    cfg.validate()?;
    let spec = model_for(cfg, splits)?;
    let std = Standardization::fit(&splits.train, cfg.standardize)?;
    let mut params = init_params(&spec, cfg.seed)?;
    let tract = cfg.tract_config();
    let mut opt = RoutedOptimizer::new(cfg.routing(), &cfg.settings())?;
    let steps_per_epoch = splits.train.count.div_ceil(cfg.batch_size);
    let schedule = cfg.schedule.schedule(cfg.epochs * steps_per_epoch);
    schedule.validate()?;

    let start = Instant::now();
    let run_id = cfg.run_id();
    let row = |epoch: usize, split: &str, loss: f64, top1: f64, lr_now: f64| MetricsRow {
        run_id: run_id.clone(),
        seed: cfg.seed,
        epoch,
        split: split.to_string(),
        loss,
        top1,
        wall_seconds: if cfg.timing { start.elapsed().as_secs_f64() } else { 0.0 },
        lambda: cfg.lambda,
        tract: cfg.tract,
        lr_now,
    };

    let mut rows = Vec::new();
    let mut lr_now = lr_at(&schedule, 0, cfg.lr);
    let eval_rows = |params: &ParamStore, epoch: usize, lr_now: f64, rows: &mut Vec<MetricsRow>| -> Result<()> {
        let (l, a) = evaluate(&spec, params, &std, &splits.train)?;
        rows.push(row(epoch, "train", l, a, lr_now));
        if !splits.test.is_empty() {
            let (l, a) = evaluate(&spec, params, &std, &splits.test)?;
            rows.push(row(epoch, "test", l, a, lr_now));
        }
        Ok(())
    };
    eval_rows(&params, 0, lr_now, &mut rows)?;

    let mut step = 0usize;
    for epoch in 1..=cfg.epochs {
        for idx in batches(splits.train.count, cfg.batch_size, cfg.seed, epoch as u64) {
            lr_now = lr_at(&schedule, step, cfg.lr);
            let batch = std.apply(&splits.train, &idx)?;
            let labels: Vec<usize> = idx.iter().map(|&i| splits.train.labels[i] as usize).collect();
            let (loss, res) = loss_and_backward(&spec, &params, &batch, &labels, &tract)?;
            if !loss.is_finite() {
                rows.push(row(epoch, "aborted", f64::NAN, f64::NAN, lr_now));
                return Ok(TrainOutcome { rows, params, aborted: true });
            }
            opt.step(&mut params, &res.grads, lr_now)?;
            step += 1;
        }
        if !params.all_finite() {
            rows.push(row(epoch, "aborted", f64::NAN, f64::NAN, lr_now));
            return Ok(TrainOutcome { rows, params, aborted: true });
        }
        eval_rows(&params, epoch, lr_now, &mut rows)?;
    }
    Ok(TrainOutcome { rows, params, aborted: false })
}

pub fn train(cfg: &RunConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let splits = load_splits(cfg)?;
    train_on(cfg, &splits)
}

/// Writes `metrics.csv` and `params.trct` into `dir`.
pub fn write_outputs(dir: &Path, outcome: &TrainOutcome) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut f = fs::File::create(dir.join("metrics.csv"))?;
    f.write_all(metrics_csv(&outcome.rows).as_bytes())?;
    write_params(&dir.join("params.trct"), &outcome.params)
}

#[derive(Clone, Debug, PartialEq)]
pub struct InspectReport {
    pub n: usize,
    pub effective_batch: usize,
    pub grad_z_norm: f64,
    pub dz_standard_norm: f64,
    pub dz_tract_norm: f64,
    pub cos_tract_descent: f64,
    pub cos_standard_descent: f64,
    pub cos_tract_standard: f64,
    pub gram_condition: f64,
    pub gram_solve_ms: f64,
    pub matmul_ms: f64,
}

impl fmt::Display for InspectReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "n = {}, B = {}", self.n, self.effective_batch)?;
        writeln!(f, "|grad_z|                 {:.6e}", self.grad_z_norm)?;
        writeln!(f, "|dz standard|            {:.6e}", self.dz_standard_norm)?;
        writeln!(f, "|dz tract|               {:.6e}", self.dz_tract_norm)?;
        writeln!(f, "cos(dz tract, -grad_z)   {:.6}", self.cos_tract_descent)?;
        writeln!(f, "cos(dz std, -grad_z)     {:.6}", self.cos_standard_descent)?;
        writeln!(f, "cos(dz tract, dz std)    {:.6}", self.cos_tract_standard)?;
        writeln!(f, "gram condition           {:.6e}", self.gram_condition)?;
        writeln!(f, "gram + solve             {:.3} ms", self.gram_solve_ms)?;
        write!(f, "plain matmul             {:.3} ms", self.matmul_ms)
    }
}

fn best_ms<T>(reps: usize, mut f: impl FnMut() -> Result<T>) -> Result<f64> {
    let mut best = f64::INFINITY;
    for _ in 0..reps {
        let t = Instant::now();
        f()?;
        best = best.min(t.elapsed().as_secs_f64() * 1e3);
    }
    Ok(best)
}

/// Diagnostics for one first-layer input `x` and pre-activation gradient.
pub fn inspect_batch(grad_z: &Mat, x: &Mat, lambda: f64, eta: f64) -> Result<InspectReport> {
    let dz_std = standard_update_z(grad_z, x, eta)?;
    let dz_tract = tract_update_z(grad_z, x, lambda, eta)?;
    let descent = grad_z.scale(-1.0);
    let g = gram(x, lambda)?;
    Ok(InspectReport {
        n: x.rows(),
        effective_batch: x.cols(),
        grad_z_norm: frob_norm(grad_z),
        dz_standard_norm: frob_norm(&dz_std),
        dz_tract_norm: frob_norm(&dz_tract),
        cos_tract_descent: cosine(&dz_tract, &descent),
        cos_standard_descent: cosine(&dz_std, &descent),
        cos_tract_standard: cosine(&dz_tract, &dz_std),
        gram_condition: condition_number(g.matrix()),
        gram_solve_ms: best_ms(5, || tract_grad_with(grad_z, x, lambda, SolveRoute::Auto))?,
        matmul_ms: best_ms(5, || standard_grad(grad_z, x))?,
    })
}

/// Diagnostics on batch `batch_index` of epoch 1, at the initial parameters.
pub fn inspect(cfg: &RunConfig, batch_index: usize) -> Result<InspectReport> {
    cfg.validate()?;
    let splits = load_splits(cfg)?;
    let spec = model_for(cfg, &splits)?;
    let std = Standardization::fit(&splits.train, cfg.standardize)?;
    let params = init_params(&spec, cfg.seed)?;
    let order = batches(splits.train.count, cfg.batch_size, cfg.seed, 1);
    let idx = order.get(batch_index).ok_or_else(|| {
        Error::InvalidArgument(format!("batch index {batch_index} beyond {} batches", order.len()))
    })?;
    let batch = std.apply(&splits.train, idx)?;
    let labels: Vec<usize> = idx.iter().map(|&i| splits.train.labels[i] as usize).collect();
    let (logits, cache) = forward(&spec, &params, &batch)?;
    let (_, gl) = loss_and_grad(&logits, &labels, spec.label_smoothing())?;
    let res = backward(&spec, &params, &cache, &gl, &TrActConfig::disabled())?;
    inspect_batch(&res.grad_z, &cache.x.data, cfg.lambda, cfg.lr)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BenchStatus {
    Ok,
    Warn,
    Fail,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub steps: usize,
    pub ms_per_step_off: f64,
    pub ms_per_step_on: f64,
    pub overhead_pct: f64,
}

pub const BENCH_WARN_PCT: f64 = 25.0;
pub const BENCH_FAIL_PCT: f64 = 50.0;

impl BenchReport {
    pub fn status(&self) -> BenchStatus {
        if !(self.overhead_pct <= BENCH_FAIL_PCT) {
            BenchStatus::Fail
        } else if self.overhead_pct > BENCH_WARN_PCT {
            BenchStatus::Warn
        } else {
            BenchStatus::Ok
        }
    }
}

/// `v` rounded to `digits` significant digits.
pub fn format_sig(v: f64, digits: usize) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v:.prec$}", prec = digits.saturating_sub(1));
    }
    let mag = v.abs().log10().floor() as i64;
    let decimals = (digits as i64 - 1 - mag).max(0) as usize;
    format!("{v:.decimals$}")
}

impl fmt::Display for BenchReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "steps per arm            {}", self.steps)?;
        writeln!(f, "tract off                {} ms/step", format_sig(self.ms_per_step_off, 4))?;
        writeln!(f, "tract on                 {} ms/step", format_sig(self.ms_per_step_on, 4))?;
        write!(f, "overhead                 {}%", format_sig(self.overhead_pct, 4))
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

/// Per-step time (forward, backward, optimizer) with TrAct off and on.
/// The arms alternate in `rounds` blocks of `steps` steps; the median block
/// is reported.
pub fn bench_on(cfg: &RunConfig, splits: &Splits, steps: usize, rounds: usize) -> Result<BenchReport> {
    cfg.validate()?;
    if steps == 0 || rounds == 0 {
        return Err(Error::InvalidArgument("bench needs at least one step and round".into()));
    }
    let spec = model_for(cfg, splits)?;
    let std = Standardization::fit(&splits.train, cfg.standardize)?;
    let order: Vec<Vec<usize>> = batches(splits.train.count, cfg.batch_size, cfg.seed, 1)
        .into_iter()
        .filter(|b| b.len() == cfg.batch_size)
        .collect();
    if order.is_empty() {
        return Err(Error::Data("not enough examples for one full batch".into()));
    }
    let prepared: Vec<_> = order
        .iter()
        .take(8)
        .map(|idx| {
            let labels: Vec<usize> = idx.iter().map(|&i| splits.train.labels[i] as usize).collect();
            std.apply(&splits.train, idx).map(|b| (b, labels))
        })
        .collect::<Result<_>>()?;

    struct Arm {
        tract: TrActConfig,
        params: ParamStore,
        opt: RoutedOptimizer,
        at: usize,
    }
    let mut arms = Vec::new();
    for tract in [TrActConfig::disabled(), TrActConfig::new(cfg.lambda)] {
        arms.push(Arm {
            tract,
            params: init_params(&spec, cfg.seed)?,
            opt: RoutedOptimizer::new(cfg.routing(), &cfg.settings())?,
            at: 0,
        });
    }
    let run = |arm: &mut Arm, k: usize| -> Result<f64> {
        let t = Instant::now();
        for _ in 0..k {
            let (batch, labels) = &prepared[arm.at % prepared.len()];
            arm.at += 1;
            let (_, res) = loss_and_backward(&spec, &arm.params, batch, labels, &arm.tract)?;
            arm.opt.step(&mut arm.params, &res.grads, cfg.lr)?;
        }
        Ok(t.elapsed().as_secs_f64() * 1e3 / k as f64)
    };
    for arm in arms.iter_mut() {
        run(arm, 2)?;
    }
    let (mut off, mut on) = (Vec::new(), Vec::new());
    for _ in 0..rounds {
        off.push(run(&mut arms[0], steps)?);
        on.push(run(&mut arms[1], steps)?);
    }
    let (off, on) = (median(off), median(on));
    Ok(BenchReport {
        steps: steps * rounds,
        ms_per_step_off: off,
        ms_per_step_on: on,
        overhead_pct: (on / off - 1.0) * 100.0,
    })
}

pub fn bench(cfg: &RunConfig, steps: usize, rounds: usize) -> Result<BenchReport> {
    cfg.validate()?;
    let splits = load_splits(cfg)?;
    bench_on(cfg, &splits, steps, rounds)
}
