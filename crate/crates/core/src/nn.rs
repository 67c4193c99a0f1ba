//! A small feed-forward network with hand-written forward and backward
//! passes. Layer 0 is always the embedding layer whose weight gradient may be
//! replaced by the TrAct gradient; everything downstream is trained with the
//! ordinary gradient.
//!
//! Activations are `features × columns`. After the first layer there is one
//! column per output position per example (`b·P`); global average pooling
//! collapses positions back to one column per example.

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{shape_err, Error, Result};
use crate::linalg::{matmul, matmul_nt, matmul_tn, Mat};
use crate::precond::{precondition_inputs_with, standard_grad, tract_grad_with, TrActConfig, TrActMethod};
use crate::unfold::{flatten_dense, im2col, patchify, ConvGeom, ImageBatch, PatchMatrix};

#[derive(Clone, Debug, PartialEq)]
pub enum LayerSpec {
    FirstDense { inputs: usize, outputs: usize },
    FirstConv { geom: ConvGeom, out_channels: usize },
    FirstPatchEmbed { patch: usize, dim: usize },
    Dense { inputs: usize, outputs: usize },
    Relu,
    GlobalAvgPool,
    SoftmaxCrossEntropy { classes: usize, label_smoothing: f64 },
}

impl LayerSpec {
    fn is_first(&self) -> bool {
        matches!(
            self,
            LayerSpec::FirstDense { .. } | LayerSpec::FirstConv { .. } | LayerSpec::FirstPatchEmbed { .. }
        )
    }
}

/// Input dims plus the layer chain, ending in the loss layer.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub layers: Vec<LayerSpec>,
}

impl ModelSpec {
    /// Checks the chain and returns `(weight fan-in, fan-out)` for every
    /// parametrised layer.
    pub fn validate(&self) -> Result<Vec<Option<(usize, usize)>>> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.layers.is_empty() || !self.layers[0].is_first() {
            return bad("layer 0 must be the first-layer embedding".into());
        }
        if self.layers.iter().skip(1).any(LayerSpec::is_first) {
            return bad("only layer 0 may be a first-layer embedding".into());
        }
        let (c, h, w) = (self.channels, self.height, self.width);
        let mut shapes = Vec::with_capacity(self.layers.len());
        let (mut features, mut positions);
        match &self.layers[0] {
            LayerSpec::FirstDense { inputs, outputs } => {
                if *inputs != c * h * w {
                    return bad(format!("dense first layer expects {inputs} inputs, images have {}", c * h * w));
                }
                shapes.push(Some((*inputs, *outputs)));
                features = *outputs;
                positions = 1;
            }
            LayerSpec::FirstConv { geom, out_channels } => {
                let (oh, ow) = geom.output_dims(h, w)?;
                shapes.push(Some((geom.patch_len(c), *out_channels)));
                features = *out_channels;
                positions = oh * ow;
            }
            LayerSpec::FirstPatchEmbed { patch, dim } => {
                if *patch == 0 || h % patch != 0 || w % patch != 0 {
                    return Err(Error::Geometry(format!("patch {patch} does not divide {h}x{w}")));
                }
                shapes.push(Some((c * patch * patch, *dim)));
                features = *dim;
                positions = (h / patch) * (w / patch);
            }
            _ => unreachable!(),
        }
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate().skip(1) {
            match layer {
                LayerSpec::Dense { inputs, outputs } => {
                    if *inputs != features {
                        return bad(format!("layer {i}: dense expects {inputs} inputs, gets {features}"));
                    }
                    features = *outputs;
                    shapes.push(Some((*inputs, *outputs)));
                }
                LayerSpec::Relu => shapes.push(None),
                LayerSpec::GlobalAvgPool => {
                    positions = 1;
                    shapes.push(None);
                }
                LayerSpec::SoftmaxCrossEntropy { classes, label_smoothing } => {
                    if i != last {
                        return bad("the loss layer must come last".into());
                    }
                    if *classes != features || positions != 1 {
                        return bad(format!(
                            "loss over {classes} classes receives {features} features at {positions} positions"
                        ));
                    }
                    if !(0.0..1.0).contains(label_smoothing) {
                        return bad(format!("label smoothing {label_smoothing} outside [0, 1)"));
                    }
                    shapes.push(None);
                }
                _ => unreachable!(),
            }
        }
        if !matches!(self.layers[last], LayerSpec::SoftmaxCrossEntropy { .. }) {
            return bad("the last layer must be softmax cross-entropy".into());
        }
        Ok(shapes)
    }

    pub fn classes(&self) -> usize {
        match self.layers.last() {
            Some(LayerSpec::SoftmaxCrossEntropy { classes, .. }) => *classes,
            _ => 0,
        }
    }

    pub fn label_smoothing(&self) -> f64 {
        match self.layers.last() {
            Some(LayerSpec::SoftmaxCrossEntropy { label_smoothing, .. }) => *label_smoothing,
            _ => 0.0,
        }
    }

    /// Unfolds a batch the way layer 0 consumes it.
    pub fn unfold(&self, batch: &ImageBatch) -> Result<PatchMatrix> {
        if (batch.c, batch.h, batch.w) != (self.channels, self.height, self.width) {
            return shape_err(format!(
                "batch is {}x{}x{}, model expects {}x{}x{}",
                batch.c, batch.h, batch.w, self.channels, self.height, self.width
            ));
        }
        match &self.layers[0] {
            LayerSpec::FirstDense { .. } => Ok(flatten_dense(batch)),
            LayerSpec::FirstConv { geom, .. } => im2col(batch, *geom),
            LayerSpec::FirstPatchEmbed { patch, .. } => patchify(batch, *patch),
            _ => Err(Error::InvalidArgument("layer 0 is not an embedding".into())),
        }
    }
}

/// Weight (`out × in`) and bias of one parametrised layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub w: Mat,
    pub b: Vec<f64>,
}

impl Linear {
    pub fn zeros_like(&self) -> Linear {
        Linear {
            w: Mat::zeros(self.w.rows(), self.w.cols()),
            b: vec![0.0; self.b.len()],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore {
    pub layers: Vec<Option<Linear>>,
    pub seed: u64,
}

impl ParamStore {
    pub fn first(&self) -> &Linear {
        self.layers[0].as_ref().expect("layer 0 carries parameters")
    }

    pub fn len(&self) -> usize {
        self.layers.iter().flatten().map(|l| l.w.data().len() + l.b.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All values, layer by layer, weight before bias.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        for l in self.layers.iter().flatten() {
            out.extend_from_slice(l.w.data());
            out.extend_from_slice(&l.b);
        }
        out
    }

    /// Inverse of [`flatten`](Self::flatten) onto an existing layout.
    pub fn with_flat(&self, values: &[f64]) -> Result<ParamStore> {
        if values.len() != self.len() {
            return shape_err(format!("{} values for {} parameters", values.len(), self.len()));
        }
        let mut out = self.clone();
        let mut at = 0;
        for l in out.layers.iter_mut().flatten() {
            let nw = l.w.data().len();
            l.w.data_mut().copy_from_slice(&values[at..at + nw]);
            at += nw;
            let nb = l.b.len();
            l.b.copy_from_slice(&values[at..at + nb]);
            at += nb;
        }
        Ok(out)
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .flatten()
            .all(|l| l.w.all_finite() && l.b.iter().all(|v| v.is_finite()))
    }
}

/// Kaiming-uniform weights (`U(±√(6/fan_in))`) and zero biases, drawn layer
/// by layer from one seeded stream.
pub fn init_params(spec: &ModelSpec, seed: u64) -> Result<ParamStore> {
    let shapes = spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = shapes
        .into_iter()
        .map(|s| {
            s.map(|(fan_in, fan_out)| {
                let bound = (6.0 / fan_in as f64).sqrt();
                let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
                let data = (0..fan_in * fan_out).map(|_| dist.sample(&mut rng)).collect();
                Linear {
                    w: Mat::from_vec(fan_out, fan_in, data).expect("sized"),
                    b: vec![0.0; fan_out],
                }
            })
        })
        .collect();
    Ok(ParamStore { layers, seed })
}

/// Intermediate values retained by [`forward`].
#[derive(Clone, Debug)]
pub struct Cache {
    /// Unfolded input of layer 0.
    pub x: PatchMatrix,
    /// First-layer pre-activations.
    pub z: Mat,
    /// Input of every layer after the first (index = layer index).
    inputs: Vec<Option<Mat>>,
    /// Positions per example entering each layer.
    positions: Vec<usize>,
    pub batch: usize,
}

fn add_bias(m: &mut Mat, bias: &[f64]) {
    for (i, bv) in bias.iter().enumerate() {
        m.row_mut(i).iter_mut().for_each(|v| *v += bv);
    }
}

/// Runs the network up to (not including) the loss. Returns logits
/// (`classes × b`) and the cache for [`backward`].
pub fn forward(spec: &ModelSpec, params: &ParamStore, batch: &ImageBatch) -> Result<(Mat, Cache)> {
    if params.layers.len() != spec.layers.len() {
        return shape_err("parameter store does not match the model spec");
    }
    let x = spec.unfold(batch)?;
    let first = params.first();
    let mut z = matmul(&first.w, &x.data)?;
    add_bias(&mut z, &first.b);
    let mut inputs = vec![None];
    let mut positions = vec![x.positions];
    let mut act = z.clone();
    let mut p = x.positions;
    for (i, layer) in spec.layers.iter().enumerate().skip(1) {
        positions.push(p);
        match layer {
            LayerSpec::Dense { .. } => {
                let l = params.layers[i].as_ref().ok_or_else(|| Error::Shape(format!("layer {i} has no parameters")))?;
                let mut out = matmul(&l.w, &act)?;
                add_bias(&mut out, &l.b);
                inputs.push(Some(std::mem::replace(&mut act, out)));
            }
            LayerSpec::Relu => {
                let out = act.map(|v| v.max(0.0));
                inputs.push(Some(std::mem::replace(&mut act, out)));
            }
            LayerSpec::GlobalAvgPool => {
                let b = act.cols() / p;
                let mut out = Mat::zeros(act.rows(), b);
                for r in 0..act.rows() {
                    let src = act.row(r);
                    for (e, o) in out.row_mut(r).iter_mut().enumerate() {
                        *o = src[e * p..(e + 1) * p].iter().sum::<f64>() / p as f64;
                    }
                }
                inputs.push(None);
                act = out;
                p = 1;
            }
            LayerSpec::SoftmaxCrossEntropy { .. } => inputs.push(None),
            _ => unreachable!("validated chain"),
        }
    }
    let cache = Cache {
        x,
        z,
        inputs,
        positions,
        batch: batch.b,
    };
    Ok((act, cache))
}

/// Mean softmax cross-entropy with label smoothing; returns the loss and
/// its gradient with respect to the logits.
pub fn loss_and_grad(logits: &Mat, labels: &[usize], smoothing: f64) -> Result<(f64, Mat)> {
    let (k, b) = logits.shape();
    if labels.len() != b {
        return shape_err(format!("{} labels for {b} logit columns", labels.len()));
    }
    if let Some(bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::InvalidArgument(format!("label {bad} out of range for {k} classes")));
    }
    let mut grad = Mat::zeros(k, b);
    let mut total = 0.0;
    let off = smoothing / k as f64;
    for (j, &label) in labels.iter().enumerate() {
        let max = (0..k).map(|i| logits.get(i, j)).fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = (0..k).map(|i| (logits.get(i, j) - max).exp()).sum();
        let log_z = max + sum.ln();
        for i in 0..k {
            let target = off + if i == label { 1.0 - smoothing } else { 0.0 };
            let logp = logits.get(i, j) - log_z;
            if target > 0.0 {
                total -= target * logp;
            }
            grad.set(i, j, (logp.exp() - target) / b as f64);
        }
    }
    Ok((total / b as f64, grad))
}

/// Index of the largest logit per column.
pub fn predictions(logits: &Mat) -> Vec<usize> {
    (0..logits.cols())
        .map(|j| {
            (0..logits.rows())
                .max_by(|&a, &b| logits.get(a, j).total_cmp(&logits.get(b, j)))
                .unwrap_or(0)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradKind {
    Standard,
    TrAct,
}

#[derive(Clone, Debug)]
pub struct BackwardResult {
    pub grads: Vec<Option<Linear>>,
    pub first_layer_kind: GradKind,
    /// Gradient of the loss with respect to the first-layer pre-activations.
    pub grad_z: Mat,
}

/// Weight gradient of layer 0 for the given configuration.
pub fn first_layer_weight_grad(grad_z: &Mat, x: &Mat, tract: &TrActConfig) -> Result<Mat> {
    if !tract.enabled {
        return standard_grad(grad_z, x);
    }
    tract.validate()?;
    match tract.method {
        TrActMethod::CustomBackward => tract_grad_with(grad_z, x, tract.lambda, tract.route),
        TrActMethod::PreconditionInputs => {
            let xt = precondition_inputs_with(x, tract.lambda, tract.route)?;
            standard_grad(grad_z, &xt)
        }
    }
}

pub fn backward(
    spec: &ModelSpec,
    params: &ParamStore,
    cache: &Cache,
    grad_logits: &Mat,
    tract: &TrActConfig,
) -> Result<BackwardResult> {
    let n_layers = spec.layers.len();
    let mut grads: Vec<Option<Linear>> = vec![None; n_layers];
    let mut g = grad_logits.clone();
    for i in (1..n_layers).rev() {
        match &spec.layers[i] {
            LayerSpec::SoftmaxCrossEntropy { .. } => {}
            LayerSpec::Dense { .. } => {
                let l = params.layers[i].as_ref().expect("dense layer has parameters");
                let input = cache.inputs[i].as_ref().expect("dense input cached");
                let dw = matmul_nt(&g, input)?;
                let db = g.row_sums();
                g = matmul_tn(&l.w, &g)?;
                grads[i] = Some(Linear { w: dw, b: db });
            }
            LayerSpec::Relu => {
                let input = cache.inputs[i].as_ref().expect("relu input cached");
                for (gv, iv) in g.data_mut().iter_mut().zip(input.data()) {
                    if *iv <= 0.0 {
                        *gv = 0.0;
                    }
                }
            }
            LayerSpec::GlobalAvgPool => {
                let p = cache.positions[i];
                let mut up = Mat::zeros(g.rows(), g.cols() * p);
                for r in 0..g.rows() {
                    let src = g.row(r).to_vec();
                    let dst = up.row_mut(r);
                    for (e, v) in src.iter().enumerate() {
                        dst[e * p..(e + 1) * p].iter_mut().for_each(|d| *d = v / p as f64);
                    }
                }
                g = up;
            }
            _ => unreachable!("validated chain"),
        }
    }
    let dw = first_layer_weight_grad(&g, &cache.x.data, tract)?;
    grads[0] = Some(Linear {
        w: dw,
        b: g.row_sums(),
    });
    Ok(BackwardResult {
        grads,
        first_layer_kind: if tract.enabled { GradKind::TrAct } else { GradKind::Standard },
        grad_z: g,
    })
}

/// Forward, loss, and backward for one labelled batch.
pub fn loss_and_backward(
    spec: &ModelSpec,
    params: &ParamStore,
    batch: &ImageBatch,
    labels: &[usize],
    tract: &TrActConfig,
) -> Result<(f64, BackwardResult)> {
    let (logits, cache) = forward(spec, params, batch)?;
    let (loss, gl) = loss_and_grad(&logits, labels, spec.label_smoothing())?;
    let res = backward(spec, params, &cache, &gl, tract)?;
    Ok((loss, res))
}
