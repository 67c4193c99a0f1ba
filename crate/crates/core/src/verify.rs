//! Oracle-backed checks of the TrAct gradient, runnable from the CLI.
//!
//! Every check draws its instances from a seeded ChaCha8 stream, so a run is
//! reproducible. The gradient under test is injected through [`Hooks`].

use std::fmt;
use std::str::FromStr;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::harness::Preset;
use crate::linalg::{frob_norm, matmul, transpose, Mat};
use crate::nn::{first_layer_weight_grad, forward, init_params, loss_and_backward};
use crate::oracle::{update_objective_gradient, minimize_update_objective, naive_conv, naive_conv_wgrad};
use crate::precond::{gram, standard_grad, standard_update_z, tract_gain_bound, TrActConfig, TrActMethod};
use crate::sample::{cosine, orthonormal_rows, rand_mat, rel_err};
use crate::spectral::spectral_norm;
use crate::unfold::{im2col, ConvGeom, ImageBatch};

pub type TractGradFn = fn(&Mat, &Mat, f64) -> Result<Mat>;

/// Implementations under test.
#[derive(Clone, Copy)]
pub struct Hooks {
    pub tract_grad: TractGradFn,
}

impl Default for Hooks {
    fn default() -> Self {
        Hooks {
            tract_grad: crate::precond::tract_grad,
        }
    }
}

pub const LAMBDA_GRID: [f64; 3] = [0.05, 0.1, 0.2];

pub const TOL_LEAST_SQUARES: f64 = 1e-6;
pub const TOL_STATIONARY: f64 = 1e-8;
pub const TOL_RESIDUAL: f64 = 1e-9;
pub const TOL_ZERO: f64 = 1e-12;
pub const TOL_METHODS: f64 = 1e-9;
pub const TOL_CONV: f64 = 1e-10;
pub const TOL_LARGE_LAMBDA: f64 = 1e-4;
pub const TOL_ORTHONORMAL: f64 = 1e-9;
pub const TOL_SCALING: f64 = 1e-6;
pub const MIN_COSINE_WIN_RATE: f64 = 0.95;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Level {
    Quick,
    Full,
}

impl FromStr for Level {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quick" => Ok(Level::Quick),
            "full" => Ok(Level::Full),
            _ => Err(Error::InvalidArgument(format!("unknown level '{s}' (quick|full)"))),
        }
    }
}

/// Instance counts per check.
#[derive(Clone, Copy, Debug)]
pub struct Counts {
    pub least_squares: usize,
    pub residual: usize,
    pub zero_cases: usize,
    pub nonzero_cases: usize,
    pub conv_geometries: usize,
    pub asymptotic: usize,
    pub scale: usize,
    pub cosine_trials: Option<usize>,
}

impl Level {
    pub fn counts(self) -> Counts {
        match self {
            Level::Quick => Counts {
                least_squares: 20,
                residual: 200,
                zero_cases: 40,
                nonzero_cases: 200,
                conv_geometries: 20,
                asymptotic: 20,
                scale: 20,
                cosine_trials: None,
            },
            Level::Full => Counts {
                least_squares: 100,
                residual: 1000,
                zero_cases: 100,
                nonzero_cases: 1000,
                conv_geometries: 20,
                asymptotic: 100,
                scale: 100,
                cosine_trials: Some(1000),
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    /// Largest residual seen (for rate checks, the observed rate).
    pub worst: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl CheckOutcome {
    fn below(name: &'static str, worst: f64, tolerance: f64, detail: String) -> Self {
        CheckOutcome {
            name,
            passed: worst < tolerance,
            worst,
            tolerance,
            detail,
        }
    }

    fn from_result(name: &'static str, tolerance: f64, r: Result<CheckOutcome>) -> Self {
        r.unwrap_or_else(|e| CheckOutcome {
            name,
            passed: false,
            worst: f64::NAN,
            tolerance,
            detail: format!("error: {e}"),
        })
    }
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<24} worst {:.3e}  tol {:.2e}  {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.worst,
            self.tolerance,
            self.detail
        )
    }
}

struct Instance {
    grad_z: Mat,
    x: Mat,
    lambda: f64,
}

fn instance(rng: &mut ChaCha8Rng, max_m: usize, max_n: usize, max_b: usize) -> Instance {
    let m = rng.random_range(1..=max_m);
    let n = rng.random_range(1..=max_n);
    let b = rng.random_range(1..=max_b);
    // Mean-reduced upstream gradients carry a 1/B.
    let grad_z = rand_mat(rng, m, b).scale(1.0 / b as f64);
    let x = rand_mat(rng, n, b);
    let lambda = *LAMBDA_GRID.choose(rng).expect("grid is non-empty");
    Instance { grad_z, x, lambda }
}

fn objective_instances(count: usize, seed: u64) -> Vec<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| instance(&mut rng, 8, 8, 8)).collect()
}

const ETA: f64 = 0.1;

/// Gradient descent on the least-squares objective lands on `−η·tract_grad`.
pub fn least_squares_oracle(h: &Hooks, instances: usize, seed: u64) -> CheckOutcome {
    let run = || -> Result<CheckOutcome> {
        let mut worst = 0.0f64;
        for inst in objective_instances(instances, seed) {
            let closed = (h.tract_grad)(&inst.grad_z, &inst.x, inst.lambda)?.scale(-ETA);
            let found = minimize_update_objective(&inst.grad_z, &inst.x, ETA, inst.lambda, 2_000_000, None)?;
            let err = if frob_norm(&closed) > 0.0 {
                rel_err(&found, &closed)
            } else {
                frob_norm(&found)
            };
            worst = worst.max(err);
        }
        Ok(CheckOutcome::below(
            "least-squares-oracle",
            worst,
            TOL_LEAST_SQUARES,
            format!("{instances} instances, m,n,B <= 8"),
        ))
    };
    CheckOutcome::from_result("least-squares-oracle", TOL_LEAST_SQUARES, run())
}

/// The analytic objective gradient vanishes at `−η·tract_grad`.
pub fn stationarity(h: &Hooks, instances: usize, seed: u64) -> CheckOutcome {
    let run = || -> Result<CheckOutcome> {
        let mut worst = 0.0f64;
        for inst in objective_instances(instances, seed) {
            let dw = (h.tract_grad)(&inst.grad_z, &inst.x, inst.lambda)?.scale(-ETA);
            let g = update_objective_gradient(&inst.grad_z, &inst.x, ETA, inst.lambda, &dw);
            let scale = 1.0 + frob_norm(&standard_grad(&inst.grad_z, &inst.x)?);
            worst = worst.max(frob_norm(&g) / scale);
        }
        Ok(CheckOutcome::below(
            "stationarity",
            worst,
            TOL_STATIONARY,
            format!("{instances} instances, |dF| / (1 + |grad_z x^T|)"),
        ))
    };
    CheckOutcome::from_result("stationarity", TOL_STATIONARY, run())
}

/// `tract_grad·G` reproduces the standard gradient.
pub fn normal_equation_residual(h: &Hooks, instances: usize, seed: u64) -> CheckOutcome {
    let run = || -> Result<CheckOutcome> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst = 0.0f64;
        for _ in 0..instances {
            let inst = instance(&mut rng, 16, 64, 128);
            let s = standard_grad(&inst.grad_z, &inst.x)?;
            let t = (h.tract_grad)(&inst.grad_z, &inst.x, inst.lambda)?;
            let g = gram(&inst.x, inst.lambda)?;
            let back = matmul(&t, g.matrix())?;
            let resid = rel_err(&back, &s) * frob_norm(&s) / frob_norm(&s).max(1.0);
            worst = worst.max(resid);
        }
        Ok(CheckOutcome::below(
            "normal-equation",
            worst,
            TOL_RESIDUAL,
            format!("{instances} instances, n <= 64, B <= 128"),
        ))
    };
    CheckOutcome::from_result("normal-equation", TOL_RESIDUAL, run())
}

/// `m×B` gradient whose rows are orthogonal to the row space of `x`
/// (needs `B > n`), so `∇z·xᵀ = 0` while `∇z ≠ 0`.
fn null_space_grad(rng: &mut ChaCha8Rng, x: &Mat, m: usize) -> Mat {
    let (n, b) = x.shape();
    let mut basis = Mat::zeros(b, b);
    for i in 0..n {
        basis.row_mut(i).copy_from_slice(x.row(i));
    }
    let extra = rand_mat(rng, b - n, b);
    for i in n..b {
        basis.row_mut(i).copy_from_slice(extra.row(i - n));
    }
    crate::sample::gram_schmidt(&mut basis);
    let coeff = rand_mat(rng, m, b - n);
    Mat::from_fn(m, b, |i, j| (0..b - n).map(|k| coeff.get(i, k) * basis.get(n + k, j)).sum())
}

/// Zero standard gradient if and only if zero TrAct gradient.
pub fn fixed_points(h: &Hooks, zero_cases: usize, nonzero_cases: usize, seed: u64) -> CheckOutcome {
    let run = || -> Result<CheckOutcome> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst_zero = 0.0f64;
        let mut smallest_nonzero = f64::INFINITY;
        let mut mixed = 0usize;
        for k in 0..zero_cases {
            let n = rng.random_range(1..=6);
            let b = rng.random_range(n + 1..=12);
            let m = rng.random_range(1..=4);
            let x = rand_mat(&mut rng, n, b);
            let gz = if k % 2 == 0 {
                Mat::zeros(m, b)
            } else {
                null_space_grad(&mut rng, &x, m)
            };
            let lambda = *LAMBDA_GRID.choose(&mut rng).expect("grid is non-empty");
            let sn = frob_norm(&standard_grad(&gz, &x)?);
            let tn = frob_norm(&(h.tract_grad)(&gz, &x, lambda)?);
            worst_zero = worst_zero.max(tn).max(sn);
            mixed += usize::from((sn < TOL_ZERO) != (tn < TOL_ZERO));
        }
        for _ in 0..nonzero_cases {
            let inst = instance(&mut rng, 8, 8, 16);
            let sn = frob_norm(&standard_grad(&inst.grad_z, &inst.x)?);
            let tn = frob_norm(&(h.tract_grad)(&inst.grad_z, &inst.x, inst.lambda)?);
            smallest_nonzero = smallest_nonzero.min(sn).min(tn);
            mixed += usize::from((sn < TOL_ZERO) != (tn < TOL_ZERO));
        }
        Ok(CheckOutcome {
            name: "fixed-points",
            passed: worst_zero < TOL_ZERO && smallest_nonzero > TOL_ZERO && mixed == 0,
            worst: worst_zero,
            tolerance: TOL_ZERO,
            detail: format!(
                "{zero_cases} zero cases, {nonzero_cases} nonzero (min norm {smallest_nonzero:.3e}), {mixed} mixed"
            ),
        })
    };
    CheckOutcome::from_result("fixed-points", TOL_ZERO, run())
}

/// Custom backward and input preconditioning agree on every preset; the
/// forward pass and all other layers' gradients are untouched by TrAct.
pub fn method_equivalence(h: &Hooks, seed: u64) -> CheckOutcome {
    let run = || -> Result<CheckOutcome> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst = 0.0f64;
        let mut forward_identical = true;
        for (preset, (c, hh, ww)) in [
            (Preset::Mlp, (1, 6, 6)),
            (Preset::Cnn, (3, 8, 8)),
            (Preset::PatchMlp, (3, 8, 8)),
        ] {
            let spec = preset.build(c, hh, ww, 4, None)?;
            let params = init_params(&spec, seed)?;
            let b = 5;
            let batch = ImageBatch::new(b, c, hh, ww, rand_mat(&mut rng, 1, b * c * hh * ww).into_vec())?;
            let labels: Vec<usize> = (0..b).map(|i| i % 4).collect();
            let lambda = *LAMBDA_GRID.choose(&mut rng).expect("grid is non-empty");

            let (l_off, off) = loss_and_backward(&spec, &params, &batch, &labels, &TrActConfig::disabled())?;
            let (l_on, on) = loss_and_backward(&spec, &params, &batch, &labels, &TrActConfig::new(lambda))?;
            forward_identical &= l_off.to_bits() == l_on.to_bits();
            forward_identical &= off.grad_z == on.grad_z;
            forward_identical &= off.grads[1..] == on.grads[1..];

            let (_, cache) = forward(&spec, &params, &batch)?;
            let x = &cache.x.data;
            let custom = (h.tract_grad)(&off.grad_z, x, lambda)?;
            let inputs_cfg = TrActConfig {
                method: TrActMethod::PreconditionInputs,
                ..TrActConfig::new(lambda)
            };
            let inputs = first_layer_weight_grad(&off.grad_z, x, &inputs_cfg)?;
            let trained = &on.grads[0].as_ref().expect("first layer has parameters").w;
            worst = worst.max(rel_err(&custom, &inputs)).max(rel_err(trained, &inputs));
        }
        Ok(CheckOutcome {
            name: "method-equivalence",
            passed: worst < TOL_METHODS && forward_identical,
            worst,
            tolerance: TOL_METHODS,
            detail: format!("mlp, cnn, patch-mlp; forward bit-identical: {forward_identical}"),
        })
    };
    CheckOutcome::from_result("method-equivalence", TOL_METHODS, run())
}

fn max_scaled_diff(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

/// im2col + matmul against direct convolution loops, forward and weight
/// gradient.
pub fn conv_unfolding(geometries: usize, seed: u64) -> CheckOutcome {
    let run = || -> Result<CheckOutcome> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst = 0.0f64;
        let mut done = 0;
        while done < geometries {
            let k = rng.random_range(1..=5);
            let g = ConvGeom {
                kh: k,
                kw: rng.random_range(1..=5),
                sh: rng.random_range(1..=3),
                sw: rng.random_range(1..=3),
                ph: rng.random_range(0..k),
                pw: rng.random_range(0..3),
            };
            let (h, w) = (rng.random_range(k..=12), rng.random_range(g.kw..=12));
            if g.output_dims(h, w).is_err() {
                continue;
            }
            done += 1;
            let (b, c, out) = (rng.random_range(1..=3), rng.random_range(1..=3), rng.random_range(1..=4));
            let img = ImageBatch::new(b, c, h, w, rand_mat(&mut rng, 1, b * c * h * w).into_vec())?;
            let (oh, ow) = g.output_dims(h, w)?;
            let wmat = rand_mat(&mut rng, out, g.patch_len(c));
            let x = im2col(&img, g)?;
            let z = matmul(&wmat, &x.data)?;
            let direct = naive_conv(&wmat, &img, g)?;
            let per = oh * ow;
            let mut z_direct_layout = vec![0.0; direct.len()];
            for o in 0..out {
                for bi in 0..b {
                    for p in 0..per {
                        z_direct_layout[(bi * out + o) * per + p] = z.get(o, bi * per + p);
                    }
                }
            }
            worst = worst.max(max_scaled_diff(&z_direct_layout, &direct));

            let upstream = rand_mat(&mut rng, 1, direct.len()).into_vec();
            let gz = Mat::from_fn(out, b * per, |o, col| upstream[((col / per) * out + o) * per + col % per]);
            let dw = standard_grad(&gz, &x.data)?;
            let dw_direct = naive_conv_wgrad(&upstream, out, &img, g)?;
            worst = worst.max(max_scaled_diff(dw.data(), dw_direct.data()));
        }
        Ok(CheckOutcome::below(
            "conv-unfolding",
            worst,
            TOL_CONV,
            format!("{geometries} geometries, kernels <= 5, images <= 12x12"),
        ))
    };
    CheckOutcome::from_result("conv-unfolding", TOL_CONV, run())
}

/// With a huge λ the TrAct gradient becomes `standard_grad/λ`.
pub fn large_lambda(h: &Hooks, instances: usize, seed: u64) -> CheckOutcome {
    let run = || -> Result<CheckOutcome> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lambda = 1e8;
        let mut worst = 0.0f64;
        for _ in 0..instances {
            let inst = instance(&mut rng, 8, 16, 16);
            let s = standard_grad(&inst.grad_z, &inst.x)?;
            let t = (h.tract_grad)(&inst.grad_z, &inst.x, lambda)?.scale(lambda);
            worst = worst.max(rel_err(&t, &s));
        }
        Ok(CheckOutcome::below(
            "large-lambda-limit",
            worst,
            TOL_LARGE_LAMBDA,
            format!("{instances} instances, lambda = 1e8"),
        ))
    };
    CheckOutcome::from_result("large-lambda-limit", TOL_LARGE_LAMBDA, run())
}

/// Inputs with `xᵀx = B·I` give `Δz = −η·B/(1+λ)·∇z`.
pub fn orthonormal_columns(h: &Hooks, instances: usize, seed: u64) -> CheckOutcome {
    let run = || -> Result<CheckOutcome> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst = 0.0f64;
        for _ in 0..instances {
            let b = rng.random_range(1..=8);
            let n = rng.random_range(b..=16);
            let m = rng.random_range(1..=6);
            let x = transpose(&orthonormal_rows(&mut rng, b, n)).scale((b as f64).sqrt());
            let gz = rand_mat(&mut rng, m, b);
            let lambda = rng.random_range(0.01..2.0);
            let eta = rng.random_range(0.01..1.0);
            let dz = matmul(&(h.tract_grad)(&gz, &x, lambda)?.scale(-eta), &x)?;
            let want = gz.scale(-eta * b as f64 / (1.0 + lambda));
            worst = worst.max(rel_err(&dz, &want));
        }
        Ok(CheckOutcome::below(
            "orthonormal-columns",
            worst,
            TOL_ORTHONORMAL,
            format!("{instances} instances"),
        ))
    };
    CheckOutcome::from_result("orthonormal-columns", TOL_ORTHONORMAL, run())
}

pub const SCALES: [f64; 6] = [1e-3, 1e-1, 0.3, 1.0, 10.0, 1e3];

/// The standard gradient is linear in the input scale.
pub fn standard_scaling(instances: usize, seed: u64) -> CheckOutcome {
    let run = || -> Result<CheckOutcome> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst = 0.0f64;
        for _ in 0..instances {
            let inst = instance(&mut rng, 8, 16, 16);
            let base = frob_norm(&standard_grad(&inst.grad_z, &inst.x)?);
            let big = frob_norm(&standard_grad(&inst.grad_z, &inst.x.scale(1000.0))?);
            worst = worst.max((big / (1000.0 * base) - 1.0).abs());
        }
        Ok(CheckOutcome::below(
            "standard-grad-scaling",
            worst,
            TOL_SCALING,
            format!("{instances} instances, x scaled by 1000"),
        ))
    };
    CheckOutcome::from_result("standard-grad-scaling", TOL_SCALING, run())
}

/// `‖tract_grad‖₂ ≤ ‖∇z‖₂·√(B/λ)/2` at every input scale. `worst` is the
/// largest ratio of the two sides.
pub fn gain_bound(h: &Hooks, instances: usize, seed: u64) -> CheckOutcome {
    let run = || -> Result<CheckOutcome> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst = 0.0f64;
        for _ in 0..instances {
            let inst = instance(&mut rng, 8, 16, 16);
            let limit = spectral_norm(&inst.grad_z) * tract_gain_bound(inst.x.cols(), inst.lambda);
            for s in SCALES {
                let t = (h.tract_grad)(&inst.grad_z, &inst.x.scale(s), inst.lambda)?;
                worst = worst.max(spectral_norm(&t) / limit);
            }
        }
        Ok(CheckOutcome {
            name: "tract-gain-bound",
            // Allows for rounding in the spectral norms only.
            passed: worst <= 1.0 + 1e-9,
            worst,
            tolerance: 1.0,
            detail: format!("{instances} instances x {} scales", SCALES.len()),
        })
    };
    CheckOutcome::from_result("tract-gain-bound", 1.0, run())
}

/// How often the TrAct pre-activation update points closer to `−∇z` than
/// the plain one.
pub fn descent_cosine(h: &Hooks, trials: usize, seed: u64) -> CheckOutcome {
    let run = || -> Result<CheckOutcome> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut wins = 0usize;
        for _ in 0..trials {
            let m = rng.random_range(1..=8);
            let n = rng.random_range(1..=16);
            let b = rng.random_range(2..=32);
            let gz = rand_mat(&mut rng, m, b);
            let x = rand_mat(&mut rng, n, b);
            let neg = gz.scale(-1.0);
            let dz_t = matmul(&(h.tract_grad)(&gz, &x, 0.1)?.scale(-1.0), &x)?;
            let dz_s = standard_update_z(&gz, &x, 1.0)?;
            wins += usize::from(cosine(&dz_t, &neg) >= cosine(&dz_s, &neg));
        }
        let rate = wins as f64 / trials.max(1) as f64;
        Ok(CheckOutcome {
            name: "descent-cosine",
            passed: rate >= MIN_COSINE_WIN_RATE,
            worst: rate,
            tolerance: MIN_COSINE_WIN_RATE,
            detail: format!("{wins}/{trials} trials, lambda = 0.1"),
        })
    };
    CheckOutcome::from_result("descent-cosine", MIN_COSINE_WIN_RATE, run())
}

type Check = Box<dyn Fn() -> CheckOutcome + Send + Sync>;

/// Runs every check at `level`; checks are independent and run in parallel,
/// results come back in a fixed order.
pub fn run_suite(level: Level, hooks: Hooks, seed: u64) -> Vec<CheckOutcome> {
    let c = level.counts();
    let mut checks: Vec<Check> = vec![
        Box::new(move || least_squares_oracle(&hooks, c.least_squares, seed)),
        Box::new(move || stationarity(&hooks, c.least_squares, seed)),
        Box::new(move || normal_equation_residual(&hooks, c.residual, seed + 1)),
        Box::new(move || fixed_points(&hooks, c.zero_cases, c.nonzero_cases, seed + 2)),
        Box::new(move || method_equivalence(&hooks, seed + 3)),
        Box::new(move || conv_unfolding(c.conv_geometries, seed + 4)),
        Box::new(move || large_lambda(&hooks, c.asymptotic, seed + 5)),
        Box::new(move || orthonormal_columns(&hooks, c.asymptotic, seed + 6)),
        Box::new(move || standard_scaling(c.scale, seed + 7)),
        Box::new(move || gain_bound(&hooks, c.scale, seed + 8)),
    ];
    if let Some(trials) = c.cosine_trials {
        checks.push(Box::new(move || descent_cosine(&hooks, trials, seed + 9)));
    }
    checks.par_iter().map(|f| f()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flipped(gz: &Mat, x: &Mat, lambda: f64) -> Result<Mat> {
        Ok(crate::precond::tract_grad(gz, x, lambda)?.scale(-1.0))
    }

    #[test]
    fn quick_suite_passes() {
        let out = run_suite(Level::Quick, Hooks::default(), 7);
        assert_eq!(out.len(), 10);
        for o in &out {
            assert!(o.passed, "{o}");
        }
    }

    #[test]
    fn sign_flip_is_caught() {
        let out = run_suite(Level::Quick, Hooks { tract_grad: flipped }, 7);
        let failed: Vec<&str> = out.iter().filter(|o| !o.passed).map(|o| o.name).collect();
        for name in ["least-squares-oracle", "stationarity", "normal-equation", "method-equivalence", "orthonormal-columns"] {
            assert!(failed.contains(&name), "{name} missed the mutation: {failed:?}");
        }
    }

    #[test]
    fn errors_become_failures() {
        fn broken(_: &Mat, _: &Mat, _: f64) -> Result<Mat> {
            Err(Error::InvalidArgument("broken".into()))
        }
        let o = least_squares_oracle(&Hooks { tract_grad: broken }, 1, 0);
        assert!(!o.passed);
        assert!(o.detail.contains("broken"));
    }

    #[test]
    fn level_names() {
        assert_eq!("quick".parse::<Level>().unwrap(), Level::Quick);
        assert!("medium".parse::<Level>().is_err());
        assert!(Level::Full.counts().cosine_trials.is_some());
    }
}
