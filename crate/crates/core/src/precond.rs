//! First-layer weight gradients: the conventional product `∇z·xᵀ` and the
//! TrAct replacement `∇z·xᵀ·(x·xᵀ/B + λI)⁻¹`.
//!
//! Layout is columns-are-examples: `x` is `n×B` (already unfolded), `∇z` is
//! `m×B` and already carries the `1/B` of a mean-reduced loss. `B` is the
//! column count of `x`.
//!
//! The inverse is never formed. The feature-space route factors the `n×n`
//! gram matrix; the example-space route factors the `B×B` matrix
//! `xᵀx/B + λI` and relies on `xᵀ(x·xᵀ/B + λI)⁻¹ = (xᵀx/B + λI)⁻¹xᵀ`.

use crate::error::{shape_err, Error, Result};
use crate::linalg::{
    add_scaled_identity, chol_solve, cholesky, frob_norm, gemm_acc, matmul, matmul_nt, transpose,
    CholFactor, Mat,
};

pub const DEFAULT_LAMBDA: f64 = 0.1;

/// Which linear system realises the solve.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SolveRoute {
    /// The smaller of the two systems.
    #[default]
    Auto,
    /// Always the `n×n` gram matrix.
    Features,
    /// Always the `B×B` example-space matrix.
    Examples,
}

impl SolveRoute {
    fn resolve(self, n: usize, b: usize) -> SolveRoute {
        match self {
            SolveRoute::Auto if b < n => SolveRoute::Examples,
            SolveRoute::Auto => SolveRoute::Features,
            r => r,
        }
    }
}

/// How the network applies the replacement.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum TrActMethod {
    /// Replace the first layer's weight gradient in backward.
    #[default]
    CustomBackward,
    /// Compute the weight gradient from preconditioned inputs while the
    /// forward pass keeps the raw values.
    PreconditionInputs,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrActConfig {
    pub lambda: f64,
    pub enabled: bool,
    pub method: TrActMethod,
    pub route: SolveRoute,
}

impl Default for TrActConfig {
    fn default() -> Self {
        TrActConfig {
            lambda: DEFAULT_LAMBDA,
            enabled: true,
            method: TrActMethod::default(),
            route: SolveRoute::default(),
        }
    }
}

impl TrActConfig {
    pub fn new(lambda: f64) -> Self {
        TrActConfig {
            lambda,
            ..Default::default()
        }
    }

    pub fn disabled() -> Self {
        TrActConfig {
            enabled: false,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_lambda(self.lambda)
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda > 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("lambda must be positive and finite, got {lambda}")))
    }
}

fn check_cols(grad_z: &Mat, x: &Mat) -> Result<()> {
    if grad_z.cols() != x.cols() {
        return shape_err(format!(
            "grad_z is {}x{} but x is {}x{}",
            grad_z.rows(),
            grad_z.cols(),
            x.rows(),
            x.cols()
        ));
    }
    Ok(())
}

/// `x·xᵀ/B + λI` and its Cholesky factor.
#[derive(Clone, Debug)]
pub struct GramMatrix {
    pub lambda: f64,
    pub effective_batch: usize,
    g: Mat,
    factor: CholFactor,
}

impl GramMatrix {
    pub fn n(&self) -> usize {
        self.g.rows()
    }

    pub fn matrix(&self) -> &Mat {
        &self.g
    }

    pub fn factor(&self) -> &CholFactor {
        &self.factor
    }
}

pub fn gram(x: &Mat, lambda: f64) -> Result<GramMatrix> {
    check_lambda(lambda)?;
    let b = x.cols();
    if b == 0 {
        return shape_err("gram of a matrix with no columns");
    }
    let g = add_scaled_identity(&symmetric_product(x, true).scale(1.0 / b as f64), lambda)?;
    let factor = cholesky(&g)?;
    Ok(GramMatrix {
        lambda,
        effective_batch: b,
        g,
        factor,
    })
}

/// `xᵀx/B + λI_B`, the example-space counterpart of [`gram`].
pub fn example_gram(x: &Mat, lambda: f64) -> Result<(Mat, CholFactor)> {
    check_lambda(lambda)?;
    let b = x.cols();
    if b == 0 {
        return shape_err("example gram of a matrix with no columns");
    }
    let k = add_scaled_identity(&symmetric_product(x, false).scale(1.0 / b as f64), lambda)?;
    let f = cholesky(&k)?;
    Ok((k, f))
}

/// `x·xᵀ` (rows) or `xᵀ·x` (cols). Only the lower triangle is computed;
/// the upper one is mirrored so the result is exactly symmetric.
fn symmetric_product(x: &Mat, rows: bool) -> Mat {
    let xt = transpose(x);
    let (a, b) = if rows { (x, &xt) } else { (&xt, x) };
    let n = a.rows();
    let mut out = Mat::zeros(n, n);
    for i in 0..n {
        gemm_acc(a.row(i), b.data(), n, &mut out.row_mut(i)[..=i]);
    }
    for i in 0..n {
        for j in 0..i {
            let v = out.get(i, j);
            out.set(j, i, v);
        }
    }
    out
}

/// Conventional first-layer weight gradient `∇z·xᵀ`.
pub fn standard_grad(grad_z: &Mat, x: &Mat) -> Result<Mat> {
    check_cols(grad_z, x)?;
    matmul_nt(grad_z, x)
}

/// TrAct weight gradient through the `n×n` gram system.
pub fn tract_grad(grad_z: &Mat, x: &Mat, lambda: f64) -> Result<Mat> {
    tract_grad_with(grad_z, x, lambda, SolveRoute::Features)
}

pub fn tract_grad_with(grad_z: &Mat, x: &Mat, lambda: f64, route: SolveRoute) -> Result<Mat> {
    check_cols(grad_z, x)?;
    check_lambda(lambda)?;
    match route.resolve(x.rows(), x.cols()) {
        SolveRoute::Examples => {
            let (_, f) = example_gram(x, lambda)?;
            let scaled = f.solve_right(grad_z)?;
            matmul_nt(&scaled, x)
        }
        _ => {
            let g = gram(x, lambda)?;
            g.factor.solve_right(&standard_grad(grad_z, x)?)
        }
    }
}

/// `(x·xᵀ/B + λI)⁻¹·x`: inputs whose plain weight gradient is the TrAct one.
pub fn precondition_inputs(x: &Mat, lambda: f64) -> Result<Mat> {
    precondition_inputs_with(x, lambda, SolveRoute::Features)
}

pub fn precondition_inputs_with(x: &Mat, lambda: f64, route: SolveRoute) -> Result<Mat> {
    check_lambda(lambda)?;
    match route.resolve(x.rows(), x.cols()) {
        SolveRoute::Examples => {
            let (_, f) = example_gram(x, lambda)?;
            f.solve_right(x)
        }
        _ => {
            let g = gram(x, lambda)?;
            chol_solve(&g.factor, x)
        }
    }
}

/// Change of the pre-activations caused by the TrAct step `ΔW = −η·tract_grad`,
/// i.e. `ΔW·x`.
pub fn tract_update_z(grad_z: &Mat, x: &Mat, lambda: f64, eta: f64) -> Result<Mat> {
    let dw = tract_grad(grad_z, x, lambda)?.scale(-eta);
    matmul(&dw, x)
}

/// Change of the pre-activations under a plain gradient step, `−η·∇z·xᵀ·x`.
pub fn standard_update_z(grad_z: &Mat, x: &Mat, eta: f64) -> Result<Mat> {
    let dw = standard_grad(grad_z, x)?.scale(-eta);
    matmul(&dw, x)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FixedPointCheck {
    pub standard_zero: bool,
    pub tract_zero: bool,
    pub standard_norm: f64,
    pub tract_norm: f64,
}

/// Whether the plain and the TrAct weight gradient vanish (Frobenius norm
/// below `tol`). The two flags agree whenever both norms sit outside the
/// band `[tol/10, 10·tol]`.
pub fn check_fixed_point(grad_z: &Mat, x: &Mat, lambda: f64, tol: f64) -> Result<FixedPointCheck> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tol must be positive, got {tol}")));
    }
    let standard_norm = frob_norm(&standard_grad(grad_z, x)?);
    let tract_norm = frob_norm(&tract_grad(grad_z, x, lambda)?);
    Ok(FixedPointCheck {
        standard_zero: standard_norm < tol,
        tract_zero: tract_norm < tol,
        standard_norm,
        tract_norm,
    })
}

/// Spectral norm of `xᵀ·(x·xᵀ/B + λI)⁻¹` is at most this value, so
/// `‖tract_grad‖₂ ≤ ‖∇z‖₂ · tract_gain_bound(B, λ)` for any input scale.
pub fn tract_gain_bound(effective_batch: usize, lambda: f64) -> f64 {
    (effective_batch as f64 / lambda).sqrt() / 2.0
}
