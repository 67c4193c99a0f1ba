//! Brute-force reference computations.
//!
//! Nothing in here calls into `linalg` arithmetic or `precond`; matrices are
//! copied into nested vectors and processed with plain loops, so agreement
//! with the production path is independent evidence.

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::unfold::{ConvGeom, ImageBatch};

type Dense = Vec<Vec<f64>>;

fn to_dense(m: &Mat) -> Dense {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

fn from_dense(d: &Dense, cols: usize) -> Mat {
    Mat::from_fn(d.len(), cols, |i, j| d[i][j])
}

fn frob(d: &Dense) -> f64 {
    d.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
}

/// `x·xᵀ + shift·I` with plain loops.
fn outer_gram(x: &Dense, shift: f64) -> Dense {
    let n = x.len();
    let mut a = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            let mut s = 0.0;
            for k in 0..x[i].len() {
                s += x[i][k] * x[j][k];
            }
            a[i][j] = s;
        }
        a[i][i] += shift;
    }
    a
}

/// Largest eigenvalue of a symmetric PSD matrix by power iteration
/// (Rayleigh quotient of the final iterate).
pub fn power_iteration_max(a: &Mat, iters: usize) -> f64 {
    let a = to_dense(a);
    let n = a.len();
    if n == 0 {
        return 0.0;
    }
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + 0.01 * i as f64).collect();
    let mut rq = 0.0;
    for _ in 0..iters.max(1) {
        let av: Vec<f64> = a.iter().map(|row| row.iter().zip(&v).map(|(p, q)| p * q).sum()).collect();
        let vv: f64 = v.iter().map(|q| q * q).sum();
        rq = v.iter().zip(&av).map(|(p, q)| p * q).sum::<f64>() / vv;
        let norm = av.iter().map(|q| q * q).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        v = av.iter().map(|q| q / norm).collect();
    }
    rq
}

/// The ridge objective whose minimiser is the preconditioned update:
/// `F(ΔW) = ‖−η·B·∇z − ΔW·x‖²_F + λ·B·‖ΔW‖²_F`.
pub fn update_objective(grad_z: &Mat, x: &Mat, eta: f64, lambda: f64, dw: &Mat) -> f64 {
    let (g, xd, w) = (to_dense(grad_z), to_dense(x), to_dense(dw));
    let b = x.cols() as f64;
    let mut total = 0.0;
    for i in 0..g.len() {
        for col in 0..x.cols() {
            let mut wx = 0.0;
            for k in 0..xd.len() {
                wx += w[i][k] * xd[k][col];
            }
            let r = -eta * b * g[i][col] - wx;
            total += r * r;
        }
    }
    total + lambda * b * frob(&w).powi(2)
}

/// Analytic gradient `∇F = 2(η·B·∇z + ΔW·x)·xᵀ + 2·λ·B·ΔW`.
pub fn update_objective_gradient(grad_z: &Mat, x: &Mat, eta: f64, lambda: f64, dw: &Mat) -> Mat {
    let (g, xd, w) = (to_dense(grad_z), to_dense(x), to_dense(dw));
    let (m, n, bcols) = (g.len(), xd.len(), x.cols());
    let b = bcols as f64;
    let mut inner = vec![vec![0.0; bcols]; m];
    for i in 0..m {
        for col in 0..bcols {
            let mut wx = 0.0;
            for k in 0..n {
                wx += w[i][k] * xd[k][col];
            }
            inner[i][col] = eta * b * g[i][col] + wx;
        }
    }
    let mut out = vec![vec![0.0; n]; m];
    for i in 0..m {
        for k in 0..n {
            let mut s = 0.0;
            for col in 0..bcols {
                s += inner[i][col] * xd[k][col];
            }
            out[i][k] = 2.0 * s + 2.0 * lambda * b * w[i][k];
        }
    }
    from_dense(&out, n)
}

/// Minimises the ridge objective by plain gradient descent from `ΔW = 0`.
///
/// With `step_size = None` the step is `0.9/L`, where `L = 2·λ_max(x·xᵀ + λB·I)`
/// is estimated by 20 power iterations. Stops early once the gradient bound
/// `‖∇F‖ / (2λB)` on the distance to the minimiser falls below `1e-11·‖ΔW‖`.
/// Any increase of the objective is reported as divergence.
pub fn minimize_update_objective(
    grad_z: &Mat,
    x: &Mat,
    eta: f64,
    lambda: f64,
    steps: usize,
    step_size: Option<f64>,
) -> Result<Mat> {
    if grad_z.cols() != x.cols() {
        return Err(Error::Shape(format!(
            "minimize_update_objective: grad_z has {} columns, x has {}",
            grad_z.cols(),
            x.cols()
        )));
    }
    if !(lambda > 0.0) {
        return Err(Error::InvalidArgument(format!("lambda must be positive, got {lambda}")));
    }
    let b = x.cols() as f64;
    let step = match step_size {
        Some(s) => s,
        None => {
            let a = from_dense(&outer_gram(&to_dense(x), lambda * b), x.rows());
            0.9 / (2.0 * power_iteration_max(&a, 20))
        }
    };
    let mut dw = Mat::zeros(grad_z.rows(), x.rows());
    let mut f_prev = update_objective(grad_z, x, eta, lambda, &dw);
    for k in 0..steps {
        let grad = update_objective_gradient(grad_z, x, eta, lambda, &dw);
        let gnorm = frob(&to_dense(&grad));
        let wnorm = frob(&to_dense(&dw));
        if gnorm / (2.0 * lambda * b) <= 1e-11 * wnorm || gnorm == 0.0 {
            break;
        }
        let next = Mat::from_fn(dw.rows(), dw.cols(), |i, j| dw.get(i, j) - step * grad.get(i, j));
        let f_next = update_objective(grad_z, x, eta, lambda, &next);
        if f_next > f_prev + 1e-12 * f_prev.abs().max(1.0) {
            return Err(Error::Divergence {
                step: k,
                before: f_prev,
                after: f_next,
            });
        }
        dw = next;
        f_prev = f_next;
    }
    Ok(dw)
}

/// Solves the assembled normal equations `ΔW·(x·xᵀ + λB·I) = −η·B·∇z·xᵀ`
/// by Gaussian elimination, keeping the batch factors uncancelled.
pub fn normal_equation_update(grad_z: &Mat, x: &Mat, eta: f64, lambda: f64) -> Result<Mat> {
    if grad_z.cols() != x.cols() {
        return Err(Error::Shape("normal_equation_update: column mismatch".into()));
    }
    let b = x.cols() as f64;
    let (g, xd) = (to_dense(grad_z), to_dense(x));
    let (m, n) = (g.len(), xd.len());
    let a = outer_gram(&xd, lambda * b);
    // Transposed system: A·ΔWᵀ = −η·B·x·∇zᵀ  (A symmetric).
    let mut rhs = vec![vec![0.0; m]; n];
    for k in 0..n {
        for i in 0..m {
            let mut s = 0.0;
            for col in 0..x.cols() {
                s += xd[k][col] * g[i][col];
            }
            rhs[k][i] = -eta * b * s;
        }
    }
    let sol = gauss_solve(&from_dense(&a, n), &from_dense(&rhs, m))?;
    Ok(Mat::from_fn(m, n, |i, k| sol.get(k, i)))
}

/// Gaussian elimination with partial pivoting, for every column of `b`.
pub fn gauss_solve(a: &Mat, b: &Mat) -> Result<Mat> {
    let n = a.rows();
    if a.cols() != n || b.rows() != n {
        return Err(Error::Shape(format!(
            "gauss_solve: {}x{} system with {}x{} right-hand side",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    let k = b.cols();
    let mut aug: Dense = (0..n)
        .map(|i| {
            let mut r = a.row(i).to_vec();
            r.extend_from_slice(b.row(i));
            r
        })
        .collect();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&p, &q| aug[p][col].abs().total_cmp(&aug[q][col].abs()))
            .unwrap_or(col);
        if aug[pivot][col] == 0.0 {
            return Err(Error::Singular(col));
        }
        aug.swap(col, pivot);
        for r in (col + 1)..n {
            let factor = aug[r][col] / aug[col][col];
            if factor == 0.0 {
                continue;
            }
            for c in col..(n + k) {
                aug[r][c] -= factor * aug[col][c];
            }
        }
    }
    let mut x = vec![vec![0.0; k]; n];
    for i in (0..n).rev() {
        for c in 0..k {
            let mut s = aug[i][n + c];
            for j in (i + 1)..n {
                s -= aug[i][j] * x[j][c];
            }
            x[i][c] = s / aug[i][i];
        }
    }
    Ok(from_dense(&x, k))
}

/// Central differences `(f(θ+εeᵢ) − f(θ−εeᵢ)) / 2ε`.
pub fn finite_diff<F: FnMut(&[f64]) -> f64>(mut f: F, theta: &[f64], eps: f64) -> Vec<f64> {
    let mut probe = theta.to_vec();
    let mut out = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        let orig = probe[i];
        probe[i] = orig + eps;
        let up = f(&probe);
        probe[i] = orig - eps;
        let down = f(&probe);
        probe[i] = orig;
        out.push((up - down) / (2.0 * eps));
    }
    out
}

fn padded(img: &ImageBatch, bi: usize, ci: usize, y: isize, x: isize) -> f64 {
    if y < 0 || x < 0 || y >= img.h as isize || x >= img.w as isize {
        0.0
    } else {
        img.at(bi, ci, y as usize, x as usize)
    }
}

fn conv_out_dims(img: &ImageBatch, g: ConvGeom) -> Result<(usize, usize)> {
    let span_h = img.h + 2 * g.ph;
    let span_w = img.w + 2 * g.pw;
    if g.sh == 0 || g.sw == 0 || g.kh == 0 || g.kw == 0 || span_h < g.kh || span_w < g.kw {
        return Err(Error::Geometry(format!("{g:?} on {}x{}", img.h, img.w)));
    }
    if (span_h - g.kh) % g.sh != 0 || (span_w - g.kw) % g.sw != 0 {
        return Err(Error::Geometry(format!("{g:?} does not tile {}x{}", img.h, img.w)));
    }
    Ok(((span_h - g.kh) / g.sh + 1, (span_w - g.kw) / g.sw + 1))
}

/// Direct convolution. `w` is `out × (c·kh·kw)`; the result is laid out
/// `(b, out, oh, ow)`.
pub fn naive_conv(w: &Mat, img: &ImageBatch, g: ConvGeom) -> Result<Vec<f64>> {
    let (oh, ow) = conv_out_dims(img, g)?;
    if w.cols() != img.c * g.kh * g.kw {
        return Err(Error::Shape(format!(
            "naive_conv: weight has {} columns, patch has {}",
            w.cols(),
            img.c * g.kh * g.kw
        )));
    }
    let outc = w.rows();
    let mut out = vec![0.0; img.b * outc * oh * ow];
    for bi in 0..img.b {
        for o in 0..outc {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut s = 0.0;
                    for ci in 0..img.c {
                        for ki in 0..g.kh {
                            for kj in 0..g.kw {
                                let y = (oy * g.sh + ki) as isize - g.ph as isize;
                                let x = (ox * g.sw + kj) as isize - g.pw as isize;
                                s += w.get(o, (ci * g.kh + ki) * g.kw + kj) * padded(img, bi, ci, y, x);
                            }
                        }
                    }
                    out[((bi * outc + o) * oh + oy) * ow + ox] = s;
                }
            }
        }
    }
    Ok(out)
}

/// Weight gradient of the direct convolution for an upstream gradient laid
/// out `(b, out, oh, ow)`.
pub fn naive_conv_wgrad(
    grad_out: &[f64],
    out_channels: usize,
    img: &ImageBatch,
    g: ConvGeom,
) -> Result<Mat> {
    let (oh, ow) = conv_out_dims(img, g)?;
    if grad_out.len() != img.b * out_channels * oh * ow {
        return Err(Error::Shape("naive_conv_wgrad: upstream gradient size".into()));
    }
    let n = img.c * g.kh * g.kw;
    let mut dw = Mat::zeros(out_channels, n);
    for o in 0..out_channels {
        for ci in 0..img.c {
            for ki in 0..g.kh {
                for kj in 0..g.kw {
                    let mut s = 0.0;
                    for bi in 0..img.b {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let y = (oy * g.sh + ki) as isize - g.ph as isize;
                                let x = (ox * g.sw + kj) as isize - g.pw as isize;
                                s += grad_out[((bi * out_channels + o) * oh + oy) * ow + ox]
                                    * padded(img, bi, ci, y, x);
                            }
                        }
                    }
                    dw.set(o, (ci * g.kh + ki) * g.kw + kj, s);
                }
            }
        }
    }
    Ok(dw)
}

/// Solves the preconditioned product through the example-space system,
/// `x·(xᵀx/B + λI_B)⁻¹`, which equals `(x·xᵀ/B + λI_n)⁻¹·x`.
pub fn push_through_precondition(x: &Mat, lambda: f64) -> Result<Mat> {
    let b = x.cols();
    let xd = to_dense(x);
    let mut k = vec![vec![0.0; b]; b];
    for i in 0..b {
        for j in 0..b {
            let mut s = 0.0;
            for r in 0..xd.len() {
                s += xd[r][i] * xd[r][j];
            }
            k[i][j] = s / b as f64;
        }
        k[i][i] += lambda;
    }
    // x·K⁻¹ = (K⁻¹·xᵀ)ᵀ since K is symmetric.
    let xt = Mat::from_fn(b, x.rows(), |i, r| xd[r][i]);
    let sol = gauss_solve(&from_dense(&k, b), &xt)?;
    Ok(Mat::from_fn(x.rows(), b, |r, i| sol.get(i, r)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{chol_solve, cholesky, frob_norm};
    use crate::sample::{rand_mat, rand_spd, rel_err};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn minimize_zero_gradient_stays_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = rand_mat(&mut rng, 3, 4);
        let dw = minimize_update_objective(&Mat::zeros(2, 4), &x, 0.1, 0.1, 1000, None).unwrap();
        assert_eq!(frob_norm(&dw), 0.0);
    }

    #[test]
    fn minimize_scalar_closed_form() {
        // g=1, x=2, η=0.1, λ=0.1, B=1: ΔW = −η·g·x/(x² + λ) = −0.2/4.1.
        let dw = minimize_update_objective(
            &Mat::from_rows(&[[1.0]]),
            &Mat::from_rows(&[[2.0]]),
            0.1,
            0.1,
            100_000,
            None,
        )
        .unwrap();
        let want = -0.2 / 4.1;
        assert!((dw.get(0, 0) - want).abs() < 1e-12, "{} vs {want}", dw.get(0, 0));
        assert!((want - (-0.04878)).abs() < 1e-5);
    }

    #[test]
    fn minimize_matches_normal_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10 {
            let g = rand_mat(&mut rng, 3, 5);
            let x = rand_mat(&mut rng, 4, 5);
            let gd = minimize_update_objective(&g, &x, 0.3, 0.1, 200_000, None).unwrap();
            let ne = normal_equation_update(&g, &x, 0.3, 0.1).unwrap();
            assert!(rel_err(&gd, &ne) < 1e-8, "{}", rel_err(&gd, &ne));
            let stat = update_objective_gradient(&g, &x, 0.3, 0.1, &ne);
            assert!(frob_norm(&stat) < 1e-10);
        }
    }

    #[test]
    fn oversized_step_is_reported() {
        let x = Mat::from_rows(&[[3.0, 1.0]]);
        let g = Mat::from_rows(&[[1.0, -1.0]]);
        let err = minimize_update_objective(&g, &x, 1.0, 0.1, 50, Some(10.0)).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }));
    }

    #[test]
    fn objective_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = rand_mat(&mut rng, 2, 3);
        let x = rand_mat(&mut rng, 3, 3);
        let w = rand_mat(&mut rng, 2, 3);
        let analytic = update_objective_gradient(&g, &x, 0.5, 0.2, &w);
        let fd = finite_diff(
            |t| update_objective(&g, &x, 0.5, 0.2, &Mat::from_vec(2, 3, t.to_vec()).unwrap()),
            w.data(),
            1e-5,
        );
        for (a, f) in analytic.data().iter().zip(&fd) {
            assert!((a - f).abs() < 1e-6 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn gauss_identity_and_hilbert() {
        let b = Mat::from_rows(&[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]);
        assert_eq!(gauss_solve(&Mat::identity(3), &b).unwrap(), b);

        let h = Mat::from_fn(4, 4, |i, j| 1.0 / (i + j + 1) as f64);
        let e1 = Mat::from_rows(&[[1.0], [0.0], [0.0], [0.0]]);
        let y = gauss_solve(&h, &e1).unwrap();
        // First column of the exact inverse Hilbert matrix of order 4.
        let exact = Mat::from_rows(&[[16.0], [-120.0], [240.0], [-140.0]]);
        assert!(rel_err(&y, &exact) < 1e-8);

        assert!(matches!(
            gauss_solve(&Mat::zeros(2, 2), &Mat::zeros(2, 1)),
            Err(Error::Singular(0))
        ));
    }

    #[test]
    fn gauss_agrees_with_cholesky() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = rand_spd(&mut rng, 8, 0.1);
        let b = rand_mat(&mut rng, 8, 3);
        let g = gauss_solve(&a, &b).unwrap();
        let c = chol_solve(&cholesky(&a).unwrap(), &b).unwrap();
        assert!(rel_err(&g, &c) < 1e-9);
    }

    #[test]
    fn finite_diff_quadratic_and_order() {
        let f = |t: &[f64]| 3.0 * t[0] * t[0] - 2.0 * t[0] * t[1] + t[1];
        let g = finite_diff(f, &[1.5, -0.5], 1e-5);
        assert!((g[0] - (9.0 + 1.0)).abs() < 1e-9);
        assert!((g[1] - (-3.0 + 1.0)).abs() < 1e-9);

        // Central differences are second order: halving ε quarters the error.
        let h = |t: &[f64]| t[0].sin();
        let exact = 0.7f64.cos();
        let e1 = (finite_diff(h, &[0.7], 1e-2)[0] - exact).abs();
        let e2 = (finite_diff(h, &[0.7], 5e-3)[0] - exact).abs();
        let ratio = e1 / e2;
        assert!((ratio - 4.0).abs() < 0.05, "ratio {ratio}");
    }

    #[test]
    fn one_by_one_kernel_is_pixel_map() {
        let img = ImageBatch::new(1, 2, 2, 2, vec![1.0, 2.0, 3.0, 4.0, 10.0, 20.0, 30.0, 40.0]).unwrap();
        let w = Mat::from_rows(&[[1.0, 0.5]]);
        let out = naive_conv(&w, &img, ConvGeom::square(1, 1, 0)).unwrap();
        assert_eq!(out, vec![6.0, 12.0, 18.0, 24.0]);
    }

    #[test]
    fn push_through_matches_direct_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = rand_mat(&mut rng, 6, 3);
        let pt = push_through_precondition(&x, 0.1).unwrap();
        let g = Mat::from_fn(6, 6, |i, j| {
            let s: f64 = (0..3).map(|k| x.get(i, k) * x.get(j, k)).sum();
            s / 3.0 + if i == j { 0.1 } else { 0.0 }
        });
        let direct = gauss_solve(&g, &x).unwrap();
        assert!(rel_err(&pt, &direct) < 1e-10);
    }
}
