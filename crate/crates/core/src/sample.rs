//! Random instance generators and comparison helpers shared by the
//! verification suite and the tests.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::linalg::{frob_norm, Mat};

/// Matrix with i.i.d. standard normal entries.
pub fn rand_mat<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Mat {
    Mat::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// `A·Aᵀ/n + shift·I` for a random square `A`; SPD whenever `shift > 0`.
pub fn rand_spd<R: Rng + ?Sized>(rng: &mut R, n: usize, shift: f64) -> Mat {
    let a = rand_mat(rng, n, n);
    let mut g = Mat::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = a.row(i).iter().zip(a.row(j)).map(|(x, y)| x * y).sum::<f64>() / n as f64;
            g.set(i, j, s);
            g.set(j, i, s);
        }
        g.set(i, i, g.get(i, i) + shift);
    }
    g
}

/// `‖a − b‖_F / max(‖b‖_F, tiny)`.
pub fn rel_err(a: &Mat, b: &Mat) -> f64 {
    assert_eq!(a.shape(), b.shape(), "rel_err shape mismatch");
    let diff: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    diff / frob_norm(b).max(f64::MIN_POSITIVE)
}

/// Cosine similarity of two equally shaped matrices; zero when either is zero.
pub fn cosine(a: &Mat, b: &Mat) -> f64 {
    let na = frob_norm(a);
    let nb = frob_norm(b);
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let d: f64 = a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum();
    d / (na * nb)
}

/// Orthonormalizes the rows of `q` in place (modified Gram–Schmidt, two
/// passes). Rows must be linearly independent.
pub fn gram_schmidt(q: &mut Mat) {
    for _ in 0..2 {
        for i in 0..q.rows() {
            for j in 0..i {
                let rj = q.row(j).to_vec();
                let d: f64 = q.row(i).iter().zip(&rj).map(|(a, b)| a * b).sum();
                for (v, r) in q.row_mut(i).iter_mut().zip(&rj) {
                    *v -= d * r;
                }
            }
            let norm = q.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            q.row_mut(i).iter_mut().for_each(|v| *v /= norm);
        }
    }
}

/// `k×len` matrix with orthonormal rows (`k ≤ len`).
pub fn orthonormal_rows<R: Rng + ?Sized>(rng: &mut R, k: usize, len: usize) -> Mat {
    assert!(k <= len, "need k <= len");
    let mut q = rand_mat(rng, k, len);
    gram_schmidt(&mut q);
    q
}
