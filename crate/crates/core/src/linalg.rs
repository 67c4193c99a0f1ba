//! Dense row-major matrices and a Cholesky-based SPD solver.
//!
//! Every routine here is a pure function of its inputs. Loop order is fixed,
//! so results are bit-reproducible for a given build; the row-parallel
//! matmul path computes each output row with the same sequential kernel.

use std::fmt;

use rayon::prelude::*;

use crate::error::{shape_err, Error, Result};

/// Products above this many multiply-adds are split across the rayon pool.
const PAR_THRESHOLD: usize = 1 << 20;

#[derive(Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return shape_err(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            ));
        }
        Ok(Mat { rows, cols, data })
    }

    /// Builds a matrix from row slices. Panics on ragged input; meant for literals.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Mat {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Mat { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn scale(&self, s: f64) -> Mat {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Mat {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Sum of each row, as a plain vector.
    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows).map(|i| self.row(i).iter().sum()).collect()
    }

    /// Sum of elementwise products.
    pub fn dot(&self, other: &Mat) -> Result<f64> {
        check_same(self, other, "dot")?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }
}

impl fmt::Debug for Mat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Mat {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows.min(8) {
            let row = self.row(i);
            let shown: Vec<String> = row.iter().take(8).map(|v| format!("{v:.6}")).collect();
            let tail = if self.cols > 8 { ", ..." } else { "" };
            writeln!(f, "  [{}{}]", shown.join(", "), tail)?;
        }
        if self.rows > 8 {
            writeln!(f, "  ...")?;
        }
        write!(f, "]")
    }
}

fn check_same(a: &Mat, b: &Mat, op: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return shape_err(format!(
            "{op}: {}x{} vs {}x{}",
            a.rows, a.cols, b.rows, b.cols
        ));
    }
    Ok(())
}

/// `out += Σ_p a[p] · b[p*stride .. p*stride + out.len()]`.
#[inline]
pub(crate) fn gemm_acc(a: &[f64], b: &[f64], stride: usize, out: &mut [f64]) {
    let n = out.len();
    let mut p = 0;
    // Four rows of b per pass keeps the output row in cache across updates.
    while p + 4 <= a.len() {
        let (a0, a1, a2, a3) = (a[p], a[p + 1], a[p + 2], a[p + 3]);
        let b0 = &b[p * stride..p * stride + n];
        let b1 = &b[(p + 1) * stride..(p + 1) * stride + n];
        let b2 = &b[(p + 2) * stride..(p + 2) * stride + n];
        let b3 = &b[(p + 3) * stride..(p + 3) * stride + n];
        for j in 0..n {
            out[j] += a0 * b0[j] + a1 * b1[j] + a2 * b2[j] + a3 * b3[j];
        }
        p += 4;
    }
    while p < a.len() {
        let av = a[p];
        for (o, bv) in out.iter_mut().zip(&b[p * stride..p * stride + n]) {
            *o += av * bv;
        }
        p += 1;
    }
}

#[inline]
fn gemm_row(a_row: &[f64], b: &Mat, out_row: &mut [f64]) {
    gemm_acc(a_row, &b.data, b.cols, out_row);
}

pub fn matmul(a: &Mat, b: &Mat) -> Result<Mat> {
    if a.cols != b.rows {
        return shape_err(format!(
            "matmul: {}x{} times {}x{}",
            a.rows, a.cols, b.rows, b.cols
        ));
    }
    let mut out = Mat::zeros(a.rows, b.cols);
    if b.cols == 0 {
        return Ok(out);
    }
    let work = a.rows * a.cols * b.cols;
    if work >= PAR_THRESHOLD && rayon::current_num_threads() > 1 {
        out.data
            .par_chunks_mut(b.cols)
            .enumerate()
            .for_each(|(i, out_row)| gemm_row(a.row(i), b, out_row));
    } else {
        for (i, out_row) in out.data.chunks_mut(b.cols).enumerate() {
            gemm_row(a.row(i), b, out_row);
        }
    }
    Ok(out)
}

/// `a · bᵀ` without materialising the transpose at the call site.
pub fn matmul_nt(a: &Mat, b: &Mat) -> Result<Mat> {
    if a.cols != b.cols {
        return shape_err(format!(
            "matmul_nt: {}x{} times ({}x{})ᵀ",
            a.rows, a.cols, b.rows, b.cols
        ));
    }
    matmul(a, &transpose(b))
}

/// `aᵀ · b`.
pub fn matmul_tn(a: &Mat, b: &Mat) -> Result<Mat> {
    if a.rows != b.rows {
        return shape_err(format!(
            "matmul_tn: ({}x{})ᵀ times {}x{}",
            a.rows, a.cols, b.rows, b.cols
        ));
    }
    matmul(&transpose(a), b)
}

pub fn transpose(a: &Mat) -> Mat {
    let mut out = Mat::zeros(a.cols, a.rows);
    const BLOCK: usize = 32;
    for i0 in (0..a.rows).step_by(BLOCK) {
        for j0 in (0..a.cols).step_by(BLOCK) {
            for i in i0..(i0 + BLOCK).min(a.rows) {
                for j in j0..(j0 + BLOCK).min(a.cols) {
                    out.data[j * a.rows + i] = a.data[i * a.cols + j];
                }
            }
        }
    }
    out
}

pub fn add_scaled_identity(a: &Mat, s: f64) -> Result<Mat> {
    if !a.is_square() {
        return shape_err(format!(
            "add_scaled_identity needs a square matrix, got {}x{}",
            a.rows, a.cols
        ));
    }
    let mut out = a.clone();
    for i in 0..a.rows {
        out.data[i * a.cols + i] += s;
    }
    Ok(out)
}

pub fn frob_norm(a: &Mat) -> f64 {
    a.data.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// `alpha·a + b`.
pub fn axpy(alpha: f64, a: &Mat, b: &Mat) -> Result<Mat> {
    check_same(a, b, "axpy")?;
    Ok(Mat {
        rows: a.rows,
        cols: a.cols,
        data: a
            .data
            .iter()
            .zip(&b.data)
            .map(|(x, y)| alpha * x + y)
            .collect(),
    })
}

pub fn sub(a: &Mat, b: &Mat) -> Result<Mat> {
    axpy(-1.0, b, a)
}

/// Largest absolute asymmetry `|a_ij − a_ji|` relative to the largest entry.
pub fn asymmetry(a: &Mat) -> f64 {
    let scale = a.data.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let mut worst = 0.0f64;
    for i in 0..a.rows {
        for j in (i + 1)..a.cols {
            worst = worst.max((a.get(i, j) - a.get(j, i)).abs());
        }
    }
    worst / scale
}

/// Lower-triangular factor `L` with `L·Lᵀ = A`.
#[derive(Clone, Debug)]
pub struct CholFactor {
    l: Mat,
}

impl CholFactor {
    pub fn dim(&self) -> usize {
        self.l.rows
    }

    pub fn lower(&self) -> &Mat {
        &self.l
    }

    /// Solves `(L·Lᵀ)·y = v` in place for a single vector.
    pub fn solve_vec(&self, v: &mut [f64]) {
        let n = self.l.rows;
        debug_assert_eq!(v.len(), n);
        let l = &self.l.data;
        for i in 0..n {
            let row = &l[i * n..i * n + i];
            let s: f64 = row.iter().zip(&v[..i]).map(|(a, b)| a * b).sum();
            v[i] = (v[i] - s) / l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = v[i];
            for k in (i + 1)..n {
                s -= l[k * n + i] * v[k];
            }
            v[i] = s / l[i * n + i];
        }
    }

    /// Returns `s·A⁻¹` for `s` with `dim` columns. Since `A` is symmetric
    /// this is `(A⁻¹·sᵀ)ᵀ`; both triangular sweeps update whole rows of `sᵀ`.
    pub fn solve_right(&self, s: &Mat) -> Result<Mat> {
        let n = self.dim();
        if s.cols != n {
            return shape_err(format!(
                "solve_right: {}x{} against factor of dim {}",
                s.rows, s.cols, n
            ));
        }
        let m = s.rows;
        let mut y = transpose(s);
        let l = &self.l.data;
        let mut acc = vec![0.0; m];
        for i in 0..n {
            let (done, rest) = y.data.split_at_mut(i * m);
            acc.iter_mut().for_each(|v| *v = 0.0);
            gemm_acc(&l[i * n..i * n + i], done, m, &mut acc);
            let d = l[i * n + i];
            for (v, a) in rest[..m].iter_mut().zip(&acc) {
                *v = (*v - a) / d;
            }
        }
        let lt = transpose(&self.l);
        for i in (0..n).rev() {
            let (head, tail) = y.data.split_at_mut((i + 1) * m);
            acc.iter_mut().for_each(|v| *v = 0.0);
            gemm_acc(&lt.data[i * n + i + 1..(i + 1) * n], tail, m, &mut acc);
            let d = l[i * n + i];
            for (v, a) in head[i * m..].iter_mut().zip(&acc) {
                *v = (*v - a) / d;
            }
        }
        Ok(transpose(&y))
    }
}

pub fn cholesky(a: &Mat) -> Result<CholFactor> {
    if !a.is_square() {
        return shape_err(format!("cholesky needs a square matrix, got {}x{}", a.rows, a.cols));
    }
    if !a.all_finite() {
        return Err(Error::NonFinite("cholesky input".into()));
    }
    let asym = asymmetry(a);
    if asym > 1e-9 {
        return shape_err(format!("cholesky input is not symmetric (relative asymmetry {asym:e})"));
    }
    let n = a.rows;
    let mut l = Mat::zeros(n, n);
    for j in 0..n {
        let lj = &l.data[j * n..j * n + j];
        let d = a.get(j, j) - lj.iter().map(|v| v * v).sum::<f64>();
        if !(d > 0.0) {
            return Err(Error::NotPositiveDefinite { pivot: j, value: d });
        }
        let djj = d.sqrt();
        l.data[j * n + j] = djj;
        for i in (j + 1)..n {
            let (head, tail) = l.data.split_at_mut(i * n);
            let lj = &head[j * n..j * n + j];
            let li = &tail[..j];
            let s: f64 = li.iter().zip(lj).map(|(x, y)| x * y).sum();
            tail[j] = (a.get(i, j) - s) / djj;
        }
    }
    Ok(CholFactor { l })
}

/// Solves `(L·Lᵀ)·y = b` column by column.
pub fn chol_solve(f: &CholFactor, b: &Mat) -> Result<Mat> {
    if b.rows != f.dim() {
        return shape_err(format!(
            "chol_solve: factor of dim {} against {}x{} right-hand side",
            f.dim(),
            b.rows,
            b.cols
        ));
    }
    let bt = transpose(b);
    let yt = f.solve_right(&bt)?;
    Ok(transpose(&yt))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sample::{rand_mat, rand_spd, rel_err};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn naive_matmul(a: &Mat, b: &Mat) -> Mat {
        let mut out = Mat::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut s = 0.0;
                for k in 0..a.cols() {
                    s += a.get(i, k) * b.get(k, j);
                }
                out.set(i, j, s);
            }
        }
        out
    }

    #[test]
    fn matmul_identity_and_hand_case() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = rand_mat(&mut rng, 3, 3);
        assert_eq!(matmul(&Mat::identity(3), &a).unwrap(), a);
        let c = matmul(
            &Mat::from_rows(&[[1.0, 2.0], [3.0, 4.0]]),
            &Mat::from_rows(&[[0.0], [1.0]]),
        )
        .unwrap();
        assert_eq!(c, Mat::from_rows(&[[2.0], [4.0]]));
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = rand_mat(&mut rng, 5, 7);
        let b = rand_mat(&mut rng, 7, 3);
        let got = matmul(&a, &b).unwrap();
        let want = naive_matmul(&a, &b);
        assert!(frob_norm(&sub(&got, &want).unwrap()) < 1e-12);
        assert!(matmul(&b, &b).is_err());
    }

    #[test]
    fn nt_tn_variants() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = rand_mat(&mut rng, 4, 6);
        let b = rand_mat(&mut rng, 5, 6);
        let c = rand_mat(&mut rng, 4, 2);
        assert!(rel_err(&matmul_nt(&a, &b).unwrap(), &naive_matmul(&a, &transpose(&b))) < 1e-14);
        assert!(rel_err(&matmul_tn(&a, &c).unwrap(), &naive_matmul(&transpose(&a), &c)) < 1e-14);
    }

    #[test]
    fn scaled_identity() {
        assert_eq!(add_scaled_identity(&Mat::zeros(2, 2), 1.0).unwrap(), Mat::identity(2));
        assert_eq!(
            add_scaled_identity(&Mat::identity(3), 0.1).unwrap(),
            Mat::identity(3).scale(1.1)
        );
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = rand_spd(&mut rng, 4, 0.0);
        let b = add_scaled_identity(&a, 0.1).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let want = if i == j { a.get(i, j) + 0.1 } else { a.get(i, j) };
                assert_eq!(b.get(i, j), want);
            }
        }
        assert!(add_scaled_identity(&Mat::zeros(2, 3), 1.0).is_err());
    }

    #[test]
    fn cholesky_small_cases() {
        let f = cholesky(&Mat::identity(4)).unwrap();
        assert_eq!(f.lower(), &Mat::identity(4));

        let f = cholesky(&Mat::from_rows(&[[4.0, 2.0], [2.0, 3.0]])).unwrap();
        let want = Mat::from_rows(&[[2.0, 0.0], [1.0, 2f64.sqrt()]]);
        assert!(frob_norm(&sub(f.lower(), &want).unwrap()) < 1e-15);

        let y = chol_solve(&f, &Mat::from_rows(&[[6.0], [5.0]])).unwrap();
        assert!(frob_norm(&sub(&y, &Mat::from_rows(&[[1.0], [1.0]])).unwrap()) < 1e-14);

        let b = Mat::from_rows(&[[1.0, -2.0], [3.0, 0.5], [0.0, 7.0]]);
        let y = chol_solve(&cholesky(&Mat::identity(3)).unwrap(), &b).unwrap();
        assert_eq!(y, b);
    }

    #[test]
    fn cholesky_rejects_indefinite_and_asymmetric() {
        let err = cholesky(&Mat::from_rows(&[[1.0, 2.0], [2.0, 1.0]])).unwrap_err();
        assert!(matches!(err, Error::NotPositiveDefinite { pivot: 1, .. }));
        assert!(matches!(
            cholesky(&Mat::zeros(2, 2)).unwrap_err(),
            Error::NotPositiveDefinite { pivot: 0, .. }
        ));
        assert!(cholesky(&Mat::from_rows(&[[2.0, 1.0], [0.0, 2.0]])).is_err());
        assert!(cholesky(&Mat::from_rows(&[[f64::NAN]])).is_err());
    }

    #[test]
    fn gram_reconstruction() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = rand_mat(&mut rng, 12, 20);
        let g = add_scaled_identity(&matmul_nt(&x, &x).unwrap().scale(1.0 / 20.0), 0.1).unwrap();
        let f = cholesky(&g).unwrap();
        let rec = matmul_nt(f.lower(), f.lower()).unwrap();
        assert!(rel_err(&rec, &g) < 1e-10);
    }

    #[test]
    fn norms_and_transpose() {
        assert_eq!(frob_norm(&Mat::zeros(3, 2)), 0.0);
        assert!((frob_norm(&Mat::identity(3)) - 3f64.sqrt()).abs() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = rand_mat(&mut rng, 37, 45);
        assert_eq!(transpose(&transpose(&a)), a);
        assert_eq!(transpose(&a).get(40, 3), a.get(3, 40));
        assert!(axpy(1.0, &a, &Mat::zeros(2, 2)).is_err());
        let z = axpy(-1.0, &a, &a).unwrap();
        assert_eq!(frob_norm(&z), 0.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn solve_recovers_known_solution(n in 1usize..=64, k in 1usize..4, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = rand_spd(&mut rng, n, 0.1);
            let y0 = rand_mat(&mut rng, n, k);
            let b = matmul(&a, &y0).unwrap();
            let y = chol_solve(&cholesky(&a).unwrap(), &b).unwrap();
            prop_assert!(rel_err(&y, &y0) < 1e-8);
        }

        #[test]
        fn cholesky_reconstructs(n in 1usize..=32, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = rand_spd(&mut rng, n, 0.05);
            let f = cholesky(&a).unwrap();
            let l = f.lower();
            for i in 0..n {
                prop_assert!(l.get(i, i) > 0.0);
                for j in (i + 1)..n {
                    prop_assert_eq!(l.get(i, j), 0.0);
                }
            }
            prop_assert!(rel_err(&matmul_nt(l, l).unwrap(), &a) < 1e-10);
        }

        #[test]
        fn matmul_is_associative(p in 1usize..=16, q in 1usize..=16, r in 1usize..=16, s in 1usize..=16, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = rand_mat(&mut rng, p, q);
            let b = rand_mat(&mut rng, q, r);
            let c = rand_mat(&mut rng, r, s);
            let left = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
            let right = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
            prop_assert!(rel_err(&left, &right) < 1e-10);
        }
    }
}
