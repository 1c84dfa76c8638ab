//! Full Hessians by central differences of an analytic gradient, cyclic
//! Jacobi diagonalization, and the spectral indices derived from them.
//!
//! `alpha` is the fraction of negative eigenvalues (descent directions) and
//! `gamma` the fraction of eigenvalues indistinguishable from zero (flat
//! directions), both relative to the parameter dimension.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Largest dimension [`hessian_fd`] accepts.
pub const MAX_HESSIAN_DIM: usize = 2000;

/// Relative probe step, roughly the cube root of f64 machine epsilon.
pub const FD_REL_STEP: f64 = 6.0e-6;

pub const DEFAULT_ZERO_TOL_REL: f64 = 1e-6;

const JACOBI_MAX_SWEEPS: usize = 100;
const JACOBI_REL_TOL: f64 = 1e-12;

/// Header of the spectrum dump.
pub const SPECTRUM_CSV_HEADER: &str = "checkpoint_epoch,eig_index,eigenvalue";

#[derive(Debug, Clone)]
pub struct HessianEstimate {
    /// Symmetrized Hessian `(H + Hᵀ) / 2`.
    pub matrix: Matrix,
    /// `max |H_ij - H_ji|` before symmetrization.
    pub asymmetry: f64,
}

impl HessianEstimate {
    /// Asymmetry bound `1e-4 (1 + max |H|)` a smooth objective should meet.
    pub fn asymmetry_bound(&self) -> f64 {
        1e-4 * (1.0 + self.matrix.max_abs())
    }

    pub fn asymmetry_ok(&self) -> bool {
        self.asymmetry <= self.asymmetry_bound()
    }
}

/// Column `i` is `[g(θ + h_i e_i) - g(θ - h_i e_i)] / (2 h_i)` with
/// `h_i = 6e-6 · max(1, |θ_i|)`.
pub fn hessian_fd<F>(mut grad_fn: F, theta: &[f64]) -> Result<HessianEstimate>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let d = theta.len();
    if d == 0 {
        return Err(Error::InvalidArgument("empty parameter vector".into()));
    }
    if d > MAX_HESSIAN_DIM {
        return Err(Error::InvalidArgument(format!(
            "Hessian dimension {d} exceeds the limit of {MAX_HESSIAN_DIM}"
        )));
    }
    if let Some(i) = theta.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("theta[{i}] is not finite")));
    }
    let mut raw = Matrix::zeros(d, d);
    let mut probe = theta.to_vec();
    for i in 0..d {
        let step = FD_REL_STEP * theta[i].abs().max(1.0);
        probe[i] = theta[i] + step;
        let plus = grad_fn(&probe)?;
        probe[i] = theta[i] - step;
        let minus = grad_fn(&probe)?;
        probe[i] = theta[i];
        if plus.len() != d || minus.len() != d {
            return Err(Error::Shape(format!(
                "gradient has length {}, expected {d}",
                plus.len().min(minus.len())
            )));
        }
        for (r, (p, m)) in plus.iter().zip(&minus).enumerate() {
            let v = (p - m) / (2.0 * step);
            if !v.is_finite() {
                return Err(Error::Evaluation { coordinate: i });
            }
            raw[(r, i)] = v;
        }
    }
    let asymmetry = raw.max_asymmetry();
    let mut sym = raw;
    for i in 0..d {
        for j in (i + 1)..d {
            let avg = 0.5 * (sym[(i, j)] + sym[(j, i)]);
            sym[(i, j)] = avg;
            sym[(j, i)] = avg;
        }
    }
    Ok(HessianEstimate {
        matrix: sym,
        asymmetry,
    })
}

/// Eigenvalues in ascending order with matching eigenvector columns.
#[derive(Debug, Clone)]
pub struct Eigen {
    pub values: Vec<f64>,
    pub vectors: Matrix,
    pub sweeps: usize,
}

impl Eigen {
    /// `Q diag(λ) Qᵀ`.
    pub fn reconstruct(&self) -> Matrix {
        let n = self.values.len();
        let mut out = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                out[(i, j)] = (0..n)
                    .map(|k| self.vectors[(i, k)] * self.values[k] * self.vectors[(j, k)])
                    .sum();
            }
        }
        out
    }
}

fn check_symmetric(h: &Matrix) -> Result<()> {
    if !h.is_square() {
        return Err(Error::InvalidArgument(format!(
            "matrix is {}x{}, not square",
            h.rows(),
            h.cols()
        )));
    }
    let scale = h.max_abs();
    let asym = h.max_asymmetry();
    if asym > 1e-10 * scale {
        return Err(Error::InvalidArgument(format!(
            "matrix is not symmetric (max asymmetry {asym:e}, scale {scale:e})"
        )));
    }
    if !h.as_slice().iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidArgument(
            "matrix has non-finite entries".into(),
        ));
    }
    Ok(())
}

/// Ascending eigenvalues of a symmetric matrix.
pub fn eigenvalues_symmetric(h: &Matrix) -> Result<Vec<f64>> {
    Ok(jacobi(h, false)?.values)
}

/// Eigenvalues and eigenvectors by cyclic Jacobi rotations.
pub fn eigen_symmetric(h: &Matrix) -> Result<Eigen> {
    jacobi(h, true)
}

/// Indices per block of the block-cyclic pair ordering.
const JACOBI_BLOCK: usize = 32;

fn jacobi(h: &Matrix, with_vectors: bool) -> Result<Eigen> {
    check_symmetric(h)?;
    let n = h.rows();

    // Rows that are identically zero contribute exact zero eigenvalues with
    // unit eigenvectors; only the remaining block needs rotating.
    let active: Vec<usize> = (0..n)
        .filter(|&i| h.row(i).iter().any(|&v| v != 0.0))
        .collect();
    let k = active.len();
    let mut a = Matrix::zeros(k, k);
    for (bi, &i) in active.iter().enumerate() {
        for (bj, &j) in active.iter().enumerate() {
            a[(bi, bj)] = h[(i, j)];
        }
    }
    // Eigenvectors are accumulated as rows (Vᵀ) so updates stay contiguous.
    let mut vt = if with_vectors {
        Matrix::identity(k)
    } else {
        Matrix::zeros(0, 0)
    };

    let blocks: Vec<std::ops::Range<usize>> = (0..k)
        .step_by(JACOBI_BLOCK)
        .map(|s| s..(s + JACOBI_BLOCK).min(k))
        .collect();
    let mut work = BlockWork::default();
    let target = JACOBI_REL_TOL * a.frobenius_norm();
    let mut sweeps = 0;
    loop {
        let off = off_diagonal_norm(&a);
        if off <= target {
            break;
        }
        if sweeps == JACOBI_MAX_SWEEPS {
            return Err(Error::Convergence {
                sweeps,
                residual: off,
            });
        }
        sweeps += 1;
        for bi in 0..blocks.len() {
            for bj in bi..blocks.len() {
                rotate_block_pair(&mut a, &mut vt, &blocks[bi], &blocks[bj], &mut work);
            }
        }
    }

    let mut pairs: Vec<(f64, Option<usize>)> = (0..k).map(|i| (a[(i, i)], Some(i))).collect();
    pairs.extend(std::iter::repeat_n((0.0, None), n - k));
    pairs.sort_by(|x, y| x.0.total_cmp(&y.0));

    let mut vectors = Matrix::zeros(
        if with_vectors { n } else { 0 },
        if with_vectors { n } else { 0 },
    );
    if with_vectors {
        let inactive: Vec<usize> = (0..n).filter(|i| !active.contains(i)).collect();
        let mut next_inactive = inactive.iter();
        for (col, &(_, src)) in pairs.iter().enumerate() {
            match src {
                Some(bi) => {
                    for (bj, &row) in active.iter().enumerate() {
                        vectors[(row, col)] = vt[(bi, bj)];
                    }
                }
                None => {
                    let row = *next_inactive.next().expect("inactive count matches");
                    vectors[(row, col)] = 1.0;
                }
            }
        }
    }
    Ok(Eigen {
        values: pairs.into_iter().map(|(val, _)| val).collect(),
        vectors,
        sweeps,
    })
}

#[derive(Default)]
struct BlockWork {
    idx: Vec<usize>,
    rows: Vec<f64>,
    out: Vec<f64>,
}

/// Applies, in cyclic order, the rotations for every index pair `(i, j)`
/// with `i` in block `bi` and `j` in block `bj` (`i < j` when the blocks
/// coincide).
///
/// Each rotation angle depends only on entries inside the `S × S`
/// submatrix, `S = bi ∪ bj`, so the rotations are run on a copy of it while
/// their product `Q` is accumulated; the rest of rows and columns `S` then
/// receive `Qᵀ A[S, :]` in one matrix product. The result is the same
/// sequence of rotations as applying each to the full matrix.
fn rotate_block_pair(
    a: &mut Matrix,
    vt: &mut Matrix,
    bi: &std::ops::Range<usize>,
    bj: &std::ops::Range<usize>,
    work: &mut BlockWork,
) {
    let k = a.rows();
    let same = bi == bj;
    let mut idx = std::mem::take(&mut work.idx);
    idx.clear();
    idx.extend(bi.clone());
    if !same {
        idx.extend(bj.clone());
    }
    let m = idx.len();
    let split = bi.len();

    let mut sub = Matrix::zeros(m, m);
    let mut any = false;
    for (x, &i) in idx.iter().enumerate() {
        for (y, &j) in idx.iter().enumerate() {
            sub[(x, y)] = a[(i, j)];
        }
    }
    for x in 0..split {
        let ys = if same { (x + 1)..m } else { split..m };
        for y in ys {
            any |= sub[(x, y)] != 0.0;
        }
    }
    if !any {
        work.idx = idx;
        return;
    }
    let mut q = Matrix::identity(m);
    for x in 0..split {
        let ys = if same { (x + 1)..m } else { split..m };
        for y in ys {
            rotate(&mut sub, &mut q, x, y, true);
        }
    }

    apply_left(a, &idx, &q, work);
    // Columns S mirror rows S outside the block; the block itself is `sub`.
    for r in 0..k {
        let row = a.row_mut(r);
        for (x, &s) in idx.iter().enumerate() {
            row[s] = work.out[x * k + r];
        }
    }
    for (x, &i) in idx.iter().enumerate() {
        for (y, &j) in idx.iter().enumerate() {
            a[(i, j)] = sub[(x, y)];
        }
    }
    if vt.rows() > 0 {
        apply_left(vt, &idx, &q, work);
    }
    work.idx = idx;
}

/// Rows `idx` of `target` become `Qᵀ target[idx, :]`; the new rows are also
/// left in `work.out` (row-major, `|idx| × cols`).
fn apply_left(target: &mut Matrix, idx: &[usize], q: &Matrix, work: &mut BlockWork) {
    let cols = target.cols();
    let m = idx.len();
    work.rows.clear();
    for &i in idx {
        work.rows.extend_from_slice(target.row(i));
    }
    work.out.clear();
    work.out.resize(m * cols, 0.0);
    // SAFETY: q is m×m, rows is m×cols and out is m×cols, all row-major and
    // sized above; Qᵀ is read through swapped strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            m,
            cols,
            1.0,
            q.as_slice().as_ptr(),
            1,
            m as isize,
            work.rows.as_ptr(),
            cols as isize,
            1,
            0.0,
            work.out.as_mut_ptr(),
            cols as isize,
            1,
        );
    }
    for (x, &i) in idx.iter().enumerate() {
        target
            .row_mut(i)
            .copy_from_slice(&work.out[x * cols..(x + 1) * cols]);
    }
}

fn off_diagonal_norm(a: &Matrix) -> f64 {
    let n = a.rows();
    let mut s = 0.0;
    for i in 0..n {
        for (j, &x) in a.row(i).iter().enumerate() {
            if j != i {
                s += x * x;
            }
        }
    }
    s.sqrt()
}

/// One Jacobi rotation annihilating `a[p][q]`.
#[inline]
fn rotate(a: &mut Matrix, v: &mut Matrix, p: usize, q: usize, with_vectors: bool) {
    let apq = a[(p, q)];
    if apq == 0.0 {
        return;
    }
    let app = a[(p, p)];
    let aqq = a[(q, q)];
    let theta = (aqq - app) / (2.0 * apq);
    let t = if theta.is_finite() {
        let t = 1.0 / (theta.abs() + (theta * theta + 1.0).sqrt());
        if theta < 0.0 {
            -t
        } else {
            t
        }
    } else {
        // |theta| overflowed: the coupling is negligible against the diagonal gap
        0.5 / theta
    };
    let c = 1.0 / (t * t + 1.0).sqrt();
    let s = t * c;
    let n = a.rows();

    // Rows p and q are contiguous; the matching columns mirror them.
    for kk in 0..n {
        if kk == p || kk == q {
            continue;
        }
        let akp = a[(p, kk)];
        let akq = a[(q, kk)];
        let new_p = c * akp - s * akq;
        let new_q = s * akp + c * akq;
        a[(p, kk)] = new_p;
        a[(kk, p)] = new_p;
        a[(q, kk)] = new_q;
        a[(kk, q)] = new_q;
    }
    a[(p, p)] = app - t * apq;
    a[(q, q)] = aqq + t * apq;
    a[(p, q)] = 0.0;
    a[(q, p)] = 0.0;

    if with_vectors {
        for kk in 0..v.rows() {
            let vkp = v[(kk, p)];
            let vkq = v[(kk, q)];
            v[(kk, p)] = c * vkp - s * vkq;
            v[(kk, q)] = s * vkp + c * vkq;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpectralIndices {
    pub alpha: f64,
    pub gamma: f64,
    pub zero_tol: f64,
}

/// α and γ of an ascending spectrum, with zero tolerance `zero_tol_rel · max(1, max |λ|)`.
pub fn spectral_indices(eigs: &[f64], zero_tol_rel: f64) -> Result<SpectralIndices> {
    if eigs.is_empty() {
        return Err(Error::InvalidArgument("empty spectrum".into()));
    }
    if !(zero_tol_rel >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "zero tolerance must be non-negative, got {zero_tol_rel}"
        )));
    }
    if eigs.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidArgument(
            "spectrum is not sorted ascending".into(),
        ));
    }
    let scale = eigs.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
    let zero_tol = zero_tol_rel * scale;
    let d = eigs.len() as f64;
    let negative = eigs.iter().filter(|&&l| l < -zero_tol).count();
    let zero = eigs.iter().filter(|&&l| l.abs() <= zero_tol).count();
    Ok(SpectralIndices {
        alpha: negative as f64 / d,
        gamma: zero as f64 / d,
        zero_tol,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectrumReport {
    pub checkpoint_epoch: usize,
    pub eigenvalues: Vec<f64>,
    pub alpha: f64,
    pub gamma: f64,
    pub zero_tol: f64,
    pub asymmetry: f64,
}

impl SpectrumReport {
    pub fn new(checkpoint_epoch: usize, eigenvalues: Vec<f64>, zero_tol_rel: f64) -> Result<Self> {
        let idx = spectral_indices(&eigenvalues, zero_tol_rel)?;
        Ok(Self {
            checkpoint_epoch,
            eigenvalues,
            alpha: idx.alpha,
            gamma: idx.gamma,
            zero_tol: idx.zero_tol,
            asymmetry: 0.0,
        })
    }

    /// Fraction of strictly positive (beyond tolerance) eigenvalues.
    pub fn positive_fraction(&self) -> f64 {
        1.0 - self.alpha - self.gamma
    }

    pub fn std_dev(&self) -> f64 {
        sample_std(&self.eigenvalues)
    }
}

/// Sample standard deviation (n - 1 denominator); zero for fewer than two values.
pub fn sample_std(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    /// `counts.len() + 1` ascending bin edges.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

/// Equal-width histogram over `[min λ, max λ]`; the last bin is closed.
pub fn eig_histogram(eigs: &[f64], n_bins: usize) -> Result<Histogram> {
    if n_bins == 0 {
        return Err(Error::InvalidArgument(
            "histogram needs at least one bin".into(),
        ));
    }
    if eigs.is_empty() {
        return Err(Error::InvalidArgument("empty spectrum".into()));
    }
    let lo = eigs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = eigs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        return Ok(Histogram {
            edges: vec![lo, hi],
            counts: vec![eigs.len()],
        });
    }
    let width = (hi - lo) / n_bins as f64;
    let edges = (0..=n_bins).map(|i| lo + i as f64 * width).collect();
    let mut counts = vec![0; n_bins];
    for &e in eigs {
        let bin = (((e - lo) / width) as usize).min(n_bins - 1);
        counts[bin] += 1;
    }
    Ok(Histogram { edges, counts })
}

/// Writes one row per eigenvalue per report, preceded by the header.
pub fn write_spectrum_csv<W: Write>(mut out: W, reports: &[SpectrumReport]) -> std::io::Result<()> {
    writeln!(out, "{SPECTRUM_CSV_HEADER}")?;
    for r in reports {
        for (i, e) in r.eigenvalues.iter().enumerate() {
            writeln!(out, "{},{},{}", r.checkpoint_epoch, i, e)?;
        }
    }
    Ok(())
}
