//! Slow, independent reference solvers.
//!
//! These exist to cross-check the homotopy path and to provide baselines:
//! cyclic coordinate descent for the same ℓ1 problem, exhaustive ℓ0 search on
//! tiny instances, the dense minimum-norm least-squares solution, and
//! exhaustive nearest-neighbour matching.

use nalgebra::{DMatrix, DVector};

use crate::dictionary::Dictionary;
use crate::error::{Error, Result};
use crate::linalg;

/// Sweep cap for [`cd_solve`].
pub const CD_MAX_SWEEPS: usize = 1_000_000;
/// Subset cap for [`l0_solve`].
pub const L0_MAX_SUBSETS: u128 = 1_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    /// Nonzero `(raw, value)` pairs in increasing raw order.
    pub coeffs: Vec<(usize, f64)>,
    /// Problem-specific objective: the ℓ1 objective for [`cd_solve`], the
    /// support size for [`l0_solve`].
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Final duality gap ([`cd_solve`]) or residual norm ([`l0_solve`]).
    pub certificate: f64,
}

/// Cyclic coordinate descent on `λ‖α‖₁ + ½‖Dα − b‖²`, run until the duality
/// gap drops to `gap_tol`.
pub fn cd_solve(dict: &Dictionary, b: &[f64], lambda: f64, gap_tol: f64) -> Result<OracleReport> {
    if b.len() != dict.n() {
        return Err(Error::DimensionMismatch {
            expected: dict.n(),
            found: b.len(),
        });
    }
    if !(gap_tol > 0.0) || !(lambda > 0.0) {
        return Err(Error::InvalidConfig("lambda and gap_tol must be positive".into()));
    }
    let width = dict.width();
    let col_sq: Vec<f64> = (0..width).map(|j| dict.gram(j, j)).collect();
    let mut alpha = vec![0.0; width];
    let mut r = b.to_vec();
    let half_bb = 0.5 * linalg::dot(b, b);

    for sweep in 1..=CD_MAX_SWEEPS {
        for j in 0..width {
            let old = alpha[j];
            let z = old * col_sq[j] + dict.col_dot(j, &r);
            let new = linalg::soft_threshold(z, lambda) / col_sq[j];
            if new != old {
                dict.add_column(j, old - new, &mut r);
                alpha[j] = new;
            }
        }
        // Recompute the residual exactly to keep the gap honest.
        let nz: Vec<(usize, f64)> = sparse(&alpha);
        let fit = dict.synthesize(&nz);
        r = b.iter().zip(&fit).map(|(x, y)| x - y).collect();

        let primal = lambda * alpha.iter().map(|a| a.abs()).sum::<f64>() + 0.5 * linalg::dot(&r, &r);
        let scale = (lambda / linalg::norm_inf(&dict.correlate(&r))).min(1.0);
        let dual = half_bb
            - 0.5
                * b.iter()
                    .zip(&r)
                    .map(|(bi, ri)| (bi - scale * ri).powi(2))
                    .sum::<f64>();
        let gap = primal - dual;
        if gap <= gap_tol {
            return Ok(OracleReport {
                coeffs: nz,
                objective: primal,
                iterations: sweep,
                converged: true,
                certificate: gap,
            });
        }
    }
    Err(Error::IterationCapExceeded(CD_MAX_SWEEPS))
}

fn sparse(alpha: &[f64]) -> Vec<(usize, f64)> {
    alpha
        .iter()
        .enumerate()
        .filter(|(_, v)| **v != 0.0)
        .map(|(j, v)| (j, *v))
        .collect()
}

fn dense_matrix(dict: &Dictionary, cols: &[usize]) -> DMatrix<f64> {
    let n = dict.n();
    let mut m = DMatrix::zeros(n, cols.len());
    for (k, &j) in cols.iter().enumerate() {
        let mut col = vec![0.0; n];
        dict.add_column(j, 1.0, &mut col);
        m.column_mut(k).copy_from_slice(&col);
    }
    m
}

fn binomial(n: u128, k: u128) -> u128 {
    (0..k).fold(1u128, |acc, i| acc * (n - i) / (i + 1))
}

/// Least squares on a fixed support, returning coefficients and residual norm.
fn support_fit(dict: &Dictionary, b: &DVector<f64>, support: &[usize]) -> (Vec<f64>, f64) {
    let a = dense_matrix(dict, support);
    let svd = a.clone().svd(true, true);
    let x = svd.solve(b, 1e-12).expect("SVD computed with U and V");
    let res = (b - &a * &x).norm();
    (x.iter().copied().collect(), res)
}

/// Exhaustive search for the sparsest `α` with `‖Dα − b‖₂ ≤ residual_tol`
/// among supports of size `≤ max_support`.
pub fn l0_solve(
    dict: &Dictionary,
    b: &[f64],
    max_support: usize,
    residual_tol: f64,
) -> Result<OracleReport> {
    if max_support == 0 || max_support > 3 {
        return Err(Error::InvalidConfig("max_support must be in 1..=3".into()));
    }
    if b.len() != dict.n() {
        return Err(Error::DimensionMismatch {
            expected: dict.n(),
            found: b.len(),
        });
    }
    let width = dict.width();
    let total: u128 = (1..=max_support as u128).map(|k| binomial(width as u128, k)).sum();
    if total > L0_MAX_SUBSETS {
        return Err(Error::EnumerationTooLarge(total));
    }
    let bv = DVector::from_column_slice(b);
    let mut examined = 0usize;
    for size in 1..=max_support.min(width) {
        let mut best: Option<(f64, Vec<usize>, Vec<f64>)> = None;
        let mut support: Vec<usize> = (0..size).collect();
        loop {
            examined += 1;
            let (x, res) = support_fit(dict, &bv, &support);
            // Lexicographic enumeration order makes `<` the lexicographic tie-break.
            if res <= residual_tol && best.as_ref().map_or(true, |(r, _, _)| res < *r) {
                best = Some((res, support.clone(), x));
            }
            if !next_combination(&mut support, width) {
                break;
            }
        }
        if let Some((res, support, x)) = best {
            return Ok(OracleReport {
                coeffs: support.into_iter().zip(x).collect(),
                objective: size as f64,
                iterations: examined,
                converged: true,
                certificate: res,
            });
        }
    }
    Err(Error::Infeasible {
        max_support,
        residual_tol,
    })
}

fn next_combination(c: &mut [usize], n: usize) -> bool {
    let k = c.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if c[i] < n - k + i {
            c[i] += 1;
            for j in i + 1..k {
                c[j] = c[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Minimum-ℓ2-norm solution of `Dα = b` via the SVD pseudo-inverse. The
/// identity block makes the system consistent for every `b`.
pub fn lsq_min_norm(dict: &Dictionary, b: &[f64]) -> Vec<f64> {
    let cols: Vec<usize> = (0..dict.width()).collect();
    let a = dense_matrix(dict, &cols);
    let svd = a.svd(true, true);
    let x = svd
        .solve(&DVector::from_column_slice(b), 1e-12)
        .expect("SVD computed with U and V");
    x.iter().copied().collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NnMatch {
    pub image_index: usize,
    pub frame_index: usize,
    pub distance: f64,
}

/// Exhaustive Euclidean nearest neighbour among image columns whose frame is
/// more than `t_g_frames` away from `query_index`. Lower index wins ties.
pub fn nn_match(dict: &Dictionary, b: &[f64], t_g_frames: usize, query_index: usize) -> Result<NnMatch> {
    let mut best: Option<NnMatch> = None;
    for (k, (col, meta)) in dict.image_columns().zip(dict.meta()).enumerate() {
        if query_index.abs_diff(meta.frame_index) <= t_g_frames {
            continue;
        }
        let distance = col
            .iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        if best.map_or(true, |m| distance < m.distance) {
            best = Some(NnMatch {
                image_index: k,
                frame_index: meta.frame_index,
                distance,
            });
        }
    }
    best.ok_or(Error::NoEligibleColumns)
}
