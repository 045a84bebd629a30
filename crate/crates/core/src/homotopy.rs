//! Homotopy (regularization-path) solver for
//!
//! ```text
//! min_α  λ‖α‖₁ + ½‖Dα − b‖₂²
//! ```
//!
//! over the dictionary `D = [I_n | B]`.
//!
//! The solution is piecewise linear in `λ`. Starting from `λ_max = ‖Dᵀb‖_∞`,
//! where `α = 0`, the path is followed downwards. On each segment the active
//! set `A` and its signs `s` are fixed and the active coefficients are affine
//! in `λ`:
//!
//! ```text
//! α_A(λ) = u − λ·d,   u = G⁻¹ D_Aᵀ b,   d = G⁻¹ s,   G = D_Aᵀ D_A
//! ```
//!
//! so inactive correlations `c_j(λ) = p_j + λ q_j` are affine too. The next
//! breakpoint is the largest `λ' < λ` where an inactive correlation reaches
//! `±λ'` (the column enters) or an active coefficient reaches zero (it
//! leaves). `G` is kept as a Cholesky factor that grows by one row per
//! entry and absorbs removals through a rank-one update.

use serde::{Deserialize, Serialize};

use crate::cholesky::GramFactor;
use crate::dictionary::{ColumnIndex, Dictionary};
use crate::error::{Error, Result};
use crate::features::FeatureVector;
use crate::linalg;

/// Denominators `1 ∓ q_j` below this are treated as "moves in lockstep with
/// the boundary": such a column never crosses strictly.
const DEN_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub lambda: f64,
    pub kkt_tol: f64,
    /// Defaults to `4·(n + m)` when unset.
    pub max_breakpoints: Option<usize>,
    /// Pivot threshold for the Gram factor and zero test for coefficients.
    pub sign_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            lambda: 0.5,
            kkt_tol: 1e-9,
            max_breakpoints: None,
            sign_tol: 1e-12,
        }
    }
}

impl SolverConfig {
    pub fn with_lambda(lambda: f64) -> Self {
        Self {
            lambda,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "lambda must be positive, got {}",
                self.lambda
            )));
        }
        if !(self.kkt_tol >= 0.0 && self.sign_tol >= 0.0) {
            return Err(Error::InvalidConfig("tolerances must be nonnegative".into()));
        }
        if self.max_breakpoints == Some(0) {
            return Err(Error::InvalidConfig("max_breakpoints must be positive".into()));
        }
        Ok(())
    }
}

/// Nonzero coefficients of `α = [e; x]` plus diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSolution {
    /// Sorted by raw column index.
    pub coeffs: Vec<(ColumnIndex, f64)>,
    /// `b − Dα`.
    pub residual: Vec<f64>,
    pub objective: f64,
    pub breakpoints_used: usize,
    pub lambda_max: f64,
    pub lambda: f64,
}

impl SparseSolution {
    pub fn nnz(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn coeff(&self, raw: usize) -> f64 {
        self.coeffs
            .binary_search_by_key(&raw, |(c, _)| c.raw())
            .map_or(0.0, |i| self.coeffs[i].1)
    }

    pub fn l1_norm(&self) -> f64 {
        self.coeffs.iter().map(|(_, v)| v.abs()).sum()
    }

    pub fn l2_norm(&self) -> f64 {
        self.coeffs.iter().map(|(_, v)| v * v).sum::<f64>().sqrt()
    }

    /// `(raw, value)` pairs, the form the dictionary's products take.
    pub fn raw_pairs(&self) -> Vec<(usize, f64)> {
        self.coeffs.iter().map(|(c, v)| (c.raw(), *v)).collect()
    }

    pub fn to_dense(&self, width: usize) -> Vec<f64> {
        let mut out = vec![0.0; width];
        for (c, v) in &self.coeffs {
            out[c.raw()] = *v;
        }
        out
    }
}

/// `λ‖α‖₁ + ½‖Dα − b‖₂²` for a sparse `α`.
pub fn objective(dict: &Dictionary, b: &[f64], coeffs: &[(usize, f64)], lambda: f64) -> f64 {
    let fit = dict.synthesize(coeffs);
    let res2: f64 = b.iter().zip(&fit).map(|(x, y)| (x - y) * (x - y)).sum();
    lambda * coeffs.iter().map(|(_, v)| v.abs()).sum::<f64>() + 0.5 * res2
}

enum Event {
    Finish,
    Remove(usize),
    Add { col: usize, sign: f64 },
}

/// Solves the ℓ1-regularized problem for a unit query `b`.
pub fn solve(dict: &Dictionary, b: &FeatureVector, cfg: &SolverConfig) -> Result<SparseSolution> {
    if b.dim() != dict.n() {
        return Err(Error::DimensionMismatch {
            expected: dict.n(),
            found: b.dim(),
        });
    }
    solve_slice(dict, b.values(), cfg)
}

/// As [`solve`] but for any right-hand side of length `n`.
pub fn solve_slice(dict: &Dictionary, b: &[f64], cfg: &SolverConfig) -> Result<SparseSolution> {
    cfg.validate()?;
    if b.len() != dict.n() {
        return Err(Error::DimensionMismatch {
            expected: dict.n(),
            found: b.len(),
        });
    }
    let n = dict.n();
    let width = dict.width();
    let target = cfg.lambda;

    let c0 = dict.correlate(b);
    let (first, lambda_max) = c0
        .iter()
        .enumerate()
        .fold((0, -1.0), |(bi, bv), (j, c)| if c.abs() > bv { (j, c.abs()) } else { (bi, bv) });

    if target >= lambda_max {
        return Ok(SparseSolution {
            coeffs: Vec::new(),
            residual: b.to_vec(),
            objective: 0.5 * linalg::dot(b, b),
            breakpoints_used: 0,
            lambda_max,
            lambda: target,
        });
    }

    let cap = cfg.max_breakpoints.unwrap_or(4 * width);
    let mut active = vec![first];
    let mut signs = vec![c0[first].signum()];
    let mut in_active = vec![false; width];
    in_active[first] = true;
    let mut blocked = vec![false; width];
    let mut factor = GramFactor::default();
    factor.push(Vec::new(), dict.gram(first, first));
    let mut lam = lambda_max;
    let mut last_added = Some(first);
    let mut last_removed: Option<usize> = None;
    let mut breakpoints = 1usize;

    loop {
        let atb: Vec<f64> = active.iter().map(|&j| c0[j]).collect();
        let u = factor.solve(&atb);
        let d = factor.solve(&signs);

        let mut r0 = b.to_vec();
        let mut w = vec![0.0; n];
        for (i, &j) in active.iter().enumerate() {
            dict.add_column(j, -u[i], &mut r0);
            dict.add_column(j, d[i], &mut w);
        }

        let mut next = target;
        let mut event = Event::Finish;

        for i in 0..active.len() {
            if last_added == Some(active[i]) || signs[i] * d[i] >= 0.0 {
                continue;
            }
            let t = (u[i] / d[i]).min(lam);
            if t > next {
                next = t;
                event = Event::Remove(i);
            }
        }

        let (p, q) = dict.correlate2(&r0, &w);
        for j in 0..width {
            if in_active[j] || blocked[j] || last_removed == Some(j) {
                continue;
            }
            for sign in [1.0, -1.0] {
                let den = 1.0 - sign * q[j];
                if den <= DEN_TOL {
                    continue;
                }
                // Anything already past the boundary enters immediately.
                let t = (sign * p[j] / den).min(lam);
                if t > next {
                    next = t;
                    event = Event::Add { col: j, sign };
                }
            }
        }

        match event {
            Event::Finish => {
                let coeffs_raw: Vec<(usize, f64)> = active
                    .iter()
                    .enumerate()
                    .map(|(i, &j)| (j, u[i] - target * d[i]))
                    .collect();
                return Ok(finish(dict, b, coeffs_raw, target, lambda_max, breakpoints));
            }
            Event::Remove(i) => {
                lam = next;
                let col = active.remove(i);
                signs.remove(i);
                in_active[col] = false;
                factor.remove(i);
                if factor.min_diag() <= cfg.sign_tol {
                    factor = GramFactor::factorize(active.len(), |a, b| dict.gram(active[a], active[b]), cfg.sign_tol)
                        .ok_or_else(|| Error::NumericalBreakdown(format!("after removing column {col}")))?;
                }
                blocked.iter_mut().for_each(|b| *b = false);
                last_removed = Some(col);
                last_added = None;
            }
            Event::Add { col, sign } => {
                let cross: Vec<f64> = active.iter().map(|&a| dict.gram(a, col)).collect();
                let (row, pivot_sq) = factor.extension(&cross, dict.gram(col, col));
                if pivot_sq <= cfg.sign_tol {
                    // Numerically inside the span of the active set; it can
                    // never be the one to enter strictly.
                    blocked[col] = true;
                    continue;
                }
                lam = next;
                factor.push(row, pivot_sq);
                active.push(col);
                signs.push(sign);
                in_active[col] = true;
                last_added = Some(col);
                last_removed = None;
            }
        }
        breakpoints += 1;
        if breakpoints > cap {
            return Err(Error::BreakpointCapExceeded(cap));
        }
    }
}

fn finish(
    dict: &Dictionary,
    b: &[f64],
    mut coeffs_raw: Vec<(usize, f64)>,
    lambda: f64,
    lambda_max: f64,
    breakpoints_used: usize,
) -> SparseSolution {
    coeffs_raw.retain(|(_, v)| *v != 0.0);
    coeffs_raw.sort_by_key(|(j, _)| *j);
    let fit = dict.synthesize(&coeffs_raw);
    let residual: Vec<f64> = b.iter().zip(&fit).map(|(x, y)| x - y).collect();
    let objective = lambda * coeffs_raw.iter().map(|(_, v)| v.abs()).sum::<f64>()
        + 0.5 * linalg::dot(&residual, &residual);
    SparseSolution {
        coeffs: coeffs_raw
            .into_iter()
            .map(|(j, v)| (ColumnIndex::new(j, dict.n()), v))
            .collect(),
        residual,
        objective,
        breakpoints_used,
        lambda_max,
        lambda,
    }
}

/// Outcome of [`certify_kkt`].
#[derive(Debug, Clone, PartialEq)]
pub struct KktReport {
    pub ok: bool,
    /// Column with the largest violation (may be within tolerance).
    pub worst_column: Option<usize>,
    pub worst_violation: f64,
}

/// Checks the optimality conditions of the ℓ1 problem at `lambda`:
/// `d_jᵀr = λ·sign(α_j)` on the support and `|d_jᵀr| ≤ λ` elsewhere.
pub fn certify_kkt(
    dict: &Dictionary,
    b: &[f64],
    coeffs: &[(usize, f64)],
    lambda: f64,
    tol: f64,
) -> KktReport {
    let fit = dict.synthesize(coeffs);
    let r: Vec<f64> = b.iter().zip(&fit).map(|(x, y)| x - y).collect();
    let c = dict.correlate(&r);
    let mut alpha = vec![0.0; dict.width()];
    for &(j, v) in coeffs {
        alpha[j] += v;
    }
    let mut worst = (None, 0.0);
    for (j, (&cj, &aj)) in c.iter().zip(&alpha).enumerate() {
        let violation = if aj != 0.0 {
            (cj - lambda * aj.signum()).abs()
        } else {
            (cj.abs() - lambda).max(0.0)
        };
        if violation > worst.1 || worst.0.is_none() {
            worst = (Some(j), violation);
        }
    }
    KktReport {
        ok: worst.1 <= tol,
        worst_column: worst.0,
        worst_violation: worst.1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random_dict(seed: u64, n: usize, m: usize) -> (Dictionary, FeatureVector) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let unit = |rng: &mut rand_chacha::ChaCha8Rng| {
            let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            FeatureVector::normalized(v, "r").unwrap()
        };
        let mut d = Dictionary::new(n).unwrap();
        for i in 0..m {
            let f = unit(&mut rng);
            d.append(&f, i, i as f64).unwrap();
        }
        let b = unit(&mut rng);
        (d, b)
    }

    #[test]
    fn identity_dictionary_is_soft_thresholding() {
        let d = Dictionary::new(4).unwrap();
        let b = FeatureVector::normalized(vec![0.9, -0.3, 0.2, -0.25], "b").unwrap();
        let sol = solve(&d, &b, &SolverConfig::with_lambda(0.5)).unwrap();
        for j in 0..4 {
            let expected = linalg::soft_threshold(b.values()[j], 0.5);
            assert!((sol.coeff(j) - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn above_lambda_max_is_exactly_zero() {
        let (d, b) = random_dict(5, 10, 15);
        let lmax = linalg::norm_inf(&d.correlate(b.values()));
        for lam in [lmax, 1.01 * lmax, 1.0] {
            let sol = solve(&d, &b, &SolverConfig::with_lambda(lam)).unwrap();
            assert!(sol.is_zero());
            assert_eq!(sol.objective, 0.5 * linalg::dot(b.values(), b.values()));
            assert_eq!(sol.lambda_max, lmax);
        }
    }

    #[test]
    fn random_instances_certify() {
        for seed in 0..40 {
            let (d, b) = random_dict(seed, 5 + seed as usize % 20, seed as usize * 2);
            for lam in [0.05, 0.1, 0.3, 0.5, 0.9] {
                let sol = solve(&d, &b, &SolverConfig::with_lambda(lam)).unwrap();
                let rep = certify_kkt(&d, b.values(), &sol.raw_pairs(), lam, 1e-9);
                assert!(rep.ok, "seed {seed} lam {lam}: {rep:?}");
                let obj = objective(&d, b.values(), &sol.raw_pairs(), lam);
                assert!((obj - sol.objective).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn first_entry_is_max_correlation() {
        let (d, b) = random_dict(9, 12, 30);
        let c = d.correlate(b.values());
        let jmax = (0..c.len())
            .max_by(|&a, &b| c[a].abs().partial_cmp(&c[b].abs()).unwrap())
            .unwrap();
        let lam = 0.999 * c[jmax].abs();
        let sol = solve(&d, &b, &SolverConfig::with_lambda(lam)).unwrap();
        assert_eq!(sol.nnz(), 1);
        assert_eq!(sol.coeffs[0].0.raw(), jmax);
        assert!(sol.coeffs[0].1 * c[jmax] > 0.0);
    }

    #[test]
    fn exact_duplicate_prefers_first_occurrence() {
        let (mut d, _) = random_dict(13, 8, 6);
        let dup = d.column(d.index(8 + 2).unwrap()).unwrap();
        d.append(&dup, 100, 100.0).unwrap();
        d.append(&dup, 101, 101.0).unwrap();
        let sol = solve(&d, &dup, &SolverConfig::with_lambda(0.5)).unwrap();
        assert_eq!(sol.nnz(), 1);
        assert_eq!(sol.coeffs[0].0.image_index(), Some(2));
        assert!((sol.coeffs[0].1 - 0.5).abs() < 1e-12);
        assert!(certify_kkt(&d, dup.values(), &sol.raw_pairs(), 0.5, 1e-9).ok);
    }

    #[test]
    fn perturbed_solution_fails_certificate() {
        let (d, b) = random_dict(21, 10, 20);
        let sol = solve(&d, &b, &SolverConfig::with_lambda(0.1)).unwrap();
        let mut pairs = sol.raw_pairs();
        assert!(certify_kkt(&d, b.values(), &pairs, 0.1, 1e-10).ok);
        pairs[0].1 += 1e-3;
        let rep = certify_kkt(&d, b.values(), &pairs, 0.1, 1e-6);
        assert!(!rep.ok);
        assert!(rep.worst_violation > 1e-4);
    }

    #[test]
    fn zero_solution_certifies_above_lambda_max() {
        let (d, b) = random_dict(22, 6, 6);
        let lmax = linalg::norm_inf(&d.correlate(b.values()));
        assert!(certify_kkt(&d, b.values(), &[], 1.01 * lmax, 0.0).ok);
    }

    #[test]
    fn invalid_configs_and_shapes() {
        let (d, b) = random_dict(1, 4, 2);
        assert!(solve(&d, &b, &SolverConfig::with_lambda(0.0)).is_err());
        assert!(solve(&d, &b, &SolverConfig::with_lambda(f64::NAN)).is_err());
        let short = FeatureVector::normalized(vec![1.0, 1.0], "s").unwrap();
        assert!(matches!(
            solve(&d, &short, &SolverConfig::default()),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn breakpoint_cap_is_enforced() {
        let (d, b) = random_dict(3, 20, 40);
        let cfg = SolverConfig {
            lambda: 0.01,
            max_breakpoints: Some(1),
            ..SolverConfig::default()
        };
        assert!(matches!(solve(&d, &b, &cfg), Err(Error::BreakpointCapExceeded(1))));
    }
}
