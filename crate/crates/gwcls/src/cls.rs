//! Conditional least squares estimators of the criticality parameter, the
//! mean difference, and the offspring means, with explicit existence-set
//! handling and a redundant normal-equations route for cross-validation.
//!
//! The immigration mean is treated as known and passed explicitly.

use std::fmt;

use thiserror::Error;

use crate::numeric::{dot, KahanSum, Vec2, DIFF, ONES};
use crate::simulate::Trajectory;

/// Condition-number guard for the 2x2 normal matrix.
pub const CONDITION_LIMIT: f64 = 1e12;

/// The event on which an estimator's denominator is positive.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExistenceSet {
    /// sum <1, X_{k-1}>^2 > 0: the criticality estimator exists.
    Hn,
    /// sum <u~, X_{k-1}>^2 > 0: the difference estimator exists.
    THn,
}

impl fmt::Display for ExistenceSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExistenceSet::Hn => f.write_str("H_n"),
            ExistenceSet::THn => f.write_str("tH_n"),
        }
    }
}

#[derive(Debug, Error)]
pub enum ClsError {
    #[error("estimator denominator vanishes: sample outside {0}")]
    DenominatorZero(ExistenceSet),
    #[error("normal matrix is numerically singular (condition {0:.3e})")]
    SingularNormalMatrix(f64),
}

/// Estimates from one sample, with absent values where the corresponding
/// existence set fails. alpha/beta are defined exactly when both sets hold,
/// and then alpha = (rho + delta)/2, beta = (rho - delta)/2.
#[derive(Clone, Copy, Debug)]
pub struct ClsResult {
    pub rho_hat: Option<f64>,
    pub delta_hat: Option<f64>,
    pub alpha_hat: Option<f64>,
    pub beta_hat: Option<f64>,
    pub in_hn: bool,
    pub in_thn: bool,
    pub n: usize,
}

/// True iff sum_{k=1}^n <1, X_{k-1}>^2 > 0 (with X_0 = 0).
pub fn in_hn(traj: &Trajectory) -> bool {
    traj.u_seq[..traj.n()].iter().any(|&u| u > 0)
}

/// True iff sum_{k=1}^n <u~, X_{k-1}>^2 > 0.
pub fn in_thn(traj: &Trajectory) -> bool {
    traj.v_seq[..traj.n()].iter().any(|&v| v != 0)
}

/// CLS estimator of the criticality parameter rho = alpha + beta:
/// sum <1, X_k - m_eps> <1, X_{k-1}> / sum <1, X_{k-1}>^2.
pub fn estimate_rho(traj: &Trajectory, m_eps: Vec2) -> Result<f64, ClsError> {
    if !in_hn(traj) {
        return Err(ClsError::DenominatorZero(ExistenceSet::Hn));
    }
    let total_eps = dot(ONES, m_eps);
    let mut num = KahanSum::new();
    let mut den = KahanSum::new();
    for k in 1..=traj.n() {
        let u_prev = traj.u_seq[k - 1] as f64;
        num.add((traj.u_seq[k] as f64 - total_eps) * u_prev);
        den.add(u_prev * u_prev);
    }
    Ok(num.value() / den.value())
}

/// CLS estimator of delta = alpha - beta:
/// sum <u~, X_k - m_eps> <u~, X_{k-1}> / sum <u~, X_{k-1}>^2.
pub fn estimate_delta(traj: &Trajectory, m_eps: Vec2) -> Result<f64, ClsError> {
    if !in_thn(traj) {
        return Err(ClsError::DenominatorZero(ExistenceSet::THn));
    }
    let diff_eps = dot(DIFF, m_eps);
    let mut num = KahanSum::new();
    let mut den = KahanSum::new();
    for k in 1..=traj.n() {
        let v_prev = traj.v_seq[k - 1] as f64;
        num.add((traj.v_seq[k] as f64 - diff_eps) * v_prev);
        den.add(v_prev * v_prev);
    }
    Ok(num.value() / den.value())
}

/// CLS estimator of the offspring means via the linear reparametrization
/// (alpha, beta) = ((rho + delta)/2, (rho - delta)/2).
pub fn estimate_alpha_beta(traj: &Trajectory, m_eps: Vec2) -> Result<(f64, f64), ClsError> {
    let rho = estimate_rho(traj, m_eps)?;
    let delta = estimate_delta(traj, m_eps)?;
    Ok(((rho + delta) / 2.0, (rho - delta) / 2.0))
}

/// Offspring-mean estimator from the normal equations A_n^{-1} b_n with
/// A_n = sum B_{k-1}^2 and b_n = sum B_{k-1} (X_k - m_eps), where B is the
/// symmetrized state matrix [[x1, x2], [x2, x1]]. Algebraically identical
/// to [`estimate_alpha_beta`] on H_n with tH_n; kept as an independent
/// cross-check route with a direct determinant-based 2x2 solve.
pub fn estimate_via_normal_equations(
    traj: &Trajectory,
    m_eps: Vec2,
) -> Result<(f64, f64), ClsError> {
    // A_n inherits the [[p, q], [q, p]] shape from B^2.
    let mut p = KahanSum::new();
    let mut q = KahanSum::new();
    let mut b0 = KahanSum::new();
    let mut b1 = KahanSum::new();
    for k in 1..=traj.n() {
        let x = traj.states[k - 1];
        let (x1, x2) = (x[0] as f64, x[1] as f64);
        p.add(x1 * x1 + x2 * x2);
        q.add(2.0 * x1 * x2);
        let r = [
            traj.states[k][0] as f64 - m_eps[0],
            traj.states[k][1] as f64 - m_eps[1],
        ];
        b0.add(x1 * r[0] + x2 * r[1]);
        b1.add(x2 * r[0] + x1 * r[1]);
    }
    let (p, q) = (p.value(), q.value());
    // Eigenvalues along the total and difference directions.
    let lam_max = (p + q).max(p - q);
    let lam_min = (p + q).min(p - q);
    if lam_min <= 0.0 || lam_max / lam_min > CONDITION_LIMIT {
        let cond = if lam_min <= 0.0 {
            f64::INFINITY
        } else {
            lam_max / lam_min
        };
        return Err(ClsError::SingularNormalMatrix(cond));
    }
    let det = p * p - q * q;
    let alpha = (p * b0.value() - q * b1.value()) / det;
    let beta = (-q * b0.value() + p * b1.value()) / det;
    Ok((alpha, beta))
}

/// The CLS sum-of-squares objective at a candidate (rho', delta').
pub fn objective_q(traj: &Trajectory, m_eps: Vec2, rho: f64, delta: f64) -> f64 {
    let a = 0.5 * (rho + delta);
    let b = 0.5 * (rho - delta);
    let mut q = KahanSum::new();
    for k in 1..=traj.n() {
        let xp = traj.states[k - 1];
        let x = traj.states[k];
        let r0 = x[0] as f64 - a * xp[0] as f64 - b * xp[1] as f64 - m_eps[0];
        let r1 = x[1] as f64 - b * xp[0] as f64 - a * xp[1] as f64 - m_eps[1];
        q.add(r0 * r0 + r1 * r1);
    }
    q.value()
}

/// All estimators on one sample, recording existence flags and leaving
/// estimates absent (never NaN) where their set fails.
pub fn estimate_all(traj: &Trajectory, m_eps: Vec2) -> ClsResult {
    let hn = in_hn(traj);
    let thn = in_thn(traj);
    let rho_hat = hn.then(|| estimate_rho(traj, m_eps).expect("in H_n"));
    let delta_hat = thn.then(|| estimate_delta(traj, m_eps).expect("in tH_n"));
    let (alpha_hat, beta_hat) = match (rho_hat, delta_hat) {
        (Some(r), Some(d)) => (Some((r + d) / 2.0), Some((r - d) / 2.0)),
        _ => (None, None),
    };
    ClsResult {
        rho_hat,
        delta_hat,
        alpha_hat,
        beta_hat,
        in_hn: hn,
        in_thn: thn,
        n: traj.n(),
    }
}
