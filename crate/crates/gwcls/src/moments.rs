//! Closed-form and exact-enumeration moment machinery: spectral powers of
//! the mean matrix, the mean recursion, exact conditional second and third
//! moments of the one-step residual, and empirical moment-growth exponents.

use std::collections::BTreeMap;

use rayon::prelude::*;
use thiserror::Error;

use crate::model::{FiniteLaw2D, ModelSpec};
use crate::numeric::{kahan_sum, mat_add, mat_scale, ols_slope, Mat2, Vec2};
use crate::simulate::{simulate, SimulateError, Trajectory};

/// Support cap for brute-force convolution enumeration.
pub const ENUMERATION_CAP: usize = 10_000_000;

#[derive(Debug, Error)]
pub enum MomentsError {
    #[error("enumeration support would exceed {cap} outcomes ({size})")]
    EnumerationTooLarge { size: usize, cap: usize },
    #[error(transparent)]
    Simulate(#[from] SimulateError),
}

/// j-th power of the doubly symmetric mean matrix via its spectral form:
/// (1/2) J + (1/2) (alpha - beta)^j K, with J all ones and K = [[1,-1],[-1,1]].
pub fn mean_matrix_power(alpha: f64, beta: f64, j: u32) -> Mat2 {
    debug_assert!((alpha + beta - 1.0).abs() < 1e-9);
    let half_lam = 0.5 * (alpha - beta).powi(j as i32);
    [
        [0.5 + half_lam, 0.5 - half_lam],
        [0.5 - half_lam, 0.5 + half_lam],
    ]
}

/// E[X_k] for the zero-start process, in closed form:
/// (k/2) J m_eps + ((1 - (alpha-beta)^k) / (4 beta)) K m_eps.
pub fn expected_state(spec: &ModelSpec, k: usize) -> Vec2 {
    let m_eps = spec.m_eps();
    let total = m_eps[0] + m_eps[1];
    let diff = m_eps[0] - m_eps[1];
    let lam = spec.delta();
    let geom = (1.0 - lam.powi(k as i32)) / (4.0 * spec.beta());
    [
        0.5 * k as f64 * total + geom * diff,
        0.5 * k as f64 * total - geom * diff,
    ]
}

/// Exact conditional covariance of the residual M_k given X_{k-1} = x_prev:
/// x1 V_xi1 + x2 V_xi2 + V_eps.
pub fn conditional_cov_oracle(spec: &ModelSpec, x_prev: [u64; 2]) -> Mat2 {
    mat_add(
        mat_add(
            mat_scale(x_prev[0] as f64, spec.v_xi1()),
            mat_scale(x_prev[1] as f64, spec.v_xi2()),
        ),
        spec.v_eps(),
    )
}

/// Exact conditional third Kronecker moment of M_k given X_{k-1} = x_prev:
/// x1 E[(xi1-m1)^(x)3] + x2 E[(xi2-m2)^(x)3] + E[(eps-m_eps)^(x)3],
/// flat-indexed by 4i + 2j + k.
pub fn conditional_third_oracle(spec: &ModelSpec, x_prev: [u64; 2]) -> [f64; 8] {
    let t1 = spec.offspring1().third_central_kronecker();
    let t2 = spec.offspring2().third_central_kronecker();
    let te = spec.immigration().third_central_kronecker();
    let mut out = [0.0; 8];
    for i in 0..8 {
        out[i] = x_prev[0] as f64 * t1[i] + x_prev[1] as f64 * t2[i] + te[i];
    }
    out
}

/// Full conditional outcome distribution of X_k given X_{k-1} = x_prev, by
/// exact convolution: offspring law 1 convolved x1 times, offspring law 2
/// convolved x2 times, then the immigration law.
pub fn step_distribution(
    spec: &ModelSpec,
    x_prev: [u64; 2],
) -> Result<Vec<([u64; 2], f64)>, MomentsError> {
    let mut dist: BTreeMap<[u64; 2], f64> = BTreeMap::new();
    dist.insert([0, 0], 1.0);
    for (law, count) in [
        (spec.offspring1(), x_prev[0]),
        (spec.offspring2(), x_prev[1]),
    ] {
        for _ in 0..count {
            dist = convolve(&dist, law)?;
        }
    }
    dist = convolve(&dist, spec.immigration())?;
    Ok(dist.into_iter().collect())
}

fn convolve(
    dist: &BTreeMap<[u64; 2], f64>,
    law: &FiniteLaw2D,
) -> Result<BTreeMap<[u64; 2], f64>, MomentsError> {
    let mut out: BTreeMap<[u64; 2], f64> = BTreeMap::new();
    for (&xy, &p) in dist {
        for &(ab, q) in law.atoms() {
            *out.entry([xy[0] + ab[0], xy[1] + ab[1]]).or_insert(0.0) += p * q;
        }
    }
    if out.len() > ENUMERATION_CAP {
        return Err(MomentsError::EnumerationTooLarge {
            size: out.len(),
            cap: ENUMERATION_CAP,
        });
    }
    Ok(out)
}

/// Conditional covariance of M_k by brute-force enumeration: the central
/// second moment of the full outcome distribution. Independent of the
/// closed-form oracle above.
pub fn conditional_cov_bruteforce(
    spec: &ModelSpec,
    x_prev: [u64; 2],
) -> Result<Mat2, MomentsError> {
    let dist = step_distribution(spec, x_prev)?;
    let mean = [
        kahan_sum(dist.iter().map(|&(xy, p)| p * xy[0] as f64)),
        kahan_sum(dist.iter().map(|&(xy, p)| p * xy[1] as f64)),
    ];
    let mut cov = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            cov[i][j] = kahan_sum(dist.iter().map(|&(xy, p)| {
                p * (xy[i] as f64 - mean[i]) * (xy[j] as f64 - mean[j])
            }));
        }
    }
    Ok(cov)
}

/// Conditional third Kronecker moment of M_k by brute-force enumeration.
pub fn conditional_third_bruteforce(
    spec: &ModelSpec,
    x_prev: [u64; 2],
) -> Result<[f64; 8], MomentsError> {
    let dist = step_distribution(spec, x_prev)?;
    let mean = [
        kahan_sum(dist.iter().map(|&(xy, p)| p * xy[0] as f64)),
        kahan_sum(dist.iter().map(|&(xy, p)| p * xy[1] as f64)),
    ];
    let mut out = [0.0; 8];
    for i in 0..2 {
        for j in 0..2 {
            for k in 0..2 {
                out[4 * i + 2 * j + k] = kahan_sum(dist.iter().map(|&(xy, p)| {
                    let d = [xy[0] as f64 - mean[0], xy[1] as f64 - mean[1]];
                    p * d[i] * d[j] * d[k]
                }));
            }
        }
    }
    Ok(out)
}

/// Which moment sequence to estimate and the growth exponent it should show.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GrowthTarget {
    /// E[U_k^order] = O(k^order).
    TotalMoment { order: u32 },
    /// E[V_k^(2 half_order)] = O(k^half_order).
    DiffEvenMoment { half_order: u32 },
    /// E[||M_k||^order] = O(k^(order/2)).
    ResidualNormMoment { order: u32 },
    /// E[||X_k||^order] = O(k^order).
    StateNormMoment { order: u32 },
}

impl GrowthTarget {
    pub fn target_slope(self) -> f64 {
        match self {
            GrowthTarget::TotalMoment { order } => order as f64,
            GrowthTarget::DiffEvenMoment { half_order } => half_order as f64,
            GrowthTarget::ResidualNormMoment { order } => (order / 2) as f64,
            GrowthTarget::StateNormMoment { order } => order as f64,
        }
    }

    fn evaluate(self, traj: &Trajectory, k: usize) -> f64 {
        match self {
            GrowthTarget::TotalMoment { order } => (traj.u_seq[k] as f64).powi(order as i32),
            GrowthTarget::DiffEvenMoment { half_order } => {
                (traj.v_seq[k] as f64).powi(2 * half_order as i32)
            }
            GrowthTarget::ResidualNormMoment { order } => {
                let m = traj.m_seq[k - 1];
                (m[0] * m[0] + m[1] * m[1]).sqrt().powi(order as i32)
            }
            GrowthTarget::StateNormMoment { order } => {
                let x = traj.states[k];
                let x = [x[0] as f64, x[1] as f64];
                (x[0] * x[0] + x[1] * x[1]).sqrt().powi(order as i32)
            }
        }
    }

    pub fn label(self) -> String {
        match self {
            GrowthTarget::TotalMoment { order } => format!("U^{order}"),
            GrowthTarget::DiffEvenMoment { half_order } => format!("V^{}", 2 * half_order),
            GrowthTarget::ResidualNormMoment { order } => format!("|M|^{order}"),
            GrowthTarget::StateNormMoment { order } => format!("|X|^{order}"),
        }
    }
}

/// Monte Carlo estimates of a moment sequence at several time indices with
/// the fitted log-log growth exponent.
#[derive(Clone, Debug)]
pub struct MomentGrowthReport {
    pub target: GrowthTarget,
    pub ks: Vec<usize>,
    pub estimates: Vec<f64>,
    pub fitted_slope: f64,
    pub target_slope: f64,
}

impl MomentGrowthReport {
    /// Whether the fitted slope lies within `band` of the theoretical one.
    pub fn within_band(&self, band: f64) -> bool {
        (self.fitted_slope - self.target_slope).abs() <= band
    }
}

/// Estimates E[target at k] over independent replicas for each k and fits
/// the log-log slope. One trajectory of length max(ks) serves every k.
pub fn moment_growth(
    spec: &ModelSpec,
    target: GrowthTarget,
    ks: &[usize],
    replicas: usize,
    seed: u64,
) -> Result<MomentGrowthReport, MomentsError> {
    assert!(ks.len() >= 2, "need at least two time indices");
    assert!(
        ks.windows(2).all(|w| w[0] < w[1]),
        "time indices must be strictly increasing"
    );
    let max_k = *ks.last().unwrap();
    let per_replica: Vec<Vec<f64>> = (0..replicas as u64)
        .into_par_iter()
        .map(|stream| {
            let traj = simulate(spec, max_k, seed, stream)?;
            Ok(ks.iter().map(|&k| target.evaluate(&traj, k)).collect())
        })
        .collect::<Result<_, SimulateError>>()?;
    // Sequential reduction in replica order keeps results independent of
    // the worker layout.
    let estimates: Vec<f64> = (0..ks.len())
        .map(|i| kahan_sum(per_replica.iter().map(|row| row[i])) / replicas as f64)
        .collect();
    let log_k: Vec<f64> = ks.iter().map(|&k| (k as f64).ln()).collect();
    let log_est: Vec<f64> = estimates.iter().map(|&e| e.ln()).collect();
    let fitted_slope = ols_slope(&log_k, &log_est);
    Ok(MomentGrowthReport {
        target,
        ks: ks.to_vec(),
        estimates,
        fitted_slope,
        target_slope: target.target_slope(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{model_equal_pair, model_general, model_unit_total, FiniteLaw2D, ModelSpec};
    use crate::numeric::{mat_max_abs_diff, mat_mul};

    #[test]
    fn putzer_power_zero_is_identity() {
        let m = mean_matrix_power(0.3, 0.7, 0);
        assert_eq!(m, [[1.0, 0.0], [0.0, 1.0]]);
    }

    #[test]
    fn putzer_power_two_hand_value() {
        let m = mean_matrix_power(0.6, 0.4, 2);
        // Direct multiplication oracle: [[.6,.4],[.4,.6]]^2 = [[.52,.48],[.48,.52]].
        assert!((m[0][0] - 0.52).abs() < 1e-15);
        assert!((m[0][1] - 0.48).abs() < 1e-15);
        assert!((m[1][0] - 0.48).abs() < 1e-15);
        assert!((m[1][1] - 0.52).abs() < 1e-15);
    }

    #[test]
    fn putzer_matches_repeated_multiplication() {
        for i in 2..=8 {
            let alpha = i as f64 / 10.0;
            let beta = 1.0 - alpha;
            let base = [[alpha, beta], [beta, alpha]];
            let mut acc = [[1.0, 0.0], [0.0, 1.0]];
            for j in 0..=50u32 {
                let closed = mean_matrix_power(alpha, beta, j);
                assert!(
                    mat_max_abs_diff(closed, acc) < 1e-12,
                    "alpha {alpha} power {j}"
                );
                acc = mat_mul(acc, base);
            }
        }
    }

    #[test]
    fn putzer_large_power_approaches_averaging() {
        // The deviation from the averaging matrix is exactly
        // |alpha - beta|^50 / 2: about 4e-12 at the grid edges (|d| = 0.6)
        // and below 1e-12 for |d| <= 0.4.
        for i in 2..=8 {
            let alpha = i as f64 / 10.0;
            let m = mean_matrix_power(alpha, 1.0 - alpha, 50);
            let bound = 0.5 * (2.0 * alpha - 1.0).abs().powi(50) + 1e-15;
            for row in m {
                for entry in row {
                    assert!((entry - 0.5).abs() <= bound, "alpha {alpha}: {entry}");
                    if (2.0 * alpha - 1.0).abs() <= 0.4 {
                        assert!((entry - 0.5).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn expected_state_first_step_is_immigration_mean() {
        let spec = model_general(0.3).unwrap();
        let e = expected_state(&spec, 1);
        assert!((e[0] - 0.5).abs() < 1e-14);
        assert!((e[1] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn expected_state_symmetric_immigration_is_linear() {
        // Symmetric immigration mean kills the K term: E X_k = (k/2)(m1+m2) 1.
        let spec = model_unit_total(0.6).unwrap();
        let e = expected_state(&spec, 10);
        assert!((e[0] - 5.0).abs() < 1e-12);
        assert!((e[1] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn expected_state_matches_summed_powers() {
        // Direct summation oracle over matrix powers, for an asymmetric
        // immigration mean so both spectral terms are exercised.
        let o1 = FiniteLaw2D::new(vec![([0, 0], 0.35), ([1, 0], 0.30), ([0, 2], 0.35)]).unwrap();
        let imm = FiniteLaw2D::new(vec![([1, 0], 0.75), ([0, 1], 0.25)]).unwrap();
        let spec = ModelSpec::build(o1.clone(), o1.mirrored(), imm).unwrap();
        let m_eps = spec.m_eps();
        for k in 1..=100usize {
            let mut direct = [0.0f64; 2];
            for j in 0..k {
                let pw = mean_matrix_power(spec.alpha(), spec.beta(), j as u32);
                direct[0] += pw[0][0] * m_eps[0] + pw[0][1] * m_eps[1];
                direct[1] += pw[1][0] * m_eps[0] + pw[1][1] * m_eps[1];
            }
            let closed = expected_state(&spec, k);
            assert!((closed[0] - direct[0]).abs() < 1e-10, "k = {k}");
            assert!((closed[1] - direct[1]).abs() < 1e-10, "k = {k}");
        }
    }

    #[test]
    fn expected_state_increments_telescope() {
        let spec = model_general(0.3).unwrap();
        let m_eps = spec.m_eps();
        for k in 1..=60usize {
            let inc = [
                expected_state(&spec, k)[0] - expected_state(&spec, k - 1)[0],
                expected_state(&spec, k)[1] - expected_state(&spec, k - 1)[1],
            ];
            let pw = mean_matrix_power(spec.alpha(), spec.beta(), (k - 1) as u32);
            let want = [
                pw[0][0] * m_eps[0] + pw[0][1] * m_eps[1],
                pw[1][0] * m_eps[0] + pw[1][1] * m_eps[1],
            ];
            assert!((inc[0] - want[0]).abs() < 1e-10);
            assert!((inc[1] - want[1]).abs() < 1e-10);
        }
    }

    #[test]
    fn conditional_cov_at_origin_is_immigration_cov() {
        let spec = model_general(0.3).unwrap();
        assert_eq!(conditional_cov_oracle(&spec, [0, 0]), spec.v_eps());
    }

    #[test]
    fn conditional_cov_unit_total_structure() {
        // Each offspring covariance of the unit-total model has rank 1 and
        // annihilates the all-ones direction.
        let spec = model_unit_total(0.6).unwrap();
        for v in [spec.v_xi1(), spec.v_xi2()] {
            let row_sums = [v[0][0] + v[0][1], v[1][0] + v[1][1]];
            assert!(row_sums[0].abs() < 1e-15);
            assert!(row_sums[1].abs() < 1e-15);
            let det = v[0][0] * v[1][1] - v[0][1] * v[1][0];
            assert!(det.abs() < 1e-15);
        }
        let cov = conditional_cov_oracle(&spec, [3, 2]);
        let total_form = cov[0][0] + cov[0][1] + cov[1][0] + cov[1][1];
        let imm_total = {
            let v = spec.v_eps();
            v[0][0] + v[0][1] + v[1][0] + v[1][1]
        };
        // Offspring part contributes nothing along the total direction.
        assert!((total_form - imm_total).abs() < 1e-12);
    }

    #[test]
    fn conditional_cov_matches_bruteforce() {
        let spec = model_general(0.3).unwrap();
        let closed = conditional_cov_oracle(&spec, [2, 1]);
        let brute = conditional_cov_bruteforce(&spec, [2, 1]).unwrap();
        assert!(mat_max_abs_diff(closed, brute) < 1e-10);
    }

    #[test]
    fn conditional_cov_is_affine_in_state() {
        let spec = model_general(0.3).unwrap();
        let x = [3u64, 1u64];
        let y = [2u64, 4u64];
        let lhs = conditional_cov_oracle(&spec, [x[0] + y[0], x[1] + y[1]]);
        let a = conditional_cov_oracle(&spec, x);
        let b = conditional_cov_oracle(&spec, y);
        let zero = conditional_cov_oracle(&spec, [0, 0]);
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(lhs[i][j], a[i][j] + b[i][j] - zero[i][j]);
            }
        }
    }

    #[test]
    fn conditional_third_symmetric_immigration_vanishes() {
        // Immigration uniform on {0,2}^2 is symmetric about its mean, so at
        // the origin every third central moment is zero.
        let o1 = FiniteLaw2D::new(vec![([1, 0], 0.6), ([0, 1], 0.4)]).unwrap();
        let imm = FiniteLaw2D::new(vec![
            ([0, 0], 0.25),
            ([2, 0], 0.25),
            ([0, 2], 0.25),
            ([2, 2], 0.25),
        ])
        .unwrap();
        let spec = ModelSpec::build(o1.clone(), o1.mirrored(), imm).unwrap();
        let t = conditional_third_oracle(&spec, [0, 0]);
        for entry in t {
            assert!(entry.abs() < 1e-14);
        }
    }

    #[test]
    fn third_kronecker_of_diagonal_law_is_constant() {
        // A law supported on the diagonal embeds a 1-D law: every slot of
        // the third Kronecker power carries the same scalar third moment.
        let law = FiniteLaw2D::new(vec![([0, 0], 0.75), ([1, 1], 0.25)]).unwrap();
        let t = law.third_central_kronecker();
        // Bernoulli(1/4): E (B - p)^3 = p(1-p)(1-2p) = 3/32.
        for entry in t {
            assert!((entry - 3.0 / 32.0).abs() < 1e-15);
        }
    }

    #[test]
    fn conditional_third_matches_bruteforce() {
        let spec = model_general(0.3).unwrap();
        let closed = conditional_third_oracle(&spec, [1, 1]);
        let brute = conditional_third_bruteforce(&spec, [1, 1]).unwrap();
        for i in 0..8 {
            assert!((closed[i] - brute[i]).abs() < 1e-10, "slot {i}");
        }
    }

    #[test]
    fn step_distribution_is_a_probability_law() {
        let spec = model_equal_pair().unwrap();
        let dist = step_distribution(&spec, [2, 2]).unwrap();
        let total: f64 = dist.iter().map(|&(_, p)| p).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(dist.iter().all(|&(_, p)| p >= 0.0));
    }

    #[test]
    fn growth_smoke_total_second_moment() {
        let spec = model_general(0.3).unwrap();
        let report = moment_growth(
            &spec,
            GrowthTarget::TotalMoment { order: 2 },
            &[16, 32, 64, 128],
            2000,
            5,
        )
        .unwrap();
        assert!(
            (report.fitted_slope - 2.0).abs() < 0.4,
            "slope {}",
            report.fitted_slope
        );
    }

    #[test]
    fn growth_equal_pair_difference_is_flat() {
        // V_k is an iid immigration difference, so its second moment does
        // not grow with k.
        let spec = model_equal_pair().unwrap();
        let report = moment_growth(
            &spec,
            GrowthTarget::DiffEvenMoment { half_order: 1 },
            &[64, 128, 256, 512],
            4000,
            9,
        )
        .unwrap();
        assert!(report.fitted_slope.abs() < 0.2, "slope {}", report.fitted_slope);
    }
}
