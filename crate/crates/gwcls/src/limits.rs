//! Simulation of the limiting squared-Bessel-type diffusion and samplers
//! for every limit law the estimators converge to.
//!
//! The driving SDE is dY = a dt + sqrt(c Y^+) dW with Y_0 = 0, a the total
//! immigration mean and c the total-offspring variance form. Paths are
//! Euler-Maruyama with full truncation (positive part under the square
//! root, post-step clamp at zero). Ito integrals use left-endpoint sums;
//! Lebesgue integrals use the trapezoid rule on the same grid.

use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::model::{ModelSpec, Regime};
use crate::numeric::{quad_form, DIFF, ONES};

/// Default number of Euler steps on [0, 1].
pub const DEFAULT_STEPS: usize = 1 << 14;

#[derive(Debug, Error)]
pub enum LimitsError {
    #[error("denominator functional is numerically zero")]
    DegenerateDenominator,
    #[error("operation requires the {expected} regime, model is {actual}")]
    WrongRegime { expected: &'static str, actual: Regime },
    #[error("immigration difference has zero second moment")]
    DivisionByZero,
    #[error("path parameters (a={a}, c={c}) do not match the model")]
    PathMismatch { a: f64, c: f64 },
}

/// One discretized path of the limit diffusion on [0, 1], together with the
/// increments of the driving Brownian motion and of an independent one.
#[derive(Clone, Debug)]
pub struct DiffusionPath {
    pub a: f64,
    pub c: f64,
    /// Y at the grid points 0 = t_0 < ... < t_N = 1.
    pub y: Vec<f64>,
    /// Increments of the Brownian motion driving Y.
    pub dw: Vec<f64>,
    /// Increments of an independent Brownian motion, drawn alongside.
    pub dw_tilde: Vec<f64>,
    /// Number of post-step clamps at zero.
    pub clamped: usize,
}

impl DiffusionPath {
    pub fn steps(&self) -> usize {
        self.y.len() - 1
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.steps() as f64
    }
}

/// Euler-Maruyama path of dY = a dt + sqrt(c Y^+) dW, clamped at zero, with
/// an independent Brownian motion drawn alongside for the mixed functionals.
/// When c = 0 the solution is the exact line Y_t = a t.
pub fn simulate_y<R: RngCore>(a: f64, c: f64, steps: usize, rng: &mut R) -> DiffusionPath {
    assert!(a > 0.0, "drift must be positive");
    assert!(c >= 0.0, "diffusion coefficient must be non-negative");
    assert!(steps >= 2, "need at least two grid steps");
    let dt = 1.0 / steps as f64;
    let sqdt = dt.sqrt();
    let mut y = Vec::with_capacity(steps + 1);
    let mut dw = Vec::with_capacity(steps);
    let mut dw_tilde = Vec::with_capacity(steps);
    let mut clamped = 0;
    y.push(0.0);
    for i in 0..steps {
        let z: f64 = StandardNormal.sample(rng);
        let zt: f64 = StandardNormal.sample(rng);
        dw.push(sqdt * z);
        dw_tilde.push(sqdt * zt);
        if c == 0.0 {
            y.push(a * (i + 1) as f64 * dt);
        } else {
            let cur = y[i];
            let mut next = cur + a * dt + (c * cur.max(0.0)).sqrt() * dw[i];
            if next < 0.0 {
                next = 0.0;
                clamped += 1;
            }
            y.push(next);
        }
    }
    DiffusionPath { a, c, y, dw, dw_tilde, clamped }
}

/// The four path functionals every limit vector is built from.
#[derive(Clone, Copy, Debug)]
pub struct LimitSample {
    /// int_0^1 Y_t^2 dt (trapezoid).
    pub int_y2: f64,
    /// int_0^1 Y_t dt (trapezoid).
    pub int_y: f64,
    /// int_0^1 Y_t d(Y_t - a t) (left-endpoint sum).
    pub int_y_dm: f64,
    /// int_0^1 Y_t dW~_t (left-endpoint sum).
    pub int_y_dwt: f64,
}

impl LimitSample {
    pub fn from_path(path: &DiffusionPath) -> Self {
        let n = path.steps();
        let dt = path.dt();
        let a_dt = path.a * dt;
        let mut int_y2 = 0.0;
        let mut int_y = 0.0;
        let mut int_y_dm = 0.0;
        let mut int_y_dwt = 0.0;
        for i in 0..n {
            let yl = path.y[i];
            let yr = path.y[i + 1];
            int_y2 += 0.5 * (yl * yl + yr * yr) * dt;
            int_y += 0.5 * (yl + yr) * dt;
            int_y_dm += yl * (yr - yl - a_dt);
            int_y_dwt += yl * path.dw_tilde[i];
        }
        Self { int_y2, int_y, int_y_dm, int_y_dwt }
    }
}

/// Draw of the general-regime limit of n (rho_hat - 1):
/// int Y d(Y - a t) / int Y^2 dt.
pub fn limit_rho_sample(path: &DiffusionPath) -> Result<f64, LimitsError> {
    let s = LimitSample::from_path(path);
    if s.int_y2 < 1e-14 {
        return Err(LimitsError::DegenerateDenominator);
    }
    Ok(s.int_y_dm / s.int_y2)
}

/// Variance of the normal limit of n^{3/2}(rho_hat - 1) in the
/// total-degenerate regime: 3 <V_eps 1, 1> / <1, m_eps>^2.
pub fn limit_rho_degenerate_sigma2(spec: &ModelSpec) -> Result<f64, LimitsError> {
    if spec.regime() != Regime::TotalDegenerate {
        return Err(LimitsError::WrongRegime {
            expected: "total-degenerate",
            actual: spec.regime(),
        });
    }
    let v_form = quad_form(spec.v_eps(), ONES);
    let a = spec.drift();
    Ok(3.0 * v_form / (a * a))
}

/// Draw of the limit of (sqrt(n)(alpha_hat - alpha), sqrt(n)(beta_hat - beta))
/// when the difference form is positive: the scalar
/// sqrt(alpha beta) int Y dW~ / int Y dt times (1, -1).
pub fn limit_ab_sample(
    path: &DiffusionPath,
    alpha: f64,
    beta: f64,
) -> Result<(f64, f64), LimitsError> {
    let s = LimitSample::from_path(path);
    if s.int_y < 1e-14 {
        return Err(LimitsError::DegenerateDenominator);
    }
    let scalar = (alpha * beta).sqrt() * s.int_y_dwt / s.int_y;
    Ok((scalar, -scalar))
}

/// Variance of the normal limit of sqrt(n)(alpha_hat - alpha) in the
/// difference-degenerate regime with active immigration:
/// <V_eps u~, u~> / (4 E<u~, eps>^2).
pub fn limit_ab_degenerate_sigma2(spec: &ModelSpec) -> Result<f64, LimitsError> {
    match spec.regime() {
        Regime::DiffDegenerateImmigrationActive => {
            let v_form = quad_form(spec.v_eps(), DIFF);
            Ok(v_form / (4.0 * spec.imm_diff_msq()))
        }
        Regime::DiffDegenerateImmigrationNull => Err(LimitsError::DivisionByZero),
        other => Err(LimitsError::WrongRegime {
            expected: "diff-degenerate",
            actual: other,
        }),
    }
}

/// Draw of the regime-appropriate joint limit vector of the four normalized
/// sums; which functionals fill the slots depends on the regime.
pub fn joint_limit_sample(spec: &ModelSpec, path: &DiffusionPath) -> Result<[f64; 4], LimitsError> {
    if (path.a - spec.drift()).abs() > 1e-12 || (path.c - spec.q_total()).abs() > 1e-12 {
        return Err(LimitsError::PathMismatch { a: path.a, c: path.c });
    }
    let s = LimitSample::from_path(path);
    let alpha = spec.alpha();
    let beta = spec.beta();
    let q_diff = spec.q_diff();
    let diff_scale = q_diff / (4.0 * alpha * beta);
    let mixed_scale = q_diff / (2.0 * (alpha * beta).sqrt());
    match spec.regime() {
        Regime::General => Ok([
            s.int_y2,
            diff_scale * s.int_y,
            s.int_y_dm,
            mixed_scale * s.int_y_dwt,
        ]),
        Regime::TotalDegenerate => {
            // Y is deterministic here, so the increments that would have
            // driven it serve as the extra independent Brownian motion in
            // the third slot.
            let v_total = quad_form(spec.v_eps(), ONES).sqrt();
            let int_y_dww: f64 = (0..path.steps()).map(|i| path.y[i] * path.dw[i]).sum();
            Ok([
                s.int_y2,
                diff_scale * s.int_y,
                v_total * int_y_dww,
                mixed_scale * s.int_y_dwt,
            ])
        }
        Regime::DiffDegenerateImmigrationActive | Regime::DiffDegenerateImmigrationNull => {
            let msq = spec.imm_diff_msq();
            let v_diff = quad_form(spec.v_eps(), DIFF);
            let w1: f64 = path.dw_tilde.iter().sum();
            Ok([s.int_y2, msq, s.int_y_dm, (v_diff * msq).sqrt() * w1])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{
        model_equal_pair, model_equal_pair_null_immigration, model_general, model_unit_total,
        FiniteLaw2D, ModelSpec,
    };
    use crate::numeric::{correlation, mean_var};
    use crate::simulate::RngStream;

    #[test]
    fn zero_diffusion_is_exact_line() {
        let mut rng = RngStream::new(1, 0);
        let path = simulate_y(0.7, 0.0, 1 << 10, &mut rng);
        let dt = path.dt();
        for (i, &y) in path.y.iter().enumerate() {
            assert_eq!(y, 0.7 * i as f64 * dt);
        }
        assert_eq!(path.clamped, 0);
    }

    #[test]
    fn zero_diffusion_square_integral() {
        let mut rng = RngStream::new(2, 0);
        let path = simulate_y(1.0, 0.0, 1 << 14, &mut rng);
        let s = LimitSample::from_path(&path);
        assert!((s.int_y2 - 1.0 / 3.0).abs() < 1e-6, "{}", s.int_y2);
        assert!((s.int_y - 0.5).abs() < 1e-9, "{}", s.int_y);
    }

    #[test]
    fn zero_diffusion_rho_sample_vanishes() {
        let mut rng = RngStream::new(3, 0);
        let path = simulate_y(1.0, 0.0, 1 << 12, &mut rng);
        let r = limit_rho_sample(&path).unwrap();
        assert!(r.abs() < 1e-9, "{r}");
    }

    #[test]
    fn mean_and_variance_of_terminal_value() {
        // E Y_1 = a and Var Y_1 = c a / 2 for the square-root diffusion.
        let (a, c) = (1.0, 1.0);
        let paths = 6000;
        let ys: Vec<f64> = (0..paths)
            .map(|i| {
                let mut rng = RngStream::new(100, i);
                let p = simulate_y(a, c, 1 << 12, &mut rng);
                *p.y.last().unwrap()
            })
            .collect();
        let (mean, var) = mean_var(&ys);
        let se = (var / paths as f64).sqrt();
        assert!((mean - 1.0).abs() < 3.0 * se, "mean {mean}, se {se}");
        assert!((var - 0.5).abs() < 0.05 * 0.5 + 3.0 * 0.5 * (2.0 / paths as f64).sqrt(),
                "var {var}");
    }

    #[test]
    fn rho_limit_has_negative_median() {
        // Same negative-skew shape as the Dickey-Fuller statistic.
        let mut samples: Vec<f64> = (0..4000)
            .map(|i| {
                let mut rng = RngStream::new(200, i);
                let p = simulate_y(1.0, 1.0, 1 << 11, &mut rng);
                limit_rho_sample(&p).unwrap()
            })
            .collect();
        samples.sort_by(f64::total_cmp);
        let median = samples[samples.len() / 2];
        assert!(median < 0.0, "median {median}");
    }

    #[test]
    fn ab_sample_lies_on_antidiagonal() {
        for i in 0..50 {
            let mut rng = RngStream::new(300, i);
            let p = simulate_y(1.0, 1.0, 1 << 10, &mut rng);
            let (u, v) = limit_ab_sample(&p, 0.3, 0.7).unwrap();
            assert_eq!(u + v, 0.0);
        }
    }

    #[test]
    fn ab_sample_is_antisymmetric_in_the_mixing_noise() {
        // Flipping the independent Brownian increments negates the scalar
        // exactly; the limit law is symmetric.
        let mut rng = RngStream::new(301, 0);
        let mut p = simulate_y(1.0, 1.0, 1 << 10, &mut rng);
        let (u, _) = limit_ab_sample(&p, 0.3, 0.7).unwrap();
        for d in p.dw_tilde.iter_mut() {
            *d = -*d;
        }
        let (u_flipped, _) = limit_ab_sample(&p, 0.3, 0.7).unwrap();
        assert_eq!(u_flipped, -u);
    }

    #[test]
    fn ab_sample_skewness_is_small_for_deterministic_paths() {
        let scalars: Vec<f64> = (0..10_000)
            .map(|i| {
                let mut rng = RngStream::new(302, i);
                let p = simulate_y(1.0, 0.0, 1 << 12, &mut rng);
                limit_ab_sample(&p, 0.5, 0.5).unwrap().0
            })
            .collect();
        let (mean, var) = mean_var(&scalars);
        let n = scalars.len() as f64;
        let third: f64 = scalars.iter().map(|x| (x - mean).powi(3)).sum::<f64>() / n;
        let skew = third / var.powf(1.5);
        assert!(skew.abs() < 0.1, "skewness {skew}");
    }

    #[test]
    fn independence_of_mixing_and_driving_functionals() {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for i in 0..10_000 {
            let mut rng = RngStream::new(303, i);
            let p = simulate_y(1.0, 1.0, 1 << 11, &mut rng);
            let s = LimitSample::from_path(&p);
            xs.push(s.int_y_dwt);
            ys.push(s.int_y_dm);
        }
        let corr = correlation(&xs, &ys);
        assert!(corr.abs() < 0.05, "corr {corr}");
    }

    #[test]
    fn paths_stay_nonnegative_and_clamping_thins_out() {
        let count_clamped = |steps: usize, seed_off: u64| -> f64 {
            let paths = 200;
            let mut total = 0usize;
            for i in 0..paths {
                let mut rng = RngStream::new(400 + seed_off, i);
                let p = simulate_y(1.0, 1.0, steps, &mut rng);
                assert!(p.y.iter().all(|&y| y >= 0.0));
                total += p.clamped;
            }
            total as f64 / (paths as f64 * steps as f64)
        };
        let coarse = count_clamped(1 << 8, 0);
        let fine = count_clamped(1 << 12, 1);
        assert!(fine < coarse, "clamp fraction {fine} !< {coarse}");
    }

    #[test]
    fn degenerate_rho_sigma2_values() {
        // Model B with uniform immigration: 3 * 0.5 / 1 = 1.5.
        let spec = model_unit_total(0.6).unwrap();
        assert!((limit_rho_degenerate_sigma2(&spec).unwrap() - 1.5).abs() < 1e-12);

        // Deterministic immigration: zero variance.
        let o1 = FiniteLaw2D::new(vec![([1, 0], 0.6), ([0, 1], 0.4)]).unwrap();
        let spec = ModelSpec::build(o1.clone(), o1.mirrored(), FiniteLaw2D::point_mass([1, 1]))
            .unwrap();
        assert_eq!(limit_rho_degenerate_sigma2(&spec).unwrap(), 0.0);

        // 50/50 mixture of (0,0) and (2,2): <1, eps> is 4 Bernoulli(1/2),
        // variance 4, mean vector (1,1), so sigma^2 = 3 * 4 / 4 = 3.
        let imm = FiniteLaw2D::new(vec![([0, 0], 0.5), ([2, 2], 0.5)]).unwrap();
        let spec = ModelSpec::build(o1.clone(), o1.mirrored(), imm).unwrap();
        assert!((limit_rho_degenerate_sigma2(&spec).unwrap() - 3.0).abs() < 1e-12);

        // Wrong regime: the general model.
        let general = model_general(0.3).unwrap();
        assert!(matches!(
            limit_rho_degenerate_sigma2(&general),
            Err(LimitsError::WrongRegime { .. })
        ));
    }

    #[test]
    fn degenerate_ab_sigma2_values() {
        // Model C with uniform immigration: 0.5 / (4 * 0.5) = 0.25.
        let spec = model_equal_pair().unwrap();
        assert!((limit_ab_degenerate_sigma2(&spec).unwrap() - 0.25).abs() < 1e-12);

        // Diagonal immigration: difference moment is zero.
        let null = model_equal_pair_null_immigration().unwrap();
        assert!(matches!(
            limit_ab_degenerate_sigma2(&null),
            Err(LimitsError::DivisionByZero)
        ));

        // Immigration on (1,0)/(0,1): <u~,eps> = +-1, variance 1, second
        // moment 1, so sigma^2 = 1/4.
        let offspring = FiniteLaw2D::new(vec![([0, 0], 0.5), ([1, 1], 0.5)]).unwrap();
        let imm = FiniteLaw2D::new(vec![([1, 0], 0.5), ([0, 1], 0.5)]).unwrap();
        let spec = ModelSpec::build(offspring.clone(), offspring, imm).unwrap();
        assert!((limit_ab_degenerate_sigma2(&spec).unwrap() - 0.25).abs() < 1e-12);

        let general = model_general(0.3).unwrap();
        assert!(matches!(
            limit_ab_degenerate_sigma2(&general),
            Err(LimitsError::WrongRegime { .. })
        ));
    }

    #[test]
    fn joint_sample_total_degenerate_deterministic_slots() {
        let spec = model_unit_total(0.6).unwrap();
        let mut rng = RngStream::new(500, 0);
        let path = simulate_y(spec.drift(), spec.q_total(), 1 << 14, &mut rng);
        let joint = joint_limit_sample(&spec, &path).unwrap();
        let a = spec.drift();
        assert!((joint[0] - a * a / 3.0).abs() < 1e-6);
        let diff_scale = spec.q_diff() / (4.0 * spec.alpha() * spec.beta());
        assert!((joint[1] - diff_scale * a / 2.0).abs() < 1e-9);
    }

    #[test]
    fn joint_sample_diff_degenerate_constant_slot() {
        let spec = model_equal_pair().unwrap();
        let mut rng = RngStream::new(501, 0);
        let path = simulate_y(spec.drift(), spec.q_total(), 1 << 10, &mut rng);
        let joint = joint_limit_sample(&spec, &path).unwrap();
        assert_eq!(joint[1], spec.imm_diff_msq());
        assert_eq!(joint[1], 0.5);
    }

    #[test]
    fn joint_sample_general_third_slot_matches_rho_numerator() {
        let spec = model_general(0.3).unwrap();
        let mut rng = RngStream::new(502, 0);
        let path = simulate_y(spec.drift(), spec.q_total(), 1 << 10, &mut rng);
        let joint = joint_limit_sample(&spec, &path).unwrap();
        let s = LimitSample::from_path(&path);
        assert!((joint[2] - s.int_y_dm).abs() < 1e-12);
    }

    #[test]
    fn joint_sample_rejects_mismatched_path() {
        let spec = model_general(0.3).unwrap();
        let mut rng = RngStream::new(503, 0);
        let path = simulate_y(1.0, 0.0, 1 << 8, &mut rng);
        assert!(matches!(
            joint_limit_sample(&spec, &path),
            Err(LimitsError::PathMismatch { .. })
        ));
    }

    #[test]
    fn limit_sample_bounds() {
        for i in 0..20 {
            let mut rng = RngStream::new(504, i);
            let p = simulate_y(1.0, 1.0, 1 << 10, &mut rng);
            let s = LimitSample::from_path(&p);
            let max = p.y.iter().cloned().fold(0.0f64, f64::max);
            assert!(s.int_y2 >= 0.0 && s.int_y >= 0.0);
            assert!(s.int_y2 <= max * max + 1e-12);
            assert!(s.int_y <= max + 1e-12);
        }
    }
}
