//! Monte Carlo experiment orchestration: pairs finite-sample scaled
//! estimator errors with the regime-appropriate limit samples, computes
//! distributional distances, and emits reproducible reports.
//!
//! Replicas are partitioned by stream index and every aggregation is a
//! sequential fold over index-ordered results, so reports are byte-identical
//! across worker layouts.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::cls::{estimate_all, ClsResult};
use crate::limits::{
    joint_limit_sample, limit_ab_degenerate_sigma2, limit_rho_degenerate_sigma2, simulate_y,
    LimitSample, LimitsError,
};
use crate::model::{ModelChoice, ModelError, ModelSpec, Regime};
use crate::numeric::{correlation, dot, mean_var, KahanSum, DIFF, ONES};
use crate::simulate::{simulate, RngStream, SimulateError, Trajectory};

/// Stream index offset for limit-path simulation; keeps limit draws in a
/// stream space disjoint from the replica trajectories.
const LIMIT_STREAM_BASE: u64 = 1 << 32;
/// Stream index offset for reference normal draws in degenerate regimes.
const NORMAL_STREAM_BASE: u64 = 1 << 33;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("sample is empty")]
    EmptySample,
    #[error("invalid experiment config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Simulate(#[from] SimulateError),
    #[error(transparent)]
    Limits(#[from] LimitsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Estimator errors under every scaling of interest; entries are absent
/// when the underlying estimator does not exist on the sample.
#[derive(Clone, Copy, Debug, Default)]
pub struct ScaledErrors {
    /// n (rho_hat - 1).
    pub n_rho: Option<f64>,
    /// n^{3/2} (rho_hat - 1).
    pub n32_rho: Option<f64>,
    /// sqrt(n) (alpha_hat - alpha).
    pub sqrtn_alpha: Option<f64>,
    /// sqrt(n) (beta_hat - beta).
    pub sqrtn_beta: Option<f64>,
}

/// Scales the raw estimator errors of one sample by the powers of n that
/// appear in the four convergence statements.
pub fn scaled_errors(spec: &ModelSpec, traj: &Trajectory) -> ScaledErrors {
    let result = estimate_all(traj, spec.m_eps());
    scale_result(spec, traj.n(), &result)
}

fn scale_result(spec: &ModelSpec, n: usize, result: &ClsResult) -> ScaledErrors {
    let nf = n as f64;
    ScaledErrors {
        n_rho: result.rho_hat.map(|r| nf * (r - 1.0)),
        n32_rho: result.rho_hat.map(|r| nf.powf(1.5) * (r - 1.0)),
        sqrtn_alpha: result.alpha_hat.map(|a| nf.sqrt() * (a - spec.alpha())),
        sqrtn_beta: result.beta_hat.map(|b| nf.sqrt() * (b - spec.beta())),
    }
}

/// The four normalized sums whose joint limit the theory describes, with
/// regime-appropriate scalings.
pub fn joint_statistics(spec: &ModelSpec, traj: &Trajectory) -> [f64; 4] {
    let n = traj.n() as f64;
    let mut su2 = KahanSum::new();
    let mut sv2 = KahanSum::new();
    let mut smu = KahanSum::new();
    let mut smv = KahanSum::new();
    for k in 1..=traj.n() {
        let u_prev = traj.u_seq[k - 1] as f64;
        let v_prev = traj.v_seq[k - 1] as f64;
        let m = traj.m_seq[k - 1];
        su2.add(u_prev * u_prev);
        sv2.add(v_prev * v_prev);
        smu.add(dot(ONES, m) * u_prev);
        smv.add(dot(DIFF, m) * v_prev);
    }
    let (su2, sv2, smu, smv) = (su2.value(), sv2.value(), smu.value(), smv.value());
    match spec.regime() {
        Regime::General => [
            su2 / n.powi(3),
            sv2 / n.powi(2),
            smu / n.powi(2),
            smv / n.powf(1.5),
        ],
        Regime::TotalDegenerate => [
            su2 / n.powi(3),
            sv2 / n.powi(2),
            smu / n.powf(1.5),
            smv / n.powf(1.5),
        ],
        Regime::DiffDegenerateImmigrationActive | Regime::DiffDegenerateImmigrationNull => [
            su2 / n.powi(3),
            sv2 / n,
            smu / n.powi(2),
            smv / n.sqrt(),
        ],
    }
}

/// Two-sample Kolmogorov-Smirnov statistic: the sup distance between the
/// empirical CDFs, by sort and merge. Deterministic.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<f64, HarnessError> {
    if a.is_empty() || b.is_empty() {
        return Err(HarnessError::EmptySample);
    }
    let mut xs = a.to_vec();
    let mut ys = b.to_vec();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    let (na, nb) = (xs.len() as f64, ys.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < xs.len() && j < ys.len() {
        let v = xs[i].min(ys[j]);
        while i < xs.len() && xs[i] == v {
            i += 1;
        }
        while j < ys.len() && ys[j] == v {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    // Once one sample is exhausted the gap only shrinks, so d is complete.
    Ok(d)
}

/// Fractions of replicas whose samples fall in H_n and tH_n.
pub fn existence_frequencies(
    spec: &ModelSpec,
    n: usize,
    replicas: usize,
    seed: u64,
) -> Result<(f64, f64), SimulateError> {
    let flags: Vec<(bool, bool)> = (0..replicas as u64)
        .into_par_iter()
        .map(|stream| {
            let traj = simulate(spec, n, seed, stream)?;
            Ok((crate::cls::in_hn(&traj), crate::cls::in_thn(&traj)))
        })
        .collect::<Result<_, SimulateError>>()?;
    let hn = flags.iter().filter(|f| f.0).count() as f64 / replicas as f64;
    let thn = flags.iter().filter(|f| f.1).count() as f64 / replicas as f64;
    Ok((hn, thn))
}

/// Experiment description: model, sample sizes, Monte Carlo sizes, seed.
#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub model: ModelChoice,
    pub n_values: Vec<usize>,
    pub replicas: usize,
    pub limit_paths: usize,
    pub sde_steps: usize,
    pub seed: u64,
    pub output_path: Option<PathBuf>,
    pub ks_tolerance: f64,
    pub var_ratio_tolerance: f64,
}

impl ExperimentConfig {
    pub fn new(model: ModelChoice) -> Self {
        Self {
            model,
            n_values: vec![200, 2000],
            replicas: 5000,
            limit_paths: 5000,
            sde_steps: 1 << 14,
            seed: 1,
            output_path: None,
            ks_tolerance: 0.05,
            var_ratio_tolerance: 0.15,
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.replicas < 100 {
            return Err(HarnessError::InvalidConfig(format!(
                "replicas must be >= 100, got {}",
                self.replicas
            )));
        }
        if self.n_values.is_empty() || self.n_values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(HarnessError::InvalidConfig(
                "n_values must be non-empty and strictly increasing".into(),
            ));
        }
        if self.limit_paths < 100 {
            return Err(HarnessError::InvalidConfig(format!(
                "limit_paths must be >= 100, got {}",
                self.limit_paths
            )));
        }
        if self.sde_steps < 2 {
            return Err(HarnessError::InvalidConfig("sde_steps must be >= 2".into()));
        }
        Ok(())
    }
}

/// One pass/fail line of the experiment summary.
#[derive(Clone, Debug, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub comparison: String,
    pub value: f64,
    pub threshold: f64,
    pub pass: bool,
}

impl CheckResult {
    fn le(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            comparison: "<=".into(),
            value,
            threshold,
            pass: value <= threshold,
        }
    }

    fn ge(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            comparison: ">=".into(),
            value,
            threshold,
            pass: value >= threshold,
        }
    }

    fn eq(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            comparison: "==".into(),
            value,
            threshold,
            pass: value == threshold,
        }
    }

    /// |value - 1| within the tolerance: a variance-ratio band check.
    fn ratio_within(name: impl Into<String>, value: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            comparison: "ratio-within".into(),
            value,
            threshold: tolerance,
            pass: (value - 1.0).abs() <= tolerance,
        }
    }
}

/// Per-sample-size summary statistics.
#[derive(Clone, Debug, Serialize)]
pub struct NSummary {
    pub n: usize,
    pub freq_hn: f64,
    pub freq_thn: f64,
    pub replica_failures: usize,
    pub ks_rho: Option<f64>,
    pub ks_ab: Option<f64>,
    pub var_n_rho: Option<f64>,
    pub var_n32_rho: Option<f64>,
    pub var_ratio_rho: Option<f64>,
    pub var_sqrtn_alpha: Option<f64>,
    pub var_ratio_ab: Option<f64>,
    pub corr_ab: Option<f64>,
    pub sd_line: Option<f64>,
    pub mean_joint: [f64; 4],
}

/// The distilled experiment report (serialized as the JSON summary).
#[derive(Clone, Debug, Serialize)]
pub struct ExperimentReport {
    pub model: String,
    pub regime: Regime,
    pub seed: u64,
    pub replicas: usize,
    pub limit_paths: usize,
    pub sde_steps: usize,
    pub sigma2_rho_degenerate: Option<f64>,
    pub sigma2_ab_degenerate: Option<f64>,
    pub per_n: Vec<NSummary>,
    pub checks: Vec<CheckResult>,
    pub all_checks_pass: bool,
}

/// One CSV row per replica and sample size.
#[derive(Clone, Debug)]
pub struct SampleRow {
    pub n: usize,
    pub replica: u64,
    pub result: ClsResult,
    pub scaled: ScaledErrors,
    pub joint: [f64; 4],
}

/// One CSV row per simulated limit path.
#[derive(Clone, Debug)]
pub struct LimitRow {
    pub path: u64,
    pub sample: LimitSample,
    pub joint: [f64; 4],
}

/// Full experiment output: report plus the raw rows behind it.
pub struct ExperimentOutput {
    pub report: ExperimentReport,
    pub sample_rows: Vec<SampleRow>,
    pub limit_rows: Vec<LimitRow>,
}

struct LimitEnsemble {
    rows: Vec<LimitRow>,
    rho_samples: Vec<f64>,
    ab_scalars: Vec<f64>,
}

fn simulate_limit_ensemble(
    spec: &ModelSpec,
    paths: usize,
    steps: usize,
    seed: u64,
) -> Result<LimitEnsemble, HarnessError> {
    let a = spec.drift();
    let c = spec.q_total();
    let alpha = spec.alpha();
    let beta = spec.beta();
    let rows: Vec<(LimitRow, f64, f64)> = (0..paths as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = RngStream::new(seed, LIMIT_STREAM_BASE + i);
            let path = simulate_y(a, c, steps, &mut rng);
            let sample = LimitSample::from_path(&path);
            let joint = joint_limit_sample(spec, &path)?;
            let rho = sample.int_y_dm / sample.int_y2;
            let ab = (alpha * beta).sqrt() * sample.int_y_dwt / sample.int_y;
            Ok((LimitRow { path: i, sample, joint }, rho, ab))
        })
        .collect::<Result<_, LimitsError>>()?;
    let mut ensemble = LimitEnsemble {
        rows: Vec::with_capacity(paths),
        rho_samples: Vec::with_capacity(paths),
        ab_scalars: Vec::with_capacity(paths),
    };
    for (row, rho, ab) in rows {
        ensemble.rows.push(row);
        ensemble.rho_samples.push(rho);
        ensemble.ab_scalars.push(ab);
    }
    Ok(ensemble)
}

fn normal_sample(count: usize, sigma2: f64, seed: u64, offset: u64) -> Vec<f64> {
    let sd = sigma2.sqrt();
    (0..count as u64)
        .map(|i| {
            let mut rng = RngStream::new(seed, NORMAL_STREAM_BASE + offset + i);
            let z: f64 = StandardNormal.sample(&mut rng);
            sd * z
        })
        .collect()
}

/// Runs the full experiment: replica simulation, limit sampling, KS
/// distances, variance ratios, existence frequencies, and the pass/fail
/// checks. Bitwise reproducible for a fixed config, independent of the
/// worker layout.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput, HarnessError> {
    config.validate()?;
    let spec = config.model.build()?;
    let regime = spec.regime();

    let limits = simulate_limit_ensemble(&spec, config.limit_paths, config.sde_steps, config.seed)?;
    let sigma2_rho = limit_rho_degenerate_sigma2(&spec).ok();
    let sigma2_ab = limit_ab_degenerate_sigma2(&spec).ok();
    let normal_rho = sigma2_rho.map(|s2| normal_sample(config.limit_paths, s2, config.seed, 0));
    let normal_ab = sigma2_ab.map(|s2| {
        normal_sample(config.limit_paths, s2, config.seed, config.limit_paths as u64)
    });

    let mut sample_rows = Vec::new();
    let mut per_n = Vec::new();
    for &n in &config.n_values {
        let records: Vec<Result<(ClsResult, [f64; 4]), SimulateError>> = (0..config.replicas
            as u64)
            .into_par_iter()
            .map(|stream| {
                let traj = simulate(&spec, n, config.seed, stream)?;
                let result = estimate_all(&traj, spec.m_eps());
                let joint = joint_statistics(&spec, &traj);
                Ok((result, joint))
            })
            .collect();

        let mut failures = 0usize;
        let mut rows_n = Vec::with_capacity(config.replicas);
        for (replica, rec) in records.into_iter().enumerate() {
            match rec {
                Ok((result, joint)) => {
                    let scaled = scale_result(&spec, n, &result);
                    rows_n.push(SampleRow {
                        n,
                        replica: replica as u64,
                        result,
                        scaled,
                        joint,
                    });
                }
                Err(_) => failures += 1,
            }
        }

        let defined = |f: fn(&ScaledErrors) -> Option<f64>| -> Vec<f64> {
            rows_n.iter().filter_map(|r| f(&r.scaled)).collect()
        };
        let n_rho = defined(|s| s.n_rho);
        let n32_rho = defined(|s| s.n32_rho);
        let sqrtn_alpha = defined(|s| s.sqrtn_alpha);
        let ab_pairs: Vec<(f64, f64)> = rows_n
            .iter()
            .filter_map(|r| r.scaled.sqrtn_alpha.zip(r.scaled.sqrtn_beta))
            .collect();

        let count = rows_n.len().max(1) as f64;
        let freq_hn = rows_n.iter().filter(|r| r.result.in_hn).count() as f64 / count;
        let freq_thn = rows_n.iter().filter(|r| r.result.in_thn).count() as f64 / count;

        // Pivotal rho statistic: n-scaling with the path-functional limit in
        // the stochastic-Y regimes, n^{3/2}-scaling with the normal limit in
        // the total-degenerate regime.
        let ks_rho = match regime {
            Regime::TotalDegenerate => normal_rho
                .as_deref()
                .and_then(|norm| ks_two_sample(&n32_rho, norm).ok()),
            _ => ks_two_sample(&n_rho, &limits.rho_samples).ok(),
        };
        let ks_ab = match regime {
            Regime::General | Regime::TotalDegenerate => {
                ks_two_sample(&sqrtn_alpha, &limits.ab_scalars).ok()
            }
            Regime::DiffDegenerateImmigrationActive => normal_ab
                .as_deref()
                .and_then(|norm| ks_two_sample(&sqrtn_alpha, norm).ok()),
            Regime::DiffDegenerateImmigrationNull => None,
        };

        let var_of = |xs: &[f64]| (xs.len() >= 2).then(|| mean_var(xs).1);
        let var_n_rho = var_of(&n_rho);
        let var_n32_rho = var_of(&n32_rho);
        let var_sqrtn_alpha = var_of(&sqrtn_alpha);
        let var_ratio_rho = match (var_n32_rho, sigma2_rho) {
            (Some(v), Some(s2)) if s2 > 0.0 => Some(v / s2),
            _ => None,
        };
        let var_ratio_ab = match (var_sqrtn_alpha, sigma2_ab) {
            (Some(v), Some(s2)) if s2 > 0.0 => Some(v / s2),
            _ => None,
        };

        let corr_ab = (ab_pairs.len() >= 2).then(|| {
            let xs: Vec<f64> = ab_pairs.iter().map(|p| p.0).collect();
            let ys: Vec<f64> = ab_pairs.iter().map(|p| p.1).collect();
            correlation(&xs, &ys)
        });
        let sd_line = (ab_pairs.len() >= 2).then(|| {
            let line: Vec<f64> = ab_pairs.iter().map(|p| p.0 + p.1).collect();
            mean_var(&line).1.sqrt()
        });

        let mut mean_joint = [0.0; 4];
        for (slot, mean) in mean_joint.iter_mut().enumerate() {
            let mut acc = KahanSum::new();
            for row in &rows_n {
                acc.add(row.joint[slot]);
            }
            *mean = acc.value() / count;
        }

        per_n.push(NSummary {
            n,
            freq_hn,
            freq_thn,
            replica_failures: failures,
            ks_rho,
            ks_ab,
            var_n_rho,
            var_n32_rho,
            var_ratio_rho,
            var_sqrtn_alpha,
            var_ratio_ab,
            corr_ab,
            sd_line,
            mean_joint,
        });
        sample_rows.extend(rows_n);
    }

    let checks = build_checks(config, regime, &per_n);
    let all_checks_pass = checks.iter().all(|c| c.pass);
    let report = ExperimentReport {
        model: spec.name().to_string(),
        regime,
        seed: config.seed,
        replicas: config.replicas,
        limit_paths: config.limit_paths,
        sde_steps: config.sde_steps,
        sigma2_rho_degenerate: sigma2_rho,
        sigma2_ab_degenerate: sigma2_ab,
        per_n,
        checks,
        all_checks_pass,
    };
    Ok(ExperimentOutput {
        report,
        sample_rows,
        limit_rows: limits.rows,
    })
}

fn build_checks(config: &ExperimentConfig, regime: Regime, per_n: &[NSummary]) -> Vec<CheckResult> {
    let mut checks = Vec::new();
    let last = per_n.last().expect("validated non-empty");
    let first = per_n.first().expect("validated non-empty");
    let n = last.n;

    if let Some(ks) = last.ks_rho {
        checks.push(CheckResult::le(
            format!("ks_rho_n{n}"),
            ks,
            config.ks_tolerance,
        ));
    }
    if per_n.len() >= 2 {
        if let (Some(ks_last), Some(ks_first)) = (last.ks_rho, first.ks_rho) {
            checks.push(CheckResult::le(
                "ks_rho_monotone",
                ks_last,
                ks_first + 0.02,
            ));
        }
    }
    if let Some(ks) = last.ks_ab {
        checks.push(CheckResult::le(
            format!("ks_ab_n{n}"),
            ks,
            config.ks_tolerance,
        ));
    }
    if let Some(ratio) = last.var_ratio_rho {
        checks.push(CheckResult::ratio_within(
            format!("var_ratio_rho_n{n}"),
            ratio,
            config.var_ratio_tolerance,
        ));
    }
    if let Some(ratio) = last.var_ratio_ab {
        checks.push(CheckResult::ratio_within(
            format!("var_ratio_ab_n{n}"),
            ratio,
            config.var_ratio_tolerance,
        ));
    }
    if regime == Regime::DiffDegenerateImmigrationActive {
        if let Some(corr) = last.corr_ab {
            checks.push(CheckResult::le(format!("corr_ab_n{n}"), corr, -0.95));
        }
    }
    if n >= 100 {
        checks.push(CheckResult::ge(format!("freq_hn_n{n}"), last.freq_hn, 0.99));
        if regime != Regime::DiffDegenerateImmigrationNull {
            checks.push(CheckResult::ge(
                format!("freq_thn_n{n}"),
                last.freq_thn,
                0.99,
            ));
        }
    }
    if regime == Regime::DiffDegenerateImmigrationNull {
        checks.push(CheckResult::eq("freq_thn_zero", last.freq_thn, 0.0));
    }
    checks
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// Writes `replica,k,X1,X2,U,V,M1,M2` rows for a batch of trajectories.
pub fn write_trajectories_csv<W: Write>(w: &mut W, trajectories: &[Trajectory]) -> std::io::Result<()> {
    writeln!(w, "replica,k,X1,X2,U,V,M1,M2")?;
    for (replica, traj) in trajectories.iter().enumerate() {
        for k in 0..traj.states.len() {
            let x = traj.states[k];
            let (m1, m2) = if k >= 1 {
                let m = traj.m_seq[k - 1];
                (m[0].to_string(), m[1].to_string())
            } else {
                (String::new(), String::new())
            };
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                replica, k, x[0], x[1], traj.u_seq[k], traj.v_seq[k], m1, m2
            )?;
        }
    }
    Ok(())
}

/// Reads trajectories back from the `replica,k,X1,X2,...` CSV format;
/// derived sequences are rebuilt from the states and the model.
pub fn read_trajectories_csv(spec: &ModelSpec, text: &str) -> Result<Vec<Trajectory>, HarnessError> {
    let mut per_replica: std::collections::BTreeMap<u64, Vec<(usize, [u64; 2])>> =
        std::collections::BTreeMap::new();
    for (idx, line) in text.lines().enumerate() {
        if idx == 0 || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let parse = |s: &str| -> Result<u64, HarnessError> {
            s.trim()
                .parse()
                .map_err(|_| HarnessError::InvalidConfig(format!("bad CSV field '{s}' on line {}", idx + 1)))
        };
        if fields.len() < 4 {
            return Err(HarnessError::InvalidConfig(format!(
                "trajectory CSV line {} has {} fields, expected at least 4",
                idx + 1,
                fields.len()
            )));
        }
        let replica = parse(fields[0])?;
        let k = parse(fields[1])? as usize;
        let x = [parse(fields[2])?, parse(fields[3])?];
        per_replica.entry(replica).or_default().push((k, x));
    }
    per_replica
        .into_iter()
        .map(|(replica, mut rows)| {
            rows.sort_by_key(|r| r.0);
            if rows.iter().enumerate().any(|(i, r)| r.0 != i) {
                return Err(HarnessError::InvalidConfig(format!(
                    "replica {replica} has missing or duplicate time indices"
                )));
            }
            let states = rows.into_iter().map(|r| r.1).collect();
            Ok(Trajectory::from_states(spec, states, 0, 0)?)
        })
        .collect()
}

/// Writes `replica,n,in_Hn,in_tHn,rho_hat,delta_hat,alpha_hat,beta_hat` rows.
pub fn write_estimates_csv<W: Write>(
    w: &mut W,
    results: &[(u64, ClsResult)],
) -> std::io::Result<()> {
    writeln!(w, "replica,n,in_Hn,in_tHn,rho_hat,delta_hat,alpha_hat,beta_hat")?;
    for (replica, r) in results {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            replica,
            r.n,
            r.in_hn as u8,
            r.in_thn as u8,
            fmt_opt(r.rho_hat),
            fmt_opt(r.delta_hat),
            fmt_opt(r.alpha_hat),
            fmt_opt(r.beta_hat),
        )?;
    }
    Ok(())
}

/// Writes limit-sample rows `path,int_Y2,int_Y,int_Y_dM,int_Y_dWt,joint1..4`.
pub fn write_limit_rows_csv<W: Write>(w: &mut W, rows: &[LimitRow]) -> std::io::Result<()> {
    writeln!(
        w,
        "path,int_Y2,int_Y,int_Y_dM,int_Y_dWt,joint1,joint2,joint3,joint4"
    )?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            r.path,
            r.sample.int_y2,
            r.sample.int_y,
            r.sample.int_y_dm,
            r.sample.int_y_dwt,
            r.joint[0],
            r.joint[1],
            r.joint[2],
            r.joint[3],
        )?;
    }
    Ok(())
}

fn write_sample_rows_csv<W: Write>(w: &mut W, rows: &[SampleRow]) -> std::io::Result<()> {
    writeln!(
        w,
        "n,replica,in_Hn,in_tHn,rho_hat,delta_hat,alpha_hat,beta_hat,\
         n_rho_err,n32_rho_err,sqrtn_alpha_err,sqrtn_beta_err,joint1,joint2,joint3,joint4"
    )?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.n,
            r.replica,
            r.result.in_hn as u8,
            r.result.in_thn as u8,
            fmt_opt(r.result.rho_hat),
            fmt_opt(r.result.delta_hat),
            fmt_opt(r.result.alpha_hat),
            fmt_opt(r.result.beta_hat),
            fmt_opt(r.scaled.n_rho),
            fmt_opt(r.scaled.n32_rho),
            fmt_opt(r.scaled.sqrtn_alpha),
            fmt_opt(r.scaled.sqrtn_beta),
            r.joint[0],
            r.joint[1],
            r.joint[2],
            r.joint[3],
        )?;
    }
    Ok(())
}

impl ExperimentOutput {
    /// Writes `<prefix>.summary.json`, `<prefix>.samples.csv`, and
    /// `<prefix>.limits.csv`; returns the paths written.
    pub fn write_files(&self, prefix: &Path) -> Result<Vec<PathBuf>, HarnessError> {
        if let Some(parent) = prefix.parent() {
            if !parent.as_os_str().is_empty() {
                fs::create_dir_all(parent)?;
            }
        }
        let with_ext = |ext: &str| -> PathBuf {
            let mut os = prefix.as_os_str().to_owned();
            os.push(ext);
            PathBuf::from(os)
        };
        let summary_path = with_ext(".summary.json");
        let samples_path = with_ext(".samples.csv");
        let limits_path = with_ext(".limits.csv");

        let json = serde_json::to_string_pretty(&self.report).expect("report serializes");
        fs::write(&summary_path, json + "\n")?;

        let mut buf = Vec::new();
        write_sample_rows_csv(&mut buf, &self.sample_rows)?;
        fs::write(&samples_path, buf)?;

        let mut buf = Vec::new();
        write_limit_rows_csv(&mut buf, &self.limit_rows)?;
        fs::write(&limits_path, buf)?;

        Ok(vec![summary_path, samples_path, limits_path])
    }

    /// One human-readable pass/fail line per check.
    pub fn check_lines(&self) -> Vec<String> {
        self.report
            .checks
            .iter()
            .map(|c| {
                format!(
                    "{}: {} (value {} {} {})",
                    if c.pass { "PASS" } else { "FAIL" },
                    c.name,
                    c.value,
                    c.comparison,
                    c.threshold
                )
            })
            .collect()
    }
}
