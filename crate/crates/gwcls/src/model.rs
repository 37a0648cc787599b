//! Offspring and immigration distributions, derived moment objects, and the
//! regime classification that the limit theorems branch on.
//!
//! Laws are finite-support and all moments are exact enumerations over atoms.
//! Unbounded laws must be truncated before ingestion; this keeps every moment
//! condition trivially satisfied and makes the conditional-moment oracles
//! exact.

use std::fmt;

use thiserror::Error;

use crate::numeric::{dot, mat_add, mat_scale, quad_form, Mat2, Vec2, DIFF, ONES};

/// Absolute tolerance for "this quadratic form is zero" decisions.
/// The degenerate model families produce exact zeros up to rounding of the
/// input probabilities.
pub const ZERO_FORM_TOL: f64 = 1e-12;
/// Tolerance for the doubly symmetric mean-matrix shape and criticality.
pub const MEAN_SHAPE_TOL: f64 = 1e-10;
/// Tolerance for the probability mass of a law summing to one.
pub const PROB_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("law has empty support")]
    EmptySupport,
    #[error("atom ({0}, {1}) has negative probability {2}")]
    NegativeProbability(u64, u64, f64),
    #[error("atom ({0}, {1}) appears more than once")]
    DuplicateAtom(u64, u64),
    #[error("probabilities sum to {0}, not 1")]
    ProbabilitySum(f64),
    #[error("offspring mean matrix [{0:?}, {1:?}] is not doubly symmetric")]
    NotDoublySymmetric(Vec2, Vec2),
    #[error("criticality parameter alpha + beta = {0} differs from 1")]
    NotCritical(f64),
    #[error("offspring means alpha = {0}, beta = {1} are not both positive")]
    NotPositivelyRegular(f64, f64),
    #[error("immigration mean is the zero vector")]
    ZeroImmigrationMean,
}

/// Exact finite-support probability law on pairs of non-negative integers.
#[derive(Clone, Debug, PartialEq)]
pub struct FiniteLaw2D {
    atoms: Vec<([u64; 2], f64)>,
}

impl FiniteLaw2D {
    /// Validates support, non-negativity, distinctness, and total mass.
    pub fn new(atoms: Vec<([u64; 2], f64)>) -> Result<Self, ModelError> {
        if atoms.is_empty() {
            return Err(ModelError::EmptySupport);
        }
        for &(xy, p) in &atoms {
            if p < 0.0 || !p.is_finite() {
                return Err(ModelError::NegativeProbability(xy[0], xy[1], p));
            }
        }
        let mut sorted: Vec<[u64; 2]> = atoms.iter().map(|a| a.0).collect();
        sorted.sort_unstable();
        for w in sorted.windows(2) {
            if w[0] == w[1] {
                return Err(ModelError::DuplicateAtom(w[0][0], w[0][1]));
            }
        }
        let total: f64 = atoms.iter().map(|a| a.1).sum();
        if (total - 1.0).abs() > PROB_SUM_TOL {
            return Err(ModelError::ProbabilitySum(total));
        }
        Ok(Self { atoms })
    }

    /// Deterministic law concentrated at one point.
    pub fn point_mass(x: [u64; 2]) -> Self {
        Self { atoms: vec![(x, 1.0)] }
    }

    /// Uniform law on {0,1}^2.
    pub fn uniform_unit_square() -> Self {
        Self {
            atoms: vec![
                ([0, 0], 0.25),
                ([1, 0], 0.25),
                ([0, 1], 0.25),
                ([1, 1], 0.25),
            ],
        }
    }

    pub fn atoms(&self) -> &[([u64; 2], f64)] {
        &self.atoms
    }

    /// Exact mean vector.
    pub fn mean(&self) -> Vec2 {
        let mut m = [0.0; 2];
        for &(xy, p) in &self.atoms {
            m[0] += p * xy[0] as f64;
            m[1] += p * xy[1] as f64;
        }
        m
    }

    /// Exact covariance matrix; symmetric positive semidefinite.
    pub fn cov(&self) -> Mat2 {
        let m = self.mean();
        let mut c = [[0.0; 2]; 2];
        for &(xy, p) in &self.atoms {
            let d = [xy[0] as f64 - m[0], xy[1] as f64 - m[1]];
            for i in 0..2 {
                for j in 0..2 {
                    c[i][j] += p * d[i] * d[j];
                }
            }
        }
        c
    }

    /// Exact raw second moment of `<dir, X>`.
    pub fn second_moment_along(&self, dir: Vec2) -> f64 {
        self.atoms
            .iter()
            .map(|&(xy, p)| {
                let v = dir[0] * xy[0] as f64 + dir[1] * xy[1] as f64;
                p * v * v
            })
            .sum()
    }

    /// Exact centered third Kronecker moment E[(X - m)^{(x)3}] as a flat
    /// 8-vector indexed by 4i + 2j + k for components (i, j, k).
    pub fn third_central_kronecker(&self) -> [f64; 8] {
        let m = self.mean();
        let mut out = [0.0; 8];
        for &(xy, p) in &self.atoms {
            let d = [xy[0] as f64 - m[0], xy[1] as f64 - m[1]];
            for i in 0..2 {
                for j in 0..2 {
                    for k in 0..2 {
                        out[4 * i + 2 * j + k] += p * d[i] * d[j] * d[k];
                    }
                }
            }
        }
        out
    }

    /// Largest component value in the support.
    pub fn max_component(&self) -> u64 {
        self.atoms
            .iter()
            .map(|&(xy, _)| xy[0].max(xy[1]))
            .max()
            .unwrap_or(0)
    }

    /// Mirror of the law under component exchange (x1, x2) -> (x2, x1).
    pub fn mirrored(&self) -> Self {
        Self {
            atoms: self.atoms.iter().map(|&([a, b], p)| ([b, a], p)).collect(),
        }
    }
}

/// Exact mean of a law; free-function form of [`FiniteLaw2D::mean`].
pub fn law_mean(law: &FiniteLaw2D) -> Vec2 {
    law.mean()
}

/// Exact covariance of a law; free-function form of [`FiniteLaw2D::cov`].
pub fn law_cov(law: &FiniteLaw2D) -> Mat2 {
    law.cov()
}

/// Which of the limit-theorem branches a model falls into.
///
/// The two degeneracies are `<Vbar 1, 1> = 0` (every individual has exactly
/// one child in total) and `<Vbar u~, u~> = 0` (alpha = beta = 1/2 and each
/// individual's two offspring counts coincide); they can never hold at the
/// same time.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    General,
    TotalDegenerate,
    DiffDegenerateImmigrationActive,
    DiffDegenerateImmigrationNull,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Regime::General => "general",
            Regime::TotalDegenerate => "total-degenerate",
            Regime::DiffDegenerateImmigrationActive => "diff-degenerate-immigration-active",
            Regime::DiffDegenerateImmigrationNull => "diff-degenerate-immigration-null",
        };
        f.write_str(s)
    }
}

/// Full model: two offspring laws, one immigration law, and every derived
/// moment object the estimators and limit laws need. Immutable after
/// construction; safe to share across workers.
#[derive(Clone, Debug)]
pub struct ModelSpec {
    offspring1: FiniteLaw2D,
    offspring2: FiniteLaw2D,
    immigration: FiniteLaw2D,
    alpha: f64,
    beta: f64,
    mean_matrix: Mat2,
    v_xi1: Mat2,
    v_xi2: Mat2,
    vbar_xi: Mat2,
    m_eps: Vec2,
    v_eps: Mat2,
    q_total: f64,
    q_diff: f64,
    imm_diff_msq: f64,
    regime: Regime,
    name: String,
}

impl ModelSpec {
    /// Builds a model from three laws, validating the doubly symmetric
    /// critical positively regular shape and nonzero immigration mean.
    pub fn build(
        offspring1: FiniteLaw2D,
        offspring2: FiniteLaw2D,
        immigration: FiniteLaw2D,
    ) -> Result<Self, ModelError> {
        Self::build_named(offspring1, offspring2, immigration, "custom")
    }

    pub fn build_named(
        offspring1: FiniteLaw2D,
        offspring2: FiniteLaw2D,
        immigration: FiniteLaw2D,
        name: &str,
    ) -> Result<Self, ModelError> {
        let m1 = offspring1.mean();
        let m2 = offspring2.mean();
        // Mean matrix has columns m1, m2; doubly symmetric means
        // m1 = (alpha, beta) and m2 = (beta, alpha).
        if (m1[0] - m2[1]).abs() > MEAN_SHAPE_TOL || (m1[1] - m2[0]).abs() > MEAN_SHAPE_TOL {
            return Err(ModelError::NotDoublySymmetric(m1, m2));
        }
        let alpha = m1[0];
        let beta = m1[1];
        if (alpha + beta - 1.0).abs() > MEAN_SHAPE_TOL {
            return Err(ModelError::NotCritical(alpha + beta));
        }
        if alpha <= 0.0 || beta <= 0.0 {
            return Err(ModelError::NotPositivelyRegular(alpha, beta));
        }
        let m_eps = immigration.mean();
        if m_eps[0] == 0.0 && m_eps[1] == 0.0 {
            return Err(ModelError::ZeroImmigrationMean);
        }

        let v_xi1 = offspring1.cov();
        let v_xi2 = offspring2.cov();
        let vbar_xi = mat_scale(0.5, mat_add(v_xi1, v_xi2));
        let v_eps = immigration.cov();
        let q_total = quad_form(vbar_xi, ONES);
        let q_diff = quad_form(vbar_xi, DIFF);
        let imm_diff_msq = immigration.second_moment_along(DIFF);
        let mean_matrix = [[alpha, beta], [beta, alpha]];

        let mut spec = Self {
            offspring1,
            offspring2,
            immigration,
            alpha,
            beta,
            mean_matrix,
            v_xi1,
            v_xi2,
            vbar_xi,
            m_eps,
            v_eps,
            q_total,
            q_diff,
            imm_diff_msq,
            regime: Regime::General,
            name: name.to_string(),
        };
        spec.regime = classify_regime(&spec);
        Ok(spec)
    }

    pub fn offspring1(&self) -> &FiniteLaw2D {
        &self.offspring1
    }
    pub fn offspring2(&self) -> &FiniteLaw2D {
        &self.offspring2
    }
    pub fn immigration(&self) -> &FiniteLaw2D {
        &self.immigration
    }
    pub fn alpha(&self) -> f64 {
        self.alpha
    }
    pub fn beta(&self) -> f64 {
        self.beta
    }
    /// alpha - beta, the second eigenvalue of the mean matrix.
    pub fn delta(&self) -> f64 {
        self.alpha - self.beta
    }
    pub fn mean_matrix(&self) -> Mat2 {
        self.mean_matrix
    }
    pub fn v_xi1(&self) -> Mat2 {
        self.v_xi1
    }
    pub fn v_xi2(&self) -> Mat2 {
        self.v_xi2
    }
    pub fn vbar_xi(&self) -> Mat2 {
        self.vbar_xi
    }
    pub fn m_eps(&self) -> Vec2 {
        self.m_eps
    }
    pub fn v_eps(&self) -> Mat2 {
        self.v_eps
    }
    /// `<Vbar 1, 1>`: diffusion coefficient of the limit SDE.
    pub fn q_total(&self) -> f64 {
        self.q_total
    }
    /// `<Vbar u~, u~>`: variance form along the difference direction.
    pub fn q_diff(&self) -> f64 {
        self.q_diff
    }
    /// E `<u~, eps>^2`: raw second moment of the immigration difference.
    pub fn imm_diff_msq(&self) -> f64 {
        self.imm_diff_msq
    }
    pub fn regime(&self) -> Regime {
        self.regime
    }
    pub fn name(&self) -> &str {
        &self.name
    }
    /// `<1, m_eps>`: drift of the limit SDE.
    pub fn drift(&self) -> f64 {
        dot(ONES, self.m_eps)
    }

    /// Stable content hash of the three laws; identifies the generating
    /// model on trajectories and in reports.
    pub fn content_id(&self) -> u64 {
        let mut h = Fnv1a::new();
        for law in [&self.offspring1, &self.offspring2, &self.immigration] {
            for &(xy, p) in law.atoms() {
                h.write_u64(xy[0]);
                h.write_u64(xy[1]);
                h.write_u64(p.to_bits());
            }
            h.write_u64(u64::MAX); // law separator
        }
        h.finish()
    }
}

/// FNV-1a, hand-rolled so ids are stable across Rust releases.
struct Fnv1a(u64);

impl Fnv1a {
    fn new() -> Self {
        Fnv1a(0xcbf29ce484222325)
    }
    fn write_u64(&mut self, x: u64) {
        for b in x.to_le_bytes() {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x100000001b3);
        }
    }
    fn finish(&self) -> u64 {
        self.0
    }
}

/// Classifies a model by exact-zero tests on the degeneracy quadratic forms,
/// recomputed from atoms.
pub fn classify_regime(spec: &ModelSpec) -> Regime {
    let vbar = mat_scale(0.5, mat_add(spec.offspring1.cov(), spec.offspring2.cov()));
    let q_total = quad_form(vbar, ONES);
    let q_diff = quad_form(vbar, DIFF);
    if q_total.abs() <= ZERO_FORM_TOL {
        Regime::TotalDegenerate
    } else if q_diff.abs() <= ZERO_FORM_TOL {
        if spec.immigration.second_moment_along(DIFF).abs() <= ZERO_FORM_TOL {
            Regime::DiffDegenerateImmigrationNull
        } else {
            Regime::DiffDegenerateImmigrationActive
        }
    } else {
        Regime::General
    }
}

/// "Model A" family: offspring law {(0,0): (1-alpha)/2, (1,0): alpha,
/// (0,2): (1-alpha)/2} and its mirror, uniform immigration on {0,1}^2.
/// Both degeneracy forms are strictly positive for alpha in (0,1).
pub fn model_general(alpha: f64) -> Result<ModelSpec, ModelError> {
    let rest = (1.0 - alpha) / 2.0;
    let offspring1 = FiniteLaw2D::new(vec![([0, 0], rest), ([1, 0], alpha), ([0, 2], rest)])?;
    let offspring2 = offspring1.mirrored();
    ModelSpec::build_named(
        offspring1,
        offspring2,
        FiniteLaw2D::uniform_unit_square(),
        "general",
    )
}

/// "Model B": every individual has exactly one child, of type 1 with
/// probability alpha. Total-degenerate for every alpha in (0,1).
pub fn model_unit_total(alpha: f64) -> Result<ModelSpec, ModelError> {
    let offspring1 = FiniteLaw2D::new(vec![([1, 0], alpha), ([0, 1], 1.0 - alpha)])?;
    let offspring2 = offspring1.mirrored();
    ModelSpec::build_named(
        offspring1,
        offspring2,
        FiniteLaw2D::uniform_unit_square(),
        "unit-total",
    )
}

/// "Model C": alpha = beta = 1/2, each individual produces either no
/// children or one of each type. Difference-degenerate, immigration active.
pub fn model_equal_pair() -> Result<ModelSpec, ModelError> {
    let offspring = FiniteLaw2D::new(vec![([0, 0], 0.5), ([1, 1], 0.5)])?;
    ModelSpec::build_named(
        offspring.clone(),
        offspring,
        FiniteLaw2D::uniform_unit_square(),
        "equal-pair",
    )
}

/// Model C with immigration supported on the diagonal, so the two
/// immigration components always coincide and the difference coordinate
/// carries no information.
pub fn model_equal_pair_null_immigration() -> Result<ModelSpec, ModelError> {
    let offspring = FiniteLaw2D::new(vec![([0, 0], 0.5), ([1, 1], 0.5)])?;
    let immigration = FiniteLaw2D::new(vec![([0, 0], 0.5), ([1, 1], 0.5)])?;
    ModelSpec::build_named(offspring.clone(), offspring, immigration, "equal-pair-null")
}

#[derive(Debug, Error)]
pub enum LawParseError {
    #[error("atom '{0}' is not an 'x1 x2 prob' triple")]
    BadTriple(String),
    #[error("unknown model '{0}' (expected general, unit-total, equal-pair, equal-pair-null, or custom)")]
    UnknownModel(String),
    #[error("model '{0}' requires an alpha parameter")]
    MissingAlpha(String),
    #[error("custom model requires offspring1, offspring2, and immigration laws")]
    MissingLaw,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Parses a law from comma-separated `x1 x2 prob` triples, e.g.
/// `0 0 0.35, 1 0 0.30, 0 2 0.35`.
pub fn parse_law(text: &str) -> Result<FiniteLaw2D, LawParseError> {
    let mut atoms = Vec::new();
    for triple in text.split(',') {
        let triple = triple.trim();
        if triple.is_empty() {
            continue;
        }
        let parts: Vec<&str> = triple.split_whitespace().collect();
        let parsed = (|| -> Option<([u64; 2], f64)> {
            if parts.len() != 3 {
                return None;
            }
            let x1 = parts[0].parse().ok()?;
            let x2 = parts[1].parse().ok()?;
            let p = parts[2].parse().ok()?;
            Some(([x1, x2], p))
        })();
        match parsed {
            Some(atom) => atoms.push(atom),
            None => return Err(LawParseError::BadTriple(triple.to_string())),
        }
    }
    Ok(FiniteLaw2D::new(atoms)?)
}

/// A model selection: a canonical builder with its parameter, or inline
/// atom lists for all three laws.
#[derive(Clone, Debug)]
pub enum ModelChoice {
    General { alpha: f64 },
    UnitTotal { alpha: f64 },
    EqualPair,
    EqualPairNullImmigration,
    Custom {
        offspring1: FiniteLaw2D,
        offspring2: FiniteLaw2D,
        immigration: FiniteLaw2D,
    },
}

impl ModelChoice {
    /// Resolves a builder name plus optional parameters and inline laws.
    pub fn resolve(
        name: &str,
        alpha: Option<f64>,
        laws: Option<(FiniteLaw2D, FiniteLaw2D, FiniteLaw2D)>,
    ) -> Result<Self, LawParseError> {
        match name {
            "general" => Ok(ModelChoice::General {
                alpha: alpha.ok_or_else(|| LawParseError::MissingAlpha(name.into()))?,
            }),
            "unit-total" => Ok(ModelChoice::UnitTotal {
                alpha: alpha.ok_or_else(|| LawParseError::MissingAlpha(name.into()))?,
            }),
            "equal-pair" => Ok(ModelChoice::EqualPair),
            "equal-pair-null" => Ok(ModelChoice::EqualPairNullImmigration),
            "custom" => {
                let (offspring1, offspring2, immigration) =
                    laws.ok_or(LawParseError::MissingLaw)?;
                Ok(ModelChoice::Custom { offspring1, offspring2, immigration })
            }
            other => Err(LawParseError::UnknownModel(other.to_string())),
        }
    }

    pub fn build(&self) -> Result<ModelSpec, ModelError> {
        match self {
            ModelChoice::General { alpha } => model_general(*alpha),
            ModelChoice::UnitTotal { alpha } => model_unit_total(*alpha),
            ModelChoice::EqualPair => model_equal_pair(),
            ModelChoice::EqualPairNullImmigration => model_equal_pair_null_immigration(),
            ModelChoice::Custom { offspring1, offspring2, immigration } => ModelSpec::build(
                offspring1.clone(),
                offspring2.clone(),
                immigration.clone(),
            ),
        }
    }
}
