//! Exact trajectory generation for the branching process and the derived
//! AR(1)-coordinate and martingale-difference sequences.
//!
//! Each generation is the sum of per-individual offspring draws plus one
//! immigration draw. States are exact integers; only the residuals `M_k`
//! are real-valued.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use thiserror::Error;

use crate::model::{FiniteLaw2D, ModelSpec};
use crate::numeric::{mat_vec, Vec2};

/// Component bound: states must stay exactly representable in f64.
pub const MAX_COMPONENT: u64 = 1 << 53;

/// Above this many individuals of one type, the iid offspring sum is drawn
/// as atom multiplicities via sequential conditional binomials instead of
/// individual-by-individual (distribution-identical, O(#atoms) per step).
const MULTINOMIAL_SWITCH: u64 = 64;

#[derive(Debug, Error)]
pub enum SimulateError {
    #[error("state component exceeded 2^53 at step {step} (explosive misuse?)")]
    StateOverflow { step: usize },
    #[error("trajectory must start at the zero state")]
    NonzeroStart,
}

/// Counter-keyed reproducible random stream.
///
/// Identical (seed, stream) pairs yield bitwise-identical draws regardless
/// of how replicas are laid out across workers.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { seed, stream, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }
    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }
    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.rng.fill_bytes(dest)
    }
}

/// Inverse-CDF sampler over the atoms of a finite law.
pub struct LawSampler {
    atoms: Vec<([u64; 2], f64)>,
    cum: Vec<f64>,
}

impl LawSampler {
    pub fn new(law: &FiniteLaw2D) -> Self {
        let atoms: Vec<_> = law.atoms().to_vec();
        let mut cum = Vec::with_capacity(atoms.len());
        let mut acc = 0.0;
        for &(_, p) in &atoms {
            acc += p;
            cum.push(acc);
        }
        Self { atoms, cum }
    }

    /// One draw by inverse CDF; mass lost to rounding (< 1e-12) lands on the
    /// last atom.
    pub fn draw<R: RngCore>(&self, rng: &mut R) -> [u64; 2] {
        let u: f64 = rand::Rng::random(rng);
        for (i, &c) in self.cum.iter().enumerate() {
            if u < c {
                return self.atoms[i].0;
            }
        }
        self.atoms[self.atoms.len() - 1].0
    }

    /// Sum of `count` independent draws.
    ///
    /// Small populations are drawn individual-by-individual; large ones via
    /// multinomial atom multiplicities (sequential conditional binomials),
    /// which has the same distribution.
    pub fn iid_sum<R: RngCore>(&self, count: u64, rng: &mut R) -> [u128; 2] {
        let mut acc: [u128; 2] = [0, 0];
        if count == 0 {
            return acc;
        }
        if count <= MULTINOMIAL_SWITCH || self.atoms.len() == 1 {
            for _ in 0..count {
                let x = self.draw(rng);
                acc[0] += x[0] as u128;
                acc[1] += x[1] as u128;
            }
            return acc;
        }
        let mut remaining = count;
        let mut tail_mass = 1.0;
        for (i, &(xy, p)) in self.atoms.iter().enumerate() {
            if remaining == 0 {
                break;
            }
            let take = if i + 1 == self.atoms.len() {
                remaining
            } else {
                let cond = (p / tail_mass).clamp(0.0, 1.0);
                let bin = Binomial::new(remaining, cond).expect("conditional p in [0,1]");
                bin.sample(rng)
            };
            acc[0] += take as u128 * xy[0] as u128;
            acc[1] += take as u128 * xy[1] as u128;
            remaining -= take;
            tail_mass -= p;
        }
        acc
    }
}

/// Per-model sampler bundle reused across steps.
pub struct ModelSampler<'a> {
    spec: &'a ModelSpec,
    offspring1: LawSampler,
    offspring2: LawSampler,
    immigration: LawSampler,
}

impl<'a> ModelSampler<'a> {
    pub fn new(spec: &'a ModelSpec) -> Self {
        Self {
            spec,
            offspring1: LawSampler::new(spec.offspring1()),
            offspring2: LawSampler::new(spec.offspring2()),
            immigration: LawSampler::new(spec.immigration()),
        }
    }

    /// One generation: offspring sums of both sub-populations plus one
    /// immigration draw. Returns the new state and the immigration vector.
    pub fn step<R: RngCore>(
        &self,
        x_prev: [u64; 2],
        step_index: usize,
        rng: &mut R,
    ) -> Result<([u64; 2], [u64; 2]), SimulateError> {
        let s1 = self.offspring1.iid_sum(x_prev[0], rng);
        let s2 = self.offspring2.iid_sum(x_prev[1], rng);
        let eps = self.immigration.draw(rng);
        let mut next = [0u64; 2];
        for c in 0..2 {
            let total = s1[c] + s2[c] + eps[c] as u128;
            if total > MAX_COMPONENT as u128 {
                return Err(SimulateError::StateOverflow { step: step_index });
            }
            next[c] = total as u64;
        }
        Ok((next, eps))
    }

    pub fn spec(&self) -> &ModelSpec {
        self.spec
    }
}

/// One-step transition of the process from `x_prev`.
pub fn step(
    spec: &ModelSpec,
    x_prev: [u64; 2],
    rng: &mut RngStream,
) -> Result<[u64; 2], SimulateError> {
    let sampler = ModelSampler::new(spec);
    sampler.step(x_prev, 0, rng).map(|(x, _)| x)
}

/// A simulated path X_0..X_n with its derived coordinate sequences.
#[derive(Clone, Debug)]
pub struct Trajectory {
    /// X_0..X_n, exact integer states, X_0 = (0, 0).
    pub states: Vec<[u64; 2]>,
    /// U_k = X_{k,1} + X_{k,2} for k = 0..n.
    pub u_seq: Vec<u64>,
    /// V_k = X_{k,1} - X_{k,2} for k = 0..n.
    pub v_seq: Vec<i64>,
    /// M_k = X_k - m_xi X_{k-1} - m_eps for k = 1..n.
    pub m_seq: Vec<Vec2>,
    /// Immigration draws eps_1..eps_n; absent when reconstructed from states.
    pub eps_seq: Option<Vec<[u64; 2]>>,
    pub seed: u64,
    pub stream: u64,
    /// Content id of the generating model.
    pub spec_id: u64,
}

impl Trajectory {
    /// Sample size n (number of transitions).
    pub fn n(&self) -> usize {
        self.states.len() - 1
    }

    /// Rebuilds the derived sequences from raw states (e.g. read from CSV).
    pub fn from_states(
        spec: &ModelSpec,
        states: Vec<[u64; 2]>,
        seed: u64,
        stream: u64,
    ) -> Result<Self, SimulateError> {
        if states.first() != Some(&[0, 0]) {
            return Err(SimulateError::NonzeroStart);
        }
        Ok(Self::assemble(spec, states, None, seed, stream))
    }

    fn assemble(
        spec: &ModelSpec,
        states: Vec<[u64; 2]>,
        eps_seq: Option<Vec<[u64; 2]>>,
        seed: u64,
        stream: u64,
    ) -> Self {
        let m_xi = spec.mean_matrix();
        let m_eps = spec.m_eps();
        let u_seq = states.iter().map(|x| x[0] + x[1]).collect();
        let v_seq = states.iter().map(|x| x[0] as i64 - x[1] as i64).collect();
        let m_seq = states
            .windows(2)
            .map(|w| {
                let prev = [w[0][0] as f64, w[0][1] as f64];
                let pred = mat_vec(m_xi, prev);
                [
                    w[1][0] as f64 - pred[0] - m_eps[0],
                    w[1][1] as f64 - pred[1] - m_eps[1],
                ]
            })
            .collect();
        Self {
            states,
            u_seq,
            v_seq,
            m_seq,
            eps_seq,
            seed,
            stream,
            spec_id: spec.content_id(),
        }
    }
}

/// Simulates a zero-start trajectory of length n on stream (seed, stream).
pub fn simulate(
    spec: &ModelSpec,
    n: usize,
    seed: u64,
    stream: u64,
) -> Result<Trajectory, SimulateError> {
    assert!(n >= 1, "need at least one transition");
    let sampler = ModelSampler::new(spec);
    let mut rng = RngStream::new(seed, stream);
    let mut states = Vec::with_capacity(n + 1);
    let mut eps_seq = Vec::with_capacity(n);
    states.push([0u64, 0u64]);
    for k in 1..=n {
        let (next, eps) = sampler.step(states[k - 1], k, &mut rng)?;
        states.push(next);
        eps_seq.push(eps);
    }
    Ok(Trajectory::assemble(spec, states, Some(eps_seq), seed, stream))
}

/// States X_k of `replicas` independent trajectories (streams 0..replicas).
pub fn state_samples(
    spec: &ModelSpec,
    k: usize,
    replicas: usize,
    seed: u64,
) -> Result<Vec<[u64; 2]>, SimulateError> {
    (0..replicas as u64)
        .into_par_iter()
        .map(|stream| simulate(spec, k, seed, stream).map(|t| t.states[k]))
        .collect()
}

/// Monte Carlo average of X_k over independent trajectories.
pub fn empirical_mean_state(
    spec: &ModelSpec,
    k: usize,
    replicas: usize,
    seed: u64,
) -> Result<Vec2, SimulateError> {
    let samples = state_samples(spec, k, replicas, seed)?;
    let mut mean = [0.0; 2];
    for x in &samples {
        mean[0] += x[0] as f64;
        mean[1] += x[1] as f64;
    }
    mean[0] /= replicas as f64;
    mean[1] /= replicas as f64;
    Ok(mean)
}
