//! Stationary ergodic generators of the quenched backbone sequence
//! `w_1, w_2, ...`, reproducible from a seed.
//!
//! A [`DisorderModel`] is immutable and cheap to clone; any number of
//! windows may be generated concurrently from the same model. Random access
//! is O(1) per element for iid models (counter-mode PRF keyed by seed and
//! index) and checkpointed replay for Markov models, so overlapping windows
//! used by ergodic averaging never replay the whole prefix.
//!
//! The disorder realization is sampled once per experiment and shared
//! read-only by all thermal replicas; expectations over thermal noise are
//! always taken at fixed disorder.

use std::sync::{Arc, Mutex};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{RngStream, StreamDomain};
use crate::rotgroup::{LawSpec, Rotation, RotationLaw};

/// Markov replay checkpoint stride.
const CHECKPOINT_STRIDE: u64 = 1 << 16;

#[derive(Debug)]
enum Kind {
    Constant {
        rotation: Rotation,
    },
    Iid {
        law: RotationLaw,
    },
    Periodic {
        rotations: Vec<Rotation>,
        random_phase: bool,
    },
    Markov {
        states: Vec<Rotation>,
        transition: DMatrix<f64>,
        row_cumulative: Vec<Vec<f64>>,
        stationary: DVector<f64>,
        stationary_cumulative: Vec<f64>,
        stationary_start: bool,
    },
}

/// A quenched disorder generator: the law of `w_1, w_2, ...` plus a seed
/// fixing the realization.
#[derive(Debug, Clone)]
pub struct DisorderModel {
    dim: usize,
    seed: u64,
    /// Index shift: `window(n, k)` reads positions `offset + n ..`.
    offset: u64,
    kind: Arc<Kind>,
    /// Markov state at absolute positions `1 + k * CHECKPOINT_STRIDE`,
    /// grown lazily; shared across clones and shifts.
    checkpoints: Arc<Mutex<Vec<usize>>>,
}

/// JSON mirror of a disorder specification, e.g.
/// `{"kind":"markov","states":[...],"transition":[[...]],"seed":12345}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DisorderSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(flatten)]
    pub kind: DisorderKindSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DisorderKindSpec {
    Constant { dim: usize, rotation: Vec<f64> },
    Iid { law: LawSpec },
    Periodic { dim: usize, rotations: Vec<Vec<f64>>, random_phase: bool },
    Markov {
        dim: usize,
        states: Vec<Vec<f64>>,
        transition: Vec<Vec<f64>>,
        #[serde(default = "default_true")]
        stationary_start: bool,
    },
}

fn default_true() -> bool {
    true
}

impl DisorderModel {
    pub fn constant(rotation: Rotation, seed: u64) -> DisorderModel {
        let dim = rotation.dim();
        Self::new(dim, seed, Kind::Constant { rotation })
    }

    pub fn iid(law: RotationLaw, seed: u64) -> DisorderModel {
        let dim = law.dim();
        Self::new(dim, seed, Kind::Iid { law })
    }

    pub fn periodic(rotations: Vec<Rotation>, random_phase: bool, seed: u64) -> Result<DisorderModel> {
        if rotations.is_empty() {
            return Err(Error::InvalidDisorder("periodic model needs at least one rotation".into()));
        }
        let dim = rotations[0].dim();
        if rotations.iter().any(|r| r.dim() != dim) {
            return Err(Error::InvalidDisorder("periodic rotations must share a dimension".into()));
        }
        Ok(Self::new(dim, seed, Kind::Periodic { rotations, random_phase }))
    }

    /// Markov backbone. The transition matrix must be row-stochastic and
    /// irreducible; with `stationary_start` the chain starts from its
    /// stationary distribution, which makes the sequence stationary.
    pub fn markov(
        states: Vec<Rotation>,
        transition: DMatrix<f64>,
        stationary_start: bool,
        seed: u64,
    ) -> Result<DisorderModel> {
        let m = states.len();
        if m == 0 {
            return Err(Error::InvalidDisorder("markov model needs at least one state".into()));
        }
        let dim = states[0].dim();
        if states.iter().any(|r| r.dim() != dim) {
            return Err(Error::InvalidDisorder("markov states must share a dimension".into()));
        }
        if transition.nrows() != m || transition.ncols() != m {
            return Err(Error::InvalidDisorder(format!(
                "transition must be {m} x {m}, got {} x {}",
                transition.nrows(),
                transition.ncols()
            )));
        }
        for i in 0..m {
            let row_sum: f64 = transition.row(i).iter().sum();
            if (row_sum - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidDisorder(format!(
                    "transition row {i} sums to {row_sum}, expected 1"
                )));
            }
            if transition.row(i).iter().any(|p| *p < 0.0) {
                return Err(Error::InvalidDisorder(format!("transition row {i} has negative entries")));
            }
        }
        if !strongly_connected(&transition) {
            return Err(Error::NotErgodic("transition graph is not strongly connected".into()));
        }
        let stationary = stationary_distribution(&transition)?;
        let row_cumulative = (0..m)
            .map(|i| {
                let mut acc = 0.0;
                transition
                    .row(i)
                    .iter()
                    .map(|p| {
                        acc += p;
                        acc
                    })
                    .collect()
            })
            .collect();
        let mut acc = 0.0;
        let stationary_cumulative = stationary
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        Ok(Self::new(
            dim,
            seed,
            Kind::Markov {
                states,
                transition,
                row_cumulative,
                stationary,
                stationary_cumulative,
                stationary_start,
            },
        ))
    }

    pub fn from_spec(spec: &DisorderSpec, default_seed: u64) -> Result<DisorderModel> {
        let seed = spec.seed.unwrap_or(default_seed);
        match &spec.kind {
            DisorderKindSpec::Constant { dim, rotation } => {
                Ok(DisorderModel::constant(rotation_from_flat(*dim, rotation)?, seed))
            }
            DisorderKindSpec::Iid { law } => Ok(DisorderModel::iid(RotationLaw::from_spec(law)?, seed)),
            DisorderKindSpec::Periodic { dim, rotations, random_phase } => {
                let rots = rotations
                    .iter()
                    .map(|r| rotation_from_flat(*dim, r))
                    .collect::<Result<Vec<_>>>()?;
                DisorderModel::periodic(rots, *random_phase, seed)
            }
            DisorderKindSpec::Markov { dim, states, transition, stationary_start } => {
                let states = states
                    .iter()
                    .map(|r| rotation_from_flat(*dim, r))
                    .collect::<Result<Vec<_>>>()?;
                let m = states.len();
                if transition.len() != m || transition.iter().any(|row| row.len() != m) {
                    return Err(Error::InvalidDisorder("transition shape mismatch".into()));
                }
                let flat: Vec<f64> = transition.iter().flatten().cloned().collect();
                DisorderModel::markov(
                    states,
                    DMatrix::from_row_slice(m, m, &flat),
                    *stationary_start,
                    seed,
                )
            }
        }
    }

    fn new(dim: usize, seed: u64, kind: Kind) -> DisorderModel {
        DisorderModel {
            dim,
            seed,
            offset: 0,
            kind: Arc::new(kind),
            checkpoints: Arc::new(Mutex::new(Vec::new())),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Same model, different realization. Checkpoint caches are not shared.
    pub fn reseeded(&self, seed: u64) -> DisorderModel {
        DisorderModel {
            dim: self.dim,
            seed,
            offset: self.offset,
            kind: self.kind.clone(),
            checkpoints: Arc::new(Mutex::new(Vec::new())),
        }
    }

    /// A view shifted forward: `shift(by).window(n, k) == window(n + by, k)`.
    pub fn shift(&self, by: u64) -> DisorderModel {
        DisorderModel {
            dim: self.dim,
            seed: self.seed,
            offset: self.offset + by,
            kind: self.kind.clone(),
            checkpoints: self.checkpoints.clone(),
        }
    }

    /// `[w_start, ..., w_{start+len-1}]`, 1-indexed, deterministic in
    /// `(seed, start, len)`. Overlapping windows agree on the overlap.
    pub fn window(&self, start: u64, len: usize) -> Vec<Rotation> {
        assert!(start >= 1, "windows are 1-indexed");
        let d = self.dim;
        let flat = self.window_flat(start, len);
        (0..len)
            .map(|i| Rotation::from_flat_row_major(d, &flat[i * d * d..(i + 1) * d * d]))
            .collect()
    }

    /// Row-major d*d blocks, concatenated. Hot-path variant of [`window`].
    pub(crate) fn window_flat(&self, start: u64, len: usize) -> Vec<f64> {
        assert!(start >= 1, "windows are 1-indexed");
        let d = self.dim;
        let n = d * d;
        let mut out = vec![0.0; len * n];
        let abs_start = self.offset + start;
        match &*self.kind {
            Kind::Constant { rotation } => {
                let flat = rotation.flat_row_major();
                for i in 0..len {
                    out[i * n..(i + 1) * n].copy_from_slice(&flat);
                }
            }
            Kind::Iid { law } => {
                let mut scratch = vec![0.0; n];
                for i in 0..len {
                    let mut rng = RngStream::new(self.seed, StreamDomain::Disorder, abs_start + i as u64);
                    law.sample_flat(&mut rng, &mut out[i * n..(i + 1) * n], &mut scratch);
                }
            }
            Kind::Periodic { rotations, random_phase } => {
                let p = rotations.len() as u64;
                let phase = if *random_phase {
                    let mut rng = RngStream::new(self.seed, StreamDomain::Disorder, 0);
                    (rng.gen_f64() * p as f64) as u64 % p
                } else {
                    0
                };
                let flats: Vec<Vec<f64>> = rotations.iter().map(|r| r.flat_row_major()).collect();
                for i in 0..len {
                    let idx = ((phase + abs_start - 1 + i as u64) % p) as usize;
                    out[i * n..(i + 1) * n].copy_from_slice(&flats[idx]);
                }
            }
            Kind::Markov { states, .. } => {
                let flats: Vec<Vec<f64>> = states.iter().map(|r| r.flat_row_major()).collect();
                let mut state = self.markov_state_at(abs_start);
                for i in 0..len {
                    out[i * n..(i + 1) * n].copy_from_slice(&flats[state]);
                    if i + 1 < len {
                        state = self.markov_step(state, abs_start + i as u64);
                    }
                }
            }
        }
        out
    }

    /// Uniform used to move from position `pos` to `pos + 1`.
    fn markov_uniform(&self, pos: u64) -> f64 {
        RngStream::new(self.seed, StreamDomain::Disorder, pos).gen_f64()
    }

    fn markov_step(&self, state: usize, pos: u64) -> usize {
        let Kind::Markov { row_cumulative, .. } = &*self.kind else { unreachable!() };
        pick(&row_cumulative[state], self.markov_uniform(pos))
    }

    /// State at absolute position `pos >= 1`, replaying from the nearest
    /// cached checkpoint.
    fn markov_state_at(&self, pos: u64) -> usize {
        let Kind::Markov { stationary_cumulative, stationary_start, .. } = &*self.kind else {
            unreachable!()
        };
        let initial = if *stationary_start {
            pick(stationary_cumulative, self.markov_uniform(0))
        } else {
            0
        };

        let target_cp = ((pos - 1) / CHECKPOINT_STRIDE) as usize;
        let mut cps = self.checkpoints.lock().unwrap();
        if cps.is_empty() {
            cps.push(initial);
        }
        while cps.len() <= target_cp {
            let k = cps.len() - 1;
            let mut s = cps[k];
            let from = 1 + k as u64 * CHECKPOINT_STRIDE;
            for p in from..from + CHECKPOINT_STRIDE {
                s = self.markov_step(s, p);
            }
            cps.push(s);
        }
        let mut s = cps[target_cp];
        drop(cps);
        let from = 1 + target_cp as u64 * CHECKPOINT_STRIDE;
        for p in from..pos {
            s = self.markov_step(s, p);
        }
        s
    }

    /// Stationary distribution of a Markov model.
    pub fn markov_stationary(&self) -> Option<DVector<f64>> {
        match &*self.kind {
            Kind::Markov { stationary, .. } => Some(stationary.clone()),
            _ => None,
        }
    }

    /// Transition matrix of a Markov model.
    pub fn markov_transition(&self) -> Option<DMatrix<f64>> {
        match &*self.kind {
            Kind::Markov { transition, .. } => Some(transition.clone()),
            _ => None,
        }
    }

    pub fn is_constant_identity(&self) -> bool {
        match &*self.kind {
            Kind::Constant { rotation } => {
                (rotation.matrix() - DMatrix::identity(self.dim, self.dim)).norm() < 1e-14
            }
            _ => false,
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(&*self.kind, Kind::Constant { .. })
    }

    /// Exact mean `E w_1` when the model is iid with exact law moments,
    /// constant, or periodic with a uniformly random phase.
    pub fn mean_rotation_exact(&self) -> Option<DMatrix<f64>> {
        match &*self.kind {
            Kind::Constant { rotation } => Some(rotation.matrix().clone()),
            Kind::Iid { law } => law.r_bar().ok().map(|m| m.matrix().clone()),
            Kind::Periodic { rotations, random_phase: true } => {
                let mut acc = DMatrix::zeros(self.dim, self.dim);
                for r in rotations {
                    acc += r.matrix();
                }
                Some(acc / rotations.len() as f64)
            }
            _ => None,
        }
    }

    pub fn is_iid(&self) -> bool {
        matches!(&*self.kind, Kind::Iid { .. })
    }
}

fn pick(cumulative: &[f64], u: f64) -> usize {
    cumulative.iter().position(|c| u < *c).unwrap_or(cumulative.len() - 1)
}

fn rotation_from_flat(dim: usize, flat: &[f64]) -> Result<Rotation> {
    if flat.len() != dim * dim {
        return Err(Error::InvalidDisorder(format!(
            "rotation needs {} entries, got {}",
            dim * dim,
            flat.len()
        )));
    }
    Rotation::from_matrix(DMatrix::from_row_slice(dim, dim, flat))
        .map_err(|e| Error::InvalidDisorder(e.to_string()))
}

fn strongly_connected(p: &DMatrix<f64>) -> bool {
    let m = p.nrows();
    let reach = |forward: bool| {
        let mut seen = vec![false; m];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for j in 0..m {
                let edge = if forward { p[(i, j)] } else { p[(j, i)] };
                if edge > 0.0 && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    };
    reach(true) && reach(false)
}

/// Solve pi P = pi, sum pi = 1.
fn stationary_distribution(p: &DMatrix<f64>) -> Result<DVector<f64>> {
    let m = p.nrows();
    let mut a = p.transpose() - DMatrix::identity(m, m);
    for j in 0..m {
        a[(m - 1, j)] = 1.0;
    }
    let mut b = DVector::zeros(m);
    b[m - 1] = 1.0;
    let pi = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::NotErgodic("stationary distribution solve failed".into()))?;
    if pi.iter().any(|x| *x < -1e-10) {
        return Err(Error::NotErgodic("stationary distribution has negative mass".into()));
    }
    Ok(pi.map(|x| x.max(0.0)))
}

/// A cursor over a disorder model, 1-indexed. Reading the same range twice
/// from the same seed yields identical rotations.
#[derive(Debug, Clone)]
pub struct DisorderStream {
    model: DisorderModel,
    cursor: u64,
}

impl DisorderStream {
    pub fn new(model: DisorderModel) -> Self {
        DisorderStream { model, cursor: 1 }
    }

    pub fn model(&self) -> &DisorderModel {
        &self.model
    }

    pub fn cursor(&self) -> u64 {
        self.cursor
    }

    /// Consume the next `len` backbone rotations.
    pub fn take_window(&mut self, len: usize) -> Vec<Rotation> {
        let w = self.model.window(self.cursor, len);
        self.cursor += len as u64;
        w
    }

    pub(crate) fn take_window_flat(&mut self, len: usize) -> Vec<f64> {
        let w = self.model.window_flat(self.cursor, len);
        self.cursor += len as u64;
        w
    }
}
