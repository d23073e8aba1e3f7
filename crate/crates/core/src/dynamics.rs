//! Model parameters and the Markovian trajectory sampler.
//!
//! One step crosses a vertex chosen by a [`MotionPolicy`] (uniform over the
//! eligible vertices by default), applies the R-matrix to the two ingoing
//! slots, draws the outcome on the two outgoing links from the Kraus
//! weights, and hits the state with `J(outcome)`.

use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hilbert::{eigenstate, kraus_factors, outcome_weights, superpose, FieldConfig, Outcome, StateVector, TwoSlotGate};
use crate::lattice::{flat_surface, LatticeGeometry, Surface, VertexId};
use crate::rng::SimRng;

/// Tolerance used to recognise the permutation R-matrices (theta = 0 or pi/2).
const THETA_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    pub theta: f64,
    pub phase_alpha: f64,
    pub phase_beta: f64,
    /// Jump-operator parameter, `X = 1 - epsilon`.
    pub x: f64,
    pub seed: u64,
}

impl ModelParams {
    /// Parameters with both phases zero.
    pub fn new(theta: f64, x: f64, seed: u64) -> Result<Self> {
        let p = Self {
            theta,
            phase_alpha: 0.0,
            phase_beta: 0.0,
            x,
            seed,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn from_epsilon(theta: f64, epsilon: f64, seed: u64) -> Result<Self> {
        Self::new(theta, 1.0 - epsilon, seed)
    }

    pub fn with_phases(mut self, phase_alpha: f64, phase_beta: f64) -> Result<Self> {
        self.phase_alpha = phase_alpha;
        self.phase_beta = phase_beta;
        self.validate()?;
        Ok(self)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.x) {
            return Err(Error::Parameter(format!("X must lie in [0, 1], got {}", self.x)));
        }
        for (name, v) in [
            ("theta", self.theta),
            ("phase_alpha", self.phase_alpha),
            ("phase_beta", self.phase_beta),
        ] {
            if !v.is_finite() {
                return Err(Error::Parameter(format!("{name} must be finite")));
            }
        }
        if !(0.0..=FRAC_PI_2 + THETA_TOL).contains(&self.theta) {
            return Err(Error::Parameter(format!("theta must lie in [0, pi/2], got {}", self.theta)));
        }
        Ok(())
    }

    pub fn epsilon(&self) -> f64 {
        1.0 - self.x
    }

    pub fn rmatrix(&self) -> TwoSlotGate {
        build_rmatrix(self.theta, self.phase_alpha, self.phase_beta)
    }
}

/// Particle-number-preserving, parity-invariant R-matrix in local-index order.
///
/// Angles within `1e-12` of 0 or pi/2 give the exact permutation matrices,
/// matching the tolerance of [`BranchTracker`].
pub fn build_rmatrix(theta: f64, phase_alpha: f64, phase_beta: f64) -> TwoSlotGate {
    let zero = Complex64::new(0.0, 0.0);
    let ea = Complex64::from_polar(1.0, phase_alpha);
    let (s, c) = if theta.abs() < THETA_TOL {
        (0.0, 1.0)
    } else if (theta - FRAC_PI_2).abs() < THETA_TOL {
        (1.0, 0.0)
    } else {
        theta.sin_cos()
    };
    let turn = Complex64::i() * ea * s;
    let pass = ea * c;
    TwoSlotGate([
        [Complex64::new(1.0, 0.0), zero, zero, zero],
        [zero, turn, pass, zero],
        [zero, pass, turn, zero],
        [zero, zero, zero, Complex64::from_polar(1.0, phase_beta)],
    ])
}

/// Diagonal entries of the single-link Kraus pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JumpPair {
    pub j0: [f64; 2],
    pub j1: [f64; 2],
}

impl JumpPair {
    /// Max deviation of `J0^2 + J1^2` from the identity.
    pub fn completeness_error(&self) -> f64 {
        (0..2)
            .map(|i| (self.j0[i] * self.j0[i] + self.j1[i] * self.j1[i] - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

pub fn build_jump_pair(x: f64) -> Result<JumpPair> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::Parameter(format!("X must lie in [0, 1], got {x}")));
    }
    let n = 1.0 / (1.0 + x * x).sqrt();
    Ok(JumpPair {
        j0: [n, x * n],
        j1: [x * n, n],
    })
}

/// Rule that picks the next elementary motion among the eligible vertices.
pub trait MotionPolicy: Send + Sync {
    fn name(&self) -> &str;

    /// Index into `eligible` (non-empty, ordered by column).
    fn choose(&self, eligible: &[VertexId], rng: &mut SimRng) -> usize;
}

/// Each eligible vertex with equal probability.
#[derive(Debug, Clone, Copy, Default)]
pub struct UniformMotion;

impl MotionPolicy for UniformMotion {
    fn name(&self) -> &str {
        "uniform"
    }

    fn choose(&self, eligible: &[VertexId], rng: &mut SimRng) -> usize {
        rng.index(eligible.len())
    }
}

/// Row by row, left to right. Draws no random numbers.
#[derive(Debug, Clone, Copy, Default)]
pub struct SweepMotion;

impl MotionPolicy for SweepMotion {
    fn name(&self) -> &str {
        "sweep"
    }

    fn choose(&self, eligible: &[VertexId], _rng: &mut SimRng) -> usize {
        eligible
            .iter()
            .enumerate()
            .min_by_key(|(_, v)| (v.row, v.col))
            .map(|(i, _)| i)
            .unwrap_or(0)
    }
}

/// Probability of each eligible vertex proportional to `1 + bias * col`.
#[derive(Debug, Clone, Copy)]
pub struct WeightedMotion {
    pub bias: f64,
}

impl MotionPolicy for WeightedMotion {
    fn name(&self) -> &str {
        "weighted"
    }

    fn choose(&self, eligible: &[VertexId], rng: &mut SimRng) -> usize {
        let w: Vec<f64> = eligible.iter().map(|v| (1.0 + self.bias * v.col as f64).max(0.0)).collect();
        let total: f64 = w.iter().sum();
        if total <= 0.0 {
            return rng.index(eligible.len());
        }
        let mut u = rng.unit() * total;
        for (i, wi) in w.iter().enumerate() {
            if u < *wi {
                return i;
            }
            u -= wi;
        }
        eligible.len() - 1
    }
}

/// Precomputed per-run operators.
#[derive(Debug, Clone)]
pub struct Model {
    pub params: ModelParams,
    pub gate: TwoSlotGate,
}

impl Model {
    pub fn new(params: ModelParams) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            params,
            gate: params.rmatrix(),
        })
    }
}

/// One realised vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct StepEvent {
    pub vertex: VertexId,
    /// `(left, right)` register slots of the vertex.
    pub slots: (usize, usize),
    pub outcome: Outcome,
    /// Conditional probability of the realised outcome.
    pub probability: f64,
    /// Stuff on the outgoing slots from the state before the hit.
    pub stuff_pre: [f64; 2],
    /// Stuff on the outgoing slots from the renormalised state after the hit.
    pub stuff_post: [f64; 2],
    /// Tracked branch weights after the hit, if tracking.
    pub branch_weights: Option<[f64; 2]>,
}

fn draw_outcome(weights: &[f64; 4], rng: &mut SimRng) -> usize {
    let total: f64 = weights.iter().sum();
    let u = rng.unit() * total;
    let mut acc = 0.0;
    let mut last = 0;
    for (o, &w) in weights.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        acc += w;
        last = o;
        if u < acc {
            return o;
        }
    }
    last
}

/// Gate, Kraus draw and hit on one vertex; returns `(probability, stuff_pre, stuff_post)`.
fn evolve_vertex(
    state: &mut StateVector,
    slots: (usize, usize),
    model: &Model,
    choose: impl FnOnce(&[f64; 4]) -> Result<usize>,
) -> Result<(Outcome, f64, [f64; 2], [f64; 2])> {
    let (a, b) = slots;
    let x = model.params.x;
    let p = state.apply_gate_with_marginals(a, b, &model.gate)?;
    let weights = outcome_weights(x, &p);
    let o = choose(&weights)?;
    let outcome = Outcome::from_index(o);
    let w = weights[o];
    let f = kraus_factors(x, outcome);
    let post: [f64; 4] = std::array::from_fn(|s| p[s] * f[s] * f[s] / w);
    if x != 1.0 {
        state.hit_with_weight(a, b, outcome, x, w)?;
    } else if w.is_nan() || w < crate::hilbert::MIN_OUTCOME_WEIGHT {
        return Err(Error::ZeroProbability(w));
    }
    Ok((outcome, w, [p[1] + p[3], p[2] + p[3]], [post[1] + post[3], post[2] + post[3]]))
}

/// In-place Markov step: vertex draw, unitary, outcome draw, hit.
///
/// The RNG is consumed in the fixed order (vertex draw, outcome draw).
pub fn step(
    state: &mut StateVector,
    surface: &mut Surface,
    model: &Model,
    policy: &dyn MotionPolicy,
    rng: &mut SimRng,
) -> Result<StepEvent> {
    let eligible = surface.eligible_vertices();
    if eligible.is_empty() {
        return Err(Error::SurfaceExhausted);
    }
    let v = eligible[policy.choose(&eligible, rng)];
    let slots = surface.advance(v)?;
    let (outcome, probability, stuff_pre, stuff_post) =
        evolve_vertex(state, slots, model, |w| Ok(draw_outcome(w, rng)))?;
    Ok(StepEvent {
        vertex: v,
        slots,
        outcome,
        probability,
        stuff_pre,
        stuff_post,
        branch_weights: None,
    })
}

/// Initial state of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitialState {
    Eigen(FieldConfig),
    Superposition(FieldConfig, FieldConfig),
}

impl InitialState {
    pub fn vacuum(n_slots: usize) -> Result<Self> {
        Ok(Self::Eigen(FieldConfig::zeros(n_slots)?))
    }

    pub fn n_slots(&self) -> usize {
        match self {
            Self::Eigen(c) | Self::Superposition(c, _) => c.n_slots(),
        }
    }

    pub fn state(&self) -> Result<StateVector> {
        match *self {
            Self::Eigen(c) => Ok(eigenstate(c)),
            Self::Superposition(c1, c2) => superpose(c1, c2),
        }
    }

    /// Field values on the initial surface when they are definite.
    pub fn definite_bits(&self) -> Option<FieldConfig> {
        match *self {
            Self::Eigen(c) => Some(c),
            Self::Superposition(..) => None,
        }
    }

    pub fn is_vacuum(&self) -> bool {
        matches!(self, Self::Eigen(c) if c.index() == 0)
    }

    /// Parses `vacuum`, `eigen:<bits>` or `super:<bits>,<bits>` for a register of `n_slots`.
    pub fn parse(text: &str, n_slots: usize) -> Result<Self> {
        let text = text.trim();
        if text == "vacuum" {
            return Self::vacuum(n_slots);
        }
        if let Some(bits) = text.strip_prefix("eigen:") {
            return Ok(Self::Eigen(FieldConfig::parse_exact(bits, n_slots)?));
        }
        if let Some(pair) = text.strip_prefix("super:") {
            let (a, b) = pair
                .split_once(',')
                .ok_or_else(|| Error::Parameter(format!("superposition needs two bitstrings, got '{pair}'")))?;
            let (a, b) = (FieldConfig::parse_exact(a, n_slots)?, FieldConfig::parse_exact(b, n_slots)?);
            if a == b {
                return Err(Error::IdenticalConfigs);
            }
            return Ok(Self::Superposition(a, b));
        }
        Err(Error::Parameter(format!(
            "initial state '{text}' is not one of vacuum, eigen:<bits>, super:<bits>,<bits>"
        )))
    }
}

impl fmt::Display for InitialState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Eigen(c) if c.index() == 0 => write!(f, "vacuum"),
            Self::Eigen(c) => write!(f, "eigen:{c}"),
            Self::Superposition(a, b) => write!(f, "super:{a},{b}"),
        }
    }
}

/// Follows two basis configurations through permutation R-matrices.
#[derive(Debug, Clone)]
pub struct BranchTracker {
    configs: [usize; 2],
    swap: bool,
}

impl BranchTracker {
    pub fn new(c1: FieldConfig, c2: FieldConfig, params: &ModelParams) -> Result<Self> {
        if c1.n_slots() != c2.n_slots() {
            return Err(Error::ConfigLength {
                expected: c1.n_slots(),
                got: c2.n_slots(),
            });
        }
        let swap = if params.theta.abs() < THETA_TOL {
            true
        } else if (params.theta - FRAC_PI_2).abs() < THETA_TOL {
            false
        } else {
            return Err(Error::BranchTheta(params.theta));
        };
        Ok(Self {
            configs: [c1.index(), c2.index()],
            swap,
        })
    }

    /// Moves both configurations through the gate on `(a, b)`.
    pub fn advance(&mut self, a: usize, b: usize) {
        if self.swap {
            for c in self.configs.iter_mut() {
                let (ba, bb) = (*c >> a & 1, *c >> b & 1);
                if ba != bb {
                    *c ^= (1 << a) | (1 << b);
                }
            }
        }
    }

    pub fn weights(&self, state: &StateVector) -> [f64; 2] {
        self.configs.map(|c| state.amplitude(c).norm_sqr())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StopRule {
    /// Run until every vertex of the finite lattice has been crossed.
    Complete,
    /// Stop once the smaller tracked weight has stayed at or below `threshold`
    /// for `window` further steps. Requires branch tracking.
    BranchDecay { threshold: f64, window: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Complete,
    Decayed,
    MaxSteps,
}

#[derive(Clone)]
pub struct TrajectoryOptions {
    pub policy: Arc<dyn MotionPolicy>,
    pub track: Option<(FieldConfig, FieldConfig)>,
    pub stop: StopRule,
    pub record_events: bool,
    /// RNG stream index; trajectories of an ensemble use distinct streams.
    pub stream: u64,
    pub max_steps: Option<usize>,
}

impl Default for TrajectoryOptions {
    fn default() -> Self {
        Self {
            policy: Arc::new(UniformMotion),
            track: None,
            stop: StopRule::Complete,
            record_events: true,
            stream: 0,
            max_steps: None,
        }
    }
}

impl fmt::Debug for TrajectoryOptions {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TrajectoryOptions")
            .field("policy", &self.policy.name())
            .field("track", &self.track)
            .field("stop", &self.stop)
            .field("record_events", &self.record_events)
            .field("stream", &self.stream)
            .field("max_steps", &self.max_steps)
            .finish()
    }
}

#[derive(Debug, Clone)]
pub struct TrajectoryRecord {
    pub params: ModelParams,
    pub geometry: LatticeGeometry,
    pub initial: InitialState,
    pub stream: u64,
    pub policy: String,
    /// Realised vertices in causal (crossing) order; empty when events were not recorded.
    pub events: Vec<StepEvent>,
    /// Tracked branch weights, starting with the initial state.
    pub branch_series: Vec<[f64; 2]>,
    pub steps: usize,
    pub final_state: StateVector,
    pub final_surface: Surface,
    pub stop_reason: StopReason,
}

impl TrajectoryRecord {
    /// Smaller tracked weight per step, starting with the initial state.
    pub fn min_branch_series(&self) -> Vec<f64> {
        self.branch_series.iter().map(|w| w[0].min(w[1])).collect()
    }

    /// Sum of log outcome probabilities, i.e. the log probability of the realised stem.
    pub fn log_probability(&self) -> f64 {
        self.events.iter().map(|e| e.probability.ln()).sum()
    }
}

pub fn run_trajectory(
    geometry: LatticeGeometry,
    params: ModelParams,
    initial: InitialState,
    options: &TrajectoryOptions,
) -> Result<TrajectoryRecord> {
    if initial.n_slots() != geometry.n_slots() {
        return Err(Error::ConfigLength {
            expected: geometry.n_slots(),
            got: initial.n_slots(),
        });
    }
    let model = Model::new(params)?;
    let mut state = initial.state()?;
    let mut surface = flat_surface(geometry);
    let mut rng = SimRng::new(params.seed, options.stream);

    let mut tracker = match options.track {
        Some((c1, c2)) => Some(BranchTracker::new(c1, c2, &params)?),
        None => None,
    };
    let (threshold, window) = match options.stop {
        StopRule::BranchDecay { threshold, window } => {
            if tracker.is_none() {
                return Err(Error::Parameter("decay stop rule requires branch tracking".into()));
            }
            (threshold, Some(window))
        }
        StopRule::Complete => (0.0, None),
    };

    let mut events = Vec::new();
    let mut branch_series = Vec::new();
    if let Some(t) = &tracker {
        branch_series.push(t.weights(&state));
    }
    let mut below_since: Option<usize> = None;
    let mut steps = 0usize;
    let stop_reason = loop {
        if surface.is_complete() {
            break StopReason::Complete;
        }
        if options.max_steps.is_some_and(|m| steps >= m) {
            break StopReason::MaxSteps;
        }
        let mut ev = step(&mut state, &mut surface, &model, options.policy.as_ref(), &mut rng)?;
        steps += 1;
        if let Some(t) = tracker.as_mut() {
            t.advance(ev.slots.0, ev.slots.1);
            let w = t.weights(&state);
            branch_series.push(w);
            ev.branch_weights = Some(w);
            if let Some(window) = window {
                if w[0].min(w[1]) <= threshold {
                    let since = *below_since.get_or_insert(steps);
                    if steps - since >= window {
                        if options.record_events {
                            events.push(ev);
                        }
                        break StopReason::Decayed;
                    }
                } else {
                    below_since = None;
                }
            }
        }
        if options.record_events {
            events.push(ev);
        }
    };

    Ok(TrajectoryRecord {
        params,
        geometry,
        initial,
        stream: options.stream,
        policy: options.policy.name().to_string(),
        events,
        branch_series,
        steps,
        final_state: state,
        final_surface: surface,
        stop_reason,
    })
}

/// Runs `count` trajectories on streams `first_stream..first_stream + count`.
pub fn run_ensemble(
    geometry: LatticeGeometry,
    params: ModelParams,
    initial: InitialState,
    options: &TrajectoryOptions,
    first_stream: u64,
    count: usize,
) -> Result<Vec<TrajectoryRecord>> {
    (0..count as u64)
        .into_par_iter()
        .map(|i| {
            let mut o = options.clone();
            o.stream = first_stream + i;
            run_trajectory(geometry, params, initial, &o)
        })
        .collect()
}

/// Replays a recorded trajectory with its realised outcomes, calling `visit`
/// with each event and the renormalised state after its hit.
pub fn replay(record: &TrajectoryRecord, mut visit: impl FnMut(&StepEvent, &StateVector)) -> Result<StateVector> {
    if record.events.len() != record.steps {
        return Err(Error::Data("record has no event log to replay".into()));
    }
    let model = Model::new(record.params)?;
    let mut state = record.initial.state()?;
    for ev in &record.events {
        evolve_vertex(&mut state, ev.slots, &model, |_| Ok(ev.outcome.index()))?;
        visit(ev, &state);
    }
    Ok(state)
}

/// Branch weights of `c1`, `c2` along a recorded run, starting with the initial state.
pub fn track_branches(record: &TrajectoryRecord, c1: FieldConfig, c2: FieldConfig) -> Result<Vec<[f64; 2]>> {
    let mut tracker = BranchTracker::new(c1, c2, &record.params)?;
    let mut series = vec![tracker.weights(&record.initial.state()?)];
    replay(record, |ev, state| {
        tracker.advance(ev.slots.0, ev.slots.1);
        series.push(tracker.weights(state));
    })?;
    Ok(series)
}

/// Stuff on each event's outgoing slots under purely unitary evolution along
/// the same sequence of motions.
pub fn unitary_stuff(record: &TrajectoryRecord) -> Result<Vec<[f64; 2]>> {
    let gate = record.params.rmatrix();
    let mut state = record.initial.state()?;
    record
        .events
        .iter()
        .map(|ev| {
            let p = state.apply_gate_with_marginals(ev.slots.0, ev.slots.1, &gate)?;
            Ok([p[1] + p[3], p[2] + p[3]])
        })
        .collect()
}
