//! Exact computations on small lattices.
//!
//! These routines validate the sampler: exact stem probabilities (in both the
//! Schrödinger and the Heisenberg operator forms), invariance under every
//! linear extension of a stem, and the deterministic Kraus channel whose
//! unravelling the trajectories are.
//!
//! The Heisenberg route and the channel build dense operators on the full
//! register directly from the two-slot matrices, without going through the
//! state-vector kernels of [`crate::hilbert`].

use std::collections::{BTreeSet, HashSet};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::dynamics::{
    build_rmatrix, run_trajectory, InitialState, ModelParams, TrajectoryOptions,
};
use crate::error::{Error, Result};
use crate::hilbert::{kraus_factors, Outcome, StateVector, TwoSlotGate};
use crate::lattice::{flat_surface, LatticeGeometry, Surface, VertexId};

/// Largest stem accepted by [`enumerate_stem`].
pub const MAX_STEM_VERTICES: usize = 8;

/// Largest register (in slots) for dense density matrices.
pub const MAX_DENSITY_SLOTS: usize = 8;

/// Register slots visited by a labelling; errors unless it is a natural labelling.
pub fn labelling_slots(geometry: LatticeGeometry, labelling: &[VertexId]) -> Result<Vec<(usize, usize)>> {
    let mut surface = flat_surface(geometry);
    labelling
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            surface.advance(v).map_err(|_| {
                Error::NotNatural(format!("vertex {v} at position {i} is not reachable in this order"))
            })
        })
        .collect()
}

pub fn is_natural_labelling(geometry: LatticeGeometry, labelling: &[VertexId]) -> bool {
    labelling_slots(geometry, labelling).is_ok()
}

/// `|| J(o_n) U(v_n) ... J(o_1) U(v_1) |psi_0> ||^2`.
pub fn stem_probability(
    initial: &StateVector,
    geometry: LatticeGeometry,
    labelling: &[VertexId],
    outcomes: &[Outcome],
    params: &ModelParams,
) -> Result<f64> {
    check_lengths(initial, geometry, labelling, outcomes)?;
    let slots = labelling_slots(geometry, labelling)?;
    let gate = params.rmatrix();
    let mut psi = initial.clone();
    for (&(a, b), &o) in slots.iter().zip(outcomes) {
        psi.apply_gate(a, b, &gate)?;
        psi.apply_kraus_unnormalized(a, b, o, params.x)?;
    }
    Ok(psi.norm_sqr())
}

fn check_lengths(
    initial: &StateVector,
    geometry: LatticeGeometry,
    labelling: &[VertexId],
    outcomes: &[Outcome],
) -> Result<()> {
    if initial.n_slots() != geometry.n_slots() {
        return Err(Error::ConfigLength {
            expected: geometry.n_slots(),
            got: initial.n_slots(),
        });
    }
    if labelling.len() != outcomes.len() {
        return Err(Error::Data(format!(
            "{} vertices but {} outcomes",
            labelling.len(),
            outcomes.len()
        )));
    }
    Ok(())
}

/// Dense matrix of a two-slot operator acting on the full register.
pub fn lift_two_slot(n_slots: usize, a: usize, b: usize, gate: &TwoSlotGate) -> DMatrix<Complex64> {
    let dim = 1usize << n_slots;
    let mask = (1usize << a) | (1usize << b);
    let local = |i: usize| (i >> a & 1) | (i >> b & 1) << 1;
    DMatrix::from_fn(dim, dim, |i, j| {
        if i & !mask == j & !mask {
            gate.0[local(i)][local(j)]
        } else {
            Complex64::new(0.0, 0.0)
        }
    })
}

/// Diagonal of `J(outcome)` on slots `(a, b)`, lifted to the full register.
fn lifted_kraus_diagonal(n_slots: usize, a: usize, b: usize, x: f64, outcome: Outcome) -> Vec<f64> {
    let f = kraus_factors(x, outcome);
    (0..1usize << n_slots)
        .map(|i| f[(i >> a & 1) | (i >> b & 1) << 1])
        .collect()
}

fn diag_matrix(d: &[f64]) -> DMatrix<Complex64> {
    DMatrix::from_diagonal(&DVector::from_iterator(d.len(), d.iter().map(|&v| Complex64::new(v, 0.0))))
}

fn to_dvector(state: &StateVector) -> DVector<Complex64> {
    DVector::from_column_slice(state.amplitudes())
}

/// Stem probability from the Heisenberg-picture operators
/// `J_v(o) = U_1^-1 ... U_k^-1 J(o) U_k ... U_1`.
pub fn stem_probability_heisenberg(
    initial: &StateVector,
    geometry: LatticeGeometry,
    labelling: &[VertexId],
    outcomes: &[Outcome],
    params: &ModelParams,
) -> Result<f64> {
    check_lengths(initial, geometry, labelling, outcomes)?;
    let n_slots = geometry.n_slots();
    if n_slots > MAX_DENSITY_SLOTS {
        return Err(Error::Geometry(format!("dense operators limited to {MAX_DENSITY_SLOTS} slots")));
    }
    let slots = labelling_slots(geometry, labelling)?;
    let gate = build_rmatrix(params.theta, params.phase_alpha, params.phase_beta);
    let dim = 1usize << n_slots;
    // cumulative U_k ... U_1
    let mut evolve = DMatrix::<Complex64>::identity(dim, dim);
    let mut psi = to_dvector(initial);
    for (&(a, b), &o) in slots.iter().zip(outcomes) {
        evolve = lift_two_slot(n_slots, a, b, &gate) * evolve;
        let j = diag_matrix(&lifted_kraus_diagonal(n_slots, a, b, params.x, o));
        let heisenberg = evolve.adjoint() * j * &evolve;
        psi = heisenberg * psi;
    }
    Ok(psi.norm_squared())
}

/// Exact outcome distribution on a stem.
///
/// The table is keyed in canonical vertex order (sorted by row, then column),
/// so tables computed from different labellings of the same stem compare
/// entry by entry. Entry index is `sum_k outcome_k.index() * 4^k`.
#[derive(Debug, Clone, PartialEq)]
pub struct StemDistribution {
    pub stem: Vec<VertexId>,
    pub labelling: Vec<VertexId>,
    pub table: Vec<f64>,
}

impl StemDistribution {
    /// Canonical table index of per-vertex outcomes given in `stem` order.
    pub fn index_of(outcomes: &[Outcome]) -> usize {
        outcomes.iter().rev().fold(0, |acc, o| acc * 4 + o.index())
    }

    /// Canonical index of an assignment given in an arbitrary vertex order.
    pub fn index_for(&self, vertices: &[VertexId], outcomes: &[Outcome]) -> Option<usize> {
        let mut canonical = vec![Outcome::from_index(0); self.stem.len()];
        let mut seen = 0;
        for (v, &o) in vertices.iter().zip(outcomes) {
            let k = self.stem.binary_search(v).ok()?;
            canonical[k] = o;
            seen += 1;
        }
        (seen == self.stem.len()).then(|| Self::index_of(&canonical))
    }

    pub fn total(&self) -> f64 {
        self.table.iter().sum()
    }

    pub fn max_abs_diff(&self, other: &StemDistribution) -> f64 {
        self.table
            .iter()
            .zip(&other.table)
            .map(|(p, q)| (p - q).abs())
            .fold(0.0, f64::max)
    }

    /// Total-variation distance to empirical counts over the same index space.
    pub fn tv_distance(&self, counts: &[u64]) -> f64 {
        let n: u64 = counts.iter().sum();
        0.5 * self
            .table
            .iter()
            .zip(counts)
            .map(|(p, &c)| (p - c as f64 / n as f64).abs())
            .sum::<f64>()
    }
}

/// Full outcome table on a stem, evaluated along the given natural labelling.
pub fn enumerate_stem(
    initial: &StateVector,
    geometry: LatticeGeometry,
    labelling: &[VertexId],
    params: &ModelParams,
) -> Result<StemDistribution> {
    if labelling.len() > MAX_STEM_VERTICES {
        return Err(Error::StemTooLarge(labelling.len()));
    }
    let slots = labelling_slots(geometry, labelling)?;
    if initial.n_slots() != geometry.n_slots() {
        return Err(Error::ConfigLength {
            expected: geometry.n_slots(),
            got: initial.n_slots(),
        });
    }
    let mut stem = labelling.to_vec();
    stem.sort();
    let position: Vec<usize> = labelling.iter().map(|v| stem.binary_search(v).unwrap()).collect();
    let gate = params.rmatrix();
    let n = labelling.len();
    let mut table = vec![0.0; 1usize << (2 * n)];

    // Depth-first over outcome prefixes; `index` accumulates canonical digits.
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        depth: usize,
        psi: StateVector,
        index: usize,
        slots: &[(usize, usize)],
        position: &[usize],
        gate: &TwoSlotGate,
        x: f64,
        table: &mut [f64],
    ) -> Result<()> {
        if depth == slots.len() {
            table[index] = psi.norm_sqr();
            return Ok(());
        }
        let (a, b) = slots[depth];
        let mut evolved = psi;
        evolved.apply_gate(a, b, gate)?;
        for o in Outcome::ALL {
            let mut hit = evolved.clone();
            hit.apply_kraus_unnormalized(a, b, o, x)?;
            let idx = index + o.index() * (1usize << (2 * position[depth]));
            recurse(depth + 1, hit, idx, slots, position, gate, x, table)?;
        }
        Ok(())
    }
    recurse(0, initial.clone(), 0, &slots, &position, &gate, params.x, &mut table)?;

    Ok(StemDistribution {
        stem,
        labelling: labelling.to_vec(),
        table,
    })
}

/// All linear extensions of a stem; errors unless the set contains its own past.
pub fn linear_extensions(geometry: LatticeGeometry, stem: &[VertexId]) -> Result<Vec<Vec<VertexId>>> {
    let set: HashSet<VertexId> = stem.iter().copied().collect();
    if set.len() != stem.len() {
        return Err(Error::Data("stem lists a vertex twice".into()));
    }
    for &v in stem {
        if !geometry.contains(v) {
            return Err(Error::Data(format!("vertex {v} is outside the lattice")));
        }
        if v.row > 1 {
            for p in geometry.predecessors(v) {
                if !set.contains(&p) {
                    return Err(Error::NotNatural(format!("stem misses {p}, in the past of {v}")));
                }
            }
        }
    }
    let mut out = Vec::new();
    let mut prefix = Vec::with_capacity(stem.len());
    let mut placed = HashSet::new();
    fn extend(
        geometry: LatticeGeometry,
        stem: &[VertexId],
        prefix: &mut Vec<VertexId>,
        placed: &mut HashSet<VertexId>,
        out: &mut Vec<Vec<VertexId>>,
    ) {
        if prefix.len() == stem.len() {
            out.push(prefix.clone());
            return;
        }
        for &v in stem {
            if placed.contains(&v) {
                continue;
            }
            let ready = v.row == 1 || geometry.predecessors(v).iter().all(|p| placed.contains(p));
            if ready {
                placed.insert(v);
                prefix.push(v);
                extend(geometry, stem, prefix, placed, out);
                prefix.pop();
                placed.remove(&v);
            }
        }
    }
    extend(geometry, stem, &mut prefix, &mut placed, &mut out);
    Ok(out)
}

/// Every non-empty stem of the lattice with at most `max_vertices` vertices, sorted.
pub fn enumerate_stems(geometry: LatticeGeometry, max_vertices: usize) -> Vec<Vec<VertexId>> {
    let mut seen: BTreeSet<Vec<VertexId>> = BTreeSet::new();
    let mut frontier: Vec<(Surface, Vec<VertexId>)> = vec![(flat_surface(geometry), Vec::new())];
    while let Some((surface, crossed)) = frontier.pop() {
        if crossed.len() == max_vertices {
            continue;
        }
        for v in surface.eligible_vertices() {
            let mut next = crossed.clone();
            next.push(v);
            next.sort();
            if seen.insert(next.clone()) {
                let mut s = surface.clone();
                s.advance(v).expect("eligible vertex");
                frontier.push((s, next));
            }
        }
    }
    seen.into_iter().collect()
}

/// Dense density matrix on the link register.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    n_slots: usize,
    matrix: DMatrix<Complex64>,
}

impl DensityMatrix {
    pub fn from_state(state: &StateVector) -> Result<Self> {
        if state.n_slots() > MAX_DENSITY_SLOTS {
            return Err(Error::TooManySlots(state.n_slots()));
        }
        let v = to_dvector(state);
        Ok(Self {
            n_slots: state.n_slots(),
            matrix: &v * v.adjoint(),
        })
    }

    pub fn from_matrix(n_slots: usize, matrix: DMatrix<Complex64>) -> Result<Self> {
        let dim = 1usize << n_slots;
        if n_slots > MAX_DENSITY_SLOTS || matrix.nrows() != dim || matrix.ncols() != dim {
            return Err(Error::Data(format!("expected a {dim}x{dim} matrix")));
        }
        Ok(Self { n_slots, matrix })
    }

    /// Mean of `|psi><psi|` over the given states.
    pub fn ensemble_average<'a>(states: impl IntoIterator<Item = &'a StateVector>) -> Result<Self> {
        let mut acc: Option<DMatrix<Complex64>> = None;
        let mut count = 0usize;
        let mut n_slots = 0;
        for s in states {
            let rho = Self::from_state(s)?;
            n_slots = rho.n_slots;
            match acc.as_mut() {
                Some(m) => *m += rho.matrix,
                None => acc = Some(rho.matrix),
            }
            count += 1;
        }
        let m = acc.ok_or_else(|| Error::Data("empty ensemble".into()))?;
        Self::from_matrix(n_slots, m / Complex64::new(count as f64, 0.0))
    }

    pub fn n_slots(&self) -> usize {
        self.n_slots
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.matrix
    }

    pub fn trace(&self) -> Complex64 {
        self.matrix.trace()
    }

    pub fn hermiticity_error(&self) -> f64 {
        (&self.matrix - self.matrix.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let herm = (&self.matrix + self.matrix.adjoint()) * Complex64::new(0.5, 0.0);
        herm.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Checks Hermiticity and unit trace within 1e-10 and eigenvalues above -1e-8.
    pub fn validate(&self) -> Result<()> {
        let h = self.hermiticity_error();
        if h > 1e-10 {
            return Err(Error::Data(format!("density matrix not Hermitian ({h:e})")));
        }
        let t = self.trace();
        if (t - Complex64::new(1.0, 0.0)).norm() > 1e-10 {
            return Err(Error::Data(format!("density matrix trace {t}")));
        }
        let e = self.min_eigenvalue();
        if e < -1e-8 {
            return Err(Error::Data(format!("density matrix eigenvalue {e:e} < 0")));
        }
        Ok(())
    }

    pub fn max_abs_diff(&self, other: &DensityMatrix) -> f64 {
        (&self.matrix - &other.matrix).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }
}

/// One vertex of the non-selective channel: `rho' = sum_o J(o) U rho U^dag J(o)^dag`.
pub fn channel_evolve(rho: &DensityMatrix, surface: &Surface, v: VertexId, params: &ModelParams) -> Result<DensityMatrix> {
    if surface.geometry().n_slots() != rho.n_slots {
        return Err(Error::ConfigLength {
            expected: surface.geometry().n_slots(),
            got: rho.n_slots,
        });
    }
    let (a, b) = surface.ingoing_slots(v)?;
    let u = lift_two_slot(rho.n_slots, a, b, &params.rmatrix());
    let evolved = &u * &rho.matrix * u.adjoint();
    let diags: Vec<Vec<f64>> = Outcome::ALL
        .iter()
        .map(|&o| lifted_kraus_diagonal(rho.n_slots, a, b, params.x, o))
        .collect();
    let dim = evolved.nrows();
    let out = DMatrix::from_fn(dim, dim, |i, j| {
        let w: f64 = diags.iter().map(|d| d[i] * d[j]).sum();
        evolved[(i, j)] * w
    });
    Ok(DensityMatrix {
        n_slots: rho.n_slots,
        matrix: out,
    })
}

/// Channel applied along a natural labelling, starting from `|psi><psi|`.
pub fn channel_compose(
    initial: &StateVector,
    geometry: LatticeGeometry,
    labelling: &[VertexId],
    params: &ModelParams,
) -> Result<DensityMatrix> {
    let mut rho = DensityMatrix::from_state(initial)?;
    let mut surface = flat_surface(geometry);
    for &v in labelling {
        rho = channel_evolve(&rho, &surface, v, params)?;
        surface.advance(v)?;
    }
    Ok(rho)
}

/// Result of one oracle comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub measured: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn below(name: &str, measured: f64, tolerance: f64, detail: String) -> Self {
        Self {
            name: name.to_string(),
            measured,
            tolerance,
            passed: measured.is_finite() && measured < tolerance,
            detail,
        }
    }

    fn failed(name: &str, tolerance: f64, detail: String) -> Self {
        Self {
            name: name.to_string(),
            measured: f64::NAN,
            tolerance,
            passed: false,
            detail,
        }
    }
}

impl std::fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "[{}] {}: measured {:.3e} (tolerance {:.1e}) {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.measured,
            self.tolerance,
            self.detail
        )
    }
}

/// Stem tables agree across all linear extensions of every stem up to `max_vertices`.
///
/// `extra` labellings are evaluated as additional orders of their own vertex
/// sets; a labelling that is not natural makes the check fail.
pub fn covariance_check(
    geometry: LatticeGeometry,
    initial: &StateVector,
    params: &ModelParams,
    max_vertices: usize,
    extra: &[Vec<VertexId>],
) -> Vec<CheckOutcome> {
    let mut worst_cov: f64 = 0.0;
    let mut worst_sum: f64 = 0.0;
    let mut n_orders = 0usize;
    let stems = enumerate_stems(geometry, max_vertices);
    let mut failure = None;
    for stem in &stems {
        let orders = match linear_extensions(geometry, stem) {
            Ok(o) => o,
            Err(e) => {
                failure = Some(e.to_string());
                break;
            }
        };
        let mut reference: Option<StemDistribution> = None;
        for order in orders.iter().chain(extra.iter().filter(|l| {
            let mut s = (*l).clone();
            s.sort();
            &s == stem
        })) {
            n_orders += 1;
            match enumerate_stem(initial, geometry, order, params) {
                Ok(d) => {
                    worst_sum = worst_sum.max((d.total() - 1.0).abs());
                    match &reference {
                        Some(r) => worst_cov = worst_cov.max(r.max_abs_diff(&d)),
                        None => reference = Some(d),
                    }
                }
                Err(e) => {
                    let shown: Vec<String> = order.iter().map(|v| v.to_string()).collect();
                    failure = Some(format!("labelling [{}]: {e}", shown.join(" ")));
                }
            }
        }
    }
    if let Some(msg) = failure {
        return vec![
            CheckOutcome::failed("covariance", 1e-12, msg.clone()),
            CheckOutcome::failed("normalisation", 1e-10, msg),
        ];
    }
    let detail = format!("{} stems, {} labellings", stems.len(), n_orders);
    vec![
        CheckOutcome::below("covariance", worst_cov, 1e-12, detail.clone()),
        CheckOutcome::below("normalisation", worst_sum, 1e-10, detail),
    ]
}

/// Largest gap between the Heisenberg and Schrödinger forms on random instances.
pub fn picture_agreement(geometry: LatticeGeometry, instances: usize, seed: u64) -> Result<f64> {
    use crate::rng::SimRng;
    let mut rng = SimRng::new(seed, 0xfeed);
    let stems = enumerate_stems(geometry, MAX_STEM_VERTICES.min(geometry.n_vertices()));
    let n_slots = geometry.n_slots();
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let amps: Vec<Complex64> = (0..1usize << n_slots)
            .map(|_| Complex64::new(rng.unit() - 0.5, rng.unit() - 0.5))
            .collect();
        let mut psi = StateVector::from_amplitudes(amps)?;
        psi.normalize()?;
        let params = ModelParams::new(
            rng.unit() * std::f64::consts::FRAC_PI_2,
            rng.unit(),
            0,
        )?
        .with_phases(rng.unit() * 6.0, rng.unit() * 6.0)?;
        let stem = &stems[rng.index(stems.len())];
        let orders = linear_extensions(geometry, stem)?;
        let order = &orders[rng.index(orders.len())];
        let outcomes: Vec<Outcome> = order.iter().map(|_| Outcome::from_index(rng.index(4))).collect();
        let s = stem_probability(&psi, geometry, order, &outcomes, &params)?;
        let h = stem_probability_heisenberg(&psi, geometry, order, &outcomes, &params)?;
        worst = worst.max((s - h).abs());
    }
    Ok(worst)
}

/// Canonical outcome index of a completed run over the whole lattice.
fn run_index(stem: &[VertexId], events: &[crate::dynamics::StepEvent]) -> usize {
    let mut outcomes = vec![Outcome::from_index(0); stem.len()];
    for ev in events {
        let k = stem.binary_search(&ev.vertex).expect("vertex in stem");
        outcomes[k] = ev.outcome;
    }
    StemDistribution::index_of(&outcomes)
}

/// Empirical outcome counts of `n_runs` sampled trajectories over the whole lattice.
pub fn sample_counts(
    geometry: LatticeGeometry,
    params: ModelParams,
    initial: InitialState,
    n_runs: usize,
) -> Result<(Vec<VertexId>, Vec<u64>)> {
    let n_vertices = geometry.n_vertices();
    if n_vertices > MAX_STEM_VERTICES {
        return Err(Error::StemTooLarge(n_vertices));
    }
    let mut stem: Vec<VertexId> = (1..=geometry.n_rows())
        .flat_map(|r| (0..geometry.n_sites()).map(move |c| VertexId::new(r, c)))
        .collect();
    stem.sort();
    let size = 1usize << (2 * n_vertices);
    let counts = (0..n_runs as u64)
        .into_par_iter()
        .try_fold(
            || vec![0u64; size],
            |mut acc, stream| {
                let options = TrajectoryOptions {
                    stream,
                    ..TrajectoryOptions::default()
                };
                let r = run_trajectory(geometry, params, initial, &options)?;
                acc[run_index(&stem, &r.events)] += 1;
                Ok::<_, Error>(acc)
            },
        )
        .try_reduce(
            || vec![0u64; size],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                Ok(a)
            },
        )?;
    Ok((stem, counts))
}

/// Total-variation distance between sampled and exact outcome distributions on the whole lattice.
pub fn sampler_tv_check(
    geometry: LatticeGeometry,
    params: ModelParams,
    initial: InitialState,
    n_runs: usize,
    tolerance: f64,
) -> Result<CheckOutcome> {
    let (stem, counts) = sample_counts(geometry, params, initial, n_runs)?;
    let exact = enumerate_stem(&initial.state()?, geometry, &row_major(&stem), &params)?;
    let tv = exact.tv_distance(&counts);
    Ok(CheckOutcome::below(
        "sampler-vs-exact TV",
        tv,
        tolerance,
        format!("{n_runs} runs, X={}, theta={:.4}", params.x, params.theta),
    ))
}

/// Ensemble average of final `|psi><psi|` against the composed channel.
pub fn channel_ensemble_check(
    geometry: LatticeGeometry,
    params: ModelParams,
    initial: InitialState,
    n_runs: usize,
    tolerance: f64,
) -> Result<CheckOutcome> {
    let psi0 = initial.state()?;
    let mut all: Vec<VertexId> = (1..=geometry.n_rows())
        .flat_map(|r| (0..geometry.n_sites()).map(move |c| VertexId::new(r, c)))
        .collect();
    all.sort();
    let channel = channel_compose(&psi0, geometry, &row_major(&all), &params)?;
    channel.validate()?;
    let finals: Vec<StateVector> = (0..n_runs as u64)
        .into_par_iter()
        .map(|stream| {
            let options = TrajectoryOptions {
                stream,
                record_events: false,
                ..TrajectoryOptions::default()
            };
            run_trajectory(geometry, params, initial, &options).map(|r| r.final_state)
        })
        .collect::<Result<_>>()?;
    let ensemble = DensityMatrix::ensemble_average(&finals)?;
    Ok(CheckOutcome::below(
        "channel-vs-ensemble",
        ensemble.max_abs_diff(&channel),
        tolerance,
        format!("{n_runs} runs"),
    ))
}

/// Row-by-row, left-to-right order of a stem (a natural labelling).
pub fn row_major(stem: &[VertexId]) -> Vec<VertexId> {
    let mut v = stem.to_vec();
    v.sort();
    v
}
