//! Experiments and statistics on top of the sampler: decay times of tracked
//! superpositions and their scaling fits, coarse graining of field rasters,
//! vacuum block statistics, and the collapse-parameter calculator.

use rayon::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::dynamics::{run_trajectory, InitialState, ModelParams, StopReason, StopRule, TrajectoryOptions, TrajectoryRecord};
use crate::error::{Error, Result};
use crate::hilbert::FieldConfig;
use crate::lattice::LatticeGeometry;
use crate::raster::FieldRaster;

/// Default branch-weight threshold for decay detection.
pub const DEFAULT_DECAY_THRESHOLD: f64 = 0.005;

/// Default confirmation window in steps: `5 N^2`.
pub fn default_window(n_sites: usize) -> usize {
    5 * n_sites * n_sites
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayResult {
    /// Lattice time of the first confirmed crossing, in rows (`step / N`).
    pub t_decay: f64,
    /// Index into the series of the crossing (0 is the initial state).
    pub step: usize,
    pub threshold: f64,
    /// The weight stayed at or below threshold for the full window.
    pub confirmed: bool,
}

/// First index where `series` drops to `threshold` and stays there for `window`
/// further entries. If the series ends inside the window the last such crossing
/// is returned unconfirmed; `None` if it never reaches the threshold.
pub fn detect_decay(series: &[f64], threshold: f64, window: usize, steps_per_row: usize) -> Option<DecayResult> {
    let mut since: Option<usize> = None;
    for (i, &w) in series.iter().enumerate() {
        if w <= threshold {
            let s = *since.get_or_insert(i);
            if i - s >= window {
                return Some(result(s, threshold, true, steps_per_row));
            }
        } else {
            since = None;
        }
    }
    since.map(|s| result(s, threshold, false, steps_per_row))
}

fn result(step: usize, threshold: f64, confirmed: bool, steps_per_row: usize) -> DecayResult {
    DecayResult {
        t_decay: step as f64 / steps_per_row as f64,
        step,
        threshold,
        confirmed,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogLogFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Least squares of `ln y` on `ln x`.
pub fn fit_loglog(points: &[(f64, f64)]) -> Result<LogLogFit> {
    if points.len() < 3 {
        return Err(Error::Data(format!("log-log fit needs at least 3 points, got {}", points.len())));
    }
    if let Some(p) = points.iter().find(|(x, y)| !(*x > 0.0 && *y > 0.0) || !x.is_finite() || !y.is_finite()) {
        return Err(Error::Data(format!("log-log fit needs positive values, got {p:?}")));
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|(x, y)| (x.ln(), y.ln())).collect();
    let n = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = logs.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Data("log-log fit needs distinct x values".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(LogLogFit { slope, intercept, r2 })
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Probability of field value 1 per link in the vacuum: `X^2 / (1 + X^2)`.
pub fn vacuum_link_probability(x: f64) -> f64 {
    x * x / (1.0 + x * x)
}

/// Block means over `m x m` vertices (`m` raster rows by `2m` link columns).
#[derive(Debug, Clone, PartialEq)]
pub struct CoarseGrid {
    pub m: usize,
    pub x: f64,
    pub block_rows: usize,
    pub block_cols: usize,
    /// Row-major block means.
    pub means: Vec<f64>,
    /// Raster rows and columns left out because they do not fill a block.
    pub discarded_rows: usize,
    pub discarded_cols: usize,
}

impl CoarseGrid {
    pub fn epsilon(&self) -> f64 {
        1.0 - self.x
    }

    /// `M = m^2`, the number of vertices per block.
    pub fn vertices_per_block(&self) -> usize {
        self.m * self.m
    }

    pub fn links_per_block(&self) -> usize {
        2 * self.m * self.m
    }

    pub fn mean(&self, row: usize, col: usize) -> f64 {
        self.means[row * self.block_cols + col]
    }

    /// `(alpha - X^2/(1+X^2)) / epsilon` per block.
    pub fn renormalised(&self) -> Result<Vec<f64>> {
        let eps = self.epsilon();
        if eps == 0.0 {
            return Err(Error::ZeroEpsilon);
        }
        let mu = vacuum_link_probability(self.x);
        Ok(self.means.iter().map(|a| (a - mu) / eps).collect())
    }

    /// Inverse of [`CoarseGrid::renormalised`] for one value.
    pub fn unrenormalise(&self, value: f64) -> f64 {
        self.epsilon() * value + vacuum_link_probability(self.x)
    }

    /// Vacuum prediction for block means: `(mu, sigma^2)` with `M = m^2`.
    pub fn vacuum_moments(&self) -> (f64, f64) {
        let mu = vacuum_link_probability(self.x);
        let x2 = self.x * self.x;
        (mu, x2 / (2.0 * (1.0 + x2).powi(2) * self.vertices_per_block() as f64))
    }
}

pub fn coarse_grain(raster: &FieldRaster, m: usize, x: f64) -> Result<CoarseGrid> {
    if m == 0 {
        return Err(Error::Parameter("block size must be positive".into()));
    }
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::Parameter(format!("X = {x} outside [0, 1]")));
    }
    let (rows, cols) = (raster.n_rows(), raster.n_cols());
    if m > rows || 2 * m > cols {
        return Err(Error::Parameter(format!(
            "block of {m}x{m} vertices does not fit a {rows}x{cols} raster"
        )));
    }
    let block_rows = rows / m;
    let block_cols = cols / (2 * m);
    let cells = (2 * m * m) as f64;
    let mut means = Vec::with_capacity(block_rows * block_cols);
    for br in 0..block_rows {
        for bc in 0..block_cols {
            let mut sum = 0.0;
            for r in br * m..(br + 1) * m {
                for c in bc * 2 * m..(bc + 1) * 2 * m {
                    sum += raster.get(r, c);
                }
            }
            means.push(sum / cells);
        }
    }
    Ok(CoarseGrid {
        m,
        x,
        block_rows,
        block_cols,
        means,
        discarded_rows: rows - block_rows * m,
        discarded_cols: cols - block_cols * 2 * m,
    })
}

/// Sample moments of a set of values compared against expected ones.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentTest {
    pub n: usize,
    pub mean: f64,
    pub variance: f64,
    pub se_mean: f64,
    pub se_variance: f64,
    pub expected_mean: f64,
    pub expected_variance: f64,
}

impl MomentTest {
    pub fn new(values: &[f64], expected_mean: f64, expected_variance: f64) -> Result<Self> {
        let n = values.len();
        if n < 4 {
            return Err(Error::Data(format!("need at least 4 samples, got {n}")));
        }
        let nf = n as f64;
        let mean = values.iter().sum::<f64>() / nf;
        let m2 = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / nf;
        let m4 = values.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / nf;
        let variance = m2 * nf / (nf - 1.0);
        let var_of_var = (m4 - variance * variance * (nf - 3.0) / (nf - 1.0)) / nf;
        Ok(Self {
            n,
            mean,
            variance,
            se_mean: (variance / nf).sqrt(),
            se_variance: var_of_var.max(0.0).sqrt(),
            expected_mean,
            expected_variance,
        })
    }

    pub fn mean_z(&self) -> f64 {
        (self.mean - self.expected_mean) / self.se_mean
    }

    pub fn variance_z(&self) -> f64 {
        (self.variance - self.expected_variance) / self.se_variance
    }

    pub fn mean_ok(&self) -> bool {
        self.mean_z().abs() <= 3.0
    }

    pub fn variance_ok(&self) -> bool {
        self.variance_z().abs() <= 3.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChiSquareTest {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
    pub alpha: f64,
}

impl ChiSquareTest {
    pub fn passed(&self) -> bool {
        self.p_value > self.alpha
    }
}

/// Pearson goodness of fit of category counts against expected probabilities.
pub fn chi_square(counts: &[u64], probabilities: &[f64], alpha: f64) -> Result<ChiSquareTest> {
    if counts.len() != probabilities.len() || counts.len() < 2 {
        return Err(Error::Data("chi-square needs matching counts and probabilities".into()));
    }
    let n: u64 = counts.iter().sum();
    if n == 0 {
        return Err(Error::Data("chi-square needs observations".into()));
    }
    let mut statistic = 0.0;
    for (&c, &p) in counts.iter().zip(probabilities) {
        let e = p * n as f64;
        if e <= 0.0 {
            return Err(Error::Data("chi-square expected count must be positive".into()));
        }
        statistic += (c as f64 - e).powi(2) / e;
    }
    let dof = counts.len() - 1;
    let dist = ChiSquared::new(dof as f64).map_err(|e| Error::Data(e.to_string()))?;
    Ok(ChiSquareTest {
        statistic,
        dof,
        p_value: 1.0 - dist.cdf(statistic),
        alpha,
    })
}

/// Bernoulli test of `ones` successes in `total` trials against `p`.
pub fn chi_square_bernoulli(ones: u64, total: u64, p: f64, alpha: f64) -> Result<ChiSquareTest> {
    if ones > total {
        return Err(Error::Data("more successes than trials".into()));
    }
    chi_square(&[total - ones, ones], &[1.0 - p, p], alpha)
}

/// Realised bits of all filled cells.
pub fn realised_bits(raster: &FieldRaster) -> (u64, u64) {
    let mut ones = 0;
    let mut total = 0;
    for r in 0..raster.n_rows() {
        for c in 0..raster.n_cols() {
            if raster.is_filled(r, c) {
                total += 1;
                ones += (raster.get(r, c) > 0.5) as u64;
            }
        }
    }
    (ones, total)
}

#[derive(Debug, Clone, PartialEq)]
pub struct VacuumReport {
    pub grid_blocks: usize,
    pub blocks: MomentTest,
    pub link_ones: u64,
    pub link_total: u64,
    pub link_expected: f64,
    pub link_chi_square: ChiSquareTest,
}

impl VacuumReport {
    pub fn link_frequency(&self) -> f64 {
        self.link_ones as f64 / self.link_total as f64
    }

    pub fn link_se(&self) -> f64 {
        (self.link_expected * (1.0 - self.link_expected) / self.link_total as f64).sqrt()
    }

    pub fn link_ok(&self) -> bool {
        (self.link_frequency() - self.link_expected).abs() <= 3.0 * self.link_se()
    }

    pub fn passed(&self) -> bool {
        self.blocks.mean_ok() && self.blocks.variance_ok() && self.link_ok()
    }
}

/// Block and per-link statistics of vacuum runs on streams `0..n_runs`.
pub fn vacuum_statistics(geometry: LatticeGeometry, params: ModelParams, m: usize, n_runs: usize) -> Result<VacuumReport> {
    let initial = InitialState::vacuum(geometry.n_slots())?;
    let per_run: Vec<(Vec<f64>, u64, u64)> = (0..n_runs as u64)
        .into_par_iter()
        .map(|stream| {
            let options = TrajectoryOptions {
                stream,
                ..TrajectoryOptions::default()
            };
            let record = run_trajectory(geometry, params, initial, &options)?;
            let raster = FieldRaster::field(&record)?;
            let grid = coarse_grain(&raster, m, params.x)?;
            let (ones, total) = realised_bits(&raster);
            Ok((grid.means, ones, total))
        })
        .collect::<Result<_>>()?;
    let probe = CoarseGrid {
        m,
        x: params.x,
        block_rows: 0,
        block_cols: 0,
        means: Vec::new(),
        discarded_rows: 0,
        discarded_cols: 0,
    };
    let (mu, var) = probe.vacuum_moments();
    let means: Vec<f64> = per_run.iter().flat_map(|r| r.0.iter().copied()).collect();
    let link_ones = per_run.iter().map(|r| r.1).sum();
    let link_total = per_run.iter().map(|r| r.2).sum();
    let p = vacuum_link_probability(params.x);
    Ok(VacuumReport {
        grid_blocks: means.len(),
        blocks: MomentTest::new(&means, mu, var)?,
        link_ones,
        link_total,
        link_expected: p,
        link_chi_square: chi_square_bernoulli(link_ones, link_total, p, 0.01)?,
    })
}

/// Counts of vertices crossed by exactly one particle, and of those where it
/// turned (left the vertex on the slot it came in on).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DirectionChanges {
    pub crossings: u64,
    pub changes: u64,
}

impl DirectionChanges {
    pub fn frequency(&self) -> f64 {
        self.changes as f64 / self.crossings as f64
    }
}

/// Direction changes in the realised field of a run from a definite initial configuration.
pub fn direction_changes(record: &TrajectoryRecord) -> Result<DirectionChanges> {
    let bits = record
        .initial
        .definite_bits()
        .ok_or_else(|| Error::Data("direction changes need a definite initial configuration".into()))?;
    let mut current = bits.bits();
    let mut out = DirectionChanges::default();
    for ev in &record.events {
        let (a, b) = ev.slots;
        let incoming = (current[a], current[b]);
        let outgoing = (ev.outcome.left, ev.outcome.right);
        if incoming.0 != incoming.1 && outgoing.0 != outgoing.1 {
            out.crossings += 1;
            if incoming == outgoing {
                out.changes += 1;
            }
        }
        current[a] = outgoing.0;
        current[b] = outgoing.1;
    }
    Ok(out)
}

/// `(|0...0> + |one particle on slot>) / sqrt 2`.
pub fn single_link_superposition(n_sites: usize, slot: usize) -> Result<InitialState> {
    let n_slots = 2 * n_sites;
    Ok(InitialState::Superposition(
        FieldConfig::zeros(n_slots)?,
        FieldConfig::with_ones(n_slots, &[slot])?,
    ))
}

/// `l` particles on the left half of the register superposed with the same
/// pattern shifted onto the right half.
pub fn left_right_superposition(n_sites: usize, l: usize) -> Result<InitialState> {
    if l == 0 || l > n_sites {
        return Err(Error::Parameter(format!(
            "particle count {l} must lie in 1..={n_sites} for {n_sites} sites"
        )));
    }
    let n_slots = 2 * n_sites;
    let left: Vec<usize> = (0..l).collect();
    let right: Vec<usize> = (0..l).map(|k| k + n_sites).collect();
    Ok(InitialState::Superposition(
        FieldConfig::with_ones(n_slots, &left)?,
        FieldConfig::with_ones(n_slots, &right)?,
    ))
}

/// Decay measurement of one tracked superposition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayRun {
    pub stream: u64,
    pub steps: usize,
    pub result: Option<DecayResult>,
}

impl DecayRun {
    /// Decay time, or the run length as a lower bound when no decay was seen.
    pub fn time_or_bound(&self, n_sites: usize) -> f64 {
        self.result.map_or(self.steps as f64 / n_sites as f64, |r| r.t_decay)
    }

    pub fn confirmed(&self) -> bool {
        self.result.is_some_and(|r| r.confirmed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecaySettings {
    pub threshold: f64,
    pub window: usize,
    /// Step budget per run; runs that exhaust it are reported unconfirmed.
    pub max_steps: usize,
}

impl DecaySettings {
    pub fn new(n_sites: usize) -> Self {
        Self {
            threshold: DEFAULT_DECAY_THRESHOLD,
            window: default_window(n_sites),
            max_steps: 20_000_000,
        }
    }
}

/// Runs one tracked superposition (`InitialState::Superposition`) until its
/// smaller branch decays or the step budget runs out.
pub fn decay_run(
    n_sites: usize,
    params: ModelParams,
    initial: InitialState,
    settings: DecaySettings,
    stream: u64,
) -> Result<DecayRun> {
    let InitialState::Superposition(c1, c2) = initial else {
        return Err(Error::Parameter("decay runs need a superposition of two configurations".into()));
    };
    let rows = settings.max_steps / n_sites + 2;
    let geometry = LatticeGeometry::new(n_sites, rows)?;
    let options = TrajectoryOptions {
        track: Some((c1, c2)),
        stop: StopRule::BranchDecay {
            threshold: settings.threshold,
            window: settings.window,
        },
        record_events: false,
        stream,
        max_steps: Some(settings.max_steps),
        ..TrajectoryOptions::default()
    };
    let record = run_trajectory(geometry, params, initial, &options)?;
    let result = detect_decay(&record.min_branch_series(), settings.threshold, settings.window, n_sites);
    debug_assert!(record.stop_reason != StopReason::Decayed || result.is_some_and(|r| r.confirmed));
    Ok(DecayRun {
        stream,
        steps: record.steps,
        result,
    })
}

/// One point of a decay sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct DecayPoint {
    /// Swept value: epsilon or particle count.
    pub label: f64,
    pub params: ModelParams,
    pub initial: InitialState,
    pub runs: Vec<DecayRun>,
}

impl DecayPoint {
    pub fn times(&self, n_sites: usize) -> Vec<f64> {
        self.runs.iter().map(|r| r.time_or_bound(n_sites)).collect()
    }

    pub fn median(&self, n_sites: usize) -> f64 {
        median(&self.times(n_sites)).unwrap_or(f64::NAN)
    }

    pub fn unconfirmed(&self) -> usize {
        self.runs.iter().filter(|r| !r.confirmed()).count()
    }
}

/// Runs every `(point, stream)` pair in parallel, streams `0..seeds` per point.
pub fn decay_sweep(
    n_sites: usize,
    points: &[(f64, ModelParams, InitialState)],
    seeds: usize,
    settings: DecaySettings,
) -> Result<Vec<DecayPoint>> {
    let jobs: Vec<(usize, u64)> = (0..points.len())
        .flat_map(|p| (0..seeds as u64).map(move |s| (p, s)))
        .collect();
    let runs: Vec<(usize, DecayRun)> = jobs
        .par_iter()
        .map(|&(p, s)| {
            let (_, params, initial) = points[p];
            decay_run(n_sites, params, initial, settings, s).map(|r| (p, r))
        })
        .collect::<Result<_>>()?;
    Ok(points
        .iter()
        .enumerate()
        .map(|(i, &(label, params, initial))| DecayPoint {
            label,
            params,
            initial,
            runs: runs.iter().filter(|(p, _)| *p == i).map(|(_, r)| *r).collect(),
        })
        .collect())
}

/// Log-log fit of median decay time against the swept value.
pub fn fit_medians(points: &[DecayPoint], n_sites: usize) -> Result<LogLogFit> {
    let xy: Vec<(f64, f64)> = points.iter().map(|p| (p.label, p.median(n_sites))).collect();
    fit_loglog(&xy)
}

/// Speed of light in cm/s.
pub const SPEED_OF_LIGHT_CM_S: f64 = 2.997_924_58e10;
/// Planck time in seconds (CODATA 2018).
pub const PLANCK_TIME_S: f64 = 5.391_247e-44;
/// Order-of-magnitude Planck time, 1e-44 s.
pub const PLANCK_TIME_ORDER_S: f64 = 1e-44;
/// Order-of-magnitude Planck length, 1e-33 cm.
pub const PLANCK_LENGTH_ORDER_CM: f64 = 1e-33;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrwEstimate {
    pub epsilon: f64,
    /// Block size in lattice spacings.
    pub m: f64,
    /// Smallest resolvable separation, in cm.
    pub x_discrim_cm: f64,
}

/// Collapse parameters for `T_decay = k T0 / epsilon^2` with `K = m epsilon`,
/// taking the lattice spacing `X0 = c T0`.
pub fn grw_parameter_estimate(t_decay_s: f64, t0_s: f64, k: f64, capital_k: f64) -> Result<GrwEstimate> {
    grw_parameter_estimate_with_spacing(t_decay_s, t0_s, SPEED_OF_LIGHT_CM_S * t0_s, k, capital_k)
}

/// As [`grw_parameter_estimate`] with an explicit spatial spacing `x0_cm`.
pub fn grw_parameter_estimate_with_spacing(
    t_decay_s: f64,
    t0_s: f64,
    x0_cm: f64,
    k: f64,
    capital_k: f64,
) -> Result<GrwEstimate> {
    for (name, v) in [("T_decay", t_decay_s), ("T0", t0_s), ("X0", x0_cm), ("k", k), ("K", capital_k)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::Parameter(format!("{name} must be positive, got {v}")));
        }
    }
    let epsilon = (k * t0_s / t_decay_s).sqrt();
    let m = capital_k / epsilon;
    Ok(GrwEstimate {
        epsilon,
        m,
        x_discrim_cm: m * x0_cm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    #[test]
    fn constant_series_never_decays() {
        assert_eq!(detect_decay(&[0.5; 100], 0.005, 10, 4), None);
    }

    #[test]
    fn crossing_that_stays_is_confirmed() {
        let mut s = vec![0.5; 20];
        s.extend(vec![0.004; 30]);
        let r = detect_decay(&s, 0.005, 10, 4).unwrap();
        assert_eq!(r.step, 20);
        assert_eq!(r.t_decay, 5.0);
        assert!(r.confirmed);
    }

    #[test]
    fn rebound_restarts_window_and_short_tail_is_unconfirmed() {
        let mut s = vec![0.5; 5];
        s.extend([0.001, 0.001, 0.3]);
        s.extend([0.001; 4]);
        let r = detect_decay(&s, 0.005, 10, 1).unwrap();
        assert_eq!(r.step, 8);
        assert!(!r.confirmed);
    }

    proptest! {
        #[test]
        fn lower_threshold_never_decays_earlier(
            series in prop::collection::vec(0.0f64..0.02, 1..200),
            lo in 0.0f64..0.01,
            gap in 0.0f64..0.01,
            window in 0usize..20,
        ) {
            let hi = lo + gap;
            if let Some(low) = detect_decay(&series, lo, window, 1).filter(|r| r.confirmed) {
                let high = detect_decay(&series, hi, window, 1).unwrap();
                prop_assert!(high.confirmed);
                prop_assert!(high.step <= low.step);
            }
        }

        #[test]
        fn renormalisation_round_trip(bits in prop::collection::vec(any::<bool>(), 48), x in 0.0f64..0.999, m in 1usize..4) {
            let raster = FieldRaster::from_bits(6, 8, &bits).unwrap();
            let grid = coarse_grain(&raster, m, x).unwrap();
            let renorm = grid.renormalised().unwrap();
            for (a, r) in grid.means.iter().zip(renorm) {
                prop_assert!((grid.unrenormalise(r) - a).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn exact_power_law_fit() {
        let pts: Vec<(f64, f64)> = [0.1f64, 0.15, 0.2, 0.25].iter().map(|&e| (e, 7.0 * e.powi(-2))).collect();
        let fit = fit_loglog(&pts).unwrap();
        assert!((fit.slope + 2.0).abs() < 1e-9);
        assert!((fit.intercept - 7f64.ln()).abs() < 1e-9);
        assert!((fit.r2 - 1.0).abs() < 1e-12);
        let flat = fit_loglog(&[(1.0, 3.0), (2.0, 3.0), (5.0, 3.0)]).unwrap();
        assert!(flat.slope.abs() < 1e-12);
        assert!(fit_loglog(&[(1.0, 1.0), (2.0, 0.0), (3.0, 1.0)]).is_err());
        assert!(fit_loglog(&[(1.0, 1.0), (2.0, 1.0)]).is_err());
    }

    #[test]
    fn coarse_grain_constant_rasters() {
        let zeros = FieldRaster::from_bits(4, 8, &[false; 32]).unwrap();
        let g = coarse_grain(&zeros, 2, 0.9).unwrap();
        assert_eq!((g.block_rows, g.block_cols), (2, 2));
        assert!(g.means.iter().all(|&a| a == 0.0));
        let expect = -(0.81 / 1.81) / (1.0 - 0.9);
        assert!(g.renormalised().unwrap().iter().all(|r| (r - expect).abs() < 1e-12));
        let ones = FieldRaster::from_bits(4, 8, &[true; 32]).unwrap();
        assert!(coarse_grain(&ones, 2, 0.5).unwrap().means.iter().all(|&a| a == 1.0));
    }

    #[test]
    fn coarse_grain_edges_and_pairs() {
        let bits: Vec<bool> = (0..5 * 10).map(|i| i % 3 == 0).collect();
        let raster = FieldRaster::from_bits(5, 10, &bits).unwrap();
        let g = coarse_grain(&raster, 2, 0.5).unwrap();
        assert_eq!((g.block_rows, g.block_cols, g.discarded_rows, g.discarded_cols), (2, 2, 1, 2));
        assert!(g.means.iter().all(|&a| a * 8.0 == (a * 8.0).round()));
        // m = 1: each block is one vertex-sized pair of cells
        let g1 = coarse_grain(&raster, 1, 0.5).unwrap();
        assert_eq!((g1.block_rows, g1.block_cols), (5, 5));
        for r in 0..5 {
            for c in 0..5 {
                let pair = (raster.get(r, 2 * c) + raster.get(r, 2 * c + 1)) / 2.0;
                assert_eq!(g1.mean(r, c), pair);
            }
        }
        assert!(coarse_grain(&raster, 6, 0.5).is_err());
    }

    #[test]
    fn zero_epsilon_rejected() {
        let raster = FieldRaster::from_bits(2, 4, &[true; 8]).unwrap();
        let g = coarse_grain(&raster, 1, 1.0).unwrap();
        assert_eq!(g.renormalised(), Err(Error::ZeroEpsilon));
    }

    #[test]
    fn vacuum_moments_at_x_one() {
        let raster = FieldRaster::from_bits(4, 8, &[false; 32]).unwrap();
        let g = coarse_grain(&raster, 2, 1.0).unwrap();
        let (mu, var) = g.vacuum_moments();
        assert_eq!(mu, 0.5);
        assert!((var - 1.0 / 32.0).abs() < 1e-15);
        assert!((vacuum_link_probability(0.9) - 0.81 / 1.81).abs() < 1e-15);
    }

    #[test]
    fn moment_test_on_known_sample() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        let t = MomentTest::new(&v, 3.0, 2.5).unwrap();
        assert_eq!(t.mean, 3.0);
        assert_eq!(t.variance, 2.5);
        assert!(t.mean_ok() && t.variance_ok());
    }

    #[test]
    fn chi_square_against_table_values() {
        // statistic 6.635 is the 0.01 critical value for one degree of freedom
        let t = chi_square(&[0, 1], &[0.5, 0.5], 0.01).unwrap();
        assert!((t.statistic - 1.0).abs() < 1e-12);
        let fair = chi_square_bernoulli(5000, 10_000, 0.5, 0.01).unwrap();
        assert!(fair.passed() && fair.statistic == 0.0);
        let biased = chi_square_bernoulli(5200, 10_000, 0.5, 0.01).unwrap();
        assert!((biased.statistic - 16.0).abs() < 1e-9);
        assert!(!biased.passed());
        let edge = chi_square_bernoulli(5128, 10_000, 0.5, 0.01).unwrap();
        assert!((edge.statistic - 6.5536).abs() < 1e-9 && edge.passed());
    }

    #[test]
    fn initial_state_helpers() {
        let s = single_link_superposition(4, 3).unwrap();
        assert_eq!(s.to_string(), "super:00000000,00010000");
        let lr = left_right_superposition(5, 2).unwrap();
        assert_eq!(lr.to_string(), "super:1100000000,0000011000");
        assert!(left_right_superposition(3, 4).is_err());
        assert!(left_right_superposition(3, 0).is_err());
    }

    #[test]
    fn direction_changes_at_full_turning() {
        // theta = pi/2 with X = 0: a lone particle turns at every vertex
        let g = LatticeGeometry::new(4, 20).unwrap();
        let params = ModelParams::new(PI / 2.0, 0.0, 5).unwrap();
        let init = InitialState::Eigen(FieldConfig::with_ones(8, &[3]).unwrap());
        let r = run_trajectory(g, params, init, &TrajectoryOptions::default()).unwrap();
        let d = direction_changes(&r).unwrap();
        assert_eq!(d.crossings, 20);
        assert_eq!(d.changes, 20);
        let params = ModelParams::new(0.0, 0.0, 5).unwrap();
        let r = run_trajectory(g, params, init, &TrajectoryOptions::default()).unwrap();
        let d = direction_changes(&r).unwrap();
        assert_eq!((d.crossings, d.changes), (20, 0));
    }

    #[test]
    fn grw_identity_scales() {
        let e = grw_parameter_estimate_with_spacing(1.0, 1.0, 2.5, 1.0, 1.0).unwrap();
        assert_eq!((e.epsilon, e.m, e.x_discrim_cm), (1.0, 1.0, 2.5));
        let c = grw_parameter_estimate(PLANCK_TIME_S, PLANCK_TIME_S, 1.0, 1.0).unwrap();
        assert!((c.x_discrim_cm - SPEED_OF_LIGHT_CM_S * PLANCK_TIME_S).abs() < 1e-50);
        assert!(grw_parameter_estimate(0.0, 1.0, 1.0, 1.0).is_err());
        assert!(grw_parameter_estimate(1.0, 1.0, -1.0, 1.0).is_err());
    }

    #[test]
    fn grw_order_of_magnitude_values() {
        let e = grw_parameter_estimate_with_spacing(1e16, PLANCK_TIME_ORDER_S, PLANCK_LENGTH_ORDER_CM, 1.0, 1.0).unwrap();
        assert!((e.x_discrim_cm / 1e-3 - 1.0).abs() < 1e-9);
        assert!((e.epsilon / 1e-30 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn decay_run_single_link() {
        let params = ModelParams::from_epsilon(PI / 2.0, 0.3, 11).unwrap();
        let init = single_link_superposition(3, 2).unwrap();
        let mut settings = DecaySettings::new(3);
        settings.max_steps = 200_000;
        let run = decay_run(3, params, init, settings, 0).unwrap();
        let res = run.result.unwrap();
        assert!(res.confirmed && res.t_decay > 0.0);
        // swapping which branch is listed first gives the same decay
        let InitialState::Superposition(a, b) = init else { unreachable!() };
        let swapped = decay_run(3, params, InitialState::Superposition(b, a), settings, 0).unwrap();
        assert_eq!(swapped.result.unwrap().step, res.step);
    }

    #[test]
    fn sweep_groups_runs_by_point() {
        let n = 3;
        let mut settings = DecaySettings::new(n);
        settings.max_steps = 100_000;
        let init = single_link_superposition(n, 0).unwrap();
        let pts: Vec<_> = [0.4, 0.3]
            .iter()
            .map(|&e| (e, ModelParams::from_epsilon(PI / 2.0, e, 3).unwrap(), init))
            .collect();
        let sweep = decay_sweep(n, &pts, 5, settings).unwrap();
        assert_eq!(sweep.len(), 2);
        for p in &sweep {
            assert_eq!(p.runs.iter().map(|r| r.stream).collect::<Vec<_>>(), vec![0, 1, 2, 3, 4]);
            assert!(p.median(n) > 0.0);
        }
    }
}
