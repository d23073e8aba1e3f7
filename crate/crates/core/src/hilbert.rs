//! Dense state vector over the `2N`-slot link register.
//!
//! Basis index bit `k` is the field value on register slot `k` (little
//! endian). Two-slot operators act on the local index
//! `bit_a | bit_b << 1`, so the local basis order is
//! `(00, 01, 10, 11)` written as `bit_b bit_a`: index 1 is a particle on the
//! left slot only, index 2 a particle on the right slot only.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Largest supported register (N = 12).
pub const MAX_SLOTS: usize = 24;

/// Smallest outcome weight that may be realised.
pub const MIN_OUTCOME_WEIGHT: f64 = 1e-300;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// A 4x4 operator on two register slots, `gate[out][in]` in local-index order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoSlotGate(pub [[Complex64; 4]; 4]);

impl TwoSlotGate {
    pub fn identity() -> Self {
        let mut m = [[ZERO; 4]; 4];
        for (i, row) in m.iter_mut().enumerate() {
            row[i] = ONE;
        }
        Self(m)
    }

    /// Exchanges the two slots.
    pub fn swap() -> Self {
        let mut m = [[ZERO; 4]; 4];
        m[0][0] = ONE;
        m[1][2] = ONE;
        m[2][1] = ONE;
        m[3][3] = ONE;
        Self(m)
    }

    pub fn entry(&self, out: usize, inp: usize) -> Complex64 {
        self.0[out][inp]
    }

    pub fn adjoint(&self) -> Self {
        let mut m = [[ZERO; 4]; 4];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, e) in row.iter_mut().enumerate() {
                *e = self.0[j][i].conj();
            }
        }
        Self(m)
    }

    pub fn is_diagonal(&self) -> bool {
        (0..4).all(|i| (0..4).all(|j| i == j || self.0[i][j] == ZERO))
    }

    /// Only the single-particle states `01` and `10` mix.
    pub fn is_number_preserving(&self) -> bool {
        let g = &self.0;
        (0..4).all(|i| {
            (0..4).all(|j| {
                let same_sector = i == j || (i == 1 || i == 2) && (j == 1 || j == 2);
                same_sector || g[i][j] == ZERO
            })
        })
    }

    /// Max elementwise deviation of `G† G` from the identity.
    pub fn unitarity_error(&self) -> f64 {
        let mut err: f64 = 0.0;
        for i in 0..4 {
            for j in 0..4 {
                let mut s = ZERO;
                for k in 0..4 {
                    s += self.0[k][i].conj() * self.0[k][j];
                }
                let target = if i == j { ONE } else { ZERO };
                err = err.max((s - target).norm());
            }
        }
        err
    }
}

/// Realised field values on the two outgoing links of a vertex.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Outcome {
    pub left: bool,
    pub right: bool,
}

impl Outcome {
    pub const ALL: [Outcome; 4] = [
        Outcome::from_index(0),
        Outcome::from_index(1),
        Outcome::from_index(2),
        Outcome::from_index(3),
    ];

    pub const fn new(left: bool, right: bool) -> Self {
        Self { left, right }
    }

    /// Local index `left | right << 1`.
    pub const fn index(self) -> usize {
        self.left as usize | (self.right as usize) << 1
    }

    pub const fn from_index(i: usize) -> Self {
        Self {
            left: i & 1 == 1,
            right: i & 2 == 2,
        }
    }
}

/// Field values on all `2N` slots, stored as a basis index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FieldConfig {
    n_slots: usize,
    index: usize,
}

impl FieldConfig {
    pub fn zeros(n_slots: usize) -> Result<Self> {
        Self::from_index(n_slots, 0)
    }

    pub fn from_index(n_slots: usize, index: usize) -> Result<Self> {
        if n_slots == 0 || n_slots > MAX_SLOTS {
            return Err(Error::TooManySlots(n_slots));
        }
        if index >> n_slots != 0 {
            return Err(Error::Data(format!("index {index} exceeds {n_slots} slots")));
        }
        Ok(Self { n_slots, index })
    }

    pub fn from_bits(bits: &[bool]) -> Result<Self> {
        let index = bits
            .iter()
            .enumerate()
            .fold(0usize, |acc, (k, &b)| acc | (b as usize) << k);
        Self::from_index(bits.len(), index)
    }

    /// Config with ones exactly on `slots`.
    pub fn with_ones(n_slots: usize, slots: &[usize]) -> Result<Self> {
        let mut index = 0;
        for &s in slots {
            if s >= n_slots {
                return Err(Error::SlotOutOfRange { slot: s, n_slots });
            }
            index |= 1 << s;
        }
        Self::from_index(n_slots, index)
    }

    /// Parses a bitstring whose k-th character is slot k, checking its length.
    pub fn parse_exact(s: &str, n_slots: usize) -> Result<Self> {
        let c: FieldConfig = s.parse()?;
        if c.n_slots != n_slots {
            return Err(Error::ConfigLength {
                expected: n_slots,
                got: c.n_slots,
            });
        }
        Ok(c)
    }

    pub fn n_slots(&self) -> usize {
        self.n_slots
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn bit(&self, slot: usize) -> bool {
        self.index >> slot & 1 == 1
    }

    pub fn bits(&self) -> Vec<bool> {
        (0..self.n_slots).map(|k| self.bit(k)).collect()
    }

    pub fn count_ones(&self) -> u32 {
        self.index.count_ones()
    }
}

impl fmt::Display for FieldConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for k in 0..self.n_slots {
            f.write_str(if self.bit(k) { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl FromStr for FieldConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bits = s
            .trim()
            .chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(Error::Data(format!("bad bit character {other:?} in {s:?}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_bits(&bits)
    }
}

/// Diagonal entries of the Kraus factor `J_{o_a} ⊗ J_{o_b}` indexed by local basis state.
pub fn kraus_factors(x: f64, outcome: Outcome) -> [f64; 4] {
    let norm = 1.0 / (1.0 + x * x).sqrt();
    // J_o on a single link: 1 when the link value equals o, X otherwise.
    let j = |o: bool, s: bool| if o == s { norm } else { x * norm };
    let mut f = [0.0; 4];
    for (s, fs) in f.iter_mut().enumerate() {
        *fs = j(outcome.left, s & 1 == 1) * j(outcome.right, s & 2 == 2);
    }
    f
}

/// Outcome weights given the two-slot marginal probabilities `p[s]`.
pub fn outcome_weights(x: f64, marginals: &[f64; 4]) -> [f64; 4] {
    let mut w = [0.0; 4];
    for (o, wo) in w.iter_mut().enumerate() {
        let f = kraus_factors(x, Outcome::from_index(o));
        *wo = (0..4).map(|s| marginals[s] * f[s] * f[s]).sum();
    }
    w
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    n_slots: usize,
    amps: Vec<Complex64>,
}

/// Basis state with amplitude 1 on `config`.
pub fn eigenstate(config: FieldConfig) -> StateVector {
    let mut amps = vec![ZERO; 1 << config.n_slots()];
    amps[config.index()] = ONE;
    StateVector {
        n_slots: config.n_slots(),
        amps,
    }
}

/// Equal-weight superposition `(|c1> + |c2>) / sqrt 2`.
pub fn superpose(c1: FieldConfig, c2: FieldConfig) -> Result<StateVector> {
    if c1.n_slots() != c2.n_slots() {
        return Err(Error::ConfigLength {
            expected: c1.n_slots(),
            got: c2.n_slots(),
        });
    }
    if c1 == c2 {
        return Err(Error::IdenticalConfigs);
    }
    let mut s = eigenstate(c1);
    let h = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    s.amps[c1.index()] = h;
    s.amps[c2.index()] = h;
    Ok(s)
}

impl StateVector {
    /// Wraps raw amplitudes; the length must be a power of two within range.
    pub fn from_amplitudes(amps: Vec<Complex64>) -> Result<Self> {
        let len = amps.len();
        if !len.is_power_of_two() || len < 2 {
            return Err(Error::Data(format!("amplitude count {len} is not a power of two")));
        }
        let n_slots = len.trailing_zeros() as usize;
        if n_slots > MAX_SLOTS {
            return Err(Error::TooManySlots(n_slots));
        }
        Ok(Self { n_slots, amps })
    }

    pub fn n_slots(&self) -> usize {
        self.n_slots
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    pub fn amplitude(&self, index: usize) -> Complex64 {
        self.amps[index]
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn normalize(&mut self) -> Result<()> {
        let n = self.norm_sqr();
        if n < MIN_OUTCOME_WEIGHT {
            return Err(Error::ZeroProbability(n));
        }
        let inv = 1.0 / n.sqrt();
        self.amps.iter_mut().for_each(|a| *a *= inv);
        Ok(())
    }

    fn check_pair(&self, a: usize, b: usize) -> Result<()> {
        for s in [a, b] {
            if s >= self.n_slots {
                return Err(Error::SlotOutOfRange {
                    slot: s,
                    n_slots: self.n_slots,
                });
            }
        }
        if a == b {
            return Err(Error::SlotCollision(a));
        }
        Ok(())
    }

    /// Visits every group of four amplitudes that differ only on slots `a` and `b`,
    /// as `[i00, i_a, i_b, i_ab]` in local-index order.
    #[inline]
    fn for_each_quad(&mut self, a: usize, b: usize, mut f: impl FnMut(&mut [Complex64], [usize; 4])) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let (ma, mb) = (1usize << a, 1usize << b);
        let (slo, shi) = (1usize << lo, 1usize << hi);
        let dim = self.amps.len();
        let amps = &mut self.amps[..];
        let mut outer = 0;
        while outer < dim {
            let mut mid = outer;
            while mid < outer + shi {
                for base in mid..mid + slo {
                    f(amps, [base, base | ma, base | mb, base | ma | mb]);
                }
                mid += 2 * slo;
            }
            outer += 2 * shi;
        }
    }

    /// In-place gate application on slots `(a, b)`.
    pub fn apply_gate(&mut self, a: usize, b: usize, gate: &TwoSlotGate) -> Result<()> {
        self.apply_gate_with_marginals(a, b, gate).map(|_| ())
    }

    /// In-place gate application returning the post-gate marginals `p[s]` of the pair.
    pub fn apply_gate_with_marginals(&mut self, a: usize, b: usize, gate: &TwoSlotGate) -> Result<[f64; 4]> {
        self.check_pair(a, b)?;
        Ok(self.gate_pass(a, b, gate))
    }

    fn gate_pass(&mut self, a: usize, b: usize, gate: &TwoSlotGate) -> [f64; 4] {
        let g = &gate.0;
        let mut p = [0.0; 4];
        if !gate.is_diagonal() && gate.is_number_preserving() {
            let (g00, g33) = (g[0][0], g[3][3]);
            let m = [[g[1][1], g[1][2]], [g[2][1], g[2][2]]];
            self.for_each_quad(a, b, |amps, idx| {
                let (v1, v2) = (amps[idx[1]], amps[idx[2]]);
                let out = [g00 * amps[idx[0]], m[0][0] * v1 + m[0][1] * v2, m[1][0] * v1 + m[1][1] * v2, g33 * amps[idx[3]]];
                for s in 0..4 {
                    amps[idx[s]] = out[s];
                    p[s] += out[s].norm_sqr();
                }
            });
        } else if gate.is_diagonal() {
            let d = [g[0][0], g[1][1], g[2][2], g[3][3]];
            let trivial = d.map(|z| z == ONE);
            self.for_each_quad(a, b, |amps, idx| {
                for s in 0..4 {
                    if !trivial[s] {
                        amps[idx[s]] *= d[s];
                    }
                    p[s] += amps[idx[s]].norm_sqr();
                }
            });
        } else {
            self.for_each_quad(a, b, |amps, idx| {
                let v = [amps[idx[0]], amps[idx[1]], amps[idx[2]], amps[idx[3]]];
                for s in 0..4 {
                    let out = g[s][0] * v[0] + g[s][1] * v[1] + g[s][2] * v[2] + g[s][3] * v[3];
                    amps[idx[s]] = out;
                    p[s] += out.norm_sqr();
                }
            });
        }
        p
    }

    /// Marginal probabilities of the four local basis states on slots `(a, b)`.
    pub fn pair_marginals(&self, a: usize, b: usize) -> Result<[f64; 4]> {
        self.check_pair(a, b)?;
        let (ma, mb) = (1usize << a, 1usize << b);
        let mut p = [0.0; 4];
        for (i, amp) in self.amps.iter().enumerate() {
            let s = (i & ma != 0) as usize | ((i & mb != 0) as usize) << 1;
            p[s] += amp.norm_sqr();
        }
        Ok(p)
    }

    /// Multiplies each amplitude by `factors[s]` of its local basis state on `(a, b)`.
    pub fn scale_pair(&mut self, a: usize, b: usize, factors: [f64; 4]) -> Result<()> {
        self.check_pair(a, b)?;
        self.for_each_quad(a, b, |amps, idx| {
            for s in 0..4 {
                amps[idx[s]] *= factors[s];
            }
        });
        Ok(())
    }

    /// Applies `J(outcome)` without renormalising; returns the new squared norm.
    pub fn apply_kraus_unnormalized(&mut self, a: usize, b: usize, outcome: Outcome, x: f64) -> Result<f64> {
        self.scale_pair(a, b, kraus_factors(x, outcome))?;
        Ok(self.norm_sqr())
    }

    /// In-place hit: applies `J(outcome)`, renormalises, returns the outcome weight.
    pub fn apply_kraus(&mut self, a: usize, b: usize, outcome: Outcome, x: f64) -> Result<f64> {
        let p = self.pair_marginals(a, b)?;
        let weight = outcome_weights(x, &p)[outcome.index()];
        self.hit_with_weight(a, b, outcome, x, weight)?;
        Ok(weight)
    }

    /// Hit with a precomputed outcome weight (one pass over the amplitudes).
    pub fn hit_with_weight(&mut self, a: usize, b: usize, outcome: Outcome, x: f64, weight: f64) -> Result<()> {
        if weight.is_nan() || weight < MIN_OUTCOME_WEIGHT {
            return Err(Error::ZeroProbability(weight));
        }
        let inv = 1.0 / weight.sqrt();
        let f = kraus_factors(x, outcome).map(|v| v * inv);
        self.scale_pair(a, b, f)
    }

    /// Squared amplitude for field value 1 on `slot`.
    pub fn stuff(&self, slot: usize) -> Result<f64> {
        if slot >= self.n_slots {
            return Err(Error::SlotOutOfRange {
                slot,
                n_slots: self.n_slots,
            });
        }
        let m = 1usize << slot;
        Ok(self
            .amps
            .iter()
            .enumerate()
            .filter(|(i, _)| i & m != 0)
            .map(|(_, a)| a.norm_sqr())
            .sum())
    }

    /// `|<config|state>|^2`.
    pub fn branch_weight(&self, config: FieldConfig) -> Result<f64> {
        if config.n_slots() != self.n_slots {
            return Err(Error::ConfigLength {
                expected: self.n_slots,
                got: config.n_slots(),
            });
        }
        Ok(self.amps[config.index()].norm_sqr())
    }

    /// Max elementwise distance to another state of the same size.
    pub fn max_diff(&self, other: &StateVector) -> f64 {
        self.amps
            .iter()
            .zip(&other.amps)
            .map(|(x, y)| (x - y).norm())
            .fold(0.0, f64::max)
    }
}

/// Returns `gate` applied to slots `(a, b)` of `state`.
pub fn apply_two_slot_gate(state: &StateVector, a: usize, b: usize, gate: &TwoSlotGate) -> Result<StateVector> {
    let mut out = state.clone();
    out.apply_gate(a, b, gate)?;
    Ok(out)
}

/// Returns the renormalised hit state and the outcome weight.
pub fn apply_two_slot_kraus(
    state: &StateVector,
    a: usize,
    b: usize,
    outcome: Outcome,
    x: f64,
) -> Result<(StateVector, f64)> {
    let mut out = state.clone();
    let w = out.apply_kraus(a, b, outcome, x)?;
    Ok((out, w))
}

pub fn stuff(state: &StateVector, slot: usize) -> Result<f64> {
    state.stuff(slot)
}

pub fn branch_weight(state: &StateVector, config: FieldConfig) -> Result<f64> {
    state.branch_weight(config)
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub fn random_state(n_slots: usize, seed: u64) -> StateVector {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let amps: Vec<Complex64> = (0..1usize << n_slots)
            .map(|_| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
            .collect();
        let mut s = StateVector::from_amplitudes(amps).unwrap();
        s.normalize().unwrap();
        s
    }

    /// Unitary from Gram-Schmidt on a random complex matrix.
    pub fn random_unitary(seed: u64) -> TwoSlotGate {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cols: Vec<[Complex64; 4]> = (0..4)
            .map(|_| std::array::from_fn(|_| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)))
            .collect();
        for j in 0..4 {
            for k in 0..j {
                let dot: Complex64 = (0..4).map(|i| cols[k][i].conj() * cols[j][i]).sum();
                let ck = cols[k];
                for i in 0..4 {
                    cols[j][i] -= dot * ck[i];
                }
            }
            let n = cols[j].iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            for z in cols[j].iter_mut() {
                *z /= n;
            }
        }
        let mut m = [[ZERO; 4]; 4];
        for (j, col) in cols.iter().enumerate() {
            for i in 0..4 {
                m[i][j] = col[i];
            }
        }
        TwoSlotGate(m)
    }
}

#[cfg(test)]
mod tests {
    use super::testutil::*;
    use super::*;
    use proptest::prelude::*;

    fn cfg(s: &str) -> FieldConfig {
        s.parse().unwrap()
    }

    #[test]
    fn vacuum_eigenstate() {
        let s = eigenstate(FieldConfig::zeros(4).unwrap());
        assert_eq!(s.amplitude(0), ONE);
        assert_eq!(s.norm_sqr(), 1.0);
    }

    #[test]
    fn eigenstate_index_follows_slot_bits() {
        // slots 0 and 2 occupied -> index 0b0101
        let c = cfg("1010");
        assert_eq!(c.index(), 0b0101);
        let s = eigenstate(c);
        assert_eq!(s.amplitude(0b0101), ONE);
        assert_eq!(s.norm_sqr(), 1.0);
        assert_eq!(c.to_string(), "1010");
    }

    #[test]
    fn config_parsing_errors() {
        assert!("10x1".parse::<FieldConfig>().is_err());
        assert!(FieldConfig::parse_exact("101", 4).is_err());
        assert!(FieldConfig::with_ones(4, &[4]).is_err());
    }

    #[test]
    fn superposition_weights() {
        let c1 = cfg("1000");
        let c2 = cfg("0010");
        let s = superpose(c1, c2).unwrap();
        assert!((s.branch_weight(c1).unwrap() - 0.5).abs() < 1e-15);
        assert!((s.branch_weight(c2).unwrap() - 0.5).abs() < 1e-15);
        assert!((s.norm_sqr() - 1.0).abs() < 1e-12);
        assert_eq!(superpose(c1, c1), Err(Error::IdenticalConfigs));
    }

    #[test]
    fn identity_gate_is_bit_exact() {
        let s = random_state(4, 1);
        let out = apply_two_slot_gate(&s, 1, 3, &TwoSlotGate::identity()).unwrap();
        assert_eq!(out, s);
    }

    #[test]
    fn swap_moves_particle() {
        let s = eigenstate(FieldConfig::from_index(2, 0b01).unwrap());
        let out = apply_two_slot_gate(&s, 0, 1, &TwoSlotGate::swap()).unwrap();
        assert_eq!(out.amplitude(0b10), ONE);
        assert_eq!(out.amplitude(0b01), ZERO);
    }

    #[test]
    fn parity_breaking_gate_orientation() {
        // Gate mapping local |01> (left slot only) to |11>, fixing the rest up to permutation.
        let mut m = [[ZERO; 4]; 4];
        m[3][1] = ONE;
        m[1][3] = ONE;
        m[0][0] = ONE;
        m[2][2] = ONE;
        let g = TwoSlotGate(m);
        // slot a = 3, slot b = 0; particle on slot 3 only.
        let s = eigenstate(FieldConfig::with_ones(4, &[3]).unwrap());
        let out = apply_two_slot_gate(&s, 3, 0, &g).unwrap();
        assert_eq!(out.amplitude(0b1001), ONE);
        // particle on slot b only is left alone.
        let s = eigenstate(FieldConfig::with_ones(4, &[0]).unwrap());
        let out = apply_two_slot_gate(&s, 3, 0, &g).unwrap();
        assert_eq!(out.amplitude(0b0001), ONE);
    }

    #[test]
    fn gate_matches_dense_reference() {
        // Reference: build output amplitude by explicit sum over input basis states.
        let s = random_state(5, 7);
        let dense = random_unitary(3);
        let mut block = dense;
        for (i, j) in [(0, 1), (0, 2), (0, 3), (1, 0), (2, 0), (3, 0), (1, 3), (2, 3), (3, 1), (3, 2)] {
            block.0[i][j] = ZERO;
        }
        assert!(block.is_number_preserving() && !dense.is_number_preserving());
        let mut diag = TwoSlotGate::identity();
        diag.0[2][2] = Complex64::new(0.0, 1.0);
        for g in [dense, block, diag] {
            for (a, b) in [(4, 1), (0, 3), (2, 3)] {
                let out = apply_two_slot_gate(&s, a, b, &g).unwrap();
                for i in 0..32usize {
                    let si = (i >> a & 1) | (i >> b & 1) << 1;
                    let rest = i & !(1 << a) & !(1 << b);
                    let mut acc = ZERO;
                    for sj in 0..4usize {
                        let j = rest | (sj & 1) << a | (sj >> 1) << b;
                        acc += g.0[si][sj] * s.amplitude(j);
                    }
                    assert!((acc - out.amplitude(i)).norm() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn slot_errors() {
        let s = random_state(4, 2);
        assert_eq!(
            apply_two_slot_gate(&s, 1, 1, &TwoSlotGate::identity()),
            Err(Error::SlotCollision(1))
        );
        assert!(apply_two_slot_gate(&s, 0, 4, &TwoSlotGate::identity()).is_err());
        assert!(s.stuff(4).is_err());
    }

    #[test]
    fn kraus_projector_limit() {
        let c = cfg("0110");
        let s = eigenstate(c);
        let (out, w) = apply_two_slot_kraus(&s, 1, 2, Outcome::new(true, true), 0.0).unwrap();
        assert!((w - 1.0).abs() < 1e-15);
        assert!(out.max_diff(&s) < 1e-15);
        let err = apply_two_slot_kraus(&s, 1, 2, Outcome::new(false, true), 0.0);
        assert!(matches!(err, Err(Error::ZeroProbability(_))));
    }

    #[test]
    fn kraus_identity_limit() {
        let s = random_state(4, 11);
        for o in Outcome::ALL {
            let (out, w) = apply_two_slot_kraus(&s, 0, 3, o, 1.0).unwrap();
            assert!((w - 0.25).abs() < 1e-14);
            assert!(out.max_diff(&s) < 1e-14);
        }
    }

    #[test]
    fn single_slot_probability_of_one() {
        // a|0> + b|1> on slot 0 (slot 1 empty): P(field 1) = (|a|^2 X^2 + |b|^2) / (1 + X^2).
        let (a2, b2, x) = (0.3f64, 0.7f64, 0.4f64);
        let amps = vec![
            Complex64::new(a2.sqrt(), 0.0),
            Complex64::new(0.0, b2.sqrt()),
            ZERO,
            ZERO,
        ];
        let s = StateVector::from_amplitudes(amps).unwrap();
        let expected = (a2 * x * x + b2) / (1.0 + x * x);
        // Marginalise the partner slot: outcomes (1, 0) and (1, 1).
        let w10 = apply_two_slot_kraus(&s, 0, 1, Outcome::new(true, false), x).unwrap().1;
        let w11 = apply_two_slot_kraus(&s, 0, 1, Outcome::new(true, true), x).unwrap().1;
        assert!((w10 + w11 - expected).abs() < 1e-14);
    }

    #[test]
    fn stuff_values() {
        let s = eigenstate(cfg("0100"));
        assert_eq!(s.stuff(1).unwrap(), 1.0);
        assert_eq!(s.stuff(0).unwrap(), 0.0);
        let s = superpose(cfg("0100"), cfg("0010")).unwrap();
        assert!((s.stuff(1).unwrap() - 0.5).abs() < 1e-15);
        assert!((s.stuff(2).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn branch_weights_sum_to_one() {
        let s = random_state(6, 5);
        let total: f64 = (0..64)
            .map(|i| s.branch_weight(FieldConfig::from_index(6, i).unwrap()).unwrap())
            .sum();
        assert!((total - 1.0).abs() < 1e-10);
        let s = superpose(cfg("100000"), cfg("000001")).unwrap();
        assert_eq!(s.branch_weight(cfg("010000")).unwrap(), 0.0);
    }

    #[test]
    fn diagonal_gate_preserves_stuff() {
        let d = [ONE, Complex64::i(), Complex64::i(), ONE];
        let mut m = [[ZERO; 4]; 4];
        for i in 0..4 {
            m[i][i] = d[i];
        }
        let s = random_state(4, 9);
        let out = apply_two_slot_gate(&s, 0, 1, &TwoSlotGate(m)).unwrap();
        for k in 0..4 {
            assert!((out.stuff(k).unwrap() - s.stuff(k).unwrap()).abs() < 1e-14);
        }
        // A non-diagonal unitary moves stuff.
        let out = apply_two_slot_gate(&s, 0, 1, &TwoSlotGate::swap()).unwrap();
        assert!((out.stuff(0).unwrap() - s.stuff(1).unwrap()).abs() < 1e-14);
    }

    proptest! {
        #[test]
        fn unitary_gate_preserves_norm(seed in 0u64..10_000, a in 0usize..6, off in 1usize..6) {
            let b = (a + off) % 6;
            let s = random_state(6, seed);
            let out = apply_two_slot_gate(&s, a, b, &random_unitary(seed ^ 0xabcdef)).unwrap();
            prop_assert!((out.norm_sqr() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn kraus_weights_complete(seed in 0u64..10_000, x in 0.0f64..=1.0, a in 0usize..6, off in 1usize..6) {
            let b = (a + off) % 6;
            let s = random_state(6, seed);
            let total: f64 = Outcome::ALL
                .iter()
                .map(|&o| {
                    let mut t = s.clone();
                    t.apply_kraus_unnormalized(a, b, o, x).unwrap()
                })
                .sum();
            prop_assert!((total - 1.0).abs() < 1e-10);
        }

        #[test]
        fn stuff_and_complement_sum_to_one(seed in 0u64..10_000, slot in 0usize..6) {
            let s = random_state(6, seed);
            let zero: f64 = s
                .amplitudes()
                .iter()
                .enumerate()
                .filter(|(i, _)| i >> slot & 1 == 0)
                .map(|(_, a)| a.norm_sqr())
                .sum();
            prop_assert!((s.stuff(slot).unwrap() + zero - 1.0).abs() < 1e-12);
        }

        #[test]
        fn disjoint_gates_commute(seed in 0u64..10_000) {
            let s = random_state(6, seed);
            let g1 = random_unitary(seed + 1);
            let g2 = random_unitary(seed + 2);
            let x = apply_two_slot_gate(&apply_two_slot_gate(&s, 0, 3, &g1).unwrap(), 5, 2, &g2).unwrap();
            let y = apply_two_slot_gate(&apply_two_slot_gate(&s, 5, 2, &g2).unwrap(), 0, 3, &g1).unwrap();
            prop_assert!(x.max_diff(&y) < 1e-12);
        }
    }
}
