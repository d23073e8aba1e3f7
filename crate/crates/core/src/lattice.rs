//! Periodic 1+1 null lattice, spacelike surfaces and elementary motions.
//!
//! Slot layout. The register has `2N` slots, one per vertical column of
//! link midpoints. Slot `k` sits at horizontal position `k/2` (in units of
//! the vertex spacing), vertices on even rows sit at `c + 1/4` and vertices
//! on odd rows at `c + 3/4`. Hence
//!
//! * vertex `(r, c)` with `r` even has ingoing (and outgoing) slots `(2c, 2c+1)`;
//! * vertex `(r, c)` with `r` odd has slots `(2c+1, 2c+2 mod 2N)`.
//!
//! The first slot of a vertex is its left link: the ingoing link arriving
//! from the lower left (a right-mover) and, after the motion, the outgoing
//! link leaving to the upper left (a left-mover). Crossing a vertex rewrites
//! its two slots in place, so a slot always refers to links stacked
//! vertically above each other.
//!
//! Row 0 is the row of vertices just below the initial surface. Its outgoing
//! links are the links cut by the flat surface: slot `2c` left-going and slot
//! `2c+1` right-going.

use std::fmt;

use crate::error::{Error, Result};

/// Finite-depth periodic diamond lattice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LatticeGeometry {
    n_sites: usize,
    n_rows: usize,
}

impl LatticeGeometry {
    pub fn new(n_sites: usize, n_rows: usize) -> Result<Self> {
        if n_sites < 2 {
            return Err(Error::Geometry(format!("n_sites must be >= 2, got {n_sites}")));
        }
        if n_rows < 1 {
            return Err(Error::Geometry("n_rows must be >= 1".into()));
        }
        Ok(Self { n_sites, n_rows })
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_slots(&self) -> usize {
        2 * self.n_sites
    }

    pub fn n_vertices(&self) -> usize {
        self.n_sites * self.n_rows
    }

    /// The two vertices whose outgoing links enter `v`, left one first.
    /// Row-0 predecessors lie below the initial surface.
    pub fn predecessors(&self, v: VertexId) -> [VertexId; 2] {
        let n = self.n_sites;
        let r = v.row - 1;
        if v.row % 2 == 1 {
            [VertexId::new(r, v.col), VertexId::new(r, (v.col + 1) % n)]
        } else {
            [VertexId::new(r, (v.col + n - 1) % n), VertexId::new(r, v.col)]
        }
    }

    /// The two vertices entered by the outgoing links of `v`, left one first.
    pub fn successors(&self, v: VertexId) -> [VertexId; 2] {
        let n = self.n_sites;
        let r = v.row + 1;
        if v.row % 2 == 1 {
            [VertexId::new(r, v.col), VertexId::new(r, (v.col + 1) % n)]
        } else {
            [VertexId::new(r, (v.col + n - 1) % n), VertexId::new(r, v.col)]
        }
    }

    /// Register slots `(left, right)` carrying the links of vertex `v`.
    pub fn vertex_slots(&self, v: VertexId) -> (usize, usize) {
        let m = self.n_slots();
        if v.row.is_multiple_of(2) {
            (2 * v.col, 2 * v.col + 1)
        } else {
            (2 * v.col + 1, (2 * v.col + 2) % m)
        }
    }

    /// True when `earlier` lies in the causal past of `later` (strictly).
    pub fn precedes(&self, earlier: VertexId, later: VertexId) -> bool {
        if earlier.row >= later.row {
            return false;
        }
        let n = self.n_sites as i64;
        // Horizontal positions in quarter units: 4c + 1 (even rows) or 4c + 3 (odd rows).
        let x = |v: VertexId| 4 * v.col as i64 + if v.row.is_multiple_of(2) { 1 } else { 3 };
        let dt = 2 * (later.row - earlier.row) as i64;
        let period = 4 * n;
        let dx = (x(later) - x(earlier)).rem_euclid(period);
        let dist = dx.min(period - dx);
        dist <= dt
    }

    /// True when `v` is a lattice vertex above the initial surface.
    pub fn contains(&self, v: VertexId) -> bool {
        v.row >= 1 && v.row <= self.n_rows && v.col < self.n_sites
    }
}

/// A lattice vertex; `row >= 1` counts rows above the initial surface.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VertexId {
    pub row: usize,
    pub col: usize,
}

impl VertexId {
    pub const fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }
}

impl fmt::Display for VertexId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.row, self.col)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    Left,
    Right,
}

/// The link currently cut in one register slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LinkSlot {
    pub direction: Direction,
    /// Vertex the link leaves; row 0 means the link starts below the initial surface.
    pub source: VertexId,
}

/// A spacelike surface: per-column heights plus the link cut in each slot.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Surface {
    geometry: LatticeGeometry,
    heights: Vec<usize>,
    slots: Vec<LinkSlot>,
}

/// The initial constant-time surface with every column at height 0.
pub fn flat_surface(geometry: LatticeGeometry) -> Surface {
    let slots = (0..geometry.n_slots())
        .map(|k| LinkSlot {
            direction: if k % 2 == 0 { Direction::Left } else { Direction::Right },
            source: VertexId::new(0, k / 2),
        })
        .collect();
    Surface {
        geometry,
        heights: vec![0; geometry.n_sites()],
        slots,
    }
}

impl Surface {
    pub fn geometry(&self) -> LatticeGeometry {
        self.geometry
    }

    pub fn heights(&self) -> &[usize] {
        &self.heights
    }

    pub fn slots(&self) -> &[LinkSlot] {
        &self.slots
    }

    /// Number of vertices crossed since the initial surface.
    pub fn crossed(&self) -> usize {
        self.heights.iter().sum()
    }

    pub fn is_complete(&self) -> bool {
        self.heights.iter().all(|&h| h >= self.geometry.n_rows())
    }

    /// True when `v` has already been crossed by this surface.
    pub fn has_crossed(&self, v: VertexId) -> bool {
        v.col < self.heights.len() && v.row <= self.heights[v.col]
    }

    pub fn is_eligible(&self, v: VertexId) -> bool {
        if !self.geometry.contains(v) || self.heights[v.col] + 1 != v.row {
            return false;
        }
        if v.row == 1 {
            return true;
        }
        let [left, right] = self.geometry.predecessors(v);
        self.has_crossed(left) && self.has_crossed(right)
    }

    /// Vertices just above the surface whose two ingoing links are both cut, ordered by column.
    pub fn eligible_vertices(&self) -> Vec<VertexId> {
        let mut out = Vec::with_capacity(self.heights.len());
        self.eligible_into(&mut out);
        out
    }

    /// Allocation-free variant of [`Surface::eligible_vertices`].
    pub fn eligible_into(&self, out: &mut Vec<VertexId>) {
        out.clear();
        for (col, &h) in self.heights.iter().enumerate() {
            let v = VertexId::new(h + 1, col);
            if self.is_eligible(v) {
                out.push(v);
            }
        }
    }

    /// Slots `(left, right)` holding the two ingoing links of an eligible vertex.
    pub fn ingoing_slots(&self, v: VertexId) -> Result<(usize, usize)> {
        if !self.is_eligible(v) {
            return Err(Error::NotEligible(v));
        }
        Ok(self.geometry.vertex_slots(v))
    }

    /// In-place elementary motion across `v`.
    pub fn advance(&mut self, v: VertexId) -> Result<(usize, usize)> {
        let (a, b) = self.ingoing_slots(v)?;
        self.heights[v.col] += 1;
        self.slots[a] = LinkSlot {
            direction: Direction::Left,
            source: v,
        };
        self.slots[b] = LinkSlot {
            direction: Direction::Right,
            source: v,
        };
        Ok((a, b))
    }
}

/// Returns the surface obtained by the elementary motion across `v`.
pub fn apply_motion(surface: &Surface, v: VertexId) -> Result<Surface> {
    let mut next = surface.clone();
    next.advance(v)?;
    Ok(next)
}

pub fn eligible_vertices(surface: &Surface) -> Vec<VertexId> {
    surface.eligible_vertices()
}

pub fn ingoing_slots(v: VertexId, surface: &Surface) -> Result<(usize, usize)> {
    surface.ingoing_slots(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn geom(n: usize, rows: usize) -> LatticeGeometry {
        LatticeGeometry::new(n, rows).unwrap()
    }

    // Independent adjacency check: a vertex is eligible when the links
    // arriving from its lower-left and lower-right neighbours are cut.
    fn eligible_by_links(s: &Surface) -> Vec<VertexId> {
        let g = s.geometry();
        let mut out = Vec::new();
        for row in 1..=g.n_rows() {
            for col in 0..g.n_sites() {
                let v = VertexId::new(row, col);
                if s.has_crossed(v) {
                    continue;
                }
                let (a, b) = g.vertex_slots(v);
                let [pl, pr] = g.predecessors(v);
                let left_ok = s.slots()[a].source == pl && s.slots()[a].direction == Direction::Right;
                let right_ok = s.slots()[b].source == pr && s.slots()[b].direction == Direction::Left;
                if left_ok && right_ok {
                    out.push(v);
                }
            }
        }
        out.sort_by_key(|v| v.col);
        out
    }

    #[test]
    fn geometry_rejects_degenerate_sizes() {
        assert!(LatticeGeometry::new(1, 4).is_err());
        assert!(LatticeGeometry::new(4, 0).is_err());
    }

    #[test]
    fn flat_surface_counts() {
        let s = flat_surface(geom(8, 4));
        assert_eq!(s.slots().len(), 16);
        assert!(s.heights().iter().all(|&h| h == 0));

        let s = flat_surface(geom(2, 3));
        assert_eq!(s.slots().len(), 4);
        let left = s.slots().iter().filter(|l| l.direction == Direction::Left).count();
        assert_eq!(left, 2);
    }

    #[test]
    fn flat_surface_has_n_eligible() {
        for n in 2..=10 {
            let s = flat_surface(geom(n, 3));
            assert_eq!(s.eligible_vertices().len(), n);
            assert_eq!(s.eligible_vertices(), eligible_by_links(&s));
        }
    }

    #[test]
    fn one_motion_removes_one_eligible() {
        let g = geom(4, 3);
        for c in 0..4 {
            let s = apply_motion(&flat_surface(g), VertexId::new(1, c)).unwrap();
            assert_eq!(s.eligible_vertices().len(), 3);
            assert_eq!(s.eligible_vertices(), eligible_by_links(&s));
        }
    }

    #[test]
    fn full_row_restores_n_eligible() {
        let g = geom(5, 4);
        let mut s = flat_surface(g);
        for c in 0..5 {
            s.advance(VertexId::new(1, c)).unwrap();
        }
        let e = s.eligible_vertices();
        assert_eq!(e.len(), 5);
        assert!(e.iter().all(|v| v.row == 2));
    }

    #[test]
    fn first_motion_on_two_sites() {
        let g = geom(2, 2);
        let s = apply_motion(&flat_surface(g), VertexId::new(1, 0)).unwrap();
        assert_eq!(s.heights(), &[1, 0]);
    }

    #[test]
    fn ingoing_slots_follow_layout() {
        let g = geom(2, 2);
        let s = flat_surface(g);
        assert_eq!(s.ingoing_slots(VertexId::new(1, 0)).unwrap(), (1, 2));
        assert_eq!(s.ingoing_slots(VertexId::new(1, 1)).unwrap(), (3, 0));
        let (a, b) = s.ingoing_slots(VertexId::new(1, 0)).unwrap();
        assert_ne!(a, b);
        let s2 = apply_motion(&s, VertexId::new(1, 0)).unwrap();
        assert_eq!(s2.slots()[a].source, VertexId::new(1, 0));
        assert_eq!(s2.slots()[b].source, VertexId::new(1, 0));
        assert_eq!(s2.slots()[a].direction, Direction::Left);
        assert_eq!(s2.slots()[b].direction, Direction::Right);
    }

    #[test]
    fn ineligible_vertex_is_rejected() {
        let g = geom(3, 3);
        let s = flat_surface(g);
        assert_eq!(
            apply_motion(&s, VertexId::new(2, 0)),
            Err(Error::NotEligible(VertexId::new(2, 0)))
        );
        assert!(s.ingoing_slots(VertexId::new(2, 1)).is_err());
        assert!(apply_motion(&s, VertexId::new(1, 7)).is_err());
        let done = apply_motion(&s, VertexId::new(1, 0)).unwrap();
        assert!(apply_motion(&done, VertexId::new(1, 0)).is_err());
    }

    #[test]
    fn row_order_independence_two_sites() {
        let g = geom(2, 2);
        let s = flat_surface(g);
        let ab = apply_motion(&apply_motion(&s, VertexId::new(1, 0)).unwrap(), VertexId::new(1, 1)).unwrap();
        let ba = apply_motion(&apply_motion(&s, VertexId::new(1, 1)).unwrap(), VertexId::new(1, 0)).unwrap();
        assert_eq!(ab, ba);
    }

    fn all_orders_of_rows(n: usize, rows: usize) {
        // Explore every run; surfaces with the same crossed set must coincide.
        let g = geom(n, rows);
        let mut seen: std::collections::HashMap<Vec<usize>, Surface> = Default::default();
        let mut stack = vec![flat_surface(g)];
        let mut visited = HashSet::new();
        while let Some(s) = stack.pop() {
            if !visited.insert(s.clone()) {
                continue;
            }
            if let Some(prev) = seen.get(s.heights()) {
                assert_eq!(prev, &s);
            } else {
                seen.insert(s.heights().to_vec(), s.clone());
            }
            let e = s.eligible_vertices();
            let unique: HashSet<_> = e.iter().collect();
            assert_eq!(unique.len(), e.len());
            assert_eq!(e, eligible_by_links(&s));
            let left = s.slots().iter().filter(|l| l.direction == Direction::Left).count();
            assert_eq!(left, n);
            // Achronal: the top vertex of every column has both predecessors crossed.
            for (col, &h) in s.heights().iter().enumerate() {
                if h >= 2 {
                    for p in g.predecessors(VertexId::new(h, col)) {
                        assert!(s.has_crossed(p), "{:?}", s.heights());
                    }
                }
            }
            for v in e {
                stack.push(apply_motion(&s, v).unwrap());
            }
        }
        // The completed lattice is reached.
        assert!(seen.contains_key(&vec![rows; n]));
    }

    #[test]
    fn exhaustive_order_independence() {
        all_orders_of_rows(2, 2);
        all_orders_of_rows(3, 2);
        all_orders_of_rows(3, 3);
    }

    #[test]
    fn spacelike_motions_commute() {
        let g = geom(6, 3);
        let s = flat_surface(g);
        let u = VertexId::new(1, 0);
        let w = VertexId::new(1, 3);
        assert!(!g.precedes(u, w) && !g.precedes(w, u));
        let uw = apply_motion(&apply_motion(&s, u).unwrap(), w).unwrap();
        let wu = apply_motion(&apply_motion(&s, w).unwrap(), u).unwrap();
        assert_eq!(uw, wu);
    }

    #[test]
    fn crossed_set_is_a_stem() {
        // Every crossed vertex has its predecessors crossed too.
        let g = geom(4, 5);
        let mut s = flat_surface(g);
        let mut k = 0usize;
        while let Some(&v) = s.eligible_vertices().get(k % 3) {
            s.advance(v).unwrap();
            k += 7;
            if s.is_complete() {
                break;
            }
            for col in 0..4 {
                for row in 2..=s.heights()[col] {
                    for p in g.predecessors(VertexId::new(row, col)) {
                        assert!(s.has_crossed(p));
                    }
                }
            }
        }
    }

    #[test]
    fn precedes_matches_predecessor_closure() {
        let g = geom(4, 4);
        for row in 1..=4 {
            for col in 0..4 {
                let v = VertexId::new(row, col);
                // Transitive closure of the direct predecessor relation.
                let mut past = HashSet::new();
                let mut frontier = vec![v];
                while let Some(x) = frontier.pop() {
                    if x.row <= 1 {
                        continue;
                    }
                    for p in g.predecessors(x) {
                        if past.insert(p) {
                            frontier.push(p);
                        }
                    }
                }
                for r in 1..=4 {
                    for c in 0..4 {
                        let u = VertexId::new(r, c);
                        assert_eq!(g.precedes(u, v), past.contains(&u), "{u} vs {v}");
                    }
                }
            }
        }
    }

    #[test]
    fn successors_invert_predecessors() {
        let g = geom(5, 6);
        for row in 1..6 {
            for col in 0..5 {
                let v = VertexId::new(row, col);
                for s in g.successors(v) {
                    assert!(g.predecessors(s).contains(&v));
                }
            }
        }
    }
}
