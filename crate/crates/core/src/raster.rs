//! Cell rasters of a run and their binary PGM encoding.
//!
//! Raster row `r` holds the outgoing links of vertex row `r + 1`, so the
//! first row is the row of links just above the initial surface. Column `k`
//! is register slot `k`.

use std::fmt::Write as _;
use std::io::{self, Write};

use crate::dynamics::{unitary_stuff, TrajectoryRecord};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RasterKind {
    /// Realised field values in {0, 1}.
    Field,
    /// Stuff (probability of field value 1) in [0, 1].
    Stuff,
}

/// Which state the stuff on an event's outgoing links is read from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StuffSurface {
    /// After the local unitary, before the hit.
    PreHit,
    /// After the hit and renormalisation.
    #[default]
    PostHit,
}

impl std::str::FromStr for StuffSurface {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pre" | "pre-hit" => Ok(Self::PreHit),
            "post" | "post-hit" => Ok(Self::PostHit),
            _ => Err(Error::Parameter(format!("unknown stuff surface '{s}' (expected pre-hit or post-hit)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldRaster {
    kind: RasterKind,
    n_rows: usize,
    n_cols: usize,
    cells: Vec<f64>,
    filled: Vec<bool>,
}

impl FieldRaster {
    pub fn new(kind: RasterKind, n_rows: usize, n_cols: usize) -> Self {
        Self {
            kind,
            n_rows,
            n_cols,
            cells: vec![0.0; n_rows * n_cols],
            filled: vec![false; n_rows * n_cols],
        }
    }

    /// Raster of bits from row-major data.
    pub fn from_bits(n_rows: usize, n_cols: usize, bits: &[bool]) -> Result<Self> {
        if bits.len() != n_rows * n_cols {
            return Err(Error::Data(format!("{} bits for a {n_rows}x{n_cols} raster", bits.len())));
        }
        Ok(Self {
            kind: RasterKind::Field,
            n_rows,
            n_cols,
            cells: bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
            filled: vec![true; bits.len()],
        })
    }

    /// Realised field values of a recorded run.
    pub fn field(record: &TrajectoryRecord) -> Result<Self> {
        Self::from_events(record, RasterKind::Field, |i| {
            let o = record.events[i].outcome;
            [o.left as u8 as f64, o.right as u8 as f64]
        })
    }

    /// Stuff of a recorded run, read from the chosen state.
    pub fn stuff(record: &TrajectoryRecord, surface: StuffSurface) -> Result<Self> {
        Self::from_events(record, RasterKind::Stuff, |i| match surface {
            StuffSurface::PreHit => record.events[i].stuff_pre,
            StuffSurface::PostHit => record.events[i].stuff_post,
        })
    }

    /// Stuff under purely unitary evolution along the run's motions.
    pub fn unitary_stuff(record: &TrajectoryRecord) -> Result<Self> {
        let values = unitary_stuff(record)?;
        Self::from_events(record, RasterKind::Stuff, |i| values[i])
    }

    fn from_events(record: &TrajectoryRecord, kind: RasterKind, value: impl Fn(usize) -> [f64; 2]) -> Result<Self> {
        if record.events.len() != record.steps {
            return Err(Error::Data("record has no event log".into()));
        }
        let g = record.geometry;
        let mut raster = Self::new(kind, g.n_rows(), g.n_slots());
        for (i, ev) in record.events.iter().enumerate() {
            let row = ev.vertex.row - 1;
            let v = value(i);
            raster.set(row, ev.slots.0, v[0]);
            raster.set(row, ev.slots.1, v[1]);
        }
        Ok(raster)
    }

    fn set(&mut self, row: usize, col: usize, value: f64) {
        let i = row * self.n_cols + col;
        self.cells[i] = value;
        self.filled[i] = true;
    }

    pub fn kind(&self) -> RasterKind {
        self.kind
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.cells[row * self.n_cols + col]
    }

    pub fn is_filled(&self, row: usize, col: usize) -> bool {
        self.filled[row * self.n_cols + col]
    }

    pub fn values(&self) -> &[f64] {
        &self.cells
    }

    /// Rows whose cells are all filled, from the bottom.
    pub fn complete_rows(&self) -> usize {
        self.filled
            .chunks(self.n_cols.max(1))
            .take_while(|row| row.iter().all(|&f| f))
            .count()
    }

    /// Largest cellwise difference over cells filled in both rasters.
    pub fn max_abs_diff(&self, other: &FieldRaster) -> Result<f64> {
        self.diffs(other).map(|d| d.fold(0.0, f64::max))
    }

    /// Mean cellwise difference over cells filled in both rasters.
    pub fn mean_abs_diff(&self, other: &FieldRaster) -> Result<f64> {
        let mut n = 0usize;
        let sum: f64 = self.diffs(other)?.inspect(|_| n += 1).sum();
        Ok(if n == 0 { 0.0 } else { sum / n as f64 })
    }

    fn diffs<'a>(&'a self, other: &'a FieldRaster) -> Result<impl Iterator<Item = f64> + 'a> {
        if self.n_rows != other.n_rows || self.n_cols != other.n_cols {
            return Err(Error::Data("raster dimensions differ".into()));
        }
        Ok((0..self.cells.len())
            .filter(|&i| self.filled[i] && other.filled[i])
            .map(|i| (self.cells[i] - other.cells[i]).abs()))
    }

    /// Gray level per cell, 0 = black. Unfilled cells are white.
    pub fn gray_levels(&self) -> Vec<u8> {
        self.cells
            .iter()
            .zip(&self.filled)
            .map(|(&v, &f)| if f { gray(v) } else { 255 })
            .collect()
    }

    pub fn to_pgm(&self, header: &[(String, String)]) -> Pgm {
        let mut comments = vec![(
            "kind".to_string(),
            match self.kind {
                RasterKind::Field => "field",
                RasterKind::Stuff => "stuff",
            }
            .to_string(),
        )];
        comments.extend_from_slice(header);
        Pgm {
            width: self.n_cols,
            height: self.n_rows,
            comments,
            pixels: self.gray_levels(),
        }
    }
}

/// Darker cells for more stuff: `round(255 (1 - v))`.
pub fn gray(v: f64) -> u8 {
    (255.0 * (1.0 - v.clamp(0.0, 1.0))).round() as u8
}

/// Binary greyscale image with `# key=value` header comments.
///
/// Rows are stored top to bottom, so row 0 of the file is the latest raster row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pgm {
    pub width: usize,
    pub height: usize,
    pub comments: Vec<(String, String)>,
    /// Row-major, raster row 0 first.
    pub pixels: Vec<u8>,
}

impl Pgm {
    pub fn comment(&self, key: &str) -> Option<&str> {
        self.comments.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut head = String::from("P5\n");
        for (k, v) in &self.comments {
            let _ = writeln!(head, "# {}={}", k, v.replace('\n', " "));
        }
        let _ = write!(head, "{} {}\n255\n", self.width, self.height);
        let mut out = head.into_bytes();
        for row in (0..self.height).rev() {
            out.extend_from_slice(&self.pixels[row * self.width..(row + 1) * self.width]);
        }
        out
    }

    pub fn write_to(&self, mut w: impl Write) -> io::Result<()> {
        w.write_all(&self.to_bytes())
    }

    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Data(format!("malformed PGM: {m}"));
        let mut pos = 0usize;
        let mut comments = Vec::new();
        let mut tokens = Vec::new();
        while tokens.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos >= bytes.len() {
                return Err(bad("truncated header"));
            }
            if bytes[pos] == b'#' {
                let end = bytes[pos..].iter().position(|&b| b == b'\n').map_or(bytes.len(), |e| pos + e);
                let line = std::str::from_utf8(&bytes[pos + 1..end]).map_err(|_| bad("comment is not UTF-8"))?;
                if let Some((k, v)) = line.trim().split_once('=') {
                    comments.push((k.to_string(), v.to_string()));
                }
                pos = end;
                continue;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            tokens.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header"))?.to_string());
        }
        if tokens[0] != "P5" {
            return Err(bad("not a binary PGM"));
        }
        let width: usize = tokens[1].parse().map_err(|_| bad("width"))?;
        let height: usize = tokens[2].parse().map_err(|_| bad("height"))?;
        if tokens[3] != "255" {
            return Err(bad("maxval must be 255"));
        }
        pos += 1;
        let data = bytes.get(pos..).ok_or_else(|| bad("missing pixel data"))?;
        if data.len() != width * height {
            return Err(bad("pixel count does not match dimensions"));
        }
        let mut pixels = Vec::with_capacity(data.len());
        for row in (0..height).rev() {
            pixels.extend_from_slice(&data[row * width..(row + 1) * width]);
        }
        Ok(Self {
            width,
            height,
            comments,
            pixels,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{run_trajectory, InitialState, ModelParams, TrajectoryOptions};
    use crate::lattice::LatticeGeometry;

    fn run(x: f64, rows: usize, seed: u64) -> TrajectoryRecord {
        let g = LatticeGeometry::new(4, rows).unwrap();
        let params = ModelParams::new(0.5, x, seed).unwrap();
        let init = InitialState::Eigen("01000010".parse().unwrap());
        run_trajectory(g, params, init, &TrajectoryOptions::default()).unwrap()
    }

    #[test]
    fn field_raster_matches_events() {
        let r = run(0.4, 6, 3);
        let fi = FieldRaster::field(&r).unwrap();
        assert_eq!((fi.n_rows(), fi.n_cols()), (6, 8));
        assert_eq!(fi.complete_rows(), 6);
        for ev in &r.events {
            assert_eq!(fi.get(ev.vertex.row - 1, ev.slots.0), ev.outcome.left as u8 as f64);
            assert_eq!(fi.get(ev.vertex.row - 1, ev.slots.1), ev.outcome.right as u8 as f64);
        }
    }

    #[test]
    fn stuff_surfaces_differ_only_through_hit() {
        let r = run(1.0, 4, 1);
        let pre = FieldRaster::stuff(&r, StuffSurface::PreHit).unwrap();
        let post = FieldRaster::stuff(&r, StuffSurface::PostHit).unwrap();
        assert!(pre.max_abs_diff(&post).unwrap() < 1e-12);
        let unitary = FieldRaster::unitary_stuff(&r).unwrap();
        assert!(post.max_abs_diff(&unitary).unwrap() < 1e-12);
    }

    #[test]
    fn gray_levels() {
        assert_eq!(gray(0.0), 255);
        assert_eq!(gray(1.0), 0);
        assert_eq!(gray(0.5), 128);
        assert_eq!(gray(0.25), 191);
        let fi = FieldRaster::from_bits(1, 3, &[true, false, true]).unwrap();
        assert_eq!(fi.gray_levels(), vec![0, 255, 0]);
    }

    #[test]
    fn golden_pgm_bytes() {
        let fi = FieldRaster::from_bits(2, 3, &[true, false, false, false, true, true]).unwrap();
        let bytes = fi.to_pgm(&[("seed".into(), "7".into())]).to_bytes();
        let mut expect = b"P5\n# kind=field\n# seed=7\n3 2\n255\n".to_vec();
        expect.extend_from_slice(&[255, 0, 0, 0, 255, 255]);
        assert_eq!(bytes, expect);
    }

    #[test]
    fn pgm_round_trip_keeps_header() {
        let r = run(0.7, 5, 9);
        let si = FieldRaster::stuff(&r, StuffSurface::PostHit).unwrap();
        let pgm = si.to_pgm(&[("theta".into(), "0.5".into()), ("initial".into(), "eigen:01000010".into())]);
        let back = Pgm::parse(&pgm.to_bytes()).unwrap();
        assert_eq!(back, pgm);
        assert_eq!(back.comment("initial"), Some("eigen:01000010"));
        assert_eq!(back.comment("kind"), Some("stuff"));
    }

    #[test]
    fn malformed_pgm_rejected() {
        assert!(Pgm::parse(b"P6\n1 1\n255\n\0").is_err());
        assert!(Pgm::parse(b"P5\n2 2\n255\n\0").is_err());
        assert!(Pgm::parse(b"P5\n2").is_err());
    }

    #[test]
    fn partial_runs_leave_white_cells() {
        let g = LatticeGeometry::new(3, 4).unwrap();
        let params = ModelParams::new(0.3, 0.5, 2).unwrap();
        let opts = TrajectoryOptions {
            max_steps: Some(4),
            ..TrajectoryOptions::default()
        };
        let r = run_trajectory(g, params, InitialState::vacuum(6).unwrap(), &opts).unwrap();
        let fi = FieldRaster::field(&r).unwrap();
        let filled = (0..4).flat_map(|row| (0..6).map(move |c| (row, c))).filter(|&(r, c)| fi.is_filled(r, c)).count();
        assert_eq!(filled, 8);
        assert!(fi.complete_rows() <= 1);
    }
}
