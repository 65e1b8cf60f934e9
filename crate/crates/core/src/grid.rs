//! Regular cell-centered meshes and per-cell scalar fields.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point in the plane.
pub type Point = [f64; 2];

/// Regular `nx x ny` mesh over `[0, lx] x [0, ly]`. Cell `(i, j)` has index
/// `j * nx + i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid2D {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
}

/// Orientation of a face normal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
}

/// An interior face between cell `lo` and its neighbour `hi` in the positive
/// `axis` direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Face {
    pub lo: usize,
    pub hi: usize,
    pub axis: Axis,
    /// Distance between the two centroids.
    pub spacing: f64,
    /// Length of the face.
    pub length: f64,
}

/// The four boundary edges of the rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Edge {
    /// `x1 = 0`
    West,
    /// `x1 = lx`
    East,
    /// `x2 = 0`
    South,
    /// `x2 = ly`
    North,
}

impl Edge {
    pub const ALL: [Edge; 4] = [Edge::West, Edge::East, Edge::South, Edge::North];

    pub fn name(self) -> &'static str {
        match self {
            Edge::West => "west",
            Edge::East => "east",
            Edge::South => "south",
            Edge::North => "north",
        }
    }
}

impl Grid2D {
    pub fn new(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<Self> {
        if nx == 0 || ny == 0 || !(lx > 0.0 && lx.is_finite()) || !(ly > 0.0 && ly.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "grid needs positive cell counts and extents, got {nx}x{ny} over {lx}x{ly}"
            )));
        }
        Ok(Self { nx, ny, lx, ly })
    }

    /// The unit square split into `n x n` cells.
    pub fn unit_square(n: usize) -> Self {
        Self::new(n, n, 1.0, 1.0).expect("positive cell count")
    }

    pub fn validate(&self) -> Result<()> {
        Self::new(self.nx, self.ny, self.lx, self.ly).map(|_| ())
    }

    pub fn n_cells(&self) -> usize {
        self.nx * self.ny
    }

    pub fn dx(&self) -> f64 {
        self.lx / self.nx as f64
    }

    pub fn dy(&self) -> f64 {
        self.ly / self.ny as f64
    }

    pub fn cell_area(&self) -> f64 {
        self.dx() * self.dy()
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.nx && j < self.ny);
        j * self.nx + i
    }

    pub fn ij(&self, cell: usize) -> (usize, usize) {
        (cell % self.nx, cell / self.nx)
    }

    pub fn centroid(&self, cell: usize) -> Point {
        let (i, j) = self.ij(cell);
        [
            (i as f64 + 0.5) * self.lx / self.nx as f64,
            (j as f64 + 0.5) * self.ly / self.ny as f64,
        ]
    }

    pub fn centroids(&self) -> Vec<Point> {
        (0..self.n_cells()).map(|c| self.centroid(c)).collect()
    }

    /// Cell containing `p`; points on the outer boundary belong to the
    /// adjacent cell.
    pub fn locate(&self, p: Point) -> Option<usize> {
        let inside = |v: f64, l: f64| (0.0..=l).contains(&v);
        if !(inside(p[0], self.lx) && inside(p[1], self.ly)) {
            return None;
        }
        let i = ((p[0] / self.dx()) as usize).min(self.nx - 1);
        let j = ((p[1] / self.dy()) as usize).min(self.ny - 1);
        Some(self.index(i, j))
    }

    /// Interior faces: all x-normal faces (row by row), then all y-normal faces.
    /// There are `2 nx ny - nx - ny` of them.
    pub fn faces(&self) -> Vec<Face> {
        let (dx, dy) = (self.dx(), self.dy());
        let mut faces = Vec::with_capacity(2 * self.n_cells() - self.nx - self.ny);
        for j in 0..self.ny {
            for i in 0..self.nx - 1 {
                faces.push(Face {
                    lo: self.index(i, j),
                    hi: self.index(i + 1, j),
                    axis: Axis::X,
                    spacing: dx,
                    length: dy,
                });
            }
        }
        for j in 0..self.ny - 1 {
            for i in 0..self.nx {
                faces.push(Face {
                    lo: self.index(i, j),
                    hi: self.index(i, j + 1),
                    axis: Axis::Y,
                    spacing: dy,
                    length: dx,
                });
            }
        }
        faces
    }

    /// Cells adjacent to `edge`, in increasing coordinate order along it.
    pub fn edge_cells(&self, edge: Edge) -> Vec<usize> {
        match edge {
            Edge::West => (0..self.ny).map(|j| self.index(0, j)).collect(),
            Edge::East => (0..self.ny).map(|j| self.index(self.nx - 1, j)).collect(),
            Edge::South => (0..self.nx).map(|i| self.index(i, 0)).collect(),
            Edge::North => (0..self.nx).map(|i| self.index(i, self.ny - 1)).collect(),
        }
    }

    /// Length of a boundary face on `edge` and the centroid-to-edge distance.
    pub fn edge_face(&self, edge: Edge) -> (f64, f64) {
        match edge {
            Edge::West | Edge::East => (self.dy(), 0.5 * self.dx()),
            Edge::South | Edge::North => (self.dx(), 0.5 * self.dy()),
        }
    }

    /// `n` evenly spaced points on `edge` (at the midpoints of `n` equal segments).
    pub fn edge_points(&self, edge: Edge, n: usize) -> Vec<Point> {
        (0..n)
            .map(|k| {
                let s = (k as f64 + 0.5) / n as f64;
                match edge {
                    Edge::West => [0.0, s * self.ly],
                    Edge::East => [self.lx, s * self.ly],
                    Edge::South => [s * self.lx, 0.0],
                    Edge::North => [s * self.lx, self.ly],
                }
            })
            .collect()
    }

    /// Whether `p` lies on `edge` (to a relative tolerance of 1e-12).
    pub fn on_edge(&self, p: Point, edge: Edge) -> bool {
        let tol_x = 1e-12 * self.lx;
        let tol_y = 1e-12 * self.ly;
        let along_x = (-tol_x..=self.lx + tol_x).contains(&p[0]);
        let along_y = (-tol_y..=self.ly + tol_y).contains(&p[1]);
        match edge {
            Edge::West => p[0].abs() <= tol_x && along_y,
            Edge::East => (p[0] - self.lx).abs() <= tol_x && along_y,
            Edge::South => p[1].abs() <= tol_y && along_x,
            Edge::North => (p[1] - self.ly).abs() <= tol_y && along_x,
        }
    }

    pub fn contains(&self, p: Point) -> bool {
        (0.0..=self.lx).contains(&p[0]) && (0.0..=self.ly).contains(&p[1])
    }
}

/// One scalar per grid cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub grid: Grid2D,
    pub values: Vec<f64>,
}

impl Field {
    pub fn new(grid: Grid2D, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_cells() {
            return Err(Error::DimensionMismatch {
                expected: grid.n_cells(),
                got: values.len(),
            });
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: Grid2D, value: f64) -> Self {
        Self {
            grid,
            values: vec![value; grid.n_cells()],
        }
    }

    /// Samples `f` at every centroid.
    pub fn from_fn(grid: Grid2D, f: impl Fn(Point) -> f64) -> Self {
        let values = grid.centroids().into_iter().map(f).collect();
        Self { grid, values }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.index(i, j)]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Text form: a header `nx ny Lx Ly`, then one value per line with `j`
    /// outer and `i` inner, in 17 significant digits.
    pub fn to_text(&self) -> String {
        let g = &self.grid;
        let mut out = format!("{} {} {:.16e} {:.16e}\n", g.nx, g.ny, g.lx, g.ly);
        for v in &self.values {
            writeln!(out, "{v:.16e}").expect("writing to a String cannot fail");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut tokens = text.split_whitespace();
        let mut next = |what: &str| {
            tokens
                .next()
                .ok_or_else(|| Error::Parse(format!("field file ended before {what}")))
        };
        let nx = parse_usize(next("nx")?)?;
        let ny = parse_usize(next("ny")?)?;
        let lx = parse_f64(next("Lx")?)?;
        let ly = parse_f64(next("Ly")?)?;
        let grid = Grid2D::new(nx, ny, lx, ly)?;
        let values = (0..grid.n_cells())
            .map(|_| next("the last value").and_then(parse_f64))
            .collect::<Result<Vec<_>>>()?;
        if tokens.next().is_some() {
            return Err(Error::Parse("field file has trailing values".into()));
        }
        Self::new(grid, values)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

pub(crate) fn parse_f64(s: &str) -> Result<f64> {
    s.parse()
        .map_err(|_| Error::Parse(format!("`{s}` is not a number")))
}

pub(crate) fn parse_usize(s: &str) -> Result<usize> {
    s.parse()
        .map_err(|_| Error::Parse(format!("`{s}` is not a non-negative integer")))
}
