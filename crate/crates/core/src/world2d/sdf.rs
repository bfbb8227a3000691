use serde::{Deserialize, Serialize};

use super::geom::Vec2;
use crate::error::{Error, Result};

/// Row-major grid of signed distances (positive in free space).
///
/// Sample `(i, j)` sits at `origin + cell_size * (i, j)`; row `j` holds the
/// `width` samples with that y coordinate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGrid")]
pub struct SdfGrid {
    pub origin: Vec2,
    pub cell_size: f64,
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

#[derive(Deserialize)]
struct RawGrid {
    origin: Vec2,
    cell_size: f64,
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl TryFrom<RawGrid> for SdfGrid {
    type Error = Error;
    fn try_from(r: RawGrid) -> Result<Self> {
        SdfGrid::new(r.origin, r.cell_size, r.width, r.height, r.values)
    }
}

impl SdfGrid {
    pub fn new(origin: Vec2, cell_size: f64, width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if width < 2 || height < 2 {
            return Err(Error::Config(format!(
                "SDF grid must be at least 2x2, got {width}x{height}"
            )));
        }
        if !(cell_size > 0.0 && cell_size.is_finite()) || !origin.is_finite() {
            return Err(Error::Config(
                "SDF grid needs a finite origin and positive cell size".into(),
            ));
        }
        if values.len() != width * height {
            return Err(Error::Config(format!(
                "SDF grid has {} values, expected {}",
                values.len(),
                width * height
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("SDF grid values must be finite".into()));
        }
        Ok(Self {
            origin,
            cell_size,
            width,
            height,
            values,
        })
    }

    /// Samples an analytic field at every grid point.
    pub fn from_fn(origin: Vec2, cell_size: f64, width: usize, height: usize, f: impl Fn(Vec2) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(width * height);
        for j in 0..height {
            for i in 0..width {
                values.push(f(origin + Vec2::new(i as f64, j as f64) * cell_size));
            }
        }
        Self::new(origin, cell_size, width, height, values)
    }

    pub fn constant(value: f64) -> Self {
        Self::new(Vec2::new(-1.0, -1.0), 1.0, 3, 3, vec![value; 9]).expect("valid constant grid")
    }

    fn at(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.width + i]
    }

    /// Bilinear interpolation; coordinates outside the grid clamp to the
    /// border.
    pub fn query(&self, p: Vec2) -> f64 {
        let fx = ((p.x - self.origin.x) / self.cell_size).clamp(0.0, (self.width - 1) as f64);
        let fy = ((p.y - self.origin.y) / self.cell_size).clamp(0.0, (self.height - 1) as f64);
        let i = (fx.floor() as usize).min(self.width - 2);
        let j = (fy.floor() as usize).min(self.height - 2);
        let tx = fx - i as f64;
        let ty = fy - j as f64;
        let v00 = self.at(i, j);
        let v10 = self.at(i + 1, j);
        let v01 = self.at(i, j + 1);
        let v11 = self.at(i + 1, j + 1);
        let bottom = v00 + (v10 - v00) * tx;
        let top = v01 + (v11 - v01) * tx;
        bottom + (top - bottom) * ty
    }

    /// Central-difference gradient with half-cell spacing.
    pub fn gradient(&self, p: Vec2) -> Vec2 {
        let h = 0.5 * self.cell_size;
        let dx = self.query(p + Vec2::new(h, 0.0)) - self.query(p - Vec2::new(h, 0.0));
        let dy = self.query(p + Vec2::new(0.0, h)) - self.query(p - Vec2::new(0.0, h));
        Vec2::new(dx, dy) * (0.5 / h)
    }

    /// Mean-pooled `n x n` summary of the grid, used as a global scene
    /// feature.
    pub fn pooled_feature(&self, n: usize) -> Vec<f64> {
        let mut sums = vec![0.0; n * n];
        let mut counts = vec![0usize; n * n];
        for j in 0..self.height {
            let bj = (j * n / self.height).min(n - 1);
            for i in 0..self.width {
                let bi = (i * n / self.width).min(n - 1);
                sums[bj * n + bi] += self.at(i, j);
                counts[bj * n + bi] += 1;
            }
        }
        sums.iter()
            .zip(&counts)
            .map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
            .collect()
    }
}

/// Analytic obstacle primitive.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Shape {
    /// Axis-aligned box.
    Box {
        min: Vec2,
        max: Vec2,
    },
    Disk {
        center: Vec2,
        radius: f64,
    },
}

impl Shape {
    /// Signed distance to the shape boundary, positive outside.
    pub fn distance(&self, p: Vec2) -> f64 {
        match self {
            Shape::Box { min, max } => {
                let c = (*min + *max) * 0.5;
                let half = (*max - *min) * 0.5;
                let dx = (p.x - c.x).abs() - half.x;
                let dy = (p.y - c.y).abs() - half.y;
                let outside = Vec2::new(dx.max(0.0), dy.max(0.0)).norm();
                outside + dx.max(dy).min(0.0)
            }
            Shape::Disk { center, radius } => p.distance(*center) - radius,
        }
    }
}

/// Signed distance of the scene: free space is inside the unit square and
/// outside every obstacle.
pub fn scene_distance(obstacles: &[Shape], p: Vec2) -> f64 {
    let walls = (1.0 - p.x.abs()).min(1.0 - p.y.abs());
    obstacles.iter().fold(walls, |d, s| d.min(s.distance(p)))
}

/// Rasterizes a scene on a grid slightly larger than the workspace so
/// clamped out-of-bounds queries still read as occupied.
pub fn rasterize(obstacles: &[Shape], resolution: usize) -> Result<SdfGrid> {
    let extent = 1.1;
    let cell = 2.0 * extent / (resolution - 1) as f64;
    SdfGrid::from_fn(Vec2::new(-extent, -extent), cell, resolution, resolution, |p| {
        scene_distance(obstacles, p)
    })
}
