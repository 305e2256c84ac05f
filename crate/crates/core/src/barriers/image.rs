//! Per-pixel image barriers. Images are `height × width × 3`, row-major with
//! channels innermost, so pixel `(i, j)` occupies indices
//! `3·(i·width + j) .. 3·(i·width + j) + 3`.

use serde::{Deserialize, Serialize};

use super::BarrierError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageShape {
    pub height: usize,
    pub width: usize,
}

impl ImageShape {
    pub fn dim(&self) -> usize {
        self.height * self.width * 3
    }

    pub fn pixel_base(&self, i: usize, j: usize) -> usize {
        3 * (i * self.width + j)
    }

    fn validate(&self) -> Result<(), BarrierError> {
        if self.height == 0 || self.width == 0 {
            return Err(BarrierError::InvalidParameter("image shape must be nonempty".into()));
        }
        Ok(())
    }
}

/// Rectangular region, inclusive bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PixelRegion {
    pub row_min: usize,
    pub row_max: usize,
    pub col_min: usize,
    pub col_max: usize,
}

/// `h_p(x) = e − v(p)·‖x_p − x*_p‖²` for each pixel of a rectangular region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PixelPatchParams {
    pub shape: ImageShape,
    pub region: PixelRegion,
    /// Either one RGB triple shared by every pixel, or a full
    /// `height·width·3` reference image.
    pub reference: Vec<f64>,
    pub tolerance: f64,
}

/// `h_p(x) = e − v(i)·‖x_p − x*‖²` with `v` linear in the row index over
/// rows `row_min..=row_max`, all columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColorRegionParams {
    pub shape: ImageShape,
    pub row_min: usize,
    pub row_max: usize,
    pub target: [f64; 3],
    pub v_min: f64,
    pub v_max: f64,
    pub tolerance: f64,
}

/// One compiled per-pixel constraint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelRow {
    pub base: usize,
    pub target: [f64; 3],
    pub weight: f64,
    pub tolerance: f64,
}

impl PixelRow {
    pub fn dist_sq(&self, x: &[f64]) -> f64 {
        (0..3).map(|c| (x[self.base + c] - self.target[c]).powi(2)).sum()
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.tolerance - self.weight * self.dist_sq(x)
    }

    /// The three nonzero gradient entries, for channels `base..base+3`.
    pub fn gradient(&self, x: &[f64]) -> [f64; 3] {
        [0, 1, 2].map(|c| -2.0 * self.weight * (x[self.base + c] - self.target[c]))
    }
}

fn band(extent: usize) -> usize {
    ((0.05 * extent as f64).ceil() as usize).max(1)
}

fn ramp(dist: usize, band: usize) -> f64 {
    if dist >= band {
        1.0
    } else {
        (dist + 1) as f64 / (band + 1) as f64
    }
}

fn check_tolerance(e: f64) -> Result<(), BarrierError> {
    if e.is_finite() && e > 0.0 {
        Ok(())
    } else {
        Err(BarrierError::InvalidParameter("pixel tolerance must be positive".into()))
    }
}

impl PixelPatchParams {
    pub fn validate(&self) -> Result<(), BarrierError> {
        self.shape.validate()?;
        let r = &self.region;
        if r.row_min > r.row_max
            || r.col_min > r.col_max
            || r.row_max >= self.shape.height
            || r.col_max >= self.shape.width
        {
            return Err(BarrierError::InvalidParameter("pixel region outside the image".into()));
        }
        if self.reference.len() != 3 && self.reference.len() != self.shape.dim() {
            return Err(BarrierError::InvalidParameter(format!(
                "reference must hold 3 or {} values, got {}",
                self.shape.dim(),
                self.reference.len()
            )));
        }
        if !self.reference.iter().all(|v| v.is_finite()) {
            return Err(BarrierError::InvalidParameter("reference must be finite".into()));
        }
        check_tolerance(self.tolerance)
    }

    /// Mask over the whole image (`height·width` entries): 1 in the region
    /// interior, ramping down across a boundary band of 5% of each region
    /// dimension (at least one pixel), 0 outside the region.
    pub fn mask(&self) -> Vec<f64> {
        let ImageShape { height, width } = self.shape;
        let r = &self.region;
        let (bh, bw) = (band(r.row_max - r.row_min + 1), band(r.col_max - r.col_min + 1));
        let mut v = vec![0.0; height * width];
        for i in r.row_min..=r.row_max {
            let di = (i - r.row_min).min(r.row_max - i);
            for j in r.col_min..=r.col_max {
                let dj = (j - r.col_min).min(r.col_max - j);
                v[i * width + j] = ramp(di, bh).min(ramp(dj, bw));
            }
        }
        v
    }

    pub fn rows(&self) -> Vec<PixelRow> {
        let mask = self.mask();
        let mut out = Vec::new();
        for i in 0..self.shape.height {
            for j in 0..self.shape.width {
                let weight = mask[i * self.shape.width + j];
                if weight == 0.0 {
                    continue;
                }
                let base = self.shape.pixel_base(i, j);
                let target = if self.reference.len() == 3 {
                    [self.reference[0], self.reference[1], self.reference[2]]
                } else {
                    [self.reference[base], self.reference[base + 1], self.reference[base + 2]]
                };
                out.push(PixelRow { base, target, weight, tolerance: self.tolerance });
            }
        }
        out
    }
}

impl ColorRegionParams {
    pub fn validate(&self) -> Result<(), BarrierError> {
        self.shape.validate()?;
        if self.row_min > self.row_max || self.row_max >= self.shape.height {
            return Err(BarrierError::InvalidParameter("color region rows outside the image".into()));
        }
        let in_unit = |v: f64| (0.0..=1.0).contains(&v);
        if !in_unit(self.v_min) || !in_unit(self.v_max) {
            return Err(BarrierError::InvalidParameter("mask endpoints must lie in [0, 1]".into()));
        }
        if !self.target.iter().all(|v| v.is_finite()) {
            return Err(BarrierError::InvalidParameter("target color must be finite".into()));
        }
        check_tolerance(self.tolerance)
    }

    /// Mask value for image row `i`.
    pub fn row_weight(&self, i: usize) -> f64 {
        if i < self.row_min || i > self.row_max {
            return 0.0;
        }
        if self.row_max == self.row_min {
            return self.v_min;
        }
        let s = (i - self.row_min) as f64 / (self.row_max - self.row_min) as f64;
        self.v_min + (self.v_max - self.v_min) * s
    }

    pub fn rows(&self) -> Vec<PixelRow> {
        let mut out = Vec::new();
        for i in self.row_min..=self.row_max {
            let weight = self.row_weight(i);
            if weight == 0.0 {
                continue;
            }
            for j in 0..self.shape.width {
                out.push(PixelRow {
                    base: self.shape.pixel_base(i, j),
                    target: self.target,
                    weight,
                    tolerance: self.tolerance,
                });
            }
        }
        out
    }
}
