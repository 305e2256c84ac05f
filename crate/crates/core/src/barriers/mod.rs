//! Safe sets `C = {x : h(x) ≥ 0}` and their analytic gradients.
//!
//! A [`BarrierSpec`] is the serialisable description; [`Barrier`] is the
//! compiled form, a flat list of scalar rows. Composite specs (boxes,
//! per-pixel masks, intersections) expand into several rows, and every row
//! is enforced on its own.

mod image;
mod physics;

pub use image::{ColorRegionParams, ImageShape, PixelPatchParams, PixelRegion, PixelRow};
pub use physics::{PhysicsResidualParams, SmoothnessParams};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type StateVector = Vec<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BarrierError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid barrier parameter: {0}")]
    InvalidParameter(String),
}

/// Sparse vector in coordinate form. Indices are strictly increasing.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseRow {
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseRow {
    pub fn dense(values: Vec<f64>) -> Self {
        Self { indices: (0..values.len()).collect(), values }
    }

    pub fn dot(&self, x: &[f64]) -> f64 {
        self.indices.iter().zip(&self.values).map(|(&i, v)| v * x[i]).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    /// `y += alpha · self`.
    pub fn axpy(&self, alpha: f64, y: &mut [f64]) {
        for (&i, v) in self.indices.iter().zip(&self.values) {
            y[i] += alpha * v;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for v in &mut self.values {
            *v *= alpha;
        }
    }

    pub fn to_dense(&self, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n];
        self.axpy(1.0, &mut out);
        out
    }
}

/// `h(x) = w·x − offset`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HalfspaceParams {
    pub normal: Vec<f64>,
    pub offset: f64,
}

/// `h(x) = r² − ‖x − c‖²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BallParams {
    pub center: Vec<f64>,
    pub radius: f64,
}

/// One row `x_i − lower_i` and one row `upper_i − x_i` per coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxParams {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BarrierSpec {
    Halfspace(HalfspaceParams),
    Ball(BallParams),
    Box(BoxParams),
    PhysicsResidual(PhysicsResidualParams),
    PixelPatch(PixelPatchParams),
    ColorRegion(ColorRegionParams),
    Smoothness(SmoothnessParams),
    Intersection { members: Vec<BarrierSpec> },
}

impl BarrierSpec {
    pub fn dim(&self) -> Result<usize, BarrierError> {
        Ok(match self {
            BarrierSpec::Halfspace(p) => p.normal.len(),
            BarrierSpec::Ball(p) => p.center.len(),
            BarrierSpec::Box(p) => p.lower.len(),
            BarrierSpec::PhysicsResidual(p) => p.dim(),
            BarrierSpec::PixelPatch(p) => p.shape.dim(),
            BarrierSpec::ColorRegion(p) => p.shape.dim(),
            BarrierSpec::Smoothness(p) => p.dim(),
            BarrierSpec::Intersection { members } => {
                let first = members
                    .first()
                    .ok_or_else(|| BarrierError::InvalidParameter("intersection needs at least one member".into()))?
                    .dim()?;
                for m in members {
                    let d = m.dim()?;
                    if d != first {
                        return Err(BarrierError::DimensionMismatch { expected: first, got: d });
                    }
                }
                first
            }
        })
    }

    pub fn compile(&self) -> Result<Barrier, BarrierError> {
        Barrier::new(self)
    }
}

/// A single scalar constraint `h_j(x) ≥ 0`.
#[derive(Debug, Clone, PartialEq)]
pub enum BarrierRow {
    Linear { normal: SparseRow, offset: f64 },
    Ball { center: Vec<f64>, radius_sq: f64 },
    Pixel(PixelRow),
    Physics(PhysicsResidualParams),
    Smoothness(SmoothnessParams),
}

impl BarrierRow {
    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            BarrierRow::Linear { normal, offset } => normal.dot(x) - offset,
            BarrierRow::Ball { center, radius_sq } => {
                radius_sq - x.iter().zip(center).map(|(a, c)| (a - c) * (a - c)).sum::<f64>()
            }
            BarrierRow::Pixel(p) => p.value(x),
            BarrierRow::Physics(p) => p.value(x),
            BarrierRow::Smoothness(p) => p.value(x),
        }
    }

    pub fn gradient(&self, x: &[f64]) -> SparseRow {
        match self {
            BarrierRow::Linear { normal, .. } => normal.clone(),
            BarrierRow::Ball { center, .. } => {
                SparseRow::dense(x.iter().zip(center).map(|(a, c)| -2.0 * (a - c)).collect())
            }
            BarrierRow::Pixel(p) => {
                SparseRow { indices: vec![p.base, p.base + 1, p.base + 2], values: p.gradient(x).to_vec() }
            }
            BarrierRow::Physics(p) => SparseRow::dense(p.gradient(x)),
            BarrierRow::Smoothness(p) => SparseRow::dense(p.gradient(x)),
        }
    }

    /// Coordinates the row can depend on.
    fn support(&self, n: usize) -> Vec<usize> {
        match self {
            BarrierRow::Linear { normal, .. } => normal.indices.clone(),
            BarrierRow::Pixel(p) => vec![p.base, p.base + 1, p.base + 2],
            _ => (0..n).collect(),
        }
    }
}

/// Compiled barrier: a list of rows over `R^dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Barrier {
    dim: usize,
    rows: Vec<BarrierRow>,
    supports: Vec<Vec<usize>>,
}

fn check_finite(v: &[f64], what: &str) -> Result<(), BarrierError> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(BarrierError::InvalidParameter(format!("{what} must be finite")))
    }
}

fn compile_into(spec: &BarrierSpec, rows: &mut Vec<BarrierRow>) -> Result<(), BarrierError> {
    match spec {
        BarrierSpec::Halfspace(p) => {
            check_finite(&p.normal, "halfspace normal")?;
            check_finite(&[p.offset], "halfspace offset")?;
            if p.normal.iter().all(|&w| w == 0.0) {
                return Err(BarrierError::InvalidParameter("halfspace normal must be nonzero".into()));
            }
            let (indices, values) =
                p.normal.iter().enumerate().filter(|(_, &w)| w != 0.0).map(|(i, &w)| (i, w)).unzip();
            rows.push(BarrierRow::Linear { normal: SparseRow { indices, values }, offset: p.offset });
        }
        BarrierSpec::Ball(p) => {
            check_finite(&p.center, "ball center")?;
            if !(p.radius.is_finite() && p.radius > 0.0) {
                return Err(BarrierError::InvalidParameter("ball radius must be positive".into()));
            }
            rows.push(BarrierRow::Ball { center: p.center.clone(), radius_sq: p.radius * p.radius });
        }
        BarrierSpec::Box(p) => {
            check_finite(&p.lower, "box lower bound")?;
            check_finite(&p.upper, "box upper bound")?;
            if p.lower.len() != p.upper.len() {
                return Err(BarrierError::DimensionMismatch { expected: p.lower.len(), got: p.upper.len() });
            }
            if p.lower.is_empty() || p.lower.iter().zip(&p.upper).any(|(l, u)| l > u) {
                return Err(BarrierError::InvalidParameter("box needs lower <= upper".into()));
            }
            for (i, (&l, &u)) in p.lower.iter().zip(&p.upper).enumerate() {
                rows.push(BarrierRow::Linear { normal: SparseRow { indices: vec![i], values: vec![1.0] }, offset: l });
                rows.push(BarrierRow::Linear {
                    normal: SparseRow { indices: vec![i], values: vec![-1.0] },
                    offset: -u,
                });
            }
        }
        BarrierSpec::PhysicsResidual(p) => {
            p.validate()?;
            rows.push(BarrierRow::Physics(*p));
        }
        BarrierSpec::Smoothness(p) => {
            p.validate()?;
            rows.push(BarrierRow::Smoothness(*p));
        }
        BarrierSpec::PixelPatch(p) => {
            p.validate()?;
            rows.extend(p.rows().into_iter().map(BarrierRow::Pixel));
        }
        BarrierSpec::ColorRegion(p) => {
            p.validate()?;
            rows.extend(p.rows().into_iter().map(BarrierRow::Pixel));
        }
        BarrierSpec::Intersection { members } => {
            for m in members {
                compile_into(m, rows)?;
            }
        }
    }
    Ok(())
}

impl Barrier {
    pub fn new(spec: &BarrierSpec) -> Result<Self, BarrierError> {
        let dim = spec.dim()?;
        if dim == 0 {
            return Err(BarrierError::InvalidParameter("barrier dimension must be positive".into()));
        }
        let mut rows = Vec::new();
        compile_into(spec, &mut rows)?;
        if rows.is_empty() {
            return Err(BarrierError::InvalidParameter("barrier has no active constraints".into()));
        }
        let supports = rows.iter().map(|r| r.support(dim)).collect();
        Ok(Self { dim, rows, supports })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[BarrierRow] {
        &self.rows
    }

    pub fn supports(&self) -> &[Vec<usize>] {
        &self.supports
    }

    /// True when no two rows share a coordinate.
    pub fn has_disjoint_supports(&self) -> bool {
        let mut seen = vec![false; self.dim];
        for s in &self.supports {
            for &i in s {
                if seen[i] {
                    return false;
                }
                seen[i] = true;
            }
        }
        true
    }

    fn check(&self, x: &[f64]) -> Result<(), BarrierError> {
        if x.len() == self.dim {
            Ok(())
        } else {
            Err(BarrierError::DimensionMismatch { expected: self.dim, got: x.len() })
        }
    }

    /// One value per row.
    pub fn values(&self, x: &[f64]) -> Result<Vec<f64>, BarrierError> {
        self.check(x)?;
        Ok(self.rows.iter().map(|r| r.value(x)).collect())
    }

    /// One gradient per row.
    pub fn gradients(&self, x: &[f64]) -> Result<Vec<SparseRow>, BarrierError> {
        self.check(x)?;
        Ok(self.rows.iter().map(|r| r.gradient(x)).collect())
    }

    /// Smallest row value. Used for reporting and violation counting only;
    /// the filter always works row by row.
    pub fn value(&self, x: &[f64]) -> Result<f64, BarrierError> {
        Ok(self.values(x)?.into_iter().fold(f64::INFINITY, f64::min))
    }

    /// Worst relative error between central finite differences and the
    /// analytic gradient, over every row and coordinate. Relative error is
    /// `|fd − g| / max(|g|, 1)`.
    pub fn grad_check(&self, x: &[f64], step: f64) -> Result<f64, BarrierError> {
        let grads = self.gradients(x)?;
        let mut worst: f64 = 0.0;
        let mut xp = x.to_vec();
        for (row, g) in self.rows.iter().zip(&grads) {
            let dense = g.to_dense(self.dim);
            for i in 0..self.dim {
                let orig = xp[i];
                xp[i] = orig + step;
                let hp = row.value(&xp);
                xp[i] = orig - step;
                let hm = row.value(&xp);
                xp[i] = orig;
                let fd = (hp - hm) / (2.0 * step);
                worst = worst.max((fd - dense[i]).abs() / dense[i].abs().max(1.0));
            }
        }
        Ok(worst)
    }

    /// True when any row is a per-pixel constraint.
    pub fn is_per_pixel(&self) -> bool {
        self.rows.iter().any(|r| matches!(r, BarrierRow::Pixel(_)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn halfspace(w: Vec<f64>, o: f64) -> Barrier {
        BarrierSpec::Halfspace(HalfspaceParams { normal: w, offset: o }).compile().unwrap()
    }

    #[test]
    fn halfspace_boundary_point() {
        assert_eq!(halfspace(vec![1.0, 0.0], 0.0).values(&[0.0, 0.0]).unwrap(), vec![0.0]);
    }

    #[test]
    fn halfspace_gradient_is_normal() {
        let b = halfspace(vec![2.0, 3.0], 1.0);
        assert_eq!(b.gradients(&[5.0, -7.0]).unwrap()[0].to_dense(2), vec![2.0, 3.0]);
    }

    #[test]
    fn ball_gradient_by_hand() {
        let b = BarrierSpec::Ball(BallParams { center: vec![0.0, 0.0], radius: 1.0 }).compile().unwrap();
        assert_eq!(b.gradients(&[0.5, 0.0]).unwrap()[0].to_dense(2), vec![-1.0, 0.0]);
        assert_eq!(b.values(&[0.5, 0.0]).unwrap(), vec![0.75]);
    }

    #[test]
    fn dimension_mismatch() {
        let b = halfspace(vec![1.0, 0.0], 0.0);
        assert!(matches!(b.values(&[0.0]), Err(BarrierError::DimensionMismatch { expected: 2, got: 1 })));
        assert!(b.gradients(&[0.0; 3]).is_err());
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(BarrierSpec::Halfspace(HalfspaceParams { normal: vec![0.0, 0.0], offset: 0.0 }).compile().is_err());
        assert!(BarrierSpec::Ball(BallParams { center: vec![0.0], radius: 0.0 }).compile().is_err());
        assert!(BarrierSpec::Box(BoxParams { lower: vec![1.0], upper: vec![0.0] }).compile().is_err());
        assert!(BarrierSpec::Intersection { members: vec![] }.compile().is_err());
    }

    #[test]
    fn box_rows() {
        let b = BarrierSpec::Box(BoxParams { lower: vec![-1.0, 0.0], upper: vec![1.0, 2.0] }).compile().unwrap();
        assert_eq!(b.values(&[0.5, 3.0]).unwrap(), vec![1.5, 0.5, 3.0, -1.0]);
        assert!(!b.has_disjoint_supports());
    }

    #[test]
    fn intersection_keeps_members_separate() {
        let spec = BarrierSpec::Intersection {
            members: vec![
                BarrierSpec::Halfspace(HalfspaceParams { normal: vec![1.0, 0.0], offset: 0.0 }),
                BarrierSpec::Ball(BallParams { center: vec![0.0, 0.0], radius: 2.0 }),
            ],
        };
        let b = spec.compile().unwrap();
        assert_eq!(b.values(&[-1.0, 0.0]).unwrap(), vec![-1.0, 3.0]);
        assert_eq!(b.value(&[-1.0, 0.0]).unwrap(), -1.0);
    }
}
