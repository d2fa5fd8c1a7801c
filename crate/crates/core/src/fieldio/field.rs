use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Value space of a field: physical millimetres or the normalized [0,1] transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Space {
    RawMm,
    Normalized,
}

impl Space {
    pub fn as_str(&self) -> &'static str {
        match self {
            Space::RawMm => "raw_mm",
            Space::Normalized => "normalized",
        }
    }
}

/// A 2-D scalar field stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    values: Vec<f32>,
    height: usize,
    width: usize,
    space: Space,
    /// Approximate grid spacing, 0.01 degree taken as 1 km.
    pub resolution_km: f32,
}

impl GridField {
    /// Builds a field, checking the space invariant (finite; non-negative in
    /// raw space; within [0,1] when normalized).
    pub fn new(values: Vec<f32>, height: usize, width: usize, space: Space) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Shape(format!("field dims must be positive, got {height}x{width}")));
        }
        if values.len() != height * width {
            return Err(Error::Shape(format!(
                "{} values do not fill a {height}x{width} field",
                values.len()
            )));
        }
        check_space(&values, space)?;
        Ok(Self { values, height, width, space, resolution_km: 0.0 })
    }

    pub fn filled(value: f32, height: usize, width: usize, space: Space) -> Result<Self> {
        Self::new(vec![value; height * width], height, width, space)
    }

    pub fn zeros(height: usize, width: usize, space: Space) -> Self {
        Self { values: vec![0.0; height * width], height, width, space, resolution_km: 0.0 }
    }

    pub fn with_resolution(mut self, km: f32) -> Self {
        self.resolution_km = km;
        self
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn space(&self) -> Space {
        self.space
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.values[row * self.width + col]
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().map(|&v| v as f64).sum::<f64>() / self.values.len() as f64
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.values
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// Applies `f` pointwise and re-validates against `space`.
    pub fn map(&self, space: Space, f: impl Fn(f32) -> f32) -> Result<Self> {
        let values = self.values.iter().map(|&v| f(v)).collect();
        let mut out = Self::new(values, self.height, self.width, space)?;
        out.resolution_km = self.resolution_km;
        Ok(out)
    }

    /// Extracts the `h`x`w` window whose top-left corner is `(row, col)`.
    pub fn crop(&self, row: usize, col: usize, h: usize, w: usize) -> Result<Self> {
        if row + h > self.height || col + w > self.width || h == 0 || w == 0 {
            return Err(Error::Shape(format!(
                "crop {h}x{w} at ({row},{col}) exceeds {}x{}",
                self.height, self.width
            )));
        }
        let mut values = Vec::with_capacity(h * w);
        for r in row..row + h {
            values.extend_from_slice(&self.values[r * self.width + col..r * self.width + col + w]);
        }
        Ok(Self { values, height: h, width: w, space: self.space, resolution_km: self.resolution_km })
    }
}

pub(crate) fn check_space(values: &[f32], space: Space) -> Result<()> {
    for (i, &v) in values.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::Data(format!("non-finite value {v} at index {i}")));
        }
        match space {
            Space::RawMm if v < 0.0 => {
                return Err(Error::Data(format!("negative precipitation {v} at index {i}")));
            }
            Space::Normalized if !(0.0..=1.0).contains(&v) => {
                return Err(Error::Data(format!("normalized value {v} outside [0,1] at index {i}")));
            }
            _ => {}
        }
    }
    Ok(())
}

/// Per-pixel radar quality index in [0,1].
#[derive(Debug, Clone, PartialEq)]
pub struct QualityMask {
    values: Vec<f32>,
    height: usize,
    width: usize,
}

impl QualityMask {
    pub fn new(values: Vec<f32>, height: usize, width: usize) -> Result<Self> {
        if values.len() != height * width || values.is_empty() {
            return Err(Error::Shape(format!("{} values for a {height}x{width} mask", values.len())));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Data(format!("quality value {v} outside [0,1]")));
        }
        Ok(Self { values, height, width })
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }
}
