//! Heuristics applied when ingesting archived forecast and radar fields.

use serde::{Deserialize, Serialize};

use super::field::{GridField, QualityMask, Space};
use crate::error::{Error, Result};

/// Round-off slack when testing hourly totals for monotonicity, in mm.
pub const ACCUMULATION_TOLERANCE_MM: f32 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccumulationStyle {
    /// Each field holds the running total since initialisation.
    Cumulative,
    /// Each field holds the amount for its own interval only.
    PerInterval,
}

fn require_raw(field: &GridField) -> Result<()> {
    if field.space() != Space::RawMm {
        return Err(Error::Space("accumulation checks need raw_mm fields".into()));
    }
    Ok(())
}

/// Classifies an hourly series as running totals when no pixel ever decreases
/// by more than [`ACCUMULATION_TOLERANCE_MM`] from one hour to the next.
pub fn detect_accumulation_style(series: &[GridField]) -> Result<AccumulationStyle> {
    if series.len() < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 fields, got {}", series.len())));
    }
    for f in series {
        require_raw(f)?;
        if f.dims() != series[0].dims() {
            return Err(Error::Shape("series fields differ in shape".into()));
        }
    }
    let monotone = series.windows(2).all(|pair| {
        pair[0]
            .values()
            .iter()
            .zip(pair[1].values())
            .all(|(&a, &b)| b - a >= -ACCUMULATION_TOLERANCE_MM)
    });
    Ok(if monotone { AccumulationStyle::Cumulative } else { AccumulationStyle::PerInterval })
}

/// Flags members whose domain-mean total is at least 1.5x a reference
/// model's, the signature of an accumulation counted twice.
pub fn flag_double_accumulation(series: &[GridField], reference: &[GridField]) -> Result<Vec<bool>> {
    if series.len() != reference.len() {
        return Err(Error::InvalidArgument(format!(
            "series has {} fields, reference has {}",
            series.len(),
            reference.len()
        )));
    }
    series
        .iter()
        .zip(reference)
        .map(|(s, r)| {
            require_raw(s)?;
            require_raw(r)?;
            let (sm, rm) = (s.mean(), r.mean());
            Ok(rm > 0.0 && sm >= 1.5 * rm)
        })
        .collect()
}

/// True iff strictly more than `coverage_fraction` of pixels have quality
/// strictly above `pixel_threshold`.
pub fn quality_pass(mask: &QualityMask, pixel_threshold: f32, coverage_fraction: f64) -> bool {
    let good = mask.values().iter().filter(|&&q| q > pixel_threshold).count();
    (good as f64) > coverage_fraction * mask.values().len() as f64
}
