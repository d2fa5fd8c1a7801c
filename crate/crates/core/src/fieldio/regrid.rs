use super::field::GridField;
use crate::error::{Error, Result};

/// Source neighbours and blend factor for one output index along one axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisWeight {
    pub lo: usize,
    pub hi: usize,
    pub frac: f64,
}

/// Corner-aligned linear interpolation weights mapping `n_in` grid points onto
/// `n_out` grid points: output index 0 sits on input 0 and output `n_out-1`
/// on input `n_in-1`. A single output point samples the input centre.
pub fn axis_weights(n_in: usize, n_out: usize) -> Vec<AxisWeight> {
    (0..n_out)
        .map(|i| {
            let pos = if n_out == 1 {
                (n_in - 1) as f64 / 2.0
            } else {
                i as f64 * (n_in - 1) as f64 / (n_out - 1) as f64
            };
            let lo = (pos.floor() as usize).min(n_in - 1);
            let hi = (lo + 1).min(n_in - 1);
            AxisWeight { lo, hi, frac: pos - lo as f64 }
        })
        .collect()
}

pub fn regrid_bilinear(field: &GridField, out_h: usize, out_w: usize) -> Result<GridField> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::InvalidArgument(format!("target dims must be positive, got {out_h}x{out_w}")));
    }
    let (h, w) = field.dims();
    let rows = axis_weights(h, out_h);
    let cols = axis_weights(w, out_w);
    let src = field.values();
    let (lo, hi) = field.min_max();
    let mut out = Vec::with_capacity(out_h * out_w);
    for r in &rows {
        let top = &src[r.lo * w..(r.lo + 1) * w];
        let bottom = &src[r.hi * w..(r.hi + 1) * w];
        for c in &cols {
            let t = top[c.lo] as f64 * (1.0 - c.frac) + top[c.hi] as f64 * c.frac;
            let b = bottom[c.lo] as f64 * (1.0 - c.frac) + bottom[c.hi] as f64 * c.frac;
            let v = (t * (1.0 - r.frac) + b * r.frac) as f32;
            // keep the convex-combination bound exact after rounding
            out.push(v.clamp(lo, hi));
        }
    }
    let scale = field.resolution_km * (w as f32) / (out_w as f32);
    Ok(GridField::new(out, out_h, out_w, field.space())?.with_resolution(scale))
}

/// Block-mean downsampling by `factor` along both axes.
pub fn coarsen(field: &GridField, factor: usize) -> Result<GridField> {
    let (h, w) = field.dims();
    if factor == 0 || h % factor != 0 || w % factor != 0 {
        return Err(Error::InvalidArgument(format!("{h}x{w} field is not divisible by factor {factor}")));
    }
    let (oh, ow) = (h / factor, w / factor);
    let src = field.values();
    let mut sums = vec![0.0f64; oh * ow];
    for r in 0..h {
        let row = &src[r * w..(r + 1) * w];
        let out_row = &mut sums[(r / factor) * ow..(r / factor + 1) * ow];
        for (c, &v) in row.iter().enumerate() {
            out_row[c / factor] += v as f64;
        }
    }
    let n = (factor * factor) as f64;
    let values = sums.into_iter().map(|s| (s / n) as f32).collect();
    Ok(GridField::new(values, oh, ow, field.space())?.with_resolution(field.resolution_km * factor as f32))
}
