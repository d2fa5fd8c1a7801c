//! Gridded precipitation fields and the primitives that move them between
//! resolutions, files and quality checks.

mod field;
mod grid_file;
mod ingest;
mod regrid;

pub use field::{GridField, QualityMask, Space};
pub use grid_file::{read_grid_file, write_grid_file, GridFileHeader, RGF_DTYPE, RGF_MAGIC};
pub use ingest::{detect_accumulation_style, flag_double_accumulation, quality_pass, AccumulationStyle, ACCUMULATION_TOLERANCE_MM};
pub use regrid::{axis_weights, coarsen, regrid_bilinear, AxisWeight};
