//! File format, synthetic data and curve export.

pub mod export;
pub mod format;
pub mod synth;

pub use export::{export_filters, ExportGrid};
pub use format::{decode, encode, read_cube, write_cube, FormatError};
pub use synth::{gen_synthetic, Bump, Material, Nuisance, SynthDataset, SynthSpec, WavelengthGrid};
