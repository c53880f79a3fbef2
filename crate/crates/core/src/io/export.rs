//! Filter response curves as CSV.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::filter::{evaluate_on_grid, normalize_wavelengths, FilterBankParams};

#[derive(Debug, Clone, PartialEq)]
pub enum ExportGrid {
    /// Evaluate at the dataset channels themselves.
    Channels,
    /// Evaluate at `n` evenly spaced points across the filter bank's range.
    Dense(usize),
}

/// CSV with columns `wavelength_nm,filter_1,…,filter_F`.
///
/// Responses are always normalized by each filter's maximum over the dataset
/// channels. For a dense grid a `#` comment line saying so precedes the header.
pub fn export_filters(params: &FilterBankParams, channels_nm: &[f64], grid: &ExportGrid) -> Result<String> {
    let range = params.range();
    let norm_channels = normalize_wavelengths(channels_nm, range)?;
    let (grid_nm, dense) = match *grid {
        ExportGrid::Channels => (channels_nm.to_vec(), false),
        ExportGrid::Dense(n) => {
            if n < 2 {
                return Err(Error::config(format!("dense grid needs >= 2 points, got {n}")));
            }
            let pts = (0..n)
                .map(|i| range.to_nm(i as f64 / (n - 1) as f64))
                .collect();
            (pts, true)
        }
    };
    let grid_norm: Vec<f64> = grid_nm.iter().map(|&l| range.to_normalized(l)).collect();
    let values = evaluate_on_grid(params, &grid_norm, &norm_channels);

    let nf = params.num_filters();
    let mut out = String::new();
    if dense {
        writeln!(
            out,
            "# responses normalized by each filter's maximum over the {} dataset channels",
            channels_nm.len()
        )
        .expect("string write");
    }
    out.push_str("wavelength_nm");
    for f in 1..=nf {
        write!(out, ",filter_{f}").expect("string write");
    }
    out.push('\n');
    for (g, l) in grid_nm.iter().enumerate() {
        write!(out, "{l}").expect("string write");
        for f in 0..nf {
            write!(out, ",{}", values[f * grid_nm.len() + g]).expect("string write");
        }
        out.push('\n');
    }
    Ok(out)
}
