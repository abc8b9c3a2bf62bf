//! Finite-difference derivative targets and nearest-neighbour splitting.

use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};
use crate::grid::{conv3x3, Grid2D, Kernel3};

pub const SOBEL_U: Kernel3 = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
pub const SOBEL_V: Kernel3 = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];
pub const VANILLA_U: Kernel3 = [[0.0, 0.0, 0.0], [-1.0, 0.0, 1.0], [0.0, 0.0, 0.0]];
pub const VANILLA_V: Kernel3 = [[0.0, -1.0, 0.0], [0.0, 0.0, 0.0], [0.0, 1.0, 0.0]];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterKind {
    Sobel,
    Vanilla,
    /// Two-sided differences on a 1-D signal.
    Central1d,
}

impl FilterKind {
    /// Response to a ramp of unit slope per sample.
    pub fn gain(self) -> f64 {
        match self {
            FilterKind::Sobel => 8.0,
            FilterKind::Vanilla => 2.0,
            FilterKind::Central1d => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FilterKind::Sobel => "sobel",
            FilterKind::Vanilla => "vanilla",
            FilterKind::Central1d => "central1d",
        }
    }

    /// `(D_u, D_v)` templates for the 2-D filters.
    pub fn templates(self) -> Option<(Kernel3, Kernel3)> {
        match self {
            FilterKind::Sobel => Some((SOBEL_U, SOBEL_V)),
            FilterKind::Vanilla => Some((VANILLA_U, VANILLA_V)),
            FilterKind::Central1d => None,
        }
    }
}

impl FromStr for FilterKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sobel" => Ok(FilterKind::Sobel),
            "vanilla" => Ok(FilterKind::Vanilla),
            "central1d" => Ok(FilterKind::Central1d),
            _ => Err(Error::UnknownTag(s.into())),
        }
    }
}

impl fmt::Display for FilterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// How derivative targets are expressed.
///
/// Network tangents are always taken per unit of the `[-1, 1]` coordinate, so
/// only `Normalized` targets share their units. `Raw` and `PerSample` keep the
/// targets in filter or sample units and act as a rescaled derivative term.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DerivativeUnits {
    /// Unscaled filter responses.
    Raw,
    /// Per sample step: response divided by the filter gain.
    PerSample,
    /// Per unit of the `[-1, 1]` network coordinate along each axis.
    Normalized,
}

impl DerivativeUnits {
    pub fn name(self) -> &'static str {
        match self {
            DerivativeUnits::Raw => "raw",
            DerivativeUnits::PerSample => "per-sample",
            DerivativeUnits::Normalized => "normalized",
        }
    }

    /// Factor applied to a raw response along an axis of `n` samples.
    ///
    /// Samples sit at pixel centres `2 (i + 0.5) / n - 1`, so one sample step
    /// spans `2 / n` coordinate units.
    pub fn scale(self, gain: f64, n: usize) -> f64 {
        match self {
            DerivativeUnits::Raw => 1.0,
            DerivativeUnits::PerSample => 1.0 / gain,
            DerivativeUnits::Normalized => n as f64 / (2.0 * gain),
        }
    }
}

impl FromStr for DerivativeUnits {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "raw" => Ok(DerivativeUnits::Raw),
            "per-sample" | "pixel" => Ok(DerivativeUnits::PerSample),
            "normalized" => Ok(DerivativeUnits::Normalized),
            _ => Err(Error::UnknownTag(s.into())),
        }
    }
}

/// Raw `(D_u, D_v)` responses of an image; `u` runs along columns, `v`
/// along rows (downwards).
pub fn image_derivatives(img: &Grid2D, kind: FilterKind) -> Result<(Grid2D, Grid2D)> {
    let (ku, kv) = kind.templates().ok_or_else(|| {
        Error::invalid("image_derivatives: central1d applies to 1-D signals only")
    })?;
    Ok((conv3x3(img, &ku)?, conv3x3(img, &kv)?))
}

/// Two-sided differences `(s[i+1] - s[i-1]) / 2h`, one-sided at both ends.
pub fn audio_derivative(signal: &[f64], h: f64) -> Result<Vec<f64>> {
    let n = signal.len();
    if n < 3 {
        return Err(Error::invalid(alloc::format!(
            "audio_derivative: need at least 3 samples, got {n}"
        )));
    }
    if !(h > 0.0) {
        return Err(Error::invalid("audio_derivative: spacing must be positive"));
    }
    let mut d = Vec::with_capacity(n);
    d.push((signal[1] - signal[0]) / h);
    for w in signal.windows(3) {
        d.push((w[2] - w[0]) / (2.0 * h));
    }
    d.push((signal[n - 1] - signal[n - 2]) / h);
    Ok(d)
}

/// Keeps the top-left sample of every `factor x factor` block (ragged edge
/// blocks included). Returns the small grid and the flat pixel index
/// (`row * cols + col`) of each kept sample, in row-major order of the small
/// grid. `factor == 1` is the identity.
pub fn downsample_nearest(grid: &Grid2D, factor: usize) -> Result<(Grid2D, Vec<usize>)> {
    if factor == 0 {
        return Err(Error::invalid(
            "downsample_nearest: factor must be at least 1",
        ));
    }
    let (rows, cols, ch) = grid.shape();
    let small_rows = rows.div_ceil(factor);
    let small_cols = cols.div_ceil(factor);
    let mut out = Grid2D::zeros(small_rows, small_cols, ch);
    let mut idx = Vec::with_capacity(small_rows * small_cols);
    for sr in 0..small_rows {
        for sc in 0..small_cols {
            let (r, c) = (sr * factor, sc * factor);
            for k in 0..ch {
                out.set(sr, sc, k, grid.get(r, c, k));
            }
            idx.push(r * cols + c);
        }
    }
    Ok((out, idx))
}

/// Nearest-neighbour upsampling back to `rows x cols`.
pub fn upsample_nearest(small: &Grid2D, factor: usize, rows: usize, cols: usize) -> Grid2D {
    let ch = small.channels();
    let mut out = Grid2D::zeros(rows, cols, ch);
    for r in 0..rows {
        for c in 0..cols {
            for k in 0..ch {
                out.set(r, c, k, small.get(r / factor, c / factor, k));
            }
        }
    }
    out
}

/// Converts raw 2-D responses to the requested units for a
/// `rows x cols` sampling grid.
pub fn scale_image_derivatives(
    du: &Grid2D,
    dv: &Grid2D,
    kind: FilterKind,
    units: DerivativeUnits,
    rows: usize,
    cols: usize,
) -> (Grid2D, Grid2D) {
    let g = kind.gain();
    (
        du.scale(units.scale(g, cols)),
        dv.scale(units.scale(g, rows)),
    )
}
