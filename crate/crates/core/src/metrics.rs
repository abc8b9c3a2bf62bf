//! Image quality metrics: PSNR and single-scale SSIM under a configurable
//! evaluation protocol (luma or all channels, border crop, eval-pixel mask).

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grid::Grid2D;
use crate::math;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelMode {
    /// BT.601 full-range luma of an RGB image.
    LumaY,
    /// Every channel, pooled.
    RgbAll,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalProtocol {
    pub channel_mode: ChannelMode,
    pub border_crop: usize,
    /// PSNR only counts pixels flagged in the eval mask. SSIM ignores the mask.
    pub restrict_to_eval_samples: bool,
}

impl EvalProtocol {
    /// Luma, 4-pixel border crop, held-out pixels only.
    pub fn image_regression() -> Self {
        EvalProtocol {
            channel_mode: ChannelMode::LumaY,
            border_crop: 4,
            restrict_to_eval_samples: true,
        }
    }

    /// All channels, whole frame.
    pub fn novel_view() -> Self {
        EvalProtocol {
            channel_mode: ChannelMode::RgbAll,
            border_crop: 0,
            restrict_to_eval_samples: false,
        }
    }

    fn check(&self, rows: usize, cols: usize) -> Result<()> {
        if 2 * self.border_crop >= rows || 2 * self.border_crop >= cols {
            return Err(Error::invalid(alloc::format!(
                "border crop {} too large for a {rows}x{cols} image",
                self.border_crop
            )));
        }
        Ok(())
    }
}

pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
pub const SSIM_RANGE: f64 = 1.0;

pub fn to_luma(img: &Grid2D) -> Result<Grid2D> {
    if img.channels() != 3 {
        return Err(Error::invalid(alloc::format!(
            "luma needs 3 channels, got {}",
            img.channels()
        )));
    }
    let data = img
        .data()
        .chunks_exact(3)
        .map(|p| LUMA_WEIGHTS[0] * p[0] + LUMA_WEIGHTS[1] * p[1] + LUMA_WEIGHTS[2] * p[2])
        .collect();
    Grid2D::from_vec(img.rows(), img.cols(), 1, data)
}

/// Clamped to [0,1] and reduced to the channels the protocol compares.
fn prepare(img: &Grid2D, mode: ChannelMode) -> Result<Grid2D> {
    let clamped = img.map(|v| v.clamp(0.0, 1.0));
    match (mode, clamped.channels()) {
        (ChannelMode::LumaY, 1) | (ChannelMode::RgbAll, _) => Ok(clamped),
        (ChannelMode::LumaY, _) => to_luma(&clamped),
    }
}

/// Peak signal-to-noise ratio in dB for a dynamic range of 1. Identical
/// inputs give `f64::INFINITY`.
///
/// `eval_mask` is row-major over pixels and is required when the protocol
/// restricts to eval samples.
pub fn psnr(
    pred: &Grid2D,
    gt: &Grid2D,
    protocol: &EvalProtocol,
    eval_mask: Option<&[bool]>,
) -> Result<f64> {
    pred.check_same("psnr", gt)?;
    let (rows, cols) = (gt.rows(), gt.cols());
    protocol.check(rows, cols)?;
    let mask = if protocol.restrict_to_eval_samples {
        let m = eval_mask.ok_or_else(|| Error::invalid("psnr: protocol needs an eval mask"))?;
        if m.len() != rows * cols {
            return Err(Error::invalid(
                "psnr: eval mask length differs from pixel count",
            ));
        }
        Some(m)
    } else {
        None
    };
    let a = prepare(pred, protocol.channel_mode)?;
    let b = prepare(gt, protocol.channel_mode)?;
    let ch = a.channels();
    let c0 = protocol.border_crop;
    let mut sum = 0.0;
    let mut count = 0usize;
    for r in c0..rows - c0 {
        for c in c0..cols - c0 {
            if mask.is_some_and(|m| !m[r * cols + c]) {
                continue;
            }
            for k in 0..ch {
                let d = a.get(r, c, k) - b.get(r, c, k);
                sum += d * d;
            }
            count += ch;
        }
    }
    if count == 0 {
        return Err(Error::invalid("psnr: no pixels selected"));
    }
    let mse = sum / count as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * math::log10(1.0 / mse))
}

fn gaussian_window() -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| {
            let x = i as f64 - half;
            math::exp(-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA))
        })
        .collect();
    let total: f64 = g.iter().sum();
    g.into_iter().map(|v| v / total).collect()
}

fn ssim_channel(a: &Grid2D, b: &Grid2D, k: usize, c0: usize, g: &[f64]) -> (f64, usize) {
    let c1 = (SSIM_K1 * SSIM_RANGE) * (SSIM_K1 * SSIM_RANGE);
    let c2 = (SSIM_K2 * SSIM_RANGE) * (SSIM_K2 * SSIM_RANGE);
    let w = SSIM_WINDOW;
    let (rows, cols) = (a.rows() - 2 * c0, a.cols() - 2 * c0);
    let mut sum = 0.0;
    let mut n = 0;
    for r in 0..=rows - w {
        for c in 0..=cols - w {
            let (mut mx, mut my, mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in 0..w {
                for j in 0..w {
                    let wt = g[i] * g[j];
                    let x = a.get(c0 + r + i, c0 + c + j, k);
                    let y = b.get(c0 + r + i, c0 + c + j, k);
                    mx += wt * x;
                    my += wt * y;
                    xx += wt * x * x;
                    yy += wt * y * y;
                    xy += wt * x * y;
                }
            }
            let vx = xx - mx * mx;
            let vy = yy - my * my;
            let cov = xy - mx * my;
            sum += ((2.0 * mx * my + c1) * (2.0 * cov + c2))
                / ((mx * mx + my * my + c1) * (vx + vy + c2));
            n += 1;
        }
    }
    (sum, n)
}

/// Mean SSIM over every 11x11 Gaussian window that fits inside the
/// border-cropped image. In `RgbAll` mode channels are scored separately and
/// averaged.
pub fn ssim(pred: &Grid2D, gt: &Grid2D, protocol: &EvalProtocol) -> Result<f64> {
    pred.check_same("ssim", gt)?;
    protocol.check(gt.rows(), gt.cols())?;
    let c0 = protocol.border_crop;
    if gt.rows() - 2 * c0 < SSIM_WINDOW || gt.cols() - 2 * c0 < SSIM_WINDOW {
        return Err(Error::invalid(alloc::format!(
            "ssim: {}x{} image (crop {c0}) is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window",
            gt.rows(),
            gt.cols()
        )));
    }
    let a = prepare(pred, protocol.channel_mode)?;
    let b = prepare(gt, protocol.channel_mode)?;
    let g = gaussian_window();
    let mut total = 0.0;
    for k in 0..a.channels() {
        let (s, n) = ssim_channel(&a, &b, k, c0, &g);
        total += s / n as f64;
    }
    Ok(total / a.channels() as f64)
}
