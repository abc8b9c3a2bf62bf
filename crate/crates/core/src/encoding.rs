//! Sinusoidal positional encoding of input coordinates.
//!
//! Channel layout for `D` inputs and `L` levels:
//! `[x_0 .. x_{D-1} | sin(2^k pi x_d) for d, k | cos(2^k pi x_d) for d, k]`,
//! where the sin and cos blocks are ordered by axis first, then level. The raw
//! block is present only when `include_input` is set.

use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::error::{Error, Result};
use crate::grid::Grid2D;
use crate::math;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncodingConfig {
    pub num_frequencies: usize,
    pub include_input: bool,
}

impl EncodingConfig {
    pub fn new(num_frequencies: usize) -> Self {
        EncodingConfig {
            num_frequencies,
            include_input: true,
        }
    }

    pub fn output_width(&self, input_dim: usize) -> usize {
        let raw = if self.include_input { input_dim } else { 0 };
        raw + 2 * self.num_frequencies * input_dim
    }

    fn frequency(k: usize) -> f64 {
        (1u64 << k) as f64 * PI
    }
}

/// Encodes each row of `x` (`batch x D`).
pub fn encode(cfg: &EncodingConfig, x: &Grid2D) -> Result<Grid2D> {
    if x.channels() != 1 {
        return Err(Error::invalid("encode: coordinates must be single-channel"));
    }
    let (batch, dim) = (x.rows(), x.cols());
    let width = cfg.output_width(dim);
    let levels = cfg.num_frequencies;
    let raw = if cfg.include_input { dim } else { 0 };
    let mut out = Grid2D::zeros(batch, width, 1);
    for i in 0..batch {
        let xi = x.row(i);
        let o = out.row_mut(i);
        o[..raw].copy_from_slice(&xi[..raw]);
        for (d, &xd) in xi.iter().enumerate() {
            for k in 0..levels {
                let arg = EncodingConfig::frequency(k) * xd;
                o[raw + d * levels + k] = math::sin(arg);
                o[raw + dim * levels + d * levels + k] = math::cos(arg);
            }
        }
    }
    Ok(out)
}

/// Derivative of every encoded channel with respect to each input axis.
///
/// Returns `D` grids of shape `batch x D_enc`; grid `d` holds the partials
/// with respect to `x_d`. These seed the tangent propagation through the MLP.
pub fn encode_jacobian(cfg: &EncodingConfig, x: &Grid2D) -> Result<Vec<Grid2D>> {
    if x.channels() != 1 {
        return Err(Error::invalid(
            "encode_jacobian: coordinates must be single-channel",
        ));
    }
    let (batch, dim) = (x.rows(), x.cols());
    let width = cfg.output_width(dim);
    let levels = cfg.num_frequencies;
    let raw = if cfg.include_input { dim } else { 0 };
    let mut jac: Vec<Grid2D> = (0..dim).map(|_| Grid2D::zeros(batch, width, 1)).collect();
    for (d, grid) in jac.iter_mut().enumerate() {
        for i in 0..batch {
            let xd = x.get(i, d, 0);
            let o = grid.row_mut(i);
            if d < raw {
                o[d] = 1.0;
            }
            for k in 0..levels {
                let w = EncodingConfig::frequency(k);
                let arg = w * xd;
                o[raw + d * levels + k] = w * math::cos(arg);
                o[raw + dim * levels + d * levels + k] = -w * math::sin(arg);
            }
        }
    }
    Ok(jac)
}

/// Pushes coordinate-space tangents through the encoding: for each output
/// direction `j`, `sum_d J_d * dx[j][:, d]`. `dx` holds one `batch x D`
/// grid per direction.
pub fn push_tangents(cfg: &EncodingConfig, x: &Grid2D, dx: &[Grid2D]) -> Result<Vec<Grid2D>> {
    let jac = encode_jacobian(cfg, x)?;
    let (batch, width) = (x.rows(), cfg.output_width(x.cols()));
    let mut out = Vec::with_capacity(dx.len());
    for dir in dx {
        x.check_same("push_tangents", dir)?;
        let mut t = Grid2D::zeros(batch, width, 1);
        for i in 0..batch {
            let row = t.row_mut(i);
            for (d, jd) in jac.iter().enumerate() {
                let s = dir.get(i, d, 0);
                if s == 0.0 {
                    continue;
                }
                for (r, &j) in row.iter_mut().zip(jd.row(i)) {
                    *r += s * j;
                }
            }
        }
        out.push(t);
    }
    Ok(out)
}

/// Identity tangent seeds for un-encoded inputs: grid `d` has ones in column `d`.
pub fn identity_tangents(batch: usize, dim: usize) -> Vec<Grid2D> {
    (0..dim)
        .map(|d| {
            let mut g = Grid2D::zeros(batch, dim, 1);
            for i in 0..batch {
                g.set(i, d, 0, 1.0);
            }
            g
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn channel_counts() {
        assert_eq!(EncodingConfig::new(5).output_width(2) - 2, 20);
        assert_eq!(EncodingConfig::new(10).output_width(3) - 3, 60);
        let no_raw = EncodingConfig {
            num_frequencies: 4,
            include_input: false,
        };
        assert_eq!(no_raw.output_width(3), 24);
    }

    #[test]
    fn encode_at_origin() {
        let x = Grid2D::zeros(1, 2, 1);
        let e = encode(&EncodingConfig::new(5), &x).unwrap();
        let row = e.row(0);
        assert_eq!(&row[..2], &[0.0, 0.0]);
        assert!(row[2..12].iter().all(|&v| v == 0.0));
        assert!(row[12..22].iter().all(|&v| v == 1.0));
    }

    #[test]
    fn encode_at_one_first_level() {
        let x = Grid2D::from_rows(&[[1.0]]).unwrap();
        let e = encode(&EncodingConfig::new(1), &x).unwrap();
        assert!(e.get(0, 1, 0).abs() < 1e-15);
        assert_eq!(e.get(0, 2, 0), -1.0);
    }

    #[test]
    fn encode_matches_trig_loop() {
        let mut rng = Rng::new(2);
        let x = Grid2D::from_vec(7, 3, 1, rng.uniform_vec(-1.0, 1.0, 21)).unwrap();
        let cfg = EncodingConfig::new(4);
        let e = encode(&cfg, &x).unwrap();
        for i in 0..7 {
            let mut want = Vec::new();
            want.extend_from_slice(x.row(i));
            for d in 0..3 {
                for k in 0..4 {
                    want.push(libm::sin(2f64.powi(k) * PI * x.get(i, d, 0)));
                }
            }
            for d in 0..3 {
                for k in 0..4 {
                    want.push(libm::cos(2f64.powi(k) * PI * x.get(i, d, 0)));
                }
            }
            for (a, b) in e.row(i).iter().zip(&want) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn jacobian_at_origin() {
        let x = Grid2D::zeros(1, 2, 1);
        let cfg = EncodingConfig::new(3);
        let jac = encode_jacobian(&cfg, &x).unwrap();
        for (d, j) in jac.iter().enumerate() {
            let row = j.row(0);
            assert_eq!(row[d], 1.0);
            assert_eq!(row[1 - d], 0.0);
            for k in 0..3 {
                assert_eq!(row[2 + d * 3 + k], 2f64.powi(k as i32) * PI);
                assert_eq!(row[2 + 6 + d * 3 + k], 0.0);
            }
        }
    }

    #[test]
    fn zero_levels_is_identity_jacobian() {
        let mut rng = Rng::new(4);
        let x = Grid2D::from_vec(3, 2, 1, rng.uniform_vec(-1.0, 1.0, 6)).unwrap();
        let jac = encode_jacobian(&EncodingConfig::new(0), &x).unwrap();
        assert_eq!(jac, identity_tangents(3, 2));
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let mut rng = Rng::new(17);
        let cfg = EncodingConfig::new(5);
        let h = 1e-6;
        for _ in 0..20 {
            let p = rng.uniform_vec(-1.0, 1.0, 2);
            let x = Grid2D::from_vec(1, 2, 1, p.clone()).unwrap();
            let jac = encode_jacobian(&cfg, &x).unwrap();
            for d in 0..2 {
                let mut hi = p.clone();
                let mut lo = p.clone();
                hi[d] += h;
                lo[d] -= h;
                let eh = encode(&cfg, &Grid2D::from_vec(1, 2, 1, hi).unwrap()).unwrap();
                let el = encode(&cfg, &Grid2D::from_vec(1, 2, 1, lo).unwrap()).unwrap();
                for c in 0..cfg.output_width(2) {
                    let fd = (eh.get(0, c, 0) - el.get(0, c, 0)) / (2.0 * h);
                    let an = jac[d].get(0, c, 0);
                    let scale = an.abs().max(1.0);
                    assert!(
                        (fd - an).abs() / scale < 1e-7,
                        "d={d} c={c} fd={fd} an={an}"
                    );
                }
            }
        }
    }
}
