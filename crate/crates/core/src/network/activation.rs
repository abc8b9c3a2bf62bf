use alloc::string::ToString;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};
use crate::math;

pub const ELU_ALPHA: f64 = 1.0;
pub const SELU_LAMBDA: f64 = 1.0507;
pub const SELU_ALPHA: f64 = 1.6733;

/// Pointwise nonlinearity with analytic first and second derivatives.
///
/// Conventions at kinks: ReLU has `f'(0) = 0` and `f'' = 0` everywhere; ELU
/// and SELU use their `x <= 0` branch at the origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Relu,
    Elu {
        alpha: f64,
    },
    Selu {
        lambda: f64,
        alpha: f64,
    },
    Sigmoid,
    Softplus,
    Tanh,
    /// `sin(omega0 * x)`.
    Sine {
        omega0: f64,
    },
}

/// Tag without parameters, used for parsing and file headers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ActivationKind {
    Relu,
    Elu,
    Selu,
    Sigmoid,
    Softplus,
    Tanh,
    Sine,
}

impl ActivationKind {
    pub const ALL: [ActivationKind; 7] = [
        ActivationKind::Relu,
        ActivationKind::Elu,
        ActivationKind::Selu,
        ActivationKind::Sigmoid,
        ActivationKind::Softplus,
        ActivationKind::Tanh,
        ActivationKind::Sine,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ActivationKind::Relu => "relu",
            ActivationKind::Elu => "elu",
            ActivationKind::Selu => "selu",
            ActivationKind::Sigmoid => "sigmoid",
            ActivationKind::Softplus => "softplus",
            ActivationKind::Tanh => "tanh",
            ActivationKind::Sine => "sine",
        }
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Result<Self> {
        ActivationKind::ALL
            .get(code as usize)
            .copied()
            .ok_or_else(|| Error::UnknownTag(alloc::format!("activation code {code}")))
    }

    /// Activation with the standard constants; `omega0` only matters for sine.
    pub fn with_omega(self, omega0: f64) -> Activation {
        match self {
            ActivationKind::Relu => Activation::Relu,
            ActivationKind::Elu => Activation::Elu { alpha: ELU_ALPHA },
            ActivationKind::Selu => Activation::Selu {
                lambda: SELU_LAMBDA,
                alpha: SELU_ALPHA,
            },
            ActivationKind::Sigmoid => Activation::Sigmoid,
            ActivationKind::Softplus => Activation::Softplus,
            ActivationKind::Tanh => Activation::Tanh,
            ActivationKind::Sine => Activation::Sine { omega0 },
        }
    }
}

impl FromStr for ActivationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ActivationKind::ALL
            .iter()
            .copied()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::UnknownTag(s.to_string()))
    }
}

impl fmt::Display for ActivationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + math::exp(-x))
    } else {
        let e = math::exp(x);
        e / (1.0 + e)
    }
}

#[inline]
fn softplus(x: f64) -> f64 {
    x.max(0.0) + math::ln1p(math::exp(-x.abs()))
}

impl Activation {
    pub fn kind(&self) -> ActivationKind {
        match self {
            Activation::Relu => ActivationKind::Relu,
            Activation::Elu { .. } => ActivationKind::Elu,
            Activation::Selu { .. } => ActivationKind::Selu,
            Activation::Sigmoid => ActivationKind::Sigmoid,
            Activation::Softplus => ActivationKind::Softplus,
            Activation::Tanh => ActivationKind::Tanh,
            Activation::Sine { .. } => ActivationKind::Sine,
        }
    }

    pub fn omega0(&self) -> f64 {
        match self {
            Activation::Sine { omega0 } => *omega0,
            _ => 1.0,
        }
    }

    pub fn value(&self, x: f64) -> f64 {
        self.eval(x).0
    }

    pub fn derivative(&self, x: f64) -> f64 {
        self.eval(x).1
    }

    pub fn second_derivative(&self, x: f64) -> f64 {
        self.eval(x).2
    }

    /// `(f, f', f'')` at `x`.
    #[inline]
    pub fn eval(&self, x: f64) -> (f64, f64, f64) {
        match *self {
            Activation::Relu => {
                if x > 0.0 {
                    (x, 1.0, 0.0)
                } else {
                    (0.0, 0.0, 0.0)
                }
            }
            Activation::Elu { alpha } => {
                if x > 0.0 {
                    (x, 1.0, 0.0)
                } else {
                    let e = math::exp(x);
                    (alpha * math::expm1(x), alpha * e, alpha * e)
                }
            }
            Activation::Selu { lambda, alpha } => {
                if x > 0.0 {
                    (lambda * x, lambda, 0.0)
                } else {
                    let e = math::exp(x);
                    (
                        lambda * alpha * math::expm1(x),
                        lambda * alpha * e,
                        lambda * alpha * e,
                    )
                }
            }
            Activation::Sigmoid => {
                let s = sigmoid(x);
                let d = s * (1.0 - s);
                (s, d, d * (1.0 - 2.0 * s))
            }
            Activation::Softplus => {
                let s = sigmoid(x);
                (softplus(x), s, s * (1.0 - s))
            }
            Activation::Tanh => {
                let t = math::tanh(x);
                let d = 1.0 - t * t;
                (t, d, -2.0 * t * d)
            }
            Activation::Sine { omega0 } => {
                let a = omega0 * x;
                let (s, c) = (math::sin(a), math::cos(a));
                (s, omega0 * c, -omega0 * omega0 * s)
            }
        }
    }

    /// `(f', f'')` only; skips the value where it costs extra.
    #[inline]
    pub fn derivatives(&self, x: f64) -> (f64, f64) {
        match *self {
            Activation::Sine { omega0 } => {
                let a = omega0 * x;
                (omega0 * math::cos(a), -omega0 * omega0 * math::sin(a))
            }
            _ => {
                let (_, d1, d2) = self.eval(x);
                (d1, d2)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn catalog() -> [Activation; 7] {
        let mut out = [Activation::Relu; 7];
        for (o, k) in out.iter_mut().zip(ActivationKind::ALL) {
            *o = k.with_omega(30.0);
        }
        out
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1.0)
    }

    #[test]
    fn derivatives_match_finite_differences() {
        for act in catalog() {
            // keep the sine grid inside a few periods so h stays resolving
            let span = if matches!(act, Activation::Sine { .. }) {
                0.2
            } else {
                6.0
            };
            let h = if matches!(act, Activation::Sine { .. }) {
                1e-7
            } else {
                1e-5
            };
            for i in 0..1000 {
                let x = -span + 2.0 * span * (i as f64 + 0.5) / 1000.0;
                if x.abs() < 1e-3
                    && matches!(
                        act.kind(),
                        ActivationKind::Relu | ActivationKind::Elu | ActivationKind::Selu
                    )
                {
                    continue;
                }
                let fd1 = (act.value(x + h) - act.value(x - h)) / (2.0 * h);
                let fd2 = (act.derivative(x + h) - act.derivative(x - h)) / (2.0 * h);
                let scale1 = if let Activation::Sine { omega0 } = act {
                    omega0
                } else {
                    1.0
                };
                assert!(
                    rel_err(fd1 / scale1, act.derivative(x) / scale1) < 1e-6,
                    "{:?} f' at {x}",
                    act.kind()
                );
                assert!(
                    rel_err(
                        fd2 / (scale1 * scale1),
                        act.second_derivative(x) / (scale1 * scale1)
                    ) < 1e-6,
                    "{:?} f'' at {x}",
                    act.kind()
                );
            }
        }
    }

    #[test]
    fn relu_conventions() {
        assert_eq!(Activation::Relu.eval(0.0), (0.0, 0.0, 0.0));
        assert_eq!(Activation::Relu.eval(2.0), (2.0, 1.0, 0.0));
    }

    #[test]
    fn elu_selu_use_negative_branch_at_zero() {
        let elu = ActivationKind::Elu.with_omega(1.0);
        assert_eq!(elu.eval(0.0), (0.0, 1.0, 1.0));
        let selu = ActivationKind::Selu.with_omega(1.0);
        let (_, d1, d2) = selu.eval(0.0);
        assert_eq!(d1, SELU_LAMBDA * SELU_ALPHA);
        assert_eq!(d2, SELU_LAMBDA * SELU_ALPHA);
    }

    #[test]
    fn stable_at_extremes() {
        for act in catalog() {
            for x in [-800.0, -40.0, 40.0, 800.0] {
                let (a, b, c) = act.eval(x);
                assert!(
                    a.is_finite() && b.is_finite() && c.is_finite(),
                    "{:?} at {x}",
                    act.kind()
                );
            }
        }
    }

    #[test]
    fn parse_round_trip() {
        for k in ActivationKind::ALL {
            assert_eq!(k.name().parse::<ActivationKind>().unwrap(), k);
            assert_eq!(ActivationKind::from_code(k.code()).unwrap(), k);
        }
        assert!("swish".parse::<ActivationKind>().is_err());
    }
}
