use alloc::vec::Vec;

use super::activation::{Activation, ActivationKind};
use crate::encoding::{self, EncodingConfig};
use crate::error::{Error, Result};
use crate::grid::Grid2D;
use crate::math;
use crate::rng::Rng;

/// Weight initialization scheme. Biases always start at zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitScheme {
    /// First layer `U(-1/n, 1/n)`, later layers `U(-sqrt(6/n)/omega0, sqrt(6/n)/omega0)`.
    SirenUniform,
    /// `N(0, 2/n)`.
    KaimingNormal,
    /// `N(0, 2/(n_in + n_out))`.
    XavierNormal,
    /// `N(0, 1/n)`.
    ScaledNormal,
}

impl InitScheme {
    pub fn default_for(kind: ActivationKind) -> Self {
        match kind {
            ActivationKind::Sine => InitScheme::SirenUniform,
            ActivationKind::Relu | ActivationKind::Softplus => InitScheme::KaimingNormal,
            ActivationKind::Sigmoid | ActivationKind::Tanh => InitScheme::XavierNormal,
            ActivationKind::Elu | ActivationKind::Selu => InitScheme::ScaledNormal,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            InitScheme::SirenUniform => "siren-uniform",
            InitScheme::KaimingNormal => "kaiming-normal",
            InitScheme::XavierNormal => "xavier-normal",
            InitScheme::ScaledNormal => "scaled-normal",
        }
    }
}

/// Layer sizes of a coordinate MLP. `hidden_layers` activated layers of
/// `hidden_width` units followed by one linear output layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MlpArch {
    pub input_dim: usize,
    pub output_dim: usize,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub encoding: Option<EncodingConfig>,
}

impl MlpArch {
    pub fn encoded_width(&self) -> usize {
        match &self.encoding {
            Some(cfg) => cfg.output_width(self.input_dim),
            None => self.input_dim,
        }
    }

    /// `(out, in)` for every layer, output layer last.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::with_capacity(self.hidden_layers + 1);
        let mut fan_in = self.encoded_width();
        for _ in 0..self.hidden_layers {
            shapes.push((self.hidden_width, fan_in));
            fan_in = self.hidden_width;
        }
        shapes.push((self.output_dim, fan_in));
        shapes
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `out x in`.
    pub weight: Grid2D,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn fan_in(&self) -> usize {
        self.weight.cols()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.rows()
    }
}

/// Parameters of `f_theta`, and the shape used for its gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<Layer>,
    pub activation: Activation,
    pub encoding: Option<EncodingConfig>,
    pub input_dim: usize,
}

impl MlpParams {
    /// Checks that layers chain and the first layer matches the encoding.
    pub fn from_layers(
        layers: Vec<Layer>,
        activation: Activation,
        encoding: Option<EncodingConfig>,
        input_dim: usize,
    ) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("an MLP needs at least its output layer"));
        }
        let expected_in = match &encoding {
            Some(cfg) => cfg.output_width(input_dim),
            None => input_dim,
        };
        let mut fan_in = expected_in;
        for (k, layer) in layers.iter().enumerate() {
            if layer.fan_in() != fan_in || layer.bias.len() != layer.fan_out() {
                return Err(Error::invalid(alloc::format!(
                    "layer {k} is {}x{} with {} biases, expected fan-in {fan_in}",
                    layer.fan_out(),
                    layer.fan_in(),
                    layer.bias.len()
                )));
            }
            fan_in = layer.fan_out();
        }
        Ok(MlpParams {
            layers,
            activation,
            encoding,
            input_dim,
        })
    }

    pub fn arch(&self) -> MlpArch {
        let hidden_layers = self.layers.len() - 1;
        MlpArch {
            input_dim: self.input_dim,
            output_dim: self.output_dim(),
            hidden_layers,
            hidden_width: if hidden_layers > 0 {
                self.layers[0].fan_out()
            } else {
                0
            },
            encoding: self.encoding,
        }
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Layer::fan_out)
    }

    pub fn encoded_width(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    /// Same shape, all zeros.
    pub fn zeros_like(&self) -> MlpParams {
        MlpParams {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    weight: Grid2D::zeros(l.weight.rows(), l.weight.cols(), 1),
                    bias: alloc::vec![0.0; l.bias.len()],
                })
                .collect(),
            activation: self.activation,
            encoding: self.encoding,
            input_dim: self.input_dim,
        }
    }

    /// Parameter tensors in a fixed order: per layer, weights then bias.
    pub fn tensors(&self) -> impl Iterator<Item = &[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.data(), l.bias.as_slice()])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.data_mut(), l.bias.as_mut_slice()])
    }

    /// Flattened copy of every parameter in [`MlpParams::tensors`] order.
    pub fn to_flat(&self) -> Vec<f64> {
        self.tensors().flat_map(|t| t.iter().copied()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().all(|t| t.iter().all(|v| v.is_finite()))
    }

    pub fn same_shape(&self, other: &MlpParams) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.weight.shape() == b.weight.shape() && a.bias.len() == b.bias.len())
    }

    /// Maps raw coordinates (`batch x D`) to network inputs and the tangent
    /// seeds for each coordinate axis.
    pub fn prepare_inputs(&self, coords: &Grid2D) -> Result<(Grid2D, Vec<Grid2D>)> {
        if coords.cols() != self.input_dim {
            return Err(Error::ShapeMismatch {
                op: "prepare_inputs",
                left: coords.shape(),
                right: (coords.rows(), self.input_dim, 1),
            });
        }
        match &self.encoding {
            Some(cfg) => Ok((
                encoding::encode(cfg, coords)?,
                encoding::encode_jacobian(cfg, coords)?,
            )),
            None => Ok((
                coords.clone(),
                encoding::identity_tangents(coords.rows(), self.input_dim),
            )),
        }
    }

    /// Network inputs without tangent seeds.
    pub fn prepare_values(&self, coords: &Grid2D) -> Result<Grid2D> {
        match &self.encoding {
            Some(cfg) => encoding::encode(cfg, coords),
            None => Ok(coords.clone()),
        }
    }
}

/// Draws fresh parameters. `scheme = None` picks the activation's default.
pub fn init_params(
    arch: &MlpArch,
    activation: Activation,
    scheme: Option<InitScheme>,
    rng: &mut Rng,
) -> Result<MlpParams> {
    if arch.hidden_layers == 0 {
        return Err(Error::invalid(
            "init_params: at least one hidden layer is required",
        ));
    }
    if arch.hidden_width == 0 || arch.output_dim == 0 || arch.input_dim == 0 {
        return Err(Error::invalid("init_params: zero-sized layer"));
    }
    let scheme = scheme.unwrap_or_else(|| InitScheme::default_for(activation.kind()));
    let omega0 = activation.omega0();
    let layers = arch
        .layer_shapes()
        .into_iter()
        .enumerate()
        .map(|(k, (fan_out, fan_in))| {
            let n = fan_out * fan_in;
            let fi = fan_in as f64;
            let values = match scheme {
                InitScheme::SirenUniform => {
                    let bound = if k == 0 {
                        1.0 / fi
                    } else {
                        math::sqrt(6.0 / fi) / omega0
                    };
                    rng.uniform_vec(-bound, bound, n)
                }
                InitScheme::KaimingNormal => rng.normal_vec(0.0, math::sqrt(2.0 / fi), n),
                InitScheme::XavierNormal => {
                    rng.normal_vec(0.0, math::sqrt(2.0 / (fi + fan_out as f64)), n)
                }
                InitScheme::ScaledNormal => rng.normal_vec(0.0, 1.0 / math::sqrt(fi), n),
            };
            Layer {
                weight: Grid2D::from_vec(fan_out, fan_in, 1, values).expect("finite init"),
                bias: alloc::vec![0.0; fan_out],
            }
        })
        .collect();
    MlpParams::from_layers(layers, activation, arch.encoding, arch.input_dim)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arch(width: usize) -> MlpArch {
        MlpArch {
            input_dim: 2,
            output_dim: 3,
            hidden_layers: 3,
            hidden_width: width,
            encoding: None,
        }
    }

    #[test]
    fn siren_hidden_bound() {
        let p = init_params(
            &arch(256),
            Activation::Sine { omega0: 30.0 },
            None,
            &mut Rng::new(1),
        )
        .unwrap();
        let bound = (6.0f64 / 256.0).sqrt() / 30.0;
        assert!((bound - 0.00510).abs() < 1e-5);
        for layer in &p.layers[1..] {
            assert!(layer.weight.data().iter().all(|w| w.abs() <= bound));
        }
        assert!(p.layers[0].weight.data().iter().all(|w| w.abs() <= 0.5));
        assert!(p.layers.iter().all(|l| l.bias.iter().all(|&b| b == 0.0)));
    }

    #[test]
    fn init_is_deterministic() {
        for kind in ActivationKind::ALL {
            let act = kind.with_omega(30.0);
            let a = init_params(&arch(16), act, None, &mut Rng::new(9)).unwrap();
            let b = init_params(&arch(16), act, None, &mut Rng::new(9)).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn kaiming_std() {
        let a = MlpArch {
            input_dim: 256,
            output_dim: 1,
            hidden_layers: 1,
            hidden_width: 400,
            encoding: None,
        };
        let p = init_params(&a, Activation::Relu, None, &mut Rng::new(3)).unwrap();
        let w = p.layers[0].weight.data();
        assert_eq!(w.len(), 102_400);
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let std = (w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / w.len() as f64).sqrt();
        let want = (2.0f64 / 256.0).sqrt();
        assert!((std - want).abs() / want < 0.1, "std {std}");
    }

    #[test]
    fn shapes_chain() {
        let a = MlpArch {
            encoding: Some(EncodingConfig::new(5)),
            ..arch(32)
        };
        let p = init_params(&a, Activation::Relu, None, &mut Rng::new(0)).unwrap();
        assert_eq!(p.encoded_width(), 22);
        assert_eq!(p.arch(), a);
        assert_eq!(
            p.num_params(),
            22 * 32 + 32 + 2 * (32 * 32 + 32) + 32 * 3 + 3
        );
        let mut bad = p.layers.clone();
        bad.swap(0, 1);
        assert!(MlpParams::from_layers(bad, p.activation, p.encoding, 2).is_err());
    }

    #[test]
    fn zero_hidden_layers_rejected() {
        let a = MlpArch {
            hidden_layers: 0,
            ..arch(8)
        };
        assert!(init_params(&a, Activation::Relu, None, &mut Rng::new(0)).is_err());
    }
}
