//! Image and audio regression: dataset assembly, training and evaluation.

use alloc::vec;
use alloc::vec::Vec;

use crate::encoding::EncodingConfig;
use crate::error::{Error, Result};
use crate::filters::{
    audio_derivative, downsample_nearest, image_derivatives, upsample_nearest, DerivativeUnits,
    FilterKind,
};
use crate::grid::Grid2D;
use crate::math;
use crate::metrics::{psnr, ssim, EvalProtocol};
use crate::network::{forward, forward_dual, init_params, MlpArch, MlpParams};
use crate::rng::Rng;
use crate::training::{psnr_from_mse, train, LogEntry, SampledSignal, TrainConfig};

/// Centre of sample `i` out of `n`, mapped to `[-1, 1]`.
pub fn pixel_coord(i: usize, n: usize) -> f64 {
    2.0 * (i as f64 + 0.5) / n as f64 - 1.0
}

/// `(rows*cols) x 2` coordinates in row-major pixel order; column 0 is the
/// horizontal axis `u`, column 1 the vertical axis `v` (downwards).
pub fn pixel_grid_coords(rows: usize, cols: usize) -> Grid2D {
    let mut g = Grid2D::zeros(rows * cols, 2, 1);
    for r in 0..rows {
        for c in 0..cols {
            let row = g.row_mut(r * cols + c);
            row[0] = pixel_coord(c, cols);
            row[1] = pixel_coord(r, rows);
        }
    }
    g
}

/// Hidden layer layout and the positional-encoding level count used when
/// encoding is switched on in the training config.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetworkSpec {
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub pe_frequencies: usize,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        NetworkSpec {
            hidden_layers: 4,
            hidden_width: 256,
            pe_frequencies: 5,
        }
    }
}

impl NetworkSpec {
    pub fn arch(&self, input_dim: usize, output_dim: usize, use_pe: bool) -> MlpArch {
        MlpArch {
            input_dim,
            output_dim,
            hidden_layers: self.hidden_layers,
            hidden_width: self.hidden_width,
            encoding: use_pe.then(|| EncodingConfig::new(self.pe_frequencies)),
        }
    }
}

/// Fresh parameters for a config, seeded from `config.seed`.
pub fn init_for(
    config: &TrainConfig,
    spec: &NetworkSpec,
    input_dim: usize,
    output_dim: usize,
) -> Result<MlpParams> {
    let arch = spec.arch(input_dim, output_dim, config.use_positional_encoding);
    let mut rng = Rng::new(config.seed);
    init_params(
        &arch,
        config.activation.with_omega(config.omega0),
        None,
        &mut rng,
    )
}

/// Where image derivative targets come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DerivSource {
    /// Filter the full-resolution image.
    #[default]
    Full,
    /// Filter only the kept low-resolution samples.
    Downsampled,
}

fn check_unit_range(data: &[f64], lo: f64, hi: f64, what: &str) -> Result<()> {
    if data.iter().any(|&v| !(lo..=hi).contains(&v)) {
        return Err(Error::invalid(alloc::format!(
            "{what}: values must lie in [{lo}, {hi}]"
        )));
    }
    Ok(())
}

/// Builds the training triples of an RGB or grayscale image in `[0, 1]`.
/// One pixel of every `factor x factor` block is flagged for training.
pub fn build_image_dataset(
    img: &Grid2D,
    factor: usize,
    filter: FilterKind,
    units: DerivativeUnits,
    source: DerivSource,
) -> Result<SampledSignal> {
    let (rows, cols, ch) = img.shape();
    if ch != 3 && ch != 1 {
        return Err(Error::invalid(alloc::format!(
            "build_image_dataset: expected an RGB or grayscale image, got {ch} channels"
        )));
    }
    check_unit_range(img.data(), 0.0, 1.0, "build_image_dataset")?;
    let (small, kept) = downsample_nearest(img, factor)?;
    let mut train_mask = vec![false; rows * cols];
    for &i in &kept {
        train_mask[i] = true;
    }

    let gain = filter.gain();
    let (du, dv) = match source {
        DerivSource::Full => image_derivatives(img, filter)?,
        DerivSource::Downsampled => {
            // one low-resolution step spans `factor` pixels
            let (su, sv) = image_derivatives(&small, filter)?;
            let inv = 1.0 / factor as f64;
            (
                upsample_nearest(&su.scale(inv), factor, rows, cols),
                upsample_nearest(&sv.scale(inv), factor, rows, cols),
            )
        }
    };
    let su = units.scale(gain, cols);
    let sv = units.scale(gain, rows);
    let mut derivs = Grid2D::zeros(rows * cols, 2 * ch, 1);
    for r in 0..rows {
        for c in 0..cols {
            let row = derivs.row_mut(r * cols + c);
            for k in 0..ch {
                row[k] = du.get(r, c, k) * su;
                row[ch + k] = dv.get(r, c, k) * sv;
            }
        }
    }
    Ok(SampledSignal {
        coords: pixel_grid_coords(rows, cols),
        values: img.flatten_pixels(),
        derivs: Some(derivs),
        train_mask,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageTask {
    pub image: Grid2D,
    pub factor: usize,
    pub network: NetworkSpec,
    pub config: TrainConfig,
    pub protocol: EvalProtocol,
    pub deriv_source: DerivSource,
}

impl ImageTask {
    pub fn new(image: Grid2D) -> Self {
        ImageTask {
            image,
            factor: 4,
            network: NetworkSpec::default(),
            config: TrainConfig::default(),
            protocol: EvalProtocol::image_regression(),
            deriv_source: DerivSource::Full,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageReport {
    pub psnr: f64,
    pub ssim: f64,
    /// Network output at every pixel, `rows x cols x C`.
    pub prediction: Grid2D,
    /// Network partials along `u` and `v` at every pixel, in the training
    /// target units.
    pub du: Grid2D,
    pub dv: Grid2D,
    pub params: MlpParams,
    pub log: Vec<LogEntry>,
    pub final_value_loss: f64,
    pub final_deriv_loss: f64,
}

/// Network values and coordinate partials at every row of `coords`, in blocks.
pub fn render_with_tangents(params: &MlpParams, coords: &Grid2D) -> Result<(Grid2D, Vec<Grid2D>)> {
    const BLOCK: usize = 4096;
    let n = coords.rows();
    let d = coords.cols();
    let c = params.output_dim();
    let mut values = Grid2D::zeros(n, c, 1);
    let mut tangents: Vec<Grid2D> = (0..d).map(|_| Grid2D::zeros(n, c, 1)).collect();
    let mut start = 0;
    while start < n {
        let end = (start + BLOCK).min(n);
        let idx: Vec<usize> = (start..end).collect();
        let (inputs, seeds) = params.prepare_inputs(&coords.gather_rows(&idx))?;
        let out = forward_dual(params, &inputs, &seeds)?;
        for (k, i) in (start..end).enumerate() {
            values.row_mut(i).copy_from_slice(out.primal.row(k));
            for (t, src) in tangents.iter_mut().zip(&out.tangents) {
                t.row_mut(i).copy_from_slice(src.row(k));
            }
        }
        start = end;
    }
    Ok((values, tangents))
}

/// Network values at every row of `coords`.
pub fn render_values(params: &MlpParams, coords: &Grid2D) -> Result<Grid2D> {
    forward(params, &params.prepare_values(coords)?)
}

/// Per-pixel Euclidean norm over channels.
pub fn derivative_magnitude(field: &Grid2D) -> Grid2D {
    let (rows, cols, ch) = field.shape();
    let data = field
        .data()
        .chunks_exact(ch)
        .map(|p| math::sqrt(p.iter().map(|v| v * v).sum()))
        .collect();
    Grid2D::from_vec(rows, cols, 1, data).expect("finite magnitudes")
}

/// Trains on the image's training pixels and scores the full-resolution
/// prediction.
pub fn run_image_regression(task: &ImageTask) -> Result<ImageReport> {
    let (rows, cols, ch) = task.image.shape();
    let data = build_image_dataset(
        &task.image,
        task.factor,
        task.config.filter,
        task.config.units,
        task.deriv_source,
    )?;
    let params = init_for(&task.config, &task.network, 2, ch)?;
    let outcome = train(&task.config, &data, params)?;
    let (values, tangents) = render_with_tangents(&outcome.params, &data.coords)?;
    let prediction = values.unflatten_pixels(rows, cols)?;
    let eval_mask: Vec<bool> = data.train_mask.iter().map(|t| !t).collect();
    let mask = task
        .protocol
        .restrict_to_eval_samples
        .then_some(eval_mask.as_slice());
    let psnr = psnr(&prediction, &task.image, &task.protocol, mask)?;
    let ssim = ssim(&prediction, &task.image, &task.protocol)?;
    Ok(ImageReport {
        psnr,
        ssim,
        prediction,
        du: tangents[0].unflatten_pixels(rows, cols)?,
        dv: tangents[1].unflatten_pixels(rows, cols)?,
        params: outcome.params,
        log: outcome.log,
        final_value_loss: outcome.final_value_loss,
        final_deriv_loss: outcome.final_deriv_loss,
    })
}

/// Training triples of a mono waveform in `[-1, 1]`; every `factor`-th
/// sample trains. Derivatives come from two-sided differences.
pub fn build_audio_dataset(
    wave: &[f64],
    factor: usize,
    units: DerivativeUnits,
) -> Result<SampledSignal> {
    if factor == 0 {
        return Err(Error::invalid(
            "build_audio_dataset: factor must be at least 1",
        ));
    }
    check_unit_range(wave, -1.0, 1.0, "build_audio_dataset")?;
    let n = wave.len();
    let per_sample = audio_derivative(wave, 1.0)?;
    let s = units.scale(FilterKind::Central1d.gain(), n);
    let coords = (0..n).map(|i| pixel_coord(i, n)).collect();
    Ok(SampledSignal {
        coords: Grid2D::from_vec(n, 1, 1, coords)?,
        values: Grid2D::from_vec(n, 1, 1, wave.to_vec())?,
        derivs: Some(Grid2D::from_vec(
            n,
            1,
            1,
            per_sample.iter().map(|d| d * s).collect(),
        )?),
        train_mask: (0..n).map(|i| i % factor == 0).collect(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AudioTask {
    pub wave: Vec<f64>,
    pub factor: usize,
    pub network: NetworkSpec,
    pub config: TrainConfig,
}

impl AudioTask {
    pub fn new(wave: Vec<f64>) -> Self {
        AudioTask {
            wave,
            factor: 5,
            network: NetworkSpec::default(),
            config: TrainConfig {
                learning_rate: 5e-5,
                filter: FilterKind::Central1d,
                value_range: 2.0,
                ..TrainConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AudioReport {
    /// Held-out samples, dynamic range 2.
    pub psnr: f64,
    pub prediction: Vec<f64>,
    pub params: MlpParams,
    pub log: Vec<LogEntry>,
    pub final_value_loss: f64,
    pub final_deriv_loss: f64,
}

pub fn run_audio_regression(task: &AudioTask) -> Result<AudioReport> {
    let data = build_audio_dataset(&task.wave, task.factor, task.config.units)?;
    let params = init_for(&task.config, &task.network, 1, 1)?;
    let outcome = train(&task.config, &data, params)?;
    let prediction = render_values(&outcome.params, &data.coords)?.into_vec();
    let eval = data.eval_indices();
    let psnr = if eval.is_empty() {
        f64::NAN
    } else {
        let mse = eval
            .iter()
            .map(|&i| (prediction[i] - task.wave[i]) * (prediction[i] - task.wave[i]))
            .sum::<f64>()
            / eval.len() as f64;
        psnr_from_mse(mse, 2.0)
    };
    Ok(AudioReport {
        psnr,
        prediction,
        params: outcome.params,
        log: outcome.log,
        final_value_loss: outcome.final_value_loss,
        final_deriv_loss: outcome.final_deriv_loss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::ChannelMode;
    use proptest::prelude::*;

    fn gradient_image(rows: usize, cols: usize) -> Grid2D {
        let mut g = Grid2D::zeros(rows, cols, 3);
        for r in 0..rows {
            for c in 0..cols {
                let x = c as f64 / cols as f64;
                let y = r as f64 / rows as f64;
                g.set(r, c, 0, x);
                g.set(r, c, 1, y);
                g.set(r, c, 2, 0.5 + 0.4 * math::sin(3.0 * x + 2.0 * y));
            }
        }
        g
    }

    #[test]
    fn split_counts() {
        let d = build_image_dataset(
            &gradient_image(4, 4),
            4,
            FilterKind::Sobel,
            DerivativeUnits::Normalized,
            DerivSource::Full,
        )
        .unwrap();
        assert_eq!(d.train_indices(), [0]);
        assert_eq!(d.eval_indices().len(), 15);
        let d = build_image_dataset(
            &gradient_image(8, 8),
            4,
            FilterKind::Sobel,
            DerivativeUnits::Normalized,
            DerivSource::Full,
        )
        .unwrap();
        assert_eq!(d.train_indices().len(), 4);
        assert_eq!(d.eval_indices().len(), 60);
        assert!((d.train_indices().len() as f64 / 64.0 - 0.0625).abs() < 1e-15);
    }

    #[test]
    fn corner_coordinates() {
        let n = 8;
        let c = pixel_grid_coords(n, n);
        let edge = 1.0 - 1.0 / n as f64;
        assert_eq!(c.row(0), [-edge, -edge]);
        assert_eq!(c.row(n * n - 1), [edge, edge]);
        assert_eq!(c.row(n - 1), [edge, -edge]);
    }

    #[test]
    fn rejects_bad_images() {
        let two = Grid2D::filled(4, 4, 2, 0.5);
        assert!(build_image_dataset(
            &two,
            2,
            FilterKind::Sobel,
            DerivativeUnits::Raw,
            DerivSource::Full
        )
        .is_err());
        let hot = Grid2D::filled(4, 4, 3, 1.5);
        assert!(build_image_dataset(
            &hot,
            2,
            FilterKind::Sobel,
            DerivativeUnits::Raw,
            DerivSource::Full
        )
        .is_err());
    }

    #[test]
    fn normalized_targets_match_linear_ramp() {
        // r = x-coordinate of the pixel centre, so dr/du = 1 in the interior
        let n = 16;
        let mut img = Grid2D::zeros(n, n, 3);
        for r in 0..n {
            for c in 0..n {
                img.set(r, c, 0, 0.5 + 0.5 * pixel_coord(c, n));
                img.set(r, c, 1, 0.5 + 0.25 * pixel_coord(r, n));
            }
        }
        for kind in [FilterKind::Sobel, FilterKind::Vanilla] {
            let d = build_image_dataset(
                &img,
                2,
                kind,
                DerivativeUnits::Normalized,
                DerivSource::Full,
            )
            .unwrap();
            let derivs = d.derivs.unwrap();
            let row = derivs.row(5 * n + 7);
            assert!((row[0] - 0.5).abs() < 1e-12);
            assert!((row[4] - 0.25).abs() < 1e-12);
            assert!(row[1].abs() < 1e-12 && row[3].abs() < 1e-12);
        }
    }

    #[test]
    fn downsampled_source_on_ramp() {
        let n = 16;
        let mut img = Grid2D::zeros(n, n, 3);
        for r in 0..n {
            for c in 0..n {
                img.set(r, c, 0, 0.5 + 0.5 * pixel_coord(c, n));
            }
        }
        let d = build_image_dataset(
            &img,
            4,
            FilterKind::Sobel,
            DerivativeUnits::Normalized,
            DerivSource::Downsampled,
        )
        .unwrap();
        let derivs = d.derivs.unwrap();
        // interior kept pixel of the 4x4 grid
        assert!((derivs.row(4 * n + 4)[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn dataset_is_deterministic() {
        let img = gradient_image(9, 7);
        let a = build_image_dataset(
            &img,
            3,
            FilterKind::Sobel,
            DerivativeUnits::Normalized,
            DerivSource::Full,
        )
        .unwrap();
        let b = build_image_dataset(
            &img,
            3,
            FilterKind::Sobel,
            DerivativeUnits::Normalized,
            DerivSource::Full,
        )
        .unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]
        #[test]
        fn masks_partition(rows in 1usize..20, cols in 1usize..20, factor in 1usize..6) {
            let img = Grid2D::filled(rows, cols, 3, 0.25);
            let d = build_image_dataset(&img, factor, FilterKind::Vanilla, DerivativeUnits::Raw, DerivSource::Full).unwrap();
            let t = d.train_indices();
            let e = d.eval_indices();
            prop_assert_eq!(t.len() + e.len(), rows * cols);
            prop_assert_eq!(t.len(), rows.div_ceil(factor) * cols.div_ceil(factor));
        }
    }

    fn small_task(img: Grid2D, sobolev: bool) -> ImageTask {
        ImageTask {
            factor: 2,
            network: NetworkSpec {
                hidden_layers: 2,
                hidden_width: 16,
                pe_frequencies: 2,
            },
            config: TrainConfig {
                iterations: 60,
                learning_rate: 1e-3,
                use_sobolev: sobolev,
                log_interval: 20,
                omega0: 10.0,
                ..TrainConfig::default()
            },
            protocol: EvalProtocol {
                channel_mode: ChannelMode::LumaY,
                border_crop: 1,
                restrict_to_eval_samples: true,
            },
            ..ImageTask::new(img)
        }
    }

    #[test]
    fn prediction_reproduces_training_loss() {
        let task = small_task(gradient_image(16, 16), true);
        let rep = run_image_regression(&task).unwrap();
        let data = build_image_dataset(
            &task.image,
            2,
            FilterKind::Sobel,
            DerivativeUnits::Normalized,
            DerivSource::Full,
        )
        .unwrap();
        let idx = data.train_indices();
        let pred = rep.prediction.flatten_pixels().gather_rows(&idx);
        let target = data.values.gather_rows(&idx);
        let mse: f64 = pred
            .data()
            .iter()
            .zip(target.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / idx.len() as f64;
        assert!((mse - rep.final_value_loss).abs() <= 1e-9 * rep.final_value_loss);
        assert_eq!(rep.log.len(), 3);
        assert_eq!(rep.du.shape(), (16, 16, 3));
        assert!(rep.ssim <= 1.0 && rep.psnr.is_finite());
    }

    #[test]
    fn tangents_match_values_by_differences() {
        let task = small_task(gradient_image(16, 16), true);
        let rep = run_image_regression(&task).unwrap();
        let h = 1e-6;
        let p = Grid2D::from_rows(&[
            [0.1 + h, -0.3],
            [0.1 - h, -0.3],
            [0.1, -0.3 + h],
            [0.1, -0.3 - h],
        ])
        .unwrap();
        let v = render_values(&rep.params, &p).unwrap();
        let (_, t) =
            render_with_tangents(&rep.params, &Grid2D::from_rows(&[[0.1, -0.3]]).unwrap()).unwrap();
        for k in 0..3 {
            let fu = (v.get(0, k, 0) - v.get(1, k, 0)) / (2.0 * h);
            let fv = (v.get(2, k, 0) - v.get(3, k, 0)) / (2.0 * h);
            assert!((fu - t[0].get(0, k, 0)).abs() < 1e-6 * fu.abs().max(1.0));
            assert!((fv - t[1].get(0, k, 0)).abs() < 1e-6 * fv.abs().max(1.0));
        }
    }

    #[test]
    fn constant_image_with_identical_split_is_exact() {
        let img = Grid2D::filled(2, 2, 3, 0.0);
        let mut params = init_for(
            &TrainConfig::default(),
            &NetworkSpec {
                hidden_layers: 1,
                hidden_width: 4,
                pe_frequencies: 0,
            },
            2,
            3,
        )
        .unwrap();
        for t in params.tensors_mut() {
            t.iter_mut().for_each(|v| *v = 0.0);
        }
        let pred = render_values(&params, &pixel_grid_coords(2, 2))
            .unwrap()
            .unflatten_pixels(2, 2)
            .unwrap();
        let proto = EvalProtocol {
            channel_mode: ChannelMode::RgbAll,
            border_crop: 0,
            restrict_to_eval_samples: false,
        };
        assert_eq!(psnr(&pred, &img, &proto, None).unwrap(), f64::INFINITY);
    }

    #[test]
    fn audio_dataset_layout() {
        let n = 11;
        let wave: Vec<f64> = (0..n).map(|i| 0.05 * i as f64).collect();
        let d = build_audio_dataset(&wave, 5, DerivativeUnits::Normalized).unwrap();
        assert_eq!(d.train_indices(), [0, 5, 10]);
        // slope 0.05 per sample, one sample spans 2/n coordinate units
        let want = 0.05 * n as f64 / 2.0;
        for i in 0..n {
            assert!((d.derivs.as_ref().unwrap().get(i, 0, 0) - want).abs() < 1e-12);
        }
        assert!(build_audio_dataset(&[0.0, 2.0, 0.0], 1, DerivativeUnits::Raw).is_err());
        assert!(build_audio_dataset(&[0.0, 0.1], 1, DerivativeUnits::Raw).is_err());
    }

    #[test]
    fn silent_audio_with_zero_network() {
        let wave = vec![0.0; 50];
        let data = build_audio_dataset(&wave, 5, DerivativeUnits::Normalized).unwrap();
        let spec = NetworkSpec {
            hidden_layers: 1,
            hidden_width: 4,
            pe_frequencies: 0,
        };
        let mut params = init_for(&AudioTask::new(wave).config, &spec, 1, 1).unwrap();
        for t in params.tensors_mut() {
            t.iter_mut().for_each(|v| *v = 0.0);
        }
        let pred = render_values(&params, &data.coords).unwrap();
        let mse = data
            .eval_indices()
            .iter()
            .map(|&i| pred.get(i, 0, 0).powi(2))
            .sum::<f64>();
        assert_eq!(psnr_from_mse(mse, 2.0), f64::INFINITY);
    }
}
