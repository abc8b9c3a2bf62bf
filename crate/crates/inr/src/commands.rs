//! The work behind each subcommand. Every run writes its artefacts and a
//! `manifest.json` into its output directory; the manifest is written on
//! failure too, with `status = "failed"` and the error text.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context};
use sobolev_core::filters::{DerivativeUnits, FilterKind};
use sobolev_core::network::ActivationKind;
use sobolev_core::pipelines::{
    derivative_magnitude, pixel_coord, pixel_grid_coords, render_values, run_audio_regression,
    run_image_regression, AudioTask, DerivSource, ImageTask, NetworkSpec,
};
use sobolev_core::radiance::{
    render_view, train_inverse_rendering, RadianceConfig, RadianceField, View,
};
use sobolev_core::training::{BatchSize, TrainConfig};
use sobolev_core::Grid2D;

use crate::audio::{read_wav, write_wav, Waveform};
use crate::checkpoint::{Checkpoint, ModelKind};
use crate::image::{encode_png, normalize_for_display, to_gray, to_rgb};
use crate::report::{metrics_csv, Manifest};
use crate::scene::{load_llff_views, SphereSpec};
use crate::settings::Settings;

pub const FIT_IMAGE_DEFAULTS: &[(&str, &str)] = &[
    ("activation", "sine"),
    ("omega0", "30"),
    ("pe", "false"),
    ("pe-levels", "5"),
    ("sobolev", "true"),
    ("lambda", "1"),
    ("filter", "sobel"),
    ("units", "normalized"),
    ("deriv-source", "full"),
    ("factor", "4"),
    ("iters", "50000"),
    ("lr", "1e-4"),
    ("batch", "full"),
    ("seed", "0"),
    ("layers", "4"),
    ("width", "256"),
    ("log-interval", "100"),
];

pub const FIT_AUDIO_DEFAULTS: &[(&str, &str)] = &[
    ("activation", "sine"),
    ("omega0", "30"),
    ("pe", "false"),
    ("pe-levels", "5"),
    ("sobolev", "true"),
    ("lambda", "1"),
    ("units", "normalized"),
    ("factor", "5"),
    ("iters", "50000"),
    ("lr", "5e-5"),
    ("batch", "full"),
    ("seed", "0"),
    ("layers", "4"),
    ("width", "256"),
    ("log-interval", "100"),
];

pub const FIT_SCENE_DEFAULTS: &[(&str, &str)] = &[
    ("activation", "sine"),
    ("omega0", "1"),
    ("pe", "true"),
    ("pe-levels", "10"),
    ("sobolev", "true"),
    ("lambda", "1"),
    ("filter", "sobel"),
    ("iters", "400000"),
    ("lr", "5e-4"),
    ("batch", "128"),
    ("seed", "0"),
    ("layers", "8"),
    ("width", "256"),
    ("log-interval", "1000"),
    ("samples", "64"),
    ("holdout", "8"),
];

pub const SWEEP_DEFAULTS: &[(&str, &str)] = &[
    ("omega0", "30"),
    ("pe-levels", "5"),
    ("sobolev", "true"),
    ("lambda", "1"),
    ("filter", "sobel"),
    ("units", "normalized"),
    ("deriv-source", "full"),
    ("factor", "4"),
    ("iters", "10000"),
    ("lr", "1e-4"),
    ("batch", "full"),
    ("seed", "0"),
    ("layers", "4"),
    ("width", "256"),
    ("log-interval", "100"),
];

/// Defaults, then an optional config file, then flag overrides.
pub fn resolve(
    defaults: &[(&str, &str)],
    config: Option<&Path>,
    flags: &[(&str, String)],
) -> anyhow::Result<Settings> {
    let mut s = Settings::with_defaults(defaults);
    if let Some(path) = config {
        s.apply_file(path)
            .with_context(|| format!("reading config {}", path.display()))?;
    }
    s.apply(flags.iter().map(|(k, v)| (*k, v.clone())))?;
    if s.is_explicit("lambda") && !s.flag("sobolev")? {
        bail!("lambda is set but Sobolev training is off; drop one of them");
    }
    Ok(s)
}

fn parse_batch(s: &Settings) -> anyhow::Result<BatchSize> {
    match s.raw("batch")? {
        b if b.eq_ignore_ascii_case("full") => Ok(BatchSize::Full),
        _ => Ok(BatchSize::Samples(s.get("batch")?)),
    }
}

fn has(s: &Settings, key: &str) -> bool {
    s.keys().any(|k| k == key)
}

fn train_config(
    s: &Settings,
    activation: ActivationKind,
    use_pe: bool,
) -> anyhow::Result<TrainConfig> {
    let mut c = TrainConfig {
        lambda: s.get("lambda")?,
        learning_rate: s.get("lr")?,
        iterations: s.get("iters")?,
        batch_size: parse_batch(s)?,
        seed: s.get("seed")?,
        activation,
        omega0: s.get("omega0")?,
        use_positional_encoding: use_pe,
        use_sobolev: s.flag("sobolev")?,
        log_interval: s.get("log-interval")?,
        ..TrainConfig::default()
    };
    if has(s, "filter") {
        c.filter = s.get("filter")?;
    }
    if has(s, "units") {
        c.units = s.get("units")?;
    }
    c.validate()?;
    Ok(c)
}

fn network_spec(s: &Settings) -> anyhow::Result<NetworkSpec> {
    Ok(NetworkSpec {
        hidden_layers: s.get("layers")?,
        hidden_width: s.get("width")?,
        pe_frequencies: s.get("pe-levels")?,
    })
}

fn deriv_source(s: &Settings) -> anyhow::Result<DerivSource> {
    match s.raw("deriv-source")? {
        "full" => Ok(DerivSource::Full),
        "downsampled" => Ok(DerivSource::Downsampled),
        other => bail!("deriv-source must be `full` or `downsampled`, got `{other}`"),
    }
}

fn image_task(
    s: &Settings,
    image: Grid2D,
    activation: ActivationKind,
    use_pe: bool,
) -> anyhow::Result<ImageTask> {
    let mut task = ImageTask::new(image);
    task.factor = s.get("factor")?;
    task.network = network_spec(s)?;
    task.config = train_config(s, activation, use_pe)?;
    task.deriv_source = deriv_source(s)?;
    Ok(task)
}

fn write_file(dir: &Path, name: &str, bytes: &[u8], manifest: &mut Manifest) -> anyhow::Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
    manifest.output(name, bytes);
    Ok(())
}

fn read_input(path: &Path, manifest: &mut Manifest) -> anyhow::Result<Vec<u8>> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    manifest.input(&path.display().to_string(), &bytes);
    Ok(bytes)
}

/// Runs `body` and writes `manifest.json` whatever the outcome.
fn with_manifest<T>(
    command: &str,
    out: &Path,
    settings: Option<&Settings>,
    body: impl FnOnce(&mut Manifest) -> anyhow::Result<T>,
) -> anyhow::Result<(Manifest, T)> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let start = Instant::now();
    let mut manifest = Manifest::new(command);
    if let Some(s) = settings {
        manifest.config = s.to_map();
        manifest.seed = s.get("seed").ok();
    }
    let result = body(&mut manifest);
    manifest.duration_secs = start.elapsed().as_secs_f64();
    match &result {
        Ok(_) => manifest.status = "ok".into(),
        Err(e) => {
            manifest.status = "failed".into();
            manifest.failure = Some(format!("{e:#}"));
        }
    }
    manifest.write(&out.join("manifest.json"))?;
    result.map(|v| (manifest, v))
}

fn load_image(path: &Path, manifest: &mut Manifest) -> anyhow::Result<Grid2D> {
    let bytes = read_input(path, manifest)?;
    let loaded =
        crate::image::decode_png(&bytes).with_context(|| format!("decoding {}", path.display()))?;
    if loaded.dropped_alpha {
        let msg = format!("{}: alpha channel dropped", path.display());
        eprintln!("warning: {msg}");
        manifest.warnings.push(msg);
    }
    Ok(loaded.image)
}

pub fn fit_image(input: &Path, out: &Path, s: &Settings) -> anyhow::Result<Manifest> {
    with_manifest("fit-image", out, Some(s), |m| {
        let image = to_rgb(&load_image(input, m)?)?;
        let task = image_task(s, image, s.get("activation")?, s.flag("pe")?)?;
        let report = run_image_regression(&task)?;
        let (rows, cols, _) = task.image.shape();
        let ck = Checkpoint {
            kind: ModelKind::Image {
                rows: rows as u32,
                cols: cols as u32,
            },
            params: report.params.clone(),
        };
        write_file(out, "checkpoint.bin", &ck.to_bytes()?, m)?;
        write_file(out, "metrics.csv", metrics_csv(&report.log).as_bytes(), m)?;
        write_file(out, "pred.png", &encode_png(&report.prediction)?, m)?;
        let du = normalize_for_display(&derivative_magnitude(&report.du));
        let dv = normalize_for_display(&derivative_magnitude(&report.dv));
        write_file(out, "du.png", &encode_png(&du)?, m)?;
        write_file(out, "dv.png", &encode_png(&dv)?, m)?;
        m.metric("psnr", report.psnr);
        m.metric("ssim", report.ssim);
        m.metric("final_loss_val", report.final_value_loss);
        m.metric("final_loss_der", report.final_deriv_loss);
        m.metric("parameters", report.params.num_params() as f64);
        Ok(())
    })
    .map(|(m, ())| m)
}

pub fn fit_audio(input: &Path, out: &Path, s: &Settings) -> anyhow::Result<Manifest> {
    with_manifest("fit-audio", out, Some(s), |m| {
        read_input(input, m)?;
        let wave = read_wav(input).with_context(|| format!("decoding {}", input.display()))?;
        let mut task = AudioTask::new(wave.samples.clone());
        task.factor = s.get("factor")?;
        task.network = network_spec(s)?;
        task.config = TrainConfig {
            filter: FilterKind::Central1d,
            value_range: 2.0,
            ..train_config(s, s.get("activation")?, s.flag("pe")?)?
        };
        let report = run_audio_regression(&task)?;
        let ck = Checkpoint {
            kind: ModelKind::Audio {
                len: wave.samples.len() as u32,
                sample_rate: wave.sample_rate,
            },
            params: report.params.clone(),
        };
        write_file(out, "checkpoint.bin", &ck.to_bytes()?, m)?;
        write_file(out, "metrics.csv", metrics_csv(&report.log).as_bytes(), m)?;
        let pred_path = out.join("pred.wav");
        write_wav(
            &pred_path,
            &Waveform {
                samples: report.prediction.clone(),
                sample_rate: wave.sample_rate,
            },
        )?;
        m.output("pred.wav", &std::fs::read(&pred_path)?);
        m.metric("psnr", report.psnr);
        m.metric("final_loss_val", report.final_value_loss);
        m.metric("final_loss_der", report.final_deriv_loss);
        Ok(())
    })
    .map(|(m, ())| m)
}

/// Where posed images come from.
#[derive(Debug, Clone, PartialEq)]
pub enum SceneSource {
    ToySphere,
    SphereFile(PathBuf),
    Llff { poses: PathBuf, images: PathBuf },
}

impl SceneSource {
    pub fn views(&self, manifest: &mut Manifest) -> anyhow::Result<Vec<View>> {
        match self {
            SceneSource::ToySphere => Ok(SphereSpec::default().views()?),
            SceneSource::SphereFile(path) => {
                let bytes = read_input(path, manifest)?;
                let text = String::from_utf8(bytes).context("scene file is not UTF-8")?;
                Ok(SphereSpec::parse(&text)
                    .with_context(|| format!("parsing {}", path.display()))?
                    .views()?)
            }
            SceneSource::Llff { poses, images } => {
                read_input(poses, manifest)?;
                for file in crate::scene::list_pngs(images)? {
                    read_input(&file, manifest)?;
                }
                Ok(load_llff_views(poses, images)?)
            }
        }
    }
}

pub fn radiance_config(s: &Settings) -> anyhow::Result<RadianceConfig> {
    let defaults = RadianceConfig::default();
    let mut train = train_config(s, s.get("activation")?, s.flag("pe")?)?;
    train.value_range = 1.0;
    train.units = DerivativeUnits::PerSample;
    Ok(RadianceConfig {
        train,
        network: network_spec(s)?,
        samples_per_ray: s.get("samples")?,
        holdout_every: s.get("holdout")?,
        ..defaults
    })
}

pub fn fit_scene(source: &SceneSource, out: &Path, s: &Settings) -> anyhow::Result<Manifest> {
    with_manifest("fit-scene", out, Some(s), |m| {
        let views = source.views(m)?;
        let config = radiance_config(s)?;
        let report = train_inverse_rendering(&views, &config)?;
        let ck = Checkpoint {
            kind: ModelKind::Radiance {
                samples_per_ray: config.samples_per_ray as u32,
            },
            params: report.field.params.clone(),
        };
        write_file(out, "checkpoint.bin", &ck.to_bytes()?, m)?;
        write_file(out, "metrics.csv", metrics_csv(&report.log).as_bytes(), m)?;
        for &i in &report.eval_views {
            let img = render_view(&report.field, &views[i].pose, config.samples_per_ray)?;
            write_file(out, &format!("eval_{i:03}.png"), &encode_png(&img)?, m)?;
        }
        m.metric("eval_psnr", report.eval_psnr);
        m.metric("eval_ssim", report.eval_ssim);
        m.metric("train_views", report.train_views.len() as f64);
        m.metric("eval_views", report.eval_views.len() as f64);
        Ok(())
    })
    .map(|(m, ())| m)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RenderOptions {
    pub scale: usize,
    /// Poses for radiance checkpoints.
    pub scene: Option<SceneSource>,
    /// Subset of pose indices; all when empty.
    pub views: Vec<usize>,
    /// Overrides the checkpoint's samples per ray.
    pub samples: Option<usize>,
}

pub fn render(checkpoint: &Path, out: &Path, opts: &RenderOptions) -> anyhow::Result<Manifest> {
    with_manifest("render", out, None, |m| {
        m.config.insert("scale".into(), opts.scale.to_string());
        if opts.scale == 0 {
            bail!("scale must be at least 1");
        }
        let ck = Checkpoint::from_bytes(&read_input(checkpoint, m)?)?;
        match ck.kind {
            ModelKind::Image { rows, cols } => {
                let (r, c) = (rows as usize * opts.scale, cols as usize * opts.scale);
                let img =
                    render_values(&ck.params, &pixel_grid_coords(r, c))?.unflatten_pixels(r, c)?;
                write_file(out, "render.png", &encode_png(&img)?, m)?;
            }
            ModelKind::Audio { len, sample_rate } => {
                let n = len as usize * opts.scale;
                let coords =
                    Grid2D::from_vec(n, 1, 1, (0..n).map(|i| pixel_coord(i, n)).collect())?;
                let samples = render_values(&ck.params, &coords)?.into_vec();
                let path = out.join("render.wav");
                write_wav(
                    &path,
                    &Waveform {
                        samples,
                        sample_rate: sample_rate * opts.scale as u32,
                    },
                )?;
                m.output("render.wav", &std::fs::read(&path)?);
            }
            ModelKind::Radiance { samples_per_ray } => {
                let source = opts
                    .scene
                    .as_ref()
                    .context("radiance checkpoints need poses to render")?;
                let views = source.views(m)?;
                let field = RadianceField::from_params(ck.params)?;
                let spr = opts.samples.unwrap_or(samples_per_ray as usize);
                let idx: Vec<usize> = if opts.views.is_empty() {
                    (0..views.len()).collect()
                } else {
                    opts.views.clone()
                };
                for i in idx {
                    let view = views
                        .get(i)
                        .with_context(|| format!("no view {i}; scene has {}", views.len()))?;
                    let mut pose = view.pose;
                    pose.height *= opts.scale;
                    pose.width *= opts.scale;
                    pose.focal *= opts.scale as f64;
                    let img = render_view(&field, &pose, spr)?;
                    write_file(out, &format!("render_{i:03}.png"), &encode_png(&img)?, m)?;
                }
            }
        }
        Ok(())
    })
    .map(|(m, ())| m)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub activation: ActivationKind,
    pub pe: bool,
    pub status: String,
    pub psnr: f64,
    pub ssim: f64,
    pub final_loss_val: f64,
    pub final_loss_der: f64,
}

impl SweepRow {
    pub fn name(&self) -> String {
        format!("{}{}", self.activation, if self.pe { "_pe" } else { "" })
    }
}

pub const SUMMARY_HEADER: &str = "activation,pe,status,psnr,ssim,final_loss_val,final_loss_der";

pub fn summary_csv(rows: &[SweepRow]) -> String {
    let mut s = format!("{SUMMARY_HEADER}\n");
    for r in rows {
        s += &format!(
            "{},{},{},{},{},{},{}\n",
            r.activation, r.pe, r.status, r.psnr, r.ssim, r.final_loss_val, r.final_loss_der
        );
    }
    s
}

/// Trains every activation with and without positional encoding (sine only
/// without) on the luma of `input`, writing one loss curve per run and a
/// summary table. A run that fails is recorded and the sweep moves on.
pub fn sweep_activations(
    input: &Path,
    out: &Path,
    s: &Settings,
) -> anyhow::Result<(Manifest, Vec<SweepRow>)> {
    with_manifest("sweep-activations", out, Some(s), |m| {
        let gray = to_gray(&load_image(input, m)?)?;
        let curves = out.join("curves");
        std::fs::create_dir_all(&curves)?;
        let mut rows = Vec::new();
        for kind in ActivationKind::ALL {
            for pe in [false, true] {
                if pe && kind == ActivationKind::Sine {
                    continue;
                }
                let task = image_task(s, gray.clone(), kind, pe)?;
                let mut row = SweepRow {
                    activation: kind,
                    pe,
                    status: "ok".into(),
                    psnr: f64::NAN,
                    ssim: f64::NAN,
                    final_loss_val: f64::NAN,
                    final_loss_der: f64::NAN,
                };
                match run_image_regression(&task) {
                    Ok(report) => {
                        row.psnr = report.psnr;
                        row.ssim = report.ssim;
                        row.final_loss_val = report.final_value_loss;
                        row.final_loss_der = report.final_deriv_loss;
                        let name = format!("curves/{}.csv", row.name());
                        write_file(out, &name, metrics_csv(&report.log).as_bytes(), m)?;
                    }
                    Err(e) => {
                        eprintln!("warning: {} failed: {e}", row.name());
                        row.status = format!("failed: {e}").replace(',', ";");
                    }
                }
                m.metric(&format!("psnr_{}", row.name()), row.psnr);
                rows.push(row);
            }
        }
        write_file(out, "summary.csv", summary_csv(&rows).as_bytes(), m)?;
        Ok(rows)
    })
}
