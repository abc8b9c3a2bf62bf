use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand};
use sobolev_inr::commands::{self, RenderOptions, SceneSource};
use sobolev_inr::report::Manifest;

/// Fit coordinate networks to images, audio and posed views with value and
/// derivative supervision.
#[derive(Parser)]
#[command(name = "sobolev-inr", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit an image from a subsampled pixel grid.
    FitImage {
        input: PathBuf,
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        image: ImageFlags,
    },
    /// Fit a 16-bit mono WAV from every k-th sample.
    FitAudio {
        input: PathBuf,
        #[command(flatten)]
        common: Common,
        /// Derivative target units: raw, per-sample or normalized.
        #[arg(long)]
        units: Option<String>,
    },
    /// Fit a radiance field to posed images.
    FitScene {
        #[command(flatten)]
        scene: SceneArgs,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        filter: Option<String>,
        /// Samples per ray.
        #[arg(long)]
        samples: Option<usize>,
        /// Hold out every k-th view for evaluation.
        #[arg(long)]
        holdout: Option<usize>,
    },
    /// Render a checkpoint, optionally at a finer grid.
    Render {
        checkpoint: PathBuf,
        #[arg(long, default_value = "render")]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        scale: usize,
        #[command(flatten)]
        scene: OptionalSceneArgs,
        /// Comma-separated pose indices; all poses when omitted.
        #[arg(long, value_delimiter = ',')]
        views: Vec<usize>,
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Train every activation with and without positional encoding on the
    /// luma of an image.
    SweepActivations {
        input: PathBuf,
        #[arg(long, default_value = "sweep")]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        omega0: Option<f64>,
        #[arg(long)]
        pe_levels: Option<usize>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        layers: Option<usize>,
        #[arg(long)]
        width: Option<usize>,
        #[arg(long)]
        log_interval: Option<usize>,
        #[command(flatten)]
        image: ImageFlags,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// `key = value` file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    activation: Option<String>,
    #[arg(long)]
    omega0: Option<f64>,
    #[arg(long, overrides_with = "no_pe")]
    pe: bool,
    #[arg(long)]
    no_pe: bool,
    #[arg(long)]
    pe_levels: Option<usize>,
    #[arg(long, overrides_with = "no_sobolev")]
    sobolev: bool,
    #[arg(long)]
    no_sobolev: bool,
    /// Weight of the derivative loss.
    #[arg(long)]
    lambda: Option<f64>,
    /// Keep every k-th sample per axis for training.
    #[arg(long)]
    factor: Option<usize>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// `full` or a sample count.
    #[arg(long)]
    batch: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    log_interval: Option<usize>,
}

#[derive(Args)]
struct ImageFlags {
    /// sobel or vanilla.
    #[arg(long)]
    filter: Option<String>,
    /// raw, per-sample or normalized.
    #[arg(long)]
    units: Option<String>,
    /// full or downsampled.
    #[arg(long)]
    deriv_source: Option<String>,
}

#[derive(Args)]
#[command(group(ArgGroup::new("source").required(true).args(["toy_sphere", "scene", "poses"])))]
struct SceneArgs {
    /// The built-in sphere scene.
    #[arg(long)]
    toy_sphere: bool,
    /// A sphere scene description file.
    #[arg(long)]
    scene: Option<PathBuf>,
    /// LLFF poses_bounds.npy; needs --images.
    #[arg(long, requires = "images")]
    poses: Option<PathBuf>,
    #[arg(long)]
    images: Option<PathBuf>,
}

#[derive(Args)]
#[command(group(ArgGroup::new("render_source").args(["toy_sphere", "scene", "poses"])))]
struct OptionalSceneArgs {
    #[arg(long)]
    toy_sphere: bool,
    #[arg(long)]
    scene: Option<PathBuf>,
    #[arg(long, requires = "images")]
    poses: Option<PathBuf>,
    #[arg(long)]
    images: Option<PathBuf>,
}

fn source(
    toy: bool,
    scene: Option<PathBuf>,
    poses: Option<PathBuf>,
    images: Option<PathBuf>,
) -> Option<SceneSource> {
    if toy {
        Some(SceneSource::ToySphere)
    } else if let Some(path) = scene {
        Some(SceneSource::SphereFile(path))
    } else {
        Some(SceneSource::Llff {
            poses: poses?,
            images: images?,
        })
    }
}

fn push<T: ToString>(flags: &mut Vec<(&'static str, String)>, key: &'static str, v: Option<T>) {
    if let Some(v) = v {
        flags.push((key, v.to_string()));
    }
}

impl Common {
    fn flags(&self) -> Vec<(&'static str, String)> {
        let mut f = Vec::new();
        push(&mut f, "activation", self.activation.clone());
        push(&mut f, "omega0", self.omega0);
        push(&mut f, "pe", (self.pe || self.no_pe).then_some(self.pe));
        push(&mut f, "pe-levels", self.pe_levels);
        push(
            &mut f,
            "sobolev",
            (self.sobolev || self.no_sobolev).then_some(self.sobolev),
        );
        push(&mut f, "lambda", self.lambda);
        push(&mut f, "factor", self.factor);
        push(&mut f, "iters", self.iters);
        push(&mut f, "lr", self.lr);
        push(&mut f, "batch", self.batch.clone());
        push(&mut f, "seed", self.seed);
        push(&mut f, "layers", self.layers);
        push(&mut f, "width", self.width);
        push(&mut f, "log-interval", self.log_interval);
        f
    }
}

impl ImageFlags {
    fn extend(&self, f: &mut Vec<(&'static str, String)>) {
        push(f, "filter", self.filter.clone());
        push(f, "units", self.units.clone());
        push(f, "deriv-source", self.deriv_source.clone());
    }
}

fn print_summary(m: &Manifest, out: &Path) {
    let metrics: Vec<String> = m.metrics.iter().map(|(k, v)| format!("{k}={v}")).collect();
    println!(
        "{} {}: {} ({:.1}s) -> {}",
        m.command,
        m.status,
        metrics.join(" "),
        m.duration_secs,
        out.display()
    );
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::FitImage {
            input,
            common,
            image,
        } => {
            let mut flags = common.flags();
            image.extend(&mut flags);
            let s = commands::resolve(
                commands::FIT_IMAGE_DEFAULTS,
                common.config.as_deref(),
                &flags,
            )?;
            print_summary(&commands::fit_image(&input, &common.out, &s)?, &common.out);
        }
        Command::FitAudio {
            input,
            common,
            units,
        } => {
            let mut flags = common.flags();
            push(&mut flags, "units", units);
            let s = commands::resolve(
                commands::FIT_AUDIO_DEFAULTS,
                common.config.as_deref(),
                &flags,
            )?;
            print_summary(&commands::fit_audio(&input, &common.out, &s)?, &common.out);
        }
        Command::FitScene {
            scene,
            common,
            filter,
            samples,
            holdout,
        } => {
            let src = source(scene.toy_sphere, scene.scene, scene.poses, scene.images).ok_or_else(
                || anyhow::anyhow!("choose --toy-sphere, --scene or --poses with --images"),
            )?;
            let mut flags = common.flags();
            push(&mut flags, "filter", filter);
            push(&mut flags, "samples", samples);
            push(&mut flags, "holdout", holdout);
            let s = commands::resolve(
                commands::FIT_SCENE_DEFAULTS,
                common.config.as_deref(),
                &flags,
            )?;
            print_summary(&commands::fit_scene(&src, &common.out, &s)?, &common.out);
        }
        Command::Render {
            checkpoint,
            out,
            scale,
            scene,
            views,
            samples,
        } => {
            let opts = RenderOptions {
                scale,
                scene: source(scene.toy_sphere, scene.scene, scene.poses, scene.images),
                views,
                samples,
            };
            print_summary(&commands::render(&checkpoint, &out, &opts)?, &out);
        }
        Command::SweepActivations {
            input,
            out,
            config,
            omega0,
            pe_levels,
            lambda,
            iters,
            lr,
            seed,
            layers,
            width,
            log_interval,
            image,
        } => {
            let mut flags = Vec::new();
            push(&mut flags, "omega0", omega0);
            push(&mut flags, "pe-levels", pe_levels);
            push(&mut flags, "lambda", lambda);
            push(&mut flags, "iters", iters);
            push(&mut flags, "lr", lr);
            push(&mut flags, "seed", seed);
            push(&mut flags, "layers", layers);
            push(&mut flags, "width", width);
            push(&mut flags, "log-interval", log_interval);
            image.extend(&mut flags);
            let s = commands::resolve(commands::SWEEP_DEFAULTS, config.as_deref(), &flags)?;
            let (m, rows) = commands::sweep_activations(&input, &out, &s)?;
            for r in &rows {
                println!(
                    "{:<14} psnr={:.2} ssim={:.4} {}",
                    r.name(),
                    r.psnr,
                    r.ssim,
                    r.status
                );
            }
            print_summary(&m, &out);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
