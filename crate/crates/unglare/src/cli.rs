//! Command-line front end.
//!
//! Exit codes: 0 success, 2 usage, 3 I/O failure, 4 malformed image file,
//! 5 bad configuration, 6 pipeline failure, 7 bad scene, 8 evaluation
//! mismatch.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand};

use unglare_core::cluster::PixelLabel;
use unglare_core::eval::{cluster_accuracy, psnr, EvalError, EvalReport};
use unglare_core::pipeline::{
    remove_highlights, remove_highlights_fast, PipelineError, PipelineOutput, Warning,
};
use unglare_core::synth::{add_noise, builtin_scene, render, SynthError};
use unglare_core::LinearImage;

use crate::config::{ConfigError, Settings};
use crate::imgio::{self, Format, ImageError};
use crate::report;
use crate::scenefile::{self, SceneFileError};

/// Environment variable holding the default worker count.
pub const THREADS_ENV: &str = "UNGLARE_THREADS";

#[derive(Debug, Parser)]
#[command(name = "unglare", version, about = "Separate specular highlights from linear-light images")]
pub struct Cli {
    /// Worker thread cap. Defaults to the config file value, then
    /// $UNGLARE_THREADS, then the available parallelism.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Split an image into diffuse and specular layers.
    Remove(RemoveArgs),
    /// Render a synthetic scene with ground truth.
    Synth(SynthArgs),
    /// Score a separation against ground truth.
    Eval(EvalArgs),
    /// Time repeated pipeline runs, excluding file I/O.
    Bench(BenchArgs),
}

#[derive(Debug, Args, Default)]
pub struct PipelineFlags {
    /// Config file of `key = value` lines; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Illuminant: `white`, `r,g,b` or `divide:r,g,b` (white-balance first).
    #[arg(long = "illum", value_name = "SPEC")]
    pub illumination: Option<String>,
    /// Starting cluster count.
    #[arg(long)]
    pub initial_k: Option<usize>,
    /// Unit-circle residual above which a pixel deviates.
    #[arg(long)]
    pub tau_dev: Option<f64>,
    /// Deviating fraction above which a cluster fails.
    #[arg(long)]
    pub tau_frac: Option<f64>,
    /// `auto` or a pixel count.
    #[arg(long)]
    pub min_cluster_size: Option<String>,
    /// Seed of the k-means initialization.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Cap on adaptive clustering iterations.
    #[arg(long)]
    pub max_iterations: Option<usize>,
    /// Cap on Lloyd iterations per k-means run.
    #[arg(long)]
    pub max_kmeans_iterations: Option<usize>,
    /// Width of the gamma histogram bins.
    #[arg(long)]
    pub bin_width: Option<f64>,
    /// Minimum mass of the first histogram peak as a fraction of the cluster.
    #[arg(long)]
    pub peak_mass_fraction: Option<f64>,
    /// Minimum count of the first histogram peak.
    #[arg(long)]
    pub peak_min_count: Option<f64>,
    /// Percentile used when no histogram peak qualifies.
    #[arg(long)]
    pub fallback_percentile: Option<f64>,
    /// Long-edge target of the fast path, or `off`.
    #[arg(long)]
    pub downsample: Option<String>,
    /// Cluster on a downsampled copy and separate at full resolution.
    #[arg(long)]
    pub fast: bool,
}

#[derive(Debug, Args)]
pub struct RemoveArgs {
    /// Input image (PPM P6 or PFM), linear light.
    pub input: PathBuf,
    /// Output path of the diffuse layer.
    #[arg(long)]
    pub diffuse: PathBuf,
    /// Output path of the specular layer.
    #[arg(long)]
    pub specular: PathBuf,
    /// Output path of the cluster map (8-bit PPM, flagged pixels at 255).
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Output format: ppm8, ppm16 or pfm. Defaults to the file extension.
    #[arg(long)]
    pub format: Option<String>,
    /// Treat the input as gamma 2.2 encoded and linearize it (lossy).
    #[arg(long)]
    pub gamma_decode: bool,
    /// Write run diagnostics as `key=value` lines.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[command(flatten)]
    pub pipeline: PipelineFlags,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Builtin scene name or path of a scene file.
    pub scene: String,
    /// Directory receiving input, diffuse, specular, labels and scene files.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Noise standard deviation on the 8-bit scale.
    #[arg(long, default_value_t = 0.0)]
    pub sigma: f64,
    /// Noise seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Integer upscale of the scene dimensions.
    #[arg(long, default_value_t = 1)]
    pub scale: usize,
    /// Image format of the outputs: ppm8, ppm16 or pfm.
    #[arg(long, default_value = "pfm")]
    pub format: String,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Recovered diffuse layer.
    #[arg(long)]
    pub diffuse: PathBuf,
    /// Ground-truth diffuse layer.
    #[arg(long)]
    pub truth_diffuse: PathBuf,
    /// Recovered specular layer.
    #[arg(long, requires = "truth_specular")]
    pub specular: Option<PathBuf>,
    /// Ground-truth specular layer.
    #[arg(long, requires = "specular")]
    pub truth_specular: Option<PathBuf>,
    /// Cluster map written by `remove --labels`.
    #[arg(long, requires = "truth_labels")]
    pub labels: Option<PathBuf>,
    /// Material map written by `synth`.
    #[arg(long, requires = "labels")]
    pub truth_labels: Option<PathBuf>,
    /// Diagnostics written by `remove --report`, for iterations and time.
    #[arg(long)]
    pub run_report: Option<PathBuf>,
    /// Also write the report as a `key=value` record.
    #[arg(long)]
    pub record: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Input image; omit when using --scene.
    #[arg(required_unless_present = "scene", conflicts_with = "scene")]
    pub input: Option<PathBuf>,
    /// Builtin scene to render in memory instead of reading a file.
    #[arg(long)]
    pub scene: Option<String>,
    /// Integer upscale of the --scene dimensions.
    #[arg(long, default_value_t = 1)]
    pub scale: usize,
    /// Number of timed runs.
    #[arg(long, default_value_t = 5)]
    pub runs: usize,
    #[command(flatten)]
    pub pipeline: PipelineFlags,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Image(ImageError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Scene(#[from] SceneFileError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

impl From<ImageError> for CliError {
    fn from(e: ImageError) -> Self {
        match e {
            ImageError::Io { path, source } => CliError::Io { path, source },
            other => CliError::Image(other),
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        CliError::Scene(SceneFileError::Scene(e))
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Io { .. } => 3,
            CliError::Image(_) => 4,
            CliError::Config(_) => 5,
            CliError::Pipeline(_) => 6,
            CliError::Scene(_) => 7,
            CliError::Eval(_) => 8,
        }
    }
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })
}

impl PipelineFlags {
    /// Defaults, then the config file, then flags.
    pub fn settings(&self) -> Result<Settings, CliError> {
        let mut s = match &self.config {
            Some(p) => Settings::parse(&read_text(p)?)?,
            None => Settings::default(),
        };
        let text = |v: &Option<String>| v.clone();
        let num = |v: Option<f64>| v.map(|x| format!("{x:?}"));
        let int = |v: Option<usize>| v.map(|x| x.to_string());
        let pairs = [
            ("illumination", text(&self.illumination)),
            ("initial_k", int(self.initial_k)),
            ("tau_dev", num(self.tau_dev)),
            ("tau_frac", num(self.tau_frac)),
            ("min_cluster_size", text(&self.min_cluster_size)),
            ("seed", self.seed.map(|x| x.to_string())),
            ("max_iterations", int(self.max_iterations)),
            ("max_kmeans_iterations", int(self.max_kmeans_iterations)),
            ("bin_width", num(self.bin_width)),
            ("peak_mass_fraction", num(self.peak_mass_fraction)),
            ("peak_min_count", num(self.peak_min_count)),
            ("fallback_percentile", num(self.fallback_percentile)),
            ("downsample", text(&self.downsample)),
        ];
        for (key, value) in pairs {
            if let Some(v) = value {
                s.set(key, &v)?;
            }
        }
        s.pipeline.validate().map_err(ConfigError::from)?;
        Ok(s)
    }
}

fn run_pipeline(img: &LinearImage, s: &Settings, fast: bool) -> Result<PipelineOutput, CliError> {
    Ok(if fast {
        remove_highlights_fast(img, &s.pipeline)?
    } else {
        remove_highlights(img, &s.pipeline)?
    })
}

fn output_format(path: &Path, explicit: Option<&str>) -> Result<Format, CliError> {
    match explicit {
        Some(f) => f.parse().map_err(CliError::from),
        None => Format::from_path(path).ok_or_else(|| {
            CliError::Usage(format!(
                "cannot infer the format of {}; pass --format",
                path.display()
            ))
        }),
    }
}

fn save_image(img: &LinearImage, path: &Path, format: Format) -> Result<(), CliError> {
    let r = imgio::save(img, path, format)?;
    if r.clipped > 0 {
        eprintln!(
            "warning: {} samples outside [0, 1] clipped in {}",
            r.clipped,
            path.display()
        );
    }
    Ok(())
}

fn describe(w: &Warning) -> String {
    match w {
        Warning::NoConvergence { iterations, failing } => format!(
            "clustering did not converge in {iterations} iterations ({failing} clusters still fail the fit)"
        ),
        Warning::SingleClusterFallback { chromatic_pixels } => {
            format!("only {chromatic_pixels} chromatic pixels; using a single cluster")
        }
        Warning::NoChromaticPixels => "no chromatic pixels; input passed through as diffuse".into(),
        Warning::PercentileFallback { cluster } => {
            format!("cluster {cluster}: no histogram peak, used the percentile fallback")
        }
        Warning::PassThrough { cluster, gamma_d } => {
            format!("cluster {cluster}: degenerate ratio at gamma {gamma_d:.5}; left unseparated")
        }
    }
}

fn remove(args: &RemoveArgs, s: &Settings) -> Result<(), CliError> {
    let diffuse_fmt = output_format(&args.diffuse, args.format.as_deref())?;
    let specular_fmt = output_format(&args.specular, args.format.as_deref())?;
    let mut img = imgio::load(&args.input)?;
    if args.gamma_decode {
        img = imgio::decode_gamma(&img, 2.2);
    }
    let start = Instant::now();
    let out = run_pipeline(&img, s, args.pipeline.fast)?;
    let elapsed = start.elapsed();
    for w in &out.diagnostics.warnings {
        eprintln!("warning: {}", describe(w));
    }
    save_image(&out.separation.diffuse, &args.diffuse, diffuse_fmt)?;
    save_image(&out.separation.specular, &args.specular, specular_fmt)?;
    if let Some(p) = &args.labels {
        imgio::save_labels(&out.clusters.label_levels(), img.width(), img.height(), p)?;
    }
    if let Some(p) = &args.report {
        let d = &out.diagnostics;
        let k_history = d
            .fit
            .as_ref()
            .map(|f| {
                f.k_history
                    .iter()
                    .map(|k| k.to_string())
                    .collect::<Vec<_>>()
                    .join(",")
            })
            .unwrap_or_default();
        let text = format!(
            "iterations={}\nwall_time_s={:?}\nclusters={}\nk_history={k_history}\nconverged={}\ndownsample_factor={}\nwarnings={}\n",
            d.iterations(),
            elapsed.as_secs_f64(),
            out.clusters.len(),
            d.fit.as_ref().is_some_and(|f| f.converged),
            d.downsample_factor,
            d.warnings.len(),
        );
        write_text(p, &text)?;
    }
    Ok(())
}

fn load_scene(name_or_path: &str) -> Result<unglare_core::synth::SceneSpec, CliError> {
    match builtin_scene(name_or_path) {
        Ok(spec) => Ok(spec),
        Err(SynthError::UnknownScene(_)) if Path::new(name_or_path).is_file() => {
            Ok(scenefile::parse_scene(&read_text(Path::new(name_or_path))?)?)
        }
        Err(e) => Err(e.into()),
    }
}

fn synth(args: &SynthArgs) -> Result<(), CliError> {
    if !(args.sigma >= 0.0) {
        return Err(CliError::Usage("--sigma must be nonnegative".into()));
    }
    if args.scale == 0 {
        return Err(CliError::Usage("--scale must be at least 1".into()));
    }
    let format: Format = args.format.parse()?;
    let ext = if format == Format::Pfm { "pfm" } else { "ppm" };
    let spec = load_scene(&args.scene)?.scaled(args.scale);
    let gt = render(&spec)?;
    let input = add_noise(&gt.input, args.sigma, args.seed);
    fs::create_dir_all(&args.out_dir).map_err(|source| CliError::Io {
        path: args.out_dir.display().to_string(),
        source,
    })?;
    let dir = &args.out_dir;
    save_image(&input, &dir.join(format!("input.{ext}")), format)?;
    save_image(&gt.diffuse, &dir.join(format!("diffuse.{ext}")), format)?;
    save_image(&gt.specular, &dir.join(format!("specular.{ext}")), format)?;
    let n = spec.materials.len().max(2) as u32 - 1;
    let levels: Vec<u8> = gt.labels.iter().map(|&m| ((m * 254) / n) as u8).collect();
    imgio::save_labels(&levels, spec.width, spec.height, &dir.join("labels.ppm"))?;
    write_text(&dir.join("scene.txt"), &scenefile::write_scene(&spec))?;
    Ok(())
}

fn labels_from_levels(levels: &[u8]) -> Vec<PixelLabel> {
    levels
        .iter()
        .map(|&l| {
            if l == 255 {
                PixelLabel::Achromatic
            } else {
                PixelLabel::Cluster(l as u32)
            }
        })
        .collect()
}

fn eval(args: &EvalArgs) -> Result<(), CliError> {
    let diffuse = imgio::load(&args.diffuse)?;
    let truth = imgio::load(&args.truth_diffuse)?;
    let psnr_diffuse = psnr(&diffuse, &truth)?;
    let psnr_specular = match (&args.specular, &args.truth_specular) {
        (Some(s), Some(t)) => psnr(&imgio::load(s)?, &imgio::load(t)?)?,
        _ => {
            // Additivity makes the specular error mirror the diffuse one.
            psnr_diffuse
        }
    };
    let cluster_accuracy = match (&args.labels, &args.truth_labels) {
        (Some(l), Some(t)) => {
            let (_, _, predicted) = imgio::load_labels(l)?;
            let (_, _, truth) = imgio::load_labels(t)?;
            let truth: Vec<u32> = truth.iter().map(|&v| v as u32).collect();
            Some(cluster_accuracy(&labels_from_levels(&predicted), &truth)?)
        }
        _ => None,
    };
    let (iterations, wall_time_secs) = match &args.run_report {
        Some(p) => {
            let text = read_text(p)?;
            let field = |k: &str| {
                text.lines()
                    .find_map(|l| l.strip_prefix(k)?.strip_prefix('='))
                    .map(str::to_string)
            };
            let bad = || CliError::Usage(format!("malformed run report {}", p.display()));
            (
                field("iterations").and_then(|v| v.parse().ok()).ok_or_else(bad)?,
                field("wall_time_s").and_then(|v| v.parse().ok()).ok_or_else(bad)?,
            )
        }
        None => (0, 0.0),
    };
    let r = EvalReport {
        psnr_diffuse,
        psnr_specular,
        cluster_accuracy,
        iterations,
        wall_time_secs,
    };
    print!("{}", report::to_text(&r));
    if let Some(p) = &args.record {
        write_text(p, &report::to_record(&r))?;
    }
    Ok(())
}

fn median(mut v: Vec<Duration>) -> Duration {
    v.sort();
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2
    }
}

fn bench(args: &BenchArgs, s: &Settings) -> Result<(), CliError> {
    if args.runs == 0 {
        return Err(CliError::Usage("--runs must be at least 1".into()));
    }
    let img = match (&args.input, &args.scene) {
        (Some(p), _) => imgio::load(p)?,
        (None, Some(name)) => render(&load_scene(name)?.scaled(args.scale.max(1)))?.input,
        (None, None) => return Err(CliError::Usage("give an input or --scene".into())),
    };
    let mut times = Vec::with_capacity(args.runs);
    for i in 0..args.runs {
        let start = Instant::now();
        let out = run_pipeline(&img, s, args.pipeline.fast)?;
        let t = start.elapsed();
        println!(
            "run {}: {:.3} ms ({} clusters)",
            i + 1,
            t.as_secs_f64() * 1e3,
            out.clusters.len()
        );
        times.push(t);
    }
    let (min, max) = (*times.iter().min().unwrap(), *times.iter().max().unwrap());
    println!(
        "{}x{}: median {:.3} ms, min {:.3} ms, max {:.3} ms over {} runs",
        img.width(),
        img.height(),
        median(times).as_secs_f64() * 1e3,
        min.as_secs_f64() * 1e3,
        max.as_secs_f64() * 1e3,
        args.runs
    );
    Ok(())
}

fn thread_count(flag: Option<usize>, settings: Option<&Settings>) -> Result<Option<usize>, CliError> {
    if let Some(n) = flag.or_else(|| settings.and_then(|s| s.threads)) {
        return Ok(Some(n));
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::Usage(format!("{THREADS_ENV} must be a positive integer"))),
        Err(_) => Ok(None),
    }
}

fn configure_threads(n: Option<usize>) -> Result<(), CliError> {
    if let Some(n) = n {
        if n == 0 {
            return Err(CliError::Usage("thread count must be at least 1".into()));
        }
        // A pool that already exists keeps its size.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    let settings = match &cli.command {
        Command::Remove(a) => Some(a.pipeline.settings()?),
        Command::Bench(a) => Some(a.pipeline.settings()?),
        _ => None,
    };
    configure_threads(thread_count(cli.threads, settings.as_ref())?)?;
    match &cli.command {
        Command::Remove(a) => remove(a, settings.as_ref().expect("settings")),
        Command::Synth(a) => synth(a),
        Command::Eval(a) => eval(a),
        Command::Bench(a) => bench(a, settings.as_ref().expect("settings")),
    }
}

/// Parses the process arguments, runs and maps errors to exit codes.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn flags_override_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.txt");
        fs::write(&path, "initial_k = 3\nseed = 5\n").unwrap();
        let flags = PipelineFlags {
            config: Some(path),
            initial_k: Some(8),
            ..PipelineFlags::default()
        };
        let s = flags.settings().unwrap();
        assert_eq!(s.pipeline.cluster.initial_k, 8);
        assert_eq!(s.pipeline.cluster.seed, 5);
    }

    #[test]
    fn exit_codes_are_distinct() {
        let io = || std::io::Error::other("x");
        let codes = [
            CliError::Usage(String::new()).exit_code(),
            CliError::Io { path: String::new(), source: io() }.exit_code(),
            CliError::Image(ImageError::CorruptHeader(String::new())).exit_code(),
            CliError::Config(ConfigError::UnknownKey(String::new())).exit_code(),
            CliError::Pipeline(PipelineError::InvalidInput).exit_code(),
            CliError::from(SynthError::UnknownScene(String::new())).exit_code(),
            CliError::Eval(EvalError::DimensionMismatch { expected: 1, got: 2 }).exit_code(),
        ];
        let mut sorted = codes.to_vec();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), codes.len());
        assert!(!codes.contains(&0) && !codes.contains(&1));
    }

    #[test]
    fn median_of_runs() {
        let ms = Duration::from_millis;
        assert_eq!(median(vec![ms(5), ms(1), ms(3)]), ms(3));
        assert_eq!(median(vec![ms(4), ms(1), ms(3), ms(2)]), Duration::from_micros(2500));
    }
}
