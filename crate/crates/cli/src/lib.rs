//! The `eit` command line: mesh generation, simulation, reconstruction,
//! evaluation and rendering into self-describing run directories.

pub mod error;
pub mod manifest;
pub mod render;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use eit_core::fem::{adjacent_patterns, MeasurementFrame, DEFAULT_CONTACT_IMPEDANCE};
use eit_core::grid::GridImage;
use eit_core::guidance::{prompt_preset, GuidanceProvider, RemoteProvider, StubProvider};
use eit_core::mesh::{make_disk_mesh, Mesh};
use eit_core::metrics::{evaluate_metrics, MetricsConfig, MetricsReport};
use eit_core::phantom::Phantom;
use eit_core::recon::{
    loss_csv, reconstruct_inr_tv, reconstruct_sdeit, reconstruct_tv, ReconConfig, ReconResult,
    TvBaselineConfig, VoltageUnit,
};
use eit_core::study::{self, simulate};

use error::{io_err, CliError, CliResult, Kind};
use manifest::Run;

/// Environment variable holding the guidance service URL.
pub const ENDPOINT_ENV: &str = "EIT_GUIDANCE_URL";

#[derive(Debug, Parser)]
#[command(name = "eit", version, about = "Electrical impedance tomography toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a disk mesh with equally spaced electrodes.
    MeshGen(MeshGenArgs),
    /// Simulate noisy measurements of a phantom.
    Simulate(SimulateArgs),
    /// Reconstruct a conductivity image from a measurement frame.
    Reconstruct(Box<ReconstructArgs>),
    /// Score a reconstruction against ground truth.
    Evaluate(EvaluateArgs),
    /// Render a grid image to PNG.
    Render(RenderArgs),
}

#[derive(Debug, Args)]
struct RunDir {
    /// Directory receiving every output of the command and its manifest.
    #[arg(long)]
    run_dir: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct MeshGenArgs {
    #[command(flatten)]
    #[serde(skip)]
    run: RunDir,
    /// Output file name inside the run directory.
    #[arg(long, default_value = "mesh.json")]
    name: String,
    /// Disk radius in cm.
    #[arg(long, default_value_t = study::DISK_RADIUS_CM)]
    radius: f64,
    #[arg(long, default_value_t = study::N_ELECTRODES)]
    electrodes: usize,
    /// Electrode width in cm.
    #[arg(long, default_value_t = study::ELECTRODE_WIDTH_CM)]
    electrode_width: f64,
    /// Approximate number of triangles.
    #[arg(long, default_value_t = study::INVERSE_ELEMENTS)]
    elements: usize,
}

#[derive(Debug, Args, Serialize)]
struct SimulateArgs {
    #[command(flatten)]
    #[serde(skip)]
    run: RunDir,
    /// Mesh the data are generated on.
    #[arg(long)]
    forward_mesh: PathBuf,
    /// Mesh the reconstruction will use; the ground-truth raster is taken
    /// on it.
    #[arg(long)]
    inverse_mesh: PathBuf,
    /// Phantom JSON; the heart-and-lungs phantom when absent.
    #[arg(long)]
    phantom: Option<PathBuf>,
    #[arg(long, default_value_t = 60.0)]
    snr_db: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Contact impedance in Ohm cm^2 units of the model.
    #[arg(long, default_value_t = DEFAULT_CONTACT_IMPEDANCE)]
    contact_impedance: f64,
    /// Injected current in mA.
    #[arg(long, default_value_t = study::AMPLITUDE_MA)]
    amplitude: f64,
    /// Side of the square ground-truth raster.
    #[arg(long, default_value_t = 128)]
    grid: usize,
    /// Permit simulating on the reconstruction mesh.
    #[arg(long)]
    allow_inverse_crime: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Method {
    Tv,
    InrTv,
    Sdeit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum ProviderKind {
    Stub,
    Remote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Preset {
    Simulated,
    Experimental,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Unit {
    V,
    #[value(name = "mV")]
    MilliVolt,
}

#[derive(Debug, Args)]
struct ReconstructArgs {
    #[command(flatten)]
    run: RunDir,
    #[arg(long)]
    mesh: PathBuf,
    #[arg(long)]
    frame: PathBuf,
    #[arg(long, value_enum, default_value_t = Method::Sdeit)]
    method: Method,
    #[arg(long, value_enum, default_value_t = ProviderKind::Stub)]
    provider: ProviderKind,
    /// Guidance service URL for the remote provider.
    #[arg(long, env = ENDPOINT_ENV)]
    endpoint: Option<String>,
    /// Remote request timeout in seconds.
    #[arg(long, default_value_t = 120.0)]
    timeout: f64,
    /// JSON file with `recon` and `tv` sections; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Starting weights before the config file and flags are applied.
    #[arg(long, value_enum, default_value_t = Preset::Simulated)]
    preset: Preset,
    #[arg(long)]
    alpha0: Option<f64>,
    #[arg(long)]
    alpha1: Option<f64>,
    #[arg(long)]
    n_pre: Option<usize>,
    #[arg(long)]
    n_total: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Side of the square reconstruction raster.
    #[arg(long)]
    grid: Option<usize>,
    #[arg(long)]
    mlp_seed: Option<u64>,
    #[arg(long)]
    encoder_seed: Option<u64>,
    /// Fourier-feature bandwidth.
    #[arg(long)]
    bandwidth: Option<f64>,
    #[arg(long)]
    guidance_seed: Option<u64>,
    /// Prompt text; takes precedence over `--prompt-preset`.
    #[arg(long)]
    prompt: Option<String>,
    /// `basic` or `full`.
    #[arg(long)]
    prompt_preset: Option<String>,
    /// Denoising strength D.
    #[arg(long)]
    strength: Option<f64>,
    /// Diffusion steps T.
    #[arg(long)]
    steps: Option<u32>,
    /// Guidance scale G.
    #[arg(long)]
    guidance_scale: Option<f64>,
    #[arg(long)]
    contact_impedance: Option<f64>,
    /// Unit of the data term the weights are calibrated against.
    #[arg(long, value_enum)]
    data_unit: Option<Unit>,
    /// TV weight of the Gauss-Newton baseline.
    #[arg(long)]
    tv_alpha: Option<f64>,
    #[arg(long)]
    tv_iters: Option<usize>,
    /// Save a checkpoint every this many iterations under `checkpoints/`.
    #[arg(long)]
    checkpoint_every: Option<usize>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[command(flatten)]
    run: RunDir,
    /// Reconstructed grid image.
    #[arg(long)]
    recon: PathBuf,
    /// Ground-truth grid image.
    #[arg(long)]
    truth: PathBuf,
    /// Case label of the CSV row.
    #[arg(long, default_value = "case")]
    case: String,
    /// Score only pixels inside the truth mask.
    #[arg(long)]
    masked: bool,
    /// PSNR peak; the truth maximum when absent.
    #[arg(long)]
    max_i: Option<f64>,
}

#[derive(Debug, Args)]
struct RenderArgs {
    #[command(flatten)]
    run: RunDir,
    #[arg(long)]
    image: PathBuf,
    /// Output file name inside the run directory.
    #[arg(long, default_value = "image.png")]
    name: String,
    /// Colour-scale limits; the in-domain extremes when absent.
    #[arg(long, num_args = 2, value_names = ["LO", "HI"], allow_negative_numbers = true)]
    range: Option<Vec<f64>>,
}

/// Sections of a reconstruction config file. Missing keys keep defaults.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ConfigFile {
    pub recon: Option<serde_json::Value>,
    pub tv: Option<serde_json::Value>,
}

#[derive(Debug, Clone, Serialize)]
struct ResolvedConfig<'a> {
    method: Method,
    provider: ProviderKind,
    endpoint: Option<&'a str>,
    recon: &'a ReconConfig,
    tv: &'a TvBaselineConfig,
}

#[derive(Debug, Serialize)]
struct ReconSummary<'a> {
    method: Method,
    iterations_run: usize,
    provider_calls: usize,
    provider_failures: usize,
    provider_id: Option<String>,
    warning: Option<&'a str>,
    final_loss: Option<eit_core::recon::LossRecord>,
    seconds: f64,
}

/// Run the command line and return the process exit status. Errors are
/// printed to stderr as a single line.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let text = e.to_string();
            let detail: Vec<&str> = text
                .lines()
                .take_while(|l| !l.starts_with("Usage:"))
                .map(|l| l.trim().trim_start_matches("error: "))
                .filter(|l| !l.is_empty())
                .collect();
            eprintln!("{}", CliError::new(Kind::Usage, detail.join(" ")));
            return Kind::Usage.code();
        }
    };
    let args: Vec<String> = argv
        .iter()
        .map(|a| a.to_string_lossy().into_owned())
        .collect();
    match dispatch(cli.command, &args) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            e.code()
        }
    }
}

fn dispatch(command: Command, argv: &[String]) -> CliResult<()> {
    match command {
        Command::MeshGen(a) => mesh_gen(a, argv),
        Command::Simulate(a) => simulate_cmd(a, argv),
        Command::Reconstruct(a) => reconstruct_cmd(*a, argv),
        Command::Evaluate(a) => evaluate_cmd(a, argv),
        Command::Render(a) => render_cmd(a, argv),
    }
}

fn require_file(path: &Path) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::new(
            Kind::Io,
            format!("{}: no such file", path.display()),
        ))
    }
}

fn load_mesh(run: &mut Run, path: &Path) -> CliResult<Mesh> {
    require_file(path)?;
    run.input(path);
    Ok(Mesh::load(path)?)
}

fn load_grid(run: &mut Run, path: &Path) -> CliResult<GridImage> {
    require_file(path)?;
    run.input(path);
    Ok(GridImage::load(path)?)
}

fn to_json(value: &impl Serialize) -> CliResult<String> {
    serde_json::to_string_pretty(value).map_err(|e| CliError::new(Kind::Parse, e.to_string()))
}

fn mesh_gen(a: MeshGenArgs, argv: &[String]) -> CliResult<()> {
    let mut run = Run::open(&a.run.run_dir, "mesh-gen", argv)?;
    run.config(&a, None);
    let mesh = make_disk_mesh(a.radius, a.electrodes, a.electrode_width, a.elements)?;
    let out = run.output(&a.name)?;
    mesh.save(&out)?;
    run.note("nodes", mesh.n_nodes());
    run.note("elements", mesh.n_elements());
    run.finish()?;
    Ok(())
}

fn same_file(a: &Path, b: &Path) -> bool {
    match (fs::canonicalize(a), fs::canonicalize(b)) {
        (Ok(x), Ok(y)) => x == y,
        _ => a == b,
    }
}

fn simulate_cmd(a: SimulateArgs, argv: &[String]) -> CliResult<()> {
    if !a.allow_inverse_crime && same_file(&a.forward_mesh, &a.inverse_mesh) {
        return Err(CliError::new(
            Kind::Invariant,
            "forward and inverse mesh are the same file; pass --allow-inverse-crime to simulate anyway",
        ));
    }
    let mut run = Run::open(&a.run.run_dir, "simulate", argv)?;
    run.config(&a, None);
    run.seed("noise", a.seed);
    let forward = load_mesh(&mut run, &a.forward_mesh)?;
    let inverse = load_mesh(&mut run, &a.inverse_mesh)?;
    if !a.allow_inverse_crime && forward == inverse {
        return Err(CliError::new(
            Kind::Invariant,
            "forward and inverse mesh are identical; pass --allow-inverse-crime to simulate anyway",
        ));
    }
    let phantom = match &a.phantom {
        Some(path) => {
            require_file(path)?;
            run.input(path);
            let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
            serde_json::from_str::<Phantom>(&text)
                .map_err(|e| CliError::new(Kind::Parse, format!("{}: {e}", path.display())))?
        }
        None => Phantom::heart_and_lungs(),
    };
    let patterns = adjacent_patterns(forward.n_electrodes(), a.amplitude, false)?;
    let (clean, noisy) = simulate(
        &forward,
        &phantom,
        a.contact_impedance,
        &patterns,
        a.snr_db,
        a.seed,
    )?;
    let truth = phantom.raster(&inverse, a.grid, a.grid)?;
    noisy.save(&run.output("frame.json")?)?;
    clean.save(&run.output("clean.json")?)?;
    truth.save(&run.output("truth.json")?)?;
    let phantom_path = run.output("phantom.json")?;
    run.write(&phantom_path, &to_json(&phantom)?)?;
    run.note(
        "noise_power_mv2",
        eit_core::sensitivity::data_loss(&noisy, &clean.voltages),
    );
    run.finish()?;
    Ok(())
}

fn resolve_config(a: &ReconstructArgs) -> CliResult<(ReconConfig, TvBaselineConfig)> {
    let mut recon = match a.preset {
        Preset::Simulated => ReconConfig::default(),
        Preset::Experimental => ReconConfig::experimental(),
    };
    let mut tv = TvBaselineConfig::default();
    if let Some(path) = &a.config {
        require_file(path)?;
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        let parse_err = |e: serde_json::Error| CliError::new(Kind::Parse, format!("{}: {e}", path.display()));
        let file: ConfigFile = serde_json::from_str(&text).map_err(parse_err)?;
        if let Some(over) = file.recon {
            recon = merge(&recon, over).map_err(parse_err)?;
        }
        if let Some(over) = file.tv {
            tv = merge(&tv, over).map_err(parse_err)?;
        }
    }
    let set = |dst: &mut f64, v: Option<f64>| {
        if let Some(v) = v {
            *dst = v;
        }
    };
    set(&mut recon.alpha0, a.alpha0);
    set(&mut recon.alpha1, a.alpha1);
    set(&mut recon.lr, a.lr);
    set(&mut recon.encoder.bandwidth, a.bandwidth);
    set(&mut recon.guidance.strength, a.strength);
    set(&mut recon.guidance.guidance_scale, a.guidance_scale);
    set(&mut tv.alpha, a.tv_alpha);
    if let Some(v) = a.n_pre {
        recon.n_pre = v;
    }
    if let Some(v) = a.n_total {
        recon.n_total = v;
    }
    if let Some(v) = a.grid {
        (recon.grid_width, recon.grid_height) = (v, v);
        (tv.grid_width, tv.grid_height) = (v, v);
    }
    if let Some(v) = a.mlp_seed {
        recon.mlp_seed = v;
    }
    if let Some(v) = a.encoder_seed {
        recon.encoder.seed = v;
    }
    if let Some(v) = a.guidance_seed {
        recon.guidance.seed = v;
    }
    if let Some(v) = a.steps {
        recon.guidance.steps = v;
    }
    if let Some(name) = &a.prompt_preset {
        recon.guidance.prompt = prompt_preset(name)
            .ok_or_else(|| CliError::new(Kind::Usage, format!("unknown prompt preset {name:?}")))?
            .to_string();
    }
    if let Some(p) = &a.prompt {
        recon.guidance.prompt = p.clone();
    }
    if let Some(z) = a.contact_impedance {
        recon.contact_impedance = z;
        tv.contact_impedance = z;
    }
    if let Some(u) = a.data_unit {
        let unit = match u {
            Unit::V => VoltageUnit::V,
            Unit::MilliVolt => VoltageUnit::MilliVolt,
        };
        recon.data_unit = unit;
        tv.data_unit = unit;
    }
    if let Some(v) = a.tv_iters {
        tv.max_iters = v;
    }
    if let Some(v) = a.checkpoint_every {
        recon.checkpoint_every = v;
    }
    recon.validate()?;
    Ok((recon, tv))
}

/// Overlay the keys of `over` on the serialized `base`.
fn merge<T: Serialize + for<'de> Deserialize<'de>>(
    base: &T,
    over: serde_json::Value,
) -> Result<T, serde_json::Error> {
    let mut value = serde_json::to_value(base)?;
    overlay(&mut value, over);
    serde_json::from_value(value)
}

fn overlay(dst: &mut serde_json::Value, src: serde_json::Value) {
    match (dst, src) {
        (serde_json::Value::Object(d), serde_json::Value::Object(s)) => {
            for (k, v) in s {
                overlay(d.entry(k).or_insert(serde_json::Value::Null), v);
            }
        }
        (d, s) => *d = s,
    }
}

fn provider(a: &ReconstructArgs) -> CliResult<Box<dyn GuidanceProvider>> {
    Ok(match a.provider {
        ProviderKind::Stub => Box::new(StubProvider::default()),
        ProviderKind::Remote => {
            let endpoint = a.endpoint.clone().ok_or_else(|| {
                CliError::new(
                    Kind::Usage,
                    format!("the remote provider needs --endpoint or {ENDPOINT_ENV}"),
                )
            })?;
            Box::new(RemoteProvider {
                endpoint,
                timeout: a.timeout,
            })
        }
    })
}

fn reconstruct_cmd(a: ReconstructArgs, argv: &[String]) -> CliResult<()> {
    let (mut recon, tv) = resolve_config(&a)?;
    let mut run = Run::open(&a.run.run_dir, "reconstruct", argv)?;
    let mesh = load_mesh(&mut run, &a.mesh)?;
    require_file(&a.frame)?;
    run.input(&a.frame);
    let frame = MeasurementFrame::load(&a.frame)?;
    if let Some(path) = &a.config {
        run.input(path);
    }
    if a.method != Method::Tv && recon.checkpoint_every > 0 && a.checkpoint_every.is_some() {
        recon.checkpoint_dir = Some(run.subdir("checkpoints")?);
    }
    run.config(
        &ResolvedConfig {
            method: a.method,
            provider: a.provider,
            endpoint: a.endpoint.as_deref(),
            recon: &recon,
            tv: &tv,
        },
        a.config.as_deref(),
    );
    if a.method == Method::Tv {
        run.seed("none", 0);
    } else {
        run.seed("encoder", recon.encoder.seed);
        run.seed("mlp", recon.mlp_seed);
        run.seed("guidance", recon.guidance.seed);
    }

    let start = manifest::now();
    let mut provider_id = None;
    let result: ReconResult = match a.method {
        Method::Tv => reconstruct_tv(&mesh, &frame, &tv)?,
        Method::InrTv => reconstruct_inr_tv(&mesh, &frame, &recon)?,
        Method::Sdeit => {
            let mut p = provider(&a)?;
            provider_id = Some(p.provider_id());
            reconstruct_sdeit(&mesh, &frame, &recon, p.as_mut())?
        }
    };
    let seconds = manifest::now() - start;

    let csv = run.output("loss.csv")?;
    run.write(&csv, &loss_csv(&result.loss_history))?;
    result.sigma_grid.save(&run.output("sigma_grid.json")?)?;
    let meas = run.output("sigma_meas.json")?;
    run.write(&meas, &to_json(&result.sigma_meas.values())?)?;
    if let Some(dm) = &result.sigma_dm {
        dm.save(&run.output("sigma_dm.json")?)?;
    }
    let range = render::default_range(&result.sigma_grid);
    render::save_png(&result.sigma_grid, range, &run.output("sigma.png")?)?;
    run.note("render_range", range);
    let summary = ReconSummary {
        method: a.method,
        iterations_run: result.iterations_run,
        provider_calls: result.provider_calls,
        provider_failures: result.provider_failures,
        provider_id,
        warning: result.warning.as_deref(),
        final_loss: result.loss_history.last().copied(),
        seconds,
    };
    let path = run.output("summary.json")?;
    run.write(&path, &to_json(&summary)?)?;
    run.finish()?;
    Ok(())
}

fn evaluate_cmd(a: EvaluateArgs, argv: &[String]) -> CliResult<()> {
    let mut run = Run::open(&a.run.run_dir, "evaluate", argv)?;
    let recon = load_grid(&mut run, &a.recon)?;
    let truth = load_grid(&mut run, &a.truth)?;
    let cfg = MetricsConfig {
        masked: a.masked,
        max_i: a.max_i,
        ..Default::default()
    };
    run.config(&cfg, None);
    let report = evaluate_metrics(&recon, &truth, &cfg)?;
    let json = run.output("metrics.json")?;
    run.write(&json, &report.to_json())?;
    let csv = run.output("metrics.csv")?;
    run.write(
        &csv,
        &format!("{}\n{}\n", MetricsReport::CSV_HEADER, report.csv_row(&a.case)),
    )?;
    run.finish()?;
    Ok(())
}

fn render_cmd(a: RenderArgs, argv: &[String]) -> CliResult<()> {
    let mut run = Run::open(&a.run.run_dir, "render", argv)?;
    let img = load_grid(&mut run, &a.image)?;
    let range = match &a.range {
        Some(r) => (r[0], r[1]),
        None => render::default_range(&img),
    };
    run.config(&serde_json::json!({ "range": range, "colormap": "viridis" }), None);
    render::save_png(&img, range, &run.output(&a.name)?)?;
    run.note("range", range);
    run.finish()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overlay_replaces_only_given_keys() {
        let base = ReconConfig::default();
        let merged: ReconConfig =
            merge(&base, serde_json::json!({"alpha1": 0.5, "guidance": {"seed": 9}})).unwrap();
        assert_eq!(merged.alpha1, 0.5);
        assert_eq!(merged.guidance.seed, 9);
        assert_eq!(merged.guidance.prompt, base.guidance.prompt);
        assert_eq!(merged.n_total, base.n_total);
    }

    #[test]
    fn unknown_enum_values_are_parse_errors() {
        let base = TvBaselineConfig::default();
        assert!(merge(&base, serde_json::json!({"data_unit": "kV"})).is_err());
    }
}
