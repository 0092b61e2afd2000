use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use aeromag_core::classifier::{MlpModel, TrainingConfig};
use aeromag_core::euler::{self, SolutionSet};
use aeromag_core::filters::{self, Axis};
use aeromag_core::geodata::{self, Grid};
use aeromag_core::pipeline::{self, Artifact, FilterStep, PipelineConfig, PipelineError, Preset, Result};
use aeromag_core::products::{ProfileAxis, ProfileSpec};
use aeromag_core::rng::sub_seed;
use clap::{Parser, Subcommand, ValueEnum};

/// Aeromagnetic depth-to-source toolkit: gridding, filtering, Euler
/// deconvolution, spatial statistics, SI classification and products.
#[derive(Debug, Parser)]
#[command(name = "aeromag", version)]
struct Cli {
    /// Pipeline configuration (JSON). Stage commands read their section from it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; changes speed, never results.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, short, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Grid scattered x,y,tmi points.
    Grid {
        #[arg(long)]
        points: PathBuf,
        #[arg(long, default_value = "UTM")]
        crs: String,
    },
    /// Apply a filter chain and optionally write first derivatives.
    Filter {
        #[arg(long)]
        grid: PathBuf,
        /// `op` or `op=value`: detrend=<degree>, upward_continue=<m>,
        /// lowpass=<m>, fill_nodata. Replaces the configured chain.
        #[arg(long = "step")]
        steps: Vec<String>,
        /// Also write tx.asc, ty.asc and tz.asc of the result.
        #[arg(long)]
        derivatives: bool,
    },
    /// Moving-window Euler deconvolution.
    Euler {
        #[arg(long)]
        grid: PathBuf,
        /// Derivative grids; computed spectrally when omitted.
        #[arg(long, requires_all = ["ty", "tz"])]
        tx: Option<PathBuf>,
        #[arg(long, requires_all = ["tx", "tz"])]
        ty: Option<PathBuf>,
        #[arg(long, requires_all = ["tx", "ty"])]
        tz: Option<PathBuf>,
    },
    /// PCA, CSR, nearest-neighbour and descriptive statistics of solutions.
    Stats {
        #[arg(long)]
        solutions: PathBuf,
        /// Survey area for the CSR tests; defaults to the grid extent recorded
        /// with the solutions, else their bounding box.
        #[arg(long)]
        area: Option<f64>,
    },
    /// Train the SI classifier, or apply a trained one with --predict.
    Classify {
        #[arg(long)]
        solutions: PathBuf,
        #[arg(long)]
        tx: PathBuf,
        #[arg(long)]
        ty: PathBuf,
        #[arg(long, requires = "model")]
        predict: bool,
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Profile sections, depth histogram and trend report.
    Profile {
        #[arg(long)]
        solutions: PathBuf,
        #[arg(long, value_enum, requires_all = ["center", "half_width"])]
        axis: Option<AxisArg>,
        #[arg(long)]
        center: Option<f64>,
        #[arg(long)]
        half_width: Option<f64>,
        #[arg(long, default_value = "")]
        label: String,
    },
    /// Run every stage from a config.
    Pipeline,
    /// Write a ready-to-run demo config and its synthetic input.
    SynthDemo {
        #[arg(value_enum)]
        preset: PresetArg,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum AxisArg {
    Ew,
    Ns,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum PresetArg {
    OneSource,
    TwoSource,
    NoisySurvey,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.threads {
        Some(0) => Err(PipelineError::config("--threads", "must be at least 1")),
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| run(&cli)),
            Err(e) => Err(PipelineError::config("--threads", e.to_string())),
        },
        None => run(&cli),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

struct Ctx<'a> {
    cli: &'a Cli,
    config: Option<PipelineConfig>,
}

impl Ctx<'_> {
    fn out_dir(&self) -> PathBuf {
        if let Some(o) = &self.cli.out {
            return o.clone();
        }
        match (&self.config, &self.cli.config) {
            (Some(PipelineConfig { output_dir: Some(d), .. }), Some(path)) => base_dir(path).join(d),
            _ => PathBuf::from("out"),
        }
    }

    fn seed(&self) -> u64 {
        self.cli.seed.or(self.config.as_ref().and_then(|c| c.seed)).unwrap_or(0)
    }

    fn log(&self, msg: &str) {
        if self.cli.verbose {
            eprintln!("[aeromag] {msg}");
        }
    }

    fn write(&self, artifacts: &[Artifact]) -> Result<()> {
        let dir = self.out_dir();
        fs::create_dir_all(&dir).map_err(|e| PipelineError::io("output", e))?;
        for a in artifacts {
            a.write_to(&dir).map_err(|e| PipelineError::io("output", e))?;
            self.log(&format!("wrote {}", dir.join(&a.name).display()));
        }
        Ok(())
    }
}

fn base_dir(config_path: &Path) -> PathBuf {
    config_path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn run(cli: &Cli) -> Result<()> {
    let config = match &cli.config {
        Some(path) => {
            let mut c = pipeline::load_config(path)?;
            if cli.seed.is_some() {
                c.seed = cli.seed;
            }
            Some(c)
        }
        None => None,
    };
    let ctx = Ctx { cli, config };
    match &cli.command {
        Command::Grid { points, crs } => cmd_grid(&ctx, points, crs),
        Command::Filter { grid, steps, derivatives } => cmd_filter(&ctx, grid, steps, *derivatives),
        Command::Euler { grid, tx, ty, tz } => cmd_euler(&ctx, grid, tx.as_deref(), ty.as_deref(), tz.as_deref()),
        Command::Stats { solutions, area } => cmd_stats(&ctx, solutions, *area),
        Command::Classify { solutions, tx, ty, predict, model } => {
            cmd_classify(&ctx, solutions, tx, ty, if *predict { model.as_deref() } else { None })
        }
        Command::Profile { solutions, axis, center, half_width, label } => {
            let spec = axis.map(|a| ProfileSpec {
                axis: match a {
                    AxisArg::Ew => ProfileAxis::EastWest,
                    AxisArg::Ns => ProfileAxis::NorthSouth,
                },
                center: center.unwrap_or_default(),
                half_width: half_width.unwrap_or_default(),
                label: label.clone(),
            });
            cmd_profile(&ctx, solutions, spec)
        }
        Command::Pipeline => cmd_pipeline(&ctx),
        Command::SynthDemo { preset } => {
            let preset = match preset {
                PresetArg::OneSource => Preset::OneSource,
                PresetArg::TwoSource => Preset::TwoSource,
                PresetArg::NoisySurvey => Preset::NoisySurvey,
            };
            let seed = cli.seed.unwrap_or(42);
            let path = pipeline::synth_demo(preset, seed, &ctx.out_dir())?;
            println!("{}", path.display());
            Ok(())
        }
    }
}

fn open(path: &Path) -> Result<fs::File> {
    fs::File::open(path).map_err(|e| PipelineError::io(&format!("input {}", path.display()), e))
}

fn read_grid(path: &Path) -> Result<Grid> {
    let file = open(path)?;
    geodata::read_grid(BufReader::new(file)).map_err(|e| pipeline::from_geodata("input", e))
}

/// Loads a solution CSV together with its `<stem>_provenance.json` sidecar
/// when one sits next to it.
fn read_solutions(path: &Path) -> Result<SolutionSet> {
    let file = open(path)?;
    let solutions = euler::read_solutions_csv(BufReader::new(file)).map_err(|e| pipeline::from_euler("input", e))?;
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("solutions");
    let sidecar = path.with_file_name(format!("{stem}_provenance.json"));
    if sidecar.is_file() {
        let file = open(&sidecar)?;
        euler::read_provenance_json(BufReader::new(file), solutions).map_err(|e| pipeline::from_euler("input", e))
    } else {
        Ok(SolutionSet::from_solutions(solutions, Default::default()))
    }
}

fn cmd_grid(ctx: &Ctx, points: &Path, crs: &str) -> Result<()> {
    let file = open(points)?;
    let set = geodata::load_points(BufReader::new(file), crs).map_err(|e| pipeline::from_geodata("input", e))?;
    let gridding = ctx.config.as_ref().map(|c| c.gridding.clone()).unwrap_or_default();
    let (grid, mut extra) = pipeline::grid_survey(&set, &gridding)?;
    extra.push(Artifact::grid("grid", "grid.asc", &grid)?);
    ctx.write(&extra)
}

fn parse_step(text: &str) -> Result<FilterStep> {
    let (op, value) = match text.split_once('=') {
        Some((op, v)) => {
            let v: f64 = v.trim().parse().map_err(|_| PipelineError::config("--step", format!("bad value in `{text}`")))?;
            (op.trim(), Some(v))
        }
        None => (text.trim(), None),
    };
    let need = || value.ok_or_else(|| PipelineError::config("--step", format!("`{op}` needs a value")));
    let step = match op {
        "detrend" => {
            let d = need()?;
            if !(0.0..=3.0).contains(&d) || d.fract() != 0.0 {
                return Err(PipelineError::config("--step", "detrend degree must be 0, 1, 2 or 3"));
            }
            FilterStep::Detrend { degree: d as u8 }
        }
        "upward_continue" => FilterStep::UpwardContinue { height: need()? },
        "lowpass" => FilterStep::Lowpass { cutoff_wavelength: need()? },
        "fill_nodata" => FilterStep::FillNodata,
        other => return Err(PipelineError::config("--step", format!("unknown filter `{other}`"))),
    };
    Ok(step)
}

fn cmd_filter(ctx: &Ctx, grid_path: &Path, steps: &[String], derivatives: bool) -> Result<()> {
    let chain: Vec<FilterStep> = if steps.is_empty() {
        ctx.config.as_ref().map(|c| c.filters.clone()).unwrap_or_default()
    } else {
        steps.iter().map(|s| parse_step(s)).collect::<Result<_>>()?
    };
    let mut grid = read_grid(grid_path)?;
    let plan = ctx.config.as_ref().map(|c| c.spectral).unwrap_or_default();
    for (i, step) in chain.iter().enumerate() {
        ctx.log(&format!("filter {}", step.name()));
        grid = step.apply(&grid, &plan).map_err(|e| pipeline::from_filter(&format!("filters[{i}]"), e))?;
    }
    let mut out = vec![Artifact::grid("filters", "filtered.asc", &grid)?];
    if derivatives {
        for (axis, name) in [(Axis::X, "tx.asc"), (Axis::Y, "ty.asc"), (Axis::Z, "tz.asc")] {
            let d = filters::derivative(&grid, axis, &plan).map_err(|e| pipeline::from_filter("derivatives", e))?;
            out.push(Artifact::grid("derivatives", name, &d)?);
        }
    }
    ctx.write(&out)
}

fn cmd_euler(ctx: &Ctx, grid: &Path, tx: Option<&Path>, ty: Option<&Path>, tz: Option<&Path>) -> Result<()> {
    let t = read_grid(grid)?;
    let plan = ctx.config.as_ref().map(|c| c.spectral).unwrap_or_default();
    let [tx, ty, tz] = match (tx, ty, tz) {
        (Some(x), Some(y), Some(z)) => [read_grid(x)?, read_grid(y)?, read_grid(z)?],
        _ => {
            let d = |axis| filters::derivative(&t, axis, &plan).map_err(|e| pipeline::from_filter("derivatives", e));
            [d(Axis::X)?, d(Axis::Y)?, d(Axis::Z)?]
        }
    };
    let config = ctx.config.as_ref().map(|c| c.euler.clone()).unwrap_or_default();
    let set = euler::euler_sweep(&t, &tx, &ty, &tz, &config).map_err(|e| pipeline::from_euler("euler", e))?;
    ctx.log(&format!("{} solutions accepted, rejected {:?}", set.len(), set.rejected_counts));
    let mut csv = Vec::new();
    euler::write_solutions_csv(&set, &mut csv).map_err(|e| pipeline::from_euler("euler", e))?;
    let mut sidecar = Vec::new();
    euler::write_provenance_json(&set, &mut sidecar).map_err(|e| pipeline::from_euler("euler", e))?;
    ctx.write(&[Artifact::new("solutions.csv", csv), Artifact::new("solutions_provenance.json", sidecar)])
}

fn cmd_stats(ctx: &Ctx, solutions: &Path, area: Option<f64>) -> Result<()> {
    let set = read_solutions(solutions)?;
    let stats = ctx.config.as_ref().map(|c| c.stats.clone()).unwrap_or_default();
    let area = area.or(stats.area_m2).unwrap_or_else(|| match set.provenance.georef {
        Some(g) => g.n_cols as f64 * g.n_rows as f64 * g.cell_size * g.cell_size,
        None => {
            let xy: Vec<(f64, f64)> = set.solutions.iter().map(|s| (s.x0, s.y0)).collect();
            aeromag_core::spatialstats::bounding_box_area(&xy)
        }
    });
    ctx.write(&pipeline::stats_stage(&set.solutions, area, &stats)?)
}

fn cmd_classify(ctx: &Ctx, solutions: &Path, tx: &Path, ty: &Path, model: Option<&Path>) -> Result<()> {
    let set = read_solutions(solutions)?;
    let (tx, ty) = (read_grid(tx)?, read_grid(ty)?);
    match model {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| PipelineError::io(&format!("classifier {}", path.display()), e))?;
            let model: MlpModel = serde_json::from_str(&text).map_err(|e| PipelineError::data("classifier", e))?;
            if !model.is_valid() {
                return Err(PipelineError::data("classifier", "model has inconsistent shapes or non-finite weights"));
            }
            ctx.write(&pipeline::predict_stage(&model, &set, &tx, &ty)?)
        }
        None => {
            let base: TrainingConfig = ctx.config.as_ref().map(|c| c.classifier.training.clone()).unwrap_or_default();
            let training = TrainingConfig { seed: sub_seed(ctx.seed(), "classifier"), ..base };
            ctx.write(&pipeline::classifier_stage(&set, &tx, &ty, &training)?)
        }
    }
}

fn cmd_profile(ctx: &Ctx, solutions: &Path, spec: Option<ProfileSpec>) -> Result<()> {
    let set = read_solutions(solutions)?;
    let products = ctx.config.as_ref().map(|c| c.products.clone()).unwrap_or_default();
    let profiles = match spec {
        Some(s) => vec![s],
        None if !products.profiles.is_empty() => products.profiles.clone(),
        None => match set.provenance.georef {
            Some(g) => pipeline::default_profiles(&g, products.default_half_width),
            None => {
                return Err(PipelineError::config(
                    "--axis",
                    "no profile given and no grid extent recorded with the solutions",
                ))
            }
        },
    };
    ctx.write(&pipeline::products_stage(&set.solutions, &profiles, &products)?)
}

fn cmd_pipeline(ctx: &Ctx) -> Result<()> {
    let (Some(config), Some(path)) = (&ctx.config, &ctx.cli.config) else {
        return Err(PipelineError::config("--config", "the pipeline command needs a config file"));
    };
    let out = ctx.out_dir();
    let verbose = ctx.cli.verbose;
    let mut progress = |stage: &str| {
        if verbose {
            eprintln!("[aeromag] stage {stage}");
        }
    };
    let result = pipeline::run_pipeline(config, &base_dir(path), &out, &mut progress)?;
    let s = result.manifest.summary.as_ref();
    println!(
        "{} solutions, {} clusters, {} files in {}",
        s.map_or(0, |s| s.windows_accepted),
        s.map_or(0, |s| s.clusters),
        result.manifest.files.len(),
        out.display()
    );
    Ok(())
}
