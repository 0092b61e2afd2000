//! End-to-end orchestration: input → grid → filters → derivatives → Euler
//! sweep → clustering → statistics → optional classifier → products.
//!
//! Every artifact is written to the output directory as soon as its stage
//! finishes, and `manifest.json` lists each file with its SHA-256 together
//! with a snapshot of the configuration. A failed run still leaves a manifest,
//! marked incomplete.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::classifier::{self, ClassifierError, TrainingConfig};
use crate::euler::{self, Cluster, EulerConfig, EulerError, SolutionSet};
use crate::filters::{self, Axis, FilterError, SpectralPlan};
use crate::geodata::{
    self, GeodataError, Grid, GridGeoref, VariogramModel, DEFAULT_NEIGHBORHOOD,
};
use crate::products::{self, ProductsError, ProfileAxis, ProfileSpec};
use crate::rng::sub_seed;
use crate::spatialstats::{self, StatsError};
use crate::synthetics::{self, FieldShape, HomogeneousSource};

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid config at `{path}`: {message}")]
    Config { path: String, message: String },
    #[error("{stage}: {message}")]
    Data { stage: String, message: String },
    #[error("{stage}: numerical failure: {message}")]
    Numerical { stage: String, message: String },
    #[error("{stage}: {source}")]
    Io {
        stage: String,
        #[source]
        source: std::io::Error,
    },
}

impl PipelineError {
    /// Process exit code: 2 config, 3 data, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config { .. } => 2,
            PipelineError::Data { .. } | PipelineError::Io { .. } => 3,
            PipelineError::Numerical { .. } => 4,
        }
    }

    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        PipelineError::Config { path: path.into(), message: message.into() }
    }

    pub fn data(stage: &str, message: impl ToString) -> Self {
        PipelineError::Data { stage: stage.into(), message: message.to_string() }
    }

    pub fn io(stage: &str, source: std::io::Error) -> Self {
        PipelineError::Io { stage: stage.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, PipelineError>;

pub fn from_geodata(stage: &str, e: GeodataError) -> PipelineError {
    match e {
        GeodataError::InvalidParameter(m) => PipelineError::config(stage, m),
        GeodataError::InvalidGeoref(m) => PipelineError::config(stage, m),
        GeodataError::Io(source) => PipelineError::io(stage, source),
        other => PipelineError::data(stage, other),
    }
}

pub fn from_filter(stage: &str, e: FilterError) -> PipelineError {
    match e {
        FilterError::MaskedInput | FilterError::RankDeficient { .. } => {
            PipelineError::Numerical { stage: stage.into(), message: e.to_string() }
        }
        other => PipelineError::config(stage, other.to_string()),
    }
}

pub fn from_euler(stage: &str, e: EulerError) -> PipelineError {
    match e {
        EulerError::InvalidConfig(m) => PipelineError::config("euler", m),
        EulerError::DegenerateWindow { .. } => PipelineError::Numerical { stage: stage.into(), message: e.to_string() },
        EulerError::Io(source) => PipelineError::io(stage, source),
        other => PipelineError::data(stage, other),
    }
}

pub fn from_stats(stage: &str, e: StatsError) -> PipelineError {
    PipelineError::data(stage, e)
}

pub fn from_classifier(stage: &str, e: ClassifierError) -> PipelineError {
    match e {
        ClassifierError::InvalidConfig(m) => PipelineError::config("classifier.training", m),
        other => PipelineError::data(stage, other),
    }
}

pub fn from_products(stage: &str, e: ProductsError) -> PipelineError {
    match e {
        ProductsError::InvalidParameter(m) => PipelineError::config("products", m),
        other => PipelineError::data(stage, other),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InputConfig {
    /// Analytic sources sampled on a grid, optionally with Gaussian noise of
    /// `noise_relative` × peak anomaly.
    Synthetic {
        georef: GridGeoref,
        sources: Vec<HomogeneousSource>,
        #[serde(default)]
        noise_relative: f64,
    },
    /// ESRI ASCII grid.
    Grid { path: String },
    /// CSV with columns x, y, tmi.
    Points {
        path: String,
        #[serde(default = "default_crs")]
        crs_label: String,
    },
}

fn default_crs() -> String {
    "UTM".into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GriddingMethod {
    #[default]
    Kriging,
    Nearest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GriddingConfig {
    pub method: GriddingMethod,
    /// Defaults to the spacing report's recommendation.
    pub cell_size: Option<f64>,
    /// Defaults to a spherical model fitted to the sample variance and spacing.
    pub variogram: Option<VariogramModel>,
    pub neighborhood: usize,
    /// Nearest-point search radius; unbounded when absent.
    pub max_radius: Option<f64>,
}

impl Default for GriddingConfig {
    fn default() -> Self {
        Self { method: GriddingMethod::Kriging, cell_size: None, variogram: None, neighborhood: DEFAULT_NEIGHBORHOOD, max_radius: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum FilterStep {
    Detrend { degree: u8 },
    UpwardContinue { height: f64 },
    Lowpass { cutoff_wavelength: f64 },
    FillNodata,
}

impl FilterStep {
    pub fn name(&self) -> &'static str {
        match self {
            FilterStep::Detrend { .. } => "detrend",
            FilterStep::UpwardContinue { .. } => "upward_continue",
            FilterStep::Lowpass { .. } => "lowpass",
            FilterStep::FillNodata => "fill_nodata",
        }
    }

    pub fn apply(&self, grid: &Grid, plan: &SpectralPlan) -> std::result::Result<Grid, FilterError> {
        match *self {
            FilterStep::Detrend { degree } => filters::detrend_poly(grid, degree).map(|(g, _)| g),
            FilterStep::UpwardContinue { height } => filters::upward_continue(grid, height, plan),
            FilterStep::Lowpass { cutoff_wavelength } => filters::lowpass(grid, cutoff_wavelength, plan),
            FilterStep::FillNodata => Ok(filters::fill_nodata(grid)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DerivativeMethod {
    #[default]
    Spectral,
    /// Exact gradients of the synthetic sources; only for noise-free
    /// synthetic input with an empty filter chain.
    Analytic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StatsConfig {
    pub pca: bool,
    pub csr: bool,
    pub nns: bool,
    pub descriptive: bool,
    /// Survey area for the CSR tests; the grid extent when absent.
    pub area_m2: Option<f64>,
}

impl Default for StatsConfig {
    fn default() -> Self {
        Self { pca: true, csr: true, nns: true, descriptive: true, area_m2: None }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub enabled: bool,
    /// `training.seed` is replaced by a sub-seed of the run seed.
    pub training: TrainingConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProductsConfig {
    /// When empty, one east-west and one north-south line through the grid centre.
    pub profiles: Vec<ProfileSpec>,
    /// Corridor half-width of the default profiles; 5 cells when absent.
    pub default_half_width: Option<f64>,
    pub histogram_bin_width: f64,
    pub anisotropy_threshold: f64,
}

impl Default for ProductsConfig {
    fn default() -> Self {
        Self {
            profiles: Vec::new(),
            default_half_width: None,
            histogram_bin_width: products::DEFAULT_BIN_WIDTH,
            anisotropy_threshold: products::DEFAULT_ANISOTROPY_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub seed: Option<u64>,
    /// Used when no output directory is given on the command line. Not part
    /// of the manifest snapshot.
    #[serde(default, skip_serializing)]
    pub output_dir: Option<String>,
    pub input: InputConfig,
    #[serde(default)]
    pub gridding: GriddingConfig,
    #[serde(default)]
    pub filters: Vec<FilterStep>,
    #[serde(default)]
    pub spectral: SpectralPlan,
    #[serde(default)]
    pub derivatives: DerivativeMethod,
    #[serde(default)]
    pub euler: EulerConfig,
    /// Clustering radius in metres; three cells when absent.
    #[serde(default)]
    pub cluster_radius: Option<f64>,
    #[serde(default)]
    pub stats: StatsConfig,
    #[serde(default)]
    pub classifier: ClassifierConfig,
    #[serde(default)]
    pub products: ProductsConfig,
}

/// Parses a JSON config; errors carry the offending field path.
pub fn parse_config(text: &str) -> Result<PipelineConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let config: PipelineConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        PipelineError::config(path, e.into_inner().to_string())
    })?;
    config.validate()?;
    Ok(config)
}

pub fn load_config(path: &Path) -> Result<PipelineConfig> {
    let text = fs::read_to_string(path).map_err(|e| PipelineError::config(path.display().to_string(), e.to_string()))?;
    parse_config(&text)
}

fn positive(v: f64) -> bool {
    v.is_finite() && v > 0.0
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |p: &str, m: &str| Err(PipelineError::config(p, m));
        let mut noisy = false;
        match &self.input {
            InputConfig::Synthetic { georef, sources, noise_relative } => {
                if georef.validate().is_err() {
                    return err("input.georef", "invalid grid georeference");
                }
                if sources.is_empty() {
                    return err("input.sources", "at least one source is required");
                }
                if let Some(i) = sources.iter().position(|s| !s.is_valid()) {
                    return err(&format!("input.sources[{i}]"), "invalid source parameters");
                }
                if !(noise_relative.is_finite() && *noise_relative >= 0.0) {
                    return err("input.noise_relative", "must be non-negative");
                }
                noisy = *noise_relative > 0.0;
            }
            InputConfig::Grid { path } | InputConfig::Points { path, .. } => {
                if path.trim().is_empty() {
                    return err("input.path", "path is empty");
                }
            }
        }
        let g = &self.gridding;
        if g.cell_size.is_some_and(|c| !positive(c)) {
            return err("gridding.cell_size", "must be positive");
        }
        if g.neighborhood < 2 {
            return err("gridding.neighborhood", "must be at least 2");
        }
        if g.max_radius.is_some_and(|r| !positive(r)) {
            return err("gridding.max_radius", "must be positive");
        }
        if let Some(v) = &g.variogram {
            if let Err(e) = v.validate() {
                return err("gridding.variogram", &e.to_string());
            }
        }
        for (i, step) in self.filters.iter().enumerate() {
            let bad = match *step {
                FilterStep::Detrend { degree } => degree > 3,
                FilterStep::UpwardContinue { height } => !positive(height),
                FilterStep::Lowpass { cutoff_wavelength } => !positive(cutoff_wavelength),
                FilterStep::FillNodata => false,
            };
            if bad {
                return err(&format!("filters[{i}]"), &format!("invalid parameters for `{}`", step.name()));
            }
        }
        if let Err(e) = self.spectral.validate() {
            return err("spectral", &e.to_string());
        }
        if self.derivatives == DerivativeMethod::Analytic {
            let synthetic = matches!(self.input, InputConfig::Synthetic { .. });
            if !synthetic || noisy || !self.filters.is_empty() {
                return err("derivatives", "analytic derivatives need noise-free synthetic input and no filters");
            }
        }
        if let Err(e) = self.euler.validate() {
            return err("euler", &e.to_string());
        }
        if self.cluster_radius.is_some_and(|r| !positive(r)) {
            return err("cluster_radius", "must be positive");
        }
        if self.stats.area_m2.is_some_and(|a| !positive(a)) {
            return err("stats.area_m2", "must be positive");
        }
        if let Err(e) = self.classifier.training.validate() {
            return err("classifier.training", &e.to_string());
        }
        for (i, p) in self.products.profiles.iter().enumerate() {
            if p.validate().is_err() {
                return err(&format!("products.profiles[{i}]"), "needs a finite center and positive half_width");
            }
        }
        if !positive(self.products.histogram_bin_width) {
            return err("products.histogram_bin_width", "must be positive");
        }
        if !(self.products.anisotropy_threshold >= 1.0) {
            return err("products.anisotropy_threshold", "must be at least 1");
        }
        if self.products.default_half_width.is_some_and(|h| !positive(h)) {
            return err("products.default_half_width", "must be positive");
        }
        if self.seed.is_none() && (noisy || self.classifier.enabled) {
            return err("seed", "a seed is required when noise or the classifier is enabled");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub windows_accepted: usize,
    pub rejected_counts: BTreeMap<String, usize>,
    pub clusters: usize,
    pub observation_height: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failed_stage: Option<String>,
    pub files: Vec<ManifestEntry>,
    pub config: PipelineConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub summary: Option<RunSummary>,
}

impl Manifest {
    pub fn file(&self, name: &str) -> Option<&ManifestEntry> {
        self.files.iter().find(|f| f.name == name)
    }
}

/// In-memory results of a completed run.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub manifest: Manifest,
    pub georef: GridGeoref,
    pub solutions: SolutionSet,
    pub clusters: Vec<Cluster>,
}

/// A named output file held in memory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Artifact {
    pub name: String,
    pub bytes: Vec<u8>,
}

impl Artifact {
    pub fn new(name: impl Into<String>, bytes: Vec<u8>) -> Self {
        Self { name: name.into(), bytes }
    }

    pub fn json<T: Serialize>(stage: &str, name: &str, value: &T) -> Result<Self> {
        let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| PipelineError::data(stage, e))?;
        bytes.push(b'\n');
        Ok(Self::new(name, bytes))
    }

    pub fn grid(stage: &str, name: &str, grid: &Grid) -> Result<Self> {
        let mut bytes = Vec::new();
        geodata::write_grid(grid, &mut bytes).map_err(|e| from_geodata(stage, e))?;
        Ok(Self::new(name, bytes))
    }

    pub fn write_to(&self, dir: &Path) -> std::io::Result<()> {
        fs::write(dir.join(&self.name), &self.bytes)
    }
}

struct Artifacts {
    dir: PathBuf,
    files: BTreeMap<String, ManifestEntry>,
}

impl Artifacts {
    fn emit(&mut self, stage: &str, name: &str, bytes: Vec<u8>) -> Result<()> {
        fs::write(self.dir.join(name), &bytes).map_err(|e| PipelineError::io(stage, e))?;
        let entry = ManifestEntry { name: name.into(), sha256: hex::encode(Sha256::digest(&bytes)), bytes: bytes.len() as u64 };
        self.files.insert(name.into(), entry);
        Ok(())
    }

    fn emit_grid(&mut self, stage: &str, name: &str, grid: &Grid) -> Result<()> {
        let a = Artifact::grid(stage, name, grid)?;
        self.emit(stage, &a.name, a.bytes)
    }

    fn emit_all(&mut self, stage: &str, artifacts: Vec<Artifact>) -> Result<()> {
        for a in artifacts {
            self.emit(stage, &a.name, a.bytes)?;
        }
        Ok(())
    }

    fn manifest(&self, config: &PipelineConfig, failed_stage: Option<String>, summary: Option<RunSummary>) -> Manifest {
        Manifest {
            status: if failed_stage.is_none() { "complete".into() } else { "incomplete".into() },
            failed_stage,
            files: self.files.values().cloned().collect(),
            config: config.clone(),
            summary,
        }
    }
}

fn skipped(reason: impl ToString) -> serde_json::Value {
    serde_json::json!({ "status": "skipped", "reason": reason.to_string() })
}

/// Runs every stage. Relative input paths resolve against `base_dir`;
/// artifacts go to `out_dir`. `progress` receives one line per stage.
pub fn run_pipeline(
    config: &PipelineConfig,
    base_dir: &Path,
    out_dir: &Path,
    progress: &mut dyn FnMut(&str),
) -> Result<PipelineOutput> {
    config.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| PipelineError::io("output", e))?;
    let mut art = Artifacts { dir: out_dir.to_path_buf(), files: BTreeMap::new() };
    let mut stage = String::from("input");
    let result = execute(config, base_dir, &mut art, &mut stage, progress);
    let (manifest, out) = match result {
        Ok((georef, solutions, clusters, summary)) => {
            let m = art.manifest(config, None, Some(summary));
            (m, Ok((georef, solutions, clusters)))
        }
        Err(e) => (art.manifest(config, Some(stage.clone()), None), Err(e)),
    };
    let mut buf = serde_json::to_vec_pretty(&manifest).map_err(|e| PipelineError::data("manifest", e))?;
    buf.push(b'\n');
    fs::write(out_dir.join(MANIFEST_NAME), buf).map_err(|e| PipelineError::io("manifest", e))?;
    let (georef, solutions, clusters) = out?;
    Ok(PipelineOutput { manifest, georef, solutions, clusters })
}

type StageOutput = (GridGeoref, SolutionSet, Vec<Cluster>, RunSummary);

fn execute(
    config: &PipelineConfig,
    base_dir: &Path,
    art: &mut Artifacts,
    stage: &mut String,
    progress: &mut dyn FnMut(&str),
) -> Result<StageOutput> {
    let seed = config.seed.unwrap_or(0);
    let mut set_stage = |s: &str, progress: &mut dyn FnMut(&str)| {
        *stage = s.to_string();
        progress(s);
    };

    set_stage("input", progress);
    let mut analytic: Option<[Grid; 3]> = None;
    let mut grid = match &config.input {
        InputConfig::Synthetic { georef, sources, noise_relative } => {
            let clean = synthetics::synth_sum(sources, *georef);
            if config.derivatives == DerivativeMethod::Analytic {
                analytic = Some(synthetics::synth_sum_gradients(sources, *georef));
            }
            if *noise_relative > 0.0 {
                let sigma = noise_relative * anomaly_peak(&clean, sources);
                synthetics::add_noise(&clean, sigma, sub_seed(seed, "noise"))
            } else {
                clean
            }
        }
        InputConfig::Grid { path } => {
            let file = open_input(&base_dir.join(path))?;
            geodata::read_grid(std::io::BufReader::new(file)).map_err(|e| from_geodata("input", e))?
        }
        InputConfig::Points { path, crs_label } => {
            let file = open_input(&base_dir.join(path))?;
            let points = geodata::load_points(std::io::BufReader::new(file), crs_label).map_err(|e| from_geodata("input", e))?;
            set_stage("grid", progress);
            let (grid, extra) = grid_survey(&points, &config.gridding)?;
            art.emit_all("grid", extra)?;
            grid
        }
    };
    art.emit_grid("grid", "grid.asc", &grid)?;
    let georef = grid.georef;

    set_stage("filters", progress);
    let mut lifted = 0.0;
    for (i, step) in config.filters.iter().enumerate() {
        grid = step.apply(&grid, &config.spectral).map_err(|e| from_filter(&format!("filters[{i}]"), e))?;
        if let FilterStep::UpwardContinue { height } = step {
            lifted += height;
        }
        art.emit_grid("filters", &format!("filtered_{:02}_{}.asc", i + 1, step.name()), &grid)?;
    }

    set_stage("derivatives", progress);
    let [tx, ty, tz] = match analytic {
        Some(g) => g,
        None => {
            let d = |axis| filters::derivative(&grid, axis, &config.spectral).map_err(|e| from_filter("derivatives", e));
            [d(Axis::X)?, d(Axis::Y)?, d(Axis::Z)?]
        }
    };
    art.emit_grid("derivatives", "tx.asc", &tx)?;
    art.emit_grid("derivatives", "ty.asc", &ty)?;
    art.emit_grid("derivatives", "tz.asc", &tz)?;

    set_stage("euler", progress);
    let euler_config = EulerConfig { observation_height: config.euler.observation_height + lifted, ..config.euler.clone() };
    let solutions = euler::euler_sweep(&grid, &tx, &ty, &tz, &euler_config).map_err(|e| from_euler("euler", e))?;
    let mut buf = Vec::new();
    euler::write_solutions_csv(&solutions, &mut buf).map_err(|e| from_euler("euler", e))?;
    art.emit("euler", "solutions.csv", buf)?;
    let mut buf = Vec::new();
    euler::write_provenance_json(&solutions, &mut buf).map_err(|e| from_euler("euler", e))?;
    art.emit("euler", "solutions_provenance.json", buf)?;

    set_stage("cluster", progress);
    let radius = config.cluster_radius.unwrap_or(3.0 * georef.cell_size);
    let clusters = euler::cluster_solutions(&solutions.solutions, radius);
    art.emit("cluster", "clusters.csv", clusters_csv(&solutions, &clusters))?;
    let representatives = euler::filter_cluster(&solutions, radius);
    let mut buf = Vec::new();
    euler::write_solutions_csv(&representatives, &mut buf).map_err(|e| from_euler("cluster", e))?;
    art.emit("cluster", "solutions_clustered.csv", buf)?;

    set_stage("stats", progress);
    let sol = &solutions.solutions;
    let area = config.stats.area_m2.unwrap_or(georef.n_cols as f64 * georef.n_rows as f64 * georef.cell_size * georef.cell_size);
    art.emit_all("stats", stats_stage(sol, area, &config.stats)?)?;

    if config.classifier.enabled {
        set_stage("classifier", progress);
        let training = TrainingConfig { seed: sub_seed(seed, "classifier"), ..config.classifier.training.clone() };
        art.emit_all("classifier", classifier_stage(&solutions, &tx, &ty, &training)?)?;
    }

    set_stage("products", progress);
    let profiles = if config.products.profiles.is_empty() {
        default_profiles(&georef, config.products.default_half_width)
    } else {
        config.products.profiles.clone()
    };
    art.emit_all("products", products_stage(sol, &profiles, &config.products)?)?;

    let summary = RunSummary {
        windows_accepted: solutions.len(),
        rejected_counts: solutions.rejected_counts.clone(),
        clusters: clusters.len(),
        observation_height: euler_config.observation_height,
    };
    Ok((georef, solutions, clusters, summary))
}

fn open_input(path: &Path) -> Result<fs::File> {
    fs::File::open(path).map_err(|e| PipelineError::io(&format!("input {}", path.display()), e))
}

/// Largest absolute deviation of the field from the summed base levels.
fn anomaly_peak(grid: &Grid, sources: &[HomogeneousSource]) -> f64 {
    let base: f64 = sources.iter().map(|s| s.base).sum();
    grid.values.iter().fold(0.0, |m, v| m.max((v - base).abs()))
}

/// Grids scattered points and reports spacing and kriging diagnostics in
/// `gridding_report.json`. Masked cells are filled from their nearest
/// neighbour so the spectral stages can run.
pub fn grid_survey(points: &geodata::SurveyPointSet, cfg: &GriddingConfig) -> Result<(Grid, Vec<Artifact>)> {
    let spacing = geodata::sample_spacing_report(points, cfg.cell_size).map_err(|e| from_geodata("grid", e))?;
    let cell = cfg.cell_size.unwrap_or(spacing.recommended_cell_size);
    let georef = GridGeoref::covering(points, cell).map_err(|e| from_geodata("grid", e))?;
    let (grid, kriging) = match cfg.method {
        GriddingMethod::Nearest => {
            let g = geodata::grid_nearest(points, georef, cfg.max_radius.unwrap_or(f64::INFINITY))
                .map_err(|e| from_geodata("grid", e))?;
            (g, None)
        }
        GriddingMethod::Kriging => {
            let variogram = cfg.variogram.unwrap_or_else(|| VariogramModel::default_for(points));
            let (g, report) =
                geodata::grid_kriging(points, georef, &variogram, cfg.neighborhood).map_err(|e| from_geodata("grid", e))?;
            (g, Some((variogram, report)))
        }
    };
    let report = serde_json::json!({
        "n_points": points.len(),
        "duplicates": points.duplicate_count(),
        "spacing": spacing,
        "cell_size": cell,
        "method": cfg.method,
        "variogram": kriging.as_ref().map(|k| k.0),
        "singular_cells": kriging.as_ref().map(|k| k.1.singular_cells.len()),
        "negative_weight_cells": kriging.as_ref().map(|k| k.1.negative_weight_cells),
        "masked_cells_filled": grid.values.len() - grid.unmasked_count(),
    });
    let grid = if grid.has_nodata() { filters::fill_nodata(&grid) } else { grid };
    Ok((grid, vec![Artifact::json("grid", "gridding_report.json", &report)?]))
}

/// PCA of (x0, y0, z0), CSR tests over `area_m2`, nearest-neighbour report
/// and descriptive statistics of depth. A test that cannot run on this
/// solution set writes `{"status": "skipped", "reason": ...}` instead.
pub fn stats_stage(sol: &[euler::EulerSolution], area_m2: f64, cfg: &StatsConfig) -> Result<Vec<Artifact>> {
    let stage = "stats";
    let xy: Vec<(f64, f64)> = sol.iter().map(|s| (s.x0, s.y0)).collect();
    let mut out = Vec::new();
    if cfg.pca {
        let data: Vec<f64> = sol.iter().flat_map(|s| [s.x0, s.y0, s.z0]).collect();
        out.push(match spatialstats::pca(&data, 3) {
            Ok(p) => Artifact::json(stage, "stats_pca.json", &p)?,
            Err(e) => Artifact::json(stage, "stats_pca.json", &skipped(e))?,
        });
    }
    if cfg.csr {
        out.push(match spatialstats::csr_tests(&xy, area_m2) {
            Ok(r) => Artifact::json(stage, "stats_csr.json", &r)?,
            Err(StatsError::NonpositiveArea(a)) => return Err(PipelineError::config("stats.area_m2", format!("area must be positive, got {a}"))),
            Err(e) => Artifact::json(stage, "stats_csr.json", &skipped(e))?,
        });
    }
    if cfg.nns {
        match spatialstats::nearest_neighbor_stats(&xy) {
            Ok(r) => {
                out.push(Artifact::json(stage, "stats_nns.json", &r)?);
                let mut buf = Vec::new();
                spatialstats::write_nn_distances_csv(&r, &mut buf).map_err(|e| PipelineError::io(stage, e))?;
                out.push(Artifact::new("nn_distances.csv", buf));
            }
            Err(e) => out.push(Artifact::json(stage, "stats_nns.json", &skipped(e))?),
        }
    }
    if cfg.descriptive {
        let depths: Vec<f64> = sol.iter().map(|s| s.z0).collect();
        out.push(match spatialstats::descriptive_stats(&depths) {
            Ok(d) => Artifact::json(stage, "stats_descriptive.json", &d)?,
            Err(e) => Artifact::json(stage, "stats_descriptive.json", &skipped(e))?,
        });
    }
    Ok(out)
}

/// Profile CSVs, the depth histogram and the trend report.
pub fn products_stage(sol: &[euler::EulerSolution], profiles: &[ProfileSpec], cfg: &ProductsConfig) -> Result<Vec<Artifact>> {
    let stage = "products";
    let mut out = Vec::new();
    for (i, spec) in profiles.iter().enumerate() {
        let section = products::extract_profile(sol, spec).map_err(|e| from_products(stage, e))?;
        let mut buf = Vec::new();
        products::write_profile_csv(&section, &mut buf).map_err(|e| PipelineError::io(stage, e))?;
        out.push(Artifact::new(format!("profile_{}.csv", file_label(&spec.label, i)), buf));
    }
    let mut buf = Vec::new();
    match products::depth_histogram(sol, cfg.histogram_bin_width) {
        Ok(h) => products::write_histogram_csv(&h, &mut buf).map_err(|e| PipelineError::io(stage, e))?,
        Err(ProductsError::EmptySolutionSet) => buf.extend_from_slice(b"bin_low,bin_high,count\n"),
        Err(e) => return Err(from_products(stage, e)),
    }
    out.push(Artifact::new("depth_histogram.csv", buf));
    out.push(match products::trend_analysis(sol, cfg.anisotropy_threshold) {
        Ok(t) => Artifact::json(stage, "trend.json", &t)?,
        Err(e @ (ProductsError::TooFewPoints { .. } | ProductsError::DegenerateScatter)) => {
            Artifact::json(stage, "trend.json", &skipped(e))?
        }
        Err(e) => return Err(from_products(stage, e)),
    });
    Ok(out)
}

fn clusters_csv(set: &SolutionSet, clusters: &[Cluster]) -> Vec<u8> {
    use crate::fmt_f64 as f;
    let mut out = String::from("cluster,members,modal_si,x0,y0,z0,si,rms,sigma_z\n");
    for (k, c) in clusters.iter().enumerate() {
        let r = &set.solutions[c.representative];
        let modal = euler::modal_si(&set.solutions, &c.members).unwrap_or(r.si);
        out.push_str(&format!(
            "{k},{},{},{},{},{},{},{},{}\n",
            c.members.len(),
            f(modal),
            f(r.x0),
            f(r.y0),
            f(r.z0),
            f(r.si),
            f(r.rms),
            f(r.sigma_z)
        ));
    }
    out.into_bytes()
}

/// Trains the classifier on a solution set and reports model, loss history,
/// validation confusion matrix and per-solution class probabilities.
pub fn classifier_stage(solutions: &SolutionSet, tx: &Grid, ty: &Grid, training: &TrainingConfig) -> Result<Vec<Artifact>> {
    let stage = "classifier";
    let (features, labels) = classifier::build_features(solutions, tx, ty).map_err(|e| from_classifier(stage, e))?;
    let si_set = &solutions.provenance.config.si_set;
    let (model, report) =
        classifier::train_mlp(&features, &labels, si_set, training).map_err(|e| from_classifier(stage, e))?;
    let mut out = vec![Artifact::json(stage, "classifier_model.json", &model)?];

    let mut history = String::from("epoch,train_loss,validation_loss\n");
    for r in &report.history {
        history.push_str(&format!("{},{},{}\n", r.epoch, crate::fmt_f64(r.train_loss), crate::fmt_f64(r.validation_loss)));
    }
    out.push(Artifact::new("classifier_history.csv", history.into_bytes()));

    let val = features.select(&report.validation_indices);
    let val_labels: Vec<usize> = report.validation_indices.iter().map(|&i| labels[i]).collect();
    let predicted = classifier::predict_classes(&model, &val).map_err(|e| from_classifier(stage, e))?;
    let matrix = classifier::confusion_matrix(&predicted, &val_labels, si_set.len());
    let mut buf = Vec::new();
    classifier::write_confusion_csv(&matrix, si_set, &mut buf).map_err(|e| PipelineError::io(stage, e))?;
    out.push(Artifact::new("classifier_confusion.csv", buf));

    let probs = classifier::predict(&model, &features).map_err(|e| from_classifier(stage, e))?;
    let mut buf = Vec::new();
    write_predictions_csv(&probs, &model.si_set, &mut buf).map_err(|e| PipelineError::io(stage, e))?;
    out.push(Artifact::new("classifier_predictions.csv", buf));
    out.push(Artifact::json(
        stage,
        "classifier_report.json",
        &serde_json::json!({
            "validation_accuracy": report.validation_accuracy,
            "epochs": report.history.len(),
            "train_samples": report.train_indices.len(),
            "validation_samples": report.validation_indices.len(),
            "degenerate_features": report.degenerate_features,
        }),
    )?);
    Ok(out)
}

/// Applies a trained model to a fresh solution set.
pub fn predict_stage(model: &classifier::MlpModel, solutions: &SolutionSet, tx: &Grid, ty: &Grid) -> Result<Vec<Artifact>> {
    let stage = "classifier";
    if model.si_set != solutions.provenance.config.si_set {
        return Err(PipelineError::data(stage, "model and solution set use different SI sets"));
    }
    let (features, _) = classifier::build_features(solutions, tx, ty).map_err(|e| from_classifier(stage, e))?;
    let probs = classifier::predict(model, &features).map_err(|e| from_classifier(stage, e))?;
    let mut buf = Vec::new();
    write_predictions_csv(&probs, &model.si_set, &mut buf).map_err(|e| PipelineError::io(stage, e))?;
    Ok(vec![Artifact::new("classifier_predictions.csv", buf)])
}

/// One row per solution: index, predicted SI and every class probability.
pub fn write_predictions_csv<W: std::io::Write>(probs: &[Vec<f64>], si_set: &[f64], mut sink: W) -> std::io::Result<()> {
    let head: Vec<String> = si_set.iter().map(|s| format!("p_{s}")).collect();
    writeln!(sink, "index,predicted_si,{}", head.join(","))?;
    for (i, row) in probs.iter().enumerate() {
        let cells: Vec<String> = row.iter().map(|p| crate::fmt_f64(*p)).collect();
        writeln!(sink, "{i},{},{}", si_set[classifier::argmax(row)], cells.join(","))?;
    }
    Ok(())
}

/// One east-west and one north-south line through the grid centre.
pub fn default_profiles(georef: &GridGeoref, half_width: Option<f64>) -> Vec<ProfileSpec> {
    let hw = half_width.unwrap_or(5.0 * georef.cell_size);
    let cx = georef.x_origin + 0.5 * georef.n_cols as f64 * georef.cell_size;
    let cy = georef.y_origin + 0.5 * georef.n_rows as f64 * georef.cell_size;
    vec![
        ProfileSpec { axis: ProfileAxis::EastWest, center: cy, half_width: hw, label: "ew_center".into() },
        ProfileSpec { axis: ProfileAxis::NorthSouth, center: cx, half_width: hw, label: "ns_center".into() },
    ]
}

fn file_label(label: &str, index: usize) -> String {
    let clean: String = label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    if clean.is_empty() {
        format!("{:02}", index + 1)
    } else {
        clean
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    OneSource,
    TwoSource,
    NoisySurvey,
}

impl Preset {
    pub fn name(&self) -> &'static str {
        match self {
            Preset::OneSource => "one_source",
            Preset::TwoSource => "two_source",
            Preset::NoisySurvey => "noisy_survey",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Preset::OneSource, Preset::TwoSource, Preset::NoisySurvey].into_iter().find(|p| p.name() == s)
    }
}

pub const NOISY_SURVEY_GRID: &str = "noisy_survey_tmi.asc";

/// The configuration of a preset. `noisy_survey` reads its grid from
/// [`NOISY_SURVEY_GRID`], which [`synth_demo`] writes.
pub fn preset_config(preset: Preset, seed: u64) -> PipelineConfig {
    let base = PipelineConfig {
        seed: Some(seed),
        output_dir: None,
        input: InputConfig::Grid { path: String::new() },
        gridding: GriddingConfig::default(),
        filters: Vec::new(),
        spectral: SpectralPlan::default(),
        derivatives: DerivativeMethod::Analytic,
        euler: EulerConfig::default(),
        cluster_radius: None,
        stats: StatsConfig::default(),
        classifier: ClassifierConfig::default(),
        products: ProductsConfig::default(),
    };
    match preset {
        Preset::OneSource => {
            let georef = GridGeoref { x_origin: 0.0, y_origin: 0.0, cell_size: 100.0, n_cols: 128, n_rows: 128 };
            let (x, y) = georef.cell_center(64, 64);
            let source = HomogeneousSource::radial(x, y, 200.0, 100.0 * 200.0 * 200.0, 2.0, 0.0);
            PipelineConfig { input: InputConfig::Synthetic { georef, sources: vec![source], noise_relative: 0.0 }, ..base }
        }
        Preset::TwoSource => {
            let georef = GridGeoref { x_origin: 0.0, y_origin: 0.0, cell_size: 100.0, n_cols: 128, n_rows: 128 };
            let (x1, y1) = georef.cell_center(64, 20);
            let (x3, y3) = georef.cell_center(64, 108);
            let sources = vec![
                HomogeneousSource::radial(x1, y1, 300.0, 100.0 * 300.0, 1.0, 0.0),
                HomogeneousSource::radial(x3, y3, 800.0, 100.0 * 800f64.powi(3), 3.0, 0.0),
            ];
            PipelineConfig {
                input: InputConfig::Synthetic { georef, sources, noise_relative: 0.0 },
                classifier: ClassifierConfig { enabled: true, training: TrainingConfig { max_epochs: 200, ..Default::default() } },
                ..base
            }
        }
        Preset::NoisySurvey => PipelineConfig {
            input: InputConfig::Grid { path: NOISY_SURVEY_GRID.into() },
            filters: vec![FilterStep::UpwardContinue { height: 800.0 }],
            derivatives: DerivativeMethod::Spectral,
            ..base
        },
    }
}

/// The single harmonic source of the noisy survey and its grid.
pub fn noisy_survey_source() -> (HomogeneousSource, GridGeoref) {
    let georef = GridGeoref { x_origin: 0.0, y_origin: 0.0, cell_size: 250.0, n_cols: 256, n_rows: 256 };
    let (x, y) = georef.cell_center(128, 128);
    let z0: f64 = 1000.0;
    let mut source = HomogeneousSource::harmonic(x, y, z0, 100.0 * z0 * z0, 2.0, 0.0);
    source.shape = FieldShape::Harmonic;
    (source, georef)
}

/// Writes `<preset>.json` plus the synthetic input grid into `dir` and
/// returns the config path.
pub fn synth_demo(preset: Preset, seed: u64, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| PipelineError::io("synth-demo", e))?;
    let config = preset_config(preset, seed);
    let grid = match (&config.input, preset) {
        (InputConfig::Synthetic { georef, sources, .. }, _) => synthetics::synth_sum(sources, *georef),
        (_, _) => {
            let (source, georef) = noisy_survey_source();
            let clean = synthetics::synth_homogeneous(&source, georef);
            let sigma = 0.01 * anomaly_peak(&clean, &[source]);
            synthetics::add_noise(&clean, sigma, sub_seed(seed, "noise"))
        }
    };
    let grid_name = match preset {
        Preset::NoisySurvey => NOISY_SURVEY_GRID.to_string(),
        _ => format!("{}_tmi.asc", preset.name()),
    };
    let mut buf = Vec::new();
    geodata::write_grid(&grid, &mut buf).map_err(|e| from_geodata("synth-demo", e))?;
    fs::write(dir.join(grid_name), buf).map_err(|e| PipelineError::io("synth-demo", e))?;
    let path = dir.join(format!("{}.json", preset.name()));
    let mut text = serde_json::to_string_pretty(&config).map_err(|e| PipelineError::data("synth-demo", e))?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| PipelineError::io("synth-demo", e))?;
    Ok(path)
}
