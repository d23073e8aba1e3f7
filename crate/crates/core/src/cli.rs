//! Command-line front end.
//!
//! Every subcommand resolves a [`RunConfig`] from an optional flat
//! `key=value` config file overlaid with command-line flags (flags win), and
//! writes that configuration into the header of every file it produces.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::analysis::{
    coarse_grain, decay_sweep, fit_medians, left_right_superposition, single_link_superposition, DecayPoint,
    DecaySettings, MomentTest, DEFAULT_DECAY_THRESHOLD,
};
use crate::dynamics::{run_trajectory, InitialState, ModelParams, SweepMotion, TrajectoryOptions, UniformMotion};
use crate::error::Error;
use crate::hilbert::MAX_SLOTS;
use crate::lattice::{LatticeGeometry, VertexId};
use crate::oracle::{channel_ensemble_check, covariance_check, picture_agreement, sampler_tv_check, CheckOutcome};
use crate::raster::{gray, FieldRaster, Pgm, StuffSurface};

/// Environment variable selecting the worker-thread count.
pub const THREADS_ENV: &str = "COLLAPSE_LATTICE_THREADS";

pub const EXIT_VALIDATION: u8 = 1;
pub const EXIT_RUNTIME: u8 = 2;
pub const EXIT_CHECK_FAILED: u8 = 3;

#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    Validation(String),
    Runtime(String),
    CheckFailed(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Validation(_) => EXIT_VALIDATION,
            Self::Runtime(_) => EXIT_RUNTIME,
            Self::CheckFailed(_) => EXIT_CHECK_FAILED,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Validation(m) => write!(f, "invalid configuration: {m}"),
            Self::Runtime(m) => write!(f, "run failed: {m}"),
            Self::CheckFailed(m) => write!(f, "check failed: {m}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::SurfaceExhausted | Error::ZeroProbability(_) | Error::Data(_) => Self::Runtime(e.to_string()),
            _ => Self::Validation(e.to_string()),
        }
    }
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "collapse-lattice", version, about = "Collapse-model trajectories on a periodic null lattice")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one trajectory and write field and stuff rasters plus an event log.
    Simulate(SimulateArgs),
    /// Sweep epsilon or particle number and measure superposition decay times.
    Decay(DecayArgs),
    /// Run one trajectory and coarse grain its realised field.
    CoarseGrain(CoarseGrainArgs),
    /// Compare the sampler against exact small-lattice computations.
    OracleCheck(OracleArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct ModelArgs {
    /// Flat key=value file; command-line flags override its entries.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub n_sites: Option<usize>,
    #[arg(long)]
    pub rows: Option<usize>,
    /// Mixing angle in radians, within [0, pi/2].
    #[arg(long)]
    pub theta: Option<f64>,
    #[arg(long)]
    pub phase_alpha: Option<f64>,
    #[arg(long)]
    pub phase_beta: Option<f64>,
    /// Kraus parameter X in [0, 1].
    #[arg(long = "x", conflicts_with = "epsilon")]
    pub x: Option<f64>,
    /// Collapse strength epsilon = 1 - X.
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// RNG stream of the trajectory.
    #[arg(long)]
    pub stream: Option<u64>,
    /// vacuum | eigen:<bits> | super:<bits>,<bits>, one bit per slot.
    #[arg(long)]
    pub initial: Option<String>,
    /// Motion policy: uniform (default) or sweep.
    #[arg(long)]
    pub policy: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Default)]
pub enum RasterFormat {
    #[default]
    Pgm,
    Csv,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    #[arg(long, value_enum, default_value_t = RasterFormat::Pgm)]
    pub format: RasterFormat,
    /// State the stuff raster is read from: post-hit (default) or pre-hit.
    #[arg(long)]
    pub stuff: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepKind {
    /// Single-link superpositions at each epsilon.
    Epsilon,
    /// Left/right particle superpositions at each particle count.
    Particles,
}

#[derive(Debug, Args)]
pub struct DecayArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, value_enum, default_value_t = SweepKind::Epsilon)]
    pub sweep: SweepKind,
    /// Comma-separated epsilon values for an epsilon sweep.
    #[arg(long, value_delimiter = ',')]
    pub epsilons: Vec<f64>,
    /// Comma-separated particle counts for a particle sweep.
    #[arg(long, value_delimiter = ',')]
    pub particles: Vec<usize>,
    /// Slot carrying the particle of the single-link superposition.
    #[arg(long, default_value_t = 0)]
    pub slot: usize,
    #[arg(long, default_value_t = 50)]
    pub seeds: usize,
    #[arg(long, default_value_t = DEFAULT_DECAY_THRESHOLD)]
    pub threshold: f64,
    /// Confirmation window in steps (default 5 N^2).
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long, default_value_t = 20_000_000)]
    pub max_steps: usize,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct CoarseGrainArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Block size m in vertices.
    #[arg(long, default_value_t = 2)]
    pub block: usize,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Trajectories for the sampler comparison.
    #[arg(long, default_value_t = 100_000)]
    pub samples: usize,
    /// Trajectories for the channel comparison.
    #[arg(long, default_value_t = 10_000)]
    pub ensemble: usize,
    #[arg(long, default_value_t = 0.02)]
    pub tv_tolerance: f64,
    #[arg(long, default_value_t = 0.05)]
    pub channel_tolerance: f64,
    /// Adds a labelling that violates causal order (negative control).
    #[arg(long, hide = true)]
    pub inject_misordered: bool,
}

/// Fully resolved run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub n_sites: usize,
    pub rows: usize,
    pub params: ModelParams,
    pub initial: InitialState,
    pub stream: u64,
    pub policy: String,
}

impl RunConfig {
    pub fn geometry(&self) -> CliResult<LatticeGeometry> {
        Ok(LatticeGeometry::new(self.n_sites, self.rows)?)
    }

    /// Ordered `key=value` pairs in config-file syntax.
    pub fn header(&self) -> Vec<(String, String)> {
        let p = &self.params;
        [
            ("n-sites", self.n_sites.to_string()),
            ("rows", self.rows.to_string()),
            ("theta", p.theta.to_string()),
            ("phase-alpha", p.phase_alpha.to_string()),
            ("phase-beta", p.phase_beta.to_string()),
            ("x", p.x.to_string()),
            ("seed", p.seed.to_string()),
            ("stream", self.stream.to_string()),
            ("initial", self.initial.to_string()),
            ("policy", self.policy.clone()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    pub fn options(&self) -> TrajectoryOptions {
        TrajectoryOptions {
            policy: match self.policy.as_str() {
                "sweep" => Arc::new(SweepMotion),
                _ => Arc::new(UniformMotion),
            },
            stream: self.stream,
            ..TrajectoryOptions::default()
        }
    }
}

const CONFIG_KEYS: [&str; 12] = [
    "n-sites",
    "rows",
    "theta",
    "phase-alpha",
    "phase-beta",
    "x",
    "epsilon",
    "seed",
    "stream",
    "initial",
    "policy",
    "stuff",
];

/// Output-header keys that a config file may carry and that are ignored.
const METADATA_KEYS: [&str; 2] = ["generator", "kind"];

/// Parses a flat config file: `key=value` per line, `#` starts a comment line.
pub fn parse_config_text(text: &str) -> CliResult<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Validation(format!("config line {}: expected key=value, got '{line}'", n + 1)))?;
        let k = k.trim().replace('_', "-");
        if METADATA_KEYS.contains(&k.as_str()) {
            continue;
        }
        if !CONFIG_KEYS.contains(&k.as_str()) {
            return Err(CliError::Validation(format!(
                "config line {}: unknown key '{k}' (known: {})",
                n + 1,
                CONFIG_KEYS.join(", ")
            )));
        }
        if map.insert(k.clone(), v.trim().to_string()).is_some() {
            return Err(CliError::Validation(format!("config line {}: duplicate key '{k}'", n + 1)));
        }
    }
    Ok(map)
}

fn parse_value<T: std::str::FromStr>(key: &str, v: &str) -> CliResult<T> {
    v.parse()
        .map_err(|_| CliError::Validation(format!("config key '{key}': cannot parse '{v}'")))
}

/// Defaults used when neither the config file nor a flag sets a value.
pub struct Defaults {
    pub n_sites: usize,
    pub rows: usize,
    pub theta: f64,
}

pub const SIMULATE_DEFAULTS: Defaults = Defaults {
    n_sites: 8,
    rows: 64,
    theta: std::f64::consts::FRAC_PI_6,
};

/// Merges file entries and flags into a validated configuration.
pub fn resolve(model: &ModelArgs, defaults: &Defaults) -> CliResult<(RunConfig, BTreeMap<String, String>)> {
    let file = match &model.config {
        Some(path) => parse_config_text(&fs::read_to_string(path).map_err(|e| io_error(path, e))?)?,
        None => BTreeMap::new(),
    };
    let get = |key: &str| file.get(key).map(String::as_str);
    let pick = |flag: Option<String>, key: &str| flag.or_else(|| get(key).map(str::to_string));

    let n_sites = match model.n_sites {
        Some(n) => n,
        None => get("n-sites").map_or(Ok(defaults.n_sites), |v| parse_value("n-sites", v))?,
    };
    if 2 * n_sites > MAX_SLOTS {
        return Err(CliError::Validation(format!(
            "n-sites = {n_sites} exceeds the limit of {} sites",
            MAX_SLOTS / 2
        )));
    }
    let rows = match model.rows {
        Some(r) => r,
        None => get("rows").map_or(Ok(defaults.rows), |v| parse_value("rows", v))?,
    };
    let float = |flag: Option<f64>, key: &str, default: f64| -> CliResult<f64> {
        match flag {
            Some(v) => Ok(v),
            None => get(key).map_or(Ok(default), |v| parse_value(key, v)),
        }
    };
    let theta = float(model.theta, "theta", defaults.theta)?;
    let phase_alpha = float(model.phase_alpha, "phase-alpha", 0.0)?;
    let phase_beta = float(model.phase_beta, "phase-beta", 0.0)?;

    // Flags set X or epsilon as a unit; otherwise the file must set exactly one.
    let x = match (model.x, model.epsilon) {
        (Some(x), None) => x,
        (None, Some(e)) => 1.0 - e,
        (Some(_), Some(_)) => return Err(CliError::Validation("give exactly one of --x and --epsilon".into())),
        (None, None) => match (get("x"), get("epsilon")) {
            (Some(x), None) => parse_value("x", x)?,
            (None, Some(e)) => 1.0 - parse_value::<f64>("epsilon", e)?,
            (Some(_), Some(_)) => {
                return Err(CliError::Validation("config file sets both x and epsilon; keep exactly one".into()))
            }
            (None, None) => return Err(CliError::Validation("set the collapse parameter with --x or --epsilon".into())),
        },
    };
    let seed = match model.seed {
        Some(s) => s,
        None => get("seed").map_or(Ok(0), |v| parse_value("seed", v))?,
    };
    let stream = match model.stream {
        Some(s) => s,
        None => get("stream").map_or(Ok(0), |v| parse_value("stream", v))?,
    };
    let initial_text = pick(model.initial.clone(), "initial").unwrap_or_else(|| "vacuum".to_string());
    let initial = InitialState::parse(&initial_text, 2 * n_sites)?;
    let policy = pick(model.policy.clone(), "policy").unwrap_or_else(|| "uniform".to_string());
    if policy != "uniform" && policy != "sweep" {
        return Err(CliError::Validation(format!("policy '{policy}' is not uniform or sweep")));
    }
    let params = ModelParams::new(theta, x, seed)?.with_phases(phase_alpha, phase_beta)?;
    Ok((
        RunConfig {
            n_sites,
            rows,
            params,
            initial,
            stream,
            policy,
        },
        file,
    ))
}

/// Parses arguments, runs the command and maps failures to exit codes.
pub fn run_from_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_VALIDATION } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(e.exit_code());
    }
    match execute(&cli.command) {
        Ok(report) => {
            print!("{report}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn configure_threads() -> CliResult<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Validation(format!("{THREADS_ENV} must be a positive integer, got '{v}'")))?;
    // A second initialisation in the same process is harmless.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Runs a command, returning its text report.
pub fn execute(command: &Command) -> CliResult<String> {
    match command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Decay(a) => cmd_decay(a),
        Command::CoarseGrain(a) => cmd_coarse_grain(a),
        Command::OracleCheck(a) => cmd_oracle_check(a),
    }
}

fn header_with(cfg: &RunConfig, extra: &[(&str, String)]) -> Vec<(String, String)> {
    let mut h = vec![("generator".to_string(), format!("collapse-lattice {}", env!("CARGO_PKG_VERSION")))];
    h.extend(cfg.header());
    h.extend(extra.iter().map(|(k, v)| (k.to_string(), v.clone())));
    h
}

fn comment_block(header: &[(String, String)]) -> String {
    header.iter().map(|(k, v)| format!("# {k}={v}\n")).collect()
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    fs::write(path, bytes).map_err(|e| io_error(path, e))
}

fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| io_error(dir, e))
}

/// Raster as CSV: header comments, then one line per raster row from the first.
pub fn raster_csv(raster: &FieldRaster, header: &[(String, String)]) -> String {
    let mut out = comment_block(header);
    let cols: Vec<String> = (0..raster.n_cols()).map(|c| format!("slot_{c}")).collect();
    let _ = writeln!(out, "row,{}", cols.join(","));
    for r in 0..raster.n_rows() {
        let cells: Vec<String> = (0..raster.n_cols())
            .map(|c| if raster.is_filled(r, c) { raster.get(r, c).to_string() } else { String::new() })
            .collect();
        let _ = writeln!(out, "{r},{}", cells.join(","));
    }
    out
}

pub const EVENTS_COLUMNS: &str =
    "step,row,col,slot_left,slot_right,bit_left,bit_right,probability,stuff_left,stuff_right,log_weight";

fn cmd_simulate(args: &SimulateArgs) -> CliResult<String> {
    let (cfg, file) = resolve(&args.model, &SIMULATE_DEFAULTS)?;
    let stuff: StuffSurface = match args.stuff.clone().or_else(|| file.get("stuff").cloned()) {
        Some(s) => s.parse()?,
        None => StuffSurface::default(),
    };
    let geometry = cfg.geometry()?;
    let record = run_trajectory(geometry, cfg.params, cfg.initial, &cfg.options())?;
    let surface_name = match stuff {
        StuffSurface::PreHit => "pre-hit",
        StuffSurface::PostHit => "post-hit",
    };
    let header = header_with(&cfg, &[("stuff", surface_name.to_string())]);
    let fi = FieldRaster::field(&record)?;
    let si = FieldRaster::stuff(&record, stuff)?;

    ensure_dir(&args.out_dir)?;
    let mut written = Vec::new();
    for (name, raster) in [("fi", &fi), ("si", &si)] {
        let (path, bytes) = match args.format {
            RasterFormat::Pgm => (args.out_dir.join(format!("{name}.pgm")), raster.to_pgm(&header).to_bytes()),
            RasterFormat::Csv => (args.out_dir.join(format!("{name}.csv")), raster_csv(raster, &header).into_bytes()),
        };
        write_file(&path, &bytes)?;
        written.push(path);
    }

    let mut csv = comment_block(&header);
    csv.push_str(EVENTS_COLUMNS);
    csv.push('\n');
    let mut log_weight = 0.0;
    for (i, ev) in record.events.iter().enumerate() {
        log_weight += ev.probability.ln();
        let s = match stuff {
            StuffSurface::PreHit => ev.stuff_pre,
            StuffSurface::PostHit => ev.stuff_post,
        };
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{},{},{}",
            i + 1,
            ev.vertex.row,
            ev.vertex.col,
            ev.slots.0,
            ev.slots.1,
            ev.outcome.left as u8,
            ev.outcome.right as u8,
            ev.probability,
            s[0],
            s[1],
            log_weight
        );
    }
    let events_path = args.out_dir.join("events.csv");
    write_file(&events_path, csv.as_bytes())?;
    written.push(events_path);

    let mut report = format!(
        "simulated {} vertices on {} sites x {} rows (X={}, theta={}, seed={})\n",
        record.steps, cfg.n_sites, cfg.rows, cfg.params.x, cfg.params.theta, cfg.params.seed
    );
    for p in written {
        let _ = writeln!(report, "wrote {}", p.display());
    }
    Ok(report)
}

const DECAY_DEFAULTS: Defaults = Defaults {
    n_sites: 8,
    rows: 1,
    theta: std::f64::consts::FRAC_PI_2,
};

fn cmd_decay(args: &DecayArgs) -> CliResult<String> {
    let mut model = args.model.clone();
    let sweeping_epsilon = args.sweep == SweepKind::Epsilon;
    if sweeping_epsilon && model.x.is_none() && model.epsilon.is_none() {
        // the sweep supplies epsilon; a placeholder satisfies resolution
        model.epsilon = Some(args.epsilons.first().copied().unwrap_or(0.1));
    }
    let (cfg, _) = resolve(&model, &DECAY_DEFAULTS)?;
    if (cfg.params.theta - std::f64::consts::FRAC_PI_2).abs() > 1e-12 {
        return Err(CliError::Validation(format!(
            "decay runs track branches at theta = pi/2; got theta = {}",
            cfg.params.theta
        )));
    }
    let n = cfg.n_sites;
    let mut settings = DecaySettings::new(n);
    settings.threshold = args.threshold;
    settings.max_steps = args.max_steps;
    if let Some(w) = args.window {
        settings.window = w;
    }
    if !(args.threshold > 0.0 && args.threshold < 0.5) {
        return Err(CliError::Validation("threshold must lie in (0, 0.5)".into()));
    }
    if args.seeds == 0 {
        return Err(CliError::Validation("seeds must be positive".into()));
    }

    let points: Vec<(f64, ModelParams, InitialState)> = if sweeping_epsilon {
        if args.epsilons.len() < 3 {
            return Err(CliError::Validation("an epsilon sweep needs at least 3 values in --epsilons".into()));
        }
        let initial = single_link_superposition(n, args.slot)?;
        args.epsilons
            .iter()
            .map(|&e| Ok((e, ModelParams::from_epsilon(cfg.params.theta, e, cfg.params.seed)?, initial)))
            .collect::<CliResult<_>>()?
    } else {
        if args.particles.len() < 3 {
            return Err(CliError::Validation("a particle sweep needs at least 3 values in --particles".into()));
        }
        args.particles
            .iter()
            .map(|&l| Ok((l as f64, cfg.params, left_right_superposition(n, l)?)))
            .collect::<CliResult<_>>()?
    };
    let sweep = decay_sweep(n, &points, args.seeds, settings)?;
    let fit = fit_medians(&sweep, n)?;

    let kind = if sweeping_epsilon { "epsilon" } else { "particles" };
    let mut header = header_with(
        &cfg,
        &[
            ("sweep", kind.to_string()),
            ("seeds", args.seeds.to_string()),
            ("threshold", args.threshold.to_string()),
            ("window", settings.window.to_string()),
            ("max-steps", settings.max_steps.to_string()),
        ],
    );
    if sweeping_epsilon {
        header.push(("slot".into(), args.slot.to_string()));
    }
    ensure_dir(&args.out_dir)?;

    let mut runs = comment_block(&header);
    runs.push_str("value,epsilon,stream,t_decay,confirmed,steps\n");
    for p in &sweep {
        for r in &p.runs {
            let _ = writeln!(
                runs,
                "{},{},{},{},{},{}",
                p.label,
                p.params.epsilon(),
                r.stream,
                r.time_or_bound(n),
                r.confirmed(),
                r.steps
            );
        }
    }
    let runs_path = args.out_dir.join("decay_runs.csv");
    write_file(&runs_path, runs.as_bytes())?;

    let mut summary = comment_block(&header);
    summary.push_str("value,epsilon,initial,seeds,median_t_decay,unconfirmed,note\n");
    for p in &sweep {
        let _ = writeln!(
            summary,
            "{},{},{},{},{},{},{}",
            p.label,
            p.params.epsilon(),
            p.initial,
            p.runs.len(),
            p.median(n),
            p.unconfirmed(),
            point_note(p, sweeping_epsilon)
        );
    }
    let _ = writeln!(summary, "# fit slope={} intercept={} r2={}", fit.slope, fit.intercept, fit.r2);
    let summary_path = args.out_dir.join("decay.csv");
    write_file(&summary_path, summary.as_bytes())?;

    let mut report = String::new();
    for p in &sweep {
        let _ = writeln!(
            report,
            "{kind}={} median T_decay={:.3} ({} runs, {} unconfirmed)",
            p.label,
            p.median(n),
            p.runs.len(),
            p.unconfirmed()
        );
    }
    let _ = writeln!(report, "log-log slope {:.4} (r2 {:.4})", fit.slope, fit.r2);
    let _ = writeln!(report, "wrote {}\nwrote {}", runs_path.display(), summary_path.display());
    Ok(report)
}

fn point_note(p: &DecayPoint, sweeping_epsilon: bool) -> String {
    let mut notes = Vec::new();
    if !sweeping_epsilon && p.label < 3.0 {
        notes.push("small particle number".to_string());
    }
    if p.unconfirmed() > 0 {
        notes.push(format!("{} unconfirmed", p.unconfirmed()));
    }
    notes.join("; ")
}

fn cmd_coarse_grain(args: &CoarseGrainArgs) -> CliResult<String> {
    let (cfg, _) = resolve(&args.model, &SIMULATE_DEFAULTS)?;
    let geometry = cfg.geometry()?;
    let record = run_trajectory(geometry, cfg.params, cfg.initial, &cfg.options())?;
    let fi = FieldRaster::field(&record)?;
    let grid = coarse_grain(&fi, args.block, cfg.params.x)?;
    let renormalised = grid.renormalised()?;

    let lo = renormalised.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = renormalised.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut header = header_with(
        &cfg,
        &[
            ("block", args.block.to_string()),
            ("discarded-rows", grid.discarded_rows.to_string()),
            ("discarded-cols", grid.discarded_cols.to_string()),
        ],
    );

    let verdict = if cfg.initial.is_vacuum() && grid.means.len() >= 4 {
        let (mu, var) = grid.vacuum_moments();
        let t = MomentTest::new(&grid.means, mu, var)?;
        let line = format!(
            "mean={} expected={} z={:.3} variance={} expected={} z={:.3} verdict={}",
            t.mean,
            mu,
            t.mean_z(),
            t.variance,
            var,
            t.variance_z(),
            if t.mean_ok() && t.variance_ok() { "pass" } else { "fail" }
        );
        header.push(("vacuum".into(), line.clone()));
        Some(line)
    } else {
        None
    };

    ensure_dir(&args.out_dir)?;
    let mut csv = comment_block(&header);
    csv.push_str("block_row,block_col,mean,renormalised\n");
    for br in 0..grid.block_rows {
        for bc in 0..grid.block_cols {
            let i = br * grid.block_cols + bc;
            let _ = writeln!(csv, "{br},{bc},{},{}", grid.means[i], renormalised[i]);
        }
    }
    let csv_path = args.out_dir.join("coarse.csv");
    write_file(&csv_path, csv.as_bytes())?;

    // gray = round(255 (1 - t)) with t = (value - map-min) / (map-max - map-min)
    let mut pgm_header = header.clone();
    pgm_header.push(("map-min".into(), lo.to_string()));
    pgm_header.push(("map-max".into(), (lo + span).to_string()));
    let pgm = Pgm {
        width: grid.block_cols,
        height: grid.block_rows,
        comments: std::iter::once(("kind".to_string(), "renormalised".to_string()))
            .chain(pgm_header)
            .collect(),
        pixels: renormalised.iter().map(|v| gray((v - lo) / span)).collect(),
    };
    let pgm_path = args.out_dir.join("renormalised.pgm");
    write_file(&pgm_path, &pgm.to_bytes())?;

    let mut report = format!(
        "{} x {} blocks of {}x{} vertices ({} rows and {} link columns discarded)\n",
        grid.block_rows, grid.block_cols, args.block, args.block, grid.discarded_rows, grid.discarded_cols
    );
    if let Some(v) = verdict {
        let _ = writeln!(report, "vacuum statistics: {v}");
    }
    let _ = writeln!(report, "wrote {}\nwrote {}", csv_path.display(), pgm_path.display());
    Ok(report)
}

const ORACLE_DEFAULTS: Defaults = Defaults {
    n_sites: 2,
    rows: 2,
    theta: std::f64::consts::FRAC_PI_6,
};

fn cmd_oracle_check(args: &OracleArgs) -> CliResult<String> {
    let mut model = args.model.clone();
    if model.x.is_none() && model.epsilon.is_none() && model.config.is_none() {
        model.x = Some(0.5);
    }
    let (cfg, _) = resolve(&model, &ORACLE_DEFAULTS)?;
    if cfg.n_sites > 3 || cfg.rows > 2 {
        return Err(CliError::Validation(format!(
            "oracle checks need n-sites <= 3 and rows <= 2, got {} x {}",
            cfg.n_sites, cfg.rows
        )));
    }
    let geometry = cfg.geometry()?;
    let psi = cfg.initial.state()?;
    let extra = if args.inject_misordered {
        let all: Vec<VertexId> = (1..=cfg.rows)
            .flat_map(|r| (0..cfg.n_sites).map(move |c| VertexId::new(r, c)))
            .rev()
            .collect();
        vec![all]
    } else {
        Vec::new()
    };
    let mut checks: Vec<CheckOutcome> = covariance_check(geometry, &psi, &cfg.params, 4, &extra);
    let gap = picture_agreement(geometry, 20, cfg.params.seed)?;
    checks.push(CheckOutcome {
        name: "heisenberg-vs-schrodinger".into(),
        measured: gap,
        tolerance: 1e-12,
        passed: gap < 1e-12,
        detail: "20 random instances".into(),
    });
    if geometry.n_vertices() <= crate::oracle::MAX_STEM_VERTICES {
        checks.push(sampler_tv_check(geometry, cfg.params, cfg.initial, args.samples, args.tv_tolerance)?);
    }
    if geometry.n_slots() <= crate::oracle::MAX_DENSITY_SLOTS {
        checks.push(channel_ensemble_check(
            geometry,
            cfg.params,
            cfg.initial,
            args.ensemble,
            args.channel_tolerance,
        )?);
    }
    let mut report = String::new();
    for c in &checks {
        let _ = writeln!(report, "{c}");
    }
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
    if failed.is_empty() {
        Ok(report)
    } else {
        print!("{report}");
        Err(CliError::CheckFailed(failed.join(", ")))
    }
}
