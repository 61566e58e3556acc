//! `ilhte` command-line interface.
//!
//! Settings resolve in three layers: built-in defaults, a flat `key = value`
//! config file (`--config`), then command-line flags (`--set key=value` or a
//! dedicated flag). `--show-config` prints the resolved settings.
//!
//! Exit codes: 0 success, 1 usage or validation error, 2 a fit was flagged
//! as not converged. Errors are written to stderr as
//! `{"error": {"kind": ..., "message": ...}}`.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ilhte::analytics::{AnalysisOptions, VarianceSource};
use ilhte::data::{ColumnMap, DataError};
use ilhte::model::{FitOptions, FixedTerm, ModelSpec};
use ilhte::report::{
    cmd_analyze, cmd_confound_demo, cmd_fit, cmd_replicate_toy, cmd_simulate, load_input, render_toy_checks,
    CommandKind, ConfoundDemoConfig, LoadedInput, Outcome, ReportError, RunManifest,
};
use ilhte::sim::{CovariateDist, SimConfig};

const SIM: u8 = 1;
const FIT: u8 = 2;
const ANA: u8 = 4;
const DEMO: u8 = 8;
const TOY: u8 = 16;

struct Key {
    name: &'static str,
    default: &'static str,
    scope: u8,
    help: &'static str,
}

const fn key(name: &'static str, default: &'static str, scope: u8, help: &'static str) -> Key {
    Key { name, default, scope, help }
}

const KEYS: &[Key] = &[
    key("person_col", "person_id", FIT | ANA, "person identifier column"),
    key("item_col", "item_id", FIT | ANA, "item identifier column"),
    key("score_col", "score", FIT | ANA, "0/1 score column"),
    key("treatment_col", "treatment", FIT | ANA, "0/1 treatment column"),
    key("covariate_col", "covariate", FIT | ANA, "baseline covariate column, used when present"),
    key("subscale_col", "", FIT | ANA, "per-item subscale column (empty: none)"),
    key("model", "3", FIT, "model number 1..5"),
    key("subscale", "false", FIT, "fit the treatment x subscale model instead of a numbered model"),
    key("seed", "1", SIM | DEMO, "base random seed"),
    key("replicates", "1", SIM, "datasets to simulate (seeds seed, seed+1, ...)"),
    key("n_persons", "500", SIM | DEMO, "persons per dataset"),
    key("n_items", "20", SIM | DEMO, "items per dataset"),
    key("beta0", "0", SIM | DEMO, "intercept"),
    key("beta1", "0.3", SIM | DEMO, "average treatment effect"),
    key("beta2", "0.5", SIM | DEMO, "covariate slope"),
    key("beta3", "0", SIM | DEMO, "treatment x covariate interaction"),
    key("sigma_b", "1", SIM | DEMO, "SD of item easiness"),
    key("sigma_zeta", "0.3", SIM | DEMO, "SD of item-specific treatment effects"),
    key("rho", "0", SIM | DEMO, "easiness / treatment-effect correlation"),
    key("sigma_theta", "1", SIM | DEMO, "SD of person residuals"),
    key("pirls_tol", "1e-8", FIT | ANA | DEMO, "inner relative Newton-decrement tolerance"),
    key("pirls_max_iter", "200", FIT | ANA | DEMO, "inner iteration cap"),
    key("outer_tol", "1e-6", FIT | ANA | DEMO, "relative simplex tolerance"),
    key("max_evals", "2000", FIT | ANA | DEMO, "objective evaluations per simplex start"),
    key("restarts", "3", FIT | ANA | DEMO, "simplex starts (1..3)"),
    key("polish", "true", FIT | ANA | DEMO, "refine with finite-difference Newton steps"),
    key("polish_max_iter", "25", FIT | ANA | DEMO, "Newton refinement cap"),
    key("fd_step", "1e-4", FIT | ANA | DEMO, "relative finite-difference step"),
    key("z", "1.96", FIT | ANA, "critical value for gamma and prediction intervals"),
    key("pi_source", "ilhte_fit", ANA, "prediction-interval variance: ilhte_fit or decomposed"),
    key("interaction", "true", ANA, "also fit the interaction models when a covariate is present"),
    key("twostep", "true", ANA, "also run the two-step scoring comparison"),
    key("seeds", "1", DEMO, "replications per scenario"),
    key("x_min", "-3", DEMO, "curve grid start"),
    key("x_max", "3", DEMO, "curve grid end"),
    key("x_points", "61", DEMO, "curve grid size"),
    key("person_beta1", "", DEMO, "person-dependent beta1 (empty: calibrate)"),
    key("person_beta3", "", DEMO, "person-dependent beta3 (empty: calibrate)"),
    key("tol_gamma", "0.005", TOY, "tolerance for the three-decimal checks"),
    key("tol_two_digit", "0.01", TOY, "tolerance for the two-decimal checks"),
    key("tolerance", "", TOY, "override both toy tolerances"),
];

/// Defaults that differ for the confound demonstration.
fn command_default(k: &Key, scope: u8) -> &'static str {
    if scope == DEMO {
        match k.name {
            "n_persons" => return "2000",
            "sigma_zeta" => return "0.5",
            "rho" => return "0.9",
            "beta2" => return "1",
            _ => {}
        }
    }
    k.default
}

#[derive(Parser)]
#[command(name = "ilhte", version, about = "Item-level heterogeneous treatment effect models for item-response data")]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,
    /// Response table(s), comma or tab delimited.
    #[arg(long, global = true)]
    input: Vec<PathBuf>,
    /// Model number 1..5.
    #[arg(long, global = true)]
    model: Option<u8>,
    #[arg(long, global = true)]
    subscale_col: Option<String>,
    #[arg(long, global = true)]
    covariate_col: Option<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Worker threads for independent datasets or seeds.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Flat `key = value` settings file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Print resolved settings and exit.
    #[arg(long, global = true)]
    show_config: bool,
    /// Override any setting, `key=value`; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long, global = true)]
    pirls_tol: Option<f64>,
    #[arg(long, global = true)]
    outer_tol: Option<f64>,
    /// Toy-check tolerance for every check.
    #[arg(long, global = true)]
    tolerance: Option<f64>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Simulate datasets from the data-generating process.
    Simulate,
    /// Fit one model to one dataset.
    Fit,
    /// Standard fits and derived quantities for one or more datasets.
    Analyze,
    /// Person- versus item-dependent heterogeneity demonstration.
    ConfoundDemo,
    /// Check the published worked numbers.
    ReplicateToy,
}

impl Command {
    fn scope(self) -> u8 {
        match self {
            Self::Simulate => SIM,
            Self::Fit => FIT,
            Self::Analyze => ANA,
            Self::ConfoundDemo => DEMO,
            Self::ReplicateToy => TOY,
        }
    }

    fn kind(self) -> CommandKind {
        match self {
            Self::Simulate => CommandKind::Simulate,
            Self::Fit => CommandKind::Fit,
            Self::Analyze => CommandKind::Analyze,
            Self::ConfoundDemo => CommandKind::ConfoundDemo,
            Self::ReplicateToy => CommandKind::ReplicateToy,
        }
    }
}

fn usage(msg: impl Into<String>) -> ReportError {
    ReportError::Usage(msg.into())
}

fn parse_config_file(path: &Path) -> Result<Vec<(String, String)>, ReportError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| ReportError::Io { path: path.display().to_string(), source })?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| usage(format!("{}:{}: expected key = value", path.display(), n + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Resolved settings plus the keys the user set explicitly.
struct Settings {
    values: BTreeMap<String, String>,
    explicit: BTreeSet<String>,
}

impl Settings {
    fn resolve(cli: &Cli, scope: u8) -> Result<Self, ReportError> {
        let mut values: BTreeMap<String, String> =
            KEYS.iter().map(|k| (k.name.to_string(), command_default(k, scope).to_string())).collect();
        let mut explicit = BTreeSet::new();
        let mut apply = |k: String, v: String| -> Result<(), ReportError> {
            if !values.contains_key(&k) {
                return Err(usage(format!("unknown setting '{k}'")));
            }
            explicit.insert(k.clone());
            values.insert(k, v);
            Ok(())
        };
        if let Some(path) = &cli.config {
            for (k, v) in parse_config_file(path)? {
                apply(k, v)?;
            }
        }
        for s in &cli.set {
            let (k, v) = s.split_once('=').ok_or_else(|| usage(format!("--set expects key=value, got '{s}'")))?;
            apply(k.trim().to_string(), v.trim().to_string())?;
        }
        let flags: [(&str, Option<String>); 7] = [
            ("model", cli.model.map(|v| v.to_string())),
            ("subscale_col", cli.subscale_col.clone()),
            ("covariate_col", cli.covariate_col.clone()),
            ("seed", cli.seed.map(|v| v.to_string())),
            ("pirls_tol", cli.pirls_tol.map(|v| v.to_string())),
            ("outer_tol", cli.outer_tol.map(|v| v.to_string())),
            ("tolerance", cli.tolerance.map(|v| v.to_string())),
        ];
        for (k, v) in flags {
            if let Some(v) = v {
                apply(k.to_string(), v)?;
            }
        }
        Ok(Self { values, explicit })
    }

    fn raw(&self, k: &str) -> &str {
        self.values.get(k).map_or("", String::as_str)
    }

    fn get<T: std::str::FromStr>(&self, k: &str) -> Result<T, ReportError> {
        self.raw(k).parse().map_err(|_| usage(format!("invalid value '{}' for setting '{k}'", self.raw(k))))
    }

    fn optional<T: std::str::FromStr>(&self, k: &str) -> Result<Option<T>, ReportError> {
        if self.raw(k).is_empty() {
            Ok(None)
        } else {
            self.get(k).map(Some)
        }
    }

    /// Settings that can affect the outputs of a command.
    fn for_manifest(&self, scope: u8) -> BTreeMap<String, String> {
        KEYS.iter()
            .filter(|k| k.scope & scope != 0)
            .map(|k| (k.name.to_string(), self.raw(k.name).to_string()))
            .collect()
    }

    fn sim_config(&self) -> Result<SimConfig, ReportError> {
        Ok(SimConfig {
            n_persons: self.get("n_persons")?,
            n_items: self.get("n_items")?,
            beta0: self.get("beta0")?,
            beta1: self.get("beta1")?,
            beta2: self.get("beta2")?,
            beta3: self.get("beta3")?,
            sigma_b: self.get("sigma_b")?,
            sigma_zeta: self.get("sigma_zeta")?,
            rho: self.get("rho")?,
            sigma_theta: self.get("sigma_theta")?,
            covariate_dist: CovariateDist::StandardNormal,
            seed: self.get("seed")?,
        })
    }

    fn fit_options(&self) -> Result<FitOptions, ReportError> {
        Ok(FitOptions {
            pirls_tol: self.get("pirls_tol")?,
            pirls_max_iter: self.get("pirls_max_iter")?,
            outer_tol: self.get("outer_tol")?,
            max_evals: self.get("max_evals")?,
            restarts: self.get("restarts")?,
            polish: self.get("polish")?,
            polish_max_iter: self.get("polish_max_iter")?,
            fd_step: self.get("fd_step")?,
        })
    }

    fn columns(&self) -> Result<ColumnMap, ReportError> {
        Ok(ColumnMap {
            person: self.raw("person_col").into(),
            item: self.raw("item_col").into(),
            score: self.raw("score_col").into(),
            treatment: self.raw("treatment_col").into(),
            // An explicitly named covariate column must exist.
            covariate: self.explicit.contains("covariate_col").then(|| self.raw("covariate_col").to_string()),
            subscale: self.optional::<String>("subscale_col")?,
            extra: Vec::new(),
        })
    }
}

fn labels(paths: &[PathBuf]) -> Vec<String> {
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    paths
        .iter()
        .map(|p| {
            let stem = p.file_stem().map_or_else(|| "dataset".to_string(), |s| s.to_string_lossy().into_owned());
            let n = seen.entry(stem.clone()).or_insert(0);
            *n += 1;
            if *n == 1 {
                stem
            } else {
                format!("{stem}_{n}")
            }
        })
        .collect()
}

fn load_inputs(cli: &Cli, settings: &Settings) -> Result<Vec<LoadedInput>, ReportError> {
    if cli.input.is_empty() {
        return Err(usage("--input is required"));
    }
    let columns = settings.columns()?;
    let fallback = settings.raw("covariate_col").to_string();
    cli.input
        .iter()
        .zip(labels(&cli.input))
        .map(|(p, l)| load_input(p, &l, &columns, Some(&fallback)))
        .collect()
}

fn run(cli: &Cli) -> Result<ExitCode, ReportError> {
    let Some(command) = cli.command else {
        if cli.show_config {
            for k in KEYS {
                println!("{} = {}    # {}", k.name, k.default, k.help);
            }
            return Ok(ExitCode::SUCCESS);
        }
        return Err(usage("a subcommand is required; see --help"));
    };
    let scope = command.scope();
    let settings = Settings::resolve(cli, scope)?;
    if cli.show_config {
        for k in KEYS.iter().filter(|k| k.scope & scope != 0) {
            println!("{} = {}    # {}", k.name, settings.raw(k.name), k.help);
        }
        return Ok(ExitCode::SUCCESS);
    }
    let mut manifest = RunManifest::new(command.kind(), settings.for_manifest(scope));
    let out = &cli.out_dir;
    let outcome: Outcome = match command {
        Command::Simulate => cmd_simulate(&manifest, &settings.sim_config()?, settings.get("replicates")?, cli.jobs, out)?,
        Command::Fit => {
            let inputs = load_inputs(cli, &settings)?;
            if inputs.len() != 1 {
                return Err(usage("fit takes exactly one --input"));
            }
            let input = &inputs[0];
            let spec = if settings.get::<bool>("subscale")? {
                if !input.table.has_subscale() {
                    return Err(DataError::MissingColumn { column: "subscale_col (not set)".into() }.into());
                }
                ModelSpec::subscale(input.table.has_covariate())
            } else {
                let k: u8 = settings.get("model")?;
                ModelSpec::numbered(k).map_err(|e| usage(e.to_string()))?
            };
            if spec.fixed.contains(&FixedTerm::Covariate) && !input.table.has_covariate() {
                return Err(DataError::MissingColumn { column: settings.raw("covariate_col").into() }.into());
            }
            manifest.inputs.push(input.file.clone());
            cmd_fit(&manifest, input, &spec, &settings.fit_options()?, settings.get("z")?, out)?
        }
        Command::Analyze => {
            let inputs = load_inputs(cli, &settings)?;
            manifest.inputs.extend(inputs.iter().map(|i| i.file.clone()));
            let pi_source = match settings.raw("pi_source") {
                "ilhte_fit" => VarianceSource::IlhteFit,
                "decomposed" => VarianceSource::Decomposed,
                other => return Err(usage(format!("pi_source must be ilhte_fit or decomposed, got '{other}'"))),
            };
            let opts = AnalysisOptions {
                fit: settings.fit_options()?,
                z: settings.get("z")?,
                pi_source,
                interaction: settings.get("interaction")?,
                subscale: true,
                twostep: settings.get("twostep")?,
            };
            cmd_analyze(&manifest, &inputs, &opts, cli.jobs, out)?
        }
        Command::ConfoundDemo => {
            let item = SimConfig { beta3: 0.0, ..settings.sim_config()? };
            let person = match (settings.optional::<f64>("person_beta1")?, settings.optional::<f64>("person_beta3")?) {
                (None, None) => None,
                (Some(b1), Some(b3)) => Some(SimConfig { beta1: b1, beta3: b3, sigma_zeta: 0.0, rho: 0.0, ..item.clone() }),
                _ => return Err(usage("set both person_beta1 and person_beta3, or neither")),
            };
            let cfg = ConfoundDemoConfig {
                item_dependent: item,
                person_dependent: person,
                seeds: settings.get("seeds")?,
                x_min: settings.get("x_min")?,
                x_max: settings.get("x_max")?,
                x_points: settings.get("x_points")?,
            };
            cmd_confound_demo(&manifest, &cfg, &settings.fit_options()?, cli.jobs, out)?
        }
        Command::ReplicateToy => {
            let (t3, t2) = match settings.optional::<f64>("tolerance")? {
                Some(t) => (t, t),
                None => (settings.get("tol_gamma")?, settings.get("tol_two_digit")?),
            };
            let (outcome, checks) = cmd_replicate_toy(&manifest, t3, t2, out)?;
            print!("{}", render_toy_checks(&checks));
            outcome
        }
    };
    println!("{}", serde_json::to_string_pretty(&outcome).map_err(|e| ReportError::Serialize(e.to_string()))?);
    Ok(if outcome.flagged { ExitCode::from(2) } else { ExitCode::SUCCESS })
}

fn emit_error(kind: &str, message: &str) {
    let v = serde_json::json!({ "error": { "kind": kind, "message": message } });
    eprintln!("{v}");
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            emit_error("usage", e.to_string().trim());
            return ExitCode::from(1);
        }
    };
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            emit_error(e.kind(), &e.to_string());
            ExitCode::from(1)
        }
    }
}
