//! Reproducible command runs: manifests, atomic artifact writers and the
//! implementations behind each subcommand of the binary.
//!
//! Every CSV artifact starts with `# ilhte <version> manifest=<hash>` and
//! every JSON artifact has a leading `manifest` object. The hash covers the
//! command, the resolved settings and the content hashes of the inputs, so
//! reruns with the same manifest reproduce the same bytes.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::analytics::{
    analyze_dataset, interaction_comparison, prediction_interval_with_z, se_inflation, sensitivity_gamma_with_z,
    treatment_group_item_sd, AnalysisBundle, AnalysisOptions, AnalyticsError, InteractionComparison, VarianceSource,
};
use crate::data::{header_columns, parse_response_table, ColumnMap, DataError, ResponseTable};
use crate::model::{fit, FitOptions, FitResult, FixedTerm, ModelError, ModelSpec};
use crate::sim::{
    calibrate_person_dependent, expected_sumscore_curve, linspace, simulate_dataset, Calibration, SimConfig, SimError,
    TrueParams,
};

pub const TOOL: &str = "ilhte";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Analytics(#[from] AnalyticsError),
    #[error("{0}")]
    Usage(String),
    #[error("serialization failed: {0}")]
    Serialize(String),
}

impl ReportError {
    /// Short machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Io { .. } => "io",
            Self::Data(_) => "data",
            Self::Model(_) => "model",
            Self::Sim(_) => "config",
            Self::Analytics(_) => "analysis",
            Self::Usage(_) => "usage",
            Self::Serialize(_) => "serialize",
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ReportError + '_ {
    move |source| ReportError::Io { path: path.display().to_string(), source }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CommandKind {
    Simulate,
    Fit,
    Analyze,
    ConfoundDemo,
    ReplicateToy,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputFile {
    pub label: String,
    pub path: String,
    pub sha256: String,
}

/// Everything that determines a run's outputs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: CommandKind,
    pub inputs: Vec<InputFile>,
    /// Fully resolved settings (defaults, config file and flags merged).
    pub settings: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(command: CommandKind, settings: BTreeMap<String, String>) -> Self {
        Self { tool: TOOL.into(), version: VERSION.into(), command, inputs: Vec::new(), settings }
    }

    /// SHA-256 over the canonical JSON of the manifest with input paths
    /// replaced by their content hashes.
    pub fn hash(&self) -> String {
        #[derive(Serialize)]
        struct Canonical<'a> {
            tool: &'a str,
            version: &'a str,
            command: CommandKind,
            inputs: Vec<(&'a str, &'a str)>,
            settings: &'a BTreeMap<String, String>,
        }
        let c = Canonical {
            tool: &self.tool,
            version: &self.version,
            command: self.command,
            inputs: self.inputs.iter().map(|i| (i.label.as_str(), i.sha256.as_str())).collect(),
            settings: &self.settings,
        };
        let bytes = serde_json::to_vec(&c).expect("manifest serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

#[derive(Serialize)]
struct ManifestHeader<'a> {
    hash: String,
    #[serde(flatten)]
    manifest: &'a RunManifest,
}

#[derive(Serialize)]
struct Document<'a, T: Serialize> {
    manifest: ManifestHeader<'a>,
    #[serde(flatten)]
    body: &'a T,
}

/// A parsed input and its provenance.
#[derive(Debug, Clone)]
pub struct LoadedInput {
    pub file: InputFile,
    pub table: ResponseTable,
}

/// Read and validate a response table. When `columns.covariate` is unset
/// and the header contains `covariate_if_present`, that column is used.
pub fn load_input(
    path: &Path,
    label: &str,
    columns: &ColumnMap,
    covariate_if_present: Option<&str>,
) -> Result<LoadedInput, ReportError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let sha256 = hex::encode(Sha256::digest(&bytes));
    let text = String::from_utf8(bytes).map_err(|_| DataError::Csv(format!("{} is not valid UTF-8", path.display())))?;
    let mut columns = columns.clone();
    if columns.covariate.is_none() {
        if let Some(name) = covariate_if_present {
            if header_columns(&text)?.iter().any(|h| h == name) {
                columns.covariate = Some(name.to_string());
            }
        }
    }
    let table = parse_response_table(text.as_bytes(), &columns)?;
    Ok(LoadedInput { file: InputFile { label: label.into(), path: path.display().to_string(), sha256 }, table })
}

/// Writes artifacts into one directory, each via a temporary file and a
/// rename.
pub struct Artifacts<'m> {
    dir: PathBuf,
    manifest: &'m RunManifest,
    hash: String,
    written: Vec<String>,
}

impl<'m> Artifacts<'m> {
    pub fn new(dir: &Path, manifest: &'m RunManifest) -> Result<Self, ReportError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        Ok(Self { dir: dir.to_path_buf(), manifest, hash: manifest.hash(), written: Vec::new() })
    }

    pub fn header_line(&self) -> String {
        format!("# {TOOL} {VERSION} manifest={}", self.hash)
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), ReportError> {
        let path = self.dir.join(name);
        let tmp = self.dir.join(format!(".{name}.tmp{}", std::process::id()));
        fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
        fs::rename(&tmp, &path).map_err(io_err(&path))?;
        self.written.push(name.to_string());
        Ok(())
    }

    pub fn csv<S: AsRef<str>>(&mut self, name: &str, header: &[S], rows: &[Vec<String>]) -> Result<(), ReportError> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        let ser = |e: csv::Error| ReportError::Serialize(e.to_string());
        w.write_record(header.iter().map(AsRef::as_ref)).map_err(ser)?;
        for r in rows {
            w.write_record(r).map_err(ser)?;
        }
        let body = w.into_inner().map_err(|e| ReportError::Serialize(e.to_string()))?;
        let mut bytes = self.header_line().into_bytes();
        bytes.push(b'\n');
        bytes.extend(body);
        self.write(name, &bytes)
    }

    pub fn json<T: Serialize>(&mut self, name: &str, body: &T) -> Result<(), ReportError> {
        let doc = Document { manifest: ManifestHeader { hash: self.hash.clone(), manifest: self.manifest }, body };
        let mut bytes = serde_json::to_vec_pretty(&doc).map_err(|e| ReportError::Serialize(e.to_string()))?;
        bytes.push(b'\n');
        self.write(name, &bytes)
    }

    pub fn written(&self) -> &[String] {
        &self.written
    }
}

/// What a command produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub manifest_hash: String,
    pub files: Vec<String>,
    /// Some fit did not meet its convergence criteria.
    pub flagged: bool,
    pub notes: Vec<String>,
}

fn outcome(art: &Artifacts<'_>, flagged: bool, notes: Vec<String>) -> Outcome {
    Outcome { manifest_hash: art.hash.clone(), files: art.written().to_vec(), flagged, notes }
}

fn num(x: f64) -> String {
    x.to_string()
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(String::new, num)
}

/// Run `f` on a pool of `jobs` threads.
fn in_pool<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T, ReportError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| ReportError::Usage(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

fn responses_rows(table: &ResponseTable) -> Vec<Vec<String>> {
    table
        .rows()
        .iter()
        .map(|r| {
            vec![
                r.person_id.clone(),
                r.item_id.clone(),
                r.score.to_string(),
                r.treatment.to_string(),
                opt(r.covariate),
            ]
        })
        .collect()
}

/// Simulate `replicates` datasets with seeds `seed, seed + 1, …`.
pub fn cmd_simulate(
    manifest: &RunManifest,
    config: &SimConfig,
    replicates: usize,
    jobs: usize,
    out_dir: &Path,
) -> Result<Outcome, ReportError> {
    if replicates == 0 {
        return Err(ReportError::Usage("replicates must be at least 1".into()));
    }
    config.validate()?;
    let configs: Vec<SimConfig> =
        (0..replicates as u64).map(|k| SimConfig { seed: config.seed.wrapping_add(k), ..config.clone() }).collect();
    let sims = in_pool(jobs, || configs.par_iter().map(simulate_dataset).collect::<Result<Vec<_>, _>>())??;
    let mut art = Artifacts::new(out_dir, manifest)?;
    let header = ["person_id", "item_id", "score", "treatment", "covariate"];
    for (table, params) in &sims {
        let (csv_name, json_name) = if replicates == 1 {
            ("responses.csv".to_string(), "true_params.json".to_string())
        } else {
            let s = params.config.seed;
            (format!("responses_seed{s}.csv"), format!("true_params_seed{s}.json"))
        };
        art.csv(&csv_name, &header, &responses_rows(table))?;
        art.json(&json_name, params)?;
    }
    Ok(outcome(&art, false, vec![]))
}

/// Item effects including subscale terms when present.
fn item_rows(fit: &FitResult, table: &ResponseTable) -> Vec<Vec<String>> {
    let beta1 = fit.treatment_effect().map_or(0.0, |(b, _)| b);
    let subscale_shift = fit.coef(&FixedTerm::TreatmentBySubscale).map(|(b, _)| b);
    let subscales = table.item_subscales();
    fit.eb_items
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let shift = match (subscale_shift, &subscales) {
                (Some(b), Some(s)) => b * s[i],
                _ => 0.0,
            };
            vec![m.item_id.clone(), num(m.b_hat), num(m.zeta_hat), num(beta1 + shift + m.zeta_hat)]
        })
        .collect()
}

fn fixed_effect_rows(fit: &FitResult) -> Vec<Vec<String>> {
    let normal = Normal::standard();
    let sigma = fit.sigma_theta_hat;
    fit.fixed_names
        .iter()
        .zip(fit.beta_hat.iter().zip(&fit.beta_se))
        .map(|(t, (&b, &se))| {
            let z = b / se;
            let p = 2.0 * (1.0 - normal.cdf(z.abs()));
            let std = |x: f64| if sigma > 0.0 { num(x / sigma) } else { String::new() };
            vec![t.clone(), num(b), num(se), num(z), num(p), std(b), std(se)]
        })
        .collect()
}

const FIXED_HEADER: [&str; 7] = ["term", "estimate", "se", "z", "p_value", "std_estimate", "std_se"];
const ITEM_HEADER: [&str; 4] = ["item_id", "b_hat", "zeta_hat", "total_effect"];

/// Closed-form summaries available from one fit, on the logit scale; `Γ`
/// treats the fit's own treatment SE as the random-intercepts SE.
fn single_fit_analysis(fit: &FitResult, z: f64) -> (Vec<&'static str>, Vec<String>) {
    let (b1, se) = fit.treatment_effect().map_or((f64::NAN, f64::NAN), |x| x);
    let i = fit.n_items;
    let star = treatment_group_item_sd(fit.sigma_b_hat, fit.sigma_zeta_hat, fit.rho_hat);
    let gamma = sensitivity_gamma_with_z(b1, se * se, i, z).value();
    let pi = prediction_interval_with_z(b1, se * se, fit.sigma_zeta_hat, z, VarianceSource::IlhteFit);
    let header = vec![
        "model",
        "n_persons",
        "n_items",
        "n_obs",
        "loglik",
        "n_params",
        "converged",
        "beta1",
        "se_beta1",
        "sigma_theta",
        "sigma_b",
        "sigma_zeta",
        "rho",
        "sigma_b_star",
        "sd_ratio",
        "se_with_item_sampling",
        "gamma",
        "pi_low",
        "pi_high",
    ];
    let row = vec![
        fit.spec.describe(),
        fit.n_persons.to_string(),
        i.to_string(),
        fit.n_obs.to_string(),
        num(fit.loglik),
        fit.n_params().to_string(),
        fit.convergence.converged.to_string(),
        num(b1),
        num(se),
        num(fit.sigma_theta_hat),
        num(fit.sigma_b_hat),
        num(fit.sigma_zeta_hat),
        num(fit.rho_hat),
        num(star),
        opt((fit.sigma_b_hat > 0.0).then(|| star / fit.sigma_b_hat)),
        num(se_inflation(se * se, fit.sigma_zeta_hat, i)),
        opt(gamma),
        num(pi.low),
        num(pi.high),
    ];
    (header, row)
}

/// Fit one model and write `fit.json`, `fixed_effects.csv`, `eb_items.csv`
/// and `analysis.csv`.
pub fn cmd_fit(
    manifest: &RunManifest,
    input: &LoadedInput,
    spec: &ModelSpec,
    opts: &FitOptions,
    z: f64,
    out_dir: &Path,
) -> Result<Outcome, ReportError> {
    let result = fit(&input.table, spec, opts)?;
    let mut art = Artifacts::new(out_dir, manifest)?;
    #[derive(Serialize)]
    struct FitDoc<'a> {
        model: String,
        fit: &'a FitResult,
    }
    art.json("fit.json", &FitDoc { model: spec.describe(), fit: &result })?;
    art.csv("fixed_effects.csv", &FIXED_HEADER, &fixed_effect_rows(&result))?;
    art.csv("eb_items.csv", &ITEM_HEADER, &item_rows(&result, &input.table))?;
    let (h, row) = single_fit_analysis(&result, z);
    art.csv("analysis.csv", &h, &[row])?;
    let flagged = !result.convergence.converged;
    Ok(outcome(&art, flagged, result.convergence.messages.clone()))
}

/// Analyze each input and write per-dataset rows plus plot-ready tables.
pub fn cmd_analyze(
    manifest: &RunManifest,
    inputs: &[LoadedInput],
    opts: &AnalysisOptions,
    jobs: usize,
    out_dir: &Path,
) -> Result<Outcome, ReportError> {
    if inputs.is_empty() {
        return Err(ReportError::Usage("at least one input is required".into()));
    }
    let bundles = in_pool(jobs, || {
        inputs.par_iter().map(|i| analyze_dataset(&i.table, opts)).collect::<Result<Vec<_>, _>>()
    })??;
    let mut art = Artifacts::new(out_dir, manifest)?;

    // Flat rows, with the union of columns across datasets.
    let flats: Vec<Vec<(String, String)>> = bundles.iter().map(|b| b.report.flat()).collect();
    let mut columns = vec!["dataset".to_string()];
    let mut seen = BTreeSet::new();
    for f in &flats {
        for (k, _) in f {
            if seen.insert(k.clone()) {
                columns.push(k.clone());
            }
        }
    }
    let rows: Vec<Vec<String>> = flats
        .iter()
        .zip(inputs)
        .map(|(f, i)| {
            let m: BTreeMap<&str, &str> = f.iter().map(|(k, v)| (k.as_str(), v.as_str())).collect();
            std::iter::once(i.file.label.clone())
                .chain(columns[1..].iter().map(|c| m.get(c.as_str()).map_or_else(String::new, |v| v.to_string())))
                .collect()
        })
        .collect();
    art.csv("analysis.csv", &columns, &rows)?;

    let mut items = Vec::new();
    let mut ratios = Vec::new();
    let mut fixed = Vec::new();
    for (b, i) in bundles.iter().zip(inputs) {
        let r = &b.report;
        let beta1_std = r.beta1_ilhte / r.sigma_theta_ref;
        for m in &b.eb_items {
            items.push(vec![
                i.file.label.clone(),
                m.item_id.clone(),
                num(m.b_hat),
                num(m.zeta_hat),
                num(m.total_effect),
                num(m.total_effect / r.sigma_theta_ref),
                num(beta1_std),
                num(r.lrt_p_boundary),
                (r.lrt_p_boundary < 0.05).to_string(),
            ]);
        }
        ratios.push(vec![
            i.file.label.clone(),
            r.n_items.to_string(),
            num(r.sigma_zeta / r.sigma_theta_ref),
            num(r.se_ratio),
            num(r.se_ratio_closed_form),
        ]);
        for (name, f) in &b.fits {
            for row in fixed_effect_rows(f) {
                fixed.push([vec![i.file.label.clone(), name.clone()], row].concat());
            }
        }
    }
    art.csv(
        "eb_items.csv",
        &[
            "dataset",
            "item_id",
            "b_hat",
            "zeta_hat",
            "total_effect",
            "total_effect_std",
            "beta1_std",
            "lrt_p_boundary",
            "ilhte_significant",
        ],
        &items,
    )?;
    art.csv("se_ratio.csv", &["dataset", "n_items", "sigma_zeta_std", "se_ratio", "se_ratio_closed_form"], &ratios)?;
    let fixed_header: Vec<&str> = ["dataset", "model"].into_iter().chain(FIXED_HEADER).collect();
    art.csv("fixed_effects.csv", &fixed_header, &fixed)?;

    #[derive(Serialize)]
    struct Entry<'a> {
        dataset: &'a str,
        #[serde(flatten)]
        bundle: &'a AnalysisBundle,
    }
    #[derive(Serialize)]
    struct AnalyzeDoc<'a> {
        options: &'a AnalysisOptions,
        datasets: Vec<Entry<'a>>,
    }
    let doc = AnalyzeDoc {
        options: opts,
        datasets: bundles.iter().zip(inputs).map(|(b, i)| Entry { dataset: &i.file.label, bundle: b }).collect(),
    };
    art.json("analysis.json", &doc)?;
    let flagged = bundles.iter().any(|b| !b.report.all_converged);
    Ok(outcome(&art, flagged, vec![]))
}

/// Settings for the person- versus item-dependent demonstration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfoundDemoConfig {
    /// Item-dependent scenario: no interaction, correlated item slopes.
    pub item_dependent: SimConfig,
    /// Person-dependent scenario; calibrated to the item-dependent curves
    /// when absent.
    pub person_dependent: Option<SimConfig>,
    /// Replications per scenario, with seeds `seed, seed + 1, …`.
    pub seeds: usize,
    pub x_min: f64,
    pub x_max: f64,
    pub x_points: usize,
}

impl Default for ConfoundDemoConfig {
    fn default() -> Self {
        Self {
            item_dependent: SimConfig {
                n_persons: 2000,
                n_items: 20,
                beta2: 1.0,
                beta3: 0.0,
                sigma_zeta: 0.5,
                rho: 0.9,
                ..SimConfig::default()
            },
            person_dependent: None,
            seeds: 1,
            x_min: -3.0,
            x_max: 3.0,
            x_points: 61,
        }
    }
}

/// One replication of one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioFit {
    pub scenario: String,
    pub seed: u64,
    pub true_beta3: f64,
    pub comparison: InteractionComparison,
    pub converged: bool,
}

impl ScenarioFit {
    /// Interaction without item slopes is beyond two SEs.
    pub fn spurious_without_slopes(&self) -> bool {
        (self.comparison.beta3_no_ilhte - self.true_beta3).abs() > 2.0 * self.comparison.se_no_ilhte
    }

    pub fn recovered_with_slopes(&self) -> bool {
        (self.comparison.beta3_ilhte - self.true_beta3).abs() <= 2.0 * self.comparison.se_ilhte
    }
}

/// Fit the interaction models without and with item slopes to one dataset.
pub fn fit_interaction_pair(table: &ResponseTable, opts: &FitOptions) -> Result<(InteractionComparison, bool), ReportError> {
    let m4 = fit(table, &ModelSpec::numbered(4)?, opts)?;
    let m5 = fit(table, &ModelSpec::numbered(5)?, opts)?;
    let converged = m4.convergence.converged && m5.convergence.converged;
    Ok((interaction_comparison(&m4, &m5)?, converged))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ScenarioSummary {
    scenario: String,
    replications: usize,
    share_spurious_without_slopes: f64,
    share_recovered_with_slopes: f64,
    share_difference_negative: f64,
}

/// Expected sum-score curves for both scenarios and the interaction
/// comparison on simulated replications of each.
pub fn cmd_confound_demo(
    manifest: &RunManifest,
    config: &ConfoundDemoConfig,
    opts: &FitOptions,
    jobs: usize,
    out_dir: &Path,
) -> Result<Outcome, ReportError> {
    let item_cfg = &config.item_dependent;
    item_cfg.validate()?;
    if config.x_points < 2 || config.x_min >= config.x_max {
        return Err(ReportError::Usage("x grid needs x_min < x_max and at least 2 points".into()));
    }
    let grid = linspace(config.x_min, config.x_max, config.x_points);
    let (_, item_params) = simulate_dataset(item_cfg)?;
    let flat_items = TrueParams::from_items(item_cfg.clone(), item_params.b.clone(), vec![0.0; item_cfg.n_items])?;
    let calibration: Option<Calibration> = match &config.person_dependent {
        Some(_) => None,
        None => Some(calibrate_person_dependent(item_cfg, &item_params, &grid)?),
    };
    let person_cfg = config
        .person_dependent
        .clone()
        .or_else(|| calibration.as_ref().map(|c| c.person_dependent.clone()))
        .expect("either given or calibrated");
    person_cfg.validate()?;

    let mut curves = Vec::new();
    let mut person_curves = Vec::new();
    for g in 0..2u8 {
        let a = expected_sumscore_curve(item_cfg, &item_params, &grid, g)?;
        let b = expected_sumscore_curve(&person_cfg, &flat_items, &grid, g)?;
        person_curves.push(b.clone());
        for (k, x) in grid.iter().enumerate() {
            curves.push(vec!["item_dependent".into(), g.to_string(), num(*x), num(a[k]), num(a[k] - b[k])]);
        }
    }
    for (g, b) in person_curves.iter().enumerate() {
        for (k, x) in grid.iter().enumerate() {
            curves.push(vec!["person_dependent".into(), g.to_string(), num(*x), num(b[k]), num(0.0)]);
        }
    }

    let mut jobs_list = Vec::new();
    for (name, cfg) in [("item_dependent", item_cfg), ("person_dependent", &person_cfg)] {
        for k in 0..config.seeds as u64 {
            jobs_list.push((name, SimConfig { seed: cfg.seed.wrapping_add(k), ..cfg.clone() }));
        }
    }
    let fits = in_pool(jobs, || {
        jobs_list
            .par_iter()
            .map(|(name, cfg)| -> Result<ScenarioFit, ReportError> {
                let (table, _) = simulate_dataset(cfg)?;
                let (comparison, converged) = fit_interaction_pair(&table, opts)?;
                Ok(ScenarioFit { scenario: name.to_string(), seed: cfg.seed, true_beta3: cfg.beta3, comparison, converged })
            })
            .collect::<Result<Vec<_>, _>>()
    })??;

    let mut art = Artifacts::new(out_dir, manifest)?;
    art.csv("curves.csv", &["scenario", "group", "x", "expected_sum_score", "gap_to_person_dependent"], &curves)?;
    let rows: Vec<Vec<String>> = fits
        .iter()
        .map(|f| {
            let c = &f.comparison;
            vec![
                f.scenario.clone(),
                f.seed.to_string(),
                num(f.true_beta3),
                num(c.beta3_no_ilhte),
                num(c.se_no_ilhte),
                num(c.beta3_ilhte),
                num(c.se_ilhte),
                num(c.difference),
                num(c.combined_se),
                num(c.sigma_b_star),
                opt(c.sd_ratio),
                num(c.rho),
                f.converged.to_string(),
            ]
        })
        .collect();
    art.csv(
        "interaction_comparison.csv",
        &[
            "scenario",
            "seed",
            "true_beta3",
            "beta3_no_ilhte",
            "se_no_ilhte",
            "beta3_ilhte",
            "se_ilhte",
            "difference",
            "combined_se",
            "sigma_b_star",
            "sd_ratio",
            "rho_hat",
            "converged",
        ],
        &rows,
    )?;
    let summaries: Vec<ScenarioSummary> = ["item_dependent", "person_dependent"]
        .iter()
        .map(|s| {
            let v: Vec<&ScenarioFit> = fits.iter().filter(|f| f.scenario == *s).collect();
            let share = |p: &dyn Fn(&ScenarioFit) -> bool| v.iter().filter(|f| p(f)).count() as f64 / v.len().max(1) as f64;
            ScenarioSummary {
                scenario: s.to_string(),
                replications: v.len(),
                share_spurious_without_slopes: share(&|f| f.spurious_without_slopes()),
                share_recovered_with_slopes: share(&|f| f.recovered_with_slopes()),
                share_difference_negative: share(&|f| f.comparison.difference < 0.0),
            }
        })
        .collect();
    #[derive(Serialize)]
    struct DemoDoc<'a> {
        config: &'a ConfoundDemoConfig,
        person_dependent: &'a SimConfig,
        calibration: &'a Option<Calibration>,
        item_b: &'a [f64],
        item_zeta: &'a [f64],
        summaries: &'a [ScenarioSummary],
    }
    art.json(
        "confound_demo.json",
        &DemoDoc {
            config,
            person_dependent: &person_cfg,
            calibration: &calibration,
            item_b: &item_params.b,
            item_zeta: &item_params.zeta,
            summaries: &summaries,
        },
    )?;
    let flagged = fits.iter().any(|f| !f.converged);
    let notes = calibration.map(|c| format!("calibrated max gap {:.4}", c.max_gap)).into_iter().collect();
    Ok(outcome(&art, flagged, notes))
}

/// One worked number checked against its published value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyCheck {
    pub name: String,
    pub computed: f64,
    pub expected: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Worked numbers: sensitivity thresholds (tolerance `tol_three_digit`) and
/// the two-decimal item-spread and sum-score values (`tol_two_digit`).
pub fn toy_checks(tol_three_digit: f64, tol_two_digit: f64) -> Vec<ToyCheck> {
    use crate::analytics::{confound_gap, sensitivity_gamma, sumscore_slope};
    let gamma = |i| sensitivity_gamma(0.3, 0.01, i).value().unwrap_or(f64::NAN);
    let checks = [
        ("gamma(beta1=.3, se=.1, I=20)", gamma(20), 0.52, tol_three_digit),
        ("gamma(beta1=.3, se=.1, I=10)", gamma(10), 0.37, tol_three_digit),
        ("sigma_b_star(1, 1, 1)", treatment_group_item_sd(1.0, 1.0, 1.0), 2.0, tol_two_digit),
        ("sumscore_slope(1, 1)", sumscore_slope(1.0, 1.0), 0.86, tol_two_digit),
        ("sumscore_slope(1, 2)", sumscore_slope(1.0, 2.0), 0.65, tol_two_digit),
        ("confound_gap(1, 1, 1, +1)", confound_gap(1.0, 1.0, 1.0, 1.0), -0.21, tol_two_digit),
        ("confound_gap(1, 1, 1, -1)", confound_gap(1.0, 1.0, 1.0, -1.0), 0.14, tol_two_digit),
    ];
    checks
        .into_iter()
        .map(|(name, computed, expected, tolerance)| ToyCheck {
            name: name.into(),
            computed,
            expected,
            tolerance,
            pass: (computed - expected).abs() <= tolerance,
        })
        .collect()
}

/// Plain-text table of the checks.
pub fn render_toy_checks(checks: &[ToyCheck]) -> String {
    let mut s = format!("{:<32} {:>12} {:>9} {:>9}  result\n", "quantity", "computed", "expected", "tol");
    for c in checks {
        s.push_str(&format!(
            "{:<32} {:>12.6} {:>9.3} {:>9.1e}  {}\n",
            c.name,
            c.computed,
            c.expected,
            c.tolerance,
            if c.pass { "PASS" } else { "FAIL" }
        ));
    }
    s
}

pub fn cmd_replicate_toy(
    manifest: &RunManifest,
    tol_three_digit: f64,
    tol_two_digit: f64,
    out_dir: &Path,
) -> Result<(Outcome, Vec<ToyCheck>), ReportError> {
    let checks = toy_checks(tol_three_digit, tol_two_digit);
    let mut art = Artifacts::new(out_dir, manifest)?;
    let rows: Vec<Vec<String>> = checks
        .iter()
        .map(|c| vec![c.name.clone(), num(c.computed), num(c.expected), num(c.tolerance), c.pass.to_string()])
        .collect();
    art.csv("toy_checks.csv", &["quantity", "computed", "expected", "tolerance", "pass"], &rows)?;
    let failed = checks.iter().filter(|c| !c.pass).count();
    let notes = if failed > 0 { vec![format!("{failed} check(s) outside tolerance")] } else { vec![] };
    Ok((outcome(&art, false, notes), checks))
}
