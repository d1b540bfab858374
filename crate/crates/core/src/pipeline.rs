//! End-to-end runs behind the command-line tool.
//!
//! [`run_fit`] goes from a detection file and labels to a threshold profile
//! plus a report; [`run_apply`] filters new detections with a stored profile.
//! Every output is a pure function of the inputs and the configured seed.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};

use crate::calibration::{fit_calibrators, CalibratorSet};
use crate::error::{Error, Result};
use crate::io::{self, CategoryMap};
use crate::matching::{categorize_sweep, match_and_categorize, CategorizedSet, Category, CategoryCounts};
use crate::model::{validate_dataset, Budget, Dataset, TauSet, UseCase, ValidationReport, DEFAULT_TAUS};
use crate::optimizer::{
    apply_profile, evaluate_loss, optimize_traced, profile_for_weights, OptimizerConfig, ThresholdProfile,
    ThresholdingProblem, Trial,
};
use crate::roc::{auc, build_roc, jsd, DEFAULT_JSD_BINS};
use crate::safeguards::{check_requirements, rates_after_threshold, RequirementReport};
use crate::synth::{generate, ScenarioSpec};
use crate::uncertainty::{compute_uncertainties, ChannelConfig, WeightVector};

pub const REPORT_SCHEMA_VERSION: &str = "1.0";

/// Budgets evaluated in the report's sweep, with the fitted weights held fixed.
pub const SWEEP_BUDGETS: [f64; 10] = [0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.96, 0.97, 0.98, 0.99];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BudgetConfig {
    pub value: f64,
    pub use_case: UseCase,
}

impl Default for BudgetConfig {
    fn default() -> Self {
        Self {
            value: 0.95,
            use_case: UseCase::RetainCd,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationConfig {
    pub enabled: bool,
    /// IoU threshold whose categories the calibrators are fitted on.
    pub tau: f64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self { enabled: true, tau: 0.5 }
    }
}

/// Settings of a `fit` run, usually read from TOML.
///
/// Relative paths are resolved against the directory of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub detections: PathBuf,
    pub ground_truth: PathBuf,
    pub output_dir: PathBuf,
    pub taus: Vec<f64>,
    pub jsd_bins: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub class_count: Option<usize>,
    pub budget: BudgetConfig,
    pub channels: ChannelConfig,
    pub calibration: CalibrationConfig,
    pub optimizer: OptimizerConfig,
    /// COCO category id (as a string key) → class id.
    pub category_map: BTreeMap<String, usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            detections: PathBuf::from("detections.jsonl"),
            ground_truth: PathBuf::from("ground_truth.json"),
            output_dir: PathBuf::from("out"),
            taus: DEFAULT_TAUS.to_vec(),
            jsd_bins: DEFAULT_JSD_BINS,
            class_count: None,
            budget: BudgetConfig::default(),
            channels: ChannelConfig::default(),
            calibration: CalibrationConfig::default(),
            optimizer: OptimizerConfig::default(),
            category_map: BTreeMap::new(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::from_toml(&text)?;
        if let Some(base) = path.parent() {
            config.resolve_paths(base);
        }
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        for p in [&mut self.detections, &mut self.ground_truth, &mut self.output_dir] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    pub fn budget(&self) -> Result<Budget> {
        Budget::new(self.budget.value, self.budget.use_case).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn tau_set(&self) -> Result<TauSet> {
        TauSet::new(self.taus.clone()).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn category_map(&self) -> Result<Option<CategoryMap>> {
        if self.category_map.is_empty() {
            return Ok(None);
        }
        self.category_map
            .iter()
            .map(|(k, v)| {
                k.parse::<i64>()
                    .map(|id| (id, *v))
                    .map_err(|_| Error::Config(format!("category_map key {k:?} is not an integer")))
            })
            .collect::<Result<CategoryMap>>()
            .map(Some)
    }

    /// Checks every setting that can be checked without reading data.
    pub fn validate(&self) -> Result<()> {
        self.budget()?;
        let taus = self.tau_set()?;
        self.channels.validate()?;
        self.optimizer.validate(self.channels.dim())?;
        if self.jsd_bins < 2 {
            return Err(Error::Config("jsd_bins must be at least 2".into()));
        }
        if self.calibration.enabled && !(self.calibration.tau > 0.0 && self.calibration.tau < 1.0) {
            return Err(Error::Config(format!(
                "calibration tau {} must lie in (0, 1)",
                self.calibration.tau
            )));
        }
        self.category_map()?;
        info!("config ok: {} τ values, {} channels", taus.as_slice().len(), self.channels.dim());
        Ok(())
    }
}

/// Threshold, ROC summary and safeguards at one τ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauReport {
    pub tau: f64,
    pub counts: CategoryCounts,
    pub delta: f64,
    pub fpr: f64,
    pub tpr: f64,
    pub bacc: f64,
    pub auc: f64,
    pub jsd: f64,
    pub requirements: RequirementReport,
}

/// Separability of a single channel, averaged over the usable τ values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelReport {
    pub name: String,
    pub jsd_mean: f64,
    pub auc_mean: f64,
}

/// Performance of a fixed weight vector, for comparison with the fitted one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineReport {
    pub name: String,
    pub weights: Vec<f64>,
    pub loss: f64,
    pub metric: f64,
    pub bacc_mean: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub budget: f64,
    pub metric: f64,
    pub bacc_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: String,
    pub budget: Budget,
    pub metric_name: String,
    pub metric: f64,
    pub bacc_mean: f64,
    pub loss: f64,
    pub weights: Vec<f64>,
    pub channel_names: Vec<String>,
    pub detections: usize,
    pub ground_truths: usize,
    pub calibrated: bool,
    pub per_tau: Vec<TauReport>,
    pub excluded_taus: Vec<f64>,
    pub channels: Vec<ChannelReport>,
    pub baselines: Vec<BaselineReport>,
    pub budget_sweep: Vec<SweepRow>,
    pub trace: Vec<Trial>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOutcome {
    pub profile: ThresholdProfile,
    pub report: RunReport,
    pub calibrators: Option<CalibratorSet>,
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn labels_split(values: &[f64], labels: &[Category]) -> (Vec<f64>, Vec<f64>) {
    let mut cd = Vec::new();
    let mut fd = Vec::new();
    for (v, l) in values.iter().zip(labels) {
        match l {
            Category::Cd => cd.push(*v),
            Category::Fd => fd.push(*v),
        }
    }
    (cd, fd)
}

fn invalid_dataset(report: &ValidationReport) -> Error {
    let shown: Vec<String> = report
        .violations
        .iter()
        .take(5)
        .map(|v| format!("{:?} {}: {}", v.kind, v.index, v.message))
        .collect();
    Error::DegenerateData(format!(
        "{} invalid records ({})",
        report.violations.len(),
        shown.join("; ")
    ))
}

/// Loads and validates the dataset described by a config.
pub fn load_dataset(config: &RunConfig) -> Result<Dataset> {
    let detections = io::load_detections(&config.detections)?;
    let ground_truths = io::load_ground_truth(&config.ground_truth, config.category_map()?.as_ref())?;
    let class_count = config
        .class_count
        .unwrap_or_else(|| Dataset::infer_class_count(&detections, &ground_truths));
    let dataset = Dataset::new(detections, ground_truths, class_count);
    let report = validate_dataset(&dataset);
    if !report.is_valid() {
        return Err(invalid_dataset(&report));
    }
    info!(
        "loaded {} detections, {} labels, {} classes",
        dataset.detections.len(),
        dataset.ground_truths.len(),
        dataset.class_count
    );
    Ok(dataset)
}

/// Fits a profile in memory; [`run_fit`] additionally writes the artifacts.
pub fn fit_dataset(dataset: &Dataset, config: &RunConfig) -> Result<FitOutcome> {
    config.validate()?;
    let budget = config.budget()?;
    let taus = config.tau_set()?;

    let categorized = categorize_sweep(dataset, &taus);
    let calibrators = if config.calibration.enabled {
        let reference = match_and_categorize(dataset, config.calibration.tau);
        Some(fit_calibrators(dataset, &reference, config.channels.cls).map_err(|e| e.in_stage("calibrate"))?)
    } else {
        None
    };

    let rows = compute_uncertainties(dataset, &config.channels, calibrators.as_ref())
        .map_err(|e| e.in_stage("uncertainty"))?;
    let problem = ThresholdingProblem::new(rows, &categorized)?.with_channel_names(config.channels.channel_names());
    let (mut profile, trace) =
        optimize_traced(&problem, &budget, &config.optimizer).map_err(|e| e.in_stage("optimize"))?;
    profile.channels = Some(config.channels);
    profile.calibrators = calibrators.clone();

    let report = build_report(dataset, config, &problem, &categorized, &profile, trace)?;
    Ok(FitOutcome {
        profile,
        report,
        calibrators,
    })
}

fn build_report(
    dataset: &Dataset,
    config: &RunConfig,
    problem: &ThresholdingProblem,
    categorized: &[CategorizedSet],
    profile: &ThresholdProfile,
    trace: Vec<Trial>,
) -> Result<RunReport> {
    let budget = profile.budget;
    let mode = profile.combine_mode;
    let weights = profile.weights.as_slice();
    let scores = problem.scores(weights, mode)?;

    let mut per_tau = Vec::new();
    for t in &profile.per_tau {
        let set = categorized
            .iter()
            .find(|s| s.tau == t.tau)
            .ok_or(Error::UnknownTau(t.tau))?;
        let (cd, fd) = set.split_scores(&scores);
        let roc = build_roc(&cd, &fd)?;
        let (i, m) = rates_after_threshold(set, &scores, t.delta)?;
        per_tau.push(TauReport {
            tau: t.tau,
            counts: set.counts,
            delta: t.delta,
            fpr: t.fpr,
            tpr: t.tpr,
            bacc: t.bacc,
            auc: auc(&roc),
            jsd: jsd(&cd, &fd, config.jsd_bins)?,
            requirements: check_requirements(i, m, set.counts),
        });
    }

    let usable: Vec<&(f64, Vec<Category>)> = problem
        .per_tau
        .iter()
        .filter(|(tau, _)| !profile.excluded_taus.contains(tau))
        .collect();
    let mut channels = Vec::new();
    for (k, name) in problem.channel_names.iter().enumerate() {
        let values = problem.channel(k);
        let mut jsds = Vec::new();
        let mut aucs = Vec::new();
        for (_, labels) in &usable {
            let (cd, fd) = labels_split(&values, labels);
            jsds.push(jsd(&cd, &fd, config.jsd_bins)?);
            aucs.push(auc(&build_roc(&cd, &fd)?));
        }
        channels.push(ChannelReport {
            name: name.clone(),
            jsd_mean: mean(&jsds),
            auc_mean: mean(&aucs),
        });
    }

    let dim = problem.dim();
    let mut candidates = vec![("sum".to_owned(), vec![1.0; dim])];
    if dim > 1 {
        for (k, name) in problem.channel_names.iter().enumerate() {
            let mut w = vec![0.0; dim];
            w[k] = 1.0;
            candidates.push((name.clone(), w));
        }
    }
    let mut baselines = Vec::new();
    for (name, w) in candidates {
        let p = profile_for_weights(WeightVector::new(w.clone())?, problem, &budget, mode)?;
        baselines.push(BaselineReport {
            name,
            weights: w,
            loss: p.loss,
            metric: p.metric,
            bacc_mean: p.bacc_mean,
        });
    }

    let mut budget_sweep = Vec::new();
    for b in SWEEP_BUDGETS {
        let sweep_budget = Budget::new(b, budget.use_case)?;
        let metrics = evaluate_loss(weights, problem, &sweep_budget, mode)?.metrics(&sweep_budget)?;
        budget_sweep.push(SweepRow {
            budget: b,
            metric: metrics.metric,
            bacc_mean: metrics.bacc_mean,
        });
    }

    Ok(RunReport {
        schema_version: REPORT_SCHEMA_VERSION.to_owned(),
        budget,
        metric_name: profile.metric_name.clone(),
        metric: profile.metric,
        bacc_mean: profile.bacc_mean,
        loss: profile.loss,
        weights: weights.to_vec(),
        channel_names: problem.channel_names.clone(),
        detections: dataset.detections.len(),
        ground_truths: dataset.ground_truths.len(),
        calibrated: profile.calibrators.is_some(),
        per_tau,
        excluded_taus: profile.excluded_taus.clone(),
        channels,
        baselines,
        budget_sweep,
        trace,
    })
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn create_file(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

/// File name of the ROC curve exported for `tau`.
pub fn roc_file_name(tau: f64) -> String {
    format!("roc_tau_{tau:.2}.csv")
}

/// Loads, fits and writes `profile.json`, `report.json`, one ROC CSV per τ
/// and, when calibration is on, `calibrators.json` into the output directory.
pub fn run_fit(config: &RunConfig) -> Result<FitOutcome> {
    config.validate()?;
    let dataset = load_dataset(config).map_err(|e| e.in_stage("load"))?;
    let outcome = fit_dataset(&dataset, config)?;

    let dir = &config.output_dir;
    create_dir(dir)?;
    io::save_profile(dir.join("profile.json"), &outcome.profile)?;
    io::save_json(dir.join("report.json"), &outcome.report)?;
    if let Some(cal) = &outcome.calibrators {
        io::save_calibrators(dir.join("calibrators.json"), cal)?;
    }

    let rows = compute_uncertainties(&dataset, &config.channels, outcome.calibrators.as_ref())?;
    let scores = outcome.profile.score_rows(&rows)?;
    for t in &outcome.report.per_tau {
        let set = match_and_categorize(&dataset, t.tau);
        let (cd, fd) = set.split_scores(&scores);
        let path = dir.join(roc_file_name(t.tau));
        let mut w = create_file(&path)?;
        build_roc(&cd, &fd)?
            .write_csv(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(&path, e))?;
    }
    info!(
        "{} = {:.4}, mean BAcc = {:.4}, written to {}",
        outcome.profile.metric_name,
        outcome.profile.metric,
        outcome.profile.bacc_mean,
        dir.display()
    );
    Ok(outcome)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApplyOptions {
    pub profile: PathBuf,
    pub detections: PathBuf,
    pub tau: f64,
    pub ground_truth: Option<PathBuf>,
    pub category_map: Option<CategoryMap>,
    pub output_dir: PathBuf,
}

/// Achieved rates on labelled data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApplyEvaluation {
    pub counts_before: CategoryCounts,
    /// Removed CDs are counted as missed.
    pub counts_after: CategoryCounts,
    pub i: f64,
    pub m: f64,
    pub requirements: RequirementReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApplySummary {
    pub schema_version: String,
    pub tau: f64,
    pub delta: f64,
    pub total: usize,
    pub kept: usize,
    pub removed: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub evaluation: Option<ApplyEvaluation>,
}

/// Filters detections with a stored profile, writing `kept.jsonl`,
/// `removed.jsonl` and `apply_summary.json`.
pub fn run_apply(options: &ApplyOptions) -> Result<ApplySummary> {
    let profile = io::load_profile(&options.profile)?;
    let detections = io::load_detections(&options.detections)?;
    let ground_truths = match &options.ground_truth {
        Some(p) => io::load_ground_truth(p, options.category_map.as_ref())?,
        None => Vec::new(),
    };
    let class_count = Dataset::infer_class_count(&detections, &ground_truths);
    let dataset = Dataset::new(detections, ground_truths, class_count);

    let scores = profile.score_dataset(&dataset)?;
    let outcome = apply_profile(&profile, &scores, options.tau)?;

    let evaluation = match options.ground_truth {
        Some(_) => {
            let set = match_and_categorize(&dataset, options.tau);
            let (i, m) = rates_after_threshold(&set, &scores, outcome.delta)?;
            let mut after = CategoryCounts {
                md: set.counts.md,
                ..CategoryCounts::default()
            };
            for d in &outcome.decisions {
                match (set.category(d.detection), d.keep) {
                    (Category::Cd, true) => after.cd += 1,
                    (Category::Cd, false) => after.md += 1,
                    (Category::Fd, true) => after.fd += 1,
                    (Category::Fd, false) => {}
                }
            }
            Some(ApplyEvaluation {
                counts_before: set.counts,
                counts_after: after,
                i,
                m,
                requirements: check_requirements(i, m, set.counts),
            })
        }
        None => None,
    };

    let dir = &options.output_dir;
    create_dir(dir)?;
    let kept: Vec<_> = outcome.kept().map(|k| dataset.detections[k].clone()).collect();
    let removed: Vec<_> = outcome.removed().map(|k| dataset.detections[k].clone()).collect();
    io::save_detections(dir.join("kept.jsonl"), &kept)?;
    io::save_detections(dir.join("removed.jsonl"), &removed)?;

    let summary = ApplySummary {
        schema_version: REPORT_SCHEMA_VERSION.to_owned(),
        tau: options.tau,
        delta: outcome.delta,
        total: dataset.detections.len(),
        kept: kept.len(),
        removed: removed.len(),
        evaluation,
    };
    io::save_json(dir.join("apply_summary.json"), &summary)?;
    Ok(summary)
}

pub fn load_report(path: impl AsRef<Path>) -> Result<RunReport> {
    io::load_versioned(path, "report")
}

fn yes_no(b: bool) -> &'static str {
    if b {
        "pass"
    } else {
        "FAIL"
    }
}

/// Human-readable summary of a report.
pub fn render_report(report: &RunReport) -> String {
    let mut s = String::new();
    let b = &report.budget;
    let _ = writeln!(
        s,
        "{} detections, {} labels, budget {} ({}), calibrated: {}",
        report.detections, report.ground_truths, b.value, b.use_case, report.calibrated
    );
    let _ = writeln!(s, "weights: {}", weight_list(&report.channel_names, &report.weights));
    let _ = writeln!(
        s,
        "{} = {:.4}   mean BAcc = {:.4}   loss = {:.4}",
        report.metric_name, report.metric, report.bacc_mean, report.loss
    );
    if !report.excluded_taus.is_empty() {
        let _ = writeln!(s, "excluded τ (single-class): {:?}", report.excluded_taus);
    }
    let _ = writeln!(
        s,
        "\n{:>5} {:>6} {:>6} {:>6} {:>10} {:>6} {:>6} {:>6} {:>6} {:>6} {:>6} {:>6} {:>4} {:>4}",
        "tau", "CD", "FD", "MD", "delta", "FPR", "TPR", "BAcc", "AUC", "JSD", "i", "m", "2a", "2b"
    );
    for t in &report.per_tau {
        let r = &t.requirements;
        let _ = writeln!(
            s,
            "{:>5.2} {:>6} {:>6} {:>6} {:>10.4} {:>6.3} {:>6.3} {:>6.3} {:>6.3} {:>6.3} {:>6.3} {:>6.3} {:>4} {:>4}",
            t.tau,
            t.counts.cd,
            t.counts.fd,
            t.counts.md,
            t.delta,
            t.fpr,
            t.tpr,
            t.bacc,
            t.auc,
            t.jsd,
            r.i,
            r.m,
            yes_no(r.req_2a_pass),
            yes_no(r.req_2b_pass)
        );
    }
    let _ = writeln!(s, "\n{:<14} {:>8} {:>8}", "channel", "JSD", "AUC");
    for c in &report.channels {
        let _ = writeln!(s, "{:<14} {:>8.4} {:>8.4}", c.name, c.jsd_mean, c.auc_mean);
    }
    let _ = writeln!(s, "\n{:<14} {:>8} {:>8}", "weights", report.metric_name, "BAcc");
    for bl in &report.baselines {
        let _ = writeln!(s, "{:<14} {:>8.4} {:>8.4}", bl.name, bl.metric, bl.bacc_mean);
    }
    let _ = writeln!(s, "{:<14} {:>8.4} {:>8.4}", "fitted", report.metric, report.bacc_mean);
    let _ = writeln!(s, "\n{:>6} {:>8} {:>8}", "budget", report.metric_name, "BAcc");
    for row in &report.budget_sweep {
        let _ = writeln!(s, "{:>6.2} {:>8.4} {:>8.4}", row.budget, row.metric, row.bacc_mean);
    }
    s
}

fn weight_list(names: &[String], weights: &[f64]) -> String {
    names
        .iter()
        .zip(weights)
        .map(|(n, w)| format!("{n}={w:.4}"))
        .collect::<Vec<_>>()
        .join(", ")
}

fn write_lines(path: &Path, header: &str, rows: impl IntoIterator<Item = String>) -> Result<()> {
    let mut w = create_file(path)?;
    let result = writeln!(w, "{header}").and_then(|_| {
        for row in rows {
            writeln!(w, "{row}")?;
        }
        w.flush()
    });
    result.map_err(|e| Error::io(path, e))
}

/// Writes `budget_sweep.csv`, `channels.csv` and `requirements.csv` for a report.
pub fn write_report_tables(report: &RunReport, dir: &Path) -> Result<()> {
    create_dir(dir)?;
    write_lines(
        &dir.join("budget_sweep.csv"),
        &format!("budget,{},bacc_mean", report.metric_name),
        report
            .budget_sweep
            .iter()
            .map(|r| format!("{},{},{}", r.budget, r.metric, r.bacc_mean)),
    )?;
    write_lines(
        &dir.join("channels.csv"),
        "channel,jsd_mean,auc_mean",
        report
            .channels
            .iter()
            .map(|c| format!("{},{},{}", c.name, c.jsd_mean, c.auc_mean)),
    )?;
    write_lines(
        &dir.join("requirements.csv"),
        "tau,cd,fd,md,delta,i,m,req_2a,req_2b,recall_pre,recall_post,precision_pre,precision_post,f1_pre,f1_post",
        report.per_tau.iter().map(|t| {
            let r = &t.requirements;
            format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                t.tau,
                t.counts.cd,
                t.counts.fd,
                t.counts.md,
                t.delta,
                r.i,
                r.m,
                r.req_2a_pass,
                r.req_2b_pass,
                r.recall_pre,
                r.recall_post,
                r.precision_pre,
                r.precision_post,
                r.f1_pre,
                r.f1_post
            )
        }),
    )
}

/// Loads a report, writes its CSV tables next to it (or into `out_dir`) and returns the rendered text.
pub fn run_report(path: impl AsRef<Path>, out_dir: Option<&Path>) -> Result<String> {
    let path = path.as_ref();
    let report = load_report(path)?;
    let dir = out_dir
        .map(Path::to_path_buf)
        .unwrap_or_else(|| path.parent().map(Path::to_path_buf).unwrap_or_default());
    write_report_tables(&report, &dir)?;
    Ok(render_report(&report))
}

/// Generates a synthetic scenario and writes `detections.jsonl`,
/// `ground_truth.jsonl`, `scenario.json` and a ready-to-run `config.toml`.
pub fn run_synth(spec: &ScenarioSpec, out_dir: &Path) -> Result<RunConfig> {
    let data = generate(spec)?;
    create_dir(out_dir)?;
    io::save_detections(out_dir.join("detections.jsonl"), &data.dataset.detections)?;
    io::save_ground_truth(out_dir.join("ground_truth.jsonl"), &data.dataset.ground_truths)?;
    io::save_json(out_dir.join("scenario.json"), spec)?;

    let channels = spec.channel_config();
    let config = RunConfig {
        detections: PathBuf::from("detections.jsonl"),
        ground_truth: PathBuf::from("ground_truth.jsonl"),
        output_dir: PathBuf::from("out"),
        class_count: Some(spec.class_count),
        channels,
        calibration: CalibrationConfig {
            enabled: false,
            ..CalibrationConfig::default()
        },
        optimizer: OptimizerConfig {
            iterations: OptimizerConfig::default().iterations.max(1 << channels.dim()),
            seed: spec.seed,
            ..OptimizerConfig::default()
        },
        ..RunConfig::default()
    };
    let path = out_dir.join("config.toml");
    std::fs::write(&path, config.to_toml()?).map_err(|e| Error::io(&path, e))?;
    Ok(config)
}

/// Checks data files without fitting anything.
pub fn run_validate(
    detections: &Path,
    ground_truth: Option<&Path>,
    category_map: Option<&CategoryMap>,
) -> Result<ValidationReport> {
    let detections = io::load_detections(detections)?;
    let ground_truths = match ground_truth {
        Some(p) => io::load_ground_truth(p, category_map)?,
        None => Vec::new(),
    };
    let class_count = Dataset::infer_class_count(&detections, &ground_truths);
    Ok(validate_dataset(&Dataset::new(detections, ground_truths, class_count)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_from_empty_toml() {
        let c = RunConfig::from_toml("").unwrap();
        assert_eq!(c, RunConfig::default());
        c.validate().unwrap();
    }

    #[test]
    fn out_of_range_budget_is_a_config_error() {
        let c = RunConfig::from_toml("[budget]\nvalue = 1.2\n").unwrap();
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_toml("budgett = 3").is_err());
    }

    #[test]
    fn toml_round_trip() {
        let mut c = RunConfig::default();
        c.category_map.insert("17".into(), 0);
        c.class_count = Some(4);
        let back = RunConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.category_map().unwrap().unwrap()[&17], 0);
    }

    #[test]
    fn too_few_iterations_for_corners() {
        let c = RunConfig::from_toml("[optimizer]\niterations = 2\n").unwrap();
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn fit_synthetic_in_memory() {
        let spec = ScenarioSpec {
            n_cd: 200,
            n_fd: 60,
            seed: 3,
            ..ScenarioSpec::default()
        };
        let data = generate(&spec).unwrap();
        let config = RunConfig {
            channels: spec.channel_config(),
            calibration: CalibrationConfig {
                enabled: false,
                tau: 0.5,
            },
            ..RunConfig::default()
        };
        let out = fit_dataset(&data.dataset, &config).unwrap();
        assert_eq!(out.report.per_tau.len(), 6);
        assert_eq!(out.report.budget_sweep.len(), SWEEP_BUDGETS.len());
        for t in &out.report.per_tau {
            assert!(t.fpr <= 0.05 + 1e-12);
        }
        let sum = &out.report.baselines[0];
        assert!(out.report.baselines.iter().all(|b| out.profile.loss <= b.loss));
        assert_eq!(sum.weights, vec![1.0, 1.0]);
        assert!(render_report(&out.report).contains("fd_at_cd"));
    }
}
