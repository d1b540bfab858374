//! Black-box optimization of the channel-combination weights.
//!
//! The objective is the mean over IoU thresholds of the per-τ step loss at the
//! budget-optimal threshold: FNR when retaining CDs, FPR when removing FDs.
//! It is piecewise constant in the weights, so the search is derivative free:
//! every corner of the unit cube (the all-ones vector first) is evaluated, then
//! proposals alternate between a randomly shifted Halton sequence and Gaussian
//! perturbations of the incumbent. Only strict improvements replace the
//! incumbent, so the result is deterministic for a given seed.

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::CalibratorSet;
use crate::error::{Error, Result};
use crate::matching::{CategorizedSet, Category};
use crate::model::{Budget, Dataset};
use crate::roc::{bacc, build_roc, select_threshold, thresholding_metrics, OperatingPoint, RocCurve, ThresholdingMetrics};
use crate::uncertainty::{combine_values, compute_uncertainties, ChannelConfig, CombineMode, WeightVector};

pub const PROFILE_SCHEMA_VERSION: &str = "1.0";

/// Tolerance when looking up a τ in a profile.
const TAU_MATCH_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub iterations: usize,
    pub seed: u64,
    pub combine_mode: CombineMode,
    /// Standard deviation of the local perturbation around the incumbent.
    pub perturbation_scale: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            iterations: 50,
            seed: 0,
            combine_mode: CombineMode::Sum,
            perturbation_scale: 0.15,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self, dim: usize) -> Result<()> {
        let corners = corner_count(dim);
        if self.iterations < corners {
            return Err(Error::Config(format!(
                "{} iterations cannot cover the {corners} corner weight vectors of a {dim}-channel search space",
                self.iterations
            )));
        }
        if !(self.perturbation_scale > 0.0 && self.perturbation_scale.is_finite()) {
            return Err(Error::Config("perturbation_scale must be positive".into()));
        }
        Ok(())
    }
}

fn corner_count(dim: usize) -> usize {
    1usize << dim
}

/// Channel values of every detection plus their true category at each τ.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdingProblem {
    /// One row per detection.
    pub channels: Vec<Vec<f64>>,
    pub channel_names: Vec<String>,
    pub per_tau: Vec<(f64, Vec<Category>)>,
}

impl ThresholdingProblem {
    pub fn new(channels: Vec<Vec<f64>>, categorized: &[CategorizedSet]) -> Result<Self> {
        let dim = channels.first().map_or(0, Vec::len);
        if let Some(row) = channels.iter().find(|r| r.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: row.len(),
            });
        }
        for set in categorized {
            if set.per_detection.len() != channels.len() {
                return Err(Error::DimensionMismatch {
                    expected: channels.len(),
                    got: set.per_detection.len(),
                });
            }
        }
        Ok(Self {
            channel_names: (0..dim).map(|k| format!("channel_{k}")).collect(),
            channels,
            per_tau: categorized.iter().map(|s| (s.tau, s.labels())).collect(),
        })
    }

    pub fn with_channel_names(mut self, names: impl IntoIterator<Item = impl Into<String>>) -> Self {
        self.channel_names = names.into_iter().map(Into::into).collect();
        self
    }

    /// Single-channel problem straight from CD/FD score lists at one τ.
    pub fn from_scores(tau: f64, scores_cd: &[f64], scores_fd: &[f64]) -> Self {
        let channels = scores_cd.iter().chain(scores_fd).map(|s| vec![*s]).collect();
        let labels = std::iter::repeat_n(Category::Cd, scores_cd.len())
            .chain(std::iter::repeat_n(Category::Fd, scores_fd.len()))
            .collect();
        Self {
            channels,
            channel_names: vec!["channel_0".into()],
            per_tau: vec![(tau, labels)],
        }
    }

    pub fn dim(&self) -> usize {
        self.channels.first().map_or(self.channel_names.len(), Vec::len)
    }

    pub fn taus(&self) -> Vec<f64> {
        self.per_tau.iter().map(|(t, _)| *t).collect()
    }

    /// Combined score per detection.
    pub fn scores(&self, weights: &[f64], mode: CombineMode) -> Result<Vec<f64>> {
        self.channels
            .iter()
            .map(|row| combine_values(weights, row, mode))
            .collect()
    }

    /// Values of one channel alone.
    pub fn channel(&self, k: usize) -> Vec<f64> {
        self.channels.iter().map(|r| r[k]).collect()
    }
}

fn split(scores: &[f64], labels: &[Category]) -> (Vec<f64>, Vec<f64>) {
    let mut cd = Vec::new();
    let mut fd = Vec::new();
    for (s, l) in scores.iter().zip(labels) {
        match l {
            Category::Cd => cd.push(*s),
            Category::Fd => fd.push(*s),
        }
    }
    (cd, fd)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TauEvaluation {
    pub tau: f64,
    pub roc: RocCurve,
    pub op: OperatingPoint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossEvaluation {
    pub loss: f64,
    pub per_tau: Vec<TauEvaluation>,
    /// τ values without both CDs and FDs; left out of the mean.
    pub excluded_taus: Vec<f64>,
}

impl LossEvaluation {
    pub fn metrics(&self, budget: &Budget) -> Result<ThresholdingMetrics> {
        let pairs: Vec<(RocCurve, OperatingPoint)> =
            self.per_tau.iter().map(|e| (e.roc.clone(), e.op)).collect();
        thresholding_metrics(&pairs, budget)
    }
}

/// Evaluates per-τ ROC curves, thresholds and losses for an arbitrary score vector.
pub fn evaluate_scores(scores: &[f64], problem: &ThresholdingProblem, budget: &Budget) -> Result<LossEvaluation> {
    let outcomes: Vec<(f64, Result<TauEvaluation>)> = problem
        .per_tau
        .par_iter()
        .map(|(tau, labels)| {
            let (cd, fd) = split(scores, labels);
            let eval = build_roc(&cd, &fd).map(|roc| {
                let op = select_threshold(&roc, budget).at_tau(*tau);
                TauEvaluation { tau: *tau, roc, op }
            });
            (*tau, eval)
        })
        .collect();

    let mut per_tau = Vec::new();
    let mut excluded_taus = Vec::new();
    for (tau, outcome) in outcomes {
        match outcome {
            Ok(e) => per_tau.push(e),
            Err(Error::DegenerateRoc(why)) => {
                warn!("excluding τ = {tau} from the loss: {why}");
                excluded_taus.push(tau);
            }
            Err(other) => return Err(other),
        }
    }
    if per_tau.is_empty() {
        return Err(Error::DegenerateRoc(format!(
            "every IoU threshold lacks CDs or FDs ({excluded_taus:?})"
        )));
    }
    let loss = per_tau.iter().map(|e| e.op.step_loss()).sum::<f64>() / per_tau.len() as f64;
    Ok(LossEvaluation {
        loss,
        per_tau,
        excluded_taus,
    })
}

/// Mean step loss over τ for the given weights.
pub fn evaluate_loss(
    weights: &[f64],
    problem: &ThresholdingProblem,
    budget: &Budget,
    mode: CombineMode,
) -> Result<LossEvaluation> {
    let scores = problem.scores(weights, mode)?;
    evaluate_scores(&scores, problem, budget)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub weights: Vec<f64>,
    pub loss: f64,
    pub best_so_far: f64,
}

/// Per-τ entry of a profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TauThreshold {
    pub tau: f64,
    pub delta: f64,
    pub fpr: f64,
    pub tpr: f64,
    pub bacc: f64,
}

/// Fitted thresholding configuration: weights, per-τ thresholds and achieved metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdProfile {
    pub schema_version: String,
    pub weights: WeightVector,
    pub channel_names: Vec<String>,
    /// How to recompute the channels from raw detection records, when known.
    pub channels: Option<ChannelConfig>,
    pub combine_mode: CombineMode,
    pub budget: Budget,
    pub per_tau: Vec<TauThreshold>,
    pub excluded_taus: Vec<f64>,
    pub loss: f64,
    pub metric_name: String,
    pub metric: f64,
    pub bacc_mean: f64,
    pub calibrators: Option<CalibratorSet>,
}

impl ThresholdProfile {
    fn from_evaluation(
        weights: WeightVector,
        problem: &ThresholdingProblem,
        budget: &Budget,
        mode: CombineMode,
        eval: &LossEvaluation,
    ) -> Result<Self> {
        let metrics = eval.metrics(budget)?;
        Ok(Self {
            schema_version: PROFILE_SCHEMA_VERSION.to_owned(),
            weights,
            channel_names: problem.channel_names.clone(),
            channels: None,
            combine_mode: mode,
            budget: *budget,
            per_tau: eval
                .per_tau
                .iter()
                .map(|e| TauThreshold {
                    tau: e.tau,
                    delta: e.op.delta,
                    fpr: e.op.fpr,
                    tpr: e.op.tpr,
                    bacc: bacc(&e.op),
                })
                .collect(),
            excluded_taus: eval.excluded_taus.clone(),
            loss: eval.loss,
            metric_name: metrics.metric_name,
            metric: metrics.metric,
            bacc_mean: metrics.bacc_mean,
            calibrators: None,
        })
    }

    pub fn threshold(&self, tau: f64) -> Result<f64> {
        self.per_tau
            .iter()
            .find(|t| (t.tau - tau).abs() <= TAU_MATCH_EPS)
            .map(|t| t.delta)
            .ok_or(Error::UnknownTau(tau))
    }

    /// Combined scores of raw detections, recomputing channels as recorded in the profile.
    pub fn score_dataset(&self, dataset: &Dataset) -> Result<Vec<f64>> {
        let config = self
            .channels
            .ok_or_else(|| Error::Config("profile does not record its channel configuration".into()))?;
        let rows = compute_uncertainties(dataset, &config, self.calibrators.as_ref())?;
        self.score_rows(&rows)
    }

    pub fn score_rows(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
        rows.iter()
            .map(|r| combine_values(self.weights.as_slice(), r, self.combine_mode))
            .collect()
    }
}

/// Randomly shifted Halton sequence in the unit cube.
struct Halton {
    index: u64,
    shift: Vec<f64>,
}

const HALTON_BASES: [u64; 8] = [2, 3, 5, 7, 11, 13, 17, 19];

impl Halton {
    fn new(dim: usize, rng: &mut impl Rng) -> Self {
        assert!(dim <= HALTON_BASES.len(), "Halton sequence supports at most 8 dimensions");
        Self {
            index: 1,
            shift: (0..dim).map(|_| rng.random::<f64>()).collect(),
        }
    }

    fn radical_inverse(mut n: u64, base: u64) -> f64 {
        let mut inv = 1.0 / base as f64;
        let mut out = 0.0;
        while n > 0 {
            out += (n % base) as f64 * inv;
            n /= base;
            inv /= base as f64;
        }
        out
    }

    fn next(&mut self) -> Vec<f64> {
        let k = self.index;
        self.index += 1;
        self.shift
            .iter()
            .zip(HALTON_BASES)
            .map(|(s, b)| (Self::radical_inverse(k, b) + s).fract())
            .collect()
    }
}

/// Initial design: the all-ones vector, then every other corner of `[0, 1]^dim`.
pub fn initial_design(dim: usize) -> Vec<Vec<f64>> {
    let full = corner_count(dim) - 1;
    std::iter::once(full)
        .chain((0..full).rev())
        .map(|mask| (0..dim).map(|k| f64::from(u8::from(mask >> (dim - 1 - k) & 1 == 1))).collect())
        .collect()
}

/// Minimizes the mean step loss over the weight cube, returning the search trace as well.
pub fn optimize_traced(
    problem: &ThresholdingProblem,
    budget: &Budget,
    config: &OptimizerConfig,
) -> Result<(ThresholdProfile, Vec<Trial>)> {
    let dim = problem.dim();
    if dim == 0 {
        return Err(Error::Config("problem has no channels".into()));
    }
    config.validate(dim)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut halton = Halton::new(dim, &mut rng);
    let noise = Normal::new(0.0, config.perturbation_scale).map_err(|e| Error::Config(e.to_string()))?;

    let mut trace = Vec::with_capacity(config.iterations);
    let mut best: Option<(Vec<f64>, LossEvaluation)> = None;
    let mut design = initial_design(dim).into_iter();

    for step in 0..config.iterations {
        let candidate = match design.next() {
            Some(corner) => corner,
            None if step % 2 == 0 => halton.next(),
            None => {
                let center = &best.as_ref().expect("corners evaluated first").0;
                center
                    .iter()
                    .map(|w| (w + noise.sample(&mut rng)).clamp(0.0, 1.0))
                    .collect()
            }
        };
        let eval = evaluate_loss(&candidate, problem, budget, config.combine_mode)?;
        let improved = best.as_ref().is_none_or(|(_, b)| eval.loss < b.loss);
        let loss = eval.loss;
        if improved {
            best = Some((candidate.clone(), eval));
        }
        trace.push(Trial {
            weights: candidate,
            loss,
            best_so_far: best.as_ref().map_or(loss, |(_, b)| b.loss),
        });
    }

    let (weights, eval) = best.expect("at least one evaluation");
    let profile = ThresholdProfile::from_evaluation(
        WeightVector::new(weights)?,
        problem,
        budget,
        config.combine_mode,
        &eval,
    )?;
    Ok((profile, trace))
}

pub fn optimize(problem: &ThresholdingProblem, budget: &Budget, config: &OptimizerConfig) -> Result<ThresholdProfile> {
    optimize_traced(problem, budget, config).map(|(p, _)| p)
}

/// Builds a profile for fixed weights without searching.
pub fn profile_for_weights(
    weights: WeightVector,
    problem: &ThresholdingProblem,
    budget: &Budget,
    mode: CombineMode,
) -> Result<ThresholdProfile> {
    let eval = evaluate_loss(weights.as_slice(), problem, budget, mode)?;
    ThresholdProfile::from_evaluation(weights, problem, budget, mode, &eval)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterDecision {
    pub detection: usize,
    pub score: f64,
    pub keep: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterOutcome {
    pub tau: f64,
    pub delta: f64,
    pub decisions: Vec<FilterDecision>,
}

impl FilterOutcome {
    pub fn kept(&self) -> impl Iterator<Item = usize> + '_ {
        self.decisions.iter().filter(|d| d.keep).map(|d| d.detection)
    }

    pub fn removed(&self) -> impl Iterator<Item = usize> + '_ {
        self.decisions.iter().filter(|d| !d.keep).map(|d| d.detection)
    }
}

/// Keeps a detection iff its combined score is at most the profile's threshold at `tau`.
pub fn apply_profile(profile: &ThresholdProfile, scores: &[f64], tau: f64) -> Result<FilterOutcome> {
    let delta = profile.threshold(tau)?;
    Ok(FilterOutcome {
        tau,
        delta,
        decisions: scores
            .iter()
            .enumerate()
            .map(|(detection, &score)| FilterDecision {
                detection,
                score,
                keep: score <= delta,
            })
            .collect(),
    })
}
