//! Training loop, evaluation, cross-validation, holdout testing and
//! forecasting.
//!
//! Everything here is deterministic in the configured seed. Per-sample
//! gradients inside a batch are computed in parallel but always reduced in
//! sample order, and folds are collected in fold order, so thread count and
//! scheduling never change a reported number.

use std::collections::BTreeSet;
use std::io::{BufRead, Read, Write};

use chrono::{Duration, NaiveDateTime};
use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{apply_scaler, fit_scaler, FeatureFrame, ScalerParams, FEATURE_COUNT, MSWS_INDEX};
use crate::ingest::{DATETIME_FORMAT, STEP_HOURS};
use crate::nn::{
    read_checkpoint, write_checkpoint, AdamConfig, AdamState, Architecture, CheckpointMeta, Matrix, Mode,
    NetworkParams,
};
use crate::window::{build_all_windows, build_windows, kfold_split, FoldPlan, WindowSample, WindowSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub t1: usize,
    pub t2: usize,
    /// Hidden units per direction in every BiLSTM layer.
    pub hidden: usize,
    pub layers: usize,
    pub learning_rate: f64,
    /// Drop probability between BiLSTM layers.
    pub dropout: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub folds: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            t1: 4,
            t2: 1,
            hidden: 64,
            layers: 4,
            learning_rate: 0.01,
            dropout: 0.02,
            batch_size: 32,
            max_epochs: 200,
            patience: 20,
            seed: 0,
            folds: 5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.spec().map_err(|e| Error::Config(e.to_string()))?;
        let sizes = [
            ("hidden", self.hidden),
            ("layers", self.layers),
            ("batch_size", self.batch_size),
            ("max_epochs", self.max_epochs),
            ("patience", self.patience),
        ];
        if let Some((name, _)) = sizes.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.folds < 2 {
            return Err(Error::Config(format!("folds must be >= 2, got {}", self.folds)));
        }
        // A zero rate is allowed: it freezes the parameters, which is a useful check.
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::Config(format!("learning_rate {} is invalid", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} not in [0, 1)", self.dropout)));
        }
        Ok(())
    }

    pub fn spec(&self) -> Result<WindowSpec> {
        WindowSpec::new(self.t1, self.t2)
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            input_size: FEATURE_COUNT,
            hidden_size: self.hidden,
            layers: self.layers,
            outputs: self.t2,
            dropout: self.dropout,
        }
    }

    pub fn with_window(self, spec: WindowSpec) -> Self {
        TrainConfig {
            t1: spec.t1,
            t2: spec.t2,
            ..self
        }
    }
}

/// Pooled error statistics in knots.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mae: f64,
    pub rmse: f64,
    /// Number of predicted values pooled (windows × t2).
    pub count: usize,
}

impl Metrics {
    pub fn from_errors(errors: impl IntoIterator<Item = f64>) -> Result<Self> {
        let (mut abs, mut sq, mut n) = (0.0, 0.0, 0usize);
        for e in errors {
            abs += e.abs();
            sq += e * e;
            n += 1;
        }
        if n == 0 {
            return Err(Error::EmptyEvaluation);
        }
        Ok(Self::from_sums(abs, sq, n))
    }

    fn from_sums(abs: f64, sq: f64, n: usize) -> Self {
        let mae = abs / n as f64;
        let rmse = (sq / n as f64).sqrt();
        // RMSE >= MAE always holds exactly; rounding can leave rmse an ulp
        // below mae when all errors are equal in magnitude.
        debug_assert!(mae - rmse <= 1e-12 * mae.max(1.0));
        Metrics {
            mae,
            rmse: rmse.max(mae),
            count: n,
        }
    }

    /// Metrics of the union of the populations behind `parts`.
    pub fn pool(parts: &[Metrics]) -> Result<Self> {
        let n: usize = parts.iter().map(|m| m.count).sum();
        if n == 0 {
            return Err(Error::EmptyEvaluation);
        }
        let abs = parts.iter().map(|m| m.mae * m.count as f64).sum();
        let sq = parts.iter().map(|m| m.rmse * m.rmse * m.count as f64).sum();
        Ok(Self::from_sums(abs, sq, n))
    }
}

/// Pooled metrics plus the per-horizon-step breakdown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub overall: Metrics,
    pub per_step: Vec<Metrics>,
}

impl Evaluation {
    fn from_predictions(windows: &[WindowSample], predictions: &[Vec<f64>]) -> Result<Self> {
        let Some(first) = windows.first() else {
            return Err(Error::EmptyEvaluation);
        };
        let t2 = first.target.len();
        let errors = |step: Option<usize>| {
            windows.iter().zip(predictions).flat_map(move |(w, p)| {
                w.target
                    .iter()
                    .zip(p)
                    .enumerate()
                    .filter(move |(k, _)| step.is_none_or(|s| s == *k))
                    .map(|(_, (y, p))| p - y)
            })
        };
        Ok(Evaluation {
            overall: Metrics::from_errors(errors(None))?,
            per_step: (0..t2).map(|k| Metrics::from_errors(errors(Some(k)))).collect::<Result<_>>()?,
        })
    }

    pub fn pool(parts: &[&Evaluation]) -> Result<Self> {
        let overall = Metrics::pool(&parts.iter().map(|e| e.overall).collect::<Vec<_>>())?;
        let steps = parts.first().map_or(0, |e| e.per_step.len());
        let per_step = (0..steps)
            .map(|k| Metrics::pool(&parts.iter().map(|e| e.per_step[k]).collect::<Vec<_>>()))
            .collect::<Result<_>>()?;
        Ok(Evaluation { overall, per_step })
    }
}

pub fn predict_all(params: &NetworkParams, windows: &[WindowSample]) -> Result<Vec<Vec<f64>>> {
    windows.par_iter().map(|w| params.predict(&w.input)).collect()
}

pub fn evaluate(params: &NetworkParams, windows: &[WindowSample]) -> Result<Evaluation> {
    Evaluation::from_predictions(windows, &predict_all(params, windows)?)
}

/// Repeats the last observed MSWS for every horizon step.
pub fn persistence_baseline(windows: &[WindowSample]) -> Result<Evaluation> {
    let predictions: Vec<Vec<f64>> = windows
        .iter()
        .map(|w| vec![w.last_observed_msws(); w.target.len()])
        .collect();
    Evaluation::from_predictions(windows, &predictions)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training-mode MSE over the epoch's samples.
    pub train_loss: f64,
    pub val_mae: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: NetworkParams,
    pub history: Vec<EpochRecord>,
    /// Epoch whose parameters were returned (1-based).
    pub best_epoch: usize,
}

fn check_windows(windows: &[WindowSample], spec: WindowSpec) -> Result<()> {
    match windows
        .iter()
        .find(|w| w.input.shape() != (spec.t1, FEATURE_COUNT) || w.target.len() != spec.t2)
    {
        Some(w) => Err(Error::Shape(format!(
            "window {}#{} is not {}x{FEATURE_COUNT} -> {}",
            w.storm_id, w.start, spec.t1, spec.t2
        ))),
        None => Ok(()),
    }
}

/// Seeded initialization with the head bias set to the per-step mean
/// training target, so the untrained network starts at the climatological
/// forecast instead of zero knots.
pub fn initial_params(config: &TrainConfig, train: &[WindowSample]) -> Result<NetworkParams> {
    let mut params = NetworkParams::init(config.architecture(), config.seed)?;
    if !train.is_empty() {
        let n = train.len() as f64;
        for (k, b) in params.head.b.iter_mut().enumerate() {
            *b = train.iter().map(|w| w.target[k]).sum::<f64>() / n;
        }
    }
    Ok(params)
}

/// Mini-batch Adam on MSE with per-epoch seeded shuffling. With a non-empty
/// validation set the parameters of the best validation-MAE epoch are
/// returned and training stops after `patience` epochs without
/// improvement; otherwise the final parameters are returned.
pub fn train(config: &TrainConfig, train: &[WindowSample], val: &[WindowSample]) -> Result<TrainOutcome> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::NoTrainingWindows(String::new()));
    }
    let spec = config.spec()?;
    check_windows(train, spec)?;
    check_windows(val, spec)?;

    let mut params = initial_params(config, train)?;
    let mut adam = AdamState::for_network(
        AdamConfig {
            learning_rate: config.learning_rate,
            ..AdamConfig::default()
        },
        &params,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);

    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, NetworkParams)> = None;
    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (batch, chunk) in order.chunks(config.batch_size).enumerate() {
            let seeds: Vec<u64> = chunk.iter().map(|_| rng.next_u64()).collect();
            let results: Vec<Result<(f64, NetworkParams)>> = chunk
                .par_iter()
                .zip(&seeds)
                .map(|(&i, &seed)| {
                    let w = &train[i];
                    if config.dropout > 0.0 {
                        let mut sample_rng = ChaCha8Rng::seed_from_u64(seed);
                        params.sample_gradient(&w.input, &w.target, Mode::Train(&mut sample_rng))
                    } else {
                        params.sample_gradient(&w.input, &w.target, Mode::Eval)
                    }
                })
                .collect();
            let scale = 1.0 / chunk.len() as f64;
            let mut grad = NetworkParams::zeros(params.arch);
            for r in results {
                let (loss, g) = r?;
                if !loss.is_finite() {
                    return Err(Error::Diverged { epoch, batch });
                }
                epoch_loss += loss;
                grad.add_scaled(&g, scale);
            }
            adam.step_network(&mut params, &grad);
            if !params.is_finite() {
                return Err(Error::Diverged { epoch, batch });
            }
        }

        let val_mae = if val.is_empty() {
            None
        } else {
            Some(evaluate(&params, val)?.overall.mae)
        };
        history.push(EpochRecord {
            epoch,
            train_loss: epoch_loss / train.len() as f64,
            val_mae,
        });
        if let Some(mae) = val_mae {
            if best.as_ref().is_none_or(|(b, _, _)| mae < *b) {
                best = Some((mae, epoch, params.clone()));
            } else if epoch - best.as_ref().map_or(0, |(_, e, _)| *e) >= config.patience {
                break;
            }
        }
    }
    Ok(match best {
        Some((_, best_epoch, params)) => TrainOutcome {
            params,
            history,
            best_epoch,
        },
        None => TrainOutcome {
            params,
            best_epoch: history.len(),
            history,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastStep {
    /// 1-based horizon step.
    pub step: usize,
    pub valid_time: NaiveDateTime,
    pub predicted_kt: f64,
    pub actual_kt: Option<f64>,
    pub baseline_kt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastResult {
    pub storm_id: String,
    /// Time of the last observed fix; step `k` is valid `3k` hours later.
    pub anchor_time: NaiveDateTime,
    pub steps: Vec<ForecastStep>,
}

impl ForecastResult {
    fn new(storm_id: &str, anchor_time: NaiveDateTime, predicted: &[f64], last_msws: f64) -> Self {
        let steps = predicted
            .iter()
            .enumerate()
            .map(|(k, &p)| ForecastStep {
                step: k + 1,
                valid_time: anchor_time + Duration::hours(STEP_HOURS * (k as i64 + 1)),
                predicted_kt: p,
                actual_kt: None,
                baseline_kt: last_msws,
            })
            .collect();
        ForecastResult {
            storm_id: storm_id.to_string(),
            anchor_time,
            steps,
        }
    }

    /// Fills `actual_kt` from a frame's fixes at matching valid times.
    pub fn attach_actuals(&mut self, frame: &FeatureFrame) {
        for step in &mut self.steps {
            step.actual_kt = frame
                .timestamps
                .iter()
                .position(|t| *t == step.valid_time)
                .map(|i| frame.vectors[i].msws);
        }
    }
}

/// Forecasts the `t2` steps following the last fix of `history` (an
/// unscaled frame), from its last `t1` fixes.
pub fn forecast(
    params: &NetworkParams,
    scaler: &ScalerParams,
    spec: WindowSpec,
    history: &FeatureFrame,
) -> Result<ForecastResult> {
    if history.len() < spec.t1 {
        return Err(Error::ShortHistory {
            required: spec.t1,
            available: history.len(),
        });
    }
    let tail = history.len() - spec.t1;
    let rows: Vec<f64> = history.vectors[tail..].iter().flat_map(|v| scaler.scale_row(v)).collect();
    let input = Matrix::from_vec(spec.t1, FEATURE_COUNT, rows);
    let predicted = params.predict(&input)?;
    if let Some(p) = predicted.iter().find(|p| !p.is_finite()) {
        return Err(Error::Domain(format!("non-finite forecast {p}")));
    }
    Ok(ForecastResult::new(
        &history.storm_id,
        history.timestamps[history.len() - 1],
        &predicted,
        history.vectors[history.len() - 1].msws,
    ))
}

pub const FORECAST_HEADER: [&str; 7] = [
    "storm_id",
    "anchor_time",
    "step",
    "valid_time",
    "predicted_kt",
    "actual_kt",
    "baseline_kt",
];

pub fn write_forecasts<W: Write>(sink: W, results: &[ForecastResult]) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(FORECAST_HEADER)?;
    for r in results {
        let anchor = r.anchor_time.format(DATETIME_FORMAT).to_string();
        for s in &r.steps {
            w.write_record([
                r.storm_id.clone(),
                anchor.clone(),
                s.step.to_string(),
                s.valid_time.format(DATETIME_FORMAT).to_string(),
                s.predicted_kt.to_string(),
                s.actual_kt.map(|a| a.to_string()).unwrap_or_default(),
                s.baseline_kt.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io("<forecast table>", e))
}

/// Parses a forecast table; consecutive rows sharing storm and anchor form
/// one result.
pub fn read_forecasts<R: Read>(source: R) -> Result<Vec<ForecastResult>> {
    let mut r = csv::Reader::from_reader(source);
    if r.headers()?.iter().ne(FORECAST_HEADER) {
        return Err(Error::Format("unexpected forecast table header".into()));
    }
    let time = |s: &str| {
        NaiveDateTime::parse_from_str(s, DATETIME_FORMAT).map_err(|e| Error::Format(format!("bad time '{s}': {e}")))
    };
    let num = |s: &str| s.parse::<f64>().map_err(|e| Error::Format(format!("bad number '{s}': {e}")));
    let mut out: Vec<ForecastResult> = Vec::new();
    for record in r.records() {
        let rec = record?;
        let storm_id = &rec[0];
        let anchor_time = time(&rec[1])?;
        let step = ForecastStep {
            step: rec[2].parse().map_err(|e| Error::Format(format!("bad step '{}': {e}", &rec[2])))?,
            valid_time: time(&rec[3])?,
            predicted_kt: num(&rec[4])?,
            actual_kt: if rec[5].is_empty() { None } else { Some(num(&rec[5])?) },
            baseline_kt: num(&rec[6])?,
        };
        match out.last_mut() {
            Some(last) if last.storm_id == storm_id && last.anchor_time == anchor_time => last.steps.push(step),
            _ => out.push(ForecastResult {
                storm_id: storm_id.to_string(),
                anchor_time,
                steps: vec![step],
            }),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoldoutStormReport {
    pub storm_id: String,
    pub name: Option<String>,
    pub windows: usize,
    /// `None` when the storm is too short for a single window.
    pub evaluation: Option<Evaluation>,
    pub baseline: Option<Evaluation>,
    pub skipped: Option<String>,
}

#[derive(Debug, Clone)]
pub struct HoldoutResult {
    pub storms: Vec<HoldoutStormReport>,
    pub forecasts: Vec<ForecastResult>,
}

/// Evaluates each (unscaled) holdout storm with the training scaler.
pub fn test_holdout(
    params: &NetworkParams,
    scaler: &ScalerParams,
    holdout: &[FeatureFrame],
    spec: WindowSpec,
) -> Result<HoldoutResult> {
    let mut storms = Vec::with_capacity(holdout.len());
    let mut forecasts = Vec::new();
    for frame in holdout {
        let windows = build_windows(&apply_scaler(scaler, frame), spec);
        if windows.is_empty() {
            storms.push(HoldoutStormReport {
                storm_id: frame.storm_id.clone(),
                name: frame.name.clone(),
                windows: 0,
                evaluation: None,
                baseline: None,
                skipped: Some(format!(
                    "{} fixes, a window needs {}",
                    frame.len(),
                    spec.span()
                )),
            });
            continue;
        }
        let predictions = predict_all(params, &windows)?;
        for (w, p) in windows.iter().zip(&predictions) {
            let anchor = frame.timestamps[w.start + spec.t1 - 1];
            let mut f = ForecastResult::new(&frame.storm_id, anchor, p, w.last_observed_msws());
            for (s, y) in f.steps.iter_mut().zip(&w.target) {
                s.actual_kt = Some(*y);
            }
            forecasts.push(f);
        }
        storms.push(HoldoutStormReport {
            storm_id: frame.storm_id.clone(),
            name: frame.name.clone(),
            windows: windows.len(),
            evaluation: Some(Evaluation::from_predictions(&windows, &predictions)?),
            baseline: Some(persistence_baseline(&windows)?),
            skipped: None,
        });
    }
    Ok(HoldoutResult { storms, forecasts })
}

/// A trained network with everything needed to forecast from raw fixes.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub params: NetworkParams,
    pub scaler: ScalerParams,
    pub spec: WindowSpec,
    pub seed: u64,
}

impl TrainedModel {
    pub fn save<W: Write>(&self, sink: W, scaler_file: Option<String>) -> Result<()> {
        let meta = CheckpointMeta {
            t1: self.spec.t1,
            t2: self.spec.t2,
            seed: self.seed,
            scaler: Some(self.scaler.clone()),
            scaler_file,
        };
        write_checkpoint(sink, &meta, &self.params)
    }

    pub fn load<R: BufRead>(source: R) -> Result<Self> {
        let (header, params) = read_checkpoint(source)?;
        let spec = WindowSpec::new(header.meta.t1, header.meta.t2)?;
        if params.arch.outputs != spec.t2 || params.arch.input_size != FEATURE_COUNT {
            return Err(Error::Checkpoint(format!(
                "architecture {:?} does not fit t1={} t2={}",
                params.arch, spec.t1, spec.t2
            )));
        }
        let scaler = header
            .meta
            .scaler
            .ok_or_else(|| Error::Checkpoint("checkpoint carries no scaler".into()))?;
        Ok(TrainedModel {
            params,
            scaler,
            spec,
            seed: header.meta.seed,
        })
    }

    pub fn forecast(&self, history: &FeatureFrame) -> Result<ForecastResult> {
        forecast(&self.params, &self.scaler, self.spec, history)
    }
}

fn contributing(frames: &[FeatureFrame], spec: WindowSpec) -> Vec<&FeatureFrame> {
    let mut out: Vec<&FeatureFrame> = frames.iter().filter(|f| spec.windows_in(f.len()) > 0).collect();
    out.sort_by(|a, b| a.storm_id.cmp(&b.storm_id));
    out
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub model: TrainedModel,
    pub outcome: TrainOutcome,
    pub windows: Vec<WindowSample>,
    pub storms: usize,
}

/// Fits the scaler on all given (unscaled, non-holdout) frames and trains
/// on all of their windows without a validation set.
pub fn fit_model(config: &TrainConfig, frames: &[FeatureFrame]) -> Result<FitResult> {
    config.validate()?;
    let spec = config.spec()?;
    let used = contributing(frames, spec);
    if used.is_empty() {
        return Err(Error::NoTrainingWindows(format!(
            " (t1={}, t2={}, longest storm {} fixes)",
            spec.t1,
            spec.t2,
            frames.iter().map(FeatureFrame::len).max().unwrap_or(0)
        )));
    }
    let owned: Vec<FeatureFrame> = used.iter().map(|f| (*f).clone()).collect();
    let scaler = fit_scaler(&owned)?;
    let scaled: Vec<FeatureFrame> = owned.iter().map(|f| apply_scaler(&scaler, f)).collect();
    let windows = build_all_windows(&scaled, spec);
    let outcome = train(config, &windows, &[])?;
    Ok(FitResult {
        model: TrainedModel {
            params: outcome.params.clone(),
            scaler,
            spec,
            seed: config.seed,
        },
        outcome,
        windows,
        storms: used.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub train_storms: usize,
    pub val_storms: usize,
    pub train_windows: usize,
    pub val_windows: usize,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub validation: Evaluation,
    pub baseline: Evaluation,
    pub history: Vec<EpochRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: TrainConfig,
    /// Storms contributing at least one window (holdouts excluded).
    pub storms: usize,
    pub windows: usize,
    pub plan: FoldPlan,
    pub folds: Vec<FoldReport>,
    /// Validation metrics pooled over all folds.
    pub mean: Evaluation,
    pub baseline: Evaluation,
    /// Per-storm holdout metrics, pooled over the fold models.
    pub holdout: Vec<HoldoutStormReport>,
}

impl EvalReport {
    /// Every (MAE, RMSE) pair in the report.
    pub fn metric_cells(&self) -> Vec<Metrics> {
        let mut cells = Vec::new();
        let mut push = |e: &Evaluation| {
            cells.push(e.overall);
            cells.extend(e.per_step.iter().copied());
        };
        push(&self.mean);
        push(&self.baseline);
        for f in &self.folds {
            push(&f.validation);
            push(&f.baseline);
        }
        for h in &self.holdout {
            h.evaluation.iter().chain(&h.baseline).for_each(&mut push);
        }
        cells
    }
}

#[derive(Debug, Clone)]
pub struct CrossValidation {
    pub report: EvalReport,
    /// One model per fold, in fold order.
    pub models: Vec<TrainedModel>,
}

struct FoldRun {
    report: FoldReport,
    model: TrainedModel,
    holdout: HoldoutResult,
}

fn run_fold(
    config: &TrainConfig,
    plan: &FoldPlan,
    fold: usize,
    storms: &[&FeatureFrame],
    holdout: &[FeatureFrame],
) -> Result<FoldRun> {
    let spec = config.spec()?;
    let (val, fit): (Vec<FeatureFrame>, Vec<FeatureFrame>) = storms
        .iter()
        .map(|f| (*f).clone())
        .partition(|f| plan.fold_of(&f.storm_id) == Some(fold));
    let scaler = fit_scaler(&fit)?;
    let scale = |frames: &[FeatureFrame]| -> Vec<FeatureFrame> { frames.iter().map(|f| apply_scaler(&scaler, f)).collect() };
    let train_windows = build_all_windows(&scale(&fit), spec);
    let val_windows = build_all_windows(&scale(&val), spec);
    let fold_config = TrainConfig {
        seed: config.seed.wrapping_add(fold as u64),
        ..*config
    };
    let outcome = train(&fold_config, &train_windows, &val_windows)?;
    let holdout = test_holdout(&outcome.params, &scaler, holdout, spec)?;
    Ok(FoldRun {
        report: FoldReport {
            fold,
            train_storms: fit.len(),
            val_storms: val.len(),
            train_windows: train_windows.len(),
            val_windows: val_windows.len(),
            best_epoch: outcome.best_epoch,
            epochs_run: outcome.history.len(),
            validation: evaluate(&outcome.params, &val_windows)?,
            baseline: persistence_baseline(&val_windows)?,
            history: outcome.history,
        },
        model: TrainedModel {
            params: outcome.params,
            scaler,
            spec,
            seed: fold_config.seed,
        },
        holdout,
    })
}

/// Storm-level k-fold cross-validation over the (unscaled) frames, with
/// every fold model also scored on the holdout frames. Only storms that
/// yield at least one window take part in the split.
pub fn cross_validate(config: &TrainConfig, frames: &[FeatureFrame], holdout: &[FeatureFrame]) -> Result<CrossValidation> {
    config.validate()?;
    let spec = config.spec()?;
    let storms = contributing(frames, spec);
    let ids: Vec<String> = storms.iter().map(|f| f.storm_id.clone()).collect();
    let mut plan = kfold_split(&ids, config.folds, config.seed)?;
    plan.holdout = holdout.iter().map(|f| f.storm_id.clone()).collect::<BTreeSet<_>>();

    let runs: Vec<FoldRun> = (0..config.folds)
        .into_par_iter()
        .map(|fold| run_fold(config, &plan, fold, &storms, holdout))
        .collect::<Result<_>>()?;

    let folds: Vec<FoldReport> = runs.iter().map(|r| r.report.clone()).collect();
    let mean = Evaluation::pool(&folds.iter().map(|f| &f.validation).collect::<Vec<_>>())?;
    let baseline = Evaluation::pool(&folds.iter().map(|f| &f.baseline).collect::<Vec<_>>())?;
    let holdout_reports = (0..holdout.len())
        .map(|i| {
            let per_fold: Vec<&HoldoutStormReport> = runs.iter().map(|r| &r.holdout.storms[i]).collect();
            let pool = |get: fn(&HoldoutStormReport) -> Option<&Evaluation>| -> Result<Option<Evaluation>> {
                let parts: Option<Vec<&Evaluation>> = per_fold.iter().map(|h| get(h)).collect();
                parts.map(|p| Evaluation::pool(&p)).transpose()
            };
            Ok(HoldoutStormReport {
                evaluation: pool(|h| h.evaluation.as_ref())?,
                baseline: pool(|h| h.baseline.as_ref())?,
                ..per_fold[0].clone()
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let report = EvalReport {
        config: *config,
        storms: storms.len(),
        windows: folds.iter().map(|f| f.val_windows).sum(),
        plan,
        folds,
        mean,
        baseline,
        holdout: holdout_reports,
    };
    Ok(CrossValidation {
        report,
        models: runs.into_iter().map(|r| r.model).collect(),
    })
}

/// One row per report: window sizes, training size, pooled validation and
/// holdout metrics, mirroring the usual results-table layout.
pub fn write_report_table<W: Write>(sink: W, reports: &[EvalReport]) -> Result<()> {
    let mut names: Vec<String> = Vec::new();
    for h in reports.iter().flat_map(|r| &r.holdout) {
        let label = h.name.clone().unwrap_or_else(|| h.storm_id.clone());
        if !names.contains(&label) {
            names.push(label);
        }
    }
    let mut header: Vec<String> = ["t1", "t2", "training_cyclones", "training_windows", "val_mae"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend(names.iter().map(|n| format!("{n}_mae")));
    header.push("val_rmse".into());
    header.extend(names.iter().map(|n| format!("{n}_rmse")));
    header.extend(["baseline_mae".to_string(), "baseline_rmse".to_string()]);

    let mut w = csv::Writer::from_writer(sink);
    w.write_record(&header)?;
    for r in reports {
        let lookup = |label: &str| {
            r.holdout
                .iter()
                .find(|h| h.name.as_deref().unwrap_or(&h.storm_id) == label)
                .and_then(|h| h.evaluation.as_ref())
                .map(|e| e.overall)
        };
        let cell = |m: Option<f64>| m.map(|v| v.to_string()).unwrap_or_default();
        let mut row = vec![
            r.config.t1.to_string(),
            r.config.t2.to_string(),
            r.storms.to_string(),
            r.windows.to_string(),
            r.mean.overall.mae.to_string(),
        ];
        row.extend(names.iter().map(|n| cell(lookup(n).map(|m| m.mae))));
        row.push(r.mean.overall.rmse.to_string());
        row.extend(names.iter().map(|n| cell(lookup(n).map(|m| m.rmse))));
        row.push(r.baseline.overall.mae.to_string());
        row.push(r.baseline.overall.rmse.to_string());
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("<report table>", e))
}

/// MSWS column of a window input, for diagnostics.
pub fn input_msws(w: &WindowSample) -> Vec<f64> {
    (0..w.input.rows()).map(|r| w.input.get(r, MSWS_INDEX)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureVector;

    fn sample(input_msws: &[f64], target: &[f64]) -> WindowSample {
        let rows: Vec<f64> = input_msws
            .iter()
            .flat_map(|&m| [0.1, -0.2, m, 0.3, -0.5, 0.2, 0.4])
            .collect();
        WindowSample {
            storm_id: "s".into(),
            start: 0,
            input: Matrix::from_vec(input_msws.len(), FEATURE_COUNT, rows),
            target: target.to_vec(),
        }
    }

    fn tiny(t1: usize, t2: usize) -> TrainConfig {
        TrainConfig {
            t1,
            t2,
            hidden: 3,
            layers: 2,
            batch_size: 2,
            max_epochs: 5,
            patience: 2,
            seed: 11,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn hand_metrics() {
        let m = Metrics::from_errors([3.0, -4.0]).unwrap();
        assert_eq!(m.mae, 3.5);
        assert!((m.rmse - 3.5355).abs() < 1e-4);
        assert_eq!(m.count, 2);
        assert!(Metrics::from_errors([]).is_err());
        let zero = Metrics::from_errors([0.0; 4]).unwrap();
        assert_eq!((zero.mae, zero.rmse), (0.0, 0.0));
    }

    #[test]
    fn pooling_weights_by_count() {
        let a = Metrics::from_errors([1.0, 2.0, 3.0]).unwrap();
        let b = Metrics::from_errors([10.0]).unwrap();
        let pooled = Metrics::pool(&[a, b]).unwrap();
        let direct = Metrics::from_errors([1.0, 2.0, 3.0, 10.0]).unwrap();
        assert!((pooled.mae - direct.mae).abs() < 1e-12);
        assert!((pooled.rmse - direct.rmse).abs() < 1e-12);
        assert_eq!(pooled.count, 4);
    }

    #[test]
    fn persistence_on_rising_storm() {
        let w = sample(&[20.0, 22.0, 24.0, 26.0], &[28.0, 30.0, 32.0, 34.0]);
        let e = persistence_baseline(&[w]).unwrap();
        assert_eq!(e.overall.mae, 5.0);
        assert_eq!(e.per_step.iter().map(|m| m.mae).collect::<Vec<_>>(), vec![2.0, 4.0, 6.0, 8.0]);
        let flat = sample(&[40.0; 3], &[40.0; 2]);
        let e = persistence_baseline(&[flat]).unwrap();
        assert_eq!((e.overall.mae, e.overall.rmse), (0.0, 0.0));
        assert!(persistence_baseline(&[]).is_err());
    }

    #[test]
    fn zero_learning_rate_freezes_parameters() {
        let data = vec![sample(&[30.0, 35.0], &[40.0]), sample(&[50.0, 45.0], &[41.0])];
        let config = TrainConfig {
            learning_rate: 0.0,
            ..tiny(2, 1)
        };
        let out = train(&config, &data, &[]).unwrap();
        assert_eq!(out.params, initial_params(&config, &data).unwrap());
        assert_eq!(out.history.len(), 5);
    }

    #[test]
    fn training_is_deterministic() {
        let data: Vec<WindowSample> = (0..6)
            .map(|i| sample(&[30.0 + i as f64, 32.0], &[35.0 + i as f64, 36.0]))
            .collect();
        let a = train(&tiny(2, 2), &data, &data[..2]).unwrap();
        let b = train(&tiny(2, 2), &data, &data[..2]).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.params, b.params);
        assert!(a.history.iter().all(|h| h.val_mae.is_some()));
    }

    #[test]
    fn empty_training_set_is_an_error() {
        assert!(matches!(train(&tiny(2, 1), &[], &[]), Err(Error::NoTrainingWindows(_))));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let data = vec![sample(&[30.0, 35.0, 36.0], &[40.0])];
        assert!(matches!(train(&tiny(2, 1), &data, &[]), Err(Error::Shape(_))));
    }

    #[test]
    fn divergence_names_epoch_and_batch() {
        let data = vec![sample(&[30.0, 35.0], &[f64::NAN])];
        match train(&tiny(2, 1), &data, &[]) {
            Err(Error::Diverged { epoch: 1, batch: 0 }) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn head_bias_starts_at_mean_target() {
        let data = vec![sample(&[1.0, 2.0], &[10.0, 20.0]), sample(&[1.0, 2.0], &[30.0, 60.0])];
        let p = initial_params(&tiny(2, 2), &data).unwrap();
        assert_eq!(p.head.b, vec![20.0, 40.0]);
    }

    fn frame(len: usize) -> FeatureFrame {
        let t0 = NaiveDateTime::parse_from_str("2019-06-10 00:00", DATETIME_FORMAT).unwrap();
        FeatureFrame {
            storm_id: "X".into(),
            name: Some("Test".into()),
            timestamps: (0..len).map(|i| t0 + Duration::hours(3 * i as i64)).collect(),
            vectors: (0..len)
                .map(|i| FeatureVector::from_array([15.0 + i as f64, 70.0, 30.0 + i as f64, 990.0, 30.0, 45.0, 29.0]))
                .collect(),
            scaled: false,
        }
    }

    fn scaler_for(f: &FeatureFrame) -> ScalerParams {
        let mut wide = f.clone();
        for (i, v) in wide.vectors.iter_mut().enumerate() {
            v.lon += 0.1 * i as f64;
            v.ecp += i as f64;
            v.distance += i as f64;
            v.direction += i as f64;
            v.sst += 0.1 * i as f64;
        }
        fit_scaler(&[wide]).unwrap()
    }

    #[test]
    fn forecast_shape_and_valid_times() {
        let config = tiny(3, 2);
        let f = frame(6);
        let params = NetworkParams::init(config.architecture(), 1).unwrap();
        let spec = config.spec().unwrap();
        let r = forecast(&params, &scaler_for(&f), spec, &f.prefix(3)).unwrap();
        assert_eq!(r.steps.len(), 2);
        assert_eq!(r.anchor_time, f.timestamps[2]);
        assert_eq!(r.steps[0].valid_time, f.timestamps[3]);
        assert_eq!(r.steps[1].valid_time - r.steps[0].valid_time, Duration::hours(3));
        assert_eq!(r.steps[0].baseline_kt, 32.0);
        let again = forecast(&params, &scaler_for(&f), spec, &f.prefix(3)).unwrap();
        assert_eq!(r, again);
        assert!(matches!(
            forecast(&params, &scaler_for(&f), spec, &f.prefix(2)),
            Err(Error::ShortHistory { required: 3, available: 2 })
        ));
        let mut with_actuals = r.clone();
        with_actuals.attach_actuals(&f);
        assert_eq!(with_actuals.steps[1].actual_kt, Some(34.0));
    }

    #[test]
    fn forecast_table_round_trip() {
        let t0 = NaiveDateTime::parse_from_str("2019-06-10 00:00", DATETIME_FORMAT).unwrap();
        let mut a = ForecastResult::new("A", t0, &[41.25, 0.1 + 0.2], 40.0);
        a.steps[0].actual_kt = Some(42.0);
        let b = ForecastResult::new("A", t0 + Duration::hours(3), &[1e-17], 3.0);
        let mut buf = Vec::new();
        write_forecasts(&mut buf, &[a.clone(), b.clone()]).unwrap();
        assert_eq!(read_forecasts(buf.as_slice()).unwrap(), vec![a, b]);
    }

    #[test]
    fn holdout_metrics_match_forecasts() {
        let config = tiny(3, 2);
        let f = frame(7);
        let params = NetworkParams::init(config.architecture(), 2).unwrap();
        let spec = config.spec().unwrap();
        let short = frame(4);
        let out = test_holdout(&params, &scaler_for(&f), &[f.clone(), short], spec).unwrap();
        assert_eq!(out.storms[0].windows, 3);
        assert!(out.storms[1].skipped.is_some());
        let recomputed = Metrics::from_errors(
            out.forecasts
                .iter()
                .flat_map(|r| &r.steps)
                .map(|s| s.predicted_kt - s.actual_kt.unwrap()),
        )
        .unwrap();
        let reported = out.storms[0].evaluation.as_ref().unwrap().overall;
        assert!((recomputed.mae - reported.mae).abs() < 1e-9);
        assert!((recomputed.rmse - reported.rmse).abs() < 1e-9);

        let exact = test_holdout(&params, &scaler_for(&f), &[frame(5)], spec).unwrap();
        assert_eq!(exact.storms[0].windows, 1);
    }

    #[test]
    fn model_checkpoint_round_trip() {
        let config = tiny(3, 2);
        let f = frame(6);
        let model = TrainedModel {
            params: NetworkParams::init(config.architecture(), 5).unwrap(),
            scaler: scaler_for(&f),
            spec: config.spec().unwrap(),
            seed: 5,
        };
        let mut buf = Vec::new();
        model.save(&mut buf, Some("scaler.json".into())).unwrap();
        let back = TrainedModel::load(buf.as_slice()).unwrap();
        assert_eq!(back, model);
        assert_eq!(back.forecast(&f).unwrap(), model.forecast(&f).unwrap());
    }
}
