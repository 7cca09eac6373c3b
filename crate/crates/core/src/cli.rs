//! The `cyclone` command-line front end.
//!
//! Exit codes: 0 on success, 1 for data or domain errors, 2 for usage and
//! I/O errors. Every command writes deterministic output for a given input
//! and seed, and none of them touches its input files.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDateTime;
use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::features::{build_feature_frame, FeatureFrame};
use crate::ingest::{ingest, validate_track, write_btd, write_tracks, ColumnMap, CycloneTrack, GappyTrack, DATETIME_FORMAT};
use crate::sst::{load_sst, write_sst, SstGrid};
use crate::synthetic::{generate, SyntheticConfig};
use crate::train::{
    cross_validate, fit_model, test_holdout, write_forecasts, write_report_table, EvalReport, ForecastResult,
    TrainedModel,
};
use crate::window::{holdout_by_name, write_windows, WindowSpec};

#[derive(Debug, Parser)]
#[command(name = "cyclone", version, about = "Cyclone intensity forecasting with a stacked BiLSTM")]
pub struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Overrides the training seed.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Only print errors (and the forecast table).
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse, impute and validate a best-track file into the track cache.
    Ingest {
        #[arg(long, value_name = "PATH")]
        btd: Option<PathBuf>,
    },
    /// Train one model on every non-holdout storm.
    Train {
        #[arg(long, value_name = "PATH")]
        sst: Option<PathBuf>,
        #[arg(long)]
        t1: Option<usize>,
        #[arg(long)]
        t2: Option<usize>,
    },
    /// Storm-level k-fold cross-validation over the (t1, t2) grid.
    Cv {
        #[arg(long, value_name = "PATH")]
        sst: Option<PathBuf>,
        /// With --t2, replaces the configured grid by a single cell.
        #[arg(long, requires = "t2")]
        t1: Option<usize>,
        #[arg(long, requires = "t1")]
        t2: Option<usize>,
    },
    /// Score the trained model on the holdout storms.
    Evaluate {
        #[arg(long, value_name = "PATH")]
        sst: Option<PathBuf>,
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
    },
    /// Forecast one storm from the fixes up to an anchor.
    Forecast {
        /// Best-track file holding the storm.
        #[arg(long, value_name = "PATH")]
        storm_file: PathBuf,
        /// Storm to use when the file holds several.
        #[arg(long)]
        storm_id: Option<String>,
        /// Last observed fix: a 1-based fix number or a `YYYY-MM-DD HH:MM` time.
        #[arg(long)]
        anchor: String,
        #[arg(long, value_name = "PATH")]
        output: Option<PathBuf>,
        #[arg(long, value_name = "PATH")]
        sst: Option<PathBuf>,
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
    },
    /// Rolling forecasts against observations for the holdout storms (or all storms).
    ExportPlotData {
        #[arg(long, value_name = "PATH")]
        sst: Option<PathBuf>,
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        all: bool,
    },
    /// Write a seeded synthetic best-track file and SST grid.
    Synth {
        #[arg(long, default_value_t = 60)]
        storms: usize,
        #[arg(long, default_value_t = 2019)]
        synth_seed: u64,
    },
    /// Print the effective configuration as JSON.
    ShowConfig,
}

struct Context {
    config: RunConfig,
    quiet: bool,
}

impl Context {
    fn note(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }

    fn out_path(&self, name: &str) -> PathBuf {
        self.config.out_dir.join(name)
    }

    fn ensure_out_dir(&self) -> Result<()> {
        fs::create_dir_all(&self.config.out_dir).map_err(|e| Error::io(&self.config.out_dir, e))
    }

    fn sst_override(&mut self, sst: &Option<PathBuf>) {
        if let Some(p) = sst {
            self.config.sst_path = Some(p.clone());
        }
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_tracks(path: &Path, map: &ColumnMap) -> Result<(Vec<CycloneTrack>, crate::ingest::IngestReport)> {
    let tracks = ingest(open(path)?, map)?;
    for t in &tracks.0 {
        if let Some(v) = validate_track(t).first() {
            return Err(Error::Format(format!("storm '{}': {v}", t.storm_id)));
        }
    }
    Ok(tracks)
}

fn load_cache(ctx: &Context) -> Result<Vec<CycloneTrack>> {
    let path = ctx.out_path("tracks.csv");
    if !path.exists() {
        return Err(Error::NotFound(path));
    }
    Ok(read_tracks(&path, &ColumnMap::default())?.0)
}

fn load_grid(ctx: &Context) -> Result<SstGrid> {
    load_sst(open(ctx.config.require_sst()?)?)
}

/// Feature frames for all tracks; storms without SST coverage are skipped
/// with a note.
fn frames_for(ctx: &Context, tracks: &[CycloneTrack], sst: &SstGrid) -> Result<Vec<FeatureFrame>> {
    let mut frames = Vec::with_capacity(tracks.len());
    for t in tracks {
        match build_feature_frame(t, sst) {
            Ok((f, _)) => frames.push(f),
            Err(e @ Error::SstUnavailable { .. }) => ctx.note(format!("skipping storm '{}': {e}", t.storm_id)),
            Err(e) => return Err(e),
        }
    }
    Ok(frames)
}

fn split_holdout(ctx: &Context, frames: Vec<FeatureFrame>) -> (Vec<FeatureFrame>, Vec<FeatureFrame>) {
    let split = holdout_by_name(frames, &ctx.config.holdout_names);
    for w in &split.warnings {
        ctx.note(format!("warning: {w}"));
    }
    (split.remaining, split.holdout)
}

fn load_model(path: &Path) -> Result<TrainedModel> {
    TrainedModel::load(open(path)?)
}

fn cmd_ingest(ctx: &Context, btd: &Option<PathBuf>) -> Result<()> {
    let path = btd.as_deref().map_or_else(|| ctx.config.require_btd(), Ok)?;
    let (tracks, report) = read_tracks(path, &ctx.config.column_map)?;
    ctx.ensure_out_dir()?;
    write_tracks(create(&ctx.out_path("tracks.csv"))?, &tracks)?;
    write_json(&ctx.out_path("ingest_report.json"), &report)?;
    ctx.note(format!(
        "ingested {} storms ({} fixes, {} inserted); dropped {} rows",
        tracks.len(),
        tracks.iter().map(CycloneTrack::len).sum::<usize>(),
        report.fixes_inserted,
        report.records_dropped.count
    ));
    Ok(())
}

fn cmd_train(ctx: &Context) -> Result<()> {
    let tracks = load_cache(ctx)?;
    let sst = load_grid(ctx)?;
    let (train_frames, _) = split_holdout(ctx, frames_for(ctx, &tracks, &sst)?);
    let config = &ctx.config.train;
    let fit = fit_model(config, &train_frames)?;
    ctx.ensure_out_dir()?;
    let ckpt = ctx.config.checkpoint_path();
    fit.model.save(create(&ckpt)?, Some("scaler.json".into()))?;
    fs::write(ctx.out_path("scaler.json"), fit.model.scaler.to_json()? + "\n")
        .map_err(|e| Error::io(ctx.out_path("scaler.json"), e))?;
    write_windows(create(&ctx.out_path("windows.bin"))?, fit.model.spec, &fit.windows)?;
    write_json(&ctx.out_path("train_history.json"), &fit.outcome.history)?;
    ctx.note(format!(
        "trained on {} windows from {} storms; final loss {:.4}; checkpoint {}",
        fit.windows.len(),
        fit.storms,
        fit.outcome.history.last().map_or(f64::NAN, |h| h.train_loss),
        ckpt.display()
    ));
    Ok(())
}

fn cmd_cv(ctx: &Context, cell: Option<WindowSpec>) -> Result<()> {
    let tracks = load_cache(ctx)?;
    let sst = load_grid(ctx)?;
    let (frames, holdout) = split_holdout(ctx, frames_for(ctx, &tracks, &sst)?);
    let grid = cell.map_or_else(|| ctx.config.grid.clone(), |c| vec![c]);
    ctx.ensure_out_dir()?;
    let ckpt_dir = ctx.out_path("cv");
    fs::create_dir_all(&ckpt_dir).map_err(|e| Error::io(&ckpt_dir, e))?;
    let mut reports: Vec<EvalReport> = Vec::with_capacity(grid.len());
    for spec in grid {
        let config = ctx.config.train.with_window(spec);
        let cv = cross_validate(&config, &frames, &holdout)?;
        for (fold, model) in cv.models.iter().enumerate() {
            let path = ckpt_dir.join(format!("t1_{}_t2_{}_fold{fold}.ckpt", spec.t1, spec.t2));
            model.save(create(&path)?, None)?;
        }
        ctx.note(format!(
            "t1={} t2={}: val MAE {:.3} RMSE {:.3} (persistence MAE {:.3}) over {} windows",
            spec.t1, spec.t2, cv.report.mean.overall.mae, cv.report.mean.overall.rmse, cv.report.baseline.overall.mae, cv.report.windows
        ));
        reports.push(cv.report);
    }
    write_json(&ctx.out_path("cv_report.json"), &reports)?;
    write_report_table(create(&ctx.out_path("cv_table.csv"))?, &reports)
}

fn checkpoint_or_default(ctx: &Context, checkpoint: &Option<PathBuf>) -> PathBuf {
    checkpoint.clone().unwrap_or_else(|| ctx.config.checkpoint_path())
}

fn cmd_evaluate(ctx: &Context, checkpoint: &Option<PathBuf>) -> Result<()> {
    let model = load_model(&checkpoint_or_default(ctx, checkpoint))?;
    let tracks = load_cache(ctx)?;
    let sst = load_grid(ctx)?;
    let (_, holdout) = split_holdout(ctx, frames_for(ctx, &tracks, &sst)?);
    let result = test_holdout(&model.params, &model.scaler, &holdout, model.spec)?;
    ctx.ensure_out_dir()?;
    write_json(&ctx.out_path("holdout_report.json"), &result.storms)?;
    write_forecasts(create(&ctx.out_path("holdout_forecasts.csv"))?, &result.forecasts)?;
    for s in &result.storms {
        match (&s.evaluation, &s.skipped) {
            (Some(e), _) => ctx.note(format!(
                "{}: MAE {:.3} RMSE {:.3} over {} windows",
                s.name.as_deref().unwrap_or(&s.storm_id),
                e.overall.mae,
                e.overall.rmse,
                s.windows
            )),
            (None, Some(why)) => ctx.note(format!("{}: skipped ({why})", s.storm_id)),
            (None, None) => {}
        }
    }
    Ok(())
}

/// Resolves `--anchor` to the number of observed fixes.
fn observed_fixes(anchor: &str, frame: &FeatureFrame) -> Result<usize> {
    if let Ok(n) = anchor.trim().parse::<usize>() {
        if n == 0 || n > frame.len() {
            return Err(Error::Config(format!("anchor fix {n} outside 1..={}", frame.len())));
        }
        return Ok(n);
    }
    let time = NaiveDateTime::parse_from_str(anchor.trim(), DATETIME_FORMAT)
        .map_err(|_| Error::Config(format!("anchor '{anchor}' is neither a fix number nor a time")))?;
    frame
        .timestamps
        .iter()
        .position(|t| *t == time)
        .map(|i| i + 1)
        .ok_or_else(|| Error::Config(format!("storm '{}' has no fix at {anchor}", frame.storm_id)))
}

fn cmd_forecast(
    ctx: &Context,
    storm_file: &Path,
    storm_id: &Option<String>,
    anchor: &str,
    output: &Option<PathBuf>,
    checkpoint: &Option<PathBuf>,
) -> Result<()> {
    let model = load_model(&checkpoint_or_default(ctx, checkpoint))?;
    let (tracks, _) = read_tracks(storm_file, &ctx.config.column_map)?;
    let track = match storm_id {
        Some(id) => tracks
            .iter()
            .find(|t| &t.storm_id == id)
            .ok_or_else(|| Error::Config(format!("storm '{id}' not in {}", storm_file.display())))?,
        None if tracks.len() == 1 => &tracks[0],
        None => {
            return Err(Error::Config(format!(
                "{} holds {} storms; pick one with --storm-id",
                storm_file.display(),
                tracks.len()
            )))
        }
    };
    let (frame, _) = build_feature_frame(track, &load_grid(ctx)?)?;
    let observed = observed_fixes(anchor, &frame)?;
    let mut result = model.forecast(&frame.prefix(observed))?;
    result.attach_actuals(&frame);

    let mut table = Vec::new();
    write_forecasts(&mut table, std::slice::from_ref(&result))?;
    to_stdout(&table)?;
    if let Some(path) = output {
        fs::write(path, &table).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

fn cmd_export_plot_data(ctx: &Context, checkpoint: &Option<PathBuf>, all: bool) -> Result<()> {
    let model = load_model(&checkpoint_or_default(ctx, checkpoint))?;
    let tracks = load_cache(ctx)?;
    let sst = load_grid(ctx)?;
    let frames = frames_for(ctx, &tracks, &sst)?;
    let selected = if all { frames } else { split_holdout(ctx, frames).1 };
    let result = test_holdout(&model.params, &model.scaler, &selected, model.spec)?;
    ctx.ensure_out_dir()?;
    let path = ctx.out_path("plot_data.csv");
    write_plot_data(create(&path)?, &result.forecasts)?;
    ctx.note(format!("{} forecasts written to {}", result.forecasts.len(), path.display()));
    Ok(())
}

/// Long-format table: one row per (anchor, lead time) with observation,
/// model and persistence values.
pub fn write_plot_data<W: Write>(sink: W, forecasts: &[ForecastResult]) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["storm_id", "anchor_time", "valid_time", "lead_hours", "actual_kt", "predicted_kt", "baseline_kt"])?;
    for f in forecasts {
        for s in &f.steps {
            w.write_record([
                f.storm_id.clone(),
                f.anchor_time.format(DATETIME_FORMAT).to_string(),
                s.valid_time.format(DATETIME_FORMAT).to_string(),
                (s.valid_time - f.anchor_time).num_hours().to_string(),
                s.actual_kt.map(|a| a.to_string()).unwrap_or_default(),
                s.predicted_kt.to_string(),
                s.baseline_kt.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io("<plot data>", e))
}

fn cmd_synth(ctx: &Context, storms: usize, seed: u64) -> Result<()> {
    let set = generate(&SyntheticConfig {
        storms,
        seed,
        ..SyntheticConfig::default()
    })?;
    ctx.ensure_out_dir()?;
    let gappy: Vec<GappyTrack> = set.tracks.iter().map(GappyTrack::from).collect();
    write_btd(create(&ctx.out_path("synthetic_btd.csv"))?, &gappy)?;
    write_sst(create(&ctx.out_path("synthetic_sst.csv"))?, &set.sst)?;
    ctx.note(format!("wrote {storms} synthetic storms to {}", ctx.config.out_dir.display()));
    Ok(())
}

fn execute(cli: Cli) -> Result<()> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.train.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.out_dir = out.clone();
    }
    let mut ctx = Context {
        config,
        quiet: cli.quiet,
    };
    match &cli.command {
        Command::Ingest { btd } => cmd_ingest(&ctx, btd),
        Command::Train { sst, t1, t2 } => {
            ctx.sst_override(sst);
            ctx.config.train.t1 = t1.unwrap_or(ctx.config.train.t1);
            ctx.config.train.t2 = t2.unwrap_or(ctx.config.train.t2);
            ctx.config.train.validate()?;
            cmd_train(&ctx)
        }
        Command::Cv { sst, t1, t2 } => {
            ctx.sst_override(sst);
            let cell = match (t1, t2) {
                (Some(t1), Some(t2)) => Some(WindowSpec::new(*t1, *t2).map_err(|e| Error::Config(e.to_string()))?),
                _ => None,
            };
            cmd_cv(&ctx, cell)
        }
        Command::Evaluate { sst, checkpoint } => {
            ctx.sst_override(sst);
            cmd_evaluate(&ctx, checkpoint)
        }
        Command::Forecast {
            storm_file,
            storm_id,
            anchor,
            output,
            sst,
            checkpoint,
        } => {
            ctx.sst_override(sst);
            cmd_forecast(&ctx, storm_file, storm_id, anchor, output, checkpoint)
        }
        Command::ExportPlotData { sst, checkpoint, all } => {
            ctx.sst_override(sst);
            cmd_export_plot_data(&ctx, checkpoint, *all)
        }
        Command::Synth { storms, synth_seed } => cmd_synth(&ctx, *storms, *synth_seed),
        Command::ShowConfig => {
            let mut text = serde_json::to_string_pretty(&ctx.config)?;
            text.push('\n');
            to_stdout(text.as_bytes())
        }
    }
}

/// A reader closing the pipe early (`| head`) is not an error.
fn to_stdout(bytes: &[u8]) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match out.write_all(bytes).and_then(|_| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Error::io("<stdout>", e)),
        _ => Ok(()),
    }
}

/// Parses `args` (program name first) and runs the command, returning the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
