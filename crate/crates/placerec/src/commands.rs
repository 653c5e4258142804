//! Subcommands. Each is a function of its [`RunConfig`], its input files and
//! the seed, and writes only under its output directory.

use std::collections::HashMap;
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};

use placerec_core::cloud::{split_train_test, subsample_by_distance, Split};
use placerec_core::quantizer::random_subsample;
use placerec_core::retrieval::{describe_cloud, one_percent_x, recall_at, IndexEntry, Query, RecallReport, RetrievalIndex};
use placerec_core::trainer::{prepare_cloud, train_epoch, EpochMetrics, OptimState, TrainSet};
use placerec_core::{rng, synth, LocNet, PointCloud, PoseRecord};
use thiserror::Error;

use crate::bench::{bench_inference, BenchReport};
use crate::checkpoint::{self, CheckpointError};
use crate::config::{AblateAxis, ConfigError, Database, RunConfig, Stage};
use crate::io::{Dataset, IoError, TextFile};

pub const CHECKPOINT_FILE: &str = "checkpoint.ckpt";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const METRICS_FILE: &str = "metrics.csv";
pub const RECALL_FILE: &str = "recall.csv";
pub const DETAILS_FILE: &str = "details.csv";
pub const ABLATION_FILE: &str = "ablation.csv";
pub const ABLATION_PLOT_FILE: &str = "ablation.dat";
pub const ABLATION_REPORT_FILE: &str = "ablation_report.txt";
pub const BENCH_STAGES_FILE: &str = "bench_stages.csv";
pub const BENCH_SAMPLES_FILE: &str = "bench_samples.csv";
pub const BENCH_SWEEP_FILE: &str = "bench_sweep.csv";

const METRICS_HEADER: &str = "epoch,mean_loss,active_ratio,ar1_val";

const STREAM_INIT: u64 = 21;
const STREAM_EVAL: u64 = 22;
const STREAM_BENCH: u64 = 23;

#[derive(Debug, Error)]
pub enum CommandError {
    /// Bad arguments, configuration or inputs (exit code 2).
    #[error("{0}")]
    Usage(String),
    /// Failure while running (exit code 1).
    #[error("{0:#}")]
    Runtime(anyhow::Error),
}

impl CommandError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CommandError::Usage(_) => 2,
            CommandError::Runtime(_) => 1,
        }
    }
}

impl From<ConfigError> for CommandError {
    fn from(e: ConfigError) -> Self {
        CommandError::Usage(e.to_string())
    }
}

impl From<IoError> for CommandError {
    fn from(e: IoError) -> Self {
        CommandError::Runtime(e.into())
    }
}

impl From<CheckpointError> for CommandError {
    fn from(e: CheckpointError) -> Self {
        match e {
            CheckpointError::Io { .. } => CommandError::Runtime(e.into()),
            _ => CommandError::Usage(e.to_string()),
        }
    }
}

impl From<placerec_core::Error> for CommandError {
    fn from(e: placerec_core::Error) -> Self {
        use placerec_core::Error as E;
        match e {
            E::Config(_) | E::Argument(_) | E::Usage(_) => CommandError::Usage(e.to_string()),
            _ => CommandError::Runtime(e.into()),
        }
    }
}

pub type CmdResult<T> = Result<T, CommandError>;

fn usage(e: impl Display) -> CommandError {
    CommandError::Usage(e.to_string())
}

fn create_dir(p: &Path) -> CmdResult<()> {
    fs::create_dir_all(p).map_err(|e| CommandError::Runtime(anyhow::anyhow!("{}: {e}", p.display())))
}

/// Keeps, per run in timestamp order, scans at least `spacing` apart.
/// Returns the kept pose indices in input order.
fn spaced(poses: &[PoseRecord], spacing: f64) -> CmdResult<Vec<usize>> {
    if spacing <= 0.0 {
        return Ok((0..poses.len()).collect());
    }
    let mut by_run: HashMap<u32, Vec<usize>> = HashMap::new();
    for (i, p) in poses.iter().enumerate() {
        by_run.entry(p.run_id).or_default().push(i);
    }
    let mut keep = std::collections::HashSet::new();
    for idx in by_run.values_mut() {
        idx.sort_by(|&a, &b| poses[a].timestamp.total_cmp(&poses[b].timestamp));
        let run: Vec<PoseRecord> = idx.iter().map(|&i| poses[i].clone()).collect();
        let kept = subsample_by_distance(&run, spacing)?;
        keep.extend(kept.into_iter().map(|p| p.cloud_id));
    }
    Ok((0..poses.len()).filter(|&i| keep.contains(&poses[i].cloud_id)).collect())
}

/// Builds the processed dataset under `out`: spacing-subsampled clouds in the
/// f32 quadruple layout, `poses.csv` and `split.csv`.
pub fn preprocess(cfg: &RunConfig, out: &Path) -> CmdResult<Dataset> {
    cfg.check_paths(Stage::Preprocess)?;
    let d = &cfg.dataset;
    let (mut clouds, poses) = match (&d.scans, &d.poses) {
        (Some(scans), Some(pose_csv)) => {
            let all = crate::io::read_poses(pose_csv).map_err(usage)?;
            if all.is_empty() {
                return Err(usage(format!("{}: no poses", pose_csv.display())));
            }
            let keep = spaced(&all, d.spacing)?;
            let poses: Vec<PoseRecord> = keep.iter().map(|&i| all[i].clone()).collect();
            let mut clouds = Vec::with_capacity(poses.len());
            for p in &poses {
                let path = scans.join(format!("{}.bin", p.cloud_id));
                if !path.exists() {
                    return Err(usage(format!("missing scan {}", path.display())));
                }
                clouds.push(d.format.load(&path)?);
            }
            (clouds, poses)
        }
        _ => {
            let (clouds, poses) = synth::generate_world(&cfg.synthetic)?;
            let keep = spaced(&poses, d.spacing)?;
            (keep.iter().map(|&i| clouds[i].clone()).collect(), keep.iter().map(|&i| poses[i].clone()).collect::<Vec<_>>())
        }
    };
    if d.rescale_intensity {
        let max = clouds.iter().map(PointCloud::max_intensity).fold(0.0f32, f32::max);
        clouds = clouds.iter().map(|c| c.rescale_intensity(max)).collect();
    }
    let split = match cfg.split.holdout_run {
        Some(run) => {
            let (test, train): (Vec<&PoseRecord>, Vec<&PoseRecord>) = poses.iter().partition(|p| p.run_id == run);
            let ids = |v: Vec<&PoseRecord>| v.into_iter().map(|p| p.cloud_id.clone()).collect();
            Split { train: ids(train), test: ids(test), dropped: Vec::new() }
        }
        None => split_train_test(&poses, &cfg.split.spec())?,
    };
    Dataset::write(out, &clouds, &poses, &split)?;
    Ok(Dataset { root: out.to_path_buf(), poses, split })
}

fn load_clouds(data: &Dataset, poses: &[PoseRecord]) -> CmdResult<Vec<PointCloud>> {
    poses.iter().map(|p| data.load_cloud(&p.cloud_id).map_err(CommandError::from)).collect()
}

/// Test queries and their database, with clouds held in memory.
struct EvalSet {
    queries: Vec<PoseRecord>,
    database: Vec<PoseRecord>,
    /// Every cloud either side needs, keyed by id, with its pose-index
    /// position as the stream id of its preprocessing.
    clouds: HashMap<String, (u64, PointCloud)>,
}

impl EvalSet {
    fn new(cfg: &RunConfig, data: &Dataset) -> CmdResult<Self> {
        let queries = data.select(&data.split.test);
        if queries.is_empty() {
            return Err(usage("the dataset has no test clouds"));
        }
        let database = match cfg.eval.database {
            Database::Test => queries.clone(),
            Database::All => {
                let mut ids = data.split.train.clone();
                ids.extend(data.split.test.iter().cloned());
                data.select(&ids)
            }
        };
        let exclude = cfg.eval.core.exclude_same_run;
        if let Some(q) = queries.iter().find(|q| !database.iter().any(|d| d.cloud_id != q.cloud_id && !(exclude && d.run_id == q.run_id))) {
            return Err(usage(format!(
                "query {} has no database candidates with exclude_same_run = {exclude}; a held-out run split needs eval.database = \"all\"",
                q.cloud_id
            )));
        }
        let mut clouds = HashMap::new();
        for (i, p) in data.poses.iter().enumerate() {
            let needed = queries.iter().chain(&database).any(|q| q.cloud_id == p.cloud_id);
            if needed {
                clouds.insert(p.cloud_id.clone(), (i as u64, data.load_cloud(&p.cloud_id)?));
            }
        }
        Ok(Self { queries, database, clouds })
    }

    fn run(&self, net: &LocNet, cfg: &RunConfig) -> CmdResult<RecallReport> {
        let quant = cfg.quant();
        let t = &cfg.train.core;
        let mut descs = HashMap::new();
        for (id, (k, c)) in &self.clouds {
            let seed = rng::derive_seed(cfg.seed, &[STREAM_EVAL, *k]);
            descs.insert(id.clone(), describe_cloud(net, c, &quant, t.max_range, t.max_points, seed)?);
        }
        let entries = self
            .database
            .iter()
            .map(|p| IndexEntry { cloud_id: p.cloud_id.clone(), descriptor: descs[&p.cloud_id].clone(), position: p.position, run_id: p.run_id })
            .collect();
        let index = RetrievalIndex::new(entries)?;
        let queries: Vec<Query> = self
            .queries
            .iter()
            .map(|p| Query { cloud_id: Some(p.cloud_id.clone()), descriptor: descs[&p.cloud_id].clone(), position: p.position, run_id: p.run_id })
            .collect();
        Ok(recall_at(&queries, &index, &cfg.eval.core)?)
    }
}

/// Fraction of queries whose first match is within the threshold.
pub fn ar_at_one(report: &RecallReport) -> f64 {
    let n = report.details.len().max(1) as f64;
    report.details.iter().filter(|d| d.success_at_1).count() as f64 / n
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub epochs: Vec<(EpochMetrics, Option<f64>)>,
    pub checkpoint: PathBuf,
}

fn metrics_row(m: &EpochMetrics, ar1: Option<f64>) -> String {
    let ar = ar1.map(|a| format!("{a:.6}")).unwrap_or_default();
    format!("{},{:.6},{:.6},{ar}", m.epoch + 1, m.mean_loss, m.active_ratio)
}

/// Rows of an existing metrics log for epochs `<= upto`.
fn previous_rows(path: &Path, upto: u32) -> Vec<String> {
    let Ok(text) = fs::read_to_string(path) else {
        return Vec::new();
    };
    text.lines()
        .skip(1)
        .filter(|l| l.split(',').next().and_then(|e| e.parse::<u32>().ok()).is_some_and(|e| e <= upto))
        .map(str::to_string)
        .collect()
}

/// Trains on the train split, appending one metrics row per epoch and
/// writing periodic and final checkpoints.
pub fn train(cfg: &RunConfig, out: &Path) -> CmdResult<TrainOutcome> {
    cfg.check_paths(Stage::Train)?;
    let data = Dataset::open(&cfg.dataset.root)?;
    let tcfg = &cfg.train.core;
    let quant = cfg.quant();
    let train_poses = data.select(&data.split.train);
    let set = TrainSet::new(load_clouds(&data, &train_poses)?, train_poses.iter().map(|p| p.position).collect(), tcfg)?;
    let (mut net, mut opt, start) = match &cfg.train.resume {
        Some(p) => {
            let ck = checkpoint::load(p, &cfg.arch)?;
            let opt = ck.opt.unwrap_or_else(|| OptimState::for_params(&ck.net.params()));
            (ck.net, opt, ck.epoch)
        }
        None => {
            let net = LocNet::init(&cfg.arch, &mut rng::stream(cfg.seed, &[STREAM_INIT]))?;
            let opt = OptimState::for_params(&net.params());
            (net, opt, 0)
        }
    };
    if start > tcfg.epochs {
        return Err(usage(format!("resume checkpoint has {start} epochs, more than train.epochs = {}", tcfg.epochs)));
    }
    let validation = if cfg.train.validate && !data.split.test.is_empty() { Some(EvalSet::new(cfg, &data)?) } else { None };

    create_dir(out)?;
    let metrics_path = out.join(METRICS_FILE);
    let kept = if start > 0 { previous_rows(&metrics_path, start) } else { Vec::new() };
    let mut rows = vec![METRICS_HEADER.to_string()];
    rows.extend(kept);
    let write_metrics = |rows: &[String]| -> CmdResult<()> {
        let mut f = TextFile::create(&metrics_path)?;
        for r in rows {
            f.line(r)?;
        }
        Ok(f.finish()?)
    };
    write_metrics(&rows)?;

    let mut epochs = Vec::new();
    for e in start..tcfg.epochs {
        let m = train_epoch(&mut net, &mut opt, &set, &quant, tcfg, cfg.seed, e)?;
        let ar1 = match &validation {
            Some(v) => Some(ar_at_one(&v.run(&net, cfg)?)),
            None => None,
        };
        rows.push(metrics_row(&m, ar1));
        write_metrics(&rows)?;
        epochs.push((m, ar1));
        let every = cfg.train.checkpoint_every;
        if every > 0 && (e + 1) % every == 0 {
            let dir = out.join(CHECKPOINT_DIR);
            create_dir(&dir)?;
            checkpoint::save(&dir.join(format!("epoch_{:04}.ckpt", e + 1)), &net, Some(&opt), e + 1)?;
        }
    }
    let path = out.join(CHECKPOINT_FILE);
    checkpoint::save(&path, &net, Some(&opt), tcfg.epochs)?;
    Ok(TrainOutcome { epochs, checkpoint: path })
}

fn write_recall(path: &Path, report: &RecallReport) -> CmdResult<()> {
    let mut f = TextFile::create(path)?;
    f.line("X,AR")?;
    for (x, ar) in &report.recall {
        f.line(&format!("{x},{ar:.6}"))?;
    }
    let (lo, hi) = report.effective_db;
    let range = |a: usize, b: usize| if a == b { a.to_string() } else { format!("{a}..{b}") };
    f.line(&format!(
        "# AR@1%={:.6} X1%={} effective_db={}",
        report.recall_one_percent,
        range(one_percent_x(lo), one_percent_x(hi)),
        range(lo, hi)
    ))?;
    Ok(f.finish()?)
}

fn write_details(path: &Path, report: &RecallReport) -> CmdResult<()> {
    let err = |e: csv::Error| CommandError::Runtime(anyhow::anyhow!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record(["cloud_id", "rank1_id", "rank1_dist_m", "success@1"]).map_err(err)?;
    for d in &report.details {
        let id = d.cloud_id.clone().unwrap_or_default();
        let dist = format!("{:.3}", d.rank1_dist_m);
        w.write_record([id.as_str(), d.rank1_id.as_str(), dist.as_str(), if d.success_at_1 { "1" } else { "0" }]).map_err(err)?;
    }
    w.flush().map_err(|e| CommandError::Runtime(anyhow::anyhow!("{}: {e}", path.display())))
}

/// Describes every test cloud with `eval.checkpoint` and writes the recall
/// report (and the per-query details when enabled).
pub fn eval(cfg: &RunConfig, out: &Path) -> CmdResult<RecallReport> {
    cfg.check_paths(Stage::Eval)?;
    let path = cfg.eval.checkpoint.as_ref().expect("checked by check_paths");
    let ck = checkpoint::load(path, &cfg.arch)?;
    let data = Dataset::open(&cfg.dataset.root)?;
    let report = EvalSet::new(cfg, &data)?.run(&ck.net, cfg)?;
    create_dir(out)?;
    write_recall(&out.join(RECALL_FILE), &report)?;
    if cfg.eval.details {
        write_details(&out.join(DETAILS_FILE), &report)?;
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub label: String,
    pub ar1: f64,
    pub ar1_percent: f64,
}

/// Sweeps one axis, evaluating (and with `train_per_point`, first training)
/// one configuration per value under `out/point_NN/`.
pub fn ablate(cfg: &RunConfig, out: &Path) -> CmdResult<Vec<AblationRow>> {
    cfg.check_paths(Stage::Ablate)?;
    let axis = cfg.ablate.axis.expect("checked by check_paths");
    let mut rows = Vec::new();
    for (i, v) in cfg.ablate.values.iter().enumerate() {
        let mut c = cfg.clone();
        let mut steps = c.quant().steps;
        match axis {
            AblateAxis::RStep => steps[0] = v.number().expect("validated"),
            AblateAxis::ThetaStep => steps[1] = v.number().expect("validated"),
            AblateAxis::MaxRange => c.train.core.max_range = v.number(),
            AblateAxis::Points => c.train.core.max_points = v.number().map(|x| x as usize),
        }
        c.quant.steps = Some(steps);
        c.validate()?;
        let dir = out.join(format!("point_{i:02}"));
        if c.ablate.train_per_point {
            c.train.resume = None;
            let t = train(&c, &dir)?;
            c.eval.checkpoint = Some(t.checkpoint);
        }
        let report = eval(&c, &dir.join("eval"))?;
        rows.push(AblationRow { label: v.label(), ar1: ar_at_one(&report), ar1_percent: report.recall_one_percent });
    }
    create_dir(out)?;
    let mut csv = TextFile::create(&out.join(ABLATION_FILE))?;
    let mut dat = TextFile::create(&out.join(ABLATION_PLOT_FILE))?;
    csv.line("axis_value,AR@1,AR@1%")?;
    dat.line("# index axis_value ar1 ar1_percent")?;
    for (i, r) in rows.iter().enumerate() {
        csv.line(&format!("{},{:.6},{:.6}", r.label, r.ar1, r.ar1_percent))?;
        dat.line(&format!("{i} {} {:.6} {:.6}", r.label, r.ar1, r.ar1_percent))?;
    }
    csv.finish()?;
    dat.finish()?;
    if axis == AblateAxis::Points {
        let drops: Vec<String> = rows.windows(2).filter(|w| w[1].ar1 < w[0].ar1).map(|w| format!("{} -> {}", w[0].label, w[1].label)).collect();
        let mut f = TextFile::create(&out.join(ABLATION_REPORT_FILE))?;
        f.line(&format!("monotone_non_decreasing_ar1={}", drops.is_empty()))?;
        for d in drops {
            f.line(&format!("decrease {d}"))?;
        }
        f.finish()?;
    }
    Ok(rows)
}

#[derive(Debug, Clone)]
pub struct BenchOutcome {
    pub repeated: BenchReport,
    /// Per configured point count: points actually used and the report.
    pub sweep: Vec<(usize, usize, BenchReport)>,
}

fn stage_means(r: &BenchReport) -> String {
    r.stages().iter().map(|(_, s)| format!("{:.4}", s.mean_ms)).collect::<Vec<_>>().join(",")
}

/// Times `bench.repeats` passes over the first test cloud (or the first
/// cloud when there is no test split), then the point-count sweep.
pub fn bench(cfg: &RunConfig, out: &Path) -> CmdResult<BenchOutcome> {
    cfg.check_paths(Stage::Bench)?;
    let ck = checkpoint::load(cfg.eval.checkpoint.as_ref().expect("checked by check_paths"), &cfg.arch)?;
    let data = Dataset::open(&cfg.dataset.root)?;
    let id = data.split.test.first().or_else(|| data.poses.first().map(|p| &p.cloud_id)).ok_or_else(|| usage("empty dataset"))?;
    let quant = cfg.quant();
    let mut r = rng::stream(cfg.seed, &[STREAM_BENCH]);
    let base = prepare_cloud(&data.load_cloud(id)?, cfg.train.core.max_range, None, &mut r)?;
    let n = cfg.bench.repeats;
    let repeated = bench_inference(&vec![base.clone(); n], &ck.net, &quant)?;
    let mut sweep = Vec::new();
    for &k in &cfg.bench.point_counts {
        let mut r = rng::stream(cfg.seed, &[STREAM_BENCH, k as u64]);
        let c = random_subsample(&base, k, &mut r)?;
        let rep = bench_inference(&vec![c.clone(); n], &ck.net, &quant)?;
        sweep.push((k, c.len(), rep));
    }

    create_dir(out)?;
    let mut f = TextFile::create(&out.join(BENCH_STAGES_FILE))?;
    f.line("stage,mean_ms,std_ms")?;
    for (name, s) in repeated.stages() {
        f.line(&format!("{name},{:.4},{:.4}", s.mean_ms, s.std_ms))?;
    }
    f.finish()?;
    let mut f = TextFile::create(&out.join(BENCH_SAMPLES_FILE))?;
    f.line("sample,points,quantize_ms,forward_ms,total_ms")?;
    for (i, s) in repeated.samples.iter().enumerate() {
        f.line(&format!("{i},{},{:.4},{:.4},{:.4}", s.points, s.quantize_ms, s.forward_ms, s.total_ms))?;
    }
    f.finish()?;
    let mut f = TextFile::create(&out.join(BENCH_SWEEP_FILE))?;
    f.line("points,actual_points,quantize_ms,forward_ms,total_ms")?;
    for (k, actual, rep) in &sweep {
        f.line(&format!("{k},{actual},{}", stage_means(rep)))?;
    }
    f.finish()?;
    Ok(BenchOutcome { repeated, sweep })
}
