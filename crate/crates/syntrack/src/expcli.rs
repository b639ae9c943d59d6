//! Experiment harness: seeded trial batches over the tracker and the
//! symbolic classifiers, detection/estimation metrics, CSV reports.
//!
//! Every experiment is a pure function of its [`ExperimentConfig`]: trials
//! derive their seeds from the master seed and their coordinates (class,
//! noise level, trial index, ...), run in a worker pool, and are aggregated
//! in index order, so re-running with a different `workers` count produces
//! byte-identical CSVs.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grammar::{build_class_grammar, Grammar, IntentClass, TermId, CLASSES};
use crate::kinematics::{KinematicState, NoiseConfig};
use crate::parser::{Column, Obs, Parser};
use crate::roadgraph::{EdgeId, Orientation, RoadGraph};
use crate::simgen::{
    drop_tracklets, gen_measurements, gen_truth_with, levenshtein, perturb, DropMode, Scenario,
    TemplateSet,
};
use crate::tracker::{StepRecord, Tracker, TrackerConfig, TrackerMode};

/// The experiment names `run_experiment` accepts.
pub const EXPERIMENTS: [&str; 6] = [
    "detection-sweep",
    "improvement",
    "template-vs-syntactic",
    "missing-tracklets",
    "perturbed",
    "road-size",
];

/// Batch configuration. Deserializes from JSON with every field optional,
/// so a config file can override just a few knobs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// One of [`EXPERIMENTS`].
    pub experiment: String,
    /// Road grid dimensions (block rows, block cols).
    pub grid: (u32, u32),
    pub road_len: f64,
    pub road_width: f64,
    pub particles: usize,
    /// Trials per class (and per noise/loss level where applicable).
    pub trials: u32,
    /// Measurement-noise levels j to sweep; experiments that need a single
    /// level use the first entry.
    pub noise_levels: Vec<u32>,
    pub seed: u64,
    /// Detection declares once the true-class posterior exceeds `threshold`
    /// for `window` consecutive epochs.
    pub window: usize,
    pub threshold: f64,
    pub templates_per_class: usize,
    /// Tracklet-loss percentages for the dropout experiment.
    pub loss_levels: Vec<u32>,
    /// Number of road-size steps: step k uses length 100+10k, width 5+k.
    pub size_steps: u32,
    /// Worker threads for the trial pool; 0 uses the rayon default.
    pub workers: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            experiment: "detection-sweep".into(),
            grid: (6, 6),
            road_len: 100.0,
            road_width: 5.0,
            particles: 200,
            trials: 10,
            noise_levels: vec![0, 1, 2, 3, 4],
            seed: 0,
            window: 10,
            threshold: 0.9,
            templates_per_class: 5,
            loss_levels: vec![10, 20, 30, 40, 50],
            size_steps: 5,
            workers: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if !EXPERIMENTS.contains(&self.experiment.as_str()) {
            return Err(Error::InvalidArgument(format!(
                "unknown experiment {:?} (expected one of {})",
                self.experiment,
                EXPERIMENTS.join(", ")
            )));
        }
        if self.particles == 0 || self.trials == 0 || self.window == 0 {
            return Err(Error::InvalidArgument(
                "particles, trials and window must all be >= 1".into(),
            ));
        }
        if !(0.0 < self.threshold && self.threshold < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "detection threshold {} outside (0, 1)",
                self.threshold
            )));
        }
        if self.noise_levels.is_empty() {
            return Err(Error::InvalidArgument("no noise levels given".into()));
        }
        if self.loss_levels.iter().any(|&l| l > 100) {
            return Err(Error::InvalidArgument("loss level above 100%".into()));
        }
        if self.templates_per_class == 0 || self.size_steps == 0 {
            return Err(Error::InvalidArgument(
                "templates_per_class and size_steps must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Everything measured from one tracked trial.
#[derive(Debug, Clone)]
pub struct TrialResult {
    pub class: IntentClass,
    pub noise_level: u32,
    pub trial: u32,
    pub seed: u64,
    /// Ground-truth road string of the trial's scenario.
    pub roads: Vec<EdgeId>,
    /// Number of epochs including the initialization record.
    pub epochs: usize,
    /// Per-epoch output of the syntactic tracker.
    pub records: Vec<StepRecord>,
    /// First epoch whose trailing detection window stayed above threshold.
    pub detect_epoch: Option<usize>,
    /// Per-epoch squared state error (position and velocity), epochs >= 1.
    pub sq_err: Vec<f64>,
    /// Same scenario and seed re-tracked with the Markov baseline.
    pub sq_err_baseline: Option<Vec<f64>>,
    /// Final-epoch argmax class under the syntactic tracker.
    pub predicted: IntentClass,
}

/// First epoch whose trailing `window` entries of `series` all exceed
/// `threshold`. Index 0 is the initialization record.
pub fn detection_epoch(series: &[f64], threshold: f64, window: usize) -> Option<usize> {
    if window == 0 || window > series.len() {
        return None;
    }
    let mut run = 0usize;
    for (k, &p) in series.iter().enumerate() {
        if p > threshold {
            run += 1;
            if run >= window {
                return Some(k);
            }
        } else {
            run = 0;
        }
    }
    None
}

/// Normalized detection delay: detection epoch over total observation
/// epochs, None when detection never happened (averages count such trials
/// as 1.0).
pub fn detection_delay(tr: &TrialResult) -> Option<f64> {
    let total = (tr.epochs - 1).max(1) as f64;
    tr.detect_epoch.map(|e| e as f64 / total)
}

/// Improvement of the syntactic tracker over the Markov baseline: pooled
/// mean squared state error over all trials and epochs,
/// `(err_baseline - err_syntactic) / err_baseline` in percent.
pub fn state_improvement(batch: &[TrialResult]) -> Result<f64> {
    let mut syn = (0.0, 0usize);
    let mut base = (0.0, 0usize);
    for tr in batch {
        syn.0 += tr.sq_err.iter().sum::<f64>();
        syn.1 += tr.sq_err.len();
        let b = tr.sq_err_baseline.as_ref().ok_or_else(|| {
            Error::InvalidArgument("trial carries no baseline error series".into())
        })?;
        base.0 += b.iter().sum::<f64>();
        base.1 += b.len();
    }
    if syn.1 == 0 || base.1 == 0 {
        return Err(Error::InvalidArgument("empty trial batch".into()));
    }
    let err_syn = syn.0 / syn.1 as f64;
    let err_base = base.0 / base.1 as f64;
    if err_base == 0.0 {
        return Err(Error::DegenerateMetric(
            "baseline tracking error is exactly zero".into(),
        ));
    }
    Ok(100.0 * (err_base - err_syn) / err_base)
}

/// Successful-classification rate: fraction of predictions matching truth.
pub fn scr(assignments: &[IntentClass], truths: &[IntentClass]) -> Result<f64> {
    if assignments.is_empty() || assignments.len() != truths.len() {
        return Err(Error::InvalidArgument(format!(
            "classification lists empty or mismatched ({} vs {})",
            assignments.len(),
            truths.len()
        )));
    }
    let hits = assignments
        .iter()
        .zip(truths)
        .filter(|(a, t)| a == t)
        .count();
    Ok(hits as f64 / truths.len() as f64)
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic per-trial seed from the master seed and trial coordinates.
fn trial_seed(master: u64, tag: &[u64]) -> u64 {
    let mut h = splitmix64(master ^ 0x5eed);
    for &t in tag {
        h = splitmix64(h ^ t);
    }
    h
}

/// Per-edge terminal ids of a grammar, matched by name (None when the
/// grammar has no terminal for that directed edge).
/// Terminal id for each edge of the graph under a grammar's naming, or
/// `None` for edges the grammar has no symbol for.
pub fn edge_terms(graph: &RoadGraph, g: &Grammar) -> Vec<Option<TermId>> {
    (0..graph.num_edges())
        .map(|e| {
            let name = graph.edge_name(e);
            (0..g.num_terms() as TermId).find(|&t| g.term_name(t) == name)
        })
        .collect()
}

/// Number of leading symbols a grammar accepts before its prefix dies.
/// An edge without a terminal in the grammar stops the parse.
pub fn parse_depth(parser: &Parser, terms: &[Option<TermId>]) -> usize {
    let Ok(init) = parser.init_column() else {
        return 0;
    };
    let mut cols = vec![init];
    let mut depth = 0;
    for t in terms {
        let Some(t) = t else { break };
        let path: Vec<&Column> = cols.iter().collect();
        match parser.advance(&path, &Obs::Hard(*t)) {
            Ok(col) => {
                cols.push(col);
                depth += 1;
            }
            Err(_) => break,
        }
    }
    depth
}

/// Classifies road strings by total parse depth in both reading directions:
/// each class contributes its clockwise grammar on the string as given plus
/// its counterclockwise grammar on the edge-reversed string, and the class
/// with the largest combined depth wins (ties break in class order).
pub struct TwoSidedClassifier {
    forward: Vec<(Parser, Vec<Option<TermId>>)>,
    reverse: Vec<(Parser, Vec<Option<TermId>>)>,
}

impl TwoSidedClassifier {
    pub fn new(graph: &RoadGraph) -> Result<TwoSidedClassifier> {
        let mut forward = Vec::new();
        let mut reverse = Vec::new();
        for &class in &CLASSES {
            let fg = build_class_grammar(graph, class, Orientation::Clockwise)?;
            let rg = build_class_grammar(graph, class, Orientation::CounterClockwise)?;
            let fterms = edge_terms(graph, &fg);
            let rterms = edge_terms(graph, &rg);
            forward.push((Parser::new(Arc::new(fg)), fterms));
            reverse.push((Parser::new(Arc::new(rg)), rterms));
        }
        Ok(TwoSidedClassifier { forward, reverse })
    }

    /// Forward and backward parse depths of the string under one class.
    pub fn depths(&self, graph: &RoadGraph, roads: &[EdgeId], class: IntentClass) -> (usize, usize) {
        let i = class.index();
        let fwd: Vec<Option<TermId>> = roads
            .iter()
            .map(|&e| self.forward[i].1[e as usize])
            .collect();
        let rev: Vec<Option<TermId>> = roads
            .iter()
            .rev()
            .map(|&e| self.reverse[i].1[graph.reverse_edge(e) as usize])
            .collect();
        (
            parse_depth(&self.forward[i].0, &fwd),
            parse_depth(&self.reverse[i].0, &rev),
        )
    }

    pub fn classify(&self, graph: &RoadGraph, roads: &[EdgeId]) -> IntentClass {
        let mut best = (CLASSES[0], 0usize);
        let mut first = true;
        for &class in &CLASSES {
            let (f, r) = self.depths(graph, roads, class);
            if first || f + r > best.1 {
                best = (class, f + r);
                first = false;
            }
        }
        best.0
    }
}

fn argmax_class(post: &[f64]) -> IntentClass {
    let mut best = 0;
    for i in 1..post.len().min(CLASSES.len()) {
        if post[i] > post[best] {
            best = i;
        }
    }
    CLASSES[best]
}

/// Grammars and parsers for one road graph, shared across a trial batch.
struct Stack {
    graph: Arc<RoadGraph>,
    grammars: Vec<Arc<Grammar>>,
    parsers: Vec<Arc<Parser>>,
}

fn build_stack(rows: u32, cols: u32, road_len: f64, road_width: f64) -> Result<Stack> {
    let graph = Arc::new(RoadGraph::new(rows, cols, road_len, road_width)?);
    let grammars: Vec<Arc<Grammar>> = CLASSES
        .iter()
        .map(|&c| build_class_grammar(&graph, c, Orientation::Clockwise).map(Arc::new))
        .collect::<Result<_>>()?;
    let parsers = grammars
        .iter()
        .map(|g| Arc::new(Parser::new(g.clone())))
        .collect();
    Ok(Stack {
        graph,
        grammars,
        parsers,
    })
}

fn squared_errors(records: &[StepRecord], states: &[KinematicState]) -> Vec<f64> {
    records
        .iter()
        .zip(states)
        .skip(1)
        .map(|(r, t)| {
            let dx = r.estimate.x - t.x;
            let dy = r.estimate.y - t.y;
            let dvx = r.estimate.vx - t.vx;
            let dvy = r.estimate.vy - t.vy;
            dx * dx + dy * dy + dvx * dvx + dvy * dvy
        })
        .collect()
}

fn track_records(
    stack: &Stack,
    s: &Scenario,
    particles: usize,
    tracker_seed: u64,
    mode: TrackerMode,
) -> Result<Vec<StepRecord>> {
    let cfg = TrackerConfig {
        particles,
        noise: s.noise,
        seed: tracker_seed,
        mode,
        ..TrackerConfig::default()
    };
    let mut tracker = Tracker::new(
        stack.graph.clone(),
        stack.parsers.to_vec(),
        vec![1.0 / CLASSES.len() as f64; CLASSES.len()],
        &s.states[0],
        cfg,
    )?;
    tracker.run(&s.measurements, |k| s.platform.at(k, &s.noise))
}

/// Generates the trial's scenario from its seed and runs the tracker(s).
#[allow(clippy::too_many_arguments)]
fn run_tracked_trial(
    stack: &Stack,
    class: IntentClass,
    noise_level: u32,
    trial: u32,
    seed: u64,
    cfg: &ExperimentConfig,
    with_baseline: bool,
    corrupt: Option<(DropMode, u32)>,
) -> Result<TrialResult> {
    let noise = NoiseConfig::level(noise_level);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = gen_truth_with(&stack.grammars[class.index()], class, &stack.graph, &mut rng)?;
    gen_measurements(&mut s, &noise, &mut rng)?;
    if let Some((mode, pct)) = corrupt {
        drop_tracklets(&mut s, mode, pct, &mut rng)?;
    }

    let tracker_seed = splitmix64(seed ^ 0x7261_636b);
    let records = track_records(stack, &s, cfg.particles, tracker_seed, TrackerMode::Syntactic)?;
    let series: Vec<f64> = records
        .iter()
        .map(|r| r.posterior[class.index()])
        .collect();
    let detect_epoch = detection_epoch(&series, cfg.threshold, cfg.window);
    let sq_err = squared_errors(&records, &s.states);
    let sq_err_baseline = if with_baseline {
        let base = track_records(stack, &s, cfg.particles, tracker_seed, TrackerMode::Vsimm)?;
        Some(squared_errors(&base, &s.states))
    } else {
        None
    };
    let predicted = argmax_class(&records.last().unwrap().posterior);
    Ok(TrialResult {
        class,
        noise_level,
        trial,
        seed,
        roads: s.roads,
        epochs: records.len(),
        records,
        detect_epoch,
        sq_err,
        sq_err_baseline,
        predicted,
    })
}

/// CSV artifacts produced by one experiment run. `run_experiment` also
/// writes them under the output directory.
pub struct ExperimentReport {
    pub trials_csv: String,
    pub aggregate_csv: String,
    /// (file name, content) for each per-trial posterior trace.
    pub posterior_files: Vec<(String, String)>,
    pub trials_path: PathBuf,
    pub aggregate_path: PathBuf,
}

fn posterior_csv(records: &[StepRecord]) -> String {
    let names = CLASSES.map(|c| c.name());
    let mut out = StepRecord::csv_header(&names);
    out.push('\n');
    for r in records {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

fn mean(values: impl Iterator<Item = f64>) -> (usize, f64) {
    let mut n = 0usize;
    let mut sum = 0.0;
    for v in values {
        n += 1;
        sum += v;
    }
    (n, if n == 0 { f64::NAN } else { sum / n as f64 })
}

fn delay_of(tr: &TrialResult) -> f64 {
    detection_delay(tr).unwrap_or(1.0)
}

fn detect_cell(tr: &TrialResult) -> String {
    tr.detect_epoch.map_or(String::new(), |e| e.to_string())
}

/// Runs the named experiment and writes `trials.csv`, `aggregate.csv` and
/// per-trial posterior traces under `out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<ExperimentReport> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("worker pool: {e}")))?;
    let (trials_csv, aggregate_csv, posterior_files) =
        pool.install(|| match cfg.experiment.as_str() {
            "detection-sweep" => detection_sweep(cfg),
            "improvement" => improvement(cfg),
            "template-vs-syntactic" => template_vs_syntactic(cfg),
            "missing-tracklets" => missing_tracklets(cfg),
            "perturbed" => perturbed(cfg),
            "road-size" => road_size(cfg),
            _ => unreachable!("validated above"),
        })?;

    fs::create_dir_all(out_dir)?;
    let trials_path = out_dir.join("trials.csv");
    let aggregate_path = out_dir.join("aggregate.csv");
    fs::write(&trials_path, &trials_csv)?;
    fs::write(&aggregate_path, &aggregate_csv)?;
    for (name, content) in &posterior_files {
        fs::write(out_dir.join(name), content)?;
    }
    Ok(ExperimentReport {
        trials_csv,
        aggregate_csv,
        posterior_files,
        trials_path,
        aggregate_path,
    })
}

type Artifacts = (String, String, Vec<(String, String)>);

/// Detection delay per class over the measurement-noise sweep.
fn detection_sweep(cfg: &ExperimentConfig) -> Result<Artifacts> {
    let stack = build_stack(cfg.grid.0, cfg.grid.1, cfg.road_len, cfg.road_width)?;
    let mut specs = Vec::new();
    for &j in &cfg.noise_levels {
        for &class in &CLASSES {
            for t in 0..cfg.trials {
                let seed = trial_seed(cfg.seed, &[1, j as u64, class.index() as u64, t as u64]);
                specs.push((class, j, t, seed));
            }
        }
    }
    let results: Vec<TrialResult> = specs
        .par_iter()
        .map(|&(class, j, t, seed)| run_tracked_trial(&stack, class, j, t, seed, cfg, false, None))
        .collect::<Result<_>>()?;

    let mut trials = String::from("experiment,class,noise_level,trial,seed,epochs,detect_epoch,delay\n");
    let mut posts = Vec::new();
    for tr in &results {
        trials.push_str(&format!(
            "detection-sweep,{},{},{},{},{},{},{}\n",
            tr.class.name(),
            tr.noise_level,
            tr.trial,
            tr.seed,
            tr.epochs,
            detect_cell(tr),
            delay_of(tr)
        ));
        posts.push((
            format!("posteriors_{}_j{}_t{}.csv", tr.class.name(), tr.noise_level, tr.trial),
            posterior_csv(&tr.records),
        ));
    }

    let mut aggregate = String::from("class,noise_level,trials,mean_delay\n");
    for &j in &cfg.noise_levels {
        for &class in &CLASSES {
            let (n, m) = mean(
                results
                    .iter()
                    .filter(|tr| tr.class == class && tr.noise_level == j)
                    .map(delay_of),
            );
            aggregate.push_str(&format!("{},{},{},{}\n", class.name(), j, n, m));
        }
    }
    Ok((trials, aggregate, posts))
}

/// Syntactic vs Markov-baseline state estimation on identical scenarios
/// and seeds, swept over noise levels.
fn improvement(cfg: &ExperimentConfig) -> Result<Artifacts> {
    let stack = build_stack(cfg.grid.0, cfg.grid.1, cfg.road_len, cfg.road_width)?;
    let mut specs = Vec::new();
    for &j in &cfg.noise_levels {
        for &class in &CLASSES {
            for t in 0..cfg.trials {
                let seed = trial_seed(cfg.seed, &[1, j as u64, class.index() as u64, t as u64]);
                specs.push((class, j, t, seed));
            }
        }
    }
    let results: Vec<TrialResult> = specs
        .par_iter()
        .map(|&(class, j, t, seed)| run_tracked_trial(&stack, class, j, t, seed, cfg, true, None))
        .collect::<Result<_>>()?;

    let mse = |errs: &[f64]| errs.iter().sum::<f64>() / errs.len().max(1) as f64;
    let mut trials = String::from(
        "experiment,class,noise_level,trial,seed,epochs,detect_epoch,delay,mse_syntactic,mse_baseline\n",
    );
    let mut posts = Vec::new();
    for tr in &results {
        trials.push_str(&format!(
            "improvement,{},{},{},{},{},{},{},{},{}\n",
            tr.class.name(),
            tr.noise_level,
            tr.trial,
            tr.seed,
            tr.epochs,
            detect_cell(tr),
            delay_of(tr),
            mse(&tr.sq_err),
            mse(tr.sq_err_baseline.as_ref().unwrap())
        ));
        posts.push((
            format!("posteriors_{}_j{}_t{}.csv", tr.class.name(), tr.noise_level, tr.trial),
            posterior_csv(&tr.records),
        ));
    }

    let mut aggregate = String::from(
        "class,noise_level,trials,mean_delay,mse_syntactic,mse_baseline,improvement_pct\n",
    );
    for &j in &cfg.noise_levels {
        let group: Vec<&TrialResult> = results.iter().filter(|tr| tr.noise_level == j).collect();
        for &class in &CLASSES {
            let sub: Vec<TrialResult> = group
                .iter()
                .filter(|tr| tr.class == class)
                .map(|tr| (*tr).clone())
                .collect();
            aggregate.push_str(&improvement_row(class.name(), j, &sub)?);
        }
        let all: Vec<TrialResult> = group.iter().map(|tr| (*tr).clone()).collect();
        aggregate.push_str(&improvement_row("all", j, &all)?);
    }
    Ok((trials, aggregate, posts))
}

fn improvement_row(label: &str, j: u32, batch: &[TrialResult]) -> Result<String> {
    let (n, d) = mean(batch.iter().map(delay_of));
    let pooled = |f: fn(&TrialResult) -> &[f64]| {
        let (mut sum, mut cnt) = (0.0, 0usize);
        for tr in batch {
            sum += f(tr).iter().sum::<f64>();
            cnt += f(tr).len();
        }
        sum / cnt.max(1) as f64
    };
    let mse_syn = pooled(|tr| &tr.sq_err);
    let mse_base = pooled(|tr| tr.sq_err_baseline.as_deref().unwrap_or(&[]));
    let imp = state_improvement(batch)?;
    Ok(format!(
        "{label},{j},{n},{d},{mse_syn},{mse_base},{imp}\n"
    ))
}

/// Tracker-posterior classification vs nearest-template edit distance.
fn template_vs_syntactic(cfg: &ExperimentConfig) -> Result<Artifacts> {
    let stack = build_stack(cfg.grid.0, cfg.grid.1, cfg.road_len, cfg.road_width)?;
    let j = cfg.noise_levels[0];
    let mut specs = Vec::new();
    for &class in &CLASSES {
        for t in 0..cfg.trials {
            let seed = trial_seed(cfg.seed, &[1, j as u64, class.index() as u64, t as u64]);
            let tseed = trial_seed(cfg.seed, &[2, class.index() as u64, t as u64]);
            specs.push((class, t, seed, tseed));
        }
    }
    let results: Vec<(TrialResult, IntentClass)> = specs
        .par_iter()
        .map(|&(class, t, seed, tseed)| {
            let tr = run_tracked_trial(&stack, class, j, t, seed, cfg, false, None)?;
            let mut trng = ChaCha8Rng::seed_from_u64(tseed);
            let sets: Vec<TemplateSet> = CLASSES
                .iter()
                .map(|&c| {
                    let strings = (0..cfg.templates_per_class)
                        .map(|_| {
                            gen_truth_with(&stack.grammars[c.index()], c, &stack.graph, &mut trng)
                                .map(|s| s.roads)
                        })
                        .collect::<Result<Vec<_>>>()?;
                    Ok(TemplateSet { class: c, strings })
                })
                .collect::<Result<_>>()?;
            let template_pred = crate::simgen::classify_by_templates(&tr.roads, &sets);
            Ok((tr, template_pred))
        })
        .collect::<Result<_>>()?;

    let mut trials = String::from(
        "experiment,class,trial,seed,syntactic_pred,template_pred,syntactic_correct,template_correct\n",
    );
    let mut posts = Vec::new();
    for (tr, tpred) in &results {
        trials.push_str(&format!(
            "template-vs-syntactic,{},{},{},{},{},{},{}\n",
            tr.class.name(),
            tr.trial,
            tr.seed,
            tr.predicted.name(),
            tpred.name(),
            (tr.predicted == tr.class) as u8,
            (*tpred == tr.class) as u8
        ));
        posts.push((
            format!("posteriors_{}_t{}.csv", tr.class.name(), tr.trial),
            posterior_csv(&tr.records),
        ));
    }

    let truths: Vec<IntentClass> = results.iter().map(|(tr, _)| tr.class).collect();
    let syn_preds: Vec<IntentClass> = results.iter().map(|(tr, _)| tr.predicted).collect();
    let tpl_preds: Vec<IntentClass> = results.iter().map(|(_, p)| *p).collect();
    let mut aggregate = String::from("method,trials,scr\n");
    aggregate.push_str(&format!(
        "syntactic,{},{}\n",
        truths.len(),
        scr(&syn_preds, &truths)?
    ));
    aggregate.push_str(&format!(
        "template,{},{}\n",
        truths.len(),
        scr(&tpl_preds, &truths)?
    ));
    Ok((trials, aggregate, posts))
}

/// Detection delay under missing measurements: scattered dropout (case 1)
/// vs contiguous bursts (case 2) at increasing loss levels, against a
/// shared 0%-loss baseline (case 0 rows).
fn missing_tracklets(cfg: &ExperimentConfig) -> Result<Artifacts> {
    let stack = build_stack(cfg.grid.0, cfg.grid.1, cfg.road_len, cfg.road_width)?;
    let j = cfg.noise_levels[0];
    let mut specs: Vec<(u32, u32, IntentClass, u32, u64)> = Vec::new();
    for &class in &CLASSES {
        for t in 0..cfg.trials {
            let seed = trial_seed(cfg.seed, &[1, j as u64, class.index() as u64, t as u64]);
            specs.push((0, 0, class, t, seed));
            for (ci, _) in [DropMode::Scattered, DropMode::Burst].iter().enumerate() {
                for &loss in &cfg.loss_levels {
                    specs.push((ci as u32 + 1, loss, class, t, seed));
                }
            }
        }
    }
    let results: Vec<(u32, u32, TrialResult)> = specs
        .par_iter()
        .map(|&(case, loss, class, t, seed)| {
            let corrupt = match case {
                0 => None,
                1 => Some((DropMode::Scattered, loss)),
                _ => Some((DropMode::Burst, loss)),
            };
            let tr = run_tracked_trial(&stack, class, j, t, seed, cfg, false, corrupt)?;
            Ok((case, loss, tr))
        })
        .collect::<Result<_>>()?;

    let mut trials =
        String::from("experiment,case,loss_pct,class,trial,seed,epochs,detect_epoch,delay\n");
    let mut posts = Vec::new();
    for (case, loss, tr) in &results {
        trials.push_str(&format!(
            "missing-tracklets,{},{},{},{},{},{},{},{}\n",
            case,
            loss,
            tr.class.name(),
            tr.trial,
            tr.seed,
            tr.epochs,
            detect_cell(tr),
            delay_of(tr)
        ));
        posts.push((
            format!("posteriors_c{}_l{}_{}_t{}.csv", case, loss, tr.class.name(), tr.trial),
            posterior_csv(&tr.records),
        ));
    }

    let group_mean = |case: u32, loss: u32, class: Option<IntentClass>| {
        mean(
            results
                .iter()
                .filter(|(c, l, tr)| {
                    *c == case && *l == loss && class.is_none_or(|cl| tr.class == cl)
                })
                .map(|(_, _, tr)| delay_of(tr)),
        )
    };
    let mut aggregate = String::from("case,loss_pct,class,trials,mean_delay,delay_increase\n");
    let mut labels: Vec<Option<IntentClass>> = CLASSES.iter().copied().map(Some).collect();
    labels.push(None);
    for class in &labels {
        let name = class.map_or("all", |c| c.name());
        let (bn, base) = group_mean(0, 0, *class);
        aggregate.push_str(&format!("0,0,{name},{bn},{base},0\n"));
        for case in 1..=2u32 {
            for &loss in &cfg.loss_levels {
                let (n, m) = group_mean(case, loss, *class);
                aggregate.push_str(&format!(
                    "{case},{loss},{name},{n},{m},{}\n",
                    m - base
                ));
            }
        }
    }
    Ok((trials, aggregate, posts))
}

/// Two-sided parse-depth classification of perturbed road strings vs the
/// template baseline. Purely symbolic: no radar, no particle filter.
fn perturbed(cfg: &ExperimentConfig) -> Result<Artifacts> {
    let stack = build_stack(cfg.grid.0, cfg.grid.1, cfg.road_len, cfg.road_width)?;
    let classifier = TwoSidedClassifier::new(&stack.graph)?;
    let mut specs = Vec::new();
    for &class in &CLASSES {
        for t in 0..cfg.trials {
            let seed = trial_seed(cfg.seed, &[3, class.index() as u64, t as u64]);
            specs.push((class, t, seed));
        }
    }
    struct Row {
        class: IntentClass,
        trial: u32,
        seed: u64,
        orig_len: usize,
        pert_len: usize,
        edit: usize,
        parse_pred: IntentClass,
        template_pred: IntentClass,
    }
    let results: Vec<Row> = specs
        .par_iter()
        .map(|&(class, t, seed)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            // Regenerate until a perturbable truth yields a detour.
            let mut made = None;
            for _ in 0..20 {
                let truth =
                    gen_truth_with(&stack.grammars[class.index()], class, &stack.graph, &mut rng)?;
                if truth.roads.len() < 8 {
                    continue;
                }
                if let Ok(p) = perturb(&truth, &mut rng) {
                    made = Some((truth, p));
                    break;
                }
            }
            let (truth, pert) = made.ok_or_else(|| {
                Error::PerturbationFailure(format!(
                    "no perturbable {} trajectory after 20 attempts",
                    class.name()
                ))
            })?;
            let sets: Vec<TemplateSet> = CLASSES
                .iter()
                .map(|&c| {
                    let strings = (0..cfg.templates_per_class)
                        .map(|_| {
                            gen_truth_with(&stack.grammars[c.index()], c, &stack.graph, &mut rng)
                                .map(|s| s.roads)
                        })
                        .collect::<Result<Vec<_>>>()?;
                    Ok(TemplateSet { class: c, strings })
                })
                .collect::<Result<_>>()?;
            Ok(Row {
                class,
                trial: t,
                seed,
                orig_len: truth.roads.len(),
                pert_len: pert.roads.len(),
                edit: levenshtein(&truth.roads, &pert.roads),
                parse_pred: classifier.classify(&stack.graph, &pert.roads),
                template_pred: crate::simgen::classify_by_templates(&pert.roads, &sets),
            })
        })
        .collect::<Result<_>>()?;

    let mut trials = String::from(
        "experiment,class,trial,seed,orig_len,pert_len,edit_distance,parse_pred,template_pred,parse_correct,template_correct\n",
    );
    for r in &results {
        trials.push_str(&format!(
            "perturbed,{},{},{},{},{},{},{},{},{},{}\n",
            r.class.name(),
            r.trial,
            r.seed,
            r.orig_len,
            r.pert_len,
            r.edit,
            r.parse_pred.name(),
            r.template_pred.name(),
            (r.parse_pred == r.class) as u8,
            (r.template_pred == r.class) as u8
        ));
    }
    let truths: Vec<IntentClass> = results.iter().map(|r| r.class).collect();
    let parse_preds: Vec<IntentClass> = results.iter().map(|r| r.parse_pred).collect();
    let tpl_preds: Vec<IntentClass> = results.iter().map(|r| r.template_pred).collect();
    let mut aggregate = String::from("method,trials,scr\n");
    aggregate.push_str(&format!(
        "two-sided-parse,{},{}\n",
        truths.len(),
        scr(&parse_preds, &truths)?
    ));
    aggregate.push_str(&format!(
        "template,{},{}\n",
        truths.len(),
        scr(&tpl_preds, &truths)?
    ));
    Ok((trials, aggregate, Vec::new()))
}

/// Detection delay as road length and width grow together.
fn road_size(cfg: &ExperimentConfig) -> Result<Artifacts> {
    let stacks: Vec<Stack> = (0..cfg.size_steps)
        .map(|k| {
            build_stack(
                cfg.grid.0,
                cfg.grid.1,
                cfg.road_len + 10.0 * k as f64,
                cfg.road_width + k as f64,
            )
        })
        .collect::<Result<_>>()?;
    let j = cfg.noise_levels[0];
    let mut specs = Vec::new();
    for k in 0..cfg.size_steps {
        for &class in &CLASSES {
            for t in 0..cfg.trials {
                let seed =
                    trial_seed(cfg.seed, &[4, k as u64, class.index() as u64, t as u64]);
                specs.push((k, class, t, seed));
            }
        }
    }
    let results: Vec<(u32, TrialResult)> = specs
        .par_iter()
        .map(|&(k, class, t, seed)| {
            let tr = run_tracked_trial(&stacks[k as usize], class, j, t, seed, cfg, false, None)?;
            Ok((k, tr))
        })
        .collect::<Result<_>>()?;

    let mut trials = String::from(
        "experiment,size_step,road_len,road_width,class,trial,seed,epochs,detect_epoch,delay\n",
    );
    let mut posts = Vec::new();
    for (k, tr) in &results {
        let g = &stacks[*k as usize].graph;
        trials.push_str(&format!(
            "road-size,{},{},{},{},{},{},{},{},{}\n",
            k,
            g.road_len,
            g.road_width,
            tr.class.name(),
            tr.trial,
            tr.seed,
            tr.epochs,
            detect_cell(tr),
            delay_of(tr)
        ));
        posts.push((
            format!("posteriors_s{}_{}_t{}.csv", k, tr.class.name(), tr.trial),
            posterior_csv(&tr.records),
        ));
    }

    let mut aggregate =
        String::from("size_step,road_len,road_width,class,trials,mean_delay\n");
    for k in 0..cfg.size_steps {
        let g = &stacks[k as usize].graph;
        let mut labels: Vec<Option<IntentClass>> = CLASSES.iter().copied().map(Some).collect();
        labels.push(None);
        for class in labels {
            let name = class.map_or("all", |c| c.name());
            let (n, m) = mean(
                results
                    .iter()
                    .filter(|(kk, tr)| *kk == k && class.is_none_or(|c| tr.class == c))
                    .map(|(_, tr)| delay_of(tr)),
            );
            aggregate.push_str(&format!(
                "{},{},{},{name},{n},{m}\n",
                k, g.road_len, g.road_width
            ));
        }
    }
    Ok((trials, aggregate, posts))
}
