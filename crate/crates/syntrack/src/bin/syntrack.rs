//! Command-line front end: scenario simulation, tracking, parsing, and the
//! experiment harness.

use std::fs;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Args, Parser as ClapParser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use syntrack::expcli::{run_experiment, ExperimentConfig, EXPERIMENTS};
use syntrack::grammar::{build_class_grammar, IntentClass, TermId, CLASSES};
use syntrack::kinematics::NoiseConfig;
use syntrack::parser::{Column, Obs, Parser};
use syntrack::roadgraph::{Orientation, RoadGraph};
use syntrack::simgen::{gen_measurements, gen_truth, read_scenario, write_scenario, Scenario};
use syntrack::tracker::{StepRecord, Tracker, TrackerConfig, TrackerMode};

#[derive(ClapParser)]
#[command(name = "syntrack", version, about = "Syntactic road-network target tracking")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct GridArgs {
    /// Road grid as RxC block rows and columns.
    #[arg(long, default_value = "6x6", value_parser = parse_grid)]
    grid: (u32, u32),
    /// Road (block side) length in meters.
    #[arg(long, default_value_t = 100.0)]
    road_len: f64,
    /// Road width in meters.
    #[arg(long, default_value_t = 5.0)]
    road_width: f64,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a ground-truth scenario with radar measurements.
    Simulate {
        #[command(flatten)]
        grid: GridArgs,
        /// Trajectory class: equal, patrol or asym.
        #[arg(long, default_value = "patrol")]
        class: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Measurement-noise level j (sigma + j*step).
        #[arg(long = "noise-level", default_value_t = 0)]
        noise_level: u32,
        /// Output scenario file (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the particle filter over a scenario file.
    Track {
        /// Scenario file written by `simulate`.
        scenario: PathBuf,
        #[arg(long, default_value_t = 200)]
        particles: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Tracker flavor: syntactic (grammar mixture) or markov (uniform).
        #[arg(long, default_value = "syntactic")]
        mode: String,
        /// Output CSV of per-epoch records (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parse a scenario's road string under each class grammar.
    Parse {
        /// Scenario file written by `simulate`.
        scenario: PathBuf,
        /// Output CSV (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a named experiment batch and write CSV reports.
    Experiment {
        /// One of: detection-sweep, improvement, template-vs-syntactic,
        /// missing-tracklets, perturbed, road-size.
        #[arg(long)]
        experiment: Option<String>,
        /// JSON config file; flags override its fields.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory for trials.csv, aggregate.csv, posteriors.
        #[arg(long, default_value = "experiment-out")]
        out: PathBuf,
        #[arg(long)]
        grid: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        particles: Option<usize>,
        /// Restrict the noise sweep to a single level j.
        #[arg(long = "noise-level")]
        noise_level: Option<u32>,
        /// Trials per class (per level).
        #[arg(long)]
        trials: Option<u32>,
        /// Worker threads (0 = all cores).
        #[arg(long)]
        workers: Option<usize>,
        /// Run at the published scale (1000 particles, 20 trials).
        #[arg(long, default_value_t = false)]
        paper_scale: bool,
    },
}

fn parse_grid(s: &str) -> Result<(u32, u32), String> {
    let (r, c) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("grid {s:?} is not of the form RxC"))?;
    let rows = r.trim().parse().map_err(|e| format!("grid rows: {e}"))?;
    let cols = c.trim().parse().map_err(|e| format!("grid cols: {e}"))?;
    Ok((rows, cols))
}

fn class_of(name: &str) -> anyhow::Result<IntentClass> {
    IntentClass::from_name(name).map_err(|e| anyhow::anyhow!("{e}"))
}

fn emit(out: Option<PathBuf>, content: &str) -> anyhow::Result<()> {
    match out {
        Some(path) => {
            fs::write(&path, content).with_context(|| format!("writing {}", path.display()))?;
            eprintln!("wrote {}", path.display());
        }
        None => print!("{content}"),
    }
    Ok(())
}

fn main() -> anyhow::Result<()> {
    match Cli::parse().cmd {
        Cmd::Simulate {
            grid,
            class,
            seed,
            noise_level,
            out,
        } => {
            let class = class_of(&class)?;
            let graph = Arc::new(RoadGraph::new(
                grid.grid.0,
                grid.grid.1,
                grid.road_len,
                grid.road_width,
            )?);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut s = gen_truth(class, &graph, &mut rng)?;
            s.seed = seed;
            gen_measurements(&mut s, &NoiseConfig::level(noise_level), &mut rng)?;
            emit(out, &write_scenario(&s))
        }
        Cmd::Track {
            scenario,
            particles,
            seed,
            mode,
            out,
        } => {
            let text = fs::read_to_string(&scenario)
                .with_context(|| format!("reading {}", scenario.display()))?;
            let s = read_scenario(&text)?;
            let mode = match mode.as_str() {
                "syntactic" => TrackerMode::Syntactic,
                "markov" | "vsimm" => TrackerMode::Vsimm,
                other => bail!("unknown tracker mode {other:?} (syntactic or markov)"),
            };
            let parsers = CLASSES
                .iter()
                .map(|&c| {
                    build_class_grammar(&s.graph, c, Orientation::Clockwise)
                        .map(|g| Arc::new(Parser::new(Arc::new(g))))
                })
                .collect::<syntrack::Result<Vec<_>>>()?;
            let cfg = TrackerConfig {
                particles,
                noise: s.noise,
                seed,
                mode,
                ..TrackerConfig::default()
            };
            let mut tracker = Tracker::new(
                s.graph.clone(),
                parsers,
                vec![1.0 / CLASSES.len() as f64; CLASSES.len()],
                &s.states[0],
                cfg,
            )?;
            let records = tracker.run(&s.measurements, |k| s.platform.at(k, &s.noise))?;
            let names = CLASSES.map(|c| c.name());
            let mut csv = StepRecord::csv_header(&names);
            csv.push('\n');
            for r in &records {
                csv.push_str(&r.csv_row());
                csv.push('\n');
            }
            emit(out, &csv)
        }
        Cmd::Parse { scenario, out } => {
            let text = fs::read_to_string(&scenario)
                .with_context(|| format!("reading {}", scenario.display()))?;
            let s = read_scenario(&text)?;
            emit(out, &parse_report(&s)?)
        }
        Cmd::Experiment {
            experiment,
            config,
            out,
            grid,
            seed,
            particles,
            noise_level,
            trials,
            workers,
            paper_scale,
        } => {
            let mut cfg: ExperimentConfig = match config {
                Some(path) => {
                    let text = fs::read_to_string(&path)
                        .with_context(|| format!("reading {}", path.display()))?;
                    serde_json::from_str(&text)
                        .with_context(|| format!("parsing {}", path.display()))?
                }
                None => ExperimentConfig::default(),
            };
            if paper_scale {
                cfg.particles = 1000;
                cfg.trials = 20;
            }
            if let Some(e) = experiment {
                cfg.experiment = e;
            }
            if let Some(g) = grid {
                cfg.grid = parse_grid(&g).map_err(|e| anyhow::anyhow!(e))?;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(p) = particles {
                cfg.particles = p;
            }
            if let Some(j) = noise_level {
                cfg.noise_levels = vec![j];
            }
            if let Some(t) = trials {
                cfg.trials = t;
            }
            if let Some(w) = workers {
                cfg.workers = w;
            }
            if !EXPERIMENTS.contains(&cfg.experiment.as_str()) {
                bail!(
                    "unknown experiment {:?}; expected one of {}",
                    cfg.experiment,
                    EXPERIMENTS.join(", ")
                );
            }
            let report = run_experiment(&cfg, &out)?;
            eprintln!(
                "wrote {} and {} (+{} posterior files)",
                report.trials_path.display(),
                report.aggregate_path.display(),
                report.posterior_files.len()
            );
            print!("{}", report.aggregate_csv);
            Ok(())
        }
    }
}

/// Per-grammar incremental parse of the scenario's road string: one row per
/// (class, epoch) while that grammar's prefix is alive.
fn parse_report(s: &Scenario) -> anyhow::Result<String> {
    let mut out = String::from("class,k,road,pred_prob,zeta,ln_prefix\n");
    for &class in &CLASSES {
        let grammar = Arc::new(build_class_grammar(&s.graph, class, Orientation::Clockwise)?);
        let terms: Vec<Option<TermId>> = s
            .roads
            .iter()
            .map(|&e| {
                let name = s.graph.edge_name(e);
                (0..grammar.num_terms() as TermId).find(|&t| grammar.term_name(t) == name)
            })
            .collect();
        let parser = Parser::new(grammar);
        let mut cols = vec![parser.init_column()?];
        for (k, (&road, term)) in s.roads.iter().zip(&terms).enumerate() {
            let Some(term) = term else { break };
            let pred = parser
                .one_step(cols.last().unwrap())
                .get(term)
                .copied()
                .unwrap_or(0.0);
            let path: Vec<&Column> = cols.iter().collect();
            let Ok(col) = parser.advance(&path, &Obs::Hard(*term)) else {
                break;
            };
            out.push_str(&format!(
                "{},{},\"{}\",{},{},{}\n",
                class.name(),
                k,
                s.graph.edge_name(road),
                pred,
                col.zeta,
                col.log_prefix
            ));
            cols.push(col);
        }
    }
    Ok(out)
}
