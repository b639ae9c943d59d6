//! Grammar-driven particle filter over the road network.
//!
//! Each particle carries a kinematic state, its current road, a
//! distinct-road counter, and a handle into the shared [`PrefixStore`].
//! One filter step mirrors the generative model: when a particle's
//! lookahead crossed into its road's far intersection on the previous
//! step, a successor road is sampled from the grammar-mixture forecast
//! (or uniformly, for the Markov baseline); the state then propagates
//! along the assigned road with process noise, the counter updates from
//! the one-period lookahead, and the weight absorbs the measurement
//! likelihood. Resampling is systematic, triggered by effective sample
//! size. Class membership is read out as the weighted average of
//! per-particle grammar posteriors.

mod prefix_store;

pub use prefix_store::{NodeId, PrefixStore};

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::kinematics::{
    linear_predict, log_likelihood, propagate, KinematicState, Measurement, NoiseConfig,
    PlatformState,
};
use crate::parser::Parser;
use crate::roadgraph::{EdgeId, Location, RoadGraph};

/// How road transitions are proposed at intersections.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrackerMode {
    /// Grammar-mixture one-step forecast (the syntactic tracker).
    Syntactic,
    /// Uniform over feasible successors (VSIMM-style Markov baseline).
    Vsimm,
}

#[derive(Debug, Clone)]
pub struct TrackerConfig {
    pub particles: usize,
    pub noise: NoiseConfig,
    /// Resample when ESS falls below this fraction of the population.
    pub resample_frac: f64,
    /// Diagonal covariance of the initial state cloud around the true state.
    pub init_spread: [f64; 4],
    pub seed: u64,
    pub mode: TrackerMode,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            particles: 200,
            noise: NoiseConfig::level(0),
            resample_frac: 0.5,
            init_spread: [25.0, 25.0, 5.0, 5.0],
            seed: 0,
            mode: TrackerMode::Syntactic,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Particle {
    pub road: EdgeId,
    /// Prefix-store node for the deduplicated road history.
    pub node: NodeId,
    pub state: KinematicState,
    /// Distinct-road counter; increments when the lookahead enters the
    /// current road's far intersection.
    pub m: u32,
    /// Set when the counter incremented, consumed by the next step's road
    /// sampling.
    pub move_pending: bool,
    pub weight: f64,
}

/// Counters for rare events worth surfacing without failing a run.
#[derive(Debug, Clone, Copy, Default)]
pub struct Diagnostics {
    /// Road samplings where the grammar mixture had zero mass on every
    /// feasible successor (fell back to uniform).
    pub mixture_fallbacks: u64,
    /// Posterior evaluations where every grammar was dead (reverted to the
    /// prior).
    pub dead_prefix_particles: u64,
    pub resamples: u64,
}

/// Filter output for one epoch.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub k: u32,
    pub estimate: KinematicState,
    /// Posterior over grammars, in the order the parsers were supplied.
    pub posterior: Vec<f64>,
    /// Effective sample size before any resampling this epoch.
    pub ess: f64,
}

impl StepRecord {
    pub fn csv_header(class_names: &[&str]) -> String {
        let mut s = String::from("k,xhat,yhat,vxhat,vyhat");
        for name in class_names {
            s.push_str(",p_");
            s.push_str(name);
        }
        s.push_str(",ess");
        s
    }

    pub fn csv_row(&self) -> String {
        let mut s = format!(
            "{},{},{},{},{}",
            self.k, self.estimate.x, self.estimate.y, self.estimate.vx, self.estimate.vy
        );
        for p in &self.posterior {
            s.push(',');
            s.push_str(&p.to_string());
        }
        s.push(',');
        s.push_str(&self.ess.to_string());
        s
    }
}

/// Project a position onto a road's centerline, keeping the along-road
/// coordinate. Road-constrained motion carries no cross-track freedom, so
/// particles live on the centerline exactly like the generative model.
fn snap_to_centerline(graph: &RoadGraph, road: EdgeId, state: &mut KinematicState) {
    let (a, _) = graph.edge_centerline(road);
    let (ux, uy) = graph.edge(road).heading.unit();
    let along = (state.x - a.0) * ux + (state.y - a.1) * uy;
    state.x = a.0 + along * ux;
    state.y = a.1 + along * uy;
}

/// Systematic resampling: one uniform offset `u` in [0,1) places n evenly
/// spaced pointers over the weight CDF. Returns the selected ancestor index
/// for each slot, non-decreasing.
pub fn systematic_resample(weights: &[f64], u: f64) -> Vec<u32> {
    let n = weights.len();
    let mut out = Vec::with_capacity(n);
    let mut cum = weights[0];
    let mut j = 0usize;
    for i in 0..n {
        let target = (i as f64 + u) / n as f64;
        while cum < target && j + 1 < n {
            j += 1;
            cum += weights[j];
        }
        out.push(j as u32);
    }
    out
}

pub struct Tracker {
    graph: Arc<RoadGraph>,
    store: PrefixStore,
    prior: Vec<f64>,
    cfg: TrackerConfig,
    particles: Vec<Particle>,
    /// One stream per particle slot (stable across resampling) plus a
    /// filter-level stream for resampling decisions.
    rngs: Vec<ChaCha8Rng>,
    filter_rng: ChaCha8Rng,
    k: u32,
    diag: Diagnostics,
}

impl Tracker {
    /// Build a filter around `x1`, the true initial state: particle states
    /// are drawn from a Gaussian cloud around it, each is snapped to its
    /// nearest road, and (in syntactic mode) every grammar chart advances
    /// by that first road.
    pub fn new(
        graph: Arc<RoadGraph>,
        parsers: Vec<Arc<Parser>>,
        prior: Vec<f64>,
        x1: &KinematicState,
        cfg: TrackerConfig,
    ) -> Result<Tracker> {
        if cfg.particles == 0 {
            return Err(Error::InvalidArgument("particle count must be >= 1".into()));
        }
        if cfg.mode == TrackerMode::Syntactic && prior.len() != parsers.len() {
            return Err(Error::InvalidArgument(format!(
                "prior has {} entries for {} grammars",
                prior.len(),
                parsers.len()
            )));
        }
        cfg.noise.validate()?;
        let total: f64 = prior.iter().sum();
        if prior.is_empty() || !(total.is_finite() && total > 0.0) || prior.iter().any(|p| *p < 0.0)
        {
            return Err(Error::InvalidArgument(
                "prior must be nonempty, nonnegative, and normalizable".into(),
            ));
        }
        let prior: Vec<f64> = prior.iter().map(|p| p / total).collect();

        let mut store = PrefixStore::new(&graph, parsers)?;
        let filter_rng = stream_rng(cfg.seed, 0);
        let mut rngs: Vec<ChaCha8Rng> = (0..cfg.particles)
            .map(|i| stream_rng(cfg.seed, 1 + i as u64))
            .collect();
        let n = cfg.particles;
        let mut particles = Vec::with_capacity(n);
        for rng in rngs.iter_mut() {
            let mut draw = |var: f64| -> f64 {
                let e: f64 = rng.sample(StandardNormal);
                var.sqrt() * e
            };
            let mut state = KinematicState::new(
                x1.x + draw(cfg.init_spread[0]),
                x1.y + draw(cfg.init_spread[1]),
                x1.vx + draw(cfg.init_spread[2]),
                x1.vy + draw(cfg.init_spread[3]),
            );
            // Nearest road, directed to agree with the drawn velocity.
            let mut road = graph.locate_road(state.pos(), None);
            let (ux, uy) = graph.edge(road).heading.unit();
            if state.vx * ux + state.vy * uy < 0.0 {
                road = graph.reverse_edge(road);
            }
            snap_to_centerline(&graph, road, &mut state);
            let node = match cfg.mode {
                TrackerMode::Syntactic => store.child(store.root(), road)?,
                TrackerMode::Vsimm => store.root(),
            };
            particles.push(Particle {
                road,
                node,
                state,
                m: 1,
                move_pending: false,
                weight: 1.0 / n as f64,
            });
        }
        Ok(Tracker {
            graph,
            store,
            prior,
            cfg,
            particles,
            rngs,
            filter_rng,
            k: 0,
            diag: Diagnostics::default(),
        })
    }

    pub fn particles(&self) -> &[Particle] {
        &self.particles
    }

    pub fn store(&self) -> &PrefixStore {
        &self.store
    }

    pub fn prior(&self) -> &[f64] {
        &self.prior
    }

    pub fn diagnostics(&self) -> Diagnostics {
        self.diag
    }

    pub fn epoch(&self) -> u32 {
        self.k
    }

    /// Posterior over grammars for one particle's road history (the prior
    /// in Markov mode, or when every grammar is dead).
    fn particle_posterior(&mut self, node: NodeId) -> Vec<f64> {
        match self.cfg.mode {
            TrackerMode::Vsimm => self.prior.clone(),
            TrackerMode::Syntactic => {
                let (post, all_dead) = self.store.class_posterior(node, &self.prior);
                if all_dead {
                    self.diag.dead_prefix_particles += 1;
                }
                post
            }
        }
    }

    fn aggregate(&mut self) -> StepRecord {
        let mut est = KinematicState::new(0.0, 0.0, 0.0, 0.0);
        let mut posterior = vec![0.0; self.prior.len()];
        let mut ess_den = 0.0;
        for i in 0..self.particles.len() {
            let (w, state, node) = {
                let p = &self.particles[i];
                (p.weight, p.state, p.node)
            };
            est.x += w * state.x;
            est.y += w * state.y;
            est.vx += w * state.vx;
            est.vy += w * state.vy;
            let post = self.particle_posterior(node);
            for (acc, p) in posterior.iter_mut().zip(&post) {
                *acc += w * p;
            }
            ess_den += w * w;
        }
        StepRecord {
            k: self.k,
            estimate: est,
            posterior,
            ess: 1.0 / ess_den,
        }
    }

    /// Filter output for the initialization epoch (no measurement consumed).
    pub fn initial_record(&mut self) -> StepRecord {
        self.aggregate()
    }

    /// Advance the filter by one epoch. `z` is the measurement for the new
    /// epoch, or `None` for a dropped one (particles propagate, weights
    /// stay). Returns the post-update estimate, class posterior, and the
    /// pre-resampling effective sample size.
    pub fn step(&mut self, z: Option<&Measurement>, platform: &PlatformState) -> Result<StepRecord> {
        self.k += 1;
        let n = self.particles.len();
        let t = self.cfg.noise.t;
        let n_classes = self.prior.len();
        let mut logw = vec![0.0f64; n];

        for i in 0..n {
            // Road transition, due when the previous step's lookahead
            // entered the far intersection.
            if self.particles[i].move_pending {
                let road = self.particles[i].road;
                let node = self.particles[i].node;
                let support: Vec<EdgeId> = self.graph.feasible_next(road).to_vec();
                let mut mass = vec![0.0f64; support.len()];
                if self.cfg.mode == TrackerMode::Syntactic {
                    let (post, all_dead) = self.store.class_posterior(node, &self.prior);
                    if !all_dead {
                        for g in 0..n_classes {
                            if post[g] <= 0.0 || self.store.is_dead(node, g) {
                                continue;
                            }
                            for (j, &e) in support.iter().enumerate() {
                                mass[j] += post[g] * self.store.next_road_prob(node, g, e);
                            }
                        }
                    }
                    let total: f64 = mass.iter().sum();
                    if total <= 0.0 {
                        self.diag.mixture_fallbacks += 1;
                        mass.iter_mut().for_each(|m| *m = 1.0);
                    }
                } else {
                    mass.iter_mut().for_each(|m| *m = 1.0);
                }
                let total: f64 = mass.iter().sum();
                let u: f64 = self.rngs[i].random();
                let mut acc = 0.0;
                let mut choice = support.len() - 1;
                for (j, m) in mass.iter().enumerate() {
                    acc += m / total;
                    if u < acc {
                        choice = j;
                        break;
                    }
                }
                let next = support[choice];
                self.particles[i].road = next;
                if self.cfg.mode == TrackerMode::Syntactic {
                    self.particles[i].node = self.store.child(node, next)?;
                }
                self.particles[i].move_pending = false;
                // Turn onto the new road: position projected onto its
                // centerline, speed carried over onto its heading.
                let speed = self.particles[i].state.speed();
                let (ux, uy) = self.graph.edge(next).heading.unit();
                let mut state = self.particles[i].state;
                snap_to_centerline(&self.graph, next, &mut state);
                state.vx = speed * ux;
                state.vy = speed * uy;
                self.particles[i].state = state;
            }

            // Kinematics along the assigned road.
            let heading = self.graph.edge(self.particles[i].road).heading;
            let state = propagate(
                &self.particles[i].state,
                heading,
                &self.cfg.noise,
                &mut self.rngs[i],
            );
            self.particles[i].state = state;

            // Counter update from the one-period lookahead.
            let road = self.particles[i].road;
            let look = linear_predict(&state, t);
            if self.graph.locate(look.pos(), Some(road))
                == Location::Intersection(self.graph.edge(road).into)
            {
                self.particles[i].m += 1;
                self.particles[i].move_pending = true;
            }

            logw[i] = self.particles[i].weight.ln()
                + z.map_or(0.0, |z| {
                    log_likelihood(z, &state, platform, &self.cfg.noise)
                });
        }

        // Normalize in log space.
        let max = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(Error::FilterDivergence(format!(
                "all particle weights vanished at epoch {}",
                self.k
            )));
        }
        let mut sum = 0.0;
        for lw in logw.iter_mut() {
            *lw = (*lw - max).exp();
            sum += *lw;
        }
        let mut ess_den = 0.0;
        for (p, w) in self.particles.iter_mut().zip(&logw) {
            p.weight = w / sum;
            ess_den += p.weight * p.weight;
        }
        let ess = 1.0 / ess_den;

        if ess < self.cfg.resample_frac * n as f64 {
            let weights: Vec<f64> = self.particles.iter().map(|p| p.weight).collect();
            let u: f64 = self.filter_rng.random();
            let picks = systematic_resample(&weights, u);
            let mut next: Vec<Particle> = picks
                .iter()
                .map(|&j| self.particles[j as usize].clone())
                .collect();
            let w = 1.0 / n as f64;
            next.iter_mut().for_each(|p| p.weight = w);
            self.particles = next;
            self.diag.resamples += 1;
        }

        let mut rec = self.aggregate();
        rec.ess = ess;
        Ok(rec)
    }

    /// Run the filter over a full measurement sequence. Epoch 0 is the
    /// initialization record (its measurement, if any, is already embodied
    /// in the known initial state); epochs 1.. consume `zs[1..]`.
    pub fn run(
        &mut self,
        zs: &[Option<Measurement>],
        platform_at: impl Fn(u32) -> PlatformState,
    ) -> Result<Vec<StepRecord>> {
        let mut records = Vec::with_capacity(zs.len());
        records.push(self.initial_record());
        for (idx, z) in zs.iter().enumerate().skip(1) {
            records.push(self.step(z.as_ref(), &platform_at(idx as u32))?);
        }
        Ok(records)
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
