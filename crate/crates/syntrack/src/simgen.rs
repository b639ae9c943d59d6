//! Ground-truth scenario generation: class-conditioned road strings,
//! road-confined kinematic integration, measurement synthesis, tracklet
//! dropouts, trajectory perturbation, and template libraries.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grammar::{build_class_grammar, Grammar, IntentClass, RuleTag};
use crate::kinematics::{
    measure, propagate, KinematicState, Measurement, NoiseConfig, PlatformPath,
};
use crate::roadgraph::{EdgeId, Location, Orientation, RoadGraph};

/// One simulated trial: the intent class, its road string, the epoch-level
/// kinematic truth, and (once generated) the measurement sequence with
/// presence flags.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub class: IntentClass,
    pub graph: Arc<RoadGraph>,
    /// The grammar-level road string (one id per distinct road).
    pub roads: Vec<EdgeId>,
    /// Kinematic truth, one state per epoch.
    pub states: Vec<KinematicState>,
    /// Road occupied at each epoch.
    pub road_at: Vec<EdgeId>,
    /// Measurements, `None` where the tracklet was dropped. Empty until
    /// `gen_measurements` runs.
    pub measurements: Vec<Option<Measurement>>,
    pub noise: NoiseConfig,
    pub platform: PlatformPath,
    pub seed: u64,
}

impl Scenario {
    pub fn epochs(&self) -> usize {
        self.states.len()
    }
}

/// Per-class parameter draws used by the experiments: the repetition count
/// (and, for the asymmetric class, the extra-circuit margin).
fn class_params<R: Rng>(class: IntentClass, rng: &mut R) -> (u32, u32) {
    match class {
        IntentClass::Equal => (rng.random_range(2..=4), 0),
        IntentClass::Patrol => (rng.random_range(2..=4), 0),
        IntentClass::Asym => (rng.random_range(1..=3), rng.random_range(1..=2)),
    }
}

/// Policy steering a derivation to exact repetition counts. Budgets are
/// keyed by the recursion family (the nonterminal name up to its first
/// bracket); each tagged decision spends its family budget on `Recurse`
/// until exhausted, then demands `Exit`.
fn count_policy(
    class: IntentClass,
    n: u32,
    delta: u32,
) -> impl FnMut(&Grammar, u32, Option<u32>, &[u32]) -> Option<RuleTag> {
    let mut core = match class {
        IntentClass::Equal => n - 1,
        IntentClass::Patrol => n - 2,
        IntentClass::Asym => n - 1,
    };
    let mut tail = match class {
        IntentClass::Asym => delta - 1,
        _ => 0,
    };
    move |g: &Grammar, nt: u32, _ctx, _ids| {
        let name = g.nt_name(nt);
        let fam = name.split('[').next().unwrap_or(name);
        let budget: &mut u32 = match (class, fam) {
            (IntentClass::Equal, "Core") => &mut core,
            (IntentClass::Patrol, "X") => &mut core,
            (IntentClass::Asym, "X") => &mut core,
            (IntentClass::Asym, "D") => &mut tail,
            _ => return None,
        };
        if *budget > 0 {
            *budget -= 1;
            Some(RuleTag::Recurse)
        } else {
            Some(RuleTag::Exit)
        }
    }
}

const TRUTH_SPEED: f64 = 10.0;
const SPEED_MIN: f64 = 2.0;
const SPEED_MAX: f64 = 30.0;
const GEN_ATTEMPTS: usize = 200;

/// Integrate road-confined kinematics along a road string: the propagation
/// model with process noise, with the cross-track coordinate snapped back
/// to the centerline, velocity projected onto the road heading, and speed
/// clamped to a sane moving range. Returns one state and road id per
/// epoch; the run ends when the final road has been fully traversed.
pub fn integrate_truth<R: Rng>(
    graph: &RoadGraph,
    roads: &[EdgeId],
    cfg: &NoiseConfig,
    rng: &mut R,
) -> Result<(Vec<KinematicState>, Vec<EdgeId>)> {
    if roads.is_empty() {
        return Err(Error::InvalidArgument("empty road string".into()));
    }
    if !graph.is_feasible(roads) {
        return Err(Error::InvalidArgument(
            "road string is not connected on the graph".into(),
        ));
    }
    let mut ri = 0usize;
    let mut road = roads[0];
    let (mut a, _) = graph.edge_centerline(road);
    let mut u = graph.edge(road).heading.unit();
    // Start mid-road rather than on the intersection vertex, so a tracker
    // initialized near the true state cannot straddle the junction and
    // assign particles a feeder road the target never drove.
    let half = graph.road_len * 0.5;
    let mut state = KinematicState::new(
        a.0 + half * u.0,
        a.1 + half * u.1,
        TRUTH_SPEED * u.0,
        TRUTH_SPEED * u.1,
    );
    let cap = (roads.len() as f64 * graph.road_len / (SPEED_MIN * cfg.t)) as usize + 256;
    let mut states = vec![state];
    let mut road_at = vec![road];
    loop {
        if states.len() > cap {
            return Err(Error::DerivationOverflow(format!(
                "trajectory exceeded {cap} epochs without finishing its roads"
            )));
        }
        let mut s = propagate(&state, graph.edge(road).heading, cfg, rng);
        // Confine to the road: lateral snap, heading-aligned velocity,
        // clamped forward speed.
        let speed = (s.vx * u.0 + s.vy * u.1).clamp(SPEED_MIN, SPEED_MAX);
        s.vx = speed * u.0;
        s.vy = speed * u.1;
        if u.0 == 0.0 {
            s.x = a.0;
        } else {
            s.y = a.1;
        }
        let along = (s.x - a.0) * u.0 + (s.y - a.1) * u.1;
        if along >= graph.road_len {
            ri += 1;
            if ri == roads.len() {
                state = s;
                states.push(state);
                road_at.push(road);
                break;
            }
            let over = along - graph.road_len;
            road = roads[ri];
            let (na, _) = graph.edge_centerline(road);
            let nu = graph.edge(road).heading.unit();
            s.x = na.0 + over * nu.0;
            s.y = na.1 + over * nu.1;
            s.vx = speed * nu.0;
            s.vy = speed * nu.1;
            a = na;
            u = nu;
        }
        state = s;
        states.push(state);
        road_at.push(road);
    }
    Ok((states, road_at))
}

/// Sample a ground-truth trajectory of the given class: class parameters
/// drawn per the experiment distributions, a road string derived under a
/// count-forcing policy, and road-confined kinematics at 10 m/s initial
/// speed. No measurements yet.
pub fn gen_truth<R: Rng>(
    class: IntentClass,
    graph: &Arc<RoadGraph>,
    rng: &mut R,
) -> Result<Scenario> {
    let grammar = build_class_grammar(graph, class, Orientation::Clockwise)?;
    gen_truth_with(&grammar, class, graph, rng)
}

/// `gen_truth` with a prebuilt clockwise grammar (the hot path for trial
/// batches).
pub fn gen_truth_with<R: Rng>(
    grammar: &Grammar,
    class: IntentClass,
    graph: &Arc<RoadGraph>,
    rng: &mut R,
) -> Result<Scenario> {
    let max_len = 64 * (graph.block_rows + graph.block_cols) as usize;
    let mut last_err = None;
    for _ in 0..GEN_ATTEMPTS {
        let (n, delta) = class_params(class, rng);
        let policy = count_policy(class, n, delta);
        let roads = match grammar.sample_with_policy(rng, max_len, policy) {
            Ok(r) => r,
            Err(e) => {
                // A placement drawn by chance can make the forced count
                // unreachable; try again from fresh randomness.
                last_err = Some(e);
                continue;
            }
        };
        let cfg = NoiseConfig::level(0);
        let (states, road_at) = integrate_truth(graph, &roads, &cfg, rng)?;
        return Ok(Scenario {
            class,
            graph: graph.clone(),
            roads,
            states,
            road_at,
            measurements: Vec::new(),
            noise: cfg,
            platform: PlatformPath::default(),
            seed: 0,
        });
    }
    Err(Error::InvalidArgument(format!(
        "no {} placement satisfied the drawn parameters after {GEN_ATTEMPTS} attempts: {}",
        class.name(),
        last_err.map(|e| e.to_string()).unwrap_or_default()
    )))
}

/// Fill in the measurement sequence: one noisy observation per epoch from
/// the orbiting platform, all present.
pub fn gen_measurements<R: Rng>(s: &mut Scenario, cfg: &NoiseConfig, rng: &mut R) -> Result<()> {
    if s.states.is_empty() {
        return Err(Error::InvalidArgument("scenario has no states".into()));
    }
    s.noise = NoiseConfig {
        sigma_r: cfg.sigma_r,
        sigma_rdot: cfg.sigma_rdot,
        sigma_az: cfg.sigma_az,
        ..s.noise
    };
    s.measurements = s
        .states
        .iter()
        .enumerate()
        .map(|(k, x)| measure(x, &s.platform.at(k as u32, &s.noise), &s.noise, rng).map(Some))
        .collect::<Result<Vec<_>>>()?;
    Ok(())
}

/// Dropout styles for missing tracklets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropMode {
    /// Around each hit intersection, every epoch of a 20-epoch window is
    /// independently dropped with probability one half.
    Scattered,
    /// Each hit intersection loses its whole crossing plus the following
    /// 20 epochs as one contiguous burst.
    Burst,
}

/// Maximal epoch runs spent inside intersection squares.
fn intersection_visits(s: &Scenario) -> Vec<(usize, usize)> {
    let mut visits = Vec::new();
    let mut open: Option<usize> = None;
    for (k, x) in s.states.iter().enumerate() {
        let inside = matches!(
            s.graph.locate(x.pos(), Some(s.road_at[k])),
            Location::Intersection(_)
        );
        match (inside, open) {
            (true, None) => open = Some(k),
            (false, Some(start)) => {
                visits.push((start, k));
                open = None;
            }
            _ => {}
        }
    }
    if let Some(start) = open {
        visits.push((start, s.states.len()));
    }
    visits
}

const DROP_WINDOW: usize = 20;

/// Mark measurements absent around a share of the trajectory's
/// intersection crossings. `loss_pct` picks that share; a crossing hit by
/// `Scattered` mode loses epochs independently inside its window, one hit
/// by `Burst` mode loses the crossing plus the next 20 epochs outright.
/// Surviving measurement values are untouched.
pub fn drop_tracklets<R: Rng>(
    s: &mut Scenario,
    mode: DropMode,
    loss_pct: u32,
    rng: &mut R,
) -> Result<()> {
    if loss_pct > 100 {
        return Err(Error::InvalidArgument(format!(
            "loss percentage {loss_pct} outside [0, 100]"
        )));
    }
    if s.measurements.is_empty() {
        return Err(Error::InvalidArgument(
            "scenario has no measurements to drop".into(),
        ));
    }
    if loss_pct == 0 {
        return Ok(());
    }
    let visits = intersection_visits(s);
    if visits.is_empty() {
        return Ok(());
    }
    let want = ((loss_pct as f64 / 100.0) * visits.len() as f64).round() as usize;
    let want = want.clamp(if loss_pct > 0 { 1 } else { 0 }, visits.len());
    // Partial Fisher-Yates draw of `want` distinct visits.
    let mut idx: Vec<usize> = (0..visits.len()).collect();
    for i in 0..want {
        let j = rng.random_range(i..idx.len());
        idx.swap(i, j);
    }
    let k_total = s.measurements.len();
    for &vi in idx[..want].iter() {
        let (start, end) = visits[vi];
        match mode {
            DropMode::Scattered => {
                for k in start..(start + DROP_WINDOW).min(k_total) {
                    if rng.random::<f64>() < 0.5 {
                        s.measurements[k] = None;
                    }
                }
            }
            DropMode::Burst => {
                for k in start..(end + DROP_WINDOW).min(k_total) {
                    s.measurements[k] = None;
                }
            }
        }
    }
    Ok(())
}

const PERTURB_ATTEMPTS: usize = 400;
const DETOUR_MAX_LEN: usize = 7;

/// Enumerate connecting road sequences from the end of `before` to the
/// start of `after`, up to `max_len` roads, depth-first in id order.
fn detours(
    graph: &RoadGraph,
    before: EdgeId,
    after: EdgeId,
    max_len: usize,
    cap: usize,
) -> Vec<Vec<EdgeId>> {
    let mut found = Vec::new();
    let mut path: Vec<EdgeId> = Vec::new();
    fn go(
        graph: &RoadGraph,
        cur: EdgeId,
        after: EdgeId,
        path: &mut Vec<EdgeId>,
        found: &mut Vec<Vec<EdgeId>>,
        max_len: usize,
        cap: usize,
    ) {
        if found.len() >= cap {
            return;
        }
        for &e in graph.feasible_next(cur) {
            path.push(e);
            if graph.feasible_next(e).contains(&after) {
                found.push(path.clone());
            }
            if path.len() < max_len {
                go(graph, e, after, path, found, max_len, cap);
            }
            path.pop();
            if found.len() >= cap {
                return;
            }
        }
    }
    go(graph, before, after, &mut path, &mut found, max_len, cap);
    found
}

/// Replace one random interior segment of 3 to 5 roads with a different
/// feasible detour (possibly of different length), then rebuild the
/// kinematics and, if the scenario had them, the measurements.
pub fn perturb<R: Rng>(s: &Scenario, rng: &mut R) -> Result<Scenario> {
    let len = s.roads.len();
    if len < 8 {
        return Err(Error::InvalidArgument(format!(
            "road string of {len} too short to perturb (need at least 8)"
        )));
    }
    for _ in 0..PERTURB_ATTEMPTS {
        let seg = rng.random_range(3..=5usize);
        if len < seg + 2 {
            continue;
        }
        let start = rng.random_range(1..len - seg);
        let before = s.roads[start - 1];
        let after = s.roads[start + seg];
        let original = &s.roads[start..start + seg];
        let mut options = detours(&s.graph, before, after, DETOUR_MAX_LEN, 4096);
        options.retain(|d| d.as_slice() != original);
        if options.is_empty() {
            continue;
        }
        let pick = rng.random_range(0..options.len());
        let mut roads = Vec::with_capacity(len - seg + options[pick].len());
        roads.extend_from_slice(&s.roads[..start]);
        roads.extend_from_slice(&options[pick]);
        roads.extend_from_slice(&s.roads[start + seg..]);
        debug_assert!(s.graph.is_feasible(&roads));
        let (states, road_at) = integrate_truth(&s.graph, &roads, &s.noise, rng)?;
        let mut out = Scenario {
            class: s.class,
            graph: s.graph.clone(),
            roads,
            states,
            road_at,
            measurements: Vec::new(),
            noise: s.noise,
            platform: s.platform,
            seed: s.seed,
        };
        if !s.measurements.is_empty() {
            gen_measurements(&mut out, &s.noise.clone(), rng)?;
        }
        return Ok(out);
    }
    Err(Error::PerturbationFailure(format!(
        "no feasible detour found after {PERTURB_ATTEMPTS} attempts"
    )))
}

/// Edit distance between two symbol sequences.
pub fn levenshtein(a: &[u32], b: &[u32]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0usize; b.len() + 1];
    for (i, &ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, &cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// An operator's example library for one class: road strings drawn from
/// the truth generator.
#[derive(Debug, Clone)]
pub struct TemplateSet {
    pub class: IntentClass,
    pub strings: Vec<Vec<EdgeId>>,
}

pub fn gen_templates<R: Rng>(
    class: IntentClass,
    graph: &Arc<RoadGraph>,
    n: usize,
    rng: &mut R,
) -> Result<TemplateSet> {
    if n == 0 {
        return Err(Error::InvalidArgument("template count must be >= 1".into()));
    }
    let grammar = build_class_grammar(graph, class, Orientation::Clockwise)?;
    let strings = (0..n)
        .map(|_| gen_truth_with(&grammar, class, graph, rng).map(|s| s.roads))
        .collect::<Result<Vec<_>>>()?;
    Ok(TemplateSet { class, strings })
}

/// Nearest-template classification: the class owning the template at
/// global minimum edit distance, ties broken by set order.
pub fn classify_by_templates(roads: &[EdgeId], sets: &[TemplateSet]) -> IntentClass {
    let mut best = (usize::MAX, sets[0].class);
    for set in sets {
        for t in &set.strings {
            let d = levenshtein(roads, t);
            if d < best.0 {
                best = (d, set.class);
            }
        }
    }
    best.1
}

/// Scenario file header, the JSON first line of the on-disk format.
#[derive(Debug, Serialize, Deserialize)]
pub struct ScenarioHeader {
    pub class: String,
    pub seed: u64,
    pub noise: NoiseConfig,
    pub block_rows: u32,
    pub block_cols: u32,
    pub road_len: f64,
    pub road_width: f64,
    pub platform: PlatformPath,
    pub roads: Vec<String>,
}

const SCENARIO_COLUMNS: [&str; 10] = ["k", "x", "y", "vx", "vy", "road", "r", "rdot", "az", "present"];

/// Serialize a scenario: one JSON header line, then a CSV body with one
/// row per epoch (`k,x,y,vx,vy,road,r,rdot,az,present`). The road cell is
/// quoted since edge names contain commas; measurement cells are empty on
/// absent epochs.
pub fn write_scenario(s: &Scenario) -> String {
    let header = ScenarioHeader {
        class: s.class.name().to_string(),
        seed: s.seed,
        noise: s.noise,
        block_rows: s.graph.block_rows,
        block_cols: s.graph.block_cols,
        road_len: s.graph.road_len,
        road_width: s.graph.road_width,
        platform: s.platform,
        roads: s.roads.iter().map(|&e| s.graph.edge_name(e)).collect(),
    };
    let mut out = serde_json::to_string(&header).expect("header serializes");
    out.push('\n');
    out.push_str(&SCENARIO_COLUMNS.join(","));
    out.push('\n');
    for (k, x) in s.states.iter().enumerate() {
        let z = s.measurements.get(k).copied().flatten();
        let (r, rd, az, present) = match z {
            Some(z) => (
                z.range.to_string(),
                z.range_rate.to_string(),
                z.azimuth.to_string(),
                1,
            ),
            None => (String::new(), String::new(), String::new(), 0),
        };
        out.push_str(&format!(
            "{k},{},{},{},{},\"{}\",{r},{rd},{az},{present}\n",
            x.x,
            x.y,
            x.vx,
            x.vy,
            s.graph.edge_name(s.road_at[k]),
        ));
    }
    out
}

/// Parse a scenario file produced by `write_scenario`, rebuilding the road
/// graph from the header.
pub fn read_scenario(text: &str) -> Result<Scenario> {
    let (first, body) = text
        .split_once('\n')
        .ok_or_else(|| Error::Format("scenario file has no body".into()))?;
    let header: ScenarioHeader = serde_json::from_str(first)?;
    let graph = Arc::new(RoadGraph::new(
        header.block_rows,
        header.block_cols,
        header.road_len,
        header.road_width,
    )?);
    let class = IntentClass::from_name(&header.class)?;
    let roads = header
        .roads
        .iter()
        .map(|n| graph.edge_by_name(n))
        .collect::<Result<Vec<_>>>()?;
    let mut reader = csv::Reader::from_reader(body.as_bytes());
    if reader.headers()? != SCENARIO_COLUMNS.as_slice() {
        return Err(Error::Format(format!(
            "unexpected scenario columns {:?}",
            reader.headers()?
        )));
    }
    let mut states = Vec::new();
    let mut road_at = Vec::new();
    let mut measurements = Vec::new();
    for row in reader.records() {
        let row = row?;
        let num = |i: usize| -> Result<f64> {
            row[i]
                .parse::<f64>()
                .map_err(|e| Error::Format(format!("scenario row {:?}: {e}", row.position())))
        };
        states.push(KinematicState::new(num(1)?, num(2)?, num(3)?, num(4)?));
        road_at.push(graph.edge_by_name(&row[5])?);
        if &row[9] == "1" {
            measurements.push(Some(Measurement {
                range: num(6)?,
                range_rate: num(7)?,
                azimuth: num(8)?,
            }));
        } else {
            measurements.push(None);
        }
    }
    Ok(Scenario {
        class,
        graph,
        roads,
        states,
        road_at,
        measurements,
        noise: header.noise,
        platform: header.platform,
        seed: header.seed,
    })
}
