//! Track one simulated trajectory with the grammar-driven particle filter
//! and print the per-epoch estimate, class posterior, and error.
//!
//! Usage: track_target [CLASS] [SEED]  (defaults: patrol 7)

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use syntrack::grammar::{build_class_grammar, IntentClass, CLASSES};
use syntrack::kinematics::NoiseConfig;
use syntrack::parser::Parser;
use syntrack::roadgraph::{Orientation, RoadGraph};
use syntrack::simgen::{gen_measurements, gen_truth};
use syntrack::tracker::{StepRecord, Tracker, TrackerConfig};

fn main() {
    let mut args = std::env::args().skip(1);
    let class = args
        .next()
        .map(|s| IntentClass::from_name(&s).expect("class is equal, patrol, or asym"))
        .unwrap_or(IntentClass::Patrol);
    let seed: u64 = args.next().map(|s| s.parse().unwrap()).unwrap_or(7);

    let graph = Arc::new(RoadGraph::new(3, 3, 100.0, 5.0).unwrap());
    let noise = NoiseConfig::level(0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scenario = gen_truth(class, &graph, &mut rng).unwrap();
    gen_measurements(&mut scenario, &noise, &mut rng).unwrap();
    println!(
        "# truth: {} epochs over {} roads: {}",
        scenario.epochs(),
        scenario.roads.len(),
        scenario
            .roads
            .iter()
            .map(|&e| graph.edge_name(e))
            .collect::<Vec<_>>()
            .join(" ")
    );

    let parsers = CLASSES
        .iter()
        .map(|&c| {
            let g = build_class_grammar(&graph, c, Orientation::Clockwise).unwrap();
            Arc::new(Parser::new(Arc::new(g)))
        })
        .collect();
    let cfg = TrackerConfig {
        particles: 200,
        noise,
        seed: seed ^ 0x5eed,
        ..TrackerConfig::default()
    };
    let mut tracker = Tracker::new(
        graph.clone(),
        parsers,
        vec![1.0 / 3.0; 3],
        &scenario.states[0],
        cfg,
    )
    .unwrap();

    let names: Vec<&str> = CLASSES.iter().map(|c| c.name()).collect();
    println!("{},err,true_road,dead,fallbacks", StepRecord::csv_header(&names));
    let print_row = |rec: &StepRecord, scenario: &syntrack::simgen::Scenario, tr: &Tracker| {
        let k = rec.k as usize;
        let dx = rec.estimate.x - scenario.states[k].x;
        let dy = rec.estimate.y - scenario.states[k].y;
        println!(
            "{},{:.2},\"{}\",{},{}",
            rec.csv_row(),
            dx.hypot(dy),
            graph.edge_name(scenario.road_at[k]),
            tr.diagnostics().dead_prefix_particles,
            tr.diagnostics().mixture_fallbacks,
        );
    };

    let rec = tracker.initial_record();
    print_row(&rec, &scenario, &tracker);
    for k in 1..scenario.epochs() {
        let z = scenario.measurements[k];
        let platform = scenario.platform.at(k as u32, &noise);
        let rec = tracker.step(z.as_ref(), &platform).unwrap();
        print_row(&rec, &scenario, &tracker);
    }
}
