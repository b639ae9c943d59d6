//! Parse one class's sampled road string under all three class grammars and
//! print, per road, each grammar's cumulative log prefix probability.
//!
//! Usage: parse_prefix [CLASS] [SEED]  (defaults: patrol 7)

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use syntrack::grammar::{build_class_grammar, IntentClass, TermId, CLASSES};
use syntrack::parser::{Obs, Parser};
use syntrack::roadgraph::{Orientation, RoadGraph};
use syntrack::simgen::gen_truth;

fn main() {
    let mut args = std::env::args().skip(1);
    let class = args
        .next()
        .map(|s| IntentClass::from_name(&s).expect("class is equal, patrol, or asym"))
        .unwrap_or(IntentClass::Patrol);
    let seed: u64 = args.next().map(|s| s.parse().unwrap()).unwrap_or(7);

    let graph = Arc::new(RoadGraph::new(3, 3, 100.0, 5.0).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scenario = gen_truth(class, &graph, &mut rng).unwrap();
    println!(
        "# {} string, {} roads",
        class.name(),
        scenario.roads.len()
    );

    let parsers: Vec<(IntentClass, Parser)> = CLASSES
        .iter()
        .map(|&c| {
            let g = build_class_grammar(&graph, c, Orientation::Clockwise).unwrap();
            (c, Parser::new(Arc::new(g)))
        })
        .collect();

    let mut columns: Vec<Vec<syntrack::parser::Column>> = parsers
        .iter()
        .map(|(_, p)| vec![p.init_column().unwrap()])
        .collect();
    let mut alive = vec![true; parsers.len()];

    println!(
        "i,road,{},{}",
        CLASSES.map(|c| format!("ln_pfx_{}", c.name())).join(","),
        CLASSES.map(|c| format!("pred_{}", c.name())).join(","),
    );
    for (i, &road) in scenario.roads.iter().enumerate() {
        let mut cells = Vec::new();
        let mut preds = Vec::new();
        for (gi, (_, parser)) in parsers.iter().enumerate() {
            if !alive[gi] {
                cells.push("dead".to_string());
                preds.push("-".to_string());
                continue;
            }
            // One-step probability this grammar gave the true next road.
            let p = parser
                .one_step(columns[gi].last().unwrap())
                .get(&(road as TermId))
                .copied()
                .unwrap_or(0.0);
            preds.push(format!("{p:.4}"));
            let path: Vec<&syntrack::parser::Column> = columns[gi].iter().collect();
            match parser.advance(&path, &Obs::Hard(road as TermId)) {
                Ok(col) => {
                    cells.push(format!("{:.4}", col.log_prefix));
                    columns[gi].push(col);
                }
                Err(_) => {
                    alive[gi] = false;
                    cells.push("dead".to_string());
                }
            }
        }
        println!(
            "{i},\"{}\",{},{}",
            graph.edge_name(road),
            cells.join(","),
            preds.join(",")
        );
    }
}
