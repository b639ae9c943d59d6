use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;
use syntrack::expcli::edge_terms;
use syntrack::grammar::{build_class_grammar, CLASSES};
use syntrack::parser::{Obs, Parser};
use syntrack::roadgraph::{Orientation, RoadGraph};
use syntrack::simgen::gen_truth;

fn race_delay(parsers: &[Parser], terms: &[Vec<Option<u32>>], roads: &[u32], want: usize) -> f64 {
    let n = roads.len();
    let mut cols: Vec<Vec<syntrack::parser::Column>> =
        parsers.iter().map(|p| vec![p.init_column().unwrap()]).collect();
    let mut alive = vec![true; parsers.len()];
    let mut lp = vec![0.0f64; parsers.len()];
    let mut detect: Option<usize> = None;
    for (k, &rd) in roads.iter().enumerate() {
        for (gi, p) in parsers.iter().enumerate() {
            if !alive[gi] {
                lp[gi] = f64::NEG_INFINITY;
                continue;
            }
            let t = terms[gi][rd as usize];
            let t = match t {
                Some(t) => t,
                None => {
                    alive[gi] = false;
                    lp[gi] = f64::NEG_INFINITY;
                    continue;
                }
            };
            let refs: Vec<&syntrack::parser::Column> = cols[gi].iter().collect();
            match p.advance(&refs, &Obs::Hard(t)) {
                Ok(c) => {
                    lp[gi] = c.log_prefix;
                    cols[gi].push(c);
                }
                Err(_) => {
                    alive[gi] = false;
                    lp[gi] = f64::NEG_INFINITY;
                }
            }
        }
        let mx = lp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = lp.iter().map(|&v| (v - mx).exp()).sum();
        let post = (lp[want] - mx).exp() / z;
        if post > 0.9 {
            if detect.is_none() {
                detect = Some(k);
            }
        } else {
            detect = None;
        }
    }
    match detect {
        Some(k) => (k + 1) as f64 / n as f64,
        None => 1.5,
    }
}

fn main() {
    let g = Arc::new(RoadGraph::new(6, 6, 100.0, 5.0).unwrap());
    let parsers: Vec<Parser> = CLASSES
        .iter()
        .map(|&c| {
            Parser::new(Arc::new(
                build_class_grammar(&g, c, Orientation::Clockwise).unwrap(),
            ))
        })
        .collect();
    let terms: Vec<Vec<Option<u32>>> =
        parsers.iter().map(|p| edge_terms(&g, p.grammar())).collect();

    for (ci, &class) in CLASSES.iter().enumerate() {
        let mut ds = Vec::new();
        for t in 0..30u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(9000 + 97 * t + ci as u64);
            let sc = gen_truth(class, &g, &mut rng).unwrap();
            ds.push(race_delay(&parsers, &terms, &sc.roads, ci));
        }
        let mut sorted = ds.clone();
        sorted.sort_by(f64::total_cmp);
        let mean = ds.iter().sum::<f64>() / ds.len() as f64;
        let capped: f64 =
            ds.iter().map(|&d| d.min(1.0)).sum::<f64>() / ds.len() as f64;
        println!(
            "{:6}: n={} mean={:.3} capped={:.3} med={:.3} min={:.3} max={:.3} undet={}",
            class.name(),
            ds.len(),
            mean,
            capped,
            sorted[ds.len() / 2],
            sorted[0],
            sorted[ds.len() - 1],
            ds.iter().filter(|&&d| d > 1.0).count()
        );
    }
}
