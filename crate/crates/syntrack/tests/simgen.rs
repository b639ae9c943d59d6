use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use syntrack::grammar::{class_predicate, IntentClass, CLASSES};
use syntrack::kinematics::{measure_mean, NoiseConfig};
use syntrack::roadgraph::{Location, Orientation, RoadGraph};
use syntrack::simgen::{
    classify_by_templates, drop_tracklets, gen_measurements, gen_templates, gen_truth,
    integrate_truth, levenshtein, perturb, read_scenario, write_scenario, DropMode, Scenario,
};

fn grid(rows: u32, cols: u32) -> Arc<RoadGraph> {
    Arc::new(RoadGraph::new(rows, cols, 100.0, 5.0).unwrap())
}

/// Maximal epoch runs spent inside intersection squares, recomputed from
/// public geometry.
fn visits(s: &Scenario) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut open = None;
    for (k, x) in s.states.iter().enumerate() {
        let inside = matches!(
            s.graph.locate(x.pos(), Some(s.road_at[k])),
            Location::Intersection(_)
        );
        match (inside, open) {
            (true, None) => open = Some(k),
            (false, Some(a)) => {
                out.push((a, k));
                open = None;
            }
            _ => {}
        }
    }
    if let Some(a) = open {
        out.push((a, s.states.len()));
    }
    out
}

#[test]
fn truth_strings_pass_their_class_predicate() {
    let g = grid(3, 3);
    for class in CLASSES {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + class.index() as u64);
        for i in 0..20 {
            let s = gen_truth(class, &g, &mut rng).unwrap();
            assert!(!s.roads.is_empty());
            assert!(g.is_feasible(&s.roads), "{} trial {i} infeasible", class.name());
            assert!(
                class_predicate(class, &s.roads, &g),
                "{} trial {i} rejected: {:?}",
                class.name(),
                s.roads.iter().map(|&e| g.edge_name(e)).collect::<Vec<_>>()
            );
        }
    }
}

#[test]
fn truth_states_stay_confined_to_their_roads() {
    let g = grid(3, 3);
    for class in CLASSES {
        let mut rng = ChaCha8Rng::seed_from_u64(7 + class.index() as u64);
        let s = gen_truth(class, &g, &mut rng).unwrap();
        assert_eq!(s.states.len(), s.road_at.len());
        // Multiple epochs per road at ~10 m/s over 100 m roads.
        assert!(s.states.len() > 10 * s.roads.len());
        for (k, x) in s.states.iter().enumerate() {
            let sp = x.speed();
            assert!((2.0..=30.0).contains(&sp), "epoch {k} speed {sp}");
            match g.locate(x.pos(), Some(s.road_at[k])) {
                Location::Road(e) => assert_eq!(e, s.road_at[k], "epoch {k}"),
                Location::Intersection(_) => {}
            }
            // Velocity is aligned with the current road's heading.
            let u = g.edge(s.road_at[k]).heading.unit();
            assert!((x.vx * u.1 - x.vy * u.0).abs() < 1e-9, "epoch {k} off-heading");
        }
        // The distinct-road sequence of the epochs is exactly the string.
        let walked = RoadGraph::dedupe(&s.road_at);
        assert_eq!(walked, RoadGraph::dedupe(&s.roads));
    }
}

#[test]
fn asym_truth_has_drawn_circuit_margin() {
    let g = grid(3, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for trial in 0..30 {
        let s = gen_truth(IntentClass::Asym, &g, &mut rng).unwrap();
        let r = &s.roads;
        let o = Orientation::Clockwise;
        let circuit_of = |i: usize| -> Option<_> {
            if i + 4 > r.len() || !(i..i + 3).all(|k| g.circuit_succ(r[k], o) == Some(r[k + 1])) {
                return None;
            }
            g.circuit_block(r[i], o)
        };
        // Segmentations are ambiguous (a transit can overlap circuit edges),
        // so accept if any split into n1 leading circuits of one block, a
        // nonempty gap, and n2 trailing circuits of another block works.
        let b1 = g.circuit_block(r[0], o).unwrap();
        let mut ok = false;
        'outer: for n1 in 1..=3usize {
            if (0..n1).any(|c| circuit_of(4 * c) != Some(b1)) {
                continue;
            }
            for n2 in (n1 + 1)..=(n1 + 2) {
                let j = r.len().wrapping_sub(4 * n2);
                if j <= 4 * n1 || j >= r.len() {
                    continue;
                }
                let b2 = match circuit_of(j) {
                    Some(b) if b != b1 => b,
                    _ => continue,
                };
                if (0..n2).all(|c| circuit_of(j + 4 * c) == Some(b2)) {
                    ok = true;
                    break 'outer;
                }
            }
        }
        assert!(
            ok,
            "trial {trial}: no (n1, n1 + margin) split with n1 in 1..=3, margin in 1..=2: {:?}",
            r.iter().map(|&e| g.edge_name(e)).collect::<Vec<_>>()
        );
    }
}

#[test]
fn measurements_track_the_true_geometry() {
    let g = grid(2, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut s = gen_truth(IntentClass::Patrol, &g, &mut rng).unwrap();
    let cfg = NoiseConfig::level(2);
    gen_measurements(&mut s, &cfg, &mut rng).unwrap();
    assert_eq!(s.measurements.len(), s.states.len());
    assert_eq!(s.noise.sigma_r, cfg.sigma_r);
    assert_eq!(s.noise.t, 0.2);
    for (k, z) in s.measurements.iter().enumerate() {
        let z = z.expect("all present");
        let c = s.platform.at(k as u32, &s.noise);
        let m = measure_mean(&s.states[k], &c).unwrap();
        assert!((z.range - m.range).abs() < 8.0 * cfg.sigma_r, "epoch {k}");
        assert!((z.range_rate - m.range_rate).abs() < 8.0 * cfg.sigma_rdot);
        let daz = (z.azimuth - m.azimuth).rem_euclid(360.0);
        let daz = daz.min(360.0 - daz);
        assert!(daz < 8.0 * cfg.sigma_az);
    }
}

#[test]
fn burst_dropout_blanks_whole_crossings() {
    let g = grid(3, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut s = gen_truth(IntentClass::Equal, &g, &mut rng).unwrap();
    gen_measurements(&mut s, &NoiseConfig::level(0), &mut rng).unwrap();
    let v = visits(&s);
    assert!(v.len() >= 4, "expected several crossings, got {}", v.len());
    let full = s.clone();

    drop_tracklets(&mut s, DropMode::Burst, 100, &mut rng).unwrap();
    let k_total = s.measurements.len();
    let mut in_burst = vec![false; k_total];
    for &(a, b) in &v {
        for slot in in_burst.iter_mut().take((b + 20).min(k_total)).skip(a) {
            *slot = true;
        }
    }
    for k in 0..k_total {
        if in_burst[k] {
            assert!(s.measurements[k].is_none(), "epoch {k} should be dropped");
        } else {
            assert_eq!(s.measurements[k], full.measurements[k], "epoch {k} altered");
        }
    }
}

#[test]
fn scattered_dropout_stays_inside_windows() {
    let g = grid(3, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut s = gen_truth(IntentClass::Patrol, &g, &mut rng).unwrap();
    gen_measurements(&mut s, &NoiseConfig::level(0), &mut rng).unwrap();
    let v = visits(&s);
    let full = s.clone();

    drop_tracklets(&mut s, DropMode::Scattered, 100, &mut rng).unwrap();
    let k_total = s.measurements.len();
    let mut in_window = vec![false; k_total];
    for &(a, _) in &v {
        for slot in in_window.iter_mut().take((a + 20).min(k_total)).skip(a) {
            *slot = true;
        }
    }
    let mut dropped = 0usize;
    let mut window_epochs = 0usize;
    for k in 0..k_total {
        if s.measurements[k].is_none() {
            assert!(in_window[k], "epoch {k} dropped outside every window");
            dropped += 1;
        } else {
            assert_eq!(s.measurements[k], full.measurements[k]);
        }
        window_epochs += usize::from(in_window[k]);
    }
    // Half of each window drops in expectation.
    assert!(dropped > window_epochs / 4, "{dropped} of {window_epochs}");
    assert!(dropped < window_epochs, "{dropped} of {window_epochs}");
}

#[test]
fn dropout_validates_and_zero_is_identity() {
    let g = grid(2, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut s = gen_truth(IntentClass::Asym, &g, &mut rng).unwrap();
    gen_measurements(&mut s, &NoiseConfig::level(0), &mut rng).unwrap();
    let before = s.measurements.clone();
    drop_tracklets(&mut s, DropMode::Scattered, 0, &mut rng).unwrap();
    assert_eq!(s.measurements, before);
    let err = drop_tracklets(&mut s, DropMode::Burst, 101, &mut rng).unwrap_err();
    assert!(err.to_string().starts_with("invalid-argument"));
}

#[test]
fn perturbation_replaces_one_bounded_segment() {
    let g = grid(3, 3);
    for class in CLASSES {
        let mut rng = ChaCha8Rng::seed_from_u64(40 + class.index() as u64);
        let s = gen_truth(class, &g, &mut rng).unwrap();
        let p = perturb(&s, &mut rng).unwrap();
        assert!(g.is_feasible(&p.roads));
        assert_ne!(p.roads, s.roads);
        assert_eq!(p.roads[0], s.roads[0]);
        assert_eq!(p.roads.last(), s.roads.last());
        let d = levenshtein(&p.roads, &s.roads);
        assert!((1..=7).contains(&d), "{} edit distance {d}", class.name());
        // Rebuilt kinematics walk the new string.
        assert_eq!(RoadGraph::dedupe(&p.road_at), RoadGraph::dedupe(&p.roads));
        assert!(p.measurements.is_empty(), "truth had no measurements");
    }
}

#[test]
fn perturbation_rejects_short_strings() {
    let g = grid(2, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let mut s = gen_truth(IntentClass::Asym, &g, &mut rng).unwrap();
    s.roads.truncate(7);
    let err = perturb(&s, &mut rng).unwrap_err();
    assert!(err.to_string().starts_with("invalid-argument"));
}

#[test]
fn edit_distance_hand_values() {
    let s = |t: &str| -> Vec<u32> { t.bytes().map(u32::from).collect() };
    assert_eq!(levenshtein(&s("122343"), &s("12343")), 1);
    assert_eq!(levenshtein(&s("kitten"), &s("sitting")), 3);
    assert_eq!(levenshtein(&s("abc"), &s("abc")), 0);
    assert_eq!(levenshtein(&s(""), &s("abc")), 3);
    assert_eq!(levenshtein(&s("abc"), &s("")), 3);
    assert_eq!(levenshtein(&s("flaw"), &s("lawn")), 2);
}

#[test]
fn templates_classify_their_own_strings() {
    let g = grid(3, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let sets: Vec<_> = CLASSES
        .iter()
        .map(|&c| gen_templates(c, &g, 5, &mut rng).unwrap())
        .collect();
    for set in &sets {
        assert_eq!(set.strings.len(), 5);
        for t in &set.strings {
            assert_eq!(classify_by_templates(t, &sets), set.class);
        }
    }
}

#[test]
fn scenario_file_roundtrip_is_exact() {
    let g = grid(2, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(60);
    let mut s = gen_truth(IntentClass::Equal, &g, &mut rng).unwrap();
    s.seed = 123;
    gen_measurements(&mut s, &NoiseConfig::level(1), &mut rng).unwrap();
    drop_tracklets(&mut s, DropMode::Scattered, 50, &mut rng).unwrap();

    let text = write_scenario(&s);
    let r = read_scenario(&text).unwrap();
    assert_eq!(r.class, s.class);
    assert_eq!(r.seed, 123);
    assert_eq!(r.roads, s.roads);
    assert_eq!(r.road_at, s.road_at);
    assert_eq!(r.noise, s.noise);
    assert_eq!(r.platform, s.platform);
    assert_eq!(r.graph.block_rows, 2);
    assert_eq!(r.graph.block_cols, 3);
    assert_eq!(r.states, s.states);
    assert_eq!(r.measurements, s.measurements);
    // A second write is byte-identical.
    assert_eq!(write_scenario(&r), text);
}

#[test]
fn truth_generation_is_seed_deterministic() {
    let g = grid(3, 3);
    for class in CLASSES {
        let mut a = ChaCha8Rng::seed_from_u64(77);
        let mut b = ChaCha8Rng::seed_from_u64(77);
        let sa = gen_truth(class, &g, &mut a).unwrap();
        let sb = gen_truth(class, &g, &mut b).unwrap();
        assert_eq!(sa.roads, sb.roads);
        assert_eq!(sa.states, sb.states);
    }
}

#[test]
fn integration_rejects_infeasible_strings() {
    let g = grid(2, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cfg = NoiseConfig::level(0);
    let err = integrate_truth(&g, &[], &cfg, &mut rng).unwrap_err();
    assert!(err.to_string().starts_with("invalid-argument"));
    // Two roads that do not connect.
    let e0 = 0;
    let bad = g
        .feasible_next(e0)
        .iter()
        .flat_map(|&e| g.feasible_next(e))
        .copied()
        .find(|&e| !g.feasible_next(e0).contains(&e) && e != e0)
        .unwrap();
    let err = integrate_truth(&g, &[e0, bad], &cfg, &mut rng).unwrap_err();
    assert!(err.to_string().starts_with("invalid-argument"));
}
