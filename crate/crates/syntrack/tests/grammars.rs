use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use syntrack::grammar::{
    build_class_grammar, class_predicate, GrammarBuilder, IntentClass, RuleTag, Sym, CLASSES,
};
use syntrack::roadgraph::{Orientation, RoadGraph};

fn toy() -> syntrack::grammar::Grammar {
    let mut b = GrammarBuilder::new();
    let a = b.term("a");
    let t_b = b.term("b");
    let s = b.nt("S");
    let na = b.nt("A");
    let nb = b.nt("B");
    b.rule(s, None, vec![Sym::Nt(na), Sym::Nt(nb)], 1.0, RuleTag::Plain);
    b.rule(na, None, vec![Sym::T(a)], 0.8, RuleTag::Plain);
    b.rule(na, None, vec![Sym::T(t_b)], 0.2, RuleTag::Plain);
    b.rule(nb, Some(a), vec![Sym::T(t_b)], 1.0, RuleTag::Plain);
    b.rule(nb, Some(t_b), vec![Sym::T(t_b)], 1.0, RuleTag::Plain);
    b.build(s).unwrap()
}

#[test]
fn toy_grammar_builds_and_samples() {
    let g = toy();
    assert_eq!(g.num_terms(), 2);
    assert_eq!(g.num_nts(), 3);
    let rep = g.check_consistency();
    assert!(rep.max_group_error <= 1e-12);
    assert!(rep.spectral_radius < 1.0);

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n = 10_000;
    let mut ab = 0;
    for _ in 0..n {
        let s = g.sample_string(&mut rng, 16).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[1], 1);
        if s[0] == 0 {
            ab += 1;
        }
    }
    // Binomial(10^4, 0.8) has sigma = 4, so 4 sigma is 160 counts.
    let p = ab as f64 / n as f64;
    assert!((p - 0.8).abs() < 0.016, "P(ab) = {p}");
}

#[test]
fn builder_rejects_bad_groups() {
    let mut b = GrammarBuilder::new();
    let a = b.term("a");
    let s = b.nt("S");
    b.rule(s, None, vec![Sym::T(a)], 0.9, RuleTag::Plain);
    assert!(b.build(s).is_err());

    let mut b = GrammarBuilder::new();
    let s = b.nt("S");
    b.rule(s, None, vec![], 1.0, RuleTag::Plain);
    assert!(b.build(s).is_err());
}

#[test]
fn dump_load_roundtrip() {
    let road = RoadGraph::new(2, 2, 100.0, 5.0).unwrap();
    let g = build_class_grammar(&road, IntentClass::Equal, Orientation::Clockwise).unwrap();
    let text = g.dump();
    let h = syntrack::grammar::Grammar::load(&text).unwrap();
    assert_eq!(h.num_rules(), g.num_rules());
    let rep = h.check_consistency();
    assert!(rep.max_group_error <= 1e-12);
    assert!(rep.spectral_radius < 1.0);

    // Same rules by name, independent of interning and storage order.
    let canon = |gr: &syntrack::grammar::Grammar| -> Vec<String> {
        let mut v: Vec<String> = gr
            .rules()
            .map(|r| {
                let rhs: Vec<String> = r
                    .rhs_syms()
                    .map(|sym| match sym {
                        Sym::Nt(n) => gr.nt_name(n).to_string(),
                        Sym::T(t) => gr.term_name(t).to_string(),
                    })
                    .collect();
                let ctx = match r.ctx {
                    None => "_".to_string(),
                    Some(t) => gr.term_name(t).to_string(),
                };
                format!("{} | {} -> {} @ {:.15e}", gr.nt_name(r.lhs), ctx, rhs.join(" "), r.prob)
            })
            .collect();
        v.sort();
        v
    };
    assert_eq!(canon(&g), canon(&h));

    assert!(syntrack::grammar::Grammar::load("not a grammar").is_err());
}

#[test]
fn class_grammars_are_consistent_and_subcritical() {
    for (rows, cols) in [(2u32, 2u32), (2, 3), (3, 3)] {
        let g = RoadGraph::new(rows, cols, 100.0, 5.0).unwrap();
        for class in CLASSES {
            for o in [Orientation::Clockwise, Orientation::CounterClockwise] {
                let gr = build_class_grammar(&g, class, o).unwrap();
                let rep = gr.check_consistency();
                assert!(
                    rep.max_group_error <= 1e-12,
                    "{} {o:?} {rows}x{cols}: group error {}",
                    class.name(),
                    rep.max_group_error
                );
                assert!(
                    rep.spectral_radius < 1.0,
                    "{} {o:?} {rows}x{cols}: radius {}",
                    class.name(),
                    rep.spectral_radius
                );
            }
        }
    }
}

#[test]
fn class_samples_satisfy_their_predicate() {
    for (rows, cols) in [(2u32, 2u32), (3, 3)] {
        let g = RoadGraph::new(rows, cols, 100.0, 5.0).unwrap();
        for class in CLASSES {
            let gr = build_class_grammar(&g, class, Orientation::Clockwise).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(42 + class.index() as u64);
            for i in 0..200 {
                let s = gr.sample_string(&mut rng, 4096).unwrap();
                assert!(
                    class_predicate(class, &s, &g),
                    "{} sample {i} on {rows}x{cols} rejected: {:?}",
                    class.name(),
                    s.iter().map(|&e| g.edge_name(e)).collect::<Vec<_>>()
                );
                for other in CLASSES {
                    if other != class {
                        assert!(
                            !class_predicate(other, &s, &g),
                            "{} sample {i} accepted by {}",
                            class.name(),
                            other.name()
                        );
                    }
                }
            }
        }
    }
}

#[test]
fn counterclockwise_grammar_generates_reversed_strings() {
    let g = RoadGraph::new(3, 3, 100.0, 5.0).unwrap();
    let rev = |s: &[u32]| -> Vec<u32> {
        s.iter().rev().map(|&e| g.reverse_edge(e)).collect()
    };
    for class in CLASSES {
        // Reversals of forward samples pass the predicate...
        let fw = build_class_grammar(&g, class, Orientation::Clockwise).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9 + class.index() as u64);
        for _ in 0..100 {
            let s = fw.sample_string(&mut rng, 4096).unwrap();
            assert!(class_predicate(class, &rev(&s), &g));
        }
        // ...and counterclockwise samples, reversed, read as forward strings.
        let bw = build_class_grammar(&g, class, Orientation::CounterClockwise).unwrap();
        for _ in 0..100 {
            let s = bw.sample_string(&mut rng, 4096).unwrap();
            assert!(class_predicate(class, &s, &g));
            assert!(class_predicate(class, &rev(&s), &g));
        }
    }
}

#[test]
fn policy_controls_recursion_depth() {
    let g = RoadGraph::new(3, 3, 100.0, 5.0).unwrap();
    let gr = build_class_grammar(&g, IntentClass::Asym, Orientation::Clockwise).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);

    // Exit immediately everywhere: one leading circuit, two trailing.
    let mut exits = 0usize;
    let s = gr
        .sample_with_policy(&mut rng, 4096, |_, _, _, _| {
            exits += 1;
            Some(RuleTag::Exit)
        })
        .unwrap();
    assert!(class_predicate(IntentClass::Asym, &s, &g));
    assert!(exits >= 2);
    assert!(s.len() >= 13 && s.len() < 13 + 6, "len {}", s.len());

    // Forcing extra recursions grows the string.
    let mut budget = 3;
    let s2 = gr
        .sample_with_policy(&mut rng, 4096, |_, _, _, _| {
            if budget > 0 {
                budget -= 1;
                Some(RuleTag::Recurse)
            } else {
                Some(RuleTag::Exit)
            }
        })
        .unwrap();
    assert!(class_predicate(IntentClass::Asym, &s2, &g));
    assert!(s2.len() > s.len());
}

#[test]
fn predicate_accepts_hand_built_strings() {
    let g = RoadGraph::new(4, 4, 100.0, 5.0).unwrap();
    let seq = |names: &[&str]| -> Vec<u32> {
        names.iter().map(|n| g.edge_by_name(n).unwrap()).collect()
    };

    // Equal search, one circuit per leg: block (1,1), one step north,
    // block (1,2).
    let equal = seq(&[
        "e_{1,6}", "e_{6,7}", "e_{7,2}", "e_{2,1}", // circuit of (1,1)
        "e_{1,6}", // transit
        "e_{6,11}", "e_{11,12}", "e_{12,7}", "e_{7,6}", // circuit of (1,2)
    ]);
    assert!(class_predicate(IntentClass::Equal, &equal, &g));
    assert!(!class_predicate(IntentClass::Patrol, &equal, &g));
    assert!(!class_predicate(IntentClass::Asym, &equal, &g));

    // Same-row landing is not an equal search.
    let same_row = seq(&[
        "e_{1,6}", "e_{6,7}", "e_{7,2}", "e_{2,1}", // circuit of (1,1)
        "e_{1,2}", // transit east
        "e_{2,7}", "e_{7,8}", "e_{8,3}", "e_{3,2}", // circuit of (2,1), row 1 again
    ]);
    assert!(!class_predicate(IntentClass::Equal, &same_row, &g));

    // Patrol [a b b a] with a seamlessly doubled center.
    let patrol = seq(&[
        "e_{1,6}", "e_{6,7}", "e_{7,2}", "e_{2,1}", // a = (1,1)
        "e_{1,2}", // transit
        "e_{2,7}", "e_{7,8}", "e_{8,3}", "e_{3,2}", // b = (2,1)
        "e_{2,7}", "e_{7,8}", "e_{8,3}", "e_{3,2}", // b again, seamless
        "e_{2,1}", "e_{1,6}", "e_{6,7}", "e_{7,2}", // a again, direct entry
    ]);
    assert!(class_predicate(IntentClass::Patrol, &patrol, &g));
    assert!(!class_predicate(IntentClass::Equal, &patrol, &g));
    assert!(!class_predicate(IntentClass::Asym, &patrol, &g));

    // Oddly truncated tour fails.
    assert!(!class_predicate(IntentClass::Patrol, &patrol[..13], &g));

    // Asymmetric: one circuit of (1,1), transit, two of (2,1).
    let asym = seq(&[
        "e_{1,6}", "e_{6,7}", "e_{7,2}", "e_{2,1}", // a
        "e_{1,2}", // transit
        "e_{2,7}", "e_{7,8}", "e_{8,3}", "e_{3,2}", // b
        "e_{2,7}", "e_{7,8}", "e_{8,3}", "e_{3,2}", // b seamless repeat
    ]);
    assert!(class_predicate(IntentClass::Asym, &asym, &g));
    assert!(!class_predicate(IntentClass::Equal, &asym, &g));
    assert!(!class_predicate(IntentClass::Patrol, &asym, &g));

    // Equal circuit counts are not asymmetric.
    assert!(!class_predicate(IntentClass::Asym, &asym[..9], &g));

    // Reversed strings still read as their class.
    let rev = |s: &[u32]| -> Vec<u32> {
        s.iter().rev().map(|&e| g.reverse_edge(e)).collect()
    };
    assert!(class_predicate(IntentClass::Equal, &rev(&equal), &g));
    assert!(class_predicate(IntentClass::Patrol, &rev(&patrol), &g));
    assert!(class_predicate(IntentClass::Asym, &rev(&asym), &g));
}

#[test]
fn grammars_reject_degenerate_grids() {
    let g = RoadGraph::new(1, 3, 100.0, 5.0).unwrap();
    assert!(build_class_grammar(&g, IntentClass::Equal, Orientation::Clockwise).is_err());
    assert!(build_class_grammar(&g, IntentClass::Asym, Orientation::Clockwise).is_err());
    // Patrol only needs two blocks, which a 1x3 grid has.
    assert!(build_class_grammar(&g, IntentClass::Patrol, Orientation::Clockwise).is_ok());
}
