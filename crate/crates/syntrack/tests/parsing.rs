use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::sync::Arc;
use syntrack::grammar::{
    build_class_grammar, Grammar, GrammarBuilder, IntentClass, RuleTag, Sym, TermId, CLASSES,
};
use syntrack::parser::{Obs, Parser};
use syntrack::roadgraph::{Orientation, RoadGraph};

fn toy() -> Grammar {
    let mut b = GrammarBuilder::new();
    let a = b.term("a");
    let tb = b.term("b");
    let s = b.nt("S");
    let na = b.nt("A");
    let nb = b.nt("B");
    b.rule(s, None, vec![Sym::Nt(na), Sym::Nt(nb)], 1.0, RuleTag::Plain);
    b.rule(na, None, vec![Sym::T(a)], 0.8, RuleTag::Plain);
    b.rule(na, None, vec![Sym::T(tb)], 0.2, RuleTag::Plain);
    b.rule(nb, Some(a), vec![Sym::T(tb)], 1.0, RuleTag::Plain);
    b.rule(nb, Some(tb), vec![Sym::T(tb)], 1.0, RuleTag::Plain);
    b.build(s).unwrap()
}

/// Independent prefix-probability oracle: depth-first enumeration of
/// leftmost derivations with context conditioning, pruning on terminal
/// mismatch. A derivation contributes its accumulated probability the
/// moment it covers the prefix.
fn oracle_prefix(g: &Grammar, prefix: &[TermId]) -> f64 {
    fn rec(
        g: &Grammar,
        stack: &[Sym],
        pos: usize,
        ctx: Option<TermId>,
        prob: f64,
        depth: u32,
        prefix: &[TermId],
        total: &mut f64,
    ) {
        if prob < 1e-16 || depth > 800 {
            return;
        }
        if pos == prefix.len() {
            *total += prob;
            return;
        }
        let Some((&sym, rest)) = stack.split_last() else {
            return;
        };
        match sym {
            Sym::T(t) => {
                if t == prefix[pos] {
                    rec(g, rest, pos + 1, Some(t), prob, depth + 1, prefix, total);
                }
            }
            Sym::Nt(x) => {
                for r in g.rules_for(x, ctx) {
                    let mut next = rest.to_vec();
                    for i in (0..r.rhs_len()).rev() {
                        next.push(r.rhs_sym(i));
                    }
                    rec(g, &next, pos, ctx, prob * r.prob, depth + 1, prefix, total);
                }
            }
        }
    }
    let mut total = 0.0;
    let stack = vec![Sym::Nt(g.start())];
    rec(g, &stack, 0, None, 1.0, 0, prefix, &mut total);
    total
}

#[test]
fn toy_prefix_probabilities_exact() {
    let p = Parser::new(Arc::new(toy()));
    let lp = |s: &[u32]| p.log_prefix_probability(s).unwrap();
    assert!((lp(&[0]).exp() - 0.8).abs() <= 1e-12);
    assert!((lp(&[1]).exp() - 0.2).abs() <= 1e-12);
    assert!((lp(&[0, 1]).exp() - 0.8).abs() <= 1e-12);
    assert!((lp(&[1, 1]).exp() - 0.2).abs() <= 1e-12);
    assert_eq!(lp(&[]), 0.0);

    // The impossible continuation dies with a dead-prefix error.
    assert!(p.log_prefix_probability(&[1, 0]).is_err());
    assert!(p.log_prefix_probability(&[0, 1, 1]).is_err());
}

#[test]
fn toy_one_step_prediction() {
    let p = Parser::new(Arc::new(toy()));
    let root = p.init_column().unwrap();
    let first = p.one_step(&root);
    assert!((first[&0] - 0.8).abs() <= 1e-12);
    assert!((first[&1] - 0.2).abs() <= 1e-12);

    let col = p.advance(&[&root], &Obs::Hard(0)).unwrap();
    assert!((col.zeta - 0.8).abs() <= 1e-12);
    let next = p.one_step(&col);
    assert_eq!(next.len(), 1);
    assert!((next[&1] - 1.0).abs() <= 1e-12);
}

#[test]
fn soft_scan_marginalizes_over_terminals() {
    let p = Parser::new(Arc::new(toy()));
    let root = p.init_column().unwrap();
    let mut like = BTreeMap::new();
    like.insert(0u32, 0.5);
    like.insert(1u32, 0.25);
    let col = p.advance(&[&root], &Obs::Soft(&like)).unwrap();
    // Total scan mass is 0.8 * 0.5 + 0.2 * 0.25.
    assert!((col.zeta - 0.45).abs() <= 1e-12);
    // Both branches continue with b.
    let next = p.one_step(&col);
    assert_eq!(next.len(), 1);
    assert!((next[&1] - 1.0).abs() <= 1e-12);
    let last = p.advance(&[&root, &col], &Obs::Hard(1)).unwrap();
    assert!((last.log_prefix.exp() - 0.45).abs() <= 1e-12);
}

#[test]
fn left_recursive_closure_folds_chains() {
    // S -> a X; X -> X Y | b under context a; Y -> c. The left-corner
    // closure weight of X onto itself is 1 / (1 - 0.5) = 2, and prefix
    // probabilities follow the geometric tail.
    let mut b = GrammarBuilder::new();
    let a = b.term("a");
    let tb = b.term("b");
    let tc = b.term("c");
    let s = b.nt("S");
    let x = b.nt("X");
    let y = b.nt("Y");
    b.rule(s, None, vec![Sym::T(a), Sym::Nt(x)], 1.0, RuleTag::Plain);
    b.rule(x, Some(a), vec![Sym::Nt(x), Sym::Nt(y)], 0.5, RuleTag::Recurse);
    b.rule(x, Some(a), vec![Sym::T(tb)], 0.5, RuleTag::Exit);
    b.rule(y, Some(tb), vec![Sym::T(tc)], 1.0, RuleTag::Plain);
    b.rule(y, Some(tc), vec![Sym::T(tc)], 1.0, RuleTag::Plain);
    let g = b.build(s).unwrap();
    let p = Parser::new(Arc::new(g));

    let lp = |s: &[u32]| p.log_prefix_probability(s).unwrap().exp();
    assert!((lp(&[0]) - 1.0).abs() <= 1e-12);
    assert!((lp(&[0, 1]) - 1.0).abs() <= 1e-12);
    assert!((lp(&[0, 1, 2]) - 0.5).abs() <= 1e-12);
    assert!((lp(&[0, 1, 2, 2]) - 0.25).abs() <= 1e-12);
    assert!((lp(&[0, 1, 2, 2, 2]) - 0.125).abs() <= 1e-12);
}

#[test]
fn parser_matches_enumeration_oracle_on_toy_grammars() {
    let g = toy();
    let p = Parser::new(Arc::new(g));
    for prefix in [vec![0u32], vec![1], vec![0, 1], vec![1, 1]] {
        let got = p.log_prefix_probability(&prefix).unwrap().exp();
        let want = oracle_prefix(p.grammar(), &prefix);
        assert!(
            (got - want).abs() <= 1e-9 * want.max(1e-12),
            "prefix {prefix:?}: parser {got}, oracle {want}"
        );
    }
}

#[test]
fn parser_matches_enumeration_oracle_on_class_grammars() {
    let road = RoadGraph::new(2, 2, 100.0, 5.0).unwrap();
    for class in CLASSES {
        let g = Arc::new(build_class_grammar(&road, class, Orientation::Clockwise).unwrap());
        let p = Parser::new(g.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(100 + class.index() as u64);
        for _ in 0..5 {
            let s = g.sample_string(&mut rng, 4096).unwrap();
            for len in 1..=s.len().min(6) {
                let prefix = &s[..len];
                let got = p.log_prefix_probability(prefix).unwrap().exp();
                let want = oracle_prefix(&g, prefix);
                assert!(
                    want > 0.0,
                    "{}: oracle zero for {prefix:?}",
                    class.name()
                );
                assert!(
                    ((got - want) / want).abs() <= 1e-9,
                    "{} prefix {prefix:?}: parser {got}, oracle {want}",
                    class.name()
                );
            }
        }
    }
}

#[test]
fn full_strings_parse_to_their_sampling_probability() {
    // For a complete sampled string the prefix probability is at least the
    // string's own probability and never exceeds one.
    let road = RoadGraph::new(2, 2, 100.0, 5.0).unwrap();
    for class in CLASSES {
        let g = Arc::new(build_class_grammar(&road, class, Orientation::Clockwise).unwrap());
        let p = Parser::new(g.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(7 + class.index() as u64);
        for _ in 0..20 {
            let s = g.sample_string(&mut rng, 4096).unwrap();
            let lp = p.log_prefix_probability(&s).unwrap();
            assert!(lp <= 1e-12, "{}: log prefix {lp} > 0", class.name());
            assert!(lp.is_finite());
        }
    }
}

#[test]
fn one_step_sums_to_one_along_class_strings() {
    let road = RoadGraph::new(3, 3, 100.0, 5.0).unwrap();
    let g = Arc::new(build_class_grammar(&road, IntentClass::Patrol, Orientation::Clockwise).unwrap());
    let p = Parser::new(g.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let s = g.sample_string(&mut rng, 4096).unwrap();
    let mut cols = vec![p.init_column().unwrap()];
    for &t in &s {
        let pred = p.one_step(cols.last().unwrap());
        let total: f64 = pred.values().sum();
        assert!((total - 1.0).abs() <= 1e-9, "one-step total {total}");
        assert!(pred.get(&t).copied().unwrap_or(0.0) > 0.0);
        let refs: Vec<&syntrack::parser::Column> = cols.iter().collect();
        cols.push(p.advance(&refs, &Obs::Hard(t)).unwrap());
    }
}

#[test]
fn reversed_strings_parse_under_reversed_grammar() {
    let road = RoadGraph::new(2, 2, 100.0, 5.0).unwrap();
    for class in CLASSES {
        let fw = Arc::new(build_class_grammar(&road, class, Orientation::Clockwise).unwrap());
        let bw = Arc::new(
            build_class_grammar(&road, class, Orientation::CounterClockwise).unwrap(),
        );
        let pf = Parser::new(fw.clone());
        let pb = Parser::new(bw);
        let mut rng = ChaCha8Rng::seed_from_u64(11 + class.index() as u64);
        for _ in 0..10 {
            let s = fw.sample_string(&mut rng, 4096).unwrap();
            let rev: Vec<u32> = s.iter().rev().map(|&e| road.reverse_edge(e)).collect();
            let lf = pf.log_prefix_probability(&s).unwrap();
            let lb = pb.log_prefix_probability(&rev).unwrap();
            assert!(lf.is_finite() && lb.is_finite());
        }
    }
}
