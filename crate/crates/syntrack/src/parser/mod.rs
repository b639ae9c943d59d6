//! Incremental probabilistic chart parser for context-conditioned grammars.
//!
//! The chart grows one column per observed terminal and supports soft input:
//! each step takes a likelihood over terminals, so the same machinery serves
//! exact parsing (indicator likelihoods) and fused sensor evidence. Columns
//! carry two weights per state: alpha, the forward mass of every derivation
//! reaching the state through the consumed prefix, and gamma, the inside
//! mass of the state's partial constituent. Both are kept in linear space
//! and renormalized each step by the scan mass zeta, whose running log-sum
//! is the prefix log-probability.
//!
//! Rule probabilities depend on the previously emitted terminal, so a state
//! is keyed not only by rule, dot, and origin but by two anchors: the
//! context at the constituent's start (which conditioned its production
//! choice) and the context at the dot. Anchors record position and terminal
//! identity; under soft input two states that scanned different terminals
//! stay distinct exactly as long as their futures can differ.
//!
//! Unit productions are never instantiated as states. Prediction folds them
//! into the left-corner closure R_l; completion lifts a finished constituent
//! through the unit closure R_u of the context at its start. Completion
//! cascades are processed in strictly descending origin order, which is
//! sound because every completing parent has consumed at least one symbol
//! before its final constituent.

mod closures;

pub use closures::{ctx_label, ClosureStore, CtxClosure};

use crate::error::{Error, Result};
use crate::grammar::{Grammar, NtId, Sym, TermId};
use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

/// Position and identity of a conditioning terminal; `None` is the start
/// of input.
pub type Anchor = Option<(u32, TermId)>;

/// Weights below this after normalization are dropped from the chart.
const PRUNE: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StateKey {
    pub rule: u32,
    pub dot: u8,
    pub origin: u32,
    /// Context anchor at the constituent's start.
    pub s: Anchor,
    /// Anchor of the last terminal before the dot (equals `s` when the
    /// constituent has consumed none yet).
    pub f: Anchor,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Weights {
    pub alpha: f64,
    pub gamma: f64,
}

/// One chart column: the state set after consuming some number of
/// terminals, plus an index of states waiting on each nonterminal.
pub struct Column {
    states: BTreeMap<StateKey, Weights>,
    wait: BTreeMap<(NtId, Anchor), Vec<StateKey>>,
    /// Scan mass of the step that produced this column (one for the root).
    pub zeta: f64,
    /// Cumulative prefix log-probability.
    pub log_prefix: f64,
}

impl Column {
    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    pub fn states(&self) -> impl Iterator<Item = (&StateKey, &Weights)> {
        self.states.iter()
    }
}

/// Per-step likelihood over terminals.
pub enum Obs<'a> {
    Hard(TermId),
    Soft(&'a BTreeMap<TermId, f64>),
}

impl Obs<'_> {
    fn likelihood(&self, t: TermId) -> f64 {
        match self {
            Obs::Hard(a) => {
                if *a == t {
                    1.0
                } else {
                    0.0
                }
            }
            Obs::Soft(m) => m.get(&t).copied().unwrap_or(0.0),
        }
    }
}

/// Outcome of parsing one terminal of a sequence.
#[derive(Debug, Clone)]
pub struct ParseStep {
    pub k: u32,
    pub term: TermId,
    /// One-step probability the parser assigned this terminal beforehand.
    pub pred_prob: f64,
    pub zeta: f64,
    pub log_prefix: f64,
}

pub struct Parser {
    g: Arc<Grammar>,
    store: ClosureStore,
}

impl Parser {
    pub fn new(g: Arc<Grammar>) -> Parser {
        let store = ClosureStore::new(g.clone());
        Parser { g, store }
    }

    pub fn grammar(&self) -> &Grammar {
        &self.g
    }

    pub fn closures(&self) -> &ClosureStore {
        &self.store
    }

    /// The root column: start-rule predictions under the empty context.
    pub fn init_column(&self) -> Result<Column> {
        let cl = self.store.get(None)?;
        let start = self.g.start();
        let ident = [(start, 1.0f64)];
        let rows: &[(NtId, f64)] = cl.left_corner(start).unwrap_or(&ident);

        let mut states: BTreeMap<StateKey, Weights> = BTreeMap::new();
        for &(nt, wl) in rows {
            for r in self.g.rules_for(nt, None) {
                if r.is_unit() {
                    continue;
                }
                let key = StateKey {
                    rule: r.idx,
                    dot: 0,
                    origin: 0,
                    s: None,
                    f: None,
                };
                let e = states.entry(key).or_default();
                e.alpha += wl * r.prob;
                e.gamma = r.prob;
            }
        }
        if states.is_empty() {
            return Err(Error::DeadPrefix(
                "the start symbol derives nothing in the empty context".into(),
            ));
        }
        Ok(self.finish_column(states, 1.0, 0.0))
    }

    /// Extend the chart by one terminal. `path` is every existing column in
    /// order, root first; the new column follows `path.last()`.
    pub fn advance(&self, path: &[&Column], obs: &Obs<'_>) -> Result<Column> {
        let prev = *path.last().ok_or_else(|| {
            Error::InvalidArgument("advance needs at least the root column".into())
        })?;
        let k = path.len() as u32;
        let mut states: BTreeMap<StateKey, Weights> = BTreeMap::new();

        // Scan: every state whose dot faces a terminal with positive
        // likelihood moves across it, weighted by that likelihood. States
        // that scanned different terminals remain distinct through their
        // dot anchors.
        let mut zeta = 0.0;
        for (key, w) in prev.states.iter() {
            let r = self.g.rule(key.rule);
            if (key.dot as usize) >= r.rhs_len() {
                continue;
            }
            if let Sym::T(t) = r.rhs_sym(key.dot as usize) {
                let like = obs.likelihood(t);
                if like > 0.0 {
                    let nk = StateKey {
                        rule: key.rule,
                        dot: key.dot + 1,
                        origin: key.origin,
                        s: key.s,
                        f: Some((k, t)),
                    };
                    let e = states.entry(nk).or_default();
                    e.alpha += w.alpha * like;
                    e.gamma += w.gamma * like;
                    zeta += w.alpha * like;
                }
            }
        }
        if !(zeta > 0.0) {
            return Err(Error::DeadPrefix(format!(
                "no derivation scans the observation at position {k}"
            )));
        }
        for w in states.values_mut() {
            w.alpha /= zeta;
            w.gamma /= zeta;
        }

        // Completion, processed by strictly descending origin. Finished
        // constituents with equal signature are merged before propagating;
        // each is lifted through the unit closure of its start context to
        // reach parents waiting on any unit ancestor.
        let mut closure_memo: HashMap<u64, Arc<CtxClosure>> = HashMap::new();
        let mut get_closure = |ctx: Option<TermId>| -> Result<Arc<CtxClosure>> {
            let key = match ctx {
                None => u64::MAX,
                Some(t) => t as u64,
            };
            if let Some(c) = closure_memo.get(&key) {
                return Ok(c.clone());
            }
            let c = self.store.get(ctx)?;
            closure_memo.insert(key, c.clone());
            Ok(c)
        };

        let mut buckets: BTreeMap<u32, BTreeMap<(NtId, Anchor, Anchor), f64>> = BTreeMap::new();
        for (key, w) in states.iter() {
            let r = self.g.rule(key.rule);
            if (key.dot as usize) == r.rhs_len() {
                *buckets
                    .entry(key.origin)
                    .or_default()
                    .entry((r.lhs, key.s, key.f))
                    .or_insert(0.0) += w.gamma;
            }
        }
        while let Some((org, bucket)) = buckets.pop_last() {
            let parent_col = path[org as usize];
            for ((child, s_c, f_c), gsum) in bucket {
                let ru = get_closure(s_c.map(|(_, t)| t))?;
                let ident = [(child, 1.0f64)];
                let rows: &[(NtId, f64)] = ru.unit_parents(child).unwrap_or(&ident);
                for &(y, wu) in rows {
                    let Some(waiters) = parent_col.wait.get(&(y, s_c)) else {
                        continue;
                    };
                    for pkey in waiters {
                        let pw = parent_col.states[pkey];
                        let pr = self.g.rule(pkey.rule);
                        let nk = StateKey {
                            rule: pkey.rule,
                            dot: pkey.dot + 1,
                            origin: pkey.origin,
                            s: pkey.s,
                            f: f_c,
                        };
                        let da = pw.alpha * gsum * wu;
                        let dg = pw.gamma * gsum * wu;
                        let e = states.entry(nk).or_default();
                        e.alpha += da;
                        e.gamma += dg;
                        if (nk.dot as usize) == pr.rhs_len() {
                            *buckets
                                .entry(pkey.origin)
                                .or_default()
                                .entry((pr.lhs, pkey.s, f_c))
                                .or_insert(0.0) += dg;
                        }
                    }
                }
            }
        }

        // Prediction: one pass over the column through the left-corner
        // closure of each state's dot context. Unit rules are skipped; the
        // closure already accounts for them.
        let mut predicted: BTreeMap<StateKey, Weights> = BTreeMap::new();
        for (key, w) in states.iter() {
            let r = self.g.rule(key.rule);
            if (key.dot as usize) >= r.rhs_len() {
                continue;
            }
            let Sym::Nt(y) = r.rhs_sym(key.dot as usize) else {
                continue;
            };
            let Some((_, ctx_t)) = key.f else { continue };
            let cl = get_closure(Some(ctx_t))?;
            let ident = [(y, 1.0f64)];
            let rows: &[(NtId, f64)] = cl.left_corner(y).unwrap_or(&ident);
            for &(nt, wl) in rows {
                for pr in self.g.rules_for(nt, Some(ctx_t)) {
                    if pr.is_unit() {
                        continue;
                    }
                    let nk = StateKey {
                        rule: pr.idx,
                        dot: 0,
                        origin: k,
                        s: key.f,
                        f: key.f,
                    };
                    let e = predicted.entry(nk).or_default();
                    e.alpha += w.alpha * wl * pr.prob;
                    e.gamma = pr.prob;
                }
            }
        }
        for (nk, w) in predicted {
            let e = states.entry(nk).or_default();
            e.alpha += w.alpha;
            e.gamma = w.gamma;
        }

        states.retain(|_, w| w.alpha >= PRUNE || w.gamma >= PRUNE);
        let log_prefix = prev.log_prefix + zeta.ln();
        Ok(self.finish_column(states, zeta, log_prefix))
    }

    fn finish_column(
        &self,
        states: BTreeMap<StateKey, Weights>,
        zeta: f64,
        log_prefix: f64,
    ) -> Column {
        let mut wait: BTreeMap<(NtId, Anchor), Vec<StateKey>> = BTreeMap::new();
        for key in states.keys() {
            let r = self.g.rule(key.rule);
            if (key.dot as usize) < r.rhs_len() {
                if let Sym::Nt(y) = r.rhs_sym(key.dot as usize) {
                    wait.entry((y, key.f)).or_default().push(*key);
                }
            }
        }
        Column {
            states,
            wait,
            zeta,
            log_prefix,
        }
    }

    /// Distribution over the next terminal given the consumed prefix: the
    /// forward mass facing each terminal, normalized. Empty when nothing can
    /// follow.
    pub fn one_step(&self, col: &Column) -> BTreeMap<TermId, f64> {
        let mut num: BTreeMap<TermId, f64> = BTreeMap::new();
        let mut den = 0.0;
        for (key, w) in col.states.iter() {
            let r = self.g.rule(key.rule);
            if (key.dot as usize) < r.rhs_len() {
                if let Sym::T(t) = r.rhs_sym(key.dot as usize) {
                    *num.entry(t).or_insert(0.0) += w.alpha;
                    den += w.alpha;
                }
            }
        }
        if den > 0.0 {
            for v in num.values_mut() {
                *v /= den;
            }
        }
        num
    }

    /// Parse a full terminal sequence, reporting per-step diagnostics.
    pub fn parse_terminals(&self, terms: &[TermId]) -> Result<Vec<ParseStep>> {
        let mut cols = vec![self.init_column()?];
        let mut steps = Vec::with_capacity(terms.len());
        for (i, &t) in terms.iter().enumerate() {
            let pred = self
                .one_step(cols.last().unwrap())
                .get(&t)
                .copied()
                .unwrap_or(0.0);
            let refs: Vec<&Column> = cols.iter().collect();
            let col = self.advance(&refs, &Obs::Hard(t))?;
            steps.push(ParseStep {
                k: (i + 1) as u32,
                term: t,
                pred_prob: pred,
                zeta: col.zeta,
                log_prefix: col.log_prefix,
            });
            cols.push(col);
        }
        Ok(steps)
    }

    /// Log-probability that a string of the language starts with `terms`.
    pub fn log_prefix_probability(&self, terms: &[TermId]) -> Result<f64> {
        if terms.is_empty() {
            return Ok(0.0);
        }
        Ok(self.parse_terminals(terms)?.last().unwrap().log_prefix)
    }
}
