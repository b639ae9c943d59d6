//! Context-conditioned stochastic grammars over road alphabets.
//!
//! Every production carries a conditioning context: the terminal emitted
//! immediately before the nonterminal is expanded (or the start-of-string
//! marker). Rule probabilities must sum to one within each (nonterminal,
//! context) group, which is what lets an incremental parser treat each
//! group as a proper conditional distribution.

mod classes;
mod predicate;

pub use classes::{build_class_grammar, IntentClass, CLASSES};
pub use predicate::class_predicate;

use crate::error::{Error, Result};
use rand::Rng;
use std::collections::HashMap;
use std::fmt::Write as _;

pub type TermId = u32;
pub type NtId = u32;

/// Context slot: either the start of string or a concrete terminal.
pub const CTX_BOT: u32 = u32::MAX;

pub fn ctx_to_u32(ctx: Option<TermId>) -> u32 {
    ctx.map_or(CTX_BOT, |t| t)
}

pub fn u32_to_ctx(raw: u32) -> Option<TermId> {
    if raw == CTX_BOT {
        None
    } else {
        Some(raw)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Sym {
    Nt(NtId),
    T(TermId),
}

const TERM_BIT: u32 = 1 << 31;

impl Sym {
    fn pack(self) -> u32 {
        match self {
            Sym::Nt(n) => n,
            Sym::T(t) => t | TERM_BIT,
        }
    }

    fn unpack(raw: u32) -> Sym {
        if raw & TERM_BIT != 0 {
            Sym::T(raw & !TERM_BIT)
        } else {
            Sym::Nt(raw)
        }
    }
}

/// Marks the role a rule plays in a recursion family, so scenario generation
/// can steer derivations to an exact repetition count. `Plain` rules are
/// sampled by probability alone.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RuleTag {
    Plain,
    Recurse,
    Exit,
}

/// Borrowed view of one production.
#[derive(Debug, Clone, Copy)]
pub struct RuleView<'g> {
    pub idx: u32,
    pub lhs: NtId,
    pub ctx: Option<TermId>,
    pub prob: f64,
    pub tag: RuleTag,
    rhs: &'g [u32],
}

impl<'g> RuleView<'g> {
    pub fn rhs_len(&self) -> usize {
        self.rhs.len()
    }

    pub fn rhs_sym(&self, i: usize) -> Sym {
        Sym::unpack(self.rhs[i])
    }

    pub fn rhs_syms(&self) -> impl Iterator<Item = Sym> + 'g {
        self.rhs.iter().map(|&r| Sym::unpack(r))
    }

    /// True when the rule rewrites to a single nonterminal.
    pub fn is_unit(&self) -> bool {
        self.rhs.len() == 1 && matches!(self.rhs_sym(0), Sym::Nt(_))
    }
}

#[derive(Debug, Clone)]
pub struct Grammar {
    pub nt_names: Vec<String>,
    pub term_names: Vec<String>,
    pub start: NtId,
    rule_lhs: Vec<NtId>,
    rule_ctx: Vec<u32>,
    rule_prob: Vec<f64>,
    rule_tag: Vec<RuleTag>,
    rule_rhs: Vec<(u32, u16)>,
    arena: Vec<u32>,
    groups: HashMap<(NtId, u32), (u32, u32)>,
}

pub struct GrammarBuilder {
    nt_names: Vec<String>,
    nt_ix: HashMap<String, NtId>,
    term_names: Vec<String>,
    term_ix: HashMap<String, TermId>,
    rules: Vec<(NtId, u32, Vec<Sym>, f64, RuleTag)>,
}

impl GrammarBuilder {
    pub fn new() -> Self {
        GrammarBuilder {
            nt_names: Vec::new(),
            nt_ix: HashMap::new(),
            term_names: Vec::new(),
            term_ix: HashMap::new(),
            rules: Vec::new(),
        }
    }

    pub fn term(&mut self, name: &str) -> TermId {
        if let Some(&t) = self.term_ix.get(name) {
            return t;
        }
        let t = self.term_names.len() as TermId;
        self.term_names.push(name.to_string());
        self.term_ix.insert(name.to_string(), t);
        t
    }

    pub fn nt(&mut self, name: &str) -> NtId {
        if let Some(&n) = self.nt_ix.get(name) {
            return n;
        }
        let n = self.nt_names.len() as NtId;
        self.nt_names.push(name.to_string());
        self.nt_ix.insert(name.to_string(), n);
        n
    }

    pub fn rule(&mut self, lhs: NtId, ctx: Option<TermId>, rhs: Vec<Sym>, prob: f64, tag: RuleTag) {
        self.rules.push((lhs, ctx_to_u32(ctx), rhs, prob, tag));
    }

    /// Add one group of alternatives for (lhs, ctx) with probabilities
    /// proportional to the given weights.
    pub fn weighted_group(
        &mut self,
        lhs: NtId,
        ctx: Option<TermId>,
        alts: Vec<(Vec<Sym>, f64, RuleTag)>,
    ) {
        let total: f64 = alts.iter().map(|a| a.1).sum();
        for (rhs, w, tag) in alts {
            self.rule(lhs, ctx, rhs, w / total, tag);
        }
    }

    pub fn build(self, start: NtId) -> Result<Grammar> {
        let mut order: Vec<u32> = (0..self.rules.len() as u32).collect();
        order.sort_by_key(|&i| {
            let r = &self.rules[i as usize];
            (r.0, r.1, i)
        });

        let n = self.rules.len();
        let mut g = Grammar {
            nt_names: self.nt_names,
            term_names: self.term_names,
            start,
            rule_lhs: Vec::with_capacity(n),
            rule_ctx: Vec::with_capacity(n),
            rule_prob: Vec::with_capacity(n),
            rule_tag: Vec::with_capacity(n),
            rule_rhs: Vec::with_capacity(n),
            arena: Vec::new(),
            groups: HashMap::new(),
        };
        for &i in &order {
            let (lhs, ctx, ref rhs, prob, tag) = self.rules[i as usize];
            if rhs.is_empty() {
                return Err(Error::InvalidArgument(format!(
                    "empty right-hand side on {}",
                    g.nt_names[lhs as usize]
                )));
            }
            if !(prob > 0.0 && prob <= 1.0 + 1e-12) {
                return Err(Error::InvalidArgument(format!(
                    "rule probability {prob} outside (0,1] on {}",
                    g.nt_names[lhs as usize]
                )));
            }
            let start_ix = g.arena.len() as u32;
            g.arena.extend(rhs.iter().map(|s| s.pack()));
            g.rule_lhs.push(lhs);
            g.rule_ctx.push(ctx);
            g.rule_prob.push(prob);
            g.rule_tag.push(tag);
            g.rule_rhs.push((start_ix, rhs.len() as u16));
        }

        let mut i = 0u32;
        let total = g.rule_lhs.len() as u32;
        while i < total {
            let key = (g.rule_lhs[i as usize], g.rule_ctx[i as usize]);
            let mut j = i + 1;
            let mut mass = g.rule_prob[i as usize];
            while j < total && (g.rule_lhs[j as usize], g.rule_ctx[j as usize]) == key {
                mass += g.rule_prob[j as usize];
                j += 1;
            }
            if (mass - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidArgument(format!(
                    "probabilities for {} in context {} sum to {mass}, not 1",
                    g.nt_names[key.0 as usize],
                    g.ctx_name(u32_to_ctx(key.1)),
                )));
            }
            g.groups.insert(key, (i, j - i));
            i = j;
        }
        Ok(g)
    }
}

impl Default for GrammarBuilder {
    fn default() -> Self {
        Self::new()
    }
}

/// Health report: probability-mass defect and the spectral radius of the
/// branching mean matrix (radius below one implies derivations terminate
/// with probability one).
#[derive(Debug, Clone, Copy)]
pub struct ConsistencyReport {
    pub max_group_error: f64,
    pub spectral_radius: f64,
}

impl Grammar {
    pub fn num_rules(&self) -> u32 {
        self.rule_lhs.len() as u32
    }

    pub fn num_nts(&self) -> u32 {
        self.nt_names.len() as u32
    }

    pub fn num_terms(&self) -> u32 {
        self.term_names.len() as u32
    }

    pub fn start(&self) -> NtId {
        self.start
    }

    pub fn nt_name(&self, nt: NtId) -> &str {
        &self.nt_names[nt as usize]
    }

    pub fn term_name(&self, t: TermId) -> &str {
        &self.term_names[t as usize]
    }

    pub fn rule(&self, idx: u32) -> RuleView<'_> {
        let i = idx as usize;
        let (start, len) = self.rule_rhs[i];
        RuleView {
            idx,
            lhs: self.rule_lhs[i],
            ctx: u32_to_ctx(self.rule_ctx[i]),
            prob: self.rule_prob[i],
            tag: self.rule_tag[i],
            rhs: &self.arena[start as usize..start as usize + len as usize],
        }
    }

    /// Productions for a nonterminal in a given context. Empty when the
    /// nonterminal has no alternative there (a dead expansion point).
    pub fn rules_for(&self, nt: NtId, ctx: Option<TermId>) -> impl Iterator<Item = RuleView<'_>> {
        let (start, len) = self
            .groups
            .get(&(nt, ctx_to_u32(ctx)))
            .copied()
            .unwrap_or((0, 0));
        (start..start + len).map(move |i| self.rule(i))
    }

    pub fn has_rules(&self, nt: NtId, ctx: Option<TermId>) -> bool {
        self.groups.contains_key(&(nt, ctx_to_u32(ctx)))
    }

    /// All rules in deterministic storage order (sorted by lhs, then context).
    pub fn rules(&self) -> impl Iterator<Item = RuleView<'_>> {
        (0..self.num_rules()).map(move |i| self.rule(i))
    }

    fn ctx_name(&self, ctx: Option<TermId>) -> String {
        match ctx {
            None => "_".to_string(),
            Some(t) => self.term_names[t as usize].clone(),
        }
    }

    /// Draw one terminal string by leftmost derivation.
    pub fn sample_string<R: Rng>(&self, rng: &mut R, max_len: usize) -> Result<Vec<TermId>> {
        self.sample_with_policy(rng, max_len, |_, _, _, _| None)
    }

    /// Like `sample_string`, but a policy may pin the tag class used at any
    /// tagged decision point (returning `None` leaves the choice to chance).
    /// Within the chosen class, alternatives are drawn by renormalized
    /// probability.
    pub fn sample_with_policy<R, P>(
        &self,
        rng: &mut R,
        max_len: usize,
        mut policy: P,
    ) -> Result<Vec<TermId>>
    where
        R: Rng,
        P: FnMut(&Grammar, NtId, Option<TermId>, &[u32]) -> Option<RuleTag>,
    {
        let mut stack = vec![Sym::Nt(self.start)];
        let mut out: Vec<TermId> = Vec::new();
        let mut ctx: Option<TermId> = None;
        let step_cap = max_len.saturating_mul(64).max(4096);
        let mut steps = 0usize;
        while let Some(sym) = stack.pop() {
            steps += 1;
            if steps > step_cap {
                return Err(Error::DerivationOverflow(format!(
                    "derivation exceeded {step_cap} expansion steps"
                )));
            }
            match sym {
                Sym::T(t) => {
                    out.push(t);
                    ctx = Some(t);
                    if out.len() > max_len {
                        return Err(Error::DerivationOverflow(format!(
                            "derived string exceeded {max_len} terminals"
                        )));
                    }
                }
                Sym::Nt(nt) => {
                    let (start, len) = self
                        .groups
                        .get(&(nt, ctx_to_u32(ctx)))
                        .copied()
                        .unwrap_or((0, 0));
                    if len == 0 {
                        return Err(Error::InvalidArgument(format!(
                            "no production for {} in context {}",
                            self.nt_names[nt as usize],
                            self.ctx_name(ctx)
                        )));
                    }
                    let ids: Vec<u32> = (start..start + len).collect();
                    let tagged = ids
                        .iter()
                        .any(|&i| self.rule_tag[i as usize] != RuleTag::Plain);
                    let pool: Vec<u32> = if tagged {
                        match policy(self, nt, ctx, &ids) {
                            Some(tag) => {
                                let sel: Vec<u32> = ids
                                    .iter()
                                    .copied()
                                    .filter(|&i| self.rule_tag[i as usize] == tag)
                                    .collect();
                                if sel.is_empty() {
                                    return Err(Error::InvalidArgument(format!(
                                        "policy requested {tag:?} but {} has no such rule in context {}",
                                        self.nt_names[nt as usize],
                                        self.ctx_name(ctx)
                                    )));
                                }
                                sel
                            }
                            None => ids,
                        }
                    } else {
                        ids
                    };
                    let total: f64 = pool.iter().map(|&i| self.rule_prob[i as usize]).sum();
                    let mut u = rng.random::<f64>() * total;
                    let mut chosen = *pool.last().unwrap();
                    for &i in &pool {
                        u -= self.rule_prob[i as usize];
                        if u <= 0.0 {
                            chosen = i;
                            break;
                        }
                    }
                    let rv = self.rule(chosen);
                    for k in (0..rv.rhs_len()).rev() {
                        stack.push(rv.rhs_sym(k));
                    }
                }
            }
        }
        Ok(out)
    }

    /// Branching mean matrix: entry (X, B) is the largest, over contexts, of
    /// the expected number of B occurrences produced when X is rewritten in
    /// that context. Taking the per-context maximum gives a conservative
    /// bound, so a spectral radius below one certifies termination for every
    /// reachable context.
    pub fn mean_matrix(&self) -> MeanMatrix {
        let n = self.num_nts() as usize;
        let mut rows: Vec<HashMap<NtId, f64>> = vec![HashMap::new(); n];
        let total = self.num_rules();
        let mut i = 0u32;
        while i < total {
            let key = (self.rule_lhs[i as usize], self.rule_ctx[i as usize]);
            let mut j = i;
            let mut expect: HashMap<NtId, f64> = HashMap::new();
            while j < total
                && (self.rule_lhs[j as usize], self.rule_ctx[j as usize]) == key
            {
                let rv = self.rule(j);
                for sym in rv.rhs_syms() {
                    if let Sym::Nt(b) = sym {
                        *expect.entry(b).or_insert(0.0) += rv.prob;
                    }
                }
                j += 1;
            }
            let row = &mut rows[key.0 as usize];
            for (b, v) in expect {
                let slot = row.entry(b).or_insert(0.0);
                if v > *slot {
                    *slot = v;
                }
            }
            i = j;
        }
        let rows = rows
            .into_iter()
            .map(|m| {
                let mut v: Vec<(NtId, f64)> = m.into_iter().collect();
                v.sort_unstable_by_key(|e| e.0);
                v
            })
            .collect();
        MeanMatrix { n, rows }
    }

    pub fn check_consistency(&self) -> ConsistencyReport {
        let mut max_err: f64 = 0.0;
        let total = self.num_rules();
        let mut i = 0u32;
        while i < total {
            let key = (self.rule_lhs[i as usize], self.rule_ctx[i as usize]);
            let mut j = i;
            let mut mass = 0.0;
            while j < total
                && (self.rule_lhs[j as usize], self.rule_ctx[j as usize]) == key
            {
                mass += self.rule_prob[j as usize];
                j += 1;
            }
            max_err = max_err.max((mass - 1.0).abs());
            i = j;
        }
        ConsistencyReport {
            max_group_error: max_err,
            spectral_radius: self.mean_matrix().spectral_radius(),
        }
    }

    /// Plain-text dump: a `start` header then one `rule` line per production
    /// with the context terminal (`_` for start of string), the probability,
    /// and the right-hand-side symbol names.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "start {}", self.nt_names[self.start as usize]);
        for rv in self.rules() {
            let _ = write!(
                s,
                "rule {} {} {:.17e}",
                self.nt_names[rv.lhs as usize],
                self.ctx_name(rv.ctx),
                rv.prob
            );
            for sym in rv.rhs_syms() {
                match sym {
                    Sym::Nt(n) => {
                        let _ = write!(s, " {}", self.nt_names[n as usize]);
                    }
                    Sym::T(t) => {
                        let _ = write!(s, " {}", self.term_names[t as usize]);
                    }
                }
            }
            let _ = writeln!(s);
        }
        s
    }

    /// Parse a dump back into a grammar. Symbols appearing on some left-hand
    /// side are nonterminals; everything else is a terminal.
    pub fn load(text: &str) -> Result<Grammar> {
        let mut start_name: Option<&str> = None;
        let mut raw: Vec<(&str, &str, f64, Vec<&str>)> = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            match parts.next() {
                Some("start") => {
                    start_name =
                        Some(parts.next().ok_or_else(|| Error::Format("bare start line".into()))?);
                }
                Some("rule") => {
                    let lhs = parts.next().ok_or_else(|| Error::Format("rule missing lhs".into()))?;
                    let ctx = parts.next().ok_or_else(|| Error::Format("rule missing context".into()))?;
                    let prob: f64 = parts
                        .next()
                        .ok_or_else(|| Error::Format("rule missing probability".into()))?
                        .parse()
                        .map_err(|_| Error::Format("bad probability".into()))?;
                    let rhs: Vec<&str> = parts.collect();
                    if rhs.is_empty() {
                        return Err(Error::Format(format!("rule for {lhs} has empty rhs")));
                    }
                    raw.push((lhs, ctx, prob, rhs));
                }
                _ => return Err(Error::Format(format!("bad grammar line {line:?}"))),
            }
        }
        let start_name =
            start_name.ok_or_else(|| Error::Format("grammar dump missing start line".into()))?;
        let mut b = GrammarBuilder::new();
        let lhs_set: std::collections::HashSet<&str> =
            raw.iter().map(|r| r.0).collect();
        // Intern nonterminals first (start symbol included), then terminals,
        // in order of appearance so ids are stable.
        b.nt(start_name);
        for (lhs, _, _, _) in &raw {
            b.nt(lhs);
        }
        for (_, ctx, _, rhs) in &raw {
            if *ctx != "_" && !lhs_set.contains(ctx) {
                b.term(ctx);
            }
            for s in rhs {
                if !lhs_set.contains(s) {
                    b.term(s);
                }
            }
        }
        for (lhs, ctx, prob, rhs) in raw {
            let lhs = b.nt(lhs);
            let ctx = if ctx == "_" {
                None
            } else if lhs_set.contains(ctx) {
                return Err(Error::Format(format!("context {ctx} is a nonterminal")));
            } else {
                Some(b.term(ctx))
            };
            let rhs: Vec<Sym> = rhs
                .iter()
                .map(|s| {
                    if lhs_set.contains(s) {
                        Sym::Nt(b.nt(s))
                    } else {
                        Sym::T(b.term(s))
                    }
                })
                .collect();
            b.rule(lhs, ctx, rhs, prob, RuleTag::Plain);
        }
        let start = b.nt(start_name);
        b.build(start)
    }
}

/// Sparse nonnegative matrix of expected symbol counts.
#[derive(Debug, Clone)]
pub struct MeanMatrix {
    pub n: usize,
    pub rows: Vec<Vec<(NtId, f64)>>,
}

impl MeanMatrix {
    pub fn entry(&self, x: NtId, b: NtId) -> f64 {
        self.rows[x as usize]
            .iter()
            .find(|e| e.0 == b)
            .map_or(0.0, |e| e.1)
    }

    /// Spectral radius by power iteration on the shifted matrix A + I, which
    /// has dominant eigenvalue radius(A) + 1 for nonnegative A, so the shift
    /// avoids stalls on zero or oscillating iterates.
    pub fn spectral_radius(&self) -> f64 {
        if self.n == 0 {
            return 0.0;
        }
        let n = self.n;
        let mut v = vec![1.0f64; n];
        let mut lambda = 1.0f64;
        for _ in 0..600 {
            let mut w = v.clone();
            for (x, row) in self.rows.iter().enumerate() {
                for &(b, a) in row {
                    w[x] += a * v[b as usize];
                }
            }
            let norm: f64 = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                return 0.0;
            }
            for x in &mut w {
                *x /= norm;
            }
            let mut num = 0.0;
            for (x, row) in self.rows.iter().enumerate() {
                let mut ax = w[x];
                for &(b, a) in row {
                    ax += a * w[b as usize];
                }
                num += w[x] * ax;
            }
            let next = num;
            let done = (next - lambda).abs() < 1e-13;
            lambda = next;
            v = w;
            if done {
                break;
            }
        }
        (lambda - 1.0).max(0.0)
    }
}
