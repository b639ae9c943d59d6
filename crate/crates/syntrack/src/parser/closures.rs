//! Left-corner and unit-production closures, one pair per conditioning
//! context.
//!
//! For a context a, P_L(X, Y) sums the probability of X-rules whose first
//! right-hand symbol is the nonterminal Y (unit rules included), and
//! P_U(X, Y) sums the unit rules X -> Y alone. The closures
//! R_l = (I - P_L)^-1 and R_u = (I - P_U)^-1 let prediction and completion
//! fold arbitrary left-recursive and unit chains into single table lookups.
//! Both are computed densely on the support submatrix and stored sparsely.

use crate::error::{Error, Result};
use crate::grammar::{ctx_to_u32, u32_to_ctx, Grammar, NtId, Sym, TermId};
use nalgebra::DMatrix;
use std::collections::HashMap;
use std::sync::{Arc, Mutex};

const KEEP: f64 = 1e-14;

/// Closure tables for one context. Rows absent from the maps are pure
/// identity (the nonterminal has no left-corner or unit edges here).
pub struct CtxClosure {
    rl: HashMap<NtId, Vec<(NtId, f64)>>,
    ru_parents: HashMap<NtId, Vec<(NtId, f64)>>,
}

impl CtxClosure {
    /// R_l(y, .) as sorted (target, weight) pairs; `None` means the identity
    /// row (y itself with weight one).
    pub fn left_corner(&self, y: NtId) -> Option<&[(NtId, f64)]> {
        self.rl.get(&y).map(|v| v.as_slice())
    }

    /// Transposed R_u: every x with R_u(x, child) nonzero, sorted; `None`
    /// means child reaches only itself.
    pub fn unit_parents(&self, child: NtId) -> Option<&[(NtId, f64)]> {
        self.ru_parents.get(&child).map(|v| v.as_slice())
    }
}

/// Invert I - P on the support of the given edge set and return the sparse
/// nonzero rows (including the diagonal).
fn invert_edges(
    g: &Grammar,
    edges: &HashMap<(NtId, NtId), f64>,
    what: &str,
    transpose: bool,
) -> Result<HashMap<NtId, Vec<(NtId, f64)>>> {
    if edges.is_empty() {
        return Ok(HashMap::new());
    }
    let mut support: Vec<NtId> = Vec::new();
    for &(x, y) in edges.keys() {
        support.push(x);
        support.push(y);
    }
    support.sort_unstable();
    support.dedup();
    let n = support.len();
    let index: HashMap<NtId, usize> = support.iter().enumerate().map(|(i, &v)| (v, i)).collect();

    let mut m = DMatrix::<f64>::identity(n, n);
    for (&(x, y), &p) in edges {
        m[(index[&x], index[&y])] -= p;
    }
    let inv = m.lu().try_inverse().ok_or_else(|| {
        Error::ClosureDivergence(format!("{what} closure matrix is singular ({n} nonterminals)"))
    })?;

    let mut rows: HashMap<NtId, Vec<(NtId, f64)>> = HashMap::new();
    for i in 0..n {
        for j in 0..n {
            let w = inv[(i, j)];
            if !w.is_finite() || w < -1e-9 {
                return Err(Error::ClosureDivergence(format!(
                    "{what} closure weight {w} for {} -> {}",
                    g.nt_name(support[i]),
                    g.nt_name(support[j]),
                )));
            }
            if w > KEEP {
                let (row, col) = if transpose {
                    (support[j], support[i])
                } else {
                    (support[i], support[j])
                };
                rows.entry(row).or_default().push((col, w));
            }
        }
    }
    for v in rows.values_mut() {
        v.sort_unstable_by_key(|&(nt, _)| nt);
    }
    Ok(rows)
}

fn build_ctx(g: &Grammar, ctx: Option<TermId>) -> Result<CtxClosure> {
    let mut pl: HashMap<(NtId, NtId), f64> = HashMap::new();
    let mut pu: HashMap<(NtId, NtId), f64> = HashMap::new();
    for nt in 0..g.num_nts() {
        for r in g.rules_for(nt, ctx) {
            if let Sym::Nt(y) = r.rhs_sym(0) {
                *pl.entry((nt, y)).or_insert(0.0) += r.prob;
                if r.rhs_len() == 1 {
                    *pu.entry((nt, y)).or_insert(0.0) += r.prob;
                }
            }
        }
    }
    Ok(CtxClosure {
        rl: invert_edges(g, &pl, "left-corner", false)?,
        ru_parents: invert_edges(g, &pu, "unit", true)?,
    })
}

/// Lazily computed closures for every context, shared across threads. Call
/// `build_all` before fanning out parallel work so later lookups are pure
/// cache reads.
pub struct ClosureStore {
    g: Arc<Grammar>,
    cache: Mutex<HashMap<u32, Arc<CtxClosure>>>,
}

impl ClosureStore {
    pub fn new(g: Arc<Grammar>) -> ClosureStore {
        ClosureStore {
            g,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn get(&self, ctx: Option<TermId>) -> Result<Arc<CtxClosure>> {
        let key = ctx_to_u32(ctx);
        let mut cache = self.cache.lock().unwrap();
        if let Some(c) = cache.get(&key) {
            return Ok(c.clone());
        }
        let built = Arc::new(build_ctx(&self.g, ctx)?);
        cache.insert(key, built.clone());
        Ok(built)
    }

    /// Precompute the closure of the empty context and of every terminal.
    pub fn build_all(&self) -> Result<()> {
        self.get(None)?;
        for t in 0..self.g.num_terms() {
            self.get(Some(t))?;
        }
        Ok(())
    }
}

/// Convenience used by error messages and tests.
pub fn ctx_label(g: &Grammar, raw: u32) -> String {
    match u32_to_ctx(raw) {
        None => "_".to_string(),
        Some(t) => g.term_name(t).to_string(),
    }
}
