//! Shared incremental parsing state for a particle population.
//!
//! Many particles visit the same deduplicated road sequence, and advancing
//! a parser chart is far more expensive than everything else a particle
//! does in a step. The store is a trie over road ids: each node carries,
//! per grammar, the chart column reached by that road sequence, its
//! cumulative prefix log-probability, and a lazily computed one-step
//! forecast. A grammar that can no longer generate the prefix is marked
//! dead at that node and stays dead below it.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grammar::TermId;
use crate::parser::{Column, Obs, Parser};
use crate::roadgraph::{EdgeId, RoadGraph};

pub type NodeId = u32;

struct GrammarNode {
    /// Chart column for this prefix; `None` once the grammar is dead here.
    col: Option<Arc<Column>>,
    /// Cumulative prefix log-probability; -inf when dead.
    log_prefix: f64,
    one_step: Option<Arc<BTreeMap<TermId, f64>>>,
}

struct Node {
    parent: Option<(NodeId, EdgeId)>,
    children: BTreeMap<EdgeId, NodeId>,
    per: Vec<GrammarNode>,
}

pub struct PrefixStore {
    parsers: Vec<Arc<Parser>>,
    /// Per grammar: the terminal id of each road id, `None` for roads the
    /// grammar never emits (advancing through one kills the grammar).
    term_of_edge: Vec<Vec<Option<TermId>>>,
    nodes: Vec<Node>,
}

impl PrefixStore {
    pub fn new(graph: &RoadGraph, parsers: Vec<Arc<Parser>>) -> Result<PrefixStore> {
        let mut term_of_edge = Vec::with_capacity(parsers.len());
        for p in &parsers {
            let g = p.grammar();
            let by_name: HashMap<&str, TermId> =
                (0..g.num_terms()).map(|t| (g.term_name(t), t)).collect();
            let map: Vec<Option<TermId>> = (0..graph.num_edges())
                .map(|e| by_name.get(graph.edge_name(e).as_str()).copied())
                .collect();
            term_of_edge.push(map);
        }
        let per = parsers
            .iter()
            .map(|p| {
                Ok(GrammarNode {
                    col: Some(Arc::new(p.init_column()?)),
                    log_prefix: 0.0,
                    one_step: None,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PrefixStore {
            parsers,
            term_of_edge,
            nodes: vec![Node {
                parent: None,
                children: BTreeMap::new(),
                per,
            }],
        })
    }

    pub fn num_grammars(&self) -> usize {
        self.parsers.len()
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn root(&self) -> NodeId {
        0
    }

    pub fn is_dead(&self, node: NodeId, g: usize) -> bool {
        self.nodes[node as usize].per[g].col.is_none()
    }

    pub fn log_prefix(&self, node: NodeId, g: usize) -> f64 {
        self.nodes[node as usize].per[g].log_prefix
    }

    /// The deduplicated road sequence this node stands for.
    pub fn sequence(&self, node: NodeId) -> Vec<EdgeId> {
        let mut seq = Vec::new();
        let mut cur = node;
        while let Some((parent, edge)) = self.nodes[cur as usize].parent {
            seq.push(edge);
            cur = parent;
        }
        seq.reverse();
        seq
    }

    /// Child of `node` along road `edge`, advancing every live grammar's
    /// chart by the corresponding terminal (grammars whose language cannot
    /// continue with it are marked dead). Cached: repeated calls return the
    /// same node.
    pub fn child(&mut self, node: NodeId, edge: EdgeId) -> Result<NodeId> {
        if let Some(&c) = self.nodes[node as usize].children.get(&edge) {
            return Ok(c);
        }
        // Trie path from the root, shared by all grammars.
        let mut rev_path = vec![node];
        let mut cur = node;
        while let Some((parent, _)) = self.nodes[cur as usize].parent {
            rev_path.push(parent);
            cur = parent;
        }
        let mut per = Vec::with_capacity(self.parsers.len());
        for (g, parser) in self.parsers.iter().enumerate() {
            if self.nodes[node as usize].per[g].col.is_none() {
                per.push(GrammarNode {
                    col: None,
                    log_prefix: f64::NEG_INFINITY,
                    one_step: None,
                });
                continue;
            }
            let Some(term) = self.term_of_edge[g][edge as usize] else {
                per.push(GrammarNode {
                    col: None,
                    log_prefix: f64::NEG_INFINITY,
                    one_step: None,
                });
                continue;
            };
            let cols: Vec<Arc<Column>> = rev_path
                .iter()
                .rev()
                .map(|&n| self.nodes[n as usize].per[g].col.clone().unwrap())
                .collect();
            let refs: Vec<&Column> = cols.iter().map(|c| c.as_ref()).collect();
            match parser.advance(&refs, &Obs::Hard(term)) {
                Ok(col) => per.push(GrammarNode {
                    log_prefix: col.log_prefix,
                    col: Some(Arc::new(col)),
                    one_step: None,
                }),
                Err(Error::DeadPrefix(_)) => per.push(GrammarNode {
                    col: None,
                    log_prefix: f64::NEG_INFINITY,
                    one_step: None,
                }),
                Err(e) => return Err(e),
            }
        }
        let id = self.nodes.len() as NodeId;
        self.nodes.push(Node {
            parent: Some((node, edge)),
            children: BTreeMap::new(),
            per,
        });
        self.nodes[node as usize].children.insert(edge, id);
        Ok(id)
    }

    /// One-step terminal forecast of grammar `g` at `node`; empty map when
    /// the grammar is dead there. Computed once and cached on the node.
    pub fn one_step(&mut self, node: NodeId, g: usize) -> Arc<BTreeMap<TermId, f64>> {
        if let Some(m) = &self.nodes[node as usize].per[g].one_step {
            return m.clone();
        }
        let map = match &self.nodes[node as usize].per[g].col {
            Some(col) => Arc::new(self.parsers[g].one_step(col)),
            None => Arc::new(BTreeMap::new()),
        };
        self.nodes[node as usize].per[g].one_step = Some(map.clone());
        map
    }

    /// Probability grammar `g` assigns to continuing this node's sequence
    /// with `edge`, per the cached one-step forecast.
    pub fn next_road_prob(&mut self, node: NodeId, g: usize, edge: EdgeId) -> f64 {
        let Some(term) = self.term_of_edge[g][edge as usize] else {
            return 0.0;
        };
        self.one_step(node, g).get(&term).copied().unwrap_or(0.0)
    }

    /// Posterior over grammars given this node's road sequence: Bayes rule
    /// on the prefix probabilities with the supplied prior. When every
    /// grammar is dead the prior is returned and the flag is set.
    pub fn class_posterior(&self, node: NodeId, prior: &[f64]) -> (Vec<f64>, bool) {
        let per = &self.nodes[node as usize].per;
        let logs: Vec<f64> = per
            .iter()
            .zip(prior)
            .map(|(gn, p)| gn.log_prefix + p.ln())
            .collect();
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return (prior.to_vec(), true);
        }
        let mut post: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = post.iter().sum();
        for p in &mut post {
            *p /= total;
        }
        (post, false)
    }
}
