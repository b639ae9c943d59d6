//! Builders for the three road-search intent grammars.
//!
//! All three share the same building blocks: a block search is one full
//! four-edge circuit of a city block, entered at any corner; searches are
//! joined either seamlessly (the next circuit starts where the previous one
//! ended), by straight runs along one road line, or by monotone staircase
//! transits confined to one compass quadrant.
//!
//! Built clockwise, a grammar generates the forward language of its class.
//! Built counterclockwise it generates exactly the edge-reversed strings,
//! which is what a reversed-trajectory parse needs.
//!
//! Every recursion-bearing nonterminal is indexed by a countdown (staircase
//! steps left, run columns left) or by a strictly growing depth, so the
//! branching mean matrix stays strictly subcritical and derivations cannot
//! wander.

use super::{Grammar, GrammarBuilder, NtId, RuleTag, Sym};
use crate::error::{Error, Result};
use crate::roadgraph::{Block, Corner, EdgeId, Heading, Orientation, RoadGraph, VertexId};
use std::collections::HashMap;

/// The three target intent classes, in canonical order (used for priors,
/// posterior vectors, and tie-breaking).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum IntentClass {
    Equal,
    Patrol,
    Asym,
}

pub const CLASSES: [IntentClass; 3] = [IntentClass::Equal, IntentClass::Patrol, IntentClass::Asym];

impl IntentClass {
    pub fn name(self) -> &'static str {
        match self {
            IntentClass::Equal => "equal",
            IntentClass::Patrol => "patrol",
            IntentClass::Asym => "asym",
        }
    }

    pub fn index(self) -> usize {
        match self {
            IntentClass::Equal => 0,
            IntentClass::Patrol => 1,
            IntentClass::Asym => 2,
        }
    }

    pub fn from_name(s: &str) -> Result<IntentClass> {
        match s {
            "equal" => Ok(IntentClass::Equal),
            "patrol" => Ok(IntentClass::Patrol),
            "asym" => Ok(IntentClass::Asym),
            _ => Err(Error::InvalidArgument(format!("unknown class {s:?}"))),
        }
    }
}

/// Build the grammar of one intent class over a road graph. Clockwise gives
/// the forward language; counterclockwise gives the reversed one.
pub fn build_class_grammar(
    g: &RoadGraph,
    class: IntentClass,
    orient: Orientation,
) -> Result<Grammar> {
    match class {
        IntentClass::Equal => build_equal(g, orient),
        IntentClass::Patrol => build_patrol(g, orient),
        IntentClass::Asym => build_asym(g, orient),
    }
}

const QUADRANTS: [[Heading; 2]; 4] = [
    [Heading::North, Heading::East],
    [Heading::North, Heading::West],
    [Heading::South, Heading::East],
    [Heading::South, Heading::West],
];

fn quad_contains(qi: usize, h: Heading) -> bool {
    QUADRANTS[qi][0] == h || QUADRANTS[qi][1] == h
}

/// Blocks that have vertex v as one of their corners, in fixed scan order.
fn corner_blocks(g: &RoadGraph, v: VertexId) -> Vec<Block> {
    let (c, r) = g.vertex_cr(v);
    let mut out = Vec::with_capacity(4);
    for j in [r, r + 1] {
        for i in [c, c + 1] {
            let b = Block { col: i, row: j };
            if i >= 1 && j >= 1 && g.block_valid(b) {
                out.push(b);
            }
        }
    }
    out
}

/// Circuit entry edges available at vertex v, one per adjacent block that
/// passes the filter.
fn entries_at(
    g: &RoadGraph,
    o: Orientation,
    v: VertexId,
    filt: &dyn Fn(Block) -> bool,
) -> Vec<(Block, EdgeId)> {
    corner_blocks(g, v)
        .into_iter()
        .filter(|&b| filt(b))
        .filter_map(|b| g.circuit_edge_from(b, o, v).map(|e| (b, e)))
        .collect()
}

fn edge_with_heading(g: &RoadGraph, v: VertexId, h: Heading) -> Option<EdgeId> {
    g.out_edges(v).iter().copied().find(|&e| g.edge(e).heading == h)
}

fn block_corners(g: &RoadGraph, b: Block) -> [VertexId; 4] {
    [
        g.corner_vertex(b, Corner::BottomLeft),
        g.corner_vertex(b, Corner::BottomRight),
        g.corner_vertex(b, Corner::TopLeft),
        g.corner_vertex(b, Corner::TopRight),
    ]
}

/// Memoized reachability for staircase transits: after traversing edge e
/// with t more transit edges allowed, can the chain still reach a point
/// where `deliver` fires?
struct StairMemo<'a> {
    g: &'a RoadGraph,
    qi: usize,
    memo: HashMap<(EdgeId, u32), bool>,
}

impl<'a> StairMemo<'a> {
    fn new(g: &'a RoadGraph, qi: usize) -> Self {
        StairMemo {
            g,
            qi,
            memo: HashMap::new(),
        }
    }

    fn viable(&mut self, e: EdgeId, t: u32, deliver: &dyn Fn(VertexId) -> bool) -> bool {
        if let Some(&known) = self.memo.get(&(e, t)) {
            return known;
        }
        let end = self.g.edge(e).into;
        let mut ok = deliver(end);
        if !ok && t >= 1 {
            for &e2 in self.g.out_edges(end) {
                if quad_contains(self.qi, self.g.edge(e2).heading)
                    && self.viable(e2, t - 1, deliver)
                {
                    ok = true;
                    break;
                }
            }
        }
        self.memo.insert((e, t), ok);
        ok
    }
}

/// Shared scaffolding: a builder with all edges interned as terminals (so
/// terminal id equals edge id) and the three-step circuit-completion chain.
struct Scaffold {
    b: GrammarBuilder,
    k3: NtId,
}

fn scaffold(g: &RoadGraph, o: Orientation) -> Scaffold {
    let mut b = GrammarBuilder::new();
    for e in 0..g.num_edges() {
        b.term(&g.edge_name(e));
    }
    let k3 = b.nt("K3");
    let k2 = b.nt("K2");
    let k1 = b.nt("K1");
    // After an entry edge, K3/K2/K1 walk the remaining three circuit edges,
    // each forced by the edge just emitted.
    for e in 0..g.num_edges() {
        if let Some(s) = g.circuit_succ(e, o) {
            b.rule(k3, Some(e), vec![Sym::T(s), Sym::Nt(k2)], 1.0, RuleTag::Plain);
            b.rule(k2, Some(e), vec![Sym::T(s), Sym::Nt(k1)], 1.0, RuleTag::Plain);
            b.rule(k1, Some(e), vec![Sym::T(s)], 1.0, RuleTag::Plain);
        }
    }
    Scaffold { b, k3 }
}

fn circuit_edges(g: &RoadGraph, o: Orientation) -> Vec<EdgeId> {
    (0..g.num_edges())
        .filter(|&e| g.circuit_block(e, o).is_some())
        .collect()
}

/// Maximum staircase length: a monotone transit crosses each road line at
/// most once per axis.
fn stair_depth(g: &RoadGraph) -> u32 {
    g.block_rows + g.block_cols
}

/// Emit the staircase-transit chain targeting one block: states
/// `T[blk,qi,t]` either take one more quadrant edge (viability-gated) or
/// take a final quadrant edge landing on a corner of the block, handing
/// over to `landing`. Returns, per context edge, whether the top state has
/// any alternative there.
fn emit_transit(
    b: &mut GrammarBuilder,
    g: &RoadGraph,
    blk: Block,
    qi: usize,
    depth: u32,
    landing: NtId,
    name: &dyn Fn(&mut GrammarBuilder, Block, usize, u32) -> NtId,
) -> Vec<bool> {
    let corners = block_corners(g, blk);
    let deliver = |v: VertexId| {
        g.out_edges(v).iter().any(|&e2| {
            quad_contains(qi, g.edge(e2).heading) && corners.contains(&g.edge(e2).into)
        })
    };
    let mut memo = StairMemo::new(g, qi);
    let mut usable = vec![false; g.num_edges() as usize];
    for t in (0..depth).rev() {
        let tn = name(b, blk, qi, t);
        for ctx in 0..g.num_edges() {
            // Interior states are only ever reached from a transit edge of
            // the same quadrant; the top state can follow any edge.
            if t + 1 < depth && !quad_contains(qi, g.edge(ctx).heading) {
                continue;
            }
            let v = g.edge(ctx).into;
            let mut alts = Vec::new();
            for &e2 in g.out_edges(v) {
                if !quad_contains(qi, g.edge(e2).heading) {
                    continue;
                }
                if corners.contains(&g.edge(e2).into) {
                    alts.push((vec![Sym::T(e2), Sym::Nt(landing)], 1.0, RuleTag::Plain));
                }
                if t >= 1 && memo.viable(e2, t - 1, &deliver) {
                    let deeper = name(b, blk, qi, t - 1);
                    alts.push((vec![Sym::T(e2), Sym::Nt(deeper)], 1.0, RuleTag::Plain));
                }
            }
            if !alts.is_empty() {
                if t == depth - 1 {
                    usable[ctx as usize] = true;
                }
                b.weighted_group(tn, Some(ctx), alts);
            }
        }
    }
    usable
}

// ---------------------------------------------------------------------------
// Equal-search: N circuits along one block row at strictly increasing
// columns (east runs between), one staircase transit, then N circuits along
// a different row at strictly decreasing columns (west runs between).
// ---------------------------------------------------------------------------

fn build_equal(g: &RoadGraph, o: Orientation) -> Result<Grammar> {
    let rows = g.block_rows;
    let cols = g.block_cols;
    if rows < 2 || cols < 2 {
        return Err(Error::InvalidArgument(
            "equal-search grammar needs at least a 2x2 block grid".into(),
        ));
    }
    let depth = stair_depth(g);
    let Scaffold { mut b, k3 } = scaffold(g, o);
    let circuits = circuit_edges(g, o);

    let s = b.nt("S");
    let nt_af = |b: &mut GrammarBuilder, p1: u32| b.nt(&format!("AF[{p1}]"));
    let nt_a = |b: &mut GrammarBuilder, p1: u32| b.nt(&format!("A[{p1}]"));
    let nt_ea = |b: &mut GrammarBuilder, p1: u32, lo: u32, t: u32| {
        b.nt(&format!("EA[{p1},{lo},{t}]"))
    };
    let nt_core = |b: &mut GrammarBuilder, r: u32, p1: u32, p2: u32| {
        b.nt(&format!("Core[{r},{p1},{p2}]"))
    };
    let nt_ch = |b: &mut GrammarBuilder, r: u32, p2: u32| b.nt(&format!("CH[{r},{p2}]"));
    let nt_wc = |b: &mut GrammarBuilder, p2: u32, lo: u32, hi: u32, t: u32| {
        b.nt(&format!("WC[{p2},{lo},{hi},{t}]"))
    };
    let nt_cf = |b: &mut GrammarBuilder, r: u32, p2: u32| b.nt(&format!("CF[{r},{p2}]"));
    let nt_mq = |b: &mut GrammarBuilder, qi: usize, p2: u32, r: u32, t: u32| {
        b.nt(&format!("MQ[{qi},{p2},{r},{t}]"))
    };

    // Start: pick the two distinct search rows.
    let mut alts = Vec::new();
    for p1 in 1..=rows {
        for p2 in 1..=rows {
            if p1 != p2 {
                let af = nt_af(&mut b, p1);
                let core = nt_core(&mut b, 0, p1, p2);
                alts.push((vec![Sym::Nt(af), Sym::Nt(core)], 1.0, RuleTag::Plain));
            }
        }
    }
    b.weighted_group(s, None, alts);

    // First search of the increasing leg: any block of the row, any corner.
    for p1 in 1..=rows {
        let af = nt_af(&mut b, p1);
        let mut alts = Vec::new();
        for i in 1..=cols {
            let blk = Block { col: i, row: p1 };
            for e in g.block_circuit(blk, o)? {
                alts.push((vec![Sym::T(e), Sym::Nt(k3)], 1.0, RuleTag::Plain));
            }
        }
        b.weighted_group(af, None, alts);
    }

    // Recursion spine: each level adds one more circuit to each leg; the
    // exit hands over to the staircase transit. The budget r counts circuits
    // still owed to the decreasing leg below this level.
    for p1 in 1..=rows {
        for p2 in 1..=rows {
            if p1 == p2 {
                continue;
            }
            for r in 0..cols {
                let core = nt_core(&mut b, r, p1, p2);
                for &e in &circuits {
                    let blk = g.circuit_block(e, o).unwrap();
                    if blk.row != p1 {
                        continue;
                    }
                    let mut alts = Vec::new();
                    if r + 2 <= cols && blk.col < cols {
                        let a = nt_a(&mut b, p1);
                        let deeper = nt_core(&mut b, r + 1, p1, p2);
                        let ch = nt_ch(&mut b, r, p2);
                        alts.push((
                            vec![Sym::Nt(a), Sym::Nt(deeper), Sym::Nt(ch)],
                            1.0,
                            RuleTag::Recurse,
                        ));
                    }
                    let cf = nt_cf(&mut b, r, p2);
                    alts.push((vec![Sym::Nt(cf)], 1.0, RuleTag::Exit));
                    b.weighted_group(core, Some(e), alts);
                }
            }
        }
    }

    // Follow-up circuit on the increasing leg: enter a strictly more
    // easterly block of the same row directly, or start an east run.
    for p1 in 1..=rows {
        let a = nt_a(&mut b, p1);
        for &e in &circuits {
            let blk = g.circuit_block(e, o).unwrap();
            if blk.row != p1 {
                continue;
            }
            let prev = blk.col;
            let v = g.edge(e).into;
            let mut alts = Vec::new();
            for (_, entry) in entries_at(g, o, v, &|cand| cand.row == p1 && cand.col > prev) {
                alts.push((vec![Sym::T(entry), Sym::Nt(k3)], 1.0, RuleTag::Plain));
            }
            if prev < cols {
                if let Some(east) = edge_with_heading(g, v, Heading::East) {
                    let run = nt_ea(&mut b, p1, prev, cols - 1);
                    alts.push((vec![Sym::T(east), Sym::Nt(run)], 1.0, RuleTag::Plain));
                }
            }
            if !alts.is_empty() {
                b.weighted_group(a, Some(e), alts);
            }
        }
    }

    // East run: keep rolling east or enter a row-p1 block east of `lo`.
    for p1 in 1..=rows {
        for lo in 1..cols {
            for t in 0..cols {
                let run = nt_ea(&mut b, p1, lo, t);
                for e in 0..g.num_edges() {
                    if g.edge(e).heading != Heading::East {
                        continue;
                    }
                    let v = g.edge(e).into;
                    let (c, rho) = g.vertex_cr(v);
                    if rho + 1 != p1 && rho != p1 {
                        continue;
                    }
                    let mut alts = Vec::new();
                    for (_, entry) in entries_at(g, o, v, &|cand| cand.row == p1 && cand.col > lo)
                    {
                        alts.push((vec![Sym::T(entry), Sym::Nt(k3)], 1.0, RuleTag::Plain));
                    }
                    if t >= 1 && c + 1 <= cols {
                        if let Some(east) = edge_with_heading(g, v, Heading::East) {
                            let deeper = nt_ea(&mut b, p1, lo, t - 1);
                            alts.push((vec![Sym::T(east), Sym::Nt(deeper)], 1.0, RuleTag::Plain));
                        }
                    }
                    if !alts.is_empty() {
                        b.weighted_group(run, Some(e), alts);
                    }
                }
            }
        }
    }

    // Decreasing-leg circuit with both column bounds decoded from context:
    // strictly west of the previous circuit, strictly east of the budget.
    for p2 in 1..=rows {
        for r in 0..cols {
            let ch = nt_ch(&mut b, r, p2);
            for &e in &circuits {
                let blk = g.circuit_block(e, o).unwrap();
                if blk.row != p2 {
                    continue;
                }
                let prev = blk.col;
                let v = g.edge(e).into;
                let (c, _) = g.vertex_cr(v);
                let mut alts = Vec::new();
                for (_, entry) in entries_at(g, o, v, &|cand| {
                    cand.row == p2 && cand.col > r && cand.col < prev
                }) {
                    alts.push((vec![Sym::T(entry), Sym::Nt(k3)], 1.0, RuleTag::Plain));
                }
                if prev >= r + 2 && c >= r + 1 {
                    if let Some(west) = edge_with_heading(g, v, Heading::West) {
                        let run = nt_wc(&mut b, p2, r, prev, cols - 1);
                        alts.push((vec![Sym::T(west), Sym::Nt(run)], 1.0, RuleTag::Plain));
                    }
                }
                if !alts.is_empty() {
                    b.weighted_group(ch, Some(e), alts);
                }
            }
        }
    }

    // West run, bounded on both sides.
    for p2 in 1..=rows {
        for lo in 0..cols {
            for hi in lo + 2..=cols {
                for t in 0..cols {
                    let run = nt_wc(&mut b, p2, lo, hi, t);
                    for e in 0..g.num_edges() {
                        if g.edge(e).heading != Heading::West {
                            continue;
                        }
                        let v = g.edge(e).into;
                        let (c, rho) = g.vertex_cr(v);
                        if rho + 1 != p2 && rho != p2 {
                            continue;
                        }
                        let mut alts = Vec::new();
                        for (_, entry) in entries_at(g, o, v, &|cand| {
                            cand.row == p2 && cand.col > lo && cand.col < hi
                        }) {
                            alts.push((vec![Sym::T(entry), Sym::Nt(k3)], 1.0, RuleTag::Plain));
                        }
                        if t >= 1 && c >= lo + 1 {
                            if let Some(west) = edge_with_heading(g, v, Heading::West) {
                                let deeper = nt_wc(&mut b, p2, lo, hi, t - 1);
                                alts.push((
                                    vec![Sym::T(west), Sym::Nt(deeper)],
                                    1.0,
                                    RuleTag::Plain,
                                ));
                            }
                        }
                        if !alts.is_empty() {
                            b.weighted_group(run, Some(e), alts);
                        }
                    }
                }
            }
        }
    }

    // Transit kickoff and staircase. The transit must reach some block of
    // row p2 east of the budget column within the remaining step count.
    for p2 in 1..=rows {
        for r in 0..cols {
            let deliver = |v: VertexId| {
                !entries_at(g, o, v, &|cand| cand.row == p2 && cand.col > r).is_empty()
            };
            for qi in 0..4 {
                let mut memo = StairMemo::new(g, qi);
                for t in 0..depth {
                    let mq = nt_mq(&mut b, qi, p2, r, t);
                    for e in 0..g.num_edges() {
                        if !quad_contains(qi, g.edge(e).heading) {
                            continue;
                        }
                        let v = g.edge(e).into;
                        let mut alts = Vec::new();
                        for (_, entry) in
                            entries_at(g, o, v, &|cand| cand.row == p2 && cand.col > r)
                        {
                            alts.push((vec![Sym::T(entry), Sym::Nt(k3)], 1.0, RuleTag::Plain));
                        }
                        if t >= 1 {
                            for &e2 in g.out_edges(v) {
                                if quad_contains(qi, g.edge(e2).heading)
                                    && memo.viable(e2, t - 1, &deliver)
                                {
                                    let deeper = nt_mq(&mut b, qi, p2, r, t - 1);
                                    alts.push((
                                        vec![Sym::T(e2), Sym::Nt(deeper)],
                                        1.0,
                                        RuleTag::Plain,
                                    ));
                                }
                            }
                        }
                        if !alts.is_empty() {
                            b.weighted_group(mq, Some(e), alts);
                        }
                    }
                }
            }
            // Kickoff: choose the first transit edge and its quadrant.
            let cf = nt_cf(&mut b, r, p2);
            let mut memos: Vec<StairMemo> = (0..4).map(|qi| StairMemo::new(g, qi)).collect();
            for &e in &circuits {
                let v = g.edge(e).into;
                let mut alts = Vec::new();
                for (qi, memo) in memos.iter_mut().enumerate() {
                    for &e2 in g.out_edges(v) {
                        if quad_contains(qi, g.edge(e2).heading)
                            && memo.viable(e2, depth - 1, &deliver)
                        {
                            let mq = nt_mq(&mut b, qi, p2, r, depth - 1);
                            alts.push((vec![Sym::T(e2), Sym::Nt(mq)], 1.0, RuleTag::Plain));
                        }
                    }
                }
                if !alts.is_empty() {
                    b.weighted_group(cf, Some(e), alts);
                }
            }
        }
    }

    b.build(s)
}

// ---------------------------------------------------------------------------
// Patrol: a palindromic tour of block searches, consecutive searches on
// different blocks, the two center searches a seamless doubling of one
// block, optional staircase transits between searches.
// ---------------------------------------------------------------------------

fn build_patrol(g: &RoadGraph, o: Orientation) -> Result<Grammar> {
    let blocks: Vec<Block> = g.blocks().collect();
    if blocks.len() < 2 {
        return Err(Error::InvalidArgument(
            "patrol grammar needs at least two blocks".into(),
        ));
    }
    let depth = stair_depth(g);
    let Scaffold { mut b, k3 } = scaffold(g, o);
    let circuits = circuit_edges(g, o);

    let s = b.nt("S");
    let x = b.nt("X");
    let nt_bh = |b: &mut GrammarBuilder, blk: Block| b.nt(&format!("BH[{},{}]", blk.col, blk.row));
    let nt_c = |b: &mut GrammarBuilder, blk: Block| b.nt(&format!("C[{},{}]", blk.col, blk.row));
    let nt_t = |b: &mut GrammarBuilder, blk: Block, qi: usize, t: u32| {
        b.nt(&format!("T[{},{},{qi},{t}]", blk.col, blk.row))
    };

    // Search circuit of one block: entry forced by the arrival vertex (at
    // the start of the string, any corner).
    for &blk in &blocks {
        let c = nt_c(&mut b, blk);
        let mut alts = Vec::new();
        for e in g.block_circuit(blk, o)? {
            alts.push((vec![Sym::T(e), Sym::Nt(k3)], 1.0, RuleTag::Plain));
        }
        b.weighted_group(c, None, alts);
        for ctx in 0..g.num_edges() {
            let v = g.edge(ctx).into;
            if let Some(entry) = g.circuit_edge_from(blk, o, v) {
                b.rule(c, Some(ctx), vec![Sym::T(entry), Sym::Nt(k3)], 1.0, RuleTag::Plain);
            }
        }
    }

    // Transit chains toward each block, remembering where each chain is
    // usable so the search-leg rules below can be gated exactly.
    let mut usable: Vec<[Vec<bool>; 4]> = Vec::with_capacity(blocks.len());
    for &blk in &blocks {
        let landing = nt_c(&mut b, blk);
        let per_q: [Vec<bool>; 4] = std::array::from_fn(|qi| {
            emit_transit(&mut b, g, blk, qi, depth, landing, &|b, blk, qi, t| {
                nt_t(b, blk, qi, t)
            })
        });
        usable.push(per_q);
    }

    // A search leg: enter the block straight away when the tour already
    // stands at one of its corners, or transit to it first.
    for (bi, &blk) in blocks.iter().enumerate() {
        let bh = nt_bh(&mut b, blk);
        let c = nt_c(&mut b, blk);
        b.rule(bh, None, vec![Sym::Nt(c)], 1.0, RuleTag::Plain);
        for ctx in 0..g.num_edges() {
            let v = g.edge(ctx).into;
            let mut alts = Vec::new();
            if g.circuit_edge_from(blk, o, v).is_some() {
                alts.push((vec![Sym::Nt(c)], 1.0, RuleTag::Plain));
            }
            for qi in 0..4 {
                if usable[bi][qi][ctx as usize] {
                    let tn = nt_t(&mut b, blk, qi, depth - 1);
                    alts.push((vec![Sym::Nt(tn)], 1.0, RuleTag::Plain));
                }
            }
            if !alts.is_empty() {
                b.weighted_group(bh, Some(ctx), alts);
            }
        }
    }

    // Tour recursion: wrap another palindromic pair around the inside, or
    // close the center with a seamlessly doubled search. The next block
    // always differs from the one just searched and must be reachable from
    // the current corner, directly or by a transit chain; blocks without a
    // live search leg here would only soak up probability that the parser
    // then has to write off. The matching right-hand legs differ from their
    // neighbors by the palindrome symmetry.
    for &ctx in &circuits {
        let prev = g.circuit_block(ctx, o).unwrap();
        let v = g.edge(ctx).into;
        let others: Vec<Block> = blocks
            .iter()
            .enumerate()
            .filter(|&(bi, &bb)| {
                bb != prev
                    && (g.circuit_edge_from(bb, o, v).is_some()
                        || (0..4).any(|qi| usable[bi][qi][ctx as usize]))
            })
            .map(|(_, &bb)| bb)
            .collect();
        let mut alts = Vec::new();
        for &blk in &others {
            let bh = nt_bh(&mut b, blk);
            alts.push((
                vec![Sym::Nt(bh), Sym::Nt(x), Sym::Nt(bh)],
                0.5 / others.len() as f64,
                RuleTag::Recurse,
            ));
        }
        for &blk in &others {
            let bh = nt_bh(&mut b, blk);
            let c = nt_c(&mut b, blk);
            alts.push((
                vec![Sym::Nt(bh), Sym::Nt(c)],
                0.5 / others.len() as f64,
                RuleTag::Exit,
            ));
        }
        for (rhs, w, tag) in alts {
            b.rule(x, Some(ctx), rhs, w, tag);
        }
    }

    // Start: the outer search block, repeated at both ends of the tour.
    let mut alts = Vec::new();
    for &blk in &blocks {
        let bh = nt_bh(&mut b, blk);
        alts.push((vec![Sym::Nt(bh), Sym::Nt(x), Sym::Nt(bh)], 1.0, RuleTag::Plain));
    }
    b.weighted_group(s, None, alts);

    b.build(s)
}

// ---------------------------------------------------------------------------
// Asymmetric search: N seamless circuits of one block, a staircase transit,
// then N + delta seamless circuits of a different block (delta >= 1).
// Counterclockwise the heavier leg comes first, so the skeleton mirrors.
// ---------------------------------------------------------------------------

fn build_asym(g: &RoadGraph, o: Orientation) -> Result<Grammar> {
    let rows = g.block_rows;
    let cols = g.block_cols;
    if rows < 2 || cols < 2 {
        return Err(Error::InvalidArgument(
            "asymmetric-search grammar needs at least a 2x2 block grid".into(),
        ));
    }
    let blocks: Vec<Block> = g.blocks().collect();
    let depth = stair_depth(g);
    let Scaffold { mut b, k3 } = scaffold(g, o);
    let circuits = circuit_edges(g, o);
    let mirrored = o == Orientation::CounterClockwise;

    let s = b.nt("S");
    let bf = b.nt("BF");
    let bs = b.nt("BS");
    let nt_f = |b: &mut GrammarBuilder, blk: Block| b.nt(&format!("F[{},{}]", blk.col, blk.row));
    let nt_t = |b: &mut GrammarBuilder, blk: Block, qi: usize, t: u32| {
        b.nt(&format!("T[{},{},{qi},{t}]", blk.col, blk.row))
    };

    // Opening search: any circuit edge of any block.
    let mut alts = Vec::new();
    for &e in &circuits {
        alts.push((vec![Sym::T(e), Sym::Nt(k3)], 1.0, RuleTag::Plain));
    }
    b.weighted_group(bf, None, alts);

    // Seamless repeat of the block just searched.
    for &ctx in &circuits {
        let succ = g.circuit_succ(ctx, o).unwrap();
        b.rule(bs, Some(ctx), vec![Sym::T(succ), Sym::Nt(k3)], 1.0, RuleTag::Plain);
    }

    // Landing search after the transit: entry forced by the arrival vertex.
    for &blk in &blocks {
        let f = nt_f(&mut b, blk);
        for ctx in 0..g.num_edges() {
            let v = g.edge(ctx).into;
            if let Some(entry) = g.circuit_edge_from(blk, o, v) {
                b.rule(f, Some(ctx), vec![Sym::T(entry), Sym::Nt(k3)], 1.0, RuleTag::Plain);
            }
        }
    }

    // Transit chains toward each block, with usability per context.
    let mut usable: Vec<[Vec<bool>; 4]> = Vec::with_capacity(blocks.len());
    for &blk in &blocks {
        let landing = nt_f(&mut b, blk);
        let per_q: [Vec<bool>; 4] = std::array::from_fn(|qi| {
            emit_transit(&mut b, g, blk, qi, depth, landing, &|b, blk, qi, t| {
                nt_t(b, blk, qi, t)
            })
        });
        usable.push(per_q);
    }

    // Exit family shared by both skeletons: transit units to every block
    // other than the one being searched.
    let exit_units = |b: &mut GrammarBuilder, ctx: EdgeId| -> Vec<NtId> {
        let prev = g.circuit_block(ctx, o).unwrap();
        let mut units = Vec::new();
        for (bi, &blk) in blocks.iter().enumerate() {
            if blk == prev {
                continue;
            }
            for qi in 0..4 {
                if usable[bi][qi][ctx as usize] {
                    units.push(nt_t(b, blk, qi, depth - 1));
                }
            }
        }
        units
    };

    if !mirrored {
        let x = b.nt("X");
        let d = b.nt("D");
        b.rule(s, None, vec![Sym::Nt(bf), Sym::Nt(x), Sym::Nt(d)], 1.0, RuleTag::Plain);
        for &ctx in &circuits {
            let units = exit_units(&mut b, ctx);
            b.rule(
                x,
                Some(ctx),
                vec![Sym::Nt(bs), Sym::Nt(x), Sym::Nt(bs)],
                0.5,
                RuleTag::Recurse,
            );
            for &u in &units {
                b.rule(x, Some(ctx), vec![Sym::Nt(u)], 0.5 / units.len() as f64, RuleTag::Exit);
            }
            b.rule(d, Some(ctx), vec![Sym::Nt(bs), Sym::Nt(d)], 0.5, RuleTag::Recurse);
            b.rule(d, Some(ctx), vec![Sym::Nt(bs)], 0.5, RuleTag::Exit);
        }
    } else {
        let y = b.nt("Y");
        let z = b.nt("Z");
        b.rule(s, None, vec![Sym::Nt(bf), Sym::Nt(y)], 1.0, RuleTag::Plain);
        for &ctx in &circuits {
            b.rule(y, Some(ctx), vec![Sym::Nt(bs), Sym::Nt(y)], 0.5, RuleTag::Recurse);
            b.rule(y, Some(ctx), vec![Sym::Nt(bs), Sym::Nt(z)], 0.5, RuleTag::Exit);
            let units = exit_units(&mut b, ctx);
            b.rule(
                z,
                Some(ctx),
                vec![Sym::Nt(bs), Sym::Nt(z), Sym::Nt(bs)],
                0.5,
                RuleTag::Recurse,
            );
            for &u in &units {
                b.rule(z, Some(ctx), vec![Sym::Nt(u)], 0.5 / units.len() as f64, RuleTag::Exit);
            }
        }
    }

    b.build(s)
}
