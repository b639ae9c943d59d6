//! Ground-truth membership test for the three intent classes.
//!
//! This is a direct backtracking matcher over the shape definitions, written
//! without reference to the grammar builders so the two can check each other.
//! A string passes if some decomposition into circuits, straight runs, and
//! monotone transits satisfies the class constraints, in either traversal
//! orientation.

use super::classes::IntentClass;
use crate::roadgraph::{Block, EdgeId, Heading, Orientation, RoadGraph};

const QUADS: [[Heading; 2]; 4] = [
    [Heading::North, Heading::East],
    [Heading::North, Heading::West],
    [Heading::South, Heading::East],
    [Heading::South, Heading::West],
];

fn quad_ok(qi: usize, h: Heading) -> bool {
    QUADS[qi][0] == h || QUADS[qi][1] == h
}

/// Does the deduplicated, feasible string belong to the class language?
pub fn class_predicate(class: IntentClass, s: &[EdgeId], g: &RoadGraph) -> bool {
    if s.is_empty() || s.iter().any(|&e| e >= g.num_edges()) {
        return false;
    }
    let d = RoadGraph::dedupe(s);
    if !g.is_feasible(&d) {
        return false;
    }
    [Orientation::Clockwise, Orientation::CounterClockwise]
        .into_iter()
        .any(|o| match class {
            IntentClass::Equal => equal_shape(g, &d, o),
            IntentClass::Patrol => patrol_shape(g, &d, o),
            IntentClass::Asym => asym_shape(g, &d, o),
        })
}

/// Four edges starting at position i that walk one full block circuit.
fn circuit_at(g: &RoadGraph, s: &[EdgeId], i: usize, o: Orientation) -> Option<Block> {
    if i + 4 > s.len() {
        return None;
    }
    let b = g.circuit_block(s[i], o)?;
    for k in i..i + 3 {
        if g.circuit_succ(s[k], o) != Some(s[k + 1]) {
            return None;
        }
    }
    Some(b)
}

// Equal search: circuits along one row at strictly increasing columns with
// all-east gaps, one nonempty monotone transit, then the same number of
// circuits along a different row at strictly decreasing columns with
// all-west gaps.

fn equal_shape(g: &RoadGraph, s: &[EdgeId], o: Orientation) -> bool {
    match circuit_at(g, s, 0, o) {
        Some(b) => equal_inc(g, s, o, 4, b.row, b.col, 1),
        None => false,
    }
}

fn equal_inc(
    g: &RoadGraph,
    s: &[EdgeId],
    o: Orientation,
    pos: usize,
    p1: u32,
    prev_col: u32,
    n1: u32,
) -> bool {
    if equal_transit(g, s, o, pos, p1, n1) {
        return true;
    }
    let mut j = pos;
    loop {
        if let Some(b) = circuit_at(g, s, j, o) {
            if b.row == p1 && b.col > prev_col && equal_inc(g, s, o, j + 4, p1, b.col, n1 + 1) {
                return true;
            }
        }
        if j < s.len() && g.edge(s[j]).heading == Heading::East {
            j += 1;
        } else {
            return false;
        }
    }
}

fn equal_transit(
    g: &RoadGraph,
    s: &[EdgeId],
    o: Orientation,
    pos: usize,
    p1: u32,
    n1: u32,
) -> bool {
    for qi in 0..4 {
        let mut j = pos;
        while j < s.len() && quad_ok(qi, g.edge(s[j]).heading) {
            j += 1;
            if let Some(b) = circuit_at(g, s, j, o) {
                if b.row != p1 && equal_dec(g, s, o, j + 4, b.row, b.col, 1, n1) {
                    return true;
                }
            }
        }
    }
    false
}

fn equal_dec(
    g: &RoadGraph,
    s: &[EdgeId],
    o: Orientation,
    pos: usize,
    p2: u32,
    prev_col: u32,
    n2: u32,
    target: u32,
) -> bool {
    if n2 == target {
        return pos == s.len();
    }
    let mut j = pos;
    loop {
        if let Some(b) = circuit_at(g, s, j, o) {
            if b.row == p2
                && b.col < prev_col
                && equal_dec(g, s, o, j + 4, p2, b.col, n2 + 1, target)
            {
                return true;
            }
        }
        if j < s.len() && g.edge(s[j]).heading == Heading::West {
            j += 1;
        } else {
            return false;
        }
    }
}

// Patrol: an even-length palindromic tour of block searches, consecutive
// blocks distinct except for the seamlessly doubled center pair, optional
// monotone transits between searches.

fn patrol_shape(g: &RoadGraph, s: &[EdgeId], o: Orientation) -> bool {
    match circuit_at(g, s, 0, o) {
        Some(b) => {
            let mut tour = vec![(b, true)];
            patrol_rec(g, s, o, 4, &mut tour)
        }
        None => false,
    }
}

/// Index i such that tour[i-1] and tour[i] are the doubled center, if one
/// has appeared yet.
fn center_index(tour: &[(Block, bool)]) -> Option<usize> {
    (1..tour.len()).find(|&i| tour[i].0 == tour[i - 1].0)
}

fn patrol_rec(
    g: &RoadGraph,
    s: &[EdgeId],
    o: Orientation,
    pos: usize,
    tour: &mut Vec<(Block, bool)>,
) -> bool {
    if pos == s.len() {
        return patrol_valid(tour);
    }
    // All distinct ways the next search can start here: seamlessly, or after
    // a monotone transit of any length. Deduplicated, since overlapping
    // quadrants reach the same landing twice.
    let mut opts: Vec<(usize, Block, bool)> = Vec::new();
    if let Some(b) = circuit_at(g, s, pos, o) {
        opts.push((pos + 4, b, true));
    }
    for qi in 0..4 {
        let mut j = pos;
        while j < s.len() && quad_ok(qi, g.edge(s[j]).heading) {
            j += 1;
            if let Some(b) = circuit_at(g, s, j, o) {
                let opt = (j + 4, b, false);
                if !opts.contains(&opt) {
                    opts.push(opt);
                }
            }
        }
    }
    for (next, b, seamless) in opts {
        // Prune against the tour constraints as the parse grows: at most one
        // adjacent repeat (the seamless center), and once the center is
        // placed the rest of the tour is the mirror of the front.
        let m = tour.len();
        if b == tour[m - 1].0 {
            if !seamless || center_index(tour).is_some() {
                continue;
            }
        } else if let Some(ci) = center_index(tour) {
            let total = 2 * ci;
            if m >= total || tour[total - 1 - m].0 != b {
                continue;
            }
        }
        tour.push((b, seamless));
        if patrol_rec(g, s, o, next, tour) {
            return true;
        }
        tour.pop();
    }
    false
}

fn patrol_valid(tour: &[(Block, bool)]) -> bool {
    let m = tour.len();
    if m < 4 || m % 2 != 0 {
        return false;
    }
    for i in 0..m {
        if tour[i].0 != tour[m - 1 - i].0 {
            return false;
        }
    }
    for i in 1..m {
        if i == m / 2 {
            if tour[i].0 != tour[i - 1].0 || !tour[i].1 {
                return false;
            }
        } else if tour[i].0 == tour[i - 1].0 {
            return false;
        }
    }
    true
}

// Asymmetric search: seamless circuits of one block, a nonempty monotone
// transit, then seamless circuits of a different block, with the later leg
// strictly longer when traversed clockwise (and the earlier one when
// counterclockwise, which is how reversed strings read).

fn asym_shape(g: &RoadGraph, s: &[EdgeId], o: Orientation) -> bool {
    let b1 = match circuit_at(g, s, 0, o) {
        Some(b) => b,
        None => return false,
    };
    let mut pos = 0;
    let mut n1 = 0;
    loop {
        match circuit_at(g, s, pos, o) {
            Some(b) if b == b1 => {
                n1 += 1;
                pos += 4;
            }
            _ => return false,
        }
        if asym_tail(g, s, o, pos, b1, n1) {
            return true;
        }
        if pos >= s.len() {
            return false;
        }
    }
}

fn asym_tail(
    g: &RoadGraph,
    s: &[EdgeId],
    o: Orientation,
    pos: usize,
    b1: Block,
    n1: u32,
) -> bool {
    for qi in 0..4 {
        let mut j = pos;
        while j < s.len() && quad_ok(qi, g.edge(s[j]).heading) {
            j += 1;
            let b2 = match circuit_at(g, s, j, o) {
                Some(b) if b != b1 => b,
                _ => continue,
            };
            let mut k = j + 4;
            let mut n2 = 1;
            while let Some(bb) = circuit_at(g, s, k, o) {
                if bb != b2 {
                    break;
                }
                n2 += 1;
                k += 4;
            }
            if k == s.len() {
                let ok = match o {
                    Orientation::Clockwise => n2 > n1,
                    Orientation::CounterClockwise => n1 > n2,
                };
                if ok {
                    return true;
                }
            }
        }
    }
    false
}
