//! Grid road network: axis-aligned blocks bounded by directed road segments.
//!
//! A graph with `block_rows` x `block_cols` city blocks has a lattice of
//! `(block_rows+1) * (block_cols+1)` intersections. Vertices are numbered
//! 1-based, row-major from the bottom-left corner. Every undirected road
//! segment between adjacent intersections is represented as two directed
//! edges, named canonically `e_{i,j}` where `i` and `j` are the from/into
//! vertex numbers. All external formats use these names.

use crate::error::{Error, Result};
use std::collections::HashMap;
use std::fmt::Write as _;

pub type VertexId = u32;
pub type EdgeId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Heading {
    East,
    North,
    West,
    South,
}

impl Heading {
    /// Heading angle in radians, counterclockwise from east.
    pub fn angle(self) -> f64 {
        match self {
            Heading::East => 0.0,
            Heading::North => std::f64::consts::FRAC_PI_2,
            Heading::West => std::f64::consts::PI,
            Heading::South => 1.5 * std::f64::consts::PI,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Heading::East => "east",
            Heading::North => "north",
            Heading::West => "west",
            Heading::South => "south",
        }
    }

    pub fn from_name(s: &str) -> Result<Heading> {
        match s {
            "east" => Ok(Heading::East),
            "north" => Ok(Heading::North),
            "west" => Ok(Heading::West),
            "south" => Ok(Heading::South),
            _ => Err(Error::Format(format!("unknown heading {s:?}"))),
        }
    }

    pub fn reverse(self) -> Heading {
        match self {
            Heading::East => Heading::West,
            Heading::North => Heading::South,
            Heading::West => Heading::East,
            Heading::South => Heading::North,
        }
    }

    /// Exact unit vector for this heading. Equals (cos a, sin a) for the
    /// angle returned by `angle`, but free of trig rounding.
    pub fn unit(self) -> (f64, f64) {
        match self {
            Heading::East => (1.0, 0.0),
            Heading::North => (0.0, 1.0),
            Heading::West => (-1.0, 0.0),
            Heading::South => (0.0, -1.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Edge {
    pub from: VertexId,
    pub into: VertexId,
    pub heading: Heading,
}

/// A city block, addressed 1-based by (column, row).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Block {
    pub col: u32,
    pub row: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Orientation {
    Clockwise,
    CounterClockwise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Corner {
    BottomLeft,
    BottomRight,
    TopLeft,
    TopRight,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Location {
    Intersection(VertexId),
    Road(EdgeId),
}

#[derive(Debug, Clone)]
pub struct RoadGraph {
    pub block_rows: u32,
    pub block_cols: u32,
    pub road_len: f64,
    pub road_width: f64,
    edges: Vec<Edge>,
    out_edges: Vec<Vec<EdgeId>>,
    edge_index: HashMap<(VertexId, VertexId), EdgeId>,
}

impl RoadGraph {
    pub fn new(block_rows: u32, block_cols: u32, road_len: f64, road_width: f64) -> Result<Self> {
        if block_rows == 0 || block_cols == 0 {
            return Err(Error::InvalidArgument(format!(
                "grid must have at least one block in each direction, got {block_rows}x{block_cols}"
            )));
        }
        if !(road_len > 0.0) || !(road_width > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "road length and width must be positive, got {road_len} and {road_width}"
            )));
        }
        if road_width >= road_len {
            return Err(Error::DegenerateGeometry(format!(
                "road width {road_width} must be smaller than road length {road_len}"
            )));
        }

        let cols = block_cols + 1;
        let rows = block_rows + 1;
        let nv = (cols * rows) as usize;
        let mut edges = Vec::new();
        let vat = |c: u32, r: u32| -> VertexId { r * cols + c };

        // Horizontal pass first, then vertical; each undirected segment
        // contributes the forward direction then its reverse, so ids are
        // stable and adjacency lists come out sorted.
        for r in 0..rows {
            for c in 0..block_cols {
                edges.push(Edge { from: vat(c, r), into: vat(c + 1, r), heading: Heading::East });
                edges.push(Edge { from: vat(c + 1, r), into: vat(c, r), heading: Heading::West });
            }
        }
        for r in 0..block_rows {
            for c in 0..cols {
                edges.push(Edge { from: vat(c, r), into: vat(c, r + 1), heading: Heading::North });
                edges.push(Edge { from: vat(c, r + 1), into: vat(c, r), heading: Heading::South });
            }
        }

        let mut out_edges = vec![Vec::new(); nv];
        let mut edge_index = HashMap::new();
        for (id, e) in edges.iter().enumerate() {
            out_edges[e.from as usize].push(id as EdgeId);
            edge_index.insert((e.from, e.into), id as EdgeId);
        }
        for v in &mut out_edges {
            v.sort_unstable();
        }

        Ok(RoadGraph {
            block_rows,
            block_cols,
            road_len,
            road_width,
            edges,
            out_edges,
            edge_index,
        })
    }

    pub fn num_vertices(&self) -> u32 {
        (self.block_rows + 1) * (self.block_cols + 1)
    }

    pub fn num_edges(&self) -> u32 {
        self.edges.len() as u32
    }

    /// External 1-based vertex number.
    pub fn vertex_number(&self, v: VertexId) -> u32 {
        v + 1
    }

    pub fn vertex_from_number(&self, n: u32) -> Result<VertexId> {
        if n >= 1 && n <= self.num_vertices() {
            Ok(n - 1)
        } else {
            Err(Error::NotFound(format!("vertex number {n} out of range")))
        }
    }

    /// Lattice coordinates (column, row) of a vertex, 0-based.
    pub fn vertex_cr(&self, v: VertexId) -> (u32, u32) {
        let cols = self.block_cols + 1;
        (v % cols, v / cols)
    }

    pub fn vertex_at(&self, c: u32, r: u32) -> VertexId {
        debug_assert!(c <= self.block_cols && r <= self.block_rows);
        r * (self.block_cols + 1) + c
    }

    pub fn vertex_pos(&self, v: VertexId) -> (f64, f64) {
        let (c, r) = self.vertex_cr(v);
        (c as f64 * self.road_len, r as f64 * self.road_len)
    }

    pub fn edge(&self, e: EdgeId) -> &Edge {
        &self.edges[e as usize]
    }

    pub fn edge_name(&self, e: EdgeId) -> String {
        let ed = self.edge(e);
        format!("e_{{{},{}}}", self.vertex_number(ed.from), self.vertex_number(ed.into))
    }

    pub fn edge_by_name(&self, name: &str) -> Result<EdgeId> {
        let bad = || Error::Format(format!("malformed edge name {name:?}"));
        let inner = name
            .strip_prefix("e_{")
            .and_then(|s| s.strip_suffix('}'))
            .ok_or_else(bad)?;
        let (i, j) = inner.split_once(',').ok_or_else(bad)?;
        let i: u32 = i.trim().parse().map_err(|_| bad())?;
        let j: u32 = j.trim().parse().map_err(|_| bad())?;
        let from = self.vertex_from_number(i)?;
        let into = self.vertex_from_number(j)?;
        self.find_edge(from, into)
            .ok_or_else(|| Error::NotFound(format!("no edge {name}")))
    }

    pub fn find_edge(&self, from: VertexId, into: VertexId) -> Option<EdgeId> {
        self.edge_index.get(&(from, into)).copied()
    }

    pub fn reverse_edge(&self, e: EdgeId) -> EdgeId {
        let ed = self.edge(e);
        self.edge_index[&(ed.into, ed.from)]
    }

    /// Outgoing edges of a vertex, ascending by id.
    pub fn out_edges(&self, v: VertexId) -> &[EdgeId] {
        &self.out_edges[v as usize]
    }

    /// Roads reachable after `e`: every edge leaving its into-vertex,
    /// including the U-turn back along `e`.
    pub fn feasible_next(&self, e: EdgeId) -> &[EdgeId] {
        self.out_edges(self.edge(e).into)
    }

    /// A road sequence is feasible when every consecutive pair either repeats
    /// the same road or chains head-to-tail through an intersection.
    pub fn is_feasible(&self, seq: &[EdgeId]) -> bool {
        seq.windows(2).all(|w| {
            w[0] == w[1] || self.edge(w[0]).into == self.edge(w[1]).from
        })
    }

    /// Collapse consecutive repeats of the same road.
    pub fn dedupe(seq: &[EdgeId]) -> Vec<EdgeId> {
        let mut out: Vec<EdgeId> = Vec::with_capacity(seq.len());
        for &e in seq {
            if out.last() != Some(&e) {
                out.push(e);
            }
        }
        out
    }

    pub fn blocks(&self) -> impl Iterator<Item = Block> + '_ {
        let (rows, cols) = (self.block_rows, self.block_cols);
        (1..=rows).flat_map(move |row| (1..=cols).map(move |col| Block { col, row }))
    }

    pub fn block_valid(&self, b: Block) -> bool {
        b.col >= 1 && b.col <= self.block_cols && b.row >= 1 && b.row <= self.block_rows
    }

    pub fn corner_vertex(&self, b: Block, corner: Corner) -> VertexId {
        let (dc, dr) = match corner {
            Corner::BottomLeft => (0, 0),
            Corner::BottomRight => (1, 0),
            Corner::TopLeft => (0, 1),
            Corner::TopRight => (1, 1),
        };
        self.vertex_at(b.col - 1 + dc, b.row - 1 + dr)
    }

    /// The four roads around a block in traversal order. Clockwise starts at
    /// the bottom-left corner heading north; counterclockwise starts there
    /// heading east. Index k of the result begins at `circuit_corner(o, k)`.
    pub fn block_circuit(&self, b: Block, o: Orientation) -> Result<[EdgeId; 4]> {
        if !self.block_valid(b) {
            return Err(Error::InvalidArgument(format!(
                "block ({},{}) outside {}x{} grid",
                b.col, b.row, self.block_rows, self.block_cols
            )));
        }
        let bl = self.corner_vertex(b, Corner::BottomLeft);
        let br = self.corner_vertex(b, Corner::BottomRight);
        let tl = self.corner_vertex(b, Corner::TopLeft);
        let tr = self.corner_vertex(b, Corner::TopRight);
        let chain = match o {
            Orientation::Clockwise => [bl, tl, tr, br],
            Orientation::CounterClockwise => [bl, br, tr, tl],
        };
        let mut out = [0; 4];
        for k in 0..4 {
            out[k] = self.find_edge(chain[k], chain[(k + 1) % 4]).unwrap();
        }
        Ok(out)
    }

    /// Corner at which circuit edge k starts.
    pub fn circuit_corner(o: Orientation, k: usize) -> Corner {
        match o {
            Orientation::Clockwise => {
                [Corner::BottomLeft, Corner::TopLeft, Corner::TopRight, Corner::BottomRight][k]
            }
            Orientation::CounterClockwise => {
                [Corner::BottomLeft, Corner::BottomRight, Corner::TopRight, Corner::TopLeft][k]
            }
        }
    }

    /// The unique block whose circuit of the given orientation contains `e`,
    /// if any. For clockwise circuits this is the block to the right of the
    /// direction of travel; for counterclockwise, to the left.
    pub fn circuit_block(&self, e: EdgeId, o: Orientation) -> Option<Block> {
        let ed = self.edge(e);
        let (c, r) = self.vertex_cr(ed.from);
        let b = match (o, ed.heading) {
            (Orientation::Clockwise, Heading::North) => Block { col: c + 1, row: r + 1 },
            (Orientation::Clockwise, Heading::East) => Block { col: c + 1, row: r },
            (Orientation::Clockwise, Heading::South) => Block { col: c, row: r },
            (Orientation::Clockwise, Heading::West) => Block { col: c, row: r + 1 },
            (Orientation::CounterClockwise, Heading::East) => Block { col: c + 1, row: r + 1 },
            (Orientation::CounterClockwise, Heading::North) => Block { col: c, row: r + 1 },
            (Orientation::CounterClockwise, Heading::West) => Block { col: c, row: r },
            (Orientation::CounterClockwise, Heading::South) => Block { col: c + 1, row: r },
        };
        if self.block_valid(b) {
            Some(b)
        } else {
            None
        }
    }

    /// Next road when continuing around the circuit that contains `e`.
    pub fn circuit_succ(&self, e: EdgeId, o: Orientation) -> Option<EdgeId> {
        let b = self.circuit_block(e, o)?;
        let circ = self.block_circuit(b, o).ok()?;
        let k = circ.iter().position(|&x| x == e)?;
        Some(circ[(k + 1) % 4])
    }

    /// The circuit edge of block `b` that starts at vertex `v`, if `v` is one
    /// of its corners.
    pub fn circuit_edge_from(&self, b: Block, o: Orientation, v: VertexId) -> Option<EdgeId> {
        let circ = self.block_circuit(b, o).ok()?;
        circ.into_iter().find(|&e| self.edge(e).from == v)
    }

    /// Map a planar position to the road network. Positions within half a
    /// road width of an intersection center (in both axes) resolve to that
    /// intersection; otherwise the nearest road centerline wins. Between the
    /// two directed roads sharing a centerline, the previous road is kept if
    /// it lies on the same segment; otherwise the smallest edge id is chosen.
    pub fn locate(&self, pos: (f64, f64), prev: Option<EdgeId>) -> Location {
        let l = self.road_len;
        let w2 = self.road_width / 2.0;
        let (x, y) = pos;
        let cn = (x / l).round().clamp(0.0, self.block_cols as f64) as u32;
        let rn = (y / l).round().clamp(0.0, self.block_rows as f64) as u32;
        let (vx, vy) = self.vertex_pos(self.vertex_at(cn, rn));
        if (x - vx).abs() <= w2 && (y - vy).abs() <= w2 {
            return Location::Intersection(self.vertex_at(cn, rn));
        }
        Location::Road(self.nearest_road(pos, prev))
    }

    /// Like `locate` but always resolves to a road, ignoring intersections.
    pub fn locate_road(&self, pos: (f64, f64), prev: Option<EdgeId>) -> EdgeId {
        self.nearest_road(pos, prev)
    }

    fn nearest_road(&self, (x, y): (f64, f64), prev: Option<EdgeId>) -> EdgeId {
        let l = self.road_len;
        // Nearest horizontal centerline and the segment on it under x.
        let hr = (y / l).round().clamp(0.0, self.block_rows as f64) as u32;
        let dy = (y - hr as f64 * l).abs();
        let hc = (x / l).floor().clamp(0.0, (self.block_cols - 1) as f64) as u32;
        // Nearest vertical centerline and the segment on it under y.
        let vc = (x / l).round().clamp(0.0, self.block_cols as f64) as u32;
        let dx = (x - vc as f64 * l).abs();
        let vr = (y / l).floor().clamp(0.0, (self.block_rows - 1) as f64) as u32;

        let h_pair = {
            let a = self.vertex_at(hc, hr);
            let b = self.vertex_at(hc + 1, hr);
            [self.find_edge(a, b).unwrap(), self.find_edge(b, a).unwrap()]
        };
        let v_pair = {
            let a = self.vertex_at(vc, vr);
            let b = self.vertex_at(vc, vr + 1);
            [self.find_edge(a, b).unwrap(), self.find_edge(b, a).unwrap()]
        };

        let mut cand: Vec<EdgeId> = Vec::with_capacity(4);
        if dy < dx {
            cand.extend(h_pair);
        } else if dx < dy {
            cand.extend(v_pair);
        } else {
            cand.extend(h_pair);
            cand.extend(v_pair);
        }
        if let Some(p) = prev {
            if cand.contains(&p) {
                return p;
            }
        }
        cand.into_iter().min().unwrap()
    }

    /// Centerline of a road from its from-vertex to its into-vertex.
    pub fn edge_centerline(&self, e: EdgeId) -> ((f64, f64), (f64, f64)) {
        let ed = self.edge(e);
        (self.vertex_pos(ed.from), self.vertex_pos(ed.into))
    }

    /// Plain-text dump: a header line with the grid shape, then one `v` line
    /// per intersection and one `e` line per road using canonical names.
    pub fn write_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "g {} {} {} {}",
            self.block_rows, self.block_cols, self.road_len, self.road_width
        );
        for v in 0..self.num_vertices() {
            let (x, y) = self.vertex_pos(v);
            let _ = writeln!(s, "v {} {} {}", self.vertex_number(v), x, y);
        }
        for e in 0..self.num_edges() {
            let ed = self.edge(e);
            let _ = writeln!(
                s,
                "e {} {} {} {}",
                self.edge_name(e),
                self.vertex_number(ed.from),
                self.vertex_number(ed.into),
                ed.heading.name()
            );
        }
        s
    }

    pub fn read_text(text: &str) -> Result<RoadGraph> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::Format("empty graph text".into()))?;
        let parts: Vec<&str> = header.split_whitespace().collect();
        if parts.len() != 5 || parts[0] != "g" {
            return Err(Error::Format(format!("bad graph header {header:?}")));
        }
        let parse_u = |s: &str| -> Result<u32> {
            s.parse().map_err(|_| Error::Format(format!("bad number {s:?}")))
        };
        let parse_f = |s: &str| -> Result<f64> {
            s.parse().map_err(|_| Error::Format(format!("bad number {s:?}")))
        };
        let g = RoadGraph::new(parse_u(parts[1])?, parse_u(parts[2])?, parse_f(parts[3])?, parse_f(parts[4])?)?;
        let mut seen_v = 0u32;
        let mut seen_e = 0u32;
        for line in lines {
            let parts: Vec<&str> = line.split_whitespace().collect();
            match parts.first() {
                Some(&"v") if parts.len() == 4 => {
                    let v = g.vertex_from_number(parse_u(parts[1])?)?;
                    let (x, y) = (parse_f(parts[2])?, parse_f(parts[3])?);
                    let p = g.vertex_pos(v);
                    if (p.0 - x).abs() > 1e-9 || (p.1 - y).abs() > 1e-9 {
                        return Err(Error::Format(format!("vertex {} position mismatch", parts[1])));
                    }
                    seen_v += 1;
                }
                Some(&"e") if parts.len() == 5 => {
                    let e = g.edge_by_name(parts[1])?;
                    let ed = g.edge(e);
                    let from = g.vertex_from_number(parse_u(parts[2])?)?;
                    let into = g.vertex_from_number(parse_u(parts[3])?)?;
                    let h = Heading::from_name(parts[4])?;
                    if ed.from != from || ed.into != into || ed.heading != h {
                        return Err(Error::Format(format!("edge {} mismatch", parts[1])));
                    }
                    seen_e += 1;
                }
                _ => return Err(Error::Format(format!("bad graph line {line:?}"))),
            }
        }
        if seen_v != g.num_vertices() || seen_e != g.num_edges() {
            return Err(Error::Format(format!(
                "graph text lists {seen_v} vertices and {seen_e} edges, expected {} and {}",
                g.num_vertices(),
                g.num_edges()
            )));
        }
        Ok(g)
    }
}
