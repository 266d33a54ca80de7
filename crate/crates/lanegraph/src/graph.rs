//! Lane-graph data model and shared graph utilities.
//!
//! A [`LaneGraph`] is a set of nodes with 2-D pixel positions plus a set of
//! undirected edges (a `directed` flag is stored for forward compatibility
//! but every algorithm here treats edges as undirected). Node ids are dense
//! indices `0..n`, which keeps downstream matching and tie-breaking
//! deterministic.
//!
//! The module provides densification (subdividing edges to a maximum
//! spacing before metric matching), terminal-node listing, cutoff-bounded
//! Dijkstra shortest paths, connected components, and JSON file I/O.

use std::collections::BinaryHeap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

/// A node position in pixel coordinates: `x` is the column, `y` the row.
/// The center of pixel `(c, r)` sits at real coordinates `(c, r)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub fn new(x: f64, y: f64) -> Self {
        Point2 { x, y }
    }

    /// Euclidean distance to another point.
    pub fn dist(&self, other: Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Euclidean length of one edge, the atom of all path-length sums.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeLength {
    pub length_px: f64,
}

impl EdgeLength {
    /// Length of the segment between two endpoint positions.
    pub fn between(a: Point2, b: Point2) -> Self {
        EdgeLength {
            length_px: a.dist(b),
        }
    }
}

/// Errors from graph construction, queries, and file I/O.
#[derive(Debug)]
pub enum GraphError {
    /// An operation parameter was out of its domain.
    InvalidParameter(String),
    /// An edge referenced a node id that does not exist, was a self-loop,
    /// or was a duplicate.
    InvalidEdge(String),
    /// A node id lookup failed.
    MissingNode(u32),
    /// A position or metadata value was not finite.
    NotFinite(String),
    /// File could not be read or written.
    Io(std::io::Error),
    /// File contents could not be parsed; includes line/column context.
    Parse(String),
}

impl fmt::Display for GraphError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GraphError::InvalidParameter(msg) => write!(f, "invalid parameter: {msg}"),
            GraphError::InvalidEdge(msg) => write!(f, "invalid edge: {msg}"),
            GraphError::MissingNode(id) => write!(f, "node {id} does not exist"),
            GraphError::NotFinite(msg) => write!(f, "non-finite value: {msg}"),
            GraphError::Io(e) => write!(f, "i/o error: {e}"),
            GraphError::Parse(msg) => write!(f, "parse error: {msg}"),
        }
    }
}

impl std::error::Error for GraphError {}

impl From<std::io::Error> for GraphError {
    fn from(e: std::io::Error) -> Self {
        GraphError::Io(e)
    }
}

/// Graph of lane centerlines: dense node ids, undirected edge set, optional
/// name and ground-sample-distance metadata.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LaneGraph {
    nodes: Vec<Point2>,
    /// Normalized edges: `a < b`, sorted ascending, no duplicates.
    edges: Vec<(u32, u32)>,
    pub name: Option<String>,
    pub gsd_cm: Option<f64>,
    pub directed: bool,
}

impl LaneGraph {
    pub fn new() -> Self {
        LaneGraph::default()
    }

    /// Appends a node and returns its id.
    pub fn add_node(&mut self, p: Point2) -> u32 {
        self.nodes.push(p);
        (self.nodes.len() - 1) as u32
    }

    /// Inserts the undirected edge `{a, b}`. Rejects self-loops, unknown
    /// endpoints, and duplicates.
    pub fn add_edge(&mut self, a: u32, b: u32) -> Result<(), GraphError> {
        if a == b {
            return Err(GraphError::InvalidEdge(format!("self-loop at node {a}")));
        }
        let n = self.nodes.len() as u32;
        if a >= n || b >= n {
            return Err(GraphError::InvalidEdge(format!(
                "edge ({a},{b}) references a missing node (graph has {n} nodes)"
            )));
        }
        let key = (a.min(b), a.max(b));
        match self.edges.binary_search(&key) {
            Ok(_) => Err(GraphError::InvalidEdge(format!(
                "duplicate edge ({},{})",
                key.0, key.1
            ))),
            Err(pos) => {
                self.edges.insert(pos, key);
                Ok(())
            }
        }
    }

    /// Bulk constructor for algorithm outputs: normalizes, sorts, and
    /// dedups the edge list in one pass. Callers guarantee endpoints are
    /// in range and not self-loops.
    pub(crate) fn from_parts(nodes: Vec<Point2>, edges: Vec<(u32, u32)>) -> Self {
        let n = nodes.len() as u32;
        let mut edges: Vec<(u32, u32)> = edges
            .into_iter()
            .map(|(a, b)| (a.min(b), a.max(b)))
            .collect();
        edges.sort_unstable();
        edges.dedup();
        debug_assert!(edges.iter().all(|&(a, b)| a < b && b < n));
        LaneGraph {
            nodes,
            edges,
            name: None,
            gsd_cm: None,
            directed: false,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: u32) -> Point2 {
        self.nodes[id as usize]
    }

    pub fn nodes(&self) -> &[Point2] {
        &self.nodes
    }

    /// Edges normalized as `(low id, high id)`, in ascending order.
    pub fn edges(&self) -> &[(u32, u32)] {
        &self.edges
    }

    /// Length of the edge `{a, b}` in pixels.
    pub fn edge_length(&self, a: u32, b: u32) -> f64 {
        EdgeLength::between(self.node(a), self.node(b)).length_px
    }

    /// Sum of all edge lengths.
    pub fn total_length(&self) -> f64 {
        self.edges
            .iter()
            .map(|&(a, b)| self.edge_length(a, b))
            .sum()
    }

    /// Neighbor lists indexed by node id.
    pub fn adjacency(&self) -> Vec<Vec<u32>> {
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for &(a, b) in &self.edges {
            adj[a as usize].push(b);
            adj[b as usize].push(a);
        }
        adj
    }

    /// Degree-1 node ids (terminal nodes), ascending.
    pub fn terminal_nodes(&self) -> Vec<u32> {
        let adj = self.adjacency();
        (0..self.nodes.len() as u32)
            .filter(|&i| adj[i as usize].len() == 1)
            .collect()
    }
}

/// Subdivides every edge of `g` into `ceil(len / max_spacing_px)` equal
/// parts so that no returned edge is longer than the spacing. Original
/// node ids are preserved; inserted nodes get fresh ids in deterministic
/// edge order.
pub fn densify(g: &LaneGraph, max_spacing_px: f64) -> Result<LaneGraph, GraphError> {
    if !(max_spacing_px > 0.0) {
        return Err(GraphError::InvalidParameter(format!(
            "densify spacing must be positive, got {max_spacing_px}"
        )));
    }
    let mut out = LaneGraph {
        nodes: g.nodes.clone(),
        edges: Vec::new(),
        name: g.name.clone(),
        gsd_cm: g.gsd_cm,
        directed: g.directed,
    };
    let mut new_edges = Vec::new();
    for &(a, b) in &g.edges {
        let pa = g.node(a);
        let pb = g.node(b);
        let len = pa.dist(pb);
        let parts = (len / max_spacing_px).ceil().max(1.0) as usize;
        let mut prev = a;
        for i in 1..parts {
            let t = i as f64 / parts as f64;
            let p = Point2::new(pa.x + (pb.x - pa.x) * t, pa.y + (pb.y - pa.y) * t);
            let id = out.add_node(p);
            new_edges.push((prev.min(id), prev.max(id)));
            prev = id;
        }
        new_edges.push((prev.min(b), prev.max(b)));
    }
    new_edges.sort_unstable();
    out.edges = new_edges;
    Ok(out)
}

#[derive(Debug, Clone, Copy)]
struct HeapEntry {
    dist: f64,
    node: u32,
}

impl PartialEq for HeapEntry {
    fn eq(&self, other: &Self) -> bool {
        self.dist == other.dist && self.node == other.node
    }
}
impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        // Reversed so the max-heap pops the smallest distance first; ties
        // break on node id for full determinism.
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.node.cmp(&self.node))
    }
}
impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// Dijkstra from `source` with Euclidean edge weights, returning the nodes
/// with path length strictly below `cutoff_px` as `(node id, length)` pairs
/// in ascending id order. Unreachable nodes (infinite distance) are absent.
pub fn shortest_path_lengths(
    g: &LaneGraph,
    source: u32,
    cutoff_px: f64,
) -> Result<Vec<(u32, f64)>, GraphError> {
    if source as usize >= g.n_nodes() {
        return Err(GraphError::MissingNode(source));
    }
    if !(cutoff_px > 0.0) {
        return Err(GraphError::InvalidParameter(format!(
            "cutoff must be positive, got {cutoff_px}"
        )));
    }
    let adj = g.adjacency();
    let mut dist = vec![f64::INFINITY; g.n_nodes()];
    dist[source as usize] = 0.0;
    let mut heap = BinaryHeap::new();
    heap.push(HeapEntry {
        dist: 0.0,
        node: source,
    });
    while let Some(HeapEntry { dist: d, node: u }) = heap.pop() {
        if d > dist[u as usize] || d >= cutoff_px {
            continue;
        }
        for &v in &adj[u as usize] {
            let nd = d + g.edge_length(u, v);
            if nd < cutoff_px && nd < dist[v as usize] {
                dist[v as usize] = nd;
                heap.push(HeapEntry { dist: nd, node: v });
            }
        }
    }
    Ok((0..g.n_nodes() as u32)
        .filter(|&i| dist[i as usize] < cutoff_px)
        .map(|i| (i, dist[i as usize]))
        .collect())
}

/// Partitions the nodes into connected components. Each component is an
/// ascending id list; components are ordered by their smallest member.
pub fn connected_components(g: &LaneGraph) -> Vec<Vec<u32>> {
    let adj = g.adjacency();
    let mut seen = vec![false; g.n_nodes()];
    let mut comps = Vec::new();
    for start in 0..g.n_nodes() as u32 {
        if seen[start as usize] {
            continue;
        }
        let mut comp = Vec::new();
        let mut stack = vec![start];
        seen[start as usize] = true;
        while let Some(u) = stack.pop() {
            comp.push(u);
            for &v in &adj[u as usize] {
                if !seen[v as usize] {
                    seen[v as usize] = true;
                    stack.push(v);
                }
            }
        }
        comp.sort_unstable();
        comps.push(comp);
    }
    comps
}

// ---------------------------------------------------------------------------
// File format
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct FileNode {
    id: u32,
    x: f64,
    y: f64,
}

#[derive(Serialize, Deserialize)]
struct FileGraph {
    #[serde(skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    gsd_cm: Option<f64>,
    nodes: Vec<FileNode>,
    edges: Vec<(u32, u32)>,
    #[serde(default)]
    directed: bool,
}

/// Serializes `g` to the graph JSON format. Node ids are written explicitly
/// (`0..n`) so that a later load reproduces the graph exactly. NaN/Inf
/// positions are rejected rather than written.
pub fn save_graph(g: &LaneGraph, path: &Path) -> Result<(), GraphError> {
    for (i, p) in g.nodes.iter().enumerate() {
        if !(p.x.is_finite() && p.y.is_finite()) {
            return Err(GraphError::NotFinite(format!(
                "node {i} position ({}, {})",
                p.x, p.y
            )));
        }
    }
    if let Some(gsd) = g.gsd_cm {
        if !gsd.is_finite() {
            return Err(GraphError::NotFinite(format!("gsd_cm {gsd}")));
        }
    }
    let file = FileGraph {
        name: g.name.clone(),
        gsd_cm: g.gsd_cm,
        nodes: g
            .nodes
            .iter()
            .enumerate()
            .map(|(i, p)| FileNode {
                id: i as u32,
                x: p.x,
                y: p.y,
            })
            .collect(),
        edges: g.edges.clone(),
        directed: g.directed,
    };
    let json = serde_json::to_string_pretty(&file)
        .map_err(|e| GraphError::Parse(format!("serialize: {e}")))?;
    std::fs::write(path, json)?;
    Ok(())
}

/// Loads a graph JSON file. Ids may be arbitrary distinct non-negative
/// integers; they are remapped to dense ids in ascending id order. Parse
/// errors carry serde's line/column context; structural problems (unknown
/// edge endpoints, self-loops, duplicate ids/edges, non-finite values) are
/// reported with the offending entry.
pub fn load_graph(path: &Path) -> Result<LaneGraph, GraphError> {
    let text = std::fs::read_to_string(path)?;
    let file: FileGraph = serde_json::from_str(&text)
        .map_err(|e| GraphError::Parse(format!("{}: {e}", path.display())))?;
    graph_from_parts(file)
}

/// Parses graph JSON from bytes (shared by `load_graph` and the fuzz
/// harness).
pub fn parse_graph_json(bytes: &[u8]) -> Result<LaneGraph, GraphError> {
    let file: FileGraph =
        serde_json::from_slice(bytes).map_err(|e| GraphError::Parse(e.to_string()))?;
    graph_from_parts(file)
}

fn graph_from_parts(file: FileGraph) -> Result<LaneGraph, GraphError> {
    let mut ids: Vec<u32> = file.nodes.iter().map(|n| n.id).collect();
    ids.sort_unstable();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(GraphError::Parse("duplicate node id".into()));
    }
    let lookup = |id: u32| ids.binary_search(&id).ok().map(|i| i as u32);

    let mut g = LaneGraph::new();
    let mut ordered = file.nodes;
    ordered.sort_by_key(|n| n.id);
    for n in &ordered {
        if !(n.x.is_finite() && n.y.is_finite()) {
            return Err(GraphError::NotFinite(format!(
                "node {} position ({}, {})",
                n.id, n.x, n.y
            )));
        }
        g.add_node(Point2::new(n.x, n.y));
    }
    for (idx, &(a, b)) in file.edges.iter().enumerate() {
        let (da, db) = match (lookup(a), lookup(b)) {
            (Some(da), Some(db)) => (da, db),
            _ => {
                return Err(GraphError::InvalidEdge(format!(
                    "edges[{idx}] = ({a},{b}) references an unknown node id"
                )))
            }
        };
        g.add_edge(da, db)
            .map_err(|e| GraphError::InvalidEdge(format!("edges[{idx}]: {e}")))?;
    }
    if let Some(gsd) = file.gsd_cm {
        if !gsd.is_finite() {
            return Err(GraphError::NotFinite(format!("gsd_cm {gsd}")));
        }
    }
    g.name = file.name;
    g.gsd_cm = file.gsd_cm;
    g.directed = file.directed;
    Ok(g)
}
