//! Segmentation-to-graph extraction: morphological thinning, skeleton to
//! graph conversion, pruning of small components and spurs, and
//! Douglas–Peucker polyline simplification.

use std::fmt;

use crate::graph::{LaneGraph, Point2};
use crate::raster::{threshold, BinaryMask, GrayRaster, RasterError};

/// Parameters for the full extraction pipeline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtractionParams {
    /// Binarization threshold, in `(0, 1)`.
    pub alpha: f64,
    /// Connected components with total polyline length below this are
    /// dropped.
    pub min_component_len_px: f64,
    /// Dead-end chains from a junction shorter than this are dropped.
    pub max_spur_len_px: f64,
    /// Douglas–Peucker deviation tolerance.
    pub dp_epsilon_px: f64,
}

impl Default for ExtractionParams {
    fn default() -> Self {
        ExtractionParams {
            alpha: 0.5,
            min_component_len_px: 50.0,
            max_spur_len_px: 30.0,
            dp_epsilon_px: 2.0,
        }
    }
}

impl ExtractionParams {
    pub fn validate(&self) -> Result<(), ExtractError> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(ExtractError::InvalidParameter(format!(
                "alpha must lie in (0,1), got {}",
                self.alpha
            )));
        }
        for (name, v) in [
            ("min_component_len_px", self.min_component_len_px),
            ("max_spur_len_px", self.max_spur_len_px),
            ("dp_epsilon_px", self.dp_epsilon_px),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(ExtractError::InvalidParameter(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Errors from the extraction stage.
#[derive(Debug)]
pub enum ExtractError {
    /// A parameter was out of its domain.
    InvalidParameter(String),
    /// `skeleton_to_graph` was given a mask that is not one pixel wide;
    /// the coordinates point at the top-left corner of a 2x2 block.
    NotThin { x: usize, y: usize },
    /// A raster-stage failure (thresholding).
    Raster(RasterError),
}

impl fmt::Display for ExtractError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExtractError::InvalidParameter(msg) => write!(f, "invalid parameter: {msg}"),
            ExtractError::NotThin { x, y } => {
                write!(f, "mask is not thin: 2x2 foreground block at ({x},{y})")
            }
            ExtractError::Raster(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for ExtractError {}

impl From<RasterError> for ExtractError {
    fn from(e: RasterError) -> Self {
        ExtractError::Raster(e)
    }
}

#[inline]
fn at(m: &BinaryMask, x: isize, y: isize) -> u8 {
    if x >= 0 && y >= 0 && (x as usize) < m.width && (y as usize) < m.height {
        m.get(x as usize, y as usize) as u8
    } else {
        0
    }
}

/// The eight neighbors clockwise from north:
/// `p2=N, p3=NE, p4=E, p5=SE, p6=S, p7=SW, p8=W, p9=NW`.
#[inline]
#[allow(clippy::type_complexity)]
fn neighbors(m: &BinaryMask, x: isize, y: isize) -> (u8, u8, u8, u8, u8, u8, u8, u8) {
    (
        at(m, x, y - 1),
        at(m, x + 1, y - 1),
        at(m, x + 1, y),
        at(m, x + 1, y + 1),
        at(m, x, y + 1),
        at(m, x - 1, y + 1),
        at(m, x - 1, y),
        at(m, x - 1, y - 1),
    )
}

/// Crossing number and neighbor count used by both the thinning rule and
/// the one-pixel cleanup.
#[inline]
fn crossing(m: &BinaryMask, x: isize, y: isize) -> (u8, u8) {
    let (p2, p3, p4, p5, p6, p7, p8, p9) = neighbors(m, x, y);
    let c = ((1 - p2) & (p3 | p4))
        + ((1 - p4) & (p5 | p6))
        + ((1 - p6) & (p7 | p8))
        + ((1 - p8) & (p9 | p2));
    (c, p2 + p3 + p4 + p5 + p6 + p7 + p8 + p9)
}

/// One parallel thinning subiteration; returns the number of deleted
/// pixels. Deletion decisions are made against the state at entry.
fn thin_subiter(m: &mut BinaryMask, second: bool) -> usize {
    let mut kill = Vec::new();
    for y in 0..m.height as isize {
        for x in 0..m.width as isize {
            if at(m, x, y) == 0 {
                continue;
            }
            let (p2, p3, p4, p5, p6, p7, p8, p9) = neighbors(m, x, y);
            let c = ((1 - p2) & (p3 | p4))
                + ((1 - p4) & (p5 | p6))
                + ((1 - p6) & (p7 | p8))
                + ((1 - p8) & (p9 | p2));
            let n1 = (p9 | p2) + (p3 | p4) + (p5 | p6) + (p7 | p8);
            let n2 = (p2 | p3) + (p4 | p5) + (p6 | p7) + (p8 | p9);
            let n = n1.min(n2);
            let mv = if second {
                (p2 | p3 | (1 - p5)) & p4
            } else {
                (p6 | p7 | (1 - p9)) & p8
            };
            if c == 1 && (2..=3).contains(&n) && mv == 0 {
                kill.push((x as usize, y as usize));
            }
        }
    }
    for &(x, y) in &kill {
        m.set(x, y, false);
    }
    kill.len()
}

/// Finds the top-left corner of the first all-foreground 2x2 block in
/// row-major order.
fn find_2x2(m: &BinaryMask) -> Option<(usize, usize)> {
    for y in 0..m.height.saturating_sub(1) {
        for x in 0..m.width.saturating_sub(1) {
            if m.get(x, y) && m.get(x + 1, y) && m.get(x, y + 1) && m.get(x + 1, y + 1) {
                return Some((x, y));
            }
        }
    }
    None
}

/// Sequential cleanup of residual 2x2 blocks the parallel passes can leave
/// behind: within each block, delete the first pixel whose removal keeps
/// the topology (crossing number 1) and that has at least two neighbors,
/// restarting the scan after every deletion.
fn cleanup_2x2(m: &mut BinaryMask) -> usize {
    let mut removed = 0;
    'outer: loop {
        let mut changed = false;
        for y in 0..m.height.saturating_sub(1) {
            for x in 0..m.width.saturating_sub(1) {
                if !(m.get(x, y) && m.get(x + 1, y) && m.get(x, y + 1) && m.get(x + 1, y + 1)) {
                    continue;
                }
                for (px, py) in [(x, y), (x + 1, y), (x, y + 1), (x + 1, y + 1)] {
                    if !m.get(px, py) {
                        continue;
                    }
                    let (c, n) = crossing(m, px as isize, py as isize);
                    if c == 1 && n >= 2 {
                        m.set(px, py, false);
                        removed += 1;
                        changed = true;
                        break;
                    }
                }
                if changed {
                    continue 'outer;
                }
            }
        }
        if !changed {
            return removed;
        }
    }
}

/// Morphological thinning to a one-pixel-wide skeleton: two-subiteration
/// parallel thinning run to a fixpoint, alternated with the sequential
/// block cleanup until neither phase changes anything. The output is a
/// subset of the input, contains no 2x2 foreground block, and preserves
/// the number of 8-connected components.
pub fn thin(m: &BinaryMask) -> BinaryMask {
    let mut out = m.clone();
    loop {
        let mut total = 0;
        loop {
            let d = thin_subiter(&mut out, false) + thin_subiter(&mut out, true);
            total += d;
            if d == 0 {
                break;
            }
        }
        total += cleanup_2x2(&mut out);
        if total == 0 {
            return out;
        }
    }
}

/// Converts a thin skeleton into a graph. Every foreground pixel becomes a
/// node at its center (`x` = column, `y` = row); orthogonally adjacent
/// pixels are joined, and diagonally adjacent pixels are joined only when
/// they share no orthogonal foreground neighbor (otherwise the diagonal
/// would duplicate a two-step orthogonal path). Rejects non-thin input.
pub fn skeleton_to_graph(m: &BinaryMask) -> Result<LaneGraph, ExtractError> {
    if let Some((x, y)) = find_2x2(m) {
        return Err(ExtractError::NotThin { x, y });
    }
    let mut idx = vec![u32::MAX; m.width * m.height];
    let mut nodes = Vec::new();
    for y in 0..m.height {
        for x in 0..m.width {
            if m.get(x, y) {
                idx[y * m.width + x] = nodes.len() as u32;
                nodes.push(Point2::new(x as f64, y as f64));
            }
        }
    }
    let fg = |x: isize, y: isize| at(m, x, y) == 1;
    let mut edges = Vec::new();
    for y in 0..m.height {
        for x in 0..m.width {
            if !m.get(x, y) {
                continue;
            }
            let i = idx[y * m.width + x];
            let (xi, yi) = (x as isize, y as isize);
            // East and south orthogonal links.
            for (dx, dy) in [(1isize, 0isize), (0, 1)] {
                if fg(xi + dx, yi + dy) {
                    let j = idx[(y + dy as usize) * m.width + (x + dx as usize)];
                    edges.push((i, j));
                }
            }
            // South-east and south-west diagonals, skipped when the two
            // pixels share an orthogonal foreground neighbor.
            for dx in [1isize, -1] {
                let (nx, ny) = (xi + dx, yi + 1);
                if fg(nx, ny) && !fg(xi, ny) && !fg(nx, yi) {
                    let j = idx[ny as usize * m.width + nx as usize];
                    edges.push((i, j));
                }
            }
        }
    }
    Ok(LaneGraph::from_parts(nodes, edges))
}

/// Removes spurs (dead-end chains from a junction to a terminal shorter
/// than `max_spur_len_px`, repeated to a fixpoint) and then connected
/// components whose total polyline length is below `min_component_len_px`.
/// Surviving nodes are reindexed in ascending original-id order.
pub fn prune(g: &LaneGraph, min_component_len_px: f64, max_spur_len_px: f64) -> LaneGraph {
    assert!(
        min_component_len_px >= 0.0 && max_spur_len_px >= 0.0,
        "prune thresholds must be >= 0"
    );
    let nodes = g.nodes().to_vec();
    let mut edges: Vec<(u32, u32)> = g.edges().to_vec();

    // Spur removal to a fixpoint; degrees are recomputed each sweep so a
    // junction that drops to degree 2 can expose a longer spur next sweep.
    loop {
        let mut adj = vec![Vec::new(); nodes.len()];
        for &(a, b) in &edges {
            adj[a as usize].push(b);
            adj[b as usize].push(a);
        }
        let deg: Vec<usize> = adj.iter().map(Vec::len).collect();
        let mut drop = std::collections::HashSet::new();
        let mut removed_any = false;
        for t in 0..nodes.len() as u32 {
            if deg[t as usize] != 1 {
                continue;
            }
            // Walk from the terminal through degree-2 nodes.
            let mut chain = vec![t];
            let mut prev = u32::MAX;
            let mut cur = t;
            let mut length = 0.0;
            loop {
                let Some(&next) = adj[cur as usize].iter().find(|&&x| x != prev) else {
                    break;
                };
                length += nodes[cur as usize].dist(nodes[next as usize]);
                chain.push(next);
                if deg[next as usize] != 2 {
                    break;
                }
                prev = cur;
                cur = next;
            }
            let end = *chain.last().unwrap();
            if deg[end as usize] >= 3 && length < max_spur_len_px {
                for w in chain.windows(2) {
                    drop.insert((w[0].min(w[1]), w[0].max(w[1])));
                }
                removed_any = true;
            }
        }
        if !removed_any {
            break;
        }
        edges.retain(|e| !drop.contains(e));
    }

    // Component filter by total edge length.
    let mut adj = vec![Vec::new(); nodes.len()];
    for &(a, b) in &edges {
        adj[a as usize].push(b);
        adj[b as usize].push(a);
    }
    let mut comp = vec![u32::MAX; nodes.len()];
    let mut n_comp = 0u32;
    for s in 0..nodes.len() {
        if comp[s] != u32::MAX {
            continue;
        }
        let mut stack = vec![s as u32];
        comp[s] = n_comp;
        while let Some(u) = stack.pop() {
            for &v in &adj[u as usize] {
                if comp[v as usize] == u32::MAX {
                    comp[v as usize] = n_comp;
                    stack.push(v);
                }
            }
        }
        n_comp += 1;
    }
    let mut comp_len = vec![0.0f64; n_comp as usize];
    for &(a, b) in &edges {
        comp_len[comp[a as usize] as usize] += nodes[a as usize].dist(nodes[b as usize]);
    }
    let keep: Vec<bool> = (0..nodes.len())
        .map(|i| comp_len[comp[i] as usize] >= min_component_len_px)
        .collect();

    // Reindex survivors in ascending id order.
    let mut remap = vec![u32::MAX; nodes.len()];
    let mut new_nodes = Vec::new();
    for (i, &k) in keep.iter().enumerate() {
        if k {
            remap[i] = new_nodes.len() as u32;
            new_nodes.push(nodes[i]);
        }
    }
    let new_edges = edges
        .iter()
        .filter(|&&(a, b)| keep[a as usize] && keep[b as usize])
        .map(|&(a, b)| (remap[a as usize], remap[b as usize]))
        .collect();
    LaneGraph::from_parts(new_nodes, new_edges)
}

/// Douglas–Peucker kept-index selection for an open polyline: interior
/// points are dropped while every removed point stays within `eps` of the
/// simplified polyline.
fn dp_indices(pts: &[Point2], eps: f64) -> Vec<usize> {
    let last = pts.len() - 1;
    let mut keep = vec![0, last];
    let mut stack = vec![(0usize, last)];
    while let Some((i, j)) = stack.pop() {
        if j <= i + 1 {
            continue;
        }
        let a = pts[i];
        let b = pts[j];
        let dx = b.x - a.x;
        let dy = b.y - a.y;
        let len_sq = dx * dx + dy * dy;
        let mut best = -1.0;
        let mut best_k = 0;
        for (k, p) in pts.iter().enumerate().take(j).skip(i + 1) {
            let d = if len_sq == 0.0 {
                p.dist(a)
            } else {
                let t = (((p.x - a.x) * dx + (p.y - a.y) * dy) / len_sq).clamp(0.0, 1.0);
                p.dist(Point2::new(a.x + t * dx, a.y + t * dy))
            };
            if d > best {
                best = d;
                best_k = k;
            }
        }
        if best > eps {
            keep.push(best_k);
            stack.push((i, best_k));
            stack.push((best_k, j));
        }
    }
    keep.sort_unstable();
    keep.dedup();
    keep
}

/// Simplifies every degree-2 chain with Douglas–Peucker at tolerance
/// `epsilon_px`. Endpoints, junctions, and isolated nodes are always
/// retained; chains that form pure cycles keep three spread-out nodes so
/// the loop survives.
pub fn simplify_dp(g: &LaneGraph, epsilon_px: f64) -> LaneGraph {
    assert!(
        epsilon_px >= 0.0 && epsilon_px.is_finite(),
        "epsilon must be finite and >= 0"
    );
    let n = g.n_nodes();
    let adj = g.adjacency();
    let anchor: Vec<bool> = adj.iter().map(|a| a.len() != 2).collect();

    let mut new_nodes: Vec<Point2> = Vec::new();
    let mut new_id = vec![u32::MAX; n];
    let mut new_edges: Vec<(u32, u32)> = Vec::new();
    macro_rules! get_id {
        ($i:expr) => {{
            let i = $i as usize;
            if new_id[i] == u32::MAX {
                new_id[i] = new_nodes.len() as u32;
                new_nodes.push(g.node($i as u32));
            }
            new_id[i]
        }};
    }
    let add_polyline = |chain: &[u32],
                        new_id: &mut Vec<u32>,
                        new_nodes: &mut Vec<Point2>,
                        new_edges: &mut Vec<(u32, u32)>| {
        let pts: Vec<Point2> = chain.iter().map(|&i| g.node(i)).collect();
        let kept = dp_indices(&pts, epsilon_px);
        for w in kept.windows(2) {
            let a = chain[w[0]] as usize;
            let b = chain[w[1]] as usize;
            for i in [a, b] {
                if new_id[i] == u32::MAX {
                    new_id[i] = new_nodes.len() as u32;
                    new_nodes.push(g.node(i as u32));
                }
            }
            if new_id[a] != new_id[b] {
                new_edges.push((new_id[a], new_id[b]));
            }
        }
    };

    let mut visited_edge = vec![false; g.n_edges()];
    let edge_index = |a: u32, b: u32| {
        g.edges()
            .binary_search(&(a.min(b), a.max(b)))
            .expect("edge exists")
    };
    let mut in_chain = vec![false; n];

    // Chains between anchors.
    for s in 0..n as u32 {
        if !anchor[s as usize] {
            continue;
        }
        if adj[s as usize].is_empty() {
            get_id!(s);
            continue;
        }
        for &t0 in &adj[s as usize] {
            let e0 = edge_index(s, t0);
            if visited_edge[e0] {
                continue;
            }
            visited_edge[e0] = true;
            let mut chain = vec![s, t0];
            let mut prev = s;
            let mut cur = t0;
            while !anchor[cur as usize] {
                in_chain[cur as usize] = true;
                let next = *adj[cur as usize]
                    .iter()
                    .find(|&&x| x != prev)
                    .expect("degree-2 node has a second neighbor");
                visited_edge[edge_index(cur, next)] = true;
                prev = cur;
                cur = next;
                chain.push(cur);
            }
            add_polyline(&chain, &mut new_id, &mut new_nodes, &mut new_edges);
        }
    }

    // Pure cycles: every node degree 2, no anchor anywhere.
    let mut seen_cycle = vec![false; n];
    for s in 0..n as u32 {
        let si = s as usize;
        if anchor[si] || seen_cycle[si] || in_chain[si] || adj[si].is_empty() {
            continue;
        }
        let mut cyc = vec![s];
        let mut prev = s;
        let mut cur = adj[si][0];
        while cur != s {
            cyc.push(cur);
            let next = *adj[cur as usize]
                .iter()
                .find(|&&x| x != prev)
                .expect("cycle node has a second neighbor");
            prev = cur;
            cur = next;
        }
        for &i in &cyc {
            seen_cycle[i as usize] = true;
        }
        let k = cyc.len();
        let mut cut = vec![0, k / 3, 2 * k / 3];
        cut.dedup();
        for ii in 0..cut.len() {
            let i0 = cut[ii];
            let seg: Vec<u32> = if ii + 1 == cut.len() {
                cyc[i0..].iter().chain(&cyc[..1]).copied().collect()
            } else {
                cyc[i0..=cut[ii + 1]].to_vec()
            };
            add_polyline(&seg, &mut new_id, &mut new_nodes, &mut new_edges);
        }
    }

    LaneGraph::from_parts(new_nodes, new_edges)
}

/// Full extraction: threshold, thin, convert to a graph, prune, simplify.
pub fn extract(p: &GrayRaster, params: &ExtractionParams) -> Result<LaneGraph, ExtractError> {
    params.validate()?;
    let mask = threshold(p, params.alpha)?;
    let skeleton = thin(&mask);
    let g = skeleton_to_graph(&skeleton)?;
    let g = prune(&g, params.min_component_len_px, params.max_spur_len_px);
    Ok(simplify_dp(&g, params.dp_epsilon_px))
}
