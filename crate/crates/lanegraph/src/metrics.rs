//! GEO and TOPO evaluation of a predicted lane graph against ground truth:
//! densification, radius-bounded one-to-one node matching, and
//! shortest-path subgraph scoring.

use rayon::prelude::*;
use serde::Serialize;

use crate::graph::{densify, shortest_path_lengths, GraphError, LaneGraph, Point2};

/// Evaluation configuration. Defaults encode the reference real-world
/// values at 12.5 cm per pixel: 2 px densification, 8 px match radius,
/// 400 px topology radius.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvalConfig {
    pub densify_spacing_px: f64,
    pub match_radius_px: f64,
    pub topo_radius_px: f64,
    pub gsd_cm: f64,
    pub strategy: MatchStrategy,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            densify_spacing_px: 2.0,
            match_radius_px: 8.0,
            topo_radius_px: 400.0,
            gsd_cm: 12.5,
            strategy: MatchStrategy::Maximum,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), GraphError> {
        for (name, v) in [
            ("densify_spacing_px", self.densify_spacing_px),
            ("match_radius_px", self.match_radius_px),
            ("topo_radius_px", self.topo_radius_px),
            ("gsd_cm", self.gsd_cm),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(GraphError::InvalidParameter(format!(
                    "{name} must be finite and positive, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// How the one-to-one node matching is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchStrategy {
    /// Maximum-cardinality bipartite matching (order-independent size);
    /// the default.
    Maximum,
    /// Greedy nearest-first maximal matching in ascending node order.
    Greedy,
}

/// Outcome of matching two densified node sets.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    /// `(pred node id, gt node id)` pairs over the densified graphs,
    /// ascending in pred id; one-to-one and all within the match radius.
    pub pairs: Vec<(u32, u32)>,
    /// Densified pred node count.
    pub pred_total: usize,
    /// Densified gt node count.
    pub gt_total: usize,
}

/// Precision / recall / F1 triple.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Scores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub type GeoScores = Scores;
pub type TopoScores = Scores;

impl Scores {
    fn from_counts(pairs: usize, pred_total: usize, gt_total: usize) -> Scores {
        let p = if pred_total == 0 {
            0.0
        } else {
            pairs as f64 / pred_total as f64
        };
        let r = if gt_total == 0 {
            0.0
        } else {
            pairs as f64 / gt_total as f64
        };
        Scores::from_pr(p, r)
    }

    fn from_pr(p: f64, r: f64) -> Scores {
        let f1 = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        Scores {
            precision: p,
            recall: r,
            f1,
        }
    }
}

/// For each left point, the right-point candidates within `radius`
/// (strictly), sorted by distance then right index. Uses a uniform grid so
/// cost scales with true candidate counts, not all pairs.
fn radius_candidates(left: &[Point2], right: &[Point2], radius: f64) -> Vec<Vec<u32>> {
    let cell = radius.max(1e-9);
    let key = |p: Point2| ((p.x / cell).floor() as i64, (p.y / cell).floor() as i64);
    let mut grid: std::collections::HashMap<(i64, i64), Vec<u32>> = std::collections::HashMap::new();
    for (j, &p) in right.iter().enumerate() {
        grid.entry(key(p)).or_default().push(j as u32);
    }
    left.iter()
        .map(|&p| {
            let (cx, cy) = key(p);
            let mut cands: Vec<(f64, u32)> = Vec::new();
            for dy in -1..=1 {
                for dx in -1..=1 {
                    if let Some(bucket) = grid.get(&(cx + dx, cy + dy)) {
                        for &j in bucket {
                            let d = p.dist(right[j as usize]);
                            if d < radius {
                                cands.push((d, j));
                            }
                        }
                    }
                }
            }
            cands.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            cands.into_iter().map(|(_, j)| j).collect()
        })
        .collect()
}

fn kuhn_augment(
    i: usize,
    cands: &[Vec<u32>],
    match_right: &mut [u32],
    match_left: &mut [u32],
    visited: &mut [bool],
) -> bool {
    for &j in &cands[i] {
        let j = j as usize;
        if visited[j] {
            continue;
        }
        visited[j] = true;
        if match_right[j] == u32::MAX
            || kuhn_augment(
                match_right[j] as usize,
                cands,
                match_right,
                match_left,
                visited,
            )
        {
            match_right[j] = i as u32;
            match_left[i] = j as u32;
            return true;
        }
    }
    false
}

/// One-to-one matching between two point sets with all pairs strictly
/// within `radius`. `Maximum` runs greedy initialization plus augmenting
/// paths; `Greedy` stops after the nearest-first pass.
fn match_points(
    left: &[Point2],
    right: &[Point2],
    radius: f64,
    strategy: MatchStrategy,
) -> Vec<(u32, u32)> {
    let cands = radius_candidates(left, right, radius);
    let mut match_right = vec![u32::MAX; right.len()];
    let mut match_left = vec![u32::MAX; left.len()];
    for (i, row) in cands.iter().enumerate() {
        for &j in row {
            if match_right[j as usize] == u32::MAX {
                match_right[j as usize] = i as u32;
                match_left[i] = j;
                break;
            }
        }
    }
    if strategy == MatchStrategy::Maximum {
        for i in 0..left.len() {
            if match_left[i] == u32::MAX {
                let mut visited = vec![false; right.len()];
                kuhn_augment(i, &cands, &mut match_right, &mut match_left, &mut visited);
            }
        }
    }
    (0..left.len())
        .filter(|&i| match_left[i] != u32::MAX)
        .map(|i| (i as u32, match_left[i]))
        .collect()
}

/// Densifies both graphs and computes the one-to-one node matching within
/// `cfg.match_radius_px`.
pub fn geo_match(
    pred: &LaneGraph,
    gt: &LaneGraph,
    cfg: &EvalConfig,
) -> Result<MatchResult, GraphError> {
    cfg.validate()?;
    let dp = densify(pred, cfg.densify_spacing_px)?;
    let dg = densify(gt, cfg.densify_spacing_px)?;
    Ok(MatchResult {
        pairs: match_points(dp.nodes(), dg.nodes(), cfg.match_radius_px, cfg.strategy),
        pred_total: dp.n_nodes(),
        gt_total: dg.n_nodes(),
    })
}

/// GEO precision / recall / F1 from a match result. Empty sides score 0.
pub fn geo_scores(m: &MatchResult) -> GeoScores {
    Scores::from_counts(m.pairs.len(), m.pred_total, m.gt_total)
}

/// Induced subgraph on the nodes with shortest-path distance strictly
/// below `radius_px` from `v`, reindexed in ascending original-id order.
pub fn subgraph_within(g: &LaneGraph, v: u32, radius_px: f64) -> Result<LaneGraph, GraphError> {
    let within = shortest_path_lengths(g, v, radius_px)?;
    let ids: Vec<u32> = within.iter().map(|&(id, _)| id).collect();
    let mut remap = vec![u32::MAX; g.n_nodes()];
    let mut nodes = Vec::with_capacity(ids.len());
    for (new, &old) in ids.iter().enumerate() {
        remap[old as usize] = new as u32;
        nodes.push(g.node(old));
    }
    let edges = g
        .edges()
        .iter()
        .filter(|&&(a, b)| remap[a as usize] != u32::MAX && remap[b as usize] != u32::MAX)
        .map(|&(a, b)| (remap[a as usize], remap[b as usize]))
        .collect();
    Ok(LaneGraph::from_parts(nodes, edges))
}

/// Shared core for TOPO scoring over already-densified graphs and their
/// node matching.
fn topo_from_match(
    dp: &LaneGraph,
    dg: &LaneGraph,
    pairs: &[(u32, u32)],
    cfg: &EvalConfig,
) -> TopoScores {
    // Per-pair contributions evaluated in parallel but reduced in pair
    // order, so results are identical at any thread count.
    let contributions: Vec<(f64, f64)> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let sub_p: Vec<Point2> = shortest_path_lengths(dp, i, cfg.topo_radius_px)
                .expect("pair id valid")
                .iter()
                .map(|&(id, _)| dp.node(id))
                .collect();
            let sub_g: Vec<Point2> = shortest_path_lengths(dg, j, cfg.topo_radius_px)
                .expect("pair id valid")
                .iter()
                .map(|&(id, _)| dg.node(id))
                .collect();
            let sub_pairs = match_points(&sub_p, &sub_g, cfg.match_radius_px, cfg.strategy).len();
            let pre = if sub_p.is_empty() {
                0.0
            } else {
                sub_pairs as f64 / sub_p.len() as f64
            };
            let rec = if sub_g.is_empty() {
                0.0
            } else {
                sub_pairs as f64 / sub_g.len() as f64
            };
            (pre, rec)
        })
        .collect();
    let (sum_pre, sum_rec) = contributions
        .iter()
        .fold((0.0, 0.0), |(a, b), &(p, r)| (a + p, b + r));
    let pre = if dp.n_nodes() == 0 {
        0.0
    } else {
        sum_pre / dp.n_nodes() as f64
    };
    let rec = if dg.n_nodes() == 0 {
        0.0
    } else {
        sum_rec / dg.n_nodes() as f64
    };
    Scores::from_pr(pre, rec)
}

/// TOPO precision / recall / F1: for every GEO-matched node pair, the
/// shortest-path neighborhoods (distance < `cfg.topo_radius_px`) are
/// matched against each other; per-pair precision/recall are summed and
/// divided by the densified full-graph node counts.
pub fn topo_scores(
    pred: &LaneGraph,
    gt: &LaneGraph,
    cfg: &EvalConfig,
) -> Result<TopoScores, GraphError> {
    cfg.validate()?;
    let dp = densify(pred, cfg.densify_spacing_px)?;
    let dg = densify(gt, cfg.densify_spacing_px)?;
    let pairs = match_points(dp.nodes(), dg.nodes(), cfg.match_radius_px, cfg.strategy);
    Ok(topo_from_match(&dp, &dg, &pairs, cfg))
}

/// Full evaluation: GEO and TOPO scores plus matching counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Evaluation {
    pub geo: GeoScores,
    pub topo: TopoScores,
    /// Number of matched node pairs (densified).
    pub matched_pairs: usize,
    /// Densified node totals the scores are normalized by.
    pub pred_nodes: usize,
    pub gt_nodes: usize,
}

/// Evaluates `pred` against `gt`, sharing the densification and matching
/// between the GEO and TOPO stages.
pub fn evaluate(
    pred: &LaneGraph,
    gt: &LaneGraph,
    cfg: &EvalConfig,
) -> Result<Evaluation, GraphError> {
    cfg.validate()?;
    let dp = densify(pred, cfg.densify_spacing_px)?;
    let dg = densify(gt, cfg.densify_spacing_px)?;
    let pairs = match_points(dp.nodes(), dg.nodes(), cfg.match_radius_px, cfg.strategy);
    let m = MatchResult {
        pred_total: dp.n_nodes(),
        gt_total: dg.n_nodes(),
        pairs,
    };
    let geo = geo_scores(&m);
    let topo = topo_from_match(&dp, &dg, &m.pairs, cfg);
    Ok(Evaluation {
        geo,
        topo,
        matched_pairs: m.pairs.len(),
        pred_nodes: m.pred_total,
        gt_nodes: m.gt_total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn polyline(points: &[(f64, f64)]) -> LaneGraph {
        let mut g = LaneGraph::new();
        let ids: Vec<u32> = points
            .iter()
            .map(|&(x, y)| g.add_node(Point2::new(x, y)))
            .collect();
        for w in ids.windows(2) {
            g.add_edge(w[0], w[1]).unwrap();
        }
        g
    }

    fn translated(g: &LaneGraph, dx: f64, dy: f64) -> LaneGraph {
        let mut out = LaneGraph::new();
        for p in g.nodes() {
            out.add_node(Point2::new(p.x + dx, p.y + dy));
        }
        for &(a, b) in g.edges() {
            out.add_edge(a, b).unwrap();
        }
        out
    }

    #[test]
    fn identity_scores_exactly_one() {
        let g = polyline(&[(3.0, 4.0), (40.0, 10.0), (80.0, 55.0)]);
        let e = evaluate(&g, &g, &EvalConfig::default()).unwrap();
        assert_eq!(e.geo.precision, 1.0);
        assert_eq!(e.geo.recall, 1.0);
        assert_eq!(e.geo.f1, 1.0);
        assert_eq!(e.topo.precision, 1.0);
        assert_eq!(e.topo.recall, 1.0);
        assert_eq!(e.topo.f1, 1.0);
        assert_eq!(e.matched_pairs, e.gt_nodes);
    }

    #[test]
    fn far_translation_scores_zero() {
        let g = polyline(&[(0.0, 0.0), (30.0, 0.0)]);
        let moved = translated(&g, 0.0, 20.0);
        let e = evaluate(&moved, &g, &EvalConfig::default()).unwrap();
        assert_eq!(e.matched_pairs, 0);
        assert_eq!(e.geo.f1, 0.0);
        assert_eq!(e.topo.f1, 0.0);
    }

    #[test]
    fn score_arithmetic() {
        let m = MatchResult {
            pairs: vec![(0, 0), (1, 1), (2, 2)],
            pred_total: 4,
            gt_total: 6,
        };
        let s = geo_scores(&m);
        assert_eq!(s.precision, 0.75);
        assert_eq!(s.recall, 0.5);
        assert!((s.f1 - 0.6).abs() < 1e-15);

        let empty = MatchResult {
            pairs: vec![],
            pred_total: 0,
            gt_total: 0,
        };
        let s = geo_scores(&empty);
        assert_eq!((s.precision, s.recall, s.f1), (0.0, 0.0, 0.0));
    }

    /// Exhaustive maximum matching by trying every injective assignment.
    fn brute_force_max(left: &[Point2], right: &[Point2], r: f64) -> usize {
        fn go(i: usize, left: &[Point2], right: &[Point2], used: &mut Vec<bool>, r: f64) -> usize {
            if i == left.len() {
                return 0;
            }
            let mut best = go(i + 1, left, right, used, r);
            for j in 0..right.len() {
                if !used[j] && left[i].dist(right[j]) < r {
                    used[j] = true;
                    best = best.max(1 + go(i + 1, left, right, used, r));
                    used[j] = false;
                }
            }
            best
        }
        let mut used = vec![false; right.len()];
        go(0, left, right, &mut used, r)
    }

    #[test]
    fn maximum_matches_brute_force_on_crossings() {
        let mut rng = crate::rng::CounterRng::new(41, 0);
        for trial in 0..40 {
            let n = rng.uniform_usize(1, 4);
            let m = rng.uniform_usize(1, 4);
            let mk = |rng: &mut crate::rng::CounterRng, k: usize| -> Vec<Point2> {
                (0..k)
                    .map(|_| Point2::new(rng.uniform_in(0.0, 12.0), rng.uniform_in(0.0, 12.0)))
                    .collect()
            };
            let left = mk(&mut rng, n);
            let right = mk(&mut rng, m);
            let got = match_points(&left, &right, 8.0, MatchStrategy::Maximum).len();
            let want = brute_force_max(&left, &right, 8.0);
            assert_eq!(got, want, "trial {trial}");
        }
    }

    #[test]
    fn greedy_can_be_smaller_than_maximum() {
        // p0 grabs g0 greedily, stranding p1; augmentation fixes it.
        let left = vec![Point2::new(0.0, 0.0), Point2::new(1.0, 0.0)];
        let right = vec![Point2::new(0.5, 0.0), Point2::new(0.0, -1.9)];
        let greedy = match_points(&left, &right, 2.0, MatchStrategy::Greedy);
        let maximum = match_points(&left, &right, 2.0, MatchStrategy::Maximum);
        assert_eq!(greedy.len(), 1);
        assert_eq!(maximum.len(), 2);
    }

    #[test]
    fn matching_is_one_to_one_within_radius() {
        let mut rng = crate::rng::CounterRng::new(17, 5);
        let pts = |rng: &mut crate::rng::CounterRng, k: usize| -> Vec<Point2> {
            (0..k)
                .map(|_| Point2::new(rng.uniform_in(0.0, 60.0), rng.uniform_in(0.0, 60.0)))
                .collect()
        };
        let left = pts(&mut rng, 40);
        let right = pts(&mut rng, 35);
        let pairs = match_points(&left, &right, 8.0, MatchStrategy::Maximum);
        let mut seen_l = std::collections::HashSet::new();
        let mut seen_r = std::collections::HashSet::new();
        for &(i, j) in &pairs {
            assert!(seen_l.insert(i), "pred id {i} repeated");
            assert!(seen_r.insert(j), "gt id {j} repeated");
            assert!(left[i as usize].dist(right[j as usize]) < 8.0);
        }
    }

    #[test]
    fn subgraph_within_cases() {
        // Isolated node.
        let mut g = LaneGraph::new();
        g.add_node(Point2::new(0.0, 0.0));
        let s = subgraph_within(&g, 0, 400.0).unwrap();
        assert_eq!(s.n_nodes(), 1);
        assert_eq!(s.n_edges(), 0);

        // Path a-b-c with 300 px legs, radius 400: only {a, b} from a.
        let g = polyline(&[(0.0, 0.0), (300.0, 0.0), (600.0, 0.0)]);
        let s = subgraph_within(&g, 0, 400.0).unwrap();
        assert_eq!(s.n_nodes(), 2);
        assert_eq!(s.n_edges(), 1);

        // Whole path within radius.
        let s = subgraph_within(&g, 0, 1000.0).unwrap();
        assert_eq!(s.n_nodes(), 3);
        assert_eq!(s.n_edges(), 2);

        assert!(subgraph_within(&g, 99, 400.0).is_err());
    }

    #[test]
    fn far_node_hurts_precision_not_recall() {
        let gt = polyline(&[(0.0, 0.0), (40.0, 0.0)]);
        let pred = gt.clone();
        let base = evaluate(&pred, &gt, &EvalConfig::default()).unwrap();
        let mut noisy = pred.clone();
        noisy.add_node(Point2::new(500.0, 500.0));
        let worse = evaluate(&noisy, &gt, &EvalConfig::default()).unwrap();
        assert!(worse.geo.precision < base.geo.precision);
        assert_eq!(worse.geo.recall, base.geo.recall);
    }

    #[test]
    fn rigid_translation_invariance() {
        let gt = polyline(&[(5.0, 5.0), (25.0, 18.0), (60.0, 22.0)]);
        let pred = polyline(&[(6.0, 4.0), (24.0, 19.0), (61.0, 23.0)]);
        let a = evaluate(&pred, &gt, &EvalConfig::default()).unwrap();
        let b = evaluate(
            &translated(&pred, 100.0, -50.0),
            &translated(&gt, 100.0, -50.0),
            &EvalConfig::default(),
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn topo_zero_when_no_matches() {
        let gt = polyline(&[(0.0, 0.0), (30.0, 0.0)]);
        let pred = translated(&gt, 0.0, 100.0);
        let t = topo_scores(&pred, &gt, &EvalConfig::default()).unwrap();
        assert_eq!((t.precision, t.recall, t.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn topo_penalizes_broken_edge() {
        // Edges at exactly the densify spacing, so node sets are identical
        // and GEO is perfect; only path connectivity differs.
        let gt = polyline(&[(0.0, 0.0), (2.0, 0.0), (4.0, 0.0), (6.0, 0.0)]);
        let mut pred = LaneGraph::new();
        for p in gt.nodes() {
            pred.add_node(*p);
        }
        pred.add_edge(0, 1).unwrap();
        pred.add_edge(2, 3).unwrap(); // edge 1-2 broken
        let e = evaluate(&pred, &gt, &EvalConfig::default()).unwrap();
        assert_eq!(e.geo.f1, 1.0, "nodes all still match");
        // Every pred neighborhood is a 2-node half that fully matches, so
        // precision stays 1; each gt neighborhood is the whole 4-node path
        // of which only half is reachable in pred, so recall is 1/2.
        assert_eq!(e.topo.precision, 1.0);
        assert_eq!(e.topo.recall, 0.5);
        assert!(e.topo.f1 < 1.0, "broken connectivity must hurt TOPO");
    }

    #[test]
    fn empty_pred_vs_nonempty_gt() {
        let gt = polyline(&[(0.0, 0.0), (30.0, 0.0)]);
        let e = evaluate(&LaneGraph::new(), &gt, &EvalConfig::default()).unwrap();
        assert_eq!(e.geo.f1, 0.0);
        assert_eq!(e.topo.f1, 0.0);
        assert_eq!(e.pred_nodes, 0);
        assert!(e.gt_nodes > 0);
    }

    #[test]
    fn evaluation_is_deterministic() {
        let gt = polyline(&[(0.0, 0.0), (35.0, 12.0), (70.0, 9.0)]);
        let pred = polyline(&[(1.0, 1.0), (36.0, 11.0), (69.0, 8.0)]);
        let a = evaluate(&pred, &gt, &EvalConfig::default()).unwrap();
        let b = evaluate(&pred, &gt, &EvalConfig::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn config_validation() {
        let gt = polyline(&[(0.0, 0.0), (30.0, 0.0)]);
        for bad in [
            EvalConfig {
                densify_spacing_px: 0.0,
                ..Default::default()
            },
            EvalConfig {
                match_radius_px: -8.0,
                ..Default::default()
            },
            EvalConfig {
                topo_radius_px: f64::NAN,
                ..Default::default()
            },
        ] {
            assert!(evaluate(&gt, &gt, &bad).is_err());
        }
    }
}
