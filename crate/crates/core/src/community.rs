//! Item communities from the interaction graph: weighted bipartite
//! construction, projection onto items, Louvain modularity optimization,
//! and the degree-threshold sweep report.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ingest::SplitRecord;
use crate::rng::stream_seed;

/// Weighted user-item graph; edge weight is the raw interaction count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BipartiteGraph {
    /// (user, item) -> interaction count. Items keep their catalog indices.
    edges: BTreeMap<(u32, u32), u32>,
}

impl BipartiteGraph {
    /// One edge per (user, item) pair that interacted at least once.
    pub fn from_records(records: &[SplitRecord]) -> Self {
        let mut edges = BTreeMap::new();
        for r in records {
            *edges.entry((r.user, r.item)).or_insert(0) += 1;
        }
        BipartiteGraph { edges }
    }

    /// Build directly from (user, item) pairs; used in tests and tools.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (u32, u32)>) -> Self {
        let mut edges = BTreeMap::new();
        for (u, i) in pairs {
            *edges.entry((u, i)).or_insert(0) += 1;
        }
        BipartiteGraph { edges }
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edge_weight(&self, user: u32, item: u32) -> Option<u32> {
        self.edges.get(&(user, item)).copied()
    }

    /// Items with at least one incident edge, ascending.
    pub fn items(&self) -> Vec<u32> {
        let set: BTreeSet<u32> = self.edges.keys().map(|&(_, i)| i).collect();
        set.into_iter().collect()
    }

    pub fn n_items(&self) -> usize {
        self.items().len()
    }

    pub fn n_users(&self) -> usize {
        let set: BTreeSet<u32> = self.edges.keys().map(|&(u, _)| u).collect();
        set.len()
    }

    /// Total interaction count per item.
    pub fn item_weighted_degrees(&self) -> BTreeMap<u32, u64> {
        let mut deg = BTreeMap::new();
        for (&(_, item), &w) in &self.edges {
            *deg.entry(item).or_insert(0u64) += u64::from(w);
        }
        deg
    }
}

/// Drop item nodes whose weighted degree (total interactions) falls below
/// the threshold, along with their edges. Users stay even if isolated.
pub fn degree_filter(graph: &BipartiteGraph, min_item_degree: u64) -> BipartiteGraph {
    let degrees = graph.item_weighted_degrees();
    let edges = graph
        .edges
        .iter()
        .filter(|((_, item), _)| degrees[item] >= min_item_degree)
        .map(|(&k, &w)| (k, w))
        .collect();
    BipartiteGraph { edges }
}

/// How shared-user evidence turns into projected edge weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProjectionWeighting {
    /// Sum of both incident edge weights over shared users (default).
    SharedSum,
    /// Number of shared users.
    SharedCount,
    /// Sum over shared users of the smaller incident weight.
    SharedMin,
}

/// Undirected weighted item-item graph. Isolated items stay as nodes so
/// they can become singleton communities.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ItemGraph {
    nodes: Vec<u32>,
    adj: BTreeMap<u32, Vec<(u32, u64)>>,
}

impl ItemGraph {
    /// Construct from undirected edges; rejects self-loops and zero weights.
    pub fn from_edges(nodes: &[u32], edges: &[(u32, u32, u64)]) -> Result<Self> {
        let mut node_set: BTreeSet<u32> = nodes.iter().copied().collect();
        let mut adj: BTreeMap<u32, Vec<(u32, u64)>> = BTreeMap::new();
        for &(a, b, w) in edges {
            if a == b {
                return Err(Error::InvalidArgument(format!("self-loop on item {a}")));
            }
            if w == 0 {
                return Err(Error::InvalidArgument("zero-weight edge".into()));
            }
            node_set.insert(a);
            node_set.insert(b);
            adj.entry(a).or_default().push((b, w));
            adj.entry(b).or_default().push((a, w));
        }
        for list in adj.values_mut() {
            list.sort_unstable();
        }
        Ok(ItemGraph {
            nodes: node_set.into_iter().collect(),
            adj,
        })
    }

    pub fn nodes(&self) -> &[u32] {
        &self.nodes
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn neighbors(&self, node: u32) -> &[(u32, u64)] {
        self.adj.get(&node).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Sum of undirected edge weights.
    pub fn total_weight(&self) -> u64 {
        self.adj.values().flatten().map(|&(_, w)| w).sum::<u64>() / 2
    }

    pub fn weighted_degree(&self, node: u32) -> u64 {
        self.neighbors(node).iter().map(|&(_, w)| w).sum()
    }
}

/// Weighted projection of the bipartite graph onto items.
///
/// Items sharing at least one user get an edge; with [`ProjectionWeighting::SharedSum`]
/// its weight is the sum over shared users of both incident edge weights.
pub fn project_items(graph: &BipartiteGraph, weighting: ProjectionWeighting) -> ItemGraph {
    let mut acc: HashMap<(u32, u32), u64> = HashMap::new();
    let mut user_items: Vec<(u32, u32)> = Vec::new();
    let mut current_user: Option<u32> = None;

    let flush = |items: &mut Vec<(u32, u32)>, acc: &mut HashMap<(u32, u32), u64>| {
        for a in 0..items.len() {
            for b in a + 1..items.len() {
                let (ia, wa) = items[a];
                let (ib, wb) = items[b];
                let contribution = match weighting {
                    ProjectionWeighting::SharedSum => u64::from(wa) + u64::from(wb),
                    ProjectionWeighting::SharedCount => 1,
                    ProjectionWeighting::SharedMin => u64::from(wa.min(wb)),
                };
                *acc.entry((ia, ib)).or_insert(0) += contribution;
            }
        }
        items.clear();
    };

    // Bipartite edges iterate grouped by user with items ascending, so each
    // flushed pair list is already sorted and (ia, ib) has ia < ib.
    for (&(user, item), &w) in &graph.edges {
        if current_user != Some(user) {
            flush(&mut user_items, &mut acc);
            current_user = Some(user);
        }
        user_items.push((item, w));
    }
    flush(&mut user_items, &mut acc);

    let nodes = graph.items();
    let mut edges: Vec<(u32, u32, u64)> = acc.into_iter().map(|((a, b), w)| (a, b, w)).collect();
    edges.sort_unstable();
    ItemGraph::from_edges(&nodes, &edges).expect("projection produces no self-loops")
}

/// Item -> community assignment with dense community ids from 0.
#[derive(Debug, Clone, PartialEq)]
pub struct CommunityMap {
    assignment: BTreeMap<u32, u32>,
    n_communities: usize,
    pub modularity_score: f64,
}

impl CommunityMap {
    pub fn new(assignment: BTreeMap<u32, u32>, modularity_score: f64) -> Self {
        let n_communities = assignment
            .values()
            .copied()
            .max()
            .map(|m| m as usize + 1)
            .unwrap_or(0);
        CommunityMap {
            assignment,
            n_communities,
            modularity_score,
        }
    }

    pub fn community_of(&self, item: u32) -> Option<u32> {
        self.assignment.get(&item).copied()
    }

    pub fn n_communities(&self) -> usize {
        self.n_communities
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        self.assignment.iter().map(|(&i, &c)| (i, c))
    }

    /// Items per community id.
    pub fn community_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.n_communities];
        for &c in self.assignment.values() {
            sizes[c as usize] += 1;
        }
        sizes
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("item_index,community_id\n");
        for (item, c) in self.iter() {
            out.push_str(&format!("{item},{c}\n"));
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn read_csv(path: &Path, modularity_score: f64) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut assignment = BTreeMap::new();
        for (idx, line) in text.lines().enumerate() {
            if idx == 0 {
                if line != "item_index,community_id" {
                    return Err(Error::Format("bad community csv header".into()));
                }
                continue;
            }
            let mut parts = line.split(',');
            let item: u32 = parts
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Parse {
                    line: idx + 1,
                    msg: "bad item index".into(),
                })?;
            let c: u32 = parts
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Parse {
                    line: idx + 1,
                    msg: "bad community id".into(),
                })?;
            assignment.insert(item, c);
        }
        Ok(CommunityMap::new(assignment, modularity_score))
    }
}

/// Weighted Newman modularity of a partition.
///
/// Q = (1/2m) sum_ij [A_ij - k_i k_j / 2m] delta(c_i, c_j). Errors when the
/// graph has no edge weight (m = 0).
pub fn modularity(graph: &ItemGraph, assignment: &BTreeMap<u32, u32>) -> Result<f64> {
    let m = graph.total_weight() as f64;
    if m == 0.0 {
        return Err(Error::EmptyInput("modularity undefined on a graph with no edges".into()));
    }
    for &node in graph.nodes() {
        if !assignment.contains_key(&node) {
            return Err(Error::InvalidArgument(format!(
                "assignment misses node {node}"
            )));
        }
    }

    let two_m = 2.0 * m;
    let mut within = 0.0;
    let mut degree_sum: HashMap<u32, f64> = HashMap::new();
    for &node in graph.nodes() {
        let c = assignment[&node];
        *degree_sum.entry(c).or_insert(0.0) += graph.weighted_degree(node) as f64;
        for &(nb, w) in graph.neighbors(node) {
            if assignment[&nb] == c {
                // Each undirected in-community edge is visited from both ends.
                within += w as f64;
            }
        }
    }
    let null: f64 = degree_sum.values().map(|&d| (d / two_m).powi(2)).sum();
    Ok(within / two_m - null)
}

/// Compact working graph for the aggregation phases. Self-loop weights use
/// the adjacency-matrix convention: aggregating an in-community edge of
/// weight w adds 2w to the supernode's diagonal entry.
struct WorkGraph {
    adj: Vec<Vec<(usize, f64)>>,
    self_weight: Vec<f64>,
}

impl WorkGraph {
    fn degree(&self, v: usize) -> f64 {
        self.self_weight[v] + self.adj[v].iter().map(|&(_, w)| w).sum::<f64>()
    }

    fn n(&self) -> usize {
        self.adj.len()
    }
}

/// Louvain community detection: repeated seeded local-move phases with
/// graph aggregation until no move improves modularity. Deterministic for a
/// fixed seed; improving-move ties go to the lowest candidate community id.
pub fn louvain(graph: &ItemGraph, seed: u64) -> Result<CommunityMap> {
    if graph.n_nodes() == 0 {
        return Err(Error::EmptyInput("louvain needs a non-empty graph".into()));
    }
    let nodes = graph.nodes().to_vec();
    let index_of: HashMap<u32, usize> = nodes.iter().enumerate().map(|(i, &n)| (n, i)).collect();

    let mut work = WorkGraph {
        adj: nodes
            .iter()
            .map(|&n| {
                graph
                    .neighbors(n)
                    .iter()
                    .map(|&(nb, w)| (index_of[&nb], w as f64))
                    .collect()
            })
            .collect(),
        self_weight: vec![0.0; nodes.len()],
    };

    // Edge-less graphs have no improving move; every node stays a singleton.
    let has_edges = work.adj.iter().any(|a| !a.is_empty());

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // membership[i] = current community of original node i at the top level.
    let mut membership: Vec<usize> = (0..nodes.len()).collect();

    while has_edges {
        let (assignment, moved) = local_move_phase(&work, &mut rng);
        if !moved {
            break;
        }
        let (aggregated, relabel) = aggregate(&work, &assignment);
        for m in membership.iter_mut() {
            *m = relabel[assignment[*m]];
        }
        work = aggregated;
    }

    // Dense community ids in order of first appearance over ascending items.
    let mut dense: HashMap<usize, u32> = HashMap::new();
    let mut assignment = BTreeMap::new();
    for (i, &item) in nodes.iter().enumerate() {
        let next = dense.len() as u32;
        let id = *dense.entry(membership[i]).or_insert(next);
        assignment.insert(item, id);
    }

    let score = if has_edges {
        modularity(graph, &assignment)?
    } else {
        0.0
    };
    Ok(CommunityMap::new(assignment, score))
}

const MIN_GAIN: f64 = 1e-12;

/// One local-move phase: sweep nodes in shuffled order, moving each to the
/// neighboring community with the largest positive modularity gain, until a
/// full sweep makes no move.
fn local_move_phase(work: &WorkGraph, rng: &mut ChaCha8Rng) -> (Vec<usize>, bool) {
    let n = work.n();
    let degrees: Vec<f64> = (0..n).map(|v| work.degree(v)).collect();
    let two_m: f64 = degrees.iter().sum();
    let m = two_m / 2.0;

    let mut community: Vec<usize> = (0..n).collect();
    let mut tot: Vec<f64> = degrees.clone();
    let mut order: Vec<usize> = (0..n).collect();
    let mut moved_any = false;

    // k_{v,C} accumulator, reset sparsely after each node.
    let mut link_weight: Vec<f64> = vec![0.0; n];
    let mut touched: Vec<usize> = Vec::new();

    loop {
        let mut moved_this_pass = false;
        order.shuffle(rng);
        for &v in &order {
            let c0 = community[v];
            let k_v = degrees[v];

            touched.clear();
            for &(nb, w) in &work.adj[v] {
                let c = community[nb];
                if link_weight[c] == 0.0 {
                    touched.push(c);
                }
                link_weight[c] += w;
            }
            if !touched.contains(&c0) {
                touched.push(c0);
            }
            touched.sort_unstable();

            // Gains are insertion gains with v taken out of its community.
            tot[c0] -= k_v;
            let gain = |c: usize| link_weight[c] / m - k_v * tot[c] / (2.0 * m * m);
            let stay_gain = gain(c0);

            let mut best_c = c0;
            let mut best_gain = stay_gain;
            for &c in &touched {
                let g = gain(c);
                if g > best_gain + MIN_GAIN {
                    best_gain = g;
                    best_c = c;
                } else if best_c != c0 && (g - best_gain).abs() <= MIN_GAIN && c < best_c {
                    best_c = c;
                }
            }

            tot[best_c] += k_v;
            if best_c != c0 {
                community[v] = best_c;
                moved_this_pass = true;
                moved_any = true;
            }

            for &c in &touched {
                link_weight[c] = 0.0;
            }
        }
        if !moved_this_pass {
            break;
        }
    }
    (community, moved_any)
}

/// Collapse communities into supernodes. Returns the new graph and the map
/// from old community id to new node index (dense, ascending).
fn aggregate(work: &WorkGraph, assignment: &[usize]) -> (WorkGraph, Vec<usize>) {
    let mut relabel = vec![usize::MAX; work.n()];
    let mut used: Vec<usize> = assignment.to_vec();
    used.sort_unstable();
    used.dedup();
    for (new, &old) in used.iter().enumerate() {
        relabel[old] = new;
    }
    let n_new = used.len();

    let mut self_weight = vec![0.0; n_new];
    let mut edge_acc: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for v in 0..work.n() {
        let cv = relabel[assignment[v]];
        self_weight[cv] += work.self_weight[v];
        for &(nb, w) in &work.adj[v] {
            let cn = relabel[assignment[nb]];
            if cv == cn {
                // Visited from both endpoints, so this sums to 2w total.
                self_weight[cv] += w;
            } else if cv < cn {
                *edge_acc.entry((cv, cn)).or_insert(0.0) += w;
            }
        }
    }

    let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n_new];
    for (&(a, b), &w) in &edge_acc {
        adj[a].push((b, w));
        adj[b].push((a, w));
    }
    for list in adj.iter_mut() {
        list.sort_unstable_by(|a, b| a.0.cmp(&b.0));
    }
    (WorkGraph { adj, self_weight }, relabel)
}

/// Normalized mutual information between two label vectors (arithmetic-mean
/// normalization, natural log). Both inputs must align element-wise.
pub fn normalized_mutual_information(a: &[u32], b: &[u32]) -> f64 {
    assert_eq!(a.len(), b.len(), "label vectors must align");
    assert!(!a.is_empty(), "label vectors must be non-empty");
    let n = a.len() as f64;

    let mut count_a: HashMap<u32, f64> = HashMap::new();
    let mut count_b: HashMap<u32, f64> = HashMap::new();
    let mut joint: HashMap<(u32, u32), f64> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *count_a.entry(x).or_insert(0.0) += 1.0;
        *count_b.entry(y).or_insert(0.0) += 1.0;
        *joint.entry((x, y)).or_insert(0.0) += 1.0;
    }
    if count_a.len() == 1 && count_b.len() == 1 {
        return 1.0;
    }

    let entropy = |counts: &HashMap<u32, f64>| -> f64 {
        counts
            .values()
            .map(|&c| {
                let p = c / n;
                -p * p.ln()
            })
            .sum()
    };
    let h_a = entropy(&count_a);
    let h_b = entropy(&count_b);

    let mut mi = 0.0;
    for (&(x, y), &c) in &joint {
        let p_xy = c / n;
        let p_x = count_a[&x] / n;
        let p_y = count_b[&y] / n;
        mi += p_xy * (p_xy / (p_x * p_y)).ln();
    }
    (2.0 * mi / (h_a + h_b)).clamp(0.0, 1.0)
}

/// One row of the degree-threshold sweep. Thresholds that leave no items
/// produce a flagged-empty row with no statistics.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct SweepRow {
    pub min_item_degree: u64,
    pub n_items: usize,
    pub modularity: Option<f64>,
    pub median_community_size: Option<f64>,
    pub n_communities: Option<usize>,
}

/// Filter, project, and partition at each threshold; thresholds must be
/// sorted ascending.
pub fn community_sweep(
    records: &[SplitRecord],
    thresholds: &[u64],
    weighting: ProjectionWeighting,
    seed: u64,
) -> Result<Vec<SweepRow>> {
    if thresholds.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidArgument(
            "sweep thresholds must be sorted ascending".into(),
        ));
    }
    let graph = BipartiteGraph::from_records(records);
    let mut rows = Vec::with_capacity(thresholds.len());
    for &t in thresholds {
        let filtered = degree_filter(&graph, t);
        let n_items = filtered.n_items();
        if n_items == 0 {
            rows.push(SweepRow {
                min_item_degree: t,
                n_items: 0,
                modularity: None,
                median_community_size: None,
                n_communities: None,
            });
            continue;
        }
        let projected = project_items(&filtered, weighting);
        let map = louvain(&projected, stream_seed(seed, &format!("louvain-{t}")))?;
        let mut sizes = map.community_sizes();
        sizes.sort_unstable();
        let median = if sizes.len() % 2 == 1 {
            sizes[sizes.len() / 2] as f64
        } else {
            (sizes[sizes.len() / 2 - 1] + sizes[sizes.len() / 2]) as f64 / 2.0
        };
        rows.push(SweepRow {
            min_item_degree: t,
            n_items,
            modularity: Some(map.modularity_score),
            median_community_size: Some(median),
            n_communities: Some(map.n_communities()),
        });
    }
    Ok(rows)
}

pub fn write_sweep_csv(rows: &[SweepRow], path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(
        f,
        "min_item_degree,n_items,modularity,median_community_size,n_communities"
    )?;
    for r in rows {
        writeln!(
            f,
            "{},{},{},{},{}",
            r.min_item_degree,
            r.n_items,
            r.modularity.map(|v| v.to_string()).unwrap_or_default(),
            r.median_community_size.map(|v| v.to_string()).unwrap_or_default(),
            r.n_communities.map(|v| v.to_string()).unwrap_or_default(),
        )?;
    }
    Ok(())
}

/// Per-community size and weighted-degree mass on the projected graph.
pub fn community_size_report(map: &CommunityMap, graph: &ItemGraph) -> Vec<(u32, usize, u64)> {
    let mut rows: BTreeMap<u32, (usize, u64)> = BTreeMap::new();
    for (item, c) in map.iter() {
        let entry = rows.entry(c).or_insert((0, 0));
        entry.0 += 1;
        entry.1 += graph.weighted_degree(item);
    }
    rows.into_iter().map(|(c, (n, d))| (c, n, d)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::Split;
    use proptest::prelude::*;

    fn sr(user: u32, item: u32) -> SplitRecord {
        SplitRecord {
            user,
            item,
            time_start: 0,
            time_stop: 1,
            split: Split::Train,
        }
    }

    #[test]
    fn bipartite_counts_interactions() {
        let g = BipartiteGraph::from_records(&[sr(0, 1), sr(0, 1), sr(0, 2)]);
        assert_eq!(g.edge_weight(0, 1), Some(2));
        assert_eq!(g.edge_weight(0, 2), Some(1));
        assert_eq!(g.n_edges(), 2);
        let empty = BipartiteGraph::from_records(&[]);
        assert_eq!(empty.n_edges(), 0);
        assert_eq!(empty.n_items(), 0);
    }

    #[test]
    fn degree_filter_uses_weighted_degree() {
        // Item 1 has two edges of weights 60 and 50: weighted degree 110.
        let mut pairs = Vec::new();
        for _ in 0..60 {
            pairs.push((0, 1));
        }
        for _ in 0..50 {
            pairs.push((1, 1));
        }
        pairs.push((0, 2));
        let g = BipartiteGraph::from_pairs(pairs);
        let filtered = degree_filter(&g, 100);
        assert_eq!(filtered.items(), vec![1]);
        assert_eq!(filtered.edge_weight(0, 1), Some(60));
    }

    #[test]
    fn degree_filter_zero_threshold_is_identity_and_idempotent() {
        let g = BipartiteGraph::from_pairs([(0, 1), (0, 2), (1, 2), (1, 2)]);
        assert_eq!(degree_filter(&g, 0), g);
        let once = degree_filter(&g, 2);
        let twice = degree_filter(&once, 2);
        assert_eq!(once, twice);
    }

    #[test]
    fn projection_sums_shared_edge_weights() {
        let g = BipartiteGraph::from_pairs([(0, 1), (0, 1), (0, 2)]);
        let p = project_items(&g, ProjectionWeighting::SharedSum);
        assert_eq!(p.neighbors(1), &[(2, 3)]);
        assert_eq!(p.neighbors(2), &[(1, 3)]);
    }

    #[test]
    fn projection_accumulates_over_shared_users() {
        // u0: i1 w1, i2 w1; u1: i1 w2, i2 w1 -> weight 1+1 + 2+1 = 5.
        let g = BipartiteGraph::from_pairs([(0, 1), (0, 2), (1, 1), (1, 1), (1, 2)]);
        let p = project_items(&g, ProjectionWeighting::SharedSum);
        assert_eq!(p.neighbors(1), &[(2, 5)]);
        let pc = project_items(&g, ProjectionWeighting::SharedCount);
        assert_eq!(pc.neighbors(1), &[(2, 2)]);
        let pm = project_items(&g, ProjectionWeighting::SharedMin);
        assert_eq!(pm.neighbors(1), &[(2, 2)]);
    }

    #[test]
    fn projection_disjoint_users_no_edge() {
        let g = BipartiteGraph::from_pairs([(0, 1), (1, 2)]);
        let p = project_items(&g, ProjectionWeighting::SharedSum);
        assert!(p.neighbors(1).is_empty());
        assert!(p.neighbors(2).is_empty());
        assert_eq!(p.n_nodes(), 2);
    }

    fn two_disconnected_edges() -> ItemGraph {
        ItemGraph::from_edges(&[], &[(1, 2, 1), (3, 4, 1)]).unwrap()
    }

    #[test]
    fn modularity_reference_partitions() {
        let g = two_disconnected_edges();
        let paired: BTreeMap<u32, u32> = [(1, 0), (2, 0), (3, 1), (4, 1)].into();
        assert!((modularity(&g, &paired).unwrap() - 0.5).abs() < 1e-15);
        let crossed: BTreeMap<u32, u32> = [(1, 0), (2, 1), (3, 0), (4, 1)].into();
        assert!((modularity(&g, &crossed).unwrap() + 0.5).abs() < 1e-15);
        let one: BTreeMap<u32, u32> = [(1, 0), (2, 0), (3, 0), (4, 0)].into();
        assert!(modularity(&g, &one).unwrap().abs() < 1e-15);
    }

    #[test]
    fn modularity_errors_on_empty_graph_or_partial_assignment() {
        let empty = ItemGraph::from_edges(&[1, 2], &[]).unwrap();
        assert!(modularity(&empty, &BTreeMap::from([(1, 0), (2, 0)])).is_err());
        let g = two_disconnected_edges();
        assert!(modularity(&g, &BTreeMap::from([(1, 0)])).is_err());
    }

    fn two_triangles() -> ItemGraph {
        ItemGraph::from_edges(
            &[],
            &[
                (1, 2, 1),
                (2, 3, 1),
                (1, 3, 1),
                (4, 5, 1),
                (5, 6, 1),
                (4, 6, 1),
            ],
        )
        .unwrap()
    }

    #[test]
    fn louvain_finds_triangle_communities() {
        let g = two_triangles();
        for seed in 0..5 {
            let map = louvain(&g, seed).unwrap();
            assert_eq!(map.n_communities(), 2);
            assert_eq!(map.community_of(1), map.community_of(2));
            assert_eq!(map.community_of(2), map.community_of(3));
            assert_eq!(map.community_of(4), map.community_of(5));
            assert_ne!(map.community_of(1), map.community_of(4));
            assert!((map.modularity_score - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn louvain_merges_single_edge() {
        let g = ItemGraph::from_edges(&[], &[(1, 2, 1)]).unwrap();
        let map = louvain(&g, 0).unwrap();
        // One community at Q = 0 beats two singletons at Q = -0.5.
        assert_eq!(map.n_communities(), 1);
        assert!(map.modularity_score.abs() < 1e-15);
    }

    #[test]
    fn louvain_isolated_nodes_become_singletons() {
        let g = ItemGraph::from_edges(&[7, 9], &[(1, 2, 3)]).unwrap();
        let map = louvain(&g, 1).unwrap();
        assert_eq!(map.community_of(1), map.community_of(2));
        assert_ne!(map.community_of(7), map.community_of(9));
        assert_ne!(map.community_of(7), map.community_of(1));
        assert_eq!(map.len(), 4);
    }

    #[test]
    fn louvain_edgeless_graph_is_all_singletons() {
        let g = ItemGraph::from_edges(&[1, 2, 3], &[]).unwrap();
        let map = louvain(&g, 0).unwrap();
        assert_eq!(map.n_communities(), 3);
        assert_eq!(map.modularity_score, 0.0);
    }

    #[test]
    fn louvain_deterministic_given_seed() {
        let g = planted_graph(4, 10, 42);
        let a = louvain(&g, 7).unwrap();
        let b = louvain(&g, 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn louvain_score_matches_recomputed_modularity() {
        let g = planted_graph(3, 8, 5);
        let map = louvain(&g, 3).unwrap();
        let assignment: BTreeMap<u32, u32> = map.iter().collect();
        let q = modularity(&g, &assignment).unwrap();
        assert!((q - map.modularity_score).abs() < 1e-9);
    }

    /// Dense blocks with a sparse ring of cross-block edges.
    fn planted_graph(blocks: u32, block_size: u32, seed: u64) -> ItemGraph {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut edges = Vec::new();
        for b in 0..blocks {
            let base = b * block_size + 1;
            for i in 0..block_size {
                for j in i + 1..block_size {
                    if rng.gen::<f64>() < 0.9 {
                        edges.push((base + i, base + j, 1u64));
                    }
                }
            }
        }
        // A couple of weak bridges between consecutive blocks.
        for b in 0..blocks {
            let here = b * block_size + 1;
            let there = ((b + 1) % blocks) * block_size + 1;
            edges.push((here, there, 1));
        }
        ItemGraph::from_edges(&[], &edges).unwrap()
    }

    #[test]
    fn louvain_recovers_planted_blocks() {
        let blocks = 4u32;
        let size = 10u32;
        let g = planted_graph(blocks, size, 11);
        let map = louvain(&g, 2).unwrap();
        let truth: Vec<u32> = (0..blocks * size).map(|i| i / size).collect();
        let found: Vec<u32> = (0..blocks * size)
            .map(|i| map.community_of(i + 1).unwrap())
            .collect();
        let nmi = normalized_mutual_information(&truth, &found);
        assert!(nmi >= 0.9, "nmi = {nmi}");
    }

    #[test]
    fn nmi_bounds_and_identity() {
        let a = vec![0, 0, 1, 1, 2, 2];
        assert_eq!(normalized_mutual_information(&a, &a), 1.0);
        // Renaming labels keeps NMI at 1.
        let renamed = vec![5, 5, 9, 9, 7, 7];
        assert_eq!(normalized_mutual_information(&a, &renamed), 1.0);
        let b = vec![0, 1, 0, 1, 0, 1];
        let v = normalized_mutual_information(&a, &b);
        assert!((0.0..1.0).contains(&v));
        assert_eq!(normalized_mutual_information(&[0, 0], &[0, 0]), 1.0);
    }

    #[test]
    fn sweep_single_threshold_matches_direct_pipeline() {
        let records: Vec<SplitRecord> = vec![
            sr(0, 1),
            sr(0, 2),
            sr(1, 1),
            sr(1, 2),
            sr(2, 3),
            sr(2, 4),
            sr(3, 3),
            sr(3, 4),
        ];
        let rows = community_sweep(&records, &[0], ProjectionWeighting::SharedSum, 9).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].n_items, 4);

        let g = BipartiteGraph::from_records(&records);
        let p = project_items(&degree_filter(&g, 0), ProjectionWeighting::SharedSum);
        let map = louvain(&p, stream_seed(9, "louvain-0")).unwrap();
        assert_eq!(rows[0].modularity, Some(map.modularity_score));
        assert_eq!(rows[0].n_communities, Some(map.n_communities()));
    }

    #[test]
    fn sweep_item_counts_non_increasing_and_empty_rows_flagged() {
        let mut records = Vec::new();
        for u in 0..6u32 {
            for i in 0..6u32 {
                if (u + i) % 2 == 0 {
                    records.push(sr(u, i + 1));
                    records.push(sr(u, i + 1));
                }
            }
        }
        let rows =
            community_sweep(&records, &[0, 2, 4, 1000], ProjectionWeighting::SharedSum, 1).unwrap();
        for w in rows.windows(2) {
            assert!(w[0].n_items >= w[1].n_items);
        }
        let last = rows.last().unwrap();
        assert_eq!(last.n_items, 0);
        assert_eq!(last.modularity, None);

        assert!(community_sweep(&records, &[2, 1], ProjectionWeighting::SharedSum, 1).is_err());
    }

    #[test]
    fn community_map_csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("map.csv");
        let map = CommunityMap::new(BTreeMap::from([(1, 0), (2, 0), (5, 1)]), 0.25);
        map.write_csv(&path).unwrap();
        let back = CommunityMap::read_csv(&path, 0.25).unwrap();
        assert_eq!(map, back);
    }

    proptest! {
        #[test]
        fn projection_is_symmetric(seed in 0u64..200) {
            use rand::Rng;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pairs: Vec<(u32, u32)> = (0..60)
                .map(|_| (rng.gen_range(0..6u32), rng.gen_range(1..8u32)))
                .collect();
            let g = BipartiteGraph::from_pairs(pairs);
            let p = project_items(&g, ProjectionWeighting::SharedSum);
            for &a in p.nodes() {
                for &(b, w) in p.neighbors(a) {
                    let back = p.neighbors(b).iter().find(|&&(x, _)| x == a);
                    prop_assert_eq!(back, Some(&(a, w)));
                }
            }
        }

        #[test]
        fn random_partition_modularity_in_range(seed in 0u64..200) {
            use rand::Rng;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.gen_range(2..10u32);
            let mut edges = Vec::new();
            for i in 1..=n {
                for j in i + 1..=n {
                    if rng.gen::<f64>() < 0.5 {
                        edges.push((i, j, rng.gen_range(1..5u64)));
                    }
                }
            }
            prop_assume!(!edges.is_empty());
            let g = ItemGraph::from_edges(&[], &edges).unwrap();
            let assignment: BTreeMap<u32, u32> = g
                .nodes()
                .iter()
                .map(|&v| (v, rng.gen_range(0..4u32)))
                .collect();
            let q = modularity(&g, &assignment).unwrap();
            prop_assert!((-0.5..=1.0).contains(&q), "q = {}", q);
        }

        #[test]
        fn louvain_never_below_singleton_partition(seed in 0u64..50) {
            use rand::Rng;
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
            let n = rng.gen_range(3..12u32);
            let mut edges = Vec::new();
            for i in 1..=n {
                for j in i + 1..=n {
                    if rng.gen::<f64>() < 0.4 {
                        edges.push((i, j, rng.gen_range(1..4u64)));
                    }
                }
            }
            prop_assume!(!edges.is_empty());
            let g = ItemGraph::from_edges(&[], &edges).unwrap();
            let map = louvain(&g, seed).unwrap();
            let singletons: BTreeMap<u32, u32> = g
                .nodes()
                .iter()
                .enumerate()
                .map(|(c, &v)| (v, c as u32))
                .collect();
            let q_single = modularity(&g, &singletons).unwrap();
            prop_assert!(map.modularity_score >= q_single - 1e-12);
        }
    }
}
