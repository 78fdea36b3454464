//! Node-level features of a binary scout graph.
//!
//! Five centralities per node, concatenated into one vector per epoch in the
//! order degree, betweenness, eigenvector, closeness, clustering. The
//! conventions follow the common network toolkits:
//!
//! * betweenness counts unordered source/target pairs and is scaled by
//!   `2 / ((N-1)(N-2))`;
//! * clustering is `2T / (deg (deg - 1))`, zero below degree two;
//! * closeness is scaled by the reachable fraction of the graph, so an
//!   isolated node scores zero.

use std::collections::VecDeque;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::connectivity::ConnectivityPair;
use crate::dataio::{Group, Stimulus};
use crate::error::{Error, Result};

/// Features per node.
pub const FEATURES_PER_NODE: usize = 5;

pub const FEATURE_KINDS: [&str; FEATURES_PER_NODE] = [
    "degree",
    "betweenness",
    "eigenvector",
    "closeness",
    "clustering",
];

const EIG_TOL: f64 = 1e-10;
const EIG_MAX_ITER: usize = 10_000;

/// Undirected simple graph over named nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    n: usize,
    adj: DMatrix<u8>,
    node_names: Vec<String>,
    nbrs: Vec<Vec<usize>>,
}

impl Graph {
    /// Validates symmetry, a zero diagonal and 0/1 entries.
    pub fn new(adj: DMatrix<u8>, node_names: Vec<String>) -> Result<Self> {
        let n = adj.nrows();
        if adj.ncols() != n {
            return Err(Error::ShapeMismatch(format!(
                "adjacency is {}x{}",
                adj.nrows(),
                adj.ncols()
            )));
        }
        if node_names.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "{} node names for {n} nodes",
                node_names.len()
            )));
        }
        for i in 0..n {
            if adj[(i, i)] != 0 {
                return Err(Error::InvalidInput(format!("self-loop at node {i}")));
            }
            for j in 0..i {
                let v = adj[(i, j)];
                if v > 1 || v != adj[(j, i)] {
                    return Err(Error::InvalidInput(format!(
                        "adjacency must be symmetric 0/1, entry ({i}, {j})"
                    )));
                }
            }
        }
        let nbrs = (0..n)
            .map(|i| (0..n).filter(|&j| adj[(i, j)] == 1).collect())
            .collect();
        Ok(Self {
            n,
            adj,
            node_names,
            nbrs,
        })
    }

    /// Graph with nodes named `0..n` from an edge list.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut adj = DMatrix::<u8>::zeros(n, n);
        for &(a, b) in edges {
            if a >= n || b >= n || a == b {
                return Err(Error::InvalidInput(format!("bad edge ({a}, {b})")));
            }
            adj[(a, b)] = 1;
            adj[(b, a)] = 1;
        }
        Self::new(adj, (0..n).map(|i| i.to_string()).collect())
    }

    /// The binary graph of a thresholded connectivity pair.
    pub fn from_pair(cp: &ConnectivityPair, node_names: Vec<String>) -> Result<Self> {
        let a = cp
            .a_bin
            .clone()
            .ok_or_else(|| Error::MissingInput("connectivity has not been thresholded".into()))?;
        Self::new(a, node_names)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn adj(&self) -> &DMatrix<u8> {
        &self.adj
    }

    pub fn node_names(&self) -> &[String] {
        &self.node_names
    }

    pub fn neighbors(&self, u: usize) -> &[usize] {
        &self.nbrs[u]
    }

    pub fn degree(&self, u: usize) -> usize {
        self.nbrs[u].len()
    }

    pub fn edge_count(&self) -> usize {
        self.nbrs.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Number of connected components that contain at least one edge.
    pub fn nontrivial_components(&self) -> usize {
        let mut seen = vec![false; self.n];
        let mut count = 0;
        for s in 0..self.n {
            if seen[s] || self.nbrs[s].is_empty() {
                continue;
            }
            count += 1;
            seen[s] = true;
            let mut stack = vec![s];
            while let Some(u) = stack.pop() {
                for &w in &self.nbrs[u] {
                    if !seen[w] {
                        seen[w] = true;
                        stack.push(w);
                    }
                }
            }
        }
        count
    }

    /// BFS hop distances from `s`; `None` where unreachable.
    fn distances(&self, s: usize) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.n];
        dist[s] = Some(0);
        let mut queue = VecDeque::from([s]);
        while let Some(u) = queue.pop_front() {
            let du = dist[u].expect("queued nodes are reached");
            for &w in &self.nbrs[u] {
                if dist[w].is_none() {
                    dist[w] = Some(du + 1);
                    queue.push_back(w);
                }
            }
        }
        dist
    }
}

fn require_nodes(g: &Graph, required: usize) -> Result<()> {
    if g.n < required {
        return Err(Error::TooFewNodes {
            found: g.n,
            required,
        });
    }
    Ok(())
}

/// `deg(u) / (N - 1)`.
pub fn degree_centrality(g: &Graph) -> Result<Vec<f64>> {
    require_nodes(g, 2)?;
    let scale = 1.0 / (g.n - 1) as f64;
    Ok((0..g.n).map(|u| g.degree(u) as f64 * scale).collect())
}

/// Normalised shortest-path betweenness (Brandes' accumulation).
pub fn betweenness_centrality(g: &Graph) -> Result<Vec<f64>> {
    require_nodes(g, 3)?;
    let n = g.n;
    let mut cb = vec![0.0; n];
    let mut sigma = vec![0.0f64; n];
    let mut dist = vec![usize::MAX; n];
    let mut delta = vec![0.0f64; n];
    let mut preds: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut order = Vec::with_capacity(n);
    let mut queue = VecDeque::with_capacity(n);
    for s in 0..n {
        sigma.fill(0.0);
        dist.fill(usize::MAX);
        delta.fill(0.0);
        preds.iter_mut().for_each(Vec::clear);
        order.clear();
        sigma[s] = 1.0;
        dist[s] = 0;
        queue.push_back(s);
        while let Some(u) = queue.pop_front() {
            order.push(u);
            for &w in &g.nbrs[u] {
                if dist[w] == usize::MAX {
                    dist[w] = dist[u] + 1;
                    queue.push_back(w);
                }
                if dist[w] == dist[u] + 1 {
                    sigma[w] += sigma[u];
                    preds[w].push(u);
                }
            }
        }
        for &w in order.iter().rev() {
            for &v in &preds[w] {
                delta[v] += sigma[v] / sigma[w] * (1.0 + delta[w]);
            }
            if w != s {
                cb[w] += delta[w];
            }
        }
    }
    // each unordered pair was visited from both ends
    let scale = 0.5 * 2.0 / ((n - 1) * (n - 2)) as f64;
    Ok(cb.into_iter().map(|v| v * scale).collect())
}

/// Dominant eigenvector of the adjacency, unit Euclidean norm.
///
/// Power iteration runs on `A + I`, which shares the eigenvectors of `A` but
/// cannot oscillate on bipartite graphs. Starting from the uniform vector,
/// the result on a disconnected graph is the normalised projection of that
/// vector onto the dominant eigenspace. Zero-degree nodes score zero.
pub fn eigenvector_centrality(g: &Graph) -> Result<Vec<f64>> {
    let (e, disconnected) = eigenvector_inner(g)?;
    if disconnected {
        log::warn!("eigenvector centrality on a disconnected graph; uniform-start projection used");
    }
    Ok(e)
}

fn eigenvector_inner(g: &Graph) -> Result<(Vec<f64>, bool)> {
    if g.edge_count() == 0 {
        return Err(Error::NoEdges);
    }
    let n = g.n;
    let mut x = vec![1.0 / (n as f64).sqrt(); n];
    let mut next = vec![0.0; n];
    let mut converged = false;
    for _ in 0..EIG_MAX_ITER {
        for u in 0..n {
            next[u] = x[u] + g.nbrs[u].iter().map(|&w| x[w]).sum::<f64>();
        }
        let norm = next.iter().map(|v| v * v).sum::<f64>().sqrt();
        next.iter_mut().for_each(|v| *v /= norm);
        let diff = x
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        std::mem::swap(&mut x, &mut next);
        if diff < EIG_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("eigenvector centrality stopped after {EIG_MAX_ITER} iterations");
    }
    for (xu, nb) in x.iter_mut().zip(&g.nbrs) {
        if nb.is_empty() {
            *xu = 0.0;
        }
    }
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    x.iter_mut().for_each(|v| *v = (*v / norm).max(0.0));
    Ok((x, g.nontrivial_components() > 1))
}

/// Inverse mean distance to the reachable nodes, scaled by the reachable
/// fraction `(n_u - 1) / (N - 1)`.
pub fn closeness_centrality(g: &Graph) -> Result<Vec<f64>> {
    require_nodes(g, 2)?;
    let n = g.n;
    Ok((0..n)
        .map(|u| {
            let d = g.distances(u);
            let reach = d.iter().flatten().count();
            let total: usize = d.iter().flatten().sum();
            if total == 0 {
                0.0
            } else {
                let r = (reach - 1) as f64;
                r / total as f64 * r / (n - 1) as f64
            }
        })
        .collect())
}

/// Local clustering coefficient.
pub fn clustering_coefficient(g: &Graph) -> Vec<f64> {
    (0..g.n)
        .map(|u| {
            let nb = &g.nbrs[u];
            let k = nb.len();
            if k < 2 {
                return 0.0;
            }
            let mut tri = 0usize;
            for (i, &a) in nb.iter().enumerate() {
                tri += nb[i + 1..].iter().filter(|&&b| g.adj[(a, b)] == 1).count();
            }
            2.0 * tri as f64 / (k * (k - 1)) as f64
        })
        .collect()
}

/// One example's concatenated node features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    /// `5n` values: degree, betweenness, eigenvector, closeness, clustering,
    /// each in node order.
    pub values: Vec<f64>,
    pub group: Option<Group>,
    pub stimulus: Option<Stimulus>,
    pub subject_id: Option<String>,
    /// The graph had no edges; eigenvector entries were zero-filled.
    pub edgeless: bool,
    /// More than one component carried edges.
    pub disconnected: bool,
}

impl FeatureVector {
    pub fn with_labels(mut self, group: Group, stimulus: Stimulus, subject_id: &str) -> Self {
        self.group = Some(group);
        self.stimulus = Some(stimulus);
        self.subject_id = Some(subject_id.to_string());
        self
    }

    pub fn n_nodes(&self) -> usize {
        self.values.len() / FEATURES_PER_NODE
    }

    /// Values of feature `kind` (index into [`FEATURE_KINDS`]).
    pub fn block(&self, kind: usize) -> &[f64] {
        let n = self.n_nodes();
        &self.values[kind * n..(kind + 1) * n]
    }
}

/// Column names `"<feature>:<node>"` matching [`FeatureVector::values`].
pub fn feature_names(node_names: &[String]) -> Vec<String> {
    FEATURE_KINDS
        .iter()
        .flat_map(|k| node_names.iter().map(move |n| format!("{k}:{n}")))
        .collect()
}

/// All five features of `g`, unlabelled.
///
/// Warnings for edgeless or disconnected graphs are not logged here; they
/// are carried on the result so callers can report them once per batch.
pub fn assemble_features(g: &Graph) -> Result<FeatureVector> {
    let n = g.n;
    let mut values = Vec::with_capacity(FEATURES_PER_NODE * n);
    values.extend(degree_centrality(g)?);
    values.extend(betweenness_centrality(g)?);
    let (eig, edgeless, disconnected) = match eigenvector_inner(g) {
        Ok((e, d)) => (e, false, d),
        Err(Error::NoEdges) => (vec![0.0; n], true, false),
        Err(e) => return Err(e),
    };
    values.extend(eig);
    values.extend(closeness_centrality(g)?);
    values.extend(clustering_coefficient(g));
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteValue(format!("feature {i}")));
    }
    Ok(FeatureVector {
        values,
        group: None,
        stimulus: None,
        subject_id: None,
        edgeless,
        disconnected,
    })
}

/// Features for many graphs in parallel, in input order.
pub fn assemble_all(graphs: &[Graph]) -> Result<Vec<FeatureVector>> {
    let out: Vec<FeatureVector> = graphs
        .par_iter()
        .map(assemble_features)
        .collect::<Result<_>>()?;
    let edgeless = out.iter().filter(|f| f.edgeless).count();
    let disconnected = out.iter().filter(|f| f.disconnected).count();
    if edgeless > 0 {
        log::info!("{edgeless} of {} graphs had no edges", out.len());
    }
    if disconnected > 0 {
        log::info!(
            "{disconnected} of {} graphs were disconnected; eigenvector centrality uses the uniform-start projection",
            out.len()
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn complete(n: usize) -> Graph {
        let edges: Vec<_> = (0..n)
            .flat_map(|a| (a + 1..n).map(move |b| (a, b)))
            .collect();
        Graph::from_edges(n, &edges).unwrap()
    }

    fn star(leaves: usize) -> Graph {
        let edges: Vec<_> = (1..=leaves).map(|l| (0, l)).collect();
        Graph::from_edges(leaves + 1, &edges).unwrap()
    }

    fn path3() -> Graph {
        Graph::from_edges(3, &[(0, 1), (1, 2)]).unwrap()
    }

    #[test]
    fn rejects_asymmetric_and_self_loops() {
        let mut a = DMatrix::<u8>::zeros(3, 3);
        a[(0, 1)] = 1;
        assert!(Graph::new(a.clone(), vec!["a".into(), "b".into(), "c".into()]).is_err());
        a[(1, 0)] = 1;
        a[(2, 2)] = 1;
        assert!(Graph::new(a, vec!["a".into(), "b".into(), "c".into()]).is_err());
    }

    #[test]
    fn degree_examples() {
        assert!(degree_centrality(&complete(5))
            .unwrap()
            .iter()
            .all(|&v| v == 1.0));
        assert_eq!(degree_centrality(&path3()).unwrap(), vec![0.5, 1.0, 0.5]);
        let g = Graph::from_edges(3, &[(0, 1)]).unwrap();
        assert_eq!(degree_centrality(&g).unwrap()[2], 0.0);
        assert!(matches!(
            degree_centrality(&Graph::from_edges(1, &[]).unwrap()),
            Err(Error::TooFewNodes { .. })
        ));
    }

    #[test]
    fn betweenness_examples() {
        let b = betweenness_centrality(&star(4)).unwrap();
        assert_abs_diff_eq!(b[0], 1.0, epsilon = 1e-12);
        assert!(b[1..].iter().all(|&v| v == 0.0));
        assert!(betweenness_centrality(&complete(6))
            .unwrap()
            .iter()
            .all(|&v| v == 0.0));
        // P3 middle node carries the single (0, 2) pair: 1 · 2/(2·1) = 1
        assert_abs_diff_eq!(betweenness_centrality(&path3()).unwrap()[1], 1.0);
        // C4: each node lies on one of two shortest paths of the opposite pair
        let c4 = Graph::from_edges(4, &[(0, 1), (1, 2), (2, 3), (3, 0)]).unwrap();
        for v in betweenness_centrality(&c4).unwrap() {
            assert_abs_diff_eq!(v, 0.5 * 2.0 / 6.0, epsilon = 1e-12);
        }
        assert!(betweenness_centrality(&Graph::from_edges(2, &[(0, 1)]).unwrap()).is_err());
    }

    #[test]
    fn eigenvector_examples() {
        for v in eigenvector_centrality(&complete(4)).unwrap() {
            assert_abs_diff_eq!(v, 0.5, epsilon = 1e-9);
        }
        let e = eigenvector_centrality(&star(4)).unwrap();
        assert_abs_diff_eq!(e[0] / e[1], 2.0, epsilon = 1e-8);
        let norm: f64 = e.iter().map(|v| v * v).sum();
        assert_abs_diff_eq!(norm, 1.0, epsilon = 1e-12);
        assert!(matches!(
            eigenvector_centrality(&Graph::from_edges(3, &[]).unwrap()),
            Err(Error::NoEdges)
        ));
    }

    #[test]
    fn eigenvector_on_two_disjoint_edges_is_deterministic() {
        let g = Graph::from_edges(4, &[(0, 1), (2, 3)]).unwrap();
        let (e, disconnected) = eigenvector_inner(&g).unwrap();
        assert!(disconnected);
        for v in &e {
            assert_abs_diff_eq!(*v, 0.5, epsilon = 1e-9);
        }
        assert_eq!(e, eigenvector_centrality(&g).unwrap());
    }

    #[test]
    fn eigenvector_zero_for_isolated_nodes() {
        let g = Graph::from_edges(4, &[(0, 1), (1, 2), (0, 2)]).unwrap();
        let e = eigenvector_centrality(&g).unwrap();
        assert_eq!(e[3], 0.0);
        assert_abs_diff_eq!(e[0], 1.0 / 3f64.sqrt(), epsilon = 1e-9);
    }

    #[test]
    fn closeness_examples() {
        assert_abs_diff_eq!(closeness_centrality(&star(4)).unwrap()[0], 1.0);
        let c = closeness_centrality(&path3()).unwrap();
        assert_abs_diff_eq!(c[0], 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(c[1], 1.0, epsilon = 1e-15);
        let g = Graph::from_edges(3, &[(0, 1)]).unwrap();
        let c = closeness_centrality(&g).unwrap();
        assert_eq!(c[2], 0.0);
        // one reachable node out of two others: 1/1 · 1/2
        assert_abs_diff_eq!(c[0], 0.5);
    }

    #[test]
    fn clustering_examples() {
        assert!(clustering_coefficient(&complete(3))
            .iter()
            .all(|&v| v == 1.0));
        assert_eq!(clustering_coefficient(&star(4))[0], 0.0);
        // K4 minus edge (0, 1)
        let g = Graph::from_edges(4, &[(0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]).unwrap();
        let c = clustering_coefficient(&g);
        assert_abs_diff_eq!(c[0], 1.0);
        assert_abs_diff_eq!(c[2], 2.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn assembled_vector_layout() {
        let names: Vec<String> = (0..62).map(|i| format!("s{i}")).collect();
        let g = complete(62);
        let g = Graph::new(g.adj().clone(), names.clone()).unwrap();
        let f = assemble_features(&g).unwrap();
        assert_eq!(f.values.len(), 310);
        assert!(f.block(0).iter().all(|&v| v == 1.0));
        assert!(f.block(1).iter().all(|&v| v == 0.0));
        assert!(f.block(4).iter().all(|&v| v == 1.0));
        assert_eq!(feature_names(&names)[62], "betweenness:s0");
    }

    #[test]
    fn edgeless_graph_gives_zero_features() {
        let f = assemble_features(&Graph::from_edges(6, &[]).unwrap()).unwrap();
        assert!(f.edgeless);
        assert!(f.values.iter().all(|&v| v == 0.0));
    }
}
