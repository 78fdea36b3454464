//! Brute-force reference implementations used to check the fast paths.
#![allow(dead_code)]

use nalgebra::{DMatrix, SymmetricEigen};

pub type Adj = Vec<Vec<bool>>;

pub fn adj_of(g: &cortigraph::graphfeat::Graph) -> Adj {
    let n = g.n();
    (0..n)
        .map(|i| (0..n).map(|j| g.adj()[(i, j)] == 1).collect())
        .collect()
}

/// All-pairs hop distances by Floyd-Warshall; `usize::MAX` when unreachable.
pub fn floyd(a: &Adj) -> Vec<Vec<usize>> {
    let n = a.len();
    let inf = usize::MAX / 4;
    let mut d = vec![vec![inf; n]; n];
    for i in 0..n {
        d[i][i] = 0;
        for j in 0..n {
            if a[i][j] {
                d[i][j] = 1;
            }
        }
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if d[i][k] + d[k][j] < d[i][j] {
                    d[i][j] = d[i][k] + d[k][j];
                }
            }
        }
    }
    for row in &mut d {
        for v in row.iter_mut() {
            if *v >= inf {
                *v = usize::MAX;
            }
        }
    }
    d
}

/// Every shortest path from `a` to `b`, as explicit node lists.
pub fn shortest_paths(adj: &Adj, d: &[Vec<usize>], a: usize, b: usize) -> Vec<Vec<usize>> {
    fn walk(adj: &Adj, len: usize, b: usize, path: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        let u = *path.last().unwrap();
        if path.len() - 1 == len {
            if u == b {
                out.push(path.clone());
            }
            return;
        }
        for w in 0..adj.len() {
            if adj[u][w] && !path.contains(&w) {
                path.push(w);
                walk(adj, len, b, path, out);
                path.pop();
            }
        }
    }
    let mut out = Vec::new();
    if d[a][b] == usize::MAX {
        return out;
    }
    walk(adj, d[a][b], b, &mut vec![a], &mut out);
    out
}

pub fn degree(a: &Adj) -> Vec<f64> {
    let n = a.len();
    a.iter()
        .map(|r| r.iter().filter(|&&e| e).count() as f64 / (n - 1) as f64)
        .collect()
}

pub fn betweenness(a: &Adj) -> Vec<f64> {
    let n = a.len();
    let d = floyd(a);
    let mut b = vec![0.0; n];
    for s in 0..n {
        for t in s + 1..n {
            let paths = shortest_paths(a, &d, s, t);
            if paths.is_empty() {
                continue;
            }
            for (u, bu) in b.iter_mut().enumerate() {
                if u == s || u == t {
                    continue;
                }
                let through = paths.iter().filter(|p| p.contains(&u)).count();
                *bu += through as f64 / paths.len() as f64;
            }
        }
    }
    let scale = 2.0 / ((n - 1) * (n - 2)) as f64;
    b.into_iter().map(|v| v * scale).collect()
}

pub fn closeness(a: &Adj) -> Vec<f64> {
    let n = a.len();
    let d = floyd(a);
    (0..n)
        .map(|u| {
            let reach: Vec<usize> = d[u].iter().copied().filter(|&v| v != usize::MAX).collect();
            let total: usize = reach.iter().sum();
            if total == 0 {
                return 0.0;
            }
            let r = (reach.len() - 1) as f64;
            (r / total as f64) * (r / (n - 1) as f64)
        })
        .collect()
}

pub fn clustering(a: &Adj) -> Vec<f64> {
    let n = a.len();
    (0..n)
        .map(|u| {
            let k = (0..n).filter(|&v| a[u][v]).count();
            if k < 2 {
                return 0.0;
            }
            let mut tri = 0;
            for v in 0..n {
                for w in v + 1..n {
                    if a[u][v] && a[u][w] && a[v][w] {
                        tri += 1;
                    }
                }
            }
            2.0 * tri as f64 / (k * (k - 1)) as f64
        })
        .collect()
}

/// Uniform vector projected onto the dominant eigenspace of `A` (dense
/// symmetric eigensolve), normalised.
pub fn eigenvector(a: &Adj) -> Vec<f64> {
    let n = a.len();
    let m = DMatrix::from_fn(n, n, |i, j| if a[i][j] { 1.0 } else { 0.0 });
    let eig = SymmetricEigen::new(m);
    let top: f64 = eig.eigenvalues.max();
    let mut x = vec![0.0; n];
    for (k, &lam) in eig.eigenvalues.iter().enumerate() {
        let lam: f64 = lam;
        if (lam - top).abs() < 1e-8 {
            let v = eig.eigenvectors.column(k);
            let coef: f64 = v.iter().sum::<f64>() / (n as f64).sqrt();
            for i in 0..n {
                x[i] += coef * v[i];
            }
        }
    }
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    x.into_iter().map(|v| (v / norm).abs()).collect()
}

/// Student-t CDF from an independent library implementation.
pub fn t_cdf(t: f64, df: f64) -> f64 {
    use statrs::distribution::{ContinuousCDF, StudentsT};
    StudentsT::new(0.0, 1.0, df).unwrap().cdf(t)
}
