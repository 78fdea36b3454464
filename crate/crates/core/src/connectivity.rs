//! Scout connectivity matrices: Pearson adjacency and its binary threshold
//! graph, phase locking value, Fisher z and group averages.
//!
//! Thresholding keeps an edge where the *signed* correlation reaches the
//! threshold (`r >= rho_th`), so strong anticorrelations never form edges.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::inverse::ScoutMatrix;

/// Largest |r| fed to `atanh`.
pub const R_CLAMP: f64 = 1.0 - 1e-12;

/// Weighted correlation matrix and, once thresholded, its binary graph.
#[derive(Debug, Clone, PartialEq)]
pub struct ConnectivityPair {
    pub a_hat: DMatrix<f64>,
    pub a_bin: Option<DMatrix<u8>>,
    pub rho_th: Option<f64>,
    /// Columns with no variance; their off-diagonal entries are zero.
    pub degenerate: Vec<usize>,
}

impl ConnectivityPair {
    pub fn n(&self) -> usize {
        self.a_hat.nrows()
    }

    pub fn edge_count(&self) -> usize {
        self.a_bin
            .as_ref()
            .map_or(0, |a| a.iter().map(|&v| v as usize).sum::<usize>() / 2)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZMatrix {
    pub z: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PLVMatrix {
    pub plv: DMatrix<f64>,
    pub band: String,
}

/// Pearson correlation between the columns of a `time × variables` matrix.
pub fn pearson_matrix(v: &DMatrix<f64>) -> ConnectivityPair {
    let (n_t, n) = v.shape();
    let mut centered = v.clone();
    let mut degenerate = Vec::new();
    for (i, mut col) in centered.column_iter_mut().enumerate() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
        let norm = col.norm();
        let std = norm / (n_t as f64).sqrt();
        if std < 1e-12 || !norm.is_finite() {
            col.fill(0.0);
            degenerate.push(i);
        } else {
            col /= norm;
        }
    }
    for &i in &degenerate {
        log::warn!("column {i} is constant; its correlations are set to 0");
    }
    let mut a_hat = centered.transpose() * &centered;
    for i in 0..n {
        for j in 0..i {
            let r = 0.5 * (a_hat[(i, j)] + a_hat[(j, i)]);
            let r = r.clamp(-1.0, 1.0);
            a_hat[(i, j)] = r;
            a_hat[(j, i)] = r;
        }
        a_hat[(i, i)] = 1.0;
    }
    ConnectivityPair {
        a_hat,
        a_bin: None,
        rho_th: None,
        degenerate,
    }
}

/// Weighted adjacency between scouts from their time series.
pub fn pearson_adjacency(v: &ScoutMatrix) -> ConnectivityPair {
    pearson_matrix(&v.v)
}

/// Binary threshold graph of a weighted adjacency: an edge wherever
/// `i != j` and `a_hat[i][j] >= rho_th`.
pub fn binarize(cp: &ConnectivityPair, rho_th: f64) -> Result<ConnectivityPair> {
    if !(0.0..=1.0).contains(&rho_th) {
        return Err(Error::InvalidThreshold(rho_th));
    }
    let n = cp.n();
    let a_bin = DMatrix::from_fn(n, n, |i, j| u8::from(i != j && cp.a_hat[(i, j)] >= rho_th));
    Ok(ConnectivityPair {
        a_hat: cp.a_hat.clone(),
        a_bin: Some(a_bin),
        rho_th: Some(rho_th),
        degenerate: cp.degenerate.clone(),
    })
}

/// Phase locking value between every pair of series.
///
/// `phases[e][i]` is the instantaneous phase of series `i` in epoch `e`.
/// The first and last `discard_edges` samples of each epoch are dropped,
/// the PLV is taken over time within each epoch and then averaged over
/// epochs.
pub fn plv_matrix(phases: &[Vec<Vec<f64>>], discard_edges: usize, band: &str) -> Result<PLVMatrix> {
    let first = phases
        .first()
        .ok_or_else(|| Error::EmptyInput("no epochs".into()))?;
    let n = first.len();
    let len = first.first().map_or(0, Vec::len);
    if len <= 2 * discard_edges {
        return Err(Error::LengthMismatch(format!(
            "{len} samples leave nothing after discarding {discard_edges} at each end"
        )));
    }
    let keep = discard_edges..len - discard_edges;
    let t = keep.len();
    let mut acc = DMatrix::zeros(n, n);
    for (e, epoch) in phases.iter().enumerate() {
        if epoch.len() != n || epoch.iter().any(|s| s.len() != len) {
            return Err(Error::LengthMismatch(format!(
                "epoch {e} does not match {n} series of {len} samples"
            )));
        }
        let cos = DMatrix::from_fn(t, n, |k, i| epoch[i][keep.start + k].cos());
        let sin = DMatrix::from_fn(t, n, |k, i| epoch[i][keep.start + k].sin());
        // Σ cos(a-b) and Σ sin(a-b) for all pairs at once
        let re = cos.transpose() * &cos + sin.transpose() * &sin;
        let im = sin.transpose() * &cos - cos.transpose() * &sin;
        for i in 0..n {
            for j in 0..n {
                acc[(i, j)] += (re[(i, j)].powi(2) + im[(i, j)].powi(2)).sqrt() / t as f64;
            }
        }
    }
    acc /= phases.len() as f64;
    for i in 0..n {
        for j in 0..i {
            let v = (0.5 * (acc[(i, j)] + acc[(j, i)])).clamp(0.0, 1.0);
            acc[(i, j)] = v;
            acc[(j, i)] = v;
        }
        acc[(i, i)] = 1.0;
    }
    Ok(PLVMatrix {
        plv: acc,
        band: band.to_string(),
    })
}

/// Element-wise `atanh(r)` with `r` clamped to `±R_CLAMP` and a zero
/// diagonal.
pub fn fisher_z(cp: &ConnectivityPair) -> ZMatrix {
    fisher_z_matrix(&cp.a_hat)
}

pub fn fisher_z_matrix(r: &DMatrix<f64>) -> ZMatrix {
    let n = r.nrows();
    let z = DMatrix::from_fn(n, r.ncols(), |i, j| {
        if i == j {
            0.0
        } else {
            r[(i, j)].clamp(-R_CLAMP, R_CLAMP).atanh()
        }
    });
    ZMatrix { z }
}

/// Element-wise mean of equally shaped matrices, summed in input order.
pub fn group_average(items: &[DMatrix<f64>]) -> Result<DMatrix<f64>> {
    let first = items.first().ok_or(Error::EmptyGroup)?;
    let mut acc = DMatrix::zeros(first.nrows(), first.ncols());
    for m in items {
        if m.shape() != first.shape() {
            return Err(Error::ShapeMismatch(format!(
                "{:?} vs {:?}",
                m.shape(),
                first.shape()
            )));
        }
        acc += m;
    }
    Ok(acc / items.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn cols(cols: &[Vec<f64>]) -> DMatrix<f64> {
        DMatrix::from_fn(cols[0].len(), cols.len(), |t, i| cols[i][t])
    }

    fn direct_pearson(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let da: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let db: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        num / (da * db).sqrt()
    }

    #[test]
    fn identical_and_opposite_columns() {
        let x: Vec<f64> = (0..50)
            .map(|t| (t as f64 * 0.7).sin() + 0.01 * t as f64)
            .collect();
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        let cp = pearson_matrix(&cols(&[x.clone(), x, neg]));
        assert!((cp.a_hat[(0, 1)] - 1.0).abs() < 1e-12);
        assert!((cp.a_hat[(0, 2)] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn sin_cos_over_whole_periods_are_uncorrelated() {
        let n = 400;
        let s: Vec<f64> = (0..n)
            .map(|t| (2.0 * PI * 4.0 * t as f64 / n as f64).sin())
            .collect();
        let c: Vec<f64> = (0..n)
            .map(|t| (2.0 * PI * 4.0 * t as f64 / n as f64).cos())
            .collect();
        let r = pearson_matrix(&cols(&[s.clone(), c.clone()])).a_hat[(0, 1)];
        assert!(r.abs() < 1e-6);
        assert!((r - direct_pearson(&s, &c)).abs() < 1e-12);
    }

    #[test]
    fn constant_column_is_degenerate() {
        let x: Vec<f64> = (0..20).map(|t| t as f64).collect();
        let cp = pearson_matrix(&cols(&[x, vec![2.0; 20]]));
        assert_eq!(cp.degenerate, vec![1]);
        assert_eq!(cp.a_hat[(0, 1)], 0.0);
        assert_eq!(cp.a_hat[(1, 1)], 1.0);
    }

    fn toy_pair(v: f64) -> ConnectivityPair {
        ConnectivityPair {
            a_hat: DMatrix::from_row_slice(3, 3, &[1.0, v, 0.2, v, 1.0, -0.9, 0.2, -0.9, 1.0]),
            a_bin: None,
            rho_th: None,
            degenerate: vec![],
        }
    }

    #[test]
    fn binarize_examples() {
        let b = binarize(&toy_pair(0.9), 0.85).unwrap();
        let a = b.a_bin.as_ref().unwrap();
        assert_eq!(a[(0, 1)], 1);
        assert_eq!(a[(1, 2)], 0, "anticorrelation never forms an edge");
        assert!((0..3).all(|i| a[(i, i)] == 0));
        assert_eq!(binarize(&toy_pair(0.9), 1.0).unwrap().edge_count(), 0);
        assert_eq!(binarize(&toy_pair(0.85), 0.85).unwrap().edge_count(), 1);
        assert!(matches!(
            binarize(&toy_pair(0.9), 1.2),
            Err(Error::InvalidThreshold(_))
        ));
    }

    #[test]
    fn plv_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let base: Vec<f64> = (0..10_000).map(|_| rng.random_range(-PI..PI)).collect();
        let shifted: Vec<f64> = base.iter().map(|p| p + PI / 3.0).collect();
        let indep: Vec<f64> = (0..10_000).map(|_| rng.random_range(-PI..PI)).collect();
        let m = plv_matrix(&[vec![base.clone(), base, shifted, indep]], 0, "x").unwrap();
        assert!((m.plv[(0, 1)] - 1.0).abs() < 1e-9);
        assert!((m.plv[(0, 2)] - 1.0).abs() < 1e-9);
        // expected ≈ sqrt(π / 4T) ≈ 0.0089
        assert!(m.plv[(0, 3)] < 0.05);
        assert!(plv_matrix(&[vec![vec![0.0; 10]]], 5, "x").is_err());
        assert!(plv_matrix(&[vec![vec![0.0; 10], vec![0.0; 9]]], 0, "x").is_err());
    }

    #[test]
    fn fisher_z_examples() {
        let z = fisher_z(&toy_pair(0.85)).z;
        // atanh(0.85) = ½ ln(1.85 / 0.15)
        let closed = 0.5 * (1.85f64 / 0.15).ln();
        // odd power series Σ r^(2k+1)/(2k+1)
        let series: f64 = (0..400)
            .map(|k| 0.85f64.powi(2 * k + 1) / (2 * k + 1) as f64)
            .sum();
        assert!((z[(0, 1)] - closed).abs() < 1e-12);
        assert!((z[(0, 1)] - series).abs() < 1e-12);
        assert!((z[(0, 1)] - 1.256_152_9).abs() < 1e-7);
        assert!((z[(1, 2)] + 0.9f64.atanh()).abs() < 1e-12);
        assert_eq!(z[(0, 0)], 0.0);
        let dup = fisher_z(&toy_pair(1.0)).z;
        assert!(dup[(0, 1)].is_finite());
        assert_eq!(fisher_z(&toy_pair(0.0)).z[(0, 1)], 0.0);
    }

    #[test]
    fn group_average_examples() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 1.0]);
        assert_eq!(group_average(std::slice::from_ref(&m)).unwrap(), m);
        assert_eq!(
            group_average(&[m.clone(), -m.clone()]).unwrap(),
            DMatrix::zeros(2, 2)
        );
        assert!(matches!(group_average(&[]), Err(Error::EmptyGroup)));
        assert!(matches!(
            group_average(&[m, DMatrix::zeros(3, 3)]),
            Err(Error::ShapeMismatch(_))
        ));
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let items: Vec<DMatrix<f64>> = (0..5)
            .map(|_| {
                let a = DMatrix::from_fn(4, 4, |_, _| rng.random::<f64>());
                &a + a.transpose()
            })
            .collect();
        let avg = group_average(&items).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let direct = items.iter().map(|m| m[(i, j)]).sum::<f64>() / 5.0;
                assert!((avg[(i, j)] - direct).abs() < 1e-12);
                assert_eq!(avg[(i, j)], avg[(j, i)]);
            }
        }
    }
}
