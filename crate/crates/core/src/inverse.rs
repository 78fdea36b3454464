//! Standardised minimum-norm (sLORETA) source estimation on a supplied
//! leadfield, baseline noise covariance, and scout time-series extraction.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::dataio::{EpochSet, LeadfieldModel};
use crate::error::{Error, Result};

/// Relative diagonal loading applied to the noise covariance.
pub const DIAGONAL_LOADING: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct NoiseCovariance {
    pub c: DMatrix<f64>,
    pub n_baseline_samples: usize,
}

impl NoiseCovariance {
    pub fn identity(n_channels: usize, scale: f64) -> Self {
        Self {
            c: DMatrix::identity(n_channels, n_channels) * scale,
            n_baseline_samples: 0,
        }
    }
}

/// Inverse operator and its per-source standardisation.
#[derive(Debug, Clone)]
pub struct InverseKernel {
    /// Minimum-norm kernel, `n_sources × n_channels`.
    pub t: DMatrix<f64>,
    /// Diagonal of the resolution matrix `T·L`.
    pub s_diag: DVector<f64>,
    pub lambda: f64,
    standardized: DMatrix<f64>,
}

impl InverseKernel {
    pub fn n_sources(&self) -> usize {
        self.t.nrows()
    }

    pub fn n_channels(&self) -> usize {
        self.t.ncols()
    }

    /// `diag(s)^(-1/2) · T`, the operator that maps sensor data straight to
    /// standardised source estimates.
    pub fn standardized(&self) -> &DMatrix<f64> {
        &self.standardized
    }
}

/// Time × scouts series matrix for one epoch (or an average of epochs).
#[derive(Debug, Clone, PartialEq)]
pub struct ScoutMatrix {
    /// `n_samples × n_scouts`.
    pub v: DMatrix<f64>,
    pub scout_names: Vec<String>,
    pub fs: f64,
    pub t0_offset: f64,
    /// Columns whose standard deviation vanished; left as zeros.
    pub zero_variance: Vec<usize>,
}

impl ScoutMatrix {
    pub fn n_samples(&self) -> usize {
        self.v.nrows()
    }

    pub fn n_scouts(&self) -> usize {
        self.v.ncols()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.scout_names.iter().position(|n| n == name)
    }

    pub fn column(&self, i: usize) -> Vec<f64> {
        self.v.column(i).iter().copied().collect()
    }
}

/// Pooled covariance of the baseline window across all epochs.
pub fn estimate_noise_covariance(x: &EpochSet, window: (f64, f64)) -> Result<NoiseCovariance> {
    let range = x.window_indices(window)?;
    let nc = x.n_channels();
    let total = range.len() * x.n_epochs();
    if range.len() < 2 || total <= nc {
        return Err(Error::TooFewSamples(format!(
            "{} baseline samples per epoch, {total} pooled, for {nc} channels",
            range.len()
        )));
    }
    let mut mean = DVector::zeros(nc);
    for e in x.epochs() {
        for t in range.clone() {
            mean += e.column(t);
        }
    }
    mean /= total as f64;
    let mut c = DMatrix::zeros(nc, nc);
    for e in x.epochs() {
        let mut block = e.columns(range.start, range.len()).clone_owned();
        for mut col in block.column_iter_mut() {
            col -= &mean;
        }
        c.gemm(1.0, &block, &block.transpose(), 1.0);
    }
    c /= (total - 1) as f64;
    c = (&c + c.transpose()) * 0.5;
    Ok(NoiseCovariance {
        c,
        n_baseline_samples: total,
    })
}

/// Builds the sLORETA kernel for a leadfield and noise covariance.
///
/// The gain is average-referenced, the covariance diagonally loaded by
/// [`DIAGONAL_LOADING`] × its mean diagonal, and the regularisation set to
/// `λ = tr(L·Lᵀ) / (tr(C') · snr²)`. Then `T = Lᵀ (L·Lᵀ + λ·C')⁻¹` and each
/// source is standardised by the corresponding diagonal entry of `T·L`.
pub fn build_sloreta_kernel(
    lf: &LeadfieldModel,
    noise: &NoiseCovariance,
    snr_assumed: f64,
) -> Result<InverseKernel> {
    let nc = lf.n_channels();
    if noise.c.shape() != (nc, nc) {
        return Err(Error::ChannelCountMismatch {
            data: noise.c.nrows(),
            model: nc,
        });
    }
    if !(snr_assumed > 0.0 && snr_assumed.is_finite()) {
        return Err(Error::range("snr_assumed", "must be > 0"));
    }
    let l = lf.average_referenced_gain();
    let mut c = noise.c.clone();
    let mean_diag = c.diagonal().mean();
    let loading = if mean_diag > 0.0 {
        DIAGONAL_LOADING * mean_diag
    } else {
        DIAGONAL_LOADING
    };
    for i in 0..nc {
        c[(i, i)] += loading;
    }
    let llt = &l * l.transpose();
    let lambda = llt.trace() / (c.trace() * snr_assumed * snr_assumed);
    let system = &llt + &c * lambda;
    let y = match system.clone().cholesky() {
        Some(ch) => ch.solve(&l),
        None => system.lu().solve(&l).ok_or(Error::SingularSystem)?,
    };
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularSystem);
    }
    // system is symmetric, so T = Lᵀ S⁻¹ = (S⁻¹ L)ᵀ
    let t = y.transpose();
    let s_diag = DVector::from_iterator(
        t.nrows(),
        (0..t.nrows()).map(|j| t.row(j).dot(&l.column(j).transpose())),
    );
    if let Some(j) = s_diag.iter().position(|&s| s.is_nan() || s <= 0.0) {
        return Err(Error::NonPositiveStandardizer(j));
    }
    let mut standardized = t.clone();
    for (j, mut row) in standardized.row_iter_mut().enumerate() {
        row /= s_diag[j].sqrt();
    }
    Ok(InverseKernel {
        t,
        s_diag,
        lambda,
        standardized,
    })
}

/// Standardised source estimate for one epoch, `n_sources × n_samples`.
pub fn apply_inverse_epoch(epoch: &DMatrix<f64>, k: &InverseKernel) -> Result<DMatrix<f64>> {
    if epoch.nrows() != k.n_channels() {
        return Err(Error::ChannelCountMismatch {
            data: epoch.nrows(),
            model: k.n_channels(),
        });
    }
    Ok(k.standardized() * epoch)
}

/// Standardised source estimates for every epoch.
pub fn apply_inverse(x: &EpochSet, k: &InverseKernel) -> Result<Vec<DMatrix<f64>>> {
    x.epochs()
        .par_iter()
        .map(|e| apply_inverse_epoch(e, k))
        .collect()
}

/// Scout-averaging operator, `n_scouts × n_sources`.
pub fn scout_operator(lf: &LeadfieldModel) -> DMatrix<f64> {
    let mut op = DMatrix::zeros(lf.n_scouts(), lf.n_sources());
    for (i, scout) in lf.scouts.iter().enumerate() {
        let w = 1.0 / scout.sources.len() as f64;
        for &s in &scout.sources {
            op[(i, s)] = w;
        }
    }
    op
}

/// Mean source series per scout, `n_samples × n_scouts`, not normalised.
pub fn scout_means(src: &DMatrix<f64>, lf: &LeadfieldModel) -> Result<DMatrix<f64>> {
    if src.nrows() != lf.n_sources() {
        return Err(Error::SizeMismatch(format!(
            "source matrix has {} rows, leadfield has {} sources",
            src.nrows(),
            lf.n_sources()
        )));
    }
    let mut v = DMatrix::zeros(src.ncols(), lf.n_scouts());
    for (i, scout) in lf.scouts.iter().enumerate() {
        let w = 1.0 / scout.sources.len() as f64;
        for t in 0..src.ncols() {
            v[(t, i)] = scout.sources.iter().map(|&s| src[(s, t)]).sum::<f64>() * w;
        }
    }
    Ok(v)
}

const MIN_STD: f64 = 1e-12;

/// Z-scores every column (population standard deviation). Returns the
/// indices of columns left as zeros because their spread vanished.
pub fn zscore_columns(v: &mut DMatrix<f64>) -> Vec<usize> {
    let mut flat = Vec::new();
    let n = v.nrows() as f64;
    for (i, mut col) in v.column_iter_mut().enumerate() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
        let std = (col.norm_squared() / n).sqrt();
        if std < MIN_STD {
            col.fill(0.0);
            flat.push(i);
        } else {
            col /= std;
        }
    }
    flat
}

fn normalized_scout_matrix(
    mut v: DMatrix<f64>,
    scout_names: Vec<String>,
    fs: f64,
    t0_offset: f64,
) -> ScoutMatrix {
    let zero_variance = zscore_columns(&mut v);
    for &i in &zero_variance {
        log::warn!(
            "scout {} has zero variance, column left as zeros",
            scout_names[i]
        );
    }
    ScoutMatrix {
        v,
        scout_names,
        fs,
        t0_offset,
        zero_variance,
    }
}

/// Scout series for one epoch's source matrix: per-scout mean, then
/// per-column z-scoring.
pub fn extract_scout_series(
    src: &DMatrix<f64>,
    lf: &LeadfieldModel,
    fs: f64,
    t0_offset: f64,
) -> Result<ScoutMatrix> {
    let v = scout_means(src, lf)?;
    Ok(normalized_scout_matrix(v, lf.scout_names(), fs, t0_offset))
}

/// Replaces the named columns by one column holding their mean, z-scored
/// again. The merged column takes the position of the left-most input.
pub fn merge_scouts(sm: &ScoutMatrix, names: &[&str], new_name: &str) -> Result<ScoutMatrix> {
    if names.is_empty() {
        return Err(Error::EmptyInput("no scouts to merge".into()));
    }
    let mut idx = Vec::with_capacity(names.len());
    for (k, name) in names.iter().enumerate() {
        if names[..k].contains(name) {
            return Err(Error::DuplicateName(name.to_string()));
        }
        idx.push(
            sm.column_index(name)
                .ok_or_else(|| Error::UnknownScout(name.to_string()))?,
        );
    }
    let first = *idx.iter().min().expect("non-empty");
    let mut merged = DVector::zeros(sm.n_samples());
    for &i in &idx {
        merged += sm.v.column(i);
    }
    merged /= idx.len() as f64;
    if sm
        .scout_names
        .iter()
        .enumerate()
        .any(|(i, n)| n == new_name && !idx.contains(&i))
    {
        return Err(Error::DuplicateName(new_name.to_string()));
    }

    let mut cols = Vec::new();
    let mut out_names = Vec::new();
    for i in 0..sm.n_scouts() {
        if i == first {
            cols.push(merged.clone());
            out_names.push(new_name.to_string());
        } else if !idx.contains(&i) {
            cols.push(sm.v.column(i).clone_owned());
            out_names.push(sm.scout_names[i].clone());
        }
    }
    let v = DMatrix::from_columns(&cols);
    let mut out = normalized_scout_matrix(v, out_names, sm.fs, sm.t0_offset);
    // untouched columns were already normalised; keep them bit-identical
    for (j, name) in out.scout_names.iter().enumerate() {
        if name != new_name {
            let src = sm.column_index(name).expect("kept column");
            out.v.set_column(j, &sm.v.column(src));
        }
    }
    out.zero_variance = out
        .scout_names
        .iter()
        .enumerate()
        .filter(|(j, name)| {
            if *name == new_name {
                out.v.column(*j).iter().all(|&x| x == 0.0)
            } else {
                sm.zero_variance
                    .contains(&sm.column_index(name).expect("kept"))
            }
        })
        .map(|(j, _)| j)
        .collect();
    Ok(out)
}

/// Element-wise mean of per-epoch scout matrices, renormalised.
pub fn average_scout_series(items: &[ScoutMatrix]) -> Result<ScoutMatrix> {
    let first = items.first().ok_or(Error::EmptyGroup)?;
    let mut acc = DMatrix::zeros(first.n_samples(), first.n_scouts());
    for sm in items {
        if sm.v.shape() != acc.shape() || sm.scout_names != first.scout_names {
            return Err(Error::ShapeMismatch(
                "scout matrices differ in shape".into(),
            ));
        }
        acc += &sm.v;
    }
    acc /= items.len() as f64;
    Ok(normalized_scout_matrix(
        acc,
        first.scout_names.clone(),
        first.fs,
        first.t0_offset,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{Group, Scout, Stimulus};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn singleton_scouts(n: usize) -> Vec<Scout> {
        (0..n)
            .map(|i| Scout {
                name: format!("s{i}"),
                sources: vec![i],
            })
            .collect()
    }

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal))
    }

    #[test]
    fn identity_leadfield_peaks_at_the_active_source() {
        let n = 8;
        let lf = LeadfieldModel::new(DMatrix::identity(n, n), singleton_scouts(n)).unwrap();
        let k = build_sloreta_kernel(&lf, &NoiseCovariance::identity(n, 1.0), 3.0).unwrap();
        for src in 0..n {
            let mut e = DVector::zeros(n);
            e[src] = 1.0;
            let est = k.standardized() * e;
            assert_eq!(est.iamax(), src);
        }
    }

    #[test]
    fn point_sources_localise_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let gain = random_matrix(&mut rng, 20, 100);
        let lf = LeadfieldModel::new(gain, singleton_scouts(100)).unwrap();
        let k = build_sloreta_kernel(&lf, &NoiseCovariance::identity(20, 1e-6), 3.0).unwrap();
        let l = lf.average_referenced_gain();
        for j in [0, 13, 57, 99] {
            let x = l.column(j) * 2.5;
            let est = k.standardized() * x;
            // brute force over all sources
            let best = (0..100)
                .max_by(|&a, &b| est[a].abs().total_cmp(&est[b].abs()))
                .unwrap();
            assert_eq!(best, j);
        }
    }

    #[test]
    fn rank_deficient_covariance_is_regularised() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let gain = random_matrix(&mut rng, 6, 12);
        let lf = LeadfieldModel::new(gain, singleton_scouts(12)).unwrap();
        let mut c = DMatrix::identity(6, 6);
        c[(2, 2)] = 0.0;
        let noise = NoiseCovariance {
            c,
            n_baseline_samples: 10,
        };
        let k = build_sloreta_kernel(&lf, &noise, 3.0).unwrap();
        assert!(k.t.iter().all(|v| v.is_finite()));
        assert!(k.s_diag.iter().all(|&s| s > 0.0));
    }

    fn set_from(epochs: Vec<DMatrix<f64>>) -> EpochSet {
        EpochSet::new(epochs, 100.0, -0.5, Stimulus::A, Group::Y, "s").unwrap()
    }

    #[test]
    fn noise_covariance_examples() {
        let zero = set_from(vec![DMatrix::zeros(3, 100); 4]);
        let c = estimate_noise_covariance(&zero, (-0.5, 0.0)).unwrap();
        assert_eq!(c.c, DMatrix::zeros(3, 3));
        assert_eq!(c.n_baseline_samples, 200);
        assert!(matches!(
            estimate_noise_covariance(&zero, (-0.5, -0.49)),
            Err(Error::TooFewSamples(_))
        ));
    }

    #[test]
    fn white_noise_covariance_is_near_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let epochs = (0..80)
            .map(|_| random_matrix(&mut rng, 31, 700))
            .collect::<Vec<_>>();
        let set = EpochSet::new(epochs, 500.0, -0.5, Stimulus::A, Group::Y, "s").unwrap();
        let c = estimate_noise_covariance(&set, (-0.5, 0.0)).unwrap();
        // 20000 pooled samples: sampling sd of each entry is about 0.007
        for i in 0..31 {
            for j in 0..31 {
                let target = if i == j { 1.0 } else { 0.0 };
                assert!((c.c[(i, j)] - target).abs() < 0.05);
            }
        }
    }

    #[test]
    fn inverse_is_linear_and_rejects_wrong_channel_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let lf = LeadfieldModel::new(random_matrix(&mut rng, 5, 9), singleton_scouts(9)).unwrap();
        let k = build_sloreta_kernel(&lf, &NoiseCovariance::identity(5, 0.1), 3.0).unwrap();
        let x = random_matrix(&mut rng, 5, 40);
        let y = apply_inverse_epoch(&x, &k).unwrap();
        let y2 = apply_inverse_epoch(&(&x * 2.0), &k).unwrap();
        assert_eq!(y2, &y * 2.0);
        assert!(apply_inverse_epoch(&DMatrix::zeros(5, 3), &k)
            .unwrap()
            .iter()
            .all(|&v| v == 0.0));
        assert!(matches!(
            apply_inverse_epoch(&DMatrix::zeros(4, 3), &k),
            Err(Error::ChannelCountMismatch { .. })
        ));
    }

    fn grand_mean_lf(n_sources: usize) -> LeadfieldModel {
        let gain = DMatrix::from_fn(3, n_sources, |i, j| (i + j) as f64 + (j * j) as f64 * 0.1);
        LeadfieldModel::new(
            gain,
            vec![Scout {
                name: "all".into(),
                sources: (0..n_sources).collect(),
            }],
        )
        .unwrap()
    }

    #[test]
    fn scout_of_all_sources_is_zscored_grand_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let src = random_matrix(&mut rng, 100, 50);
        let sm = extract_scout_series(&src, &grand_mean_lf(100), 100.0, -0.1).unwrap();
        // direct recomputation
        let mut mean: Vec<f64> = (0..50)
            .map(|t| (0..100).map(|s| src[(s, t)]).sum::<f64>() / 100.0)
            .collect();
        let mu = mean.iter().sum::<f64>() / 50.0;
        let sd = (mean.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / 50.0).sqrt();
        for v in mean.iter_mut() {
            *v = (*v - mu) / sd;
        }
        for (t, m) in mean.iter().enumerate() {
            assert!((sm.v[(t, 0)] - m).abs() < 1e-9);
        }
    }

    #[test]
    fn duplicate_sources_average_to_themselves() {
        let row: Vec<f64> = (0..30).map(|t| (t as f64 * 0.3).sin()).collect();
        let src = DMatrix::from_fn(2, 30, |_, t| row[t]);
        let one = extract_scout_series(
            &src.rows(0, 1).clone_owned(),
            &grand_mean_lf(1),
            100.0,
            -0.1,
        )
        .unwrap();
        let two = extract_scout_series(&src, &grand_mean_lf(2), 100.0, -0.1).unwrap();
        assert!((&one.v - &two.v).amax() < 1e-12);
    }

    #[test]
    fn constant_scout_is_flagged() {
        let src = DMatrix::from_element(1, 30, 4.0);
        let sm = extract_scout_series(&src, &grand_mean_lf(1), 100.0, -0.1).unwrap();
        assert_eq!(sm.zero_variance, vec![0]);
        assert!(sm.v.iter().all(|&v| v == 0.0));
    }

    fn named_matrix(names: &[&str], n: usize, seed: u64) -> ScoutMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v = random_matrix(&mut rng, n, names.len());
        zscore_columns(&mut v);
        ScoutMatrix {
            v,
            scout_names: names.iter().map(|s| s.to_string()).collect(),
            fs: 100.0,
            t0_offset: -0.1,
            zero_variance: vec![],
        }
    }

    #[test]
    fn merge_single_scout_renames() {
        let sm = named_matrix(&["a", "b", "c"], 40, 1);
        let m = merge_scouts(&sm, &["b"], "B").unwrap();
        assert_eq!(m.scout_names, vec!["a", "B", "c"]);
        assert!((&m.v - &sm.v).amax() < 1e-12);
    }

    #[test]
    fn merge_avi_scouts_of_reference_atlas() {
        let names = crate::dataio::reference_scout_names();
        let refs: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
        let sm = named_matrix(&refs, 60, 4);
        let m = merge_scouts(&sm, &crate::dataio::AVI_SCOUTS, "AVI").unwrap();
        assert_eq!(m.n_scouts(), 51);
        assert!(m.column_index("AVI").is_some());
        let col = m.column(m.column_index("AVI").unwrap());
        let mean = col.iter().sum::<f64>() / 60.0;
        assert!(mean.abs() < 1e-9);
    }

    #[test]
    fn merge_errors() {
        let sm = named_matrix(&["a", "b"], 10, 1);
        assert!(matches!(
            merge_scouts(&sm, &["zz"], "x"),
            Err(Error::UnknownScout(_))
        ));
        assert!(matches!(
            merge_scouts(&sm, &["a", "a"], "x"),
            Err(Error::DuplicateName(_))
        ));
    }
}
