//! Synthetic data with known structure: Gaussian blobs, planted-block
//! correlation matrices, and a small EEG study whose groups differ only in
//! the coupling of a few cortical scouts.

use std::f64::consts::PI;

use nalgebra::{DMatrix, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::connectivity::{fisher_z_matrix, R_CLAMP};
use crate::dataio::{
    reference_scout_names, write_epochset, write_leadfield, EpochSet, Group, LeadfieldModel, Scout,
    Stimulus,
};
use crate::error::Result;
use crate::learn::Dataset;

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// `n_classes` isotropic unit-variance clusters in `dim` dimensions whose
/// means are pairwise `separation` apart (scaled basis vectors).
pub fn gaussian_blobs(
    n_classes: usize,
    n_per_class: usize,
    dim: usize,
    separation: f64,
    seed: u64,
) -> Dataset {
    assert!(n_classes <= dim, "one axis per class");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let offset = separation / 2f64.sqrt();
    let mut rows = Vec::with_capacity(n_classes * n_per_class);
    let mut y = Vec::with_capacity(n_classes * n_per_class);
    for c in 0..n_classes {
        for _ in 0..n_per_class {
            rows.push(
                (0..dim)
                    .map(|d| if d == c { offset } else { 0.0 } + normal(&mut rng))
                    .collect(),
            );
            y.push(c);
        }
    }
    let classes = (0..n_classes).map(|c| format!("c{c}")).collect();
    Dataset::new(rows, y, classes, None).expect("well-formed blobs")
}

/// Points scattered with standard deviation `sd` around each centre.
/// Returns the `n × dim` point matrix and the generating centre per row.
pub fn blob_points(
    centres: &[Vec<f64>],
    n_per: usize,
    sd: f64,
    seed: u64,
) -> (DMatrix<f64>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = centres[0].len();
    let n = centres.len() * n_per;
    let mut m = DMatrix::zeros(n, dim);
    let mut truth = Vec::with_capacity(n);
    for (c, centre) in centres.iter().enumerate() {
        for k in 0..n_per {
            for d in 0..dim {
                m[(c * n_per + k, d)] = centre[d] + sd * normal(&mut rng);
            }
            truth.push(c);
        }
    }
    (m, truth)
}

/// Fisher-z matrix of `n` nodes in `n_blocks` contiguous, near-equal
/// blocks: within-block correlation about 0.8, between-block about 0.1,
/// with symmetric jitter. Returns the matrix and each node's block.
pub fn planted_block_zmatrix(n: usize, n_blocks: usize, seed: u64) -> (DMatrix<f64>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let block: Vec<usize> = (0..n).map(|i| i * n_blocks / n).collect();
    let mut r = DMatrix::identity(n, n);
    for i in 0..n {
        for j in 0..i {
            let base = if block[i] == block[j] { 0.8 } else { 0.1 };
            let v = (base + 0.05 * normal(&mut rng)).clamp(-R_CLAMP, R_CLAMP);
            r[(i, j)] = v;
            r[(j, i)] = v;
        }
    }
    (fisher_z_matrix(&r).z, block)
}

/// Layout and effect size of a synthetic two-group study.
#[derive(Debug, Clone)]
pub struct StudySpec {
    pub n_channels: usize,
    pub sources_per_scout: usize,
    pub fs: f64,
    pub t0_offset: f64,
    pub n_samples: usize,
    pub groups: [Group; 2],
    pub subjects_per_group: usize,
    pub epochs_per_subject: usize,
    pub stimulus: Stimulus,
    /// Scouts active after stimulus onset in both groups.
    pub active_scouts: Vec<String>,
    /// Correlation of the active scouts in each group.
    pub coupling: [f64; 2],
    /// Amplitude of the active scouts relative to the background.
    pub active_gain: f64,
    /// Sensor noise standard deviation relative to the mean channel RMS.
    pub sensor_noise: f64,
    pub seed: u64,
}

impl Default for StudySpec {
    fn default() -> Self {
        Self {
            n_channels: 31,
            sources_per_scout: 3,
            fs: 500.0,
            t0_offset: -0.5,
            n_samples: 700,
            groups: [Group::Y, Group::T],
            subjects_per_group: 4,
            epochs_per_subject: 20,
            stimulus: Stimulus::A,
            active_scouts: [
                "superiortemporal L",
                "superiortemporal R",
                "superiorparietal L",
                "caudalmiddlefrontal R",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect(),
            coupling: [0.95, 0.5],
            active_gain: 8.0,
            sensor_noise: 0.05,
            seed: 7,
        }
    }
}

/// A generated study: the forward model and one epoch set per subject.
#[derive(Debug, Clone)]
pub struct Study {
    pub leadfield: LeadfieldModel,
    pub sets: Vec<EpochSet>,
}

fn fibonacci_sphere(n: usize, z_min: f64) -> Vec<Vector3<f64>> {
    let golden = PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - (1.0 - z_min) * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let phi = golden * i as f64;
            Vector3::new(r * phi.cos(), r * phi.sin(), z)
        })
        .collect()
}

/// Spherical-head forward model: electrodes on the upper part of the unit
/// sphere, radial dipoles clustered around one centre per scout at radius
/// 0.7. Each gain entry is the dipole potential `(r_e - r_s)·n_s / |r_e - r_s|³`.
pub fn synthetic_leadfield(
    n_channels: usize,
    sources_per_scout: usize,
    seed: u64,
) -> LeadfieldModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names = reference_scout_names();
    let electrodes = fibonacci_sphere(n_channels, -0.2);
    let centres = fibonacci_sphere(names.len(), -1.0);
    let mut sources = Vec::new();
    let mut scouts = Vec::new();
    for (k, (name, c)) in names.iter().zip(&centres).enumerate() {
        let mut idx = Vec::new();
        for _ in 0..sources_per_scout {
            let jitter = Vector3::new(normal(&mut rng), normal(&mut rng), normal(&mut rng)) * 0.05;
            let dir = (c + jitter).normalize();
            idx.push(sources.len());
            sources.push((dir * 0.7, dir));
        }
        debug_assert_eq!(idx.len(), sources_per_scout, "scout {k}");
        scouts.push(Scout {
            name: name.clone(),
            sources: idx,
        });
    }
    let gain = DMatrix::from_fn(n_channels, sources.len(), |e, s| {
        let (pos, orient) = &sources[s];
        let d = electrodes[e] - pos;
        d.dot(orient) / d.norm().powi(3)
    });
    LeadfieldModel::new(gain, scouts).expect("synthetic atlas is consistent")
}

/// Band-limited unit-variance noise: a sum of sinusoids with random
/// frequencies in 2–30 Hz and random phases.
fn oscillation(rng: &mut ChaCha8Rng, n: usize, fs: f64) -> Vec<f64> {
    const K: usize = 12;
    let comps: Vec<(f64, f64)> = (0..K)
        .map(|_| (rng.random_range(2.0..30.0), rng.random_range(0.0..2.0 * PI)))
        .collect();
    let amp = (2.0 / K as f64).sqrt();
    (0..n)
        .map(|t| {
            let time = t as f64 / fs;
            comps
                .iter()
                .map(|(f, p)| amp * (2.0 * PI * f * time + p).sin())
                .sum()
        })
        .collect()
}

/// Smooth post-stimulus gate: 0 before 50 ms, raised-cosine ramps, 1 from
/// 150 ms to 750 ms, 0 after 850 ms.
fn gate(t: f64) -> f64 {
    let ramp = |x: f64| 0.5 - 0.5 * (PI * x.clamp(0.0, 1.0)).cos();
    ramp((t - 0.05) / 0.1) * (1.0 - ramp((t - 0.75) / 0.1))
}

/// Generates the study. Every scout carries independent background
/// activity; after stimulus onset the active scouts add a stronger
/// oscillation, correlated across them by the group's `coupling`.
pub fn generate_study(spec: &StudySpec) -> Result<Study> {
    let lf = synthetic_leadfield(spec.n_channels, spec.sources_per_scout, spec.seed);
    let active: Vec<usize> = spec
        .active_scouts
        .iter()
        .map(|name| {
            lf.scouts
                .iter()
                .position(|s| &s.name == name)
                .ok_or_else(|| crate::Error::UnknownScout(name.clone()))
        })
        .collect::<Result<_>>()?;
    let n = spec.n_samples;
    let n_src = lf.n_sources();
    let gates: Vec<f64> = (0..n)
        .map(|t| gate(spec.t0_offset + t as f64 / spec.fs))
        .collect();
    // sensor noise scaled to the average channel RMS of unit source activity
    let channel_rms = (lf.gain.iter().map(|g| g * g).sum::<f64>() / spec.n_channels as f64).sqrt();
    let noise_sd = spec.sensor_noise * channel_rms;
    let mut sets = Vec::new();
    for (g_idx, &group) in spec.groups.iter().enumerate() {
        for subj in 0..spec.subjects_per_group {
            let subject_id = format!("{}{:02}", group.as_str(), subj + 1);
            let unit = (g_idx * spec.subjects_per_group + subj) as u64;
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(1 + unit);
            let mut epochs = Vec::with_capacity(spec.epochs_per_subject);
            for _ in 0..spec.epochs_per_subject {
                let mut scout_sig: Vec<Vec<f64>> = (0..lf.n_scouts())
                    .map(|_| oscillation(&mut rng, n, spec.fs))
                    .collect();
                let shared = oscillation(&mut rng, n, spec.fs);
                for &a in &active {
                    let own = oscillation(&mut rng, n, spec.fs);
                    let c = spec.coupling[g_idx];
                    let (w_shared, w_own) = (c.sqrt(), (1.0 - c).sqrt());
                    for t in 0..n {
                        let extra = w_shared * shared[t] + w_own * own[t];
                        scout_sig[a][t] += spec.active_gain * gates[t] * extra;
                    }
                }
                let mut src = DMatrix::zeros(n_src, n);
                for (k, scout) in lf.scouts.iter().enumerate() {
                    for &s in &scout.sources {
                        for t in 0..n {
                            src[(s, t)] = scout_sig[k][t] + 0.2 * normal(&mut rng);
                        }
                    }
                }
                let mut x = &lf.gain * src;
                x.iter_mut().for_each(|v| *v += noise_sd * normal(&mut rng));
                epochs.push(x);
            }
            sets.push(EpochSet::new(
                epochs,
                spec.fs,
                spec.t0_offset,
                spec.stimulus,
                group,
                subject_id,
            )?);
        }
    }
    Ok(Study {
        leadfield: lf,
        sets,
    })
}

/// Writes a study in the input layout the CLI reads: `leadfield.csv`,
/// `atlas.json`, and `sets/<group>/<subject>_<stimulus>/`.
pub fn write_study(study: &Study, dir: impl AsRef<std::path::Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| crate::Error::io(dir, e))?;
    write_leadfield(
        &study.leadfield,
        dir.join("leadfield.csv"),
        dir.join("atlas.json"),
    )?;
    for set in &study.sets {
        let sub = dir
            .join("sets")
            .join(set.group.as_str())
            .join(format!("{}_{}", set.subject_id, set.stimulus));
        write_epochset(set, sub)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blob_means_are_separated() {
        let ds = gaussian_blobs(3, 400, 10, 8.0, 1);
        let mut means = vec![vec![0.0; 10]; 3];
        for i in 0..ds.n_examples() {
            means[ds.y[i]]
                .iter_mut()
                .zip(ds.row(i))
                .for_each(|(m, v)| *m += v / 400.0);
        }
        let d: f64 = means[0]
            .iter()
            .zip(&means[1])
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!((d - 8.0).abs() < 0.3, "{d}");
    }

    #[test]
    fn planted_blocks_are_contiguous() {
        let (z, block) = planted_block_zmatrix(62, 5, 3);
        assert_eq!(z.nrows(), 62);
        assert_eq!(block[0], 0);
        assert_eq!(block[61], 4);
        assert!(z[(0, 1)] > 0.8 && z[(0, 61)] < 0.5);
    }

    #[test]
    fn leadfield_has_full_average_reference_rank() {
        let lf = synthetic_leadfield(31, 3, 1);
        assert_eq!(lf.gain.shape(), (31, 186));
        let g = lf.average_referenced_gain();
        let sv = (&g * g.transpose()).symmetric_eigenvalues();
        let top = sv.max();
        assert_eq!(sv.iter().filter(|&&v| v > 1e-10 * top).count(), 30);
    }

    #[test]
    fn study_shapes_and_determinism() {
        let spec = StudySpec {
            subjects_per_group: 1,
            epochs_per_subject: 2,
            ..StudySpec::default()
        };
        let a = generate_study(&spec).unwrap();
        let b = generate_study(&spec).unwrap();
        assert_eq!(a.sets.len(), 2);
        assert_eq!(a.sets[0].epochs()[0].shape(), (31, 700));
        assert_eq!(a.sets, b.sets);
        assert_eq!(a.sets[1].group, Group::T);
    }
}
