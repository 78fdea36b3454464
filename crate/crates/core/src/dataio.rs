//! On-disk formats and the validated in-memory types they load into.
//!
//! * An epoch set is a directory holding `manifest.json` plus one `.epb`
//!   file per epoch: the 4-byte magic `EPB1` followed by
//!   `n_channels × n_samples` little-endian `f32`, channel by channel.
//! * A leadfield is a headerless CSV of `n_channels` rows by `n_sources`
//!   columns, paired with an atlas JSON `{"scouts": [{"name", "sources"}]}`.
//! * A pipeline configuration is a JSON object; absent keys take defaults.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const EPB_MAGIC: &[u8; 4] = b"EPB1";

/// Stimulus condition of an epoch set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Stimulus {
    A,
    V,
    AV,
    A50V,
    V50A,
}

impl Stimulus {
    pub const ALL: [Stimulus; 5] = [
        Stimulus::A,
        Stimulus::V,
        Stimulus::AV,
        Stimulus::A50V,
        Stimulus::V50A,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stimulus::A => "A",
            Stimulus::V => "V",
            Stimulus::AV => "AV",
            Stimulus::A50V => "A50V",
            Stimulus::V50A => "V50A",
        }
    }
}

impl fmt::Display for Stimulus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stimulus {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stimulus::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown stimulus {s:?}")))
    }
}

/// Age group of the subject an epoch set was recorded from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Group {
    Y,
    T,
    M,
}

impl Group {
    pub const ALL: [Group; 3] = [Group::Y, Group::T, Group::M];

    pub fn as_str(self) -> &'static str {
        match self {
            Group::Y => "Y",
            Group::T => "T",
            Group::M => "M",
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Group {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Group::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown group {s:?}")))
    }
}

/// Epoched multichannel recording of one subject under one stimulus.
///
/// Each epoch is an `n_channels × n_samples` matrix in microvolts. Sample
/// `k` sits at `t0_offset + k / fs` seconds relative to stimulus onset.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochSet {
    epochs: Vec<DMatrix<f64>>,
    pub fs: f64,
    pub t0_offset: f64,
    pub stimulus: Stimulus,
    pub group: Group,
    pub subject_id: String,
}

impl EpochSet {
    pub fn new(
        epochs: Vec<DMatrix<f64>>,
        fs: f64,
        t0_offset: f64,
        stimulus: Stimulus,
        group: Group,
        subject_id: impl Into<String>,
    ) -> Result<Self> {
        let set = Self {
            epochs,
            fs,
            t0_offset,
            stimulus,
            group,
            subject_id: subject_id.into(),
        };
        set.validate()?;
        Ok(set)
    }

    fn validate(&self) -> Result<()> {
        if !(self.fs.is_finite() && self.fs > 0.0) {
            return Err(Error::range("fs", format!("{} must be > 0", self.fs)));
        }
        let first = self
            .epochs
            .first()
            .ok_or_else(|| Error::ShapeMismatch("epoch set has no epochs".into()))?;
        let (nc, ns) = first.shape();
        if nc == 0 || ns == 0 {
            return Err(Error::ShapeMismatch(format!("empty epoch {nc}x{ns}")));
        }
        for (i, e) in self.epochs.iter().enumerate() {
            if e.shape() != (nc, ns) {
                return Err(Error::ShapeMismatch(format!(
                    "epoch {i} is {:?}, expected {:?}",
                    e.shape(),
                    (nc, ns)
                )));
            }
            if e.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteValue(format!("epoch {i}")));
            }
        }
        let end = self.t0_offset + ns as f64 / self.fs;
        if !(self.t0_offset < 0.0 && end > 0.0) {
            return Err(Error::range(
                "t0_offset",
                format!(
                    "epoch span ({}, {end}) s must contain stimulus onset",
                    self.t0_offset
                ),
            ));
        }
        Ok(())
    }

    /// Same metadata, new epoch data. Shapes are re-validated.
    pub fn with_epochs(&self, epochs: Vec<DMatrix<f64>>) -> Result<Self> {
        Self::new(
            epochs,
            self.fs,
            self.t0_offset,
            self.stimulus,
            self.group,
            self.subject_id.clone(),
        )
    }

    pub fn epochs(&self) -> &[DMatrix<f64>] {
        &self.epochs
    }

    pub fn into_epochs(self) -> Vec<DMatrix<f64>> {
        self.epochs
    }

    pub fn n_epochs(&self) -> usize {
        self.epochs.len()
    }

    pub fn n_channels(&self) -> usize {
        self.epochs[0].nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.epochs[0].ncols()
    }

    /// Epoch span in seconds, `(t0_offset, t0_offset + n_samples / fs)`.
    pub fn span(&self) -> (f64, f64) {
        (
            self.t0_offset,
            self.t0_offset + self.n_samples() as f64 / self.fs,
        )
    }

    pub fn window_indices(&self, window: (f64, f64)) -> Result<std::ops::Range<usize>> {
        window_indices(window, self.t0_offset, self.fs, self.n_samples())
    }
}

/// Sample range `[start, end)` covered by a window given in seconds.
///
/// Sample `k` sits at `t0 + k / fs`; the window must lie inside the epoch
/// span and cover at least one sample.
pub fn window_indices(
    window: (f64, f64),
    t0: f64,
    fs: f64,
    n_samples: usize,
) -> Result<std::ops::Range<usize>> {
    let (start, end) = window;
    let epoch_end = t0 + n_samples as f64 / fs;
    let slack = 1e-9;
    let outside = || Error::WindowOutsideEpoch {
        start,
        end,
        epoch_start: t0,
        epoch_end,
    };
    if !(start.is_finite() && end.is_finite()) || start < t0 - slack || end > epoch_end + slack {
        return Err(outside());
    }
    let i0 = ((start - t0) * fs).round().max(0.0) as usize;
    let i1 = (((end - t0) * fs).round() as usize).min(n_samples);
    if i1 <= i0 {
        return Err(outside());
    }
    Ok(i0..i1)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    fs: f64,
    t0_offset: f64,
    stimulus: Stimulus,
    group: Group,
    subject_id: String,
    n_channels: usize,
    n_samples: usize,
    epochs: Vec<String>,
}

/// Loads and validates an epoch-set directory.
pub fn load_epochset(dir: impl AsRef<Path>) -> Result<EpochSet> {
    let dir = dir.as_ref();
    let manifest_path = dir.join("manifest.json");
    if !manifest_path.is_file() {
        return Err(Error::MissingManifest(dir.to_path_buf()));
    }
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: manifest_path.clone(),
        reason: e.to_string(),
    })?;
    if manifest.epochs.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "{} lists no epochs",
            manifest_path.display()
        )));
    }
    let epochs = manifest
        .epochs
        .iter()
        .map(|rel| read_epb(&dir.join(rel), manifest.n_channels, manifest.n_samples))
        .collect::<Result<Vec<_>>>()?;
    EpochSet::new(
        epochs,
        manifest.fs,
        manifest.t0_offset,
        manifest.stimulus,
        manifest.group,
        manifest.subject_id,
    )
}

fn read_epb(path: &Path, n_channels: usize, n_samples: usize) -> Result<DMatrix<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 4 || &bytes[..4] != EPB_MAGIC {
        return Err(Error::BadMagic(path.to_path_buf()));
    }
    let payload = &bytes[4..];
    let expected = n_channels * n_samples * 4;
    if payload.len() != expected {
        return Err(Error::ShapeMismatch(format!(
            "{}: payload is {} bytes, expected {expected} ({n_channels}x{n_samples} f32)",
            path.display(),
            payload.len()
        )));
    }
    let mut m = DMatrix::zeros(n_channels, n_samples);
    for (k, chunk) in payload.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        if !v.is_finite() {
            return Err(Error::NonFiniteValue(format!(
                "{} at channel {}, sample {}",
                path.display(),
                k / n_samples,
                k % n_samples
            )));
        }
        m[(k / n_samples, k % n_samples)] = v as f64;
    }
    Ok(m)
}

/// Encodes one epoch as an `.epb` byte buffer (values narrowed to `f32`).
pub fn encode_epb(epoch: &DMatrix<f64>) -> Vec<u8> {
    let (nc, ns) = epoch.shape();
    let mut out = Vec::with_capacity(4 + nc * ns * 4);
    out.extend_from_slice(EPB_MAGIC);
    for c in 0..nc {
        for t in 0..ns {
            out.extend_from_slice(&(epoch[(c, t)] as f32).to_le_bytes());
        }
    }
    out
}

/// Writes an epoch set as `manifest.json` plus `epoch_NNNN.epb` files.
pub fn write_epochset(set: &EpochSet, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut names = Vec::with_capacity(set.n_epochs());
    for (i, epoch) in set.epochs().iter().enumerate() {
        let name = format!("epoch_{i:04}.epb");
        let path = dir.join(&name);
        fs::write(&path, encode_epb(epoch)).map_err(|e| Error::io(&path, e))?;
        names.push(name);
    }
    let manifest = Manifest {
        fs: set.fs,
        t0_offset: set.t0_offset,
        stimulus: set.stimulus,
        group: set.group,
        subject_id: set.subject_id.clone(),
        n_channels: set.n_channels(),
        n_samples: set.n_samples(),
        epochs: names,
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serialises");
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

/// Atlas region summarised into one time series.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scout {
    pub name: String,
    pub sources: Vec<usize>,
}

/// Forward gain matrix (channels × sources, one scalar per constrained
/// dipole) together with the atlas mapping sources to scouts.
#[derive(Debug, Clone)]
pub struct LeadfieldModel {
    pub gain: DMatrix<f64>,
    pub scouts: Vec<Scout>,
}

impl LeadfieldModel {
    pub fn new(gain: DMatrix<f64>, scouts: Vec<Scout>) -> Result<Self> {
        let n_sources = gain.ncols();
        if gain.nrows() < 2 || n_sources == 0 {
            return Err(Error::ShapeMismatch(format!(
                "leadfield is {}x{}, need >= 2 channels and >= 1 source",
                gain.nrows(),
                n_sources
            )));
        }
        if gain.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue("leadfield gain".into()));
        }
        if scouts.is_empty() {
            return Err(Error::InvalidInput("atlas has no scouts".into()));
        }
        let mut owner: Vec<Option<usize>> = vec![None; n_sources];
        let mut seen_names = HashMap::new();
        for (si, scout) in scouts.iter().enumerate() {
            if seen_names.insert(scout.name.as_str(), si).is_some() {
                return Err(Error::DuplicateName(scout.name.clone()));
            }
            if scout.sources.is_empty() {
                return Err(Error::InvalidInput(format!(
                    "scout {} has no sources",
                    scout.name
                )));
            }
            for &idx in &scout.sources {
                if idx >= n_sources {
                    return Err(Error::IndexOutOfRange {
                        scout: scout.name.clone(),
                        index: idx,
                        n_sources,
                    });
                }
                if let Some(prev) = owner[idx] {
                    return Err(Error::DuplicateSourceAssignment {
                        index: idx,
                        first: scouts[prev].name.clone(),
                        second: scout.name.clone(),
                    });
                }
                owner[idx] = Some(si);
            }
        }
        let model = Self { gain, scouts };
        let rank = model.referenced_rank();
        if rank + 1 < model.n_channels() {
            log::warn!(
                "average-referenced leadfield has rank {rank}, expected {}",
                model.n_channels() - 1
            );
        }
        Ok(model)
    }

    pub fn n_channels(&self) -> usize {
        self.gain.nrows()
    }

    pub fn n_sources(&self) -> usize {
        self.gain.ncols()
    }

    pub fn n_scouts(&self) -> usize {
        self.scouts.len()
    }

    pub fn scout_names(&self) -> Vec<String> {
        self.scouts.iter().map(|s| s.name.clone()).collect()
    }

    /// Gain with the channel mean removed from every source column.
    pub fn average_referenced_gain(&self) -> DMatrix<f64> {
        let mut g = self.gain.clone();
        for mut col in g.column_iter_mut() {
            let mean = col.mean();
            col.add_scalar_mut(-mean);
        }
        g
    }

    /// Numerical rank of the average-referenced gain, via the eigenvalues of
    /// the small `n_channels × n_channels` Gram matrix.
    fn referenced_rank(&self) -> usize {
        let g = self.average_referenced_gain();
        let gram = &g * g.transpose();
        let eig = gram.symmetric_eigenvalues();
        let max = eig.iter().cloned().fold(0.0_f64, f64::max);
        if max <= 0.0 {
            return 0;
        }
        eig.iter().filter(|&&v| v > max * 1e-12).count()
    }
}

#[derive(Deserialize)]
struct AtlasFile {
    scouts: Vec<Scout>,
}

/// Reads a headerless numeric CSV into a dense matrix.
pub fn read_csv_matrix(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (r, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|f| {
                f.trim().parse::<f64>().map_err(|e| Error::Parse {
                    path: path.to_path_buf(),
                    reason: format!("row {r}: {e}"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(Error::RaggedCsv {
                    path: path.to_path_buf(),
                    row: r,
                    found: row.len(),
                    expected: first.len(),
                });
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::ShapeMismatch(format!("{} is empty", path.display())));
    }
    let ncols = rows[0].len();
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

/// Loads a leadfield CSV and its atlas JSON.
pub fn load_leadfield(
    gain_path: impl AsRef<Path>,
    atlas_path: impl AsRef<Path>,
) -> Result<LeadfieldModel> {
    let gain = read_csv_matrix(gain_path)?;
    let atlas_path = atlas_path.as_ref();
    let text = fs::read_to_string(atlas_path).map_err(|e| Error::io(atlas_path, e))?;
    let atlas: AtlasFile = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: atlas_path.to_path_buf(),
        reason: e.to_string(),
    })?;
    LeadfieldModel::new(gain, atlas.scouts)
}

/// Writes a leadfield as CSV plus atlas JSON.
pub fn write_leadfield(
    lf: &LeadfieldModel,
    gain_path: impl AsRef<Path>,
    atlas_path: impl AsRef<Path>,
) -> Result<()> {
    let gain_path = gain_path.as_ref();
    let mut text = String::new();
    for r in 0..lf.gain.nrows() {
        let row: Vec<String> = lf.gain.row(r).iter().map(|v| format!("{v:e}")).collect();
        text.push_str(&row.join(","));
        text.push('\n');
    }
    fs::write(gain_path, text).map_err(|e| Error::io(gain_path, e))?;
    let atlas_path = atlas_path.as_ref();
    let json = serde_json::json!({ "scouts": lf.scouts });
    let text = serde_json::to_string_pretty(&json).expect("atlas serialises");
    fs::write(atlas_path, text + "\n").map_err(|e| Error::io(atlas_path, e))
}

/// Named frequency band in Hz.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreqBand {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
}

impl FreqBand {
    pub fn new(name: &str, lo: f64, hi: f64) -> Self {
        Self {
            name: name.to_string(),
            lo,
            hi,
        }
    }
}

/// Linear frequency grid `lo, lo + step, ..., <= hi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FreqGrid {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl FreqGrid {
    pub fn frequencies(&self) -> Vec<f64> {
        let n = ((self.hi - self.lo) / self.step + 1e-9).floor() as usize + 1;
        (0..n).map(|i| self.lo + i as f64 * self.step).collect()
    }
}

/// Protocol constants for a pipeline run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub band_lo: f64,
    pub band_hi: f64,
    /// Butterworth bandpass order (number of poles, even).
    pub filter_order: usize,
    pub rho_th: f64,
    pub baseline_window: (f64, f64),
    pub epoch_window: (f64, f64),
    pub snr_assumed: f64,
    pub wavelet_fc: f64,
    pub wavelet_fwhm: f64,
    pub tf_freqs: FreqGrid,
    pub freq_bands: Vec<FreqBand>,
    pub k_max: usize,
    pub n_folds: usize,
    pub rng_seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            band_lo: 0.5,
            band_hi: 40.0,
            filter_order: 4,
            rho_th: 0.85,
            baseline_window: (-0.5, 0.0),
            epoch_window: (-0.5, 0.9),
            snr_assumed: 3.0,
            wavelet_fc: 1.0,
            wavelet_fwhm: 1.0,
            tf_freqs: FreqGrid {
                lo: 4.0,
                hi: 40.0,
                step: 1.0,
            },
            freq_bands: default_bands(),
            k_max: 10,
            n_folds: 10,
            rng_seed: 42,
        }
    }
}

pub fn default_bands() -> Vec<FreqBand> {
    vec![
        FreqBand::new("theta", 4.0, 7.0),
        FreqBand::new("alpha", 8.0, 13.0),
        FreqBand::new("beta", 14.0, 30.0),
        FreqBand::new("gamma", 30.0, 40.0),
    ]
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let finite = |name: &str, v: f64| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(Error::range(name, "must be finite"))
            }
        };
        for (name, v) in [
            ("band_lo", self.band_lo),
            ("band_hi", self.band_hi),
            ("rho_th", self.rho_th),
            ("snr_assumed", self.snr_assumed),
            ("wavelet_fc", self.wavelet_fc),
            ("wavelet_fwhm", self.wavelet_fwhm),
        ] {
            finite(name, v)?;
        }
        if !(0.0 < self.band_lo && self.band_lo < self.band_hi) {
            return Err(Error::range(
                "band_lo/band_hi",
                format!("need 0 < {} < {}", self.band_lo, self.band_hi),
            ));
        }
        if self.filter_order < 2 || !self.filter_order.is_multiple_of(2) {
            return Err(Error::range("filter_order", "must be even and >= 2"));
        }
        if !(0.0..=1.0).contains(&self.rho_th) {
            return Err(Error::range(
                "rho_th",
                format!("{} not in [0, 1]", self.rho_th),
            ));
        }
        for (name, (a, b)) in [
            ("baseline_window", self.baseline_window),
            ("epoch_window", self.epoch_window),
        ] {
            if !(a.is_finite() && b.is_finite() && a < b) {
                return Err(Error::range(name, format!("({a}, {b}) is empty")));
            }
        }
        if self.snr_assumed <= 0.0 {
            return Err(Error::range("snr_assumed", "must be > 0"));
        }
        if self.wavelet_fc <= 0.0 || self.wavelet_fwhm <= 0.0 {
            return Err(Error::range("wavelet_fc/wavelet_fwhm", "must be > 0"));
        }
        let g = self.tf_freqs;
        if !(g.lo > 0.0 && g.step > 0.0 && g.hi >= g.lo) {
            return Err(Error::range("tf_freqs", "need 0 < lo <= hi and step > 0"));
        }
        for b in &self.freq_bands {
            if !(b.lo >= 0.0 && b.lo <= b.hi) {
                return Err(Error::range(
                    "freq_bands",
                    format!("band {} ({}, {}) is inverted", b.name, b.lo, b.hi),
                ));
            }
        }
        if self.k_max < 2 {
            return Err(Error::range("k_max", "must be >= 2"));
        }
        if self.n_folds < 2 {
            return Err(Error::range("n_folds", "must be >= 2"));
        }
        Ok(())
    }

    /// Checks the filter band against a sampling rate.
    pub fn check_fs(&self, fs: f64) -> Result<()> {
        if self.band_hi >= fs / 2.0 {
            return Err(Error::BandOutOfRange {
                lo: self.band_lo,
                hi: self.band_hi,
                nyquist: fs / 2.0,
            });
        }
        Ok(())
    }

    pub fn band(&self, name: &str) -> Option<&FreqBand> {
        self.freq_bands.iter().find(|b| b.name == name)
    }
}

/// Parses a configuration from JSON text.
pub fn parse_config(text: &str) -> Result<PipelineConfig> {
    let cfg: PipelineConfig = serde_json::from_str(text).map_err(|e| Error::Parse {
        path: PathBuf::from("<config>"),
        reason: e.to_string(),
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: impl AsRef<Path>) -> Result<PipelineConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text).map_err(|e| match e {
        Error::Parse { reason, .. } => Error::Parse {
            path: path.to_path_buf(),
            reason,
        },
        other => other,
    })
}

/// The 31 cortical regions of the Mindboggle (DKT) labelling, one per
/// hemisphere in the 62-scout reference atlas.
pub const DKT_REGIONS: [&str; 31] = [
    "caudalanteriorcingulate",
    "caudalmiddlefrontal",
    "cuneus",
    "entorhinal",
    "fusiform",
    "inferiorparietal",
    "inferiortemporal",
    "insula",
    "isthmuscingulate",
    "lateraloccipital",
    "lateralorbitofrontal",
    "lingual",
    "medialorbitofrontal",
    "middletemporal",
    "paracentral",
    "parahippocampal",
    "parsopercularis",
    "parsorbitalis",
    "parstriangularis",
    "pericalcarine",
    "postcentral",
    "posteriorcingulate",
    "precentral",
    "precuneus",
    "rostralanteriorcingulate",
    "rostralmiddlefrontal",
    "superiorfrontal",
    "superiorparietal",
    "superiortemporal",
    "supramarginal",
    "transversetemporal",
];

/// Scout names of the 62-region reference atlas, `"<region> L"` for all
/// regions followed by `"<region> R"`.
pub fn reference_scout_names() -> Vec<String> {
    ["L", "R"]
        .iter()
        .flat_map(|h| DKT_REGIONS.iter().map(move |r| format!("{r} {h}")))
        .collect()
}

/// The twelve audio-visual-integration scouts merged into `"AVI"`.
///
/// Regions named without a hemisphere resolve to the left one.
pub const AVI_SCOUTS: [&str; 12] = [
    "caudalanteriorcingulate L",
    "caudalmiddlefrontal L",
    "fusiform L",
    "insula L",
    "lateralorbitofrontal L",
    "middletemporal R",
    "parsopercularis L",
    "parstriangularis L",
    "superiorfrontal L",
    "superiorparietal L",
    "superiortemporal L",
    "transversetemporal L",
];

#[cfg(test)]
mod tests {
    use super::*;

    fn small_set() -> EpochSet {
        let epochs = (0..3)
            .map(|e| DMatrix::from_fn(2, 10, |c, t| (e * 100 + c * 10 + t) as f64 * 0.5))
            .collect();
        EpochSet::new(epochs, 10.0, -0.5, Stimulus::AV, Group::M, "s01").unwrap()
    }

    #[test]
    fn empty_directory_is_missing_manifest() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_epochset(dir.path()),
            Err(Error::MissingManifest(_))
        ));
    }

    #[test]
    fn truncated_epoch_is_shape_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        write_epochset(&small_set(), dir.path()).unwrap();
        let p = dir.path().join("epoch_0001.epb");
        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..bytes.len() - 4]).unwrap();
        assert!(matches!(
            load_epochset(dir.path()),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn bad_magic_and_nan_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_epochset(&small_set(), dir.path()).unwrap();
        let p = dir.path().join("epoch_0000.epb");
        let mut bytes = fs::read(&p).unwrap();
        bytes[0] = b'X';
        fs::write(&p, &bytes).unwrap();
        assert!(matches!(load_epochset(dir.path()), Err(Error::BadMagic(_))));

        bytes[0] = b'E';
        bytes[8..12].copy_from_slice(&f32::NAN.to_le_bytes());
        fs::write(&p, &bytes).unwrap();
        assert!(matches!(
            load_epochset(dir.path()),
            Err(Error::NonFiniteValue(_))
        ));
    }

    #[test]
    fn epb_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let set = small_set();
        write_epochset(&set, dir.path()).unwrap();
        let before = fs::read(dir.path().join("epoch_0002.epb")).unwrap();
        let loaded = load_epochset(dir.path()).unwrap();
        assert_eq!(loaded, set);
        let out = tempfile::tempdir().unwrap();
        write_epochset(&loaded, out.path()).unwrap();
        assert_eq!(before, fs::read(out.path().join("epoch_0002.epb")).unwrap());
    }

    #[test]
    fn epoch_span_must_contain_onset() {
        let e = vec![DMatrix::zeros(2, 10)];
        assert!(EpochSet::new(e.clone(), 10.0, 0.1, Stimulus::A, Group::Y, "x").is_err());
        assert!(EpochSet::new(e.clone(), 0.0, -0.1, Stimulus::A, Group::Y, "x").is_err());
        assert!(EpochSet::new(e, 10.0, -0.1, Stimulus::A, Group::Y, "x").is_ok());
    }

    fn scouts(spec: &[(&str, &[usize])]) -> Vec<Scout> {
        spec.iter()
            .map(|(n, s)| Scout {
                name: n.to_string(),
                sources: s.to_vec(),
            })
            .collect()
    }

    #[test]
    fn leadfield_validation() {
        let gain = DMatrix::from_fn(3, 4, |i, j| ((i * 7 + j * 3) % 5) as f64);
        assert!(
            LeadfieldModel::new(gain.clone(), scouts(&[("a", &[0, 1]), ("b", &[2, 3])])).is_ok()
        );
        assert!(matches!(
            LeadfieldModel::new(gain.clone(), scouts(&[("a", &[0, 4])])),
            Err(Error::IndexOutOfRange { index: 4, .. })
        ));
        assert!(matches!(
            LeadfieldModel::new(gain, scouts(&[("a", &[0, 1]), ("b", &[1])])),
            Err(Error::DuplicateSourceAssignment { index: 1, .. })
        ));
    }

    #[test]
    fn ragged_csv_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.csv");
        fs::write(&p, "1,2,3\n4,5\n").unwrap();
        assert!(matches!(
            read_csv_matrix(&p),
            Err(Error::RaggedCsv { row: 1, .. })
        ));
    }

    #[test]
    fn config_defaults_and_ranges() {
        let cfg = parse_config("{}").unwrap();
        assert_eq!((cfg.band_lo, cfg.band_hi), (0.5, 40.0));
        assert_eq!(cfg.rho_th, 0.85);
        assert_eq!(cfg.baseline_window, (-0.5, 0.0));
        assert_eq!(cfg.epoch_window, (-0.5, 0.9));
        assert_eq!(cfg.n_folds, 10);
        assert!(matches!(
            parse_config(r#"{"rho_th": 1.5}"#),
            Err(Error::InvalidRange { .. })
        ));
        assert_eq!(parse_config(r#"{"n_folds": 10}"#).unwrap().n_folds, 10);
        assert!(parse_config(r#"{"n_folds": 1}"#).is_err());
        assert!(parse_config(r#"{"k_max": 1}"#).is_err());
        assert!(parse_config(r#"{"band_lo": 50}"#).is_err());
        assert!(parse_config(r#"{"rho_thx": 0.5}"#).is_err());
    }

    #[test]
    fn window_indices_follow_sample_times() {
        // -0.5 .. 0.9 s at 500 Hz: pre-stimulus is the first 250 samples
        assert_eq!(
            window_indices((-0.5, 0.0), -0.5, 500.0, 700).unwrap(),
            0..250
        );
        assert!(matches!(
            window_indices((1.0, 2.0), -0.5, 500.0, 700),
            Err(Error::WindowOutsideEpoch { .. })
        ));
    }

    #[test]
    fn reference_atlas_has_62_scouts_including_avi_set() {
        let names = reference_scout_names();
        assert_eq!(names.len(), 62);
        for avi in AVI_SCOUTS {
            assert!(names.iter().any(|n| n == avi), "{avi}");
        }
    }
}
