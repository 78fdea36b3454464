//! In-memory analysis stages, from loaded epoch sets to per-epoch graphs and
//! feature datasets. Every function here is pure apart from reading inputs;
//! artifact writing lives in [`crate::run`].

use std::fmt;
use std::path::{Path, PathBuf};

use cortigraph::connectivity::{binarize, pearson_adjacency, plv_matrix, ConnectivityPair};
use cortigraph::dataio::{
    load_epochset, load_leadfield, EpochSet, LeadfieldModel, PipelineConfig, Stimulus,
};
use cortigraph::graphfeat::{assemble_all, FeatureVector, Graph};
use cortigraph::inverse::{
    apply_inverse, build_sloreta_kernel, estimate_noise_covariance, extract_scout_series,
    ScoutMatrix,
};
use cortigraph::learn::Dataset;
use cortigraph::preproc::{bandpass_filter, baseline_correct, rereference_average, FilterSpec};
use cortigraph::timefreq::band_phase;
use cortigraph::{Error, Result};
use rayon::prelude::*;

/// Pipeline stages, in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Ingest,
    Preproc,
    Inverse,
    Scouts,
    Timefreq,
    Connectivity,
    Features,
    Classify,
    Cluster,
    Report,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Preproc => "preproc",
            Stage::Inverse => "inverse",
            Stage::Scouts => "scouts",
            Stage::Timefreq => "timefreq",
            Stage::Connectivity => "connectivity",
            Stage::Features => "features",
            Stage::Classify => "classify",
            Stage::Cluster => "cluster",
            Stage::Report => "report",
        }
    }
}

/// A library error tagged with the stage that raised it.
#[derive(Debug)]
pub struct StageError {
    pub stage: Stage,
    pub error: Error,
}

impl StageError {
    /// `{"stage": …, "error": …, "message": …}` on one line.
    pub fn to_json(&self) -> String {
        serde_json::json!({
            "stage": self.stage.as_str(),
            "error": self.error.code(),
            "message": self.error.to_string(),
        })
        .to_string()
    }
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} stage: {}", self.stage.as_str(), self.error)
    }
}

impl std::error::Error for StageError {}

pub type StageResult<T> = std::result::Result<T, StageError>;

/// Attaches a stage to library errors.
pub trait AtStage<T> {
    fn at(self, stage: Stage) -> StageResult<T>;
}

impl<T> AtStage<T> for Result<T> {
    fn at(self, stage: Stage) -> StageResult<T> {
        self.map_err(|error| StageError { stage, error })
    }
}

/// Files of an input directory: `leadfield.csv`, `atlas.json`, and every
/// subdirectory holding a `manifest.json`, sorted by relative path.
#[derive(Debug, Clone)]
pub struct Inputs {
    pub root: PathBuf,
    pub leadfield: PathBuf,
    pub atlas: PathBuf,
    pub set_dirs: Vec<PathBuf>,
}

impl Inputs {
    pub fn discover(root: &Path) -> Result<Self> {
        if !root.is_dir() {
            return Err(Error::MissingInput(format!(
                "input directory {}",
                root.display()
            )));
        }
        let mut set_dirs = Vec::new();
        collect_set_dirs(root, &mut set_dirs)?;
        set_dirs.sort();
        if set_dirs.is_empty() {
            return Err(Error::MissingManifest(root.to_path_buf()));
        }
        Ok(Self {
            root: root.to_path_buf(),
            leadfield: root.join("leadfield.csv"),
            atlas: root.join("atlas.json"),
            set_dirs,
        })
    }

    /// Display name of a set: its path relative to the input root.
    pub fn set_name(&self, dir: &Path) -> String {
        dir.strip_prefix(&self.root)
            .unwrap_or(dir)
            .components()
            .map(|c| c.as_os_str().to_string_lossy())
            .collect::<Vec<_>>()
            .join("/")
    }

    pub fn load_leadfield(&self) -> Result<LeadfieldModel> {
        for p in [&self.leadfield, &self.atlas] {
            if !p.is_file() {
                return Err(Error::MissingInput(p.display().to_string()));
            }
        }
        load_leadfield(&self.leadfield, &self.atlas)
    }
}

fn collect_set_dirs(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    for entry in entries {
        let path = entry
            .map_err(|e| Error::Io {
                path: dir.to_path_buf(),
                source: e,
            })?
            .path();
        if path.is_dir() {
            if path.join("manifest.json").is_file() {
                out.push(path);
            } else {
                collect_set_dirs(&path, out)?;
            }
        }
    }
    Ok(())
}

/// A loaded epoch set with its display name.
#[derive(Debug, Clone)]
pub struct NamedSet {
    pub name: String,
    pub set: EpochSet,
}

/// Loads every discovered set, optionally keeping one stimulus.
pub fn load_sets(inputs: &Inputs, stimulus: Option<Stimulus>) -> Result<Vec<NamedSet>> {
    let mut out = Vec::new();
    for dir in &inputs.set_dirs {
        let set = load_epochset(dir)?;
        if stimulus.is_none_or(|s| s == set.stimulus) {
            out.push(NamedSet {
                name: inputs.set_name(dir),
                set,
            });
        }
    }
    if out.is_empty() {
        return Err(Error::EmptyInput(
            "no epoch sets match the selection".into(),
        ));
    }
    Ok(out)
}

/// Bandpass, average reference, baseline correction, then cropping to the
/// analysis window.
pub fn preprocess(set: &EpochSet, cfg: &PipelineConfig) -> Result<EpochSet> {
    cfg.check_fs(set.fs)?;
    let spec = FilterSpec {
        order: cfg.filter_order,
        band: (cfg.band_lo, cfg.band_hi),
    };
    let x = bandpass_filter(set, spec)?;
    let x = rereference_average(&x)?;
    let x = baseline_correct(&x, cfg.baseline_window)?;
    crop(&x, cfg.epoch_window)
}

/// Keeps the samples of `window` (seconds relative to onset).
pub fn crop(x: &EpochSet, window: (f64, f64)) -> Result<EpochSet> {
    let r = x.window_indices(window)?;
    if r.start == 0 && r.end == x.n_samples() {
        return Ok(x.clone());
    }
    let epochs = x
        .epochs()
        .iter()
        .map(|e| e.columns(r.start, r.len()).clone_owned())
        .collect();
    EpochSet::new(
        epochs,
        x.fs,
        x.t0_offset + r.start as f64 / x.fs,
        x.stimulus,
        x.group,
        x.subject_id.clone(),
    )
}

/// Per-epoch scout series of one preprocessed set, with the inverse
/// regularisation that produced them.
#[derive(Debug, Clone)]
pub struct SourceSet {
    pub name: String,
    pub meta: EpochSet,
    pub lambda: f64,
    pub scouts: Vec<ScoutMatrix>,
}

/// sLORETA sources from the baseline noise covariance, summarised per scout.
pub fn source_scouts(
    named: &NamedSet,
    lf: &LeadfieldModel,
    cfg: &PipelineConfig,
) -> StageResult<SourceSet> {
    let x = &named.set;
    let noise = estimate_noise_covariance(x, cfg.baseline_window).at(Stage::Inverse)?;
    let kernel = build_sloreta_kernel(lf, &noise, cfg.snr_assumed).at(Stage::Inverse)?;
    let sources = apply_inverse(x, &kernel).at(Stage::Inverse)?;
    let scouts = sources
        .par_iter()
        .map(|s| extract_scout_series(s, lf, x.fs, x.t0_offset))
        .collect::<Result<Vec<_>>>()
        .at(Stage::Scouts)?;
    Ok(SourceSet {
        name: named.name.clone(),
        meta: x
            .with_epochs(vec![x.epochs()[0].clone()])
            .at(Stage::Scouts)?,
        lambda: kernel.lambda,
        scouts,
    })
}

/// Connectivity estimator for the epoch graphs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Metric {
    Pearson,
    Plv,
}

/// Weighted adjacency per epoch.
pub fn epoch_connectivity(
    src: &SourceSet,
    metric: Metric,
    band: (f64, f64),
    band_name: &str,
) -> Result<Vec<ConnectivityPair>> {
    match metric {
        Metric::Pearson => Ok(src.scouts.par_iter().map(pearson_adjacency).collect()),
        Metric::Plv => src
            .scouts
            .par_iter()
            .map(|sm| {
                let phases = (0..sm.n_scouts())
                    .map(|i| band_phase(&sm.column(i), sm.fs, band))
                    .collect::<Result<Vec<_>>>()?;
                // one cycle of the band's lower edge is discarded at each end
                let discard = (sm.fs / band.0.max(1e-3)).ceil() as usize;
                let discard = discard.min(sm.n_samples().saturating_sub(1) / 2);
                let p = plv_matrix(&[phases], discard, band_name)?;
                Ok(ConnectivityPair {
                    a_hat: p.plv,
                    a_bin: None,
                    rho_th: None,
                    degenerate: sm.zero_variance.clone(),
                })
            })
            .collect(),
    }
}

/// Per-epoch graphs and labelled features of one set at a threshold.
pub fn set_features(
    src: &SourceSet,
    pairs: &[ConnectivityPair],
    rho_th: f64,
) -> Result<Vec<FeatureVector>> {
    let names = src
        .scouts
        .first()
        .map(|s| s.scout_names.clone())
        .ok_or_else(|| Error::EmptyInput(format!("set {} has no epochs", src.name)))?;
    let graphs = pairs
        .iter()
        .map(|cp| Graph::from_pair(&binarize(cp, rho_th)?, names.clone()))
        .collect::<Result<Vec<_>>>()?;
    Ok(assemble_all(&graphs)?
        .into_iter()
        .map(|f| f.with_labels(src.meta.group, src.meta.stimulus, &src.meta.subject_id))
        .collect())
}

/// Dataset labelled by group, with subject ids for subject-wise folds.
pub fn feature_dataset(features: &[FeatureVector]) -> Result<Dataset> {
    let rows = features.iter().map(|f| f.values.clone()).collect();
    let labels: Vec<String> = features
        .iter()
        .map(|f| f.group.map(|g| g.as_str().to_string()).unwrap_or_default())
        .collect();
    let subjects = features
        .iter()
        .map(|f| f.subject_id.clone().unwrap_or_default())
        .collect();
    Dataset::from_labels(rows, &labels, Some(subjects))
}

/// Everything needed to rebuild feature datasets at any threshold.
#[derive(Debug, Clone)]
pub struct ConnectivityRun {
    pub sources: Vec<SourceSet>,
    pub pairs: Vec<Vec<ConnectivityPair>>,
}

impl ConnectivityRun {
    /// Features of every epoch of the sets selected by `keep`, in set order.
    pub fn features(
        &self,
        rho_th: f64,
        keep: impl Fn(&SourceSet) -> bool,
    ) -> Result<Vec<FeatureVector>> {
        let mut out = Vec::new();
        for (src, pairs) in self.sources.iter().zip(&self.pairs) {
            if keep(src) {
                out.extend(set_features(src, pairs, rho_th)?);
            }
        }
        Ok(out)
    }
}

/// Preprocessing through per-epoch connectivity for a list of sets.
pub fn connectivity_run(
    sets: &[NamedSet],
    lf: &LeadfieldModel,
    cfg: &PipelineConfig,
    metric: Metric,
    band: (f64, f64),
    band_name: &str,
) -> StageResult<ConnectivityRun> {
    let mut sources = Vec::with_capacity(sets.len());
    let mut pairs = Vec::with_capacity(sets.len());
    for named in sets {
        let pre = NamedSet {
            name: named.name.clone(),
            set: preprocess(&named.set, cfg).at(Stage::Preproc)?,
        };
        let src = source_scouts(&pre, lf, cfg)?;
        pairs.push(epoch_connectivity(&src, metric, band, band_name).at(Stage::Connectivity)?);
        sources.push(src);
    }
    Ok(ConnectivityRun { sources, pairs })
}
