//! Subcommands. Each runs the stages it needs, in fixed order, and writes
//! its artifacts plus `run_manifest.json` through one [`ArtifactWriter`].

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use clap::{Parser, ValueEnum};
use cortigraph::cluster::{cluster_elbow, reorder_adjacency};
use cortigraph::connectivity::{fisher_z_matrix, group_average, pearson_adjacency};
use cortigraph::dataio::{
    encode_epb, load_config, read_csv_matrix, FreqBand, PipelineConfig, Stimulus,
};
use cortigraph::graphfeat::{feature_names, FeatureVector};
use cortigraph::inverse::average_scout_series;
use cortigraph::learn::{
    kfold_cv, sweep_grid, threshold_sweep, CVResult, ClassifierSpec, FoldMode,
};
use cortigraph::report::{
    activation_difference_auc, paired_t_test, render_chord_svg, ColorScale, GroupStats, Tail,
};
use cortigraph::synth::{generate_study, write_study, StudySpec};
use cortigraph::timefreq::{band_zscore, morlet_transform, zscore_normalize, MorletSpec, TFMap};
use cortigraph::{Error, Result};
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::pipeline::*;

pub const MANIFEST_NAME: &str = "run_manifest.json";

/// k-means restarts used by `cluster`.
const CLUSTER_RESTARTS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Command {
    Preprocess,
    Sources,
    Timefreq,
    Connectivity,
    Features,
    Classify,
    Cluster,
    Report,
    /// Writes a synthetic two-group study in the input layout.
    Simulate,
}

impl Command {
    pub fn as_str(self) -> &'static str {
        match self {
            Command::Preprocess => "preprocess",
            Command::Sources => "sources",
            Command::Timefreq => "timefreq",
            Command::Connectivity => "connectivity",
            Command::Features => "features",
            Command::Classify => "classify",
            Command::Cluster => "cluster",
            Command::Report => "report",
            Command::Simulate => "simulate",
        }
    }

    pub fn stages(self) -> &'static [Stage] {
        use Stage::*;
        match self {
            Command::Preprocess => &[Ingest, Preproc],
            Command::Sources => &[Ingest, Preproc, Inverse, Scouts],
            Command::Timefreq => &[Ingest, Preproc, Inverse, Scouts, Timefreq],
            Command::Connectivity => &[Ingest, Preproc, Inverse, Scouts, Connectivity],
            Command::Features => &[Ingest, Preproc, Inverse, Scouts, Connectivity, Features],
            Command::Classify => &[
                Ingest,
                Preproc,
                Inverse,
                Scouts,
                Connectivity,
                Features,
                Classify,
            ],
            Command::Cluster => &[Ingest, Preproc, Inverse, Scouts, Connectivity, Cluster],
            Command::Report => &[
                Ingest,
                Preproc,
                Inverse,
                Scouts,
                Timefreq,
                Connectivity,
                Report,
            ],
            Command::Simulate => &[],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TailArg {
    One,
    Two,
}

impl From<TailArg> for Tail {
    fn from(t: TailArg) -> Self {
        match t {
            TailArg::One => Tail::One,
            TailArg::Two => Tail::Two,
        }
    }
}

fn parse_stimulus(s: &str) -> std::result::Result<Stimulus, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// EEG source-connectivity pipeline.
#[derive(Debug, Clone, Parser)]
#[command(name = "cortigraph", version)]
pub struct Cli {
    #[arg(value_enum)]
    pub command: Command,
    /// Pipeline configuration (JSON); built-in defaults when omitted.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Directory holding leadfield.csv, atlas.json and epoch-set folders.
    #[arg(long, value_name = "DIR")]
    pub input: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Keep only sets recorded under this stimulus.
    #[arg(long, value_parser = parse_stimulus)]
    pub stimulus: Option<Stimulus>,
    /// Frequency band (from the configuration) for PLV, time-frequency and
    /// report activation.
    #[arg(long)]
    pub band: Option<String>,
    #[arg(long = "rho-th", value_name = "F")]
    pub rho_th: Option<f64>,
    /// Threshold grid for `classify`.
    #[arg(long, value_name = "LO:HI:STEP")]
    pub sweep: Option<String>,
    /// RNG seed for folds and models (study seed for `simulate`).
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum, default_value = "pearson")]
    pub metric: Metric,
    /// Keep each subject's epochs inside one fold.
    #[arg(long)]
    pub group_by_subject: bool,
    /// Also write per-epoch scout series under this directory.
    #[arg(long, value_name = "DIR")]
    pub dump_sources: Option<PathBuf>,
    /// Classifier used with `--sweep`: kNN, LR, SVM or RF.
    #[arg(long, default_value = "RF")]
    pub classifier: String,
    /// Set-level matrices from epoch-averaged scout series instead of the
    /// mean of per-epoch matrices.
    #[arg(long)]
    pub average_series: bool,
    /// Headerless two-column CSV of paired values to test in `report`.
    #[arg(long, value_name = "FILE")]
    pub pairs: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "two")]
    pub tail: TailArg,
}

impl Cli {
    /// Default options for `command` on one input and output directory.
    pub fn for_command(command: Command, input: &Path, out: &Path) -> Self {
        Cli {
            command,
            config: None,
            input: Some(input.to_path_buf()),
            out: out.to_path_buf(),
            stimulus: None,
            band: None,
            rho_th: None,
            sweep: None,
            seed: None,
            metric: Metric::Pearson,
            group_by_subject: false,
            dump_sources: None,
            classifier: "RF".into(),
            average_series: false,
            pairs: None,
            tail: TailArg::Two,
        }
    }
}

/// One written file and its content hash.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

impl Artifact {
    fn to_json(&self) -> Value {
        json!({ "path": self.path, "sha256": self.sha256, "bytes": self.bytes })
    }
}

/// The only place a run writes files.
#[derive(Debug)]
pub struct ArtifactWriter {
    root: PathBuf,
    artifacts: Vec<Artifact>,
    dumps: Vec<Artifact>,
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn put(root: &Path, rel: &str, bytes: &[u8]) -> Result<Artifact> {
    let path = root.join(rel);
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| io_error(parent, e))?;
    }
    std::fs::write(&path, bytes).map_err(|e| io_error(&path, e))?;
    Ok(Artifact {
        path: rel.to_string(),
        sha256: hex::encode(Sha256::digest(bytes)),
        bytes: bytes.len(),
    })
}

impl ArtifactWriter {
    pub fn new(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root).map_err(|e| io_error(root, e))?;
        Ok(Self {
            root: root.to_path_buf(),
            artifacts: Vec::new(),
            dumps: Vec::new(),
        })
    }

    /// Writes `rel` under the output directory.
    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let a = put(&self.root, rel, bytes)?;
        self.artifacts.push(a);
        Ok(())
    }

    /// Writes `rel` under a directory outside the output tree.
    pub fn write_outside(&mut self, dir: &Path, rel: &str, bytes: &[u8]) -> Result<()> {
        let a = put(dir, rel, bytes)?;
        self.dumps.push(a);
        Ok(())
    }

    pub fn artifacts(&self) -> &[Artifact] {
        &self.artifacts
    }
}

/// What a finished run produced.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub command: Command,
    pub manifest: PathBuf,
    pub artifacts: Vec<Artifact>,
    /// Human-readable summary, one line each.
    pub lines: Vec<String>,
}

fn fmt_row(values: impl IntoIterator<Item = f64>) -> String {
    values
        .into_iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

/// Square matrix with a header row of node names.
fn matrix_csv(names: &[String], m: &DMatrix<f64>) -> String {
    let mut out = names.join(",") + "\n";
    for r in 0..m.nrows() {
        out += &fmt_row(m.row(r).iter().copied());
        out.push('\n');
    }
    out
}

/// Time column plus one column per named series.
fn series_csv(names: &[String], t0: f64, fs: f64, cols: &[Vec<f64>]) -> String {
    let mut out = format!("time,{}\n", names.join(","));
    let n = cols.first().map_or(0, Vec::len);
    for t in 0..n {
        let time = t0 + t as f64 / fs;
        out += &fmt_row(std::iter::once(time).chain(cols.iter().map(|c| c[t])));
        out.push('\n');
    }
    out
}

fn pretty(v: &Value) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("JSON values serialise");
    s.push('\n');
    s.into_bytes()
}

/// Parses `LO:HI:STEP`.
pub fn parse_sweep(text: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = text.split(':').collect();
    let bad = || Error::InvalidRange {
        field: "sweep".into(),
        reason: format!("expected LO:HI:STEP, got {text:?}"),
    };
    if parts.len() != 3 {
        return Err(bad());
    }
    let v = parts
        .iter()
        .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
        .collect::<Result<Vec<_>>>()?;
    sweep_grid(v[0], v[1], v[2])
}

/// Epoch-averaged Morlet power of every scout, z-scored against the
/// baseline and averaged over each band's frequencies. Indexed
/// `[band][scout][sample]`.
pub fn induced_activation(
    src: &SourceSet,
    cfg: &PipelineConfig,
    bands: &[FreqBand],
) -> Result<Vec<Vec<Vec<f64>>>> {
    let first = src
        .scouts
        .first()
        .ok_or_else(|| Error::EmptyInput(format!("set {} has no epochs", src.name)))?;
    let spec = MorletSpec::new(cfg.wavelet_fc, cfg.wavelet_fwhm, cfg.tf_freqs.frequencies());
    let per_scout = (0..first.n_scouts())
        .into_par_iter()
        .map(|s| {
            let mut acc: Option<TFMap> = None;
            for sm in &src.scouts {
                let tf = morlet_transform(&sm.column(s), sm.fs, sm.t0_offset, &spec)?;
                match acc.as_mut() {
                    None => acc = Some(tf),
                    Some(a) => {
                        for (ra, rb) in a.power.iter_mut().zip(&tf.power) {
                            ra.iter_mut().zip(rb).for_each(|(x, y)| *x += y);
                        }
                    }
                }
            }
            let mut tf = acc.expect("at least one epoch");
            let inv = 1.0 / src.scouts.len() as f64;
            tf.power.iter_mut().flatten().for_each(|p| *p *= inv);
            let z = zscore_normalize(&tf, cfg.baseline_window)?;
            bands
                .iter()
                .map(|b| band_zscore(&z, (b.lo, b.hi)))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((0..bands.len())
        .map(|b| per_scout.iter().map(|s| s[b].clone()).collect())
        .collect())
}

struct Run<'a> {
    cli: &'a Cli,
    cfg: PipelineConfig,
    writer: ArtifactWriter,
    lines: Vec<String>,
}

/// Runs one subcommand end to end.
pub fn execute(cli: &Cli) -> StageResult<RunReport> {
    if cli.command == Command::Simulate {
        return simulate(cli);
    }
    let mut cfg = match &cli.config {
        Some(p) => load_config(p).at(Stage::Ingest)?,
        None => PipelineConfig::default(),
    };
    if let Some(r) = cli.rho_th {
        cfg.rho_th = r;
    }
    if let Some(s) = cli.seed {
        cfg.rng_seed = s;
    }
    cfg.validate().at(Stage::Ingest)?;
    let root = cli
        .input
        .as_deref()
        .ok_or_else(|| Error::MissingInput("--input directory".into()))
        .at(Stage::Ingest)?;
    let inputs = Inputs::discover(root).at(Stage::Ingest)?;
    let sets = load_sets(&inputs, cli.stimulus).at(Stage::Ingest)?;
    let writer = ArtifactWriter::new(&cli.out).at(Stage::Ingest)?;
    let mut run = Run {
        cli,
        cfg,
        writer,
        lines: Vec::new(),
    };

    if cli.command == Command::Preprocess {
        run.preprocess(&sets)?;
    } else {
        let lf = inputs.load_leadfield().at(Stage::Inverse)?;
        let sources = run.sources(&sets, &lf)?;
        match cli.command {
            Command::Sources => {}
            Command::Timefreq => run.timefreq(&sources)?,
            _ => {
                let crun = run.connectivity(sources)?;
                match cli.command {
                    Command::Features => run.features(&crun)?,
                    Command::Classify => run.classify(&crun)?,
                    Command::Cluster => run.cluster(&crun)?,
                    Command::Report => run.report(&crun)?,
                    _ => {}
                }
            }
        }
    }
    run.finish(&sets)
}

impl Run<'_> {
    fn band(&self, stage: Stage) -> StageResult<FreqBand> {
        let name = self.cli.band.as_deref().unwrap_or("alpha");
        self.cfg
            .band(name)
            .cloned()
            .ok_or_else(|| Error::InvalidInput(format!("unknown band {name:?}")))
            .at(stage)
    }

    fn preprocess(&mut self, sets: &[NamedSet]) -> StageResult<()> {
        let done = sets
            .par_iter()
            .map(|s| preprocess(&s.set, &self.cfg))
            .collect::<Result<Vec<_>>>()
            .at(Stage::Preproc)?;
        for (named, x) in sets.iter().zip(&done) {
            let mut files = Vec::with_capacity(x.n_epochs());
            for (i, e) in x.epochs().iter().enumerate() {
                let file = format!("epoch_{i:04}.epb");
                self.writer
                    .write(&format!("preproc/{}/{file}", named.name), &encode_epb(e))
                    .at(Stage::Preproc)?;
                files.push(file);
            }
            let manifest = json!({
                "fs": x.fs,
                "t0_offset": x.t0_offset,
                "stimulus": x.stimulus.as_str(),
                "group": x.group.as_str(),
                "subject_id": x.subject_id,
                "n_channels": x.n_channels(),
                "n_samples": x.n_samples(),
                "epochs": files,
            });
            self.writer
                .write(
                    &format!("preproc/{}/manifest.json", named.name),
                    &pretty(&manifest),
                )
                .at(Stage::Preproc)?;
        }
        self.lines.push(format!("preprocessed {} sets", sets.len()));
        Ok(())
    }

    fn sources(
        &mut self,
        sets: &[NamedSet],
        lf: &cortigraph::dataio::LeadfieldModel,
    ) -> StageResult<Vec<SourceSet>> {
        let mut out = Vec::with_capacity(sets.len());
        let mut summary =
            String::from("set,group,stimulus,subject,n_epochs,lambda,zero_variance_scouts\n");
        for named in sets {
            let pre = NamedSet {
                name: named.name.clone(),
                set: preprocess(&named.set, &self.cfg).at(Stage::Preproc)?,
            };
            let src = source_scouts(&pre, lf, &self.cfg)?;
            let zero: BTreeSet<usize> = src
                .scouts
                .iter()
                .flat_map(|s| s.zero_variance.iter().copied())
                .collect();
            summary += &format!(
                "{},{},{},{},{},{},{}\n",
                src.name,
                src.meta.group,
                src.meta.stimulus,
                src.meta.subject_id,
                src.scouts.len(),
                src.lambda,
                zero.len()
            );
            if self.cli.command == Command::Sources {
                let mean = average_scout_series(&src.scouts).at(Stage::Scouts)?;
                let cols: Vec<Vec<f64>> = (0..mean.n_scouts()).map(|i| mean.column(i)).collect();
                let csv = series_csv(&mean.scout_names, mean.t0_offset, mean.fs, &cols);
                self.writer
                    .write(&format!("sources/{}/mean.csv", src.name), csv.as_bytes())
                    .at(Stage::Scouts)?;
            }
            if let Some(dir) = &self.cli.dump_sources {
                for (i, sm) in src.scouts.iter().enumerate() {
                    let cols: Vec<Vec<f64>> = (0..sm.n_scouts()).map(|c| sm.column(c)).collect();
                    let csv = series_csv(&sm.scout_names, sm.t0_offset, sm.fs, &cols);
                    self.writer
                        .write_outside(
                            dir,
                            &format!("{}/epoch_{i:04}.csv", src.name),
                            csv.as_bytes(),
                        )
                        .at(Stage::Scouts)?;
                }
            }
            out.push(src);
        }
        self.writer
            .write("sources/summary.csv", summary.as_bytes())
            .at(Stage::Scouts)?;
        Ok(out)
    }

    fn timefreq(&mut self, sources: &[SourceSet]) -> StageResult<()> {
        let bands = match &self.cli.band {
            Some(_) => vec![self.band(Stage::Timefreq)?],
            None => self.cfg.freq_bands.clone(),
        };
        for src in sources {
            let act = induced_activation(src, &self.cfg, &bands).at(Stage::Timefreq)?;
            let sm = &src.scouts[0];
            for (band, cols) in bands.iter().zip(&act) {
                let csv = series_csv(&sm.scout_names, sm.t0_offset, sm.fs, cols);
                self.writer
                    .write(
                        &format!("timefreq/{}/{}.csv", src.name, band.name),
                        csv.as_bytes(),
                    )
                    .at(Stage::Timefreq)?;
            }
        }
        self.lines.push(format!(
            "time-frequency maps for {} sets × {} bands",
            sources.len(),
            bands.len()
        ));
        Ok(())
    }

    /// Set-level weighted matrix.
    fn set_matrix(
        &self,
        src: &SourceSet,
        pairs: &[cortigraph::connectivity::ConnectivityPair],
    ) -> Result<DMatrix<f64>> {
        if self.cli.average_series {
            if self.cli.metric != Metric::Pearson {
                return Err(Error::InvalidInput(
                    "--average-series needs the pearson metric".into(),
                ));
            }
            return Ok(pearson_adjacency(&average_scout_series(&src.scouts)?).a_hat);
        }
        let items: Vec<DMatrix<f64>> = pairs.iter().map(|p| p.a_hat.clone()).collect();
        group_average(&items)
    }

    fn connectivity(&mut self, sources: Vec<SourceSet>) -> StageResult<ConnectivityRun> {
        let band = self.band(Stage::Connectivity)?;
        let rho = self.cfg.rho_th;
        let pairs = sources
            .iter()
            .map(|s| epoch_connectivity(s, self.cli.metric, (band.lo, band.hi), &band.name))
            .collect::<Result<Vec<_>>>()
            .at(Stage::Connectivity)?;
        let crun = ConnectivityRun { sources, pairs };
        let scale = ColorScale::default();
        let mut summary =
            String::from("set,group,stimulus,subject,n_epochs,mean_edges,mean_weight\n");
        let mut by_condition: Vec<(String, Vec<DMatrix<f64>>)> = Vec::new();
        for (src, pairs) in crun.sources.iter().zip(&crun.pairs) {
            let names = &src.scouts[0].scout_names;
            let m = self.set_matrix(src, pairs).at(Stage::Connectivity)?;
            let svg = render_chord_svg(&m, names, rho, &scale).at(Stage::Connectivity)?;
            self.writer
                .write(
                    &format!("connectivity/{}/adjacency.csv", src.name),
                    matrix_csv(names, &m).as_bytes(),
                )
                .at(Stage::Connectivity)?;
            self.writer
                .write(
                    &format!("connectivity/{}/chord.svg", src.name),
                    svg.as_bytes(),
                )
                .at(Stage::Connectivity)?;
            let n = m.nrows();
            let edges = pairs
                .iter()
                .map(|p| {
                    let mut c = 0usize;
                    for i in 0..n {
                        for j in 0..i {
                            c += usize::from(p.a_hat[(i, j)] >= rho);
                        }
                    }
                    c as f64
                })
                .sum::<f64>()
                / pairs.len().max(1) as f64;
            let mean_weight = if n > 1 {
                (m.sum() - m.trace()) / (n * (n - 1)) as f64
            } else {
                0.0
            };
            summary += &format!(
                "{},{},{},{},{},{},{}\n",
                src.name,
                src.meta.group,
                src.meta.stimulus,
                src.meta.subject_id,
                pairs.len(),
                edges,
                mean_weight
            );
            let key = format!("{}_{}", src.meta.group, src.meta.stimulus);
            match by_condition.iter_mut().find(|(k, _)| *k == key) {
                Some((_, v)) => v.push(m),
                None => by_condition.push((key, vec![m])),
            }
        }
        by_condition.sort_by(|a, b| a.0.cmp(&b.0));
        let names = &crun.sources[0].scouts[0].scout_names;
        for (key, mats) in &by_condition {
            let m = group_average(mats).at(Stage::Connectivity)?;
            let svg = render_chord_svg(&m, names, rho, &scale).at(Stage::Connectivity)?;
            self.writer
                .write(
                    &format!("connectivity/condition_{key}/adjacency.csv"),
                    matrix_csv(names, &m).as_bytes(),
                )
                .at(Stage::Connectivity)?;
            self.writer
                .write(
                    &format!("connectivity/condition_{key}/chord.svg"),
                    svg.as_bytes(),
                )
                .at(Stage::Connectivity)?;
        }
        self.writer
            .write("connectivity/summary.csv", summary.as_bytes())
            .at(Stage::Connectivity)?;
        self.lines.push(format!(
            "connectivity ({}) for {} sets, {} conditions",
            match self.cli.metric {
                Metric::Pearson => "pearson",
                Metric::Plv => "plv",
            },
            crun.sources.len(),
            by_condition.len()
        ));
        Ok(crun)
    }

    fn features(&mut self, crun: &ConnectivityRun) -> StageResult<()> {
        let rho = self.cfg.rho_th;
        let names = &crun.sources[0].scouts[0].scout_names;
        let mut csv = format!(
            "set,subject,group,stimulus,epoch,{}\n",
            feature_names(names).join(",")
        );
        let mut all: Vec<FeatureVector> = Vec::new();
        for (src, pairs) in crun.sources.iter().zip(&crun.pairs) {
            let fv = set_features(src, pairs, rho).at(Stage::Features)?;
            for (i, f) in fv.iter().enumerate() {
                csv += &format!(
                    "{},{},{},{},{i},{}\n",
                    src.name,
                    src.meta.subject_id,
                    src.meta.group,
                    src.meta.stimulus,
                    fmt_row(f.values.iter().copied())
                );
            }
            all.extend(fv);
        }
        let summary = json!({
            "rho_th": rho,
            "n_examples": all.len(),
            "n_features": all.first().map_or(0, |f| f.values.len()),
            "edgeless_graphs": all.iter().filter(|f| f.edgeless).count(),
            "disconnected_graphs": all.iter().filter(|f| f.disconnected).count(),
        });
        self.writer
            .write("features/features.csv", csv.as_bytes())
            .at(Stage::Features)?;
        self.writer
            .write("features/summary.json", &pretty(&summary))
            .at(Stage::Features)?;
        self.lines
            .push(format!("{} feature vectors at rho_th = {rho}", all.len()));
        Ok(())
    }

    fn classify(&mut self, crun: &ConnectivityRun) -> StageResult<()> {
        let mode = if self.cli.group_by_subject {
            FoldMode::BySubject
        } else {
            FoldMode::Stratified
        };
        let (folds, seed) = (self.cfg.n_folds, self.cfg.rng_seed);
        let stimuli: BTreeSet<Stimulus> = crun.sources.iter().map(|s| s.meta.stimulus).collect();
        let dataset = |stim: Stimulus, th: f64| {
            feature_dataset(&crun.features(th, |s| s.meta.stimulus == stim)?)
        };
        let mut results: Vec<CVResult> = Vec::new();
        if let Some(sweep) = &self.cli.sweep {
            let grid = parse_sweep(sweep).at(Stage::Classify)?;
            let clf = ClassifierSpec::from_name(&self.cli.classifier)
                .ok_or_else(|| {
                    Error::InvalidInput(format!("unknown classifier {:?}", self.cli.classifier))
                })
                .at(Stage::Classify)?;
            let mut csv = String::from("stimulus,rho_th,classifier,mean_accuracy\n");
            for &stim in &stimuli {
                let rows = threshold_sweep(&grid, |th| dataset(stim, th), &clf, folds, seed, mode)
                    .at(Stage::Classify)?;
                for mut r in rows {
                    r.stimulus = Some(stim.to_string());
                    csv += &format!(
                        "{},{},{},{}\n",
                        stim,
                        r.rho_th.unwrap_or(f64::NAN),
                        r.classifier,
                        r.mean_accuracy
                    );
                    self.lines.push(format!(
                        "{} @ {}",
                        r.table_row(),
                        r.rho_th.unwrap_or(f64::NAN)
                    ));
                    results.push(r);
                }
            }
            self.writer
                .write("classify/sweep.csv", csv.as_bytes())
                .at(Stage::Classify)?;
        } else {
            let rho = self.cfg.rho_th;
            let fold_cols: Vec<String> = (1..=folds).map(|f| format!("fold_{f}")).collect();
            let mut csv = format!(
                "stimulus,rho_th,classifier,mean_accuracy,{}\n",
                fold_cols.join(",")
            );
            let mut table = String::new();
            for &stim in &stimuli {
                let ds = dataset(stim, rho).at(Stage::Features)?;
                for clf in ClassifierSpec::defaults() {
                    let mut r = kfold_cv(&ds, &clf, folds, seed, mode).at(Stage::Classify)?;
                    r.stimulus = Some(stim.to_string());
                    r.rho_th = Some(rho);
                    csv += &format!(
                        "{stim},{rho},{},{},{}\n",
                        r.classifier,
                        r.mean_accuracy,
                        fmt_row(r.fold_accuracies.iter().copied())
                    );
                    table += &r.table_row();
                    table.push('\n');
                    self.lines.push(r.table_row());
                    results.push(r);
                }
            }
            self.writer
                .write("classify/accuracy.csv", csv.as_bytes())
                .at(Stage::Classify)?;
            self.writer
                .write("classify/table.txt", table.as_bytes())
                .at(Stage::Classify)?;
        }
        let json = serde_json::to_value(&results).expect("results serialise");
        self.writer
            .write("classify/results.json", &pretty(&json))
            .at(Stage::Classify)?;
        Ok(())
    }

    fn cluster(&mut self, crun: &ConnectivityRun) -> StageResult<()> {
        let items: Vec<DMatrix<f64>> = crun
            .pairs
            .iter()
            .flatten()
            .map(|p| p.a_hat.clone())
            .collect();
        let r = group_average(&items).at(Stage::Cluster)?;
        let z = fisher_z_matrix(&r).z;
        let ca = cluster_elbow(&z, self.cfg.k_max, self.cfg.rng_seed, CLUSTER_RESTARTS)
            .at(Stage::Cluster)?;
        let (reordered, perm) = reorder_adjacency(&z, &ca).at(Stage::Cluster)?;
        let names = &crun.sources[0].scouts[0].scout_names;
        let mut assign = String::from("scout,cluster\n");
        for (name, l) in names.iter().zip(&ca.labels) {
            assign += &format!("{name},{l}\n");
        }
        let mut wcss = String::from("k,wcss\n");
        for (k, w) in ca.wcss_curve.iter().enumerate() {
            wcss += &format!("{},{w}\n", k + 1);
        }
        let permuted: Vec<String> = perm.iter().map(|&i| names[i].clone()).collect();
        let mut sizes = vec![0usize; ca.k];
        ca.labels.iter().for_each(|&l| sizes[l] += 1);
        let summary = json!({ "k": ca.k, "wcss": ca.wcss, "cluster_sizes": sizes });
        self.writer
            .write("cluster/assignment.csv", assign.as_bytes())
            .at(Stage::Cluster)?;
        self.writer
            .write("cluster/wcss.csv", wcss.as_bytes())
            .at(Stage::Cluster)?;
        self.writer
            .write(
                "cluster/reordered_z.csv",
                matrix_csv(&permuted, &reordered).as_bytes(),
            )
            .at(Stage::Cluster)?;
        self.writer
            .write("cluster/summary.json", &pretty(&summary))
            .at(Stage::Cluster)?;
        self.lines.push(format!("elbow at k = {}", ca.k));
        Ok(())
    }

    fn report(&mut self, crun: &ConnectivityRun) -> StageResult<()> {
        let tail: Tail = self.cli.tail.into();
        let mut stats: Vec<GroupStats> = Vec::new();
        if let Some(path) = &self.cli.pairs {
            let m = read_csv_matrix(path).at(Stage::Report)?;
            if m.ncols() != 2 {
                return Err(Error::ShapeMismatch(format!(
                    "{} needs two columns, has {}",
                    path.display(),
                    m.ncols()
                )))
                .at(Stage::Report);
            }
            let a: Vec<f64> = m.column(0).iter().copied().collect();
            let b: Vec<f64> = m.column(1).iter().copied().collect();
            stats.push(paired_t_test(&a, &b, tail, "pairs").at(Stage::Report)?);
        }

        let groups: BTreeSet<_> = crun.sources.iter().map(|s| s.meta.group).collect();
        let stimuli: BTreeSet<_> = crun.sources.iter().map(|s| s.meta.stimulus).collect();
        let key = |s: &SourceSet| -> String {
            if groups.len() >= 2 {
                s.meta.group.to_string()
            } else {
                s.meta.stimulus.to_string()
            }
        };
        let conditions: Vec<String> = if groups.len() >= 2 {
            groups.iter().map(|g| g.to_string()).collect()
        } else {
            stimuli.iter().map(|s| s.to_string()).collect()
        };
        if conditions.len() < 2 && stats.is_empty() {
            return Err(Error::InvalidInput(
                "report needs two groups, two stimuli, or --pairs".into(),
            ))
            .at(Stage::Report);
        }

        if conditions.len() >= 2 {
            if conditions.len() > 2 {
                log::warn!(
                    "report compares {} and {}; other conditions are ignored",
                    conditions[0],
                    conditions[1]
                );
            }
            let band = self.band(Stage::Timefreq)?;
            let pick = [conditions[0].clone(), conditions[1].clone()];
            // activation[c][scout] = one post-stimulus series per set
            let mut activation: [Vec<Vec<Vec<f64>>>; 2] = [Vec::new(), Vec::new()];
            let mut matrices: [Vec<DMatrix<f64>>; 2] = [Vec::new(), Vec::new()];
            let first = &crun.sources[0].scouts[0];
            let names = first.scout_names.clone();
            let fs = first.fs;
            let onset = ((-first.t0_offset * fs).ceil().max(0.0) as usize).min(first.n_samples());
            for (src, pairs) in crun.sources.iter().zip(&crun.pairs) {
                let Some(c) = pick.iter().position(|k| *k == key(src)) else {
                    continue;
                };
                let act = induced_activation(src, &self.cfg, std::slice::from_ref(&band))
                    .at(Stage::Timefreq)?;
                if activation[c].is_empty() {
                    activation[c] = vec![Vec::new(); names.len()];
                }
                for (s, series) in act[0].iter().enumerate() {
                    activation[c][s].push(series[onset..].to_vec());
                }
                matrices[c].push(self.set_matrix(src, pairs).at(Stage::Report)?);
            }
            let mut auc_csv = String::from("scout,auc\n");
            let mut act_csv = format!("scout,mean_{},mean_{}\n", pick[0], pick[1]);
            let mean_of = |sets: &[Vec<f64>]| -> f64 {
                let n = sets.iter().map(Vec::len).sum::<usize>().max(1);
                sets.iter().flatten().sum::<f64>() / n as f64
            };
            let (mut a, mut b) = (Vec::new(), Vec::new());
            for (s, name) in names.iter().enumerate() {
                let auc = activation_difference_auc(&activation[0][s], &activation[1][s], 1.0 / fs)
                    .at(Stage::Report)?;
                auc_csv += &format!("{name},{auc}\n");
                a.push(mean_of(&activation[0][s]));
                b.push(mean_of(&activation[1][s]));
                act_csv += &format!("{name},{},{}\n", a[s], b[s]);
            }
            let label = format!("{} vs {} ({} activation)", pick[0], pick[1], band.name);
            stats.push(paired_t_test(&a, &b, tail, &label).at(Stage::Report)?);
            self.writer
                .write("report/auc.csv", auc_csv.as_bytes())
                .at(Stage::Report)?;
            self.writer
                .write("report/activation.csv", act_csv.as_bytes())
                .at(Stage::Report)?;
            for (c, mats) in pick.iter().zip(&matrices) {
                let m = group_average(mats).at(Stage::Report)?;
                let svg = render_chord_svg(&m, &names, self.cfg.rho_th, &ColorScale::default())
                    .at(Stage::Report)?;
                self.writer
                    .write(&format!("report/chord_{c}.svg"), svg.as_bytes())
                    .at(Stage::Report)?;
            }
        }

        let json: Vec<Value> = stats
            .iter()
            .map(|s| {
                json!({
                    "label": s.label,
                    "n_pairs": s.n_pairs,
                    "t_value": s.t_value,
                    "df": s.df,
                    "mean_diff": s.mean_diff,
                    "p_one_tailed": s.p_one_tailed,
                    "p_two_tailed": s.p_two_tailed,
                    "tail": match s.tail {
                        Tail::One => "one",
                        Tail::Two => "two",
                    },
                    "p_value": s.p_value(),
                    "degenerate": s.degenerate,
                })
            })
            .collect();
        self.writer
            .write("report/stats.json", &pretty(&Value::Array(json)))
            .at(Stage::Report)?;
        for s in &stats {
            self.lines.push(format!(
                "{}: t = {:.3}, df = {}, p = {:.4}",
                s.label,
                s.t_value,
                s.df,
                s.p_value()
            ));
        }
        Ok(())
    }

    fn finish(mut self, sets: &[NamedSet]) -> StageResult<RunReport> {
        let cli = self.cli;
        let manifest = json!({
            "tool": "cortigraph",
            "version": env!("CARGO_PKG_VERSION"),
            "command": cli.command.as_str(),
            "config": serde_json::to_value(&self.cfg).expect("config serialises"),
            "options": {
                "stimulus": cli.stimulus.map(|s| s.to_string()),
                "band": cli.band,
                "sweep": cli.sweep,
                "metric": match cli.metric {
                    Metric::Pearson => "pearson",
                    Metric::Plv => "plv",
                },
                "group_by_subject": cli.group_by_subject,
                "average_series": cli.average_series,
                "classifier": cli.classifier,
                "tail": match cli.tail {
                    TailArg::One => "one",
                    TailArg::Two => "two",
                },
            },
            "inputs": {
                "leadfield": "leadfield.csv",
                "atlas": "atlas.json",
                "sets": sets.iter().map(|s| s.name.clone()).collect::<Vec<_>>(),
            },
            "stages": cli.command.stages().iter().map(|s| s.as_str()).collect::<Vec<_>>(),
            "artifacts": self.writer.artifacts.iter().map(Artifact::to_json).collect::<Vec<_>>(),
            "dumps": self.writer.dumps.iter().map(Artifact::to_json).collect::<Vec<_>>(),
        });
        self.writer
            .write(MANIFEST_NAME, &pretty(&manifest))
            .at(Stage::Report)?;
        let mut artifacts = self.writer.artifacts;
        artifacts.pop();
        Ok(RunReport {
            command: cli.command,
            manifest: cli.out.join(MANIFEST_NAME),
            artifacts,
            lines: self.lines,
        })
    }
}

fn simulate(cli: &Cli) -> StageResult<RunReport> {
    let mut spec = StudySpec::default();
    if let Some(s) = cli.seed {
        spec.seed = s;
    }
    if let Some(s) = cli.stimulus {
        spec.stimulus = s;
    }
    let study = generate_study(&spec).at(Stage::Ingest)?;
    write_study(&study, &cli.out).at(Stage::Ingest)?;
    Ok(RunReport {
        command: Command::Simulate,
        manifest: cli.out.clone(),
        artifacts: Vec::new(),
        lines: vec![format!(
            "wrote {} epoch sets and a {}-channel leadfield to {}",
            study.sets.len(),
            study.leadfield.n_channels(),
            cli.out.display()
        )],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_grid_from_text() {
        let g = parse_sweep("0.5:0.95:0.05").unwrap();
        assert_eq!(g.len(), 10);
        assert_eq!(g[9], 0.95);
        assert_eq!(parse_sweep("0:1:0.1").unwrap().len(), 11);
        for bad in ["0.5:0.95", "a:1:0.1", "1:0:0.1", "0:1:0"] {
            assert!(parse_sweep(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn matrices_and_series_as_csv() {
        let names = vec!["a L".to_string(), "b R".to_string()];
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.25, 0.25, 1.0]);
        assert_eq!(matrix_csv(&names, &m), "a L,b R\n1,0.25\n0.25,1\n");
        let csv = series_csv(&names, -0.5, 2.0, &[vec![1.0, 2.0], vec![3.0, 4.0]]);
        assert_eq!(csv, "time,a L,b R\n-0.5,1,3\n0,2,4\n");
    }

    #[test]
    fn writer_hashes_content() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = ArtifactWriter::new(dir.path()).unwrap();
        w.write("x/y.txt", b"abc").unwrap();
        let a = &w.artifacts()[0];
        assert_eq!(a.path, "x/y.txt");
        assert_eq!(
            a.sha256,
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        assert_eq!(std::fs::read(dir.path().join("x/y.txt")).unwrap(), b"abc");
    }

    #[test]
    fn stage_lists_follow_pipeline_order() {
        for c in [
            Command::Features,
            Command::Classify,
            Command::Cluster,
            Command::Report,
        ] {
            let s = c.stages();
            assert!(s.windows(2).all(|w| w[0] < w[1]), "{c:?}");
            assert_eq!(s[0], Stage::Ingest);
        }
    }

    #[test]
    fn cli_parses_the_documented_flags() {
        let cli = Cli::try_parse_from([
            "cortigraph",
            "classify",
            "--config",
            "c.json",
            "--input",
            "in",
            "--out",
            "out",
            "--stimulus",
            "AV",
            "--band",
            "beta",
            "--rho-th",
            "0.8",
            "--sweep",
            "0.5:0.95:0.05",
            "--seed",
            "9",
            "--metric",
            "plv",
            "--group-by-subject",
            "--dump-sources",
            "d",
        ])
        .unwrap();
        assert_eq!(cli.command, Command::Classify);
        assert_eq!(cli.stimulus, Some(Stimulus::AV));
        assert_eq!(cli.metric, Metric::Plv);
        assert_eq!(cli.rho_th, Some(0.8));
        assert!(cli.group_by_subject);
        assert!(
            Cli::try_parse_from(["cortigraph", "classify", "--out", "o", "--stimulus", "B"])
                .is_err()
        );
    }
}
