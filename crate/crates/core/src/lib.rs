//! EEG source-connectivity analysis.
//!
//! The crate follows the data from epoched scalp recordings to per-epoch
//! graph features and classifiers:
//!
//! ```text
//! dataio       load epoch sets (.epb), leadfields (CSV) and atlas JSON
//!   preproc    zero-phase Butterworth bandpass, average reference, baseline
//!   inverse    sLORETA kernel, standardised sources, scout time series
//!   timefreq   Morlet power maps, baseline z-scores, band phase
//!   connectivity  Pearson / PLV matrices, thresholding, Fisher z
//!   graphfeat  degree, betweenness, eigenvector, closeness, clustering
//!   learn      k-fold CV over kNN, logistic regression, linear SVM, forests
//!   cluster    k-means with elbow selection over z-matrix rows
//!   report     paired t-test, activation AUC, chord-diagram SVG
//! ```

pub mod cluster;
pub mod connectivity;
pub mod dataio;
pub mod error;
pub mod graphfeat;
pub mod inverse;
pub mod learn;
pub mod preproc;
pub mod report;
pub mod synth;
pub mod timefreq;

pub use error::{Error, Result};
