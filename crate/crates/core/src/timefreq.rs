//! Complex Morlet time-frequency maps, baseline z-scoring, band summaries
//! and analytic-signal phase.

use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::preproc::{butterworth_bandpass, FilterSpec};

/// Mother wavelet and analysis grid.
///
/// `fwhm_t` is the temporal full width at half maximum of the Gaussian
/// envelope at `fc`; at any other frequency `f` the envelope width scales by
/// `fc / f`, so every wavelet holds the same number of cycles.
#[derive(Debug, Clone, PartialEq)]
pub struct MorletSpec {
    pub fc: f64,
    pub fwhm_t: f64,
    pub freqs: Vec<f64>,
}

impl MorletSpec {
    pub fn new(fc: f64, fwhm_t: f64, freqs: Vec<f64>) -> Self {
        Self { fc, fwhm_t, freqs }
    }

    /// Envelope standard deviation (s) at frequency `f`.
    pub fn sigma_t(&self, f: f64) -> f64 {
        let sigma_fc = self.fwhm_t / (2.0 * (2.0 * 2f64.ln()).sqrt());
        sigma_fc * self.fc / f
    }

    /// Samples on each side of the kernel centre (three envelope widths).
    pub fn half_support(&self, f: f64, fs: f64) -> usize {
        (3.0 * self.sigma_t(f) * fs).ceil() as usize
    }

    fn validate(&self, fs: f64) -> Result<()> {
        if !(self.fc > 0.0 && self.fwhm_t > 0.0) {
            return Err(Error::range("morlet", "fc and fwhm_t must be > 0"));
        }
        if self.freqs.is_empty() {
            return Err(Error::EmptyInput("no analysis frequencies".into()));
        }
        if self.freqs.windows(2).any(|w| w[1] <= w[0]) || self.freqs[0] <= 0.0 {
            return Err(Error::range(
                "freqs",
                "must be positive and strictly increasing",
            ));
        }
        let top = *self.freqs.last().expect("non-empty");
        if top >= fs / 2.0 {
            return Err(Error::BandOutOfRange {
                lo: self.freqs[0],
                hi: top,
                nyquist: fs / 2.0,
            });
        }
        Ok(())
    }
}

/// Power and phase per analysis frequency and sample.
#[derive(Debug, Clone)]
pub struct TFMap {
    /// `power[f][t]`, `|coef|²`.
    pub power: Vec<Vec<f64>>,
    /// `phase[f][t]` in `(-π, π]`.
    pub phase: Vec<Vec<f64>>,
    pub freqs: Vec<f64>,
    pub fs: f64,
    pub t0_offset: f64,
    /// Samples at each end of row `f` influenced by zero padding.
    pub edge: Vec<usize>,
}

impl TFMap {
    pub fn n_samples(&self) -> usize {
        self.power.first().map_or(0, Vec::len)
    }

    /// Sample range of row `f` unaffected by the series boundaries.
    pub fn valid_range(&self, f: usize) -> std::ops::Range<usize> {
        let e = self.edge[f].min(self.n_samples() / 2);
        e..self.n_samples() - e
    }
}

/// Baseline-normalised power map.
#[derive(Debug, Clone)]
pub struct ZScoredTF {
    pub z: Vec<Vec<f64>>,
    pub freqs: Vec<f64>,
    pub fs: f64,
    pub t0_offset: f64,
    pub edge: Vec<usize>,
    /// Rows whose baseline power had no spread; left as zeros.
    pub flagged_rows: Vec<usize>,
}

fn wrap_phase(p: f64) -> f64 {
    if p <= -PI {
        p + 2.0 * PI
    } else {
        p
    }
}

/// Convolves a real series with complex Morlet wavelets, one per analysis
/// frequency.
///
/// Each kernel is `exp(-t²/2σ²)·exp(i2πft)` sampled over ±3σ and scaled so
/// its envelope sums to one, which gives a sinusoid of amplitude `a` at the
/// kernel frequency a coefficient magnitude of `a/2`. The convolution is
/// linear (zero padded) and centred on each sample.
pub fn morlet_transform(x: &[f64], fs: f64, t0_offset: f64, spec: &MorletSpec) -> Result<TFMap> {
    spec.validate(fs)?;
    let n = x.len();
    let f_min = spec.freqs[0];
    let support = 2 * spec.half_support(f_min, fs) + 1;
    let required = 2 * (6.0 * spec.sigma_t(f_min) * fs).ceil() as usize;
    if n < required.max(support / 2 + 1) {
        return Err(Error::SeriesTooShort {
            n_samples: n,
            required,
            freq: f_min,
        });
    }

    let nfft = (n + support - 1).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(nfft);
    let inv = planner.plan_fft_inverse(nfft);

    let mut signal: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    signal.resize(nfft, Complex64::new(0.0, 0.0));
    fwd.process(&mut signal);

    let mut power = Vec::with_capacity(spec.freqs.len());
    let mut phase = Vec::with_capacity(spec.freqs.len());
    let mut edge = Vec::with_capacity(spec.freqs.len());
    let mut buf = vec![Complex64::new(0.0, 0.0); nfft];
    for &f in &spec.freqs {
        let sigma = spec.sigma_t(f);
        let half = spec.half_support(f, fs);
        let envelope: Vec<f64> = (0..=2 * half)
            .map(|k| {
                let t = (k as f64 - half as f64) / fs;
                (-t * t / (2.0 * sigma * sigma)).exp()
            })
            .collect();
        let norm: f64 = envelope.iter().sum();
        buf.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
        for (k, env) in envelope.iter().enumerate() {
            let t = (k as f64 - half as f64) / fs;
            buf[k] = Complex64::from_polar(env / norm, 2.0 * PI * f * t);
        }
        fwd.process(&mut buf);
        for (b, s) in buf.iter_mut().zip(&signal) {
            *b *= s;
        }
        inv.process(&mut buf);
        let scale = 1.0 / nfft as f64;
        let coefs = &buf[half..half + n];
        power.push(coefs.iter().map(|c| (c * scale).norm_sqr()).collect());
        phase.push(coefs.iter().map(|c| wrap_phase(c.arg())).collect());
        edge.push(half);
    }
    Ok(TFMap {
        power,
        phase,
        freqs: spec.freqs.clone(),
        fs,
        t0_offset,
        edge,
    })
}

/// Per-frequency z-score of power against a baseline window.
pub fn zscore_normalize(tf: &TFMap, baseline: (f64, f64)) -> Result<ZScoredTF> {
    let range = crate::dataio::window_indices(baseline, tf.t0_offset, tf.fs, tf.n_samples())?;
    let mut flagged = Vec::new();
    let z = tf
        .power
        .iter()
        .enumerate()
        .map(|(fi, row)| {
            let base = &row[range.clone()];
            let m = base.len() as f64;
            let mean = base.iter().sum::<f64>() / m;
            let sd = (base.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m).sqrt();
            if sd <= 1e-12 * mean.abs().max(1e-300) || sd == 0.0 {
                log::warn!("zero baseline variance at {} Hz", tf.freqs[fi]);
                flagged.push(fi);
                vec![0.0; row.len()]
            } else {
                row.iter().map(|v| (v - mean) / sd).collect()
            }
        })
        .collect();
    Ok(ZScoredTF {
        z,
        freqs: tf.freqs.clone(),
        fs: tf.fs,
        t0_offset: tf.t0_offset,
        edge: tf.edge.clone(),
        flagged_rows: flagged,
    })
}

fn band_rows(freqs: &[f64], band: (f64, f64)) -> Result<Vec<usize>> {
    let rows: Vec<usize> = freqs
        .iter()
        .enumerate()
        .filter(|(_, &f)| f >= band.0 && f <= band.1)
        .map(|(i, _)| i)
        .collect();
    if rows.is_empty() {
        return Err(Error::EmptyBand {
            lo: band.0,
            hi: band.1,
        });
    }
    Ok(rows)
}

fn mean_rows(rows: &[Vec<f64>], pick: &[usize]) -> Vec<f64> {
    let n = rows[pick[0]].len();
    let mut out = vec![0.0; n];
    for &r in pick {
        for (o, v) in out.iter_mut().zip(&rows[r]) {
            *o += v;
        }
    }
    let k = pick.len() as f64;
    out.iter_mut().for_each(|v| *v /= k);
    out
}

/// Mean power over analysis frequencies in `[lo, hi]`.
pub fn band_power(tf: &TFMap, band: (f64, f64)) -> Result<Vec<f64>> {
    let pick = band_rows(&tf.freqs, band)?;
    Ok(mean_rows(&tf.power, &pick))
}

/// Mean z-scored power over analysis frequencies in `[lo, hi]`.
pub fn band_zscore(tf: &ZScoredTF, band: (f64, f64)) -> Result<Vec<f64>> {
    let pick = band_rows(&tf.freqs, band)?;
    Ok(mean_rows(&tf.z, &pick))
}

/// Analytic signal via the frequency-domain Hilbert construction.
pub fn analytic_signal(x: &[f64]) -> Vec<Complex64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let mut planner = FftPlanner::<f64>::new();
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut buf);
    // keep DC (and Nyquist for even n), double positive, zero negative
    for (k, v) in buf.iter_mut().enumerate() {
        let w = if k == 0 || (n.is_multiple_of(2) && k == n / 2) {
            1.0
        } else if k < n.div_ceil(2) {
            2.0
        } else {
            0.0
        };
        *v *= w;
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let scale = 1.0 / n as f64;
    buf.iter().map(|c| c * scale).collect()
}

/// Instantaneous phase of `x` within a frequency band: zero-phase bandpass
/// then the argument of the analytic signal.
pub fn band_phase(x: &[f64], fs: f64, band: (f64, f64)) -> Result<Vec<f64>> {
    let sos = butterworth_bandpass(FilterSpec::bandpass(band.0, band.1), fs)?;
    let filtered = sos.filtfilt(x)?;
    Ok(analytic_signal(&filtered)
        .iter()
        .map(|c| wrap_phase(c.arg()))
        .collect())
}
