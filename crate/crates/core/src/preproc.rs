//! Temporal filtering, common-average re-referencing and baseline correction.
//!
//! The bandpass is a digital Butterworth design (analog prototype, lowpass to
//! bandpass transform, bilinear transform) realised as cascaded second-order
//! sections and run forward then backward, so the net response is zero phase
//! with squared magnitude. Edges are mirror-padded by three periods of the
//! low corner frequency (capped at the series length).

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::dataio::EpochSet;
use crate::error::{Error, Result};

/// Bandpass design parameters. `order` counts poles of the bandpass filter
/// and must be even; the prototype lowpass has `order / 2` poles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterSpec {
    pub order: usize,
    pub band: (f64, f64),
}

impl FilterSpec {
    pub fn bandpass(lo: f64, hi: f64) -> Self {
        Self {
            order: 4,
            band: (lo, hi),
        }
    }
}

/// One biquad, `b0 + b1 z^-1 + b2 z^-2` over `1 + a1 z^-1 + a2 z^-2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Section {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Section {
    fn response(&self, z_inv: Complex64) -> Complex64 {
        let num = self.b[0] + z_inv * (self.b[1] + z_inv * self.b[2]);
        let den = self.a[0] + z_inv * (self.a[1] + z_inv * self.a[2]);
        num / den
    }

    /// Transposed direct-form II state that a unit step reaches in steady
    /// state.
    fn step_state(&self) -> [f64; 2] {
        let gain = (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[1] + self.a[2]);
        let z2 = self.b[2] - self.a[2] * gain;
        let z1 = self.b[1] - self.a[1] * gain + z2;
        [z1, z2]
    }

    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[1] + self.a[2])
    }
}

/// Cascade of second-order sections.
#[derive(Debug, Clone, PartialEq)]
pub struct Sos {
    pub sections: Vec<Section>,
    /// Mirror-padding length used by [`Sos::filtfilt`], capped at the
    /// series length minus one.
    pub pad_len: usize,
}

impl Sos {
    /// Complex frequency response at `freq` Hz.
    pub fn response(&self, freq: f64, fs: f64) -> Complex64 {
        let w = 2.0 * std::f64::consts::PI * freq / fs;
        let z_inv = Complex64::from_polar(1.0, -w);
        self.sections
            .iter()
            .fold(Complex64::new(1.0, 0.0), |acc, s| acc * s.response(z_inv))
    }

    /// Runs the cascade over `x` in place, starting from the given states.
    fn run(&self, x: &mut [f64], states: &mut [[f64; 2]]) {
        for (s, z) in self.sections.iter().zip(states.iter_mut()) {
            let [b0, b1, b2] = s.b;
            let [_, a1, a2] = s.a;
            let [mut z1, mut z2] = *z;
            for v in x.iter_mut() {
                let input = *v;
                let y = b0 * input + z1;
                z1 = b1 * input - a1 * y + z2;
                z2 = b2 * input - a2 * y;
                *v = y;
            }
            *z = [z1, z2];
        }
    }

    /// Steady-state initial conditions for a unit step, per section.
    fn step_states(&self) -> Vec<[f64; 2]> {
        let mut scale = 1.0;
        self.sections
            .iter()
            .map(|s| {
                let [z1, z2] = s.step_state();
                let out = [z1 * scale, z2 * scale];
                scale *= s.dc_gain();
                out
            })
            .collect()
    }

    /// Minimum series length accepted by [`Sos::filtfilt`].
    pub fn min_len(&self) -> usize {
        3 * (2 * self.sections.len() + 1)
    }

    /// Zero-phase forward-backward filtering.
    ///
    /// The series is mirrored (`x[k]`, edge sample not repeated) by
    /// `pad_len` samples at both ends and every section starts from the
    /// steady state of a step at the first padded value.
    pub fn filtfilt(&self, x: &[f64]) -> Result<Vec<f64>> {
        let n = x.len();
        if n <= self.min_len() {
            return Err(Error::TooShortSignal {
                n_samples: n,
                required: self.min_len(),
            });
        }
        let pad = self.pad_len.min(n - 1);
        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend((1..=pad).rev().map(|k| x[k]));
        ext.extend_from_slice(x);
        ext.extend((1..=pad).map(|k| x[n - 1 - k]));

        let zi = self.step_states();
        let mut states: Vec<[f64; 2]> = zi.iter().map(|z| [z[0] * ext[0], z[1] * ext[0]]).collect();
        self.run(&mut ext, &mut states);
        ext.reverse();
        let mut states: Vec<[f64; 2]> = zi.iter().map(|z| [z[0] * ext[0], z[1] * ext[0]]).collect();
        self.run(&mut ext, &mut states);
        ext.reverse();
        Ok(ext[pad..pad + n].to_vec())
    }
}

fn check_band(band: (f64, f64), fs: f64) -> Result<()> {
    let (lo, hi) = band;
    let nyquist = fs / 2.0;
    if !(lo > 0.0 && lo < hi && hi < nyquist) {
        return Err(Error::BandOutOfRange { lo, hi, nyquist });
    }
    Ok(())
}

/// Designs a digital Butterworth bandpass as second-order sections, with
/// unit gain at the geometric band centre.
pub fn butterworth_bandpass(spec: FilterSpec, fs: f64) -> Result<Sos> {
    check_band(spec.band, fs)?;
    if spec.order < 2 || !spec.order.is_multiple_of(2) {
        return Err(Error::range(
            "order",
            format!("{} must be even and >= 2", spec.order),
        ));
    }
    let n = spec.order / 2;
    let fs2 = 2.0 * fs;
    let pi = std::f64::consts::PI;
    // pre-warped analog band edges (rad/s)
    let wl = fs2 * (pi * spec.band.0 / fs).tan();
    let wh = fs2 * (pi * spec.band.1 / fs).tan();
    let bw = wh - wl;
    let w0 = (wl * wh).sqrt();

    let mut analog_poles = Vec::with_capacity(2 * n);
    for k in 0..n {
        let theta = pi * (2 * k + n + 1) as f64 / (2 * n) as f64;
        let p = Complex64::from_polar(1.0, theta);
        let half = p * (bw / 2.0);
        let disc = (half * half - w0 * w0).sqrt();
        analog_poles.push(half + disc);
        analog_poles.push(half - disc);
    }
    let poles: Vec<Complex64> = analog_poles
        .iter()
        .map(|&p| (fs2 + p) / (fs2 - p))
        .collect();

    // conjugate pairs first, then the real poles two at a time
    let mut upper: Vec<Complex64> = poles.iter().copied().filter(|p| p.im > 1e-12).collect();
    let mut real: Vec<f64> = poles
        .iter()
        .filter(|p| p.im.abs() <= 1e-12)
        .map(|p| p.re)
        .collect();
    upper.sort_by(|a, b| a.norm().total_cmp(&b.norm()));
    real.sort_by(|a, b| a.total_cmp(b));
    debug_assert_eq!(upper.len() * 2 + real.len(), 2 * n);

    let mut sections: Vec<Section> = upper
        .iter()
        .map(|p| Section {
            b: [1.0, 0.0, -1.0],
            a: [1.0, -2.0 * p.re, p.norm_sqr()],
        })
        .collect();
    for pair in real.chunks(2) {
        sections.push(Section {
            b: [1.0, 0.0, -1.0],
            a: [1.0, -(pair[0] + pair[1]), pair[0] * pair[1]],
        });
    }

    // centre frequency of the digital response corresponding to w0
    let fc = fs / pi * (w0 / fs2).atan();
    // three periods of the low corner, never less than 3 × order
    let pad_len = ((3.0 * fs / spec.band.0).ceil() as usize).max(3 * spec.order);
    let mut sos = Sos { sections, pad_len };
    let g = sos.response(fc, fs).norm();
    for v in sos.sections[0].b.iter_mut() {
        *v /= g;
    }
    Ok(sos)
}

fn map_epochs<F>(x: &EpochSet, f: F) -> Result<EpochSet>
where
    F: Fn(&DMatrix<f64>) -> Result<DMatrix<f64>> + Sync + Send,
{
    let epochs = x.epochs().par_iter().map(f).collect::<Result<Vec<_>>>()?;
    x.with_epochs(epochs)
}

/// Zero-phase Butterworth bandpass applied to every channel of every epoch.
pub fn bandpass_filter(x: &EpochSet, spec: FilterSpec) -> Result<EpochSet> {
    let sos = butterworth_bandpass(spec, x.fs)?;
    let required = 3 * (spec.order + 1);
    if x.n_samples() <= required {
        return Err(Error::TooShortSignal {
            n_samples: x.n_samples(),
            required,
        });
    }
    map_epochs(x, |epoch| {
        let mut out = epoch.clone();
        for c in 0..epoch.nrows() {
            let row: Vec<f64> = epoch.row(c).iter().copied().collect();
            let y = sos.filtfilt(&row)?;
            for (t, v) in y.into_iter().enumerate() {
                out[(c, t)] = v;
            }
        }
        Ok(out)
    })
}

/// Subtracts the instantaneous mean across channels.
pub fn rereference_average(x: &EpochSet) -> Result<EpochSet> {
    if x.n_channels() < 2 {
        return Err(Error::InvalidInput(
            "average reference needs at least two channels".into(),
        ));
    }
    map_epochs(x, |epoch| {
        let mut out = epoch.clone();
        for mut col in out.column_iter_mut() {
            let mean = col.mean();
            col.add_scalar_mut(-mean);
        }
        Ok(out)
    })
}

/// Subtracts, per epoch and channel, the mean over a time window.
pub fn baseline_correct(x: &EpochSet, window: (f64, f64)) -> Result<EpochSet> {
    let range = x.window_indices(window)?;
    map_epochs(x, |epoch| {
        let mut out = epoch.clone();
        for mut row in out.row_iter_mut() {
            let mean = row.columns(range.start, range.len()).mean();
            row.add_scalar_mut(-mean);
        }
        Ok(out)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{Group, Stimulus};
    use std::f64::consts::PI;

    fn one_channel(series: Vec<f64>, fs: f64, t0: f64) -> EpochSet {
        let n = series.len();
        let m = DMatrix::from_row_slice(1, n, &series);
        let m = DMatrix::from_fn(2, n, |c, t| if c == 0 { m[(0, t)] } else { 0.0 });
        EpochSet::new(vec![m], fs, t0, Stimulus::A, Group::Y, "s").unwrap()
    }

    fn tone(freq: f64, fs: f64, n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| (2.0 * PI * freq * i as f64 / fs).sin())
            .collect()
    }

    // Coefficients from scipy.signal.butter(2, [0.5, 40], 'bandpass',
    // fs=500, output='sos'), an independent design of the same filter.
    #[test]
    fn design_matches_reference_coefficients() {
        let sos = butterworth_bandpass(FilterSpec::bandpass(0.5, 40.0), 500.0).unwrap();
        let ref_a = [
            [1.0, -1.31913863, 0.50059036],
            [1.0, -1.99111877, 0.99115903],
        ];
        let mut got: Vec<[f64; 3]> = sos.sections.iter().map(|s| s.a).collect();
        got.sort_by(|x, y| x[1].total_cmp(&y[1]).reverse());
        for (g, r) in got.iter().zip(ref_a.iter()) {
            for k in 0..3 {
                assert!((g[k] - r[k]).abs() < 1e-7, "{g:?} vs {r:?}");
            }
        }
        // |H| from scipy.signal.sosfreqz on the same design
        for (f, mag) in [
            (0.25, 0.23834471),
            (1.0, 0.97417945),
            (10.0, 0.99923983),
            (40.0, std::f64::consts::FRAC_1_SQRT_2),
            (100.0, 0.12132083),
        ] {
            assert!((sos.response(f, 500.0).norm() - mag).abs() < 1e-7, "{f} Hz");
        }
        // unit gain mid-band, zero at DC and Nyquist
        assert!((sos.response(10.0, 500.0).norm() - 1.0).abs() < 1e-3);
        assert!(sos.response(0.0, 500.0).norm() < 1e-12);
        assert!(sos.response(250.0, 500.0).norm() < 1e-12);
    }

    #[test]
    fn passband_tone_survives_against_ideal_filter() {
        let fs = 500.0;
        let x = tone(10.0, fs, 700);
        let y = bandpass_filter(
            &one_channel(x.clone(), fs, -0.5),
            FilterSpec::bandpass(0.5, 40.0),
        )
        .unwrap();
        let y: Vec<f64> = y.epochs()[0].row(0).iter().copied().collect();
        // the ideal brick-wall bandpass leaves a 10 Hz tone untouched
        let edge = 70;
        let r = corr(&x[edge..700 - edge], &y[edge..700 - edge]);
        assert!(r > 0.999, "r = {r}");
    }

    #[test]
    fn stopband_tone_is_attenuated() {
        let fs = 500.0;
        let x = tone(100.0, fs, 700);
        let y = bandpass_filter(
            &one_channel(x.clone(), fs, -0.5),
            FilterSpec::bandpass(0.5, 40.0),
        )
        .unwrap();
        let y: Vec<f64> = y.epochs()[0].row(0).iter().copied().collect();
        let rms = |v: &[f64]| (v.iter().map(|a| a * a).sum::<f64>() / v.len() as f64).sqrt();
        assert!(rms(&y) < 0.05 * rms(&x), "{} vs {}", rms(&y), rms(&x));
    }

    #[test]
    fn zero_signal_stays_zero() {
        let y = bandpass_filter(
            &one_channel(vec![0.0; 200], 500.0, -0.1),
            FilterSpec::bandpass(0.5, 40.0),
        )
        .unwrap();
        assert!(y.epochs()[0].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn band_and_length_errors() {
        let set = one_channel(vec![0.0; 200], 500.0, -0.1);
        assert!(matches!(
            bandpass_filter(&set, FilterSpec::bandpass(0.5, 300.0)),
            Err(Error::BandOutOfRange { .. })
        ));
        let short = one_channel(vec![0.0; 15], 500.0, -0.01);
        assert!(matches!(
            bandpass_filter(&short, FilterSpec::bandpass(0.5, 40.0)),
            Err(Error::TooShortSignal { .. })
        ));
    }

    #[test]
    fn zero_phase_peak_lag_is_zero() {
        let fs = 500.0;
        let x: Vec<f64> = (0..1000)
            .map(|i| {
                let t = i as f64 / fs;
                (2.0 * PI * 7.0 * t).sin() + 0.5 * (2.0 * PI * 13.0 * t + 0.3).cos()
            })
            .collect();
        let sos = butterworth_bandpass(FilterSpec::bandpass(0.5, 40.0), fs).unwrap();
        let y = sos.filtfilt(&x).unwrap();
        let core = 100..900;
        let best = (-20i64..=20)
            .max_by(|&a, &b| {
                let c = |lag: i64| -> f64 {
                    core.clone()
                        .map(|i| x[i] * y[(i as i64 + lag) as usize])
                        .sum()
                };
                c(a).total_cmp(&c(b))
            })
            .unwrap();
        assert_eq!(best, 0);
    }

    #[test]
    fn rereference_examples() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 1.0, 1.0, 3.0, 3.0, 3.0]);
        let set = EpochSet::new(vec![m], 10.0, -0.1, Stimulus::A, Group::Y, "s").unwrap();
        let out = rereference_average(&set).unwrap();
        assert_eq!(
            out.epochs()[0],
            DMatrix::from_row_slice(2, 3, &[-1.0, -1.0, -1.0, 1.0, 1.0, 1.0])
        );
        let again = rereference_average(&out).unwrap();
        assert!((&again.epochs()[0] - &out.epochs()[0]).amax() < 1e-12);
    }

    #[test]
    fn baseline_examples() {
        let m = DMatrix::from_element(3, 700, 5.0);
        let set = EpochSet::new(vec![m], 500.0, -0.5, Stimulus::A, Group::Y, "s").unwrap();
        let out = baseline_correct(&set, (-0.5, 0.0)).unwrap();
        assert!(out.epochs()[0].iter().all(|&v| v.abs() < 1e-12));
        assert!(matches!(
            baseline_correct(&set, (1.0, 2.0)),
            Err(Error::WindowOutsideEpoch { .. })
        ));
    }

    fn corr(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
        for (x, y) in a.iter().zip(b) {
            sab += (x - ma) * (y - mb);
            saa += (x - ma).powi(2);
            sbb += (y - mb).powi(2);
        }
        sab / (saa * sbb).sqrt()
    }
}
