//! Group statistics and figure output: paired t-test, activation-difference
//! area and chord-diagram SVG.

use std::f64::consts::PI;
use std::fmt::Write as _;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::dataio::DKT_REGIONS;
use crate::error::{Error, Result};

/// Absolute tolerance of the Student-t tail quadrature.
const QUAD_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tail {
    One,
    Two,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub label: String,
    pub n_pairs: usize,
    pub t_value: f64,
    pub df: usize,
    pub mean_diff: f64,
    /// `P(T ≥ |t|)`.
    pub p_one_tailed: f64,
    pub p_two_tailed: f64,
    pub tail: Tail,
    /// Every difference was zero; `t` is reported as 0.
    pub degenerate: bool,
}

impl GroupStats {
    /// The p-value for the requested tail.
    pub fn p_value(&self) -> f64 {
        match self.tail {
            Tail::One => self.p_one_tailed,
            Tail::Two => self.p_two_tailed,
        }
    }
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn adaptive(
    f: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let diff = left + right - whole;
    if depth == 0 || diff.abs() <= 15.0 * tol {
        return left + right + diff / 15.0;
    }
    adaptive(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + adaptive(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// Adaptive Simpson quadrature of `f` over `[a, b]`.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
    let whole = simpson(a, b, fa, fm, fb);
    adaptive(&f, a, b, fa, fm, fb, whole, tol, 50)
}

/// Upper tail `P(T ≥ a)` of Student's t with `df ≥ 1`, by quadrature of the
/// density. For `|a| ≥ 1` the tail is mapped onto `(0, 1]` with `x = |a|/u`.
pub fn student_t_sf(a: f64, df: f64) -> f64 {
    assert!(df >= 1.0, "df must be >= 1");
    let ln_c = ln_gamma(0.5 * (df + 1.0)) - ln_gamma(0.5 * df) - 0.5 * (df * PI).ln();
    let pdf = |x: f64| (ln_c - 0.5 * (df + 1.0) * (1.0 + x * x / df).ln()).exp();
    let x = a.abs();
    let upper = if x == 0.0 {
        0.5
    } else if x < 1.0 {
        0.5 - integrate(pdf, 0.0, x, QUAD_TOL)
    } else {
        let g = |u: f64| {
            if u == 0.0 {
                // limit of pdf(x/u)·x/u² as u → 0
                if df == 1.0 {
                    (ln_c + 0.5 * (df + 1.0) * df.ln() - df * x.ln()).exp()
                } else {
                    0.0
                }
            } else {
                pdf(x / u) * x / (u * u)
            }
        };
        integrate(g, 0.0, 1.0, QUAD_TOL)
    };
    if a >= 0.0 {
        upper
    } else {
        1.0 - upper
    }
}

/// Paired t-test of `a - b`.
pub fn paired_t_test(a: &[f64], b: &[f64], tail: Tail, label: &str) -> Result<GroupStats> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(format!(
            "{} vs {} values",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::TooFewExamples(format!("{n} pairs; need at least 2")));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteValue("t-test input".into()));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let sd = (d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    let df = n - 1;
    let scale = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let (t, degenerate) = if scale == 0.0 {
        (0.0, true)
    } else if sd <= 4.0 * f64::EPSILON * scale {
        return Err(Error::DegenerateVariance);
    } else {
        (mean / (sd / (n as f64).sqrt()), false)
    };
    let p_one = student_t_sf(t.abs(), df as f64);
    Ok(GroupStats {
        label: label.to_string(),
        n_pairs: n,
        t_value: t,
        df,
        mean_diff: mean,
        p_one_tailed: p_one,
        p_two_tailed: (2.0 * p_one).min(1.0),
        tail,
        degenerate,
    })
}

/// Trapezoidal area under `|y|` with sample spacing `dt`.
pub fn trapezoid_abs(y: &[f64], dt: f64) -> f64 {
    y.windows(2)
        .map(|w| 0.5 * (w[0].abs() + w[1].abs()) * dt)
        .sum()
}

fn mean_series(items: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = items.first().ok_or(Error::EmptyGroup)?;
    let len = first.len();
    let mut out = vec![0.0; len];
    for s in items {
        if s.len() != len {
            return Err(Error::LengthMismatch(format!(
                "series of {} and {len} samples",
                s.len()
            )));
        }
        out.iter_mut().zip(s).for_each(|(o, v)| *o += v);
    }
    let k = items.len() as f64;
    out.iter_mut().for_each(|o| *o /= k);
    Ok(out)
}

/// Area between two mean activation curves: each side's series are
/// averaged, and `|mean_a - mean_b|` is integrated over time.
pub fn activation_difference_auc(a: &[Vec<f64>], b: &[Vec<f64>], dt: f64) -> Result<f64> {
    if dt.is_nan() || dt <= 0.0 {
        return Err(Error::range("dt", "must be > 0"));
    }
    let ma = mean_series(a)?;
    let mb = mean_series(b)?;
    if ma.len() != mb.len() {
        return Err(Error::LengthMismatch(format!(
            "{} vs {} samples",
            ma.len(),
            mb.len()
        )));
    }
    let diff: Vec<f64> = ma.iter().zip(&mb).map(|(x, y)| x - y).collect();
    Ok(trapezoid_abs(&diff, dt))
}

// ---------------------------------------------------------------------------
// Chord diagram

/// Cortical lobes, in drawing order around each hemisphere.
const LOBES: [(&str, &[&str], &str); 6] = [
    (
        "frontal",
        &[
            "superiorfrontal",
            "rostralmiddlefrontal",
            "caudalmiddlefrontal",
            "parsopercularis",
            "parstriangularis",
            "parsorbitalis",
            "lateralorbitofrontal",
            "medialorbitofrontal",
            "precentral",
            "paracentral",
        ],
        "#4e79a7",
    ),
    (
        "cingulate",
        &[
            "rostralanteriorcingulate",
            "caudalanteriorcingulate",
            "posteriorcingulate",
            "isthmuscingulate",
        ],
        "#b07aa1",
    ),
    ("insula", &["insula"], "#9c755f"),
    (
        "temporal",
        &[
            "superiortemporal",
            "transversetemporal",
            "middletemporal",
            "inferiortemporal",
            "fusiform",
            "parahippocampal",
            "entorhinal",
        ],
        "#59a14f",
    ),
    (
        "parietal",
        &[
            "postcentral",
            "supramarginal",
            "superiorparietal",
            "inferiorparietal",
            "precuneus",
        ],
        "#f28e2b",
    ),
    (
        "occipital",
        &["lateraloccipital", "lingual", "cuneus", "pericalcarine"],
        "#e15759",
    ),
];

const OTHER_COLOR: &str = "#7f7f7f";

/// `(lobe index, position within lobe)` of a region; unknown names sort last.
fn lobe_of(region: &str) -> (usize, usize) {
    for (l, (_, members, _)) in LOBES.iter().enumerate() {
        if let Some(p) = members.iter().position(|m| *m == region) {
            return (l, p);
        }
    }
    (LOBES.len(), 0)
}

/// Splits `"<region> L"` into region and hemisphere (0 left, 1 right,
/// 2 unspecified).
fn split_name(name: &str) -> (&str, usize) {
    match name.rsplit_once(' ') {
        Some((r, "L")) => (r, 0),
        Some((r, "R")) => (r, 1),
        _ => (name, 2),
    }
}

/// Circle order of the nodes: left hemisphere by lobe, right hemisphere in
/// mirrored lobe order, then anything outside the atlas.
pub fn lobe_order(names: &[String]) -> Vec<usize> {
    debug_assert_eq!(
        DKT_REGIONS.len(),
        LOBES.iter().map(|l| l.1.len()).sum::<usize>()
    );
    let mut idx: Vec<usize> = (0..names.len()).collect();
    idx.sort_by_key(|&i| {
        let (region, hemi) = split_name(&names[i]);
        let (lobe, pos) = lobe_of(region);
        let known = lobe < LOBES.len();
        let key = match (hemi, known) {
            (0, true) => (0, lobe as isize, pos as isize),
            (1, true) => (1, -(lobe as isize), -(pos as isize)),
            _ => (2, 0, 0),
        };
        (key, i)
    });
    idx
}

/// Linear colour ramp for chord strokes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColorScale {
    pub lo: f64,
    pub hi: f64,
    pub from: [u8; 3],
    pub to: [u8; 3],
}

impl Default for ColorScale {
    fn default() -> Self {
        Self {
            lo: 0.0,
            hi: 1.0,
            from: [253, 219, 199],
            to: [178, 24, 43],
        }
    }
}

impl ColorScale {
    pub fn color(&self, w: f64) -> String {
        let t = if self.hi > self.lo {
            ((w - self.lo) / (self.hi - self.lo)).clamp(0.0, 1.0)
        } else {
            1.0
        };
        let c: Vec<u8> = self
            .from
            .iter()
            .zip(&self.to)
            .map(|(&a, &b)| (a as f64 + t * (b as f64 - a as f64)).round() as u8)
            .collect();
        format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
    }
}

fn xml_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for ch in s.chars() {
        match ch {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

/// Pairs `i < j` drawn as chords: off-diagonal weights at or above
/// `threshold`.
pub fn chord_pairs(m: &DMatrix<f64>, threshold: f64) -> Vec<(usize, usize)> {
    let n = m.nrows();
    (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .filter(|&(i, j)| m[(i, j)] >= threshold)
        .collect()
}

const SIZE: f64 = 900.0;
const RADIUS: f64 = 300.0;

/// Standalone SVG 1.1 chord diagram of a symmetric weight matrix.
///
/// Nodes are short arcs (`<polyline>`) on a circle in [`lobe_order`],
/// coloured by lobe and labelled; every pair at or above `threshold` is one
/// cubic Bézier `<path>` whose stroke colour follows `scale`. The output is
/// a pure function of the inputs.
pub fn render_chord_svg(
    m: &DMatrix<f64>,
    names: &[String],
    threshold: f64,
    scale: &ColorScale,
) -> Result<String> {
    let n = m.nrows();
    if m.ncols() != n || names.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "{}x{} matrix with {} names",
            m.nrows(),
            m.ncols(),
            names.len()
        )));
    }
    for i in 0..n {
        for j in 0..i {
            let (a, b) = (m[(i, j)], m[(j, i)]);
            if !(a.is_finite() && b.is_finite())
                || (a - b).abs() > 1e-9 * a.abs().max(b.abs()).max(1.0)
            {
                return Err(Error::ShapeMismatch(format!(
                    "matrix not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    let order = lobe_order(names);
    let mut slot = vec![0usize; n];
    for (p, &i) in order.iter().enumerate() {
        slot[i] = p;
    }
    let c = SIZE / 2.0;
    let step = 2.0 * PI / n.max(1) as f64;
    let angle = |i: usize| -PI / 2.0 + (slot[i] as f64 + 0.5) * step;
    let at = |theta: f64, r: f64| (c + r * theta.cos(), c + r * theta.sin());

    let mut s = String::new();
    s.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\" standalone=\"no\"?>\n");
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{SIZE:.0}\" height=\"{SIZE:.0}\" viewBox=\"0 0 {SIZE:.0} {SIZE:.0}\">"
    );
    let _ = writeln!(
        s,
        "<rect width=\"{SIZE:.0}\" height=\"{SIZE:.0}\" fill=\"#ffffff\"/>"
    );

    s.push_str("<g id=\"chords\" fill=\"none\" stroke-opacity=\"0.75\">\n");
    let mut pairs = chord_pairs(m, threshold);
    pairs.sort_by(|&(a, b), &(c2, d)| m[(a, b)].total_cmp(&m[(c2, d)]).then((a, b).cmp(&(c2, d))));
    for (i, j) in pairs {
        let w = m[(i, j)];
        let (ti, tj) = (angle(i), angle(j));
        let (x1, y1) = at(ti, RADIUS - 6.0);
        let (x2, y2) = at(tj, RADIUS - 6.0);
        let (c1x, c1y) = at(ti, 0.25 * RADIUS);
        let (c2x, c2y) = at(tj, 0.25 * RADIUS);
        let width = 0.5 + 2.5 * ((w - scale.lo) / (scale.hi - scale.lo).max(1e-12)).clamp(0.0, 1.0);
        let _ = writeln!(
            s,
            "<path d=\"M {x1:.2} {y1:.2} C {c1x:.2} {c1y:.2} {c2x:.2} {c2y:.2} {x2:.2} {y2:.2}\" stroke=\"{}\" stroke-width=\"{width:.2}\"><title>{} - {}: {w:.3}</title></path>",
            scale.color(w),
            xml_escape(&names[i]),
            xml_escape(&names[j]),
        );
    }
    s.push_str("</g>\n");

    s.push_str("<g id=\"nodes\" fill=\"none\" stroke-width=\"10\">\n");
    for &i in &order {
        let theta = angle(i);
        let half = 0.42 * step;
        let pts: Vec<String> = (0..=4)
            .map(|k| {
                let (x, y) = at(theta - half + k as f64 * half / 2.0, RADIUS);
                format!("{x:.2},{y:.2}")
            })
            .collect();
        let (region, _) = split_name(&names[i]);
        let color = LOBES.get(lobe_of(region).0).map_or(OTHER_COLOR, |l| l.2);
        let _ = writeln!(
            s,
            "<polyline points=\"{}\" stroke=\"{color}\"><title>{}</title></polyline>",
            pts.join(" "),
            xml_escape(&names[i])
        );
    }
    s.push_str("</g>\n");

    s.push_str("<g id=\"labels\" font-family=\"sans-serif\" font-size=\"9\" fill=\"#333333\">\n");
    for &i in &order {
        let theta = angle(i);
        let (x, y) = at(theta, RADIUS + 12.0);
        let mut deg = theta.to_degrees();
        let flip = theta.cos() < 0.0;
        if flip {
            deg += 180.0;
        }
        let anchor = if flip { "end" } else { "start" };
        let _ = writeln!(
            s,
            "<text x=\"{x:.2}\" y=\"{y:.2}\" text-anchor=\"{anchor}\" dominant-baseline=\"middle\" transform=\"rotate({deg:.2} {x:.2} {y:.2})\">{}</text>",
            xml_escape(&names[i])
        );
    }
    s.push_str("</g>\n</svg>\n");
    Ok(s)
}
