use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::similarity::{PairScore, SimilarityReport};
use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Row-major CSV with nine significant digits per entry.
pub fn matrix_csv(m: &Matrix<f64>) -> String {
    let mut out = String::new();
    for r in 0..m.rows() {
        let row: Vec<String> = m.row(r).iter().map(|x| format!("{x:.8e}")).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn parse_matrix_csv(text: &str) -> Result<Matrix<f64>> {
    let rows = text
        .lines()
        .enumerate()
        .map(|(i, line)| {
            line.split(',')
                .map(|x| {
                    x.parse::<f64>()
                        .map_err(|e| Error::contract(format!("line {}: bad value {x:?}: {e}", i + 1)))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Matrix::from_rows(&rows)
}

/// Gray level of a cosine: [-1, 1] maps linearly onto [0, 255], floored.
pub fn gray(c: f64) -> u8 {
    ((c.clamp(-1.0, 1.0) + 1.0) / 2.0 * 255.0).floor() as u8
}

/// Binary PGM heatmap, one pixel per entry.
pub fn matrix_pgm(m: &Matrix<f64>) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", m.cols(), m.rows()).into_bytes();
    out.extend(m.data().iter().map(|&c| gray(c)));
    out
}

pub fn curve_csv(curve: &[f64]) -> String {
    let mut out = String::from("layer,ss\n");
    for (i, ss) in curve.iter().enumerate() {
        let _ = writeln!(out, "{i},{ss:.8e}");
    }
    out
}

/// Layer-vs-score polyline.
pub fn curve_svg(curve: &[f64]) -> String {
    let (w, h, pad) = (400.0, 240.0, 20.0);
    let lo = curve.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = curve.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = curve.len().saturating_sub(1).max(1) as f64;
    let points: Vec<String> = curve
        .iter()
        .enumerate()
        .map(|(i, &ss)| {
            let x = pad + (w - 2.0 * pad) * i as f64 / span;
            let frac = if hi > lo { (ss - lo) / (hi - lo) } else { 0.5 };
            let y = h - pad - (h - 2.0 * pad) * frac;
            format!("{x:.2},{y:.2}")
        })
        .collect();
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\">\n\
         <polyline fill=\"none\" stroke=\"black\" points=\"{}\"/>\n</svg>\n",
        points.join(" ")
    )
}

#[derive(Serialize)]
struct LayerJson<'a> {
    layer: usize,
    ss: f64,
    pairs: &'a [PairScore],
}

#[derive(Serialize)]
struct SampleJson<'a> {
    sample_id: u64,
    lambda: f64,
    layers: Vec<LayerJson<'a>>,
}

#[derive(Serialize)]
struct SummaryJson {
    lambda: f64,
    samples: Vec<u64>,
    mean_curve: Vec<f64>,
}

/// Writes `sample<id>/` directories plus the mean curve and a summary under
/// `out`, returning every file written.
pub fn emit(report: &SimilarityReport, out: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let mut put = |path: PathBuf, bytes: &[u8]| -> Result<()> {
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        written.push(path);
        Ok(())
    };
    for s in &report.samples {
        let dir = out.join(format!("sample{}", s.sample_id));
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for l in &s.layers {
            put(
                dir.join(format!("layer{}.csv", l.layer)),
                matrix_csv(&l.matrix).as_bytes(),
            )?;
            put(dir.join(format!("layer{}.pgm", l.layer)), &matrix_pgm(&l.matrix))?;
        }
        let curve: Vec<f64> = s.layers.iter().map(|l| l.ss).collect();
        put(dir.join("ss_curve.csv"), curve_csv(&curve).as_bytes())?;
        put(dir.join("ss_curve.svg"), curve_svg(&curve).as_bytes())?;
        let json = SampleJson {
            sample_id: s.sample_id,
            lambda: report.lambda,
            layers: s
                .layers
                .iter()
                .map(|l| LayerJson {
                    layer: l.layer,
                    ss: l.ss,
                    pairs: &l.pairs,
                })
                .collect(),
        };
        put(dir.join("report.json"), &to_json(&json)?)?;
    }
    let mean = report.mean_curve();
    put(out.join("mean_ss_curve.csv"), curve_csv(&mean).as_bytes())?;
    put(out.join("mean_ss_curve.svg"), curve_svg(&mean).as_bytes())?;
    let summary = SummaryJson {
        lambda: report.lambda,
        samples: report.samples.iter().map(|s| s.sample_id).collect(),
        mean_curve: mean,
    };
    put(out.join("summary.json"), &to_json(&summary)?)?;
    Ok(written)
}

fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut bytes =
        serde_json::to_vec_pretty(value).map_err(|e| Error::contract(format!("cannot encode report: {e}")))?;
    bytes.push(b'\n');
    Ok(bytes)
}
