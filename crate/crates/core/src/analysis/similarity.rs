use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Cosine similarity; a zero vector has cosine 0 with everything.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

/// `M[u][v]` = cosine of text row `u` and speech row `v`.
pub fn cosine_matrix(text: &Matrix<f64>, speech: &Matrix<f64>) -> Matrix<f64> {
    Matrix::from_fn(text.rows(), speech.rows(), |u, v| cosine(text.row(u), speech.row(v)))
}

/// Step taken to reach a DTW cell, in order of preference on ties.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Step {
    Diagonal,
    Down,
    Right,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DtwResult {
    /// Cells from `(0, 0)` to `(U-1, V-1)`.
    pub path: Vec<(usize, usize)>,
    pub sum: f64,
    /// Mean similarity along the path.
    pub score: f64,
}

/// Monotonic path through `m` with steps (1,1), (1,0), (0,1) maximizing the
/// summed similarity. Ties prefer the diagonal, then (1,0), then (0,1).
pub fn dtw(m: &Matrix<f64>) -> Result<DtwResult> {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return Err(Error::contract("dtw needs a nonempty matrix"));
    }
    let cells = m.data();
    // Best sum reaching each cell and the step that got there.
    let mut acc = vec![(0.0, Step::Diagonal); rows * cols];
    for u in 0..rows {
        for v in 0..cols {
            let at = u * cols + v;
            let (prev, step) = match (u, v) {
                (0, 0) => (0.0, Step::Diagonal),
                (0, _) => (acc[at - 1].0, Step::Right),
                (_, 0) => (acc[at - cols].0, Step::Down),
                _ => {
                    // Strict comparisons keep the earlier step on ties.
                    let mut best = (acc[at - cols - 1].0, Step::Diagonal);
                    if acc[at - cols].0 > best.0 {
                        best = (acc[at - cols].0, Step::Down);
                    }
                    if acc[at - 1].0 > best.0 {
                        best = (acc[at - 1].0, Step::Right);
                    }
                    best
                }
            };
            acc[at] = (prev + cells[at], step);
        }
    }
    let (mut u, mut v) = (rows - 1, cols - 1);
    let mut path = Vec::with_capacity(rows + cols - 1);
    path.push((u, v));
    while (u, v) != (0, 0) {
        (u, v) = back(acc[u * cols + v].1, u, v);
        path.push((u, v));
    }
    path.reverse();
    // Accumulated along the path from its start, so exactly the path sum.
    let sum = acc[rows * cols - 1].0;
    Ok(DtwResult {
        score: sum / path.len() as f64,
        sum,
        path,
    })
}

fn back(step: Step, u: usize, v: usize) -> (usize, usize) {
    match step {
        Step::Diagonal => (u - 1, v - 1),
        Step::Down => (u - 1, v),
        Step::Right => (u, v - 1),
    }
}

/// Mean cosine between every speech row and every text row outside
/// `aligned`; 0 when every text row is aligned.
pub fn background(speech: &Matrix<f64>, text: &Matrix<f64>, aligned: Range<usize>) -> f64 {
    let outside: Vec<usize> = (0..text.rows()).filter(|t| !aligned.contains(t)).collect();
    if outside.is_empty() || speech.rows() == 0 {
        return 0.0;
    }
    let mut total = 0.0;
    for s in 0..speech.rows() {
        for &t in &outside {
            total += cosine(speech.row(s), text.row(t));
        }
    }
    total / (speech.rows() * outside.len()) as f64
}

/// DTW and background of one alignment pair at one layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairScore {
    pub dtw: f64,
    pub bg: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerReport {
    pub layer: usize,
    /// Cosines between every text row and every speech row of the sample.
    pub matrix: Matrix<f64>,
    pub pairs: Vec<PairScore>,
    /// DTW path of every pair, in pair-local coordinates.
    pub paths: Vec<Vec<(usize, usize)>>,
    /// Filled in by [`layer_scores`].
    pub ss: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleReport {
    pub sample_id: u64,
    pub layers: Vec<LayerReport>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityReport {
    pub lambda: f64,
    pub samples: Vec<SampleReport>,
}

impl SimilarityReport {
    /// Per-layer mean of SS over samples.
    pub fn mean_curve(&self) -> Vec<f64> {
        let n = self.samples.iter().map(|s| s.layers.len()).min().unwrap_or(0);
        (0..n)
            .map(|i| self.samples.iter().map(|s| s.layers[i].ss).sum::<f64>() / self.samples.len() as f64)
            .collect()
    }
}

/// Sets λ to the mean DTW over every pair of every layer of every sample and
/// then SS_i = Σ_j DTW/(BG + λ) for each layer. Returns λ.
pub fn layer_scores(samples: &mut [SampleReport]) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for s in samples.iter() {
        for l in &s.layers {
            if l.pairs.is_empty() {
                return Err(Error::contract(format!(
                    "sample {} layer {} has no alignment pairs",
                    s.sample_id, l.layer
                )));
            }
            total += l.pairs.iter().map(|p| p.dtw).sum::<f64>();
            count += l.pairs.len();
        }
    }
    if count == 0 {
        return Err(Error::contract("similarity scores need at least one alignment pair"));
    }
    let lambda = total / count as f64;
    for s in samples.iter_mut() {
        for l in &mut s.layers {
            l.ss = l.pairs.iter().map(|p| p.dtw / (p.bg + lambda)).sum();
        }
    }
    Ok(lambda)
}
