//! Synthetic layer states with a known alignment band.

use splitlm::analysis::LayerStates;
use splitlm::data::AlignmentPair;
use splitlm::numerics::{Matrix, Rng};

pub fn random(rows: usize, cols: usize, rng: &mut Rng) -> Matrix<f64> {
    Matrix::from_fn(rows, cols, |_, _| rng.normal())
}

/// Word `j` covers text row `j` and `spans[j]` speech rows.
pub fn pairs_for(spans: &[usize]) -> Vec<AlignmentPair> {
    let mut at = 0;
    spans
        .iter()
        .enumerate()
        .map(|(j, &n)| {
            at += n;
            AlignmentPair::new((j, j + 1), (at - n, at))
        })
        .collect()
}

/// States where only the layers in `planted` put each speech span near its word's text row.
pub fn planted_states(id: u64, layers: usize, planted: &[usize], rng: &mut Rng) -> LayerStates {
    let d = 16;
    let spans: Vec<usize> = (0..6).map(|_| rng.range_inclusive(2, 3)).collect();
    let pairs = pairs_for(&spans);
    let (mut text, mut speech) = (Vec::new(), Vec::new());
    for i in 0..layers {
        if planted.contains(&i) {
            let words: Vec<Vec<f64>> = (0..spans.len())
                .map(|_| (0..d).map(|_| rng.normal()).collect())
                .collect();
            let near =
                |v: &Vec<f64>, rng: &mut Rng| -> Vec<f64> { v.iter().map(|x| x + 0.05 * rng.normal()).collect() };
            let t: Vec<Vec<f64>> = words.iter().map(|w| near(w, rng)).collect();
            let s: Vec<Vec<f64>> = spans
                .iter()
                .zip(&words)
                .flat_map(|(&n, w)| (0..n).map(|_| near(w, rng)).collect::<Vec<_>>())
                .collect();
            text.push(Matrix::from_rows(&t).unwrap());
            speech.push(Matrix::from_rows(&s).unwrap());
        } else {
            text.push(random(spans.len(), d, rng));
            speech.push(random(spans.iter().sum(), d, rng));
        }
    }
    LayerStates {
        sample_id: id,
        text,
        speech,
        pairs,
    }
}
