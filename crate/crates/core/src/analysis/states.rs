use super::similarity::{
    background, cosine_matrix, dtw, layer_scores, LayerReport, PairScore, SampleReport, SimilarityReport,
};
use crate::data::AlignmentPair;
use crate::error::{Error, Result};
use crate::model::{tokens, Modality, SplitTransformer, Token, BOS};
use crate::numerics::{Matrix, Scalar};

/// Hidden states of the text and speech renderings of one sample.
/// Layer 0 is the embedding output, layer `i > 0` the output of shared block `i - 1`.
/// Rows cover content tokens only; the leading BOS row is dropped.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerStates {
    pub sample_id: u64,
    pub text: Vec<Matrix<f64>>,
    pub speech: Vec<Matrix<f64>>,
    pub pairs: Vec<AlignmentPair>,
}

impl LayerStates {
    pub fn layers(&self) -> usize {
        self.text.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.text.len() != self.speech.len() || self.text.is_empty() {
            return Err(Error::contract(
                "text and speech need the same nonzero number of layers",
            ));
        }
        let (n, m) = (self.text[0].rows(), self.speech[0].rows());
        if self.text.iter().any(|t| t.rows() != n) || self.speech.iter().any(|s| s.rows() != m) {
            return Err(Error::contract("row counts differ between layers"));
        }
        for p in &self.pairs {
            if p.text.0 >= p.text.1 || p.speech.0 >= p.speech.1 || p.text.1 > n || p.speech.1 > m {
                return Err(Error::contract(format!(
                    "alignment pair {:?} does not fit {n} text and {m} speech rows",
                    p
                )));
            }
        }
        Ok(())
    }
}

/// Runs the all-text and all-speech renderings through the trunk.
pub fn collect_states<F: Scalar>(
    model: &SplitTransformer<F>,
    sample_id: u64,
    text: &[u32],
    speech: &[u32],
    pairs: &[AlignmentPair],
) -> Result<LayerStates> {
    let run = |m: Modality, ids: &[u32]| -> Result<Vec<Matrix<f64>>> {
        let mut seq = vec![Token::new(m, BOS)];
        seq.extend(tokens(m, ids));
        let states = model.trunk_states(&seq)?;
        Ok(states.iter().map(|s| s.select_rows(1..s.rows()).cast()).collect())
    };
    let states = LayerStates {
        sample_id,
        text: run(Modality::Text, text)?,
        speech: run(Modality::Speech, speech)?,
        pairs: pairs.to_vec(),
    };
    states.validate()?;
    Ok(states)
}

/// Cosine matrices, DTW and background scores of every layer; SS is left at 0.
pub fn analyze_sample(states: &LayerStates) -> Result<SampleReport> {
    states.validate()?;
    let mut layers = Vec::with_capacity(states.layers());
    for (i, (t, s)) in states.text.iter().zip(&states.speech).enumerate() {
        let matrix = cosine_matrix(t, s);
        let mut pairs = Vec::with_capacity(states.pairs.len());
        let mut paths = Vec::with_capacity(states.pairs.len());
        for p in &states.pairs {
            let sub = Matrix::from_fn(p.text.1 - p.text.0, p.speech.1 - p.speech.0, |u, v| {
                matrix.get(p.text.0 + u, p.speech.0 + v)
            });
            let d = dtw(&sub)?;
            let speech_rows = s.select_rows(p.speech_range());
            pairs.push(PairScore {
                dtw: d.score,
                bg: background(&speech_rows, t, p.text_range()),
            });
            paths.push(d.path);
        }
        layers.push(LayerReport {
            layer: i,
            matrix,
            pairs,
            paths,
            ss: 0.0,
        });
    }
    Ok(SampleReport {
        sample_id: states.sample_id,
        layers,
    })
}

/// Full two-pass analysis over one set of samples.
pub fn analyze(states: &[LayerStates]) -> Result<SimilarityReport> {
    let mut samples = states.iter().map(analyze_sample).collect::<Result<Vec<_>>>()?;
    let lambda = layer_scores(&mut samples)?;
    Ok(SimilarityReport { lambda, samples })
}
