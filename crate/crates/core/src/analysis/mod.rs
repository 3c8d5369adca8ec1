//! Layer-wise text/speech similarity: cosine matrices, DTW, background
//! normalization and the per-layer score.

mod emit;
mod similarity;
mod states;

pub use emit::{curve_csv, curve_svg, emit, gray, matrix_csv, matrix_pgm, parse_matrix_csv};
pub use similarity::{
    background, cosine, cosine_matrix, dtw, layer_scores, DtwResult, LayerReport, PairScore, SampleReport,
    SimilarityReport, Step,
};
pub use states::{analyze, analyze_sample, collect_states, LayerStates};
