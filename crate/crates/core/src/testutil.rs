//! Small fixtures shared by unit tests.

use crate::model::{Factor, PredictorPrior, PredictorSpec, Sequence, SequenceDataset, StateSpace};

pub fn seq(id: &str, subject: usize, predictors: &[usize], tokens: &[usize]) -> Sequence {
    Sequence {
        id: id.into(),
        subject,
        predictors: predictors.to_vec(),
        tokens: tokens.to_vec(),
    }
}

/// Two states, one two-level predictor `g`, two subjects.
pub fn toy_dataset() -> SequenceDataset {
    SequenceDataset::new(
        StateSpace::new(["a", "b"]).unwrap(),
        vec![Factor::new("g", ["F", "W"]).unwrap()],
        vec!["s1".into(), "s2".into()],
        vec![
            seq("q1", 0, &[0], &[0, 1, 1, 0, 1, 0, 0, 1]),
            seq("q2", 0, &[0], &[1, 1, 0, 1]),
            seq("q3", 1, &[1], &[0, 0, 0, 1, 0, 0]),
        ],
    )
    .unwrap()
}

pub fn spec_for(ds: &SequenceDataset, alpha: f64) -> PredictorSpec {
    PredictorSpec {
        predictors: ds
            .factors()
            .iter()
            .map(|f| PredictorPrior {
                name: f.name.clone(),
                levels: f.len(),
                clusters: f.len(),
                alpha,
            })
            .collect(),
    }
}

/// Mean and standard error of a sample.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}
