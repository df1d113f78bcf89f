use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::mask::ClasswiseMask;
use crate::scalar::Scalar;

/// How a mask column is reduced to one channel score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScoreKind {
    /// `sum_d |M[d, c]|`
    #[default]
    AbsSum,
    /// `sum_d M[d, c]`
    SignedSum,
    /// `||M[:, c]||_2`
    L2Norm,
}

impl FromStr for ScoreKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "abs_sum" => Ok(ScoreKind::AbsSum),
            "signed_sum" => Ok(ScoreKind::SignedSum),
            "l2_norm" => Ok(ScoreKind::L2Norm),
            other => Err(Error::Config(format!("unknown score kind `{other}`"))),
        }
    }
}

impl fmt::Display for ScoreKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScoreKind::AbsSum => "abs_sum",
            ScoreKind::SignedSum => "signed_sum",
            ScoreKind::L2Norm => "l2_norm",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerScores {
    pub layer_id: usize,
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelScoreTable {
    pub kind: ScoreKind,
    pub layers: Vec<LayerScores>,
}

impl ChannelScoreTable {
    pub fn channel_count(&self) -> usize {
        self.layers.iter().map(|l| l.scores.len()).sum()
    }

    pub fn layer(&self, layer_id: usize) -> Option<&LayerScores> {
        self.layers.iter().find(|l| l.layer_id == layer_id)
    }

    /// Uniform random scores over the same layers; used as the random-voting
    /// baseline.
    pub fn random_like<R: Rng + ?Sized>(&self, rng: &mut R) -> Self {
        ChannelScoreTable {
            kind: self.kind,
            layers: self
                .layers
                .iter()
                .map(|l| LayerScores {
                    layer_id: l.layer_id,
                    scores: (0..l.scores.len()).map(|_| rng.random::<f64>()).collect(),
                })
                .collect(),
        }
    }
}

impl LayerScores {
    /// Channel indices by ascending score, ties by index.
    pub fn ascending(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.scores.len()).collect();
        idx.sort_by(|&a, &b| self.scores[a].total_cmp(&self.scores[b]).then(a.cmp(&b)));
        idx
    }
}

pub fn channel_scores<T: Scalar>(
    masks: &[ClasswiseMask<T>],
    kind: ScoreKind,
) -> Result<ChannelScoreTable> {
    if masks.is_empty() {
        return Err(Error::InvalidArgument("no masks to score".into()));
    }
    let layers = masks
        .iter()
        .map(|m| {
            let scores = (0..m.channels())
                .map(|c| {
                    let col = m.column(c).map(|v| v.to_f64_lossy());
                    match kind {
                        ScoreKind::AbsSum => col.map(f64::abs).sum(),
                        ScoreKind::SignedSum => col.sum(),
                        ScoreKind::L2Norm => col.map(|v| v * v).sum::<f64>().sqrt(),
                    }
                })
                .collect();
            LayerScores {
                layer_id: m.layer_id,
                scores,
            }
        })
        .collect();
    Ok(ChannelScoreTable { kind, layers })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn hand_values() {
        let m = ClasswiseMask::new(3, Tensor::<f64>::new([2, 2], vec![1.0, 0.0, -1.0, 0.0]).unwrap())
            .unwrap();
        let s = |k| channel_scores(std::slice::from_ref(&m), k).unwrap().layers[0].scores.clone();
        assert_eq!(s(ScoreKind::SignedSum), vec![0.0, 0.0]);
        assert_eq!(s(ScoreKind::AbsSum), vec![2.0, 0.0]);
        assert!((s(ScoreKind::L2Norm)[0] - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(s(ScoreKind::L2Norm)[1], 0.0);
    }

    #[test]
    fn kind_names_round_trip() {
        for k in [ScoreKind::AbsSum, ScoreKind::SignedSum, ScoreKind::L2Norm] {
            assert_eq!(k.to_string().parse::<ScoreKind>().unwrap(), k);
        }
        assert!("sum".parse::<ScoreKind>().is_err());
    }

    #[test]
    fn ascending_breaks_ties_by_index() {
        let l = LayerScores {
            layer_id: 0,
            scores: vec![2.0, 1.0, 2.0, 0.5],
        };
        assert_eq!(l.ascending(), vec![3, 1, 0, 2]);
    }
}
