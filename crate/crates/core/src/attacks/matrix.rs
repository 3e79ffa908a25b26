use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, tag};

/// Per-example, per-model attack statistics with the membership mask that
/// produced them. Rows are examples, columns are models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawScoreMatrix")]
pub struct ScoreMatrix {
    num_examples: usize,
    num_models: usize,
    scores: Vec<f64>,
    membership: Vec<bool>,
    example_class: Vec<usize>,
}

#[derive(Deserialize)]
struct RawScoreMatrix {
    num_examples: usize,
    num_models: usize,
    scores: Vec<f64>,
    membership: Vec<bool>,
    example_class: Vec<usize>,
}

impl TryFrom<RawScoreMatrix> for ScoreMatrix {
    type Error = Error;

    fn try_from(r: RawScoreMatrix) -> Result<Self> {
        ScoreMatrix::new(r.num_examples, r.num_models, r.scores, r.membership, r.example_class)
    }
}

impl ScoreMatrix {
    /// Validates shapes, finiteness, and that every example has at least two
    /// IN and two OUT models.
    pub fn new(
        num_examples: usize,
        num_models: usize,
        scores: Vec<f64>,
        membership: Vec<bool>,
        example_class: Vec<usize>,
    ) -> Result<Self> {
        let cells = num_examples * num_models;
        if scores.len() != cells || membership.len() != cells {
            return Err(Error::Shape(format!(
                "expected {num_examples}x{num_models} = {cells} cells, got {} scores and {} membership flags",
                scores.len(),
                membership.len()
            )));
        }
        if example_class.len() != num_examples {
            return Err(Error::Shape(format!(
                "expected {num_examples} class labels, got {}",
                example_class.len()
            )));
        }
        if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
            return Err(Error::Shape(format!(
                "non-finite score for example {} model {}",
                i / num_models,
                i % num_models
            )));
        }
        let m = Self { num_examples, num_models, scores, membership, example_class };
        for x in 0..num_examples {
            let ins = m.membership_row(x).iter().filter(|&&b| b).count();
            let outs = num_models - ins;
            if ins < 2 || outs < 2 {
                return Err(Error::Statistics {
                    example: x,
                    detail: format!("{ins} IN and {outs} OUT models; at least 2 of each are required"),
                });
            }
        }
        Ok(m)
    }

    pub fn num_examples(&self) -> usize {
        self.num_examples
    }

    pub fn num_models(&self) -> usize {
        self.num_models
    }

    pub fn score(&self, example: usize, model: usize) -> f64 {
        self.scores[example * self.num_models + model]
    }

    pub fn is_member(&self, example: usize, model: usize) -> bool {
        self.membership[example * self.num_models + model]
    }

    pub fn row(&self, example: usize) -> &[f64] {
        &self.scores[example * self.num_models..(example + 1) * self.num_models]
    }

    pub fn membership_row(&self, example: usize) -> &[bool] {
        &self.membership[example * self.num_models..(example + 1) * self.num_models]
    }

    pub fn example_class(&self) -> &[usize] {
        &self.example_class
    }

    /// Membership of every example in one model's training set.
    pub fn model_membership(&self, model: usize) -> Vec<bool> {
        (0..self.num_examples).map(|x| self.is_member(x, model)).collect()
    }

    /// Copy with each example's membership row shuffled independently, which
    /// destroys any link between scores and membership while keeping row sums.
    pub fn with_permuted_membership(&self, seed: u64) -> Self {
        let mut out = self.clone();
        for x in 0..self.num_examples {
            let mut rng = stream(seed, &[tag::PERMUTE, x as u64]);
            out.membership[x * self.num_models..(x + 1) * self.num_models].shuffle(&mut rng);
        }
        out
    }
}

/// Balanced membership mask: every example is IN exactly M/2 of the models.
pub fn shadow_split(num_examples: usize, num_models: usize, seed: u64) -> Result<Vec<Vec<bool>>> {
    if !num_models.is_multiple_of(2) {
        return Err(Error::Parity(num_models));
    }
    if num_models < 4 {
        return Err(Error::Configuration(format!("need at least 4 models, got {num_models}")));
    }
    let mut base = vec![true; num_models / 2];
    base.resize(num_models, false);
    Ok((0..num_examples)
        .map(|x| {
            let mut rng = stream(seed, &[tag::SPLIT, x as u64]);
            let mut row = base.clone();
            row.shuffle(&mut rng);
            row
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_is_balanced() {
        let mask = shadow_split(50, 256, 1).unwrap();
        assert!(mask.iter().all(|r| r.iter().filter(|&&b| b).count() == 128));
        let one = shadow_split(1, 4, 9).unwrap();
        let mut sorted = one[0].clone();
        sorted.sort();
        assert_eq!(sorted, vec![false, false, true, true]);
        assert!(matches!(shadow_split(3, 5, 0), Err(Error::Parity(5))));
        assert!(shadow_split(3, 2, 0).is_err());
    }

    #[test]
    fn seeds_give_different_masks() {
        let a = shadow_split(64, 16, 1).unwrap();
        let b = shadow_split(64, 16, 2).unwrap();
        let agree = a.iter().flatten().zip(b.iter().flatten()).filter(|(x, y)| x == y).count();
        // Independent balanced rows agree on about half the cells (1024 total).
        assert!((400..=624).contains(&agree), "{agree}");
    }

    #[test]
    fn validates_coverage() {
        let err = ScoreMatrix::new(1, 4, vec![0.0; 4], vec![true, true, true, false], vec![0]).unwrap_err();
        assert!(matches!(err, Error::Statistics { example: 0, .. }));
        assert!(ScoreMatrix::new(1, 4, vec![0.0; 3], vec![true; 4], vec![0]).is_err());
        let ok = ScoreMatrix::new(1, 4, vec![0.0, 1.0, 2.0, 3.0], vec![true, false, true, false], vec![0]).unwrap();
        assert_eq!(ok.score(0, 2), 2.0);
        let json = serde_json::to_string(&ok).unwrap();
        assert_eq!(serde_json::from_str::<ScoreMatrix>(&json).unwrap(), ok);
        let bad = json.replace("[true,false,true,false]", "[true,true,true,false]");
        assert!(serde_json::from_str::<ScoreMatrix>(&bad).is_err());
    }
}
