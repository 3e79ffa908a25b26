//! The simplified few-shot model: orthonormal class means, Gaussian samples
//! around them, and nearest-mean classifiers built from S samples per class.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attacks::ScoreMatrix;
use crate::error::{Error, Result};
use crate::rng::{stream, tag};

fn default_pool_factor() -> usize {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimplifiedModelConfig {
    pub num_classes: usize,
    pub shots: usize,
    pub dimension: usize,
    pub in_class_std: f64,
    #[serde(default = "default_pool_factor")]
    pub pool_factor: usize,
    #[serde(default)]
    pub seed: u64,
}

impl SimplifiedModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 1 {
            return Err(Error::Configuration("num_classes must be at least 1".into()));
        }
        if self.shots < 2 {
            return Err(Error::Configuration(format!("shots must be at least 2, got {}", self.shots)));
        }
        if self.num_classes > self.dimension {
            return Err(Error::InfeasibleOrthogonality {
                classes: self.num_classes,
                dimension: self.dimension,
            });
        }
        if !(self.in_class_std > 0.0 && self.in_class_std.is_finite()) {
            return Err(Error::Configuration(format!(
                "in_class_std must be positive, got {}",
                self.in_class_std
            )));
        }
        if self.pool_factor < 2 {
            return Err(Error::Configuration(format!(
                "pool_factor must be at least 2, got {}",
                self.pool_factor
            )));
        }
        Ok(())
    }
}

/// All candidate vectors of one simulated world, stored row-major and grouped
/// by class: vector `i` has label `i / per_class`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePool {
    pub num_classes: usize,
    pub per_class: usize,
    pub dimension: usize,
    pub in_class_std: f64,
    pub vectors: Vec<f64>,
    pub labels: Vec<usize>,
    pub true_means: Vec<f64>,
}

impl SamplePool {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn vector(&self, i: usize) -> &[f64] {
        &self.vectors[i * self.dimension..(i + 1) * self.dimension]
    }

    pub fn true_mean(&self, class: usize) -> &[f64] {
        &self.true_means[class * self.dimension..(class + 1) * self.dimension]
    }

    /// Indices of the pool vectors with the given label.
    pub fn class_range(&self, class: usize) -> std::ops::Range<usize> {
        class * self.per_class..(class + 1) * self.per_class
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn gaussian_vector<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// `count` orthonormal vectors in R^dim, the first columns of a uniformly
/// random rotation (Gram-Schmidt on Gaussian vectors, applied twice).
pub fn orthonormal_means<R: Rng + ?Sized>(count: usize, dim: usize, rng: &mut R) -> Result<Vec<f64>> {
    if count > dim {
        return Err(Error::InfeasibleOrthogonality { classes: count, dimension: dim });
    }
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(count);
    while basis.len() < count {
        let mut v = gaussian_vector(rng, dim);
        for _ in 0..2 {
            for b in &basis {
                let p = dot(&v, b);
                v.iter_mut().zip(b).for_each(|(vi, bi)| *vi -= p * bi);
            }
        }
        let norm = dot(&v, &v).sqrt();
        // A Gaussian draw lands in the span of earlier vectors with probability 0.
        if norm < 1e-8 {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        basis.push(v);
    }
    Ok(basis.concat())
}

/// Draw `per_class` vectors from N(m_c, s² I) around each of the given means.
pub fn sample_pool<R: Rng + ?Sized>(
    true_means: Vec<f64>,
    num_classes: usize,
    dimension: usize,
    per_class: usize,
    in_class_std: f64,
    rng: &mut R,
) -> SamplePool {
    let mut vectors = Vec::with_capacity(num_classes * per_class * dimension);
    let mut labels = Vec::with_capacity(num_classes * per_class);
    for c in 0..num_classes {
        let m = &true_means[c * dimension..(c + 1) * dimension];
        for _ in 0..per_class {
            vectors.extend(m.iter().map(|mi| mi + in_class_std * rng.sample::<f64, _>(StandardNormal)));
            labels.push(c);
        }
    }
    SamplePool { num_classes, per_class, dimension, in_class_std, vectors, labels, true_means }
}

/// Generate the candidate pool of `pool_factor * shots` vectors per class.
pub fn generate_pool(config: &SimplifiedModelConfig) -> Result<SamplePool> {
    config.validate()?;
    let mut rng = stream(config.seed, &[tag::POOL]);
    let means = orthonormal_means(config.num_classes, config.dimension, &mut rng)?;
    Ok(sample_pool(
        means,
        config.num_classes,
        config.dimension,
        config.pool_factor * config.shots,
        config.in_class_std,
        &mut rng,
    ))
}

/// Nearest-mean classifier: r_c is the average of the selected class-c vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterClassifier {
    pub num_classes: usize,
    pub dimension: usize,
    pub shots: usize,
    pub class_means: Vec<f64>,
    pub membership_mask: Vec<bool>,
}

impl ClusterClassifier {
    pub fn class_mean(&self, class: usize) -> &[f64] {
        &self.class_means[class * self.dimension..(class + 1) * self.dimension]
    }
}

/// Build the classifier trained on the pool vectors selected by `mask`; every
/// class must contribute the same, nonzero number of vectors.
pub fn build_classifier(pool: &SamplePool, mask: &[bool]) -> Result<ClusterClassifier> {
    if mask.len() != pool.len() {
        return Err(Error::Shape(format!("mask has {} entries, pool has {}", mask.len(), pool.len())));
    }
    let d = pool.dimension;
    let mut sums = vec![0.0; pool.num_classes * d];
    let mut counts = vec![0usize; pool.num_classes];
    for (i, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
        let c = pool.labels[i];
        counts[c] += 1;
        sums[c * d..(c + 1) * d].iter_mut().zip(pool.vector(i)).for_each(|(s, x)| *s += x);
    }
    let shots = counts[0];
    if shots == 0 || counts.iter().any(|&k| k != shots) {
        return Err(Error::Balance(format!("per-class member counts {counts:?} are not equal and nonzero")));
    }
    let inv = 1.0 / shots as f64;
    sums.iter_mut().for_each(|s| *s *= inv);
    Ok(ClusterClassifier {
        num_classes: pool.num_classes,
        dimension: d,
        shots,
        class_means: sums,
        membership_mask: mask.to_vec(),
    })
}

/// Own-class score t_x = <x, r_label>.
pub fn model_score(x: &[f64], label: usize, classifier: &ClusterClassifier) -> Result<f64> {
    if x.len() != classifier.dimension {
        return Err(Error::Shape(format!(
            "vector has dimension {}, classifier has {}",
            x.len(),
            classifier.dimension
        )));
    }
    if label >= classifier.num_classes {
        return Err(Error::Shape(format!("label {label} out of range for {} classes", classifier.num_classes)));
    }
    Ok(dot(x, classifier.class_mean(label)))
}

/// Inner products with every class mean, for exploratory use.
pub fn class_scores(x: &[f64], classifier: &ClusterClassifier) -> Result<Vec<f64>> {
    (0..classifier.num_classes).map(|c| model_score(x, c, classifier)).collect()
}

/// Training masks for `num_models` models, exactly `shots` members per class.
///
/// With a pool of 2S per class, models come in complementary pairs (model 2k
/// trains on a random half of every class, model 2k+1 on the other half), so
/// every vector is a member of exactly half the models. Larger pools draw an
/// independent stratified subset per model.
pub fn stratified_masks(pool: &SamplePool, shots: usize, num_models: usize, seed: u64) -> Result<Vec<Vec<bool>>> {
    if shots == 0 || shots > pool.per_class {
        return Err(Error::Configuration(format!(
            "cannot select {shots} of {} vectors per class",
            pool.per_class
        )));
    }
    let paired = pool.per_class == 2 * shots;
    if paired && num_models % 2 != 0 {
        return Err(Error::Parity(num_models));
    }
    let draws = if paired { num_models / 2 } else { num_models };
    let mut masks = Vec::with_capacity(num_models);
    for k in 0..draws {
        let mut rng = stream(seed, &[tag::SPLIT, k as u64]);
        let mut mask = vec![false; pool.len()];
        let mut idx: Vec<usize> = (0..pool.per_class).collect();
        for c in 0..pool.num_classes {
            idx.shuffle(&mut rng);
            let base = pool.class_range(c).start;
            for &j in &idx[..shots] {
                mask[base + j] = true;
            }
        }
        if paired {
            let complement = mask.iter().map(|m| !m).collect();
            masks.push(mask);
            masks.push(complement);
        } else {
            masks.push(mask);
        }
    }
    Ok(masks)
}

/// Train one classifier per mask and record every pool vector's own-class
/// score under every model.
pub fn simulate_score_matrix(pool: &SamplePool, masks: &[Vec<bool>]) -> Result<ScoreMatrix> {
    let n = pool.len();
    let columns: Vec<Vec<f64>> = masks
        .par_iter()
        .map(|mask| {
            let clf = build_classifier(pool, mask)?;
            Ok((0..n).map(|i| dot(pool.vector(i), clf.class_mean(pool.labels[i]))).collect())
        })
        .collect::<Result<_>>()?;
    let m = masks.len();
    let mut scores = vec![0.0; n * m];
    let mut membership = vec![false; n * m];
    for (j, (col, mask)) in columns.iter().zip(masks).enumerate() {
        for i in 0..n {
            scores[i * m + j] = col[i];
            membership[i * m + j] = mask[i];
        }
    }
    ScoreMatrix::new(n, m, scores, membership, pool.labels.clone())
}
