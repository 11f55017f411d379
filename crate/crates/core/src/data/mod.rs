//! Datasets, client shards and same-label batches.

pub mod csv;
pub mod idx;
pub mod partition;
pub mod sampler;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub use self::csv::{load_csv, LabelColumn};
pub use idx::load_mnist;
pub use partition::{partition_noniid, partition_uniform, write_shards_csv, Shard};
pub use sampler::{epoch_batches, SameLabelSampler};

/// Labelled samples sharing one feature shape, stored contiguously.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<S> {
    feature_shape: Vec<usize>,
    features: Vec<S>,
    labels: Vec<usize>,
    num_classes: usize,
    /// Display name of each class index.
    pub class_names: Vec<String>,
    /// How raw values were mapped into [0, 1].
    pub normalization: String,
}

impl<S: Scalar> Dataset<S> {
    pub fn new(feature_shape: Vec<usize>, features: Vec<S>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        let d: usize = feature_shape.iter().product();
        if d == 0 || features.len() != d * labels.len() {
            return Err(Error::ShapeMismatch {
                op: "dataset",
                left: feature_shape,
                right: vec![features.len()],
            });
        }
        if num_classes < 2 {
            return Err(Error::TooFewClasses(num_classes));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::LabelOutOfRange {
                label: bad,
                classes: num_classes,
            });
        }
        Ok(Dataset {
            feature_shape,
            features,
            labels,
            num_classes,
            class_names: (0..num_classes).map(|c| c.to_string()).collect(),
            normalization: String::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_shape(&self) -> &[usize] {
        &self.feature_shape
    }

    pub fn feature_len(&self) -> usize {
        self.feature_shape.iter().product()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn features(&self, i: usize) -> &[S] {
        let d = self.feature_len();
        &self.features[i * d..(i + 1) * d]
    }

    pub fn sample(&self, i: usize) -> Tensor<S> {
        Tensor::from_parts(self.feature_shape.clone(), self.features(i).to_vec())
    }

    /// Stacks the chosen samples into `[N, ..feature_shape]`.
    pub fn batch(&self, indices: &[usize]) -> (Tensor<S>, Vec<usize>) {
        let d = self.feature_len();
        let mut data = Vec::with_capacity(d * indices.len());
        for &i in indices {
            data.extend_from_slice(self.features(i));
        }
        let mut shape = vec![indices.len()];
        shape.extend(&self.feature_shape);
        (
            Tensor::from_parts(shape, data),
            indices.iter().map(|&i| self.labels[i]).collect(),
        )
    }

    /// Indices of every sample, grouped by label in ascending label order.
    pub fn indices_by_label(&self, indices: &[usize]) -> Vec<(usize, Vec<usize>)> {
        let mut groups: Vec<Vec<usize>> = vec![Vec::new(); self.num_classes];
        for &i in indices {
            groups[self.labels[i]].push(i);
        }
        groups.into_iter().enumerate().filter(|(_, g)| !g.is_empty()).collect()
    }

    /// New dataset holding the given samples, keeping class indices.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let d = self.feature_len();
        let mut features = Vec::with_capacity(d * indices.len());
        for &i in indices {
            features.extend_from_slice(self.features(i));
        }
        Dataset {
            feature_shape: self.feature_shape.clone(),
            features,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            class_names: self.class_names.clone(),
            normalization: self.normalization.clone(),
        }
    }

    /// Samples whose label is in `keep`.
    pub fn restrict_labels(&self, keep: &[usize]) -> Self {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| keep.contains(&self.labels[i])).collect();
        self.subset(&idx)
    }

    /// Seeded shuffle split into (train, test) with `round(test_fraction * n)` test samples.
    pub fn split(&self, test_fraction: f64, rng: &mut impl Rng) -> Result<(Self, Self)> {
        if !(0.0..1.0).contains(&test_fraction) {
            return Err(Error::Config(format!("test fraction {test_fraction} not in [0, 1)")));
        }
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(rng);
        let n_test = (test_fraction * self.len() as f64).round() as usize;
        let (test, train) = idx.split_at(n_test);
        let mut train = train.to_vec();
        let mut test = test.to_vec();
        train.sort_unstable();
        test.sort_unstable();
        Ok((self.subset(&train), self.subset(&test)))
    }
}

/// Same-label batch: every member carries `label`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    indices: Vec<usize>,
    label: usize,
}

impl Batch {
    pub fn new<S: Scalar>(ds: &Dataset<S>, indices: Vec<usize>) -> Result<Self> {
        let first = *indices.first().ok_or(Error::EmptyBatch)?;
        let label = ds.label(first);
        assert!(
            indices.iter().all(|&i| ds.label(i) == label),
            "batch members must share one label"
        );
        Ok(Batch { indices, label })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn label(&self) -> usize {
        self.label
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Largest Euclidean distance between any two of the chosen samples (brute force).
pub fn max_pairwise_distance<S: Scalar>(ds: &Dataset<S>, indices: &[usize]) -> Result<S> {
    if indices.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: indices.len(),
        });
    }
    let mut best = S::zero();
    for (a, &i) in indices.iter().enumerate() {
        for &j in &indices[a + 1..] {
            let d2: S = ds
                .features(i)
                .iter()
                .zip(ds.features(j))
                .map(|(&u, &v)| (u - v) * (u - v))
                .sum();
            best = best.max(d2);
        }
    }
    Ok(best.sqrt())
}
