use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Probe,
}

/// Equally shaped samples with integer pattern labels.
///
/// Labels index `class_names`; a class may have zero samples.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    samples: Vec<Tensor>,
    labels: Vec<usize>,
    class_names: Vec<String>,
    split: Split,
}

impl LabeledDataset {
    pub fn new(samples: Vec<Tensor>, labels: Vec<usize>, class_names: Vec<String>, split: Split) -> Result<Self> {
        if samples.len() != labels.len() {
            return Err(Error::Consistency(format!(
                "{} samples but {} labels",
                samples.len(),
                labels.len()
            )));
        }
        if let Some(first) = samples.first() {
            if let Some(bad) = samples.iter().find(|s| s.shape() != first.shape()) {
                return Err(Error::Dimension {
                    op: "dataset",
                    lhs: first.shape().to_vec(),
                    rhs: bad.shape().to_vec(),
                });
            }
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= class_names.len()) {
            return Err(Error::Consistency(format!(
                "label {l} outside {} classes",
                class_names.len()
            )));
        }
        Ok(Self {
            samples,
            labels,
            class_names,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Tensor] {
        &self.samples
    }

    pub fn sample(&self, i: usize) -> &Tensor {
        &self.samples[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn sample_shape(&self) -> Option<&[usize]> {
        self.samples.first().map(|s| s.shape())
    }

    /// Samples per class, indexed by label.
    pub fn counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_names.len()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Sample indices per class, in dataset order.
    pub fn indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.class_names.len()];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l].push(i);
        }
        out
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.class_names.iter().position(|n| n == name)
    }

    /// Keeps the named classes and relabels them `0..keep.len()` in `keep`
    /// order.
    pub fn filter_classes<S: AsRef<str>>(&self, keep: &[S]) -> Result<Self> {
        if keep.is_empty() {
            return Err(Error::contract("class filter is empty"));
        }
        let mut remap = BTreeMap::new();
        for (new, name) in keep.iter().enumerate() {
            let name = name.as_ref();
            let old = self
                .class_index(name)
                .ok_or_else(|| Error::contract(format!("unknown class {name:?}")))?;
            if remap.insert(old, new).is_some() {
                return Err(Error::contract(format!("class {name:?} listed twice")));
            }
        }
        let (samples, labels) = self
            .samples
            .iter()
            .zip(&self.labels)
            .filter_map(|(s, l)| remap.get(l).map(|&n| (s.clone(), n)))
            .unzip();
        let names = keep.iter().map(|k| k.as_ref().to_string()).collect();
        Self::new(samples, labels, names, self.split)
    }

    /// Merges datasets with equal sample shapes; class names must not clash.
    pub fn concat(parts: Vec<LabeledDataset>, split: Split) -> Result<Self> {
        let mut samples = Vec::new();
        let mut labels = Vec::new();
        let mut names: Vec<String> = Vec::new();
        for part in parts {
            let offset = names.len();
            for n in &part.class_names {
                if names.contains(n) {
                    return Err(Error::Consistency(format!("class {n:?} appears in two sources")));
                }
            }
            names.extend(part.class_names);
            labels.extend(part.labels.iter().map(|l| l + offset));
            samples.extend(part.samples);
        }
        Self::new(samples, labels, names, split)
    }

    /// Applies `f` to every sample, keeping labels.
    pub fn map_samples(&self, mut f: impl FnMut(usize, &Tensor) -> Result<Tensor>) -> Result<Self> {
        let samples = self
            .samples
            .iter()
            .enumerate()
            .map(|(i, s)| f(i, s))
            .collect::<Result<Vec<_>>>()?;
        Self::new(samples, self.labels.clone(), self.class_names.clone(), self.split)
    }

    /// Prefixes class names with `prefix/`, leaving a class already named
    /// `prefix` as is.
    pub fn prefix_classes(mut self, prefix: &str) -> Self {
        if prefix.is_empty() {
            return self;
        }
        for name in &mut self.class_names {
            if name != prefix {
                *name = format!("{prefix}/{name}");
            }
        }
        self
    }
}
