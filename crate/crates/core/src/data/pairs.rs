use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::{PairExample, PairLabel};
use crate::rng::Rng;

/// Sizes of the identical-pattern and different-pattern pair sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairCounts {
    pub identical: u64,
    pub different: u64,
}

fn check_counts(counts: &[usize]) -> Result<()> {
    if counts.len() < 2 {
        return Err(Error::contract(format!("need at least 2 patterns, got {}", counts.len())));
    }
    if let Some(i) = counts.iter().position(|&n| n == 0) {
        return Err(Error::contract(format!("pattern {i} has no samples")));
    }
    Ok(())
}

/// Closed form: ordered identical pairs including self-pairs, and
/// different pairs with the lower-indexed pattern first.
pub fn pair_counts(counts: &[usize]) -> Result<PairCounts> {
    check_counts(counts)?;
    let n: Vec<u64> = counts.iter().map(|&c| c as u64).collect();
    let identical = n.iter().map(|c| c * c).sum();
    let total: u64 = n.iter().sum();
    let different = (total * total - identical) / 2;
    Ok(PairCounts { identical, different })
}

/// Counts both pair sets by walking every ordered pair of samples.
pub fn enumerate_pair_counts(ds: &LabeledDataset) -> Result<PairCounts> {
    check_counts(&ds.counts())?;
    let labels = ds.labels();
    let mut counts = PairCounts {
        identical: 0,
        different: 0,
    };
    for &a in labels {
        for &b in labels {
            if a == b {
                counts.identical += 1;
            } else if a < b {
                counts.different += 1;
            }
        }
    }
    Ok(counts)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PairOptions {
    /// Fraction of identical pairs, strictly between 0 and 1.
    pub balance: f64,
    /// Whether a sample may be paired with itself.
    pub allow_self: bool,
    /// Randomly swap the order of each different pair.
    pub swap_order: bool,
}

impl Default for PairOptions {
    fn default() -> Self {
        Self {
            balance: 0.5,
            allow_self: true,
            swap_order: false,
        }
    }
}

/// Draws `count` pairs, `round(count·balance)` of them identical, each
/// uniform over its pair set, then shuffles the batch.
pub fn sample_pairs(ds: &LabeledDataset, count: usize, opts: &PairOptions, rng: &mut Rng) -> Result<Vec<PairExample>> {
    if !(opts.balance > 0.0 && opts.balance < 1.0) {
        return Err(Error::contract(format!("balance {} must lie in (0, 1)", opts.balance)));
    }
    let by_class = ds.indices_by_class();
    let n_iden = (count as f64 * opts.balance).round() as usize;
    let n_diff = count - n_iden;
    let mut out = Vec::with_capacity(count);

    if n_iden > 0 {
        let weights: Vec<f64> = by_class
            .iter()
            .map(|c| {
                let n = c.len() as f64;
                if opts.allow_self {
                    n * n
                } else {
                    n * (n - 1.0)
                }
            })
            .collect();
        let pick = WeightedIndex::new(&weights)
            .map_err(|_| Error::contract("no pattern can form an identical pair"))?;
        for _ in 0..n_iden {
            let members = &by_class[pick.sample(rng)];
            let j = rng.random_range(0..members.len());
            let k = if opts.allow_self {
                rng.random_range(0..members.len())
            } else {
                // uniform over the other members
                let k = rng.random_range(0..members.len() - 1);
                if k >= j {
                    k + 1
                } else {
                    k
                }
            };
            out.push(make_pair(ds, members[j], members[k], PairLabel::Identical)?);
        }
    }

    if n_diff > 0 {
        let mut class_pairs = Vec::new();
        let mut weights = Vec::new();
        for i in 0..by_class.len() {
            for j in i + 1..by_class.len() {
                class_pairs.push((i, j));
                weights.push(by_class[i].len() as f64 * by_class[j].len() as f64);
            }
        }
        let pick = WeightedIndex::new(&weights)
            .map_err(|_| Error::contract("different pairs need two non-empty patterns"))?;
        for _ in 0..n_diff {
            let (ci, cj) = class_pairs[pick.sample(rng)];
            let mut a = by_class[ci][rng.random_range(0..by_class[ci].len())];
            let mut b = by_class[cj][rng.random_range(0..by_class[cj].len())];
            if opts.swap_order && rng.random::<bool>() {
                std::mem::swap(&mut a, &mut b);
            }
            out.push(make_pair(ds, a, b, PairLabel::Different)?);
        }
    }

    out.shuffle(rng);
    Ok(out)
}

fn make_pair(ds: &LabeledDataset, a: usize, b: usize, label: PairLabel) -> Result<PairExample> {
    PairExample::new(ds.sample(a).clone(), ds.sample(b).clone(), label)
}
