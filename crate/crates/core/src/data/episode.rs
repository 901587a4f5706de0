use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeSpec {
    pub n_way: usize,
    #[serde(default = "one")]
    pub k_shot: usize,
    #[serde(default = "one")]
    pub queries_per_class: usize,
}

fn one() -> usize {
    1
}

impl EpisodeSpec {
    pub fn new(n_way: usize, queries_per_class: usize) -> Self {
        Self {
            n_way,
            k_shot: 1,
            queries_per_class,
        }
    }
}

/// One N-way episode, as indices into the source dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Episode {
    /// Dataset label of each way.
    pub classes: Vec<usize>,
    /// Template sample for each way.
    pub support: Vec<usize>,
    /// `(sample index, true way)` for every query.
    pub queries: Vec<(usize, usize)>,
}

pub fn sample_episode(ds: &LabeledDataset, spec: &EpisodeSpec, rng: &mut Rng) -> Result<Episode> {
    if spec.n_way < 2 {
        return Err(Error::contract(format!("n_way must be at least 2, got {}", spec.n_way)));
    }
    if spec.k_shot != 1 {
        return Err(Error::contract(format!("only one-shot episodes are supported, got k_shot {}", spec.k_shot)));
    }
    if spec.queries_per_class == 0 {
        return Err(Error::contract("an episode needs at least one query per class"));
    }
    if spec.n_way > ds.n_classes() {
        return Err(Error::contract(format!(
            "n_way {} exceeds the {} classes available",
            spec.n_way,
            ds.n_classes()
        )));
    }
    let need = spec.k_shot + spec.queries_per_class;
    let by_class = ds.indices_by_class();
    let eligible: Vec<usize> = (0..by_class.len()).filter(|&c| by_class[c].len() >= need).collect();
    if eligible.len() < spec.n_way {
        return Err(Error::contract(format!(
            "only {} classes have the {need} samples an episode needs, n_way is {}",
            eligible.len(),
            spec.n_way
        )));
    }
    let classes: Vec<usize> = index::sample(rng, eligible.len(), spec.n_way)
        .into_iter()
        .map(|i| eligible[i])
        .collect();
    let mut support = Vec::with_capacity(spec.n_way);
    let mut queries = Vec::with_capacity(spec.n_way * spec.queries_per_class);
    for (way, &c) in classes.iter().enumerate() {
        let members = &by_class[c];
        let picked = index::sample(rng, members.len(), need).into_vec();
        support.push(members[picked[0]]);
        queries.extend(picked[1..].iter().map(|&i| (members[i], way)));
    }
    Ok(Episode {
        classes,
        support,
        queries,
    })
}
