use std::collections::BTreeMap;
use std::sync::Arc;

use crate::dataset::{Domain, TsdSample};
use crate::features::MelSpectrogram;

/// Samples sharing one mixture, so the conv stack runs once per mixture.
#[derive(Debug, Clone)]
pub struct MixtureGroup {
    pub mixture_id: String,
    pub mixture: Arc<MelSpectrogram>,
    pub domain: Domain,
    /// Indices into the sample slice the groups were built from.
    pub samples: Vec<usize>,
}

/// Group samples by mixture id, in order of first appearance.
pub fn group_by_mixture(samples: &[TsdSample]) -> Vec<MixtureGroup> {
    let mut index: BTreeMap<&str, usize> = BTreeMap::new();
    let mut groups: Vec<MixtureGroup> = Vec::new();
    for (i, s) in samples.iter().enumerate() {
        match index.get(s.mixture_id.as_str()) {
            Some(&g) => groups[g].samples.push(i),
            None => {
                index.insert(&s.mixture_id, groups.len());
                groups.push(MixtureGroup {
                    mixture_id: s.mixture_id.clone(),
                    mixture: s.mixture.clone(),
                    domain: s.domain,
                    samples: vec![i],
                });
            }
        }
    }
    groups
}
