//! Tiny dataset and models shared by the training unit tests.

use std::sync::OnceLock;

use crate::dataset::toy::ToyBankConfig;
use crate::dataset::{
    build_toy_dataset, Domain, Split, ToyDatasetConfig, ToySplitSizes, TsdSample,
};
use crate::models::{ConditionalConfig, ConditionalNet, EmbeddingCache, StudentConfig};

use super::TrainConfig;

pub(crate) struct World {
    pub samples: Vec<TsdSample>,
    pub emb: EmbeddingCache,
}

impl World {
    pub fn pick(&self, domain: Domain, split: Split) -> Vec<TsdSample> {
        self.samples
            .iter()
            .filter(|s| s.domain == domain && s.split == split)
            .cloned()
            .collect()
    }
}

pub(crate) fn world() -> &'static World {
    static W: OnceLock<World> = OnceLock::new();
    W.get_or_init(|| {
        let sizes = ToySplitSizes {
            train: 4,
            val: 2,
            test: 2,
        };
        let cfg = ToyDatasetConfig {
            bank: ToyBankConfig {
                n_classes: 6,
                max_len: 1.0,
                ..ToyBankConfig::default()
            },
            n_source_classes: 2,
            scene_duration: 1.5,
            source_scenes: sizes,
            target_scenes: sizes,
            references_per_class: 2,
            seed: 5,
            ..ToyDatasetConfig::default()
        };
        let ds = build_toy_dataset(&cfg).unwrap();
        let refs = ds.reference_features().unwrap();
        let net = ConditionalNet::new(ConditionalConfig::desk(), ds.bank.class_names(), 1).unwrap();
        World {
            samples: ds.samples().unwrap(),
            emb: EmbeddingCache::build(&net, &refs).unwrap(),
        }
    })
}

pub(crate) fn tiny_student(pooling: bool) -> StudentConfig {
    StudentConfig {
        conv_channels: vec![3, 4],
        freq_pools: vec![8, 8],
        embedding_dim: 32,
        gru_hidden: 3,
        fc_hidden: 4,
        kd_dim: 3,
        has_pooling_head: pooling,
        ..StudentConfig::default()
    }
}

pub(crate) fn quick_config() -> TrainConfig {
    TrainConfig {
        epochs: 2,
        retrain_epochs: 1,
        batch_size: 2,
        seed: 3,
        ..TrainConfig::default()
    }
}
