//! Run directories, manifest loading and the frozen conditional network.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tsd_core::dataset::{
    derive_seed, load_samples, read_manifest, Catalog, Domain, ReferenceBank, Split, TsdSample,
};
use tsd_core::models::{train_conditional, ConditionalNet, EmbeddingCache};
use tsd_core::training::{write_metrics_csv, PhaseResult, RUN_ROOT_ENV};

use crate::config::{merge, read_flat, to_flat_json, Flat, RunConfig};
use crate::error::{CliError, CliResult};

pub const CONFIG_FILE: &str = "config.json";
pub const CONDITIONAL_FILE: &str = "conditional.ckpt";
pub const CLASSES_FILE: &str = "classes.json";
pub const PSEUDO_FILE: &str = "pseudo_labels.json";
pub const PHASES_FILE: &str = "phases.jsonl";

/// Relative run paths live under `$TSD_RUN_ROOT` when it is set.
pub fn resolve_run_dir(arg: &Path) -> PathBuf {
    match std::env::var_os(RUN_ROOT_ENV) {
        Some(root) if arg.is_relative() => PathBuf::from(root).join(arg),
        _ => arg.to_path_buf(),
    }
}

#[derive(Debug, Clone)]
pub struct Run {
    pub dir: PathBuf,
    pub cfg: RunConfig,
}

impl Run {
    /// Defaults, then the existing snapshot, then `layers`. The merged
    /// config is written back before anything else happens.
    pub fn open(dir: &Path, layers: &[Flat]) -> CliResult<Self> {
        let snap = dir.join(CONFIG_FILE);
        let mut all = Vec::new();
        if snap.exists() {
            all.push(read_flat(&snap)?);
        }
        all.extend(layers.iter().cloned());
        let mut cfg = merge(&RunConfig::default(), &all)?;
        if let Ok(abs) = std::fs::canonicalize(&cfg.data.dir) {
            cfg.data.dir = abs;
        }
        std::fs::create_dir_all(dir)?;
        std::fs::write(&snap, to_flat_json(&cfg))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            cfg,
        })
    }

    /// Read-only view of an initialized run.
    pub fn existing(dir: &Path) -> CliResult<Self> {
        let snap = dir.join(CONFIG_FILE);
        if !snap.exists() {
            return Err(CliError::Missing(format!(
                "{} (not a run directory)",
                snap.display()
            )));
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            cfg: merge(&RunConfig::default(), &[read_flat(&snap)?])?,
        })
    }

    pub fn require(&self, file: &str) -> CliResult<PathBuf> {
        let p = self.dir.join(file);
        if p.exists() {
            Ok(p)
        } else {
            Err(CliError::Missing(format!("{} not found", p.display())))
        }
    }

    pub fn require_checkpoint(&self, stem: &str) -> CliResult<()> {
        self.require(&format!("{stem}.ckpt")).map(|_| ())
    }

    /// Append phases to `phases.jsonl` and rebuild `metrics.csv` from all
    /// recorded phases.
    pub fn record(&self, phases: &[PhaseResult]) -> CliResult<()> {
        let path = self.dir.join(PHASES_FILE);
        let mut text = std::fs::read_to_string(&path).unwrap_or_default();
        for p in phases {
            text.push_str(&serde_json::to_string(p)?);
            text.push('\n');
        }
        std::fs::write(&path, &text)?;
        write_metrics_csv(&self.dir.join("metrics.csv"), &self.phases()?)?;
        Ok(())
    }

    pub fn phases(&self) -> CliResult<Vec<PhaseResult>> {
        let text = std::fs::read_to_string(self.dir.join(PHASES_FILE)).unwrap_or_default();
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(CliError::from))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub source: BTreeSet<String>,
    pub target: BTreeSet<String>,
}

impl ClassSpec {
    pub fn all(&self) -> BTreeSet<String> {
        self.source.union(&self.target).cloned().collect()
    }
}

pub fn classes_of(samples: &[TsdSample]) -> BTreeSet<String> {
    samples.iter().map(|s| s.target_class.clone()).collect()
}

pub struct Data {
    pub source: Vec<TsdSample>,
    /// Target samples as annotated for training: clip labels only outside
    /// the test split.
    pub target: Vec<TsdSample>,
    /// Target samples with frame labels on every split; empty when the
    /// manifest is absent.
    pub target_strong: Vec<TsdSample>,
}

pub fn pick(samples: &[TsdSample], split: Split) -> Vec<TsdSample> {
    samples
        .iter()
        .filter(|s| s.split == split)
        .cloned()
        .collect()
}

impl Data {
    pub fn load(cfg: &RunConfig) -> CliResult<Self> {
        let dir = &cfg.data.dir;
        let read = |name: &str| {
            let p = dir.join(name);
            if !p.exists() {
                return Err(CliError::Data(format!(
                    "manifest {} not found",
                    p.display()
                )));
            }
            Ok(read_manifest(&p)?)
        };
        let source = read(&cfg.data.source_manifest)?;
        let target = read(&cfg.data.target_manifest)?;
        let strong = if dir.join(&cfg.data.target_strong_manifest).exists() {
            read(&cfg.data.target_strong_manifest)?
        } else {
            Vec::new()
        };
        let (n_s, n_t) = (source.len(), target.len());
        let all: Vec<_> = source.into_iter().chain(target).chain(strong).collect();
        let mut samples = load_samples(&all, dir)?;
        let target_strong = samples.split_off(n_s + n_t);
        let target = samples.split_off(n_s);
        let data = Self {
            source: samples,
            target,
            target_strong,
        };
        for (name, set, want) in [
            ("source", &data.source, Domain::Source),
            ("target", &data.target, Domain::Target),
            ("target (strong)", &data.target_strong, Domain::Target),
        ] {
            if let Some(s) = set.iter().find(|s| s.domain != want) {
                return Err(CliError::Data(format!(
                    "{name} manifest holds a {} sample ({})",
                    s.domain, s.mixture_id
                )));
            }
        }
        let shared: Vec<String> = classes_of(&data.source)
            .intersection(&classes_of(&data.target))
            .cloned()
            .collect();
        if !shared.is_empty() {
            return Err(CliError::Data(format!(
                "source and target manifests share classes {shared:?}"
            )));
        }
        Ok(data)
    }

    /// Target samples used for validation and testing: strongly labelled
    /// when available.
    pub fn target_eval(&self) -> &[TsdSample] {
        if self.target_strong.is_empty() {
            &self.target
        } else {
            &self.target_strong
        }
    }

    pub fn classes(&self) -> ClassSpec {
        ClassSpec {
            source: classes_of(&self.source),
            target: classes_of(&self.target),
        }
    }
}

pub fn references(samples: &[TsdSample]) -> ReferenceBank {
    samples
        .iter()
        .map(|s| (s.reference_id.clone(), s.reference.clone()))
        .collect()
}

/// Clean clips per source class, taken from the references of the source
/// manifest.
fn source_catalog(source: &[TsdSample]) -> Catalog {
    let mut clean: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for s in source {
        clean
            .entry(s.target_class.clone())
            .or_default()
            .insert(s.reference_id.clone());
    }
    Catalog {
        classes: clean.keys().cloned().collect(),
        clean_clips: clean
            .into_iter()
            .map(|(c, ids)| (c, ids.into_iter().collect()))
            .collect(),
        scenes: Vec::new(),
    }
}

pub fn read_classes(run: &Run) -> CliResult<ClassSpec> {
    let text = std::fs::read_to_string(run.require(CLASSES_FILE)?)?;
    Ok(serde_json::from_str(&text)?)
}

/// Load the run's conditional network, training it on the source references
/// the first time. Returns embeddings of every reference in `data`.
pub fn embeddings(run: &Run, data: &Data) -> CliResult<EmbeddingCache> {
    let path = run.dir.join(CONDITIONAL_FILE);
    let classes = data.classes();
    let net = if path.exists() {
        let pinned = read_classes(run)?;
        if pinned != classes {
            return Err(CliError::Data(format!(
                "manifest classes {:?} differ from the run's classes {:?}",
                classes.all(),
                pinned.all()
            )));
        }
        ConditionalNet::load(&path)?
    } else {
        let net = train_conditional(
            &source_catalog(&data.source),
            &references(&data.source),
            &run.cfg.conditional,
            run.cfg.conditional_epochs,
            derive_seed(run.cfg.train.seed, &[0xC0]),
        )?;
        net.save(&path)?;
        std::fs::write(
            run.dir.join(CLASSES_FILE),
            serde_json::to_string_pretty(&classes)? + "\n",
        )?;
        net
    };
    let all: Vec<TsdSample> = data
        .source
        .iter()
        .chain(&data.target)
        .chain(&data.target_strong)
        .cloned()
        .collect();
    Ok(EmbeddingCache::build(&net, &references(&all))?)
}
