//! The toy benchmark: one seed of every comparison the framework is judged
//! by, from dataset synthesis to test-set scores.

use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{
    build_toy_dataset, derive_seed, manifest_to_string, Domain, Split, ToyDataset,
    ToyDatasetConfig, ToySplitSizes, TsdSample,
};
use crate::error::{Error, Result};
use crate::evaluation::EvalReport;
use crate::features::{mel_spectrogram, MelSpectrogram};
use crate::models::{
    conditional_accuracy, train_conditional, ConditionalConfig, ConditionalNet, EmbeddingCache,
    StudentConfig,
};
use crate::nn::Module;
use crate::training::{
    evaluate_student, generate_pseudo_labels, group_by_mixture, iterate_two_students,
    mean_pseudo_error_rate, noise_robustness_experiment, retrain_f_on_pseudo, retrain_w_on_target,
    run_phase, train_f_on_source, train_w_on_source_with_kd, IterationLog, Learner, NoiseRow,
    Objective, PhaseData, PhaseResult, PhaseSpec, TrainConfig,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub dataset: ToyDatasetConfig,
    pub student: StudentConfig,
    pub conditional: ConditionalConfig,
    pub conditional_epochs: usize,
    /// Unseen clean clips per source class for the encoder accuracy check.
    pub heldout_clips_per_class: usize,
    pub train: TrainConfig,
    pub noise_rates: Vec<f64>,
}

impl BenchmarkConfig {
    /// Sized for a single CPU core: one seed takes about six minutes.
    pub fn desk() -> Self {
        let scenes = ToySplitSizes {
            train: 120,
            val: 30,
            test: 40,
        };
        Self {
            dataset: ToyDatasetConfig {
                scene_duration: 3.0,
                source_scenes: scenes,
                target_scenes: scenes,
                ..ToyDatasetConfig::default()
            },
            student: StudentConfig::desk(),
            conditional: ConditionalConfig::desk(),
            conditional_epochs: 30,
            heldout_clips_per_class: 8,
            train: TrainConfig {
                epochs: 15,
                retrain_epochs: 6,
                ..TrainConfig::default()
            },
            noise_rates: vec![0.0, 0.2, 0.5],
        }
    }

    /// Every stage of [`BenchmarkConfig::desk`] at a few seconds per run.
    pub fn smoke() -> Self {
        let scenes = ToySplitSizes {
            train: 12,
            val: 6,
            test: 6,
        };
        let mut c = Self::desk();
        c.dataset.scene_duration = 2.0;
        c.dataset.source_scenes = scenes;
        c.dataset.target_scenes = scenes;
        c.conditional_epochs = 3;
        c.heldout_clips_per_class = 2;
        c.train.epochs = 2;
        c.train.retrain_epochs = 1;
        c
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        let mut c = self.clone();
        c.dataset.seed = seed;
        c.train.seed = seed;
        c
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub event_f: f64,
    pub segment_f: f64,
}

impl From<&EvalReport> for Scores {
    fn from(r: &EvalReport) -> Self {
        Self {
            event_f: r.macro_event_f,
            segment_f: r.macro_segment_f,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkOutcome {
    pub seed: u64,
    pub manifest_sha256: String,
    pub n_samples: usize,
    pub conditional_accuracy: f64,
    pub conditional_hash_unchanged: bool,
    /// Mean embedding cosine between target references of the same class
    /// and of different classes.
    pub target_cosine_same: f64,
    pub target_cosine_other: f64,
    /// Target test scores.
    pub ss: Scores,
    pub ws: Scores,
    pub ms_f: Scores,
    pub ms_w: Scores,
    pub f_zero_shot: Scores,
    pub f_after_pseudo: Scores,
    pub w_no_kd: Scores,
    pub w_kd: Scores,
    pub pseudo_error_rate: f64,
    pub noise: Vec<NoiseRow>,
    /// Test event-F of f_student after each loop iteration.
    pub loop_f_event: Vec<f64>,
    pub loop_log: IterationLog,
    /// Balanced held-out accuracy of the jointly trained discriminator.
    pub disc_accuracy_reversal: f64,
    pub disc_accuracy_no_reversal: f64,
    pub source_loss_first: f64,
    pub source_loss_last: f64,
    pub kd_loss_first: f64,
    pub kd_loss_last: f64,
    pub seconds: f64,
}

fn select(samples: &[TsdSample], domain: Domain, split: Split) -> Vec<TsdSample> {
    samples
        .iter()
        .filter(|s| s.domain == domain && s.split == split)
        .cloned()
        .collect()
}

fn weak(samples: &[TsdSample]) -> Vec<TsdSample> {
    samples.iter().map(TsdSample::weak_only).collect()
}

fn manifest_hash(samples: &[TsdSample]) -> Result<String> {
    let mut h = Sha256::new();
    for m in ToyDataset::manifests(samples) {
        h.update(manifest_to_string(&m)?.as_bytes());
    }
    Ok(hex::encode(h.finalize()))
}

fn heldout_clips(ds: &ToyDataset, per_class: usize) -> Result<Vec<(String, Arc<MelSpectrogram>)>> {
    let mut out = Vec::new();
    for class in ds.source_classes() {
        let k = ds
            .bank
            .class_index(class)
            .ok_or_else(|| Error::Dataset(format!("unknown class {class}")))?;
        for j in 0..per_class as u64 {
            out.push((
                class.clone(),
                Arc::new(mel_spectrogram(&ds.bank.clip(k, 1_000_000 + j))?),
            ));
        }
    }
    Ok(out)
}

fn cosine_stats(ds: &ToyDataset, emb: &EmbeddingCache) -> Result<(f64, f64)> {
    let mut refs = Vec::new();
    for (class, clips) in &ds.target_catalog.clean_clips {
        for id in clips {
            refs.push((class, emb.get(id)?));
        }
    }
    let (mut same, mut n_same, mut other, mut n_other) = (0.0, 0, 0.0, 0);
    for (i, (ci, ei)) in refs.iter().enumerate() {
        for (cj, ej) in &refs[i + 1..] {
            let c = ei.cosine(ej);
            if ci == cj {
                same += c;
                n_same += 1;
            } else {
                other += c;
                n_other += 1;
            }
        }
    }
    Ok((same / n_same.max(1) as f64, other / n_other.max(1) as f64))
}

/// Balanced accuracy of `l.disc` on the conv features of held-out mixtures.
fn disc_accuracy(l: &Learner, heldout: &[TsdSample]) -> Result<f64> {
    let mut hits = [0usize; 2];
    let mut total = [0usize; 2];
    for g in group_by_mixture(heldout) {
        let z = l.model.conv_forward(&g.mixture)?.0;
        let (p, _) = l.disc.forward(&z)?;
        let d = g.domain.index();
        total[d] += 1;
        hits[d] += usize::from(usize::from(p[1] > p[0]) == d);
    }
    if total.contains(&0) {
        return Err(Error::Dataset("held-out set needs both domains".into()));
    }
    Ok((hits[0] as f64 / total[0] as f64 + hits[1] as f64 / total[1] as f64) / 2.0)
}

fn first_last(
    p: &PhaseResult,
    f: impl Fn(&crate::training::EpochLog) -> Option<f64>,
) -> (f64, f64) {
    let first = p.epochs.first().and_then(&f).unwrap_or(f64::NAN);
    let last = p.epochs.last().and_then(&f).unwrap_or(f64::NAN);
    (first, last)
}

/// Run the whole benchmark for one seed.
///
/// * SS: f_student trained on target frame labels (the clean run of the noise
///   curve).
/// * WS: w_student trained on target clip labels only.
/// * MS: source training with adversarial alignment, distillation into
///   w_student, target retraining of both students and the two-student loop.
/// * The no-distillation w_student is trained on target clip labels with
///   adversarial alignment only.
pub fn run_benchmark(cfg: &BenchmarkConfig) -> Result<BenchmarkOutcome> {
    let start = Instant::now();
    let tc = &cfg.train;
    let seed = tc.seed;
    let ds = build_toy_dataset(&cfg.dataset)?;
    let refs = ds.reference_features()?;
    let samples = ds.samples()?;
    let manifest_sha256 = manifest_hash(&samples)?;

    let cond: ConditionalNet = train_conditional(
        &ds.source_catalog,
        &refs,
        &cfg.conditional,
        cfg.conditional_epochs,
        derive_seed(seed, &[0xC0]),
    )?;
    let cond_hash = cond.param_hash();
    let cond_acc = conditional_accuracy(&cond, &heldout_clips(&ds, cfg.heldout_clips_per_class)?)?;
    let emb = EmbeddingCache::build(&cond, &refs)?;
    let (cos_same, cos_other) = cosine_stats(&ds, &emb)?;

    let s_train = select(&samples, Domain::Source, Split::Train);
    let s_val = select(&samples, Domain::Source, Split::Val);
    let t_train = select(&samples, Domain::Target, Split::Train);
    let t_val = select(&samples, Domain::Target, Split::Val);
    let t_test = select(&samples, Domain::Target, Split::Test);
    let t_train_weak = weak(&t_train);
    let heldout: Vec<TsdSample> = select(&samples, Domain::Source, Split::Test)
        .into_iter()
        .chain(t_test.iter().cloned())
        .collect();
    let test = |l: &Learner| -> Result<Scores> {
        Ok(Scores::from(&evaluate_student(
            &l.model, &t_test, &emb, &tc.eval,
        )?))
    };

    // Strong supervision and label noise.
    let strong = PhaseData {
        train: &t_train,
        val: &t_val,
        other_domain: &[],
        embeddings: &emb,
    };
    let (noise, _) =
        noise_robustness_experiment(&cfg.student, &strong, &t_test, &cfg.noise_rates, tc)?;
    let ss = noise
        .iter()
        .find(|r| r.error_rate == 0.0)
        .map(|r| Scores {
            event_f: r.event_f,
            segment_f: r.segment_f,
        })
        .ok_or_else(|| Error::InvalidInput("noise rates must include 0".into()))?;

    // Weak supervision, with and without adversarial alignment.
    let weak_target = PhaseData {
        train: &t_train_weak,
        val: &t_val,
        other_domain: &s_train,
        embeddings: &emb,
    };
    let w_cfg = cfg.student.with_pooling_head(true);
    let mut ws = Learner::new(w_cfg.clone(), derive_seed(seed, &[0xB0]))?;
    let spec = |name: &str, adversarial| PhaseSpec {
        name: name.into(),
        objective: Objective::Weak { teacher: None },
        lr: tc.lr_initial,
        epochs: tc.epochs,
        adversarial,
    };
    run_phase(
        &mut ws,
        &spec("w_target_direct", false),
        &weak_target,
        tc,
        derive_seed(seed, &[0xB1]),
    )?;
    let ws_scores = test(&ws)?;
    let mut w_no_kd = Learner::new(w_cfg.clone(), derive_seed(seed, &[0xB0]))?;
    run_phase(
        &mut w_no_kd,
        &spec("w_target_direct_ad", true),
        &weak_target,
        tc,
        derive_seed(seed, &[0xB1]),
    )?;
    let w_no_kd_scores = test(&w_no_kd)?;

    // Mixed supervision.
    let source = PhaseData {
        train: &s_train,
        val: &s_val,
        other_domain: &t_train_weak,
        embeddings: &emb,
    };
    let mut f = Learner::new(cfg.student.clone(), derive_seed(seed, &[0xA0]))?;
    let mut plain = f.clone();
    let f_src = train_f_on_source(&mut f, &source, tc)?;
    let (source_loss_first, source_loss_last) = first_last(&f_src, |e| Some(e.task_loss));
    let f_zero_shot = test(&f)?;
    let disc_accuracy_reversal = disc_accuracy(&f, &heldout)?;
    let no_rev = TrainConfig {
        lambda_d: 0.0,
        ..tc.clone()
    };
    train_f_on_source(&mut plain, &source, &no_rev)?;
    let disc_accuracy_no_reversal = disc_accuracy(&plain, &heldout)?;
    drop(plain);

    let mut w = Learner::new(w_cfg, derive_seed(seed, &[0xA1]))?;
    let w_src = train_w_on_source_with_kd(&mut w, &f, &source, tc)?;
    let (kd_loss_first, kd_loss_last) = first_last(&w_src, |e| e.kd_loss);

    let target = PhaseData {
        train: &t_train,
        val: &t_val,
        other_domain: &s_train,
        embeddings: &emb,
    };
    retrain_w_on_target(&mut w, None, &target, tc, tc.adversarial, 0)?;
    let w_kd = test(&w)?;
    let pseudo = generate_pseudo_labels(&w.model, &t_train_weak, &emb)?;
    let pseudo_error_rate = mean_pseudo_error_rate(&pseudo, &t_train, 0.5)?;
    retrain_f_on_pseudo(&mut f, &pseudo, &target, tc, tc.adversarial, 0)?;
    let f_after_pseudo = test(&f)?;

    let mut loop_f_event = Vec::new();
    let loop_log = iterate_two_students(&mut f, &mut w, &target, tc, |_, f, _| {
        loop_f_event.push(test(f)?.event_f);
        Ok(())
    })?;
    let ms_f = test(&f)?;
    let ms_w = test(&w)?;

    Ok(BenchmarkOutcome {
        seed,
        manifest_sha256,
        n_samples: samples.len(),
        conditional_accuracy: cond_acc,
        conditional_hash_unchanged: cond.param_hash() == cond_hash && emb.net_hash == cond_hash,
        target_cosine_same: cos_same,
        target_cosine_other: cos_other,
        ss,
        ws: ws_scores,
        ms_f,
        ms_w,
        f_zero_shot,
        f_after_pseudo,
        w_no_kd: w_no_kd_scores,
        w_kd,
        pseudo_error_rate,
        noise,
        loop_f_event,
        loop_log,
        disc_accuracy_reversal,
        disc_accuracy_no_reversal,
        source_loss_first,
        source_loss_last,
        kd_loss_first,
        kd_loss_last,
        seconds: start.elapsed().as_secs_f64(),
    })
}
