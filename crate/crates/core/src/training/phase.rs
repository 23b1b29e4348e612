use std::path::Path;

use ndarray::{Array2, Array3};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::{group_by_mixture, MixtureGroup};
use super::eval::{validation_score, ValScore};
use super::pseudo::{sample_key, PseudoLabels};
use super::TrainConfig;
use crate::dataset::{derive_seed, LockSuspension, TargetLabelLock, TsdSample};
use crate::error::{Error, Result};
use crate::losses::{clip_bce, domain_loss, frame_bce, kd_loss, pseudo_loss};
use crate::models::{
    linsoft_jacobian, load_checkpoint, read_checkpoint_header, save_checkpoint, Discriminator,
    DiscriminatorConfig, EmbeddingCache, HeadOutput, InputNorm, StudentConfig, StudentModel,
};
use crate::nn::{Adam, AdamConfig, Module};

/// A student together with its domain discriminator.
#[derive(Debug, Clone, PartialEq)]
pub struct Learner {
    pub model: StudentModel,
    pub disc: Discriminator,
    /// Names of the phases this learner has been trained in.
    pub history: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct LearnerMeta {
    model: StudentConfig,
    history: Vec<String>,
}

impl Learner {
    pub fn new(config: StudentConfig, seed: u64) -> Result<Self> {
        let disc_cfg = DiscriminatorConfig::for_channels(config.z_shape().1);
        Ok(Self {
            model: StudentModel::new(config, derive_seed(seed, &[0x57]))?,
            disc: Discriminator::new(disc_cfg, derive_seed(seed, &[0xD15C]))?,
            history: Vec::new(),
        })
    }

    pub fn is_trained(&self) -> bool {
        !self.history.is_empty()
    }

    /// Writes `<stem>.ckpt` (student) and `<stem>.disc.ckpt`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        let meta = LearnerMeta {
            model: self.model.config.clone(),
            history: self.history.clone(),
        };
        save_checkpoint(
            &dir.join(format!("{stem}.ckpt")),
            "student",
            serde_json::to_value(meta)?,
            &self.model,
        )?;
        save_checkpoint(
            &dir.join(format!("{stem}.disc.ckpt")),
            "discriminator",
            serde_json::to_value(&self.disc.config)?,
            &self.disc,
        )
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self> {
        let path = dir.join(format!("{stem}.ckpt"));
        let meta: LearnerMeta = serde_json::from_value(read_checkpoint_header(&path)?.config)?;
        let mut model = StudentModel::new(meta.model, 0)?;
        load_checkpoint(&path, &mut model)?;
        let dpath = dir.join(format!("{stem}.disc.ckpt"));
        let dcfg: DiscriminatorConfig =
            serde_json::from_value(read_checkpoint_header(&dpath)?.config)?;
        let mut disc = Discriminator::new(dcfg, 0)?;
        load_checkpoint(&dpath, &mut disc)?;
        Ok(Self {
            model,
            disc,
            history: meta.history,
        })
    }
}

/// Detection loss of a phase.
#[derive(Debug, Clone, Copy)]
pub enum Objective<'a> {
    /// Frame BCE against the samples' frame labels.
    Strong,
    /// Clip BCE on the pooled probability, plus feature distillation from a
    /// frozen teacher when given.
    Weak { teacher: Option<&'a StudentModel> },
    /// Soft-target BCE against w_student probabilities.
    Pseudo(&'a PseudoLabels),
}

#[derive(Debug, Clone)]
pub struct PhaseSpec<'a> {
    pub name: String,
    pub objective: Objective<'a>,
    pub lr: f64,
    pub epochs: usize,
    pub adversarial: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct PhaseData<'a> {
    pub train: &'a [TsdSample],
    pub val: &'a [TsdSample],
    /// Samples of the other domain; only their mixtures are used, for the
    /// domain loss.
    pub other_domain: &'a [TsdSample],
    pub embeddings: &'a EmbeddingCache,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub phase: String,
    pub epoch: usize,
    /// Mean per-sample `L_tsd - lambda_d * L_d`.
    pub objective: f64,
    /// Mean per-sample L_s, L_w or L_re_s.
    pub task_loss: f64,
    pub kd_loss: Option<f64>,
    pub domain_loss: Option<f64>,
    pub disc_accuracy: Option<f64>,
    pub val: ValScore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseResult {
    pub phase: String,
    pub lr: f64,
    pub adversarial: bool,
    pub epochs: Vec<EpochLog>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub validation: ValScore,
    pub model_hash: String,
}

struct Step {
    task: f64,
    kd: f64,
    d_probs: Vec<f64>,
    d_features: Option<Array2<f64>>,
    d_projection: Option<Array2<f64>>,
}

fn sample_step(
    objective: &Objective,
    model: &StudentModel,
    s: &TsdSample,
    out: &HeadOutput,
    teacher_features: Option<&Array2<f64>>,
) -> Result<Step> {
    match objective {
        Objective::Strong => {
            let labels = s
                .frame_labels()
                .ok_or_else(|| Error::Dataset(format!("{} lacks frame labels", s.mixture_id)))?;
            let l = frame_bce(&out.probs, &labels.as_f64())?;
            Ok(Step {
                task: l.value,
                kd: 0.0,
                d_probs: l.grad,
                d_features: None,
                d_projection: None,
            })
        }
        Objective::Pseudo(p) => {
            let target = p.get(s)?;
            let l = pseudo_loss(&out.probs, target)?;
            Ok(Step {
                task: l.value,
                kd: 0.0,
                d_probs: l.grad,
                d_features: None,
                d_projection: None,
            })
        }
        Objective::Weak { teacher } => {
            let clip = out
                .clip_prob
                .ok_or_else(|| Error::InvalidInput("weak objective needs a pooling head".into()))?;
            let (task, d_clip) = clip_bce(clip, s.clip_label.value() as f64);
            let d_probs = linsoft_jacobian(&out.probs)
                .into_iter()
                .map(|j| j * d_clip)
                .collect();
            let (kd, d_features, d_projection) = match (teacher, teacher_features) {
                (Some(t), Some(ft)) => {
                    let k = kd_loss(
                        ft.view(),
                        t.kd_projection.value.view(),
                        out.features.view(),
                        model.kd_projection.value.view(),
                    )?;
                    (
                        k.value,
                        Some(k.d_student_features),
                        Some(k.d_student_projection),
                    )
                }
                _ => (0.0, None, None),
            };
            Ok(Step {
                task,
                kd,
                d_probs,
                d_features,
                d_projection,
            })
        }
    }
}

#[derive(Default)]
struct EpochSums {
    task: f64,
    kd: f64,
    n_samples: usize,
    domain: f64,
    disc_hits: usize,
    n_domain: usize,
}

/// Domain loss on one mixture's `z`: the discriminator accumulates the
/// gradient of `weight * L_d`; returns `L_d`, whether it was classified
/// correctly and `dL_d/dz` (unweighted by lambda).
fn domain_step(
    disc: &mut Discriminator,
    z: &Array3<f64>,
    group: &MixtureGroup,
    weight: f64,
) -> Result<(f64, bool, Array3<f64>)> {
    let (pred, cache) = disc.forward(z)?;
    let (ld, g) = domain_loss(pred, group.domain);
    let hit = (pred[1] > pred[0]) == (group.domain.index() == 1);
    let dz = disc
        .backward(&cache, [g[0] * weight, g[1] * weight], true)
        .expect("input gradient requested");
    Ok((ld, hit, dz))
}

#[allow(clippy::too_many_arguments)]
fn train_batch(
    learner: &mut Learner,
    spec: &PhaseSpec,
    data: &PhaseData,
    cfg: &TrainConfig,
    batch: &[&MixtureGroup],
    others: &[&MixtureGroup],
    sums: &mut EpochSums,
) -> Result<()> {
    let n_task: usize = batch.iter().map(|g| g.samples.len()).sum();
    let inv_b = 1.0 / n_task as f64;
    let n_dom = (batch.len() + others.len()) as f64;
    let teacher = match spec.objective {
        Objective::Weak { teacher } => teacher,
        _ => None,
    };
    for g in batch {
        let (z, cc) = learner.model.conv_forward(&g.mixture)?;
        let tz = match teacher {
            Some(t) => Some(t.conv_forward(&g.mixture)?.0),
            None => None,
        };
        let mut dz = Array3::zeros(z.raw_dim());
        for &i in &g.samples {
            let s = &data.train[i];
            let e = data.embeddings.get(&s.reference_id)?;
            let (out, hc) = learner.model.head_forward(&z, e)?;
            let tf = match (teacher, &tz) {
                (Some(t), Some(tz)) => Some(t.head_forward(tz, e)?.0.features),
                _ => None,
            };
            let mut st = sample_step(&spec.objective, &learner.model, s, &out, tf.as_ref())?;
            sums.task += st.task;
            sums.kd += st.kd;
            sums.n_samples += 1;
            st.d_probs.iter_mut().for_each(|v| *v *= inv_b);
            if let Some(df) = st.d_features.as_mut() {
                *df *= inv_b;
            }
            if let Some(dp) = st.d_projection {
                learner.model.kd_projection.grad.scaled_add(inv_b, &dp);
            }
            dz += &learner
                .model
                .head_backward(&hc, Some(&st.d_probs), st.d_features.as_ref());
        }
        if spec.adversarial {
            let (ld, hit, dz_d) = domain_step(&mut learner.disc, &z, g, 1.0 / n_dom)?;
            sums.domain += ld;
            sums.disc_hits += usize::from(hit);
            sums.n_domain += 1;
            dz.scaled_add(-cfg.lambda_d, &dz_d);
        }
        learner.model.conv_backward(&cc, &dz);
    }
    for g in others {
        let (z, cc) = learner.model.conv_forward(&g.mixture)?;
        let (ld, hit, dz_d) = domain_step(&mut learner.disc, &z, g, 1.0 / n_dom)?;
        sums.domain += ld;
        sums.disc_hits += usize::from(hit);
        sums.n_domain += 1;
        learner.model.conv_backward(&cc, &(dz_d * -cfg.lambda_d));
    }
    Ok(())
}

/// Zero all gradients, then accumulate the gradients of one training step
/// on `batch` (task mixtures) and `others` (other-domain mixtures, used only
/// with `spec.adversarial`). Parameters are left untouched.
pub fn batch_gradients(
    learner: &mut Learner,
    spec: &PhaseSpec,
    data: &PhaseData,
    cfg: &TrainConfig,
    batch: &[&MixtureGroup],
    others: &[&MixtureGroup],
) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    learner.model.zero_grad();
    learner.disc.zero_grad();
    train_batch(
        learner,
        spec,
        data,
        cfg,
        batch,
        others,
        &mut EpochSums::default(),
    )
}

fn check_prerequisites(learner: &Learner, spec: &PhaseSpec, data: &PhaseData) -> Result<()> {
    if data.train.is_empty() {
        return Err(Error::Dataset(format!(
            "{}: no training samples",
            spec.name
        )));
    }
    if data.val.is_empty() {
        return Err(Error::Dataset(format!(
            "{}: no validation samples",
            spec.name
        )));
    }
    if spec.epochs == 0 || !(spec.lr > 0.0) {
        return Err(Error::InvalidInput(format!(
            "{}: epochs and lr must be positive",
            spec.name
        )));
    }
    if spec.adversarial && data.other_domain.is_empty() {
        return Err(Error::Dataset(format!(
            "{}: adversarial training needs other-domain samples",
            spec.name
        )));
    }
    match spec.objective {
        Objective::Strong => {
            if let Some(s) = data.train.iter().find(|s| !s.has_strong_labels()) {
                return Err(Error::Dataset(format!(
                    "{}: sample {} has no frame labels",
                    spec.name, s.mixture_id
                )));
            }
        }
        Objective::Weak { teacher } => {
            if !learner.model.config.has_pooling_head {
                return Err(Error::InvalidInput(format!(
                    "{}: model has no pooling head",
                    spec.name
                )));
            }
            if let Some(t) = teacher {
                if t.config.feature_dim() != learner.model.config.feature_dim()
                    || t.config.kd_dim != learner.model.config.kd_dim
                {
                    return Err(Error::Shape(format!(
                        "{}: teacher and student sizes differ",
                        spec.name
                    )));
                }
            }
        }
        Objective::Pseudo(p) => {
            if let Some(s) = data.train.iter().find(|s| !p.contains(s)) {
                return Err(Error::MissingPrerequisite(format!(
                    "{}: no pseudo labels for {}",
                    spec.name,
                    sample_key(s)
                )));
            }
        }
    }
    Ok(())
}

/// Train for `spec.epochs` epochs and keep the parameters of the epoch with
/// the best validation score.
///
/// With `spec.adversarial`, every batch also draws as many other-domain
/// mixtures as it holds task mixtures. The discriminator descends on the
/// mean domain loss over all of them, while the conv stack descends on
/// `L_tsd - lambda_d * L_d`.
pub fn run_phase(
    learner: &mut Learner,
    spec: &PhaseSpec,
    data: &PhaseData,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<PhaseResult> {
    cfg.validate()?;
    check_prerequisites(learner, spec, data)?;
    let groups = group_by_mixture(data.train);
    let other_groups = group_by_mixture(data.other_domain);
    if !learner.is_trained() {
        let seen = groups.iter().chain(if spec.adversarial {
            &other_groups[..]
        } else {
            &[]
        });
        learner.model.config.input_norm = InputNorm::fit(seen.map(|g| &g.mixture.values));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut opt_model = Adam::new(AdamConfig::with_lr(spec.lr));
    let mut opt_disc = Adam::new(AdamConfig::with_lr(spec.lr));
    learner.model.zero_grad();
    learner.disc.zero_grad();
    let mut order: Vec<usize> = (0..groups.len()).collect();
    let mut logs = Vec::with_capacity(spec.epochs);
    let mut best: Option<(Learner, ValScore, usize)> = None;
    for epoch in 1..=spec.epochs {
        order.shuffle(&mut rng);
        let mut sums = EpochSums::default();
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&MixtureGroup> = chunk.iter().map(|&i| &groups[i]).collect();
            let others: Vec<&MixtureGroup> = if spec.adversarial {
                (0..batch.len())
                    .map(|_| other_groups.choose(&mut rng).expect("non-empty"))
                    .collect()
            } else {
                Vec::new()
            };
            train_batch(learner, spec, data, cfg, &batch, &others, &mut sums)?;
            opt_model.step(&mut learner.model);
            if spec.adversarial {
                opt_disc.step(&mut learner.disc);
            }
        }
        let n = sums.n_samples.max(1) as f64;
        let task = sums.task / n;
        let kd =
            matches!(spec.objective, Objective::Weak { teacher: Some(_) }).then_some(sums.kd / n);
        let (domain, acc) = if spec.adversarial {
            let m = sums.n_domain.max(1) as f64;
            (Some(sums.domain / m), Some(sums.disc_hits as f64 / m))
        } else {
            (None, None)
        };
        let objective = task + kd.unwrap_or(0.0) - cfg.lambda_d * domain.unwrap_or(0.0);
        if !objective.is_finite() {
            return Err(Error::InvalidInput(format!(
                "{}: loss diverged in epoch {epoch}",
                spec.name
            )));
        }
        let val = {
            let _open = LockSuspension::begin();
            validation_score(&learner.model, data.val, data.embeddings, cfg)?
        };
        if best.as_ref().is_none_or(|b| val.metric > b.1.metric) {
            best = Some((learner.clone(), val.clone(), epoch));
        }
        logs.push(EpochLog {
            phase: spec.name.clone(),
            epoch,
            objective,
            task_loss: task,
            kd_loss: kd,
            domain_loss: domain,
            disc_accuracy: acc,
            val,
        });
    }
    let (kept, validation, best_epoch) = best.expect("at least one epoch");
    *learner = kept;
    learner.history.push(spec.name.clone());
    Ok(PhaseResult {
        phase: spec.name.clone(),
        lr: spec.lr,
        adversarial: spec.adversarial,
        epochs: logs,
        best_epoch,
        validation,
        model_hash: learner.model.param_hash(),
    })
}

fn weak_copies(samples: &[TsdSample]) -> Vec<TsdSample> {
    samples.iter().map(TsdSample::weak_only).collect()
}

/// Step 1: f_student on strongly labelled source data.
pub fn train_f_on_source(
    f: &mut Learner,
    data: &PhaseData,
    cfg: &TrainConfig,
) -> Result<PhaseResult> {
    let spec = PhaseSpec {
        name: "f_source".into(),
        objective: Objective::Strong,
        lr: cfg.lr_initial,
        epochs: cfg.epochs,
        adversarial: cfg.adversarial,
    };
    run_phase(f, &spec, data, cfg, derive_seed(cfg.seed, &[0xF1]))
}

/// Step 2: w_student on source clip labels, distilled from a trained and
/// frozen f_student.
pub fn train_w_on_source_with_kd(
    w: &mut Learner,
    teacher: &Learner,
    data: &PhaseData,
    cfg: &TrainConfig,
) -> Result<PhaseResult> {
    if !teacher.is_trained() {
        return Err(Error::MissingPrerequisite(
            "teacher f_student has not been trained".into(),
        ));
    }
    let spec = PhaseSpec {
        name: "w_source_kd".into(),
        objective: Objective::Weak {
            teacher: Some(&teacher.model),
        },
        lr: cfg.lr_initial,
        epochs: cfg.epochs,
        adversarial: cfg.adversarial,
    };
    run_phase(w, &spec, data, cfg, derive_seed(cfg.seed, &[0xF2]))
}

/// Step 3 (and the w half of every loop iteration): w_student retrained on
/// target clip labels at the retraining rate, with optional distillation.
/// Target frame labels are locked while training; model selection reads
/// whatever labels `data.val` carries.
pub fn retrain_w_on_target(
    w: &mut Learner,
    teacher: Option<&Learner>,
    data: &PhaseData,
    cfg: &TrainConfig,
    adversarial: bool,
    tag: u64,
) -> Result<PhaseResult> {
    let _lock = TargetLabelLock::acquire();
    if let Some(t) = teacher {
        if !t.is_trained() {
            return Err(Error::MissingPrerequisite(
                "teacher f_student has not been trained".into(),
            ));
        }
    }
    let train = weak_copies(data.train);
    let weak = PhaseData {
        train: &train,
        ..*data
    };
    let spec = PhaseSpec {
        name: if teacher.is_some() {
            "w_target_kd"
        } else {
            "w_target"
        }
        .into(),
        objective: Objective::Weak {
            teacher: teacher.map(|t| &t.model),
        },
        lr: cfg.lr_retrain,
        epochs: cfg.retrain_epochs,
        adversarial,
    };
    run_phase(w, &spec, &weak, cfg, derive_seed(cfg.seed, &[0xF3, tag]))
}

/// Step 4 (and the f half of every loop iteration): f_student retrained on
/// w_student pseudo labels at the retraining rate.
pub fn retrain_f_on_pseudo(
    f: &mut Learner,
    pseudo: &PseudoLabels,
    data: &PhaseData,
    cfg: &TrainConfig,
    adversarial: bool,
    tag: u64,
) -> Result<PhaseResult> {
    let _lock = TargetLabelLock::acquire();
    let train = weak_copies(data.train);
    let weak = PhaseData {
        train: &train,
        ..*data
    };
    let spec = PhaseSpec {
        name: "f_pseudo".into(),
        objective: Objective::Pseudo(pseudo),
        lr: cfg.lr_retrain,
        epochs: cfg.retrain_epochs,
        adversarial,
    };
    run_phase(f, &spec, &weak, cfg, derive_seed(cfg.seed, &[0xF4, tag]))
}
