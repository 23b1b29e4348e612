use serde::{Deserialize, Serialize};

use super::eval::{validation_score, ValScore};
use super::phase::{retrain_f_on_pseudo, retrain_w_on_target, Learner, PhaseData, PhaseResult};
use super::pseudo::generate_pseudo_labels;
use super::TrainConfig;
use crate::error::{Error, Result};

/// Data of the two-student loop. `train` and `val` are target samples; only
/// their clip labels are read. `val` may carry strong labels, which are then
/// used for the stopping metric.
pub type LoopData<'a> = PhaseData<'a>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRow {
    pub iteration: usize,
    pub model: String,
    pub score: ValScore,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    NoImprovement,
    MaxIterations,
}

impl std::fmt::Display for StopReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StopReason::NoImprovement => "no improvement",
            StopReason::MaxIterations => "max iterations",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    /// Row 0 holds the scores at loop entry.
    pub rows: Vec<IterationRow>,
    pub stopped: StopReason,
    pub iterations_run: usize,
    /// Iteration whose students were returned (0 = entry models).
    pub best_iteration: usize,
    pub phases: Vec<PhaseResult>,
}

/// Alternate w and f retraining on the target domain until the validation
/// metric of f_student stops improving by more than `cfg.improvement_tol`,
/// or after `cfg.max_iterations` rounds. Each round w_student learns from
/// clip labels with f_student as distillation teacher, then f_student learns
/// from w_student's soft pseudo labels. The pair with the best f_student
/// validation score is left in `f` and `w`.
///
/// `on_iteration` sees both students after every round.
pub fn iterate_two_students(
    f: &mut Learner,
    w: &mut Learner,
    data: &LoopData,
    cfg: &TrainConfig,
    mut on_iteration: impl FnMut(usize, &Learner, &Learner) -> Result<()>,
) -> Result<IterationLog> {
    cfg.validate()?;
    if cfg.max_iterations == 0 {
        return Err(Error::InvalidInput(
            "max_iterations must be at least 1".into(),
        ));
    }
    if !f.is_trained() || !w.is_trained() {
        return Err(Error::MissingPrerequisite(
            "both students must be trained before the loop".into(),
        ));
    }
    let score = |l: &Learner| validation_score(&l.model, data.val, data.embeddings, cfg);
    let mut rows = vec![
        IterationRow {
            iteration: 0,
            model: "w_student".into(),
            score: score(w)?,
        },
        IterationRow {
            iteration: 0,
            model: "f_student".into(),
            score: score(f)?,
        },
    ];
    let mut best_metric = rows[1].score.metric;
    let mut best = (f.clone(), w.clone(), 0);
    let mut phases = Vec::new();
    let mut stopped = StopReason::MaxIterations;
    let mut iterations_run = 0;
    for it in 1..=cfg.max_iterations {
        let tag = it as u64;
        phases.push(retrain_w_on_target(
            w,
            Some(f),
            data,
            cfg,
            cfg.adversarial_in_loop,
            tag,
        )?);
        let pseudo = generate_pseudo_labels(&w.model, data.train, data.embeddings)?;
        phases.push(retrain_f_on_pseudo(
            f,
            &pseudo,
            data,
            cfg,
            cfg.adversarial_in_loop,
            tag,
        )?);
        iterations_run = it;
        let (sw, sf) = (score(w)?, score(f)?);
        let metric = sf.metric;
        rows.push(IterationRow {
            iteration: it,
            model: "w_student".into(),
            score: sw,
        });
        rows.push(IterationRow {
            iteration: it,
            model: "f_student".into(),
            score: sf,
        });
        on_iteration(it, f, w)?;
        if metric > best_metric + cfg.improvement_tol {
            best_metric = metric;
            best = (f.clone(), w.clone(), it);
        } else {
            stopped = StopReason::NoImprovement;
            break;
        }
    }
    let (bf, bw, best_iteration) = best;
    *f = bf;
    *w = bw;
    Ok(IterationLog {
        rows,
        stopped,
        iterations_run,
        best_iteration,
        phases,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Domain, Split, TsdSample};
    use crate::training::testkit::{quick_config, tiny_student, world};
    use crate::training::{train_f_on_source, train_w_on_source_with_kd};

    fn trained_pair(cfg: &TrainConfig) -> (Learner, Learner) {
        let w = world();
        let train = w.pick(Domain::Source, Split::Train);
        let val = w.pick(Domain::Source, Split::Val);
        let data = PhaseData {
            train: &train,
            val: &val,
            other_domain: &[],
            embeddings: &w.emb,
        };
        let mut f = Learner::new(tiny_student(false), 1).unwrap();
        let mut s = Learner::new(tiny_student(true), 2).unwrap();
        train_f_on_source(&mut f, &data, cfg).unwrap();
        train_w_on_source_with_kd(&mut s, &f, &data, cfg).unwrap();
        (f, s)
    }

    fn run(
        cfg: &TrainConfig,
        f: &mut Learner,
        s: &mut Learner,
        val: &[TsdSample],
    ) -> (IterationLog, Vec<usize>) {
        let w = world();
        let train = w.pick(Domain::Target, Split::Train);
        let data = LoopData {
            train: &train,
            val,
            other_domain: &[],
            embeddings: &w.emb,
        };
        let mut seen = Vec::new();
        let log = iterate_two_students(f, s, &data, cfg, |i, _, _| {
            seen.push(i);
            Ok(())
        })
        .unwrap();
        (log, seen)
    }

    #[test]
    fn single_iteration_runs_one_pair() {
        let cfg = TrainConfig {
            adversarial: false,
            max_iterations: 1,
            ..quick_config()
        };
        let (mut f, mut s) = trained_pair(&cfg);
        let val = world().pick(Domain::Target, Split::Val);
        let (log, seen) = run(&cfg, &mut f, &mut s, &val);
        assert_eq!(seen, [1]);
        assert_eq!(log.iterations_run, 1);
        let names: Vec<&str> = log.phases.iter().map(|p| p.phase.as_str()).collect();
        assert_eq!(names, ["w_target_kd", "f_pseudo"]);
        assert_eq!(log.rows.len(), 4);
        assert!(log
            .rows
            .windows(2)
            .all(|r| r[0].iteration <= r[1].iteration));
        assert!(log.rows.iter().all(|r| r.score.event_f.is_some()));
        let best = &log.rows[2 * log.best_iteration + 1];
        assert_eq!(
            best.score,
            validation_score(&f.model, &val, &world().emb, &cfg).unwrap()
        );
    }

    #[test]
    fn loop_is_bounded_deterministic_and_requires_trained_students() {
        let cfg = TrainConfig {
            adversarial: false,
            max_iterations: 3,
            improvement_tol: 2.0,
            ..quick_config()
        };
        let (f0, s0) = trained_pair(&cfg);
        let val = world().pick(Domain::Target, Split::Val);
        let (mut f, mut s) = (f0.clone(), s0.clone());
        let (log, _) = run(&cfg, &mut f, &mut s, &val);
        assert_eq!(log.stopped, StopReason::NoImprovement);
        assert_eq!(log.iterations_run, 1);
        assert_eq!(log.best_iteration, 0);
        assert_eq!((&f, &s), (&f0, &s0));
        let (mut f2, mut s2) = (f0.clone(), s0.clone());
        assert_eq!(run(&cfg, &mut f2, &mut s2, &val).0, log);

        let w = world();
        let train = w.pick(Domain::Target, Split::Train);
        let data = LoopData {
            train: &train,
            val: &val,
            other_domain: &[],
            embeddings: &w.emb,
        };
        let mut fresh = Learner::new(tiny_student(false), 1).unwrap();
        let r = iterate_two_students(&mut fresh, &mut s2, &data, &cfg, |_, _, _| Ok(()));
        assert!(matches!(r, Err(Error::MissingPrerequisite(_))));
    }
}
