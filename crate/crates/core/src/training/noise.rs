use serde::{Deserialize, Serialize};

use super::eval::evaluate_student;
use super::phase::{run_phase, Learner, Objective, PhaseData, PhaseResult, PhaseSpec};
use super::TrainConfig;
use crate::dataset::{corrupt_labels, derive_seed, TsdSample};
use crate::error::{Error, Result};
use crate::models::StudentConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseRow {
    pub error_rate: f64,
    pub event_f: f64,
    pub segment_f: f64,
}

fn corrupted(samples: &[TsdSample], rate: f64, seed: u64) -> Result<Vec<TsdSample>> {
    if rate == 0.0 {
        return Ok(samples.to_vec());
    }
    samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let labels = s
                .frame_labels()
                .ok_or_else(|| Error::Dataset(format!("{} has no frame labels", s.mixture_id)))?;
            let noisy = corrupt_labels(labels, rate, derive_seed(seed, &[i as u64]))?;
            s.with_frame_labels(noisy)
        })
        .collect()
}

/// For every rate, train a fresh f_student (same initialisation each time)
/// on training labels corrupted at that rate and score it on the clean `test`
/// labels. Model selection uses the clean validation labels.
pub fn noise_robustness_experiment(
    template: &StudentConfig,
    data: &PhaseData,
    test: &[TsdSample],
    rates: &[f64],
    cfg: &TrainConfig,
) -> Result<(Vec<NoiseRow>, Vec<PhaseResult>)> {
    if rates.is_empty() {
        return Err(Error::InvalidInput("no error rates given".into()));
    }
    if let Some(r) = rates.iter().find(|r| !(0.0..=1.0).contains(*r)) {
        return Err(Error::InvalidInput(format!(
            "error rate {r} outside [0, 1]"
        )));
    }
    let mut rows = Vec::with_capacity(rates.len());
    let mut phases = Vec::with_capacity(rates.len());
    for &rate in rates {
        let noise_seed = derive_seed(cfg.seed, &[0x4015E, rate.to_bits()]);
        let train = corrupted(data.train, rate, derive_seed(noise_seed, &[0]))?;
        let mut f = Learner::new(template.clone(), cfg.seed)?;
        let spec = PhaseSpec {
            name: format!("f_noise_{rate}"),
            objective: Objective::Strong,
            lr: cfg.lr_initial,
            epochs: cfg.epochs,
            adversarial: false,
        };
        let phase_data = PhaseData {
            train: &train,
            ..*data
        };
        phases.push(run_phase(
            &mut f,
            &spec,
            &phase_data,
            cfg,
            derive_seed(cfg.seed, &[0xF1]),
        )?);
        let report = evaluate_student(&f.model, test, data.embeddings, &cfg.eval)?;
        rows.push(NoiseRow {
            error_rate: rate,
            event_f: report.macro_event_f,
            segment_f: report.macro_segment_f,
        });
    }
    Ok((rows, phases))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Domain, Split};
    use crate::training::testkit::{quick_config, tiny_student, world};

    #[test]
    fn clean_rate_matches_plain_training_and_rates_are_checked() {
        let w = world();
        let train = w.pick(Domain::Target, Split::Train);
        let val = w.pick(Domain::Target, Split::Val);
        let test = w.pick(Domain::Target, Split::Test);
        let data = PhaseData {
            train: &train,
            val: &val,
            other_domain: &[],
            embeddings: &w.emb,
        };
        let cfg = quick_config();
        let tpl = tiny_student(false);
        assert!(noise_robustness_experiment(&tpl, &data, &test, &[], &cfg).is_err());
        assert!(noise_robustness_experiment(&tpl, &data, &test, &[1.5], &cfg).is_err());
        let (rows, phases) =
            noise_robustness_experiment(&tpl, &data, &test, &[0.0, 0.5], &cfg).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(phases.len(), 2);

        let mut f = Learner::new(tpl, cfg.seed).unwrap();
        let clean = crate::training::train_f_on_source(
            &mut f,
            &data,
            &TrainConfig {
                adversarial: false,
                ..cfg.clone()
            },
        )
        .unwrap();
        let curve = |p: &PhaseResult| {
            p.epochs
                .iter()
                .map(|e| (e.objective, e.val.clone()))
                .collect::<Vec<_>>()
        };
        assert_eq!(curve(&clean), curve(&phases[0]));
        let r = evaluate_student(&f.model, &test, &w.emb, &cfg.eval).unwrap();
        assert_eq!(
            (rows[0].event_f, rows[0].segment_f),
            (r.macro_event_f, r.macro_segment_f)
        );
    }
}
