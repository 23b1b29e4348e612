use std::fmt::Write as _;
use std::path::Path;

use super::iterate::IterationLog;
use super::noise::NoiseRow;
use super::phase::PhaseResult;
use crate::error::{Error, Result};

/// Environment variable naming the directory under which runs are created.
pub const RUN_ROOT_ENV: &str = "TSD_RUN_ROOT";

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

fn write(path: &Path, body: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

/// Per-epoch curves of every phase. The domain-loss and discriminator
/// columns appear only when some phase trained adversarially.
pub fn metrics_csv(phases: &[PhaseResult]) -> String {
    let adv = phases.iter().any(|p| p.adversarial);
    let mut s = String::from("phase,epoch,objective,task_loss,kd_loss,");
    if adv {
        s.push_str("domain_loss,disc_accuracy,");
    }
    s.push_str("val_metric,val_event_f,val_segment_f,val_clip_accuracy\n");
    for p in phases {
        for e in &p.epochs {
            let _ = write!(
                s,
                "{},{},{:.6},{:.6},{},",
                e.phase,
                e.epoch,
                e.objective,
                e.task_loss,
                opt(e.kd_loss)
            );
            if adv {
                let _ = write!(s, "{},{},", opt(e.domain_loss), opt(e.disc_accuracy));
            }
            let _ = writeln!(
                s,
                "{:.6},{},{},{:.6}",
                e.val.metric,
                opt(e.val.event_f),
                opt(e.val.segment_f),
                e.val.clip_accuracy
            );
        }
    }
    s
}

pub fn write_metrics_csv(path: &Path, phases: &[PhaseResult]) -> Result<()> {
    write(path, &metrics_csv(phases))
}

/// One row per student per iteration, then a `# stopped: <reason>` line.
pub fn iterations_csv(log: &IterationLog) -> String {
    let mut s = String::from("iteration,model,segment_f,event_f,clip_accuracy\n");
    for r in &log.rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{:.6}",
            r.iteration,
            r.model,
            opt(r.score.segment_f),
            opt(r.score.event_f),
            r.score.clip_accuracy
        );
    }
    let _ = writeln!(s, "# stopped: {}", log.stopped);
    s
}

pub fn write_iterations_csv(path: &Path, log: &IterationLog) -> Result<()> {
    write(path, &iterations_csv(log))
}

pub fn noise_curve_csv(rows: &[NoiseRow]) -> String {
    let mut s = String::from("error_rate,event_f,segment_f\n");
    for r in rows {
        let _ = writeln!(s, "{},{:.6},{:.6}", r.error_rate, r.event_f, r.segment_f);
    }
    s
}

pub fn write_noise_curve_csv(path: &Path, rows: &[NoiseRow]) -> Result<()> {
    write(path, &noise_curve_csv(rows))
}
