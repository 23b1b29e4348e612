use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use serde::Serialize;
use serde_json::{json, Value};
use tsd_core::dataset::{
    build_toy_dataset, derive_seed, load_samples, read_manifest, Split, TsdSample,
};
use tsd_core::evaluation::EvalConfig;
use tsd_core::models::{read_checkpoint_header, ConditionalNet, EmbeddingCache};
use tsd_core::training::{
    evaluate_student, generate_pseudo_labels, iterate_two_students, noise_robustness_experiment,
    retrain_f_on_pseudo, retrain_w_on_target, train_f_on_source, train_w_on_source_with_kd,
    write_iterations_csv, write_noise_curve_csv, IterationLog, Learner, NoiseRow, PhaseData,
    PhaseResult, PseudoLabels,
};

use crate::config::{to_flat_json, RunConfig};
use crate::error::{CliError, CliResult};
use crate::run::{
    embeddings, pick, read_classes, references, Data, Run, CONDITIONAL_FILE, PSEUDO_FILE,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Phase {
    #[value(name = "f_source")]
    FSource,
    #[value(name = "w_source_kd")]
    WSourceKd,
    #[value(name = "w_target")]
    WTarget,
    #[value(name = "f_pseudo")]
    FPseudo,
}

impl Phase {
    /// Checkpoint stem written by the phase.
    pub fn stem(self) -> &'static str {
        match self {
            Phase::FSource => "f_source",
            Phase::WSourceKd => "w_source_kd",
            Phase::WTarget => "w_target",
            Phase::FPseudo => "f_pseudo",
        }
    }

    /// Config key holding the phase's epoch count.
    pub fn epochs_key(self) -> &'static str {
        match self {
            Phase::FSource | Phase::WSourceKd => "train.epochs",
            Phase::WTarget | Phase::FPseudo => "train.retrain_epochs",
        }
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct SplitCounts {
    pub mixtures: usize,
    pub samples: usize,
    pub positives: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct DatasetSummary {
    pub out: PathBuf,
    pub source_classes: BTreeSet<String>,
    pub target_classes: BTreeSet<String>,
    pub n_samples: usize,
    /// Keyed by `domain/split`.
    pub splits: BTreeMap<String, SplitCounts>,
    /// Positive samples per class and split.
    pub positives_per_class: BTreeMap<String, BTreeMap<String, usize>>,
}

/// Render the toy corpus, write the manifests and a config snapshot whose
/// data paths point at `out`.
pub fn build_dataset(cfg: &RunConfig, out: &Path) -> CliResult<DatasetSummary> {
    let ds = build_toy_dataset(&cfg.dataset)?;
    std::fs::create_dir_all(out)?;
    let mut snapshot = cfg.clone();
    snapshot.data.dir = std::fs::canonicalize(out)?;
    std::fs::write(out.join("config.json"), to_flat_json(&snapshot))?;
    let written = ds.write(out)?;
    let mut splits: BTreeMap<String, SplitCounts> = BTreeMap::new();
    let mut per_class: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
    let mut seen = BTreeSet::new();
    for path in [&written.source_manifest, &written.target_manifest] {
        for e in read_manifest(path)? {
            let key = format!("{}/{}", e.domain, e.split);
            let c = splits.entry(key).or_default();
            c.samples += 1;
            if seen.insert(e.mixture_path.clone()) {
                c.mixtures += 1;
            }
            if e.clip_label == 1 {
                c.positives += 1;
                *per_class
                    .entry(e.target_class.clone())
                    .or_default()
                    .entry(e.split.to_string())
                    .or_default() += 1;
            }
        }
    }
    Ok(DatasetSummary {
        out: out.to_path_buf(),
        source_classes: ds.source_classes().clone(),
        target_classes: ds.target_classes().clone(),
        n_samples: written.n_samples,
        splits,
        positives_per_class: per_class,
    })
}

fn prerequisites(run: &Run, phase: Phase) -> CliResult<()> {
    match phase {
        Phase::FSource => Ok(()),
        Phase::WSourceKd => run.require_checkpoint("f_source"),
        Phase::WTarget => run.require_checkpoint("w_source_kd"),
        Phase::FPseudo => {
            run.require_checkpoint("f_source")?;
            run.require(PSEUDO_FILE).map(|_| ())
        }
    }
}

/// Run one training step of the pipeline and checkpoint its student.
pub fn train(run: &Run, phase: Phase) -> CliResult<PhaseResult> {
    prerequisites(run, phase)?;
    let data = Data::load(&run.cfg)?;
    let emb = embeddings(run, &data)?;
    let tc = &run.cfg.train;
    let seed = tc.seed;
    let s_train = pick(&data.source, Split::Train);
    let s_val = pick(&data.source, Split::Val);
    let t_train = pick(&data.target, Split::Train);
    let t_val = pick(data.target_eval(), Split::Val);
    let source = PhaseData {
        train: &s_train,
        val: &s_val,
        other_domain: &t_train,
        embeddings: &emb,
    };
    let target = PhaseData {
        train: &t_train,
        val: &t_val,
        other_domain: &s_train,
        embeddings: &emb,
    };
    let dir = &run.dir;
    let (learner, result) = match phase {
        Phase::FSource => {
            let mut f = Learner::new(run.cfg.student.clone(), derive_seed(seed, &[0xA0]))?;
            let r = train_f_on_source(&mut f, &source, tc)?;
            (f, r)
        }
        Phase::WSourceKd => {
            let teacher = Learner::load(dir, "f_source")?;
            let mut w = Learner::new(
                run.cfg.student.with_pooling_head(true),
                derive_seed(seed, &[0xA1]),
            )?;
            let r = train_w_on_source_with_kd(&mut w, &teacher, &source, tc)?;
            (w, r)
        }
        Phase::WTarget => {
            let mut w = Learner::load(dir, "w_source_kd")?;
            let r = retrain_w_on_target(&mut w, None, &target, tc, tc.adversarial, 0)?;
            let pseudo = generate_pseudo_labels(&w.model, &t_train, &emb)?;
            std::fs::write(dir.join(PSEUDO_FILE), serde_json::to_string(&pseudo)?)?;
            (w, r)
        }
        Phase::FPseudo => {
            let mut f = Learner::load(dir, "f_source")?;
            let pseudo: PseudoLabels =
                serde_json::from_str(&std::fs::read_to_string(dir.join(PSEUDO_FILE))?)?;
            let r = retrain_f_on_pseudo(&mut f, &pseudo, &target, tc, tc.adversarial, 0)?;
            (f, r)
        }
    };
    learner.save(dir, phase.stem())?;
    run.record(std::slice::from_ref(&result))?;
    Ok(result)
}

/// The two-student loop from the w_target and f_pseudo checkpoints; the
/// returned pair is saved as `f_final` and `w_final`.
pub fn iterate(run: &Run) -> CliResult<IterationLog> {
    run.require_checkpoint("f_pseudo")?;
    run.require_checkpoint("w_target")?;
    let data = Data::load(&run.cfg)?;
    let emb = embeddings(run, &data)?;
    let t_train = pick(&data.target, Split::Train);
    let t_val = pick(data.target_eval(), Split::Val);
    let s_train = pick(&data.source, Split::Train);
    let target = PhaseData {
        train: &t_train,
        val: &t_val,
        other_domain: &s_train,
        embeddings: &emb,
    };
    let mut f = Learner::load(&run.dir, "f_pseudo")?;
    let mut w = Learner::load(&run.dir, "w_target")?;
    let log = iterate_two_students(&mut f, &mut w, &target, &run.cfg.train, |_, _, _| Ok(()))?;
    f.save(&run.dir, "f_final")?;
    w.save(&run.dir, "w_final")?;
    write_iterations_csv(&run.dir.join("iterations.csv"), &log)?;
    run.record(&log.phases)?;
    Ok(log)
}

#[derive(Debug, Clone)]
pub struct EvalArgs {
    pub model: String,
    pub manifest: Option<PathBuf>,
    pub split: Split,
    pub eval: EvalConfig,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalOutcome {
    pub out: PathBuf,
    pub macro_segment_f: f64,
    pub macro_event_f: f64,
    #[serde(skip)]
    pub csv: String,
}

/// Score a checkpoint of the run on one split of a manifest. Only files of
/// the run directory and the manifest are read.
pub fn evaluate(run: &Run, args: &EvalArgs) -> CliResult<EvalOutcome> {
    run.require_checkpoint(&args.model)?;
    let cond_path = run.require(CONDITIONAL_FILE)?;
    let known = read_classes(run)?.all();
    args.eval.validate()?;
    let manifest = match &args.manifest {
        Some(p) => p.clone(),
        None => {
            let strong = run.cfg.data.dir.join(&run.cfg.data.target_strong_manifest);
            if strong.exists() {
                strong
            } else {
                run.cfg.data.dir.join(&run.cfg.data.target_manifest)
            }
        }
    };
    let entries: Vec<_> = read_manifest(&manifest)?
        .into_iter()
        .filter(|e| e.split == args.split)
        .collect();
    if entries.is_empty() {
        return Err(CliError::Data(format!(
            "{} has no {} samples",
            manifest.display(),
            args.split
        )));
    }
    let unknown: BTreeSet<&String> = entries
        .iter()
        .map(|e| &e.target_class)
        .filter(|c| !known.contains(*c))
        .collect();
    if !unknown.is_empty() {
        return Err(CliError::Data(format!(
            "class mismatch: {unknown:?} are not classes of this run"
        )));
    }
    let base = manifest.parent().unwrap_or(Path::new("."));
    let samples: Vec<TsdSample> = load_samples(&entries, base)?;
    let net = ConditionalNet::load(&cond_path)?;
    let emb = EmbeddingCache::build(&net, &references(&samples))?;
    let learner = Learner::load(&run.dir, &args.model)?;
    let report = evaluate_student(&learner.model, &samples, &emb, &args.eval)?;
    let csv = report.to_csv(&args.eval);
    let out = args.out.clone().unwrap_or_else(|| {
        run.dir
            .join(format!("eval_{}_{}.csv", args.model, args.split))
    });
    if let Some(parent) = out.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(&out, &csv)?;
    Ok(EvalOutcome {
        out,
        macro_segment_f: report.macro_segment_f,
        macro_event_f: report.macro_event_f,
        csv,
    })
}

/// f_student trained on corrupted target frame labels, one row per rate.
pub fn noise_exp(run: &Run, rates: &[f64]) -> CliResult<Vec<NoiseRow>> {
    if rates.is_empty() {
        return Err(CliError::Config("no error rates given".into()));
    }
    let data = Data::load(&run.cfg)?;
    if data.target_strong.is_empty() {
        return Err(CliError::Data(
            "the noise experiment needs the strongly labelled target manifest".into(),
        ));
    }
    let emb = embeddings(run, &data)?;
    let train = pick(&data.target_strong, Split::Train);
    let val = pick(&data.target_strong, Split::Val);
    let test = pick(&data.target_strong, Split::Test);
    let strong = PhaseData {
        train: &train,
        val: &val,
        other_domain: &[],
        embeddings: &emb,
    };
    let (rows, phases) =
        noise_robustness_experiment(&run.cfg.student, &strong, &test, rates, &run.cfg.train)?;
    write_noise_curve_csv(&run.dir.join("noise_curve.csv"), &rows)?;
    std::fs::write(
        run.dir.join("noise_curve.json"),
        serde_json::to_string_pretty(&rows)? + "\n",
    )?;
    run.record(&phases)?;
    Ok(rows)
}

/// Summary of what a run directory holds.
pub fn report(run: &Run) -> CliResult<Value> {
    let mut checkpoints = BTreeMap::new();
    let mut evals = Vec::new();
    let mut names: Vec<String> = std::fs::read_dir(&run.dir)?
        .filter_map(|e| e.ok().map(|e| e.file_name().to_string_lossy().into_owned()))
        .collect();
    names.sort();
    for name in &names {
        if let Some(stem) = name.strip_suffix(".ckpt").filter(|s| !s.ends_with(".disc")) {
            let h = read_checkpoint_header(&run.dir.join(name))?;
            checkpoints.insert(
                stem.to_string(),
                json!({ "kind": h.kind, "param_hash": h.param_hash, "history": h.config.get("history") }),
            );
        }
        if name.starts_with("eval_") && name.ends_with(".csv") {
            let text = std::fs::read_to_string(run.dir.join(name))?;
            let macro_row = text.lines().find(|l| l.starts_with("macro,")).unwrap_or("");
            let cols: Vec<&str> = macro_row.split(',').collect();
            evals.push(json!({
                "file": name,
                "macro_segment_f": cols.get(1).and_then(|v| v.parse::<f64>().ok()),
                "macro_event_f": cols.get(4).and_then(|v| v.parse::<f64>().ok()),
            }));
        }
    }
    let phases: Vec<Value> = run
        .phases()?
        .iter()
        .map(|p| {
            json!({
                "phase": p.phase,
                "epochs": p.epochs.len(),
                "best_epoch": p.best_epoch,
                "validation": p.validation,
            })
        })
        .collect();
    let iterations = std::fs::read_to_string(run.dir.join("iterations.csv")).ok();
    let noise: Option<Value> = std::fs::read_to_string(run.dir.join("noise_curve.json"))
        .ok()
        .and_then(|t| serde_json::from_str(&t).ok());
    Ok(json!({
        "run": run.dir,
        "seed": run.cfg.train.seed,
        "checkpoints": checkpoints,
        "phases": phases,
        "iterations_csv": iterations,
        "noise_curve": noise,
        "evaluations": evals,
    }))
}

pub fn parse_split(s: &str) -> Result<Split, String> {
    serde_json::from_value(Value::String(s.to_string())).map_err(|_| format!("unknown split {s:?}"))
}
