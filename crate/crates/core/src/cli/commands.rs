use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::info;
use serde::Serialize;
use sha2::{Digest, Sha256};

use super::config::{CliConfig, RunFlags};
use super::{Cli, Command, EvaluateArgs, PhenotypeArgs, ScalingArgs, SynthArgs, TrajectoryArgs};
use crate::error::{Error, Result};
use crate::export::{phenotype_table, subgroups, trajectories, write_csv};
use crate::model::{fit_score, Checkpoint};
use crate::tensor::{load_labels, load_tensor, save_labels, save_tensor, synth_generate, LabelTable, SynthSpec};
use crate::trainer::{
    predict_scores, project_slices, run_experiment, run_experiment_with, scaling_probe, EpochRecord, EvalReport, Mode,
    ScalingAxis, TaskScore,
};

/// Checkpoints are rewritten every this many epochs during `fit`.
pub const CHECKPOINT_EVERY: usize = 25;

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => synth(&a),
        Command::Fit(f) => fit(&f),
        Command::Evaluate(a) => evaluate(&a),
        Command::ExportPhenotypes(a) => export_phenotypes(&a),
        Command::ExportTrajectories(a) => export_trajectories(&a),
        Command::Scaling(a) => scaling(&a),
        Command::Compare(f) => compare(&f),
    }
}

/// SHA-256 over the tensor file bytes followed by the label file bytes.
pub fn input_hash(tensor: &Path, labels: Option<&Path>) -> Result<String> {
    let mut h = Sha256::new();
    h.update(fs::read(tensor)?);
    if let Some(l) = labels {
        h.update(fs::read(l)?);
    }
    Ok(hex::encode(h.finalize()))
}

fn file_hash(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn write_rows<T: Serialize>(rows: &[T], path: &Path) -> Result<()> {
    write_csv(rows, BufWriter::new(File::create(path)?))
}

#[derive(Serialize)]
struct Manifest<'a> {
    seed: u64,
    spec: &'a SynthSpec,
    files: BTreeMap<&'static str, String>,
}

fn synth(a: &SynthArgs) -> Result<()> {
    let spec = SynthSpec {
        k: a.k,
        j: a.j,
        r_true: a.rank,
        i_min: a.i_min,
        i_max: a.i_max,
        noise_sd: a.noise_sd,
        missing_rate: a.missing_rate,
        label_noise: a.label_noise,
        seed: a.seed,
        n_static: a.n_static,
        n_dynamic: a.n_dynamic,
    };
    let data = synth_generate(&spec)?;
    fs::create_dir_all(&a.out)?;
    let names = [("tensor", "tensor.jsonl"), ("labels", "labels.csv"), ("truth", "truth.json")];
    save_tensor(&data.tensor, a.out.join(names[0].1))?;
    save_labels(&data.labels, a.out.join(names[1].1))?;
    Checkpoint::from_model(&data.truth, data.tensor.slice_ids(), None)?.save(a.out.join(names[2].1))?;
    let mut files = BTreeMap::new();
    for (_, file) in names {
        files.insert(file, file_hash(&a.out.join(file))?);
    }
    write_json(&Manifest { seed: a.seed, spec: &spec, files }, &a.out.join("manifest.json"))
}

#[derive(Serialize)]
struct LogRow<'a> {
    epoch: usize,
    task: &'a str,
    loss: f64,
    weight: f64,
    fit: f64,
    wall_ms: u64,
}

fn log_rows(rec: &EpochRecord) -> Vec<LogRow<'_>> {
    rec.tasks
        .iter()
        .zip(rec.losses.iter().zip(&rec.weights))
        .map(|(task, (&loss, &weight))| LogRow {
            epoch: rec.epoch,
            task,
            loss,
            weight,
            fit: rec.fit,
            wall_ms: rec.wall_ms,
        })
        .collect()
}

#[derive(Serialize)]
struct Summary {
    mode: String,
    seed: u64,
    rank: usize,
    fit: f64,
    fit_test: f64,
    pr_auc: BTreeMap<String, Option<f64>>,
    convergence_epoch: usize,
    converged: bool,
    epochs_run: usize,
    n_train: usize,
    input_sha256: String,
}

fn needs_labels(mode: &Mode) -> bool {
    !matches!(mode, Mode::Unsupervised)
}

struct Inputs {
    tensor_path: PathBuf,
    labels_path: Option<PathBuf>,
    out: PathBuf,
}

/// Resolves paths and rejects a missing label file before any data is read.
fn inputs(c: &CliConfig, labels_required: bool) -> Result<Inputs> {
    let tensor_path = c
        .tensor
        .clone()
        .ok_or_else(|| Error::config("no tensor given (--tensor or \"tensor\" in the config)"))?;
    let out = c
        .out_dir
        .clone()
        .ok_or_else(|| Error::config("no output directory given (--out or \"out_dir\" in the config)"))?;
    if labels_required && c.labels.is_none() {
        return Err(Error::config(format!(
            "mode {} needs a label file (--labels or \"labels\" in the config)",
            c.train.mode.name()
        )));
    }
    Ok(Inputs {
        tensor_path,
        labels_path: c.labels.clone(),
        out,
    })
}

fn fit(flags: &RunFlags) -> Result<()> {
    let c = flags.resolve()?;
    let io = inputs(&c, needs_labels(&c.train.mode))?;
    let tensor = load_tensor(&io.tensor_path)?;
    let labels = io.labels_path.as_ref().map(|p| load_labels(p, &tensor)).transpose()?;
    fs::create_dir_all(&io.out)?;
    let hash = input_hash(&io.tensor_path, io.labels_path.as_deref())?;

    let ckpt_path = io.out.join("checkpoint.json");
    let mut log = csv::Writer::from_writer(BufWriter::new(File::create(io.out.join("train_log.csv"))?));
    let result = run_experiment_with(&tensor, labels.as_ref(), &c.train, c.train_fraction, c.train.seed, |st| {
        let rec = st.log.last().expect("called after an epoch");
        for row in log_rows(rec) {
            log.serialize(row)?;
        }
        log.flush()?;
        if st.epoch % CHECKPOINT_EVERY == 0 {
            st.checkpoint()?.save(&ckpt_path)?;
        }
        Ok(())
    });
    log.flush()?;
    let ex = match result {
        Ok(ex) => ex,
        Err(Error::Divergence { epoch, step, last_finite }) => {
            if let Some(cp) = &last_finite {
                cp.save(&ckpt_path)?;
            }
            return Err(Error::Divergence { epoch, step, last_finite });
        }
        Err(e) => return Err(e),
    };
    Checkpoint::from_model(&ex.fit.model, &ex.train_ids, Some(&ex.heads))?.save(&ckpt_path)?;
    let r = &ex.report;
    let summary = Summary {
        mode: c.train.mode.name().to_string(),
        seed: c.train.seed,
        rank: c.train.rank,
        fit: r.fit_train,
        fit_test: r.fit_test,
        pr_auc: r.pr_auc.iter().map(|(t, s)| (t.clone(), s.pr_auc)).collect(),
        convergence_epoch: r.convergence_epoch,
        converged: r.converged,
        epochs_run: ex.fit.epochs_run(),
        n_train: ex.train_ids.len(),
        input_sha256: hash,
    };
    info!("fit {:.4} (held-out {:.4})", summary.fit, summary.fit_test);
    write_json(&summary, &io.out.join("summary.json"))
}

#[derive(Serialize)]
struct Evaluation {
    fit: f64,
    pr_auc: BTreeMap<String, TaskScore>,
}

fn evaluate(a: &EvaluateArgs) -> Result<()> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let model = ck.to_model()?;
    let heads = ck.task_set()?;
    let tensor = load_tensor(&a.tensor)?;
    let labels = a.labels.as_ref().map(|p| load_labels(p, &tensor)).transpose()?;
    let projected = project_slices(&model, &tensor, a.projection_iters)?;
    let pr_auc = match &labels {
        Some(l) => predict_scores(&heads, &projected, &tensor, l)?,
        None => BTreeMap::new(),
    };
    fs::create_dir_all(&a.out)?;
    write_json(
        &Evaluation {
            fit: fit_score(&tensor, &projected)?,
            pr_auc,
        },
        &a.out.join("evaluation.json"),
    )
}

fn export_phenotypes(a: &PhenotypeArgs) -> Result<()> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let model = ck.to_model()?;
    let tensor = load_tensor(&a.tensor)?;
    let groups = subgroups(&model, &ck.slice_ids(), &tensor, a.projection_iters)?;
    let rows = phenotype_table(&model.v, &tensor, &groups, a.top_n)?;
    fs::create_dir_all(&a.out)?;
    write_rows(&rows, &a.out.join("phenotypes.csv"))
}

fn export_trajectories(a: &TrajectoryArgs) -> Result<()> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let model = ck.to_model()?;
    let tensor = load_tensor(&a.tensor)?;
    let groups = subgroups(&model, &ck.slice_ids(), &tensor, a.projection_iters)?;
    let rows = trajectories(&tensor, &groups, &a.feature, a.length)?;
    fs::create_dir_all(&a.out)?;
    write_rows(&rows, &a.out.join("trajectories.csv"))
}

fn scaling(a: &ScalingArgs) -> Result<()> {
    let base = SynthSpec {
        k: a.k,
        j: a.j,
        r_true: a.rank,
        seed: a.seed,
        ..SynthSpec::default()
    };
    let cfg = crate::trainer::TrainConfig {
        rank: a.rank,
        seed: a.seed,
        ..Default::default()
    };
    let ladders = [(ScalingAxis::K, a.k_ladder.clone()), (ScalingAxis::J, a.j_ladder.clone())];
    let report = scaling_probe(&base, &cfg, &ladders, a.epochs, a.repeats)?;
    fs::create_dir_all(&a.out)?;
    write_rows(&report.points, &a.out.join("scaling.csv"))?;
    let fits: BTreeMap<&str, _> = report.fits.iter().map(|(axis, f)| (axis.name(), f)).collect();
    write_json(&fits, &a.out.join("scaling_fit.json"))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareRow {
    pub method: String,
    pub rank: usize,
    pub metric: String,
    pub value: Option<f64>,
    pub n_runs: usize,
    pub error: Option<String>,
    pub input_sha256: String,
}

type RunOutcome = std::result::Result<EvalReport, String>;

fn mean(values: impl Iterator<Item = f64>) -> (Option<f64>, usize) {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    ((n > 0).then(|| sum / n as f64), n)
}

fn first_error(runs: &[&RunOutcome]) -> Option<String> {
    runs.iter().find_map(|r| r.as_ref().err().cloned())
}

fn metric_row(method: &str, rank: usize, metric: String, runs: &[&RunOutcome], pick: impl Fn(&EvalReport) -> Option<f64>, hash: &str) -> CompareRow {
    let (value, n_runs) = mean(runs.iter().filter_map(|r| r.as_ref().ok()).filter_map(pick));
    CompareRow {
        method: method.to_string(),
        rank,
        metric,
        value,
        n_runs,
        error: first_error(runs),
        input_sha256: hash.to_string(),
    }
}

/// Runs every method at every rank over the seed set. Failures are recorded
/// in their own cells.
pub fn compare_table(
    tensor: &crate::tensor::IrregularTensor,
    labels: &LabelTable,
    c: &CliConfig,
    hash: &str,
) -> Vec<CompareRow> {
    let tasks: Vec<String> = labels.static_tasks().into_iter().chain(labels.dynamic_tasks()).collect();
    let run = |mode: Mode, rank: usize| -> Vec<RunOutcome> {
        c.seeds()
            .into_iter()
            .map(|seed| {
                let mut cfg = c.train.clone();
                cfg.mode = mode.clone();
                cfg.rank = rank;
                cfg.seed = seed;
                run_experiment(tensor, Some(labels), &cfg, c.train_fraction, seed)
                    .map(|ex| ex.report)
                    .map_err(|e| e.to_string())
            })
            .collect()
    };
    let task_score = |task: &str| {
        let task = task.to_string();
        move |r: &EvalReport| r.pr_auc.get(&task).and_then(|s| s.pr_auc)
    };
    let mut rows = Vec::new();
    for rank in c.ranks() {
        let unsup = run(Mode::Unsupervised, rank);
        let single: Vec<Vec<RunOutcome>> = tasks.iter().map(|t| run(Mode::SingleTask(t.clone()), rank)).collect();
        let multi = run(Mode::MultiTask, rank);
        let cells: [(&str, Vec<&RunOutcome>); 3] = [
            ("unsupervised", unsup.iter().collect()),
            ("single_task", single.iter().flatten().collect()),
            ("multi_task", multi.iter().collect()),
        ];
        for (method, all) in &cells {
            rows.push(metric_row(method, rank, "fit_train".into(), all, |r| Some(r.fit_train), hash));
            rows.push(metric_row(method, rank, "fit_test".into(), all, |r| Some(r.fit_test), hash));
            for (n, task) in tasks.iter().enumerate() {
                let own: Vec<&RunOutcome> = match *method {
                    "single_task" => single[n].iter().collect(),
                    _ => all.clone(),
                };
                rows.push(metric_row(method, rank, format!("pr_auc:{task}"), &own, task_score(task), hash));
            }
        }
    }
    rows
}

fn compare(flags: &RunFlags) -> Result<()> {
    let c = flags.resolve()?;
    let io = inputs(&c, true)?;
    let tensor = load_tensor(&io.tensor_path)?;
    let labels = load_labels(io.labels_path.as_ref().expect("checked by inputs"), &tensor)?;
    fs::create_dir_all(&io.out)?;
    let hash = input_hash(&io.tensor_path, io.labels_path.as_deref())?;
    let rows = compare_table(&tensor, &labels, &c, &hash);
    write_rows(&rows, &io.out.join("compare.csv"))
}
