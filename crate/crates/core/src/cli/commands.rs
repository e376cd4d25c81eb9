//! Subcommand bodies.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use super::{
    bench::run_bench, compose::compose_report, BenchArgs, Cli, Command, ComposeArgs, Envelope, GenSynthArgs, Outcome,
    RunConfig, SteerArgs, SynthKind, TrainArgs, VerifyArgs,
};
use crate::barrier::{read_bank, train, write_bank, BarrierBank};
use crate::dataio::{
    generate_synthetic, multi_constraint_fixture, read_dataset, read_dump, read_jsonl, split, write_dump, write_jsonl,
    DumpError, MultiConstraintSpec, SafetyDataset, SyntheticKind, SyntheticSpec, DUMP_MAGIC,
};
use crate::dynamics::{
    read_trajectory_sequences, rollout_with, run_suite, run_suite_on_bank, write_trajectory_records, LatentTrajectory,
    NominalDynamics, ScenarioKind, SuiteReport,
};
use crate::error::{Error, Result};
use crate::steering::{compose_lse, SteeringSession};
use crate::types::{LatentState, SteeringMode};

pub(super) fn dispatch(cli: Cli) -> Result<Outcome> {
    let mut cfg = RunConfig::from_process_env(cli.config.as_deref())?;
    if let Some(m) = cli.mode {
        cfg.steer.mode = m;
    }
    if let Some(a) = cli.alpha {
        cfg.steer.alpha = a;
        cfg.verify.alpha = a;
    }
    if let Some(d) = cli.delta {
        cfg.steer.delta = d;
    }
    if let Some(k) = cli.kappa {
        cfg.steer.kappa = k;
    }
    if let Some(dt) = cli.dt {
        cfg.steer.dt = dt;
        cfg.verify.dt = dt;
    }
    if let Some(s) = cli.seed {
        cfg.train.seed = s;
        cfg.verify.seed = s;
        cfg.bench.seed = s;
    }
    if let Some(o) = cli.out {
        cfg.paths.out = Some(o);
    }
    match cli.command {
        Command::GenSynth(a) => gen_synth(cfg, a),
        Command::Train(a) => train_cmd(cfg, a),
        Command::Steer(a) => steer_cmd(cfg, a),
        Command::Verify(a) => verify_cmd(cfg, a, cli.mode),
        Command::Compose(a) => compose_cmd(cfg, a, cli.mode),
        Command::Bench(a) => bench_cmd(cfg, a),
    }
}

fn required(path: Option<PathBuf>, what: &str) -> Result<PathBuf> {
    path.ok_or_else(|| Error::InvalidConfig(format!("{what} is required")))
}

/// Pretty JSON to `path`, or to stdout.
fn emit<T: Serialize>(path: Option<&Path>, value: &T) -> Result<()> {
    match path {
        Some(p) => {
            let mut w = BufWriter::new(File::create(p)?);
            serde_json::to_writer_pretty(&mut w, value)?;
            w.write_all(b"\n")?;
            w.flush()?;
        }
        None => {
            let mut out = std::io::stdout().lock();
            serde_json::to_writer_pretty(&mut out, value)?;
            out.write_all(b"\n")?;
        }
    }
    Ok(())
}

/// Attach the path to I/O errors from opening `path`.
fn with_path<T>(path: &Path, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Io(io) => Error::Io(std::io::Error::new(io.kind(), format!("{}: {io}", path.display()))),
        Error::Dump(DumpError::Io(io)) => {
            Error::Io(std::io::Error::new(io.kind(), format!("{}: {io}", path.display())))
        }
        e => e,
    })
}

fn load_bank(path: &Path) -> Result<BarrierBank> {
    with_path(path, read_bank(path))
}

fn is_jsonl(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()),
        Some("jsonl") | Some("ndjson")
    )
}

fn write_dataset(ds: &SafetyDataset, path: &Path) -> Result<()> {
    if is_jsonl(path) {
        write_jsonl(ds, path)
    } else {
        write_dump(ds, path)
    }
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

#[derive(Serialize)]
struct GenSynthSummary {
    kind: &'static str,
    records: usize,
    safe: usize,
    #[serde(rename = "unsafe")]
    unsafe_: usize,
    d_h: usize,
    seed: u64,
    out: PathBuf,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    category_banks: Vec<PathBuf>,
}

fn gen_synth(cfg: RunConfig, a: GenSynthArgs) -> Result<Outcome> {
    let out = required(cfg.paths.out.clone(), "--out")?;
    let seed = cfg.train.seed;
    let (kind_name, ds, banks) = match a.kind {
        SynthKind::MultiConstraint => {
            let spec = MultiConstraintSpec {
                categories: a.categories,
                d_h: a.d_h.unwrap_or(6),
                sequences: a.sequences,
                steps: a.steps,
                seed,
            };
            let (banks, ds) = multi_constraint_fixture(&spec)?;
            ("multi-constraint", ds, banks)
        }
        k => {
            let (name, kind) = match k {
                SynthKind::TwoMoons => ("two-moons", SyntheticKind::TwoMoons2D),
                SynthKind::GaussianClusters => ("gaussian-clusters", SyntheticKind::GaussianClusters),
                _ => ("annulus-vs-core", SyntheticKind::AnnulusVsCore),
            };
            let spec = SyntheticSpec {
                kind,
                n_per_class: a.n_per_class,
                noise: a.noise,
                d_h: a.d_h.unwrap_or(2),
                seed,
            };
            (name, generate_synthetic(&spec)?, Vec::new())
        }
    };
    write_dataset(&ds, &out)?;
    let dir = out.parent().unwrap_or(Path::new("."));
    let mut category_banks = Vec::new();
    for (k, bank) in banks.iter().enumerate() {
        let p = dir.join(format!("{}-category{k}.cbfb", stem(&out)));
        write_bank(bank, &p, None)?;
        category_banks.push(p);
    }
    let (safe, unsafe_) = ds.class_counts();
    let summary = GenSynthSummary {
        kind: kind_name,
        records: ds.len(),
        safe,
        unsafe_,
        d_h: ds.d_h(),
        seed,
        out,
        category_banks,
    };
    emit(None, &Envelope::new("gen-synth", &cfg, summary))?;
    Ok(Outcome::Ok)
}

#[derive(Serialize)]
struct TrainSummary {
    data: PathBuf,
    model: PathBuf,
    loss_csv: PathBuf,
    records_read: u64,
    rejected_non_finite: u64,
    train_records: usize,
    holdout_records: usize,
    initial_loss: f64,
    final_loss: f64,
    epochs: usize,
    train_accuracy: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    holdout_accuracy: Option<f64>,
}

fn train_cmd(mut cfg: RunConfig, a: TrainArgs) -> Result<Outcome> {
    if let Some(h) = a.heads {
        cfg.train.heads = h;
    }
    if let Some(h) = a.hidden {
        cfg.train.hidden_dims = h;
    }
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    cfg.validate()?;
    let data = required(a.data.or_else(|| cfg.paths.data.clone()), "--data")?;
    let model = required(cfg.paths.out.clone().or_else(|| cfg.paths.model.clone()), "--out")?;
    let loss_csv = a
        .loss_csv
        .unwrap_or_else(|| PathBuf::from(format!("{}.loss.csv", model.display())));

    let (ds, read) = with_path(&data, read_dataset(&data))?;
    let (safe, unsafe_) = ds.class_counts();
    if safe == 0 || unsafe_ == 0 {
        return Err(Error::SingleClass);
    }
    let t = &cfg.train;
    let (train_set, holdout) = if t.train_fraction >= 1.0 {
        (ds, None)
    } else {
        match split(&ds, t.train_fraction, t.seed) {
            Ok((tr, ho)) => {
                let (s, u) = tr.class_counts();
                if s > 0 && u > 0 {
                    (tr, Some(ho))
                } else {
                    (ds, None)
                }
            }
            Err(Error::TooFewSources(_)) => (ds, None),
            Err(e) => return Err(e),
        }
    };
    if holdout.is_none() && t.train_fraction < 1.0 {
        eprintln!("warning: no usable held-out split; training on all records");
    }
    let tc = t.train_config();
    let bank = BarrierBank::neural(t.heads, train_set.d_h(), &t.hidden_dims, t.seed)?;
    let (bank, rep) = train(bank, &train_set, &tc)?;
    write_bank(&bank, &model, Some(&tc))?;

    let mut w = BufWriter::new(File::create(&loss_csv)?);
    writeln!(w, "epoch,loss")?;
    writeln!(w, "0,{}", rep.initial_loss)?;
    for (i, l) in rep.loss_history.iter().enumerate() {
        writeln!(w, "{},{l}", i + 1)?;
    }
    w.flush()?;

    let holdout_accuracy = holdout.as_ref().map(|h| bank.accuracy(h.records())).transpose()?;
    let summary = TrainSummary {
        data,
        model,
        loss_csv,
        records_read: read.records_read,
        rejected_non_finite: read.rejected_non_finite,
        train_records: train_set.len(),
        holdout_records: holdout.as_ref().map_or(0, |h| h.len()),
        initial_loss: rep.initial_loss,
        final_loss: rep.loss_history.last().copied().unwrap_or(rep.initial_loss),
        epochs: rep.loss_history.len(),
        train_accuracy: rep.train_accuracy,
        holdout_accuracy,
    };
    emit(a.report.as_deref(), &Envelope::new("train", &cfg, summary))?;
    Ok(Outcome::Ok)
}

type Sequences = Vec<(Option<String>, Vec<LatentState>)>;

fn dataset_sequences(ds: &SafetyDataset) -> Sequences {
    ds.sequences()
        .into_iter()
        .map(|run| {
            (
                Some(run[0].source_id.clone()),
                run.iter().map(|r| r.state.clone()).collect(),
            )
        })
        .collect()
}

/// State sequences from a CBFA dump, trajectory records or a JSON-lines
/// dataset, detected from the content.
pub(super) fn read_sequences(path: &Path) -> Result<Sequences> {
    let mut magic = [0u8; 4];
    let n = File::open(path)?.read(&mut magic)?;
    if n == 4 && magic == DUMP_MAGIC {
        return Ok(dataset_sequences(&read_dump(path)?.0));
    }
    let reader = BufReader::new(File::open(path)?);
    let mut first = None;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if !line.trim().is_empty() {
            first = Some((i + 1, line));
            break;
        }
    }
    let Some((line_no, line)) = first else {
        return Err(DumpError::Format(format!("{} is empty", path.display())).into());
    };
    let v: serde_json::Value = serde_json::from_str(&line).map_err(|e| DumpError::Json {
        line: line_no,
        reason: e.to_string(),
    })?;
    if v.get("state").is_some() {
        read_trajectory_sequences(BufReader::new(File::open(path)?))
    } else if v.get("vector").is_some() {
        Ok(dataset_sequences(&read_jsonl(path)?.0))
    } else {
        Err(DumpError::Format(format!("{}: neither trajectory records nor a dataset", path.display())).into())
    }
}

fn single_state_trajectory(session: &SteeringSession, h: &LatentState) -> LatentTrajectory {
    let c = session.config();
    let values = session.bank().values_raw(h.as_slice());
    LatentTrajectory {
        states: vec![h.clone()],
        controls: Vec::new(),
        dt: c.dt,
        composed_trace: vec![compose_lse(&values, c.delta, c.kappa)],
        barrier_trace: vec![values],
        mode: Some(c.mode),
        fallback_steps: 0,
    }
}

/// Closed-loop re-drive of a recorded sequence: each recorded increment is
/// the nominal control, applied from the current filtered state.
pub(super) fn steer_sequence(session: &SteeringSession, states: &[LatentState]) -> Result<LatentTrajectory> {
    match states {
        [] => Err(Error::InvalidConfig("empty sequence".into())),
        [h] => {
            h.check_dim(session.bank().input_dim())?;
            Ok(single_state_trajectory(session, h))
        }
        _ => {
            let nominal = NominalDynamics::replay_states(states, session.config().dt)?;
            rollout_with(&states[0], &nominal, session, states.len() - 1)
        }
    }
}

#[derive(Serialize)]
struct SteerSummary {
    input: PathBuf,
    output: PathBuf,
    model: PathBuf,
    mode: SteeringMode,
    sequences: usize,
    transitions: usize,
    /// Transitions whose control differs from the recorded increment.
    modified_transitions: usize,
    fallback_steps: usize,
}

fn steer_cmd(cfg: RunConfig, a: SteerArgs) -> Result<Outcome> {
    cfg.validate()?;
    let model = required(a.model.or_else(|| cfg.paths.model.clone()), "--model")?;
    let output = required(cfg.paths.out.clone(), "--out")?;
    let bank = load_bank(&model)?;
    let session = SteeringSession::new(bank, cfg.steer.clone())?;
    let seqs = with_path(&a.input, read_sequences(&a.input))?;
    let trajs = seqs
        .par_iter()
        .map(|(_, states)| steer_sequence(&session, states))
        .collect::<Result<Vec<_>>>()?;

    let mut w = BufWriter::new(File::create(&output)?);
    let mut transitions = 0;
    let mut modified = 0;
    let mut fallback_steps = 0;
    for ((id, states), traj) in seqs.iter().zip(&trajs) {
        write_trajectory_records(traj, id.as_deref(), &mut w)?;
        transitions += traj.controls.len();
        fallback_steps += traj.fallback_steps;
        let nominal = NominalDynamics::replay_states(states, traj.dt)?;
        modified += traj
            .controls
            .iter()
            .enumerate()
            .filter(|(t, u)| u.as_slice() != nominal.control(*t, &[]).as_slice())
            .count();
    }
    w.flush()?;
    let summary = SteerSummary {
        input: a.input,
        output,
        model,
        mode: cfg.steer.mode,
        sequences: seqs.len(),
        transitions,
        modified_transitions: modified,
        fallback_steps,
    };
    emit(None, &Envelope::new("steer", &cfg, summary))?;
    Ok(Outcome::Ok)
}

#[derive(Serialize)]
struct VerifyOutput {
    passed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<PathBuf>,
    #[serde(flatten)]
    suite: SuiteReport,
}

/// Whether a suite report meets its guarantee, with the reason if not.
pub fn suite_verdict(r: &SuiteReport) -> std::result::Result<(), String> {
    match r.kind {
        ScenarioKind::Invariance if r.invariance_violations > 0 => Err(format!(
            "{} invariance violations, worst margin {:e}",
            r.invariance_violations, r.worst_margin
        )),
        ScenarioKind::Stabilization if !r.stabilization_bound_holds => {
            Err(format!("stabilization bound exceeded, worst ratio {}", r.worst_ratio))
        }
        ScenarioKind::NegativeControl if r.invariance_violations == 0 => {
            Err("negative control produced no violations".into())
        }
        _ => Ok(()),
    }
}

fn verify_cmd(mut cfg: RunConfig, a: VerifyArgs, mode: Option<SteeringMode>) -> Result<Outcome> {
    let v = &mut cfg.verify;
    if let Some(s) = a.suite {
        v.suite = s;
    }
    if let Some(n) = a.scenarios {
        v.scenarios = n;
    }
    if let Some(n) = a.steps {
        v.steps = n;
    }
    if let Some(d) = a.dims {
        v.dims = d;
    }
    if let Some(t) = a.tolerance {
        v.tolerance = Some(t);
    }
    if let Some(m) = mode {
        v.modes = Some(vec![m]);
    }
    cfg.validate()?;
    let suite = cfg.verify.suite_config(&cfg.steer);
    let model = a.model.or_else(|| cfg.paths.model.clone());
    let report = match &model {
        Some(p) => run_suite_on_bank(&suite, &load_bank(p)?, cfg.verify.start_radius)?,
        None => run_suite(&suite)?,
    };
    let verdict = suite_verdict(&report);
    let out = VerifyOutput {
        passed: verdict.is_ok(),
        model,
        suite: report,
    };
    emit(cfg.paths.out.as_deref(), &Envelope::new("verify", &cfg, out))?;
    Ok(match verdict {
        Ok(()) => Outcome::Ok,
        Err(msg) => Outcome::VerificationFailed(msg),
    })
}

fn compose_cmd(cfg: RunConfig, a: ComposeArgs, mode: Option<SteeringMode>) -> Result<Outcome> {
    cfg.validate()?;
    let banks = a
        .models
        .iter()
        .map(|p| Ok((stem(p), load_bank(p)?)))
        .collect::<Result<Vec<_>>>()?;
    let seqs: Vec<Vec<LatentState>> = with_path(&a.data, read_sequences(&a.data))?
        .into_iter()
        .map(|(_, s)| s)
        .collect();
    let modes = match mode {
        Some(m) => vec![m],
        None => SteeringMode::ALL.to_vec(),
    };
    let (merged, report) = compose_report(banks, &seqs, &modes, &cfg.steer, a.tolerance)?;
    if let Some(p) = &a.merged {
        write_bank(&merged, p, None)?;
    }
    emit(cfg.paths.out.as_deref(), &Envelope::new("compose", &cfg, report))?;
    Ok(Outcome::Ok)
}

fn bench_cmd(mut cfg: RunConfig, a: BenchArgs) -> Result<Outcome> {
    let b = &mut cfg.bench;
    if let Some(n) = a.heads {
        b.heads = n;
    }
    if let Some(n) = a.d_h {
        b.d_h = n;
    }
    if let Some(n) = a.trials {
        b.trials = n;
    }
    if let Some(n) = a.warmup {
        b.warmup = n;
    }
    cfg.validate()?;
    let model = a.model.or_else(|| cfg.paths.model.clone());
    let bank = match &model {
        Some(p) => load_bank(p)?,
        None => BarrierBank::neural(cfg.bench.heads, cfg.bench.d_h, &cfg.bench.hidden_dims, cfg.bench.seed)?,
    };
    let report = run_bench(&bank, &cfg.bench, &cfg.steer)?;
    emit(cfg.paths.out.as_deref(), &Envelope::new("bench", &cfg, report))?;
    Ok(Outcome::Ok)
}
