use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use purify_core::analysis::{audit_e_bound_lemma, col_error, exact_expectations, IterRecord};
use purify_core::equilibrate::{equilibration_with, rescaled_weights, PassLog};
use purify_core::genmodel::{gen_ground_truth, gen_init, ModelSpec};
use purify_core::pinv::{ls_pinv_inf_norm, min_inf_pinv};
use purify_core::purify::{run_purification_with, AlgoParams};
use purify_core::rng::Stream;
use purify_core::{DenseMatrix, Error};
use serde::Serialize;

use crate::config::{self, Resolved};
use crate::CliError;

pub const GIT_DESCRIBE: &str = env!("PURIFY_GIT_DESCRIBE");

pub struct Globals {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

type Raw = std::collections::BTreeMap<String, String>;

pub(crate) fn load_raw(g: &Globals) -> Result<Raw, CliError> {
    let text = match &g.config {
        Some(p) => fs::read_to_string(p)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?,
        None => String::new(),
    };
    let mut raw = config::parse_text(&text)?;
    if let Some(s) = g.seed {
        raw.insert("seed".into(), s.to_string());
    }
    if let Some(o) = &g.out {
        raw.insert("outputs".into(), o.display().to_string());
    }
    Ok(raw)
}

/// Creates the output directory and records the resolved config in it.
fn prepare(r: &Resolved) -> Result<PathBuf, CliError> {
    let dir = r.outputs();
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("resolved_config"), r.text())?;
    Ok(dir)
}

pub(crate) fn read_matrix(path: &Path) -> Result<DenseMatrix, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    DenseMatrix::from_csv(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn write_matrix(path: &Path, m: &DenseMatrix) -> Result<(), CliError> {
    fs::write(path, m.to_csv())?;
    Ok(())
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.into()))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn build_model(r: &Resolved) -> Result<(ModelSpec, DenseMatrix), CliError> {
    let root = Stream::new(r.seed()?);
    let (m, n) = (r.m()?, r.n()?);
    let a_star = match (r.ground_truth()?, r.ground_truth_path()) {
        (Some(kind), _) => gen_ground_truth(kind, m, n, &root.child("ground_truth"))?,
        (None, Some(path)) => read_matrix(&path)?,
        (None, None) => unreachable!("checked during resolution"),
    };
    if a_star.shape() != (m, n) {
        return Err(CliError::Config(format!(
            "ground truth is {}x{}, config says model.m = {m}, model.n = {n}",
            a_star.rows(),
            a_star.cols()
        )));
    }
    let init = r.init()?;
    let spec = ModelSpec { ground_truth: a_star, weights: r.weights()?, noise: r.noise()?, init };
    spec.validate()?;
    let a0 = match r.a0_path() {
        Some(path) => read_matrix(&path)?,
        None => gen_init(&spec.ground_truth, &init, &root.child("init"))?,
    };
    Ok((spec, a0))
}

pub fn gen(g: &Globals) -> Result<(), CliError> {
    let r = config::resolve(load_raw(g)?)?;
    let dir = prepare(&r)?;
    let (spec, a0) = build_model(&r)?;
    write_matrix(&dir.join("a_star.csv"), &spec.ground_truth)?;
    write_matrix(&dir.join("a0.csv"), &a0)
}

#[derive(Serialize)]
struct Steps {
    alpha: f64,
    eta: f64,
    r: f64,
}

#[derive(Serialize)]
struct RunSummary {
    final_col_err: f64,
    iterations: usize,
    wall_time_s: f64,
    steps: Steps,
    params_echo: String,
    git_describe: String,
}

/// Runs purification from `a0`, streaming the trajectory to disk so a
/// failure still leaves every completed record behind.
fn purify_into(
    dir: &Path,
    r: &Resolved,
    spec: &ModelSpec,
    a0: &DenseMatrix,
    params: &AlgoParams,
) -> Result<(), CliError> {
    let started = Instant::now();
    let mut traj = BufWriter::new(File::create(dir.join("trajectory.csv"))?);
    writeln!(traj, "{}", IterRecord::CSV_HEADER)?;
    let mut io_err = None;
    let mut last = None;
    let result = run_purification_with(spec, a0, params, r.diagnostics()?, &mut |rec| {
        if io_err.is_none() {
            if let Err(e) = writeln!(traj, "{}", rec.to_csv_row()) {
                io_err = Some(e);
            }
        }
        last = Some(rec.col_err);
    });
    traj.flush()?;
    if let Some(e) = io_err {
        return Err(e.into());
    }
    let res = result?;
    write_matrix(&dir.join("a_final.csv"), &res.a_final)?;
    write_matrix(&dir.join("a_normalized.csv"), &res.a_normalized)?;
    let final_col_err = match last {
        Some(v) => v,
        None => col_error(&res.a_final, &spec.ground_truth)?,
    };
    let summary = RunSummary {
        final_col_err,
        iterations: params.iterations,
        wall_time_s: started.elapsed().as_secs_f64(),
        steps: Steps { alpha: params.alpha, eta: params.eta, r: params.r },
        params_echo: r.text(),
        git_describe: GIT_DESCRIBE.to_string(),
    };
    write_json(&dir.join("summary.json"), &summary)
}

pub fn run(g: &Globals) -> Result<(), CliError> {
    let r = config::resolve(load_raw(g)?)?;
    let dir = prepare(&r)?;
    let (spec, a0) = build_model(&r)?;
    let params = r.algo(&spec.weights)?;
    purify_into(&dir, &r, &spec, &a0, &params)
}

pub fn equilibrate(g: &Globals, then_purify: bool) -> Result<(), CliError> {
    let r = config::resolve(load_raw(g)?)?;
    let (spec, a0) = build_model(&r)?;
    let ep = r.equil(&spec.weights)?;
    if then_purify {
        r.algo(&spec.weights)?;
    }
    let dir = prepare(&r)?;
    let mut log = BufWriter::new(File::create(dir.join("equil_log.csv"))?);
    writeln!(log, "{}", PassLog::CSV_HEADER)?;
    let mut io_err = None;
    let result = equilibration_with(&a0, &ep, &spec, &mut |entry| {
        if io_err.is_none() {
            if let Err(e) = writeln!(log, "{}", entry.to_csv_row()) {
                io_err = Some(e);
            }
        }
    });
    log.flush()?;
    if let Some(e) = io_err {
        return Err(e.into());
    }
    let out = match result {
        Ok(out) => out,
        Err(e) => {
            if let Error::MaxOuterExceeded { state, .. } = &e {
                write_matrix(&dir.join("a_balanced.csv"), &state.a)?;
                write_json(&dir.join("d.json"), &state.d)?;
            }
            return Err(e.into());
        }
    };
    write_matrix(&dir.join("a_balanced.csv"), &out.a)?;
    write_json(&dir.join("d.json"), &out.d)?;
    if then_purify {
        let params = r.algo(&rescaled_weights(&spec.weights, &out.d))?;
        purify_into(&dir, &r, &spec, &out.a, &params)?;
    }
    Ok(())
}

/// Seed of repeat `k`; repeat 0 keeps the master seed so a one-point sweep
/// reproduces `run`.
pub fn repeat_seed(seed: u64, k: usize) -> u64 {
    if k == 0 {
        seed
    } else {
        Stream::new(seed).child("sweep").index(k as u64).key()
    }
}

fn status_of(e: &CliError) -> &'static str {
    match e {
        CliError::Config(_) => "config_error",
        CliError::Core(core) => match core.root() {
            Error::RankDeficient | Error::SingularMatrix => "rank_deficient",
            Error::BadParams(_) | Error::BadDims(_) => "config_error",
            _ => "error",
        },
        _ => "error",
    }
}

fn sweep_point(raw: &Raw, key: &str, value: &str, seed: u64) -> Result<f64, CliError> {
    let mut raw = raw.clone();
    raw.insert(key.into(), value.into());
    raw.insert("seed".into(), seed.to_string());
    let r = config::resolve(raw)?;
    let (spec, a0) = build_model(&r)?;
    let params = r.algo(&spec.weights)?;
    let res = run_purification_with(&spec, &a0, &params, false, &mut |_| {})?;
    Ok(col_error(&res.a_final, &spec.ground_truth)?)
}

pub fn sweep(g: &Globals, axis: Option<&str>, values: Option<&str>, repeats: Option<usize>) -> Result<(), CliError> {
    let mut raw = load_raw(g)?;
    if let Some(a) = axis {
        raw.insert("sweep.axis".into(), a.into());
    }
    if let Some(v) = values {
        raw.insert("sweep.values".into(), v.into());
    }
    if let Some(k) = repeats {
        raw.insert("sweep.repeats".into(), k.to_string());
    }
    if !raw.contains_key("sweep.axis") {
        return Err(CliError::Config("sweep needs `sweep.axis` or --axis".into()));
    }
    let r = config::resolve(raw.clone())?;
    let key = r.sweep_axis()?;
    let vals = r.sweep_values()?;
    if vals.is_empty() {
        return Err(CliError::Config("sweep needs at least one value".into()));
    }
    let repeats = r.sweep_repeats()?.max(1);
    let seed = r.seed()?;
    let dir = prepare(&r)?;
    let mut csv = BufWriter::new(File::create(dir.join("sweep.csv"))?);
    writeln!(csv, "value,repeat,seed,status,final_col_err,wall_time_s")?;
    let (mut failed, mut last_err) = (0, None);
    for v in &vals {
        for k in 0..repeats {
            let s = repeat_seed(seed, k);
            let started = Instant::now();
            let outcome = sweep_point(&raw, key, v, s);
            let secs = started.elapsed().as_secs_f64();
            match outcome {
                Ok(err) => writeln!(csv, "{v},{k},{s},ok,{err},{secs}")?,
                Err(e) => {
                    eprintln!("sweep point {key} = {v}, repeat {k}: {e}");
                    writeln!(csv, "{v},{k},{s},{},NaN,{secs}", status_of(&e))?;
                    failed += 1;
                    last_err = Some(e);
                }
            }
            csv.flush()?;
        }
    }
    match last_err {
        Some(e) if failed == vals.len() * repeats => Err(e),
        _ => Ok(()),
    }
}

#[derive(Serialize)]
struct PinvReport {
    inf_norm: f64,
    per_row_l1: Vec<f64>,
    ls_inf_norm: f64,
}

pub fn pinv(g: &Globals, input: &Path) -> Result<(), CliError> {
    let a = read_matrix(input)?;
    let res = min_inf_pinv(&a)?;
    let dir = g.out.clone().unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir)?;
    write_matrix(&dir.join("pinv.csv"), &res.pinv)?;
    let report = PinvReport { inf_norm: res.inf_norm, per_row_l1: res.per_row_l1, ls_inf_norm: ls_pinv_inf_norm(&a)? };
    write_json(&dir.join("pinv.json"), &report)
}

#[derive(Serialize)]
struct EBoundSummary {
    holds: Option<bool>,
    worst_slack: Option<f64>,
    entries: usize,
    error: Option<String>,
}

#[derive(Serialize)]
struct OracleReport {
    alpha: f64,
    outcomes: usize,
    max_abs_xi: f64,
    mean_decoded: Vec<f64>,
    e_bound: EBoundSummary,
}

pub fn oracle(g: &Globals) -> Result<(), CliError> {
    let r = config::resolve(load_raw(g)?)?;
    let (spec, a0) = build_model(&r)?;
    let alpha = r.steps(&spec.weights)?.alpha;
    let ex = exact_expectations(&spec, &a0, alpha)?;
    let dir = prepare(&r)?;
    write_matrix(&dir.join("exact_update.csv"), &ex.update)?;
    let e_bound = match audit_e_bound_lemma(&spec, &a0, alpha, ex.max_abs_xi) {
        Ok(audit) => EBoundSummary {
            holds: Some(audit.holds()),
            worst_slack: Some(audit.worst_slack()),
            entries: audit.entries.len(),
            error: None,
        },
        Err(e) => EBoundSummary { holds: None, worst_slack: None, entries: 0, error: Some(e.to_string()) },
    };
    let report = OracleReport {
        alpha,
        outcomes: ex.outcomes,
        max_abs_xi: ex.max_abs_xi,
        mean_decoded: ex.mean_decoded,
        e_bound,
    };
    write_json(&dir.join("oracle.json"), &report)
}
