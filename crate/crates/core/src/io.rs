//! Text persistence for trajectories, preferences, feature maps, cached features, chains and
//! evaluation tables.
//!
//! Floats are written in Rust's shortest round-trip form, so every load reproduces the saved
//! values exactly.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{BrexError, Result};
use crate::features::{FeatureMap, PreferenceDataset, TrajectoryFeatures};
use crate::hcope::{PolicyEvalRow, ReturnDistribution};
use crate::mcmc::PosteriorChain;
use crate::mdp::Trajectory;

pub const EVAL_TABLE_HEADER: [&str; 6] = [
    "policy",
    "mean_chain",
    "var_chain",
    "traj_length",
    "gt_avg_return",
    "gt_min_return",
];

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> BrexError + '_ {
    move |source| BrexError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> BrexError {
    BrexError::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn csv_err(path: &Path, e: csv::Error) -> BrexError {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(source) => BrexError::Io {
            path: path.to_path_buf(),
            source,
        },
        other => parse_err(path, line, format!("{other:?}")),
    }
}

/// Shortest decimal that parses back to the same `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(io_err(path))?))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(create(path)?))
}

fn csv_reader(path: &Path) -> Result<csv::Reader<File>> {
    let f = File::open(path).map_err(io_err(path))?;
    Ok(csv::ReaderBuilder::new().has_headers(true).from_reader(f))
}

fn finish(mut w: csv::Writer<BufWriter<File>>, path: &Path) -> Result<()> {
    w.flush().map_err(io_err(path))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|source| BrexError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    w.write_all(b"\n").map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| BrexError::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// One JSON object per line: `{"states": [...], "actions": [...], "gt_return": x}`.
pub fn save_trajectories(path: &Path, trajectories: &[Trajectory]) -> Result<()> {
    let mut w = create(path)?;
    for t in trajectories {
        let line = serde_json::to_string(t).map_err(|source| BrexError::Json {
            path: path.to_path_buf(),
            source,
        })?;
        writeln!(w, "{line}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Loads JSON-lines trajectories; any malformed line rejects the whole file.
pub fn load_trajectories(path: &Path) -> Result<Vec<Trajectory>> {
    let f = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let t: Trajectory = serde_json::from_str(&line).map_err(|e| parse_err(path, i + 1, e.to_string()))?;
        if t.states.is_empty() {
            return Err(parse_err(path, i + 1, "trajectory has no states"));
        }
        out.push(t);
    }
    Ok(out)
}

/// CSV with header `i,j`, one row per pair `τ_i ≺ τ_j`.
pub fn save_preferences(path: &Path, prefs: &PreferenceDataset) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["i", "j"]).map_err(|e| csv_err(path, e))?;
    for (i, j) in &prefs.pairs {
        w.write_record([i.to_string(), j.to_string()]).map_err(|e| csv_err(path, e))?;
    }
    finish(w, path)
}

pub fn load_preferences(path: &Path) -> Result<PreferenceDataset> {
    let mut r = csv_reader(path)?;
    let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.iter().collect::<Vec<_>>() != ["i", "j"] {
        return Err(parse_err(path, 1, format!("expected header i,j, found {header:?}")));
    }
    let mut pairs = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = row + 2;
        let cell = |k: usize| -> Result<usize> {
            let text = rec.get(k).ok_or_else(|| parse_err(path, line, "missing column"))?;
            text.trim()
                .parse()
                .map_err(|_| parse_err(path, line, format!("row {}: {text:?} is not an index", row + 1)))
        };
        pairs.push((cell(0)?, cell(1)?));
    }
    Ok(PreferenceDataset::new(pairs))
}

pub fn save_feature_map(path: &Path, fm: &FeatureMap) -> Result<()> {
    write_json(path, fm)
}

pub fn load_feature_map(path: &Path) -> Result<FeatureMap> {
    read_json(path)
}

/// `m` rows of `d` columns headed `phi_0,…,phi_{d-1}`.
pub fn save_trajectory_features(path: &Path, tf: &TrajectoryFeatures) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record((0..tf.dim()).map(|k| format!("phi_{k}")))
        .map_err(|e| csv_err(path, e))?;
    for row in tf.rows() {
        w.write_record(row.iter().map(|x| fmt_f64(*x))).map_err(|e| csv_err(path, e))?;
    }
    finish(w, path)
}

fn parse_f64(path: &Path, line: usize, text: &str) -> Result<f64> {
    text.trim()
        .parse()
        .map_err(|_| parse_err(path, line, format!("{text:?} is not a number")))
}

pub fn load_trajectory_features(path: &Path) -> Result<TrajectoryFeatures> {
    let mut r = csv_reader(path)?;
    let d = r.headers().map_err(|e| csv_err(path, e))?.len();
    let mut data = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        for cell in rec.iter() {
            data.push(parse_f64(path, row + 2, cell)?);
        }
    }
    TrajectoryFeatures::from_rows(d, data)
}

fn chain_header(dim: usize) -> Vec<String> {
    let mut h = vec!["step".to_string(), "log_post".to_string()];
    h.extend((0..dim).map(|k| format!("w_{k}")));
    h
}

/// Chain CSV: `step,log_post,w_0,…,w_{d-1}`, one row per retained sample.
pub fn save_chain(path: &Path, chain: &PosteriorChain) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(chain_header(chain.dim)).map_err(|e| csv_err(path, e))?;
    let mut rec = Vec::with_capacity(chain.dim + 2);
    for (i, sample) in chain.iter_samples().enumerate() {
        rec.clear();
        rec.push(chain.steps[i].to_string());
        rec.push(fmt_f64(chain.log_posts[i]));
        rec.extend(sample.iter().map(|x| fmt_f64(*x)));
        w.write_record(&rec).map_err(|e| csv_err(path, e))?;
    }
    finish(w, path)
}

pub fn load_chain(path: &Path) -> Result<PosteriorChain> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(File::open(path).map_err(io_err(path))?);
    let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.len() < 3 {
        return Err(parse_err(path, 1, "chain header needs step, log_post and at least one weight"));
    }
    let dim = header.len() - 2;
    if header.iter().collect::<Vec<_>>() != chain_header(dim) {
        return Err(parse_err(path, 1, format!("unexpected chain header {header:?}")));
    }
    let (mut steps, mut samples, mut log_posts) = (Vec::new(), Vec::new(), Vec::new());
    for (row, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = row + 2;
        if rec.len() != dim + 2 {
            return Err(parse_err(
                path,
                line,
                format!("expected {} columns, found {}", dim + 2, rec.len()),
            ));
        }
        steps.push(
            rec[0]
                .trim()
                .parse()
                .map_err(|_| parse_err(path, line, format!("{:?} is not a step index", &rec[0])))?,
        );
        log_posts.push(parse_f64(path, line, &rec[1])?);
        for cell in rec.iter().skip(2) {
            samples.push(parse_f64(path, line, cell)?);
        }
    }
    Ok(PosteriorChain {
        dim,
        steps,
        samples,
        log_posts,
        accept_rate: None,
        raw_trace: None,
    })
}

/// Trace CSV `step,w_a,w_b,…` of selected coordinates over the raw chain.
pub fn save_trace(path: &Path, trace: &[f64], dim: usize, coords: &[usize]) -> Result<()> {
    if let Some(&k) = coords.iter().find(|&&k| k >= dim) {
        return Err(BrexError::invalid(format!("trace coordinate {k} outside 0..{dim}")));
    }
    let mut w = csv_writer(path)?;
    let mut header = vec!["step".to_string()];
    header.extend(coords.iter().map(|k| format!("w_{k}")));
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for (step, row) in trace.chunks(dim).enumerate() {
        let mut rec = vec![step.to_string()];
        rec.extend(coords.iter().map(|&k| fmt_f64(row[k])));
        w.write_record(&rec).map_err(|e| csv_err(path, e))?;
    }
    finish(w, path)
}

fn opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

/// Evaluation table with the fixed column schema [`EVAL_TABLE_HEADER`].
pub fn save_eval_table(path: &Path, rows: &[PolicyEvalRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(EVAL_TABLE_HEADER).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.write_record([
            r.policy.clone(),
            fmt_f64(r.mean_chain),
            fmt_f64(r.var_chain),
            fmt_f64(r.traj_length),
            opt(r.gt_avg_return),
            opt(r.gt_min_return),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    finish(w, path)
}

pub fn load_eval_table(path: &Path) -> Result<Vec<PolicyEvalRow>> {
    let mut r = csv_reader(path)?;
    let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.iter().collect::<Vec<_>>() != EVAL_TABLE_HEADER {
        return Err(parse_err(path, 1, format!("unexpected evaluation header {header:?}")));
    }
    let mut rows = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = row + 2;
        let maybe = |k: usize| -> Result<Option<f64>> {
            match rec[k].trim() {
                "" => Ok(None),
                t => parse_f64(path, line, t).map(Some),
            }
        };
        rows.push(PolicyEvalRow {
            policy: rec[0].to_string(),
            mean_chain: parse_f64(path, line, &rec[1])?,
            var_chain: parse_f64(path, line, &rec[2])?,
            traj_length: parse_f64(path, line, &rec[3])?,
            gt_avg_return: maybe(4)?,
            gt_min_return: maybe(5)?,
        });
    }
    Ok(rows)
}

/// Single-column CSV `return` for histogram plotting.
pub fn save_returns(path: &Path, dist: &ReturnDistribution) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["return"]).map_err(|e| csv_err(path, e))?;
    for r in &dist.returns {
        w.write_record([fmt_f64(*r)]).map_err(|e| csv_err(path, e))?;
    }
    finish(w, path)
}

pub fn load_returns(path: &Path) -> Result<ReturnDistribution> {
    let mut r = csv_reader(path)?;
    let mut returns = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        returns.push(parse_f64(path, row + 2, &rec[0])?);
    }
    Ok(ReturnDistribution { returns })
}
