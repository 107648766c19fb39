//! Plain-text storage: one CSV per trajectory plus a JSON manifest, and
//! column CSVs for derived series.
//!
//! Trajectory files have the header `t,q1..qd,p1..pd` and, for Langevin
//! data, `xi1..xid`. The increment on row `i` covers `[t_i, t_{i+1}]`, so the
//! last row leaves those cells empty. Floats are written in shortest
//! round-trip form, which makes a write/read cycle exact.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::datagen::{EnsembleMeta, TrajectoryEnsemble};
use crate::error::{Error, Result};
use crate::integrators::SchemeSpec;
use crate::models::{Model, State};

pub const MANIFEST_FILE: &str = "manifest.json";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleManifest {
    pub format_version: u32,
    pub model: Model,
    pub generator: SchemeSpec,
    pub h: f64,
    pub gap: usize,
    pub delta: f64,
    pub seed: u64,
    pub n_trajectories: usize,
    pub n_transitions: usize,
    pub dim: usize,
    pub has_noise: bool,
    /// Trajectory files, relative to the manifest.
    pub files: Vec<String>,
}

fn format_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format {
        path: path.display().to_string(),
        reason: reason.into(),
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    format_err(path, e.to_string())
}

pub fn trajectory_header(dim: usize, noise: bool) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend((1..=dim).map(|k| format!("q{k}")));
    h.extend((1..=dim).map(|k| format!("p{k}")));
    if noise {
        h.extend((1..=dim).map(|k| format!("xi{k}")));
    }
    h
}

/// Writes a single trajectory; `noise`, if given, has one entry fewer than
/// `states`.
pub fn write_trajectory_csv(
    path: &Path,
    times: &[f64],
    states: &[State],
    noise: Option<&[Vec<f64>]>,
) -> Result<()> {
    if times.len() != states.len() || states.is_empty() {
        return Err(Error::invalid("times and states must be aligned and non-empty"));
    }
    let d = states[0].dim();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(trajectory_header(d, noise.is_some())).map_err(|e| csv_err(path, e))?;
    for (i, (t, s)) in times.iter().zip(states).enumerate() {
        let mut row: Vec<String> = Vec::with_capacity(1 + 3 * d);
        row.push(t.to_string());
        row.extend(s.q.iter().chain(&s.p).map(|x| x.to_string()));
        if let Some(n) = noise {
            match n.get(i) {
                Some(xi) => row.extend(xi.iter().map(|x| x.to_string())),
                None => row.extend(std::iter::repeat_n(String::new(), d)),
            }
        }
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    w.flush()?;
    Ok(())
}

/// Parsed trajectory file.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryFile {
    pub times: Vec<f64>,
    pub states: Vec<State>,
    pub noise: Option<Vec<Vec<f64>>>,
}

pub fn read_trajectory_csv(path: &Path) -> Result<TrajectoryFile> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
    let cols = header.len();
    let (d, has_noise) = if cols >= 3 && (cols - 1) % 3 == 0 && header.get(cols - 1).is_some_and(|h| h.starts_with("xi")) {
        ((cols - 1) / 3, true)
    } else if cols >= 3 && (cols - 1) % 2 == 0 {
        ((cols - 1) / 2, false)
    } else {
        return Err(format_err(path, format!("unexpected column count {cols}")));
    };
    let expected = trajectory_header(d, has_noise);
    if header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(format_err(path, format!("header should be {}", expected.join(","))));
    }
    let mut out = TrajectoryFile {
        times: Vec::new(),
        states: Vec::new(),
        noise: has_noise.then(Vec::new),
    };
    let mut noise_ended = false;
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let num = |j: usize| -> Result<f64> {
            rec[j]
                .trim()
                .parse::<f64>()
                .map_err(|_| format_err(path, format!("row {}: bad number {:?}", line + 1, &rec[j])))
        };
        out.times.push(num(0)?);
        let q = (1..=d).map(num).collect::<Result<Vec<_>>>()?;
        let p = (d + 1..=2 * d).map(num).collect::<Result<Vec<_>>>()?;
        out.states.push(State { q, p });
        if let Some(n) = out.noise.as_mut() {
            if (2 * d + 1..=3 * d).all(|j| rec[j].trim().is_empty()) {
                noise_ended = true;
            } else if noise_ended {
                return Err(format_err(path, "noise present after an empty row"));
            } else {
                n.push((2 * d + 1..=3 * d).map(num).collect::<Result<Vec<_>>>()?);
            }
        }
    }
    if out.states.is_empty() {
        return Err(format_err(path, "no rows"));
    }
    if let Some(n) = &out.noise {
        if n.len() + 1 != out.states.len() {
            return Err(format_err(path, "noise needs exactly one entry per transition"));
        }
    }
    Ok(out)
}

/// Writes `traj_XXXX.csv` files and the manifest into `dir` (created if
/// missing).
pub fn write_ensemble(dir: &Path, ens: &TrajectoryEnsemble) -> Result<EnsembleManifest> {
    ens.validate()?;
    fs::create_dir_all(dir)?;
    let mut files = Vec::with_capacity(ens.n_trajectories());
    for (m, states) in ens.states.iter().enumerate() {
        let name = format!("traj_{m:04}.csv");
        let noise = ens.noise.as_ref().map(|n| n[m].as_slice());
        write_trajectory_csv(&dir.join(&name), &ens.times, states, noise)?;
        files.push(name);
    }
    let manifest = EnsembleManifest {
        format_version: FORMAT_VERSION,
        model: ens.meta.model,
        generator: ens.meta.generator,
        h: ens.meta.h(),
        gap: ens.meta.gap,
        delta: ens.delta(),
        seed: ens.meta.seed,
        n_trajectories: ens.n_trajectories(),
        n_transitions: ens.n_transitions(),
        dim: ens.dim(),
        has_noise: ens.noise.is_some(),
        files,
    };
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

/// Reads an ensemble written by [`write_ensemble`]. `path` may be the
/// directory or the manifest itself.
pub fn read_ensemble(path: &Path) -> Result<TrajectoryEnsemble> {
    let manifest_path: PathBuf = if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    };
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let man: EnsembleManifest = read_json(&manifest_path)?;
    if man.format_version != FORMAT_VERSION {
        return Err(format_err(&manifest_path, format!("unsupported format version {}", man.format_version)));
    }
    if man.files.len() != man.n_trajectories {
        return Err(format_err(&manifest_path, "file list does not match n_trajectories"));
    }
    let mut times = None;
    let mut states = Vec::with_capacity(man.files.len());
    let mut noise = Vec::new();
    for f in &man.files {
        let p = dir.join(f);
        let t = read_trajectory_csv(&p)?;
        if t.states.len() != man.n_transitions + 1 || t.states[0].dim() != man.dim {
            return Err(format_err(&p, "shape does not match the manifest"));
        }
        if t.noise.is_some() != man.has_noise {
            return Err(format_err(&p, "noise columns do not match the manifest"));
        }
        match &times {
            None => times = Some(t.times),
            Some(ts) if *ts != t.times => return Err(format_err(&p, "time grid differs from the first file")),
            _ => {}
        }
        states.push(t.states);
        if let Some(n) = t.noise {
            noise.push(n);
        }
    }
    let ens = TrajectoryEnsemble {
        times: times.unwrap_or_default(),
        states,
        noise: man.has_noise.then_some(noise),
        meta: EnsembleMeta {
            model: man.model,
            generator: man.generator,
            gap: man.gap,
            seed: man.seed,
        },
    };
    ens.validate()?;
    Ok(ens)
}

/// Writes equal-length columns under the given header.
pub fn write_columns(path: &Path, header: &[&str], columns: &[&[f64]]) -> Result<()> {
    if header.len() != columns.len() || columns.iter().any(|c| c.len() != columns[0].len()) {
        return Err(Error::invalid("header and columns must match in count and length"));
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    let n = columns.first().map_or(0, |c| c.len());
    for i in 0..n {
        w.write_record(columns.iter().map(|c| c[i].to_string())).map_err(|e| csv_err(path, e))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let s = fs::read_to_string(path)?;
    serde_json::from_str(&s).map_err(|e| format_err(path, e.to_string()))
}
