//! On-disk traces: one CSV per parameter block plus `manifest.json`.
//!
//! | file          | columns                                               |
//! |---------------|-------------------------------------------------------|
//! | `labels.csv`  | `iteration`, one column per curve                     |
//! | `phi.csv`     | `iteration,curve_id,phi_0..`                          |
//! | `scalars.csv` | `iteration,curve_id,c,a`                              |
//! | `atoms.csv`   | `iteration,cluster,tau,theta_0..`                     |
//! | `hypers.csv`  | `iteration,k,alpha,c0,a0,tau_c,tau_a,tau_theta,tau_phi` |
//! | `loglik.csv`  | `iteration`, one column per curve                     |
//!
//! Floats are written in shortest round-trip form, so reading a trace back
//! gives bit-identical values.

use std::collections::BTreeMap;
use std::path::Path;

use regclust::{Draw, Hyperparams, ShapeAtom, Trace};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::CliError;

pub const TRACE_FORMAT_VERSION: &str = "1.0.0";

const FILES: [&str; 6] = [
    "labels.csv",
    "phi.csv",
    "scalars.csv",
    "atoms.csv",
    "hypers.csv",
    "loglik.csv",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: String,
    pub tool_version: String,
    pub seed: u64,
    /// Git-style SHA-256 of the input data file.
    pub dataset_sha256: String,
    /// The fitted (possibly preprocessed) data, stored next to the trace.
    pub dataset_file: String,
    pub curve_ids: Vec<String>,
    pub draws: usize,
    pub warp_acceptance: f64,
    pub config: RunConfig,
}

fn write_rows(
    dir: &Path,
    name: &str,
    header: Vec<String>,
    rows: Vec<Vec<String>>,
) -> Result<(), CliError> {
    let path = dir.join(name);
    let mut w = csv::Writer::from_path(&path).map_err(|e| csv_io(&path, e))?;
    w.write_record(&header).map_err(|e| csv_io(&path, e))?;
    for r in rows {
        w.write_record(&r).map_err(|e| csv_io(&path, e))?;
    }
    w.flush().map_err(CliError::io(&path))
}

fn csv_io(path: &Path, e: csv::Error) -> CliError {
    CliError::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e.to_string()),
    }
}

fn f(x: f64) -> String {
    x.to_string()
}

pub fn write_trace(dir: &Path, trace: &Trace, manifest: &Manifest) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(CliError::io(dir))?;
    let ids = &manifest.curve_ids;
    let per_curve_header = |first: &str| {
        std::iter::once(first.to_string())
            .chain(ids.iter().cloned())
            .collect::<Vec<_>>()
    };

    let mut labels = Vec::new();
    let mut loglik = Vec::new();
    let mut phi = Vec::new();
    let mut scalars = Vec::new();
    let mut atoms = Vec::new();
    let mut hypers = Vec::new();
    let q = trace
        .draws
        .first()
        .map_or(0, |d| d.phi.first().map_or(0, Vec::len));
    let p = trace
        .draws
        .first()
        .map_or(0, |d| d.atoms.first().map_or(0, |a| a.theta.len()));
    for d in &trace.draws {
        let it = d.iteration.to_string();
        labels.push(
            std::iter::once(it.clone())
                .chain(d.labels.iter().map(|l| l.to_string()))
                .collect(),
        );
        loglik.push(
            std::iter::once(it.clone())
                .chain(d.loglik.iter().map(|&v| f(v)))
                .collect(),
        );
        for (i, id) in ids.iter().enumerate() {
            phi.push(
                [it.clone(), id.clone()]
                    .into_iter()
                    .chain(d.phi[i].iter().map(|&v| f(v)))
                    .collect(),
            );
            scalars.push(vec![it.clone(), id.clone(), f(d.c[i]), f(d.a[i])]);
        }
        for (k, a) in d.atoms.iter().enumerate() {
            atoms.push(
                [it.clone(), k.to_string(), f(a.tau)]
                    .into_iter()
                    .chain(a.theta.iter().map(|&v| f(v)))
                    .collect(),
            );
        }
        let h = &d.hypers;
        hypers.push(vec![
            it,
            d.num_clusters().to_string(),
            f(h.alpha),
            f(h.c0),
            f(h.a0),
            f(h.tau_c),
            f(h.tau_a),
            f(h.tau_theta),
            f(h.tau_phi),
        ]);
    }
    let indexed = |prefix: &str, n: usize, lead: &[&str]| {
        lead.iter()
            .map(|s| s.to_string())
            .chain((0..n).map(|j| format!("{prefix}_{j}")))
            .collect::<Vec<_>>()
    };
    write_rows(dir, "labels.csv", per_curve_header("iteration"), labels)?;
    write_rows(dir, "loglik.csv", per_curve_header("iteration"), loglik)?;
    write_rows(
        dir,
        "phi.csv",
        indexed("phi", q, &["iteration", "curve_id"]),
        phi,
    )?;
    write_rows(
        dir,
        "scalars.csv",
        indexed("", 0, &["iteration", "curve_id", "c", "a"]),
        scalars,
    )?;
    write_rows(
        dir,
        "atoms.csv",
        indexed("theta", p, &["iteration", "cluster", "tau"]),
        atoms,
    )?;
    write_rows(
        dir,
        "hypers.csv",
        indexed(
            "",
            0,
            &[
                "iteration",
                "k",
                "alpha",
                "c0",
                "a0",
                "tau_c",
                "tau_a",
                "tau_theta",
                "tau_phi",
            ],
        ),
        hypers,
    )?;
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(manifest).map_err(|e| CliError::Data(e.to_string()))?;
    std::fs::write(&path, text + "\n").map_err(CliError::io(&path))
}

fn read_rows(dir: &Path, name: &str) -> Result<Vec<Vec<String>>, CliError> {
    let path = dir.join(name);
    let mut r = csv::Reader::from_path(&path).map_err(|e| csv_io(&path, e))?;
    r.records()
        .map(|rec| {
            rec.map(|r| r.iter().map(str::to_string).collect())
                .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
        })
        .collect()
}

fn num<T: std::str::FromStr>(s: &str, file: &str) -> Result<T, CliError> {
    s.parse()
        .map_err(|_| CliError::Data(format!("{file}: malformed value `{s}`")))
}

fn nums(cells: &[String], file: &str) -> Result<Vec<f64>, CliError> {
    cells.iter().map(|c| num(c, file)).collect()
}

pub fn read_manifest(dir: &Path) -> Result<Manifest, CliError> {
    let path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&path).map_err(CliError::io(&path))?;
    let m: Manifest = serde_json::from_str(&text)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    if m.format_version.split('.').next() != TRACE_FORMAT_VERSION.split('.').next() {
        return Err(CliError::Data(format!(
            "unsupported trace format {}",
            m.format_version
        )));
    }
    Ok(m)
}

/// Reads a trace written by [`write_trace`], rejecting incomplete files.
pub fn read_trace(dir: &Path) -> Result<(Trace, Manifest), CliError> {
    let m = read_manifest(dir)?;
    for f in FILES {
        if !dir.join(f).exists() {
            return Err(CliError::Data(format!("trace is missing {f}")));
        }
    }
    let n = m.curve_ids.len();
    let truncated = |what: &str| {
        CliError::Data(format!(
            "truncated trace: {what} does not match {} draws",
            m.draws
        ))
    };

    let labels = read_rows(dir, "labels.csv")?;
    let loglik = read_rows(dir, "loglik.csv")?;
    let hypers = read_rows(dir, "hypers.csv")?;
    if labels.len() != m.draws || loglik.len() != m.draws || hypers.len() != m.draws {
        return Err(truncated("row count"));
    }
    let mut draws = Vec::with_capacity(m.draws);
    let mut index = BTreeMap::new();
    for (j, ((lab, ll), hy)) in labels.iter().zip(&loglik).zip(&hypers).enumerate() {
        if lab.len() != n + 1 || ll.len() != n + 1 || hy.len() != 9 {
            return Err(truncated("row width"));
        }
        let iteration: usize = num(&lab[0], "labels.csv")?;
        let h = nums(&hy[2..], "hypers.csv")?;
        let k: usize = num(&hy[1], "hypers.csv")?;
        index.insert(iteration, j);
        draws.push(Draw {
            iteration,
            labels: lab[1..]
                .iter()
                .map(|s| num(s, "labels.csv"))
                .collect::<Result<_, _>>()?,
            atoms: Vec::with_capacity(k),
            phi: vec![Vec::new(); n],
            c: vec![0.0; n],
            a: vec![0.0; n],
            hypers: Hyperparams {
                alpha: h[0],
                c0: h[1],
                a0: h[2],
                tau_c: h[3],
                tau_a: h[4],
                tau_theta: h[5],
                tau_phi: h[6],
            },
            loglik: nums(&ll[1..], "loglik.csv")?,
        });
    }
    let curve_index: BTreeMap<&str, usize> = m
        .curve_ids
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();
    let locate = |it: &str, id: &str, file: &str| -> Result<(usize, usize), CliError> {
        let j = *index
            .get(&num::<usize>(it, file)?)
            .ok_or_else(|| truncated(file))?;
        let i = *curve_index
            .get(id)
            .ok_or_else(|| CliError::Data(format!("{file}: unknown curve `{id}`")))?;
        Ok((j, i))
    };
    let phi = read_rows(dir, "phi.csv")?;
    let scalars = read_rows(dir, "scalars.csv")?;
    if phi.len() != m.draws * n || scalars.len() != m.draws * n {
        return Err(truncated("per-curve rows"));
    }
    for r in &phi {
        let (j, i) = locate(&r[0], &r[1], "phi.csv")?;
        draws[j].phi[i] = nums(&r[2..], "phi.csv")?;
    }
    for r in &scalars {
        let (j, i) = locate(&r[0], &r[1], "scalars.csv")?;
        draws[j].c[i] = num(&r[2], "scalars.csv")?;
        draws[j].a[i] = num(&r[3], "scalars.csv")?;
    }
    for r in read_rows(dir, "atoms.csv")? {
        let j = *index
            .get(&num::<usize>(&r[0], "atoms.csv")?)
            .ok_or_else(|| truncated("atoms.csv"))?;
        draws[j].atoms.push(ShapeAtom {
            tau: num(&r[2], "atoms.csv")?,
            theta: nums(&r[3..], "atoms.csv")?,
        });
    }
    for d in &draws {
        let k = d.labels.iter().max().map_or(0, |l| l + 1);
        if d.atoms.len() != k || d.phi.iter().any(Vec::is_empty) {
            return Err(truncated("atoms"));
        }
    }
    Ok((
        Trace {
            draws,
            warp_acceptance: m.warp_acceptance,
        },
        m,
    ))
}
