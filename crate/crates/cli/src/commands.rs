//! The `simulate`, `fit` and `summarize` commands.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use regclust::posterior::{self, CpoReport, PartitionEstimate};
use regclust::rng::derive_seed;
use regclust::{simulate as simulate_data, BandKind, Dataset, Model, SimSpec, Trace, Truth};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::data::{content_hash, load_csv, parse_csv, to_csv, write_csv};
use crate::error::CliError;
use crate::smoothing::smooth_derivative;
use crate::trace_io::{read_trace, write_trace, Manifest, TRACE_FORMAT_VERSION};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthFile {
    pub curve_ids: Vec<String>,
    #[serde(flatten)]
    pub truth: Truth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimManifest {
    pub tool_version: String,
    pub spec: SimSpec,
    pub dataset_sha256: String,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Data(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(CliError::io(path))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
    serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub fn load_sim_spec(path: &Path) -> Result<SimSpec, CliError> {
    let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
    let spec: SimSpec =
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    spec.validate()?;
    Ok(spec)
}

/// Writes `data.csv`, `truth.json` and `manifest.json` into `out`, or into
/// `out/rep_NNN` for each of `replicates` datasets with seeds derived from
/// the spec seed.
pub fn simulate(
    spec: &SimSpec,
    out: &Path,
    replicates: Option<usize>,
) -> Result<Vec<PathBuf>, CliError> {
    let jobs: Vec<(PathBuf, SimSpec)> = match replicates {
        None => vec![(out.to_path_buf(), spec.clone())],
        Some(n) => (0..n)
            .map(|r| {
                let seed = derive_seed(spec.seed, r as u64);
                (
                    out.join(format!("rep_{r:03}")),
                    SimSpec {
                        seed,
                        ..spec.clone()
                    },
                )
            })
            .collect(),
    };
    for (dir, spec) in &jobs {
        std::fs::create_dir_all(dir).map_err(CliError::io(dir))?;
        let (data, truth) = simulate_data(spec)?;
        let csv = to_csv(&data);
        std::fs::write(dir.join("data.csv"), &csv).map_err(CliError::io(dir.join("data.csv")))?;
        let curve_ids = data.curves.iter().map(|c| c.id.clone()).collect();
        write_json(&dir.join("truth.json"), &TruthFile { curve_ids, truth })?;
        let manifest = SimManifest {
            tool_version: env!("CARGO_PKG_VERSION").into(),
            spec: spec.clone(),
            dataset_sha256: content_hash(csv.as_bytes()),
        };
        write_json(&dir.join("manifest.json"), &manifest)?;
    }
    Ok(jobs.into_iter().map(|j| j.0).collect())
}

/// Loads the configured dataset, applying derivative smoothing if requested.
/// Returns the data and the content hash of the input file.
pub fn prepare_data(cfg: &RunConfig) -> Result<(Dataset, String), CliError> {
    let path = &cfg.data.path;
    let bytes = std::fs::read(path).map_err(CliError::io(path))?;
    let hash = content_hash(&bytes);
    let text = String::from_utf8(bytes)
        .map_err(|_| CliError::Data(format!("{}: not UTF-8", path.display())))?;
    let mut data =
        parse_csv(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    if cfg.data.derivative {
        data = smooth_derivative(&data, cfg.data.smoothing)?;
    }
    Ok((data, hash))
}

fn model_for(cfg: &RunConfig, data: &Dataset) -> Result<Model, CliError> {
    Ok(Model::new(cfg.model_config(data.window())?)?)
}

/// Output directory of chain `c` when `chains` run together.
pub fn chain_dir(root: &Path, c: usize, chains: usize) -> PathBuf {
    if chains == 1 {
        root.to_path_buf()
    } else {
        root.join(format!("chain_{c:02}"))
    }
}

/// Runs `chains` independent chains (in parallel when more than one) and
/// writes each trace, its manifest and its summaries. With several chains
/// chain `c` uses a seed derived from the configured one.
pub fn fit(cfg: &RunConfig, chains: usize) -> Result<Vec<PathBuf>, CliError> {
    if chains == 0 {
        return Err(CliError::Config("`--chains` must be at least 1".into()));
    }
    let (data, hash) = prepare_data(cfg)?;
    let model = model_for(cfg, &data)?;
    model.check_data(&data)?;
    let root = cfg.output.dir.clone();
    (0..chains)
        .into_par_iter()
        .map(|c| {
            let mut chain_cfg = cfg.clone();
            if chains > 1 {
                chain_cfg.mcmc.seed = derive_seed(cfg.mcmc.seed, c as u64);
            }
            let dir = chain_dir(&root, c, chains);
            chain_cfg.output.dir = dir.clone();
            fit_chain(&chain_cfg, &model, &data, &hash)?;
            Ok(dir)
        })
        .collect()
}

fn fit_chain(cfg: &RunConfig, model: &Model, data: &Dataset, hash: &str) -> Result<(), CliError> {
    let dir = &cfg.output.dir;
    std::fs::create_dir_all(dir).map_err(CliError::io(dir))?;
    let run = regclust::Sampler::new(model, data, cfg.mcmc.clone()).and_then(|mut s| s.run());
    let trace = match run {
        Ok(t) => t,
        Err(e) => {
            let err = CliError::from(e);
            std::fs::write(dir.join("error.json"), err.to_json() + "\n")
                .map_err(CliError::io(dir.join("error.json")))?;
            return Err(err);
        }
    };
    write_csv(data, &dir.join("data.csv"))?;
    let manifest = Manifest {
        format_version: TRACE_FORMAT_VERSION.into(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        seed: cfg.mcmc.seed,
        dataset_sha256: hash.into(),
        dataset_file: "data.csv".into(),
        curve_ids: data.curves.iter().map(|c| c.id.clone()).collect(),
        draws: trace.len(),
        warp_acceptance: trace.warp_acceptance,
        config: cfg.clone(),
    };
    write_trace(dir, &trace, &manifest)?;
    let truth = cfg.data.truth.clone();
    summarize_loaded(
        dir,
        &trace,
        &manifest,
        model,
        data,
        &SummaryOptions::from_config(cfg, truth),
    )?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryOptions {
    pub truth: Option<PathBuf>,
    pub level: f64,
    pub band: BandKind,
    pub grid_points: usize,
}

impl SummaryOptions {
    pub fn from_config(cfg: &RunConfig, truth: Option<PathBuf>) -> Self {
        Self {
            truth,
            level: cfg.output.level,
            band: cfg.output.band,
            grid_points: cfg.output.grid_points,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthScores {
    pub ari_map: f64,
    pub ari_dahl: f64,
    /// Per-curve mean squared error of the posterior-mean fit.
    pub mse: Vec<f64>,
    /// Fraction of curves whose noiseless values lie inside their band at
    /// every observation time.
    pub band_coverage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub draws: usize,
    pub curve_ids: Vec<String>,
    pub lpml: f64,
    pub log_cpo: Vec<f64>,
    /// Draw counts indexed by number of clusters.
    pub k_histogram: Vec<usize>,
    pub k_mode: usize,
    pub warp_acceptance: f64,
    pub map: PartitionEstimate,
    pub dahl: PartitionEstimate,
    pub truth: Option<TruthScores>,
}

/// Reads a trace directory and writes partition, functional and diagnostic
/// summaries into it.
pub fn summarize(dir: &Path, opts: &SummaryOptions) -> Result<Diagnostics, CliError> {
    let (trace, manifest) = read_trace(dir)?;
    let data = load_csv(&dir.join(&manifest.dataset_file))?;
    let ids: Vec<&str> = data.curves.iter().map(|c| c.id.as_str()).collect();
    if ids != manifest.curve_ids {
        return Err(CliError::Data(
            "stored dataset does not match the trace's curves".into(),
        ));
    }
    let model = model_for(&manifest.config, &data)?;
    summarize_loaded(dir, &trace, &manifest, &model, &data, opts)
}

fn grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|j| lo + (hi - lo) * j as f64 / (n - 1) as f64)
        .collect()
}

fn write_text(path: &Path, text: String) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(CliError::io(path))
}

fn band_rows(out: &mut String, key: &str, s: &regclust::FunctionalSummary) {
    for j in 0..s.grid.len() {
        out.push_str(&format!(
            "{key},{},{},{},{}\n",
            s.grid[j], s.mean[j], s.lower[j], s.upper[j]
        ));
    }
}

fn load_truth(path: &Path, data: &Dataset) -> Result<Truth, CliError> {
    let file: TruthFile = read_json(path)?;
    let n = data.len();
    let mut t = Truth {
        labels: vec![0; n],
        phi: vec![Vec::new(); n],
        c: vec![0.0; n],
        a: vec![0.0; n],
        clean: vec![Vec::new(); n],
    };
    if file.curve_ids.len() != n {
        return Err(CliError::Data(format!(
            "truth has {} curves, data has {n}",
            file.curve_ids.len()
        )));
    }
    for (k, id) in file.curve_ids.iter().enumerate() {
        let i = data
            .index_of(id)
            .ok_or_else(|| CliError::Data(format!("truth curve `{id}` not in data")))?;
        t.labels[i] = file.truth.labels[k];
        t.phi[i] = file.truth.phi[k].clone();
        t.c[i] = file.truth.c[k];
        t.a[i] = file.truth.a[k];
        t.clean[i] = file.truth.clean[k].clone();
    }
    Ok(t)
}

fn summarize_loaded(
    dir: &Path,
    trace: &Trace,
    manifest: &Manifest,
    model: &Model,
    data: &Dataset,
    opts: &SummaryOptions,
) -> Result<Diagnostics, CliError> {
    if !(opts.level > 0.0 && opts.level < 1.0) {
        return Err(CliError::Config(format!(
            "`level` must lie in (0, 1), got {}",
            opts.level
        )));
    }
    if opts.grid_points < 2 {
        return Err(CliError::Config("`grid_points` must be at least 2".into()));
    }
    let ids = &manifest.curve_ids;
    let map = posterior::map_partition(trace, data, model)?;
    let dahl = posterior::dahl_partition(trace)?;
    for (name, est) in [("partition_map.csv", &map), ("partition_dahl.csv", &dahl)] {
        let mut s = String::from("curve_id,label\n");
        for (id, l) in ids.iter().zip(&est.labels) {
            s.push_str(&format!("{id},{l}\n"));
        }
        write_text(&dir.join(name), s)?;
    }

    let p = posterior::pairwise_prob_matrix(trace)?;
    let mut s = format!("curve_id,{}\n", ids.join(","));
    for (i, id) in ids.iter().enumerate() {
        let row: Vec<String> = (0..ids.len()).map(|j| p[(i, j)].to_string()).collect();
        s.push_str(&format!("{id},{}\n", row.join(",")));
    }
    write_text(&dir.join("pairwise.csv"), s)?;

    let (lo, hi) = model.warp().knots().domain();
    let g = grid(lo, hi, opts.grid_points);
    let mut shapes = String::from("cluster,time,mean,lower,upper\n");
    for k in 0..map.num_clusters() {
        let s = posterior::cluster_shape(trace, model, &map.labels, k, &g, opts.level, opts.band)?;
        band_rows(&mut shapes, &k.to_string(), &s);
    }
    write_text(&dir.join("shapes.csv"), shapes)?;

    let mut fits = String::from("curve_id,time,mean,lower,upper\n");
    let mut warps = String::from("curve_id,time,mean,lower,upper\n");
    for (i, id) in ids.iter().enumerate() {
        band_rows(
            &mut fits,
            id,
            &posterior::curve_fit(trace, model, i, &g, opts.level, opts.band)?,
        );
        band_rows(
            &mut warps,
            id,
            &posterior::warp_mean(trace, model, i, &g, opts.level, opts.band)?,
        );
    }
    write_text(&dir.join("fits.csv"), fits)?;
    write_text(&dir.join("warps.csv"), warps)?;

    let hist = trace.k_histogram();
    let mut s = String::from("k,count\n");
    for (k, c) in hist.iter().enumerate().skip(1) {
        s.push_str(&format!("{k},{c}\n"));
    }
    write_text(&dir.join("k_histogram.csv"), s)?;

    let CpoReport { log_cpo, lpml } = posterior::cpo_lpml(trace)?;
    let truth = match &opts.truth {
        None => None,
        Some(path) => {
            let t = load_truth(path, data)?;
            let mut covered = 0;
            for i in 0..data.len() {
                let band = posterior::curve_fit(
                    trace,
                    model,
                    i,
                    &data.curves[i].times,
                    opts.level,
                    BandKind::Simultaneous,
                )?;
                if band.covers(&t.clean[i]) {
                    covered += 1;
                }
            }
            Some(TruthScores {
                ari_map: posterior::adjusted_rand(&map.labels, &t.labels)?,
                ari_dahl: posterior::adjusted_rand(&dahl.labels, &t.labels)?,
                mse: posterior::mse_vs_truth(trace, model, data, &t.clean)?,
                band_coverage: covered as f64 / data.len() as f64,
            })
        }
    };
    let diag = Diagnostics {
        draws: trace.len(),
        curve_ids: ids.clone(),
        lpml,
        log_cpo,
        k_mode: trace.k_mode(),
        k_histogram: hist,
        warp_acceptance: trace.warp_acceptance,
        map,
        dahl,
        truth,
    };
    write_json(&dir.join("diagnostics.json"), &diag)?;
    Ok(diag)
}
