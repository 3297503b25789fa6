//! CSV and manifest persistence for bundles, profiles, diagnostics and
//! study tables. Values are written with shortest round-trip formatting,
//! so every `f64` survives a write/read cycle exactly.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Demonstration, GameDefinition, StrategyProfile, TimeGrid, TrajectoryBundle};
use crate::riccati::StabilityReport;
use crate::scalar::{lit, Scalar};
use crate::sim::RNG_NAME;
use crate::strategy_id::ExcitationReport;
use crate::study::{EnvelopeSeries, StudyAverage, StudyRow};

pub const MANIFEST_FILE: &str = "manifest.json";

fn fmt<T: Scalar>(v: T) -> String {
    format!("{}", v.to_f64_lossy())
}

fn parse(field: &str, path: &Path) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|_| Error::Config(format!("{}: cannot parse `{field}` as a number", path.display())))
}

pub fn demo_header(n: usize, control_dims: &[usize]) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend((1..=n).map(|s| format!("x_{s}")));
    for (i, &m) in control_dims.iter().enumerate() {
        h.extend((1..=m).map(|c| format!("u_{}_{c}", i + 1)));
    }
    h
}

/// One row per grid node: `t, x_1..x_n, u_1_1..u_1_m1, ..., u_N_1..u_N_mN`.
pub fn write_demo_csv<T: Scalar>(path: &Path, grid: &TimeGrid<T>, demo: &Demonstration<T>) -> Result<()> {
    let dims: Vec<usize> = demo.controls.iter().map(|u| u.nrows()).collect();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(demo_header(demo.states.nrows(), &dims))?;
    for k in 0..grid.len() {
        let mut rec = vec![fmt(grid.time(k))];
        rec.extend(demo.states.column(k).iter().map(|&v| fmt(v)));
        for u in &demo.controls {
            rec.extend(u.column(k).iter().map(|&v| fmt(v)));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a demonstration written by [`write_demo_csv`]; the header must
/// match the given dimensions and the time column must match `grid`.
pub fn read_demo_csv<T: Scalar>(path: &Path, grid: &TimeGrid<T>, n: usize, control_dims: &[usize]) -> Result<Demonstration<T>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(|s| s.trim().to_string()).collect();
    if header != demo_header(n, control_dims) {
        return Err(Error::Config(format!("{}: unexpected header {:?}", path.display(), header)));
    }
    let mut states = DMatrix::zeros(n, grid.len());
    let mut controls: Vec<DMatrix<T>> = control_dims.iter().map(|&m| DMatrix::zeros(m, grid.len())).collect();
    let tol = grid.dt().to_f64_lossy() * 1e-6;
    let mut rows = 0;
    for (k, rec) in r.records().enumerate() {
        let rec = rec?;
        if k >= grid.len() {
            return Err(Error::Dimension(format!("{}: more rows than grid nodes", path.display())));
        }
        let vals = rec.iter().map(|f| parse(f, path)).collect::<Result<Vec<_>>>()?;
        if (vals[0] - grid.time(k).to_f64_lossy()).abs() > tol {
            return Err(Error::Dimension(format!("{}: row {k} has t = {}, off the grid", path.display(), vals[0])));
        }
        for s in 0..n {
            states[(s, k)] = lit(vals[1 + s]);
        }
        let mut col = 1 + n;
        for u in controls.iter_mut() {
            for c in 0..u.nrows() {
                u[(c, k)] = lit(vals[col]);
                col += 1;
            }
        }
        rows += 1;
    }
    if rows != grid.len() {
        return Err(Error::Dimension(format!("{}: {rows} rows for {} grid nodes", path.display(), grid.len())));
    }
    Ok(Demonstration { states, controls })
}

/// Describes a bundle directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub files: Vec<String>,
    pub demos: usize,
    pub seed: Option<u64>,
    pub rng: String,
    pub steps: usize,
    pub config_hash: String,
}

pub fn demo_file_name(d: usize) -> String {
    format!("demo_{d:04}.csv")
}

/// Writes one CSV per demonstration plus `manifest.json` into `dir`.
pub fn write_bundle<T: Scalar>(dir: &Path, bundle: &TrajectoryBundle<T>, config_hash: &str) -> Result<BundleManifest> {
    fs::create_dir_all(dir)?;
    let mut files = Vec::with_capacity(bundle.len());
    for (d, demo) in bundle.demos().iter().enumerate() {
        let name = demo_file_name(d);
        write_demo_csv(&dir.join(&name), bundle.grid(), demo)?;
        files.push(name);
    }
    let manifest = BundleManifest {
        files,
        demos: bundle.len(),
        seed: bundle.seed(),
        rng: RNG_NAME.to_string(),
        steps: bundle.grid().steps(),
        config_hash: config_hash.to_string(),
    };
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

/// Loads a bundle directory against the game's grid and dimensions. Uses
/// the manifest when present, otherwise every `demo_*.csv` in name order.
pub fn read_bundle<T: Scalar>(dir: &Path, game: &GameDefinition<T>) -> Result<TrajectoryBundle<T>> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let (files, seed): (Vec<PathBuf>, Option<u64>) = if manifest_path.exists() {
        let m: BundleManifest = serde_json::from_str(&fs::read_to_string(&manifest_path)?)?;
        (m.files.iter().map(|f| dir.join(f)).collect(), m.seed)
    } else {
        let mut files: Vec<PathBuf> = fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("demo_") && n.ends_with(".csv"))
            })
            .collect();
        files.sort();
        (files, None)
    };
    let dims = game.control_dims();
    let demos = files
        .iter()
        .map(|f| read_demo_csv(f, game.grid(), game.state_dim(), &dims))
        .collect::<Result<Vec<_>>>()?;
    TrajectoryBundle::new(*game.grid(), demos, seed)
}

/// Columns `t, K_i_r_c` for every player `i` and entry `(r, c)` (1-based).
pub fn write_strategy_csv<T: Scalar>(path: &Path, profile: &StrategyProfile<T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["t".to_string()];
    for i in 0..profile.players() {
        let k = profile.gain(i, 0);
        for r in 0..k.nrows() {
            for c in 0..k.ncols() {
                header.push(format!("K_{}_{}_{}", i + 1, r + 1, c + 1));
            }
        }
    }
    w.write_record(&header)?;
    for k in 0..profile.grid().len() {
        let mut rec = vec![fmt(profile.grid().time(k))];
        for i in 0..profile.players() {
            let g = profile.gain(i, k);
            for r in 0..g.nrows() {
                for c in 0..g.ncols() {
                    rec.push(fmt(g[(r, c)]));
                }
            }
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_stability_csv(path: &Path, times: &[f64], report: &StabilityReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t", "max_real_part"])?;
    for (t, v) in times.iter().zip(&report.max_real_part) {
        w.write_record([t.to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Columns `t, cond, flagged`.
pub fn write_excitation_csv(path: &Path, report: &ExcitationReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t", "cond", "flagged"])?;
    for ((t, c), f) in report.times.iter().zip(&report.cond).zip(&report.flagged) {
        w.write_record([t.to_string(), c.to_string(), f.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Columns `index, sigma` (descending).
pub fn write_singular_values_csv(path: &Path, sigma: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["index", "sigma"])?;
    for (i, s) in sigma.iter().enumerate() {
        w.write_record([(i + 1).to_string(), s.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

const RUN_HEADER: [&str; 9] = ["K", "rep", "e_mu_x", "e_mu_u", "e_var_x", "e_var_u", "t_C", "seed", "failure"];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Columns `K, rep, e_mu_x, e_mu_u, e_var_x, e_var_u, t_C, seed, failure`.
pub fn write_study_rows(path: &Path, rows: &[StudyRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(RUN_HEADER)?;
    for r in rows {
        w.write_record([
            r.nodes.to_string(),
            r.rep.to_string(),
            opt(r.e_mu_x),
            opt(r.e_mu_u),
            opt(r.e_var_x),
            opt(r.e_var_u),
            opt(r.t_c),
            r.seed.to_string(),
            r.failure.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_study_rows(path: &Path) -> Result<Vec<StudyRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let get = |i: usize| rec.get(i).unwrap_or("").trim().to_string();
        let num = |i: usize| -> Result<Option<f64>> {
            let s = get(i);
            if s.is_empty() { Ok(None) } else { parse(&s, path).map(Some) }
        };
        let int = |i: usize| -> Result<u64> {
            get(i).parse::<u64>().map_err(|_| Error::Config(format!("{}: bad integer field", path.display())))
        };
        let failure = get(8);
        rows.push(StudyRow {
            nodes: int(0)? as usize,
            rep: int(1)? as usize,
            e_mu_x: num(2)?,
            e_mu_u: num(3)?,
            e_var_x: num(4)?,
            e_var_u: num(5)?,
            t_c: num(6)?,
            seed: int(7)?,
            failure: if failure.is_empty() { None } else { Some(failure) },
        });
    }
    Ok(rows)
}

/// Columns mirror the averaged table: `K, e_mu_x, e_mu_u, e_var_x, e_var_u, t_C, successes, failures`.
pub fn write_study_averages(path: &Path, avgs: &[StudyAverage]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for a in avgs {
        w.serialize(a)?;
    }
    w.flush()?;
    Ok(())
}

/// Per node and state: ground-truth and estimated mean with ±2σ bounds.
pub fn write_envelopes_csv(path: &Path, env: &EnvelopeSeries) -> Result<()> {
    let n = env.gt_mean.len();
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["t".to_string()];
    for s in 1..=n {
        for col in ["gt_mean", "gt_lo", "gt_hi", "est_mean", "est_lo", "est_hi"] {
            header.push(format!("{col}_{s}"));
        }
    }
    w.write_record(&header)?;
    for (k, t) in env.times.iter().enumerate() {
        let mut rec = vec![t.to_string()];
        for s in 0..n {
            let (gm, gs, em, es) = (env.gt_mean[s][k], env.gt_sd[s][k], env.est_mean[s][k], env.est_sd[s][k]);
            for v in [gm, gm - 2.0 * gs, gm + 2.0 * gs, em, em - 2.0 * es, em + 2.0 * es] {
                rec.push(v.to_string());
            }
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
