//! CSV and JSON artifacts.
//!
//! Floats are written in Rust's shortest round-trip form, so every value
//! read back is bit-identical to the value written.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::calibration::{CalibratedIntervals, CalibrationAdjustment, ReplicateFitSummary, ReplicateStatus};
use crate::error::{Error, Result};
use crate::estimator::EstimatorConfig;
use crate::fit::{DrawMatrix, PosteriorFit};
use crate::harness::{CoverageReport, PpcExport};
use crate::model::{Dataset, DomainObservation, ModelSpec};
use crate::quantile::QuantileTable;

pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

fn parse_f64(field: &str, s: &str) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| Error::Parse(format!("column `{field}`: `{s}` is not a number")))
}

fn parse_usize(field: &str, s: &str) -> Result<usize> {
    s.trim()
        .parse()
        .map_err(|_| Error::Parse(format!("column `{field}`: `{s}` is not a nonnegative integer")))
}

fn writer(path: &Path) -> Result<csv::Writer<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Reader::from_reader(file))
}

fn finish(mut w: csv::Writer<File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

fn column(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| Error::Parse(format!("missing column `{name}`")))
}

/// `domain_id, y, v, n, x_1.., z_1..`
pub fn write_dataset_csv(path: &Path, data: &Dataset) -> Result<()> {
    let mut w = writer(path)?;
    let mut header = vec!["domain_id".to_string(), "y".into(), "v".into(), "n".into()];
    header.extend((1..=data.px()).map(|p| format!("x_{p}")));
    header.extend((1..=data.pz()).map(|p| format!("z_{p}")));
    w.write_record(&header)?;
    for o in data.observations() {
        let mut row = vec![o.domain_id.to_string(), fmt_f64(o.y), fmt_f64(o.v), o.n.to_string()];
        row.extend(o.x.iter().map(|x| fmt_f64(*x)));
        row.extend(o.z.iter().map(|z| fmt_f64(*z)));
        w.write_record(&row)?;
    }
    finish(w, path)
}

/// Reads a dataset; the `n` and `z_*` columns are optional (`n` defaults
/// to 1).
pub fn read_dataset_csv(path: &Path) -> Result<Dataset> {
    let mut r = reader(path)?;
    let headers = r.headers()?.clone();
    let id = column(&headers, "domain_id")?;
    let y = column(&headers, "y")?;
    let v = column(&headers, "v")?;
    let n = column(&headers, "n").ok();
    let numbered = |prefix: &str| -> Vec<usize> {
        (1..)
            .map_while(|p| headers.iter().position(|h| h.trim() == format!("{prefix}_{p}")))
            .collect()
    };
    let xs = numbered("x");
    let zs = numbered("z");
    let mut obs = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        obs.push(DomainObservation {
            domain_id: parse_usize("domain_id", &rec[id])?,
            y: parse_f64("y", &rec[y])?,
            v: parse_f64("v", &rec[v])?,
            x: xs.iter().map(|&c| parse_f64("x", &rec[c])).collect::<Result<_>>()?,
            z: zs.iter().map(|&c| parse_f64("z", &rec[c])).collect::<Result<_>>()?,
            n: match n {
                Some(c) => parse_usize("n", &rec[c])? as u32,
                None => 1,
            },
        });
    }
    Dataset::new(obs)
}

/// Serialized fit plus the settings that produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitArtifact {
    pub model: ModelSpec,
    pub estimator: EstimatorConfig,
    pub seed: u64,
    pub fit: PosteriorFit,
}

impl FitArtifact {
    /// Copy without stored draws (summaries and variational parameters kept).
    pub fn without_draws(&self) -> FitArtifact {
        let mut out = self.clone();
        out.fit.draws = DrawMatrix::new(self.fit.draws.n_cols());
        out
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_reader(BufReader::new(file))?)
}

/// `domain_id, a_i, c_i, A_ok`
pub fn write_adjustments_csv(path: &Path, adj: &CalibrationAdjustment) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["domain_id", "a_i", "c_i", "A_ok"])?;
    for i in 0..adj.c.len() {
        w.write_record([
            adj.domain_ids[i].to_string(),
            fmt_f64(adj.a[i]),
            fmt_f64(adj.c[i]),
            adj.a_ok.to_string(),
        ])?;
    }
    finish(w, path)
}

/// Sorted adjusted pivots in long form: `domain_id, rank, t_tilde`.
pub fn write_pivot_quantiles_csv(path: &Path, adj: &CalibrationAdjustment) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["domain_id", "rank", "t_tilde"])?;
    for (id, table) in adj.domain_ids.iter().zip(&adj.tables) {
        for (k, t) in table.values().iter().enumerate() {
            w.write_record([id.to_string(), (k + 1).to_string(), fmt_f64(*t)])?;
        }
    }
    finish(w, path)
}

/// Reads `adjustments.csv` and the matching pivot table file.
pub fn read_adjustment(adjustments: &Path, pivots: &Path) -> Result<CalibrationAdjustment> {
    let mut r = reader(adjustments)?;
    let h = r.headers()?.clone();
    let (ci, ca, cc, ck) = (
        column(&h, "domain_id")?,
        column(&h, "a_i")?,
        column(&h, "c_i")?,
        column(&h, "A_ok")?,
    );
    let (mut ids, mut a, mut c, mut a_ok) = (Vec::new(), Vec::new(), Vec::new(), 0);
    for rec in r.records() {
        let rec = rec?;
        ids.push(parse_usize("domain_id", &rec[ci])?);
        a.push(parse_f64("a_i", &rec[ca])?);
        c.push(parse_f64("c_i", &rec[cc])?);
        a_ok = parse_usize("A_ok", &rec[ck])?;
    }
    let mut values: Vec<Vec<f64>> = vec![Vec::new(); ids.len()];
    let mut r = reader(pivots)?;
    let h = r.headers()?.clone();
    let (pi, pt) = (column(&h, "domain_id")?, column(&h, "t_tilde")?);
    for rec in r.records() {
        let rec = rec?;
        let id = parse_usize("domain_id", &rec[pi])?;
        let slot = ids
            .iter()
            .position(|&d| d == id)
            .ok_or_else(|| Error::Parse(format!("pivot table names unknown domain {id}")))?;
        values[slot].push(parse_f64("t_tilde", &rec[pt])?);
    }
    let tables = values.into_iter().map(QuantileTable::new).collect::<Result<_>>()?;
    Ok(CalibrationAdjustment {
        domain_ids: ids,
        a,
        c,
        tables,
        a_ok,
    })
}

pub const INTERVAL_COLUMNS: [&str; 12] = [
    "domain_id",
    "gamma",
    "m",
    "v",
    "m_tilde",
    "v_tilde",
    "original_lo",
    "original_hi",
    "rescaled_lo",
    "rescaled_hi",
    "pivotal_lo",
    "pivotal_hi",
];

pub fn write_intervals_csv(path: &Path, iv: &CalibratedIntervals) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(INTERVAL_COLUMNS)?;
    for i in 0..iv.m.len() {
        let mut row = vec![iv.domain_ids[i].to_string()];
        row.extend(
            [
                iv.gamma,
                iv.m[i],
                iv.v[i],
                iv.m_tilde[i],
                iv.v_tilde[i],
                iv.original[i].lo,
                iv.original[i].hi,
                iv.rescaled[i].lo,
                iv.rescaled[i].hi,
                iv.pivotal[i].lo,
                iv.pivotal[i].hi,
            ]
            .map(fmt_f64),
        );
        w.write_record(&row)?;
    }
    finish(w, path)
}

/// Reads an intervals file as named numeric columns.
pub fn read_intervals_csv(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut r = reader(path)?;
    let h = r.headers()?.clone();
    let cols: Vec<usize> = INTERVAL_COLUMNS.iter().map(|c| column(&h, c)).collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        rows.push(
            cols.iter()
                .zip(INTERVAL_COLUMNS)
                .map(|(&c, name)| parse_f64(name, &rec[c]))
                .collect::<Result<_>>()?,
        );
    }
    Ok(rows)
}

/// `alpha, status, iterations, final_elbo, reason`
pub fn write_replicates_csv(path: &Path, summaries: &[ReplicateFitSummary]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["alpha", "status", "iterations", "final_elbo", "reason"])?;
    for s in summaries {
        let (status, reason) = match &s.status {
            ReplicateStatus::Success => ("success", String::new()),
            ReplicateStatus::Failure(r) => ("failure", r.clone()),
        };
        w.write_record([
            s.alpha.to_string(),
            status.to_string(),
            s.iterations.to_string(),
            s.final_elbo.map(fmt_f64).unwrap_or_default(),
            reason,
        ])?;
    }
    finish(w, path)
}

/// `domain_id, n, method, coverage, mean_length`
pub fn write_coverage_by_domain_csv(path: &Path, report: &CoverageReport) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["domain_id", "n", "method", "coverage", "mean_length"])?;
    for m in &report.methods {
        for d in &m.domains {
            w.write_record([
                d.domain_id.to_string(),
                d.n.to_string(),
                m.method.name().to_string(),
                fmt_f64(d.coverage),
                fmt_f64(d.mean_length),
            ])?;
        }
    }
    finish(w, path)
}

/// `method, coverage, length`
pub fn write_coverage_summary_csv(path: &Path, report: &CoverageReport) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["method", "coverage", "length"])?;
    for m in &report.methods {
        w.write_record([m.method.name().to_string(), fmt_f64(m.coverage), fmt_f64(m.mean_length)])?;
    }
    finish(w, path)
}

/// `ppc_observed.csv`, `ppc_replicate_<k>.csv` for each replicate and
/// `ppc_quantiles.csv`.
pub fn write_ppc(dir: &Path, ppc: &PpcExport) -> Result<()> {
    let table = |path: &Path, data: &Dataset| -> Result<()> {
        let mut w = writer(path)?;
        w.write_record(["domain_id", "y", "v"])?;
        for o in data.observations() {
            w.write_record([o.domain_id.to_string(), fmt_f64(o.y), fmt_f64(o.v)])?;
        }
        finish(w, path)
    };
    table(&dir.join("ppc_observed.csv"), &ppc.observed)?;
    let width = ppc.replicates.len().to_string().len().max(2);
    for (k, rep) in ppc.replicates.iter().enumerate() {
        table(&dir.join(format!("ppc_replicate_{:0width$}.csv", k + 1)), rep)?;
    }
    let path = dir.join("ppc_quantiles.csv");
    let mut w = writer(&path)?;
    w.write_record(["statistic", "prob", "observed", "replicate_mean", "replicate_q05", "replicate_q95"])?;
    for q in &ppc.quantiles {
        w.write_record([
            q.statistic.clone(),
            fmt_f64(q.prob),
            fmt_f64(q.observed),
            fmt_f64(q.replicate_mean),
            fmt_f64(q.replicate_q05),
            fmt_f64(q.replicate_q95),
        ])?;
    }
    finish(w, &path)
}
