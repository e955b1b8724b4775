//! Parallel threshold sweep and heatmap files.

use std::fs;
use std::io::Write;
use std::path::Path;

use cometh_core::gridsearch::{run_cell, GridError, GridResult, GridSpec};
use cometh_core::metrics::EvalScores;
use cometh_core::synthetic::CanonicalSet;
use rayon::prelude::*;

use crate::error::{Error, Result};

pub const METRICS: [&str; 4] = ["n_contexts", "emd_penalized", "homogeneity", "loss"];

fn metric(scores: &EvalScores, name: &str) -> f64 {
    match name {
        "n_contexts" => scores.n_contexts,
        "emd_penalized" => scores.emd_penalized,
        "homogeneity" => scores.homogeneity,
        "loss" => scores.loss,
        _ => unreachable!("unknown metric {name}"),
    }
}

/// Same result as the serial sweep: cells are independent and reduced by
/// index. `threads = None` uses the global rayon pool.
pub fn parallel_sweep(spec: &GridSpec, canonicals: &CanonicalSet, threads: Option<usize>) -> Result<GridResult> {
    spec.validate().map_err(|e| Error::Config(e.to_string()))?;
    let run = || {
        (0..spec.n_cells())
            .into_par_iter()
            .map(|k| {
                let (a, m) = spec.cell_indices(k);
                run_cell(spec, canonicals, a, m)
            })
            .collect::<Result<Vec<_>, GridError>>()
    };
    let cells = match threads {
        None => run(),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(Error::internal)?
            .install(run),
    }
    .map_err(Error::data)?;
    Ok(GridResult::from_cells(spec, cells))
}

/// Rows are delta_merge values, columns delta_add values. Numbers use the
/// shortest representation that parses back to the same f64.
pub fn heatmap_csv(grid: &GridResult, name: &str) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["delta_merge\\delta_add".to_string()];
    header.extend(grid.delta_add_values.iter().map(f64::to_string));
    w.write_record(&header).map_err(Error::internal)?;
    for (m, dm) in grid.delta_merge_values.iter().enumerate() {
        let mut row = vec![dm.to_string()];
        for a in 0..grid.delta_add_values.len() {
            row.push(metric(&grid.cell(a, m).mean, name).to_string());
        }
        w.write_record(&row).map_err(Error::internal)?;
    }
    w.into_inner().map_err(Error::internal)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub delta_add_values: Vec<f64>,
    pub delta_merge_values: Vec<f64>,
    /// `values[merge][add]`
    pub values: Vec<Vec<f64>>,
}

pub fn read_heatmap(bytes: &[u8]) -> Result<Heatmap> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_reader(bytes);
    let mut records = r.records();
    let parse = |s: &str| s.parse::<f64>().map_err(|e| Error::Data(format!("heatmap value {s:?}: {e}")));
    let header = records.next().ok_or_else(|| Error::Data("empty heatmap".into()))?.map_err(Error::data)?;
    let delta_add_values = header.iter().skip(1).map(parse).collect::<Result<Vec<_>>>()?;
    let mut delta_merge_values = Vec::new();
    let mut values = Vec::new();
    for rec in records {
        let rec = rec.map_err(Error::data)?;
        let mut fields = rec.iter();
        delta_merge_values.push(parse(fields.next().unwrap_or_default())?);
        let row = fields.map(parse).collect::<Result<Vec<_>>>()?;
        if row.len() != delta_add_values.len() {
            return Err(Error::Data("ragged heatmap row".into()));
        }
        values.push(row);
    }
    Ok(Heatmap { delta_add_values, delta_merge_values, values })
}

/// One JSON object per (cell, repeat), in cell order.
pub fn raw_jsonl(grid: &GridResult) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for cell in &grid.cells {
        for (r, scores) in cell.raw.iter().enumerate() {
            let line = serde_json::json!({
                "add_index": cell.add_index,
                "merge_index": cell.merge_index,
                "delta_add": cell.delta_add,
                "delta_merge": cell.delta_merge,
                "repeat": r,
                "scores": scores,
            });
            serde_json::to_writer(&mut out, &line).map_err(Error::internal)?;
            out.write_all(b"\n").map_err(Error::internal)?;
        }
    }
    Ok(out)
}

pub fn write_outputs(dir: &Path, grid: &GridResult) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for name in METRICS {
        let p = dir.join(format!("{name}.csv"));
        fs::write(&p, heatmap_csv(grid, name)?).map_err(|e| Error::io(p, e))?;
    }
    let p = dir.join("raw.jsonl");
    fs::write(&p, raw_jsonl(grid)?).map_err(|e| Error::io(p, e))?;
    let best = grid.argmin_loss();
    let summary = serde_json::json!({
        "argmin_loss": {
            "delta_add": best.delta_add,
            "delta_merge": best.delta_merge,
            "mean": best.mean,
        },
    });
    let p = dir.join("summary.json");
    fs::write(&p, serde_json::to_vec_pretty(&summary).map_err(Error::internal)?).map_err(|e| Error::io(p, e))
}
