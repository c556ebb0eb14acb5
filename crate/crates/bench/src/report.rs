//! Summaries over a completed output directory. Everything is written to
//! `<dir>/report/`; run artifacts are only read.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use autodesign::archsearch::pareto_flags;
use autodesign::Error;

use crate::error::BenchResult;
use crate::run::{read_results, ResultRow, RunSummary};

#[derive(Debug, Clone, PartialEq)]
pub struct FrontierPoint {
    pub run_id: String,
    pub pipeline: String,
    pub seed: u64,
    pub latency_s: f64,
    pub accuracy: f64,
    pub pareto: bool,
}

/// Files produced by [`report`].
#[derive(Debug, Clone, PartialEq)]
pub struct ReportFiles {
    pub summary: PathBuf,
    /// One per hardware profile, keyed by profile name.
    pub frontiers: BTreeMap<String, PathBuf>,
    /// Present when some run recorded roofline points.
    pub roofline: Option<PathBuf>,
}

/// Accuracy-vs-latency points of one profile, ascending by latency (ties
/// by run id), with Pareto flags.
pub fn frontier(points: &[(String, String, u64, f64, f64)]) -> Vec<FrontierPoint> {
    let flags = pareto_flags(&points.iter().map(|p| (p.4, p.3)).collect::<Vec<_>>());
    let mut out: Vec<FrontierPoint> = points
        .iter()
        .zip(flags)
        .map(|(p, pareto)| FrontierPoint {
            run_id: p.0.clone(),
            pipeline: p.1.clone(),
            seed: p.2,
            latency_s: p.3,
            accuracy: p.4,
            pareto,
        })
        .collect();
    out.sort_by(|a, b| a.latency_s.total_cmp(&b.latency_s).then_with(|| a.run_id.cmp(&b.run_id)));
    out
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6e}")).unwrap_or_else(|| "-".into())
}

pub fn markdown_table(rows: &[ResultRow]) -> String {
    let mut s = String::from(
        "| run_id | pipeline | hardware | budget_kind | budget | achieved | accuracy | seed |\n\
         |---|---|---|---|---|---|---|---|\n",
    );
    for r in rows {
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {} | {} | {:.4} | {} |",
            r.run_id,
            r.pipeline,
            r.hardware,
            r.budget_kind,
            opt(r.budget),
            opt(r.achieved),
            r.accuracy,
            r.seed
        );
    }
    s
}

pub fn report(dir: &Path) -> BenchResult<ReportFiles> {
    let results = dir.join("results.csv");
    if !results.exists() {
        return Err(Error::Usage(format!("{} holds no results.csv", dir.display())).into());
    }
    let rows = read_results(&results)?;
    if rows.is_empty() {
        return Err(Error::Usage(format!("{} holds no completed runs", dir.display())).into());
    }
    let out = dir.join("report");
    fs::create_dir_all(&out).map_err(Error::from)?;

    let summary = out.join("summary.md");
    fs::write(&summary, markdown_table(&rows)).map_err(Error::from)?;

    let mut by_hw: BTreeMap<String, Vec<(String, String, u64, f64, f64)>> = BTreeMap::new();
    let mut roofline_rows: Vec<Vec<String>> = Vec::new();
    for r in &rows {
        let run_dir = dir.join("runs").join(&r.run_id);
        let text = fs::read_to_string(run_dir.join("summary.toml")).map_err(Error::from)?;
        let s: RunSummary = toml::from_str(&text).map_err(Error::from)?;
        by_hw
            .entry(r.hardware.clone())
            .or_default()
            .push((r.run_id.clone(), r.pipeline.clone(), r.seed, s.latency_s, r.accuracy));
        let roof = run_dir.join("roofline.csv");
        if roof.exists() {
            let mut rd = csv::Reader::from_path(&roof).map_err(Error::from)?;
            for rec in rd.records() {
                let rec = rec.map_err(Error::from)?;
                let mut row = vec![r.run_id.clone(), r.hardware.clone()];
                row.extend(rec.iter().map(String::from));
                roofline_rows.push(row);
            }
        }
    }

    let mut frontiers = BTreeMap::new();
    for (hw, pts) in &by_hw {
        let path = out.join(format!("frontier_{hw}.csv"));
        let mut w = csv::Writer::from_path(&path).map_err(Error::from)?;
        w.write_record(["run_id", "pipeline", "seed", "latency_s", "accuracy", "pareto"])
            .map_err(Error::from)?;
        for p in frontier(pts) {
            w.write_record([
                p.run_id,
                p.pipeline,
                p.seed.to_string(),
                p.latency_s.to_string(),
                p.accuracy.to_string(),
                p.pareto.to_string(),
            ])
            .map_err(Error::from)?;
        }
        w.flush().map_err(Error::from)?;
        frontiers.insert(hw.clone(), path);
    }

    let roofline = if roofline_rows.is_empty() {
        None
    } else {
        let path = out.join("roofline.csv");
        let mut w = csv::Writer::from_path(&path).map_err(Error::from)?;
        w.write_record([
            "run_id", "hardware", "layer", "kind", "stage", "w_bits", "a_bits", "intensity", "attained_macs_per_s",
        ])
        .map_err(Error::from)?;
        for row in roofline_rows {
            w.write_record(row).map_err(Error::from)?;
        }
        w.flush().map_err(Error::from)?;
        Some(path)
    };

    Ok(ReportFiles {
        summary,
        frontiers,
        roofline,
    })
}
