//! Pipeline dispatch and on-disk artifacts.
//!
//! Layout of an output directory:
//!
//! ```text
//! config.toml            the config file, byte for byte
//! manifest.toml          schema version, pipeline, CLI overrides, run ids
//! results.csv            one row per run
//! runs/<run_id>/         summary.toml plus pipeline artifacts
//! ```

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use autodesign::amc::{amc_search, pruned_spec, AmcConfig, PruneBudget};
use autodesign::archsearch::{brute_force_frontier, rescore, search, train_standalone, FrontierConfig, SearchConfig};
use autodesign::haq::{haq_search, Budget, BudgetKind, HaqConfig};
use autodesign::hwmodel::{simulate_cost, BitwidthPolicy, CostReport, HardwareSpec};
use autodesign::nncore::{train_sgd, Dataset, Params, SgdConfig};
use autodesign::Error;
use serde::{Deserialize, Serialize};

use crate::config::{BudgetKindSpec, BudgetSpec, ExperimentConfig, LoadedConfig, Pipeline};
use crate::data::generate_dataset;
use crate::error::{BenchError, BenchResult};

/// Version of the results CSV and run-directory layout.
pub const SCHEMA_VERSION: u32 = 1;

pub const RESULTS_HEADER: &str = "run_id,pipeline,hardware,budget_kind,budget,achieved,accuracy,wall_s,seed";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub run_id: String,
    pub pipeline: String,
    pub hardware: String,
    /// `none` for unconstrained runs.
    pub budget_kind: String,
    pub budget: Option<f64>,
    /// Cost of the returned solution in the budget's unit.
    pub achieved: Option<f64>,
    pub accuracy: f64,
    pub wall_s: f64,
    pub seed: u64,
}

/// Per-run facts the report needs beyond the results row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub pipeline: String,
    pub hardware: String,
    pub seed: u64,
    pub accuracy: f64,
    /// Simulated latency of the returned solution on `hardware`.
    pub latency_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub pipeline: Pipeline,
    #[serde(default)]
    pub seed_override: Option<u64>,
    #[serde(default)]
    pub hardware_override: Option<Vec<String>>,
    pub runs: Vec<String>,
}

/// CLI flags that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub hardware: Option<Vec<String>>,
}

/// Output directory: `--out`, else the config's `out`, else `runs/<pipeline>`.
pub fn output_dir(pipeline: Pipeline, loaded: &LoadedConfig, ov: &Overrides) -> PathBuf {
    ov.out
        .clone()
        .or_else(|| loaded.config.out.as_ref().map(|p| loaded.base_dir.join(p)))
        .unwrap_or_else(|| PathBuf::from("runs").join(pipeline.name()))
}

pub fn write_results(path: &Path, rows: &[ResultRow]) -> BenchResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(Error::from)?;
    if rows.is_empty() {
        w.write_record(RESULTS_HEADER.split(',')).map_err(Error::from)?;
    }
    for r in rows {
        w.serialize(r).map_err(Error::from)?;
    }
    w.flush().map_err(Error::from)?;
    Ok(())
}

pub fn read_results(path: &Path) -> BenchResult<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path).map_err(Error::from)?;
    let header: Vec<String> = r.headers().map_err(Error::from)?.iter().map(String::from).collect();
    if header.join(",") != RESULTS_HEADER {
        return Err(Error::Parse(format!("{} has an unexpected header", path.display())).into());
    }
    let rows: Result<Vec<ResultRow>, _> = r.deserialize().collect();
    Ok(rows.map_err(Error::from)?)
}

fn write_toml<T: Serialize>(path: &Path, value: &T) -> BenchResult<()> {
    let text = toml::to_string(value).map_err(Error::from)?;
    fs::write(path, text).map_err(Error::from)?;
    Ok(())
}

fn budget_label(j: usize, b: &BudgetSpec) -> String {
    format!("{}{j}", b.kind.name())
}

/// Shared per-run bookkeeping.
struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    pipeline: Pipeline,
    dir: &'a Path,
    rows: Vec<ResultRow>,
}

struct RunOutput {
    budget_kind: String,
    budget: Option<f64>,
    achieved: Option<f64>,
    accuracy: f64,
    latency_s: f64,
}

impl Ctx<'_> {
    fn run(
        &mut self,
        run_id: String,
        hw: &HardwareSpec,
        seed: u64,
        body: impl FnOnce(&Path) -> autodesign::Result<RunOutput>,
    ) -> BenchResult<()> {
        let run_dir = self.dir.join("runs").join(&run_id);
        fs::create_dir_all(&run_dir).map_err(Error::from)?;
        let start = Instant::now();
        let out = body(&run_dir).map_err(BenchError::in_run(&run_id))?;
        let wall_s = if self.cfg.record_wall_time {
            start.elapsed().as_secs_f64()
        } else {
            0.0
        };
        write_toml(
            &run_dir.join("summary.toml"),
            &RunSummary {
                run_id: run_id.clone(),
                pipeline: self.pipeline.name().into(),
                hardware: hw.name.clone(),
                seed,
                accuracy: out.accuracy,
                latency_s: out.latency_s,
            },
        )?;
        self.rows.push(ResultRow {
            run_id,
            pipeline: self.pipeline.name().into(),
            hardware: hw.name.clone(),
            budget_kind: out.budget_kind,
            budget: out.budget,
            achieved: out.achieved,
            accuracy: out.accuracy,
            wall_s,
            seed,
        });
        Ok(())
    }
}

/// Runs every (seed, hardware, budget) combination of the config in order
/// and writes all artifacts under `dir`. Completed rows are written even
/// when a later run fails.
pub fn run(pipeline: Pipeline, loaded: &LoadedConfig, ov: &Overrides, dir: &Path) -> BenchResult<Vec<ResultRow>> {
    let mut cfg = loaded.config.clone();
    if let Some(s) = ov.seed {
        cfg.seed = s;
    }
    let mut loaded = loaded.clone();
    if let Some(h) = &ov.hardware {
        cfg.hardware = h.clone();
    }
    loaded.config = cfg.clone();
    cfg.validate(pipeline)?;
    let hardware = loaded.hardware()?;
    let data = generate_dataset(&cfg.dataset).map_err(|e| BenchError::Config(e.to_string()))?;

    fs::create_dir_all(dir.join("runs")).map_err(Error::from)?;
    fs::write(dir.join("config.toml"), &loaded.text).map_err(Error::from)?;

    let mut ctx = Ctx {
        cfg: &cfg,
        pipeline,
        dir,
        rows: Vec::new(),
    };
    let status = match pipeline {
        Pipeline::Search => run_search(&mut ctx, &hardware, &data),
        Pipeline::Oracle => run_oracle(&mut ctx, &hardware, &data),
        Pipeline::Prune => run_prune(&mut ctx, &hardware, &data),
        Pipeline::Quantize => run_quantize(&mut ctx, &hardware, &data),
    };
    let rows = ctx.rows;
    write_results(&dir.join("results.csv"), &rows)?;
    write_toml(
        &dir.join("manifest.toml"),
        &Manifest {
            schema_version: SCHEMA_VERSION,
            pipeline,
            seed_override: ov.seed,
            hardware_override: ov.hardware.clone(),
            runs: rows.iter().map(|r| r.run_id.clone()).collect(),
        },
    )?;
    status.map(|()| rows)
}

fn run_search(ctx: &mut Ctx, hardware: &[HardwareSpec], data: &Dataset) -> BenchResult<()> {
    let cfg = ctx.cfg;
    let space = cfg.space.clone().expect("validated");
    let base = cfg.search.clone().expect("validated");
    let targets: Vec<(String, f64)> = if cfg.budgets.is_empty() {
        vec![("latency".into(), base.lat_ref)]
    } else {
        cfg.budgets
            .iter()
            .enumerate()
            .map(|(j, b)| (budget_label(j, b), b.limit.expect("validated")))
            .collect()
    };
    for seed in cfg.seed_list() {
        for hw in hardware {
            let table = space.latency_table(hw);
            for (label, lat_ref) in &targets {
                let run_id = format!("search-{}-{label}-s{seed}", hw.name);
                let scfg = SearchConfig {
                    lat_ref: *lat_ref,
                    seed,
                    ..base.clone()
                };
                let fcfg = FrontierConfig { seed, ..cfg.frontier.clone() };
                ctx.run(run_id, hw, seed, |dir| {
                    let out = search(&space, data, hw, &table, &scfg)?;
                    let latency = table.path_latency(&out.path);
                    let accuracy = train_standalone(&space, &out.path, data, &fcfg)?;
                    fs::write(dir.join("arch.toml"), out.arch.to_toml()?)?;
                    table.write_csv(fs::File::create(dir.join("latency_table.csv"))?)?;
                    let mut w = csv::Writer::from_path(dir.join("log.csv"))?;
                    w.write_record(["epoch", "mean_ce", "expected_latency_s", "probs"])?;
                    for e in &out.log {
                        let probs: Vec<String> = e
                            .probs
                            .iter()
                            .map(|row| row.iter().map(|p| p.to_string()).collect::<Vec<_>>().join(" "))
                            .collect();
                        w.write_record([
                            e.epoch.to_string(),
                            e.mean_ce.to_string(),
                            e.expected_latency_s.to_string(),
                            probs.join(";"),
                        ])?;
                    }
                    w.flush()?;
                    Ok(RunOutput {
                        budget_kind: "latency".into(),
                        budget: Some(*lat_ref),
                        achieved: Some(latency),
                        accuracy,
                        latency_s: latency,
                    })
                })?;
            }
        }
    }
    Ok(())
}

fn run_oracle(ctx: &mut Ctx, hardware: &[HardwareSpec], data: &Dataset) -> BenchResult<()> {
    let cfg = ctx.cfg;
    let space = cfg.space.clone().expect("validated");
    for seed in cfg.seed_list() {
        let fcfg = FrontierConfig { seed, ..cfg.frontier.clone() };
        // training does not depend on hardware: sweep once, rescore per profile
        let mut trained = None;
        for hw in hardware {
            let run_id = format!("oracle-{}-s{seed}", hw.name);
            ctx.run(run_id, hw, seed, |dir| {
                let table = space.latency_table(hw);
                let entries = match &trained {
                    None => {
                        let e = brute_force_frontier(&space, data, &table, &fcfg)?;
                        trained = Some(e.clone());
                        e
                    }
                    Some(e) => rescore(e, &table),
                };
                let mut w = csv::Writer::from_path(dir.join("frontier.csv"))?;
                w.write_record(["index", "ops", "accuracy", "latency_s", "pareto"])?;
                for e in &entries {
                    w.write_record([
                        space.encode(&e.path).to_string(),
                        e.ops.join("+"),
                        e.accuracy.to_string(),
                        e.latency_s.to_string(),
                        e.pareto.to_string(),
                    ])?;
                }
                w.flush()?;
                // the most accurate Pareto member is also the fastest among equals
                let best = entries
                    .iter()
                    .filter(|e| e.pareto)
                    .fold(None::<&autodesign::archsearch::FrontierEntry>, |b, e| match b {
                        Some(b) if b.accuracy >= e.accuracy => Some(b),
                        _ => Some(e),
                    })
                    .ok_or_else(|| Error::Search { epoch: 0, reason: "empty frontier".into() })?;
                Ok(RunOutput {
                    budget_kind: "none".into(),
                    budget: None,
                    achieved: Some(best.latency_s),
                    accuracy: best.accuracy,
                    latency_s: best.latency_s,
                })
            })?;
        }
    }
    Ok(())
}

fn pretrain(cfg: &ExperimentConfig, data: &Dataset, seed: u64, run_id: &str) -> BenchResult<Params> {
    let p = cfg.pretrain.expect("validated");
    let net = cfg.network.as_ref().expect("validated");
    let sgd = SgdConfig {
        lr: p.lr,
        epochs: p.epochs,
        batch_size: p.batch_size,
        seed,
    };
    Ok(train_sgd(net, data, &sgd).map_err(BenchError::in_run(run_id))?.params)
}

fn run_prune(ctx: &mut Ctx, hardware: &[HardwareSpec], data: &Dataset) -> BenchResult<()> {
    let cfg = ctx.cfg;
    let net = cfg.network.clone().expect("validated");
    let base: AmcConfig = cfg.prune.clone().expect("validated");
    for seed in cfg.seed_list() {
        let params = pretrain(cfg, data, seed, &format!("prune-pretrain-s{seed}"))?;
        for hw in hardware {
            for (j, b) in cfg.budgets.iter().enumerate() {
                let run_id = format!("prune-{}-{}-s{seed}", hw.name, budget_label(j, b));
                let acfg = AmcConfig { seed, ..base.clone() };
                ctx.run(run_id, hw, seed, |dir| {
                    let budget = match b.kind {
                        BudgetKindSpec::Macs => PruneBudget::Macs(b.resolve(net.total_macs() as f64, |_| 0.0).floor() as u64),
                        _ => {
                            let full = simulate_cost(&net, &BitwidthPolicy::uniform(&net, 8), hw)?.latency_s;
                            PruneBudget::Latency {
                                seconds: b.resolve(full, |_| 0.0),
                                hw: hw.clone(),
                            }
                        }
                    };
                    let out = amc_search(&net, &params, data, &budget, &acfg)?;
                    fs::write(dir.join("policy.toml"), out.policy.to_toml()?)?;
                    let mut w = csv::Writer::from_path(dir.join("log.csv"))?;
                    w.write_record(["episode", "reward", "cost", "actions"])?;
                    for e in &out.log {
                        let acts: Vec<String> = e.actions.iter().map(|a| a.to_string()).collect();
                        w.write_record([e.episode.to_string(), e.reward.to_string(), e.cost.to_string(), acts.join(";")])?;
                    }
                    w.flush()?;
                    let pruned = pruned_spec(&net, &out.policy)?;
                    let latency = simulate_cost(&pruned, &BitwidthPolicy::uniform(&pruned, 8), hw)?.latency_s;
                    Ok(RunOutput {
                        budget_kind: budget.kind().into(),
                        budget: Some(budget.limit()),
                        achieved: Some(out.cost),
                        accuracy: out.accuracy,
                        latency_s: latency,
                    })
                })?;
            }
        }
    }
    Ok(())
}

/// Per-layer roofline points of the all-8-bit network (`pre`) and of the
/// searched policy (`post`).
pub fn write_roofline(path: &Path, pre: &CostReport, post: &CostReport) -> autodesign::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["layer", "kind", "stage", "w_bits", "a_bits", "intensity", "attained_macs_per_s"])?;
    for (stage, report) in [("pre", pre), ("post", post)] {
        for c in &report.per_layer {
            w.write_record([
                c.layer.to_string(),
                format!("{:?}", c.kind),
                stage.to_string(),
                c.bits.w_bits.to_string(),
                c.bits.a_bits.to_string(),
                c.intensity.to_string(),
                c.attained_macs_per_s.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn run_quantize(ctx: &mut Ctx, hardware: &[HardwareSpec], data: &Dataset) -> BenchResult<()> {
    let cfg = ctx.cfg;
    let net = cfg.network.clone().expect("validated");
    let base: HaqConfig = cfg.quantize.clone().expect("validated");
    for seed in cfg.seed_list() {
        let params = pretrain(cfg, data, seed, &format!("quantize-pretrain-s{seed}"))?;
        for hw in hardware {
            for (j, b) in cfg.budgets.iter().enumerate() {
                let run_id = format!("quantize-{}-{}-s{seed}", hw.name, budget_label(j, b));
                let hcfg = HaqConfig { seed, ..base.clone() };
                ctx.run(run_id, hw, seed, |dir| {
                    let kind = match b.kind {
                        BudgetKindSpec::Latency => BudgetKind::Latency,
                        BudgetKindSpec::Energy => BudgetKind::Energy,
                        _ => BudgetKind::ModelSize,
                    };
                    let pre = simulate_cost(&net, &BitwidthPolicy::uniform(&net, 8), hw)?;
                    let uniform = |bits| {
                        simulate_cost(&net, &BitwidthPolicy::uniform(&net, bits), hw).map(|c| kind.measure(&c))
                    };
                    let at_bits = match b.uniform_bits {
                        Some(bits) => uniform(bits)?,
                        None => 0.0,
                    };
                    let budget = Budget::new(kind, b.resolve(kind.measure(&pre), |_| at_bits))?;
                    let out = haq_search(&net, &params, data, hw, &budget, &hcfg)?;
                    fs::write(dir.join("policy.toml"), out.policy.to_toml()?)?;
                    let mut w = csv::Writer::from_path(dir.join("log.csv"))?;
                    w.write_record(["episode", "reward", "cost", "actions"])?;
                    for e in &out.log {
                        let acts: Vec<String> = e.actions.iter().map(|(a, c)| format!("{a}/{c}")).collect();
                        w.write_record([e.episode.to_string(), e.reward.to_string(), e.cost.to_string(), acts.join(";")])?;
                    }
                    w.flush()?;
                    write_roofline(&dir.join("roofline.csv"), &pre, &out.cost)?;
                    Ok(RunOutput {
                        budget_kind: kind.name().into(),
                        budget: Some(budget.limit),
                        achieved: Some(kind.measure(&out.cost)),
                        accuracy: out.accuracy,
                        latency_s: out.cost.latency_s,
                    })
                })?;
            }
        }
    }
    Ok(())
}
