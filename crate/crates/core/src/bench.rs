//! Benchmark campaigns, aggregation and training-data export.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::contact::CpfParams;
use crate::dynamics::{sweep_outcome, DynParams, EdgeOutcome};
use crate::error::{Error, Result};
use crate::executive::{generate_instance_with, run_episode_with, EpisodeReport, InstanceParams, NoiseMode, Scenario};
use crate::kinematics::{edge_in_bounds, pose_in_bounds, robot_cells, Action, ArmModel, Config};
use crate::occupancy::wire::{write_record, Record};
use crate::occupancy::{OccupancyEstimate, PredictorConfig, PredictorKind};
use crate::planner::{CostMode, CostModel, SweepCache};
use crate::rng::{streams, SeedStream};
use crate::workspace::{generate_scene, CellSet, Domain, GridSpec, SceneParams};

pub const CSV_HEADER: &str = "domain,variant,success_rate,num_iters,plan_s,exec_s,pred_s,contact_s,total_s";

/// One planner configuration compared in a campaign.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Variant {
    pub mode: CostMode,
    #[serde(default = "no_predictor")]
    pub predictor: PredictorKind,
}

fn no_predictor() -> PredictorKind {
    PredictorKind::None
}

impl Variant {
    /// Short label such as `chs` or `cmax+structural`.
    pub fn label(&self) -> String {
        let mode = match self.mode {
            CostMode::Chs => "chs",
            CostMode::Cmax => "cmax",
            CostMode::EstimateOnly => "estimate",
        };
        match self.predictor {
            PredictorKind::None => mode.to_string(),
            PredictorKind::Structural => format!("{mode}+structural"),
            PredictorKind::External => format!("{mode}+external"),
        }
    }

    pub fn parse(label: &str) -> Result<Self> {
        let (mode, pred) = label.split_once('+').unwrap_or((label, "none"));
        let mode = match mode {
            "chs" => CostMode::Chs,
            "cmax" => CostMode::Cmax,
            "estimate" => CostMode::EstimateOnly,
            other => return Err(Error::InvalidParams(format!("unknown cost mode {other:?}"))),
        };
        let predictor = match pred {
            "none" => PredictorKind::None,
            "structural" => PredictorKind::Structural,
            "external" => PredictorKind::External,
            other => return Err(Error::InvalidParams(format!("unknown predictor {other:?}"))),
        };
        Ok(Self { mode, predictor })
    }
}

/// Settings shared by every episode of a campaign. Unset fields keep the
/// crate defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioOverrides {
    pub arm: Option<ArmModel>,
    pub grid: Option<GridSpec>,
    #[serde(rename = "dyn")]
    pub dyn_params: Option<DynParams>,
    pub cpf: Option<CpfParams>,
    /// Predictor settings; the kind comes from the variant.
    pub predictor: Option<PredictorConfig>,
    /// Cost weights; the mode comes from the variant.
    pub cost_model: Option<CostModel>,
    pub max_iterations: Option<usize>,
    pub noise_mode: Option<NoiseMode>,
    pub spread_radius: Option<usize>,
    pub unknown_prior: Option<f64>,
    pub pipe_count_range: Option<[u32; 2]>,
    pub partition_count_range: Option<[u32; 2]>,
    pub object_count_range: Option<[u32; 2]>,
    pub pipe_thickness: Option<u32>,
    pub pipe_max_tilt_deg: Option<f64>,
    /// Drop every obstacle; useful for smoke tests.
    pub empty_world: bool,
}

pub fn desk_grid() -> GridSpec {
    GridSpec::planar(32, 32, 0.03).expect("valid grid")
}

impl ScenarioOverrides {
    pub fn grid(&self) -> GridSpec {
        self.grid.clone().unwrap_or_else(desk_grid)
    }

    pub fn arm(&self) -> ArmModel {
        self.arm.clone().unwrap_or_else(ArmModel::reference)
    }

    pub fn instance_params(&self, domain: Domain) -> InstanceParams {
        let mut p = InstanceParams::for_domain(domain);
        let s = &mut p.scene;
        if self.empty_world {
            s.pipe_count_range = [0, 0];
            s.partition_count_range = [0, 0];
            s.object_count_range = [0, 0];
        }
        if let Some(r) = self.pipe_count_range {
            s.pipe_count_range = r;
        }
        if let Some(r) = self.partition_count_range {
            s.partition_count_range = r;
        }
        if let Some(r) = self.object_count_range {
            s.object_count_range = r;
        }
        if let Some(t) = self.pipe_thickness {
            s.pipe_thickness = t;
        }
        if let Some(t) = self.pipe_max_tilt_deg {
            s.pipe_max_tilt_deg = t;
        }
        p
    }

    /// The full scenario for one episode of one campaign cell.
    pub fn scenario(&self, domain: Domain, variant: Variant, seed: u64) -> Result<Scenario> {
        self.scenario_with(domain, variant, seed, &SweepCache::new())
    }

    pub fn scenario_with(&self, domain: Domain, variant: Variant, seed: u64, cache: &SweepCache) -> Result<Scenario> {
        let arm = self.arm();
        let inst = generate_instance_with(&self.instance_params(domain), &arm, &self.grid(), seed, cache)?;
        let mut sc = Scenario::new(arm, inst.world, inst.start, inst.goal);
        if let Some(d) = &self.dyn_params {
            sc.dyn_params = d.clone();
        }
        if let Some(c) = &self.cpf {
            sc.cpf = c.clone();
        }
        if let Some(p) = &self.predictor {
            sc.predictor = p.clone();
        }
        sc.predictor.kind = variant.predictor;
        if let Some(m) = &self.cost_model {
            sc.cost_model = m.clone();
        }
        sc.cost_model.mode = variant.mode;
        if let Some(n) = self.max_iterations {
            sc.max_iterations = n;
        }
        if let Some(n) = self.noise_mode {
            sc.noise_mode = n;
        }
        if let Some(r) = self.spread_radius {
            sc.spread_radius = r;
        }
        if let Some(p) = self.unknown_prior {
            sc.unknown_prior = p;
        }
        Ok(sc)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkConfig {
    pub domains: Vec<Domain>,
    pub planner_variants: Vec<Variant>,
    pub episodes_per_cell: usize,
    pub base_seed: u64,
    pub output_dir: PathBuf,
    pub scenario: ScenarioOverrides,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            domains: vec![Domain::Pipe, Domain::Shelf],
            planner_variants: ["chs", "chs+structural", "cmax", "cmax+structural", "estimate", "estimate+structural"]
                .iter()
                .map(|l| Variant::parse(l).expect("preset labels parse"))
                .collect(),
            episodes_per_cell: 200,
            base_seed: 0,
            output_dir: PathBuf::from("results"),
            scenario: ScenarioOverrides::default(),
        }
    }
}

impl BenchmarkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.episodes_per_cell < 1 {
            return Err(Error::InvalidParams("episodes_per_cell must be >= 1".into()));
        }
        if self.planner_variants.is_empty() || self.domains.is_empty() {
            return Err(Error::InvalidParams("need at least one domain and one planner variant".into()));
        }
        Ok(())
    }
}

/// One line of the per-episode JSON-lines output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub domain: Domain,
    pub variant: String,
    pub episode: usize,
    pub seed: u64,
    pub report: EpisodeReport,
}

/// Per-cell means in the CSV column order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub domain: Domain,
    pub variant: String,
    pub success_rate: f64,
    pub num_iters: f64,
    pub plan_s: f64,
    pub exec_s: f64,
    pub pred_s: f64,
    pub contact_s: f64,
    pub total_s: f64,
}

/// Runs every (domain, variant, episode) triple. Episode `i` of every cell
/// uses seed `base_seed + i`, so all variants face the same instances.
pub fn run_campaign(cfg: &BenchmarkConfig) -> Result<Vec<EpisodeRecord>> {
    cfg.validate()?;
    let jobs: Vec<(Domain, Variant, usize)> = cfg
        .domains
        .iter()
        .flat_map(|&d| {
            cfg.planner_variants.iter().flat_map(move |&v| (0..cfg.episodes_per_cell).map(move |i| (d, v, i)))
        })
        .collect();
    let cache = SweepCache::new();
    jobs.par_iter()
        .map(|&(domain, variant, episode)| {
            let seed = cfg.base_seed.wrapping_add(episode as u64);
            let sc = cfg.scenario.scenario_with(domain, variant, seed, &cache)?;
            let report = run_episode_with(&sc, SeedStream::derive(seed, 1), &cache)?;
            Ok(EpisodeRecord { domain, variant: variant.label(), episode, seed, report })
        })
        .collect()
}

/// Aggregates records into one summary per (domain, variant), in first-seen
/// order. Iterations are averaged over all episodes, failures included.
pub fn summarize(records: &[EpisodeRecord]) -> Vec<CellSummary> {
    let mut keys: Vec<(Domain, String)> = Vec::new();
    for r in records {
        let k = (r.domain, r.variant.clone());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(domain, variant)| {
            let rs: Vec<&EpisodeReport> =
                records.iter().filter(|r| r.domain == domain && r.variant == variant).map(|r| &r.report).collect();
            let n = rs.len() as f64;
            let mean = |f: fn(&EpisodeReport) -> f64| rs.iter().map(|r| f(r)).sum::<f64>() / n;
            CellSummary {
                domain,
                variant,
                success_rate: mean(|r| r.success as u8 as f64),
                num_iters: mean(|r| r.num_iters as f64),
                plan_s: mean(|r| r.plan_s),
                exec_s: mean(|r| r.exec_s),
                pred_s: mean(|r| r.pred_s),
                contact_s: mean(|r| r.contact_s),
                total_s: mean(|r| r.total_s),
            }
        })
        .collect()
}

pub fn to_csv(rows: &[CellSummary]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.domain, r.variant, r.success_rate, r.num_iters, r.plan_s, r.exec_s, r.pred_s, r.contact_s, r.total_s
        )
        .expect("string write");
    }
    out
}

pub fn to_json_lines(records: &[EpisodeRecord]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

/// Runs a campaign and writes `episodes.jsonl` and `summary.csv` into the
/// output directory. Returns the two paths.
pub fn run_benchmark(cfg: &BenchmarkConfig) -> Result<(PathBuf, PathBuf)> {
    let records = run_campaign(cfg)?;
    fs::create_dir_all(&cfg.output_dir)?;
    let jsonl = cfg.output_dir.join("episodes.jsonl");
    let csv = cfg.output_dir.join("summary.csv");
    fs::write(&jsonl, to_json_lines(&records)?)?;
    fs::write(&csv, to_csv(&summarize(&records)))?;
    Ok((jsonl, csv))
}

/// One training example: a partial estimate after a few random actions, and
/// labels marking only the objects the arm touched.
pub fn dataset_record(domain: Domain, arm: &ArmModel, spec: &GridSpec, seed: u64) -> Result<Record> {
    let mut rng = SeedStream::new(seed, streams::DATASET);
    let (start, world) = loop {
        let sub = rng.next_u64();
        let mut pick = SeedStream::new(sub, streams::INSTANCE);
        let q =
            Config::new((0..arm.num_links()).map(|_| pick.int_range(0, arm.steps_per_joint as i64) as i32).collect());
        if !pose_in_bounds(arm, &arm.angles(&q), spec) {
            continue;
        }
        let scene = SceneParams { keep_free: robot_cells(arm, &q, spec), ..SceneParams::for_domain(domain) };
        match generate_scene(&scene, spec, sub) {
            Ok(w) => break (q, w),
            Err(Error::InfeasibleScene(_)) => continue,
            Err(e) => return Err(e),
        }
    };
    let dynp = DynParams::default();
    let mut est = OccupancyEstimate::new(spec.clone());
    est.certify_free(&robot_cells(arm, &start, spec));
    let mut touched = CellSet::new();
    let actions = rng.int_range(1, 7) as u32;
    let mut q = start;
    for k in 0..actions {
        let moves: Vec<Config> = Action::all(arm.num_links())
            .map(|a| q.apply(a))
            .filter(|n| arm.is_valid_config(n) && edge_in_bounds(arm, &q, n, spec))
            .collect();
        if moves.is_empty() {
            break;
        }
        let next = moves[rng.index(moves.len())].clone();
        let trace = sweep_outcome(&world, arm, &dynp, &q, &next, SeedStream::derive(seed, k as u64))?;
        est.certify_free(&trace.certified_cells);
        match trace.outcome {
            EdgeOutcome::Completed => q = next,
            EdgeOutcome::ContactAt(c) => {
                est.mark_occupied(c.cell);
                if let Some(&id) = world.object_ids.get(&c.cell) {
                    touched.extend_from(&world.object_cells(id));
                } else {
                    touched.insert(c.cell);
                }
            }
        }
    }
    let labels = (0..spec.num_cells()).map(|c| touched.contains(c) as u8).collect();
    Ok(Record { dims: spec.dims.clone(), actions, seed, estimate: est.to_half_units(), labels })
}

/// Writes `count` framed records; record `i` uses seed `derive(seed, i)`.
pub fn export_dataset(domain: Domain, count: usize, seed: u64, out: &Path) -> Result<()> {
    if count < 1 {
        return Err(Error::InvalidParams("count must be >= 1".into()));
    }
    let arm = ArmModel::reference();
    let spec = desk_grid();
    let records: Vec<Record> = (0..count)
        .into_par_iter()
        .map(|i| dataset_record(domain, &arm, &spec, SeedStream::derive(seed, i as u64)))
        .collect::<Result<_>>()?;
    let mut w = std::io::BufWriter::new(fs::File::create(out)?);
    for r in &records {
        write_record(&mut w, r)?;
    }
    w.flush()?;
    Ok(())
}
