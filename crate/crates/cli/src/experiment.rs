//! Runs the points of an experiment, aggregates replications and writes the
//! CSV outputs.

use std::collections::hash_map::Entry;
use std::collections::HashMap;
use std::io;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use rayon::prelude::*;
use vardis_lab::analysis::{
    capacity_search, compute_metrics, expected_gap_model, pair_metrics, AnalysisError,
    CapacityOutcome, MetricSummary, ReplicationMetrics,
};
use vardis_lab::bp::BeaconTiming;
use vardis_lab::dtmc::{self, ChainState};
use vardis_lab::sim::deployment::Deployment;
use vardis_lab::sim::{self, InvariantReport, ProtocolConfig, QueueSample, SimConfig, TrafficModel};
use vardis_lab::vardis::VarDisConfig;

use crate::config::{CapacityName, DeploymentName, ExperimentConfig, Point, ProtocolName, TimingName};
use crate::rsm_table::{self, RsmInputRow};

#[derive(Debug, Clone, Copy)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub replications: Option<usize>,
    /// Multiplies warm-up and duration.
    pub scale: f64,
    /// Worker threads; 0 picks one per core.
    pub jobs: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            seed: None,
            replications: None,
            scale: 1.0,
            jobs: 0,
        }
    }
}

impl RunOptions {
    fn seed(&self, cfg: &ExperimentConfig) -> u64 {
        self.seed.unwrap_or(cfg.seed)
    }

    fn replications(&self, cfg: &ExperimentConfig) -> usize {
        self.replications.unwrap_or(cfg.replications)
    }
}

#[derive(Debug, Clone)]
pub struct PairResult {
    pub producer: usize,
    pub consumer: usize,
    pub per_replication: Vec<ReplicationMetrics>,
    pub summary: Result<MetricSummary, AnalysisError>,
}

#[derive(Debug, Clone)]
pub struct PointResult {
    pub point: Point,
    pub nodes: usize,
    pub spacing_m: f64,
    pub pairs: Vec<PairResult>,
    /// `(replication, sample)` for every recorded queue sample.
    pub queues: Vec<(usize, QueueSample)>,
    pub invariants: InvariantReport,
    pub gap_model: Option<f64>,
    pub dtmc: Option<(f64, f64)>,
}

impl PointResult {
    /// Metrics of the first measured pair (the reference pair by default).
    pub fn reference(&self) -> Option<&MetricSummary> {
        self.pairs.first().and_then(|p| p.summary.as_ref().ok())
    }
}

/// Simulation input and deployment for one point.
pub fn sim_config(cfg: &ExperimentConfig, point: &Point, scale: f64) -> Result<(SimConfig, Deployment)> {
    let d = Deployment::new(point.deployment_kind(), point.k).map_err(anyhow::Error::msg)?;
    let loss = d.loss_matrix(point.per_curve.curve());
    let protocol = match point.protocol {
        ProtocolName::Flooding => ProtocolConfig::Flooding {
            rep_cnt: point.rep_cnt,
            mean_backoff_s: point.mean_backoff_s,
        },
        kind => ProtocolConfig::VarDis {
            rep_cnt: point.rep_cnt,
            max_beacon_size: point.max_beacon_size,
            beacon: match point.beacon_timing {
                TimingName::Periodic => BeaconTiming::periodic(point.beta_hz, point.jitter),
                TimingName::Exponential => BeaconTiming::exponential(point.beta_hz),
            },
            vardis: VarDisConfig {
                max_summaries: point.max_sum_cnt,
                summaries_enabled: point.summaries,
                always_repeat: kind == ProtocolName::VardisAlwaysRepeat,
                tombstone_ttl: VarDisConfig::tombstone_ttl_for(point.rep_cnt, point.beta_hz),
            },
        },
    };
    let producers = cfg
        .traffic
        .producers
        .clone()
        .unwrap_or_else(|| d.default_producers());
    let tracked = match &cfg.traffic.pairs {
        Some(pairs) => pairs.iter().map(|[p, c]| (*p, *c)).collect(),
        None => vec![(d.reference_producer(), d.reference_consumer())],
    };
    let duration_s = cfg.duration_s * scale;
    let queue_sample_times = if point.protocol == ProtocolName::Flooding {
        cfg.output.queue_sample_times.clone()
    } else {
        Vec::new()
    };
    let sim = SimConfig {
        loss,
        protocol,
        traffic: TrafficModel {
            producers,
            period_s: point.lambda_s,
            distribution: point.traffic.distribution(),
        },
        tracked,
        duration_s,
        warmup_s: cfg.warmup_s * scale,
        queue_sample_times,
    };
    Ok((sim, d))
}

struct ReplicationResult {
    pairs: Vec<ReplicationMetrics>,
    queues: Vec<QueueSample>,
    invariants: InvariantReport,
}

fn run_replication(sim: &SimConfig, seed: u64, replication: usize) -> Result<ReplicationResult> {
    let out = sim::run(sim, seed, replication as u64)?;
    let pairs = sim
        .tracked
        .iter()
        .map(|&(p, c)| {
            let issued = out.issued.get(&(p as u64)).copied().unwrap_or(0);
            pair_metrics(&out.samples, p as u64, c as u64, issued)
        })
        .collect();
    Ok(ReplicationResult {
        pairs,
        queues: out.queue_samples,
        invariants: out.invariants,
    })
}

fn add_invariants(a: &mut InvariantReport, b: &InvariantReport) {
    a.seqno_regressions += b.seqno_regressions;
    a.duplicate_deliveries += b.duplicate_deliveries;
    a.repetition_violations += b.repetition_violations;
}

/// Runs all replications of one point, replications in parallel.
pub fn run_point(cfg: &ExperimentConfig, point: &Point, opts: &RunOptions) -> Result<PointResult> {
    let (sim, d) = sim_config(cfg, point, opts.scale)?;
    let seed = opts.seed(cfg);
    let reps: Vec<ReplicationResult> = (0..opts.replications(cfg))
        .into_par_iter()
        .map(|r| run_replication(&sim, seed, r))
        .collect::<Result<_>>()?;
    let mut invariants = InvariantReport::default();
    let mut queues = Vec::new();
    for (r, rep) in reps.iter().enumerate() {
        add_invariants(&mut invariants, &rep.invariants);
        queues.extend(rep.queues.iter().map(|q| (r, *q)));
    }
    let pairs = sim
        .tracked
        .iter()
        .enumerate()
        .map(|(i, &(producer, consumer))| {
            let per_replication: Vec<ReplicationMetrics> = reps.iter().map(|r| r.pairs[i]).collect();
            PairResult {
                producer,
                consumer,
                summary: compute_metrics(&per_replication),
                per_replication,
            }
        })
        .collect();
    let gap_model = match (cfg.output.gap_model, point.deployment, point.per) {
        (true, DeploymentName::LineFixed, Some(per)) => {
            expected_gap_model(per, u32::from(point.rep_cnt), point.k).ok()
        }
        _ => None,
    };
    let dtmc = if cfg.output.dtmc && d.node_count() <= dtmc::MAX_NODES {
        sim.tracked.first().and_then(|&(producer, _)| {
            let steps = dtmc::expected_hitting_steps(&sim.loss, ChainState(1 << producer)).ok()?;
            Some((steps, dtmc::expected_delay_seconds(steps, d.node_count(), point.beta_hz)))
        })
    } else {
        None
    };
    Ok(PointResult {
        point: point.clone(),
        nodes: d.node_count(),
        spacing_m: d.spacing(),
        pairs,
        queues,
        invariants,
        gap_model,
        dtmc,
    })
}

fn in_pool<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .context("building worker pool")?;
    Ok(pool.install(f))
}

/// Runs every sweep point of `cfg`.
pub fn run_points(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Vec<PointResult>> {
    let points = cfg.points();
    in_pool(opts.jobs, || {
        points
            .par_iter()
            .map(|p| run_point(cfg, p, opts))
            .collect::<Result<Vec<_>>>()
    })?
}

#[derive(Debug, Clone)]
pub struct CapacityRow {
    /// The point with `lambda_s` left at its base value.
    pub point: Point,
    pub kind: CapacityName,
    pub outcome: CapacityOutcome,
    pub evaluated: usize,
}

fn capacity_bases(cfg: &ExperimentConfig) -> Vec<Point> {
    let mut bases: Vec<Point> = Vec::new();
    for mut p in cfg.points() {
        p.lambda_s = cfg.traffic.lambda_s;
        if !bases.contains(&p) {
            bases.push(p);
        }
    }
    bases
}

/// Capacity search for every non-`lambda` point of `cfg`. Also returns the
/// metrics of every evaluated update period.
pub fn run_capacity(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<(Vec<CapacityRow>, Vec<PointResult>)> {
    let section = cfg.capacity.clone().unwrap_or_default();
    let bases = capacity_bases(cfg);
    let per_base = in_pool(opts.jobs, || {
        bases
            .par_iter()
            .map(|base| {
                let mut cache: HashMap<usize, PointResult> = HashMap::new();
                let mut failure = None;
                let mut rows = Vec::new();
                for &kind in &section.kinds {
                    let mut evaluated = 0;
                    let outcome = capacity_search(&section.lambda_grid, kind.kind(), |lambda| {
                        evaluated += 1;
                        let i = section.lambda_grid.iter().position(|l| *l == lambda).unwrap();
                        if let Entry::Vacant(slot) = cache.entry(i) {
                            let mut p = base.clone();
                            p.lambda_s = lambda;
                            match run_point(cfg, &p, opts) {
                                Ok(r) => {
                                    slot.insert(r);
                                }
                                Err(e) => {
                                    failure.get_or_insert(e);
                                    return Err(AnalysisError::NoSamples);
                                }
                            }
                        }
                        cache[&i].pairs[0].summary.clone()
                    })
                    .expect("grid validated");
                    rows.push(CapacityRow {
                        point: base.clone(),
                        kind,
                        outcome,
                        evaluated,
                    });
                }
                if let Some(e) = failure {
                    return Err(e);
                }
                let mut evaluated: Vec<(usize, PointResult)> = cache.into_iter().collect();
                evaluated.sort_by_key(|(i, _)| *i);
                Ok((rows, evaluated.into_iter().map(|(_, r)| r).collect::<Vec<_>>()))
            })
            .collect::<Result<Vec<_>>>()
    })??;
    let mut rows = Vec::new();
    let mut points = Vec::new();
    for (r, p) in per_base {
        rows.extend(r);
        points.extend(p);
    }
    Ok((rows, points))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |v| v.to_string())
}

const POINT_COLUMNS: [&str; 16] = [
    "deployment",
    "k",
    "nodes",
    "per",
    "spacing_m",
    "per_curve",
    "protocol",
    "rep_cnt",
    "beta_hz",
    "beacon_timing",
    "jitter",
    "max_sum_cnt",
    "summaries",
    "max_beacon_size",
    "lambda_s",
    "traffic",
];

fn point_fields(r: &PointResult) -> Vec<String> {
    let p = &r.point;
    vec![
        p.deployment.as_str().into(),
        p.k.to_string(),
        r.nodes.to_string(),
        p.per.filter(|_| p.deployment.is_fixed()).map_or(String::new(), |v| v.to_string()),
        r.spacing_m.to_string(),
        p.per_curve.as_str().into(),
        p.protocol.as_str().into(),
        p.rep_cnt.to_string(),
        p.beta_hz.to_string(),
        p.beacon_timing.as_str().into(),
        p.jitter.to_string(),
        p.max_sum_cnt.to_string(),
        p.summaries.to_string(),
        p.max_beacon_size.to_string(),
        p.lambda_s.to_string(),
        p.traffic.as_str().into(),
    ]
}

pub fn write_metrics_csv<W: io::Write>(results: &[PointResult], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<&str> = vec!["point"];
    header.extend(POINT_COLUMNS);
    header.extend([
        "producer",
        "consumer",
        "replications",
        "issued",
        "received",
        "mean_delay_s",
        "delay_ci95_s",
        "mean_gap",
        "gap_ci95",
        "pct_received",
        "pct_ci95",
        "invariant_violations",
        "gap_model",
        "dtmc_steps",
        "dtmc_delay_s",
    ]);
    w.write_record(&header)?;
    for (i, r) in results.iter().enumerate() {
        let violations = r.invariants.seqno_regressions
            + r.invariants.duplicate_deliveries
            + r.invariants.repetition_violations;
        for pair in &r.pairs {
            let mut row = vec![i.to_string()];
            row.extend(point_fields(r));
            row.push(pair.producer.to_string());
            row.push(pair.consumer.to_string());
            row.push(pair.per_replication.len().to_string());
            row.push(pair.per_replication.iter().map(|m| m.issued).sum::<u64>().to_string());
            row.push(pair.per_replication.iter().map(|m| m.received).sum::<u64>().to_string());
            let s = pair.summary.as_ref().ok();
            row.push(fmt_opt(s.map(|s| s.mean_delay)));
            row.push(fmt_opt(s.and_then(|s| s.delay_ci95)));
            row.push(fmt_opt(s.and_then(|s| s.mean_gap)));
            row.push(fmt_opt(s.and_then(|s| s.gap_ci95)));
            row.push(fmt_opt(s.and_then(|s| s.pct_received)));
            row.push(fmt_opt(s.and_then(|s| s.pct_ci95)));
            row.push(violations.to_string());
            row.push(fmt_opt(r.gap_model));
            row.push(fmt_opt(r.dtmc.map(|d| d.0)));
            row.push(fmt_opt(r.dtmc.map(|d| d.1)));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_queues_csv<W: io::Write>(results: &[PointResult], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["point", "k", "protocol", "rep_cnt", "lambda_s", "replication", "time_s", "mean_queue_len", "max_queue_len"])?;
    for (i, r) in results.iter().enumerate() {
        for (rep, q) in &r.queues {
            w.write_record([
                i.to_string(),
                r.point.k.to_string(),
                r.point.protocol.as_str().into(),
                r.point.rep_cnt.to_string(),
                r.point.lambda_s.to_string(),
                rep.to_string(),
                q.time.to_string(),
                q.mean_len.to_string(),
                q.max_len.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_capacity_csv<W: io::Write>(rows: &[CapacityRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["deployment", "k", "nodes", "protocol", "rep_cnt", "beta_hz", "max_sum_cnt", "max_beacon_size", "kind", "feasible", "lambda_s", "rate_hz", "evaluated"])?;
    for r in rows {
        let p = &r.point;
        let nodes = Deployment::new(p.deployment_kind(), p.k).map_or(0, |d| d.node_count());
        let (feasible, lambda) = match r.outcome {
            CapacityOutcome::Feasible(l) => (true, l.to_string()),
            CapacityOutcome::Infeasible => (false, String::new()),
        };
        w.write_record([
            p.deployment.as_str().to_string(),
            p.k.to_string(),
            nodes.to_string(),
            p.protocol.as_str().into(),
            p.rep_cnt.to_string(),
            p.beta_hz.to_string(),
            p.max_sum_cnt.to_string(),
            p.max_beacon_size.to_string(),
            r.kind.as_str().into(),
            feasible.to_string(),
            lambda,
            r.outcome.rate_hz().to_string(),
            r.evaluated.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Builds RSM input rows from point results for the configured factors.
pub fn rsm_rows(cfg: &ExperimentConfig, results: &[PointResult]) -> Vec<rsm_table::RsmRow> {
    let Some(section) = &cfg.rsm else {
        return Vec::new();
    };
    let swept: Vec<&str> = crate::config::SWEEP_FIELDS
        .iter()
        .copied()
        .filter(|f| is_swept(cfg, f))
        .collect();
    let groups: Vec<&str> = swept
        .iter()
        .copied()
        .filter(|f| !section.factors.iter().any(|x| x == f))
        .collect();
    let mut out = Vec::new();
    for &response in &section.responses {
        let rows: Vec<RsmInputRow> = results
            .iter()
            .filter_map(|r| {
                let m = r.reference()?;
                let y = match response {
                    crate::config::ResponseName::Delay => Some(m.mean_delay),
                    crate::config::ResponseName::Gap => m.mean_gap,
                    crate::config::ResponseName::PctReceived => m.pct_received,
                }?;
                Some(RsmInputRow {
                    group: groups.iter().map(|g| r.point.field_value(g).unwrap_or_default()).collect(),
                    factors: section
                        .factors
                        .iter()
                        .map(|f| r.point.field_value(f).unwrap_or_default())
                        .collect(),
                    response: y,
                })
            })
            .collect();
        out.extend(rsm_table::fit_groups(
            &groups.iter().map(|s| s.to_string()).collect::<Vec<_>>(),
            &section.factors,
            response.as_str(),
            &rows,
        ));
    }
    out
}

fn is_swept(cfg: &ExperimentConfig, field: &str) -> bool {
    let s = &cfg.sweep;
    match field {
        "protocol" => s.protocol.is_some(),
        "k" => s.k.is_some(),
        "per" => s.per.is_some(),
        "rep_cnt" => s.rep_cnt.is_some(),
        "beta_hz" => s.beta_hz.is_some(),
        "beacon_timing" => s.beacon_timing.is_some(),
        "max_sum_cnt" => s.max_sum_cnt.is_some(),
        "summaries" => s.summaries.is_some(),
        "max_beacon_size" => s.max_beacon_size.is_some(),
        "lambda_s" => s.lambda_s.is_some(),
        _ => false,
    }
}

/// Files written by [`run_experiment`].
#[derive(Debug, Default)]
pub struct Report {
    pub files: Vec<PathBuf>,
    pub points: usize,
    pub invariant_violations: u64,
}

fn create(dir: &Path, name: &str, report: &mut Report) -> Result<std::io::BufWriter<std::fs::File>> {
    let path = dir.join(name);
    let f = std::fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    report.files.push(path);
    Ok(std::io::BufWriter::new(f))
}

/// Runs everything `cfg` declares and writes the outputs into `dir`.
/// With `capacity_only`, only the capacity search runs (using the default
/// search settings when the config has no `[capacity]` section).
pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunOptions, dir: &Path, capacity_only: bool) -> Result<Report> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut report = Report::default();
    let (results, capacity) = if capacity_only || cfg.capacity.is_some() {
        let (rows, points) = run_capacity(cfg, opts)?;
        (points, Some(rows))
    } else {
        (run_points(cfg, opts)?, None)
    };
    report.points = results.len();
    report.invariant_violations = results
        .iter()
        .map(|r| r.invariants.seqno_regressions + r.invariants.duplicate_deliveries + r.invariants.repetition_violations)
        .sum();
    write_metrics_csv(&results, create(dir, "metrics.csv", &mut report)?)?;
    if results.iter().any(|r| !r.queues.is_empty()) {
        write_queues_csv(&results, create(dir, "queues.csv", &mut report)?)?;
    }
    if cfg.rsm.is_some() {
        let rows = rsm_rows(cfg, &results);
        rsm_table::write_csv(&rows, create(dir, "rsm.csv", &mut report)?)?;
    }
    if let Some(rows) = capacity {
        write_capacity_csv(&rows, create(dir, "capacity.csv", &mut report)?)?;
    }
    Ok(report)
}
