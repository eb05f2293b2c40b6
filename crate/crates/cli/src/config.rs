//! Experiment configuration files.
//!
//! A config describes one base parameter point plus optional sweeps over
//! some of its fields; the cartesian product of the sweeps gives the points
//! that are simulated. Unknown keys are rejected, and validation reports
//! every violation with its field path rather than stopping at the first.

use std::fmt;
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;
use vardis_lab::analysis::CapacityKind;
use vardis_lab::sim::channel::PerCurve;
use vardis_lab::sim::deployment::{Deployment, DeploymentKind};
use vardis_lab::sim::UpdateDistribution;
use vardis_lab::wire::MAX_REP_CNT;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationError {
    pub path: String,
    pub message: String,
}

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("{} validation error(s):\n{}", .0.len(), .0.iter().map(|e| format!("  {e}")).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<ValidationError>),
}

impl ConfigError {
    pub fn violations(&self) -> &[ValidationError] {
        match self {
            ConfigError::Invalid(v) => v,
            _ => &[],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DeploymentName {
    LineFixed,
    LineVariable,
    GridFixed,
    GridVariable,
}

impl DeploymentName {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::LineFixed => "line-fixed",
            Self::LineVariable => "line-variable",
            Self::GridFixed => "grid-fixed",
            Self::GridVariable => "grid-variable",
        }
    }

    pub fn is_fixed(self) -> bool {
        matches!(self, Self::LineFixed | Self::GridFixed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CurveName {
    Step,
    Linear,
}

impl CurveName {
    pub fn curve(self) -> PerCurve {
        match self {
            Self::Step => PerCurve::Step,
            Self::Linear => PerCurve::Linear,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Step => "step",
            Self::Linear => "linear",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProtocolName {
    Vardis,
    VardisAlwaysRepeat,
    Flooding,
}

impl ProtocolName {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Vardis => "vardis",
            Self::VardisAlwaysRepeat => "vardis-always-repeat",
            Self::Flooding => "flooding",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TimingName {
    Periodic,
    Exponential,
}

impl TimingName {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Periodic => "periodic",
            Self::Exponential => "exponential",
        }
    }

    pub fn distribution(self) -> UpdateDistribution {
        match self {
            Self::Periodic => UpdateDistribution::Periodic,
            Self::Exponential => UpdateDistribution::Exponential,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CapacityName {
    Reliability,
    Delay,
}

impl CapacityName {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Reliability => "reliability",
            Self::Delay => "delay",
        }
    }

    pub fn kind(self) -> CapacityKind {
        match self {
            Self::Reliability => CapacityKind::Reliability,
            Self::Delay => CapacityKind::Delay,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResponseName {
    Delay,
    Gap,
    PctReceived,
}

impl ResponseName {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Delay => "delay",
            Self::Gap => "gap",
            Self::PctReceived => "pct-received",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default)]
pub struct DeploymentSection {
    pub kind: DeploymentName,
    /// Nodes on the line, or per grid side.
    pub k: usize,
    /// Per-link PER of fixed-density deployments.
    pub per: Option<f64>,
    /// Link length of fixed-density deployments; overrides `per`.
    pub link_m: Option<f64>,
    pub extent_m: f64,
    pub per_curve: CurveName,
}

impl Default for DeploymentSection {
    fn default() -> Self {
        Self {
            kind: DeploymentName::LineFixed,
            k: 5,
            per: Some(0.2),
            link_m: None,
            extent_m: vardis_lab::sim::deployment::DEFAULT_EXTENT_M,
            per_curve: CurveName::Step,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default)]
pub struct ProtocolSection {
    pub kind: ProtocolName,
    pub rep_cnt: u8,
    pub beta_hz: f64,
    pub beacon_timing: TimingName,
    pub jitter: f64,
    pub max_sum_cnt: usize,
    pub summaries: bool,
    pub max_beacon_size: usize,
    pub mean_backoff_s: f64,
}

impl Default for ProtocolSection {
    fn default() -> Self {
        Self {
            kind: ProtocolName::Vardis,
            rep_cnt: 1,
            beta_hz: 10.0,
            beacon_timing: TimingName::Periodic,
            jitter: 0.1,
            max_sum_cnt: 10,
            summaries: true,
            max_beacon_size: 200,
            mean_backoff_s: vardis_lab::flooding::DEFAULT_MEAN_BACKOFF_S,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default)]
pub struct TrafficSection {
    pub lambda_s: f64,
    pub distribution: TimingName,
    /// Defaults to the deployment's producers (line: node 0; grid: all).
    pub producers: Option<Vec<usize>>,
    /// `[producer, consumer]` pairs to measure; defaults to the reference
    /// pair.
    pub pairs: Option<Vec<[usize; 2]>>,
}

impl Default for TrafficSection {
    fn default() -> Self {
        Self {
            lambda_s: 5.0,
            distribution: TimingName::Periodic,
            producers: None,
            pairs: None,
        }
    }
}

/// Lists of values replacing the base value of the same-named field.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default)]
pub struct SweepSection {
    pub protocol: Option<Vec<ProtocolName>>,
    pub k: Option<Vec<usize>>,
    pub per: Option<Vec<f64>>,
    pub rep_cnt: Option<Vec<u8>>,
    pub beta_hz: Option<Vec<f64>>,
    pub beacon_timing: Option<Vec<TimingName>>,
    pub max_sum_cnt: Option<Vec<usize>>,
    pub summaries: Option<Vec<bool>>,
    pub max_beacon_size: Option<Vec<usize>>,
    pub lambda_s: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default)]
pub struct OutputSection {
    /// Add Markov-chain hitting-time columns to `metrics.csv`.
    pub dtmc: bool,
    /// Add the analytic gap-model column to `metrics.csv`.
    pub gap_model: bool,
    /// Times at which flooding queue lengths go to `queues.csv`.
    pub queue_sample_times: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default)]
pub struct RsmSection {
    /// Swept fields used as two-level factors.
    pub factors: Vec<String>,
    pub responses: Vec<ResponseName>,
}

impl Default for RsmSection {
    fn default() -> Self {
        Self {
            factors: Vec::new(),
            responses: vec![ResponseName::Delay, ResponseName::Gap],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default)]
pub struct CapacitySection {
    pub kinds: Vec<CapacityName>,
    pub lambda_grid: Vec<f64>,
}

impl Default for CapacitySection {
    fn default() -> Self {
        Self {
            kinds: vec![CapacityName::Reliability, CapacityName::Delay],
            lambda_grid: vardis_lab::analysis::default_lambda_grid(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    pub replications: usize,
    pub duration_s: f64,
    pub warmup_s: f64,
    pub deployment: DeploymentSection,
    pub protocol: ProtocolSection,
    pub traffic: TrafficSection,
    pub sweep: SweepSection,
    pub output: OutputSection,
    pub rsm: Option<RsmSection>,
    pub capacity: Option<CapacitySection>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            seed: 1,
            replications: 4,
            duration_s: 330.0,
            warmup_s: vardis_lab::sim::DEFAULT_WARMUP_S,
            deployment: DeploymentSection::default(),
            protocol: ProtocolSection::default(),
            traffic: TrafficSection::default(),
            sweep: SweepSection::default(),
            output: OutputSection::default(),
            rsm: None,
            capacity: None,
        }
    }
}

/// One fully specified parameter combination.
#[derive(Debug, Clone, PartialEq)]
pub struct Point {
    pub deployment: DeploymentName,
    pub k: usize,
    pub per: Option<f64>,
    pub link_m: Option<f64>,
    pub extent_m: f64,
    pub per_curve: CurveName,
    pub protocol: ProtocolName,
    pub rep_cnt: u8,
    pub beta_hz: f64,
    pub beacon_timing: TimingName,
    pub jitter: f64,
    pub max_sum_cnt: usize,
    pub summaries: bool,
    pub max_beacon_size: usize,
    pub mean_backoff_s: f64,
    pub lambda_s: f64,
    pub traffic: TimingName,
}

/// Names accepted in `rsm.factors`, in sweep expansion order.
pub const SWEEP_FIELDS: [&str; 10] = [
    "protocol",
    "k",
    "per",
    "rep_cnt",
    "beta_hz",
    "beacon_timing",
    "max_sum_cnt",
    "summaries",
    "max_beacon_size",
    "lambda_s",
];

impl Point {
    pub fn deployment_kind(&self) -> DeploymentKind {
        match self.deployment {
            DeploymentName::LineFixed => DeploymentKind::LineFixed {
                link_m: self.fixed_link_m(),
            },
            DeploymentName::GridFixed => DeploymentKind::GridFixed {
                link_m: self.fixed_link_m(),
            },
            DeploymentName::LineVariable => DeploymentKind::LineVariable {
                extent_m: self.extent_m,
            },
            DeploymentName::GridVariable => DeploymentKind::GridVariable {
                extent_m: self.extent_m,
            },
        }
    }

    fn fixed_link_m(&self) -> f64 {
        self.link_m
            .unwrap_or_else(|| vardis_lab::sim::channel::distance_for_per(self.per.unwrap_or(0.0)))
    }

    /// Numeric value of a sweepable field, used as an RSM factor level or
    /// grouping key.
    pub fn field_value(&self, field: &str) -> Option<String> {
        Some(match field {
            "protocol" => self.protocol.as_str().to_string(),
            "k" => self.k.to_string(),
            "per" => self.per.map_or(String::new(), |p| p.to_string()),
            "rep_cnt" => self.rep_cnt.to_string(),
            "beta_hz" => self.beta_hz.to_string(),
            "beacon_timing" => self.beacon_timing.as_str().to_string(),
            "max_sum_cnt" => self.max_sum_cnt.to_string(),
            "summaries" => self.summaries.to_string(),
            "max_beacon_size" => self.max_beacon_size.to_string(),
            "lambda_s" => self.lambda_s.to_string(),
            _ => return None,
        })
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let mut unknown = Vec::new();
        let de = toml::Deserializer::parse(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let parsed: Result<Self, _> = serde_ignored::deserialize(de, |path| unknown.push(path.to_string()));
        let cfg = parsed.map_err(|e| ConfigError::Parse(e.to_string()))?;
        let mut errors: Vec<ValidationError> = unknown
            .into_iter()
            .map(|path| ValidationError {
                path,
                message: "unknown key".into(),
            })
            .collect();
        errors.extend(cfg.validate());
        if errors.is_empty() {
            Ok(cfg)
        } else {
            Err(ConfigError::Invalid(errors))
        }
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    fn path_of(&self, section: &str, field: &str) -> String {
        let swept = match field {
            "protocol" => self.sweep.protocol.is_some(),
            "k" => self.sweep.k.is_some(),
            "per" => self.sweep.per.is_some(),
            "rep_cnt" => self.sweep.rep_cnt.is_some(),
            "beta_hz" => self.sweep.beta_hz.is_some(),
            "beacon_timing" => self.sweep.beacon_timing.is_some(),
            "max_sum_cnt" => self.sweep.max_sum_cnt.is_some(),
            "summaries" => self.sweep.summaries.is_some(),
            "max_beacon_size" => self.sweep.max_beacon_size.is_some(),
            "lambda_s" => self.sweep.lambda_s.is_some(),
            _ => false,
        };
        if swept {
            format!("sweep.{field}")
        } else if field == "protocol" {
            "protocol.kind".into()
        } else {
            format!("{section}.{field}")
        }
    }

    /// Every violation in the config, empty when valid.
    pub fn validate(&self) -> Vec<ValidationError> {
        let mut errors = Vec::new();
        let mut err = |path: String, message: String| {
            if !errors.iter().any(|e: &ValidationError| e.path == path && e.message == message) {
                errors.push(ValidationError { path, message });
            }
        };
        if self.replications == 0 {
            err("replications".into(), "must be at least 1".into());
        }
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            err("duration_s".into(), format!("{} is not a positive duration", self.duration_s));
        }
        if !(self.warmup_s >= 0.0 && self.warmup_s < self.duration_s) {
            err("warmup_s".into(), format!("{} must lie in [0, duration_s)", self.warmup_s));
        }
        if self.deployment.link_m.is_some_and(|l| !(l > 0.0 && l.is_finite())) {
            err("deployment.link_m".into(), "must be positive".into());
        }
        if !(self.deployment.extent_m > 0.0 && self.deployment.extent_m.is_finite()) {
            err("deployment.extent_m".into(), "must be positive".into());
        }
        if !(0.0..1.0).contains(&self.protocol.jitter) {
            err("protocol.jitter".into(), format!("{} outside [0, 1)", self.protocol.jitter));
        }
        if !(self.protocol.mean_backoff_s > 0.0 && self.protocol.mean_backoff_s.is_finite()) {
            err("protocol.mean_backoff_s".into(), "must be positive".into());
        }
        if self.output.queue_sample_times.iter().any(|t| !(*t >= 0.0)) {
            err("output.queue_sample_times".into(), "times must be non-negative".into());
        }
        let sweep_lists: [(&str, usize); 10] = [
            ("protocol", self.sweep.protocol.as_ref().map_or(1, Vec::len)),
            ("k", self.sweep.k.as_ref().map_or(1, Vec::len)),
            ("per", self.sweep.per.as_ref().map_or(1, Vec::len)),
            ("rep_cnt", self.sweep.rep_cnt.as_ref().map_or(1, Vec::len)),
            ("beta_hz", self.sweep.beta_hz.as_ref().map_or(1, Vec::len)),
            ("beacon_timing", self.sweep.beacon_timing.as_ref().map_or(1, Vec::len)),
            ("max_sum_cnt", self.sweep.max_sum_cnt.as_ref().map_or(1, Vec::len)),
            ("summaries", self.sweep.summaries.as_ref().map_or(1, Vec::len)),
            ("max_beacon_size", self.sweep.max_beacon_size.as_ref().map_or(1, Vec::len)),
            ("lambda_s", self.sweep.lambda_s.as_ref().map_or(1, Vec::len)),
        ];
        for (field, n) in sweep_lists {
            if n == 0 {
                err(format!("sweep.{field}"), "empty sweep list".into());
            }
        }
        if let Some(rsm) = &self.rsm {
            if rsm.factors.is_empty() {
                err("rsm.factors".into(), "at least one factor".into());
            }
            for (i, f) in rsm.factors.iter().enumerate() {
                match sweep_lists.iter().find(|(name, _)| name == f) {
                    None => err(format!("rsm.factors[{i}]"), format!("`{f}` is not a sweepable field")),
                    Some((_, n)) if *n != 2 => err(
                        format!("rsm.factors[{i}]"),
                        format!("`{f}` must be swept over exactly two values"),
                    ),
                    Some(_) => {}
                }
            }
            if rsm.responses.is_empty() {
                err("rsm.responses".into(), "at least one response".into());
            }
        }
        if let Some(cap) = &self.capacity {
            if cap.kinds.is_empty() {
                err("capacity.kinds".into(), "at least one capacity kind".into());
            }
            if cap.lambda_grid.is_empty() || cap.lambda_grid.windows(2).any(|w| !(w[0] < w[1])) {
                err("capacity.lambda_grid".into(), "must be non-empty and strictly ascending".into());
            }
            if cap.lambda_grid.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
                err("capacity.lambda_grid".into(), "periods must be positive".into());
            }
        }
        for p in self.raw_points() {
            for (field, msg) in point_violations(&p) {
                let section = match field {
                    "k" | "per" => "deployment",
                    "lambda_s" | "producers" | "pairs" => "traffic",
                    _ => "protocol",
                };
                let path = if matches!(field, "producers" | "pairs") {
                    format!("traffic.{field}")
                } else {
                    self.path_of(section, field)
                };
                err(path, msg);
            }
            if let Ok(d) = Deployment::new(p.deployment_kind(), p.k) {
                let n = d.node_count();
                if let Some(prods) = &self.traffic.producers {
                    for (i, &node) in prods.iter().enumerate() {
                        if node >= n {
                            err(
                                format!("traffic.producers[{i}]"),
                                format!("node {node} does not exist (k = {}, {n} nodes)", p.k),
                            );
                        }
                    }
                }
                if let Some(pairs) = &self.traffic.pairs {
                    for (i, pair) in pairs.iter().enumerate() {
                        if pair.iter().any(|&node| node >= n) {
                            err(
                                format!("traffic.pairs[{i}]"),
                                format!("{pair:?} names a node outside 0..{n} (k = {})", p.k),
                            );
                        }
                    }
                }
            }
        }
        errors
    }

    /// Cartesian product of the sweeps, in [`SWEEP_FIELDS`] order with the
    /// last field varying fastest.
    pub fn points(&self) -> Vec<Point> {
        self.raw_points()
    }

    fn raw_points(&self) -> Vec<Point> {
        let d = &self.deployment;
        let pr = &self.protocol;
        let base = Point {
            deployment: d.kind,
            k: d.k,
            per: d.per,
            link_m: d.link_m,
            extent_m: d.extent_m,
            per_curve: d.per_curve,
            protocol: pr.kind,
            rep_cnt: pr.rep_cnt,
            beta_hz: pr.beta_hz,
            beacon_timing: pr.beacon_timing,
            jitter: pr.jitter,
            max_sum_cnt: pr.max_sum_cnt,
            summaries: pr.summaries,
            max_beacon_size: pr.max_beacon_size,
            mean_backoff_s: pr.mean_backoff_s,
            lambda_s: self.traffic.lambda_s,
            traffic: self.traffic.distribution,
        };
        let s = &self.sweep;
        let mut points = vec![base];
        fn expand<T: Clone>(points: Vec<Point>, values: &Option<Vec<T>>, set: impl Fn(&mut Point, T)) -> Vec<Point> {
            let Some(values) = values else { return points };
            let mut out = Vec::with_capacity(points.len() * values.len());
            for p in points {
                for v in values {
                    let mut q = p.clone();
                    set(&mut q, v.clone());
                    out.push(q);
                }
            }
            out
        }
        points = expand(points, &s.protocol, |p, v| p.protocol = v);
        points = expand(points, &s.k, |p, v| p.k = v);
        points = expand(points, &s.per, |p, v| p.per = Some(v));
        points = expand(points, &s.rep_cnt, |p, v| p.rep_cnt = v);
        points = expand(points, &s.beta_hz, |p, v| p.beta_hz = v);
        points = expand(points, &s.beacon_timing, |p, v| p.beacon_timing = v);
        points = expand(points, &s.max_sum_cnt, |p, v| p.max_sum_cnt = v);
        points = expand(points, &s.summaries, |p, v| p.summaries = v);
        points = expand(points, &s.max_beacon_size, |p, v| p.max_beacon_size = v);
        points = expand(points, &s.lambda_s, |p, v| p.lambda_s = v);
        points
    }
}

fn point_violations(p: &Point) -> Vec<(&'static str, String)> {
    let mut v = Vec::new();
    if p.k < 2 {
        v.push(("k", format!("{} is below the minimum of 2", p.k)));
    }
    let nodes = if matches!(p.deployment, DeploymentName::GridFixed | DeploymentName::GridVariable) {
        p.k.saturating_mul(p.k)
    } else {
        p.k
    };
    if nodes > 4096 {
        v.push(("k", format!("{nodes} nodes is more than the supported 4096")));
    }
    if p.deployment.is_fixed() && p.link_m.is_none() {
        match p.per {
            None => v.push(("per", "fixed-density deployments need `per` or `link_m`".into())),
            Some(per) if !(0.0..1.0).contains(&per) => v.push(("per", format!("{per} outside [0, 1)"))),
            Some(_) => {}
        }
    }
    if !(1..=MAX_REP_CNT).contains(&p.rep_cnt) {
        v.push(("rep_cnt", format!("{} outside 1..={MAX_REP_CNT}", p.rep_cnt)));
    }
    if !(p.beta_hz > 0.0 && p.beta_hz.is_finite()) {
        v.push(("beta_hz", format!("{} is not a positive rate", p.beta_hz)));
    }
    if !(p.lambda_s > 0.0 && p.lambda_s.is_finite()) {
        v.push(("lambda_s", format!("{} is not a positive period", p.lambda_s)));
    }
    if p.protocol != ProtocolName::Flooding {
        if vardis_lab::bp::BeaconingProtocol::new(vardis_lab::wire::NodeId::new(0).unwrap(), p.max_beacon_size).is_err() {
            v.push(("max_beacon_size", format!("{} B leaves no room for a payload", p.max_beacon_size)));
        }
        if p.max_sum_cnt == 0 && p.summaries {
            v.push(("max_sum_cnt", "0 with summaries enabled".into()));
        }
    }
    v
}
