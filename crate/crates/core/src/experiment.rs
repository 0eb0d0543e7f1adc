//! Experiment files, policy orchestration and CSV/JSON output.
//!
//! An experiment is one TOML file holding the system parameters, the
//! scenario, and optional `[run]`, `[compare]` and `[sweep]` sections. The
//! `cmd_*` functions read such a file (plus command-line overrides), run the
//! requested policies and write their results into the output directory:
//!
//! | file              | rows                                                     |
//! |-------------------|----------------------------------------------------------|
//! | `hyperperiod.csv` | `hyperperiod, total_qoe, shared_slots_r{r}_{j}_{i}..., grad_norm, max_queue, step` |
//! | `clients.csv`     | `client, operator, region, arrivals, satisfied, satisfied_fraction, final_queue` |
//! | `periods.csv`     | `period, total_qoe, arrivals, max_queue` (period detail only) |
//! | `compare.csv`     | `low_rate, high_rate, policy, mean_qoe, no_sharing_qoe, improvement_pct, improvement_is_absolute, min_satisfaction` |
//! | `sweep.csv`       | `schedule, step_size, hyperperiod, total_qoe, shared_slots, gap_pct` |
//! | `sweep_summary.csv` | `schedule, step_size, reference_qoe, final_qoe, final_gap_pct, hyperperiods_to_target` |
//! | `manifest.json`   | command, seed, horizon, config hash, crate version, files |
//!
//! Floats are written in scientific notation with 16 significant digits.
//! Every file is written to a temporary sibling and renamed into place.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::abs::run_abs;
use crate::baselines::{
    no_sharing_config, run_dynamic_proxy, run_no_sharing, run_opt_ss_star, solve_opt_ss_star,
    PolicyKind,
};
use crate::error::{Error, Result};
use crate::model::{SharingMatrix, StepSchedule, SystemConfig};
use crate::projection::SharingPolytope;
use crate::scenario::{
    generate_range, improvement, min_satisfaction, percentile_satisfaction, ArrivalLaw, Detail,
    RunTrace, ScenarioSpec,
};

/// Exit status for a successful command.
pub const EXIT_OK: i32 = 0;
/// Exit status for an unreadable or invalid configuration.
pub const EXIT_CONFIG: i32 = 2;
/// Exit status for a solver failure at run time.
pub const EXIT_RUNTIME: i32 = 3;

pub fn exit_code(err: &Error) -> i32 {
    if err.is_config_error() {
        EXIT_CONFIG
    } else {
        EXIT_RUNTIME
    }
}

/// Hyperperiods simulated by [`cmd_validate`]'s smoke test.
pub const SMOKE_HYPERPERIODS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: SystemConfig,
    pub scenario: ScenarioSpec,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub compare: Option<CompareSection>,
    #[serde(default)]
    pub sweep: Option<SweepSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default = "default_policy")]
    pub policy: PolicyKind,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub detail: Detail,
    /// ABS starting point as `[region][owner][recipient]`; no sharing if absent.
    #[serde(default)]
    pub initial_sharing: Option<Vec<Vec<Vec<f64>>>>,
    /// First hyperperiod of the long-run averaging window; half the horizon
    /// if absent.
    #[serde(default)]
    pub window_start: Option<usize>,
    /// Also solve the static optimum on the averaging window and record its
    /// objective in the manifest.
    #[serde(default)]
    pub reference: bool,
    /// Extra runs of the same policy written next to the main one.
    #[serde(default)]
    pub variants: Vec<Variant>,
}

fn default_policy() -> PolicyKind {
    PolicyKind::Abs
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            policy: default_policy(),
            out_dir: default_out_dir(),
            detail: Detail::Hyperperiod,
            initial_sharing: None,
            window_start: None,
            reference: false,
            variants: Vec::new(),
        }
    }
}

/// A named re-run with a different starting point and/or arrival law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Variant {
    pub name: String,
    #[serde(default)]
    pub initial_sharing: Option<Vec<Vec<Vec<f64>>>>,
    #[serde(default)]
    pub arrivals: Option<ArrivalLaw>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareSection {
    #[serde(default = "default_compare_policies")]
    pub policies: Vec<PolicyKind>,
    /// `(low, high)` pairs; operator 0 sees `low` in region 0 and `high` in
    /// region 1, operator 1 the reverse.
    #[serde(default = "default_rate_pairs")]
    pub rate_pairs: Vec<(f64, f64)>,
}

fn default_compare_policies() -> Vec<PolicyKind> {
    PolicyKind::ALL.to_vec()
}

/// Imbalance sweep from strongly mirrored to symmetric demand.
pub fn default_rate_pairs() -> Vec<(f64, f64)> {
    vec![(0.1, 0.9), (0.2, 0.8), (0.3, 0.7), (0.4, 0.6), (0.5, 0.5)]
}

impl Default for CompareSection {
    fn default() -> Self {
        CompareSection {
            policies: default_compare_policies(),
            rate_pairs: default_rate_pairs(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    #[serde(default = "default_step_sizes")]
    pub step_sizes: Vec<f64>,
    /// Add the decaying `eta0 / sqrt(t)` schedule.
    #[serde(default = "default_true")]
    pub variable: bool,
    #[serde(default = "default_variable_initial")]
    pub variable_initial: f64,
    /// Relative distance (percent) to the reference counted as converged.
    #[serde(default = "default_target_pct")]
    pub target_pct: f64,
    /// Trailing hyperperiods averaged before comparing to the reference.
    #[serde(default = "default_smoothing")]
    pub smoothing: usize,
}

fn default_step_sizes() -> Vec<f64> {
    vec![0.1, 0.01, 0.0001]
}

fn default_true() -> bool {
    true
}

fn default_variable_initial() -> f64 {
    0.1
}

fn default_target_pct() -> f64 {
    5.0
}

fn default_smoothing() -> usize {
    10
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            step_sizes: default_step_sizes(),
            variable: true,
            variable_initial: default_variable_initial(),
            target_pct: default_target_pct(),
            smoothing: default_smoothing(),
        }
    }
}

/// Command-line settings that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub policy: Option<PolicyKind>,
    pub seed: Option<u64>,
    pub horizon: Option<usize>,
    pub out_dir: Option<PathBuf>,
    pub detail: Option<Detail>,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::ConfigParse(e.to_string()))
    }

    /// Reads and validates an experiment file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::ConfigParse(format!("cannot read {}: {e}", path.display())))?;
        let cfg = Self::from_toml_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(p) = o.policy {
            self.run.policy = p;
        }
        if let Some(s) = o.seed {
            self.scenario.seed = s;
        }
        if let Some(h) = o.horizon {
            self.scenario.horizon = h;
            // a shortened run falls back to the default window
            if self.run.window_start.is_some_and(|w| w >= h) {
                self.run.window_start = None;
            }
        }
        if let Some(d) = &o.out_dir {
            self.run.out_dir = d.clone();
        }
        if let Some(d) = o.detail {
            self.run.detail = d;
        }
    }

    pub fn horizon(&self) -> usize {
        self.scenario.horizon
    }

    /// Long-run averaging window in hyperperiods.
    pub fn window(&self) -> std::ops::Range<usize> {
        let h = self.horizon();
        self.run.window_start.unwrap_or(h / 2)..h
    }

    pub fn validate(&self) -> Result<()> {
        self.system.validate()?;
        self.scenario.validate(&self.system)?;
        if self.scenario.horizon == 0 {
            return Err(Error::config("scenario.horizon", "must be >= 1"));
        }
        if let Some(w) = self.run.window_start {
            if w >= self.scenario.horizon {
                return Err(Error::config(
                    "run.window_start",
                    "must be below scenario.horizon",
                ));
            }
        }
        self.initial_sharing()?;
        let mut names = BTreeSet::new();
        for v in &self.run.variants {
            if v.name.is_empty()
                || !v
                    .name
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
            {
                return Err(Error::config(
                    "run.variants.name",
                    "must be non-empty [A-Za-z0-9_-]",
                ));
            }
            if !names.insert(v.name.as_str()) {
                return Err(Error::config(
                    "run.variants.name",
                    format!("duplicate name {}", v.name),
                ));
            }
            if let Some(a) = &v.arrivals {
                let mut spec = self.scenario.clone();
                spec.arrivals = a.clone();
                spec.validate(&self.system)?;
            }
            if let Some(rows) = &v.initial_sharing {
                self.member(rows, "run.variants.initial_sharing")?;
            }
        }
        if let Some(c) = &self.compare {
            for &(lo, hi) in &c.rate_pairs {
                if !((0.0..=1.0).contains(&lo) && (0.0..=1.0).contains(&hi)) {
                    return Err(Error::config(
                        "compare.rate_pairs",
                        "rates must lie in [0, 1]",
                    ));
                }
            }
            if !c.rate_pairs.is_empty()
                && (self.system.num_operators != 2 || self.system.num_regions != 2)
            {
                return Err(Error::config(
                    "compare.rate_pairs",
                    "mirrored pairs need 2 operators and 2 regions",
                ));
            }
        }
        if let Some(s) = &self.sweep {
            if s.step_sizes.iter().any(|&e| !(e.is_finite() && e >= 0.0)) {
                return Err(Error::config("sweep.step_sizes", "must be finite and >= 0"));
            }
            if s.variable && !(s.variable_initial.is_finite() && s.variable_initial > 0.0) {
                return Err(Error::config(
                    "sweep.variable_initial",
                    "must be finite and > 0",
                ));
            }
            if !(s.target_pct.is_finite() && s.target_pct > 0.0) {
                return Err(Error::config("sweep.target_pct", "must be finite and > 0"));
            }
            if s.smoothing == 0 {
                return Err(Error::config("sweep.smoothing", "must be >= 1"));
            }
        }
        Ok(())
    }

    fn member(&self, rows: &[Vec<Vec<f64>>], field: &str) -> Result<SharingMatrix> {
        let s =
            SharingMatrix::from_nested(rows).map_err(|e| Error::config(field, e.to_string()))?;
        if s.num_operators() != self.system.num_operators
            || s.num_regions() != self.system.num_regions
        {
            return Err(Error::config(
                field,
                format!(
                    "must be [{} regions][{} owners][{} recipients]",
                    self.system.num_regions, self.system.num_operators, self.system.num_operators
                ),
            ));
        }
        if !SharingPolytope::new(&self.system).contains(&s)? {
            return Err(Error::config(
                field,
                "is not a member of the sharing polytope",
            ));
        }
        Ok(s)
    }

    /// The configured ABS starting point.
    pub fn initial_sharing(&self) -> Result<SharingMatrix> {
        match &self.run.initial_sharing {
            Some(rows) => self.member(rows, "run.initial_sharing"),
            None => Ok(SharingMatrix::no_sharing(&self.system)),
        }
    }

    /// SHA-256 of the effective configuration, hex encoded.
    pub fn digest(&self) -> String {
        let text = toml::to_string(self).unwrap_or_default();
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

/// Runs one policy over `horizon` hyperperiods. `initial` is used by ABS only.
pub fn run_policy(
    cfg: &SystemConfig,
    scenario: &ScenarioSpec,
    policy: PolicyKind,
    horizon: usize,
    initial: &SharingMatrix,
    detail: Detail,
) -> Result<RunTrace> {
    match policy {
        PolicyKind::NoSharing => run_no_sharing(cfg, scenario, horizon, detail),
        PolicyKind::OptimalStaticStar => Ok(run_opt_ss_star(cfg, scenario, horizon, detail)?.0),
        PolicyKind::DynamicProxy => run_dynamic_proxy(cfg, scenario, horizon, detail),
        PolicyKind::Abs => run_abs(cfg, scenario, horizon, initial, detail),
    }
}

/// Static optimum over the samples of hyperperiods `window`.
pub fn reference_objective(
    cfg: &SystemConfig,
    scenario: &ScenarioSpec,
    window: std::ops::Range<usize>,
) -> Result<f64> {
    let samples = generate_range(scenario, cfg, window);
    Ok(solve_opt_ss_star(cfg, &samples)?.objective)
}

/// The `Q_min` a policy's satisfaction is measured against.
fn trace_config(cfg: &SystemConfig, policy: PolicyKind) -> SystemConfig {
    match policy {
        PolicyKind::NoSharing => no_sharing_config(cfg),
        _ => cfg.clone(),
    }
}

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.15e}")
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

fn csv_bytes(header: Vec<String>, rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub fn hyperperiod_header(cfg: &SystemConfig) -> Vec<String> {
    let mut h = vec!["hyperperiod".to_string(), "total_qoe".to_string()];
    for r in 0..cfg.num_regions {
        for j in 0..cfg.num_operators {
            for i in 0..cfg.num_operators {
                h.push(format!("shared_slots_r{r}_{j}_{i}"));
            }
        }
    }
    h.extend(["grad_norm", "max_queue", "step"].map(String::from));
    h
}

pub fn write_hyperperiod_csv(path: &Path, cfg: &SystemConfig, trace: &RunTrace) -> Result<()> {
    let rows = trace.hyperperiods.iter().map(|h| {
        let mut row = vec![h.index.to_string(), fmt_f64(h.total_qoe)];
        row.extend(h.sharing.entries().iter().map(|&v| fmt_f64(v)));
        row.extend([fmt_f64(h.grad_norm), fmt_f64(h.max_queue), fmt_f64(h.step)]);
        row
    });
    write_atomic(path, &csv_bytes(hyperperiod_header(cfg), rows)?)
}

pub fn write_clients_csv(path: &Path, cfg: &SystemConfig, trace: &RunTrace) -> Result<()> {
    let header = [
        "client",
        "operator",
        "region",
        "arrivals",
        "satisfied",
        "satisfied_fraction",
        "final_queue",
    ]
    .map(String::from)
    .to_vec();
    let fractions = percentile_satisfaction(trace);
    let rows = trace
        .clients
        .iter()
        .zip(&fractions)
        .enumerate()
        .map(|(n, (c, f))| {
            let (op, region) = cfg.cell_coords(n / cfg.clients_per_cell);
            vec![
                n.to_string(),
                op.to_string(),
                region.to_string(),
                c.arrivals.to_string(),
                c.satisfied.to_string(),
                f.map(fmt_f64).unwrap_or_default(),
                fmt_f64(c.final_queue),
            ]
        });
    write_atomic(path, &csv_bytes(header, rows)?)
}

pub fn write_periods_csv(path: &Path, trace: &RunTrace) -> Result<()> {
    let header = ["period", "total_qoe", "arrivals", "max_queue"]
        .map(String::from)
        .to_vec();
    let rows = trace.periods.iter().flatten().map(|p| {
        vec![
            p.period.to_string(),
            fmt_f64(p.total_qoe),
            p.arrivals.to_string(),
            fmt_f64(p.max_queue),
        ]
    });
    write_atomic(path, &csv_bytes(header, rows)?)
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub command: String,
    pub policies: Vec<String>,
    pub seed: u64,
    pub horizon: usize,
    pub window: (usize, usize),
    pub config_sha256: String,
    pub crate_version: String,
    pub files: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference_objective: Option<f64>,
}

impl Manifest {
    fn new(command: &str, cfg: &ExperimentConfig, policies: Vec<String>) -> Self {
        let w = cfg.window();
        Manifest {
            command: command.to_string(),
            policies,
            seed: cfg.scenario.seed,
            horizon: cfg.horizon(),
            window: (w.start, w.end),
            config_sha256: cfg.digest(),
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            files: Vec::new(),
            reference_objective: None,
        }
    }

    fn write(&mut self, dir: &Path) -> Result<PathBuf> {
        self.files.push("manifest.json".into());
        let path = dir.join("manifest.json");
        write_atomic(&path, &serde_json::to_vec_pretty(self)?)?;
        Ok(path)
    }
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub out_dir: PathBuf,
    pub files: Vec<PathBuf>,
    pub trace: RunTrace,
    /// Mean per-period QoE over the averaging window.
    pub mean_qoe: f64,
    pub reference_objective: Option<f64>,
}

/// Runs the configured policy and writes its traces.
pub fn cmd_run(config: &ExperimentConfig) -> Result<RunReport> {
    config.validate()?;
    let sys = &config.system;
    let policy = config.run.policy;
    let horizon = config.horizon();
    let detail = config.run.detail;
    let dir = config.run.out_dir.clone();
    let initial = config.initial_sharing()?;

    let mut jobs: Vec<(String, ScenarioSpec, SharingMatrix)> =
        vec![(String::new(), config.scenario.clone(), initial.clone())];
    for v in &config.run.variants {
        let mut spec = config.scenario.clone();
        if let Some(a) = &v.arrivals {
            spec.arrivals = a.clone();
        }
        let start = match &v.initial_sharing {
            Some(rows) => config.member(rows, "run.variants.initial_sharing")?,
            None => initial.clone(),
        };
        jobs.push((v.name.clone(), spec, start));
    }
    let traces = jobs
        .par_iter()
        .map(|(_, spec, start)| run_policy(sys, spec, policy, horizon, start, detail))
        .collect::<Result<Vec<_>>>()?;
    let reference = if config.run.reference {
        Some(reference_objective(sys, &config.scenario, config.window())?)
    } else {
        None
    };

    let tcfg = trace_config(sys, policy);
    let mut manifest = Manifest::new("run", config, vec![policy.to_string()]);
    manifest.reference_objective = reference;
    let mut files = Vec::new();
    for ((name, _, _), trace) in jobs.iter().zip(&traces) {
        let suffix = if name.is_empty() {
            String::new()
        } else {
            format!("_{name}")
        };
        let hp = dir.join(format!("hyperperiod{suffix}.csv"));
        write_hyperperiod_csv(&hp, &tcfg, trace)?;
        let cl = dir.join(format!("clients{suffix}.csv"));
        write_clients_csv(&cl, &tcfg, trace)?;
        files.push(hp);
        files.push(cl);
        if detail == Detail::Period {
            let pp = dir.join(format!("periods{suffix}.csv"));
            write_periods_csv(&pp, trace)?;
            files.push(pp);
        }
    }
    manifest.files = files
        .iter()
        .filter_map(|p| p.file_name())
        .map(|f| f.to_string_lossy().into_owned())
        .collect();
    files.push(manifest.write(&dir)?);
    let trace = traces.into_iter().next().expect("main run");
    Ok(RunReport {
        out_dir: dir,
        files,
        mean_qoe: trace.mean_qoe(config.window()),
        trace,
        reference_objective: reference,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub low_rate: f64,
    pub high_rate: f64,
    pub policy: PolicyKind,
    pub mean_qoe: f64,
    pub no_sharing_qoe: f64,
    pub improvement_pct: f64,
    /// The baseline was zero, so `improvement_pct` holds an absolute difference.
    pub improvement_is_absolute: bool,
    pub min_satisfaction: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct CompareReport {
    pub out_dir: PathBuf,
    pub rows: Vec<CompareRow>,
}

/// Runs every policy on every mirrored rate pair and reports improvement
/// over no sharing on the averaging window. `policies` overrides the file.
pub fn cmd_compare(
    config: &ExperimentConfig,
    policies: Option<&[PolicyKind]>,
) -> Result<CompareReport> {
    config.validate()?;
    let section = config.compare.clone().unwrap_or_default();
    let mut chosen: Vec<PolicyKind> = Vec::new();
    for &p in policies.unwrap_or(&section.policies) {
        if !chosen.contains(&p) {
            chosen.push(p);
        }
    }
    if chosen.len() < 2 {
        return Err(Error::config(
            "compare.policies",
            "needs at least two distinct policies",
        ));
    }
    if section.rate_pairs.is_empty() {
        return Err(Error::config("compare.rate_pairs", "must not be empty"));
    }
    if config.system.num_operators != 2 || config.system.num_regions != 2 {
        return Err(Error::config(
            "compare.rate_pairs",
            "mirrored pairs need 2 operators and 2 regions",
        ));
    }
    let sys = &config.system;
    let horizon = config.horizon();
    let window = config.window();
    let initial = config.initial_sharing()?;
    let scenario_for = |lo: f64, hi: f64| ScenarioSpec {
        arrivals: ArrivalLaw::mirrored_pair(lo, hi),
        switches: Vec::new(),
        ..config.scenario.clone()
    };

    // the baseline is always needed, so it is run even when not listed
    let mut run_list = vec![PolicyKind::NoSharing];
    run_list.extend(
        chosen
            .iter()
            .copied()
            .filter(|&p| p != PolicyKind::NoSharing),
    );
    let jobs: Vec<(usize, PolicyKind)> = (0..section.rate_pairs.len())
        .flat_map(|k| run_list.iter().map(move |&p| (k, p)))
        .collect();
    let results = jobs
        .par_iter()
        .map(|&(k, p)| {
            let (lo, hi) = section.rate_pairs[k];
            let trace = run_policy(
                sys,
                &scenario_for(lo, hi),
                p,
                horizon,
                &initial,
                Detail::Hyperperiod,
            )?;
            Ok((trace.mean_qoe(window.clone()), min_satisfaction(&trace)))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::new();
    for (k, &(lo, hi)) in section.rate_pairs.iter().enumerate() {
        let at = |p: PolicyKind| {
            let idx = jobs
                .iter()
                .position(|&(kk, pp)| kk == k && pp == p)
                .expect("scheduled");
            results[idx]
        };
        let (base, _) = at(PolicyKind::NoSharing);
        for &p in &chosen {
            let (qoe, sat) = at(p);
            let imp = improvement(qoe, base);
            rows.push(CompareRow {
                low_rate: lo,
                high_rate: hi,
                policy: p,
                mean_qoe: qoe,
                no_sharing_qoe: base,
                improvement_pct: imp.value,
                improvement_is_absolute: imp.absolute,
                min_satisfaction: sat,
            });
        }
    }

    let dir = config.run.out_dir.clone();
    let header = [
        "low_rate",
        "high_rate",
        "policy",
        "mean_qoe",
        "no_sharing_qoe",
        "improvement_pct",
        "improvement_is_absolute",
        "min_satisfaction",
    ]
    .map(String::from)
    .to_vec();
    let body = rows.iter().map(|r| {
        vec![
            fmt_f64(r.low_rate),
            fmt_f64(r.high_rate),
            r.policy.to_string(),
            fmt_f64(r.mean_qoe),
            fmt_f64(r.no_sharing_qoe),
            fmt_f64(r.improvement_pct),
            r.improvement_is_absolute.to_string(),
            r.min_satisfaction.map(fmt_f64).unwrap_or_default(),
        ]
    });
    write_atomic(&dir.join("compare.csv"), &csv_bytes(header, body)?)?;
    let mut manifest = Manifest::new(
        "compare",
        config,
        chosen.iter().map(|p| p.to_string()).collect(),
    );
    manifest.files.push("compare.csv".into());
    manifest.write(&dir)?;
    Ok(CompareReport { out_dir: dir, rows })
}

/// One step-size schedule of a sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepChoice {
    Constant(f64),
    /// `eta0 / sqrt(t)`.
    Variable(f64),
}

impl StepChoice {
    pub fn label(&self) -> &'static str {
        match self {
            StepChoice::Constant(_) => "constant",
            StepChoice::Variable(_) => "variable",
        }
    }

    pub fn step_size(&self) -> f64 {
        match *self {
            StepChoice::Constant(e) | StepChoice::Variable(e) => e,
        }
    }

    fn configure(&self, cfg: &SystemConfig) -> SystemConfig {
        let (step_size, step_schedule) = match *self {
            StepChoice::Constant(e) => (e, StepSchedule::Constant),
            StepChoice::Variable(e) => (e, StepSchedule::InverseSqrt),
        };
        SystemConfig {
            step_size,
            step_schedule,
            ..cfg.clone()
        }
    }
}

impl fmt::Display for StepChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StepChoice::Constant(e) => write!(f, "{e}"),
            StepChoice::Variable(e) => write!(f, "variable:{e}"),
        }
    }
}

/// Parses `0.01`, `variable` (decaying from the file's initial value) or
/// `variable:0.1`.
pub fn parse_step_choice(s: &str, variable_initial: f64) -> Result<StepChoice> {
    let bad = || Error::config("step_sizes", format!("cannot parse {s:?}"));
    let s = s.trim();
    if s == "variable" {
        return Ok(StepChoice::Variable(variable_initial));
    }
    let choice = match s.strip_prefix("variable:") {
        Some(rest) => StepChoice::Variable(f64::from_str(rest).map_err(|_| bad())?),
        None => StepChoice::Constant(f64::from_str(s).map_err(|_| bad())?),
    };
    let e = choice.step_size();
    if !(e.is_finite() && e >= 0.0) || (matches!(choice, StepChoice::Variable(_)) && e == 0.0) {
        return Err(Error::config(
            "step_sizes",
            format!("{s:?} is not a valid step size"),
        ));
    }
    Ok(choice)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRun {
    pub choice: StepChoice,
    pub qoe: Vec<f64>,
    pub shared_slots: Vec<f64>,
    pub final_qoe: f64,
    /// `100 * |final - reference| / |reference|`.
    pub final_gap_pct: f64,
    /// First hyperperiod whose trailing average lies within the target band.
    pub hyperperiods_to_target: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub out_dir: PathBuf,
    pub reference_qoe: f64,
    pub runs: Vec<SweepRun>,
}

fn relative_gap_pct(value: f64, reference: f64) -> f64 {
    100.0 * (value - reference).abs() / reference.abs().max(f64::MIN_POSITIVE)
}

/// First index whose trailing mean over `smoothing` entries is within
/// `target_pct` percent of `reference`.
pub fn hyperperiods_to_target(
    series: &[f64],
    reference: f64,
    target_pct: f64,
    smoothing: usize,
) -> Option<usize> {
    let w = smoothing.max(1);
    (w - 1..series.len()).find(|&t| {
        let mean = series[t + 1 - w..=t].iter().sum::<f64>() / w as f64;
        relative_gap_pct(mean, reference) <= target_pct
    })
}

/// ABS convergence under several step-size schedules, each measured
/// against the static optimum of the averaging window.
pub fn cmd_sweep_stepsize(
    config: &ExperimentConfig,
    choices: Option<&[StepChoice]>,
) -> Result<SweepReport> {
    config.validate()?;
    let section = config.sweep.clone().unwrap_or_default();
    let choices: Vec<StepChoice> = match choices {
        Some(c) => c.to_vec(),
        None => {
            let mut c: Vec<StepChoice> = section
                .step_sizes
                .iter()
                .map(|&e| StepChoice::Constant(e))
                .collect();
            if section.variable {
                c.push(StepChoice::Variable(section.variable_initial));
            }
            c
        }
    };
    if choices.is_empty() {
        return Err(Error::config("sweep.step_sizes", "must not be empty"));
    }
    let sys = &config.system;
    let horizon = config.horizon();
    let window = config.window();
    let initial = config.initial_sharing()?;
    let reference = reference_objective(sys, &config.scenario, window.clone())?;
    let runs = choices
        .par_iter()
        .map(|choice| {
            let cfg = choice.configure(sys);
            let trace = run_abs(
                &cfg,
                &config.scenario,
                horizon,
                &initial,
                Detail::Hyperperiod,
            )?;
            let qoe = trace.qoe_series();
            let final_qoe = trace.mean_qoe(window.clone());
            Ok(SweepRun {
                choice: *choice,
                shared_slots: trace
                    .hyperperiods
                    .iter()
                    .map(|h| h.sharing.total_shared())
                    .collect(),
                final_gap_pct: relative_gap_pct(final_qoe, reference),
                hyperperiods_to_target: hyperperiods_to_target(
                    &qoe,
                    reference,
                    section.target_pct,
                    section.smoothing,
                ),
                final_qoe,
                qoe,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let dir = config.run.out_dir.clone();
    let header = [
        "schedule",
        "step_size",
        "hyperperiod",
        "total_qoe",
        "shared_slots",
        "gap_pct",
    ]
    .map(String::from)
    .to_vec();
    let body = runs.iter().flat_map(|run| {
        run.qoe
            .iter()
            .zip(&run.shared_slots)
            .enumerate()
            .map(move |(t, (&q, &s))| {
                vec![
                    run.choice.label().to_string(),
                    fmt_f64(run.choice.step_size()),
                    t.to_string(),
                    fmt_f64(q),
                    fmt_f64(s),
                    fmt_f64(relative_gap_pct(q, reference)),
                ]
            })
    });
    write_atomic(&dir.join("sweep.csv"), &csv_bytes(header, body)?)?;
    let header = [
        "schedule",
        "step_size",
        "reference_qoe",
        "final_qoe",
        "final_gap_pct",
        "hyperperiods_to_target",
    ]
    .map(String::from)
    .to_vec();
    let body = runs.iter().map(|run| {
        vec![
            run.choice.label().to_string(),
            fmt_f64(run.choice.step_size()),
            fmt_f64(reference),
            fmt_f64(run.final_qoe),
            fmt_f64(run.final_gap_pct),
            run.hyperperiods_to_target
                .map(|t| t.to_string())
                .unwrap_or_default(),
        ]
    });
    write_atomic(&dir.join("sweep_summary.csv"), &csv_bytes(header, body)?)?;
    let mut manifest = Manifest::new(
        "sweep-stepsize",
        config,
        choices.iter().map(|c| c.to_string()).collect(),
    );
    manifest.reference_objective = Some(reference);
    manifest
        .files
        .extend(["sweep.csv".to_string(), "sweep_summary.csv".to_string()]);
    manifest.write(&dir)?;
    Ok(SweepReport {
        out_dir: dir,
        reference_qoe: reference,
        runs,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
    /// Largest virtual queue at the end of each smoke-test hyperperiod.
    pub smoke_max_queue: Vec<f64>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    fn push(&mut self, name: &'static str, passed: bool, detail: impl Into<String>) {
        self.checks.push(Check {
            name,
            passed,
            detail: detail.into(),
        });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(
                f,
                "{} {}: {}",
                if c.passed { "ok  " } else { "FAIL" },
                c.name,
                c.detail
            )?;
        }
        Ok(())
    }
}

/// Queues are "growing" when they rise in every hyperperiod without
/// slowing down: the last rise is at least half the first.
pub fn queues_growing(max_queue: &[f64]) -> bool {
    if max_queue.len() < 2 {
        return false;
    }
    let rises: Vec<f64> = std::iter::once(max_queue[0])
        .chain(max_queue.windows(2).map(|w| w[1] - w[0]))
        .collect();
    let first = rises[0];
    let last = *rises.last().unwrap();
    rises.iter().all(|&d| d > 0.0) && last >= 0.5 * first
}

/// Schema check, start-point membership, and a short ABS smoke run. Never
/// fails with an error: every problem becomes a failed check.
pub fn cmd_validate(path: &Path, overrides: &Overrides) -> ValidationReport {
    let mut report = ValidationReport::default();
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => {
            report.push(
                "schema",
                false,
                format!("cannot read {}: {e}", path.display()),
            );
            return report;
        }
    };
    let mut config = match ExperimentConfig::from_toml_str(&text) {
        Ok(c) => c,
        Err(e) => {
            report.push("schema", false, e.to_string());
            return report;
        }
    };
    config.apply(overrides);
    report.push("schema", true, "parsed");
    if let Err(e) = config.validate() {
        report.push("values", false, e.to_string());
        return report;
    }
    report.push("values", true, "all fields in range");
    report.push("initial_sharing", true, "inside the sharing polytope");

    let sys = &config.system;
    // best case: one client with every slot of its region at the best capacity
    let mut ceiling_ok = true;
    for regime in std::iter::once(&config.scenario.capacities).chain(
        config
            .scenario
            .switches
            .iter()
            .filter_map(|s| s.capacities.as_ref()),
    ) {
        let best = regime.iter().flatten().copied().fold(0.0, f64::max);
        let top = sys.quality((sys.num_operators * sys.slots_per_period) as f64, best);
        if sys.hinge(top) > sys.hinge_allowance() {
            ceiling_ok = false;
            report.push(
                "quality_ceiling",
                false,
                format!(
                    "best reachable quality {top:.4} cannot clear q_min = {}",
                    sys.q_min
                ),
            );
            break;
        }
    }
    if ceiling_ok {
        report.push("quality_ceiling", true, "q_min is reachable");
    }

    let smoke = ScenarioSpec {
        horizon: SMOKE_HYPERPERIODS,
        ..config.scenario.clone()
    };
    let initial = config.initial_sharing().expect("validated");
    match run_abs(
        sys,
        &smoke,
        SMOKE_HYPERPERIODS,
        &initial,
        Detail::Hyperperiod,
    ) {
        Ok(trace) => {
            report.smoke_max_queue = trace.hyperperiods.iter().map(|h| h.max_queue).collect();
            let shown: Vec<String> = report
                .smoke_max_queue
                .iter()
                .map(|q| format!("{q:.3}"))
                .collect();
            if queues_growing(&report.smoke_max_queue) {
                report.push(
                    "smoke",
                    false,
                    format!(
                        "virtual queues keep growing: max per hyperperiod [{}]",
                        shown.join(", ")
                    ),
                );
            } else {
                report.push(
                    "smoke",
                    true,
                    format!("max queue per hyperperiod [{}]", shown.join(", ")),
                );
            }
        }
        Err(e) => report.push("smoke", false, e.to_string()),
    }
    report
}
