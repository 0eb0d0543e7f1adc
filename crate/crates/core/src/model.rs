//! Domain types shared by every solver: the system configuration, the
//! logarithmic perceived-quality model, sharing matrices and their polytope
//! membership test, per-period samples and allocations, and the virtual
//! deficit queues.
//!
//! Indexing conventions used throughout the crate:
//!
//! * a *cell* is an (operator, region) pair, flattened as `operator * R + region`;
//! * a *client* is flattened as `cell * N + n` where `N` is `clients_per_cell`;
//! * a sharing entry `S^{owner -> recipient}_region` is flattened as
//!   `(region * O + owner) * O + recipient`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance for every feasibility comparison.
pub const FEASIBILITY_TOL: f64 = 1e-9;

/// Perceived video quality as a function of delivered rate:
/// `Q = ln((rate + theta) / beta) / gamma_q`, with `rate` in Mbps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QualityModel {
    pub gamma_q: f64,
    pub theta: f64,
    pub beta: f64,
    #[serde(default = "default_rate_unit_divisor")]
    pub rate_unit_divisor: f64,
}

fn default_rate_unit_divisor() -> f64 {
    1e6
}

impl Default for QualityModel {
    /// The H.264 fit: `gamma_q = 0.8`, `theta = 0.1`, `beta = 0.4`, Mbps units.
    fn default() -> Self {
        QualityModel {
            gamma_q: 0.8,
            theta: 0.1,
            beta: 0.4,
            rate_unit_divisor: 1e6,
        }
    }
}

impl QualityModel {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("quality.gamma_q", self.gamma_q),
            ("quality.theta", self.theta),
            ("quality.beta", self.beta),
            ("quality.rate_unit_divisor", self.rate_unit_divisor),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(
                    name,
                    format!("must be finite and > 0 (got {v})"),
                ));
            }
        }
        Ok(())
    }

    /// Rate in model units (Mbps) delivered by one timeslot.
    #[inline]
    pub fn rate_per_slot(&self, capacity: f64, slots_per_period: usize) -> f64 {
        capacity / (slots_per_period as f64 * self.rate_unit_divisor)
    }

    #[inline]
    pub fn quality_of_rate(&self, rate: f64) -> f64 {
        ((rate + self.theta) / self.beta).ln() / self.gamma_q
    }

    #[inline]
    pub fn quality(&self, tau: f64, capacity: f64, slots_per_period: usize) -> f64 {
        self.quality_of_rate(tau * self.rate_per_slot(capacity, slots_per_period))
    }

    /// Derivative of [`quality`](Self::quality) with respect to `tau`.
    #[inline]
    pub fn marginal(&self, tau: f64, capacity: f64, slots_per_period: usize) -> f64 {
        let k = self.rate_per_slot(capacity, slots_per_period);
        k / (self.gamma_q * (k * tau + self.theta))
    }

    /// Smallest `tau >= 0` reaching quality `q`; zero when `q <= quality(0)`.
    pub fn inverse(&self, q: f64, capacity: f64, slots_per_period: usize) -> f64 {
        let rate = self.beta * (self.gamma_q * q).exp() - self.theta;
        if rate <= 0.0 {
            return 0.0;
        }
        rate / self.rate_per_slot(capacity, slots_per_period)
    }
}

/// Free functions mirroring the operation names used in the docs and tests.
pub fn quality(tau: f64, capacity: f64, model: &QualityModel, slots_per_period: usize) -> f64 {
    model.quality(tau, capacity, slots_per_period)
}

pub fn quality_inverse(
    q: f64,
    capacity: f64,
    model: &QualityModel,
    slots_per_period: usize,
) -> f64 {
    model.inverse(q, capacity, slots_per_period)
}

/// How the sharing step size evolves across hyperperiods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepSchedule {
    #[default]
    Constant,
    /// `eta_t = eta / sqrt(t)` with `t` counted from 1.
    InverseSqrt,
}

/// Static parameters of the simulated world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub num_operators: usize,
    pub num_regions: usize,
    pub clients_per_cell: usize,
    pub slots_per_period: usize,
    pub periods_per_hyperperiod: usize,
    pub balance_bound: f64,
    pub q_min: f64,
    pub alpha: f64,
    pub v_weight: f64,
    pub step_size: f64,
    #[serde(default)]
    pub step_schedule: StepSchedule,
    pub percentile: f64,
    pub quality: QualityModel,
}

impl SystemConfig {
    /// Default simulation settings: 2 operators, 2 regions, 30 clients per
    /// cell, `T = 20`, `H = 20`, `zeta = 0.001`, `Q_min = 0.3`, `alpha = 0.008`,
    /// `eta = 0.01`, `V = 1`.
    pub fn table2() -> Self {
        SystemConfig {
            num_operators: 2,
            num_regions: 2,
            clients_per_cell: 30,
            slots_per_period: 20,
            periods_per_hyperperiod: 20,
            balance_bound: 0.001,
            q_min: 0.3,
            alpha: 0.008,
            v_weight: 1.0,
            step_size: 0.01,
            step_schedule: StepSchedule::Constant,
            percentile: 0.95,
            quality: QualityModel::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("num_operators", self.num_operators),
            ("num_regions", self.num_regions),
            ("clients_per_cell", self.clients_per_cell),
            ("slots_per_period", self.slots_per_period),
            ("periods_per_hyperperiod", self.periods_per_hyperperiod),
        ] {
            if v < 1 {
                return Err(Error::config(name, "must be at least 1"));
            }
        }
        if !(self.balance_bound.is_finite() && self.balance_bound >= 0.0) {
            return Err(Error::config("balance_bound", "must be finite and >= 0"));
        }
        if !self.q_min.is_finite() {
            return Err(Error::config("q_min", "must be finite"));
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::config("alpha", "must be > 0"));
        }
        if !(self.v_weight.is_finite() && self.v_weight > 0.0) {
            return Err(Error::config("v_weight", "must be > 0"));
        }
        // eta = 0 is allowed so a run can be frozen at its initial sharing.
        if !(self.step_size.is_finite() && self.step_size >= 0.0) {
            return Err(Error::config("step_size", "must be finite and >= 0"));
        }
        if !(self.percentile > 0.0 && self.percentile < 1.0) {
            return Err(Error::config(
                "percentile",
                "must lie strictly between 0 and 1",
            ));
        }
        self.quality.validate()
    }

    #[inline]
    pub fn num_cells(&self) -> usize {
        self.num_operators * self.num_regions
    }

    #[inline]
    pub fn num_clients(&self) -> usize {
        self.num_cells() * self.clients_per_cell
    }

    #[inline]
    pub fn cell_index(&self, operator: usize, region: usize) -> usize {
        operator * self.num_regions + region
    }

    /// `(operator, region)` of a flattened cell index.
    #[inline]
    pub fn cell_coords(&self, cell: usize) -> (usize, usize) {
        (cell / self.num_regions, cell % self.num_regions)
    }

    #[inline]
    pub fn clients_of(&self, cell: usize) -> std::ops::Range<usize> {
        let n = self.clients_per_cell;
        cell * n..(cell + 1) * n
    }

    /// Hinge allowance per arrival: `(1 - percentile) * alpha`.
    #[inline]
    pub fn hinge_allowance(&self) -> f64 {
        (1.0 - self.percentile) * self.alpha
    }

    /// Hinge term `(Q_min - Q + alpha)_+`.
    #[inline]
    pub fn hinge(&self, q: f64) -> f64 {
        (self.q_min - q + self.alpha).max(0.0)
    }

    #[inline]
    pub fn quality(&self, tau: f64, capacity: f64) -> f64 {
        self.quality.quality(tau, capacity, self.slots_per_period)
    }

    /// Step size for hyperperiod `t` (0-based).
    pub fn step_at(&self, t: usize) -> f64 {
        match self.step_schedule {
            StepSchedule::Constant => self.step_size,
            StepSchedule::InverseSqrt => self.step_size / ((t + 1) as f64).sqrt(),
        }
    }
}

/// Timeslots each owner grants each recipient, per region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharingMatrix {
    num_operators: usize,
    num_regions: usize,
    entries: Vec<f64>,
}

impl SharingMatrix {
    pub fn zeros(num_operators: usize, num_regions: usize) -> Self {
        SharingMatrix {
            num_operators,
            num_regions,
            entries: vec![0.0; num_operators * num_operators * num_regions],
        }
    }

    /// Every operator keeps all `T` slots in every region.
    pub fn no_sharing(cfg: &SystemConfig) -> Self {
        let mut s = Self::zeros(cfg.num_operators, cfg.num_regions);
        for r in 0..cfg.num_regions {
            for i in 0..cfg.num_operators {
                s.set(r, i, i, cfg.slots_per_period as f64);
            }
        }
        s
    }

    pub fn from_entries(
        num_operators: usize,
        num_regions: usize,
        entries: Vec<f64>,
    ) -> Result<Self> {
        let want = num_operators * num_operators * num_regions;
        if entries.len() != want {
            return Err(Error::Shape(format!(
                "sharing matrix needs {want} entries, got {}",
                entries.len()
            )));
        }
        Ok(SharingMatrix {
            num_operators,
            num_regions,
            entries,
        })
    }

    /// Builds from nested `[region][owner][recipient]` rows.
    pub fn from_nested(rows: &[Vec<Vec<f64>>]) -> Result<Self> {
        let num_regions = rows.len();
        let num_operators = rows.first().map_or(0, |r| r.len());
        let mut entries = Vec::with_capacity(num_regions * num_operators * num_operators);
        for region in rows {
            if region.len() != num_operators {
                return Err(Error::Shape("ragged sharing matrix".into()));
            }
            for owner in region {
                if owner.len() != num_operators {
                    return Err(Error::Shape("ragged sharing matrix".into()));
                }
                entries.extend_from_slice(owner);
            }
        }
        Self::from_entries(num_operators, num_regions, entries)
    }

    pub fn to_nested(&self) -> Vec<Vec<Vec<f64>>> {
        (0..self.num_regions)
            .map(|r| {
                (0..self.num_operators)
                    .map(|j| (0..self.num_operators).map(|i| self.get(r, j, i)).collect())
                    .collect()
            })
            .collect()
    }

    #[inline]
    pub fn num_operators(&self) -> usize {
        self.num_operators
    }

    #[inline]
    pub fn num_regions(&self) -> usize {
        self.num_regions
    }

    #[inline]
    pub fn index(&self, region: usize, owner: usize, recipient: usize) -> usize {
        (region * self.num_operators + owner) * self.num_operators + recipient
    }

    #[inline]
    pub fn get(&self, region: usize, owner: usize, recipient: usize) -> f64 {
        self.entries[self.index(region, owner, recipient)]
    }

    #[inline]
    pub fn set(&mut self, region: usize, owner: usize, recipient: usize, value: f64) {
        let k = self.index(region, owner, recipient);
        self.entries[k] = value;
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [f64] {
        &mut self.entries
    }

    /// Slots usable by `recipient` in `region`: `sum_j S^{j -> recipient}_region`.
    pub fn budget(&self, recipient: usize, region: usize) -> f64 {
        (0..self.num_operators)
            .map(|j| self.get(region, j, recipient))
            .sum()
    }

    /// Slots `owner` hands out in `region`, including self-use.
    pub fn owner_total(&self, owner: usize, region: usize) -> f64 {
        let start = self.index(region, owner, 0);
        self.entries[start..start + self.num_operators].iter().sum()
    }

    /// Net slots flowing to `i` from `j` across regions:
    /// `sum_r S^{j -> i}_r - sum_r S^{i -> j}_r`.
    pub fn net_transfer(&self, i: usize, j: usize) -> f64 {
        (0..self.num_regions)
            .map(|r| self.get(r, j, i) - self.get(r, i, j))
            .sum()
    }

    /// Budgets for every cell, indexed like [`SystemConfig::cell_index`].
    pub fn budgets(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_operators * self.num_regions);
        for i in 0..self.num_operators {
            for r in 0..self.num_regions {
                out.push(self.budget(i, r));
            }
        }
        out
    }

    /// Total off-diagonal slots, i.e. slots actually lent to other operators.
    pub fn total_shared(&self) -> f64 {
        let mut total = 0.0;
        for r in 0..self.num_regions {
            for j in 0..self.num_operators {
                for i in 0..self.num_operators {
                    if i != j {
                        total += self.get(r, j, i);
                    }
                }
            }
        }
        total
    }

    pub fn max_abs_diff(&self, other: &SharingMatrix) -> f64 {
        self.entries
            .iter()
            .zip(&other.entries)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn distance(&self, other: &SharingMatrix) -> f64 {
        self.entries
            .iter()
            .zip(&other.entries)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    fn check_shape(&self, cfg: &SystemConfig) -> Result<()> {
        if self.num_operators != cfg.num_operators || self.num_regions != cfg.num_regions {
            return Err(Error::Shape(format!(
                "sharing matrix is {}x{}, config expects {} operators x {} regions",
                self.num_operators, self.num_regions, cfg.num_operators, cfg.num_regions
            )));
        }
        Ok(())
    }
}

/// Realized arrivals and per-slot channel capacities for one period.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodSample {
    pub arrivals: Vec<bool>,
    /// Bits deliverable to the client in one timeslot.
    pub capacities: Vec<f64>,
}

impl PeriodSample {
    pub fn validate(&self, cfg: &SystemConfig) -> Result<()> {
        let n = cfg.num_clients();
        if self.arrivals.len() != n || self.capacities.len() != n {
            return Err(Error::Shape(format!(
                "period sample has {} arrivals / {} capacities, expected {n}",
                self.arrivals.len(),
                self.capacities.len()
            )));
        }
        for (client, &c) in self.capacities.iter().enumerate() {
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::NonFiniteCapacity { client });
            }
        }
        Ok(())
    }

    pub fn arrival_count(&self, cfg: &SystemConfig, cell: usize) -> usize {
        self.arrivals[cfg.clients_of(cell)]
            .iter()
            .filter(|&&a| a)
            .count()
    }
}

/// Timeslot allocations for one period plus the budget multiplier of each cell.
#[derive(Debug, Clone, PartialEq)]
pub struct AllocationResult {
    pub tau: Vec<f64>,
    pub duals: Vec<f64>,
}

/// Per-client deficit against the long-run hinge constraint.
#[derive(Debug, Clone, PartialEq)]
pub struct VirtualQueueLedger {
    pub p: Vec<f64>,
}

impl VirtualQueueLedger {
    pub fn zeros(num_clients: usize) -> Self {
        VirtualQueueLedger {
            p: vec![0.0; num_clients],
        }
    }

    pub fn max(&self) -> f64 {
        self.p.iter().copied().fold(0.0, f64::max)
    }
}

/// Sum of qualities over arrived clients in one period.
pub fn period_qoe(cfg: &SystemConfig, sample: &PeriodSample, allocation: &AllocationResult) -> f64 {
    sample
        .arrivals
        .iter()
        .zip(&allocation.tau)
        .zip(&sample.capacities)
        .filter(|((&a, _), _)| a)
        .map(|((_, &tau), &c)| cfg.quality(tau, c))
        .sum()
}

/// Time-averaged total QoE over a trace of periods.
pub fn total_qoe(cfg: &SystemConfig, trace: &[(PeriodSample, AllocationResult)]) -> Result<f64> {
    if trace.is_empty() {
        return Err(Error::NoPeriods);
    }
    let sum: f64 = trace.iter().map(|(s, a)| period_qoe(cfg, s, a)).sum();
    Ok(sum / trace.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub enum ViolationKind {
    Nonnegativity {
        region: usize,
        owner: usize,
        recipient: usize,
    },
    OwnerCap {
        owner: usize,
        region: usize,
    },
    /// `|net_transfer(i, j)| > zeta`, with `i < j`.
    Balance {
        i: usize,
        j: usize,
    },
}

impl std::fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ViolationKind::Nonnegativity {
                region,
                owner,
                recipient,
            } => write!(f, "nonnegativity S[{region}][{owner}->{recipient}]"),
            ViolationKind::OwnerCap { owner, region } => {
                write!(f, "owner cap (owner {owner}, region {region})")
            }
            ViolationKind::Balance { i, j } => write!(f, "balance pair ({i},{j})"),
        }
    }
}

/// A violated constraint; `slack` is negative by the amount of violation.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub kind: ViolationKind,
    pub slack: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SharingVerdict {
    pub violations: Vec<Violation>,
}

impl SharingVerdict {
    pub fn is_member(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks nonnegativity, per-owner caps and pairwise balance bands, all at
/// [`FEASIBILITY_TOL`].
pub fn validate_sharing(s: &SharingMatrix, cfg: &SystemConfig) -> Result<SharingVerdict> {
    s.check_shape(cfg)?;
    let mut violations = Vec::new();
    let t = cfg.slots_per_period as f64;
    for r in 0..cfg.num_regions {
        for j in 0..cfg.num_operators {
            for i in 0..cfg.num_operators {
                let v = s.get(r, j, i);
                if !(v >= -FEASIBILITY_TOL) {
                    violations.push(Violation {
                        kind: ViolationKind::Nonnegativity {
                            region: r,
                            owner: j,
                            recipient: i,
                        },
                        slack: v,
                    });
                }
            }
            let slack = t - s.owner_total(j, r);
            if !(slack >= -FEASIBILITY_TOL) {
                violations.push(Violation {
                    kind: ViolationKind::OwnerCap {
                        owner: j,
                        region: r,
                    },
                    slack,
                });
            }
        }
    }
    for i in 0..cfg.num_operators {
        for j in i + 1..cfg.num_operators {
            let slack = cfg.balance_bound - s.net_transfer(i, j).abs();
            if !(slack >= -FEASIBILITY_TOL) {
                violations.push(Violation {
                    kind: ViolationKind::Balance { i, j },
                    slack,
                });
            }
        }
    }
    Ok(SharingVerdict { violations })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    /// Root of `q(rate) = target` by plain bisection, independent of `inverse`.
    fn rate_root(model: &QualityModel, target: f64) -> f64 {
        let (mut lo, mut hi) = (0.0, 100.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if model.quality_of_rate(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn quality_examples() {
        let m = QualityModel::default();
        assert!(close(m.quality_of_rate(0.3), 0.0, 1e-12));
        // 20 slots at 10 Mb/slot over T = 20 is 10 Mbps.
        let q = quality(20.0, 10e6, &m, 20);
        assert!(close(q, 1.25 * (10.1f64 / 0.4).ln(), 1e-12));
        assert!(close(q, 4.036, 1e-3));
        let r = rate_root(&m, 0.3);
        assert!(close(r, 0.4085, 1e-4));
        assert!(close(m.quality_of_rate(r), 0.3, 1e-9));
    }

    #[test]
    fn inverse_examples() {
        let m = QualityModel::default();
        let q0 = quality(0.0, 10e6, &m, 20);
        assert_eq!(quality_inverse(q0, 10e6, &m, 20), 0.0);
        assert_eq!(quality_inverse(q0 - 1.0, 10e6, &m, 20), 0.0);
        assert!(close(quality_inverse(0.0, 10e6, &m, 20), 0.6, 1e-12));
        let tau = quality_inverse(0.3, 10e6, &m, 20);
        let oracle = rate_root(&m, 0.3) * 20.0 * 1e6 / 10e6;
        assert!(close(tau, oracle, 1e-9));
        assert!(close(tau, 0.817, 1e-3));
    }

    #[test]
    fn marginal_matches_finite_difference() {
        let m = QualityModel::default();
        for &tau in &[0.0, 0.3, 1.0, 7.5, 19.0] {
            let h = 1e-6;
            let fd = (m.quality(tau + h, 10e6, 20) - m.quality(tau, 10e6, 20)) / h;
            assert!(close(fd, m.marginal(tau, 10e6, 20), 1e-4), "tau={tau}");
        }
    }

    #[test]
    fn total_qoe_examples() {
        let cfg = SystemConfig {
            num_operators: 1,
            num_regions: 1,
            clients_per_cell: 1,
            ..SystemConfig::table2()
        };
        let sample = PeriodSample {
            arrivals: vec![true],
            capacities: vec![10e6],
        };
        let alloc = AllocationResult {
            tau: vec![10.0],
            duals: vec![0.0],
        };
        let one = total_qoe(&cfg, &[(sample.clone(), alloc.clone())]).unwrap();
        assert!(close(one, 1.25 * (5.1f64 / 0.4).ln(), 1e-12));
        assert!(close(one, 3.182, 1e-3));
        let two = total_qoe(
            &cfg,
            &[(sample.clone(), alloc.clone()), (sample, alloc.clone())],
        )
        .unwrap();
        assert!(close(one, two, 1e-12));

        let idle = PeriodSample {
            arrivals: vec![false],
            capacities: vec![10e6],
        };
        assert_eq!(total_qoe(&cfg, &[(idle, alloc)]).unwrap(), 0.0);
        assert!(matches!(total_qoe(&cfg, &[]), Err(Error::NoPeriods)));
    }

    #[test]
    fn no_sharing_is_member() {
        let cfg = SystemConfig::table2();
        let s = SharingMatrix::no_sharing(&cfg);
        assert!(validate_sharing(&s, &cfg).unwrap().is_member());
        assert_eq!(s.budget(0, 1), 20.0);
        assert_eq!(s.total_shared(), 0.0);
    }

    #[test]
    fn negative_entry_is_flagged() {
        let cfg = SystemConfig::table2();
        let mut s = SharingMatrix::no_sharing(&cfg);
        s.set(1, 0, 1, -0.1);
        let v = validate_sharing(&s, &cfg).unwrap();
        assert!(!v.is_member());
        assert!(v.violations.iter().any(|x| matches!(
            x.kind,
            ViolationKind::Nonnegativity {
                region: 1,
                owner: 0,
                recipient: 1
            }
        )));
    }

    #[test]
    fn imbalance_is_flagged() {
        let cfg = SystemConfig {
            num_regions: 1,
            ..SystemConfig::table2()
        };
        let zeta = cfg.balance_bound;
        let mut s = SharingMatrix::zeros(2, 1);
        s.set(0, 0, 1, 5.0);
        s.set(0, 1, 0, 5.0 + 2.0 * zeta);
        let v = validate_sharing(&s, &cfg).unwrap();
        assert_eq!(v.violations.len(), 1);
        assert_eq!(v.violations[0].kind, ViolationKind::Balance { i: 0, j: 1 });
        assert!(close(v.violations[0].slack, -zeta, 1e-12));
        assert_eq!(v.violations[0].kind.to_string(), "balance pair (0,1)");
    }

    #[test]
    fn cap_violation_is_flagged() {
        let cfg = SystemConfig::table2();
        let mut s = SharingMatrix::no_sharing(&cfg);
        s.set(0, 1, 0, 0.5);
        s.set(1, 0, 1, 0.5);
        let v = validate_sharing(&s, &cfg).unwrap();
        let caps: Vec<_> = v
            .violations
            .iter()
            .filter(|x| matches!(x.kind, ViolationKind::OwnerCap { .. }))
            .collect();
        assert_eq!(caps.len(), 2);
    }

    #[test]
    fn config_validation() {
        assert!(SystemConfig::table2().validate().is_ok());
        let bad = SystemConfig {
            balance_bound: -1.0,
            ..SystemConfig::table2()
        };
        match bad.validate() {
            Err(Error::InvalidConfig { field, .. }) => assert_eq!(field, "balance_bound"),
            other => panic!("unexpected {other:?}"),
        }
        let bad = SystemConfig {
            percentile: 1.0,
            ..SystemConfig::table2()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn step_schedule() {
        let mut cfg = SystemConfig::table2();
        assert_eq!(cfg.step_at(99), 0.01);
        cfg.step_schedule = StepSchedule::InverseSqrt;
        cfg.step_size = 0.1;
        assert!(close(cfg.step_at(0), 0.1, 1e-15));
        assert!(close(cfg.step_at(99), 0.01, 1e-15));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn quality_is_concave_and_increasing(
                cap in 1e5f64..1e8,
                a in 0.0f64..30.0,
                gap1 in 1e-3f64..10.0,
                gap2 in 1e-3f64..10.0,
            ) {
                let m = QualityModel::default();
                let b = a + gap1;
                let c = b + gap2;
                let (qa, qb, qc) = (m.quality(a, cap, 20), m.quality(b, cap, 20), m.quality(c, cap, 20));
                prop_assert!(qa < qb && qb < qc);
                let chord = ((c - b) * qa + (b - a) * qc) / (c - a);
                prop_assert!(qb >= chord - 1e-9);
            }

            #[test]
            fn inverse_round_trips(cap in 1e5f64..1e8, tau in 0.0f64..40.0) {
                let m = QualityModel::default();
                let q = m.quality(tau, cap, 20);
                let back = m.inverse(q, cap, 20);
                prop_assert!((back - tau).abs() <= 1e-9 * (1.0 + tau));
            }
        }
    }
}
