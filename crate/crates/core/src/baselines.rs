//! Comparison policies: no sharing, the offline optimal static sharing, a
//! per-period dynamic sharing proxy, and the closed-form full-sharing gap.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::abs::{run_abs, update_virtual_queues};
use crate::error::{Error, Result};
use crate::model::{
    AllocationResult, PeriodSample, SharingMatrix, SystemConfig, VirtualQueueLedger,
};
use crate::projection::SharingPolytope;
use crate::ra::{cell_demand, solve_cell, solve_ra, CellParams, RaProblem, BUDGET_REL_TOL};
use crate::scenario::{
    generate_period, generate_range, Detail, RunTrace, ScenarioSpec, TraceRecorder,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    NoSharing,
    #[serde(alias = "opt_ss_star")]
    OptimalStaticStar,
    #[serde(alias = "dynamic")]
    DynamicProxy,
    Abs,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 4] = [
        PolicyKind::NoSharing,
        PolicyKind::OptimalStaticStar,
        PolicyKind::DynamicProxy,
        PolicyKind::Abs,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PolicyKind::NoSharing => "no_sharing",
            PolicyKind::OptimalStaticStar => "opt_ss_star",
            PolicyKind::DynamicProxy => "dynamic",
            PolicyKind::Abs => "abs",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "no_sharing" | "no-sharing" => Ok(PolicyKind::NoSharing),
            "opt_ss_star" | "optimal_static_star" | "opt-ss-star" => {
                Ok(PolicyKind::OptimalStaticStar)
            }
            "dynamic" | "dynamic_proxy" => Ok(PolicyKind::DynamicProxy),
            "abs" => Ok(PolicyKind::Abs),
            other => Err(Error::config("policy", format!("unknown policy `{other}`"))),
        }
    }
}

pub fn no_sharing_matrix(cfg: &SystemConfig) -> SharingMatrix {
    SharingMatrix::no_sharing(cfg)
}

/// The no-sharing baseline is measured without a quality floor.
pub fn no_sharing_config(cfg: &SystemConfig) -> SystemConfig {
    SystemConfig {
        q_min: 0.0,
        ..cfg.clone()
    }
}

/// Runs the allocation loop under a fixed sharing matrix.
pub fn run_static(
    cfg: &SystemConfig,
    scenario: &ScenarioSpec,
    sharing: &SharingMatrix,
    horizon: usize,
    detail: Detail,
) -> Result<RunTrace> {
    let frozen = SystemConfig {
        step_size: 0.0,
        ..cfg.clone()
    };
    run_abs(&frozen, scenario, horizon, sharing, detail)
}

/// No sharing, with `Q_min = 0`.
pub fn run_no_sharing(
    cfg: &SystemConfig,
    scenario: &ScenarioSpec,
    horizon: usize,
    detail: Detail,
) -> Result<RunTrace> {
    run_static(
        &no_sharing_config(cfg),
        scenario,
        &no_sharing_matrix(cfg),
        horizon,
        detail,
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptSsStarOptions {
    pub max_iters: usize,
    /// Stop once the gradient-mapping norm falls below this.
    pub tol: f64,
    pub initial_step: f64,
    /// Starting point; defaults to no sharing.
    pub initial: Option<SharingMatrix>,
}

impl Default for OptSsStarOptions {
    fn default() -> Self {
        OptSsStarOptions {
            max_iters: 5000,
            tol: 1e-4,
            initial_step: 1.0,
            initial: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptSsStarSolution {
    pub sharing: SharingMatrix,
    /// Mean per-period QoE over the record.
    pub objective: f64,
    /// Per-cell multiplier of the pooled hinge constraint.
    pub multipliers: Vec<f64>,
    /// Smallest per-cell budget for which the hinge constraint can be met.
    pub budget_floors: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub gradient_mapping_norm: f64,
}

/// Periods grouped by the multiset of arrived capacities in one cell.
#[derive(Debug, Clone)]
struct CellGroups {
    groups: Vec<(f64, Vec<f64>)>,
    arrivals: f64,
}

#[derive(Debug, Clone, Copy)]
struct CellValue {
    qoe: f64,
    grad: f64,
    mu: f64,
}

/// Offline static problem: maximize the time-averaged QoE over sharing
/// matrices, with each cell's hinge constraint pooled over its clients.
struct StaticProblem<'a> {
    params: CellParams<'a>,
    cells: Vec<CellGroups>,
    periods: f64,
    allowance: f64,
    max_budget: f64,
}

const HINGE_SLACK: f64 = 1e-9;
const MU_HUGE: f64 = 1e8;

impl<'a> StaticProblem<'a> {
    fn new(cfg: &'a SystemConfig, samples: &[PeriodSample]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::NoPeriods);
        }
        let mut maps: Vec<BTreeMap<Vec<u64>, usize>> = vec![BTreeMap::new(); cfg.num_cells()];
        for (k, sample) in samples.iter().enumerate() {
            sample
                .validate(cfg)
                .map_err(|e| e.in_period("opt_ss_star", k))?;
            for (cell, map) in maps.iter_mut().enumerate() {
                let mut caps: Vec<f64> = cfg
                    .clients_of(cell)
                    .filter(|&n| sample.arrivals[n])
                    .map(|n| sample.capacities[n])
                    .collect();
                if caps.is_empty() {
                    continue;
                }
                caps.sort_by(f64::total_cmp);
                *map.entry(caps.iter().map(|c| c.to_bits()).collect())
                    .or_default() += 1;
            }
        }
        let cells = maps
            .into_iter()
            .map(|map| {
                let groups: Vec<(f64, Vec<f64>)> = map
                    .into_iter()
                    .map(|(key, count)| {
                        (count as f64, key.into_iter().map(f64::from_bits).collect())
                    })
                    .collect();
                let arrivals = groups.iter().map(|(c, caps)| c * caps.len() as f64).sum();
                CellGroups { groups, arrivals }
            })
            .collect();
        Ok(StaticProblem {
            params: CellParams {
                model: &cfg.quality,
                slots_per_period: cfg.slots_per_period,
                v_weight: 1.0,
                q_min: cfg.q_min,
                alpha: cfg.alpha,
            },
            cells,
            periods: samples.len() as f64,
            allowance: cfg.hinge_allowance(),
            max_budget: (cfg.num_operators * cfg.slots_per_period) as f64,
        })
    }

    /// Totals over the record at multiplier `mu`: (qoe, hinge, sum of duals).
    fn eval_at(&self, cell: usize, budget: f64, mu: f64) -> Result<(f64, f64, f64)> {
        let prm = &self.params;
        let (mut qoe, mut hinge, mut grad) = (0.0, 0.0, 0.0);
        let mut queues = Vec::new();
        for (count, caps) in &self.cells[cell].groups {
            queues.clear();
            queues.resize(caps.len(), mu);
            let alloc = solve_cell(prm, budget, caps, &queues)?;
            for (&t, &c) in alloc.tau.iter().zip(caps) {
                let q = prm.model.quality(t, c, prm.slots_per_period);
                qoe += count * q;
                hinge += count * (prm.q_min - q + prm.alpha).max(0.0);
            }
            grad += count * alloc.lambda;
        }
        Ok((qoe, hinge, grad))
    }

    fn hinge_cap(&self, cell: usize) -> f64 {
        let m = self.cells[cell].arrivals;
        self.allowance * m + HINGE_SLACK * m.max(1.0)
    }

    fn cell_value(&self, cell: usize, budget: f64) -> Result<CellValue> {
        let cap = self.hinge_cap(cell);
        let (qoe, hinge, grad) = self.eval_at(cell, budget, 0.0)?;
        if hinge <= cap {
            return Ok(CellValue { qoe, grad, mu: 0.0 });
        }
        let mut hi = 1.0;
        loop {
            let (_, h, _) = self.eval_at(cell, budget, hi)?;
            if h <= cap {
                break;
            }
            hi *= 4.0;
            if hi > MU_HUGE {
                break;
            }
        }
        let mut lo = 0.0;
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            let (_, h, _) = self.eval_at(cell, budget, mid)?;
            if h <= cap {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let (qoe, _, grad) = self.eval_at(cell, budget, hi)?;
        Ok(CellValue { qoe, grad, mu: hi })
    }

    /// Smallest budget at which the hinge-minimizing allocation meets the
    /// pooled allowance.
    fn floor(&self, cell: usize) -> Result<f64> {
        let cap = self.hinge_cap(cell);
        let min_hinge = |b: f64| self.eval_at(cell, b, MU_HUGE).map(|r| r.1);
        if min_hinge(0.0)? <= cap {
            return Ok(0.0);
        }
        if min_hinge(self.max_budget)? > cap {
            return Err(Error::Infeasible(format!(
                "cell {cell} cannot meet its quality floor even with every slot of the region"
            )));
        }
        let (mut lo, mut hi) = (0.0, self.max_budget);
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if min_hinge(mid)? <= cap {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(hi)
    }

    /// Mean per-period QoE, its gradient per cell, and the multipliers.
    fn evaluate(&self, s: &SharingMatrix, cfg: &SystemConfig) -> Result<(f64, Vec<f64>, Vec<f64>)> {
        let mut total = 0.0;
        let mut grads = vec![0.0; cfg.num_cells()];
        let mut mus = vec![0.0; cfg.num_cells()];
        for cell in 0..cfg.num_cells() {
            let (i, r) = cfg.cell_coords(cell);
            let v = self.cell_value(cell, s.budget(i, r).max(0.0))?;
            total += v.qoe;
            grads[cell] = v.grad / self.periods;
            mus[cell] = v.mu;
        }
        Ok((total / self.periods, grads, mus))
    }
}

/// Solves the offline optimal static sharing problem on a complete record.
pub fn solve_opt_ss_star(
    cfg: &SystemConfig,
    samples: &[PeriodSample],
) -> Result<OptSsStarSolution> {
    solve_opt_ss_star_with(cfg, samples, &OptSsStarOptions::default())
}

/// Projected gradient ascent with backtracking over the sharing polytope
/// intersected with the per-cell budget floors.
pub fn solve_opt_ss_star_with(
    cfg: &SystemConfig,
    samples: &[PeriodSample],
    opts: &OptSsStarOptions,
) -> Result<OptSsStarSolution> {
    cfg.validate()?;
    let problem = StaticProblem::new(cfg, samples)?;
    let floors = (0..cfg.num_cells())
        .map(|c| {
            problem
                .floor(c)
                .map(|f| if f > 0.0 { f + 1e-7 } else { 0.0 })
        })
        .collect::<Result<Vec<f64>>>()?;
    for r in 0..cfg.num_regions {
        let need: f64 = (0..cfg.num_operators)
            .map(|i| floors[cfg.cell_index(i, r)])
            .sum();
        if need > problem.max_budget {
            return Err(Error::Infeasible(format!(
                "region {r} needs {need:.3} slots to meet every quality floor"
            )));
        }
    }
    let polytope = if floors.iter().any(|&f| f > 0.0) {
        SharingPolytope::new(cfg).with_budget_floors(floors.clone())
    } else {
        SharingPolytope::new(cfg)
    };
    let project = |s: &SharingMatrix| {
        polytope.project(s).map_err(|e| match e {
            Error::ProjectionStalled { .. } => {
                Error::Infeasible("quality floors are incompatible with the balance band".into())
            }
            e => e,
        })
    };
    let start = opts
        .initial
        .clone()
        .unwrap_or_else(|| no_sharing_matrix(cfg));
    let mut s = project(&start)?;
    let (mut f, mut grad, mut mus) = problem.evaluate(&s, cfg)?;
    let mut step = opts.initial_step;
    let mut gm = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0;
    let ascent = |s: &SharingMatrix, grad: &[f64], step: f64| {
        let mut moved = s.clone();
        for r in 0..cfg.num_regions {
            for j in 0..cfg.num_operators {
                for i in 0..cfg.num_operators {
                    let k = moved.index(r, j, i);
                    moved.entries_mut()[k] += step * grad[cfg.cell_index(i, r)];
                }
            }
        }
        moved
    };
    while iterations < opts.max_iters {
        iterations += 1;
        let (next, f_next, grad_next, mus_next, d) = loop {
            let next = project(&ascent(&s, &grad, step))?;
            let d: Vec<f64> = next
                .entries()
                .iter()
                .zip(s.entries())
                .map(|(a, b)| a - b)
                .collect();
            let (f_next, grad_next, mus_next) = problem.evaluate(&next, cfg)?;
            let linear: f64 = (0..cfg.num_regions)
                .flat_map(|r| {
                    (0..cfg.num_operators)
                        .flat_map(move |j| (0..cfg.num_operators).map(move |i| (r, j, i)))
                })
                .map(|(r, j, i)| grad[cfg.cell_index(i, r)] * d[s.index(r, j, i)])
                .sum();
            let sq: f64 = d.iter().map(|v| v * v).sum();
            if f_next >= f + linear - sq / (2.0 * step) - 1e-12 * f.abs().max(1.0) || step < 1e-10 {
                break (next, f_next, grad_next, mus_next, sq.sqrt());
            }
            step *= 0.5;
        };
        gm = d / step;
        s = next;
        f = f_next;
        grad = grad_next;
        mus = mus_next;
        if gm < opts.tol {
            converged = true;
            break;
        }
        step = (step * 2.0).min(1e3);
    }
    Ok(OptSsStarSolution {
        sharing: s,
        objective: f,
        multipliers: mus,
        budget_floors: floors,
        converged,
        iterations,
        gradient_mapping_norm: gm,
    })
}

/// Allocation the static solution prescribes for one period: the budget of
/// each cell is split with the hinge priced at the cell's multiplier.
pub fn static_allocation(
    cfg: &SystemConfig,
    sharing: &SharingMatrix,
    multipliers: &[f64],
    sample: &PeriodSample,
) -> Result<AllocationResult> {
    let unit = SystemConfig {
        v_weight: 1.0,
        ..cfg.clone()
    };
    let queues: Vec<f64> = (0..cfg.num_clients())
        .map(|n| multipliers[n / cfg.clients_per_cell])
        .collect();
    solve_ra(&RaProblem {
        cfg: &unit,
        budgets: &sharing.budgets(),
        sample,
        queues: &queues,
    })
}

/// Per-period QoE of a static solution replayed on `samples`.
pub fn evaluate_static(
    cfg: &SystemConfig,
    sharing: &SharingMatrix,
    multipliers: &[f64],
    samples: &[PeriodSample],
) -> Result<Vec<f64>> {
    samples
        .iter()
        .enumerate()
        .map(|(k, sample)| {
            let alloc = static_allocation(cfg, sharing, multipliers, sample)
                .map_err(|e| e.in_period("opt_ss_star", k))?;
            Ok(crate::model::period_qoe(cfg, sample, &alloc))
        })
        .collect()
}

/// Solves the static optimum on the scenario's full record and replays it.
pub fn run_opt_ss_star(
    cfg: &SystemConfig,
    scenario: &ScenarioSpec,
    horizon: usize,
    detail: Detail,
) -> Result<(RunTrace, OptSsStarSolution)> {
    cfg.validate()?;
    scenario.validate(cfg)?;
    let samples = generate_range(scenario, cfg, 0..horizon);
    let solution = solve_opt_ss_star(cfg, &samples)?;
    let mut recorder = TraceRecorder::new(cfg, detail);
    let zeros = vec![0.0; cfg.num_clients()];
    let h = cfg.periods_per_hyperperiod;
    for (k, sample) in samples.iter().enumerate() {
        let alloc = static_allocation(cfg, &solution.sharing, &solution.multipliers, sample)
            .map_err(|e| e.in_period("opt_ss_star", k))?;
        recorder.record_period(k, sample, &alloc, &zeros, None);
        if (k + 1) % h == 0 {
            recorder.close_hyperperiod(
                Some(&solution.sharing),
                solution.gradient_mapping_norm,
                0.0,
            );
        }
    }
    Ok((recorder.finish(solution.sharing.clone()), solution))
}

/// Budgets of one region's cells for the dynamic proxy: every slot of the
/// region is pooled and cell `i` pays `prices[i]` per slot on top of the
/// common region price, which is raised until the pool suffices.
fn pooled_region_budgets(
    params: &CellParams<'_>,
    pool: f64,
    prices: &[f64],
    caps: &[Vec<f64>],
    queues: &[Vec<f64>],
) -> Result<Vec<f64>> {
    let demand = |nu: f64| -> Vec<f64> {
        (0..caps.len())
            .map(|i| cell_demand(params, prices[i] + nu, &caps[i], &queues[i]))
            .collect()
    };
    let total = |nu: f64| demand(nu).iter().sum::<f64>();
    if total(0.0) <= pool {
        return Ok(demand(0.0));
    }
    let mut lo = caps
        .iter()
        .zip(prices)
        .filter(|(c, _)| !c.is_empty())
        .map(|(_, &p)| -p)
        .fold(0.0, f64::max);
    let mut hi = lo + 1.0;
    let mut iters = 0;
    while total(hi) > pool {
        hi = lo + 2.0 * (hi - lo);
        iters += 1;
        if iters > 200 {
            return Err(Error::BisectionExhausted { iterations: iters });
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if total(mid) > pool {
            lo = mid;
        } else {
            hi = mid;
        }
        if pool - total(hi) <= BUDGET_REL_TOL * pool.max(1.0) {
            break;
        }
    }
    Ok(demand(hi))
}

/// A sharing block giving every cell at least its budget in region `r`:
/// owners with surplus cover the deficit cells in proportion to their
/// surplus and keep whatever is left.
fn realize_budgets(s: &mut SharingMatrix, r: usize, budgets: &[f64], slots: f64) {
    let o = budgets.len();
    let deficits: Vec<f64> = budgets.iter().map(|&b| (b - slots).max(0.0)).collect();
    let surpluses: Vec<f64> = budgets.iter().map(|&b| (slots - b).max(0.0)).collect();
    let total_deficit: f64 = deficits.iter().sum();
    let total_surplus: f64 = surpluses.iter().sum();
    for j in 0..o {
        let mut given = 0.0;
        for i in 0..o {
            if i != j {
                let v = if total_surplus > 0.0 {
                    surpluses[j] / total_surplus * deficits[i]
                } else {
                    0.0
                };
                s.set(r, j, i, v);
                given += v;
            }
        }
        s.set(r, j, j, slots - given);
    }
    debug_assert!(total_deficit <= total_surplus + 1e-6 * slots);
}

/// Per-period joint sharing and allocation.
///
/// Each period the slots of a region are pooled and split across its cells
/// by a common price, so the allocation adapts to every period's arrivals.
/// The long-run balance band is enforced by a pair of virtual queues per
/// operator on its net transfer `sum_r (b_ir - T)`, which act as a per-slot
/// surcharge; the quality floor uses the same deficit queues as ABS. With
/// two operators the per-operator net transfer is exactly the pairwise one.
pub fn run_dynamic_proxy(
    cfg: &SystemConfig,
    scenario: &ScenarioSpec,
    horizon: usize,
    detail: Detail,
) -> Result<RunTrace> {
    run_dynamic_proxy_with(cfg, scenario, horizon, detail, DYNAMIC_BALANCE_WEIGHT)
}

/// Price per slot of one unit of balance backlog in [`run_dynamic_proxy`].
pub const DYNAMIC_BALANCE_WEIGHT: f64 = 1e-2;

/// [`run_dynamic_proxy`] with an explicit balance price weight. Smaller
/// weights track per-period demand more closely but let the running net
/// transfer wander further before it is pulled back.
pub fn run_dynamic_proxy_with(
    cfg: &SystemConfig,
    scenario: &ScenarioSpec,
    horizon: usize,
    detail: Detail,
    balance_weight: f64,
) -> Result<RunTrace> {
    if !(balance_weight.is_finite() && balance_weight > 0.0) {
        return Err(Error::config("balance_weight", "must be finite and > 0"));
    }
    cfg.validate()?;
    scenario.validate(cfg)?;
    let o = cfg.num_operators;
    let h = cfg.periods_per_hyperperiod;
    let slots = cfg.slots_per_period as f64;
    let params = CellParams::from_config(cfg);
    let mut sharing = no_sharing_matrix(cfg);
    let mut queues = VirtualQueueLedger::zeros(cfg.num_clients());
    let mut z_plus = vec![0.0; o];
    let mut z_minus = vec![0.0; o];
    let mut recorder = TraceRecorder::new(cfg, detail);
    for k in 0..horizon * h {
        let sample = generate_period(scenario, cfg, k);
        sample
            .validate(cfg)
            .map_err(|e| e.in_period("scenario", k))?;
        let prices: Vec<f64> = (0..o)
            .map(|i| balance_weight * (z_plus[i] - z_minus[i]))
            .collect();
        for r in 0..cfg.num_regions {
            let mut caps = Vec::with_capacity(o);
            let mut qs = Vec::with_capacity(o);
            for i in 0..o {
                let ids: Vec<usize> = cfg
                    .clients_of(cfg.cell_index(i, r))
                    .filter(|&n| sample.arrivals[n])
                    .collect();
                caps.push(
                    ids.iter()
                        .map(|&n| sample.capacities[n])
                        .collect::<Vec<_>>(),
                );
                qs.push(ids.iter().map(|&n| queues.p[n]).collect::<Vec<_>>());
            }
            let budgets = pooled_region_budgets(&params, o as f64 * slots, &prices, &caps, &qs)
                .map_err(|e| e.in_period("dynamic", k))?;
            realize_budgets(&mut sharing, r, &budgets, slots);
        }
        let allocation = solve_ra(&RaProblem {
            cfg,
            budgets: &sharing.budgets(),
            sample: &sample,
            queues: &queues.p,
        })
        .map_err(|e| e.in_period("ra", k))?;
        queues = update_virtual_queues(cfg, &queues, &sample, &allocation);
        for i in 0..o {
            let net: f64 = (0..cfg.num_regions)
                .map(|r| sharing.budget(i, r) - slots)
                .sum();
            z_plus[i] = (z_plus[i] + net - cfg.balance_bound).max(0.0);
            z_minus[i] = (z_minus[i] - net - cfg.balance_bound).max(0.0);
        }
        recorder.record_period(k, &sample, &allocation, &queues.p, Some(&sharing));
        if (k + 1) % h == 0 {
            recorder.close_hyperperiod(None, 0.0, 0.0);
        }
    }
    Ok(recorder.finish(sharing))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lemma3Gap {
    pub exact: f64,
    /// Simplification for capacities far above `theta`.
    pub large_capacity: f64,
}

/// Per-period QoE gained by pooling every slot of every operator and region
/// evenly across all arrivals, relative to no sharing, under deterministic
/// arrivals (`counts[i][r]` per cell) and constant capacity `capacity` bits
/// per slot.
pub fn lemma3_gap(counts: &[Vec<usize>], cfg: &SystemConfig, capacity: f64) -> Result<Lemma3Gap> {
    if counts.len() != cfg.num_operators || counts.iter().any(|row| row.len() != cfg.num_regions) {
        return Err(Error::Shape(format!(
            "counts must be {} x {}",
            cfg.num_operators, cfg.num_regions
        )));
    }
    if counts.iter().flatten().any(|&c| c == 0) {
        return Err(Error::EmptyCell);
    }
    let m = &cfg.quality;
    let c = capacity / m.rate_unit_divisor;
    let n = cfg.num_cells() as f64;
    let sigma: f64 = counts.iter().flatten().map(|&v| v as f64).sum();
    let mut exact = 0.0;
    let mut approx = 0.0;
    for &count in counts.iter().flatten() {
        let s = count as f64;
        exact += s * ((n * c / sigma + m.theta) / (c / s + m.theta)).ln() / m.gamma_q;
        approx += s * (n * s / sigma).ln() / m.gamma_q;
    }
    Ok(Lemma3Gap {
        exact,
        large_capacity: approx,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::validate_sharing;
    use crate::oracle::equal_split_objective;
    use crate::scenario::ArrivalLaw;

    fn deterministic(cfg: &SystemConfig, counts: Vec<Vec<usize>>) -> ScenarioSpec {
        ScenarioSpec {
            arrivals: ArrivalLaw::Deterministic { counts },
            capacities: vec![vec![10e6; cfg.num_regions]; cfg.num_operators],
            switches: Vec::new(),
            seed: 0,
            horizon: 1,
        }
    }

    #[test]
    fn policy_names_round_trip() {
        for p in PolicyKind::ALL {
            assert_eq!(p.as_str().parse::<PolicyKind>().unwrap(), p);
        }
        assert!("bogus".parse::<PolicyKind>().is_err());
    }

    #[test]
    fn no_sharing_defaults() {
        let cfg = SystemConfig::table2();
        let s = no_sharing_matrix(&cfg);
        assert!(validate_sharing(&s, &cfg).unwrap().is_member());
        assert!(s.budgets().iter().all(|&b| b == 20.0));
    }

    #[test]
    fn realized_budgets_match() {
        let cfg = SystemConfig::table2();
        let mut s = no_sharing_matrix(&cfg);
        realize_budgets(&mut s, 1, &[6.5, 33.5], 20.0);
        assert!((s.budget(0, 1) - 6.5).abs() < 1e-12);
        assert!((s.budget(1, 1) - 33.5).abs() < 1e-12);
        assert!((s.get(1, 0, 1) - 13.5).abs() < 1e-12);
        assert_eq!(s.get(1, 1, 0), 0.0);
        assert!((s.owner_total(0, 1) - 20.0).abs() < 1e-12);
    }

    #[test]
    fn symmetric_demand_gains_nothing() {
        let cfg = SystemConfig::table2();
        let spec = deterministic(&cfg, vec![vec![15, 15], vec![15, 15]]);
        let samples = generate_range(&spec, &cfg, 0..1);
        let sol = solve_opt_ss_star(&cfg, &samples).unwrap();
        let base = equal_split_objective(&cfg, &[15; 4], 10e6, &[20.0; 4]).unwrap();
        assert!(
            (sol.objective - base).abs() < 1e-3,
            "{} vs {base}",
            sol.objective
        );
    }

    #[test]
    fn single_region_matches_transfer_grid() {
        let cfg = SystemConfig {
            num_regions: 1,
            balance_bound: 100.0,
            ..SystemConfig::table2()
        };
        let spec = deterministic(&cfg, vec![vec![3], vec![27]]);
        let samples = generate_range(&spec, &cfg, 0..1);
        let sol = solve_opt_ss_star(&cfg, &samples).unwrap();
        let mut best = f64::NEG_INFINITY;
        let mut x = -20.0;
        while x <= 20.0 + 1e-9 {
            if let Some(v) = equal_split_objective(&cfg, &[3, 27], 10e6, &[20.0 - x, 20.0 + x]) {
                best = best.max(v);
            }
            x += 0.05;
        }
        assert!(
            (sol.objective - best).abs() < 1e-3,
            "{} vs {best}",
            sol.objective
        );
    }

    #[test]
    fn pinned_balance_matches_constrained_grid() {
        let cfg = SystemConfig {
            balance_bound: 0.0,
            ..SystemConfig::table2()
        };
        // region 0 imbalanced, region 1 balanced
        let spec = deterministic(&cfg, vec![vec![3, 15], vec![27, 15]]);
        let samples = generate_range(&spec, &cfg, 0..1);
        let sol = solve_opt_ss_star(&cfg, &samples).unwrap();
        let d = sol.sharing.net_transfer(0, 1);
        assert!(d.abs() < 1e-6);
        // x slots go 0 -> 1 in region 0 and come back in region 1
        let mut best = f64::NEG_INFINITY;
        let mut x = 0.0;
        while x <= 20.0 + 1e-9 {
            let budgets = [20.0 - x, 20.0 + x, 20.0 + x, 20.0 - x];
            if let Some(v) = equal_split_objective(&cfg, &[3, 15, 27, 15], 10e6, &budgets) {
                best = best.max(v);
            }
            x += 0.05;
        }
        assert!(
            (sol.objective - best).abs() < 1e-3,
            "{} vs {best}",
            sol.objective
        );
    }

    #[test]
    fn pooling_gap_examples() {
        let cfg = SystemConfig::table2();
        let g = lemma3_gap(&[vec![15, 15], vec![15, 15]], &cfg, 10e6).unwrap();
        assert!(g.exact.abs() < 1e-12);
        let g = lemma3_gap(&[vec![3, 27], vec![27, 3]], &cfg, 10e6).unwrap();
        // direct evaluation of both forms
        let exact = 2.0 * 1.25 * 3.0 * ((40.0 / 60.0 + 0.1) / (10.0 / 3.0 + 0.1f64)).ln()
            + 2.0 * 1.25 * 27.0 * ((40.0 / 60.0 + 0.1) / (10.0 / 27.0 + 0.1f64)).ln();
        assert!((g.exact - exact).abs() < 1e-9);
        assert!((g.exact - 21.73).abs() < 5e-3);
        let approx =
            2.0 * 1.25 * 3.0 * (12.0 / 60.0f64).ln() + 2.0 * 1.25 * 27.0 * (108.0 / 60.0f64).ln();
        assert!((g.large_capacity - approx).abs() < 1e-9);
        assert!(matches!(
            lemma3_gap(&[vec![0, 27], vec![27, 3]], &cfg, 10e6),
            Err(Error::EmptyCell)
        ));
    }

    #[test]
    fn dynamic_symmetric_demand_keeps_balance() {
        let cfg = SystemConfig::table2();
        let spec = deterministic(&cfg, vec![vec![15, 15], vec![15, 15]]);
        let trace = run_dynamic_proxy(&cfg, &spec, 2, Detail::Hyperperiod).unwrap();
        assert!(trace.final_sharing.net_transfer(0, 1).abs() < 1e-6);
    }

    #[test]
    fn dynamic_donates_into_overloaded_region() {
        let cfg = SystemConfig {
            num_regions: 1,
            periods_per_hyperperiod: 1,
            // 30 clients cannot all meet the default floor on 20 slots
            q_min: -5.0,
            ..SystemConfig::table2()
        };
        let spec = deterministic(&cfg, vec![vec![30], vec![0]]);
        let trace = run_dynamic_proxy(&cfg, &spec, 20000, Detail::Hyperperiod).unwrap();
        // the idle operator hands over its whole region at first
        assert!((trace.hyperperiods[0].sharing.get(0, 1, 0) - 20.0).abs() < 1e-6);
        // the balance queue keeps the long-run net transfer inside the band
        let mean: f64 = trace
            .hyperperiods
            .iter()
            .map(|h| h.sharing.net_transfer(0, 1))
            .sum::<f64>()
            / 20000.0;
        assert!(
            mean.abs() <= cfg.balance_bound + 0.01,
            "mean net transfer {mean}"
        );
    }
}
