//! Per-period resource allocation.
//!
//! Each cell minimizes `-V * sum Q(tau) + sum P * (Q_min - Q(tau) + alpha)_+`
//! subject to `sum tau <= budget`. The per-client best response to a budget
//! price `lambda` has a closed form under the logarithmic quality model, and
//! the price clearing the budget is found by bisection on the monotone map
//! `lambda -> sum_n tau_n(lambda)`.

use crate::error::{Error, Result};
use crate::model::{AllocationResult, PeriodSample, QualityModel, SystemConfig};

/// Relative tolerance on the budget when clearing the dual.
pub const BUDGET_REL_TOL: f64 = 1e-8;
/// Iteration cap for the bracket search plus bisection.
pub const MAX_BISECTION_ITERS: usize = 200;

/// Parameters shared by every client of one allocation problem.
#[derive(Debug, Clone, Copy)]
pub struct CellParams<'a> {
    pub model: &'a QualityModel,
    pub slots_per_period: usize,
    pub v_weight: f64,
    pub q_min: f64,
    pub alpha: f64,
}

impl<'a> CellParams<'a> {
    pub fn from_config(cfg: &'a SystemConfig) -> Self {
        CellParams {
            model: &cfg.quality,
            slots_per_period: cfg.slots_per_period,
            v_weight: cfg.v_weight,
            q_min: cfg.q_min,
            alpha: cfg.alpha,
        }
    }

    /// Allocation at which the hinge term switches off.
    #[inline]
    pub fn hinge_threshold(&self, capacity: f64) -> f64 {
        self.model
            .inverse(self.q_min + self.alpha, capacity, self.slots_per_period)
    }

    /// Per-client term of the allocation objective (without the price).
    #[inline]
    pub fn client_cost(&self, tau: f64, p: f64, capacity: f64) -> f64 {
        let q = self.model.quality(tau, capacity, self.slots_per_period);
        -self.v_weight * q + p * (self.q_min - q + self.alpha).max(0.0)
    }
}

/// Minimizer of `phi(tau) = -V Q(tau) + p (Q_min - Q(tau) + alpha)_+ + lambda tau`
/// over `tau >= 0`.
///
/// Returns `None` for `lambda <= 0`: the logarithmic utility is unbounded and
/// no finite minimizer exists.
pub fn per_client_best_response(
    lambda: f64,
    p: f64,
    capacity: f64,
    params: &CellParams<'_>,
) -> Option<f64> {
    if !(lambda > 0.0) {
        return None;
    }
    Some(ClientCurve::new(p, capacity, params).response(lambda))
}

/// Precomputed constants of one client's best-response curve.
#[derive(Debug, Clone, Copy)]
struct ClientCurve {
    /// `theta / k`, the slot offset of the log model.
    offset: f64,
    /// `(V + p) / gamma_q` and `V / gamma_q`.
    scale_hinge: f64,
    scale_plain: f64,
    tau_th: f64,
    /// Subdifferential gap at the kink: `[V Q'(tau_th), (V+p) Q'(tau_th)]`.
    price_lo: f64,
    price_hi: f64,
    /// Price at which the allocation drops to zero.
    price_zero: f64,
}

impl ClientCurve {
    fn new(p: f64, capacity: f64, params: &CellParams<'_>) -> Self {
        let model = params.model;
        let k = model.rate_per_slot(capacity, params.slots_per_period);
        let tau_th = params.hinge_threshold(capacity);
        let m_th = model.marginal(tau_th, capacity, params.slots_per_period);
        let m0 = model.marginal(0.0, capacity, params.slots_per_period);
        let w_hinge = params.v_weight + p;
        let w_plain = params.v_weight;
        ClientCurve {
            offset: model.theta / k,
            scale_hinge: w_hinge / model.gamma_q,
            scale_plain: w_plain / model.gamma_q,
            tau_th,
            price_lo: w_plain * m_th,
            price_hi: w_hinge * m_th,
            price_zero: if tau_th > 0.0 {
                w_hinge * m0
            } else {
                w_plain * m0
            },
        }
    }

    #[inline]
    fn response(&self, lambda: f64) -> f64 {
        if lambda >= self.price_zero {
            return 0.0;
        }
        if self.tau_th > 0.0 && lambda >= self.price_hi {
            (self.scale_hinge / lambda - self.offset).max(0.0)
        } else if lambda <= self.price_lo {
            (self.scale_plain / lambda - self.offset).max(self.tau_th)
        } else {
            self.tau_th
        }
    }
}

/// Slots the listed clients would take at budget price `lambda`; infinite
/// for `lambda <= 0` when any client is listed.
pub fn cell_demand(
    params: &CellParams<'_>,
    lambda: f64,
    capacities: &[f64],
    queues: &[f64],
) -> f64 {
    if capacities.is_empty() {
        return 0.0;
    }
    if !(lambda > 0.0) {
        return f64::INFINITY;
    }
    capacities
        .iter()
        .zip(queues)
        .map(|(&c, &p)| ClientCurve::new(p, c, params).response(lambda))
        .sum()
}

/// Allocation of one cell: slots for each listed client and the budget price.
#[derive(Debug, Clone, PartialEq)]
pub struct CellAllocation {
    pub tau: Vec<f64>,
    pub lambda: f64,
}

/// Solves one cell given the capacities and queues of its *arrived* clients.
pub fn solve_cell(
    params: &CellParams<'_>,
    budget: f64,
    capacities: &[f64],
    queues: &[f64],
) -> Result<CellAllocation> {
    debug_assert_eq!(capacities.len(), queues.len());
    if !(budget >= 0.0) || !budget.is_finite() {
        return Err(Error::NegativeBudget {
            operator: usize::MAX,
            region: usize::MAX,
            budget,
        });
    }
    if capacities.is_empty() {
        return Ok(CellAllocation {
            tau: Vec::new(),
            lambda: 0.0,
        });
    }
    let curves: Vec<ClientCurve> = capacities
        .iter()
        .zip(queues)
        .map(|(&c, &p)| ClientCurve::new(p, c, params))
        .collect();
    let lambda_hi = curves.iter().map(|c| c.price_zero).fold(0.0, f64::max);
    if budget == 0.0 {
        return Ok(CellAllocation {
            tau: vec![0.0; curves.len()],
            lambda: lambda_hi,
        });
    }
    let total = |lambda: f64| curves.iter().map(|c| c.response(lambda)).sum::<f64>();
    let tol = BUDGET_REL_TOL * budget.max(1.0);

    let mut hi = lambda_hi;
    let mut lo = lambda_hi.min(1.0);
    let mut iters = 0;
    while total(lo) <= budget {
        lo *= 0.5;
        iters += 1;
        if iters >= MAX_BISECTION_ITERS || lo == 0.0 {
            return Err(Error::BisectionExhausted { iterations: iters });
        }
    }
    loop {
        let mid = (lo * hi).sqrt();
        if total(mid) > budget {
            lo = mid;
        } else {
            hi = mid;
            if budget - total(hi) <= tol {
                break;
            }
        }
        iters += 1;
        if iters >= MAX_BISECTION_ITERS {
            return Err(Error::BisectionExhausted { iterations: iters });
        }
    }
    Ok(CellAllocation {
        tau: curves.iter().map(|c| c.response(hi)).collect(),
        lambda: hi,
    })
}

/// One period's allocation problem across all cells.
#[derive(Debug, Clone, Copy)]
pub struct RaProblem<'a> {
    pub cfg: &'a SystemConfig,
    /// Slot budget per cell, `sum_j S^{j -> i}_r`.
    pub budgets: &'a [f64],
    pub sample: &'a PeriodSample,
    pub queues: &'a [f64],
}

/// Solves every cell independently. Clients without an arrival get zero slots.
pub fn solve_ra(problem: &RaProblem<'_>) -> Result<AllocationResult> {
    let cfg = problem.cfg;
    let params = CellParams::from_config(cfg);
    let mut tau = vec![0.0; cfg.num_clients()];
    let mut duals = vec![0.0; cfg.num_cells()];
    let mut caps = Vec::with_capacity(cfg.clients_per_cell);
    let mut ps = Vec::with_capacity(cfg.clients_per_cell);
    let mut ids = Vec::with_capacity(cfg.clients_per_cell);
    for cell in 0..cfg.num_cells() {
        caps.clear();
        ps.clear();
        ids.clear();
        for n in cfg.clients_of(cell) {
            if problem.sample.arrivals[n] {
                let c = problem.sample.capacities[n];
                if !(c.is_finite() && c > 0.0) {
                    return Err(Error::NonFiniteCapacity { client: n });
                }
                caps.push(c);
                ps.push(problem.queues[n]);
                ids.push(n);
            }
        }
        let budget = problem.budgets[cell];
        let alloc = solve_cell(&params, budget, &caps, &ps).map_err(|e| match e {
            Error::NegativeBudget { budget, .. } => {
                let (operator, region) = cfg.cell_coords(cell);
                Error::NegativeBudget {
                    operator,
                    region,
                    budget,
                }
            }
            e => e,
        })?;
        for (&n, &t) in ids.iter().zip(&alloc.tau) {
            tau[n] = t;
        }
        duals[cell] = alloc.lambda;
    }
    Ok(AllocationResult { tau, duals })
}

/// Value of the allocation objective over arrived clients.
pub fn ra_objective(cfg: &SystemConfig, sample: &PeriodSample, queues: &[f64], tau: &[f64]) -> f64 {
    let params = CellParams::from_config(cfg);
    (0..cfg.num_clients())
        .filter(|&n| sample.arrivals[n])
        .map(|n| params.client_cost(tau[n], queues[n], sample.capacities[n]))
        .sum()
}

/// Objective of a single cell's arrived clients.
pub fn cell_objective(
    params: &CellParams<'_>,
    capacities: &[f64],
    queues: &[f64],
    tau: &[f64],
) -> f64 {
    capacities
        .iter()
        .zip(queues)
        .zip(tau)
        .map(|((&c, &p), &t)| params.client_cost(t, p, c))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(model: &QualityModel) -> CellParams<'_> {
        CellParams {
            model,
            slots_per_period: 20,
            v_weight: 1.0,
            q_min: 0.3,
            alpha: 0.008,
        }
    }

    /// Dense grid minimization of the per-client objective, independent of the
    /// closed form.
    fn grid_argmin(lambda: f64, p: f64, cap: f64, prm: &CellParams<'_>) -> f64 {
        let mut best = (f64::INFINITY, 0.0);
        let step = 1e-4;
        let mut tau = 0.0;
        while tau <= 40.0 {
            let v = prm.client_cost(tau, p, cap) + lambda * tau;
            if v < best.0 {
                best = (v, tau);
            }
            tau += step;
        }
        best.1
    }

    #[test]
    fn best_response_pure_log() {
        let m = QualityModel::default();
        // Hinge inactive: threshold far below anything relevant.
        let prm = CellParams {
            q_min: -10.0,
            ..params(&m)
        };
        let tau = per_client_best_response(0.125, 0.0, 10e6, &prm).unwrap();
        assert!((tau - 9.8).abs() < 1e-12);
        assert!((tau - grid_argmin(0.125, 0.0, 10e6, &prm)).abs() < 2e-4);
    }

    #[test]
    fn best_response_zero_when_price_exceeds_marginal() {
        let m = QualityModel::default();
        let prm = params(&m);
        let p = 3.0;
        let m0 = m.marginal(0.0, 10e6, 20);
        assert_eq!(
            per_client_best_response((1.0 + p) * m0, p, 10e6, &prm),
            Some(0.0)
        );
        assert_eq!(
            per_client_best_response(10.0 * (1.0 + p) * m0, p, 10e6, &prm),
            Some(0.0)
        );
    }

    #[test]
    fn best_response_ignores_hinge_without_queue() {
        let m = QualityModel::default();
        let a = per_client_best_response(0.9, 0.0, 10e6, &params(&m)).unwrap();
        let b = per_client_best_response(
            0.9,
            0.0,
            10e6,
            &CellParams {
                q_min: 2.0,
                alpha: 0.5,
                ..params(&m)
            },
        )
        .unwrap();
        assert!((a - b).abs() < 1e-12);
        assert!((a - (1.25 / 0.9 - 0.2)).abs() < 1e-12);
    }

    #[test]
    fn best_response_unbounded_at_zero_price() {
        let m = QualityModel::default();
        assert_eq!(per_client_best_response(0.0, 1.0, 10e6, &params(&m)), None);
    }

    #[test]
    fn best_response_matches_grid_across_regimes() {
        let m = QualityModel::default();
        let prm = params(&m);
        let th = prm.hinge_threshold(10e6);
        let m_th = m.marginal(th, 10e6, 20);
        for &p in &[0.0, 0.5, 4.0] {
            for &lambda in &[
                0.05,
                0.3,
                0.9 * m_th,
                m_th,
                1.01 * m_th,
                2.0 * m_th,
                5.0,
                20.0,
            ] {
                let tau = per_client_best_response(lambda, p, 10e6, &prm).unwrap();
                let g = grid_argmin(lambda, p, 10e6, &prm);
                assert!(
                    (tau - g).abs() < 5e-4,
                    "p={p} lambda={lambda}: {tau} vs {g}"
                );
            }
        }
        // Inside the kink's price gap the response sits exactly on the threshold.
        let mid = 1.5 * m_th;
        assert_eq!(per_client_best_response(mid, 1.0, 10e6, &prm), Some(th));
    }

    #[test]
    fn symmetric_split() {
        let m = QualityModel::default();
        let prm = params(&m);
        let a = solve_cell(&prm, 20.0, &[10e6, 10e6], &[0.0, 0.0]).unwrap();
        assert!((a.tau[0] - 10.0).abs() < 1e-6);
        assert!((a.tau[1] - 10.0).abs() < 1e-6);
        // lambda solves 1.25 / lambda - 0.2 = 10.
        assert!((a.lambda - 1.25 / 10.2).abs() < 1e-8);
        assert!((a.lambda - 0.12255).abs() < 1e-5);
    }

    #[test]
    fn single_client_takes_budget() {
        let m = QualityModel::default();
        let a = solve_cell(&params(&m), 20.0, &[10e6], &[0.7]).unwrap();
        assert!((a.tau[0] - 20.0).abs() < 1e-6);
        assert!(a.lambda > 0.0);
    }

    #[test]
    fn empty_cell() {
        let m = QualityModel::default();
        let a = solve_cell(&params(&m), 20.0, &[], &[]).unwrap();
        assert!(a.tau.is_empty());
        assert_eq!(a.lambda, 0.0);
    }

    #[test]
    fn zero_budget_reports_entry_price() {
        let m = QualityModel::default();
        let prm = params(&m);
        let a = solve_cell(&prm, 0.0, &[10e6, 5e6], &[0.0, 2.0]).unwrap();
        assert_eq!(a.tau, vec![0.0, 0.0]);
        let expect = (1.0 * m.marginal(0.0, 10e6, 20)).max(3.0 * m.marginal(0.0, 5e6, 20));
        assert!((a.lambda - expect).abs() < 1e-12);
    }

    #[test]
    fn negative_budget_is_an_error() {
        let cfg = SystemConfig::table2();
        let sample = PeriodSample {
            arrivals: vec![true; cfg.num_clients()],
            capacities: vec![10e6; cfg.num_clients()],
        };
        let mut budgets = vec![20.0; cfg.num_cells()];
        budgets[3] = -1.0;
        let queues = vec![0.0; cfg.num_clients()];
        let err = solve_ra(&RaProblem {
            cfg: &cfg,
            budgets: &budgets,
            sample: &sample,
            queues: &queues,
        })
        .unwrap_err();
        assert!(matches!(
            err,
            Error::NegativeBudget {
                operator: 1,
                region: 1,
                ..
            }
        ));
    }

    #[test]
    fn non_finite_capacity_is_an_error() {
        let cfg = SystemConfig::table2();
        let mut sample = PeriodSample {
            arrivals: vec![true; cfg.num_clients()],
            capacities: vec![10e6; cfg.num_clients()],
        };
        sample.capacities[5] = f64::NAN;
        let budgets = vec![20.0; cfg.num_cells()];
        let queues = vec![0.0; cfg.num_clients()];
        let err = solve_ra(&RaProblem {
            cfg: &cfg,
            budgets: &budgets,
            sample: &sample,
            queues: &queues,
        })
        .unwrap_err();
        assert!(matches!(err, Error::NonFiniteCapacity { client: 5 }));
    }

    #[test]
    fn idle_clients_get_nothing_and_budgets_hold() {
        let cfg = SystemConfig::table2();
        let n = cfg.num_clients();
        let sample = PeriodSample {
            arrivals: (0..n).map(|i| i % 3 != 0).collect(),
            capacities: (0..n).map(|i| 5e6 + 1e5 * i as f64).collect(),
        };
        let budgets = vec![20.0, 7.5, 31.0, 0.0];
        let queues: Vec<f64> = (0..n).map(|i| (i % 5) as f64 * 0.3).collect();
        let a = solve_ra(&RaProblem {
            cfg: &cfg,
            budgets: &budgets,
            sample: &sample,
            queues: &queues,
        })
        .unwrap();
        for i in 0..n {
            if !sample.arrivals[i] {
                assert_eq!(a.tau[i], 0.0);
            }
            assert!(a.tau[i] >= 0.0);
        }
        for cell in 0..cfg.num_cells() {
            let used: f64 = cfg.clients_of(cell).map(|i| a.tau[i]).sum();
            let b = budgets[cell];
            assert!(used <= b + 1e-9);
            assert!(a.duals[cell] * (b - used) <= 1e-6 * b.max(1.0));
        }
    }
}
