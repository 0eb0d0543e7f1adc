//! Adaptive bandwidth sharing: per-period allocation under a frozen sharing
//! matrix, virtual-queue bookkeeping, and a projected dual-gradient update of
//! the sharing matrix at every hyperperiod boundary.

use crate::error::{Error, Result};
use crate::model::{
    AllocationResult, PeriodSample, SharingMatrix, SystemConfig, VirtualQueueLedger,
};
use crate::projection::SharingPolytope;
use crate::ra::{solve_ra, RaProblem};
use crate::scenario::{generate_hyperperiod, Detail, RunTrace, ScenarioSpec, TraceRecorder};

/// `P <- max(P + (Q_min - Q + alpha)_+ - (1 - percentile) alpha, 0)` for
/// clients with an arrival; other clients keep their queue.
pub fn update_virtual_queues(
    cfg: &SystemConfig,
    queues: &VirtualQueueLedger,
    sample: &PeriodSample,
    allocation: &AllocationResult,
) -> VirtualQueueLedger {
    let allowance = cfg.hinge_allowance();
    let p = queues
        .p
        .iter()
        .enumerate()
        .map(|(n, &p)| {
            if sample.arrivals[n] {
                let q = cfg.quality(allocation.tau[n], sample.capacities[n]);
                (p + cfg.hinge(q) - allowance).max(0.0)
            } else {
                p
            }
        })
        .collect();
    VirtualQueueLedger { p }
}

/// Gradient of the sharing objective, in the index space of [`SharingMatrix`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientVector {
    pub components: SharingMatrix,
}

impl GradientVector {
    pub fn norm(&self) -> f64 {
        self.components
            .entries()
            .iter()
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }
}

/// `g^{j->i}_r = -sum_k lambda^i_r(k)` for every owner `j`. `accumulated_duals`
/// is indexed by cell.
pub fn sharing_gradient(cfg: &SystemConfig, accumulated_duals: &[f64]) -> GradientVector {
    let mut g = SharingMatrix::zeros(cfg.num_operators, cfg.num_regions);
    for r in 0..cfg.num_regions {
        for j in 0..cfg.num_operators {
            for i in 0..cfg.num_operators {
                g.set(r, j, i, -accumulated_duals[cfg.cell_index(i, r)]);
            }
        }
    }
    GradientVector { components: g }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AbsState {
    pub sharing: SharingMatrix,
    pub queues: VirtualQueueLedger,
    pub hyperperiod_index: usize,
    pub accumulated_duals: Vec<f64>,
}

impl AbsState {
    pub fn new(cfg: &SystemConfig, sharing: SharingMatrix) -> Self {
        AbsState {
            sharing,
            queues: VirtualQueueLedger::zeros(cfg.num_clients()),
            hyperperiod_index: 0,
            accumulated_duals: vec![0.0; cfg.num_cells()],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PeriodOutcome {
    pub allocation: AllocationResult,
    /// Quality per client; `None` for clients without an arrival.
    pub qualities: Vec<Option<f64>>,
    pub queues_after: Vec<f64>,
    pub qoe: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HyperperiodTrace {
    pub periods: Vec<PeriodOutcome>,
    pub gradient: GradientVector,
    pub step: f64,
    pub next_sharing: SharingMatrix,
}

/// Runs one hyperperiod of allocation under `state.sharing`, then moves the
/// sharing matrix along the accumulated duals and projects it back.
pub fn abs_hyperperiod_step(
    state: &AbsState,
    samples: &[PeriodSample],
    cfg: &SystemConfig,
) -> Result<(AbsState, HyperperiodTrace)> {
    abs_step_with(state, samples, cfg, &SharingPolytope::new(cfg))
}

fn abs_step_with(
    state: &AbsState,
    samples: &[PeriodSample],
    cfg: &SystemConfig,
    polytope: &SharingPolytope,
) -> Result<(AbsState, HyperperiodTrace)> {
    let h = cfg.periods_per_hyperperiod;
    if samples.len() != h {
        return Err(Error::Shape(format!(
            "hyperperiod needs {h} samples, got {}",
            samples.len()
        )));
    }
    let first_period = state.hyperperiod_index * h;
    let budgets = state.sharing.budgets();
    let mut queues = state.queues.clone();
    let mut duals = vec![0.0; cfg.num_cells()];
    let mut periods = Vec::with_capacity(h);
    for (k, sample) in samples.iter().enumerate() {
        let period = first_period + k;
        sample
            .validate(cfg)
            .map_err(|e| e.in_period("scenario", period))?;
        let allocation = solve_ra(&RaProblem {
            cfg,
            budgets: &budgets,
            sample,
            queues: &queues.p,
        })
        .map_err(|e| e.in_period("ra", period))?;
        duals
            .iter_mut()
            .zip(&allocation.duals)
            .for_each(|(a, l)| *a += l);
        queues = update_virtual_queues(cfg, &queues, sample, &allocation);
        let qualities: Vec<Option<f64>> = (0..cfg.num_clients())
            .map(|n| {
                sample.arrivals[n].then(|| cfg.quality(allocation.tau[n], sample.capacities[n]))
            })
            .collect();
        let qoe = qualities.iter().flatten().sum();
        periods.push(PeriodOutcome {
            allocation,
            qualities,
            queues_after: queues.p.clone(),
            qoe,
        });
    }

    let gradient = sharing_gradient(cfg, &duals);
    let step = cfg.step_at(state.hyperperiod_index);
    let next_sharing = if step == 0.0 || gradient.norm() == 0.0 {
        state.sharing.clone()
    } else {
        let mut moved = state.sharing.clone();
        moved
            .entries_mut()
            .iter_mut()
            .zip(gradient.components.entries())
            .for_each(|(s, g)| *s -= step * g);
        polytope
            .project(&moved)
            .map_err(|e| e.in_period("projection", first_period + h - 1))?
    };
    let next = AbsState {
        sharing: next_sharing.clone(),
        queues,
        hyperperiod_index: state.hyperperiod_index + 1,
        accumulated_duals: duals,
    };
    Ok((
        next,
        HyperperiodTrace {
            periods,
            gradient,
            step,
            next_sharing,
        },
    ))
}

/// Drives ABS for `num_hyperperiods` against the scenario stream, starting
/// from `initial_sharing`.
pub fn run_abs(
    cfg: &SystemConfig,
    scenario: &ScenarioSpec,
    num_hyperperiods: usize,
    initial_sharing: &SharingMatrix,
    detail: Detail,
) -> Result<RunTrace> {
    Ok(run_abs_with_state(cfg, scenario, num_hyperperiods, initial_sharing, detail)?.0)
}

/// Like [`run_abs`] but also returns the final state.
pub fn run_abs_with_state(
    cfg: &SystemConfig,
    scenario: &ScenarioSpec,
    num_hyperperiods: usize,
    initial_sharing: &SharingMatrix,
    detail: Detail,
) -> Result<(RunTrace, AbsState)> {
    cfg.validate()?;
    scenario.validate(cfg)?;
    let polytope = SharingPolytope::new(cfg);
    if !polytope.contains(initial_sharing)? {
        return Err(Error::config(
            "initial_sharing",
            "is not a member of the sharing polytope",
        ));
    }
    let mut state = AbsState::new(cfg, initial_sharing.clone());
    let mut recorder = TraceRecorder::new(cfg, detail);
    let h = cfg.periods_per_hyperperiod;
    for t in 0..num_hyperperiods {
        let samples = generate_hyperperiod(scenario, cfg, t);
        let (next, trace) = abs_step_with(&state, &samples, cfg, &polytope)?;
        for (k, (sample, outcome)) in samples.iter().zip(&trace.periods).enumerate() {
            recorder.record_period(
                t * h + k,
                sample,
                &outcome.allocation,
                &outcome.queues_after,
                None,
            );
        }
        recorder.close_hyperperiod(Some(&state.sharing), trace.gradient.norm(), trace.step);
        state = next;
    }
    Ok((recorder.finish(state.sharing.clone()), state))
}
