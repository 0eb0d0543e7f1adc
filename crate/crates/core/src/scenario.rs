//! Arrival and channel streams, regime switches, and the per-run metrics that
//! every policy driver records.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AllocationResult, PeriodSample, SharingMatrix, SystemConfig};

/// How packets arrive in each cell. Matrices are indexed `[operator][region]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ArrivalLaw {
    /// Each client of a cell independently receives a packet with the cell's probability.
    Bernoulli { rates: Vec<Vec<f64>> },
    /// The first `counts[i][r]` clients of the cell receive a packet every period.
    Deterministic { counts: Vec<Vec<usize>> },
}

impl ArrivalLaw {
    /// Bernoulli rates with operator 0 at `low` in region 0 and `high` in
    /// region 1, mirrored for operator 1.
    pub fn mirrored_pair(low: f64, high: f64) -> Self {
        ArrivalLaw::Bernoulli {
            rates: vec![vec![low, high], vec![high, low]],
        }
    }

    fn validate(&self, cfg: &SystemConfig, field: &str) -> Result<()> {
        let check_shape = |rows: usize, cols: &[usize]| -> Result<()> {
            if rows != cfg.num_operators || cols.iter().any(|&c| c != cfg.num_regions) {
                return Err(Error::config(
                    field,
                    format!("must be {} x {}", cfg.num_operators, cfg.num_regions),
                ));
            }
            Ok(())
        };
        match self {
            ArrivalLaw::Bernoulli { rates } => {
                check_shape(rates.len(), &rates.iter().map(Vec::len).collect::<Vec<_>>())?;
                if rates.iter().flatten().any(|&g| !(0.0..=1.0).contains(&g)) {
                    return Err(Error::config(field, "rates must lie in [0, 1]"));
                }
            }
            ArrivalLaw::Deterministic { counts } => {
                check_shape(
                    counts.len(),
                    &counts.iter().map(Vec::len).collect::<Vec<_>>(),
                )?;
                if counts.iter().flatten().any(|&c| c > cfg.clients_per_cell) {
                    return Err(Error::config(
                        field,
                        "counts cannot exceed clients_per_cell",
                    ));
                }
            }
        }
        Ok(())
    }
}

/// A change of arrival law and/or capacities taking effect at the start of
/// hyperperiod `hyperperiod`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegimeSwitch {
    pub hyperperiod: usize,
    #[serde(default)]
    pub arrivals: Option<ArrivalLaw>,
    #[serde(default)]
    pub capacities: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub arrivals: ArrivalLaw,
    /// Bits per timeslot for every client of a cell, `[operator][region]`.
    pub capacities: Vec<Vec<f64>>,
    #[serde(default)]
    pub switches: Vec<RegimeSwitch>,
    pub seed: u64,
    /// Number of hyperperiods to simulate.
    pub horizon: usize,
}

/// The arrival law and capacities in force during one hyperperiod.
#[derive(Debug, Clone, Copy)]
pub struct Regime<'a> {
    pub arrivals: &'a ArrivalLaw,
    pub capacities: &'a [Vec<f64>],
}

impl ScenarioSpec {
    /// Mirrored Bernoulli rates with uniform capacity.
    pub fn mirrored(
        cfg: &SystemConfig,
        low: f64,
        high: f64,
        capacity: f64,
        seed: u64,
        horizon: usize,
    ) -> Self {
        ScenarioSpec {
            arrivals: ArrivalLaw::mirrored_pair(low, high),
            capacities: vec![vec![capacity; cfg.num_regions]; cfg.num_operators],
            switches: Vec::new(),
            seed,
            horizon,
        }
    }

    pub fn validate(&self, cfg: &SystemConfig) -> Result<()> {
        self.arrivals.validate(cfg, "scenario.arrivals")?;
        validate_capacities(&self.capacities, cfg, "scenario.capacities")?;
        let mut last = None;
        for sw in &self.switches {
            if let Some(prev) = last {
                if sw.hyperperiod <= prev {
                    return Err(Error::config(
                        "scenario.switches",
                        "hyperperiod indices must be strictly increasing",
                    ));
                }
            }
            last = Some(sw.hyperperiod);
            if let Some(a) = &sw.arrivals {
                a.validate(cfg, "scenario.switches.arrivals")?;
            }
            if let Some(c) = &sw.capacities {
                validate_capacities(c, cfg, "scenario.switches.capacities")?;
            }
        }
        Ok(())
    }

    pub fn regime_at(&self, hyperperiod: usize) -> Regime<'_> {
        let mut regime = Regime {
            arrivals: &self.arrivals,
            capacities: &self.capacities,
        };
        for sw in self
            .switches
            .iter()
            .take_while(|sw| sw.hyperperiod <= hyperperiod)
        {
            if let Some(a) = &sw.arrivals {
                regime.arrivals = a;
            }
            if let Some(c) = &sw.capacities {
                regime.capacities = c;
            }
        }
        regime
    }

    /// Label-swapped copy: operator `i` becomes operator `O - 1 - i`.
    pub fn swap_operators(&self) -> Self {
        fn rev<T: Clone>(m: &[Vec<T>]) -> Vec<Vec<T>> {
            m.iter().rev().cloned().collect()
        }
        fn law(a: &ArrivalLaw) -> ArrivalLaw {
            match a {
                ArrivalLaw::Bernoulli { rates } => ArrivalLaw::Bernoulli { rates: rev(rates) },
                ArrivalLaw::Deterministic { counts } => ArrivalLaw::Deterministic {
                    counts: rev(counts),
                },
            }
        }
        ScenarioSpec {
            arrivals: law(&self.arrivals),
            capacities: rev(&self.capacities),
            switches: self
                .switches
                .iter()
                .map(|sw| RegimeSwitch {
                    hyperperiod: sw.hyperperiod,
                    arrivals: sw.arrivals.as_ref().map(law),
                    capacities: sw.capacities.as_deref().map(rev),
                })
                .collect(),
            seed: self.seed,
            horizon: self.horizon,
        }
    }
}

fn validate_capacities(c: &[Vec<f64>], cfg: &SystemConfig, field: &str) -> Result<()> {
    if c.len() != cfg.num_operators || c.iter().any(|row| row.len() != cfg.num_regions) {
        return Err(Error::config(
            field,
            format!("must be {} x {}", cfg.num_operators, cfg.num_regions),
        ));
    }
    if c.iter().flatten().any(|&v| !(v.is_finite() && v > 0.0)) {
        return Err(Error::config(field, "capacities must be finite and > 0"));
    }
    Ok(())
}

/// Draws period `period`'s sample.
///
/// The stream is counter-based: the uniform variate of client `n` in period
/// `k` depends only on `(seed, k, n)`, so samples can be generated in any
/// order or in parallel.
pub fn generate_period(spec: &ScenarioSpec, cfg: &SystemConfig, period: usize) -> PeriodSample {
    let regime = spec.regime_at(period / cfg.periods_per_hyperperiod);
    let n_clients = cfg.num_clients();
    let mut arrivals = vec![false; n_clients];
    let mut capacities = vec![0.0; n_clients];
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(period as u64);
    for cell in 0..cfg.num_cells() {
        let (i, r) = cfg.cell_coords(cell);
        let cap = regime.capacities[i][r];
        for (local, n) in cfg.clients_of(cell).enumerate() {
            capacities[n] = cap;
            arrivals[n] = match regime.arrivals {
                ArrivalLaw::Deterministic { counts } => local < counts[i][r],
                ArrivalLaw::Bernoulli { rates } => {
                    // two 32-bit words per f64 draw
                    rng.set_word_pos(2 * n as u128);
                    rng.gen::<f64>() < rates[i][r]
                }
            };
        }
    }
    PeriodSample {
        arrivals,
        capacities,
    }
}

/// Samples of hyperperiod `t`, in period order.
pub fn generate_hyperperiod(
    spec: &ScenarioSpec,
    cfg: &SystemConfig,
    t: usize,
) -> Vec<PeriodSample> {
    let h = cfg.periods_per_hyperperiod;
    (t * h..(t + 1) * h)
        .map(|k| generate_period(spec, cfg, k))
        .collect()
}

/// Samples of hyperperiods `range`, concatenated.
pub fn generate_range(
    spec: &ScenarioSpec,
    cfg: &SystemConfig,
    range: std::ops::Range<usize>,
) -> Vec<PeriodSample> {
    range
        .flat_map(|t| generate_hyperperiod(spec, cfg, t))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Detail {
    #[default]
    Hyperperiod,
    Period,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HyperperiodRecord {
    pub index: usize,
    /// Mean over the hyperperiod's periods of the summed quality of arrived packets.
    pub total_qoe: f64,
    /// Sharing in force (for per-period policies, the mean over the hyperperiod).
    pub sharing: SharingMatrix,
    pub grad_norm: f64,
    pub max_queue: f64,
    pub step: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ClientRecord {
    pub arrivals: u64,
    /// Packets whose quality reached `Q_min`.
    pub satisfied: u64,
    pub hinge_sum: f64,
    pub final_queue: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PeriodRecord {
    pub period: usize,
    pub total_qoe: f64,
    pub arrivals: usize,
    pub max_queue: f64,
    pub duals: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub q_min: f64,
    pub alpha: f64,
    pub percentile: f64,
    pub hyperperiods: Vec<HyperperiodRecord>,
    pub clients: Vec<ClientRecord>,
    pub periods: Option<Vec<PeriodRecord>>,
    pub final_sharing: SharingMatrix,
}

impl RunTrace {
    /// Mean per-period QoE over hyperperiods in `range` (clamped to the run).
    pub fn mean_qoe(&self, range: std::ops::Range<usize>) -> f64 {
        let end = range.end.min(self.hyperperiods.len());
        let start = range.start.min(end);
        let slice = &self.hyperperiods[start..end];
        if slice.is_empty() {
            return f64::NAN;
        }
        slice.iter().map(|h| h.total_qoe).sum::<f64>() / slice.len() as f64
    }

    pub fn qoe_series(&self) -> Vec<f64> {
        self.hyperperiods.iter().map(|h| h.total_qoe).collect()
    }

    pub fn max_final_queue(&self) -> f64 {
        self.clients
            .iter()
            .map(|c| c.final_queue)
            .fold(0.0, f64::max)
    }

    /// Clients whose average hinge met the allowance but whose satisfied
    /// fraction fell short of the percentile. Always empty for a correct run.
    pub fn hinge_percentile_breaches(&self) -> Vec<usize> {
        let allowance = (1.0 - self.percentile) * self.alpha;
        self.clients
            .iter()
            .enumerate()
            .filter(|(_, c)| c.arrivals > 0)
            .filter(|(_, c)| c.hinge_sum / c.arrivals as f64 <= allowance)
            .filter(|(_, c)| (c.satisfied as f64) < self.percentile * c.arrivals as f64)
            .map(|(n, _)| n)
            .collect()
    }
}

/// Fraction of packets reaching `Q_min`, per client; `None` for clients
/// without arrivals.
pub fn percentile_satisfaction(trace: &RunTrace) -> Vec<Option<f64>> {
    trace
        .clients
        .iter()
        .map(|c| (c.arrivals > 0).then(|| c.satisfied as f64 / c.arrivals as f64))
        .collect()
}

/// Minimum satisfied fraction over clients with arrivals.
pub fn min_satisfaction(trace: &RunTrace) -> Option<f64> {
    percentile_satisfaction(trace)
        .into_iter()
        .flatten()
        .fold(None, |acc: Option<f64>, x| {
            Some(acc.map_or(x, |a| a.min(x)))
        })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Improvement {
    /// Percentage improvement, or the absolute difference when `absolute` is set.
    pub value: f64,
    /// Set when the baseline QoE is zero and a percentage is undefined.
    pub absolute: bool,
}

/// `100 (policy - baseline) / |baseline|`.
pub fn improvement(policy_qoe: f64, baseline_qoe: f64) -> Improvement {
    if baseline_qoe == 0.0 {
        Improvement {
            value: policy_qoe - baseline_qoe,
            absolute: true,
        }
    } else {
        Improvement {
            value: 100.0 * (policy_qoe - baseline_qoe) / baseline_qoe.abs(),
            absolute: false,
        }
    }
}

/// Improvement of `policy` over `no_sharing` measured on hyperperiods `window`.
pub fn improvement_over_no_sharing(
    policy: &RunTrace,
    no_sharing: &RunTrace,
    window: std::ops::Range<usize>,
) -> Improvement {
    improvement(policy.mean_qoe(window.clone()), no_sharing.mean_qoe(window))
}

/// Folds per-period outcomes into a [`RunTrace`].
#[derive(Debug)]
pub struct TraceRecorder {
    cfg: SystemConfig,
    detail: Detail,
    clients: Vec<ClientRecord>,
    periods: Vec<PeriodRecord>,
    hyperperiods: Vec<HyperperiodRecord>,
    qoe_sum: f64,
    count: usize,
    sharing_sum: Option<SharingMatrix>,
}

impl TraceRecorder {
    /// `cfg` must carry the `Q_min` the policy is held to.
    pub fn new(cfg: &SystemConfig, detail: Detail) -> Self {
        TraceRecorder {
            cfg: cfg.clone(),
            detail,
            clients: vec![ClientRecord::default(); cfg.num_clients()],
            periods: Vec::new(),
            hyperperiods: Vec::new(),
            qoe_sum: 0.0,
            count: 0,
            sharing_sum: None,
        }
    }

    /// Records one period and returns its QoE.
    pub fn record_period(
        &mut self,
        period: usize,
        sample: &PeriodSample,
        allocation: &AllocationResult,
        queues_after: &[f64],
        sharing_used: Option<&SharingMatrix>,
    ) -> f64 {
        let mut qoe = 0.0;
        let mut arrivals = 0;
        for n in 0..self.cfg.num_clients() {
            if !sample.arrivals[n] {
                continue;
            }
            arrivals += 1;
            let q = self.cfg.quality(allocation.tau[n], sample.capacities[n]);
            qoe += q;
            let rec = &mut self.clients[n];
            rec.arrivals += 1;
            if q >= self.cfg.q_min {
                rec.satisfied += 1;
            }
            rec.hinge_sum += self.cfg.hinge(q);
        }
        for (rec, &p) in self.clients.iter_mut().zip(queues_after) {
            rec.final_queue = p;
        }
        if let Some(s) = sharing_used {
            match &mut self.sharing_sum {
                Some(acc) => acc
                    .entries_mut()
                    .iter_mut()
                    .zip(s.entries())
                    .for_each(|(a, b)| *a += b),
                None => self.sharing_sum = Some(s.clone()),
            }
        }
        if self.detail == Detail::Period {
            self.periods.push(PeriodRecord {
                period,
                total_qoe: qoe,
                arrivals,
                max_queue: queues_after.iter().copied().fold(0.0, f64::max),
                duals: allocation.duals.clone(),
            });
        }
        self.qoe_sum += qoe;
        self.count += 1;
        qoe
    }

    /// Closes the current hyperperiod. When `sharing` is `None` the mean of the
    /// per-period sharing passed to [`record_period`](Self::record_period) is used.
    pub fn close_hyperperiod(
        &mut self,
        sharing: Option<&SharingMatrix>,
        grad_norm: f64,
        step: f64,
    ) {
        let sharing = match (sharing, self.sharing_sum.take()) {
            (Some(s), _) => s.clone(),
            (None, Some(mut acc)) => {
                let k = self.count.max(1) as f64;
                acc.entries_mut().iter_mut().for_each(|v| *v /= k);
                acc
            }
            (None, None) => SharingMatrix::zeros(self.cfg.num_operators, self.cfg.num_regions),
        };
        let max_queue = self
            .clients
            .iter()
            .map(|c| c.final_queue)
            .fold(0.0, f64::max);
        self.hyperperiods.push(HyperperiodRecord {
            index: self.hyperperiods.len(),
            total_qoe: self.qoe_sum / self.count.max(1) as f64,
            sharing,
            grad_norm,
            max_queue,
            step,
        });
        self.qoe_sum = 0.0;
        self.count = 0;
        self.sharing_sum = None;
    }

    pub fn finish(self, final_sharing: SharingMatrix) -> RunTrace {
        RunTrace {
            q_min: self.cfg.q_min,
            alpha: self.cfg.alpha,
            percentile: self.cfg.percentile,
            hyperperiods: self.hyperperiods,
            clients: self.clients,
            periods: (self.detail == Detail::Period).then_some(self.periods),
            final_sharing,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> SystemConfig {
        SystemConfig::table2()
    }

    #[test]
    fn extreme_rates() {
        let cfg = cfg();
        let spec = ScenarioSpec {
            arrivals: ArrivalLaw::Bernoulli {
                rates: vec![vec![0.0, 1.0], vec![1.0, 0.0]],
            },
            ..ScenarioSpec::mirrored(&cfg, 0.1, 0.9, 10e6, 7, 10)
        };
        for k in 0..50 {
            let s = generate_period(&spec, &cfg, k);
            assert_eq!(s.arrival_count(&cfg, cfg.cell_index(0, 0)), 0);
            assert_eq!(s.arrival_count(&cfg, cfg.cell_index(0, 1)), 30);
            assert_eq!(s.arrival_count(&cfg, cfg.cell_index(1, 0)), 30);
            assert_eq!(s.arrival_count(&cfg, cfg.cell_index(1, 1)), 0);
        }
    }

    #[test]
    fn empirical_mean_concentrates() {
        let cfg = cfg();
        let spec = ScenarioSpec::mirrored(&cfg, 0.1, 0.9, 10e6, 2024, 150);
        let cell = cfg.cell_index(0, 1);
        let total: usize = (0..3000)
            .map(|k| generate_period(&spec, &cfg, k).arrival_count(&cfg, cell))
            .sum();
        let mean = total as f64 / 3000.0;
        assert!((mean - 27.0).abs() < 0.5, "mean {mean}");
    }

    #[test]
    fn order_independent() {
        let cfg = cfg();
        let spec = ScenarioSpec::mirrored(&cfg, 0.3, 0.7, 10e6, 99, 10);
        let forward: Vec<_> = (0..40).map(|k| generate_period(&spec, &cfg, k)).collect();
        let backward: Vec<_> = (0..40)
            .rev()
            .map(|k| generate_period(&spec, &cfg, k))
            .collect();
        for (a, b) in forward.iter().zip(backward.iter().rev()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn switches_apply_at_boundary() {
        let cfg = cfg();
        let mut spec = ScenarioSpec {
            arrivals: ArrivalLaw::Deterministic {
                counts: vec![vec![3, 27], vec![27, 3]],
            },
            ..ScenarioSpec::mirrored(&cfg, 0.1, 0.9, 10e6, 1, 10)
        };
        spec.switches.push(RegimeSwitch {
            hyperperiod: 2,
            arrivals: Some(ArrivalLaw::Deterministic {
                counts: vec![vec![27, 3], vec![3, 27]],
            }),
            capacities: Some(vec![vec![5e6; 2]; 2]),
        });
        let h = cfg.periods_per_hyperperiod;
        let before = generate_period(&spec, &cfg, 2 * h - 1);
        let after = generate_period(&spec, &cfg, 2 * h);
        assert_eq!(before.arrival_count(&cfg, 0), 3);
        assert_eq!(after.arrival_count(&cfg, 0), 27);
        assert_eq!(before.capacities[0], 10e6);
        assert_eq!(after.capacities[0], 5e6);
    }

    #[test]
    fn validation() {
        let cfg = cfg();
        let mut spec = ScenarioSpec::mirrored(&cfg, 0.1, 0.9, 10e6, 1, 10);
        assert!(spec.validate(&cfg).is_ok());
        spec.switches = vec![
            RegimeSwitch {
                hyperperiod: 5,
                arrivals: None,
                capacities: None,
            },
            RegimeSwitch {
                hyperperiod: 5,
                arrivals: None,
                capacities: None,
            },
        ];
        assert!(spec.validate(&cfg).is_err());
        let bad = ScenarioSpec {
            arrivals: ArrivalLaw::Bernoulli {
                rates: vec![vec![1.5, 0.1], vec![0.1, 0.1]],
            },
            ..ScenarioSpec::mirrored(&cfg, 0.1, 0.9, 10e6, 1, 10)
        };
        assert!(bad.validate(&cfg).is_err());
    }

    #[test]
    fn satisfaction_and_improvement() {
        let mk = |arrivals, satisfied| ClientRecord {
            arrivals,
            satisfied,
            hinge_sum: 0.0,
            final_queue: 0.0,
        };
        let trace = RunTrace {
            q_min: 0.3,
            alpha: 0.008,
            percentile: 0.95,
            hyperperiods: Vec::new(),
            clients: vec![mk(20, 20), mk(20, 19), mk(0, 0)],
            periods: None,
            final_sharing: SharingMatrix::zeros(1, 1),
        };
        assert_eq!(
            percentile_satisfaction(&trace),
            vec![Some(1.0), Some(0.95), None]
        );
        assert_eq!(min_satisfaction(&trace), Some(0.95));

        assert_eq!(improvement(5.0, 5.0).value, 0.0);
        assert!(improvement(6.0, 5.0).value > 0.0);
        let z = improvement(1.5, 0.0);
        assert!(z.absolute);
        assert_eq!(z.value, 1.5);
    }
}
