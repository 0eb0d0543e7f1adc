//! Slow reference solvers used to certify the fast ones at small scale.

use crate::error::{Error, Result};
use crate::model::{SharingMatrix, SystemConfig};
use crate::projection::solve_dense;
use crate::ra::{cell_objective, CellParams};

/// Largest number of arrived clients [`brute_force_ra`] accepts.
pub const MAX_ORACLE_CLIENTS: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleAllocation {
    pub tau: Vec<f64>,
    pub objective: f64,
}

/// Minimizes one cell's allocation objective by coarse-to-fine grid search
/// over the simplex `sum tau = budget` (the objective is decreasing in every
/// coordinate, so the budget binds).
pub fn brute_force_ra(
    params: &CellParams<'_>,
    budget: f64,
    capacities: &[f64],
    queues: &[f64],
) -> Result<OracleAllocation> {
    let m = capacities.len();
    if m > MAX_ORACLE_CLIENTS {
        return Err(Error::OracleScaleExceeded(format!(
            "{m} clients, limit {MAX_ORACLE_CLIENTS}"
        )));
    }
    if !(budget >= 0.0) || !budget.is_finite() {
        return Err(Error::NegativeBudget {
            operator: usize::MAX,
            region: usize::MAX,
            budget,
        });
    }
    if m == 0 {
        return Ok(OracleAllocation {
            tau: Vec::new(),
            objective: 0.0,
        });
    }
    let eval = |free: &[f64]| -> Option<(f64, Vec<f64>)> {
        let used: f64 = free.iter().sum();
        let last = budget - used;
        if free.iter().any(|&t| t < 0.0) || last < -1e-12 {
            return None;
        }
        let mut tau = free.to_vec();
        tau.push(last.max(0.0));
        Some((cell_objective(params, capacities, queues, &tau), tau))
    };
    let dims = m - 1;
    let mut center = vec![budget / m as f64; dims];
    let mut half = budget;
    let points = match dims {
        0 => 1,
        1 => 2001,
        2 => 201,
        _ => 41,
    };
    let mut best = eval(&center).expect("center is feasible");
    for _ in 0..40 {
        let step = if points > 1 {
            2.0 * half / (points - 1) as f64
        } else {
            0.0
        };
        let mut idx = vec![0usize; dims];
        let mut coords = vec![0.0; dims];
        loop {
            for d in 0..dims {
                coords[d] = center[d] - half + idx[d] as f64 * step;
            }
            if let Some(candidate) = eval(&coords) {
                if candidate.0 < best.0 {
                    best = candidate;
                }
            }
            let mut d = 0;
            while d < dims {
                idx[d] += 1;
                if idx[d] < points {
                    break;
                }
                idx[d] = 0;
                d += 1;
            }
            if d == dims {
                break;
            }
        }
        center.copy_from_slice(&best.1[..dims]);
        half = 4.0 * step;
        if half < 1e-10 {
            break;
        }
    }
    Ok(OracleAllocation {
        tau: best.1,
        objective: best.0,
    })
}

/// Linear inequality system `a x <= b` describing the sharing polytope, with
/// optional per-cell budget floors.
pub fn polytope_constraints(
    cfg: &SystemConfig,
    floors: Option<&[f64]>,
) -> (Vec<Vec<f64>>, Vec<f64>) {
    let o = cfg.num_operators;
    let proto = SharingMatrix::zeros(o, cfg.num_regions);
    let len = proto.entries().len();
    let mut a = Vec::new();
    let mut b = Vec::new();
    for k in 0..len {
        let mut row = vec![0.0; len];
        row[k] = -1.0;
        a.push(row);
        b.push(0.0);
    }
    for r in 0..cfg.num_regions {
        for j in 0..o {
            let mut row = vec![0.0; len];
            for i in 0..o {
                row[proto.index(r, j, i)] = 1.0;
            }
            a.push(row);
            b.push(cfg.slots_per_period as f64);
        }
    }
    for i in 0..o {
        for j in i + 1..o {
            let mut row = vec![0.0; len];
            for r in 0..cfg.num_regions {
                row[proto.index(r, j, i)] += 1.0;
                row[proto.index(r, i, j)] -= 1.0;
            }
            let neg: Vec<f64> = row.iter().map(|v| -v).collect();
            a.push(row);
            b.push(cfg.balance_bound);
            a.push(neg);
            b.push(cfg.balance_bound);
        }
    }
    if let Some(floors) = floors {
        for (cell, &f) in floors.iter().enumerate() {
            let (i, r) = cfg.cell_coords(cell);
            let mut row = vec![0.0; len];
            for j in 0..o {
                row[proto.index(r, j, i)] = -1.0;
            }
            a.push(row);
            b.push(-f);
        }
    }
    (a, b)
}

/// Euclidean projection by a primal active-set method on the dense
/// inequality form, started from the feasible point `start` with an empty
/// working set.
pub fn qp_projection(point: &[f64], a: &[Vec<f64>], b: &[f64], start: &[f64]) -> Result<Vec<f64>> {
    let n = point.len();
    if start.len() != n {
        return Err(Error::Shape("start and point differ in length".into()));
    }
    let mut x = start.to_vec();
    if a.iter().zip(b).any(|(row, &bi)| dot(row, &x) > bi + 1e-12) {
        return Err(Error::Infeasible(
            "oracle start point is not feasible".into(),
        ));
    }
    let mut working: Vec<usize> = Vec::new();
    let scale = 1.0 + point.iter().map(|v| v.abs()).fold(0.0, f64::max);
    for _ in 0..10_000 {
        let g: Vec<f64> = x.iter().zip(point).map(|(xi, pi)| xi - pi).collect();
        let rows: Vec<&Vec<f64>> = working.iter().map(|&k| &a[k]).collect();
        let y = if rows.is_empty() {
            Vec::new()
        } else {
            let gram: Vec<Vec<f64>> = rows
                .iter()
                .map(|ri| rows.iter().map(|rj| dot(ri, rj)).collect())
                .collect();
            let rhs: Vec<f64> = rows.iter().map(|ri| dot(ri, &g)).collect();
            solve_dense(gram, rhs)?
        };
        let mut d: Vec<f64> = g.iter().map(|v| -v).collect();
        for (yk, row) in y.iter().zip(&rows) {
            for (di, ri) in d.iter_mut().zip(row.iter()) {
                *di += yk * ri;
            }
        }
        if d.iter().map(|v| v.abs()).fold(0.0, f64::max) < 1e-12 * scale {
            // multipliers are -y; Bland's rule (lowest constraint index) avoids cycling
            let leaving = (0..y.len())
                .filter(|&k| -y[k] < -1e-10 * scale)
                .min_by_key(|&k| working[k]);
            match leaving {
                Some(k) => {
                    working.remove(k);
                    continue;
                }
                None => return Ok(x),
            }
        }
        let mut alpha = 1.0;
        let mut blocking = None;
        for (k, row) in a.iter().enumerate() {
            if working.contains(&k) {
                continue;
            }
            let ad = dot(row, &d);
            if ad > 1e-15 {
                let ratio = (b[k] - dot(row, &x)).max(0.0) / ad;
                // strict comparison keeps the lowest index among ties
                if ratio < alpha {
                    alpha = ratio;
                    blocking = Some(k);
                }
            }
        }
        for (xi, di) in x.iter_mut().zip(&d) {
            *xi += alpha * di;
        }
        if let Some(k) = blocking {
            working.push(k);
        }
    }
    Err(Error::Infeasible(
        "active-set oracle did not terminate".into(),
    ))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Static objective when every cell holds `counts[cell]` identical clients
/// with capacity `capacity` arriving every period: the budget is split
/// evenly. Returns `None` when the hinge allowance is exceeded in some cell.
pub fn equal_split_objective(
    cfg: &SystemConfig,
    counts: &[usize],
    capacity: f64,
    budgets: &[f64],
) -> Option<f64> {
    let mut total = 0.0;
    for (&m, &b) in counts.iter().zip(budgets) {
        if m == 0 {
            continue;
        }
        let q = cfg.quality(b / m as f64, capacity);
        if cfg.hinge(q) > cfg.hinge_allowance() + 1e-12 {
            return None;
        }
        total += m as f64 * q;
    }
    Some(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::QualityModel;

    #[test]
    fn brute_force_symmetric() {
        let m = QualityModel::default();
        let prm = CellParams {
            model: &m,
            slots_per_period: 20,
            v_weight: 1.0,
            q_min: 0.3,
            alpha: 0.008,
        };
        let r = brute_force_ra(&prm, 20.0, &[10e6, 10e6], &[0.0, 0.0]).unwrap();
        assert!((r.tau[0] - 10.0).abs() < 1e-6);
        assert!(brute_force_ra(&prm, 20.0, &[1.0; 5], &[0.0; 5]).is_err());
    }

    #[test]
    fn qp_projects_onto_box_corner() {
        // x <= 1 componentwise, x >= 0
        let a = vec![
            vec![-1.0, 0.0],
            vec![0.0, -1.0],
            vec![1.0, 0.0],
            vec![0.0, 1.0],
        ];
        let b = vec![0.0, 0.0, 1.0, 1.0];
        let x = qp_projection(&[3.0, -2.0], &a, &b, &[0.0, 0.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-12 && x[1].abs() < 1e-12);
        let x = qp_projection(&[0.25, 0.5], &a, &b, &[1.0, 1.0]).unwrap();
        assert!((x[0] - 0.25).abs() < 1e-12 && (x[1] - 0.5).abs() < 1e-12);
    }
}
