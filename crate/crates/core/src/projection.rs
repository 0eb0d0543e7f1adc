//! Euclidean projection onto the sharing polytope.
//!
//! The polytope is the intersection of two families of constraints whose
//! members have disjoint supports, so each family projects in closed form:
//! the capped simplices `S^{j->i}_r >= 0, sum_i S^{j->i}_r <= T` of each
//! (region, owner) row, and the pairwise balance slabs
//! `|sum_r S^{j->i}_r - sum_r S^{i->j}_r| <= zeta`. Dykstra's alternating
//! scheme over the families converges to the exact projection onto the
//! intersection.
//!
//! Optional per-cell budget floors `sum_j S^{j->i}_r >= floor` encode the
//! offline static optimizer's hinge feasibility region. Their vertices are
//! highly degenerate and Dykstra crawls there, so a polytope with floors is
//! projected by an exact dual active-set solve instead. The same solve
//! finishes the rare Dykstra run that exhausts its sweep budget.

use crate::error::{Error, Result};
use crate::model::{validate_sharing, SharingMatrix, SystemConfig, FEASIBILITY_TOL};

/// Sweep terminates once the iterate moves less than this in max-norm.
pub const PROJECTION_TOL: f64 = 1e-9;
pub const MAX_SWEEPS: usize = 100_000;

#[derive(Debug, Clone)]
pub struct SharingPolytope {
    cfg: SystemConfig,
    /// Minimum budget per cell, indexed like [`SystemConfig::cell_index`].
    floors: Option<Vec<f64>>,
}

impl SharingPolytope {
    pub fn new(cfg: &SystemConfig) -> Self {
        SharingPolytope {
            cfg: cfg.clone(),
            floors: None,
        }
    }

    pub fn with_budget_floors(mut self, floors: Vec<f64>) -> Self {
        self.floors = Some(floors);
        self
    }

    pub fn floors(&self) -> Option<&[f64]> {
        self.floors.as_deref()
    }

    /// Membership including floors (if any), at [`FEASIBILITY_TOL`].
    pub fn contains(&self, s: &SharingMatrix) -> Result<bool> {
        if !validate_sharing(s, &self.cfg)?.is_member() {
            return Ok(false);
        }
        if let Some(floors) = &self.floors {
            for (cell, &f) in floors.iter().enumerate() {
                let (i, r) = self.cfg.cell_coords(cell);
                if s.budget(i, r) < f - FEASIBILITY_TOL {
                    return Ok(false);
                }
            }
        }
        Ok(true)
    }

    pub fn project(&self, point: &SharingMatrix) -> Result<SharingMatrix> {
        if self.floors.is_some() {
            return self.project_exact(point);
        }
        match self.project_dykstra(point) {
            Err(Error::ProjectionStalled { .. }) => self.project_exact(point),
            other => other,
        }
    }

    fn project_exact(&self, point: &SharingMatrix) -> Result<SharingMatrix> {
        self.check_point(point)?;
        let (a, b) = self.inequalities();
        let x = dual_active_set_projection(point.entries(), &a, &b)?;
        let mut s = SharingMatrix::from_entries(self.cfg.num_operators, self.cfg.num_regions, x)?;
        self.project_nonneg(&mut s);
        Ok(s)
    }

    fn check_point(&self, point: &SharingMatrix) -> Result<()> {
        let cfg = &self.cfg;
        if point.num_operators() != cfg.num_operators || point.num_regions() != cfg.num_regions {
            return Err(Error::Shape(
                "point does not match the configured shape".into(),
            ));
        }
        if point.entries().iter().any(|v| !v.is_finite()) {
            return Err(Error::Shape(
                "projection input has non-finite entries".into(),
            ));
        }
        Ok(())
    }

    /// Dense `a x <= b` form of the polytope, floors included.
    pub fn inequalities(&self) -> (Vec<Vec<f64>>, Vec<f64>) {
        let cfg = &self.cfg;
        let o = cfg.num_operators;
        let proto = SharingMatrix::zeros(o, cfg.num_regions);
        let len = proto.entries().len();
        let mut a = Vec::new();
        let mut b = Vec::new();
        let mut push = |terms: &[(usize, f64)], rhs: f64| {
            let mut row = vec![0.0; len];
            for &(k, v) in terms {
                row[k] += v;
            }
            a.push(row);
            b.push(rhs);
        };
        for k in 0..len {
            push(&[(k, -1.0)], 0.0);
        }
        let t = cfg.slots_per_period as f64;
        for r in 0..cfg.num_regions {
            for j in 0..o {
                let terms: Vec<_> = (0..o).map(|i| (proto.index(r, j, i), 1.0)).collect();
                push(&terms, t);
            }
        }
        for i in 0..o {
            for j in i + 1..o {
                let terms: Vec<_> = (0..cfg.num_regions)
                    .flat_map(|r| [(proto.index(r, j, i), 1.0), (proto.index(r, i, j), -1.0)])
                    .collect();
                let neg: Vec<_> = terms.iter().map(|&(k, v)| (k, -v)).collect();
                push(&terms, cfg.balance_bound);
                push(&neg, cfg.balance_bound);
            }
        }
        if let Some(floors) = &self.floors {
            for (cell, &f) in floors.iter().enumerate() {
                let (i, r) = cfg.cell_coords(cell);
                let terms: Vec<_> = (0..o).map(|j| (proto.index(r, j, i), -1.0)).collect();
                push(&terms, -f);
            }
        }
        (a, b)
    }

    /// Dykstra's alternating projections onto the polytope without floors;
    /// errors after [`MAX_SWEEPS`].
    pub fn project_dykstra(&self, point: &SharingMatrix) -> Result<SharingMatrix> {
        self.check_point(point)?;
        let len = point.entries().len();
        let mut x = point.clone();
        let mut increments = vec![vec![0.0; len]; 2];
        let mut z = vec![0.0; len];
        let mut prev = vec![0.0; len];
        let mut last_move = f64::INFINITY;
        for sweep in 0..MAX_SWEEPS {
            prev.copy_from_slice(x.entries());
            // the iterate can stall while the corrections still drift, so
            // convergence is judged on both
            let mut correction_move: f64 = 0.0;
            for (set, inc) in increments.iter_mut().enumerate() {
                for ((zk, xk), pk) in z.iter_mut().zip(x.entries()).zip(inc.iter()) {
                    *zk = xk + pk;
                }
                x.entries_mut().copy_from_slice(&z);
                match set {
                    0 => self.project_rows(&mut x),
                    _ => self.project_balance(&mut x),
                }
                for ((pk, zk), xk) in inc.iter_mut().zip(&z).zip(x.entries()) {
                    let next = zk - xk;
                    correction_move = correction_move.max((next - *pk).abs());
                    *pk = next;
                }
            }
            last_move = x
                .entries()
                .iter()
                .zip(&prev)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
                .max(correction_move);
            if last_move < PROJECTION_TOL
                && (sweep > 0 || last_move == 0.0)
                && validate_sharing(&x, &self.cfg)?.is_member()
            {
                // membership allows entries a hair below zero; budgets downstream must not
                self.project_nonneg(&mut x);
                return Ok(x);
            }
        }
        Err(Error::ProjectionStalled {
            sweeps: MAX_SWEEPS,
            last_move,
        })
    }

    fn project_nonneg(&self, x: &mut SharingMatrix) {
        for v in x.entries_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
    }

    fn project_rows(&self, x: &mut SharingMatrix) {
        let o = self.cfg.num_operators;
        let t = self.cfg.slots_per_period as f64;
        let mut scratch = Vec::with_capacity(o);
        for r in 0..self.cfg.num_regions {
            for j in 0..o {
                let start = x.index(r, j, 0);
                project_capped_simplex(&mut x.entries_mut()[start..start + o], t, &mut scratch);
            }
        }
    }

    fn project_balance(&self, x: &mut SharingMatrix) {
        let o = self.cfg.num_operators;
        let zeta = self.cfg.balance_bound;
        let norm_sq = 2.0 * self.cfg.num_regions as f64;
        for i in 0..o {
            for j in i + 1..o {
                let d = x.net_transfer(i, j);
                let excess = if d > zeta {
                    d - zeta
                } else if d < -zeta {
                    d + zeta
                } else {
                    continue;
                };
                let shift = excess / norm_sq;
                for r in 0..self.cfg.num_regions {
                    let a = x.index(r, j, i);
                    let b = x.index(r, i, j);
                    x.entries_mut()[a] -= shift;
                    x.entries_mut()[b] += shift;
                }
            }
        }
    }
}

/// Projects `row` onto `{v >= 0, sum v <= cap}` in place.
pub fn project_capped_simplex(row: &mut [f64], cap: f64, scratch: &mut Vec<f64>) {
    let clamped: f64 = row.iter().map(|v| v.max(0.0)).sum();
    if clamped <= cap {
        row.iter_mut().for_each(|v| *v = v.max(0.0));
        return;
    }
    // simplex `sum v = cap`: find the threshold by sorting
    scratch.clear();
    scratch.extend_from_slice(row);
    scratch.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (k, &u) in scratch.iter().enumerate() {
        cumsum += u;
        let candidate = (cumsum - cap) / (k + 1) as f64;
        if u - candidate > 0.0 {
            theta = candidate;
        } else {
            break;
        }
    }
    row.iter_mut().for_each(|v| *v = (*v - theta).max(0.0));
}

/// Projection of `point` onto `{x : a x <= b}` by the dual active-set
/// method of Goldfarb and Idnani with identity Hessian. Starts from the
/// unconstrained minimizer, so no feasible point is needed; an empty set is
/// reported as [`Error::Infeasible`].
pub fn dual_active_set_projection(point: &[f64], a: &[Vec<f64>], b: &[f64]) -> Result<Vec<f64>> {
    let dot = |u: &[f64], v: &[f64]| -> f64 { u.iter().zip(v).map(|(p, q)| p * q).sum() };
    let scale = 1.0
        + point.iter().map(|v| v.abs()).fold(0.0, f64::max)
        + b.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let tol = 1e-12 * scale;
    let mut x = point.to_vec();
    let mut active: Vec<usize> = Vec::new();
    let mut u: Vec<f64> = Vec::new();
    for _ in 0..10 * (a.len() + 1) {
        let (q, violation) = a
            .iter()
            .zip(b)
            .map(|(row, &bk)| dot(row, &x) - bk)
            .enumerate()
            .max_by(|p, q| p.1.total_cmp(&q.1))
            .unwrap_or((0, f64::NEG_INFINITY));
        if violation <= tol {
            return Ok(x);
        }
        let mut u_q = 0.0;
        loop {
            let r = if active.is_empty() {
                Vec::new()
            } else {
                let gram: Vec<Vec<f64>> = active
                    .iter()
                    .map(|&i| active.iter().map(|&j| dot(&a[i], &a[j])).collect())
                    .collect();
                let rhs: Vec<f64> = active.iter().map(|&i| dot(&a[i], &a[q])).collect();
                solve_dense(gram, rhs)?
            };
            let mut z = a[q].clone();
            for (rj, &j) in r.iter().zip(&active) {
                for (zk, ak) in z.iter_mut().zip(&a[j]) {
                    *zk -= rj * ak;
                }
            }
            let zz = dot(&z, &a[q]);
            let full = if zz > 1e-14 * dot(&a[q], &a[q]) {
                (dot(&a[q], &x) - b[q]) / zz
            } else {
                f64::INFINITY
            };
            let (partial, leaving) = r
                .iter()
                .enumerate()
                .filter(|(_, &rj)| rj > 1e-14)
                .map(|(k, &rj)| (u[k] / rj, k))
                .fold((f64::INFINITY, None), |acc, (t, k)| {
                    if t < acc.0 {
                        (t, Some(k))
                    } else {
                        acc
                    }
                });
            let t = full.min(partial);
            if !t.is_finite() {
                return Err(Error::Infeasible("sharing polytope is empty".into()));
            }
            if full.is_finite() {
                for (xk, zk) in x.iter_mut().zip(&z) {
                    *xk -= t * zk;
                }
            }
            for (uk, rk) in u.iter_mut().zip(&r) {
                *uk -= t * rk;
            }
            u_q += t;
            if full <= partial {
                active.push(q);
                u.push(u_q);
                break;
            }
            let l = leaving.expect("finite partial step has a leaving constraint");
            active.remove(l);
            u.remove(l);
        }
    }
    Err(Error::Infeasible(
        "dual active-set projection did not terminate".into(),
    ))
}

/// Gaussian elimination with partial pivoting.
pub fn solve_dense(mut m: Vec<Vec<f64>>, mut rhs: Vec<f64>) -> Result<Vec<f64>> {
    let n = rhs.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&p, &q| m[p][col].abs().total_cmp(&m[q][col].abs()))
            .unwrap();
        if m[pivot][col].abs() < 1e-14 {
            return Err(Error::Infeasible("singular system in oracle".into()));
        }
        m.swap(col, pivot);
        rhs.swap(col, pivot);
        for row in col + 1..n {
            let f = m[row][col] / m[col][col];
            if f != 0.0 {
                for k in col..n {
                    m[row][k] -= f * m[col][k];
                }
                rhs[row] -= f * rhs[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| m[row][k] * x[k]).sum();
        x[row] = (rhs[row] - s) / m[row][row];
    }
    Ok(x)
}

/// Euclidean projection onto the sharing polytope of `cfg`.
pub fn project_onto_omega(point: &SharingMatrix, cfg: &SystemConfig) -> Result<SharingMatrix> {
    SharingPolytope::new(cfg).project(point)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_region(zeta: f64) -> SystemConfig {
        SystemConfig {
            num_regions: 1,
            balance_bound: zeta,
            ..SystemConfig::table2()
        }
    }

    #[test]
    fn feasible_point_is_fixed() {
        let cfg = SystemConfig::table2();
        let mut s = SharingMatrix::no_sharing(&cfg);
        s.set(0, 0, 0, 12.0);
        s.set(0, 0, 1, 6.0);
        s.set(1, 1, 1, 13.0);
        s.set(1, 1, 0, 6.0005);
        let p = project_onto_omega(&s, &cfg).unwrap();
        assert!(p.max_abs_diff(&s) < 1e-9);
    }

    #[test]
    fn equalizes_pair_when_zeta_is_zero() {
        let cfg = one_region(0.0);
        let mut s = SharingMatrix::zeros(2, 1);
        s.set(0, 0, 0, 5.0);
        s.set(0, 1, 1, 5.0);
        s.set(0, 0, 1, 4.0);
        let p = project_onto_omega(&s, &cfg).unwrap();
        assert!((p.get(0, 0, 1) - 2.0).abs() < 1e-8);
        assert!((p.get(0, 1, 0) - 2.0).abs() < 1e-8);
        assert!((p.get(0, 0, 0) - 5.0).abs() < 1e-8);
        assert!((p.get(0, 1, 1) - 5.0).abs() < 1e-8);
    }

    #[test]
    fn clamps_single_negative_entry() {
        let cfg = SystemConfig::table2();
        let mut s = SharingMatrix::zeros(2, 2);
        for r in 0..2 {
            s.set(r, 0, 0, 10.0);
            s.set(r, 1, 1, 10.0);
        }
        s.set(0, 0, 1, 3.0);
        s.set(1, 1, 0, 3.0);
        s.set(1, 0, 0, -1.0);
        let p = project_onto_omega(&s, &cfg).unwrap();
        assert!(p.get(1, 0, 0).abs() < 1e-9);
        let mut expect = s.clone();
        expect.set(1, 0, 0, 0.0);
        assert!(p.max_abs_diff(&expect) < 1e-8);
    }

    #[test]
    fn result_is_member_for_wild_points() {
        let cfg = SystemConfig::table2();
        let s =
            SharingMatrix::from_entries(2, 2, vec![40.0, -3.0, 17.0, 9.0, -8.0, 25.0, 1.0, 30.0])
                .unwrap();
        let p = project_onto_omega(&s, &cfg).unwrap();
        assert!(validate_sharing(&p, &cfg).unwrap().is_member());
    }

    #[test]
    fn floors_are_respected() {
        let cfg = SystemConfig::table2();
        let poly = SharingPolytope::new(&cfg).with_budget_floors(vec![5.0, 30.0, 30.0, 5.0]);
        let p = poly.project(&SharingMatrix::no_sharing(&cfg)).unwrap();
        assert!(poly.contains(&p).unwrap());
        assert!(p.budget(0, 1) >= 30.0 - 1e-9);
        assert!(p.budget(1, 0) >= 30.0 - 1e-9);
    }

    #[test]
    fn dense_solver() {
        let x = solve_dense(vec![vec![2.0, 1.0], vec![1.0, 3.0]], vec![3.0, 5.0]).unwrap();
        assert!((x[0] - 0.8).abs() < 1e-12 && (x[1] - 1.4).abs() < 1e-12);
    }

    #[test]
    fn rejects_non_finite() {
        let cfg = SystemConfig::table2();
        let mut s = SharingMatrix::no_sharing(&cfg);
        s.set(0, 0, 1, f64::NAN);
        assert!(project_onto_omega(&s, &cfg).is_err());
    }

    #[test]
    fn dual_active_set_matches_closed_form() {
        let a = vec![vec![-1.0, 0.0], vec![0.0, -1.0], vec![1.0, 1.0]];
        let b = vec![0.0, 0.0, 1.0];
        let x = dual_active_set_projection(&[2.0, 0.0], &a, &b).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-12 && x[1].abs() < 1e-12);
        let x = dual_active_set_projection(&[1.0, 1.0], &a, &b).unwrap();
        assert!((x[0] - 0.5).abs() < 1e-12 && (x[1] - 0.5).abs() < 1e-12);
        let empty = vec![vec![1.0, 0.0], vec![-1.0, 0.0]];
        assert!(matches!(
            dual_active_set_projection(&[0.0, 0.0], &empty, &[-1.0, -1.0]),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn degenerate_floor_vertex() {
        // Dykstra crawls here: three floors, three caps and the balance band are tight
        let cfg = SystemConfig::table2();
        let poly = SharingPolytope::new(&cfg).with_budget_floors(vec![5.0, 30.0, 30.0, 5.0]);
        let p = SharingMatrix::from_entries(
            2,
            2,
            vec![
                -81.98449353245563,
                -29.80352618870424,
                51.47342382920618,
                29.975326248848063,
                -63.38386443617097,
                90.88837812953932,
                -79.70734299092484,
                -67.13585798149033,
            ],
        )
        .unwrap();
        let x = poly.project(&p).unwrap();
        let expect = [0.0, 15.0, 5.0, 15.0, 10.0, 10.0, 20.0, 0.0];
        for (got, want) in x.entries().iter().zip(expect) {
            assert!((got - want).abs() < 1e-8, "{:?}", x.entries());
        }
        assert!(poly.contains(&x).unwrap());
    }
}
