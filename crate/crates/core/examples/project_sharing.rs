//! Projecting infeasible sharing matrices back onto the polytope.

use bandshare::oracle::{polytope_constraints, qp_projection};
use bandshare::projection::SharingPolytope;
use bandshare::{SharingMatrix, SystemConfig};

fn main() -> bandshare::Result<()> {
    let cfg = SystemConfig::table2();
    let poly = SharingPolytope::new(&cfg);
    let (a, b) = polytope_constraints(&cfg, None);
    // [region][owner][recipient]
    let points = [
        vec![25.0, 3.0, 0.0, 20.0, 20.0, 0.0, 2.0, 25.0],
        vec![10.0, 15.0, -4.0, 20.0, 20.0, -1.0, 0.0, 20.0],
        vec![0.0, 40.0, 0.0, 20.0, 20.0, 0.0, 0.0, 20.0],
    ];
    for p in points {
        let x = SharingMatrix::from_entries(2, 2, p.clone())?;
        let y = poly.project(&x)?;
        let z = qp_projection(&p, &a, &b, &[0.0; 8])?;
        let z = SharingMatrix::from_entries(2, 2, z)?;
        println!(
            "{:?}\n  -> {:.4?}\n  moved {:.4}, oracle distance {:.2e}",
            p,
            y.entries(),
            x.distance(&y),
            y.distance(&z)
        );
    }

    let floors = vec![5.0, 30.0, 30.0, 5.0];
    let with_floors = SharingPolytope::new(&cfg).with_budget_floors(floors.clone());
    let y = with_floors.project(&SharingMatrix::no_sharing(&cfg))?;
    println!(
        "no sharing with floors {floors:?}: budgets {:.4?}",
        y.budgets()
    );
    Ok(())
}
