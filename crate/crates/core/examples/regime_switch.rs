//! Demand swaps between the operators halfway through; ABS follows it.

use bandshare::abs::run_abs;
use bandshare::experiment::reference_objective;
use bandshare::scenario::{ArrivalLaw, Detail, RegimeSwitch, ScenarioSpec};
use bandshare::{SharingMatrix, SystemConfig};

fn main() -> bandshare::Result<()> {
    let cfg = SystemConfig::table2();
    let mut scenario = ScenarioSpec::mirrored(&cfg, 0.1, 0.9, 10e6, 2024, 300);
    scenario.switches.push(RegimeSwitch {
        hyperperiod: 150,
        arrivals: Some(ArrivalLaw::mirrored_pair(0.9, 0.1)),
        capacities: None,
    });
    let trace = run_abs(
        &cfg,
        &scenario,
        300,
        &SharingMatrix::no_sharing(&cfg),
        Detail::Hyperperiod,
    )?;

    for window in [100..150, 150..200, 250..300] {
        let opt = reference_objective(&cfg, &scenario, window.clone())?;
        let abs = trace.mean_qoe(window.clone());
        println!("{window:?}: ABS {abs:.3}  static optimum {opt:.3}");
    }
    // net lending of operator 0 to operator 1 flips sign after the swap
    for t in [140, 160, 200, 299] {
        let s = &trace.hyperperiods[t].sharing;
        println!(
            "t={t:>3} net 0->1 per region: {:+.2} {:+.2}",
            s.get(0, 0, 1) - s.get(0, 1, 0),
            s.get(1, 0, 1) - s.get(1, 1, 0)
        );
    }
    Ok(())
}
