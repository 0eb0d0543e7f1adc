//! Constant and decaying step sizes side by side.

use bandshare::abs::run_abs;
use bandshare::experiment::{hyperperiods_to_target, reference_objective};
use bandshare::scenario::{Detail, ScenarioSpec};
use bandshare::{SharingMatrix, StepSchedule, SystemConfig};

fn main() -> bandshare::Result<()> {
    let base = SystemConfig::table2();
    let scenario = ScenarioSpec::mirrored(&base, 0.1, 0.9, 10e6, 2024, 300);
    let opt = reference_objective(&base, &scenario, 150..300)?;
    let runs = [
        (0.1, StepSchedule::Constant),
        (0.01, StepSchedule::Constant),
        (0.0001, StepSchedule::Constant),
        (0.1, StepSchedule::InverseSqrt),
    ];
    for (eta, schedule) in runs {
        let cfg = SystemConfig {
            step_size: eta,
            step_schedule: schedule,
            ..base.clone()
        };
        let trace = run_abs(
            &cfg,
            &scenario,
            300,
            &SharingMatrix::no_sharing(&cfg),
            Detail::Hyperperiod,
        )?;
        let series = trace.qoe_series();
        let hit = hyperperiods_to_target(&series, opt, 5.0, 10);
        println!(
            "eta {eta:<7} {schedule:?}: final {:.3} (optimum {opt:.3}), within 5% at {}",
            trace.mean_qoe(150..300),
            hit.map_or("never".to_string(), |t| t.to_string())
        );
    }
    Ok(())
}
