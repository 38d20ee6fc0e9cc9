//! Improvement processes on a budget set: convergence with a Lyapunov monitor
//! for Cobb-Douglas, instability for the identity field, and a direction that
//! leaves the orthant in finite time.

use integrability::demand::BudgetProblem;
use integrability::dynamics::{make_h2, make_pathological, simulate, stability_experiment};
use integrability::{Bundle, FieldSpec, OdeSettings};

fn main() -> integrability::Result<()> {
    let settings = OdeSettings::default();
    let problem = BudgetProblem::new(vec![1.0, 1.0], 2.0)?;
    let one = Bundle::ones(2);

    let cd = FieldSpec::cobb_douglas(&[0.5, 0.5])?;
    let h = make_h2(&cd, &problem)?;
    let sim = simulate(&cd, &h, &Bundle::new(vec![1.7, 0.2])?, &problem, &settings, &one, &one)?;
    println!(
        "Cobb-Douglas from (1.7, 0.2): {:?} at t = {:.2}, x = {:.6?}, utility nondecreasing: {}",
        sim.classification, sim.t_end, sim.final_point, sim.lyapunov_monotone
    );
    for (t, u) in sim.monitor.iter().step_by(8).take(6) {
        println!("  t = {t:5.2}  u = {u:.8}");
    }
    let report = stability_experiment(&cd, &h, &problem, 0.05, 20, 20, 42, &settings, &one)?;
    println!(
        "  local: {} of {} converged; compact: {} converged",
        report.local.n_converged,
        report.local.n_converged + report.local.n_failed,
        report.compact.n_converged
    );

    let id = FieldSpec::identity(2)?;
    let h = make_h2(&id, &problem)?;
    let report = stability_experiment(&id, &h, &problem, 0.05, 20, 20, 42, &settings, &one)?;
    println!(
        "identity field with h2: {} of {} local starts fail, e.g. {:?}",
        report.local.n_failed,
        report.local.n_converged + report.local.n_failed,
        report.local.failures.first()
    );

    let h = make_pathological(&problem)?;
    let sim = simulate(&id, &h, &Bundle::new(vec![0.5, 1.5])?, &problem, &settings, &one, &one)?;
    println!(
        "pathological direction from (0.5, 1.5): {:?} at t = {:.9} (ln 2 = {:.9}), x = {:.3?}",
        sim.classification,
        sim.t_end,
        std::f64::consts::LN_2,
        sim.final_point
    );
    Ok(())
}
