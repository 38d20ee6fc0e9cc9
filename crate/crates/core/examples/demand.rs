//! Transaction-stopping demand: multistart Newton on the first-order system,
//! checked against the closed form and against direct utility maximization.

use integrability::demand::{check_warp, cobb_douglas_demand, demand_by_maximization, solve_demand, BudgetProblem};
use integrability::{Bundle, FieldSpec, OdeSettings};

fn main() -> integrability::Result<()> {
    let alpha = [1.0, 2.0];
    let field = FieldSpec::cobb_douglas(&alpha)?;
    let mut chosen = Vec::new();
    for (p, m) in [(vec![1.0, 1.0], 3.0), (vec![2.0, 1.0], 3.0), (vec![1.0, 0.5], 2.0)] {
        let problem = BudgetProblem::new(p, m)?;
        let d = solve_demand(&field, &problem, 16, 42)?;
        let exact = cobb_douglas_demand(&alpha, &problem);
        let grid = demand_by_maximization(&field, &problem, &Bundle::ones(2), 20, &OdeSettings::default())?;
        println!(
            "p = {:?}, m = {}: x* = {:.10?} (closed form {:.10?}), lambda = {:.6}, roots = {}, maximizer {:.4?}",
            problem.p,
            problem.m,
            d.x_star.as_slice(),
            exact,
            d.lambda,
            d.n_roots(),
            grid.as_slice()
        );
        chosen.push((problem, d.x_star));
    }
    let warp = check_warp(&chosen)?;
    println!("WARP over the three budgets: {:?}", warp.status);

    let problem = BudgetProblem::new(vec![1.0, 1.0], 3.0)?;
    let scaled = solve_demand(&field, &problem.scaled(3.0)?, 16, 42)?;
    println!("(3p, 3m) gives {:.10?}", scaled.x_star.as_slice());
    Ok(())
}
