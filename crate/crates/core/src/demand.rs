//! Transaction-stopping demand: bundles on the budget hyperplane where the
//! field is proportional to the price vector.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::axioms::{Axiom, AxiomVerdict, Witness};
use crate::error::{Error, Result};
use crate::field::{fd_jacobian, Bundle, Field};
use crate::linalg::{axpy, dist, dot, norm};
use crate::ode::OdeSettings;
use crate::preference::utility;
use crate::sampling::{budget_point, task_rng};

pub const DEFAULT_STARTS: usize = 16;
const MAX_NEWTON_ITERS: usize = 100;
const MAX_HALVINGS: usize = 20;
const FOC_TOL: f64 = 1e-11;
const BUDGET_TOL: f64 = 1e-13;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetProblem {
    pub p: Vec<f64>,
    pub m: f64,
}

impl BudgetProblem {
    pub fn new(p: Vec<f64>, m: f64) -> Result<Self> {
        if p.len() < 2 || p.iter().any(|c| !(c.is_finite() && *c >= 0.0)) || p.iter().all(|c| *c == 0.0) {
            return Err(Error::Invalid(format!("prices must be nonnegative and not all zero, got {p:?}")));
        }
        if !(m > 0.0 && m.is_finite()) {
            return Err(Error::Invalid(format!("income must be positive, got {m}")));
        }
        Ok(BudgetProblem { p, m })
    }

    pub fn dim(&self) -> usize {
        self.p.len()
    }

    pub fn scaled(&self, t: f64) -> Result<Self> {
        BudgetProblem::new(self.p.iter().map(|c| c * t).collect(), self.m * t)
    }

    fn require_interior(&self) -> Result<()> {
        if self.p.iter().any(|c| *c <= 0.0) {
            return Err(Error::Invalid(format!(
                "only strictly positive prices are supported, got {:?}",
                self.p
            )));
        }
        Ok(())
    }

    pub fn budget_residual(&self, x: &[f64]) -> f64 {
        (dot(&self.p, x) - self.m).abs() / self.m
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct FocCheck {
    pub foc_residual: f64,
    pub budget_residual: f64,
    pub lambda_fit: f64,
}

/// Residuals of `g(x) = lambda p`, `p.x = m` with the least-squares `lambda`.
pub fn verify_foc<F: Field + ?Sized>(field: &F, x: &Bundle, problem: &BudgetProblem) -> Result<FocCheck> {
    let g = field.eval(x)?;
    let p = &problem.p;
    let lambda_fit = dot(&g, p) / dot(p, p);
    Ok(FocCheck {
        foc_residual: norm(&axpy(&g, -lambda_fit, p)) / norm(&g),
        budget_residual: problem.budget_residual(x),
        lambda_fit,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct Root {
    pub x: Bundle,
    pub lambda: f64,
    pub foc_residual: f64,
    pub budget_residual: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DemandResult {
    pub problem: BudgetProblem,
    pub x_star: Bundle,
    pub lambda: f64,
    pub foc_residual: f64,
    pub budget_residual: f64,
    /// Distinct roots with `lambda > 0`, best first.
    pub multistart_roots: Vec<Root>,
    pub starts: usize,
    pub converged_starts: usize,
}

impl DemandResult {
    pub fn n_roots(&self) -> usize {
        self.multistart_roots.len()
    }
}

enum NewtonOutcome {
    Converged { x: Vec<f64>, lambda: f64 },
    Failed { residual: f64 },
}

fn system<F: Field + ?Sized>(field: &F, x: &[f64], lambda: f64, problem: &BudgetProblem) -> Result<Vec<f64>> {
    let g = field.eval(x)?;
    let mut r = axpy(&g, -lambda, &problem.p);
    r.push(dot(&problem.p, x) - problem.m);
    Ok(r)
}

fn newton<F: Field + ?Sized>(field: &F, x0: &[f64], problem: &BudgetProblem) -> NewtonOutcome {
    let n = x0.len();
    let p = &problem.p;
    let mut x = x0.to_vec();
    let Ok(g0) = field.eval(&x) else {
        return NewtonOutcome::Failed { residual: f64::INFINITY };
    };
    let mut lambda = dot(&g0, p) / dot(p, p);
    let Ok(mut r) = system(field, &x, lambda, problem) else {
        return NewtonOutcome::Failed { residual: f64::INFINITY };
    };
    for _ in 0..MAX_NEWTON_ITERS {
        let g = axpy(&r[..n], lambda, p);
        let foc = norm(&r[..n]) / norm(&g).max(f64::MIN_POSITIVE);
        if foc <= FOC_TOL && r[n].abs() <= BUDGET_TOL * problem.m {
            return NewtonOutcome::Converged { x, lambda };
        }
        let Ok(jac) = fd_jacobian(field, &x) else {
            break;
        };
        let mut big = DMatrix::zeros(n + 1, n + 1);
        for i in 0..n {
            for j in 0..n {
                big[(i, j)] = jac.matrix[(i, j)];
            }
            big[(i, n)] = -p[i];
            big[(n, i)] = p[i];
        }
        let rhs = -DVector::from_column_slice(&r);
        let Some(step) = big.lu().solve(&rhs) else {
            break;
        };
        let r_norm = norm(&r);
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..=MAX_HALVINGS {
            let xt: Vec<f64> = (0..n).map(|i| x[i] + alpha * step[i]).collect();
            let lt = lambda + alpha * step[n];
            if xt.iter().all(|c| *c > 0.0) {
                if let Ok(rt) = system(field, &xt, lt, problem) {
                    if norm(&rt) < r_norm {
                        x = xt;
                        lambda = lt;
                        r = rt;
                        accepted = true;
                        break;
                    }
                }
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    NewtonOutcome::Failed { residual: norm(&r) }
}

/// Multistart damped Newton on `[g(x) - lambda p; p.x - m]`.
///
/// Every distinct root with `lambda > 0` is kept; more than one root means
/// the demand is multi-valued and no selection is made beyond ordering by
/// residual.
pub fn solve_demand<F: Field + ?Sized>(
    field: &F,
    problem: &BudgetProblem,
    starts: usize,
    seed: u64,
) -> Result<DemandResult> {
    problem.require_interior()?;
    if problem.dim() != field.dim() {
        return Err(Error::Dimension { expected: field.dim(), got: problem.dim() });
    }
    let outcomes: Vec<NewtonOutcome> = (0..starts.max(1))
        .into_par_iter()
        .map(|i| {
            let x0 = budget_point(&mut task_rng(seed, i as u64), &problem.p, problem.m);
            newton(field, &x0, problem)
        })
        .collect();
    let mut roots: Vec<Root> = Vec::new();
    let mut best = Vec::new();
    let mut converged = 0;
    for outcome in outcomes {
        match outcome {
            NewtonOutcome::Converged { x, lambda } => {
                best.push(0.0);
                converged += 1;
                if lambda <= 0.0 {
                    continue;
                }
                if roots.iter().any(|r| dist(&r.x, &x) <= 1e-6 * norm(&x)) {
                    continue;
                }
                let x = Bundle::new(x)?;
                let check = verify_foc(field, &x, problem)?;
                roots.push(Root {
                    x,
                    lambda,
                    foc_residual: check.foc_residual,
                    budget_residual: check.budget_residual,
                });
            }
            NewtonOutcome::Failed { residual } => best.push(residual),
        }
    }
    if roots.is_empty() {
        return Err(Error::NoDemand { best });
    }
    roots.sort_by(|a, b| {
        (a.foc_residual + a.budget_residual).total_cmp(&(b.foc_residual + b.budget_residual))
    });
    let top = roots[0].clone();
    Ok(DemandResult {
        problem: problem.clone(),
        x_star: top.x,
        lambda: top.lambda,
        foc_residual: top.foc_residual,
        budget_residual: top.budget_residual,
        multistart_roots: roots,
        starts: starts.max(1),
        converged_starts: converged,
    })
}

/// Closed-form Cobb-Douglas demand `x_i = alpha_i m / (p_i sum(alpha))`.
pub fn cobb_douglas_demand(alpha: &[f64], problem: &BudgetProblem) -> Vec<f64> {
    let total: f64 = alpha.iter().sum();
    alpha
        .iter()
        .zip(&problem.p)
        .map(|(a, p)| a * problem.m / (p * total))
        .collect()
}

const LATTICE_HALF_WIDTH: i64 = 5;
const REFINE_ROUNDS: usize = 3;
const SHARE_FLOOR: f64 = 1e-9;

/// Budget shares `w` on a lattice around `center` with spacing `h`.
fn share_lattice(center: &[f64], h: f64) -> Vec<Vec<f64>> {
    let k = center.len() - 1;
    let side = (2 * LATTICE_HALF_WIDTH + 1) as usize;
    let mut out = Vec::with_capacity(side.pow(k as u32));
    let mut idx = vec![-LATTICE_HALF_WIDTH; k];
    loop {
        let mut w: Vec<f64> = (0..k).map(|i| center[i] + idx[i] as f64 * h).collect();
        let last = 1.0 - w.iter().sum::<f64>();
        w.push(last);
        if w.iter().all(|c| *c >= SHARE_FLOOR) {
            out.push(w);
        }
        let mut d = 0;
        loop {
            if d == k {
                return out;
            }
            idx[d] += 1;
            if idx[d] <= LATTICE_HALF_WIDTH {
                break;
            }
            idx[d] = -LATTICE_HALF_WIDTH;
            d += 1;
        }
    }
}

/// Interior compositions of `grid` into `n` positive parts, as shares.
fn simplex_grid(n: usize, grid: usize) -> Vec<Vec<f64>> {
    fn rec(left: usize, parts: usize, cur: &mut Vec<usize>, grid: usize, out: &mut Vec<Vec<f64>>) {
        if parts == 1 {
            cur.push(left);
            out.push(cur.iter().map(|c| *c as f64 / grid as f64).collect());
            cur.pop();
            return;
        }
        for first in 1..=left.saturating_sub(parts - 1) {
            cur.push(first);
            rec(left - first, parts - 1, cur, grid, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(grid, n, &mut Vec::new(), grid, &mut out);
    out
}

/// Maximizes the recovered utility over the budget hyperplane: a simplex grid
/// in budget shares, then three lattice rounds each 10x finer than the last.
pub fn demand_by_maximization<F: Field + ?Sized>(
    field: &F,
    problem: &BudgetProblem,
    ref_v: &Bundle,
    grid: usize,
    settings: &OdeSettings,
) -> Result<Bundle> {
    problem.require_interior()?;
    let n = problem.dim();
    let grid = grid.max(n);
    let to_bundle = |w: &[f64]| {
        Bundle::new(w.iter().zip(&problem.p).map(|(wi, pi)| wi * problem.m / pi).collect())
    };
    let best_of = |cands: Vec<Vec<f64>>| -> Result<(Vec<f64>, f64)> {
        let values: Vec<f64> = cands
            .par_iter()
            .map(|w| utility(field, &to_bundle(w)?, ref_v, settings))
            .collect::<Result<_>>()?;
        let (i, u) = values
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, u)| if *u > acc.1 { (i, *u) } else { acc });
        Ok((cands[i].clone(), u))
    };
    let (mut w, mut u) = best_of(simplex_grid(n, grid))?;
    let mut h = 1.0 / grid as f64;
    for _ in 0..REFINE_ROUNDS {
        h /= 10.0;
        let (wn, un) = best_of(share_lattice(&w, h))?;
        if un >= u {
            w = wn;
            u = un;
        }
    }
    to_bundle(&w)
}

/// WARP over computed demands: distinct choices `x` at `(p, m)` and `y` at
/// `(q, w)` violate it when each is affordable at the other's budget.
pub fn check_warp(demands: &[(BudgetProblem, Bundle)]) -> Result<AxiomVerdict> {
    for (problem, x) in demands {
        if problem.budget_residual(x) > 1e-8 {
            return Err(Error::Invalid(format!(
                "demand {x:?} is off its budget (residual {:e})",
                problem.budget_residual(x)
            )));
        }
    }
    let mut witnesses = Vec::new();
    let mut pairs = 0;
    for (i, (a, x)) in demands.iter().enumerate() {
        for (b, y) in &demands[i + 1..] {
            pairs += 1;
            if dist(x, y) <= 1e-8 * norm(x).max(norm(y)) {
                continue;
            }
            let (py, qx) = (dot(&a.p, y), dot(&b.p, x));
            if py <= a.m + 1e-9 * (1.0 + a.m) && qx <= b.m + 1e-9 * (1.0 + b.m) {
                witnesses.push(Witness::new(
                    vec![x.to_vec(), y.to_vec()],
                    &[("p.y", py), ("m", a.m), ("q.x", qx), ("w", b.m)],
                ));
            }
        }
    }
    Ok(AxiomVerdict::from_witnesses(Axiom::Warp, witnesses, pairs, None, None))
}
