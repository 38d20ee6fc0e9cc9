//! Improvement processes `x' = h(x)` on a budget set, with a utility monitor
//! and local/compact stability experiments.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::axioms::{Axiom, AxiomVerdict, Witness};
use crate::demand::{solve_demand, BudgetProblem, DEFAULT_STARTS};
use crate::error::{Error, Result};
use crate::field::{parse_direction_expr, Bundle, Env, Expr, Field};
use crate::linalg::{axpy, dist, dot, norm, scale};
use crate::ode::{rows_to_csv, OdeSettings, StepOutcome, Stepper, Termination, Trajectory};
use crate::preference::utility;
use crate::sampling::{budget_point, budget_set_point, task_rng};

pub const CONVERGENCE_RADIUS: f64 = 1e-5;
pub const STALL_SPEED: f64 = 1e-10;
pub const SUSTAIN_MONITORS: usize = 3;
pub const LYAPUNOV_SLACK: f64 = 1e-7;
const DIRECTION_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DirectionKind {
    H2,
    PathologicalExample,
    Custom { components: Vec<String> },
}

/// An improvement direction function `h` tied to a budget problem.
#[derive(Debug, Clone, Serialize)]
pub struct ImprovementSpec {
    #[serde(flatten)]
    pub kind: DirectionKind,
    pub problem: BudgetProblem,
    #[serde(skip)]
    exprs: Vec<Expr>,
}

/// `h2(x) = g(x) - (p.x / m) (p.g(x) / |p|^2) p`.
pub fn make_h2<F: Field + ?Sized>(field: &F, problem: &BudgetProblem) -> Result<ImprovementSpec> {
    if problem.dim() != field.dim() {
        return Err(Error::Dimension { expected: field.dim(), got: problem.dim() });
    }
    if problem.p.iter().any(|c| *c <= 0.0) {
        return Err(Error::Invalid("h2 needs strictly positive prices".into()));
    }
    Ok(ImprovementSpec {
        kind: DirectionKind::H2,
        problem: problem.clone(),
        exprs: Vec::new(),
    })
}

/// `h(x) = x - ((x1 + x2)^2 / 4) (1, 1)`, defined only for `p = (1, 1)`, `m = 2`.
pub fn make_pathological(problem: &BudgetProblem) -> Result<ImprovementSpec> {
    if problem.p != [1.0, 1.0] || problem.m != 2.0 {
        return Err(Error::Invalid(format!(
            "the pathological direction is defined only for p = (1, 1), m = 2; got p = {:?}, m = {}",
            problem.p, problem.m
        )));
    }
    Ok(ImprovementSpec {
        kind: DirectionKind::PathologicalExample,
        problem: problem.clone(),
        exprs: Vec::new(),
    })
}

impl ImprovementSpec {
    /// Direction given component-wise over `x1.., g1.., p1.., m`.
    pub fn custom<S: AsRef<str>>(components: &[S], problem: &BudgetProblem) -> Result<Self> {
        let n = problem.dim();
        if components.len() != n {
            return Err(Error::Dimension { expected: n, got: components.len() });
        }
        let exprs = components
            .iter()
            .map(|c| parse_direction_expr(c.as_ref(), n))
            .collect::<Result<Vec<_>>>()?;
        Ok(ImprovementSpec {
            kind: DirectionKind::Custom {
                components: components.iter().map(|c| c.as_ref().to_string()).collect(),
            },
            problem: problem.clone(),
            exprs,
        })
    }

    pub fn eval<F: Field + ?Sized>(&self, field: &F, x: &[f64]) -> Result<Vec<f64>> {
        let p = &self.problem.p;
        let m = self.problem.m;
        match &self.kind {
            DirectionKind::H2 => {
                let g = field.eval(x)?;
                let coeff = (dot(p, x) / m) * (dot(p, &g) / dot(p, p));
                Ok(axpy(&g, -coeff, p))
            }
            DirectionKind::PathologicalExample => {
                let s = x[0] + x[1];
                let c = s * s / 4.0;
                Ok(vec![x[0] - c, x[1] - c])
            }
            DirectionKind::Custom { .. } => {
                let g = field.eval(x)?;
                let env = Env {
                    x,
                    g: Some(&g),
                    p: Some(p),
                    m: Some(m),
                };
                self.exprs.iter().map(|e| e.eval(&env)).collect()
            }
        }
    }
}

/// Checks `g.h > 0` on the budget set away from the demand point and
/// `p.h <= 0` on the budget face, at sampled points.
pub fn validate_direction<F: Field + ?Sized>(
    field: &F,
    h: &ImprovementSpec,
    problem: &BudgetProblem,
    n_samples: usize,
    seed: u64,
) -> Result<AxiomVerdict> {
    let x_star = solve_demand(field, problem, DEFAULT_STARTS, seed).ok().map(|d| d.x_star);
    let found: Vec<Vec<Witness>> = (0..n_samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = task_rng(seed, i as u64);
            let on_face = i % 2 == 1;
            let x = if on_face {
                budget_point(&mut rng, &problem.p, problem.m)
            } else {
                budget_set_point(&mut rng, &problem.p, problem.m)
            };
            if let Some(xs) = &x_star {
                if dist(&x, xs) <= 1e-4 * norm(xs) {
                    return Ok(Vec::new());
                }
            }
            let g = field.eval(&x)?;
            let hx = h.eval(field, &x)?;
            let mut out = Vec::new();
            let gh = dot(&g, &hx);
            if gh <= DIRECTION_TOL {
                out.push(Witness::new(vec![x.to_vec()], &[("g.h", gh), ("condition", 1.0)]));
            }
            if on_face {
                let ph = dot(&problem.p, &hx);
                if ph > DIRECTION_TOL * (1.0 + norm(&problem.p) * norm(&hx)) {
                    out.push(Witness::new(vec![x.to_vec()], &[("p.h", ph), ("condition", 2.0)]));
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(AxiomVerdict::from_witnesses(
        Axiom::ImprovementDirection,
        found.into_iter().flatten().collect(),
        n_samples,
        None,
        Some(seed),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    Converged,
    LeftDomain,
    /// Left the compact box of the experiment while still inside the orthant.
    Escaped,
    MaxTime,
    MaxSteps,
    Stalled,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct SimOptions {
    pub monitor_dt: f64,
    /// Compact box `[lo, hi]^n`; leaving it classifies the run as escaped.
    pub bounds: Option<(f64, f64)>,
    /// Skip the utility monitor (classification only).
    pub monitor_utility: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            monitor_dt: 0.25,
            bounds: None,
            monitor_utility: true,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Simulation {
    pub classification: Classification,
    pub x0: Bundle,
    pub x_star: Bundle,
    pub t_end: f64,
    pub final_point: Vec<f64>,
    /// `(t, u(x(t)))` at each monitor time, starting at `t = 0`.
    pub monitor: Vec<(f64, f64)>,
    pub lyapunov_monotone: bool,
    /// Largest `|p.x(t) - m| / m` over accepted steps.
    pub max_budget_drift: f64,
    #[serde(skip)]
    pub trajectory: Trajectory,
}

impl Simulation {
    /// CSV `t,x1..xn,u` over the monitor samples.
    pub fn monitor_csv(&self) -> String {
        let rows: Vec<(f64, Vec<f64>)> = self
            .monitor
            .iter()
            .map(|(t, u)| {
                let mut r = self.trajectory.interpolate(*t);
                r.push(*u);
                (*t, r)
            })
            .collect();
        rows_to_csv(rows.iter().map(|(t, r)| (*t, r.as_slice())), &["u"])
    }
}

/// Integrates `x' = h(x)` from `x0` with the default options.
pub fn simulate<F: Field + ?Sized>(
    field: &F,
    h: &ImprovementSpec,
    x0: &Bundle,
    problem: &BudgetProblem,
    settings: &OdeSettings,
    ref_v: &Bundle,
    x_star: &Bundle,
) -> Result<Simulation> {
    simulate_with(field, h, x0, problem, settings, ref_v, x_star, &SimOptions::default())
}

#[allow(clippy::too_many_arguments)]
pub fn simulate_with<F: Field + ?Sized>(
    field: &F,
    h: &ImprovementSpec,
    x0: &Bundle,
    problem: &BudgetProblem,
    settings: &OdeSettings,
    ref_v: &Bundle,
    x_star: &Bundle,
    options: &SimOptions,
) -> Result<Simulation> {
    if dot(&problem.p, x0) > problem.m * (1.0 + 1e-12) {
        return Err(Error::Invalid(format!("start {:?} is outside the budget set", x0.as_slice())));
    }
    let rhs = |x: &[f64]| h.eval(field, x);
    let guard = |x: &[f64]| settings.inside(x);
    let mut stepper = Stepper::new(&rhs, x0, *settings, Some(&guard))?;
    let mut traj = Trajectory::stationary(x0, Termination::MaxTime);
    let in_box = |x: &[f64]| options.bounds.is_none_or(|(lo, hi)| x.iter().all(|c| *c >= lo && *c <= hi));
    let monitor_u = |x: &[f64]| -> Result<f64> {
        if options.monitor_utility {
            utility(field, &Bundle::from_slice(x)?, ref_v, settings)
        } else {
            Ok(f64::NAN)
        }
    };
    let mut monitor = vec![(0.0, monitor_u(x0)?)];
    let mut near = usize::from(dist(x0, x_star) <= CONVERGENCE_RADIUS);
    let mut slow = 0;
    let mut drift = problem.budget_residual(x0);
    let mut next = options.monitor_dt;
    let classification = loop {
        if stepper.steps >= settings.max_steps {
            break Classification::MaxSteps;
        }
        if stepper.t >= settings.max_time {
            break Classification::MaxTime;
        }
        match stepper.step(next.min(settings.max_time))? {
            StepOutcome::LeftDomain => break Classification::LeftDomain,
            StepOutcome::Accepted(seg) => {
                traj.times.push(stepper.t);
                traj.points.push(stepper.y.clone());
                traj.segments.push(seg);
                drift = drift.max(problem.budget_residual(&stepper.y));
                if !in_box(&stepper.y) {
                    break Classification::Escaped;
                }
            }
        }
        if stepper.t + 1e-12 >= next {
            let y = stepper.y.clone();
            monitor.push((stepper.t, monitor_u(&y)?));
            let d = dist(&y, x_star);
            near = if d <= CONVERGENCE_RADIUS { near + 1 } else { 0 };
            slow = if d > CONVERGENCE_RADIUS && norm(&h.eval(field, &y)?) <= STALL_SPEED {
                slow + 1
            } else {
                0
            };
            if near >= SUSTAIN_MONITORS {
                break Classification::Converged;
            }
            if slow >= SUSTAIN_MONITORS {
                break Classification::Stalled;
            }
            next += options.monitor_dt;
        }
    };
    traj.termination = match classification {
        Classification::LeftDomain => Termination::LeftDomain,
        Classification::MaxSteps => Termination::MaxSteps,
        Classification::MaxTime => Termination::MaxTime,
        _ => Termination::Event,
    };
    if traj.termination == Termination::Event {
        traj.event_time = Some(traj.t_end());
    }
    let lyapunov_monotone = monitor
        .windows(2)
        .all(|w| w[1].1.is_nan() || w[0].1.is_nan() || w[1].1 >= w[0].1 - LYAPUNOV_SLACK);
    Ok(Simulation {
        classification,
        x0: x0.clone(),
        x_star: x_star.clone(),
        t_end: traj.t_end(),
        final_point: traj.last_point().to_vec(),
        monitor,
        lyapunov_monotone,
        max_budget_drift: drift,
        trajectory: traj,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct LocalSection {
    pub basin_radius_tested: f64,
    pub n_converged: usize,
    pub n_failed: usize,
    pub failures: Vec<(Bundle, Classification)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CompactSection {
    pub bounds: (f64, f64),
    pub n_converged: usize,
    /// Left the box or the orthant.
    pub n_escaped: usize,
    pub n_stalled: usize,
    /// Still running at `max_time` or `max_steps`.
    pub n_unresolved: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct StabilityReport {
    pub problem: BudgetProblem,
    pub direction: DirectionKind,
    pub x_star: Bundle,
    pub local: LocalSection,
    pub compact: CompactSection,
    pub lyapunov_monotone_fraction: f64,
    /// Convergence is certified only up to this horizon.
    pub max_time: f64,
    pub seed: u64,
}

/// Start in the budget set at distance at most `radius` from `center`.
/// Odd indices stay on the budget face.
pub fn local_start(rng: &mut impl Rng, problem: &BudgetProblem, center: &[f64], radius: f64, on_face: bool) -> Bundle {
    let n = center.len();
    let p = &problem.p;
    loop {
        let mut d: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        if on_face {
            d = axpy(&d, -dot(&d, p) / dot(p, p), p);
        } else if dot(&d, p) > 0.0 {
            d = scale(&d, -1.0);
        }
        let len = norm(&d);
        if !(len > 1e-12) || len > 1.0 {
            continue;
        }
        let rho = radius * rng.gen::<f64>().powf(1.0 / n as f64);
        let x = axpy(center, rho / len, &d);
        if x.iter().all(|c| *c > 0.0) {
            return Bundle::new(x).expect("positive point");
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn stability_experiment<F: Field + ?Sized>(
    field: &F,
    h: &ImprovementSpec,
    problem: &BudgetProblem,
    local_radius: f64,
    n_local: usize,
    n_compact: usize,
    seed: u64,
    settings: &OdeSettings,
    ref_v: &Bundle,
) -> Result<StabilityReport> {
    let demand = solve_demand(field, problem, DEFAULT_STARTS, seed)?;
    let x_star = demand.x_star;
    let reach = problem.p.iter().map(|p| problem.m / p).fold(0.0, f64::max);
    let bounds = (1e-6, 10.0 * reach);
    let local_runs: Vec<Simulation> = (0..n_local)
        .into_par_iter()
        .map(|i| {
            let mut rng = task_rng(seed, i as u64);
            let x0 = local_start(&mut rng, problem, &x_star, local_radius, i % 2 == 1);
            simulate(field, h, &x0, problem, settings, ref_v, &x_star)
        })
        .collect::<Result<_>>()?;
    let options = SimOptions {
        bounds: Some(bounds),
        ..SimOptions::default()
    };
    let compact_runs: Vec<Simulation> = (0..n_compact)
        .into_par_iter()
        .map(|i| {
            let mut rng = task_rng(seed ^ 0x5151_5151, i as u64);
            let x0 = if i % 2 == 1 {
                budget_point(&mut rng, &problem.p, problem.m)
            } else {
                budget_set_point(&mut rng, &problem.p, problem.m)
            };
            simulate_with(field, h, &x0, problem, settings, ref_v, &x_star, &options)
        })
        .collect::<Result<_>>()?;
    let failures: Vec<(Bundle, Classification)> = local_runs
        .iter()
        .filter(|s| s.classification != Classification::Converged)
        .map(|s| (s.x0.clone(), s.classification))
        .collect();
    let count = |c: &[Classification]| {
        compact_runs.iter().filter(|s| c.contains(&s.classification)).count()
    };
    let total = local_runs.len() + compact_runs.len();
    let monotone = local_runs.iter().chain(&compact_runs).filter(|s| s.lyapunov_monotone).count();
    Ok(StabilityReport {
        problem: problem.clone(),
        direction: h.kind.clone(),
        local: LocalSection {
            basin_radius_tested: local_radius,
            n_converged: n_local - failures.len(),
            n_failed: failures.len(),
            failures,
        },
        compact: CompactSection {
            bounds,
            n_converged: count(&[Classification::Converged]),
            n_escaped: count(&[Classification::Escaped, Classification::LeftDomain]),
            n_stalled: count(&[Classification::Stalled]),
            n_unresolved: count(&[Classification::MaxTime, Classification::MaxSteps]),
        },
        lyapunov_monotone_fraction: if total == 0 { 1.0 } else { monotone as f64 / total as f64 },
        x_star,
        max_time: settings.max_time,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::FieldSpec;

    fn b(x: &[f64]) -> Bundle {
        Bundle::from_slice(x).unwrap()
    }

    fn unit_budget() -> BudgetProblem {
        BudgetProblem::new(vec![1.0, 1.0], 2.0).unwrap()
    }

    #[test]
    fn h2_formula() {
        let cd = FieldSpec::cobb_douglas(&[0.5, 0.5]).unwrap();
        let h = make_h2(&cd, &unit_budget()).unwrap();
        let x = [0.5, 1.5];
        let v = h.eval(&cd, &x).unwrap();
        assert!((v[0] - 1.0 / 3.0).abs() < 1e-15 && (v[1] + 1.0 / 3.0).abs() < 1e-15);
        let g = cd.eval(&x).unwrap();
        assert!((dot(&g, &v) - 2.0 / 9.0).abs() < 1e-15);
        assert!(norm(&h.eval(&cd, &[1.0, 1.0]).unwrap()) < 1e-15);
        // inside the budget set the slack is consumed
        let y = [0.5, 0.7];
        let ph = dot(&[1.0, 1.0], &h.eval(&cd, &y).unwrap());
        let pg = dot(&[1.0, 1.0], &cd.eval(&y).unwrap());
        assert!((ph - pg * (1.0 - 1.2 / 2.0)).abs() < 1e-14);
    }

    #[test]
    fn pathological_formula() {
        let h = make_pathological(&unit_budget()).unwrap();
        let id = FieldSpec::identity(2).unwrap();
        assert_eq!(h.eval(&id, &[1.0, 1.0]).unwrap(), vec![0.0, 0.0]);
        let v = h.eval(&id, &[0.5, 1.5]).unwrap();
        assert_eq!(v, vec![-0.5, 0.5]);
        assert_eq!(dot(&[0.5, 1.5], &v), 0.5);
        assert!(make_pathological(&BudgetProblem::new(vec![1.0, 2.0], 2.0).unwrap()).is_err());
    }

    #[test]
    fn custom_directions() {
        let problem = unit_budget();
        let id = FieldSpec::identity(2).unwrap();
        let h = ImprovementSpec::custom(&["g1 - p1*(x1+x2)/m", "g2 - p2*(x1+x2)/m"], &problem).unwrap();
        assert_eq!(h.eval(&id, &[0.5, 1.5]).unwrap(), vec![-0.5, 0.5]);
        assert!(ImprovementSpec::custom(&["x1"], &problem).is_err());
        assert!(ImprovementSpec::custom(&["x3", "x1"], &problem).is_err());
    }

    #[test]
    fn direction_validation() {
        let problem = unit_budget();
        let cd = FieldSpec::cobb_douglas(&[0.5, 0.5]).unwrap();
        let h2 = make_h2(&cd, &problem).unwrap();
        assert!(!validate_direction(&cd, &h2, &problem, 400, 3).unwrap().violated());
        let zero = ImprovementSpec::custom(&["0", "0"], &problem).unwrap();
        assert!(validate_direction(&cd, &zero, &problem, 50, 3).unwrap().violated());
        let minus_g = ImprovementSpec::custom(&["-g1", "-g2"], &problem).unwrap();
        assert!(validate_direction(&cd, &minus_g, &problem, 50, 3).unwrap().violated());
    }

    #[test]
    fn canonical_simulations() {
        let problem = unit_budget();
        let s = OdeSettings::default();
        let v = Bundle::ones(2);
        let xs = b(&[1.0, 1.0]);
        let cd = FieldSpec::cobb_douglas(&[0.5, 0.5]).unwrap();
        let h2 = make_h2(&cd, &problem).unwrap();
        let run = simulate(&cd, &h2, &b(&[0.5, 1.5]), &problem, &s, &v, &xs).unwrap();
        assert_eq!(run.classification, Classification::Converged);
        assert!(run.lyapunov_monotone);
        assert!(run.max_budget_drift <= 1e-6);
        let still = simulate(&cd, &h2, &xs, &problem, &s, &v, &xs).unwrap();
        assert_eq!(still.classification, Classification::Converged);
        assert!(still.t_end <= 3.0 * SimOptions::default().monitor_dt + 1e-9);

        let id = FieldSpec::identity(2).unwrap();
        let path = make_pathological(&problem).unwrap();
        let run = simulate(&id, &path, &b(&[0.5, 1.5]), &problem, &s, &v, &xs).unwrap();
        assert_eq!(run.classification, Classification::LeftDomain);
        // on the budget line x = (1 - s, 1 + s) with s' = s, so the exit is at ln 2
        assert!((run.t_end - 2f64.ln()).abs() < 1e-6, "{}", run.t_end);
    }

    #[test]
    fn rtol_halving_keeps_classifications() {
        let problem = unit_budget();
        let v = Bundle::ones(2);
        let xs = b(&[1.0, 1.0]);
        let cd = FieldSpec::cobb_douglas(&[0.5, 0.5]).unwrap();
        let id = FieldSpec::identity(2).unwrap();
        let h2 = make_h2(&cd, &problem).unwrap();
        let path = make_pathological(&problem).unwrap();
        for s in [OdeSettings::default(), OdeSettings::default().with_tolerances(5e-10, 5e-12)] {
            let a = simulate(&cd, &h2, &b(&[0.5, 1.5]), &problem, &s, &v, &xs).unwrap();
            let c = simulate(&id, &path, &b(&[0.5, 1.5]), &problem, &s, &v, &xs).unwrap();
            assert_eq!((a.classification, c.classification), (Classification::Converged, Classification::LeftDomain));
        }
    }

    #[test]
    fn experiments() {
        let problem = unit_budget();
        let s = OdeSettings::default();
        let v = Bundle::ones(2);
        let cd = FieldSpec::cobb_douglas(&[0.5, 0.5]).unwrap();
        let h2 = make_h2(&cd, &problem).unwrap();
        let r = stability_experiment(&cd, &h2, &problem, 0.2, 10, 6, 42, &s, &v).unwrap();
        assert_eq!(r.local.n_converged, 10);
        assert_eq!(r.compact.n_converged, 6);
        assert_eq!(r.lyapunov_monotone_fraction, 1.0);

        let id = FieldSpec::identity(2).unwrap();
        let h2 = make_h2(&id, &problem).unwrap();
        let r = stability_experiment(&id, &h2, &problem, 0.05, 10, 0, 42, &s, &v).unwrap();
        assert!(r.local.n_failed > 0);
        let c = &r.compact;
        assert_eq!(c.n_converged + c.n_escaped + c.n_stalled + c.n_unresolved, 0);

        let empty = stability_experiment(&cd, &make_h2(&cd, &problem).unwrap(), &problem, 0.1, 0, 0, 1, &s, &v).unwrap();
        assert!(empty.local.failures.is_empty() && empty.local.n_converged == 0);
    }
}
