//! Dormand-Prince 5(4) integration with dense output, crossing events and
//! domain guards, plus the fixed-step Euler polyline of the indifference flow.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Bundle, Field};
use crate::geometry::{project, rotate, PlaneFrame};
use crate::linalg::{axpy, dot, norm};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OdeSettings {
    pub rtol: f64,
    pub atol: f64,
    pub initial_step: f64,
    pub max_step: f64,
    pub max_time: f64,
    pub max_steps: usize,
    /// Guards built from these settings reject any coordinate `<= domain_margin`.
    pub domain_margin: f64,
    /// Crossing refinement stops once `|event| <= event_tol`.
    pub event_tol: f64,
}

impl Default for OdeSettings {
    fn default() -> Self {
        OdeSettings {
            rtol: 1e-9,
            atol: 1e-11,
            initial_step: 1e-4,
            max_step: 1.0,
            max_time: 1e3,
            max_steps: 1_000_000,
            domain_margin: 1e-9,
            event_tol: 1e-13,
        }
    }
}

impl OdeSettings {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.rtol,
            self.atol,
            self.initial_step,
            self.max_step,
            self.max_time,
            self.domain_margin,
            self.event_tol,
        ];
        if positive.iter().any(|v| !(*v > 0.0)) || self.max_steps == 0 {
            return Err(Error::Invalid(format!("ODE settings must be positive: {self:?}")));
        }
        if self.rtol < 1e-13 {
            return Err(Error::Invalid(format!("rtol {} below 1e-13", self.rtol)));
        }
        Ok(())
    }

    pub fn with_tolerances(mut self, rtol: f64, atol: f64) -> Self {
        self.rtol = rtol;
        self.atol = atol;
        self
    }

    pub fn with_max_time(mut self, max_time: f64) -> Self {
        self.max_time = max_time;
        self
    }

    /// `true` when every coordinate exceeds the domain margin.
    pub fn inside(&self, y: &[f64]) -> bool {
        y.iter().all(|c| *c > self.domain_margin)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Event,
    MaxTime,
    MaxSteps,
    LeftDomain,
}

impl std::fmt::Display for Termination {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Termination::Event => "event",
            Termination::MaxTime => "max_time",
            Termination::MaxSteps => "max_steps",
            Termination::LeftDomain => "left_domain",
        };
        f.write_str(s)
    }
}

/// Continuous extension of one accepted step.
#[derive(Debug, Clone)]
pub struct Segment {
    pub t0: f64,
    pub h: f64,
    coeffs: [Vec<f64>; 5],
}

impl Segment {
    pub fn t1(&self) -> f64 {
        self.t0 + self.h
    }

    pub fn eval(&self, t: f64) -> Vec<f64> {
        let theta = ((t - self.t0) / self.h).clamp(0.0, 1.0);
        let theta1 = 1.0 - theta;
        let [r1, r2, r3, r4, r5] = &self.coeffs;
        (0..r1.len())
            .map(|i| r1[i] + theta * (r2[i] + theta1 * (r3[i] + theta * (r4[i] + theta1 * r5[i]))))
            .collect()
    }

    /// Time derivative of the interpolant.
    pub fn derivative(&self, t: f64) -> Vec<f64> {
        let theta = ((t - self.t0) / self.h).clamp(0.0, 1.0);
        let theta1 = 1.0 - theta;
        let [_, r2, r3, r4, r5] = &self.coeffs;
        (0..r2.len())
            .map(|i| {
                let q = r3[i] + theta * (r4[i] + theta1 * r5[i]);
                let dq = r4[i] + (1.0 - 2.0 * theta) * r5[i];
                let inner = r2[i] + theta1 * q;
                let d_inner = -q + theta1 * dq;
                (inner + theta * d_inner) / self.h
            })
            .collect()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub points: Vec<Vec<f64>>,
    pub termination: Termination,
    pub event_time: Option<f64>,
    #[serde(skip)]
    pub segments: Vec<Segment>,
}

impl Trajectory {
    /// A trajectory that never moves from `x`.
    pub fn stationary(x: &[f64], termination: Termination) -> Self {
        Trajectory {
            times: vec![0.0],
            points: vec![x.to_vec()],
            termination,
            event_time: (termination == Termination::Event).then_some(0.0),
            segments: Vec::new(),
        }
    }

    pub fn t_start(&self) -> f64 {
        self.times[0]
    }

    pub fn t_end(&self) -> f64 {
        *self.times.last().expect("trajectory has at least one point")
    }

    pub fn last_point(&self) -> &[f64] {
        self.points.last().expect("trajectory has at least one point")
    }

    fn segment_at(&self, t: f64) -> Option<&Segment> {
        if self.segments.is_empty() {
            return None;
        }
        let idx = self.segments.partition_point(|s| s.t1() < t);
        Some(&self.segments[idx.min(self.segments.len() - 1)])
    }

    /// Dense-output state at `t`, clamped to the trajectory's time span.
    pub fn interpolate(&self, t: f64) -> Vec<f64> {
        match self.segment_at(t) {
            Some(seg) => seg.eval(t),
            None => self.points[0].clone(),
        }
    }

    /// Derivative of the dense output at `t`.
    pub fn velocity(&self, t: f64) -> Vec<f64> {
        match self.segment_at(t) {
            Some(seg) => seg.derivative(t),
            None => vec![0.0; self.points[0].len()],
        }
    }

    /// `count` states uniformly spaced in time, endpoints included.
    pub fn resample(&self, count: usize) -> Vec<(f64, Vec<f64>)> {
        let (t0, t1) = (self.t_start(), self.t_end());
        if count < 2 || t1 == t0 {
            return vec![(t0, self.points[0].clone())];
        }
        (0..count)
            .map(|i| {
                let t = t0 + (t1 - t0) * i as f64 / (count - 1) as f64;
                let point = if i == count - 1 {
                    self.last_point().to_vec()
                } else {
                    self.interpolate(t)
                };
                (t, point)
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        rows_to_csv(self.times.iter().copied().zip(self.points.iter().map(Vec::as_slice)), &[])
    }
}

/// CSV with header `t,x1,...,xn[,extra...]`.
pub fn rows_to_csv<'a>(rows: impl IntoIterator<Item = (f64, &'a [f64])>, extra: &[&str]) -> String {
    let mut out = String::new();
    let mut header_done = false;
    for (t, values) in rows {
        if !header_done {
            let coords = values.len() - extra.len();
            out.push('t');
            for i in 1..=coords {
                let _ = write!(out, ",x{i}");
            }
            for e in extra {
                let _ = write!(out, ",{e}");
            }
            out.push('\n');
            header_done = true;
        }
        let _ = write!(out, "{t}");
        for v in values {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];
const D: [f64; 7] = [
    -12715105075.0 / 11282082432.0,
    0.0,
    87487479700.0 / 32700410799.0,
    -10690763975.0 / 1880347072.0,
    701980252875.0 / 199316789632.0,
    -1453857185.0 / 822651844.0,
    69997945.0 / 29380423.0,
];

const SAFETY: f64 = 0.9;
const BETA: f64 = 0.04;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;
const BISECTIONS: usize = 40;

pub enum StepOutcome {
    Accepted(Segment),
    LeftDomain,
}

struct TrialStep {
    y_new: Vec<f64>,
    k: [Vec<f64>; 7],
    err: f64,
}

/// Step-by-step driver for an autonomous system `y' = rhs(y)`.
pub struct Stepper<'a, R> {
    rhs: &'a R,
    guard: Option<&'a dyn Fn(&[f64]) -> bool>,
    settings: OdeSettings,
    pub t: f64,
    pub y: Vec<f64>,
    k1: Vec<f64>,
    h: f64,
    facold: f64,
    pub steps: usize,
}

impl<'a, R> Stepper<'a, R>
where
    R: Fn(&[f64]) -> Result<Vec<f64>>,
{
    pub fn new(
        rhs: &'a R,
        y0: &[f64],
        settings: OdeSettings,
        guard: Option<&'a dyn Fn(&[f64]) -> bool>,
    ) -> Result<Self> {
        settings.validate()?;
        if let Some(guard) = guard {
            if !guard(y0) {
                return Err(Error::Invalid(format!("initial state {y0:?} fails the guard")));
            }
        }
        let k1 = rhs(y0)?;
        Ok(Stepper {
            rhs,
            guard,
            settings,
            t: 0.0,
            y: y0.to_vec(),
            k1,
            h: settings.initial_step.min(settings.max_step),
            facold: 1e-4,
            steps: 0,
        })
    }

    fn min_step(&self) -> f64 {
        1e-14 * self.t.abs().max(1.0)
    }

    fn trial(&self, y: &[f64], k1: &[f64], h: f64) -> Result<Option<TrialStep>> {
        let n = y.len();
        let mut k: [Vec<f64>; 7] = Default::default();
        k[0] = k1.to_vec();
        let mut y_new = Vec::new();
        for s in 1..7 {
            let mut ys = y.to_vec();
            for (j, kj) in k.iter().enumerate().take(s) {
                let a = A[s][j];
                if a != 0.0 {
                    for i in 0..n {
                        ys[i] += h * a * kj[i];
                    }
                }
            }
            if let Some(guard) = self.guard {
                if !guard(&ys) {
                    return Ok(None);
                }
            }
            k[s] = (self.rhs)(&ys)?;
            if s == 6 {
                y_new = ys;
            }
        }
        let mut sum = 0.0;
        for i in 0..n {
            let e: f64 = h * (0..7).map(|s| E[s] * k[s][i]).sum::<f64>();
            let sk = self.settings.atol + self.settings.rtol * y[i].abs().max(y_new[i].abs());
            sum += (e / sk).powi(2);
        }
        let err = (sum / n as f64).sqrt();
        Ok(Some(TrialStep { y_new, k, err }))
    }

    fn segment(y: &[f64], t0: f64, h: f64, trial: &TrialStep) -> Segment {
        let n = y.len();
        let k = &trial.k;
        let ydiff: Vec<f64> = (0..n).map(|i| trial.y_new[i] - y[i]).collect();
        let bspl: Vec<f64> = (0..n).map(|i| h * k[0][i] - ydiff[i]).collect();
        let r4: Vec<f64> = (0..n).map(|i| ydiff[i] - h * k[6][i] - bspl[i]).collect();
        let r5: Vec<f64> = (0..n)
            .map(|i| h * (0..7).map(|s| D[s] * k[s][i]).sum::<f64>())
            .collect();
        Segment {
            t0,
            h,
            coeffs: [y.to_vec(), ydiff, bspl, r4, r5],
        }
    }

    /// Advances by one accepted step, never past `t_limit`.
    pub fn step(&mut self, t_limit: f64) -> Result<StepOutcome> {
        let mut guard_hit = false;
        loop {
            let remaining = t_limit - self.t;
            let h = self.h.min(self.settings.max_step).min(remaining);
            if h < self.min_step() {
                if guard_hit {
                    return Ok(StepOutcome::LeftDomain);
                }
                if remaining <= self.min_step() {
                    return Err(Error::Invalid(format!("no time left before {t_limit}")));
                }
                return Err(Error::StepUnderflow { t: self.t, step: h });
            }
            let Some(trial) = self.trial(&self.y, &self.k1, h)? else {
                guard_hit = true;
                self.h = h * 0.5;
                continue;
            };
            if !trial.err.is_finite() {
                self.h = h * 0.1;
                continue;
            }
            let expo = 0.2 - BETA * 0.75;
            let fac11 = trial.err.powf(expo);
            if trial.err <= 1.0 {
                let fac = (fac11 / self.facold.powf(BETA) / SAFETY).clamp(1.0 / FAC_MAX, 1.0 / FAC_MIN);
                self.facold = trial.err.max(1e-4);
                let seg = Self::segment(&self.y, self.t, h, &trial);
                self.t = if h == remaining { t_limit } else { self.t + h };
                self.y = trial.y_new;
                self.k1 = trial.k[6].clone();
                self.h = h / fac;
                self.steps += 1;
                return Ok(StepOutcome::Accepted(seg));
            }
            self.h = h / (fac11 / SAFETY).min(1.0 / FAC_MIN);
        }
    }

    /// One step of exactly `h` from `(t0, y0)` with derivative `k1`, for event polishing.
    fn exact_step(&self, y0: &[f64], k1: &[f64], t0: f64, h: f64) -> Result<Option<(Segment, Vec<f64>)>> {
        Ok(self
            .trial(y0, k1, h)?
            .map(|trial| (Self::segment(y0, t0, h, &trial), trial.y_new)))
    }
}

/// Integrates `y' = rhs(y)` from `x0` at `t = 0`.
///
/// With an event, integration stops at the first upward zero crossing of
/// `event`; the crossing is bracketed on the dense output by bisection and
/// the final point is recomputed with a genuine step to the crossing time.
pub fn integrate<R>(
    rhs: &R,
    x0: &[f64],
    settings: &OdeSettings,
    event: Option<&dyn Fn(&[f64]) -> f64>,
    guard: Option<&dyn Fn(&[f64]) -> bool>,
) -> Result<Trajectory>
where
    R: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let mut stepper = Stepper::new(rhs, x0, *settings, guard)?;
    let mut traj = Trajectory {
        times: vec![0.0],
        points: vec![x0.to_vec()],
        termination: Termination::MaxTime,
        event_time: None,
        segments: Vec::new(),
    };
    let mut prev_event = match event {
        Some(ev) => {
            let e0 = ev(x0);
            if e0.abs() <= settings.event_tol {
                traj.termination = Termination::Event;
                traj.event_time = Some(0.0);
                return Ok(traj);
            }
            e0
        }
        None => 0.0,
    };
    loop {
        if stepper.steps >= settings.max_steps {
            traj.termination = Termination::MaxSteps;
            return Ok(traj);
        }
        let (y_old, k_old, t_old) = (stepper.y.clone(), stepper.k1.clone(), stepper.t);
        let seg = match stepper.step(settings.max_time)? {
            StepOutcome::Accepted(seg) => seg,
            StepOutcome::LeftDomain => {
                traj.termination = Termination::LeftDomain;
                return Ok(traj);
            }
        };
        if let Some(ev) = event {
            let e_new = ev(&stepper.y);
            if prev_event < 0.0 && e_new >= 0.0 {
                let (t_hit, seg_hit, y_hit) =
                    locate_crossing(&stepper, ev, &seg, &y_old, &k_old, t_old, prev_event, e_new, settings)?;
                traj.segments.push(seg_hit);
                if t_hit > t_old {
                    traj.times.push(t_hit);
                    traj.points.push(y_hit);
                } else if let Some(last) = traj.points.last_mut() {
                    *last = y_hit;
                }
                traj.termination = Termination::Event;
                traj.event_time = Some(t_hit.max(t_old));
                return Ok(traj);
            }
            prev_event = e_new;
        }
        traj.times.push(stepper.t);
        traj.points.push(stepper.y.clone());
        traj.segments.push(seg);
        if stepper.t >= settings.max_time {
            traj.termination = Termination::MaxTime;
            return Ok(traj);
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn locate_crossing<R>(
    stepper: &Stepper<'_, R>,
    event: &dyn Fn(&[f64]) -> f64,
    seg: &Segment,
    y_old: &[f64],
    k_old: &[f64],
    t_old: f64,
    e_old: f64,
    e_new: f64,
    settings: &OdeSettings,
) -> Result<(f64, Segment, Vec<f64>)>
where
    R: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let (mut lo, mut hi) = (seg.t0, seg.t1());
    for _ in 0..BISECTIONS {
        let mid = 0.5 * (lo + hi);
        let e_mid = event(&seg.eval(mid));
        if e_mid.abs() <= settings.event_tol {
            lo = mid;
            hi = mid;
            break;
        }
        if e_mid < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // secant polish on genuine steps from the start of the segment
    let step_to = |t: f64| -> Result<Option<(Segment, Vec<f64>, f64)>> {
        let h = t - t_old;
        if h <= 0.0 {
            let y = y_old.to_vec();
            let e = event(&y);
            return Ok(Some((seg.clone(), y, e)));
        }
        Ok(stepper
            .exact_step(y_old, k_old, t_old, h)?
            .map(|(s, y)| {
                let e = event(&y);
                (s, y, e)
            }))
    };
    let mut t_a = 0.5 * (lo + hi);
    let Some(mut best) = step_to(t_a)? else {
        let y = seg.eval(t_a);
        return Ok((t_a, seg.clone(), y));
    };
    let mut best_t = t_a;
    let mut t_b = if best.2 < 0.0 { seg.t1() } else { seg.t0.max(t_old) };
    let mut e_a = best.2;
    let mut e_b = if t_b == seg.t1() { e_new } else { e_old };
    for _ in 0..8 {
        if best.2.abs() <= settings.event_tol || e_a == e_b {
            break;
        }
        let t_c = (t_a - e_a * (t_b - t_a) / (e_b - e_a)).clamp(seg.t0, seg.t1());
        let Some(cand) = step_to(t_c)? else { break };
        t_b = t_a;
        e_b = e_a;
        t_a = t_c;
        e_a = cand.2;
        if cand.2.abs() < best.2.abs() {
            best_t = t_c;
            best = cand;
        }
    }
    let (segment, y, _) = best;
    let segment = if best_t > t_old { segment } else { seg.clone() };
    Ok((best_t, segment, y))
}

/// Euler nodes `x_{i+1} = x_i + (T/k) C R(P g(x_i))` of the indifference flow.
pub fn euler_polyline<F: Field + ?Sized>(
    field: &F,
    frame: &PlaneFrame,
    total_time: f64,
    k: usize,
) -> Result<Vec<Bundle>> {
    if k == 0 {
        return Err(Error::Invalid("euler_polyline needs k >= 1".into()));
    }
    let h = total_time / k as f64;
    let mut nodes = vec![frame.x.clone()];
    let mut current = frame.x.to_vec();
    for _ in 0..k {
        let next = if frame.proportional {
            current.clone()
        } else {
            let g = field.eval(&current)?;
            let turned = rotate(frame, &project(frame, &g))?;
            axpy(&current, h * frame.c, &turned)
        };
        let node = Bundle::new(next.clone())
            .map_err(|_| Error::Domain(format!("Euler iterate left the orthant: {next:?}")))?;
        nodes.push(node);
        current = next;
    }
    Ok(nodes)
}

/// `|g(x) . d|` relative to `|g| |d|`, for checking the flow is tangent to level sets.
pub fn orthogonality_residual(g: &[f64], d: &[f64]) -> f64 {
    let scale = norm(g) * norm(d);
    if scale == 0.0 {
        0.0
    } else {
        dot(g, d).abs() / scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::FieldSpec;
    use crate::geometry::{build_frame, DEFAULT_PROP_TOL};
    use crate::linalg::dist;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn decay(y: &[f64]) -> Result<Vec<f64>> {
        Ok(y.iter().map(|v| -v).collect())
    }

    fn rotation(y: &[f64]) -> Result<Vec<f64>> {
        Ok(vec![-y[1], y[0]])
    }

    #[test]
    fn exponential_decay() {
        let s = OdeSettings::default().with_max_time(1.0);
        let traj = integrate(&decay, &[1.0], &s, None, None).unwrap();
        assert_eq!(traj.termination, Termination::MaxTime);
        assert_eq!(traj.t_end(), 1.0);
        let exact = (-1.0f64).exp();
        assert!((traj.last_point()[0] - exact).abs() <= 1e-9 * exact * 10.0);
        assert!(traj.times.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(traj.times.len(), traj.points.len());
        // dense output between nodes
        assert!((traj.interpolate(0.37)[0] - (-0.37f64).exp()).abs() < 1e-8);
    }

    #[test]
    fn zero_rhs_runs_to_max_time() {
        let zero = |y: &[f64]| -> Result<Vec<f64>> { Ok(vec![0.0; y.len()]) };
        let s = OdeSettings::default().with_max_time(5.0);
        let traj = integrate(&zero, &[2.0, 3.0], &s, None, None).unwrap();
        assert_eq!(traj.termination, Termination::MaxTime);
        assert!(traj.points.iter().all(|p| p == &vec![2.0, 3.0]));
    }

    #[test]
    fn rotation_event_at_pi_over_six() {
        let s = OdeSettings::default().with_max_time(10.0);
        let event = |y: &[f64]| y[1] - 0.5;
        let traj = integrate(&rotation, &[1.0, 0.0], &s, Some(&event), None).unwrap();
        assert_eq!(traj.termination, Termination::Event);
        let t = traj.event_time.unwrap();
        assert!((t - PI / 6.0).abs() < 1e-8, "{t}");
        assert!(t >= traj.t_start() && t <= traj.t_end());
        assert!(event(traj.last_point()).abs() <= 1e-10);
    }

    #[test]
    fn event_time_stable_under_tolerance_halving() {
        let event = |y: &[f64]| y[1] - 0.5;
        let loose = OdeSettings::default().with_tolerances(1e-7, 1e-9);
        let tight = loose.with_tolerances(0.5e-7, 0.5e-9);
        let t1 = integrate(&rotation, &[1.0, 0.0], &loose, Some(&event), None).unwrap();
        let t2 = integrate(&rotation, &[1.0, 0.0], &tight, Some(&event), None).unwrap();
        let diff = (t1.event_time.unwrap() - t2.event_time.unwrap()).abs();
        assert!(diff <= 10.0 * 1e-7, "{diff}");
    }

    #[test]
    fn guard_stops_at_boundary() {
        // y' = -1 reaches zero at t = 1
        let down = |_: &[f64]| -> Result<Vec<f64>> { Ok(vec![-1.0]) };
        let s = OdeSettings::default().with_max_time(10.0);
        let guard = |y: &[f64]| y[0] > 1e-9;
        let traj = integrate(&down, &[1.0], &s, None, Some(&guard)).unwrap();
        assert_eq!(traj.termination, Termination::LeftDomain);
        assert!(traj.t_end() < 1.0 && traj.t_end() > 0.999);
        assert!(traj.points.iter().all(|p| guard(p)));
        assert!(integrate(&down, &[0.0], &s, None, Some(&guard)).is_err());
    }

    #[test]
    fn max_steps_termination() {
        let mut s = OdeSettings::default().with_max_time(100.0);
        s.max_steps = 3;
        s.max_step = 0.1;
        let traj = integrate(&decay, &[1.0], &s, None, None).unwrap();
        assert_eq!(traj.termination, Termination::MaxSteps);
        assert_eq!(traj.points.len(), 4);
    }

    #[test]
    fn rhs_errors_propagate() {
        let bad = |_: &[f64]| -> Result<Vec<f64>> { Err(Error::Evaluation("boom".into())) };
        assert!(integrate(&bad, &[1.0], &OdeSettings::default(), None, None).is_err());
    }

    #[test]
    fn invalid_settings_rejected() {
        let mut s = OdeSettings::default();
        s.rtol = 1e-15;
        assert!(s.validate().is_err());
        s = OdeSettings::default();
        s.max_time = 0.0;
        assert!(integrate(&decay, &[1.0], &s, None, None).is_err());
    }

    #[test]
    fn dense_derivative_matches_rhs() {
        let s = OdeSettings::default().with_max_time(2.0);
        let traj = integrate(&rotation, &[1.0, 0.0], &s, None, None).unwrap();
        for t in [0.1, 0.77, 1.3, 1.99] {
            let v = traj.velocity(t);
            let expected = [-t.sin(), t.cos()];
            assert!(dist(&v, &expected) < 1e-7, "{t}: {v:?}");
        }
    }

    #[test]
    fn csv_header_and_rows() {
        let s = OdeSettings::default().with_max_time(0.5);
        let traj = integrate(&rotation, &[1.0, 0.0], &s, None, None).unwrap();
        let csv = traj.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("t,x1,x2"));
        assert_eq!(lines.count(), traj.times.len());
    }

    fn b(x: &[f64]) -> Bundle {
        Bundle::from_slice(x).unwrap()
    }

    #[test]
    fn euler_proportional_is_constant() {
        let field = FieldSpec::identity(2).unwrap();
        let frame = build_frame(&b(&[2.0, 2.0]), &b(&[1.0, 1.0]), DEFAULT_PROP_TOL).unwrap();
        let nodes = euler_polyline(&field, &frame, 1.0, 10).unwrap();
        assert_eq!(nodes.len(), 11);
        assert!(nodes.iter().all(|n| n.as_slice() == [2.0, 2.0]));
    }

    #[test]
    fn euler_single_step_is_tangent() {
        let field = FieldSpec::cobb_douglas(&[0.3, 0.7]).unwrap();
        let frame = build_frame(&b(&[3.0, 4.0]), &b(&[1.0, 1.0]), DEFAULT_PROP_TOL).unwrap();
        let nodes = euler_polyline(&field, &frame, 0.3, 1).unwrap();
        let g = field.eval(&[3.0, 4.0]).unwrap();
        let step: Vec<f64> = nodes[1].iter().zip(nodes[0].iter()).map(|(a, b)| a - b).collect();
        assert_abs_diff_eq!(dot(&g, &step), 0.0, epsilon = 1e-14);
        assert!(euler_polyline(&field, &frame, 0.3, 0).is_err());
    }

    #[test]
    fn euler_leaving_orthant_is_error() {
        let field = FieldSpec::identity(2).unwrap();
        let frame = build_frame(&b(&[3.0, 4.0]), &b(&[1.0, 1.0]), DEFAULT_PROP_TOL).unwrap();
        assert!(euler_polyline(&field, &frame, 100.0, 1).is_err());
    }
}
