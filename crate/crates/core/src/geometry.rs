//! The planar frame attached to a pair of bundles `(x, v)`.
//!
//! The frame lives in `V = span{x, v}`: an orthonormal basis `a1 = x/|x|`,
//! `a2` (Gram-Schmidt on `v`), the quarter-turn `R` with `R a1 = a2` and
//! `R a2 = -a1`, the extreme rays `v1, v2` of the projected nonnegative cone,
//! and the triangle `co{x, y1, y2}` that contains the indifference arc from
//! `x` to the ray of `v`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::Bundle;
use crate::linalg::{axpy, dot, norm, scale, sub};

pub const DEFAULT_PROP_TOL: f64 = 1e-10;

/// Rotation inputs must lie in the plane up to this relative residual.
pub const PLANE_TOL: f64 = 1e-9;

const SINGULAR_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, Serialize)]
pub struct PlaneFrame {
    pub x: Bundle,
    pub v: Bundle,
    pub a1: Vec<f64>,
    /// Zero when `x` and `v` are proportional.
    pub a2: Vec<f64>,
    pub c: f64,
    pub v1: Vec<f64>,
    pub v2: Vec<f64>,
    pub y1: Bundle,
    pub y2: Bundle,
    pub w_star: Vec<f64>,
    pub proportional: bool,
}

pub fn build_frame(x: &Bundle, v: &Bundle, prop_tol: f64) -> Result<PlaneFrame> {
    if x.dim() != v.dim() {
        return Err(Error::Dimension {
            expected: x.dim(),
            got: v.dim(),
        });
    }
    let n = x.dim();
    let a1 = scale(x, 1.0 / norm(x));
    let v_hat = scale(v, 1.0 / norm(v));
    let proportional = norm(&sub(&a1, &v_hat)) < prop_tol;
    // w* = (v.x) v - (v.v) x
    let w_star = axpy(&scale(v, dot(v, x)), -dot(v, v), x);
    if proportional {
        return Ok(PlaneFrame {
            x: x.clone(),
            v: v.clone(),
            a2: vec![0.0; n],
            c: 0.0,
            v1: a1.clone(),
            v2: a1.clone(),
            a1,
            y1: x.clone(),
            y2: x.clone(),
            w_star,
            proportional,
        });
    }
    let v_perp = axpy(v, -dot(v, &a1), &a1);
    // second pass: one is not enough when v is nearly parallel to x
    let v_perp = axpy(&v_perp, -dot(&v_perp, &a1), &a1);
    let perp_norm = norm(&v_perp);
    let a2 = scale(&v_perp, 1.0 / perp_norm);
    let c = norm(x) * perp_norm;
    let mut frame = PlaneFrame {
        x: x.clone(),
        v: v.clone(),
        a1,
        a2,
        c,
        v1: Vec::new(),
        v2: Vec::new(),
        y1: x.clone(),
        y2: x.clone(),
        w_star,
        proportional,
    };
    let (v1, v2) = cone_extremes(&frame);
    frame.v1 = v1;
    frame.v2 = v2;
    let (y1, y2) = triangle(&frame)?;
    frame.y1 = y1;
    frame.y2 = y2;
    Ok(frame)
}

impl PlaneFrame {
    pub fn dim(&self) -> usize {
        self.a1.len()
    }

    /// Coordinates of `y` in the `(a1, a2)` basis.
    pub fn coords(&self, y: &[f64]) -> (f64, f64) {
        (dot(y, &self.a1), dot(y, &self.a2))
    }

    fn from_coords(&self, s: f64, t: f64) -> Vec<f64> {
        self.a1.iter().zip(&self.a2).map(|(p, q)| s * p + t * q).collect()
    }

    /// Vertices of the triangle `co{x, y1, y2}`.
    pub fn vertices(&self) -> [&Bundle; 3] {
        [&self.x, &self.y1, &self.y2]
    }

    /// The scalar `(w*/|w*|) . y`; zero exactly on the ray of `v` within the plane.
    pub fn ray_functional(&self, y: &[f64]) -> f64 {
        let w = norm(&self.w_star);
        if w == 0.0 {
            0.0
        } else {
            dot(&self.w_star, y) / w
        }
    }
}

/// Orthogonal projection onto `span{a1, a2}`.
pub fn project(frame: &PlaneFrame, y: &[f64]) -> Vec<f64> {
    let (s, t) = frame.coords(y);
    frame.from_coords(s, t)
}

/// `R w = (w.a1) a2 - (w.a2) a1` for `w` in the plane.
pub fn rotate(frame: &PlaneFrame, w: &[f64]) -> Result<Vec<f64>> {
    let (s, t) = frame.coords(w);
    let residual = norm(&sub(w, &frame.from_coords(s, t)));
    if residual > PLANE_TOL * norm(w) {
        return Err(Error::OutOfPlane { residual });
    }
    Ok(frame.from_coords(-t, s))
}

/// Extreme unit rays of the projected cone `P R^n_+ = cone{P e_i}`.
///
/// `v1` is the generator with the largest angle from `a1` (on the `a2 >= 0`
/// side), `v2` the one with the smallest (on the `a2 <= 0` side).
pub fn cone_extremes(frame: &PlaneFrame) -> (Vec<f64>, Vec<f64>) {
    if frame.proportional {
        return (frame.a1.clone(), frame.a1.clone());
    }
    let mut best_hi = (f64::NEG_INFINITY, 0);
    let mut best_lo = (f64::INFINITY, 0);
    for i in 0..frame.dim() {
        // P e_i has coordinates (a1_i, a2_i); a1_i > 0 so the angle is in (-pi/2, pi/2).
        let angle = frame.a2[i].atan2(frame.a1[i]);
        if angle > best_hi.0 {
            best_hi = (angle, i);
        }
        if angle < best_lo.0 {
            best_lo = (angle, i);
        }
    }
    let unit = |angle: f64| frame.from_coords(angle.cos(), angle.sin());
    (unit(best_hi.0), unit(best_lo.0))
}

/// Intersections of the ray of `v` with the lines `x + s R v1` and `x + s R v2`.
pub fn triangle(frame: &PlaneFrame) -> Result<(Bundle, Bundle)> {
    if frame.proportional {
        return Ok((frame.x.clone(), frame.x.clone()));
    }
    let y1 = ray_line_intersection(frame, &frame.v1)?;
    let y2 = ray_line_intersection(frame, &frame.v2)?;
    Ok((y1, y2))
}

fn ray_line_intersection(frame: &PlaneFrame, extreme: &[f64]) -> Result<Bundle> {
    // s v - r R(extreme) = x, solved in plane coordinates
    let direction = rotate(frame, extreme)?;
    let (v1, v2) = frame.coords(&frame.v);
    let (d1, d2) = frame.coords(&direction);
    let (x1, x2) = frame.coords(&frame.x);
    let det = v1 * (-d2) - (-d1) * v2;
    let size = (v1.abs() + d1.abs()).max(v2.abs() + d2.abs());
    let condition = if det == 0.0 {
        f64::INFINITY
    } else {
        size * size / det.abs()
    };
    if condition > SINGULAR_CONDITION {
        return Err(Error::Singular { condition });
    }
    let s = (x1 * (-d2) - (-d1) * x2) / det;
    let point = scale(&frame.v, s);
    Bundle::new(point).map_err(|_| Error::Singular { condition })
}
