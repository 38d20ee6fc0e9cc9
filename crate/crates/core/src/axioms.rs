//! Axiom tests: the weak weak axiom, the weak axiom, conditions A1/A2/B, the
//! Antonelli matrix, Ville's axiom, intransitive triples and Ville curves.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::{Bundle, Field};
use crate::geometry::{build_frame, DEFAULT_PROP_TOL};
use crate::linalg::{axpy, dist, dot, norm, proportionality_residual, scale, strictly_below, sub};
use crate::ode::{integrate, OdeSettings, Termination, Trajectory};
use crate::preference::{indifference_loop, utility};
use crate::sampling::{task_rng, Region};

/// `g_n` below this is treated as zero when forming the Antonelli matrix.
pub const PIVOT_FLOOR: f64 = 1e-10;
/// Relative eigenvalue threshold for definiteness classes.
pub const DEFINITENESS_REL_TOL: f64 = 1e-8;
/// Scores `|holonomy - 1|` must beat this for a triple to count as intransitive.
pub const HOLONOMY_THRESHOLD: f64 = 1e-4;
/// Witness lists are truncated to this many entries; counts stay exact.
pub const MAX_WITNESSES: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Definiteness {
    NegativeDefinite,
    NegativeSemidefinite,
    Indefinite,
    PositiveSemidefinite,
    PositiveDefinite,
}

impl Definiteness {
    /// Classifies sorted eigenvalues against `+-tol`. An all-zero spectrum
    /// counts as negative semidefinite.
    pub fn classify(eigenvalues: &[f64], tol: f64) -> Self {
        let max = eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
        if max < -tol {
            Definiteness::NegativeDefinite
        } else if max <= tol {
            Definiteness::NegativeSemidefinite
        } else if min > tol {
            Definiteness::PositiveDefinite
        } else if min >= -tol {
            Definiteness::PositiveSemidefinite
        } else {
            Definiteness::Indefinite
        }
    }

    /// A1: the form is `<= 0`.
    pub fn satisfies_a1(self) -> bool {
        matches!(self, Definiteness::NegativeDefinite | Definiteness::NegativeSemidefinite)
    }

    /// A2: the form is `< 0` off the origin.
    pub fn satisfies_a2(self) -> bool {
        self == Definiteness::NegativeDefinite
    }
}

fn sorted_sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    let sym = (m + m.transpose()) * 0.5;
    let mut ev: Vec<f64> = SymmetricEigen::new(sym).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct AntonelliReport {
    pub point: Bundle,
    /// Coordinate used to normalize the field (0-based); `n - 1` unless relabelled.
    pub pivot: usize,
    /// Rows and columns run over the remaining coordinates in increasing order.
    pub matrix: Vec<Vec<f64>>,
    pub symmetry_residual: f64,
    pub sym_part_eigenvalues: Vec<f64>,
    pub classification: Definiteness,
}

impl AntonelliReport {
    pub fn matrix(&self) -> DMatrix<f64> {
        let k = self.matrix.len();
        DMatrix::from_fn(k, k, |i, j| self.matrix[i][j])
    }
}

/// Antonelli matrix with the last coordinate as pivot.
pub fn antonelli<F: Field + ?Sized>(field: &F, x: &Bundle) -> Result<AntonelliReport> {
    antonelli_with_pivot(field, x, field.dim() - 1)
}

/// Antonelli matrix pivoting on the last coordinate when `g_n` is usable,
/// otherwise on the largest component of `g(x)`.
pub fn antonelli_auto<F: Field + ?Sized>(field: &F, x: &Bundle) -> Result<AntonelliReport> {
    let g = field.eval(x)?;
    let n = g.len();
    let pivot = if g[n - 1] > PIVOT_FLOOR {
        n - 1
    } else {
        (0..n).max_by(|&a, &b| g[a].total_cmp(&g[b])).expect("n >= 2")
    };
    antonelli_with_pivot(field, x, pivot)
}

/// `a_ij = d gbar_i / d x_j - d gbar_i / d x_k gbar_j` with `gbar = g / g_k`,
/// `i, j` ranging over the coordinates other than the pivot `k`.
pub fn antonelli_with_pivot<F: Field + ?Sized>(
    field: &F,
    x: &Bundle,
    pivot: usize,
) -> Result<AntonelliReport> {
    let g = field.eval(x)?;
    let n = g.len();
    if pivot >= n {
        return Err(Error::VariableOutOfRange { index: pivot + 1, dim: n });
    }
    let gk = g[pivot];
    if gk <= PIVOT_FLOOR {
        return Err(Error::Domain(format!(
            "g_{}(x) = {gk:e} is too small to normalize by at {:?}",
            pivot + 1,
            x.as_slice()
        )));
    }
    let dg = field.jacobian(x)?.matrix;
    let gbar: Vec<f64> = g.iter().map(|c| c / gk).collect();
    // d gbar_i / d x_j = (dg_i/dx_j - gbar_i dg_k/dx_j) / g_k
    let dgbar = |i: usize, j: usize| (dg[(i, j)] - gbar[i] * dg[(pivot, j)]) / gk;
    let others: Vec<usize> = (0..n).filter(|&i| i != pivot).collect();
    let k = others.len();
    let a = DMatrix::from_fn(k, k, |r, c| {
        let (i, j) = (others[r], others[c]);
        dgbar(i, j) - dgbar(i, pivot) * gbar[j]
    });
    let symmetry_residual = (&a - a.transpose()).norm();
    let eig = sorted_sym_eigenvalues(&a);
    let classification = Definiteness::classify(&eig, DEFINITENESS_REL_TOL * a.norm());
    Ok(AntonelliReport {
        point: x.clone(),
        pivot,
        matrix: rows(&a),
        symmetry_residual,
        sym_part_eigenvalues: eig,
        classification,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct BResidual {
    /// 1-based `(i, j, k)` with `i < j < k`.
    pub triple: (usize, usize, usize),
    pub residual: f64,
}

/// Cyclic sums of condition B for every index triple.
pub fn check_b<F: Field + ?Sized>(field: &F, x: &Bundle) -> Result<Vec<BResidual>> {
    let g = field.eval(x)?;
    let dg = field.jacobian(x)?.matrix;
    Ok(b_residuals(&g, &dg))
}

fn b_residuals(g: &[f64], dg: &DMatrix<f64>) -> Vec<BResidual> {
    let n = g.len();
    let curl = |b: usize, c: usize| dg[(b, c)] - dg[(c, b)];
    let mut out = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            for k in j + 1..n {
                let residual = g[i] * curl(j, k) + g[j] * curl(k, i) + g[k] * curl(i, j);
                out.push(BResidual {
                    triple: (i + 1, j + 1, k + 1),
                    residual,
                });
            }
        }
    }
    out
}

fn b_tolerance(g: &[f64], dg: &DMatrix<f64>) -> f64 {
    1e-6 * (1.0 + norm(g) * dg.norm())
}

/// Orthonormal basis of `{w : w.g = 0}` as the columns of an `n x (n-1)` matrix.
pub fn tangent_basis(g: &[f64]) -> DMatrix<f64> {
    let n = g.len();
    let mut basis: Vec<Vec<f64>> = vec![scale(g, 1.0 / norm(g))];
    for e in 0..n {
        if basis.len() == n {
            break;
        }
        let mut w = vec![0.0; n];
        w[e] = 1.0;
        // two passes keep the basis orthogonal to working precision
        for _ in 0..2 {
            for b in &basis {
                w = axpy(&w, -dot(&w, b), b);
            }
        }
        let len = norm(&w);
        if len > 1e-8 {
            basis.push(scale(&w, 1.0 / len));
        }
    }
    DMatrix::from_fn(n, n - 1, |i, j| basis[j + 1][i])
}

#[derive(Debug, Clone, Serialize)]
pub struct TangentFormReport {
    pub point: Bundle,
    /// Sorted eigenvalues of the symmetric part of `Q^T Dg Q`.
    pub eigenvalues: Vec<f64>,
    pub classification: Definiteness,
    pub a1: bool,
    pub a2: bool,
    /// Classification of the Antonelli matrix, when a pivot is usable.
    pub antonelli: Option<Definiteness>,
    /// Whether the tangent form and the Antonelli matrix agree on A1 and A2.
    pub consistent: bool,
}

/// Conditions A1 and A2 at `x` from the Jacobian restricted to the tangent space of `g(x)`.
pub fn check_a1_a2<F: Field + ?Sized>(field: &F, x: &Bundle) -> Result<TangentFormReport> {
    let g = field.eval(x)?;
    let dg = field.jacobian(x)?.matrix;
    let q = tangent_basis(&g);
    let form = q.transpose() * &dg * &q;
    let eig = sorted_sym_eigenvalues(&form);
    let classification = Definiteness::classify(&eig, DEFINITENESS_REL_TOL * form.norm());
    let antonelli = match antonelli_auto(field, x) {
        Ok(report) => Some(report.classification),
        Err(Error::Domain(_)) => None,
        Err(e) => return Err(e),
    };
    let consistent = antonelli.is_none_or(|a| {
        a.satisfies_a1() == classification.satisfies_a1()
            && a.satisfies_a2() == classification.satisfies_a2()
    });
    Ok(TangentFormReport {
        point: x.clone(),
        eigenvalues: eig,
        classification,
        a1: classification.satisfies_a1(),
        a2: classification.satisfies_a2(),
        antonelli,
        consistent,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Axiom {
    #[serde(rename = "WWA")]
    Wwa,
    WeakAxiom,
    A1,
    A2,
    B,
    Ville,
    #[serde(rename = "WARP")]
    Warp,
    ImprovementDirection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    NoViolationFound,
    Violated,
}

/// A concrete counterexample together with the numbers that make it one.
#[derive(Debug, Clone, Serialize)]
pub struct Witness {
    pub points: Vec<Vec<f64>>,
    pub values: BTreeMap<String, f64>,
}

impl Witness {
    pub fn new(points: Vec<Vec<f64>>, values: &[(&str, f64)]) -> Self {
        Witness {
            points,
            values: values.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AxiomVerdict {
    pub axiom: Axiom,
    pub status: Status,
    pub witnesses: Vec<Witness>,
    /// Total number of violating samples; `witnesses` keeps the first few.
    pub violations: usize,
    #[serde(rename = "samples")]
    pub samples_tested: usize,
    pub region: Option<Region>,
    pub seed: Option<u64>,
}

impl AxiomVerdict {
    pub fn from_witnesses(
        axiom: Axiom,
        mut witnesses: Vec<Witness>,
        samples_tested: usize,
        region: Option<Region>,
        seed: Option<u64>,
    ) -> Self {
        let violations = witnesses.len();
        witnesses.truncate(MAX_WITNESSES);
        AxiomVerdict {
            axiom,
            status: if violations > 0 { Status::Violated } else { Status::NoViolationFound },
            witnesses,
            violations,
            samples_tested,
            region,
            seed,
        }
    }

    pub fn violated(&self) -> bool {
        self.status == Status::Violated
    }
}

fn pair_tol(gx_x: f64) -> f64 {
    1e-9 * (1.0 + gx_x.abs())
}

/// The four inner products behind both revealed-preference axioms.
#[derive(Debug, Clone, Copy)]
pub struct PairProducts {
    pub gx_y: f64,
    pub gx_x: f64,
    pub gy_x: f64,
    pub gy_y: f64,
}

impl PairProducts {
    pub fn new<F: Field + ?Sized>(field: &F, x: &[f64], y: &[f64]) -> Result<Self> {
        let gx = field.eval(x)?;
        let gy = field.eval(y)?;
        Ok(PairProducts {
            gx_y: dot(&gx, y),
            gx_x: dot(&gx, x),
            gy_x: dot(&gy, x),
            gy_y: dot(&gy, y),
        })
    }

    /// `y` is affordable at the budget `x` generates.
    pub fn y_affordable_at_x(&self) -> bool {
        self.gx_y <= self.gx_x + pair_tol(self.gx_x)
    }

    /// Violation of: `g(x).y <= g(x).x` implies `g(y).x >= g(y).y`.
    pub fn violates_wwa(&self) -> bool {
        self.y_affordable_at_x() && self.gy_x < self.gy_y - pair_tol(self.gy_y)
    }

    /// Violation of: `g(x).y <= g(x).x` and `y != x` imply `g(y).x > g(y).y`.
    pub fn violates_weak_axiom(&self) -> bool {
        self.y_affordable_at_x() && self.gy_x <= self.gy_y + pair_tol(self.gy_y)
    }

    fn witness(&self, x: &[f64], y: &[f64]) -> Witness {
        Witness::new(
            vec![x.to_vec(), y.to_vec()],
            &[
                ("g(x).y", self.gx_y),
                ("g(x).x", self.gx_x),
                ("g(y).x", self.gy_x),
                ("g(y).y", self.gy_y),
            ],
        )
    }
}

/// Random pair for the revealed-preference checks. Odd indices put `y` on the
/// budget hyperplane of `x`, at least `1e-2 |x|` away, where ties live.
fn sample_pair<F: Field + ?Sized>(
    field: &F,
    region: &Region,
    seed: u64,
    index: usize,
) -> Result<(Bundle, Bundle)> {
    use rand::Rng;
    let mut rng = task_rng(seed, index as u64);
    let n = field.dim();
    let x = region.sample(&mut rng, n);
    if index.is_multiple_of(2) {
        return Ok((x.clone(), region.sample(&mut rng, n)));
    }
    let g = field.eval(&x)?;
    let q = tangent_basis(&g);
    let coeffs: Vec<f64> = (0..n - 1).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let dir: Vec<f64> = (0..n).map(|i| (0..n - 1).map(|j| q[(i, j)] * coeffs[j]).sum()).collect();
    let len = norm(&dir);
    if len < 1e-12 {
        return Ok((x.clone(), region.sample(&mut rng, n)));
    }
    let dir = scale(&dir, 1.0 / len);
    let floor = 1e-2 * norm(&x);
    let mut r = rng.gen_range(floor..0.5 * norm(&x));
    while r >= floor {
        let y = axpy(&x, r, &dir);
        if y.iter().all(|c| *c > 1e-9) {
            return Ok((x, Bundle::new(y)?));
        }
        r *= 0.5;
    }
    Ok((x.clone(), region.sample(&mut rng, n)))
}

fn pair_check<F: Field + ?Sized>(
    field: &F,
    axiom: Axiom,
    region: &Region,
    n_samples: usize,
    seed: u64,
    seeded: &[(Bundle, Bundle)],
) -> Result<AxiomVerdict> {
    let test = |x: &Bundle, y: &Bundle| -> Result<Option<Witness>> {
        if x == y {
            return Ok(None);
        }
        let p = PairProducts::new(field, x, y)?;
        let bad = match axiom {
            Axiom::Wwa => p.violates_wwa(),
            _ => p.violates_weak_axiom(),
        };
        Ok(bad.then(|| p.witness(x, y)))
    };
    let mut witnesses = Vec::new();
    for (x, y) in seeded {
        witnesses.extend(test(x, y)?);
    }
    let sampled: Vec<Option<Witness>> = (0..n_samples)
        .into_par_iter()
        .map(|i| {
            let (x, y) = sample_pair(field, region, seed, i)?;
            test(&x, &y)
        })
        .collect::<Result<_>>()?;
    witnesses.extend(sampled.into_iter().flatten());
    Ok(AxiomVerdict::from_witnesses(
        axiom,
        witnesses,
        n_samples + seeded.len(),
        Some(*region),
        Some(seed),
    ))
}

/// Weak weak axiom over random pairs in `region`.
pub fn check_wwa<F: Field + ?Sized>(
    field: &F,
    region: &Region,
    n_samples: usize,
    seed: u64,
) -> Result<AxiomVerdict> {
    pair_check(field, Axiom::Wwa, region, n_samples, seed, &[])
}

/// [`check_wwa`] with extra pairs tested ahead of the random ones.
pub fn check_wwa_seeded<F: Field + ?Sized>(
    field: &F,
    region: &Region,
    n_samples: usize,
    seed: u64,
    seeded: &[(Bundle, Bundle)],
) -> Result<AxiomVerdict> {
    pair_check(field, Axiom::Wwa, region, n_samples, seed, seeded)
}

pub fn check_weak_axiom<F: Field + ?Sized>(
    field: &F,
    region: &Region,
    n_samples: usize,
    seed: u64,
) -> Result<AxiomVerdict> {
    pair_check(field, Axiom::WeakAxiom, region, n_samples, seed, &[])
}

pub fn check_weak_axiom_seeded<F: Field + ?Sized>(
    field: &F,
    region: &Region,
    n_samples: usize,
    seed: u64,
    seeded: &[(Bundle, Bundle)],
) -> Result<AxiomVerdict> {
    pair_check(field, Axiom::WeakAxiom, region, n_samples, seed, seeded)
}

fn sample_points(n: usize, region: &Region, n_samples: usize, seed: u64) -> Vec<Bundle> {
    (0..n_samples)
        .map(|i| region.sample(&mut task_rng(seed, i as u64), n))
        .collect()
}

/// A1 and A2 verdicts from the tangent-space form at sampled points.
pub fn sweep_a1_a2<F: Field + ?Sized>(
    field: &F,
    region: &Region,
    n_samples: usize,
    seed: u64,
) -> Result<(AxiomVerdict, AxiomVerdict)> {
    let points = sample_points(field.dim(), region, n_samples, seed);
    let reports: Vec<TangentFormReport> = points
        .par_iter()
        .map(|x| check_a1_a2(field, x))
        .collect::<Result<_>>()?;
    let witness = |r: &TangentFormReport| {
        Witness::new(
            vec![r.point.to_vec()],
            &[("max_eigenvalue", *r.eigenvalues.last().unwrap_or(&0.0))],
        )
    };
    let a1 = reports.iter().filter(|r| !r.a1).map(witness).collect();
    let a2 = reports.iter().filter(|r| !r.a2).map(witness).collect();
    Ok((
        AxiomVerdict::from_witnesses(Axiom::A1, a1, n_samples, Some(*region), Some(seed)),
        AxiomVerdict::from_witnesses(Axiom::A2, a2, n_samples, Some(*region), Some(seed)),
    ))
}

fn b_sweep<F: Field + ?Sized>(
    field: &F,
    axiom: Axiom,
    region: &Region,
    n_samples: usize,
    seed: u64,
) -> Result<AxiomVerdict> {
    let points = sample_points(field.dim(), region, n_samples, seed);
    let found: Vec<Vec<Witness>> = points
        .par_iter()
        .map(|x| {
            let g = field.eval(x)?;
            let dg = field.jacobian(x)?.matrix;
            let tol = b_tolerance(&g, &dg);
            Ok(b_residuals(&g, &dg)
                .into_iter()
                .filter(|r| r.residual.abs() > tol)
                .map(|r| {
                    Witness::new(
                        vec![x.to_vec()],
                        &[
                            ("i", r.triple.0 as f64),
                            ("j", r.triple.1 as f64),
                            ("k", r.triple.2 as f64),
                            ("residual", r.residual),
                            ("tolerance", tol),
                        ],
                    )
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(AxiomVerdict::from_witnesses(
        axiom,
        found.into_iter().flatten().collect(),
        n_samples,
        Some(*region),
        Some(seed),
    ))
}

/// Condition B at sampled points.
pub fn sweep_b<F: Field + ?Sized>(
    field: &F,
    region: &Region,
    n_samples: usize,
    seed: u64,
) -> Result<AxiomVerdict> {
    b_sweep(field, Axiom::B, region, n_samples, seed)
}

/// Ville's axiom through condition B. Two goods never admit a violation, so
/// nothing is sampled when `n = 2`.
pub fn check_ville<F: Field + ?Sized>(
    field: &F,
    region: &Region,
    n_samples: usize,
    seed: u64,
) -> Result<AxiomVerdict> {
    if field.dim() == 2 {
        return Ok(AxiomVerdict::from_witnesses(Axiom::Ville, Vec::new(), 0, Some(*region), Some(seed)));
    }
    b_sweep(field, Axiom::Ville, region, n_samples, seed)
}

/// A chain `x ~ y ~ z` with `z` strictly preferred to `x`.
#[derive(Debug, Clone, Serialize)]
pub struct IntransitiveTriple {
    pub x: Bundle,
    pub y: Bundle,
    pub z: Bundle,
    /// `a = 1 / u(z, x) < 1`; the loop started at `x* = x / a` returns to `x = a x*`.
    pub shrink_factor: f64,
    /// Holonomy of the raw candidate in the order it was drawn.
    pub holonomy: f64,
    pub candidates_tested: usize,
    pub candidates_skipped: usize,
}

impl IntransitiveTriple {
    /// `u(z, x) x`, the start of the Ville curve.
    pub fn x_star(&self) -> Bundle {
        self.x.scaled(1.0 / self.shrink_factor).expect("positive shrink factor")
    }

    /// Recomputes `u(x,y)`, `u(y,z)` and `u(z,x)`.
    pub fn leg_values<F: Field + ?Sized>(&self, field: &F, settings: &OdeSettings) -> Result<[f64; 3]> {
        Ok([
            utility(field, &self.x, &self.y, settings)?,
            utility(field, &self.y, &self.z, settings)?,
            utility(field, &self.z, &self.x, settings)?,
        ])
    }
}

/// Squared volume spanned by the normalized vectors; zero for coplanar triples.
pub fn gram_volume(vectors: &[&[f64]]) -> f64 {
    let units: Vec<Vec<f64>> = vectors.iter().map(|v| scale(v, 1.0 / norm(v))).collect();
    let k = units.len();
    DMatrix::from_fn(k, k, |i, j| dot(&units[i], &units[j])).determinant()
}

/// Searches random triples for the largest `|holonomy - 1|`.
pub fn find_intransitive_triple<F: Field + ?Sized>(
    field: &F,
    region: &Region,
    seed: u64,
    budget: usize,
    settings: &OdeSettings,
) -> Result<Option<IntransitiveTriple>> {
    let n = field.dim();
    if n < 3 {
        return Err(Error::Invalid(
            "with two goods every field satisfies Ville's axiom, so no intransitive triple exists"
                .into(),
        ));
    }
    let scored: Vec<Option<(f64, [Bundle; 3], crate::preference::Loop)>> = (0..budget)
        .into_par_iter()
        .map(|i| {
            let mut rng = task_rng(seed, i as u64);
            let x = region.sample(&mut rng, n);
            let y = region.sample(&mut rng, n);
            let z = region.sample(&mut rng, n);
            if gram_volume(&[&x, &y, &z]) < 1e-6 {
                return None;
            }
            let lp = indifference_loop(field, &x, &y, &z, settings).ok()?;
            Some(((lp.holonomy() - 1.0).abs(), [x, y, z], lp))
        })
        .collect();
    let skipped = scored.iter().filter(|s| s.is_none()).count();
    let best = scored
        .into_iter()
        .flatten()
        .fold(None::<(f64, [Bundle; 3], crate::preference::Loop)>, |best, cand| match best {
            Some(b) if b.0 >= cand.0 => Some(b),
            _ => Some(cand),
        });
    let Some((score, [x, _, _], lp)) = best else {
        return Ok(None);
    };
    if score <= HOLONOMY_THRESHOLD {
        return Ok(None);
    }
    let h = lp.holonomy();
    // x ~ y' ~ z' ~ h x. For h > 1, z' beats x; otherwise read the chain backwards.
    let (cx, cy, cz) = if h > 1.0 {
        (x, lp.y_on_ray, lp.z_on_ray)
    } else {
        (lp.z_on_ray, lp.y_on_ray, x)
    };
    let u_zx = utility(field, &cz, &cx, settings)?;
    if u_zx <= 1.0 {
        return Ok(None);
    }
    Ok(Some(IntransitiveTriple {
        x: cx,
        y: cy,
        z: cz,
        shrink_factor: 1.0 / u_zx,
        holonomy: h,
        candidates_tested: budget,
        candidates_skipped: skipped,
    }))
}

/// One sample of a closed curve together with `g(x(t)).x'(t)`.
#[derive(Debug, Clone, Serialize)]
pub struct CurveSample {
    pub t: f64,
    pub point: Vec<f64>,
    pub directional: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Leg {
    pub start: Bundle,
    /// Ray the leg runs to.
    pub target: Bundle,
    pub end: Vec<f64>,
    pub t_start: f64,
    pub duration: f64,
    /// Distance of `end` from the target ray, relative to `|end|`.
    pub ray_residual: f64,
    #[serde(skip)]
    pub trajectory: Trajectory,
}

#[derive(Debug, Clone, Serialize)]
pub struct VilleCurve {
    pub legs: Vec<Leg>,
    /// Straight segment `v3 -> x*` over one time unit.
    pub closing: (Vec<f64>, Vec<f64>),
    pub total_time: f64,
    pub closure_gap: f64,
    pub min_directional: f64,
    pub epsilon: f64,
    /// `(epsilon, min_i (x*_i - v3_i) / x*_i)` per attempt; NaN when a leg failed.
    pub epsilon_sweep: Vec<(f64, f64)>,
    pub anchor_triple: (Bundle, Bundle, Bundle),
    pub shrink_factor: f64,
    pub samples: Vec<CurveSample>,
}

impl VilleCurve {
    pub fn start(&self) -> &[f64] {
        &self.closing.1
    }

    /// Point of the curve at `t in [0, total_time]`.
    pub fn point(&self, t: f64) -> Vec<f64> {
        for leg in &self.legs {
            if t <= leg.t_start + leg.duration {
                return leg.trajectory.interpolate(t - leg.t_start);
            }
        }
        let t3 = self.total_time - 1.0;
        let s = (t - t3).clamp(0.0, 1.0);
        axpy(&self.closing.0, s, &sub(&self.closing.1, &self.closing.0))
    }

    /// Derivative of the curve at `t`; one-sided at the joints.
    pub fn velocity(&self, t: f64) -> Vec<f64> {
        for leg in &self.legs {
            if t <= leg.t_start + leg.duration {
                return leg.trajectory.velocity(t - leg.t_start);
            }
        }
        sub(&self.closing.1, &self.closing.0)
    }

    /// Samples of `g(x(t)).x'(t)` over each piece, `per_piece` times per piece.
    pub fn sample<F: Field + ?Sized>(&self, field: &F, per_piece: usize) -> Result<Vec<CurveSample>> {
        let per_piece = per_piece.max(2);
        let mut pieces: Vec<(f64, f64)> = self.legs.iter().map(|l| (l.t_start, l.duration)).collect();
        pieces.push((self.total_time - 1.0, 1.0));
        let mut out = Vec::with_capacity(per_piece * pieces.len());
        for (pi, (t0, len)) in pieces.into_iter().enumerate() {
            for i in 0..per_piece {
                let local = len * i as f64 / (per_piece - 1) as f64;
                let (point, vel) = if pi < self.legs.len() {
                    let traj = &self.legs[pi].trajectory;
                    (traj.interpolate(local), traj.velocity(local))
                } else {
                    let v = sub(&self.closing.1, &self.closing.0);
                    (axpy(&self.closing.0, local, &v), v)
                };
                let g = field.eval(&point)?;
                out.push(CurveSample {
                    t: t0 + local,
                    directional: dot(&g, &vel),
                    point,
                });
            }
        }
        Ok(out)
    }

    pub fn to_csv(&self) -> String {
        let rows: Vec<Vec<f64>> = self
            .samples
            .iter()
            .map(|s| {
                let mut r = s.point.clone();
                r.push(s.directional);
                r
            })
            .collect();
        crate::ode::rows_to_csv(
            self.samples.iter().zip(&rows).map(|(s, r)| (s.t, r.as_slice())),
            &["g_dot_xdot"],
        )
    }
}

/// Samples per curve piece; four pieces give well over 10^3 samples.
pub const CURVE_SAMPLES_PER_PIECE: usize = 500;
const MAX_EPSILON_TRIES: usize = 30;

fn run_leg<F: Field + ?Sized>(
    field: &F,
    start: &[f64],
    target: &Bundle,
    epsilon: f64,
    settings: &OdeSettings,
) -> Result<Trajectory> {
    let s = Bundle::from_slice(start)?;
    let frame = build_frame(&s, target, DEFAULT_PROP_TOL)?;
    if frame.proportional {
        return Err(Error::Invalid("leg start already lies on its target ray".into()));
    }
    let r = target.as_slice();
    let rhs = |w: &[f64]| -> Result<Vec<f64>> {
        let g = field.eval(w)?;
        let base = axpy(&scale(r, dot(&g, start)), -dot(&g, r), start);
        Ok(axpy(&base, epsilon, r))
    };
    let event = |w: &[f64]| frame.ray_functional(w);
    let guard = |w: &[f64]| settings.inside(w);
    let traj = integrate(&rhs, start, settings, Some(&event), Some(&guard))?;
    if traj.termination != Termination::Event {
        return Err(Error::EventNotReached {
            termination: traj.termination.to_string(),
            t: traj.t_end(),
            rate: 0.0,
        });
    }
    Ok(traj)
}

/// Builds the three perturbed legs `x* -> ray(z) -> ray(y) -> ray(x)` and the
/// straight closing segment, shrinking `epsilon` until the last leg lands
/// strictly below `x*`.
pub fn construct_ville_curve<F: Field + ?Sized>(
    field: &F,
    triple: &IntransitiveTriple,
    epsilon: f64,
    settings: &OdeSettings,
) -> Result<VilleCurve> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::Invalid(format!("epsilon must be positive, got {epsilon}")));
    }
    if !(triple.shrink_factor > 0.0 && triple.shrink_factor < 1.0) {
        return Err(Error::Invalid(format!(
            "shrink factor must lie in (0, 1), got {}",
            triple.shrink_factor
        )));
    }
    let x_star = triple.x_star();
    let targets = [&triple.z, &triple.y, &triple.x];
    let mut sweep = Vec::new();
    let mut eps = epsilon;
    for _ in 0..MAX_EPSILON_TRIES {
        let mut legs = Vec::with_capacity(3);
        let mut start = x_star.to_vec();
        let mut t0 = 0.0;
        let mut failed = false;
        for target in targets {
            match run_leg(field, &start, target, eps, settings) {
                Ok(traj) => {
                    let end = traj.last_point().to_vec();
                    let duration = traj.t_end();
                    legs.push(Leg {
                        start: Bundle::from_slice(&start)?,
                        target: (*target).clone(),
                        ray_residual: proportionality_residual(&end, target),
                        end: end.clone(),
                        t_start: t0,
                        duration,
                        trajectory: traj,
                    });
                    t0 += duration;
                    start = end;
                }
                Err(_) => {
                    failed = true;
                    break;
                }
            }
        }
        if failed {
            sweep.push((eps, f64::NAN));
            eps *= 0.5;
            continue;
        }
        let v3 = start;
        let margin = v3
            .iter()
            .zip(x_star.iter())
            .map(|(v, x)| (x - v) / x)
            .fold(f64::INFINITY, f64::min);
        sweep.push((eps, margin));
        if !strictly_below(&v3, &x_star) {
            eps *= 0.5;
            continue;
        }
        let mut curve = VilleCurve {
            legs,
            closing: (v3, x_star.to_vec()),
            total_time: t0 + 1.0,
            closure_gap: 0.0,
            min_directional: f64::INFINITY,
            epsilon: eps,
            epsilon_sweep: sweep,
            anchor_triple: (triple.x.clone(), triple.y.clone(), triple.z.clone()),
            shrink_factor: triple.shrink_factor,
            samples: Vec::new(),
        };
        curve.closure_gap = dist(&curve.point(curve.total_time), &curve.point(0.0));
        curve.samples = curve.sample(field, CURVE_SAMPLES_PER_PIECE)?;
        curve.min_directional = curve
            .samples
            .iter()
            .map(|s| s.directional)
            .fold(f64::INFINITY, f64::min);
        return Ok(curve);
    }
    Err(Error::NoEpsilon {
        tries: MAX_EPSILON_TRIES,
        sweep,
    })
}

/// Default starting perturbation: a tenth of the unperturbed speed scale at `x*`.
pub fn default_epsilon<F: Field + ?Sized>(field: &F, triple: &IntransitiveTriple) -> Result<f64> {
    let xs = triple.x_star();
    let g = field.eval(&xs)?;
    Ok(0.1 * norm(&g) * norm(&xs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{FieldSpec, Rescaled};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn b(x: &[f64]) -> Bundle {
        Bundle::from_slice(x).unwrap()
    }

    #[test]
    fn antonelli_examples() {
        let ni = antonelli(&FieldSpec::noninteg3(), &b(&[0.7, 1.3, 1.9])).unwrap();
        assert_eq!(ni.matrix, vec![vec![0.0, 1.0], vec![0.0, 0.0]]);
        assert!((ni.symmetry_residual - 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(ni.classification, Definiteness::Indefinite);

        let cd = antonelli(&FieldSpec::cobb_douglas(&[0.5, 0.5]).unwrap(), &b(&[1.0, 1.0])).unwrap();
        assert!((cd.matrix[0][0] + 2.0).abs() < 1e-12);
        assert_eq!(cd.classification, Definiteness::NegativeDefinite);

        let id = antonelli(&FieldSpec::identity(2).unwrap(), &b(&[1.0, 1.0])).unwrap();
        assert!((id.matrix[0][0] - 2.0).abs() < 1e-12);
        assert_eq!(id.classification, Definiteness::PositiveDefinite);
        assert!(!id.classification.satisfies_a1());
    }

    #[test]
    fn antonelli_needs_a_usable_pivot() {
        let f = FieldSpec::from_exprs(&["1", "x1 - x1"]).unwrap();
        let x = b(&[1.0, 2.0]);
        assert!(antonelli(&f, &x).is_err());
        let r = antonelli_auto(&f, &x).unwrap();
        assert_eq!(r.pivot, 0);
    }

    #[test]
    fn b_examples() {
        assert!(check_b(&FieldSpec::identity(2).unwrap(), &b(&[1.0, 2.0])).unwrap().is_empty());
        let ni = check_b(&FieldSpec::noninteg3(), &b(&[1.0, 3.0, 7.0])).unwrap();
        assert_eq!(ni.len(), 1);
        assert_eq!(ni[0].triple, (1, 2, 3));
        assert!((ni[0].residual - 1.0).abs() < 1e-12);
        let cd = check_b(&FieldSpec::cobb_douglas(&[0.2, 0.3, 0.5]).unwrap(), &b(&[0.6, 1.1, 1.7])).unwrap();
        assert!(cd[0].residual.abs() < 1e-6);
        let four = check_b(&FieldSpec::identity(4).unwrap(), &b(&[1.0, 2.0, 3.0, 4.0])).unwrap();
        assert_eq!(four.len(), 4);
    }

    #[test]
    fn tangent_forms() {
        let id = check_a1_a2(&FieldSpec::identity(2).unwrap(), &b(&[1.0, 1.0])).unwrap();
        assert!((id.eigenvalues[0] - 1.0).abs() < 1e-12);
        assert!(!id.a1 && !id.a2 && id.consistent);
        let cd = check_a1_a2(&FieldSpec::cobb_douglas(&[0.5, 0.5]).unwrap(), &b(&[1.0, 1.0])).unwrap();
        assert!((cd.eigenvalues[0] + 0.5).abs() < 1e-12);
        assert!(cd.a1 && cd.a2 && cd.consistent);
    }

    #[test]
    fn tangent_basis_is_orthonormal() {
        let g = [0.3, 1.0, 2.0, 0.1];
        let q = tangent_basis(&g);
        let gram = q.transpose() * &q;
        assert!((gram - DMatrix::identity(3, 3)).norm() < 1e-14);
        for j in 0..3 {
            assert!(dot(&g, q.column(j).as_slice()).abs() < 1e-14);
        }
    }

    #[test]
    fn tangent_form_agrees_with_antonelli() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let fields = [
            FieldSpec::cobb_douglas(&[0.2, 0.3, 0.5]).unwrap(),
            FieldSpec::identity(3).unwrap(),
            FieldSpec::noninteg3(),
            FieldSpec::ces(&[1.0, 2.0, 1.5], -1.0).unwrap(),
        ];
        for f in &fields {
            for _ in 0..100 {
                let x = b(&(0..3).map(|_| rng.gen_range(0.5..2.0)).collect::<Vec<_>>());
                let r = check_a1_a2(f, &x).unwrap();
                assert!(r.consistent, "{f} at {x:?}: {r:?}");
                let ant = antonelli(f, &x).unwrap();
                let b_zero = check_b(f, &x).unwrap().iter().all(|r| r.residual.abs() < 1e-6);
                assert_eq!(b_zero, ant.symmetry_residual < 1e-6, "{f}");
            }
        }
    }

    #[test]
    fn wwa_counterexample_for_identity() {
        let id = FieldSpec::identity(2).unwrap();
        let seeded = [(b(&[2.0, 1.0]), b(&[1.0, 2.0]))];
        let v = check_wwa_seeded(&id, &Region::default(), 0, 42, &seeded).unwrap();
        assert!(v.violated());
        let w = &v.witnesses[0];
        assert_eq!(w.values["g(x).y"], 4.0);
        assert_eq!(w.values["g(x).x"], 5.0);
        assert_eq!(w.values["g(y).x"], 4.0);
        assert_eq!(w.values["g(y).y"], 5.0);
        let same = [(b(&[1.0, 2.0]), b(&[1.0, 2.0]))];
        assert!(!check_wwa_seeded(&id, &Region::default(), 0, 1, &same).unwrap().violated());
        assert!(check_weak_axiom(&id, &Region::default(), 2000, 3).unwrap().violated());
    }

    #[test]
    fn cobb_douglas_passes_pair_axioms() {
        let cd = FieldSpec::cobb_douglas(&[0.5, 0.5]).unwrap();
        let r = Region::default();
        assert!(!check_wwa(&cd, &r, 10_000, 42).unwrap().violated());
        assert!(!check_weak_axiom(&cd, &r, 10_000, 42).unwrap().violated());
    }

    #[test]
    fn constant_field_ties_break_the_weak_axiom_only() {
        let flat = FieldSpec::from_exprs(&["1", "2"]).unwrap();
        let r = Region::default();
        let weak = check_weak_axiom(&flat, &r, 200, 5).unwrap();
        assert!(weak.violated());
        let w = &weak.witnesses[0];
        assert!((w.values["g(x).y"] - w.values["g(x).x"]).abs() < 1e-9);
        assert!(!check_wwa(&flat, &r, 200, 5).unwrap().violated());
    }

    #[test]
    fn ville_verdicts() {
        let r = Region::default();
        let two = check_ville(&FieldSpec::identity(2).unwrap(), &r, 100, 1).unwrap();
        assert_eq!((two.samples_tested, two.violated()), (0, false));
        let ni = check_ville(&FieldSpec::noninteg3(), &r, 100, 1).unwrap();
        assert_eq!(ni.violations, 100);
        for w in &ni.witnesses {
            assert!((w.values["residual"] - 1.0).abs() < 1e-6);
        }
        let cd = FieldSpec::cobb_douglas(&[0.2, 0.3, 0.5]).unwrap();
        assert!(!check_ville(&cd, &r, 100, 1).unwrap().violated());
    }

    #[test]
    fn verdicts_survive_rescaling() {
        let r = Region::default();
        for f in [FieldSpec::cobb_douglas(&[0.2, 0.3, 0.5]).unwrap(), FieldSpec::noninteg3()] {
            let scaled = Rescaled::new(f.clone(), "1 + x1").unwrap();
            let (a1, a2) = sweep_a1_a2(&f, &r, 50, 8).unwrap();
            let (s1, s2) = sweep_a1_a2(&scaled, &r, 50, 8).unwrap();
            assert_eq!((a1.violations, a2.violations), (s1.violations, s2.violations));
            assert_eq!(sweep_b(&f, &r, 50, 8).unwrap().violations, sweep_b(&scaled, &r, 50, 8).unwrap().violations);
        }
    }

    #[test]
    fn triple_search() {
        let s = OdeSettings::default();
        let r = Region::default();
        let cd = FieldSpec::cobb_douglas(&[0.2, 0.3, 0.5]).unwrap();
        assert!(find_intransitive_triple(&cd, &r, 42, 100, &s).unwrap().is_none());
        assert!(find_intransitive_triple(&FieldSpec::identity(2).unwrap(), &r, 42, 10, &s).is_err());
        let ni = FieldSpec::noninteg3();
        let t = find_intransitive_triple(&ni, &r, 42, 200, &s).unwrap().unwrap();
        assert!(t.shrink_factor < 1.0);
        let [uxy, uyz, uzx] = t.leg_values(&ni, &s).unwrap();
        assert!((uxy - 1.0).abs() < 1e-6 && (uyz - 1.0).abs() < 1e-6);
        assert!((uzx * t.shrink_factor - 1.0).abs() < 1e-9);
    }

    #[test]
    fn ville_curve_for_noninteg3() {
        let s = OdeSettings::default();
        let ni = FieldSpec::noninteg3();
        let t = find_intransitive_triple(&ni, &Region::default(), 42, 200, &s).unwrap().unwrap();
        assert!(construct_ville_curve(&ni, &t, 0.0, &s).is_err());
        let eps = default_epsilon(&ni, &t).unwrap();
        let c = construct_ville_curve(&ni, &t, eps, &s).unwrap();
        assert!(c.samples.len() >= 1000);
        assert!(c.min_directional > 0.0, "{}", c.min_directional);
        assert!(c.closure_gap <= 1e-6 * norm(c.start()));
        for leg in &c.legs {
            assert!(leg.ray_residual < 1e-8);
        }
        assert!(strictly_below(&c.closing.0, &c.closing.1));
    }
}
