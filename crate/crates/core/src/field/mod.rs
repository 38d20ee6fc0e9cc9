//! Subjective-value vector fields on the strictly positive orthant.

pub mod expr;

use std::fmt;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::dot;
pub use expr::{parse_direction_expr, parse_field_expr, Env, Expr};

/// Relative step of the central-difference Jacobian.
pub const FD_RELATIVE_STEP: f64 = 1e-6;

/// Components in `[-RANGE_SLACK, 0)` are treated as roundoff and clamped to zero.
pub const RANGE_SLACK: f64 = 1e-12;

/// A consumption vector with at least two strictly positive coordinates.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct Bundle(Vec<f64>);

impl Bundle {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.len() < 2 {
            return Err(Error::Invalid(format!(
                "a bundle needs at least two goods, got {}",
                coords.len()
            )));
        }
        check_positive(&coords)?;
        Ok(Bundle(coords))
    }

    pub fn from_slice(coords: &[f64]) -> Result<Self> {
        Bundle::new(coords.to_vec())
    }

    /// Diagonal bundle `(1, ..., 1)`.
    pub fn ones(n: usize) -> Self {
        Bundle(vec![1.0; n.max(2)])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Bundle::new(self.0.iter().map(|c| c * factor).collect())
    }
}

impl std::ops::Deref for Bundle {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl<'de> Deserialize<'de> for Bundle {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let coords = Vec::<f64>::deserialize(d)?;
        Bundle::new(coords).map_err(serde::de::Error::custom)
    }
}

pub(crate) fn check_positive(x: &[f64]) -> Result<()> {
    if x.iter().all(|c| c.is_finite() && *c > 0.0) {
        Ok(())
    } else {
        Err(Error::Domain(format!("{x:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JacobianMode {
    Analytic,
    FiniteDifference,
}

#[derive(Debug, Clone)]
pub struct JacobianEstimate {
    pub matrix: DMatrix<f64>,
    pub mode: JacobianMode,
    /// Per-coordinate steps when `mode` is finite-difference.
    pub steps: Option<Vec<f64>>,
}

/// A locally Lipschitz map from the positive orthant into the nonnegative
/// orthant minus the origin.
///
/// Implementors provide the raw value and optionally an analytic Jacobian;
/// range validation and finite differences come from the provided methods.
pub trait Field: Send + Sync {
    fn dim(&self) -> usize;

    /// Unvalidated `g(x)`.
    fn value(&self, x: &[f64]) -> Result<Vec<f64>>;

    fn analytic_jacobian(&self, _x: &[f64]) -> Option<DMatrix<f64>> {
        None
    }

    fn jacobian_mode(&self) -> JacobianMode {
        JacobianMode::FiniteDifference
    }

    /// Validated `g(x)`: rejects points outside the orthant and values with
    /// negative components or all components zero.
    fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: x.len(),
            });
        }
        check_positive(x)?;
        let mut g = self.value(x)?;
        validate_range(x, &mut g)?;
        Ok(g)
    }

    fn jacobian(&self, x: &[f64]) -> Result<JacobianEstimate> {
        if x.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: x.len(),
            });
        }
        check_positive(x)?;
        if self.jacobian_mode() == JacobianMode::Analytic {
            if let Some(matrix) = self.analytic_jacobian(x) {
                return Ok(JacobianEstimate {
                    matrix,
                    mode: JacobianMode::Analytic,
                    steps: None,
                });
            }
        }
        fd_jacobian(self, x)
    }
}

impl<F: Field + ?Sized> Field for &F {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn value(&self, x: &[f64]) -> Result<Vec<f64>> {
        (**self).value(x)
    }
    fn analytic_jacobian(&self, x: &[f64]) -> Option<DMatrix<f64>> {
        (**self).analytic_jacobian(x)
    }
    fn jacobian_mode(&self) -> JacobianMode {
        (**self).jacobian_mode()
    }
}

fn validate_range(x: &[f64], g: &mut [f64]) -> Result<()> {
    let bad = |g: &[f64]| Error::Range {
        point: x.to_vec(),
        value: g.to_vec(),
    };
    if g.iter().any(|c| !c.is_finite() || *c < -RANGE_SLACK) {
        return Err(bad(g));
    }
    for c in g.iter_mut() {
        if *c < 0.0 {
            *c = 0.0;
        }
    }
    if g.iter().all(|c| *c == 0.0) {
        return Err(bad(g));
    }
    Ok(())
}

/// Central differences, column `j` = `(g(x + h e_j) - g(x - h e_j)) / (2h)`
/// with `h = 1e-6 max(1, |x_j|)`.
pub fn fd_jacobian<F: Field + ?Sized>(field: &F, x: &[f64]) -> Result<JacobianEstimate> {
    let n = x.len();
    let mut matrix = DMatrix::zeros(n, n);
    let mut steps = Vec::with_capacity(n);
    let mut probe = x.to_vec();
    for j in 0..n {
        let h = FD_RELATIVE_STEP * x[j].abs().max(1.0);
        let (hi, lo) = (x[j] + h, x[j] - h);
        if lo <= 0.0 {
            return Err(Error::Stencil { coordinate: j });
        }
        probe[j] = hi;
        let g_hi = field.value(&probe)?;
        probe[j] = lo;
        let g_lo = field.value(&probe)?;
        probe[j] = x[j];
        // the representable step, not the nominal one
        let width = hi - lo;
        for i in 0..n {
            matrix[(i, j)] = (g_hi[i] - g_lo[i]) / width;
        }
        steps.push(h);
    }
    Ok(JacobianEstimate {
        matrix,
        mode: JacobianMode::FiniteDifference,
        steps: Some(steps),
    })
}

/// Built-in reference fields.
#[derive(Debug, Clone, PartialEq)]
pub enum Builtin {
    /// `g_i = alpha_i / x_i`.
    CobbDouglas { alpha: Vec<f64> },
    /// `g(x) = x`.
    Identity { n: usize },
    /// `g_i = alpha_i x_i^(rho - 1)`, the gradient of a CES aggregator.
    Ces { alpha: Vec<f64>, rho: f64 },
    /// `g(x) = (x2, 1, 1)`.
    NonIntegrable3,
}

impl Builtin {
    pub fn dim(&self) -> usize {
        match self {
            Builtin::CobbDouglas { alpha } | Builtin::Ces { alpha, .. } => alpha.len(),
            Builtin::Identity { n } => *n,
            Builtin::NonIntegrable3 => 3,
        }
    }

    pub fn family(&self) -> &'static str {
        match self {
            Builtin::CobbDouglas { .. } => "cobb_douglas",
            Builtin::Identity { .. } => "identity",
            Builtin::Ces { .. } => "ces",
            Builtin::NonIntegrable3 => "noninteg3",
        }
    }

    fn value(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Builtin::CobbDouglas { alpha } => alpha.iter().zip(x).map(|(a, xi)| a / xi).collect(),
            Builtin::Identity { .. } => x.to_vec(),
            Builtin::Ces { alpha, rho } => alpha
                .iter()
                .zip(x)
                .map(|(a, xi)| a * xi.powf(rho - 1.0))
                .collect(),
            Builtin::NonIntegrable3 => vec![x[1], 1.0, 1.0],
        }
    }

    fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        let n = self.dim();
        match self {
            Builtin::CobbDouglas { alpha } => {
                DMatrix::from_fn(n, n, |i, j| if i == j { -alpha[i] / (x[i] * x[i]) } else { 0.0 })
            }
            Builtin::Identity { .. } => DMatrix::identity(n, n),
            Builtin::Ces { alpha, rho } => DMatrix::from_fn(n, n, |i, j| {
                if i == j {
                    alpha[i] * (rho - 1.0) * x[i].powf(rho - 2.0)
                } else {
                    0.0
                }
            }),
            Builtin::NonIntegrable3 => {
                let mut m = DMatrix::zeros(3, 3);
                m[(0, 1)] = 1.0;
                m
            }
        }
    }
}

#[derive(Debug, Clone)]
pub enum FieldDefinition {
    Builtin(Builtin),
    Expressions(Vec<Expr>),
}

/// An immutable field definition plus its Jacobian policy.
#[derive(Debug, Clone)]
pub struct FieldSpec {
    dim: usize,
    definition: FieldDefinition,
    jacobian: JacobianMode,
}

impl FieldSpec {
    pub fn builtin(builtin: Builtin) -> Result<Self> {
        let dim = builtin.dim();
        if dim < 2 {
            return Err(Error::Config("fields need at least two goods".into()));
        }
        match &builtin {
            Builtin::CobbDouglas { alpha } | Builtin::Ces { alpha, .. }
                if alpha.iter().any(|a| !(a.is_finite() && *a > 0.0)) => {
                    return Err(Error::Config(format!("weights must be positive: {alpha:?}")));
                }
            _ => {}
        }
        if let Builtin::Ces { rho, .. } = &builtin {
            if !rho.is_finite() || *rho == 0.0 || *rho >= 1.0 {
                return Err(Error::Config(format!("ces needs rho < 1, rho != 0; got {rho}")));
            }
        }
        Ok(FieldSpec {
            dim,
            definition: FieldDefinition::Builtin(builtin),
            jacobian: JacobianMode::Analytic,
        })
    }

    pub fn cobb_douglas(alpha: &[f64]) -> Result<Self> {
        FieldSpec::builtin(Builtin::CobbDouglas {
            alpha: alpha.to_vec(),
        })
    }

    pub fn identity(n: usize) -> Result<Self> {
        FieldSpec::builtin(Builtin::Identity { n })
    }

    pub fn ces(alpha: &[f64], rho: f64) -> Result<Self> {
        FieldSpec::builtin(Builtin::Ces {
            alpha: alpha.to_vec(),
            rho,
        })
    }

    pub fn noninteg3() -> Self {
        FieldSpec {
            dim: 3,
            definition: FieldDefinition::Builtin(Builtin::NonIntegrable3),
            jacobian: JacobianMode::Analytic,
        }
    }

    /// Field from one expression per component, differentiated numerically.
    pub fn from_exprs<S: AsRef<str>>(components: &[S]) -> Result<Self> {
        let dim = components.len();
        if dim < 2 {
            return Err(Error::Config("fields need at least two goods".into()));
        }
        let exprs = components
            .iter()
            .map(|c| parse_field_expr(c.as_ref(), dim))
            .collect::<Result<Vec<_>>>()?;
        Ok(FieldSpec {
            dim,
            definition: FieldDefinition::Expressions(exprs),
            jacobian: JacobianMode::FiniteDifference,
        })
    }

    /// Forces finite-difference Jacobians even for builtins.
    pub fn with_fd_jacobian(mut self) -> Self {
        self.jacobian = JacobianMode::FiniteDifference;
        self
    }

    pub fn definition(&self) -> &FieldDefinition {
        &self.definition
    }

    pub fn describe(&self) -> String {
        match &self.definition {
            FieldDefinition::Builtin(b) => b.family().to_string(),
            FieldDefinition::Expressions(e) => {
                let parts: Vec<String> = e.iter().map(|c| c.to_string()).collect();
                format!("expr[{}]", parts.join(", "))
            }
        }
    }

    pub fn from_config(config: &FieldConfig) -> Result<Self> {
        let spec = match config.kind.as_str() {
            "builtin" => {
                let family = config
                    .family
                    .as_deref()
                    .ok_or_else(|| Error::Config("builtin field needs \"family\"".into()))?;
                let n = config.n;
                let params = &config.params;
                let builtin = match family {
                    "cobb_douglas" => Builtin::CobbDouglas {
                        alpha: if params.is_empty() { vec![1.0; n] } else { params.clone() },
                    },
                    "identity" => Builtin::Identity { n },
                    "ces" => {
                        if params.len() != n + 1 {
                            return Err(Error::Config(format!(
                                "ces expects n + 1 = {} params (weights then rho), got {}",
                                n + 1,
                                params.len()
                            )));
                        }
                        Builtin::Ces {
                            alpha: params[..n].to_vec(),
                            rho: params[n],
                        }
                    }
                    "noninteg3" => Builtin::NonIntegrable3,
                    other => return Err(Error::Config(format!("unknown family {other:?}"))),
                };
                if builtin.dim() != n {
                    return Err(Error::Config(format!(
                        "family {family} has dimension {}, config says n = {n}",
                        builtin.dim()
                    )));
                }
                FieldSpec::builtin(builtin)?
            }
            "expr" => {
                if config.components.len() != config.n {
                    return Err(Error::Config(format!(
                        "expected {} components, got {}",
                        config.n,
                        config.components.len()
                    )));
                }
                FieldSpec::from_exprs(&config.components)?
            }
            other => return Err(Error::Config(format!("unknown field kind {other:?}"))),
        };
        match (config.jacobian.as_deref(), &spec.definition) {
            (None, _) | (Some("analytic"), FieldDefinition::Builtin(_)) => Ok(spec),
            (Some("fd"), _) => Ok(spec.with_fd_jacobian()),
            (Some("analytic"), FieldDefinition::Expressions(_)) => Err(Error::Config(
                "analytic Jacobians are only available for builtin fields".into(),
            )),
            (Some(other), _) => Err(Error::Config(format!("unknown jacobian mode {other:?}"))),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let config: FieldConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        FieldSpec::from_config(&config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        FieldSpec::from_json(&text)
    }
}

impl fmt::Display for FieldSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.describe())
    }
}

impl Field for FieldSpec {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &[f64]) -> Result<Vec<f64>> {
        match &self.definition {
            FieldDefinition::Builtin(b) => Ok(b.value(x)),
            FieldDefinition::Expressions(exprs) => {
                let env = Env::point(x);
                exprs.iter().map(|e| e.eval(&env)).collect()
            }
        }
    }

    fn analytic_jacobian(&self, x: &[f64]) -> Option<DMatrix<f64>> {
        match &self.definition {
            FieldDefinition::Builtin(b) => Some(b.jacobian(x)),
            FieldDefinition::Expressions(_) => None,
        }
    }

    fn jacobian_mode(&self) -> JacobianMode {
        self.jacobian
    }
}

/// On-disk field description.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldConfig {
    pub n: usize,
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub params: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub components: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jacobian: Option<String>,
}

/// `c(x) g(x)` for a positive scalar expression `c`.
///
/// Orders and preferences induced by the rescaled field coincide with the
/// original; only speeds and multipliers change.
#[derive(Debug, Clone)]
pub struct Rescaled<F> {
    pub base: F,
    pub factor: Expr,
}

impl<F: Field> Rescaled<F> {
    pub fn new(base: F, factor: &str) -> Result<Self> {
        let factor = parse_field_expr(factor, base.dim())?;
        Ok(Rescaled { base, factor })
    }

    fn factor_at(&self, x: &[f64]) -> Result<f64> {
        let c = self.factor.eval(&Env::point(x))?;
        if c > 0.0 {
            Ok(c)
        } else {
            Err(Error::Evaluation(format!("rescaling factor {c} is not positive")))
        }
    }
}

impl<F: Field> Field for Rescaled<F> {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn value(&self, x: &[f64]) -> Result<Vec<f64>> {
        let c = self.factor_at(x)?;
        Ok(self.base.value(x)?.into_iter().map(|g| c * g).collect())
    }

    fn analytic_jacobian(&self, x: &[f64]) -> Option<DMatrix<f64>> {
        // product rule with a central-difference gradient of the factor
        let base_jac = self.base.analytic_jacobian(x)?;
        let g = self.base.value(x).ok()?;
        let c = self.factor_at(x).ok()?;
        let n = x.len();
        let mut grad = vec![0.0; n];
        let mut probe = x.to_vec();
        for j in 0..n {
            let h = FD_RELATIVE_STEP * x[j].abs().max(1.0);
            probe[j] = x[j] + h;
            let hi = self.factor.eval(&Env::point(&probe)).ok()?;
            probe[j] = x[j] - h;
            let lo = self.factor.eval(&Env::point(&probe)).ok()?;
            probe[j] = x[j];
            grad[j] = (hi - lo) / (2.0 * h);
        }
        Some(DMatrix::from_fn(n, n, |i, j| c * base_jac[(i, j)] + g[i] * grad[j]))
    }

    fn jacobian_mode(&self) -> JacobianMode {
        self.base.jacobian_mode()
    }
}

/// `g(x) . y`.
pub fn value_dot<F: Field + ?Sized>(field: &F, x: &[f64], y: &[f64]) -> Result<f64> {
    Ok(dot(&field.eval(x)?, y))
}
