//! The money-pump demonstration: an intransitive triple, the closed curve
//! along which every move looks like an improvement, and the leg-by-leg story.

use serde::Serialize;

use crate::axioms::{construct_ville_curve, default_epsilon, find_intransitive_triple, IntransitiveTriple, VilleCurve};
use crate::error::{Error, Result};
use crate::field::{Bundle, Field};
use crate::linalg::{norm, proportionality_residual};
use crate::ode::OdeSettings;
use crate::sampling::Region;

pub const DEFAULT_BUDGET: usize = 500;

#[derive(Debug, Clone, Serialize)]
pub struct NarrativeRow {
    pub leg: usize,
    pub start: Vec<f64>,
    pub end: Vec<f64>,
    /// The two vectors whose span contains the leg.
    pub span_basis: (Vec<f64>, Vec<f64>),
    pub t_start: f64,
    pub t_end: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CheatReport {
    pub triple: (Bundle, Bundle, Bundle),
    /// `u(x, y)`, `u(y, z)`, `u(z, x)`.
    pub leg_values: [f64; 3],
    pub shrink_factor: f64,
    /// `|v3| / |x*|`: where the three trading legs leave the consumer on the starting ray.
    pub final_ray_multiple: f64,
    pub curve: VilleCurve,
    pub narrative: Vec<NarrativeRow>,
}

/// Outcome of re-checking a report from its numbers alone.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CheatCheck {
    /// Largest distance of a leg end from its ray, relative to the end's norm.
    pub max_ray_residual: f64,
    /// Largest mismatch between a leg end and the next leg start.
    pub max_joint_gap: f64,
    pub final_ray_multiple: f64,
    pub min_directional: f64,
    pub ok: bool,
}

impl CheatReport {
    pub fn check(&self) -> CheatCheck {
        let legs = &self.curve.legs;
        let max_ray_residual = legs.iter().map(|l| l.ray_residual).fold(0.0, f64::max);
        let mut max_joint_gap: f64 = 0.0;
        for pair in self.narrative.windows(2) {
            max_joint_gap = max_joint_gap.max(crate::linalg::dist(&pair[0].end, &pair[1].start));
        }
        let v3 = &self.curve.closing.0;
        let x_star = &self.curve.closing.1;
        let final_ray_multiple = norm(v3) / norm(x_star);
        let ok = max_ray_residual <= 1e-6
            && max_joint_gap <= 1e-6 * norm(x_star)
            && proportionality_residual(v3, x_star) <= 1e-6
            && final_ray_multiple < 1.0 - 1e-6
            && self.shrink_factor < 1.0
            && self.curve.min_directional > 0.0;
        CheatCheck {
            max_ray_residual,
            max_joint_gap,
            final_ray_multiple,
            min_directional: self.curve.min_directional,
            ok,
        }
    }

    /// Per-leg CSVs `t,x1..xn,g_dot_xdot`, one per piece of the curve.
    pub fn leg_csvs(&self) -> Vec<String> {
        let pieces: Vec<(f64, f64)> = self.narrative.iter().map(|r| (r.t_start, r.t_end)).collect();
        pieces
            .iter()
            .map(|(t0, t1)| {
                let rows: Vec<(f64, Vec<f64>)> = self
                    .curve
                    .samples
                    .iter()
                    .filter(|s| s.t >= *t0 && s.t <= *t1)
                    .map(|s| {
                        let mut r = s.point.clone();
                        r.push(s.directional);
                        (s.t, r)
                    })
                    .collect();
                crate::ode::rows_to_csv(rows.iter().map(|(t, r)| (*t, r.as_slice())), &["g_dot_xdot"])
            })
            .collect()
    }
}

fn narrative(curve: &VilleCurve) -> Vec<NarrativeRow> {
    let mut rows: Vec<NarrativeRow> = curve
        .legs
        .iter()
        .enumerate()
        .map(|(i, leg)| NarrativeRow {
            leg: i + 1,
            start: leg.start.to_vec(),
            end: leg.end.clone(),
            span_basis: (leg.start.to_vec(), leg.target.to_vec()),
            t_start: leg.t_start,
            t_end: leg.t_start + leg.duration,
        })
        .collect();
    let (v3, x_star) = curve.closing.clone();
    rows.push(NarrativeRow {
        leg: rows.len() + 1,
        start: v3.clone(),
        end: x_star.clone(),
        span_basis: (v3, x_star),
        t_start: curve.total_time - 1.0,
        t_end: curve.total_time,
    });
    rows
}

/// Assembles a report from a triple already known to be intransitive.
pub fn cheat_from_triple<F: Field + ?Sized>(
    field: &F,
    triple: &IntransitiveTriple,
    settings: &OdeSettings,
) -> Result<CheatReport> {
    let epsilon = default_epsilon(field, triple)?;
    let curve = construct_ville_curve(field, triple, epsilon, settings)?;
    let leg_values = triple.leg_values(field, settings)?;
    Ok(CheatReport {
        triple: (triple.x.clone(), triple.y.clone(), triple.z.clone()),
        leg_values,
        shrink_factor: triple.shrink_factor,
        final_ray_multiple: norm(&curve.closing.0) / norm(&curve.closing.1),
        narrative: narrative(&curve),
        curve,
    })
}

/// Searches for an intransitive triple and, if one exists, builds the curve.
pub fn demonstrate_cheat<F: Field + ?Sized>(
    field: &F,
    region: &Region,
    seed: u64,
    settings: &OdeSettings,
) -> Result<Option<CheatReport>> {
    demonstrate_cheat_with_budget(field, region, seed, DEFAULT_BUDGET, settings)
}

pub fn demonstrate_cheat_with_budget<F: Field + ?Sized>(
    field: &F,
    region: &Region,
    seed: u64,
    budget: usize,
    settings: &OdeSettings,
) -> Result<Option<CheatReport>> {
    if field.dim() < 3 {
        return Err(Error::Invalid(
            "a money pump needs at least three goods: with two goods every field satisfies Ville's axiom".into(),
        ));
    }
    match find_intransitive_triple(field, region, seed, budget, settings)? {
        Some(triple) => cheat_from_triple(field, &triple, settings).map(Some),
        None => Ok(None),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::FieldSpec;

    #[test]
    fn noninteg3_is_easily_cheated() {
        let s = OdeSettings::default();
        let f = FieldSpec::noninteg3();
        let r = demonstrate_cheat(&f, &Region::default(), 42, &s).unwrap().unwrap();
        let check = r.check();
        assert!(check.ok, "{check:?}");
        assert_eq!(r.narrative.len(), 4);
        assert_eq!(r.leg_csvs().len(), 4);
        assert!(r.shrink_factor < 1.0);
    }

    #[test]
    fn transitive_and_planar_cases() {
        let s = OdeSettings::default();
        let cd = FieldSpec::cobb_douglas(&[0.2, 0.3, 0.5]).unwrap();
        assert!(demonstrate_cheat_with_budget(&cd, &Region::default(), 42, 100, &s).unwrap().is_none());
        let two = FieldSpec::identity(2).unwrap();
        assert!(demonstrate_cheat(&two, &Region::default(), 42, &s).is_err());
    }
}
