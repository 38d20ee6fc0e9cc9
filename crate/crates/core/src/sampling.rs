//! Seeded sampling over boxes and budget sets.
//!
//! Every parallel task gets its own generator derived from `(seed, index)`, so
//! results do not depend on scheduling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::Bundle;
use crate::linalg::dot;

/// Axis-aligned box `[lo, hi]^n` inside the orthant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub lo: f64,
    pub hi: f64,
}

impl Default for Region {
    fn default() -> Self {
        Region { lo: 0.5, hi: 2.0 }
    }
}

impl Region {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo > 0.0 && hi > lo && hi.is_finite()) {
            return Err(Error::Config(format!(
                "region must satisfy 0 < lo < hi, got [{lo}, {hi}]"
            )));
        }
        Ok(Region { lo, hi })
    }

    /// Parses `"lo,hi"`.
    pub fn parse(text: &str) -> Result<Self> {
        let parts: Vec<&str> = text.split(',').map(str::trim).collect();
        if parts.len() != 2 {
            return Err(Error::Config(format!("region `{text}`: expected lo,hi")));
        }
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| Error::Config(format!("region `{text}`: bad number `{s}`")))
        };
        Region::new(num(parts[0])?, num(parts[1])?)
    }

    pub fn sample(&self, rng: &mut impl Rng, n: usize) -> Bundle {
        Bundle::new((0..n).map(|_| rng.gen_range(self.lo..self.hi)).collect())
            .expect("region lies inside the orthant")
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().all(|c| *c >= self.lo && *c <= self.hi)
    }
}

/// Per-task generator; mixes `seed` and `index` so neighbouring tasks are unrelated.
pub fn task_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    let mut rng = ChaCha8Rng::seed_from_u64(z);
    rng.set_stream(index);
    rng
}

/// Uniform point on `{x >> 0 : p.x = m}` via a flat Dirichlet draw on budget shares.
pub fn budget_point(rng: &mut impl Rng, p: &[f64], m: f64) -> Bundle {
    let w: Vec<f64> = (0..p.len()).map(|_| -rng.gen::<f64>().max(1e-300).ln()).collect();
    let total: f64 = w.iter().sum();
    let x = w.iter().zip(p).map(|(wi, pi)| (wi / total).max(1e-6) * m / pi).collect();
    let x = Bundle::new(x).expect("positive shares");
    rescale_to_budget(&x, p, m)
}

/// Point of the budget set `{p.x <= m}` drawn uniformly by volume.
pub fn budget_set_point(rng: &mut impl Rng, p: &[f64], m: f64) -> Bundle {
    let n = p.len();
    let face = budget_point(rng, p, m);
    let r = rng.gen::<f64>().powf(1.0 / n as f64);
    face.scaled(r.max(1e-3)).expect("positive radius")
}

pub fn rescale_to_budget(x: &Bundle, p: &[f64], m: f64) -> Bundle {
    x.scaled(m / dot(p, x)).expect("positive bundle and budget")
}
