//! Watching strategies: viewpoint sets on the sphere of radius `gamma`.
//!
//! Random viewpoints come from a ChaCha8 stream seeded with `seed`
//! (`rand_chacha::ChaCha8Rng::seed_from_u64`). Each draw takes the top 53 bits
//! of one `next_u64` output, so the sequence is identical on every platform.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Viewpoint;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyKind {
    Loop,
    Helix,
    Random,
}

impl StrategyKind {
    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::Loop => "loop",
            StrategyKind::Helix => "helix",
            StrategyKind::Random => "random",
        }
    }
}

impl std::str::FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "loop" => Ok(StrategyKind::Loop),
            "helix" => Ok(StrategyKind::Helix),
            "random" => Ok(StrategyKind::Random),
            other => Err(Error::InvalidStrategy(format!("unknown strategy '{other}'"))),
        }
    }
}

impl std::fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrategySpec {
    pub kind: StrategyKind,
    /// Degrees; used by Loop and Helix.
    pub theta_step: f64,
    /// Degrees; used by Loop and Helix.
    pub phi_step: f64,
    /// Used by Random.
    pub count: usize,
    pub gamma: f64,
    /// Used by Random.
    pub seed: u64,
}

impl StrategySpec {
    pub fn grid(kind: StrategyKind, theta_step: f64, phi_step: f64, gamma: f64) -> Self {
        Self {
            kind,
            theta_step,
            phi_step,
            count: 0,
            gamma,
            seed: 0,
        }
    }

    pub fn random(count: usize, gamma: f64, seed: u64) -> Self {
        Self {
            kind: StrategyKind::Random,
            theta_step: 0.0,
            phi_step: 0.0,
            count,
            gamma,
            seed,
        }
    }

    /// Checks the invariants and returns `(n_theta, n_phi_rings)` for grid kinds.
    pub fn validate(&self) -> Result<(usize, usize)> {
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(Error::InvalidStrategy(format!(
                "gamma {} must be > 0",
                self.gamma
            )));
        }
        match self.kind {
            StrategyKind::Random => {
                if self.count == 0 {
                    return Err(Error::InvalidStrategy("random count must be >= 1".into()));
                }
                Ok((0, 0))
            }
            StrategyKind::Loop | StrategyKind::Helix => {
                let n_theta = divisions(360.0, self.theta_step, "theta_step")?;
                let n_phi = divisions(90.0, self.phi_step, "phi_step")?;
                Ok((n_theta, n_phi + 1))
            }
        }
    }

    /// Number of viewpoints `generate` will emit.
    pub fn viewpoint_count(&self) -> Result<usize> {
        let (n_theta, n_rings) = self.validate()?;
        Ok(match self.kind {
            StrategyKind::Random => self.count,
            _ => n_theta * n_rings,
        })
    }
}

fn divisions(span: f64, step: f64, name: &str) -> Result<usize> {
    if !(step.is_finite() && step > 0.0) {
        return Err(Error::InvalidStrategy(format!("{name} {step} must be > 0")));
    }
    let n = span / step;
    let rounded = n.round();
    if rounded < 1.0 || (n - rounded).abs() > 1e-9 {
        return Err(Error::InvalidStrategy(format!(
            "{span} is not divisible by {name} {step}"
        )));
    }
    Ok(rounded as usize)
}

/// Generates the viewpoint list for a strategy.
///
/// Loop visits rings of constant `phi` from 0 up to 90 inclusive, each ring
/// sweeping `theta` upward. Helix visits the same grid as one continuous route,
/// reversing the `theta` direction on every other ring.
pub fn generate(spec: &StrategySpec) -> Result<Vec<Viewpoint>> {
    let (n_theta, n_rings) = spec.validate()?;
    match spec.kind {
        StrategyKind::Loop | StrategyKind::Helix => {
            let mut out = Vec::with_capacity(n_theta * n_rings);
            for ring in 0..n_rings {
                let phi = (ring as f64 * spec.phi_step).min(90.0);
                let reverse = spec.kind == StrategyKind::Helix && ring % 2 == 1;
                for i in 0..n_theta {
                    let idx = if reverse { n_theta - 1 - i } else { i };
                    out.push(Viewpoint::new(idx as f64 * spec.theta_step, phi, spec.gamma)?);
                }
            }
            Ok(out)
        }
        StrategyKind::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            (0..spec.count)
                .map(|_| {
                    let theta = 360.0 * unit_half_open(&mut rng);
                    let phi = 90.0 * unit_closed(&mut rng);
                    Viewpoint::new(theta, phi, spec.gamma)
                })
                .collect()
        }
    }
}

const TWO_POW_53: f64 = 9_007_199_254_740_992.0;

/// Uniform in `[0, 1)`.
fn unit_half_open(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 / TWO_POW_53
}

/// Uniform in `[0, 1]`.
fn unit_closed(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 / (TWO_POW_53 - 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn count(kind: StrategyKind, ts: f64, ps: f64) -> usize {
        generate(&StrategySpec::grid(kind, ts, ps, 4.0)).unwrap().len()
    }

    fn sorted_pairs(v: &[Viewpoint]) -> Vec<(u64, u64)> {
        let mut pairs: Vec<_> = v
            .iter()
            .map(|p| (p.theta().to_bits(), p.phi().to_bits()))
            .collect();
        pairs.sort_unstable();
        pairs
    }

    #[test]
    fn grid_counts_match_reported_rows() {
        for kind in [StrategyKind::Loop, StrategyKind::Helix] {
            assert_eq!(count(kind, 10.0, 30.0), 144);
            assert_eq!(count(kind, 5.0, 30.0), 288);
            assert_eq!(count(kind, 10.0, 15.0), 252);
            assert_eq!(count(kind, 5.0, 15.0), 504);
        }
    }

    #[test]
    fn helix_is_a_reordering_of_loop() {
        let lp = generate(&StrategySpec::grid(StrategyKind::Loop, 10.0, 30.0, 4.0)).unwrap();
        let hx = generate(&StrategySpec::grid(StrategyKind::Helix, 10.0, 30.0, 4.0)).unwrap();
        assert_eq!(hx.len(), 144);
        assert_eq!(sorted_pairs(&lp), sorted_pairs(&hx));
        assert_ne!(lp, hx);
    }

    #[test]
    fn helix_route_is_continuous() {
        let hx = generate(&StrategySpec::grid(StrategyKind::Helix, 10.0, 30.0, 4.0)).unwrap();
        for w in hx.windows(2) {
            let dt = (w[0].theta() - w[1].theta()).abs();
            let dp = (w[0].phi() - w[1].phi()).abs();
            // either a theta step along a ring or a phi step between rings
            assert!((dt == 10.0 && dp == 0.0) || (dt == 0.0 && dp == 30.0), "{w:?}");
        }
    }

    #[test]
    fn loop_includes_both_phi_endpoints() {
        let lp = generate(&StrategySpec::grid(StrategyKind::Loop, 10.0, 30.0, 4.0)).unwrap();
        assert_eq!(lp[0].phi(), 0.0);
        assert_eq!(lp.last().unwrap().phi(), 90.0);
        assert!(lp.iter().all(|v| v.gamma() == 4.0));
    }

    #[test]
    fn random_is_deterministic_and_in_range() {
        let spec = StrategySpec::random(144, 4.0, 7);
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 144);
        assert!(a
            .iter()
            .all(|v| (0.0..360.0).contains(&v.theta()) && (0.0..=90.0).contains(&v.phi())));
        let c = generate(&StrategySpec::random(144, 4.0, 8)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn random_stream_is_pinned() {
        let v = generate(&StrategySpec::random(2, 1.0, 7)).unwrap();
        // Frozen from the ChaCha8 stream; changes here alter every random dataset.
        let got: Vec<(f64, f64)> = v.iter().map(|p| (p.theta(), p.phi())).collect();
        assert_eq!(got, PINNED_SEED7);
    }

    const PINNED_SEED7: [(f64, f64); 2] = [
        (56.80659492742297, 15.11904264948912),
        (253.5394060931243, 65.40671670419387),
    ];

    #[test]
    fn divisibility_errors() {
        assert!(generate(&StrategySpec::grid(StrategyKind::Loop, 7.0, 30.0, 4.0)).is_err());
        assert!(generate(&StrategySpec::grid(StrategyKind::Loop, 10.0, 40.0, 4.0)).is_err());
        assert!(generate(&StrategySpec::grid(StrategyKind::Loop, 0.0, 30.0, 4.0)).is_err());
        assert!(generate(&StrategySpec::random(0, 4.0, 1)).is_err());
        assert!(generate(&StrategySpec::grid(StrategyKind::Loop, 10.0, 30.0, -1.0)).is_err());
        assert_eq!(count(StrategyKind::Loop, 22.5, 30.0), 64);
    }
}
