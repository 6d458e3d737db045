//! Counts of pointed Boltzmann maps read off the coding walk.

use super::MapError;
use crate::kernel::DisplacementLaw;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Step counts of a `μ`-walk run from 0 to its first visit of `-ℓ`, and the map counts they code.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct JsCounts {
    pub down_steps: u64,
    pub other_steps: u64,
    pub vertices: u64,
    pub faces: u64,
    pub edges: u64,
}

impl JsCounts {
    pub fn from_steps(down_steps: u64, other_steps: u64) -> Self {
        Self {
            down_steps,
            other_steps,
            vertices: down_steps + 1,
            faces: other_steps + 1,
            edges: down_steps + other_steps,
        }
    }

    pub fn euler(&self) -> i64 {
        self.vertices as i64 - self.edges as i64 + self.faces as i64
    }
}

/// Run the `μ`-walk until it first reaches `-ℓ`; counts only, no decoding.
pub fn pointed_js_counts<R: Rng + ?Sized>(
    mu: &DisplacementLaw,
    l: u64,
    rng: &mut R,
    max_steps: u64,
) -> Result<JsCounts, MapError> {
    let target = -(l as i64);
    let mut y = 0i64;
    let (mut down, mut other) = (0u64, 0u64);
    while y > target {
        if down + other >= max_steps {
            return Err(MapError::Size { edges: down + other, cap: max_steps });
        }
        let step = mu.sample_between(-1, i64::MAX, rng.gen());
        if step < 0 {
            down += 1;
        } else {
            other += 1;
        }
        y = y.saturating_add(step);
    }
    Ok(JsCounts::from_steps(down, other))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harmonic::h_down;
    use crate::kernel::{load_kernel, mu_law, weights_from_nu, KernelSpec};
    use crate::parallel::stream;
    use crate::stats::Welford;

    #[test]
    fn single_down_step_codes_one_edge() {
        let c = JsCounts::from_steps(1, 0);
        assert_eq!((c.vertices, c.faces, c.edges), (2, 1, 1));
        assert_eq!(c.euler(), 2);
    }

    #[test]
    fn inverse_vertex_count_debiases_to_one() {
        let law = load_kernel(&KernelSpec::Quad).unwrap();
        let (w, _) = weights_from_nu(&law).unwrap();
        let mu = mu_law(&w).unwrap();
        let c = 2.0 / law.pmf(-1);
        for l in [1u64, 2] {
            let mut acc = Welford::default();
            for s in 0..20_000 {
                let mut rng = stream(4, l, s);
                match pointed_js_counts(&mu, l, &mut rng, 200_000) {
                    Ok(counts) => {
                        assert_eq!(counts.euler(), 2);
                        acc.push(1.0 / counts.vertices as f64);
                    }
                    Err(_) => acc.push(0.0),
                }
            }
            let scale = 2.0 * h_down(l as i64) / (c * law.pmf(-(l as i64) - 1));
            let ratio = acc.mean * scale;
            assert!((ratio - 1.0).abs() < 4.0 * acc.sem() * scale, "l={l} ratio={ratio}");
        }
    }
}
