//! Low-discrepancy sample sets (additive recurrence on the plastic number).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const PLASTIC: f64 = 1.324_717_957_244_746;

/// The `R₂` sequence `frac(s + n·(1/ρ, 1/ρ²))` with a seeded offset `s`.
#[derive(Debug, Clone)]
pub struct R2 {
    offset: [f64; 2],
    n: u64,
}

impl R2 {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        R2 {
            offset: [rng.random::<f64>(), rng.random::<f64>()],
            n: 0,
        }
    }

    /// `k`-th point of the sequence without advancing.
    pub fn point(&self, k: u64) -> [f64; 2] {
        let a1 = 1.0 / PLASTIC;
        let a2 = a1 * a1;
        let k = k as f64 + 1.0;
        [(self.offset[0] + k * a1).fract(), (self.offset[1] + k * a2).fract()]
    }

    pub fn take_points(&mut self, count: usize) -> Vec<[f64; 2]> {
        let out = (0..count as u64).map(|i| self.point(self.n + i)).collect();
        self.n += count as u64;
        out
    }
}

impl Iterator for R2 {
    type Item = [f64; 2];

    fn next(&mut self) -> Option<[f64; 2]> {
        let p = self.point(self.n);
        self.n += 1;
        Some(p)
    }
}

/// One-dimensional golden-ratio sequence with a seeded offset.
pub fn golden_sequence(seed: u64, count: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s: f64 = rng.random();
    let g = (5f64.sqrt() - 1.0) / 2.0;
    (1..=count).map(|k| (s + k as f64 * g).fract()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_in_unit_square() {
        let a: Vec<_> = R2::new(7).take(100).collect();
        let b: Vec<_> = R2::new(7).take(100).collect();
        assert_eq!(a, b);
        assert!(a.iter().all(|p| (0.0..1.0).contains(&p[0]) && (0.0..1.0).contains(&p[1])));
        assert_ne!(a, R2::new(8).take(100).collect::<Vec<_>>());
    }

    #[test]
    fn fills_quadrants_evenly() {
        let pts: Vec<_> = R2::new(1).take(400).collect();
        for qx in 0..2 {
            for qy in 0..2 {
                let c = pts
                    .iter()
                    .filter(|p| (p[0] >= 0.5) == (qx == 1) && (p[1] >= 0.5) == (qy == 1))
                    .count();
                assert!((90..=110).contains(&c), "{c}");
            }
        }
    }
}
