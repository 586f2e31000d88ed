//! Seeded random admissible potentials.

use crate::model::{BasicFunction, TransverseModel};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Minimum Monge-Ampère ratio required of sampled potentials.
pub const DEFAULT_MARGIN: f64 = 0.1;

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Band-limited Gaussian potential with coefficient decay `(l(l+1))^{-3/2}`,
/// halved until the ratio against the background stays above `margin`.
pub fn random_potential<R: Rng + ?Sized>(model: &TransverseModel, rng: &mut R, margin: f64) -> BasicFunction {
    let modes = model.grid().modes();
    let mut constant = 0.0;
    let coeffs: Vec<f64> = modes
        .iter()
        .map(|mode| {
            let z: f64 = rng.sample(StandardNormal);
            if mode.degree == 0 {
                constant = 0.5 * z;
                0.0
            } else {
                let l = mode.degree as f64;
                0.6 * z / (l * (l + 1.0)).powf(1.5)
            }
        })
        .collect();
    let mut shape = model.function_from_coeffs(coeffs).expect("coefficient count matches the basis");
    while min_ratio_of(model, &shape) < margin {
        shape = shape.scaled(0.5);
    }
    shape.shifted(constant)
}

fn min_ratio_of(model: &TransverseModel, u: &BasicFunction) -> f64 {
    model.density_of(u).iter().zip(model.background_density()).map(|(a, b)| a / b).fold(f64::INFINITY, f64::min)
}

/// A random potential scaled so that `min ratio >= margin` and multiplied
/// by `amplitude` afterwards (used for small seeded perturbations).
pub fn random_perturbation<R: Rng + ?Sized>(model: &TransverseModel, rng: &mut R, amplitude: f64) -> BasicFunction {
    let f = random_potential(model, rng, DEFAULT_MARGIN);
    let scale = f.max_abs().max(1e-300);
    f.scaled(amplitude / scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, ModelConfig, SymmetryMode};

    #[test]
    fn sampled_potentials_meet_margin() {
        let model = build_model(ModelConfig::canonical(16, SymmetryMode::Full)).unwrap();
        let mut rng = seeded_rng(7);
        for _ in 0..20 {
            let u = random_potential(&model, &mut rng, DEFAULT_MARGIN);
            assert!(min_ratio_of(&model, &u) >= DEFAULT_MARGIN);
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let model = build_model(ModelConfig::canonical(12, SymmetryMode::Even)).unwrap();
        let a = random_potential(&model, &mut seeded_rng(3), 0.1);
        let b = random_potential(&model, &mut seeded_rng(3), 0.1);
        assert_eq!(a, b);
    }
}
