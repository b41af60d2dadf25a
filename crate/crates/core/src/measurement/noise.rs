//! Measurement corruption models.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::MeasurementVector;
use crate::error::{Error, Result};

fn mean_square(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, count) = values.fold((0.0, 0usize), |(s, c), v| (s + v * v, c + 1));
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// Additive white Gaussian noise at a vector-wide signal-to-noise ratio.
///
/// The noise variance is `mean(z^2) / 10^(snr_db / 10)` over the available
/// entries. `f64::INFINITY` disables noise.
pub fn add_gaussian_noise(clean: &MeasurementVector, snr_db: f64, seed: u64) -> MeasurementVector {
    if snr_db == f64::INFINITY {
        return clean.clone();
    }
    let signal = mean_square(
        clean
            .values
            .iter()
            .zip(&clean.mask)
            .filter(|(_, &a)| a)
            .map(|(v, _)| *v),
    );
    let sigma = (signal / 10f64.powf(snr_db / 10.0)).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut noisy = clean.clone();
    for (value, &available) in noisy.values.iter_mut().zip(&clean.mask) {
        let e: f64 = StandardNormal.sample(&mut rng);
        if available {
            *value += sigma * e;
        }
    }
    noisy
}

/// Bounded multiplicative error: each entry moves by a uniform fraction in
/// `[0, max_pct]` of its magnitude, upwards for the first half of the
/// vector (rounded up) and downwards for the rest.
pub fn add_bounded_percent_noise(
    clean: &MeasurementVector,
    max_pct: f64,
    seed: u64,
) -> Result<MeasurementVector> {
    if !(0.0..=1.0).contains(&max_pct) {
        return Err(Error::InvalidInput(format!("max_pct {max_pct} outside [0, 1]")));
    }
    let m = clean.values.len();
    let half = m.div_ceil(2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut noisy = clean.clone();
    for (k, (value, &available)) in noisy.values.iter_mut().zip(&clean.mask).enumerate() {
        let e = rng.random::<f64>() * max_pct * value.abs();
        if available {
            if k < half {
                *value += e;
            } else {
                *value -= e;
            }
        }
    }
    Ok(noisy)
}

/// `10 log10(mean(clean^2) / mean((noisy - clean)^2))`.
pub fn empirical_snr_db(clean: &[f64], noisy: &[f64]) -> f64 {
    let signal = mean_square(clean.iter().copied());
    let noise = mean_square(clean.iter().zip(noisy).map(|(c, n)| n - c));
    10.0 * (signal / noise).log10()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vector(values: Vec<f64>) -> MeasurementVector {
        MeasurementVector::full(0, values)
    }

    #[test]
    fn infinite_snr_is_identity() {
        let z = vector(vec![1.0, -0.3, 0.2]);
        assert_eq!(add_gaussian_noise(&z, f64::INFINITY, 1), z);
    }

    #[test]
    fn gaussian_noise_hits_requested_snr() {
        // 10^5 samples spread over 1000 vectors of length 100
        let mut clean = Vec::new();
        let mut noisy = Vec::new();
        for t in 0..1000u64 {
            let values: Vec<f64> = (0..100).map(|k| ((k * 7 + t as usize) as f64 * 0.37).sin() + 0.2).collect();
            let z = vector(values);
            let out = add_gaussian_noise(&z, 20.0, t);
            clean.extend(z.values);
            noisy.extend(out.values);
        }
        assert!((empirical_snr_db(&clean, &noisy) - 20.0).abs() < 0.5);
    }

    #[test]
    fn noise_is_reproducible_per_seed() {
        let z = vector((0..50).map(|k| k as f64 * 0.1).collect());
        assert_eq!(add_gaussian_noise(&z, 30.0, 9), add_gaussian_noise(&z, 30.0, 9));
        assert_ne!(add_gaussian_noise(&z, 30.0, 9), add_gaussian_noise(&z, 30.0, 10));
        assert_eq!(
            add_bounded_percent_noise(&z, 0.03, 4).unwrap(),
            add_bounded_percent_noise(&z, 0.03, 4).unwrap()
        );
    }

    #[test]
    fn masked_entries_untouched() {
        let z = vector(vec![1.0, 2.0, 3.0]).with_mask(vec![true, false, true]).unwrap();
        let g = add_gaussian_noise(&z, 10.0, 3);
        assert_eq!(g.values[1], 2.0);
        let b = add_bounded_percent_noise(&z, 0.5, 3).unwrap();
        assert_eq!(b.values[1], 2.0);
    }

    #[test]
    fn zero_percent_is_identity() {
        let z = vector(vec![1.0, -2.0, 0.5]);
        assert_eq!(add_bounded_percent_noise(&z, 0.0, 5).unwrap(), z);
    }

    #[test]
    fn percent_noise_bounds_and_signs() {
        let z = vector(vec![2.0; 11]);
        for seed in 0..50 {
            let out = add_bounded_percent_noise(&z, 0.03, seed).unwrap();
            for (k, v) in out.values.iter().enumerate() {
                if k < 6 {
                    assert!((2.0..=2.06).contains(v), "{v}");
                } else {
                    assert!((1.94..=2.0).contains(v), "{v}");
                }
            }
        }
        assert!(add_bounded_percent_noise(&z, 1.5, 0).is_err());
    }
}
