use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use style_retrieval::latent::{
    duration_scale, kl_to_standard_normal, reparameterize, sample_noise, total_loss,
    LatentSpec, LossComponents,
};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Monte-Carlo KL(q || N(0, I)) as the sample mean of log q(z) - log p(z)
/// with z ~ q. Draws come straight from a standard normal stream, not from
/// the crate's sampler.
fn kl_monte_carlo(mu: &[f64], sigma: &[f64], draws: usize, seed: u64) -> f64 {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut acc = 0.0;
    for _ in 0..draws {
        let mut log_ratio = 0.0;
        for (m, s) in mu.iter().zip(sigma) {
            let e: f64 = StandardNormal.sample(&mut rng);
            let z = m + s * e;
            let log_q = -LN_SQRT_2PI - s.ln() - 0.5 * e * e;
            let log_p = -LN_SQRT_2PI - 0.5 * z * z;
            log_ratio += log_q - log_p;
        }
        acc += log_ratio;
    }
    acc / draws as f64
}

#[test]
fn closed_form_matches_monte_carlo_fixed_spec() {
    let spec = LatentSpec::new(vec![0.5; 8], vec![0.5f64.ln(); 8]).unwrap();
    let closed = kl_to_standard_normal(&spec).unwrap();
    let mc = kl_monte_carlo(spec.mu(), &spec.sigma(), 200_000, 1);
    assert!(((closed - mc) / closed).abs() < 0.01, "closed {closed} mc {mc}");
}

#[test]
fn sampled_noise_moments() {
    let n = 100_000;
    // One long stream at d = n is the same as n draws at d = 1.
    let xs = sample_noise(n, 2024);
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    assert!(mean.abs() < 0.02, "mean {mean}");
    assert!((var - 1.0).abs() < 0.02, "var {var}");

    // Across seeds at d = 1.
    let xs: Vec<f64> = (0..n as u64).map(|s| sample_noise(1, s)[0]).collect();
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    assert!(mean.abs() < 0.02, "mean {mean}");
    assert!((var - 1.0).abs() < 0.02, "var {var}");
}

#[test]
fn reparameterized_draws_match_mu_sigma() {
    let spec = LatentSpec::new(vec![1.5, -0.3], vec![0.2, -1.0]).unwrap();
    let sigma = spec.sigma();
    let n = 100_000;
    let draws: Vec<Vec<f64>> = (0..n as u64)
        .map(|seed| reparameterize(&spec, &sample_noise(2, seed)).unwrap())
        .collect();
    for d in 0..2 {
        let mean = draws.iter().map(|z| z[d]).sum::<f64>() / n as f64;
        let var = draws.iter().map(|z| (z[d] - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        let std = var.sqrt();
        let mean_tol = 3.0 * sigma[d] / (n as f64).sqrt();
        // std of the sample standard deviation is about sigma / sqrt(2n).
        let std_tol = 3.0 * sigma[d] / (2.0 * n as f64).sqrt();
        assert!((mean - spec.mu()[d]).abs() < mean_tol, "dim {d} mean {mean}");
        assert!((std - sigma[d]).abs() < std_tol, "dim {d} std {std}");
    }
}

fn spec_strategy() -> impl Strategy<Value = LatentSpec> {
    (1usize..=12).prop_flat_map(|d| {
        (
            prop::collection::vec(-3.0f64..3.0, d),
            prop::collection::vec(-3.0f64..2.0, d),
        )
            .prop_map(|(m, s)| LatentSpec::new(m, s).unwrap())
    })
}

proptest! {
    #[test]
    fn kl_is_non_negative(spec in spec_strategy()) {
        prop_assert!(kl_to_standard_normal(&spec).unwrap() >= 0.0);
    }

    #[test]
    fn kl_positive_away_from_standard_normal(spec in spec_strategy()) {
        let kl = kl_to_standard_normal(&spec).unwrap();
        if spec.mu().iter().chain(spec.log_sigma()).any(|v| v.abs() >= 1e-5) {
            prop_assert!(kl > 1e-12, "kl {}", kl);
        }
    }

    #[test]
    fn kl_grows_with_mean_magnitude(spec in spec_strategy(), dim in 0usize..12, bump in 0.01f64..2.0) {
        let dim = dim % spec.dim();
        let mut mu = spec.mu().to_vec();
        let base = kl_to_standard_normal(&spec).unwrap();
        mu[dim] = mu[dim].signum() * (mu[dim].abs() + bump);
        if mu[dim] == 0.0 { mu[dim] = bump; }
        let moved = LatentSpec::new(mu, spec.log_sigma().to_vec()).unwrap();
        prop_assert!(kl_to_standard_normal(&moved).unwrap() > base);
    }

    #[test]
    fn zero_noise_is_exact_mean(spec in spec_strategy()) {
        let z = reparameterize(&spec, &vec![0.0; spec.dim()]).unwrap();
        prop_assert_eq!(z.as_slice(), spec.mu());
    }

    #[test]
    fn loss_is_linear(
        a in prop::array::uniform4(0.0f64..100.0),
        b in prop::array::uniform4(0.0f64..100.0),
        beta in 0.0f64..10.0,
        k in 0.0f64..10.0,
    ) {
        let ca = LossComponents::new(a[0], a[1], a[2], a[3]).unwrap();
        let cb = LossComponents::new(b[0], b[1], b[2], b[3]).unwrap();
        let sum = LossComponents::new(a[0] + b[0], a[1] + b[1], a[2] + b[2], a[3] + b[3]).unwrap();
        let scaled = LossComponents::new(k * a[0], k * a[1], k * a[2], k * a[3]).unwrap();
        let tol = 1e-9 * (1.0 + total_loss(&sum, beta));
        prop_assert!((total_loss(&sum, beta) - total_loss(&ca, beta) - total_loss(&cb, beta)).abs() < tol);
        prop_assert!((total_loss(&scaled, beta) - k * total_loss(&ca, beta)).abs() < tol * (1.0 + k));
        // Affine in beta with slope kl.
        prop_assert!((total_loss(&ca, beta + 1.0) - total_loss(&ca, beta) - a[3]).abs() < tol);
    }

    #[test]
    fn duration_scale_of_equal_means_is_one(x in 1e-6f64..10.0) {
        prop_assert_eq!(duration_scale(x, x).unwrap(), 1.0);
    }
}

#[test]
fn closed_form_matches_monte_carlo_random_specs() {
    let mut rng = ChaCha20Rng::seed_from_u64(77);
    for i in 0..5 {
        let mu: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let ls: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..0.5)).collect();
        let spec = LatentSpec::new(mu, ls).unwrap();
        let closed = kl_to_standard_normal(&spec).unwrap();
        let mc = kl_monte_carlo(spec.mu(), &spec.sigma(), 200_000, 1000 + i);
        assert!(((closed - mc) / closed).abs() < 0.01, "spec {i}: closed {closed} mc {mc}");
    }
}
