use ndarray::{array, Array2};
use noiselab::dataset::sign_of_class;
use noiselab::noise::{
    flip_margin, flip_symmetric, in_r2_halfspace, log_density_ratio, match_noise_rate, posterior_true_class,
    region_r_membership, region_r_monte_carlo, region_r_nonempty_condition, sample_region_r,
};
use noiselab::{DomainSpec, NoisyDataset, RegionRSpec};
use proptest::prelude::*;

fn spec1d(delta: f64) -> DomainSpec {
    DomainSpec::new(vec![-1.0], vec![1.0], 1.0, vec![delta]).unwrap()
}

fn toy() -> NoisyDataset {
    let x = array![[2.0, 0.0], [0.5, 1.0], [-0.2, 0.0], [-3.0, 5.0], [0.1, -1.0]];
    NoisyDataset::new_clean(x, vec![0, 0, 0, 1, 1], 2).unwrap()
}

#[test]
fn flip_margin_hand_example() {
    // margins y·x₁: 2.0, 0.5, -0.2, 3.0, -0.1
    let out = flip_margin(&toy(), &[1.0, 0.0], 0.5).unwrap();
    assert_eq!(out.y_noisy(), &[0, 1, 1, 1, 0]);
    assert_eq!(out.noise_mask(), &[false, true, true, false, true]);
    let none = flip_margin(&toy(), &[1.0, 0.0], f64::NEG_INFINITY).unwrap();
    assert_eq!(none.num_noisy(), 0);
}

#[test]
fn flip_margin_rejects_bad_inputs() {
    assert!(flip_margin(&toy(), &[2.0, 0.0], 0.5).is_err());
    assert!(flip_margin(&toy(), &[1.0], 0.5).is_err());
    assert!(flip_margin(&toy(), &[1.0, 0.0], f64::NAN).is_err());
}

fn kclass(n: usize, k: usize) -> NoisyDataset {
    NoisyDataset::new_clean(Array2::zeros((n, 1)), (0..n).map(|i| i % k).collect(), k).unwrap()
}

#[test]
fn symmetric_rate_and_targets() {
    let data = kclass(50_000, 5);
    let out = flip_symmetric(&data, 0.3, 5, 1).unwrap();
    let rate = out.noise_rate();
    let se = (0.3f64 * 0.7 / 50_000.0).sqrt();
    assert!((rate - 0.3).abs() < 4.0 * se, "{rate}");
    // flips spread evenly over the four other classes
    let mut counts = [0usize; 5];
    for (i, (&c, &n)) in out.y_clean().iter().zip(out.y_noisy()).enumerate() {
        if out.noise_mask()[i] {
            counts[(n + 5 - c) % 5] += 1;
        }
    }
    assert_eq!(counts[0], 0);
    let flipped = out.num_noisy() as f64;
    for &c in &counts[1..] {
        assert!((c as f64 / flipped - 0.25).abs() < 0.02, "{counts:?}");
    }
    assert!(flip_symmetric(&data, 0.8, 5, 1).is_err());
    assert!(flip_symmetric(&data, 0.3, 4, 1).is_err());
}

#[test]
fn symmetric_zero_rate_is_identity() {
    let data = kclass(100, 3);
    assert_eq!(flip_symmetric(&data, 0.0, 3, 8).unwrap().num_noisy(), 0);
}

#[test]
fn match_noise_rate_k5_recovers_a_quarter() {
    let data = kclass(40_000, 5);
    let noisy = flip_symmetric(&data, 0.5, 5, 2).unwrap();
    let out = match_noise_rate(&noisy, 3).unwrap();
    let wrong_before = noisy.num_noisy() as f64;
    let recovered = noisy.noise_mask().iter().zip(out.noise_mask()).filter(|(&a, &b)| a && !b).count() as f64;
    let p = recovered / wrong_before;
    let se = (0.25f64 * 0.75 / wrong_before).sqrt();
    assert!((p - 0.25).abs() < 4.0 * se, "{p}");
    // clean samples untouched, and a wrong label never maps to itself
    for i in 0..data.n() {
        if !noisy.noise_mask()[i] {
            assert_eq!(out.y_noisy()[i], noisy.y_noisy()[i]);
        } else {
            assert_ne!(out.y_noisy()[i], noisy.y_noisy()[i]);
        }
    }
}

#[test]
fn match_noise_rate_binary_clears_all_noise() {
    let noisy = flip_margin(&toy(), &[1.0, 0.0], 0.5).unwrap();
    assert_eq!(match_noise_rate(&noisy, 0).unwrap().num_noisy(), 0);
}

#[test]
fn posterior_hand_values() {
    let s = spec1d(0.0);
    assert_eq!(posterior_true_class(&[0.0], &s).unwrap(), 0.5);
    assert_eq!(log_density_ratio(&[1.0], &s).unwrap(), -2.0);
    assert!((posterior_true_class(&[1.0], &s).unwrap() - 0.11920292202211755).abs() < 1e-15);
    // shifted target moves the neutral point to Δ
    assert_eq!(posterior_true_class(&[0.5], &spec1d(0.5)).unwrap(), 0.5);
}

#[test]
fn density_ratio_identity() {
    // μ₂ = μ₁ + σ1_d; stepping m₀σ1_d back from the target midpoint gives ratio exp(m₀d)
    let (d, sigma, m0) = (100, 0.7, 0.05);
    let spec = DomainSpec::along_ones(vec![0.3; d], sigma, 0.4).unwrap();
    let (t1, t2) = spec.means(noiselab::Which::Target);
    let x1: Vec<f64> = t1.iter().zip(&t2).map(|(a, b)| 0.5 * (a + b) - m0 * sigma).collect();
    let lr = log_density_ratio(&x1, &spec).unwrap();
    assert!((lr - 5.0).abs() < 1e-9, "{lr}");
    assert!((lr.exp() - 148.4131591025766).abs() < 1e-6);
}

#[test]
fn posterior_at_shifted_first_mean() {
    let spec = DomainSpec::new(vec![0.0, 1.0], vec![2.0, 1.0], 1.0, vec![0.5, -0.25]).unwrap();
    let x: Vec<f64> = spec.mu1.iter().zip(&spec.delta).map(|(a, b)| a + b).collect();
    assert!((posterior_true_class(&x, &spec).unwrap() - 1.0 / (1.0 + (-2f64).exp())).abs() < 1e-15);
}

#[test]
fn r1_radius_and_threshold() {
    let spec = DomainSpec::along_ones(vec![0.0; 100], 1.0, 0.2).unwrap();
    let r = RegionRSpec::new(0.01, spec).unwrap();
    assert!((r.r1_radius() - (5.0 - 99f64.ln() / 10.0)).abs() < 1e-12);
    assert!(region_r_nonempty_condition(&r).unwrap());
    // threshold α > ln(99)/100 ≈ 0.04595
    let below = RegionRSpec::new(0.01, DomainSpec::along_ones(vec![0.0; 100], 1.0, 0.045).unwrap()).unwrap();
    let above = RegionRSpec::new(0.01, DomainSpec::along_ones(vec![0.0; 100], 1.0, 0.047).unwrap()).unwrap();
    assert!(!region_r_nonempty_condition(&below).unwrap());
    assert!(region_r_nonempty_condition(&above).unwrap());
    // small d with a tight δ: R1 has no interior
    let tiny = RegionRSpec::new(0.01, DomainSpec::along_ones(vec![0.0; 4], 1.0, 2.0).unwrap()).unwrap();
    assert!(tiny.r1_is_empty());
    assert!(sample_region_r(&tiny, 10, 0).is_err());
}

#[test]
fn delta_conf_must_be_open_unit() {
    let spec = spec1d(0.0);
    assert!(RegionRSpec::new(0.0, spec.clone()).is_err());
    assert!(RegionRSpec::new(1.0, spec).is_err());
}

fn low_dim_region() -> RegionRSpec {
    RegionRSpec::new(0.3, DomainSpec::along_ones(vec![0.0; 4], 1.0, 1.0).unwrap()).unwrap()
}

#[test]
fn conditional_sampler_agrees_with_plain_monte_carlo() {
    let r = low_dim_region();
    let plain = region_r_monte_carlo(&r, 400_000, 4).unwrap();
    assert!(plain.in_r > 1000, "{plain:?}");
    let a = plain.conditional().unwrap();
    let b = sample_region_r(&r, 20_000, 5).unwrap().mislabel_estimate();
    let se = (a.std_error.powi(2) + b.std_error.powi(2)).sqrt();
    assert!((a.estimate - b.estimate).abs() < 4.0 * se, "{a:?} {b:?}");
    assert!(b.estimate >= 0.7 - 3.0 * b.std_error);
}

#[test]
fn conditional_draws_lie_in_region() {
    let r = low_dim_region();
    let s = sample_region_r(&r, 2000, 6).unwrap();
    for i in 0..s.data.n() {
        let x = s.data.x(i).to_vec();
        assert!(region_r_membership(&x, &r).unwrap().in_r);
        assert_eq!(s.data.y_noisy()[i], 1);
        assert!((s.posterior[i] - posterior_true_class(&x, &r.spec).unwrap()).abs() < 1e-12);
    }
    let again = sample_region_r(&r, 2000, 6).unwrap();
    assert_eq!(s.data, again.data);
}

#[test]
fn high_dim_conditional_bound() {
    let r = RegionRSpec::new(0.01, DomainSpec::along_ones(vec![0.0; 100], 1.0, 0.2).unwrap()).unwrap();
    let s = sample_region_r(&r, 2000, 7).unwrap();
    let est = s.mislabel_estimate();
    assert!(est.estimate >= 0.99 - 3.0 * est.std_error.max(1.0 / 2000.0), "{est:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn flip_margin_mask_is_margin_test(
        rows in prop::collection::vec((-3.0..3.0f64, -3.0..3.0f64, 0usize..2), 1..40),
        r in -1.0..1.0f64,
        angle in 0.0..6.28f64,
    ) {
        let n = rows.len();
        let x = Array2::from_shape_fn((n, 2), |(i, j)| if j == 0 { rows[i].0 } else { rows[i].1 });
        let data = NoisyDataset::new_clean(x, rows.iter().map(|t| t.2).collect(), 2).unwrap();
        let mu = [angle.cos(), angle.sin()];
        let out = flip_margin(&data, &mu, r).unwrap();
        for (i, row) in rows.iter().enumerate() {
            let margin = sign_of_class(row.2) * (row.0 * mu[0] + row.1 * mu[1]);
            prop_assert_eq!(out.noise_mask()[i], margin <= r);
        }
    }

    #[test]
    fn r2_halfspace_equals_negative_source_score(
        mu1 in prop::collection::vec(-2.0..2.0f64, 3),
        x in prop::collection::vec(-4.0..4.0f64, 3),
        sigma in 0.2..2.0f64,
        alpha in -1.0..2.0f64,
    ) {
        let r = RegionRSpec::new(0.1, DomainSpec::along_ones(mu1, sigma, alpha).unwrap()).unwrap();
        let h = noiselab::domain::bayes_source_score(&r.spec, &x).unwrap();
        prop_assume!(h.abs() > 1e-9);
        prop_assert_eq!(in_r2_halfspace(&x, &r).unwrap(), h < 0.0);
        prop_assert_eq!(region_r_membership(&x, &r).unwrap().in_r2, h < 0.0);
    }
}
