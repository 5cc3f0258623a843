mod common;

use common::{big_phi, integrate, phi, trunc_moments_quadrature, Lcg};
use esn_discrim::numkit::{bvn_cdf, trunc_norm_moments, zeta1, zeta2, TruncatedConditional};

/// `Φ₂(h, k; ρ) = ∫_{-∞}^{h} φ(x) Φ((k − ρx)/√(1−ρ²)) dx`.
fn bvn_quadrature(h: f64, k: f64, rho: f64) -> f64 {
    let s = (1.0 - rho * rho).sqrt();
    integrate(|x| phi(x) * big_phi((k - rho * x) / s), -12.0, h, 400, 10)
}

#[test]
fn bvn_matches_one_dimensional_quadrature() {
    let mut rng = Lcg(17);
    let mut worst = 0.0f64;
    for _ in 0..300 {
        let h = rng.uniform(-4.0, 4.0);
        let k = rng.uniform(-4.0, 4.0);
        let rho = rng.uniform(-0.98, 0.98);
        let err = (bvn_cdf(h, k, rho).unwrap() - bvn_quadrature(h, k, rho)).abs();
        worst = worst.max(err);
    }
    assert!(worst <= 5e-8, "worst error {worst:e}");
}

#[test]
fn bvn_symmetry_and_degenerate_limits() {
    for (h, k, r) in [(0.3, -1.1, 0.4), (1.7, 0.2, -0.85), (-0.5, -0.5, 0.95)] {
        assert!((bvn_cdf(h, k, r).unwrap() - bvn_cdf(k, h, r).unwrap()).abs() < 1e-15);
    }
    assert!((bvn_cdf(0.4, 1.0, 1.0).unwrap() - big_phi(0.4)).abs() < 1e-15);
    assert!((bvn_cdf(0.4, 1.0, -1.0).unwrap() - (big_phi(0.4) + big_phi(1.0) - 1.0)).abs() < 1e-15);
    assert_eq!(bvn_cdf(0.4, -1.0, -1.0).unwrap(), 0.0);
    assert_eq!(bvn_cdf(0.0, 0.0, 0.0).unwrap(), 0.25);
    assert!(bvn_cdf(0.0, 0.0, 1.0 + 1e-9).is_err());
}

#[test]
fn zeta_finite_difference_and_range() {
    let h = 1e-6;
    for x in [-30.0, -12.0, -5.0, -1.0, 0.0, 2.0, 6.0] {
        let fd = (zeta1(x + h).unwrap() - zeta1(x - h).unwrap()) / (2.0 * h);
        let z2 = zeta2(x).unwrap();
        assert!((fd - z2).abs() < 1e-6, "x={x} fd={fd} z2={z2}");
    }
    let mut x = -40.0;
    while x <= 37.0 {
        let z1 = zeta1(x).unwrap();
        let z2 = zeta2(x).unwrap();
        assert!(z1 > 0.0, "zeta1({x}) = {z1}");
        assert!(z2 > -1.0 && z2 < 0.0, "zeta2({x}) = {z2}");
        x += 0.25;
    }
    assert!(zeta1(40.0).unwrap() < 1e-300);
    assert!(zeta1(f64::NAN).is_err());
    assert!(zeta2(f64::INFINITY).is_err());
}

#[test]
fn truncated_moments_match_quadrature() {
    let mut rng = Lcg(5);
    for _ in 0..40 {
        let alpha = rng.uniform(-3.0, 3.0);
        let beta = rng.uniform(0.1, 1.0);
        let tau = rng.uniform(-3.0, 5.0);
        let (m1, m2) = trunc_norm_moments(&TruncatedConditional::new(alpha, beta, tau).unwrap());
        let (q1, q2) = trunc_moments_quadrature(alpha, beta, tau);
        assert!(
            (m1 - q1).abs() <= 1e-8 * q1.abs(),
            "m1 {m1} vs {q1} at ({alpha},{beta},{tau})"
        );
        assert!(
            (m2 - q2).abs() <= 1e-8 * q2.abs(),
            "m2 {m2} vs {q2} at ({alpha},{beta},{tau})"
        );
    }
}
