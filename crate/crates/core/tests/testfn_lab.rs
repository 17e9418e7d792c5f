use std::f64::consts::PI;

use wavelab::testfn_lab::*;

/// `∫₀^{2π} e^{r cos θ} dθ` by the periodic trapezoid rule.
fn phi1_circle(r: f64) -> f64 {
    let m = 200;
    (0..m).map(|i| (r * (2.0 * PI * i as f64 / m as f64).cos()).exp()).sum::<f64>() * 2.0 * PI / m as f64
}

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

#[test]
fn point_values() {
    assert!((phi1(3, 0.0).unwrap() - 4.0 * PI).abs() < 1e-13);
    assert!((phi1(2, 0.0).unwrap() - 2.0 * PI).abs() < 1e-13);
    let v = phi1(3, 1.0).unwrap();
    assert!((v - 4.0 * PI * 1f64.sinh()).abs() < 1e-12);
    assert!((v - 14.7680).abs() < 5e-5);
    assert_eq!(phi1(3, -0.5), Err(TestFnError::NegativeRadius(-0.5)));
}

#[test]
fn closed_forms_match_quadrature_path() {
    for n in [2, 3] {
        for i in 0..=60 {
            let r = 0.5 * i as f64;
            let closed = ln_phi1(n, r).unwrap();
            let quad = ln_phi1_quadrature(n, r).unwrap();
            assert!(
                ((closed - quad).exp() - 1.0).abs() < 1e-10,
                "n = {n}, r = {r}: {closed} vs {quad}"
            );
        }
    }
}

#[test]
fn circle_average_matches_bessel_form() {
    for r in [0.0, 0.3, 2.0, 9.0, 14.9, 15.1, 25.0] {
        let oracle = phi1_circle(r);
        assert!((phi1(2, r).unwrap() / oracle - 1.0).abs() < 1e-12, "r = {r}");
    }
}

#[test]
fn positive_increasing_and_above_sphere_area() {
    for n in [2, 3, 4, 5] {
        let area = sphere_area(n as u32 - 1);
        let mut prev = 0.0;
        for i in 0..200 {
            let r = 0.1 * i as f64;
            let v = phi1(n, r).unwrap();
            assert!(v >= area * (1.0 - 1e-12) && v > prev, "n = {n}, r = {r}");
            prev = v;
        }
    }
}

#[test]
fn radial_laplacian_identity_converges_at_second_order() {
    for n in [2, 3, 4] {
        let residual = |h: f64| {
            [0.7, 1.5, 4.0]
                .iter()
                .map(|&r| {
                    let (a, b, c) = (phi1(n, r - h).unwrap(), phi1(n, r).unwrap(), phi1(n, r + h).unwrap());
                    let lap = (a - 2.0 * b + c) / (h * h) + (n as f64 - 1.0) / r * (c - a) / (2.0 * h);
                    ((lap - b) / b).abs()
                })
                .fold(0.0, f64::max)
        };
        let (e1, e2) = (residual(2e-2), residual(1e-2));
        assert!(e1 < 1e-3 && e1 / e2 > 3.5 && e1 / e2 < 4.5, "n = {n}: {e1} {e2}");
    }
}

#[test]
fn three_d_norm_at_zero_matches_antiderivative() {
    let integral = 2f64.sinh() / 4.0 - 0.5;
    let oracle = (16.0 * PI * PI * 4.0 * PI * integral).sqrt();
    let v = psi1_weighted_norm(3, 2.0, 0.0).unwrap();
    assert!((v / oracle - 1.0).abs() < 1e-10, "{v} vs {oracle}");
}

#[test]
fn two_d_norm_at_zero_matches_planar_quadrature() {
    let oracle = simpson(|r| phi1_circle(r).powi(2) * 2.0 * PI * r, 0.0, 1.0, 2000).sqrt();
    let v = psi1_weighted_norm(2, 2.0, 0.0).unwrap();
    assert!((v / oracle - 1.0).abs() < 1e-8, "{v} vs {oracle}");
}

#[test]
fn norms_are_positive_and_finite() {
    for n in [2, 3] {
        for p in [1.5, 2.0, 3.0] {
            for t in [0.0, 1.0, 50.0, 500.0] {
                let v = psi1_weighted_norm(n, p, t).unwrap();
                assert!(v.is_finite() && v > 0.0, "n = {n}, p = {p}, t = {t}");
            }
        }
    }
}

#[test]
fn weighted_norm_ratio_stays_bounded_to_t_1000() {
    let ts = [1.0, 3.0, 10.0, 30.0, 100.0, 300.0, 1000.0];
    for (n, p) in [(2, 2.0), (3, 2.0), (3, 2.5)] {
        let scan = y20_ratio_scan(n, p, &ts).unwrap();
        let hi = scan.iter().map(|s| s.1).fold(0.0, f64::max);
        let lo = scan.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
        assert!(hi / lo < 50.0, "(n, p) = ({n}, {p}): {hi} / {lo}");
    }
}

#[test]
fn two_d_ratio_is_bounded_on_one_to_hundred() {
    let scan = y20_ratio_scan(2, 2.0, &[1.0, 3.0, 10.0, 30.0, 100.0]).unwrap();
    let hi = scan.iter().map(|s| s.1).fold(0.0, f64::max);
    let lo = scan.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
    assert!(hi / lo < 10.0);
}
