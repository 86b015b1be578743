mod common;

use approx::assert_abs_diff_eq;
use nalgebra::DMatrix;
use opffr::kernels::{gram_matrix, scaled_bernoulli, KernelPart, MarginalKernelPair, TensorKernel};
use opffr::quadrature::QuadratureRule;
use proptest::prelude::*;

const BERNOULLI_NUMBERS: [f64; 5] = [1.0, -0.5, 1.0 / 6.0, 0.0, -1.0 / 30.0];

fn binomial(n: u64, k: u64) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// `B_n(x)/n!` from the Bernoulli-number expansion.
fn bernoulli_oracle(n: usize, x: f64) -> f64 {
    let b: f64 = (0..=n)
        .map(|k| binomial(n as u64, k as u64) * BERNOULLI_NUMBERS[k] * x.powi((n - k) as i32))
        .sum();
    let fact: f64 = (1..=n).map(|i| i as f64).product();
    b / fact
}

fn k1_oracle(u: f64, v: f64) -> f64 {
    bernoulli_oracle(2, u) * bernoulli_oracle(2, v) - bernoulli_oracle(4, (u - v).abs())
}

#[test]
fn bernoulli_matches_expansion() {
    for i in 0..=100 {
        let x = i as f64 / 100.0;
        for n in [1u32, 2, 4] {
            assert_abs_diff_eq!(
                scaled_bernoulli(n, x).unwrap(),
                bernoulli_oracle(n as usize, x),
                epsilon = 1e-15
            );
        }
    }
}

#[test]
fn closed_form_values() {
    let k = MarginalKernelPair::cubic();
    assert_abs_diff_eq!(scaled_bernoulli(1, 0.0).unwrap(), -0.5);
    assert_abs_diff_eq!(scaled_bernoulli(2, 0.5).unwrap(), -1.0 / 24.0, epsilon = 1e-16);
    assert_abs_diff_eq!(scaled_bernoulli(4, 0.0).unwrap(), -1.0 / 720.0, epsilon = 1e-16);
    assert_abs_diff_eq!(k.k1(0.0, 0.0).unwrap(), 1.0 / 144.0 + 1.0 / 720.0, epsilon = 1e-15);
    assert_abs_diff_eq!(k.k1(0.25, 0.75).unwrap(), k1_oracle(0.25, 0.75), epsilon = 1e-15);
    assert_abs_diff_eq!(k.k0(0.25, 0.75).unwrap(), 1.0 - 1.0 / 16.0, epsilon = 1e-15);
}

#[test]
fn k1_integrates_to_zero_exactly() {
    // split at v, the kernel is a polynomial of degree 4 on each side
    let k = MarginalKernelPair::cubic();
    for i in 0..=20 {
        let v = i as f64 / 20.0;
        let r = QuadratureRule::composite(&[0.0, v, 1.0], 4).unwrap();
        let integral = r.integrate_fn(|u| k.k1_unchecked(u, v));
        assert!(integral.abs() < 1e-15, "v={v}: {integral:e}");
        let r1 = r.integrate_fn(|u| k.k0_unchecked(u, v) - 1.0);
        assert!(r1.abs() < 1e-15);
    }
}

#[test]
fn tensor_parts_decompose() {
    let k = TensorKernel::cubic();
    let m = MarginalKernelPair::cubic();
    let (p, q) = ((0.1, 0.9), (0.6, 0.35));
    let k0 = m.k0(0.1, 0.6).unwrap() * m.k0(0.9, 0.35).unwrap();
    let full = m.k(0.1, 0.6).unwrap() * m.k(0.9, 0.35).unwrap();
    assert_abs_diff_eq!(k.eval(KernelPart::K0, p, q).unwrap(), k0, epsilon = 1e-15);
    assert_abs_diff_eq!(k.eval(KernelPart::Full, p, q).unwrap(), full, epsilon = 1e-15);
    assert_abs_diff_eq!(k.eval(KernelPart::K1, p, q).unwrap(), full - k0, epsilon = 1e-15);
}

fn unit() -> impl Strategy<Value = f64> {
    0.0..=1.0f64
}

proptest! {
    #[test]
    fn marginal_symmetry(u in unit(), v in unit()) {
        let k = MarginalKernelPair::cubic();
        prop_assert_eq!(k.k1(u, v).unwrap(), k.k1(v, u).unwrap());
        prop_assert_eq!(k.k0(u, v).unwrap(), k.k0(v, u).unwrap());
        prop_assert!((k.k1(u, v).unwrap() - k1_oracle(u, v)).abs() < 1e-15);
    }

    #[test]
    fn tensor_symmetry(a in unit(), b in unit(), c in unit(), d in unit()) {
        let k = TensorKernel::cubic();
        for part in [KernelPart::K0, KernelPart::K1, KernelPart::Full] {
            prop_assert_eq!(k.eval(part, (a, b), (c, d)).unwrap(), k.eval(part, (c, d), (a, b)).unwrap());
        }
    }

    #[test]
    fn gram_is_psd(points in prop::collection::vec((unit(), unit()), 1..12)) {
        let tk = TensorKernel::cubic();
        for part in [KernelPart::K0, KernelPart::K1, KernelPart::Full] {
            let g = gram_matrix(&points, |p, q| tk.eval(part, *p, *q)).unwrap();
            let eig = g.symmetric_eigenvalues();
            let max = eig.max().max(0.0);
            prop_assert!(eig.min() >= -1e-8 * max.max(1e-300), "{:?}", eig);
        }
        let m = MarginalKernelPair::cubic();
        let xs: Vec<f64> = points.iter().map(|p| p.0).collect();
        let g: DMatrix<f64> = gram_matrix(&xs, |a, b| m.k1(*a, *b)).unwrap();
        let eig = g.symmetric_eigenvalues();
        prop_assert!(eig.min() >= -1e-8 * eig.max());
    }

    #[test]
    fn out_of_domain_rejected(u in 1.0001..5.0f64) {
        let k = MarginalKernelPair::cubic();
        prop_assert!(k.k1(u, 0.5).is_err());
        prop_assert!(k.k0(0.5, -u).is_err());
        prop_assert!(scaled_bernoulli(2, u).is_err());
    }
}
