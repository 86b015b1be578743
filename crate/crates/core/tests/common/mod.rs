#![allow(dead_code)]

use nalgebra::DMatrix;
use opffr::design::{assemble, BasisForm, DesignSystem};
use opffr::quadrature::{gauss_legendre, Curve, Interval, QuadratureRule};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rule(m: usize) -> QuadratureRule {
    gauss_legendre(m, Interval::UNIT).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random smooth function: a few cosines plus a quadratic trend.
#[derive(Clone, Debug)]
pub struct SmoothFn {
    pub coef: Vec<f64>,
    pub trend: [f64; 3],
}

impl SmoothFn {
    pub fn random<R: Rng>(rng: &mut R) -> Self {
        Self {
            coef: (0..4).map(|_| rng.random_range(-1.0..1.0)).collect(),
            trend: [
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ],
        }
    }

    pub fn eval(&self, u: f64) -> f64 {
        let c: f64 = self
            .coef
            .iter()
            .enumerate()
            .map(|(k, a)| a * ((k + 1) as f64 * std::f64::consts::PI * u).cos())
            .sum();
        c + self.trend[0] + self.trend[1] * u + self.trend[2] * u * u
    }
}

pub fn random_fns<R: Rng>(n: usize, rng: &mut R) -> Vec<SmoothFn> {
    (0..n).map(|_| SmoothFn::random(rng)).collect()
}

pub fn sample(fns: &[SmoothFn], grid: &[f64]) -> Vec<Curve> {
    fns.iter().map(|f| Curve::from_fn(grid, |u| f.eval(u)).unwrap()).collect()
}

/// Curves sampled exactly at the nodes of `rule`, plus both end points so that
/// resampling onto the nodes is exact.
pub fn at_nodes(fns: &[SmoothFn], rule: &QuadratureRule) -> Vec<Curve> {
    let mut grid = vec![0.0];
    grid.extend_from_slice(rule.nodes());
    grid.push(1.0);
    sample(fns, &grid)
}

/// Random system with `n` pairs on `t`- and `s`-point rules.
pub fn random_system(n: usize, t: usize, s: usize, form: BasisForm, seed: u64) -> DesignSystem {
    let mut r = rng(seed);
    let (tr, sr) = (rule(t), rule(s));
    let x = at_nodes(&random_fns(n, &mut r), &sr);
    let y = at_nodes(&random_fns(n, &mut r), &tr);
    assemble(&x, &y, &tr, &sr, form).unwrap()
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |a, v| a.max(v.abs()))
}
