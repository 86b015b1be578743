//! Gauss-Legendre rules, sampled curves, and the quadrature form of the `K₁`
//! integral operator.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::MarginalKernelPair;

pub const MAX_RULE_SIZE: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const UNIT: Interval = Interval { lo: 0.0, hi: 1.0 };

    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::InvalidArgument(format!(
                "interval [{lo}, {hi}] is empty or not finite"
            )));
        }
        Ok(Self { lo, hi })
    }

    pub fn len(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn is_empty(&self) -> bool {
        self.hi <= self.lo
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadratureRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    interval: Interval,
}

impl QuadratureRule {
    /// Builds a rule from explicit nodes and weights.
    pub fn from_parts(nodes: Vec<f64>, weights: Vec<f64>, interval: Interval) -> Result<Self> {
        if nodes.is_empty() || nodes.len() != weights.len() {
            return Err(Error::InvalidArgument(format!(
                "rule needs matching nonempty nodes and weights, got {} and {}",
                nodes.len(),
                weights.len()
            )));
        }
        if nodes.iter().chain(&weights).any(|v| !v.is_finite()) {
            return Err(Error::NumericalInput("quadrature rule"));
        }
        Ok(Self {
            nodes,
            weights,
            interval,
        })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn interval(&self) -> Interval {
        self.interval
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `Σ αⱼ f(tⱼ)`.
    pub fn integrate(&self, values: &[f64]) -> Result<f64> {
        if values.len() != self.nodes.len() {
            return Err(Error::InvalidArgument(format!(
                "{} values for a rule with {} nodes",
                values.len(),
                self.nodes.len()
            )));
        }
        Ok(dot(&self.weights, values))
    }

    pub fn integrate_fn<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }

    /// Composite rule: an `m`-point Gauss-Legendre panel on each interval between
    /// consecutive breakpoints. Exact on piecewise polynomials of degree `2m − 1`
    /// whose pieces join at the breakpoints.
    pub fn composite(breakpoints: &[f64], m: usize) -> Result<Self> {
        let mut breaks: Vec<f64> = breakpoints.to_vec();
        if breaks.iter().any(|b| !b.is_finite()) {
            return Err(Error::NumericalInput("composite breakpoints"));
        }
        breaks.sort_by(f64::total_cmp);
        breaks.dedup_by(|a, b| (*a - *b).abs() <= 1e-15);
        if breaks.len() < 2 {
            return Err(Error::InvalidArgument(
                "composite rule needs at least two distinct breakpoints".into(),
            ));
        }
        let base = gauss_legendre(m, Interval::new(-1.0, 1.0)?)?;
        let mut nodes = Vec::with_capacity(m * (breaks.len() - 1));
        let mut weights = Vec::with_capacity(nodes.capacity());
        for pair in breaks.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            let half = 0.5 * (b - a);
            let mid = 0.5 * (a + b);
            for (&x, &w) in base.nodes.iter().zip(&base.weights) {
                nodes.push(mid + half * x);
                weights.push(half * w);
            }
        }
        let interval = Interval::new(breaks[0], *breaks.last().unwrap())?;
        Ok(Self {
            nodes,
            weights,
            interval,
        })
    }
}

/// `m`-point Gauss-Legendre rule mapped affinely onto `interval`.
///
/// Nodes are the roots of `P_m`, found by Newton iteration from the Chebyshev-like
/// initial guesses `cos(π(i − ¼)/(m + ½))`; the lower half is mirrored so the rule
/// is exactly symmetric.
pub fn gauss_legendre(m: usize, interval: Interval) -> Result<QuadratureRule> {
    if m == 0 || m > MAX_RULE_SIZE {
        return Err(Error::InvalidArgument(format!(
            "Gauss-Legendre rule size {m} outside 1..={MAX_RULE_SIZE}"
        )));
    }
    let mut x = vec![0.0; m];
    let mut w = vec![0.0; m];
    let half = m.div_ceil(2);
    for i in 0..half {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(m, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(m, z);
        if d.is_finite() {
            dp = d;
        }
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        // z runs from near +1 downward
        x[m - 1 - i] = z;
        x[i] = -z;
        w[i] = wi;
        w[m - 1 - i] = wi;
    }
    if m % 2 == 1 {
        x[m / 2] = 0.0;
    }
    let scale = 0.5 * interval.len();
    let mid = 0.5 * (interval.lo + interval.hi);
    let nodes = x.iter().map(|&z| mid + scale * z).collect();
    let weights = w.iter().map(|&wi| scale * wi).collect();
    Ok(QuadratureRule {
        nodes,
        weights,
        interval,
    })
}

fn legendre_with_derivative(m: usize, z: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = z;
    if m == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=m {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = m as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, d)
}

/// How `resample` treats targets outside the sampled range.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Extrapolation {
    /// Constant continuation of the boundary ordinate.
    #[default]
    Clamp,
    /// Out-of-range targets are an error.
    Reject,
}

/// One sampled function: strictly increasing abscissae with finite ordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    abscissae: Vec<f64>,
    ordinates: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

impl Curve {
    pub fn new(abscissae: Vec<f64>, ordinates: Vec<f64>) -> Result<Self> {
        if abscissae.len() != ordinates.len() {
            return Err(Error::InvalidArgument(format!(
                "curve has {} abscissae but {} ordinates",
                abscissae.len(),
                ordinates.len()
            )));
        }
        if abscissae.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "curve needs at least 2 points, got {}",
                abscissae.len()
            )));
        }
        if abscissae.iter().chain(&ordinates).any(|v| !v.is_finite()) {
            return Err(Error::NumericalInput("curve"));
        }
        if abscissae.windows(2).any(|p| p[1] <= p[0]) {
            return Err(Error::InvalidArgument(
                "curve abscissae must be strictly increasing".into(),
            ));
        }
        Ok(Self {
            abscissae,
            ordinates,
            label: None,
        })
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    /// Samples `f` at the given abscissae.
    pub fn from_fn<F: Fn(f64) -> f64>(abscissae: &[f64], f: F) -> Result<Self> {
        let ordinates = abscissae.iter().map(|&x| f(x)).collect();
        Self::new(abscissae.to_vec(), ordinates)
    }

    pub fn abscissae(&self) -> &[f64] {
        &self.abscissae
    }

    pub fn ordinates(&self) -> &[f64] {
        &self.ordinates
    }

    pub fn len(&self) -> usize {
        self.abscissae.len()
    }

    pub fn is_empty(&self) -> bool {
        self.abscissae.is_empty()
    }

    pub fn range(&self) -> (f64, f64) {
        (self.abscissae[0], *self.abscissae.last().unwrap())
    }

    /// Piecewise-linear value at `x`, constant beyond the sampled range.
    pub fn value_at(&self, x: f64) -> f64 {
        let xs = &self.abscissae;
        let ys = &self.ordinates;
        let last = xs.len() - 1;
        if x <= xs[0] {
            return ys[0];
        }
        if x >= xs[last] {
            return ys[last];
        }
        // first index with xs[i] > x; 1 <= i <= last
        let i = xs.partition_point(|&a| a <= x);
        let (x0, x1) = (xs[i - 1], xs[i]);
        if x == x0 {
            return ys[i - 1];
        }
        let f = (x - x0) / (x1 - x0);
        ys[i - 1] + f * (ys[i] - ys[i - 1])
    }
}

/// Piecewise-linear interpolation of `curve` at `targets`.
pub fn resample(curve: &Curve, targets: &[f64]) -> Result<Vec<f64>> {
    resample_with(curve, targets, Extrapolation::Clamp)
}

pub fn resample_with(curve: &Curve, targets: &[f64], policy: Extrapolation) -> Result<Vec<f64>> {
    if curve.len() < 2 {
        return Err(Error::InvalidArgument("cannot resample a curve with < 2 points".into()));
    }
    let (lo, hi) = curve.range();
    targets
        .iter()
        .map(|&t| {
            if !t.is_finite() {
                return Err(Error::NumericalInput("resample target"));
            }
            if policy == Extrapolation::Reject && (t < lo || t > hi) {
                return Err(Error::Domain { value: t, lo, hi });
            }
            Ok(curve.value_at(t))
        })
        .collect()
}

/// `(K₁ f)(p) = Σⱼ αⱼ K₁(p, uⱼ) f(uⱼ)` at each evaluation point.
pub fn k1_convolve(
    kernel: &MarginalKernelPair,
    values: &[f64],
    rule: &QuadratureRule,
    eval_points: &[f64],
) -> Result<Vec<f64>> {
    if values.len() != rule.len() {
        return Err(Error::InvalidArgument(format!(
            "{} curve values for a rule with {} nodes",
            values.len(),
            rule.len()
        )));
    }
    let weighted: Vec<f64> = values.iter().zip(rule.weights()).map(|(v, w)| v * w).collect();
    eval_points
        .iter()
        .map(|&p| {
            kernel.k1(p, p)?;
            Ok(rule
                .nodes()
                .iter()
                .zip(&weighted)
                .map(|(&u, &wv)| kernel.k1_unchecked(p, u) * wv)
                .sum())
        })
        .collect()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn small_rules() {
        let r = gauss_legendre(1, Interval::UNIT).unwrap();
        assert_eq!(r.nodes(), &[0.5]);
        assert_abs_diff_eq!(r.weights()[0], 1.0, epsilon = 1e-15);

        let r = gauss_legendre(2, Interval::UNIT).unwrap();
        let s3 = 3f64.sqrt();
        assert_abs_diff_eq!(r.nodes()[0], (3.0 - s3) / 6.0, epsilon = 1e-15);
        assert_abs_diff_eq!(r.nodes()[1], (3.0 + s3) / 6.0, epsilon = 1e-15);
        assert_abs_diff_eq!(r.weights()[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(r.weights()[1], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(r.integrate_fn(|t| t.powi(3)), 0.25, epsilon = 1e-15);

        assert!(gauss_legendre(0, Interval::UNIT).is_err());
        assert!(gauss_legendre(257, Interval::UNIT).is_err());
    }

    #[test]
    fn rule_structure() {
        for m in [3, 20, 64, 256] {
            let r = gauss_legendre(m, Interval::UNIT).unwrap();
            let total: f64 = r.weights().iter().sum();
            assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
            assert!(r.nodes().windows(2).all(|p| p[0] < p[1]));
            assert!(r.nodes()[0] > 0.0 && r.nodes()[m - 1] < 1.0);
            assert!(r.weights().iter().all(|&w| w > 0.0));
        }
        let r = gauss_legendre(7, Interval::new(-2.0, 3.0).unwrap()).unwrap();
        assert_abs_diff_eq!(r.weights().iter().sum::<f64>(), 5.0, epsilon = 1e-12);
    }

    #[test]
    fn integrate_checks() {
        let r = gauss_legendre(16, Interval::UNIT).unwrap();
        let ones = vec![1.0; 16];
        assert_abs_diff_eq!(r.integrate(&ones).unwrap(), 1.0, epsilon = 1e-14);
        let v: Vec<f64> = r.nodes().iter().map(|t| (std::f64::consts::PI * t).sin()).collect();
        assert_abs_diff_eq!(
            r.integrate(&v).unwrap(),
            2.0 / std::f64::consts::PI,
            epsilon = 1e-12
        );
        assert!(r.integrate(&[1.0]).is_err());
        assert!(QuadratureRule::from_parts(vec![], vec![], Interval::UNIT).is_err());
    }

    #[test]
    fn resample_cases() {
        let c = Curve::new(vec![0.0, 1.0], vec![0.0, 2.0]).unwrap();
        assert_abs_diff_eq!(resample(&c, &[0.25]).unwrap()[0], 0.5);
        let c = Curve::new(vec![0.1, 0.4, 0.8], vec![3.0, -1.0, 2.5]).unwrap();
        assert_eq!(resample(&c, &[0.4, 0.8, 0.1]).unwrap(), vec![-1.0, 2.5, 3.0]);
        assert_eq!(resample(&c, &[0.0, 1.0]).unwrap(), vec![3.0, 2.5]);
        assert!(resample_with(&c, &[0.0], Extrapolation::Reject).is_err());
    }

    #[test]
    fn curve_validation() {
        assert!(Curve::new(vec![0.0], vec![1.0]).is_err());
        assert!(Curve::new(vec![0.0, 0.0], vec![1.0, 2.0]).is_err());
        assert!(Curve::new(vec![0.0, 1.0], vec![1.0, f64::NAN]).is_err());
        assert!(Curve::new(vec![0.0, 1.0], vec![1.0]).is_err());
    }

    #[test]
    fn convolve_constant_and_zero() {
        let k = MarginalKernelPair::cubic();
        let r = gauss_legendre(128, Interval::UNIT).unwrap();
        let pts: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
        let out = k1_convolve(&k, &vec![1.0; 128], &r, &pts).unwrap();
        assert!(out.iter().all(|v| v.abs() < 1e-10), "{out:?}");
        let out = k1_convolve(&k, &vec![0.0; 128], &r, &pts).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
        assert!(k1_convolve(&k, &[1.0; 3], &r, &pts).is_err());
        assert!(k1_convolve(&k, &vec![1.0; 128], &r, &[1.5]).is_err());
    }

    #[test]
    fn convolve_against_refined_rule() {
        let k = MarginalKernelPair::cubic();
        let (p, v0) = (0.3, 0.77);
        for m in [20, 25] {
            let coarse = gauss_legendre(m, Interval::UNIT).unwrap();
            let fine = gauss_legendre(10 * m, Interval::UNIT).unwrap();
            let f = |r: &QuadratureRule| -> f64 {
                let vals: Vec<f64> = r.nodes().iter().map(|&u| k.k1_unchecked(u, v0)).collect();
                k1_convolve(&k, &vals, r, &[p]).unwrap()[0]
            };
            assert_abs_diff_eq!(f(&coarse), f(&fine), epsilon = 1e-8);
        }
    }

    #[test]
    fn composite_rule_is_exact_on_kinked_kernel() {
        let k = MarginalKernelPair::cubic();
        for &v in &[0.0, 0.13, 0.5, 0.91, 1.0] {
            let r = QuadratureRule::composite(&[0.0, v, 1.0], 4).unwrap();
            let integral = r.integrate_fn(|u| k.k1_unchecked(u, v));
            assert!(integral.abs() < 1e-15, "v = {v}: {integral}");
        }
    }
}
