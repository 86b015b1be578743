//! Reproducing kernels of the tensor-product cubic spline space on `[0,1]²`.
//!
//! Each axis carries the decomposition `K = K₀ + K₁` of the second-order
//! Sobolev space with inner product
//! `(∫f ∫g + ∫f′ ∫g′) + ∫f″g″`:
//!
//! * `K₀(u,v) = 1 + r₁(u) r₁(v)` spans the null space `{1, r₁}`,
//! * `K₁(u,v) = r₂(u) r₂(v) − r₄(|u − v|)` reproduces its complement,
//!
//! with `r_ν = B_ν / ν!` the scaled Bernoulli polynomials. The bivariate kernels
//! are products of the marginal ones.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const DOMAIN_SLACK: f64 = 1e-12;

/// `r_ν(t) = B_ν(t) / ν!` for the orders the cubic spline kernels need.
pub fn scaled_bernoulli(nu: u32, t: f64) -> Result<f64> {
    check_unit(t)?;
    match nu {
        1 => Ok(r1(t)),
        2 => Ok(r2(t)),
        4 => Ok(r4(t)),
        _ => Err(Error::InvalidArgument(format!(
            "scaled Bernoulli polynomial of order {nu} is not supported (use 1, 2 or 4)"
        ))),
    }
}

#[inline]
pub(crate) fn r1(t: f64) -> f64 {
    t - 0.5
}

#[inline]
pub(crate) fn r2(t: f64) -> f64 {
    (t * t - t + 1.0 / 6.0) / 2.0
}

#[inline]
pub(crate) fn r4(t: f64) -> f64 {
    let t2 = t * t;
    (t2 * t2 - 2.0 * t2 * t + t2 - 1.0 / 30.0) / 24.0
}

fn check_unit(v: f64) -> Result<()> {
    if (-DOMAIN_SLACK..=1.0 + DOMAIN_SLACK).contains(&v) {
        Ok(())
    } else {
        Err(Error::Domain {
            value: v,
            lo: 0.0,
            hi: 1.0,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    #[default]
    CubicSpline,
}

/// The `(K₀, K₁)` pair on one axis together with the null-space basis `ψ_k`.
///
/// The checked methods validate that arguments lie in `[0,1]`; the `*_unchecked`
/// variants are for inner loops whose arguments are already known to be valid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct MarginalKernelPair {
    family: KernelFamily,
}

impl MarginalKernelPair {
    pub fn cubic() -> Self {
        Self {
            family: KernelFamily::CubicSpline,
        }
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn interval(&self) -> (f64, f64) {
        (0.0, 1.0)
    }

    /// Dimension of the null space (`N_y` or `N_x`).
    pub fn null_dim(&self) -> usize {
        match self.family {
            KernelFamily::CubicSpline => 2,
        }
    }

    pub fn k0(&self, u: f64, v: f64) -> Result<f64> {
        check_unit(u)?;
        check_unit(v)?;
        Ok(self.k0_unchecked(u, v))
    }

    pub fn k1(&self, u: f64, v: f64) -> Result<f64> {
        check_unit(u)?;
        check_unit(v)?;
        Ok(self.k1_unchecked(u, v))
    }

    /// Null-space basis function `ψ_k`, `k` counted from zero.
    pub fn psi(&self, k: usize, u: f64) -> Result<f64> {
        check_unit(u)?;
        if k >= self.null_dim() {
            return Err(Error::InvalidArgument(format!(
                "null-space index {k} out of range 0..{}",
                self.null_dim()
            )));
        }
        Ok(self.psi_unchecked(k, u))
    }

    #[inline]
    pub fn k0_unchecked(&self, u: f64, v: f64) -> f64 {
        1.0 + r1(u) * r1(v)
    }

    #[inline]
    pub fn k1_unchecked(&self, u: f64, v: f64) -> f64 {
        r2(u) * r2(v) - r4((u - v).abs())
    }

    #[inline]
    pub fn psi_unchecked(&self, k: usize, u: f64) -> f64 {
        if k == 0 {
            1.0
        } else {
            r1(u)
        }
    }

    /// `K = K₀ + K₁`.
    pub fn k(&self, u: f64, v: f64) -> Result<f64> {
        Ok(self.k0(u, v)? + self.k1(u, v)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KernelPart {
    K0,
    K1,
    Full,
}

/// Point `(t, s)` of `I_y × I_x`.
pub type Point = (f64, f64);

/// Product kernel on `I_y × I_x`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct TensorKernel {
    pub y_axis: MarginalKernelPair,
    pub x_axis: MarginalKernelPair,
}

impl TensorKernel {
    pub fn cubic() -> Self {
        Self {
            y_axis: MarginalKernelPair::cubic(),
            x_axis: MarginalKernelPair::cubic(),
        }
    }

    pub fn eval(&self, part: KernelPart, p1: Point, p2: Point) -> Result<f64> {
        let (t1, s1) = p1;
        let (t2, s2) = p2;
        let k0y = self.y_axis.k0(t1, t2)?;
        let k1y = self.y_axis.k1(t1, t2)?;
        let k0x = self.x_axis.k0(s1, s2)?;
        let k1x = self.x_axis.k1(s1, s2)?;
        let k0 = k0y * k0x;
        let k1 = k0y * k1x + k1y * k0x + k1y * k1x;
        Ok(match part {
            KernelPart::K0 => k0,
            KernelPart::K1 => k1,
            KernelPart::Full => k0 + k1,
        })
    }
}

/// `G[i][j] = kernel(pᵢ, pⱼ)`, evaluated on the upper triangle and mirrored.
pub fn gram_matrix<P, F>(points: &[P], kernel: F) -> Result<DMatrix<f64>>
where
    F: Fn(&P, &P) -> Result<f64>,
{
    if points.is_empty() {
        return Err(Error::InvalidArgument("gram matrix of an empty point set".into()));
    }
    let n = points.len();
    let mut g = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = kernel(&points[i], &points[j])?;
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    Ok(g)
}
