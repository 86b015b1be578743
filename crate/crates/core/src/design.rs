//! Representer basis and the weighted least-squares design.
//!
//! The coefficient surface is expanded as `β = dᵀψ + cᵀξ` with
//! `ψ_ν = ψ_{k,y} ⊗ ψ_{l,x}` (ν = k·N_x + l) and the five ξ blocks
//!
//! 1. `ψ_{1,y} ⊗ h^x_p`
//! 2. `ψ_{2,y} ⊗ h^x_p`
//! 3. `h^y_q ⊗ ψ_{1,x}`
//! 4. `h^y_q ⊗ ψ_{2,x}`
//! 5. `h^y_q ⊗ h^x_p`, flat index `p·p_y + q`
//!
//! In [`BasisForm::Representer`] the factors are the data representers
//! `h^x_j = K₁ₓX_j` and `h^y_i = K₁ᵧY_i`, giving `L = n(N_y + N_x + n)` columns.
//! [`BasisForm::Reduced`] replaces each family by an H₁-orthonormal basis of its
//! span. Both forms describe the same function space, so they produce the same
//! fitted surface; the reduced one stays small when `n` exceeds the node count.
//!
//! Every factor is a combination of kernel sections at the quadrature nodes,
//! `h(·) = Σ_l F[l,p] K₁(·, node_l)`, which is what lets any fitted surface be
//! stored as a `(T+2) × (S+2)` coefficient matrix (see [`Surface`]).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{MarginalKernelPair, TensorKernel};
use crate::quadrature::{resample, Curve, QuadratureRule};
use crate::solver::PenalizedProblem;

/// Relative singular-value cutoff for the span of the sampled curves.
const SPAN_RTOL: f64 = 1e-10;
/// Relative cutoff on H₁ norms when orthonormalizing a reduced family.
const NORM_RTOL: f64 = 1e-13;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisForm {
    /// Data representers in their natural ordering, `L = n(n + 4)`.
    Representer,
    /// H₁-orthonormal basis of the same span.
    Reduced,
    /// `Representer` while `L` does not exceed the node-span dimension, else `Reduced`.
    #[default]
    Auto,
}

impl BasisForm {
    pub fn resolve(self, n: usize, t_nodes: usize, s_nodes: usize) -> BasisForm {
        match self {
            BasisForm::Auto => {
                let full = n * (n + 4);
                let span = 2 * t_nodes + 2 * s_nodes + t_nodes * s_nodes;
                if full <= span {
                    BasisForm::Representer
                } else {
                    BasisForm::Reduced
                }
            }
            other => other,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum XiBlock {
    NullYRepX(usize),
    RepYNullX(usize),
    RepYRepX,
}

/// Layout of the ψ and ξ families plus the cached kernel convolutions.
#[derive(Clone, Debug)]
pub struct BasisCatalog {
    kernel: TensorKernel,
    form: BasisForm,
    t_rule: QuadratureRule,
    s_rule: QuadratureRule,
    /// Curve values at the s-rule nodes, `n × S`.
    x_nodes: DMatrix<f64>,
    /// Curve values at the t-rule nodes, `n × T`.
    y_nodes: DMatrix<f64>,
    /// `h^x_p = Σ_l fx[l,p] K₁ₓ(·, s_l)`, `S × p_x`.
    fx: DMatrix<f64>,
    /// `h^y_q = Σ_m fy[m,q] K₁ᵧ(·, t_m)`, `T × p_y`.
    fy: DMatrix<f64>,
    /// `h^x_p` at the s nodes.
    hx_nodes: DMatrix<f64>,
    /// `h^y_q` at the t nodes.
    hy_nodes: DMatrix<f64>,
}

/// Resamples curves onto the quadrature nodes and builds the catalog.
pub fn build_catalog(
    x: &[Curve],
    y: &[Curve],
    t_rule: &QuadratureRule,
    s_rule: &QuadratureRule,
    form: BasisForm,
) -> Result<BasisCatalog> {
    if x.len() != y.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictor curves but {} response curves",
            x.len(),
            y.len()
        )));
    }
    let x_nodes = node_matrix(x, s_rule)?;
    let y_nodes = node_matrix(y, t_rule)?;
    BasisCatalog::from_node_values(x_nodes, y_nodes, t_rule.clone(), s_rule.clone(), form)
}

/// `n × m` matrix of curve values at the rule nodes.
pub fn node_matrix(curves: &[Curve], rule: &QuadratureRule) -> Result<DMatrix<f64>> {
    let mut out = DMatrix::zeros(curves.len(), rule.len());
    for (i, c) in curves.iter().enumerate() {
        let v = resample(c, rule.nodes())?;
        for (j, val) in v.into_iter().enumerate() {
            out[(i, j)] = val;
        }
    }
    Ok(out)
}

impl BasisCatalog {
    pub fn from_node_values(
        x_nodes: DMatrix<f64>,
        y_nodes: DMatrix<f64>,
        t_rule: QuadratureRule,
        s_rule: QuadratureRule,
        form: BasisForm,
    ) -> Result<Self> {
        let n = x_nodes.nrows();
        if n < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least 2 curve pairs, got {n}"
            )));
        }
        if y_nodes.nrows() != n {
            return Err(Error::InvalidArgument(format!(
                "{n} predictor rows but {} response rows",
                y_nodes.nrows()
            )));
        }
        if x_nodes.ncols() != s_rule.len() || y_nodes.ncols() != t_rule.len() {
            return Err(Error::InvalidArgument(
                "node values do not match the quadrature rules".into(),
            ));
        }
        if x_nodes.iter().chain(y_nodes.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NumericalInput("curve node values"));
        }
        let kernel = TensorKernel::cubic();
        let form = form.resolve(n, t_rule.len(), s_rule.len());
        let kx = node_gram(&kernel.x_axis, &s_rule);
        let ky = node_gram(&kernel.y_axis, &t_rule);
        let (fx, fy) = match form {
            BasisForm::Representer => (
                weighted_transpose(&x_nodes, &s_rule),
                weighted_transpose(&y_nodes, &t_rule),
            ),
            _ => (
                orthonormal_family(&weighted_transpose(&x_nodes, &s_rule), &kx),
                orthonormal_family(&weighted_transpose(&y_nodes, &t_rule), &ky),
            ),
        };
        let hx_nodes = &kx * &fx;
        let hy_nodes = &ky * &fy;
        Ok(Self {
            kernel,
            form,
            t_rule,
            s_rule,
            x_nodes,
            y_nodes,
            fx,
            fy,
            hx_nodes,
            hy_nodes,
        })
    }

    pub fn n(&self) -> usize {
        self.x_nodes.nrows()
    }

    pub fn form(&self) -> BasisForm {
        self.form
    }

    pub fn kernel(&self) -> &TensorKernel {
        &self.kernel
    }

    pub fn t_rule(&self) -> &QuadratureRule {
        &self.t_rule
    }

    pub fn s_rule(&self) -> &QuadratureRule {
        &self.s_rule
    }

    pub fn x_nodes(&self) -> &DMatrix<f64> {
        &self.x_nodes
    }

    pub fn y_nodes(&self) -> &DMatrix<f64> {
        &self.y_nodes
    }

    pub fn null_dims(&self) -> (usize, usize) {
        (self.kernel.y_axis.null_dim(), self.kernel.x_axis.null_dim())
    }

    /// `N = N_y N_x`.
    pub fn null_count(&self) -> usize {
        let (ny, nx) = self.null_dims();
        ny * nx
    }

    /// Number of x-representer factors (`n` in the representer form).
    pub fn px(&self) -> usize {
        self.fx.ncols()
    }

    pub fn py(&self) -> usize {
        self.fy.ncols()
    }

    /// Number of ξ functions in this catalog.
    pub fn xi_count(&self) -> usize {
        let (ny, nx) = self.null_dims();
        ny * self.px() + nx * self.py() + self.px() * self.py()
    }

    /// `L = n(N_y + N_x + n)`, the size of the full representer family.
    pub fn representer_count(&self) -> usize {
        let (ny, nx) = self.null_dims();
        self.n() * (ny + nx + self.n())
    }

    /// `(K₁ₓ X_j)` or its reduced replacement at the s nodes, one column per factor.
    pub fn hx_nodes(&self) -> &DMatrix<f64> {
        &self.hx_nodes
    }

    pub fn hy_nodes(&self) -> &DMatrix<f64> {
        &self.hy_nodes
    }

    pub fn fx(&self) -> &DMatrix<f64> {
        &self.fx
    }

    pub fn fy(&self) -> &DMatrix<f64> {
        &self.fy
    }

    /// Which block a ξ index belongs to.
    pub fn xi_block(&self, k: usize) -> Option<(XiBlock, usize, usize)> {
        let (px, py) = (self.px(), self.py());
        let b12 = 2 * px;
        let b34 = b12 + 2 * py;
        if k < b12 {
            Some((XiBlock::NullYRepX(k / px), 0, k % px))
        } else if k < b34 {
            let r = k - b12;
            Some((XiBlock::RepYNullX(r / py), r % py, 0))
        } else if k < self.xi_count() {
            let r = k - b34;
            Some((XiBlock::RepYRepX, r % py, r / py))
        } else {
            None
        }
    }

    /// `∫ ψ_{l,x}(s) X_i(s) ds`, `n × N_x`.
    fn null_moments(&self) -> DMatrix<f64> {
        let kx = &self.kernel.x_axis;
        let nx = kx.null_dim();
        let mut m = DMatrix::zeros(self.n(), nx);
        for i in 0..self.n() {
            for l in 0..nx {
                m[(i, l)] = self
                    .s_rule
                    .nodes()
                    .iter()
                    .zip(self.s_rule.weights())
                    .enumerate()
                    .map(|(a, (&s, &w))| w * kx.psi_unchecked(l, s) * self.x_nodes[(i, a)])
                    .sum();
            }
        }
        m
    }

    /// `∫ h^x_p(s) X_i(s) ds`, `n × p_x`.
    fn rep_moments(&self) -> DMatrix<f64> {
        let w = DVector::from_column_slice(self.s_rule.weights());
        let mut xw = self.x_nodes.clone();
        for mut row in xw.row_iter_mut() {
            row.component_mul_assign(&w.transpose());
        }
        xw * &self.hx_nodes
    }

    /// Unweighted `S`, `nT × N`: entry `((i,j), ν) = ∫ ψ_ν(t_j, s) X_i(s) ds`.
    pub fn s_matrix(&self) -> DMatrix<f64> {
        let ky = &self.kernel.y_axis;
        let (ny, nx) = self.null_dims();
        let t = self.t_rule.len();
        let m = self.null_moments();
        let mut s = DMatrix::zeros(self.n() * t, ny * nx);
        for i in 0..self.n() {
            for (j, &tj) in self.t_rule.nodes().iter().enumerate() {
                for k in 0..ny {
                    let pk = ky.psi_unchecked(k, tj);
                    for l in 0..nx {
                        s[(i * t + j, k * nx + l)] = pk * m[(i, l)];
                    }
                }
            }
        }
        s
    }

    /// Unweighted `R`, `nT × L`: entry `((i,j), k) = ∫ ξ_k(t_j, s) X_i(s) ds`.
    pub fn r_matrix(&self) -> DMatrix<f64> {
        let ky = &self.kernel.y_axis;
        let (px, py) = (self.px(), self.py());
        let t = self.t_rule.len();
        let null_m = self.null_moments();
        let rep_m = self.rep_moments();
        let b34 = 2 * px;
        let b5 = b34 + 2 * py;
        let mut r = DMatrix::zeros(self.n() * t, self.xi_count());
        for i in 0..self.n() {
            for (j, &tj) in self.t_rule.nodes().iter().enumerate() {
                let row = i * t + j;
                for k in 0..2 {
                    let pk = ky.psi_unchecked(k, tj);
                    for p in 0..px {
                        r[(row, k * px + p)] = pk * rep_m[(i, p)];
                    }
                }
                for l in 0..2 {
                    for q in 0..py {
                        r[(row, b34 + l * py + q)] = self.hy_nodes[(j, q)] * null_m[(i, l)];
                    }
                }
                for p in 0..px {
                    for q in 0..py {
                        r[(row, b5 + p * py + q)] = self.hy_nodes[(j, q)] * rep_m[(i, p)];
                    }
                }
            }
        }
        r
    }

    /// `Q_x = [⟨h^x_i, h^x_j⟩_{H₁}]`, computed as `Fᵀ K₁ F` on the node grid.
    pub fn qx(&self) -> DMatrix<f64> {
        self.fx.transpose() * &self.hx_nodes
    }

    pub fn qy(&self) -> DMatrix<f64> {
        self.fy.transpose() * &self.hy_nodes
    }

    /// `Q = diag(Q_x, Q_x, Q_y, Q_y, Q_x ⊗ Q_y)`.
    pub fn q_matrix(&self) -> DMatrix<f64> {
        let qx = symmetrize(self.qx());
        let qy = symmetrize(self.qy());
        let qxy = qx.kronecker(&qy);
        let l = self.xi_count();
        let mut q = DMatrix::zeros(l, l);
        let mut at = 0;
        for block in [&qx, &qx, &qy, &qy, &qxy] {
            let b = block.nrows();
            q.view_mut((at, at), (b, b)).copy_from(block);
            at += b;
        }
        q
    }

    /// Converts basis coefficients into the node-kernel surface representation.
    pub fn surface(&self, d: &DVector<f64>, c: &DVector<f64>) -> Result<Surface> {
        let (ny, nx) = self.null_dims();
        if d.len() != ny * nx || c.len() != self.xi_count() {
            return Err(Error::InvalidArgument(format!(
                "coefficient lengths ({}, {}) do not match the catalog ({}, {})",
                d.len(),
                c.len(),
                ny * nx,
                self.xi_count()
            )));
        }
        let (t, s) = (self.t_rule.len(), self.s_rule.len());
        let (px, py) = (self.px(), self.py());
        let mut coef = DMatrix::zeros(ny + t, nx + s);
        for k in 0..ny {
            for l in 0..nx {
                coef[(k, l)] = d[k * nx + l];
            }
        }
        for k in 0..ny {
            let ck = c.rows(k * px, px);
            let col = &self.fx * ck;
            for l in 0..s {
                coef[(k, nx + l)] = col[l];
            }
        }
        let off = ny * px;
        for l in 0..nx {
            let cl = c.rows(off + l * py, py);
            let col = &self.fy * cl;
            for m in 0..t {
                coef[(ny + m, l)] = col[m];
            }
        }
        let off = off + nx * py;
        if px > 0 && py > 0 {
            // c5[p·py + q] laid out as a py × px column-major matrix
            let c5 = DMatrix::from_column_slice(py, px, c.rows(off, px * py).as_slice());
            let core = &self.fy * c5 * self.fx.transpose();
            coef.view_mut((ny, nx), (t, s)).copy_from(&core);
        }
        Ok(Surface {
            kernel: self.kernel,
            t_nodes: self.t_rule.nodes().to_vec(),
            s_nodes: self.s_rule.nodes().to_vec(),
            coef,
        })
    }
}

fn node_gram(kernel: &MarginalKernelPair, rule: &QuadratureRule) -> DMatrix<f64> {
    let nodes = rule.nodes();
    DMatrix::from_fn(nodes.len(), nodes.len(), |a, b| {
        kernel.k1_unchecked(nodes[a], nodes[b])
    })
}

/// `diag(α) Vᵀ` for an `n × m` node-value matrix.
fn weighted_transpose(values: &DMatrix<f64>, rule: &QuadratureRule) -> DMatrix<f64> {
    let mut out = values.transpose();
    for (mut row, &w) in out.row_iter_mut().zip(rule.weights()) {
        row *= w;
    }
    out
}

/// Columns `F` spanning `col(a)` with `Fᵀ K F = I`.
fn orthonormal_family(a: &DMatrix<f64>, k: &DMatrix<f64>) -> DMatrix<f64> {
    let m = a.nrows();
    if a.ncols() == 0 || a.iter().all(|v| *v == 0.0) {
        return DMatrix::zeros(m, 0);
    }
    // eigenvectors of A Aᵀ give an orthonormal basis of col(A)
    let eig = (a * a.transpose()).symmetric_eigen();
    let top = eig.eigenvalues.max();
    let keep: Vec<usize> = (0..m)
        .filter(|&i| eig.eigenvalues[i] > SPAN_RTOL * SPAN_RTOL * top)
        .collect();
    let u = DMatrix::from_fn(m, keep.len(), |r, c| eig.eigenvectors[(r, keep[c])]);
    let g = symmetrize(u.transpose() * k * &u);
    let geig = g.symmetric_eigen();
    let gtop = geig.eigenvalues.max();
    let gkeep: Vec<usize> = (0..keep.len())
        .filter(|&i| geig.eigenvalues[i] > NORM_RTOL * gtop)
        .collect();
    let scaled = DMatrix::from_fn(keep.len(), gkeep.len(), |r, c| {
        geig.eigenvectors[(r, gkeep[c])] / geig.eigenvalues[gkeep[c]].sqrt()
    });
    u * scaled
}

pub(crate) fn symmetrize(mut m: DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

/// Coefficient surface `β(t,s) = φ(t)ᵀ C γ(s)` with
/// `φ(t) = (ψ_{1,y}(t), ψ_{2,y}(t), K₁ᵧ(t, t_1), …, K₁ᵧ(t, t_T))` and `γ` likewise on
/// the s nodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Surface {
    pub kernel: TensorKernel,
    pub t_nodes: Vec<f64>,
    pub s_nodes: Vec<f64>,
    pub coef: DMatrix<f64>,
}

impl Surface {
    pub fn zero(t_nodes: Vec<f64>, s_nodes: Vec<f64>) -> Self {
        let coef = DMatrix::zeros(t_nodes.len() + 2, s_nodes.len() + 2);
        Self {
            kernel: TensorKernel::cubic(),
            t_nodes,
            s_nodes,
            coef,
        }
    }

    pub fn t_features(&self, t: f64) -> DVector<f64> {
        features(&self.kernel.y_axis, &self.t_nodes, t)
    }

    pub fn s_features(&self, s: f64) -> DVector<f64> {
        features(&self.kernel.x_axis, &self.s_nodes, s)
    }

    pub fn eval(&self, t: f64, s: f64) -> Result<f64> {
        self.kernel.y_axis.k1(t, t)?;
        self.kernel.x_axis.k1(s, s)?;
        Ok(self.t_features(t).dot(&(&self.coef * self.s_features(s))))
    }

    /// `∫ γ(s) f(s) ds` under `rule`, for node values `f(s_a)`.
    pub fn s_moments(&self, rule: &QuadratureRule, values: &[f64]) -> DVector<f64> {
        let mut g = DVector::zeros(self.s_nodes.len() + 2);
        for ((&s, &w), &v) in rule.nodes().iter().zip(rule.weights()).zip(values) {
            g.axpy(w * v, &self.s_features(s), 1.0);
        }
        g
    }

    /// `η(t) = ∫ β(t,s) f(s) ds` at each `t`, given the s moments of `f`.
    pub fn eta(&self, moments: &DVector<f64>, t_points: &[f64]) -> Vec<f64> {
        let cg = &self.coef * moments;
        t_points.iter().map(|&t| self.t_features(t).dot(&cg)).collect()
    }
}

fn features(kernel: &MarginalKernelPair, nodes: &[f64], u: f64) -> DVector<f64> {
    let nd = kernel.null_dim();
    let mut f = DVector::zeros(nd + nodes.len());
    for k in 0..nd {
        f[k] = kernel.psi_unchecked(k, u);
    }
    for (a, &v) in nodes.iter().enumerate() {
        f[nd + a] = kernel.k1_unchecked(u, v);
    }
    f
}

/// Weighted design `Y_w`, `S_w`, `R_w`, `Q` with `W = diag(α_1..α_T)` repeated `n` times.
#[derive(Clone, Debug)]
pub struct DesignSystem {
    pub catalog: BasisCatalog,
    pub problem: PenalizedProblem,
    /// Diagonal of `W`.
    pub weights: Vec<f64>,
}

impl DesignSystem {
    pub fn from_catalog(catalog: BasisCatalog) -> Result<Self> {
        let n = catalog.n();
        let t = catalog.t_rule().len();
        let weights: Vec<f64> = (0..n).flat_map(|_| catalog.t_rule().weights().to_vec()).collect();
        let root: Vec<f64> = weights.iter().map(|w| w.sqrt()).collect();
        let mut yw = DVector::zeros(n * t);
        for i in 0..n {
            for j in 0..t {
                yw[i * t + j] = root[i * t + j] * catalog.y_nodes()[(i, j)];
            }
        }
        let mut sw = catalog.s_matrix();
        let mut rw = catalog.r_matrix();
        for (r, &w) in root.iter().enumerate() {
            sw.row_mut(r).scale_mut(w);
            rw.row_mut(r).scale_mut(w);
        }
        let q = catalog.q_matrix();
        let problem = PenalizedProblem::new(yw, sw, rw, q, n)?;
        Ok(Self {
            catalog,
            problem,
            weights,
        })
    }

    pub fn nt(&self) -> usize {
        self.weights.len()
    }
}

/// Builds the complete weighted system from (already centered) curves.
pub fn assemble(
    x: &[Curve],
    y: &[Curve],
    t_rule: &QuadratureRule,
    s_rule: &QuadratureRule,
    form: BasisForm,
) -> Result<DesignSystem> {
    DesignSystem::from_catalog(build_catalog(x, y, t_rule, s_rule, form)?)
}

pub fn build_s(catalog: &BasisCatalog) -> DMatrix<f64> {
    catalog.s_matrix()
}

pub fn build_r(catalog: &BasisCatalog) -> DMatrix<f64> {
    catalog.r_matrix()
}

pub fn build_q(catalog: &BasisCatalog) -> DMatrix<f64> {
    catalog.q_matrix()
}
