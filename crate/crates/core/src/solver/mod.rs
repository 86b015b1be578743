//! Weighted penalized least squares
//! `‖Y_w − S_w d − R_w c‖² + nλ cᵀQc`, its smoothing matrix `A(λ)`, and
//! modified-GCV selection of `λ`.
//!
//! Three routes give the same quantities:
//!
//! * pivoted Cholesky of the normal equations at one `λ`, for the coefficients and
//!   for `tr A(λ)` from probe solves,
//! * the dense `A(λ)` built from the same factor,
//! * a [`Spectrum`] that diagonalizes the data Gram and the penalty together once,
//!   after which every grid point costs one product with a fixed `nT × rank` matrix.
//!
//! [`select_lambda`] scans the grid with the spectrum. The final solve uses Cholesky.

mod pivchol;

pub use pivchol::PivotedCholesky;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::design::symmetrize;
use crate::error::{Error, Result};

/// Pivots below this fraction of the largest one are dropped.
pub const PIVOT_RTOL: f64 = 1e-10;
pub const DEFAULT_FUDGE: f64 = 1.4;
/// `nT` above which `A(λ)` is no longer formed densely for traces.
pub const DENSE_TRACE_LIMIT: usize = 4000;

/// The matrices of one penalized least-squares problem.
#[derive(Clone, Debug)]
pub struct PenalizedProblem {
    pub yw: DVector<f64>,
    pub sw: DMatrix<f64>,
    pub rw: DMatrix<f64>,
    pub q: DMatrix<f64>,
    /// Sample count multiplying `λ` in the penalty.
    pub n: usize,
}

impl PenalizedProblem {
    pub fn new(
        yw: DVector<f64>,
        sw: DMatrix<f64>,
        rw: DMatrix<f64>,
        q: DMatrix<f64>,
        n: usize,
    ) -> Result<Self> {
        let rows = yw.len();
        if sw.nrows() != rows || rw.nrows() != rows {
            return Err(Error::InvalidArgument(format!(
                "design rows ({}, {}) do not match the response length {rows}",
                sw.nrows(),
                rw.nrows()
            )));
        }
        if q.nrows() != rw.ncols() || q.ncols() != rw.ncols() {
            return Err(Error::InvalidArgument(format!(
                "penalty is {}x{} but there are {} penalized coefficients",
                q.nrows(),
                q.ncols(),
                rw.ncols()
            )));
        }
        if n == 0 {
            return Err(Error::InvalidArgument("sample count must be positive".into()));
        }
        let finite = |m: &DMatrix<f64>| m.iter().all(|v| v.is_finite());
        if !yw.iter().all(|v| v.is_finite()) || !finite(&sw) || !finite(&rw) || !finite(&q) {
            return Err(Error::NumericalInput("design matrices"));
        }
        Ok(Self { yw, sw, rw, q, n })
    }

    pub fn nt(&self) -> usize {
        self.yw.len()
    }

    pub fn null_count(&self) -> usize {
        self.sw.ncols()
    }

    pub fn xi_count(&self) -> usize {
        self.rw.ncols()
    }

    pub fn dim(&self) -> usize {
        self.null_count() + self.xi_count()
    }

    /// `[S_w R_w]`.
    pub fn design(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nt(), self.dim());
        m.columns_mut(0, self.null_count()).copy_from(&self.sw);
        m.columns_mut(self.null_count(), self.xi_count())
            .copy_from(&self.rw);
        m
    }

    /// `(Y_w − S_w d − R_w c)ᵀ(…) + nλ cᵀQc`.
    pub fn objective(&self, d: &DVector<f64>, c: &DVector<f64>, lambda: f64) -> f64 {
        let r = &self.yw - &self.sw * d - &self.rw * c;
        r.norm_squared() + self.n as f64 * lambda * c.dot(&(&self.q * c))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PenalizedSolution {
    pub d: DVector<f64>,
    pub c: DVector<f64>,
    pub lambda: f64,
    /// `tr A(λ)`.
    pub effective_df: f64,
    /// `‖Y_w − Ŷ_w‖²`.
    pub rss: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TraceMethod {
    /// Form `A(λ)` and take its trace and residual directly.
    Dense,
    /// `tr(G⁻¹G₀)` from one solve per coefficient, residual from the coefficients.
    Probe,
    /// Closed form from the simultaneous diagonalization.
    Spectral,
}

impl TraceMethod {
    pub fn for_size(nt: usize) -> Self {
        if nt <= DENSE_TRACE_LIMIT {
            TraceMethod::Dense
        } else {
            TraceMethod::Probe
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GcvTrace {
    /// Descending.
    pub lambdas: Vec<f64>,
    /// `V(λ)`; NaN where the smoother was degenerate.
    pub scores: Vec<f64>,
    pub edf: Vec<f64>,
    pub chosen: usize,
    pub fudge: f64,
}

impl GcvTrace {
    pub fn chosen_lambda(&self) -> f64 {
        self.lambdas[self.chosen]
    }

    pub fn chosen_score(&self) -> f64 {
        self.scores[self.chosen]
    }
}

/// `count` log-spaced values from `hi` down to `lo`.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi > lo && lo.is_finite() && hi.is_finite()) || count == 0 {
        return Err(Error::InvalidArgument(format!(
            "lambda grid needs 0 < lo < hi and count >= 1 (got {lo}, {hi}, {count})"
        )));
    }
    if count == 1 {
        return Ok(vec![hi]);
    }
    let (a, b) = (hi.log10(), lo.log10());
    Ok((0..count)
        .map(|i| 10f64.powf(a + (b - a) * i as f64 / (count - 1) as f64))
        .collect())
}

/// 40 points over `[1e-8, 1e2]`.
pub fn default_lambda_grid() -> Vec<f64> {
    log_grid(1e-8, 1e2, 40).expect("static grid")
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda > 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("lambda must be positive and finite, got {lambda}")))
    }
}

fn check_fudge(fudge: f64) -> Result<()> {
    if fudge >= 1.0 && fudge.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("fudge factor must be >= 1, got {fudge}")))
    }
}

fn gcv_value(rss: f64, edf: f64, nt: usize, fudge: f64, lambda: f64) -> Result<f64> {
    let ntf = nt as f64;
    let denom = ntf - fudge * edf;
    if !(denom > 0.0) {
        return Err(Error::DegenerateSmoother {
            lambda,
            denominator: denom,
        });
    }
    Ok((rss / ntf) / (denom / ntf).powi(2))
}

/// One problem reduced once: `M = Q_M R_M` and a penalty root `HᵀH = blockdiag(0, nQ)`.
///
/// Every factorization at a given `λ` is the pivoted Cholesky factor of
/// `MᵀM + λHᵀH`, taken from the stacked rows `[R_M; √λ H]`.
#[derive(Clone, Debug)]
pub struct PenalizedSolver<'a> {
    problem: &'a PenalizedProblem,
    design: DMatrix<f64>,
    r_m: DMatrix<f64>,
    /// Leading entries of `Q_Mᵀ Y_w`.
    qty: DVector<f64>,
    h: DMatrix<f64>,
}

impl<'a> PenalizedSolver<'a> {
    pub fn new(problem: &'a PenalizedProblem) -> Self {
        let design = problem.design();
        let qr = design.clone().qr();
        let r_m = qr.r();
        let mut y = problem.yw.clone();
        qr.q_tr_mul(&mut y);
        let qty = y.rows(0, r_m.nrows()).into_owned();
        let (nn, l) = (problem.null_count(), problem.xi_count());
        let eig = symmetrize(problem.q.clone()).symmetric_eigen();
        let keep: Vec<usize> = (0..l).filter(|&k| eig.eigenvalues[k] > 0.0).collect();
        let mut h = DMatrix::zeros(keep.len(), problem.dim());
        for (r, &k) in keep.iter().enumerate() {
            let w = (problem.n as f64 * eig.eigenvalues[k]).sqrt();
            for j in 0..l {
                h[(r, nn + j)] = w * eig.eigenvectors[(j, k)];
            }
        }
        Self {
            problem,
            design,
            r_m,
            qty,
            h,
        }
    }

    pub fn problem(&self) -> &PenalizedProblem {
        self.problem
    }

    fn stacked(&self, lambda: f64, jitter: f64) -> (DMatrix<f64>, DMatrix<f64>) {
        let (rm, rh, p) = (self.r_m.nrows(), self.h.nrows(), self.problem.dim());
        let extra = if jitter > 0.0 { p } else { 0 };
        let mut b = DMatrix::zeros(rm + rh + extra, p);
        b.view_mut((0, 0), (rm, p)).copy_from(&self.r_m);
        b.view_mut((rm, 0), (rh, p)).copy_from(&(&self.h * lambda.sqrt()));
        if extra > 0 {
            b.view_mut((rm + rh, 0), (p, p))
                .copy_from(&(DMatrix::identity(p, p) * jitter.sqrt()));
        }
        let mut rhs = DMatrix::zeros(b.nrows(), 1);
        rhs.view_mut((0, 0), (rm, 1)).copy_from(&self.qty);
        (b, rhs)
    }

    fn coefficients(&self, lambda: f64) -> Result<(PivotedCholesky, DVector<f64>)> {
        let (b, rhs) = self.stacked(lambda, 0.0);
        let (f, qtb) = PivotedCholesky::from_rows(&b, &rhs, PIVOT_RTOL)?;
        let theta = f.solve_transformed(qtb.as_slice());
        if theta.iter().all(|v| v.is_finite()) {
            let refined = self.refine(&f, theta.clone(), lambda);
            if refined.iter().all(|v| v.is_finite()) {
                return Ok((f, refined));
            }
            return Ok((f, theta));
        }
        // ridge jitter before giving up
        let p = self.problem.dim().max(1);
        let jitter = 1e-12 * self.r_m.norm_squared().max(1e-300) / p as f64;
        let (b, rhs) = self.stacked(lambda, jitter);
        let (f, qtb) = PivotedCholesky::from_rows(&b, &rhs, PIVOT_RTOL)?;
        let theta = f.solve_transformed(qtb.as_slice());
        if theta.iter().all(|v| v.is_finite()) {
            Ok((f, theta))
        } else {
            Err(Error::Singular(format!(
                "normal equations at lambda = {lambda:e} after pivoting and jitter"
            )))
        }
    }

    /// One step of iterative refinement against the gradient formed from `M` and `Q`
    /// themselves, which removes the error the penalty root `H` carries.
    fn refine(&self, f: &PivotedCholesky, mut theta: DVector<f64>, lambda: f64) -> DVector<f64> {
        let p = self.problem;
        let nn = p.null_count();
        let mut g = self.design.transpose() * (&p.yw - &self.design * &theta);
        let pen = &p.q * theta.rows(nn, p.xi_count()) * (p.n as f64 * lambda);
        let mut tail = g.rows_mut(nn, p.xi_count());
        tail -= pen;
        theta += f.solve(&g);
        theta
    }

    fn split(&self, theta: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let nn = self.problem.null_count();
        (
            theta.rows(0, nn).into_owned(),
            theta.rows(nn, self.problem.xi_count()).into_owned(),
        )
    }

    /// Minimizer at `lambda`; `effective_df` via probe solves.
    pub fn solve(&self, lambda: f64) -> Result<PenalizedSolution> {
        check_lambda(lambda)?;
        let (f, theta) = self.coefficients(lambda)?;
        let fitted = &self.design * &theta;
        let rss = (&self.problem.yw - fitted).norm_squared();
        let effective_df = self.probe_trace_with(&f);
        let (d, c) = self.split(&theta);
        Ok(PenalizedSolution {
            d,
            c,
            lambda,
            effective_df,
            rss,
        })
    }

    /// `A(λ) = M G⁺ Mᵀ` with `M = [S_w R_w]`.
    pub fn hat_matrix(&self, lambda: f64) -> Result<DMatrix<f64>> {
        check_lambda(lambda)?;
        let (f, _) = self.coefficients(lambda)?;
        let half = f.whiten(&self.design.transpose());
        Ok(symmetrize(half.tr_mul(&half)))
    }

    /// `tr(G⁺ MᵀM) = ‖R_M D Π L⁻ᵀ‖²_F`, one triangular solve per coefficient probe.
    fn probe_trace_with(&self, f: &PivotedCholesky) -> f64 {
        f.whiten(&self.r_m.transpose()).norm_squared()
    }

    /// `tr A(λ)` from solves on the `N + L` coefficient probes.
    pub fn probe_trace(&self, lambda: f64) -> Result<f64> {
        check_lambda(lambda)?;
        let (f, _) = self.coefficients(lambda)?;
        Ok(self.probe_trace_with(&f))
    }

    /// `V(λ)`.
    pub fn gcv_score(&self, lambda: f64, fudge: f64, method: TraceMethod) -> Result<f64> {
        check_lambda(lambda)?;
        check_fudge(fudge)?;
        let nt = self.problem.nt();
        let (rss, edf) = match method {
            TraceMethod::Dense => {
                let a = self.hat_matrix(lambda)?;
                let resid = &self.problem.yw - &a * &self.problem.yw;
                (resid.norm_squared(), a.trace())
            }
            TraceMethod::Probe => {
                let s = self.solve(lambda)?;
                (s.rss, s.effective_df)
            }
            TraceMethod::Spectral => {
                let sp = self.spectrum()?;
                (sp.rss(lambda), sp.edf(lambda))
            }
        };
        gcv_value(rss, edf, nt, fudge, lambda)
    }

    pub fn spectrum(&self) -> Result<Spectrum> {
        Spectrum::new(self)
    }

    pub fn select_lambda(&self, grid: &[f64], fudge: f64) -> Result<GcvTrace> {
        check_fudge(fudge)?;
        if grid.is_empty() {
            return Err(Error::InvalidArgument("empty lambda grid".into()));
        }
        for &l in grid {
            check_lambda(l)?;
        }
        let sp = self.spectrum()?;
        self.select_from_spectrum(&sp, grid, fudge)
    }

    /// [`select_lambda`](Self::select_lambda) with a precomputed spectrum.
    pub fn select_from_spectrum(&self, sp: &Spectrum, grid: &[f64], fudge: f64) -> Result<GcvTrace> {
        check_fudge(fudge)?;
        if grid.is_empty() {
            return Err(Error::InvalidArgument("empty lambda grid".into()));
        }
        for &l in grid {
            check_lambda(l)?;
        }
        let mut lambdas = grid.to_vec();
        lambdas.sort_by(|a, b| b.total_cmp(a));
        lambdas.dedup();
        let nt = self.problem.nt();
        let mut scores = Vec::with_capacity(lambdas.len());
        let mut edf = Vec::with_capacity(lambdas.len());
        let mut chosen: Option<usize> = None;
        for (i, &l) in lambdas.iter().enumerate() {
            let e = sp.edf(l);
            edf.push(e);
            match gcv_value(sp.rss(l), e, nt, fudge, l) {
                Ok(v) => {
                    scores.push(v);
                    // strict improvement only: ties stay with the larger λ
                    if chosen.is_none_or(|c| v < scores[c]) {
                        chosen = Some(i);
                    }
                }
                Err(_) => scores.push(f64::NAN),
            }
        }
        let chosen = chosen.ok_or(Error::SelectionFailed)?;
        Ok(GcvTrace {
            lambdas,
            scores,
            edf,
            chosen,
            fudge,
        })
    }
}

/// Simultaneous diagonalization of `G₀ = MᵀM` and the penalty `P = HᵀH`.
///
/// With `B = G₀ + σP` factored by pivoted Cholesky and `V = D Π L⁻ᵀ E` from the
/// eigenvectors of `L⁻¹ σP L⁻ᵀ = E diag(κ) Eᵀ`, one has `VᵀG₀V = diag(1 − κ)` and
/// `VᵀσPV = diag(κ)`, so `G₀ + λP` is diagonal for every `λ`.
#[derive(Clone, Debug)]
pub struct Spectrum {
    sigma: f64,
    kappa: Vec<f64>,
    /// `‖M v_k‖²`, the data part `1 − κ_k` computed without cancellation.
    gamma: Vec<f64>,
    /// `Vᵀ Mᵀ Y_w`.
    proj: Vec<f64>,
    basis: DMatrix<f64>,
    /// `M V`, so fitted values need no subtraction from `‖Y_w‖²`.
    image: DMatrix<f64>,
    yw: DVector<f64>,
}

impl Spectrum {
    fn new(solver: &PenalizedSolver<'_>) -> Result<Self> {
        let tr_g = solver.r_m.norm_squared();
        let tr_p = solver.h.norm_squared();
        let sigma = if tr_p > 0.0 && tr_g > 0.0 { tr_g / tr_p } else { 1.0 };
        let (b, rhs) = solver.stacked(sigma, 0.0);
        let (f, _) = PivotedCholesky::from_rows(&b, &rhs, PIVOT_RTOL)?;
        let r = f.rank();
        // B-orthonormal coordinates V₀ = D Π L⁻ᵀ; the penalty part of V₀ᵀBV₀ = I
        let v0 = f.unwhiten(&DMatrix::identity(r, r));
        let z = &solver.h * &v0 * sigma.sqrt();
        let eig = symmetrize(z.tr_mul(&z)).symmetric_eigen();
        let kappa: Vec<f64> = eig.eigenvalues.iter().map(|k| k.clamp(0.0, 1.0)).collect();
        let basis = v0 * &eig.eigenvectors;
        let image = &solver.design * &basis;
        let gamma = image.column_iter().map(|u| u.norm_squared()).collect();
        let proj = image.tr_mul(&solver.problem.yw);
        Ok(Self {
            sigma,
            kappa,
            gamma,
            proj: proj.iter().copied().collect(),
            basis,
            image,
            yw: solver.problem.yw.clone(),
        })
    }

    fn denom(&self, k: usize, lambda: f64) -> f64 {
        self.gamma[k] + lambda / self.sigma * self.kappa[k]
    }

    fn weights(&self, lambda: f64) -> DVector<f64> {
        DVector::from_fn(self.kappa.len(), |k, _| {
            let d = self.denom(k, lambda);
            if d > 0.0 {
                self.proj[k] / d
            } else {
                0.0
            }
        })
    }

    pub fn edf(&self, lambda: f64) -> f64 {
        (0..self.kappa.len())
            .map(|k| {
                let d = self.denom(k, lambda);
                if d > 0.0 {
                    self.gamma[k] / d
                } else {
                    0.0
                }
            })
            .sum()
    }

    pub fn rss(&self, lambda: f64) -> f64 {
        (&self.yw - &self.image * self.weights(lambda)).norm_squared()
    }

    /// Stacked `(d, c)` at `lambda`.
    pub fn coefficients(&self, lambda: f64) -> DVector<f64> {
        &self.basis * self.weights(lambda)
    }
}

pub fn solve_penalized(problem: &PenalizedProblem, lambda: f64) -> Result<PenalizedSolution> {
    PenalizedSolver::new(problem).solve(lambda)
}

pub fn hat_apply(problem: &PenalizedProblem, lambda: f64) -> Result<DMatrix<f64>> {
    PenalizedSolver::new(problem).hat_matrix(lambda)
}

/// `V(λ)`, with the trace route chosen by problem size.
pub fn gcv_score(problem: &PenalizedProblem, lambda: f64, fudge: f64) -> Result<f64> {
    PenalizedSolver::new(problem).gcv_score(lambda, fudge, TraceMethod::for_size(problem.nt()))
}

pub fn select_lambda(problem: &PenalizedProblem, grid: &[f64], fudge: f64) -> Result<GcvTrace> {
    PenalizedSolver::new(problem).select_lambda(grid, fudge)
}
