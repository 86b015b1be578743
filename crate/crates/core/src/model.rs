//! Fit and predict: centering, λ selection, the fitted surface, and MISE.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::design::{node_matrix, BasisCatalog, BasisForm, DesignSystem, Surface};
use crate::error::{Error, Result};
use crate::kernels::MarginalKernelPair;
use crate::quadrature::{gauss_legendre, Curve, Interval, QuadratureRule, MAX_RULE_SIZE};
use crate::solver::{default_lambda_grid, GcvTrace, PenalizedSolver, DEFAULT_FUDGE};

pub const MODEL_VERSION: &str = "opffr-model/1";
pub const DEFAULT_NODES: usize = 20;

/// Panel size of the composite rules used for error integrals.
const RISK_PANEL: usize = 8;
/// Gauss-Legendre size for the outer `t` integral of the MISE.
const RISK_T_NODES: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub t_nodes: usize,
    pub s_nodes: usize,
    pub lambda_grid: Vec<f64>,
    pub fudge: f64,
    pub basis: BasisForm,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            t_nodes: DEFAULT_NODES,
            s_nodes: DEFAULT_NODES,
            lambda_grid: default_lambda_grid(),
            fudge: DEFAULT_FUDGE,
            basis: BasisForm::Auto,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, m) in [("t_nodes", self.t_nodes), ("s_nodes", self.s_nodes)] {
            if !(1..=MAX_RULE_SIZE).contains(&m) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be in 1..={MAX_RULE_SIZE}, got {m}"
                )));
            }
        }
        if self.lambda_grid.is_empty() {
            return Err(Error::InvalidArgument("empty lambda grid".into()));
        }
        if let Some(l) = self.lambda_grid.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
            return Err(Error::InvalidArgument(format!("lambda grid value {l} is not positive")));
        }
        if !(self.fudge >= 1.0 && self.fudge.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "fudge factor must be >= 1, got {}",
                self.fudge
            )));
        }
        Ok(())
    }
}

/// Original argument ranges of the two axes before mapping to `[0,1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AxisRanges {
    pub s: (f64, f64),
    pub t: (f64, f64),
}

/// Minimal-norm cubic spline interpolant through values at the rule nodes, used to
/// evaluate the mean response between nodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanCurve {
    nodes: Vec<f64>,
    values: Vec<f64>,
    null: [f64; 2],
    reps: Vec<f64>,
}

impl MeanCurve {
    pub fn interpolate(nodes: &[f64], values: &[f64]) -> Result<Self> {
        let m = nodes.len();
        if m != values.len() || m == 0 {
            return Err(Error::InvalidArgument("mean curve needs matching nodes and values".into()));
        }
        let k = MarginalKernelPair::cubic();
        if m == 1 {
            return Ok(Self {
                nodes: nodes.to_vec(),
                values: values.to_vec(),
                null: [values[0], 0.0],
                reps: vec![0.0],
            });
        }
        // [K S; Sᵀ 0] [a; b] = [v; 0]
        let dim = m + 2;
        let mut a = DMatrix::zeros(dim, dim);
        let mut rhs = DVector::zeros(dim);
        for i in 0..m {
            for j in 0..m {
                a[(i, j)] = k.k1_unchecked(nodes[i], nodes[j]);
            }
            for l in 0..2 {
                let p = k.psi_unchecked(l, nodes[i]);
                a[(i, m + l)] = p;
                a[(m + l, i)] = p;
            }
            rhs[i] = values[i];
        }
        let sol = a
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Singular("mean curve interpolation".into()))?;
        Ok(Self {
            nodes: nodes.to_vec(),
            values: values.to_vec(),
            null: [sol[m], sol[m + 1]],
            reps: sol.rows(0, m).iter().copied().collect(),
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn eval(&self, t: f64) -> f64 {
        let k = MarginalKernelPair::cubic();
        let mut v = self.null[0] + self.null[1] * k.psi_unchecked(1, t);
        for (&u, &a) in self.nodes.iter().zip(&self.reps) {
            v += a * k.k1_unchecked(t, u);
        }
        v
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub version: String,
    pub n: usize,
    pub config: FitConfig,
    /// Form the basis actually took.
    pub basis: BasisForm,
    pub t_rule: QuadratureRule,
    pub s_rule: QuadratureRule,
    pub x_mean: Vec<f64>,
    pub y_mean: MeanCurve,
    /// Centered training curves at the s- and t-rule nodes.
    pub x_centered: DMatrix<f64>,
    pub y_centered: DMatrix<f64>,
    pub d: DVector<f64>,
    pub c: DVector<f64>,
    pub lambda: f64,
    pub effective_df: f64,
    pub rss: f64,
    /// Quadrature objective at `(d, c)` and at `(0, 0)`.
    pub objective: f64,
    pub zero_objective: f64,
    pub gcv: GcvTrace,
    pub surface: Surface,
    /// Centered fitted values at the t-rule nodes, `n × T`.
    pub fitted: DMatrix<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ranges: Option<AxisRanges>,
}

/// Predicted trajectories on a shared `t` grid, one row per input curve.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionResult {
    pub t: Vec<f64>,
    /// `∫β̂(t,s)(X(s) − x̄(s))ds + ȳ(t)`.
    pub eta: Vec<Vec<f64>>,
    /// The same without `ȳ(t)`.
    pub eta_centered: Vec<Vec<f64>>,
    pub labels: Vec<Option<String>>,
}

impl PredictionResult {
    /// `eta` as curves; needs a grid of at least two points.
    pub fn eta_curves(&self) -> Result<Vec<Curve>> {
        self.eta
            .iter()
            .zip(&self.labels)
            .map(|(v, l)| {
                let mut c = Curve::new(self.t.clone(), v.clone())?;
                c.label = l.clone();
                Ok(c)
            })
            .collect()
    }
}

fn column_means(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows() as f64;
    m.column_iter().map(|c| c.sum() / n).collect()
}

fn center(m: &DMatrix<f64>, mean: &[f64]) -> DMatrix<f64> {
    let mut out = m.clone();
    for (mut col, &mu) in out.column_iter_mut().zip(mean) {
        col.add_scalar_mut(-mu);
    }
    out
}

/// Fits the centered model and selects `λ` by modified GCV.
pub fn fit(x: &[Curve], y: &[Curve], config: &FitConfig) -> Result<FittedModel> {
    config.validate()?;
    if x.len() != y.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictor curves but {} response curves",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 curve pairs, got {}",
            x.len()
        )));
    }
    let t_rule = gauss_legendre(config.t_nodes, Interval::UNIT)?;
    let s_rule = gauss_legendre(config.s_nodes, Interval::UNIT)?;
    let xv = node_matrix(x, &s_rule)?;
    let yv = node_matrix(y, &t_rule)?;
    fit_node_values(xv, yv, t_rule, s_rule, config)
}

/// [`fit`] for curves already evaluated at the rule nodes (`n × S` and `n × T`).
pub fn fit_node_values(
    x_nodes: DMatrix<f64>,
    y_nodes: DMatrix<f64>,
    t_rule: QuadratureRule,
    s_rule: QuadratureRule,
    config: &FitConfig,
) -> Result<FittedModel> {
    config.validate()?;
    let n = x_nodes.nrows();
    if n < 2 || y_nodes.nrows() != n {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 matching curve pairs, got {} and {}",
            n,
            y_nodes.nrows()
        )));
    }
    let x_mean = column_means(&x_nodes);
    let y_mean_nodes = column_means(&y_nodes);
    let xc = center(&x_nodes, &x_mean);
    let yc = center(&y_nodes, &y_mean_nodes);
    let y_mean = MeanCurve::interpolate(t_rule.nodes(), &y_mean_nodes)?;

    let catalog = BasisCatalog::from_node_values(
        xc.clone(),
        yc.clone(),
        t_rule.clone(),
        s_rule.clone(),
        config.basis,
    )?;
    let basis = catalog.form();
    let system = DesignSystem::from_catalog(catalog)?;
    let solver = PenalizedSolver::new(&system.problem);
    let gcv = solver.select_lambda(&config.lambda_grid, config.fudge)?;
    let sol = solver.solve(gcv.chosen_lambda())?;
    let objective = system.problem.objective(&sol.d, &sol.c, sol.lambda);
    let zero_objective = system.problem.yw.norm_squared();
    let surface = system.catalog.surface(&sol.d, &sol.c)?;

    let t = t_rule.len();
    let fit_w = system.problem.sw.clone() * &sol.d + &system.problem.rw * &sol.c;
    let fitted = DMatrix::from_fn(n, t, |i, j| {
        fit_w[i * t + j] / system.weights[i * t + j].sqrt()
    });
    log::debug!(
        "fit: n={n} basis={basis:?} lambda={:e} edf={:.3}",
        sol.lambda,
        sol.effective_df
    );
    Ok(FittedModel {
        version: MODEL_VERSION.to_string(),
        n,
        config: config.clone(),
        basis,
        t_rule,
        s_rule,
        x_mean,
        y_mean,
        x_centered: xc,
        y_centered: yc,
        d: sol.d,
        c: sol.c,
        lambda: sol.lambda,
        effective_df: sol.effective_df,
        rss: sol.rss,
        objective,
        zero_objective,
        gcv,
        surface,
        fitted,
        ranges: None,
    })
}

impl FittedModel {
    /// `β̂(t, s)`.
    pub fn eval_beta(&self, t: f64, s: f64) -> Result<f64> {
        self.surface.eval(t, s)
    }

    pub fn predict(&self, x_new: &[Curve], t_grid: Option<&[f64]>) -> Result<PredictionResult> {
        let t: Vec<f64> = match t_grid {
            Some(g) => {
                for &v in g {
                    self.surface.kernel.y_axis.k1(v, v)?;
                }
                g.to_vec()
            }
            None => self.t_rule.nodes().to_vec(),
        };
        let xv = node_matrix(x_new, &self.s_rule)?;
        let xc = center(&xv, &self.x_mean);
        let ybar: Vec<f64> = match t_grid {
            None => self.y_mean.values().to_vec(),
            Some(_) => t.iter().map(|&v| self.y_mean.eval(v)).collect(),
        };
        let mut eta = Vec::with_capacity(x_new.len());
        let mut eta_centered = Vec::with_capacity(x_new.len());
        for row in xc.row_iter() {
            let vals: Vec<f64> = row.iter().copied().collect();
            let mom = self.surface.s_moments(&self.s_rule, &vals);
            let e = self.surface.eta(&mom, &t);
            let full: Vec<f64> = e.iter().zip(&ybar).map(|(a, b)| a + b).collect();
            eta_centered.push(e);
            eta.push(full);
        }
        Ok(PredictionResult {
            t,
            eta,
            eta_centered,
            labels: x_new.iter().map(|c| c.label.clone()).collect(),
        })
    }

    /// `1/n* Σ ∫(η_β̂(X̃ᵢ,t) − η_β(X̃ᵢ,t))² dt` with `η_f(X,t) = ∫f(t,s)X(s)ds`.
    ///
    /// The test curves enter as given (no centering); integrals use composite
    /// Gauss-Legendre panels split at the curve abscissae and the surface nodes, so
    /// they are accurate for the piecewise-linear curves.
    pub fn excess_risk<F>(&self, x_test: &[Curve], beta_true: F) -> Result<f64>
    where
        F: Fn(f64, f64) -> f64,
    {
        if x_test.is_empty() {
            return Err(Error::InvalidArgument("no test curves".into()));
        }
        let t_rule = gauss_legendre(RISK_T_NODES, Interval::UNIT)?;
        let tn = t_rule.nodes();
        // the s rule and the weighted truth matrix depend only on the abscissae,
        // which test sets usually share
        let mut cache: Option<(Vec<f64>, QuadratureRule, DMatrix<f64>)> = None;
        let mut total = 0.0;
        for curve in x_test {
            let fresh = cache.as_ref().is_none_or(|(a, _, _)| a.as_slice() != curve.abscissae());
            if fresh {
                let mut breaks = vec![0.0, 1.0];
                breaks.extend(curve.abscissae().iter().filter(|a| (0.0..=1.0).contains(*a)));
                breaks.extend(&self.surface.s_nodes);
                let rule = QuadratureRule::composite(&breaks, RISK_PANEL)?;
                let b = DMatrix::from_fn(tn.len(), rule.len(), |i, a| {
                    beta_true(tn[i], rule.nodes()[a]) * rule.weights()[a]
                });
                cache = Some((curve.abscissae().to_vec(), rule, b));
            }
            let (_, rule, bmat) = cache.as_ref().expect("filled above");
            let xs: Vec<f64> = rule.nodes().iter().map(|&s| curve.value_at(s)).collect();
            let mom = self.surface.s_moments(rule, &xs);
            let est = self.surface.eta(&mom, tn);
            let truth = bmat * DVector::from_column_slice(&xs);
            let sq: Vec<f64> = est.iter().zip(truth.iter()).map(|(e, t)| (e - t).powi(2)).collect();
            total += t_rule.integrate(&sq)?;
        }
        Ok(total / x_test.len() as f64)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let probe: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        match probe.get("version").and_then(|v| v.as_str()) {
            Some(MODEL_VERSION) => {}
            Some(other) => {
                return Err(Error::Format(format!(
                    "unsupported model version {other:?} (expected {MODEL_VERSION:?})"
                )))
            }
            None => return Err(Error::Format("missing version tag".into())),
        }
        serde_json::from_value(probe).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}
