//! The three simulation scenarios, dense and sparse sampling, and replicated
//! MISE experiments.
//!
//! Every replicate owns four ChaCha8 streams derived from the seed (training
//! predictors, noise, subsampling, test predictors), so a replicate can be
//! reproduced on its own and parallel runs match serial ones exactly.

use std::f64::consts::{PI, SQRT_2};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::MarginalKernelPair;
use crate::model::{fit, FitConfig};
use crate::quadrature::{gauss_legendre, Curve, Interval};
use crate::solver::{default_lambda_grid, PenalizedProblem, PenalizedSolver, Spectrum};

/// Gauss-Legendre size for the noiseless responses.
pub const TRUTH_NODES: usize = 64;
/// Sampling density of the noiseless test curves.
pub const TEST_GRID_POINTS: usize = 201;
pub const DENSE_GRID_POINTS: usize = 20;
pub const SPARSE_GRID_POINTS: usize = 50;

const STREAMS_PER_REPLICATE: u64 = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Predictors = 0,
    Noise = 1,
    Subsample = 2,
    Test = 3,
}

/// Generator for one `(replicate, purpose)` pair.
pub fn stream_rng(seed: u64, replicate: u64, purpose: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate * STREAMS_PER_REPLICATE + purpose as u64);
    rng
}

/// `1` for `k = 1`, else `√2 cos((k−1)πs)`.
pub fn theta1(s: f64, k: usize) -> f64 {
    if k == 1 {
        1.0
    } else {
        SQRT_2 * ((k - 1) as f64 * PI * s).cos()
    }
}

/// `1` for `k = 3`, else `√2 cos(kπs)`.
pub fn theta2(s: f64, k: usize) -> f64 {
    if k == 3 {
        1.0
    } else {
        SQRT_2 * (k as f64 * PI * s).cos()
    }
}

fn sign(k: usize) -> f64 {
    if k % 2 == 1 {
        1.0
    } else {
        -1.0
    }
}

fn check_id(id: u8) -> Result<()> {
    if (1..=3).contains(&id) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("scenario must be 1, 2 or 3, got {id}")))
    }
}

/// Number of eigen-terms in the predictor expansion.
pub fn predictor_terms(id: u8) -> usize {
    if id == 3 {
        3
    } else {
        50
    }
}

/// Scenario coefficient surface at `(t, s)`.
pub fn true_beta(id: u8, t: f64, s: f64) -> Result<f64> {
    check_id(id)?;
    for v in [t, s] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Domain {
                value: v,
                lo: 0.0,
                hi: 1.0,
            });
        }
    }
    Ok(beta_unchecked(id, t, s))
}

fn beta_unchecked(id: u8, t: f64, s: f64) -> f64 {
    match id {
        1 => (-(t + s)).exp(),
        2 => {
            4.0 * (1..=50)
                .map(|k| sign(k) / (k * k) as f64 * theta1(t, k) * theta1(s, k))
                .sum::<f64>()
        }
        _ => {
            4.0 * (1..=3)
                .map(|k| sign(k) / (k * k) as f64 * theta2(t, k) * theta2(s, k))
                .sum::<f64>()
        }
    }
}

/// `X(s) = Σ_k (−1)^{k+1} k⁻¹ Z_k ϑ(s,k)` for one score vector.
pub fn predictor_value(id: u8, scores: &[f64], s: f64) -> f64 {
    scores
        .iter()
        .enumerate()
        .map(|(i, &z)| {
            let k = i + 1;
            let basis = if id == 3 { theta2(s, k) } else { theta1(s, k) };
            sign(k) / k as f64 * z * basis
        })
        .sum()
}

/// `j/(m−1)` for `j = 0..m`.
pub fn uniform_grid(m: usize) -> Vec<f64> {
    match m {
        0 => vec![],
        1 => vec![0.5],
        _ => (0..m).map(|j| j as f64 / (m - 1) as f64).collect(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub id: u8,
    pub n: usize,
    pub t_points: usize,
    pub s_points: usize,
    pub snr: f64,
    pub seed: u64,
    /// Points kept per curve in the sparse design.
    pub sparsity: Option<usize>,
}

impl ScenarioSpec {
    /// Dense design: 20 common time points on both axes.
    pub fn dense(id: u8, n: usize, snr: f64, seed: u64) -> Self {
        Self {
            id,
            n,
            t_points: DENSE_GRID_POINTS,
            s_points: DENSE_GRID_POINTS,
            snr,
            seed,
            sparsity: None,
        }
    }

    /// Sparse design: 50 candidate points, `points` kept per curve.
    pub fn sparse(id: u8, n: usize, snr: f64, seed: u64, points: usize) -> Self {
        Self {
            id,
            n,
            t_points: SPARSE_GRID_POINTS,
            s_points: SPARSE_GRID_POINTS,
            snr,
            seed,
            sparsity: Some(points),
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_id(self.id)?;
        if self.n < 2 {
            return Err(Error::InvalidArgument(format!("n must be at least 2, got {}", self.n)));
        }
        if !(self.snr > 0.0) {
            return Err(Error::InvalidArgument(format!("snr must be positive, got {}", self.snr)));
        }
        if self.t_points < 2 || self.s_points < 2 {
            return Err(Error::InvalidArgument("sampling grids need at least 2 points".into()));
        }
        if let Some(p) = self.sparsity {
            let grid = self.t_points.min(self.s_points);
            if p < 2 || p > grid {
                return Err(Error::InvalidArgument(format!(
                    "sparsity must be in 2..={grid}, got {p}"
                )));
            }
        }
        Ok(())
    }
}

/// Predictor draws: the scores and the curves they generate on the s grid.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictorSample {
    pub id: u8,
    pub scores: Vec<Vec<f64>>,
    pub curves: Vec<Curve>,
}

impl PredictorSample {
    pub fn value(&self, i: usize, s: f64) -> f64 {
        predictor_value(self.id, &self.scores[i], s)
    }
}

/// `n` score vectors with i.i.d. `U(−√3, √3)` entries.
pub fn draw_scores<R: Rng>(id: u8, n: usize, rng: &mut R) -> Result<Vec<Vec<f64>>> {
    check_id(id)?;
    let u = Uniform::new(-(3f64.sqrt()), 3f64.sqrt()).expect("valid bounds");
    let k = predictor_terms(id);
    Ok((0..n).map(|_| (0..k).map(|_| u.sample(rng)).collect()).collect())
}

pub fn predictors_from_scores(id: u8, scores: Vec<Vec<f64>>, grid: &[f64]) -> Result<PredictorSample> {
    check_id(id)?;
    let curves = scores
        .iter()
        .map(|z| Curve::from_fn(grid, |s| predictor_value(id, z, s)))
        .collect::<Result<_>>()?;
    Ok(PredictorSample { id, scores, curves })
}

/// Training predictors of `spec` on its s grid.
pub fn draw_predictors<R: Rng>(spec: &ScenarioSpec, rng: &mut R) -> Result<PredictorSample> {
    spec.validate()?;
    let scores = draw_scores(spec.id, spec.n, rng)?;
    predictors_from_scores(spec.id, scores, &uniform_grid(spec.s_points))
}

/// Noiseless and observed responses.
#[derive(Clone, Debug, PartialEq)]
pub struct ResponseSample {
    pub signal: Vec<Curve>,
    pub observed: Vec<Curve>,
    pub sigma: f64,
}

/// `η(t_j) = ∫β(t_j,s)X_i(s)ds` by a 64-point Gauss-Legendre rule on the exact
/// predictor functions.
pub fn noiseless_responses<B, X>(beta: B, predictors: &[X], grid: &[f64]) -> Result<Vec<Curve>>
where
    B: Fn(f64, f64) -> f64,
    X: Fn(f64) -> f64,
{
    let rule = gauss_legendre(TRUTH_NODES, Interval::UNIT)?;
    let bmat = DMatrix::from_fn(grid.len(), rule.len(), |j, a| {
        beta(grid[j], rule.nodes()[a]) * rule.weights()[a]
    });
    predictors
        .iter()
        .map(|x| {
            let xv = DVector::from_iterator(rule.len(), rule.nodes().iter().map(|&s| x(s)));
            let eta = &bmat * xv;
            Curve::new(grid.to_vec(), eta.iter().copied().collect())
        })
        .collect()
}

/// Population standard deviation of every ordinate of every curve.
pub fn pooled_sd(curves: &[Curve]) -> f64 {
    let vals: Vec<f64> = curves.iter().flat_map(|c| c.ordinates().iter().copied()).collect();
    if vals.is_empty() {
        return 0.0;
    }
    let m = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / m;
    (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m).sqrt()
}

/// Adds `N(0, σ²)` noise with `σ = pooled_sd / snr`; an infinite `snr` adds none.
pub fn add_noise<R: Rng>(curves: &[Curve], snr: f64, rng: &mut R) -> Result<(Vec<Curve>, f64)> {
    if !(snr > 0.0) {
        return Err(Error::InvalidArgument(format!("snr must be positive, got {snr}")));
    }
    let sigma = if snr.is_infinite() { 0.0 } else { pooled_sd(curves) / snr };
    if sigma == 0.0 {
        return Ok((curves.to_vec(), 0.0));
    }
    let normal = Normal::new(0.0, sigma).expect("finite sigma");
    let noisy = curves
        .iter()
        .map(|c| {
            let ys = c.ordinates().iter().map(|y| y + normal.sample(rng)).collect();
            let mut out = Curve::new(c.abscissae().to_vec(), ys)?;
            out.label = c.label.clone();
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok((noisy, sigma))
}

/// Responses `Y_i(t_j) = η_i(t_j) + ε_ij` on the t grid of `spec` for the scenario
/// surface.
pub fn make_responses<R: Rng>(
    spec: &ScenarioSpec,
    x: &PredictorSample,
    rng: &mut R,
) -> Result<ResponseSample> {
    spec.validate()?;
    make_responses_with(|t, s| beta_unchecked(spec.id, t, s), spec, x, rng)
}

/// [`make_responses`] with an arbitrary coefficient surface.
pub fn make_responses_with<B, R>(
    beta: B,
    spec: &ScenarioSpec,
    x: &PredictorSample,
    rng: &mut R,
) -> Result<ResponseSample>
where
    B: Fn(f64, f64) -> f64,
    R: Rng,
{
    let fns: Vec<_> = (0..x.scores.len()).map(|i| move |s: f64| x.value(i, s)).collect();
    let signal = noiseless_responses(beta, &fns, &uniform_grid(spec.t_points))?;
    let (observed, sigma) = add_noise(&signal, spec.snr, rng)?;
    Ok(ResponseSample {
        signal,
        observed,
        sigma,
    })
}

/// Keeps `points` uniformly chosen abscissae of every curve, independently per curve.
pub fn sparsify<R: Rng>(curves: &[Curve], points: usize, rng: &mut R) -> Result<Vec<Curve>> {
    curves
        .iter()
        .map(|c| {
            if points > c.len() {
                return Err(Error::InvalidArgument(format!(
                    "cannot keep {points} points of a {}-point curve",
                    c.len()
                )));
            }
            let mut idx = sample(rng, c.len(), points).into_vec();
            idx.sort_unstable();
            let xs = idx.iter().map(|&i| c.abscissae()[i]).collect();
            let ys = idx.iter().map(|&i| c.ordinates()[i]).collect();
            let mut out = Curve::new(xs, ys)?;
            out.label = c.label.clone();
            Ok(out)
        })
        .collect()
}

/// Minimum curve length for the spline smoother; shorter curves are interpolated.
pub const PRESMOOTH_MIN_POINTS: usize = 4;

/// GCV fudge factor of the presmoother; plain GCV smooths sparse curves less.
pub const PRESMOOTH_FUDGE: f64 = 1.0;

/// Per-curve cubic smoothing spline with GCV-selected `λ`, evaluated on `target`.
pub fn presmooth(curves: &[Curve], target: &[f64]) -> Result<Vec<Curve>> {
    presmooth_with(curves, target, PRESMOOTH_FUDGE)
}

struct CurveSpline {
    abscissae: Vec<f64>,
    problem: PenalizedProblem,
}

impl CurveSpline {
    fn new(c: &Curve) -> Result<Self> {
        let k = MarginalKernelPair::cubic();
        let xs = c.abscissae();
        for &x in xs {
            k.k1(x, x)?;
        }
        let m = xs.len();
        let y = DVector::from_column_slice(c.ordinates());
        let s = DMatrix::from_fn(m, 2, |i, l| k.psi_unchecked(l, xs[i]));
        let r = DMatrix::from_fn(m, m, |i, j| k.k1_unchecked(xs[i], xs[j]));
        Ok(Self {
            abscissae: xs.to_vec(),
            problem: PenalizedProblem::new(y, s, r.clone(), r, m)?,
        })
    }

    /// Spline with stacked coefficients `theta` at `target`, held constant beyond
    /// the sampled range as linear resampling does.
    fn eval(&self, theta: &DVector<f64>, target: &[f64]) -> Vec<f64> {
        let k = MarginalKernelPair::cubic();
        let lo = self.abscissae[0];
        let hi = *self.abscissae.last().expect("nonempty");
        target
            .iter()
            .map(|&t| {
                let t = t.clamp(lo, hi);
                let null = theta[0] + theta[1] * k.psi_unchecked(1, t);
                null + self
                    .abscissae
                    .iter()
                    .enumerate()
                    .map(|(j, &u)| theta[2 + j] * k.k1_unchecked(t, u))
                    .sum::<f64>()
            })
            .collect()
    }
}

/// [`presmooth`] with an explicit GCV fudge factor. Curves whose GCV is degenerate
/// everywhere on the grid are interpolated linearly.
pub fn presmooth_with(curves: &[Curve], target: &[f64], fudge: f64) -> Result<Vec<Curve>> {
    if target.len() < 2 {
        return Err(Error::InvalidArgument("presmoothing target needs at least 2 points".into()));
    }
    if !(fudge >= 1.0) {
        return Err(Error::InvalidArgument(format!("fudge factor must be >= 1, got {fudge}")));
    }
    let k = MarginalKernelPair::cubic();
    for &t in target {
        k.k1(t, t)?;
    }
    let grid = default_lambda_grid();
    let splines: Vec<Option<(CurveSpline, Spectrum)>> = curves
        .iter()
        .map(|c| {
            if c.len() < PRESMOOTH_MIN_POINTS {
                return Ok(None);
            }
            let sp = CurveSpline::new(c)?;
            match PenalizedSolver::new(&sp.problem).spectrum() {
                Ok(spec) => Ok(Some((sp, spec))),
                Err(e) if e.is_numerical() => {
                    log::warn!("presmoothing fell back to interpolation: {e}");
                    Ok(None)
                }
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_>>()?;
    curves
        .iter()
        .zip(&splines)
        .map(|(c, fitted)| {
            let values = match fitted {
                None => target.iter().map(|&t| c.value_at(t)).collect(),
                Some((sp, spec)) => {
                    match PenalizedSolver::new(&sp.problem).select_from_spectrum(spec, &grid, fudge)
                    {
                        Ok(g) => sp.eval(&spec.coefficients(g.chosen_lambda()), target),
                        Err(_) => target.iter().map(|&t| c.value_at(t)).collect(),
                    }
                }
            };
            let mut out = Curve::new(target.to_vec(), values)?;
            out.label = c.label.clone();
            Ok(out)
        })
        .collect()
}

/// Which fits the sparse design runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SparsePath {
    /// Presmoothed and direct fits on the same data.
    #[default]
    Both,
    Presmoothed,
    Direct,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub replicates: usize,
    /// Test curves per replicate; 30 dense and 50 sparse when `None`.
    pub test_size: Option<usize>,
    pub fit: FitConfig,
    pub sparse_path: SparsePath,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            replicates: 1,
            test_size: None,
            fit: FitConfig::default(),
            sparse_path: SparsePath::Both,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicateResult {
    pub replicate: usize,
    pub presmoothed: bool,
    pub mise: f64,
    pub log2_mise: f64,
    pub chosen_lambda: f64,
    pub runtime_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub spec: ScenarioSpec,
    pub config: ExperimentConfig,
    pub rows: Vec<ReplicateResult>,
    /// `(replicate, presmoothed, message)` for fits that failed.
    pub failures: Vec<(usize, bool, String)>,
    pub total_ms: f64,
}

impl SimReport {
    pub fn mises(&self, presmoothed: bool) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.presmoothed == presmoothed)
            .map(|r| r.mise)
            .collect()
    }

    pub fn log2_mises(&self, presmoothed: bool) -> Vec<f64> {
        self.mises(presmoothed).iter().map(|m| m.log2()).collect()
    }

    pub fn summary(&self, presmoothed: bool) -> Option<Quartiles> {
        let mut v = self.mises(presmoothed);
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        Some(Quartiles {
            q1: quantile(&v, 0.25),
            median: quantile(&v, 0.5),
            q3: quantile(&v, 0.75),
        })
    }

    pub fn median(&self, presmoothed: bool) -> Option<f64> {
        self.summary(presmoothed).map(|q| q.median)
    }
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile(&v, 0.5)
}

/// Runs `config.replicates` independent replicates of `spec`.
pub fn run_experiment(spec: &ScenarioSpec, config: &ExperimentConfig) -> Result<SimReport> {
    spec.validate()?;
    config.fit.validate()?;
    if config.replicates == 0 {
        return Err(Error::InvalidArgument("replicates must be at least 1".into()));
    }
    let test_size = config
        .test_size
        .unwrap_or(if spec.sparsity.is_some() { 50 } else { 30 });
    if test_size == 0 {
        return Err(Error::InvalidArgument("test_size must be at least 1".into()));
    }
    let start = Instant::now();
    let outcomes: Vec<Vec<(bool, Result<ReplicateResult>)>> = (0..config.replicates)
        .into_par_iter()
        .map(|r| run_replicate(spec, config, test_size, r))
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (r, outs) in outcomes.into_iter().enumerate() {
        for (pre, out) in outs {
            match out {
                Ok(row) => rows.push(row),
                Err(e) => {
                    log::warn!("replicate {r} (presmoothed={pre}) failed: {e}");
                    failures.push((r, pre, e.to_string()));
                }
            }
        }
    }
    Ok(SimReport {
        spec: spec.clone(),
        config: config.clone(),
        rows,
        failures,
        total_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

/// Data-generation errors abort the run; fit errors are recorded per path.
fn run_replicate(
    spec: &ScenarioSpec,
    config: &ExperimentConfig,
    test_size: usize,
    replicate: usize,
) -> Result<Vec<(bool, Result<ReplicateResult>)>> {
    let r = replicate as u64;
    let mut pred_rng = stream_rng(spec.seed, r, Stream::Predictors);
    let mut noise_rng = stream_rng(spec.seed, r, Stream::Noise);
    let mut test_rng = stream_rng(spec.seed, r, Stream::Test);

    let x = draw_predictors(spec, &mut pred_rng)?;
    let y = make_responses(spec, &x, &mut noise_rng)?;
    let test_scores = draw_scores(spec.id, test_size, &mut test_rng)?;
    let test = predictors_from_scores(spec.id, test_scores, &uniform_grid(TEST_GRID_POINTS))?;
    let beta = |t: f64, s: f64| beta_unchecked(spec.id, t, s);

    let run = |xs: &[Curve], ys: &[Curve], presmoothed: bool| -> Result<ReplicateResult> {
        let t0 = Instant::now();
        let model = fit(xs, ys, &config.fit)?;
        let mise = model.excess_risk(&test.curves, beta)?;
        Ok(ReplicateResult {
            replicate,
            presmoothed,
            mise,
            log2_mise: mise.log2(),
            chosen_lambda: model.lambda,
            runtime_ms: t0.elapsed().as_secs_f64() * 1e3,
        })
    };

    let Some(points) = spec.sparsity else {
        return Ok(vec![(false, run(&x.curves, &y.observed, false))]);
    };

    // sparse design: noisy predictors too, then independent subsets per curve
    let (x_noisy, _) = add_noise(&x.curves, spec.snr, &mut noise_rng)?;
    let mut sub_rng = stream_rng(spec.seed, r, Stream::Subsample);
    let xs = sparsify(&x_noisy, points, &mut sub_rng)?;
    let ys = sparsify(&y.observed, points, &mut sub_rng)?;
    let mut out = Vec::new();
    if config.sparse_path != SparsePath::Direct {
        let res = presmooth(&xs, &uniform_grid(spec.s_points)).and_then(|px| {
            let py = presmooth(&ys, &uniform_grid(spec.t_points))?;
            run(&px, &py, true)
        });
        out.push((true, res));
    }
    if config.sparse_path != SparsePath::Presmoothed {
        out.push((false, run(&xs, &ys, false)));
    }
    Ok(out)
}
