use std::io::Write;
use std::path::{Path, PathBuf};

use clap::Args;

use opffr::model::{fit as fit_model, AxisRanges, FittedModel};
use opffr::quadrature::Curve;
use opffr::simulate::{run_experiment, uniform_grid, ExperimentConfig, Quartiles, ScenarioSpec, SimReport, SparsePath};

use crate::config::{FitFlags, Rescale, RunConfig};
use crate::error::CliError;
use crate::numfmt::g17;
use crate::table::CurveTable;

/// Output file or standard output.
fn sink(path: Option<&Path>) -> Result<Box<dyn Write>, CliError> {
    Ok(match path {
        Some(p) => Box::new(std::io::BufWriter::new(
            std::fs::File::create(p).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?,
        )),
        None => Box::new(std::io::BufWriter::new(std::io::stdout().lock())),
    })
}

fn check_unit(table: &CurveTable, name: &str) -> Result<(), CliError> {
    let (lo, hi) = table.arg_range();
    if lo < 0.0 || hi > 1.0 {
        return Err(CliError::Input(format!(
            "{name}: arguments span [{}, {}] but --rescale off needs [0, 1]",
            g17(lo),
            g17(hi)
        )));
    }
    Ok(())
}

fn span(table: &CurveTable, name: &str) -> Result<(f64, f64), CliError> {
    let (lo, hi) = table.arg_range();
    if !(hi > lo) {
        return Err(CliError::Input(format!("{name}: all arguments equal {}", g17(lo))));
    }
    Ok((lo, hi))
}

struct Training {
    x: Vec<Curve>,
    y: Vec<Curve>,
    ranges: Option<AxisRanges>,
}

fn load_training(x: &Path, y: &Path, cfg: &RunConfig) -> Result<Training, CliError> {
    let (xn, yn) = (x.display().to_string(), y.display().to_string());
    let xt = CurveTable::read(x)?;
    let yt = CurveTable::read(y)?;
    // ids must match in both directions
    let y_aligned = yt.aligned_to(&xt.ids, &yn)?;
    xt.aligned_to(&yt.ids, &xn)?;
    let y_table = CurveTable {
        ids: xt.ids.clone(),
        curves: y_aligned,
    };
    match cfg.rescale {
        Rescale::Off => {
            check_unit(&xt, &xn)?;
            check_unit(&y_table, &yn)?;
            Ok(Training {
                x: xt.curves,
                y: y_table.curves,
                ranges: None,
            })
        }
        Rescale::Auto => {
            let s = span(&xt, &xn)?;
            let t = span(&y_table, &yn)?;
            Ok(Training {
                x: xt.rescaled(s.0, s.1)?,
                y: y_table.rescaled(t.0, t.1)?,
                ranges: Some(AxisRanges { s, t }),
            })
        }
    }
}

fn fitted(x: &Path, y: &Path, flags: &FitFlags) -> Result<(RunConfig, FittedModel), CliError> {
    let cfg = RunConfig::resolve(flags)?;
    let data = load_training(x, y, &cfg)?;
    let mut model = fit_model(&data.x, &data.y, &cfg.fit_config()?)?;
    model.ranges = data.ranges;
    Ok((cfg, model))
}

pub fn fit(x: &Path, y: &Path, out: &Path, flags: &FitFlags) -> Result<(), CliError> {
    let (cfg, model) = fitted(x, y, flags)?;
    model.save(out)?;
    log::info!("fit: {}", cfg.echo());
    println!(
        "{{\"lambda\":{},\"effective_df\":{},\"gcv\":{},\"n\":{},\"basis\":\"{}\"}}",
        g17(model.lambda),
        g17(model.effective_df),
        g17(model.gcv.chosen_score()),
        model.n,
        format!("{:?}", model.basis).to_lowercase()
    );
    Ok(())
}

pub fn gcv(x: &Path, y: &Path, out: Option<&Path>, flags: &FitFlags) -> Result<(), CliError> {
    let (cfg, model) = fitted(x, y, flags)?;
    let mut w = sink(out)?;
    writeln!(w, "# opffr gcv {}", cfg.echo())?;
    writeln!(w, "lambda,gcv,edf,chosen")?;
    let g = &model.gcv;
    for i in 0..g.lambdas.len() {
        writeln!(
            w,
            "{},{},{},{}",
            g17(g.lambdas[i]),
            g17(g.scores[i]),
            g17(g.edf[i]),
            u8::from(i == g.chosen)
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn predict(model_path: &Path, x: &Path, out: Option<&Path>, t_grid: usize) -> Result<(), CliError> {
    if t_grid == 0 {
        return Err(CliError::Input("--t-grid must be at least 1".into()));
    }
    let model = FittedModel::load(model_path)?;
    let xn = x.display().to_string();
    let table = CurveTable::read(x)?;
    let curves = match model.ranges {
        Some(r) => table.rescaled(r.s.0, r.s.1)?,
        None => {
            check_unit(&table, &xn)?;
            table.curves.clone()
        }
    };
    let grid = uniform_grid(t_grid);
    let pred = model.predict(&curves, Some(&grid))?;
    let (t0, t1) = model.ranges.map_or((0.0, 1.0), |r| r.t);
    let mut w = sink(out)?;
    writeln!(
        w,
        "# opffr predict model={} t_grid={} lambda={}",
        model_path.display(),
        t_grid,
        g17(model.lambda)
    )?;
    writeln!(w, "curve_id,t,eta")?;
    for (id, eta) in table.ids.iter().zip(&pred.eta) {
        for (&u, &v) in grid.iter().zip(eta) {
            writeln!(w, "{id},{},{}", g17(t0 + u * (t1 - t0)), g17(v))?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Scenario 1, 2 or 3.
    #[arg(long)]
    pub scenario: u8,
    #[arg(long, default_value_t = 30)]
    pub n: usize,
    #[arg(long, default_value_t = 10.0)]
    pub snr: f64,
    /// Points kept per curve (sparse design on the 50-point grid).
    #[arg(long)]
    pub sparsity: Option<usize>,
    #[arg(long, default_value_t = 20)]
    pub replicates: usize,
    /// Test curves per replicate (30 dense, 50 sparse by default).
    #[arg(long)]
    pub test_size: Option<usize>,
    /// Sparse design: fit the raw subsamples only.
    #[arg(long)]
    pub no_presmooth: bool,
    /// Record wall-clock times (output is then no longer reproducible).
    #[arg(long)]
    pub timing: bool,
    /// Per-replicate CSV (standard output when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON summary file; printed to standard output when `--out` is given.
    #[arg(long)]
    pub summary: Option<PathBuf>,
    #[command(flatten)]
    pub flags: FitFlags,
}

fn quartiles_json(q: Option<Quartiles>) -> String {
    match q {
        Some(q) => format!(
            "{{\"q1\":{},\"median\":{},\"q3\":{}}}",
            num(q.q1),
            num(q.median),
            num(q.q3)
        ),
        None => "null".into(),
    }
}

fn num(x: f64) -> String {
    if x.is_finite() {
        g17(x)
    } else {
        "null".into()
    }
}

fn summary_json(a: &SimulateArgs, seed: u64, report: &SimReport) -> String {
    let mut s = format!(
        "{{\"scenario\":{},\"n\":{},\"snr\":{},\"sparsity\":{},\"seed\":{},\"replicates\":{},\"failures\":{},\"direct\":{}",
        a.scenario,
        a.n,
        num(a.snr),
        a.sparsity.map_or("null".into(), |p| p.to_string()),
        seed,
        a.replicates,
        report.failures.len(),
        quartiles_json(report.summary(false)),
    );
    if a.sparsity.is_some() && !a.no_presmooth {
        s += &format!(",\"presmoothed\":{}", quartiles_json(report.summary(true)));
    }
    if a.timing {
        s += &format!(",\"total_ms\":{}", g17(report.total_ms));
    }
    s + "}"
}

pub fn simulate(a: &SimulateArgs) -> Result<(), CliError> {
    let cfg = RunConfig::resolve(&a.flags)?;
    let spec = match a.sparsity {
        Some(p) => ScenarioSpec::sparse(a.scenario, a.n, a.snr, cfg.seed, p),
        None => ScenarioSpec::dense(a.scenario, a.n, a.snr, cfg.seed),
    };
    spec.validate()?;
    let exp = ExperimentConfig {
        replicates: a.replicates,
        test_size: a.test_size,
        fit: cfg.fit_config()?,
        sparse_path: if a.no_presmooth { SparsePath::Direct } else { SparsePath::Both },
    };
    let report = run_experiment(&spec, &exp)?;
    for (r, pre, msg) in &report.failures {
        log::warn!("replicate {r} (presmoothed={pre}) excluded: {msg}");
    }
    let mut w = sink(a.out.as_deref())?;
    writeln!(
        w,
        "# opffr simulate scenario={} n={} snr={} sparsity={} replicates={} {}",
        a.scenario,
        a.n,
        g17(a.snr),
        a.sparsity.map_or("none".into(), |p| p.to_string()),
        a.replicates,
        cfg.echo()
    )?;
    writeln!(
        w,
        "scenario,snr,sparsity,seed,replicate,mise,log2_mise,chosen_lambda,runtime_ms,presmoothed"
    )?;
    for row in &report.rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{}",
            a.scenario,
            g17(a.snr),
            a.sparsity.map_or(String::new(), |p| p.to_string()),
            cfg.seed,
            row.replicate,
            g17(row.mise),
            g17(row.log2_mise),
            g17(row.chosen_lambda),
            if a.timing { g17(row.runtime_ms) } else { "0".into() },
            row.presmoothed
        )?;
    }
    w.flush()?;
    drop(w);
    let summary = summary_json(a, cfg.seed, &report);
    if let Some(p) = &a.summary {
        std::fs::write(p, summary.clone() + "\n")
            .map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?;
    }
    if a.out.is_some() {
        println!("{summary}");
    } else if a.summary.is_none() {
        eprintln!("{summary}");
    }
    if report.rows.is_empty() {
        return Err(CliError::Numerical("every replicate failed".into()));
    }
    Ok(())
}
