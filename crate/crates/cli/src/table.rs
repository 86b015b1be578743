//! Long-format curve tables: `curve_id,arg,value`, one observation per row.

use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use opffr::quadrature::Curve;

use crate::error::CliError;

/// Curves keyed by id, in order of first appearance.
#[derive(Clone, Debug)]
pub struct CurveTable {
    pub ids: Vec<String>,
    pub curves: Vec<Curve>,
}

impl CurveTable {
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let file = std::fs::File::open(path)
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        Self::from_reader(file, &path.display().to_string())
    }

    pub fn from_reader<R: Read>(reader: R, name: &str) -> Result<Self, CliError> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_reader(reader);
        let headers = rdr
            .headers()
            .map_err(|e| CliError::Input(format!("{name}: {e}")))?
            .clone();
        let expected = ["curve_id", "arg", "value"];
        if headers.len() != 3 || headers.iter().zip(expected).any(|(h, e)| h != e) {
            return Err(CliError::Input(format!(
                "{name}: line 1: header must be `curve_id,arg,value`, found `{}`",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut order: Vec<String> = Vec::new();
        let mut rows: HashMap<String, Vec<(f64, f64)>> = HashMap::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| CliError::Input(format!("{name}: {e}")))?;
            let line = rec.position().map_or(0, |p| p.line());
            let number = |col: usize| -> Result<f64, CliError> {
                let cell = &rec[col];
                match cell.parse::<f64>() {
                    Ok(v) if v.is_finite() => Ok(v),
                    _ => Err(CliError::Input(format!(
                        "{name}: line {line}, column {} ({}): `{cell}` is not a finite number",
                        col + 1,
                        expected[col]
                    ))),
                }
            };
            let id = rec[0].to_string();
            if id.is_empty() {
                return Err(CliError::Input(format!("{name}: line {line}, column 1 (curve_id): empty id")));
            }
            let (arg, value) = (number(1)?, number(2)?);
            rows.entry(id.clone())
                .or_insert_with(|| {
                    order.push(id.clone());
                    Vec::new()
                })
                .push((arg, value));
        }
        if order.is_empty() {
            return Err(CliError::Input(format!("{name}: no observations")));
        }
        let mut curves = Vec::with_capacity(order.len());
        for id in &order {
            let mut pts = rows.remove(id).expect("grouped above");
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
            if pts.len() < 2 {
                return Err(CliError::Input(format!("{name}: curve `{id}` has fewer than 2 rows")));
            }
            if let Some(w) = pts.windows(2).find(|w| w[0].0 == w[1].0) {
                return Err(CliError::Input(format!(
                    "{name}: curve `{id}` repeats arg {}",
                    w[0].0
                )));
            }
            let (xs, ys) = pts.into_iter().unzip();
            let c = Curve::new(xs, ys).map_err(|e| CliError::Input(format!("{name}: curve `{id}`: {e}")))?;
            curves.push(c.with_label(id.clone()));
        }
        Ok(Self { ids: order, curves })
    }

    /// Smallest and largest argument over all curves.
    pub fn arg_range(&self) -> (f64, f64) {
        self.curves.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), c| {
            let (a, b) = c.range();
            (lo.min(a), hi.max(b))
        })
    }

    /// Applies `u ↦ (u − lo)/(hi − lo)` to every argument.
    pub fn rescaled(&self, lo: f64, hi: f64) -> Result<Vec<Curve>, CliError> {
        let w = hi - lo;
        self.curves
            .iter()
            .map(|c| {
                let xs = c.abscissae().iter().map(|a| (a - lo) / w).collect();
                let mut out = Curve::new(xs, c.ordinates().to_vec())?;
                out.label = c.label.clone();
                Ok(out)
            })
            .collect()
    }

    /// Curves reordered to follow `ids`; a missing id is an input error naming it.
    pub fn aligned_to(&self, ids: &[String], name: &str) -> Result<Vec<Curve>, CliError> {
        let index: HashMap<&str, usize> =
            self.ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
        ids.iter()
            .map(|id| {
                index
                    .get(id.as_str())
                    .map(|&i| self.curves[i].clone())
                    .ok_or_else(|| CliError::Input(format!("{name}: curve_id `{id}` is missing")))
            })
            .collect()
    }
}
