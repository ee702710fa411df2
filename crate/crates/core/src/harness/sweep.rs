//! One-parameter sweeps of the long-run analytic moments.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::Scenario;
use crate::analytic::{asymptotic_summary, AsymptoticSummary};
use crate::environment::{csv_err, fmt_f64};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    /// `mbar_inf`, or the period average for oscillating optima; `None`
    /// when it diverges.
    pub long_run: Option<f64>,
    pub vm_inf: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExtremumKind {
    Max,
    Min,
}

/// An interior extremum on the sweep grid, refined by the parabola through
/// the grid point and its two neighbours.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Extremum {
    pub column: String,
    pub kind: ExtremumKind,
    pub index: usize,
    pub grid_value: f64,
    pub refined: f64,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub axis: String,
    pub long_run_column: String,
    pub rows: Vec<SweepRow>,
    pub extrema: Vec<Extremum>,
}

impl SweepTable {
    pub fn extremum(&self, column: &str, kind: ExtremumKind) -> Option<&Extremum> {
        self.extrema
            .iter()
            .find(|e| e.column == column && e.kind == kind)
    }

    /// Writes `value,<long run column>,vm_inf`; missing values are empty.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([self.axis.as_str(), self.long_run_column.as_str(), "vm_inf"])
            .map_err(csv_err)?;
        let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
        for r in &self.rows {
            w.write_record([fmt_f64(r.value), opt(r.long_run), opt(r.vm_inf)])
                .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Parses `a,b,c` or `start:stop:count` (inclusive, evenly spaced).
pub fn parse_values(text: &str) -> Result<Vec<f64>> {
    let bad = |s: &str| Error::config("values", format!("cannot parse `{s}`"));
    let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad(s));
    let parts: Vec<&str> = text.split(':').collect();
    let values = if parts.len() == 3 {
        let (a, b) = (num(parts[0])?, num(parts[1])?);
        let k: usize = parts[2].trim().parse().map_err(|_| bad(parts[2]))?;
        if k < 2 {
            return Err(Error::config("values", "a range needs at least 2 points"));
        }
        (0..k)
            .map(|i| a + (b - a) * i as f64 / (k - 1) as f64)
            .collect()
    } else if parts.len() == 1 {
        text.split(',').map(num).collect::<Result<Vec<f64>>>()?
    } else {
        return Err(bad(text));
    };
    if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
        return Err(Error::config("values", "need finite values"));
    }
    if values.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::config("values", "must be strictly increasing"));
    }
    Ok(values)
}

/// Sets `axis` to `value` in a scenario table. `mu` (or `params.mu`)
/// replaces `params.U` and vice versa.
pub fn patch(table: &mut toml::Table, axis: &str, value: f64) -> Result<()> {
    let path: Vec<&str> = match axis {
        "mu" => vec!["params", "mu"],
        _ => axis.split('.').collect(),
    };
    let unknown = || Error::config("axis", format!("`{axis}` does not name a scalar field"));
    let (leaf, parents) = path.split_last().ok_or_else(unknown)?;
    let mut node = table;
    for p in parents {
        node = node
            .get_mut(*p)
            .and_then(|v| v.as_table_mut())
            .ok_or_else(unknown)?;
    }
    let swap = match (parents, *leaf) {
        (["params"], "mu") => Some("U"),
        (["params"], "U") => Some("mu"),
        _ => None,
    };
    let new = match (node.get(*leaf), swap) {
        (Some(toml::Value::Integer(_)), _) => {
            if value.fract() != 0.0 {
                return Err(Error::config(
                    axis,
                    format!("needs integer values (got {value})"),
                ));
            }
            toml::Value::Integer(value as i64)
        }
        (Some(toml::Value::Float(_)), _) | (None, Some(_)) => toml::Value::Float(value),
        _ => return Err(unknown()),
    };
    if let Some(other) = swap {
        node.remove(other);
    }
    node.insert(leaf.to_string(), new);
    Ok(())
}

/// Long-run moments of the analytic engine at every value of `axis`.
pub fn sweep(
    base: &toml::Table,
    base_dir: &Path,
    axis: &str,
    values: &[f64],
) -> Result<SweepTable> {
    Scenario::from_table(base)?;
    let mut rows = Vec::with_capacity(values.len());
    let mut column = "mbar_inf";
    for &v in values {
        let mut table = base.clone();
        patch(&mut table, axis, v)?;
        let plan = Scenario::from_table(&table)?.resolve(base_dir)?;
        let s = asymptotic_summary(&plan.scenario.params, &plan.trajectory)
            .map_err(|e| e.in_engine("analytic"))?;
        if matches!(s, AsymptoticSummary::Periodic { .. }) {
            column = "mean_over_period";
        }
        rows.push(SweepRow {
            value: v,
            long_run: s.long_run_mbar(),
            vm_inf: s.vm_inf(),
        });
    }
    let mut extrema = interior_extrema(
        column,
        values,
        &rows.iter().map(|r| r.long_run).collect::<Vec<_>>(),
    );
    extrema.extend(interior_extrema(
        "vm_inf",
        values,
        &rows.iter().map(|r| r.vm_inf).collect::<Vec<_>>(),
    ));
    Ok(SweepTable {
        axis: axis.to_string(),
        long_run_column: column.to_string(),
        rows,
        extrema,
    })
}

/// Loads a scenario file and sweeps it.
pub fn sweep_file(path: impl AsRef<Path>, axis: &str, values: &[f64]) -> Result<SweepTable> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config("<file>", format!("cannot read {}: {e}", path.display())))?;
    let table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::config("<file>", e.message().to_string()))?;
    sweep(
        &table,
        path.parent().unwrap_or(Path::new(".")),
        axis,
        values,
    )
}

fn interior_extrema(column: &str, xs: &[f64], ys: &[Option<f64>]) -> Vec<Extremum> {
    let mut out = vec![];
    for i in 1..xs.len().saturating_sub(1) {
        let (Some(a), Some(b), Some(c)) = (ys[i - 1], ys[i], ys[i + 1]) else {
            continue;
        };
        let kind = if b > a && b >= c {
            ExtremumKind::Max
        } else if b < a && b <= c {
            ExtremumKind::Min
        } else {
            continue;
        };
        let (refined, objective) = parabola_vertex([xs[i - 1], xs[i], xs[i + 1]], [a, b, c]);
        out.push(Extremum {
            column: column.to_string(),
            kind,
            index: i,
            grid_value: xs[i],
            refined,
            objective,
        });
    }
    out
}

/// Vertex `(x, y)` of the parabola through three points.
pub fn parabola_vertex(x: [f64; 3], y: [f64; 3]) -> (f64, f64) {
    let (d0, d2) = (x[1] - x[0], x[1] - x[2]);
    let num = d0 * d0 * (y[1] - y[2]) - d2 * d2 * (y[1] - y[0]);
    let den = d0 * (y[1] - y[2]) - d2 * (y[1] - y[0]);
    if den == 0.0 {
        return (x[1], y[1]);
    }
    let xv = x[1] - 0.5 * num / den;
    // Lagrange form evaluated at the vertex
    let l = |j: usize| {
        (0..3)
            .filter(|&k| k != j)
            .map(|k| (xv - x[k]) / (x[j] - x[k]))
            .product::<f64>()
    };
    (xv, (0..3).map(|j| y[j] * l(j)).sum())
}
