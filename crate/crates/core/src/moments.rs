//! Time series of fitness moments, the common output of all three engines.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::environment::{csv_err, fmt_f64};
use crate::error::{Error, Result};

/// Which engine produced a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Analytic,
    Ibm,
    Ide,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::Analytic => "analytic",
            Source::Ibm => "ibm",
            Source::Ide => "ide",
        }
    }
}

/// Mean fitness, fitness variance and skewness over a time grid. Entries of
/// `vm` and `skew` that were not computed (or are undefined, like the
/// skewness of a clonal population) are `NaN`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentTrajectory {
    pub times: Vec<f64>,
    pub mbar: Vec<f64>,
    pub vm: Vec<f64>,
    pub skew: Vec<f64>,
    pub rho: Option<Vec<f64>>,
    pub source: Source,
}

impl MomentTrajectory {
    pub fn new(
        times: Vec<f64>,
        mbar: Vec<f64>,
        vm: Vec<f64>,
        skew: Vec<f64>,
        source: Source,
    ) -> Result<Self> {
        let traj = Self {
            times,
            mbar,
            vm,
            skew,
            rho: None,
            source,
        };
        traj.validate()?;
        Ok(traj)
    }

    pub fn validate(&self) -> Result<()> {
        let len = self.times.len();
        if self.mbar.len() != len || self.vm.len() != len || self.skew.len() != len {
            return Err(Error::invalid(
                "moments",
                "all columns must have the same length",
            ));
        }
        if let Some(rho) = &self.rho {
            if rho.len() != len {
                return Err(Error::invalid("rho", "length differs from times"));
            }
        }
        check_times(&self.times)?;
        if self.vm.iter().any(|v| *v < 0.0) {
            return Err(Error::invalid("vm", "variance entries must be >= 0"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Writes `t,mbar,vm,skew[,rho]`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["t", "mbar", "vm", "skew"];
        if self.rho.is_some() {
            header.push("rho");
        }
        w.write_record(&header).map_err(csv_err)?;
        for i in 0..self.len() {
            let mut row = vec![
                fmt_f64(self.times[i]),
                fmt_f64(self.mbar[i]),
                fmt_f64(self.vm[i]),
                fmt_f64(self.skew[i]),
            ];
            if let Some(rho) = &self.rho {
                row.push(fmt_f64(rho[i]));
            }
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    /// Reads a file written by [`MomentTrajectory::write_csv`]; lines starting
    /// with `#` are skipped.
    pub fn read_csv<R: std::io::Read>(reader: R, source: Source) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_reader(reader);
        let headers = r.headers().map_err(csv_err)?.clone();
        let has_rho = headers.len() == 5 && &headers[4] == "rho";
        if headers.len() < 4 || &headers[0] != "t" || &headers[1] != "mbar" {
            return Err(Error::invalid(
                "csv",
                "expected header t,mbar,vm,skew[,rho]",
            ));
        }
        let (mut t, mut m, mut v, mut s, mut rho) = (vec![], vec![], vec![], vec![], vec![]);
        for rec in r.records() {
            let rec = rec.map_err(csv_err)?;
            let parse = |i: usize| -> Result<f64> {
                rec[i]
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::invalid("csv", format!("bad number `{}`: {e}", &rec[i])))
            };
            t.push(parse(0)?);
            m.push(parse(1)?);
            v.push(parse(2)?);
            s.push(parse(3)?);
            if has_rho {
                rho.push(parse(4)?);
            }
        }
        let mut traj = Self::new(t, m, v, s, source)?;
        if has_rho {
            traj.rho = Some(rho);
        }
        Ok(traj)
    }

    /// Mean of `mbar` over the recorded points with `t` in `[from, to]`.
    pub fn time_average(&self, from: f64, to: f64) -> Option<f64> {
        let vals: Vec<f64> = self
            .times
            .iter()
            .zip(&self.mbar)
            .filter(|(t, _)| **t >= from && **t <= to)
            .map(|(_, m)| *m)
            .collect();
        if vals.is_empty() {
            None
        } else {
            Some(vals.iter().sum::<f64>() / vals.len() as f64)
        }
    }
}

pub(crate) fn check_times(times: &[f64]) -> Result<()> {
    if times.iter().any(|t| !t.is_finite() || *t < 0.0) {
        return Err(Error::invalid("times", "must be finite and >= 0"));
    }
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("times", "must be strictly increasing"));
    }
    Ok(())
}

/// `points` uniformly spaced times on `[0, horizon]`.
pub fn uniform_grid(horizon: f64, points: usize) -> Vec<f64> {
    match points {
        0 => vec![],
        1 => vec![0.0],
        _ => (0..points)
            .map(|i| horizon * i as f64 / (points - 1) as f64)
            .collect(),
    }
}
