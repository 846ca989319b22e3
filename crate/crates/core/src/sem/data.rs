use std::io::{Read, Write};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg;

/// `n x p` samples, one row per observation. Missing entries are `NaN`.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    values: DMatrix<f64>,
    column_names: Option<Vec<String>>,
}

impl DataMatrix {
    pub fn new(values: DMatrix<f64>) -> Self {
        DataMatrix {
            values,
            column_names: None,
        }
    }

    pub fn with_names(values: DMatrix<f64>, names: Vec<String>) -> Result<Self> {
        if names.len() != values.ncols() {
            return Err(Error::invalid("column name count does not match p"));
        }
        Ok(DataMatrix {
            values,
            column_names: Some(names),
        })
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn p(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn column_names(&self) -> Option<&[String]> {
        self.column_names.as_deref()
    }

    pub fn has_missing(&self) -> bool {
        self.values.iter().any(|v| v.is_nan())
    }

    /// `true` where the entry is missing.
    pub fn missing_mask(&self) -> DMatrix<bool> {
        self.values.map(|v| v.is_nan())
    }

    /// Fails unless every entry is finite and there is at least one row.
    pub fn require_complete(&self) -> Result<()> {
        if self.n() == 0 {
            return Err(Error::invalid("data has no rows"));
        }
        if let Some(i) = self.values.iter().position(|v| !v.is_finite()) {
            let (r, c) = (i % self.n(), i / self.n());
            return Err(Error::invalid(format!("entry ({r}, {c}) is missing or not finite")));
        }
        Ok(())
    }

    /// Reads comma-separated values. A first row with any non-numeric field
    /// is taken as a header; empty fields become `NaN`.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut names = None;
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if line == 0 && rec.iter().any(|f| !f.is_empty() && f.parse::<f64>().is_err()) {
                names = Some(rec.iter().map(str::to_string).collect::<Vec<_>>());
                continue;
            }
            let row = rec
                .iter()
                .map(|f| {
                    if f.is_empty() {
                        Ok(f64::NAN)
                    } else {
                        f.parse::<f64>()
                            .map_err(|_| Error::invalid(format!("line {}: '{f}' is not a number", line + 1)))
                    }
                })
                .collect::<Result<Vec<f64>>>()?;
            rows.push(row);
        }
        let p = rows.first().map(Vec::len).or(names.as_ref().map(Vec::len)).unwrap_or(0);
        if rows.iter().any(|r| r.len() != p) {
            return Err(Error::invalid("rows have unequal lengths"));
        }
        if rows.is_empty() {
            return Err(Error::invalid("data has no rows"));
        }
        let values = DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j]);
        match names {
            Some(n) => Self::with_names(values, n),
            None => Ok(Self::new(values)),
        }
    }

    /// Writes CSV with a header when column names are present; `NaN` is written empty.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        if let Some(names) = &self.column_names {
            w.write_record(names)?;
        }
        for i in 0..self.n() {
            let row: Vec<String> = (0..self.p())
                .map(|j| {
                    let v = self.values[(i, j)];
                    if v.is_nan() {
                        String::new()
                    } else {
                        format!("{v:?}")
                    }
                })
                .collect();
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Corruption {
    /// Observed `z = x + w`, `w ~ N(0, sigma_w)`.
    Additive { sigma_w: DMatrix<f64> },
    /// Each entry independently unobserved with probability `alpha`.
    Missing { alpha: f64, mask: DMatrix<bool> },
}

/// Observed surrogates plus the corruption mechanism that produced them.
/// Masked entries of `observed` are `NaN`.
#[derive(Debug, Clone, PartialEq)]
pub struct CorruptedData {
    pub observed: DataMatrix,
    pub kind: Corruption,
}

impl CorruptedData {
    pub fn additive(observed: DataMatrix, sigma_w: DMatrix<f64>) -> Result<Self> {
        validate_noise_cov(&sigma_w, observed.p())?;
        observed.require_complete()?;
        Ok(CorruptedData {
            observed,
            kind: Corruption::Additive { sigma_w },
        })
    }

    /// Wraps data whose missing entries are already `NaN`.
    pub fn missing(observed: DataMatrix, alpha: f64) -> Result<Self> {
        validate_alpha(alpha)?;
        if observed.values().iter().any(|v| v.is_infinite()) {
            return Err(Error::invalid("data contains infinite entries"));
        }
        let mask = observed.missing_mask();
        Ok(CorruptedData {
            observed,
            kind: Corruption::Missing { alpha, mask },
        })
    }
}

fn validate_alpha(alpha: f64) -> Result<()> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::invalid(format!("missing probability {alpha} outside [0, 1)")));
    }
    Ok(())
}

fn validate_noise_cov(sigma_w: &DMatrix<f64>, p: usize) -> Result<()> {
    if sigma_w.nrows() != p || sigma_w.ncols() != p {
        return Err(Error::invalid(format!("noise covariance must be {p}x{p}")));
    }
    if !linalg::is_symmetric(sigma_w, 1e-10) {
        return Err(Error::invalid("noise covariance is not symmetric"));
    }
    linalg::psd_factor(sigma_w, 1e-10).map(|_| ())
}

pub fn corrupt_additive(data: &DataMatrix, sigma_w: &DMatrix<f64>, seed: u64) -> Result<CorruptedData> {
    data.require_complete()?;
    validate_noise_cov(sigma_w, data.p())?;
    let factor = linalg::psd_factor(sigma_w, 1e-10)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, p) = (data.n(), data.p());
    let z: DMatrix<f64> = DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng));
    let noise = z * factor.transpose();
    let observed = DataMatrix {
        values: data.values() + noise,
        column_names: data.column_names.clone(),
    };
    Ok(CorruptedData {
        observed,
        kind: Corruption::Additive {
            sigma_w: sigma_w.clone(),
        },
    })
}

pub fn corrupt_missing(data: &DataMatrix, alpha: f64, seed: u64) -> Result<CorruptedData> {
    validate_alpha(alpha)?;
    data.require_complete()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // column-major fill, matching nalgebra storage
    let mask = DMatrix::from_fn(data.n(), data.p(), |_, _| alpha > 0.0 && rng.random_bool(alpha));
    let values = data.values().zip_map(&mask, |v, m| if m { f64::NAN } else { v });
    Ok(CorruptedData {
        observed: DataMatrix {
            values,
            column_names: data.column_names.clone(),
        },
        kind: Corruption::Missing { alpha, mask },
    })
}
