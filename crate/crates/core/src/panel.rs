//! The observation panel: an `n × p` matrix in standardised units together
//! with its missingness mask and the statistics needed to map back to the
//! original scale.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{DfmError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeriesPanel {
    /// Standardised values; missing cells hold `0.0` and are never read.
    values: DMatrix<f64>,
    /// `true` where the cell is observed.
    mask: DMatrix<bool>,
    means: Vec<f64>,
    sds: Vec<f64>,
    series_names: Vec<String>,
}

fn default_names(p: usize) -> Vec<String> {
    (1..=p).map(|i| format!("x{i}")).collect()
}

impl TimeSeriesPanel {
    /// Standardise a raw panel where `NaN` marks a missing cell.
    ///
    /// Means and sample standard deviations are computed over the observed
    /// entries of each column only.
    pub fn standardise(raw: &DMatrix<f64>, names: Option<Vec<String>>) -> Result<Self> {
        let (n, p) = raw.shape();
        let names = names.unwrap_or_else(|| default_names(p));
        if names.len() != p {
            return Err(DfmError::Dimension(format!(
                "{} series names for {p} columns",
                names.len()
            )));
        }
        if raw.iter().any(|v| v.is_infinite()) {
            return Err(DfmError::NonFinite("raw panel".into()));
        }
        let mask = raw.map(|v| !v.is_nan());
        let mut values = DMatrix::zeros(n, p);
        let mut means = Vec::with_capacity(p);
        let mut sds = Vec::with_capacity(p);
        for i in 0..p {
            let obs: Vec<f64> = raw.column(i).iter().copied().filter(|v| !v.is_nan()).collect();
            if obs.len() < 2 {
                return Err(DfmError::InsufficientObservations { index: i, name: names[i].clone() });
            }
            let m = obs.iter().sum::<f64>() / obs.len() as f64;
            let var = obs.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (obs.len() - 1) as f64;
            let sd = var.sqrt();
            if !(sd > 1e-12 * (1.0 + m.abs())) {
                return Err(DfmError::ConstantColumn { index: i, name: names[i].clone() });
            }
            for t in 0..n {
                if mask[(t, i)] {
                    values[(t, i)] = (raw[(t, i)] - m) / sd;
                }
            }
            means.push(m);
            sds.push(sd);
        }
        Ok(Self { values, mask, means, sds, series_names: names })
    }

    /// Scale a raw panel (`NaN` = missing) with given statistics, e.g. those
    /// stored with a fitted model.
    pub fn with_statistics(raw: &DMatrix<f64>, means: Vec<f64>, sds: Vec<f64>, names: Vec<String>) -> Result<Self> {
        let (n, p) = raw.shape();
        if means.len() != p || sds.len() != p || names.len() != p {
            return Err(DfmError::Dimension(format!("statistics for {} series, panel has {p}", means.len())));
        }
        if raw.iter().any(|v| v.is_infinite()) {
            return Err(DfmError::NonFinite("raw panel".into()));
        }
        if sds.iter().any(|s| !(*s > 0.0 && s.is_finite())) || means.iter().any(|m| !m.is_finite()) {
            return Err(DfmError::InvalidConfig("standardisation statistics must be finite with sds > 0".into()));
        }
        let mask = raw.map(|v| !v.is_nan());
        let values = DMatrix::from_fn(n, p, |t, i| if mask[(t, i)] { (raw[(t, i)] - means[i]) / sds[i] } else { 0.0 });
        Ok(Self { values, mask, means, sds, series_names: names })
    }

    /// Wrap values that are already on the modelling scale (means 0, sds 1).
    ///
    /// Unlike [`TimeSeriesPanel::standardise`] this does not require every
    /// column to be observed, so it also serves for fully masked panels
    /// (forecast rows, prior-only smoothing).
    pub fn unscaled(values: DMatrix<f64>, mask: DMatrix<bool>) -> Result<Self> {
        if values.shape() != mask.shape() {
            return Err(DfmError::Dimension("values and mask shapes differ".into()));
        }
        let p = values.ncols();
        let mut values = values;
        for (v, &m) in values.iter_mut().zip(mask.iter()) {
            if !m {
                *v = 0.0;
            } else if !v.is_finite() {
                return Err(DfmError::NonFinite("observed panel value".into()));
            }
        }
        Ok(Self {
            values,
            mask,
            means: vec![0.0; p],
            sds: vec![1.0; p],
            series_names: default_names(p),
        })
    }

    /// Fully observed panel on the modelling scale.
    pub fn fully_observed(values: DMatrix<f64>) -> Result<Self> {
        let mask = DMatrix::from_element(values.nrows(), values.ncols(), true);
        Self::unscaled(values, mask)
    }

    pub fn with_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.p() {
            return Err(DfmError::Dimension("series name count".into()));
        }
        self.series_names = names;
        Ok(self)
    }

    /// Copy of the panel with the given `(t, i)` cells additionally masked out.
    pub fn with_missing<I: IntoIterator<Item = (usize, usize)>>(&self, cells: I) -> Self {
        let mut out = self.clone();
        for (t, i) in cells {
            out.mask[(t, i)] = false;
            out.values[(t, i)] = 0.0;
        }
        out
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

    pub fn mask(&self) -> &DMatrix<bool> {
        &self.mask
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn sds(&self) -> &[f64] {
        &self.sds
    }

    pub fn series_names(&self) -> &[String] {
        &self.series_names
    }

    #[inline]
    pub fn is_observed(&self, t: usize, i: usize) -> bool {
        self.mask[(t, i)]
    }

    #[inline]
    pub fn get(&self, t: usize, i: usize) -> Option<f64> {
        self.mask[(t, i)].then(|| self.values[(t, i)])
    }

    pub fn observed_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn has_missing(&self) -> bool {
        self.mask.iter().any(|&m| !m)
    }

    /// Map an `m × p` matrix from the modelling scale back to original units.
    pub fn destandardise(&self, values: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if values.ncols() != self.p() {
            return Err(DfmError::Dimension(format!(
                "expected {} columns, got {}",
                self.p(),
                values.ncols()
            )));
        }
        let mut out = values.clone();
        for (i, mut col) in out.column_iter_mut().enumerate() {
            for v in col.iter_mut() {
                *v = *v * self.sds[i] + self.means[i];
            }
        }
        Ok(out)
    }

    /// Observed cells on the original scale, `NaN` where missing.
    pub fn raw_values(&self) -> DMatrix<f64> {
        let mut out = self.destandardise(&self.values).expect("shape is consistent");
        for (v, &m) in out.iter_mut().zip(self.mask.iter()) {
            if !m {
                *v = f64::NAN;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nan() -> f64 {
        f64::NAN
    }

    #[test]
    fn three_point_column() {
        let raw = DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0]);
        let panel = TimeSeriesPanel::standardise(&raw, None).unwrap();
        assert_eq!(panel.values().as_slice(), &[-1.0, 0.0, 1.0]);
        assert_eq!(panel.means(), &[2.0]);
        assert_eq!(panel.sds(), &[1.0]);
    }

    #[test]
    fn constant_column_rejected() {
        let raw = DMatrix::from_column_slice(3, 1, &[5.0, nan(), 5.0]);
        let err = TimeSeriesPanel::standardise(&raw, Some(vec!["load".into()])).unwrap_err();
        assert!(matches!(err, DfmError::ConstantColumn { index: 0, .. }));
        assert!(err.to_string().contains("load"));
    }

    #[test]
    fn all_missing_column_rejected() {
        let raw = DMatrix::from_column_slice(3, 2, &[1.0, 2.0, 4.0, nan(), nan(), nan()]);
        assert!(matches!(
            TimeSeriesPanel::standardise(&raw, None),
            Err(DfmError::InsufficientObservations { index: 1, .. })
        ));
    }

    #[test]
    fn round_trip_on_observed_cells() {
        let raw = DMatrix::from_row_slice(4, 2, &[1.5, 10.0, nan(), 12.0, 2.5, nan(), 7.0, 3.0]);
        let panel = TimeSeriesPanel::standardise(&raw, None).unwrap();
        let back = panel.destandardise(panel.values()).unwrap();
        for t in 0..4 {
            for i in 0..2 {
                if panel.is_observed(t, i) {
                    assert!((back[(t, i)] - raw[(t, i)]).abs() < 1e-12);
                } else {
                    assert!(raw[(t, i)].is_nan());
                }
            }
        }
        assert_eq!(panel.mask(), &raw.map(|v| !v.is_nan()));
    }

    #[test]
    fn destandardise_zeros_gives_means() {
        let raw = DMatrix::from_row_slice(3, 2, &[1.0, 4.0, 2.0, 8.0, 6.0, 9.0]);
        let panel = TimeSeriesPanel::standardise(&raw, None).unwrap();
        let out = panel.destandardise(&DMatrix::zeros(1, 2)).unwrap();
        assert!((out[(0, 0)] - 3.0).abs() < 1e-12);
        assert!((out[(0, 1)] - 7.0).abs() < 1e-12);
        assert!(panel.destandardise(&DMatrix::zeros(1, 3)).is_err());
    }

    #[test]
    fn identity_scaling_is_passthrough() {
        let panel = TimeSeriesPanel::fully_observed(DMatrix::zeros(2, 2)).unwrap();
        let m = DMatrix::from_row_slice(1, 2, &[0.3, -7.0]);
        assert_eq!(panel.destandardise(&m).unwrap(), m);
    }

    #[test]
    fn standardisation_is_idempotent() {
        let raw = DMatrix::from_row_slice(5, 2, &[1.0, 3.0, 2.0, nan(), 4.0, 1.0, 8.0, 0.5, nan(), 2.0]);
        let once = TimeSeriesPanel::standardise(&raw, None).unwrap();
        let twice = TimeSeriesPanel::standardise(&once.raw_values().map(|v| v), None).unwrap();
        let again = TimeSeriesPanel::standardise(&DMatrix::from_fn(5, 2, |t, i| {
            once.get(t, i).unwrap_or(f64::NAN)
        }), None)
        .unwrap();
        assert!((again.values() - once.values()).abs().max() < 1e-10);
        assert_eq!(twice.mask(), once.mask());
    }
}
