//! Distances and supervised metric learning over feature vectors.
//!
//! A [`MetricModel`] is a linear projection `x' = Wᵀx` followed by a base
//! distance. L1 and L2 use the identity projection; LFDA learns `W`.
//! New metric kinds plug in through [`MetricLearner`].

mod lfda;
mod store;

use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use lfda::{lfda_fit, Affinity, LfdaParams};

/// One feature vector per row with its identity label.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    dim: usize,
    data: Vec<f64>,
    labels: Vec<usize>,
}

impl FeatureMatrix {
    pub fn new(dim: usize, data: Vec<f64>, labels: Vec<usize>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::arg("feature dimension must be positive"));
        }
        if data.len() != dim * labels.len() {
            return Err(Error::arg(format!(
                "{} values do not form {} rows of width {dim}",
                data.len(),
                labels.len()
            )));
        }
        Ok(FeatureMatrix { dim, data, labels })
    }

    pub fn from_rows(rows: &[Vec<f64>], labels: Vec<usize>) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.len() != labels.len() {
            return Err(Error::arg("one label per row is required"));
        }
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::arg("rows have inconsistent widths"));
        }
        FeatureMatrix::new(dim, rows.concat(), labels)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Rows as columns of a `dim × n` matrix.
    pub(crate) fn to_columns(&self) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.dim, self.len(), &self.data)
    }
}

fn check_lengths(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::arg(format!(
            "vector lengths differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

pub fn l1_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    check_lengths(a, b)?;
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum())
}

pub fn l2_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    check_lengths(a, b)?;
    Ok(a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
#[non_exhaustive]
pub enum MetricKind {
    L1,
    L2,
    Lfda,
}

impl MetricKind {
    pub fn name(self) -> &'static str {
        match self {
            MetricKind::L1 => "l1",
            MetricKind::L2 => "l2",
            MetricKind::Lfda => "lfda",
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l1" => Ok(MetricKind::L1),
            "l2" => Ok(MetricKind::L2),
            "lfda" => Ok(MetricKind::Lfda),
            other => Err(Error::arg(format!("unknown metric `{other}`"))),
        }
    }
}

/// Distance applied after projection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaseDistance {
    L1,
    L2,
}

impl BaseDistance {
    pub fn eval(self, a: &[f64], b: &[f64]) -> Result<f64> {
        match self {
            BaseDistance::L1 => l1_distance(a, b),
            BaseDistance::L2 => l2_distance(a, b),
        }
    }
}

/// A fitted metric: optional projection `W` (`dim × r`) and base distance.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricModel {
    pub kind: MetricKind,
    pub dim: usize,
    /// `None` is the identity.
    pub projection: Option<DMatrix<f64>>,
    pub distance: BaseDistance,
    /// Hyperparameters used to fit the projection, if any.
    pub lfda: Option<LfdaParams>,
}

impl MetricModel {
    pub fn l1(dim: usize) -> Self {
        MetricModel {
            kind: MetricKind::L1,
            dim,
            projection: None,
            distance: BaseDistance::L1,
            lfda: None,
        }
    }

    pub fn l2(dim: usize) -> Self {
        MetricModel {
            kind: MetricKind::L2,
            distance: BaseDistance::L2,
            ..MetricModel::l1(dim)
        }
    }

    /// Output width of the projection.
    pub fn reduced_dim(&self) -> usize {
        self.projection.as_ref().map_or(self.dim, |w| w.ncols())
    }

    pub fn project_row(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(Error::arg(format!(
                "metric expects {}-D features, got {}",
                self.dim,
                x.len()
            )));
        }
        Ok(match &self.projection {
            None => x.to_vec(),
            Some(w) => (0..w.ncols())
                .map(|j| w.column(j).iter().zip(x).map(|(a, b)| a * b).sum())
                .collect(),
        })
    }

    /// `x' = Wᵀx` for every row; identity models return the input.
    pub fn project(&self, features: &FeatureMatrix) -> Result<FeatureMatrix> {
        if features.dim() != self.dim {
            return Err(Error::arg(format!(
                "metric expects {}-D features, got {}",
                self.dim,
                features.dim()
            )));
        }
        if self.projection.is_none() {
            return Ok(features.clone());
        }
        let mut data = Vec::with_capacity(features.len() * self.reduced_dim());
        for row in features.rows() {
            data.extend(self.project_row(row)?);
        }
        FeatureMatrix::new(self.reduced_dim(), data, features.labels().to_vec())
    }

    /// Distance between two raw (unprojected) vectors.
    pub fn distance(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        self.distance
            .eval(&self.project_row(a)?, &self.project_row(b)?)
    }

    /// `probes × gallery` distances, projecting each set once.
    pub fn distance_matrix(
        &self,
        probes: &FeatureMatrix,
        gallery: &FeatureMatrix,
    ) -> Result<Vec<Vec<f64>>> {
        let p = self.project(probes)?;
        let g = self.project(gallery)?;
        p.rows()
            .map(|a| g.rows().map(|b| self.distance.eval(a, b)).collect())
            .collect()
    }
}

/// Fits a [`MetricModel`] on training features. Repeated evaluation refits
/// one per trial.
pub trait MetricLearner: Send + Sync {
    fn kind(&self) -> MetricKind;

    fn fit(&self, train: &FeatureMatrix) -> Result<MetricModel>;
}

/// L1 or L2 without learning.
#[derive(Debug, Clone, Copy)]
pub struct Baseline(pub BaseDistance);

impl MetricLearner for Baseline {
    fn kind(&self) -> MetricKind {
        match self.0 {
            BaseDistance::L1 => MetricKind::L1,
            BaseDistance::L2 => MetricKind::L2,
        }
    }

    fn fit(&self, train: &FeatureMatrix) -> Result<MetricModel> {
        Ok(match self.0 {
            BaseDistance::L1 => MetricModel::l1(train.dim()),
            BaseDistance::L2 => MetricModel::l2(train.dim()),
        })
    }
}

impl MetricLearner for LfdaParams {
    fn kind(&self) -> MetricKind {
        MetricKind::Lfda
    }

    fn fit(&self, train: &FeatureMatrix) -> Result<MetricModel> {
        lfda_fit(train, self)
    }
}

/// The learner for a configured kind.
pub fn learner(kind: MetricKind, lfda: &LfdaParams) -> Box<dyn MetricLearner> {
    match kind {
        MetricKind::L1 => Box::new(Baseline(BaseDistance::L1)),
        MetricKind::L2 => Box::new(Baseline(BaseDistance::L2)),
        MetricKind::Lfda => Box::new(*lfda),
    }
}
