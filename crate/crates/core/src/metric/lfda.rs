//! Local Fisher discriminant analysis.
//!
//! Within- and between-class scatter are weighted by a locality-preserving
//! affinity, `S = X (D − W) Xᵀ`, and the projection is the top generalized
//! eigenvectors of `S_b φ = λ S_w φ`, solved by Cholesky whitening of the
//! regularized `S_w`. When the feature dimension reaches the sample count
//! the data are first compressed onto their principal subspace (computed
//! from the Gram matrix), which spans every difference vector the scatter
//! matrices can see.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::{BaseDistance, FeatureMatrix, MetricKind, MetricModel};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Affinity {
    /// `exp(-|xi - xj|² / (σi σj))` with `σi` the distance from `xi` to its
    /// `knn`-th nearest same-class neighbour.
    #[default]
    HeatKernel,
    /// All ones; reduces the criterion to classical Fisher analysis.
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LfdaParams {
    /// Output dimension; `None` means `min(dim, classes - 1)`.
    pub r: Option<usize>,
    pub knn: usize,
    pub affinity: Affinity,
    /// `S_w += regularization · mean(diag S_w) · I`.
    pub regularization: f64,
}

impl Default for LfdaParams {
    fn default() -> Self {
        LfdaParams {
            r: None,
            knn: 7,
            affinity: Affinity::HeatKernel,
            regularization: 1e-3,
        }
    }
}

/// Orthonormal basis (`dim × k`) of the centred data's column space.
fn principal_basis(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.ncols();
    let mean = x.column_mean();
    let mut xc = x.clone();
    for mut c in xc.column_iter_mut() {
        c -= &mean;
    }
    let gram = xc.transpose() * &xc;
    let eig = SymmetricEigen::new(gram);
    let top = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    let mut order: Vec<usize> = (0..n)
        .filter(|&i| eig.eigenvalues[i] > top * 1e-12)
        .collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut basis = DMatrix::zeros(x.nrows(), order.len());
    for (j, &i) in order.iter().enumerate() {
        let u = &xc * eig.eigenvectors.column(i) / eig.eigenvalues[i].sqrt();
        basis.set_column(j, &u);
    }
    basis
}

fn squared_distances(z: &DMatrix<f64>) -> DMatrix<f64> {
    let n = z.ncols();
    let mut d = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let v = (z.column(i) - z.column(j)).norm_squared();
            d[(i, j)] = v;
            d[(j, i)] = v;
        }
    }
    d
}

fn affinity(
    z: &DMatrix<f64>,
    labels: &[usize],
    classes: &BTreeMap<usize, Vec<usize>>,
    p: &LfdaParams,
) -> DMatrix<f64> {
    let n = z.ncols();
    if p.affinity == Affinity::Uniform {
        return DMatrix::from_element(n, n, 1.0);
    }
    let d2 = squared_distances(z);
    let mut sigma = vec![0.0; n];
    for members in classes.values() {
        let k = p.knn.clamp(1, members.len() - 1);
        for &i in members {
            let mut ds: Vec<f64> = members
                .iter()
                .filter(|&&j| j != i)
                .map(|&j| d2[(i, j)])
                .collect();
            ds.sort_by(f64::total_cmp);
            sigma[i] = ds[k - 1].sqrt();
        }
    }
    DMatrix::from_fn(n, n, |i, j| {
        if labels[i] != labels[j] {
            return 0.0;
        }
        let s = sigma[i] * sigma[j];
        if s > 0.0 {
            (-d2[(i, j)] / s).exp()
        } else if d2[(i, j)] == 0.0 {
            1.0
        } else {
            0.0
        }
    })
}

/// `Z (D − W) Zᵀ` with `D` the row sums of the symmetric `W`.
fn laplacian_scatter(z: &DMatrix<f64>, w: &DMatrix<f64>) -> DMatrix<f64> {
    let mut l = -w.clone();
    for i in 0..w.nrows() {
        l[(i, i)] += w.row(i).sum();
    }
    z * l * z.transpose()
}

pub fn lfda_fit(train: &FeatureMatrix, p: &LfdaParams) -> Result<MetricModel> {
    let mut classes: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in train.labels().iter().enumerate() {
        classes.entry(l).or_default().push(i);
    }
    if classes.len() < 2 {
        return Err(Error::arg("LFDA needs at least two classes"));
    }
    if let Some((l, _)) = classes.iter().find(|(_, m)| m.len() < 2) {
        return Err(Error::arg(format!(
            "LFDA needs two samples per class; class {l} has one"
        )));
    }
    if p.knn == 0 {
        return Err(Error::arg("LFDA knn must be at least 1"));
    }
    if !(p.regularization >= 0.0) {
        return Err(Error::arg("LFDA regularization must be non-negative"));
    }
    let dim = train.dim();
    let r = p.r.unwrap_or_else(|| dim.min(classes.len() - 1));
    if r == 0 || r > dim {
        return Err(Error::arg(format!(
            "LFDA output dimension {r} outside [1, {dim}]"
        )));
    }

    let x = train.to_columns();
    let n = x.ncols();
    let basis = (dim >= n).then(|| principal_basis(&x));
    let z = match &basis {
        Some(u) => u.transpose() * &x,
        None => x,
    };
    let k = z.nrows();

    let a = affinity(&z, train.labels(), &classes, p);
    let labels = train.labels();
    let nf = n as f64;
    let size = |i: usize| classes[&labels[i]].len() as f64;
    let ww = DMatrix::from_fn(n, n, |i, j| {
        if labels[i] == labels[j] {
            a[(i, j)] / size(i)
        } else {
            0.0
        }
    });
    let wb = DMatrix::from_fn(n, n, |i, j| {
        if labels[i] == labels[j] {
            a[(i, j)] * (1.0 / nf - 1.0 / size(i))
        } else {
            1.0 / nf
        }
    });
    let mut sw = laplacian_scatter(&z, &ww);
    let sb = laplacian_scatter(&z, &wb);
    let eps = p.regularization * sw.trace() / k as f64;
    for i in 0..k {
        sw[(i, i)] += eps;
    }
    let diag_ratio = {
        let d: Vec<f64> = (0..k).map(|i| sw[(i, i)]).collect();
        d.iter().copied().fold(0.0, f64::max) / d.iter().copied().fold(f64::INFINITY, f64::min)
    };
    let chol = sw.clone().cholesky().ok_or_else(|| {
        Error::Numerical(format!(
            "within-class scatter is not positive definite after regularization \
             (eps {eps:e}, diagonal ratio {diag_ratio:e})"
        ))
    })?;
    let l = chol.l();
    // M = L⁻¹ S_b L⁻ᵀ
    let y = l
        .solve_lower_triangular(&sb)
        .ok_or_else(|| Error::Numerical("singular Cholesky factor".into()))?;
    let m = l
        .solve_lower_triangular(&y.transpose())
        .ok_or_else(|| Error::Numerical("singular Cholesky factor".into()))?;
    let m = (&m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let r_eff = r.min(k);
    if r_eff < r {
        log::warn!("LFDA output dimension reduced from {r} to the data rank {k}");
    }
    let mut v = DMatrix::zeros(k, r_eff);
    for (j, &i) in order.iter().take(r_eff).enumerate() {
        v.set_column(j, &eig.eigenvectors.column(i));
    }
    // φ = L⁻ᵀ v
    let phi = l
        .transpose()
        .solve_upper_triangular(&v)
        .ok_or_else(|| Error::Numerical("singular Cholesky factor".into()))?;
    let mut w = match &basis {
        Some(u) => u * phi,
        None => phi,
    };
    if !w.iter().all(|v| v.is_finite()) {
        return Err(Error::Numerical(
            "LFDA produced a non-finite projection".into(),
        ));
    }
    // fix each column's sign: largest-magnitude entry positive
    for mut c in w.column_iter_mut() {
        let pivot = c
            .iter()
            .copied()
            .fold(0.0, |a: f64, b| if b.abs() > a.abs() { b } else { a });
        if pivot < 0.0 {
            c.neg_mut();
        }
    }
    Ok(MetricModel {
        kind: MetricKind::Lfda,
        dim,
        projection: Some(w),
        distance: BaseDistance::L2,
        lfda: Some(LfdaParams { r: Some(r), ..*p }),
    })
}
