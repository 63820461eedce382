use ffn_core::metric::{lfda_fit, Affinity, BaseDistance, FeatureMatrix, LfdaParams, MetricModel};
use ffn_core::rng::{stream, Purpose};
use ffn_core::Error;
use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Normal};

/// `per_class` samples of `N(means[c], sigma²I)` per class.
fn gaussian_classes(means: &[Vec<f64>], per_class: usize, sigma: f64, seed: u64) -> FeatureMatrix {
    let mut rng = stream(seed, Purpose::Probe, 0);
    let normal = Normal::new(0.0, sigma).unwrap();
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (c, m) in means.iter().enumerate() {
        for _ in 0..per_class {
            rows.push(m.iter().map(|v| v + normal.sample(&mut rng)).collect());
            labels.push(c);
        }
    }
    FeatureMatrix::from_rows(&rows, labels).unwrap()
}

fn abs_cos(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (dot / (na * nb)).abs()
}

fn column(m: &MetricModel, j: usize) -> Vec<f64> {
    m.projection
        .as_ref()
        .unwrap()
        .column(j)
        .iter()
        .copied()
        .collect()
}

#[test]
fn separating_axis_is_found() {
    for seed in 0..5 {
        let f = gaussian_classes(&[vec![-3.0, 0.0], vec![3.0, 0.0]], 50, 1.0, seed);
        let m = lfda_fit(
            &f,
            &LfdaParams {
                r: Some(1),
                ..LfdaParams::default()
            },
        )
        .unwrap();
        assert_eq!(m.reduced_dim(), 1);
        assert!(abs_cos(&column(&m, 0), &[1.0, 0.0]) > 0.99);
    }
}

#[test]
fn one_sample_per_class_is_rejected() {
    let f = FeatureMatrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]], vec![0, 1]).unwrap();
    assert!(matches!(
        lfda_fit(&f, &LfdaParams::default()),
        Err(Error::Argument(_))
    ));
    let single = FeatureMatrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]], vec![0, 0]).unwrap();
    assert!(matches!(
        lfda_fit(&single, &LfdaParams::default()),
        Err(Error::Argument(_))
    ));
}

#[test]
fn uniform_affinity_reproduces_fisher_direction() {
    // anisotropic, correlated classes so the Fisher direction differs from
    // the mean difference
    let base = gaussian_classes(&[vec![0.0, 0.0, 0.0], vec![2.0, 1.0, -1.0]], 40, 1.0, 9);
    let mix = DMatrix::from_row_slice(3, 3, &[2.0, 0.5, 0.0, 0.0, 1.0, 0.3, 0.1, 0.0, 0.4]);
    let rows: Vec<Vec<f64>> = base
        .rows()
        .map(|r| {
            (mix.clone() * DVector::from_column_slice(r))
                .iter()
                .copied()
                .collect()
        })
        .collect();
    let f = FeatureMatrix::from_rows(&rows, base.labels().to_vec()).unwrap();
    let p = LfdaParams {
        r: Some(1),
        affinity: Affinity::Uniform,
        ..LfdaParams::default()
    };
    let m = lfda_fit(&f, &p).unwrap();

    // closed form: (S_w + eps I)^-1 (mu1 - mu0), scatter summed by direct loops
    let d = 3;
    let mut mu = vec![vec![0.0; d]; 2];
    let mut count = [0.0; 2];
    for (r, &l) in rows.iter().zip(f.labels()) {
        count[l] += 1.0;
        for k in 0..d {
            mu[l][k] += r[k];
        }
    }
    for l in 0..2 {
        for k in 0..d {
            mu[l][k] /= count[l];
        }
    }
    let mut sw = DMatrix::<f64>::zeros(d, d);
    for (r, &l) in rows.iter().zip(f.labels()) {
        for a in 0..d {
            for b in 0..d {
                sw[(a, b)] += (r[a] - mu[l][a]) * (r[b] - mu[l][b]);
            }
        }
    }
    let eps = 1e-3 * sw.trace() / d as f64;
    for i in 0..d {
        sw[(i, i)] += eps;
    }
    let diff = DVector::from_iterator(d, (0..d).map(|k| mu[1][k] - mu[0][k]));
    let fisher: Vec<f64> = sw.lu().solve(&diff).unwrap().iter().copied().collect();
    let angle = abs_cos(&column(&m, 0), &fisher).min(1.0).acos();
    assert!(angle < 1e-3, "angle {angle}");
    assert!(
        abs_cos(&column(&m, 0), diff.as_slice()) < 0.99,
        "degenerate fixture"
    );
}

#[test]
fn relabelling_classes_changes_nothing() {
    let means: Vec<Vec<f64>> = (0..4)
        .map(|c| (0..5).map(|k| if k == c { 4.0 } else { 0.0 }).collect())
        .collect();
    let f = gaussian_classes(&means, 12, 1.0, 3);
    let relabel = [7, 2, 9, 0];
    let g = FeatureMatrix::new(
        5,
        f.data().to_vec(),
        f.labels().iter().map(|&l| relabel[l]).collect(),
    )
    .unwrap();
    let a = lfda_fit(&f, &LfdaParams::default()).unwrap();
    let b = lfda_fit(&g, &LfdaParams::default()).unwrap();
    assert_eq!(a.reduced_dim(), 3);
    for j in 0..3 {
        assert!(abs_cos(&column(&a, j), &column(&b, j)) > 1.0 - 1e-9);
    }
}

fn rank1(model: &MetricModel, gallery: &FeatureMatrix, probes: &FeatureMatrix) -> f64 {
    let d = model.distance_matrix(probes, gallery).unwrap();
    let hits = d
        .iter()
        .zip(probes.labels())
        .filter(|(row, &l)| {
            let best = (0..row.len())
                .min_by(|&a, &b| row[a].total_cmp(&row[b]))
                .unwrap();
            gallery.labels()[best] == l
        })
        .count();
    hits as f64 / probes.len() as f64
}

fn split(
    f: &FeatureMatrix,
    per_class: usize,
    train_per: usize,
) -> (FeatureMatrix, FeatureMatrix, FeatureMatrix) {
    let pick = |keep: &dyn Fn(usize) -> bool| {
        let idx: Vec<usize> = (0..f.len()).filter(|&i| keep(i % per_class)).collect();
        let rows: Vec<Vec<f64>> = idx.iter().map(|&i| f.row(i).to_vec()).collect();
        FeatureMatrix::from_rows(&rows, idx.iter().map(|&i| f.labels()[i]).collect()).unwrap()
    };
    (
        pick(&|k| k < train_per),
        pick(&|k| k == train_per),
        pick(&|k| k > train_per),
    )
}

#[test]
fn separable_classes_reach_full_rank1() {
    // 10 classes, 20 samples each, means 5σ apart along distinct axes,
    // plus 20 pure-noise dimensions
    let means: Vec<Vec<f64>> = (0..10)
        .map(|c| (0..30).map(|k| if k == c { 5.0 } else { 0.0 }).collect())
        .collect();
    for seed in 0..3 {
        let f = gaussian_classes(&means, 20, 0.5, seed);
        let (train, gallery, probes) = split(&f, 20, 10);
        let m = lfda_fit(&train, &LfdaParams::default()).unwrap();
        assert_eq!(m.reduced_dim(), 9);
        assert_eq!(rank1(&m, &gallery, &probes), 1.0);
    }
}

#[test]
fn high_dimensional_features_go_through_the_principal_subspace() {
    let means: Vec<Vec<f64>> = (0..6)
        .map(|c| {
            (0..300)
                .map(|k| if k % 6 == c { 1.0 } else { 0.0 })
                .collect()
        })
        .collect();
    let f = gaussian_classes(&means, 8, 0.5, 1);
    let (train, gallery, probes) = split(&f, 8, 4);
    assert!(train.dim() > train.len());
    let m = lfda_fit(&train, &LfdaParams::default()).unwrap();
    assert_eq!(m.projection.as_ref().unwrap().nrows(), 300);
    assert_eq!(m.reduced_dim(), 5);
    assert_eq!(rank1(&m, &gallery, &probes), 1.0);
}

#[test]
fn fitting_is_deterministic_and_persists() {
    let f = gaussian_classes(
        &[
            vec![0.0, 0.0, 1.0],
            vec![2.0, 0.0, 0.0],
            vec![0.0, 2.0, 0.0],
        ],
        10,
        1.0,
        4,
    );
    let a = lfda_fit(&f, &LfdaParams::default()).unwrap();
    let b = lfda_fit(&f, &LfdaParams::default()).unwrap();
    assert_eq!(a, b);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.bin");
    a.save(&path).unwrap();
    assert_eq!(MetricModel::load(&path).unwrap(), a);
    let l1 = MetricModel::l1(3);
    l1.save(&path).unwrap();
    let back = MetricModel::load(&path).unwrap();
    assert_eq!(back, l1);
    assert_eq!(back.distance, BaseDistance::L1);
}
