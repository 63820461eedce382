use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::dataset::{make_split, ImageRecord, ReidDataset, SplitPlan, View};
use super::features::FeatureTable;
use crate::error::{Error, Result};
use crate::metric::{FeatureMatrix, MetricLearner, MetricModel};
use crate::rng::{stream, Purpose, Rng};

/// Ranks reported per trial, as in the usual re-identification tables.
pub const REPORTED_RANKS: [usize; 4] = [1, 5, 10, 20];

/// Cumulative matching characteristic: entry `k` is the fraction of probes
/// whose true match ranks at or above `k + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct CmcCurve {
    pub rank_rates: Vec<f64>,
    /// Number of trials averaged into the curve.
    pub trials: usize,
}

impl CmcCurve {
    /// Rate at 1-based rank `k`. Ranks past the gallery size read as the
    /// final entry, which is 1.0.
    pub fn rate(&self, k: usize) -> f64 {
        assert!(k >= 1, "ranks are 1-based");
        let last = self.rank_rates.len() - 1;
        self.rank_rates[(k - 1).min(last)]
    }

    pub fn rank1(&self) -> f64 {
        self.rate(1)
    }

    pub fn reported(&self) -> [f64; 4] {
        REPORTED_RANKS.map(|k| self.rate(k))
    }

    /// Non-decreasing, within `[0, 1]`, ending at exactly 1.
    pub fn is_valid(&self) -> bool {
        !self.rank_rates.is_empty()
            && self.rank_rates.windows(2).all(|w| w[0] <= w[1])
            && self.rank_rates.iter().all(|r| (0.0..=1.0).contains(r))
            && self.rank_rates.last() == Some(&1.0)
    }
}

/// 1-based rank of the true match of each probe.
///
/// A gallery item outranks the true match when it is strictly closer, or
/// equally close with a smaller gallery id.
pub fn match_ranks(
    dist: &[Vec<f64>],
    probe_ids: &[usize],
    gallery_ids: &[usize],
) -> Result<Vec<usize>> {
    if dist.len() != probe_ids.len() {
        return Err(Error::arg(format!(
            "{} distance rows for {} probes",
            dist.len(),
            probe_ids.len()
        )));
    }
    dist.iter()
        .zip(probe_ids)
        .enumerate()
        .map(|(p, (row, &pid))| {
            if row.len() != gallery_ids.len() {
                return Err(Error::arg(format!(
                    "distance row {p} has {} entries for a gallery of {}",
                    row.len(),
                    gallery_ids.len()
                )));
            }
            if let Some(g) = row.iter().position(|d| d.is_nan()) {
                return Err(Error::Numerical(format!("distance ({p}, {g}) is NaN")));
            }
            let mut matches = gallery_ids.iter().enumerate().filter(|(_, &g)| g == pid);
            let (t, _) = matches
                .next()
                .ok_or_else(|| Error::Data(format!("probe {p} (id {pid}) has no gallery match")))?;
            if matches.next().is_some() {
                return Err(Error::Data(format!(
                    "id {pid} appears twice in the gallery"
                )));
            }
            let dt = row[t];
            let ahead = row
                .iter()
                .zip(gallery_ids)
                .filter(|&(&d, &g)| d < dt || (d == dt && g < pid))
                .count();
            Ok(ahead + 1)
        })
        .collect()
}

/// CMC over ranks `1..=|gallery|` from a `probes × gallery` distance matrix.
pub fn cmc_from_distances(
    dist: &[Vec<f64>],
    probe_ids: &[usize],
    gallery_ids: &[usize],
) -> Result<CmcCurve> {
    if probe_ids.is_empty() || gallery_ids.is_empty() {
        return Err(Error::arg(
            "CMC needs at least one probe and one gallery item",
        ));
    }
    let ranks = match_ranks(dist, probe_ids, gallery_ids)?;
    let mut hist = vec![0usize; gallery_ids.len()];
    for r in ranks {
        hist[r - 1] += 1;
    }
    let n = probe_ids.len() as f64;
    let mut acc = 0;
    let mut rank_rates: Vec<f64> = hist
        .iter()
        .map(|h| {
            acc += h;
            acc as f64 / n
        })
        .collect();
    // All probes are counted by the last rank; pin it against rounding.
    *rank_rates.last_mut().expect("gallery is non-empty") = 1.0;
    Ok(CmcCurve {
        rank_rates,
        trials: 1,
    })
}

/// Arithmetic mean of equal-length curves.
pub fn mean_curve(curves: &[CmcCurve]) -> Result<CmcCurve> {
    let first = curves
        .first()
        .ok_or_else(|| Error::arg("no curves to average"))?;
    let len = first.rank_rates.len();
    if curves.iter().any(|c| c.rank_rates.len() != len) {
        return Err(Error::arg("curves have different lengths"));
    }
    let n = curves.len() as f64;
    let rank_rates = (0..len)
        .map(|k| curves.iter().map(|c| c.rank_rates[k]).sum::<f64>() / n)
        .collect();
    Ok(CmcCurve {
        rank_rates,
        trials: curves.iter().map(|c| c.trials).sum(),
    })
}

/// One view-1 image per id, drawn uniformly when an id has several.
pub fn pick_gallery<'a>(
    dataset: &'a ReidDataset,
    ids: &[usize],
    rng: &mut Rng,
) -> Vec<&'a ImageRecord> {
    ids.iter()
        .map(|&id| {
            let options: Vec<&ImageRecord> = dataset.images_of(id, View::One).collect();
            *options.choose(rng).expect("every id has a view-1 image")
        })
        .collect()
}

fn gather(records: &[&ImageRecord], features: &FeatureTable) -> Result<FeatureMatrix> {
    let mut data = Vec::with_capacity(records.len() * features.dim());
    for r in records {
        data.extend_from_slice(features.require(&r.key)?);
    }
    FeatureMatrix::new(features.dim(), data, records.iter().map(|r| r.id).collect())
}

/// Every image of the given ids, labelled by id.
pub fn training_matrix(
    dataset: &ReidDataset,
    features: &FeatureTable,
    ids: &[usize],
) -> Result<FeatureMatrix> {
    let records: Vec<&ImageRecord> = dataset
        .images
        .iter()
        .filter(|r| ids.binary_search(&r.id).is_ok())
        .collect();
    gather(&records, features)
}

/// One single-shot trial on the test half of `split`: a gallery of one
/// view-1 image per test id against every view-2 image of those ids.
pub fn single_shot_eval(
    dataset: &ReidDataset,
    features: &FeatureTable,
    split: &SplitPlan,
    metric: &MetricModel,
    gallery_rng: &mut Rng,
) -> Result<CmcCurve> {
    let gallery = pick_gallery(dataset, &split.test_ids, gallery_rng);
    let probes: Vec<&ImageRecord> = dataset
        .images
        .iter()
        .filter(|r| r.view == View::Two && split.test_ids.binary_search(&r.id).is_ok())
        .collect();
    let g = gather(&gallery, features)?;
    let p = gather(&probes, features)?;
    let dist = metric.distance_matrix(&p, &g)?;
    cmc_from_distances(&dist, p.labels(), g.labels())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalOptions {
    pub trials: usize,
    /// Trial `t` splits with `seed + t` and draws its gallery from the
    /// gallery stream of `seed` at counter `t`.
    pub seed: u64,
    pub parallel: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            trials: 10,
            seed: 0,
            parallel: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub trial: usize,
    pub split_seed: u64,
    pub curve: CmcCurve,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub mean: CmcCurve,
    pub trials: Vec<TrialResult>,
}

/// Runs one trial: split, fit the metric on the training half, evaluate.
pub fn run_trial(
    dataset: &ReidDataset,
    features: &FeatureTable,
    learner: &dyn MetricLearner,
    seed: u64,
    trial: usize,
) -> Result<TrialResult> {
    let split_seed = seed.wrapping_add(trial as u64);
    let split = make_split(dataset.num_ids(), split_seed)?;
    let metric = learner.fit(&training_matrix(dataset, features, &split.train_ids)?)?;
    let mut rng = stream(seed, Purpose::Gallery, trial as u64);
    let curve = single_shot_eval(dataset, features, &split, &metric, &mut rng)?;
    Ok(TrialResult {
        trial,
        split_seed,
        curve,
    })
}

/// Repeated single-shot evaluation with a fresh split and metric per trial.
/// Trials are independent, so the parallel and serial paths agree exactly.
pub fn repeat_eval(
    dataset: &ReidDataset,
    features: &FeatureTable,
    learner: &dyn MetricLearner,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    if opts.trials == 0 {
        return Err(Error::arg("trials must be at least 1"));
    }
    let run = |t| run_trial(dataset, features, learner, opts.seed, t);
    let trials: Vec<TrialResult> = if opts.parallel {
        (0..opts.trials)
            .into_par_iter()
            .map(run)
            .collect::<Result<_>>()?
    } else {
        (0..opts.trials).map(run).collect::<Result<_>>()?
    };
    let curves: Vec<CmcCurve> = trials.iter().map(|t| t.curve.clone()).collect();
    Ok(EvalReport {
        mean: mean_curve(&curves)?,
        trials,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracle_distances_give_perfect_rank1() {
        let ids = [0, 1, 2];
        let dist: Vec<Vec<f64>> = (0..3)
            .map(|p| (0..3).map(|g| if p == g { 0.0 } else { 1.0 }).collect())
            .collect();
        let c = cmc_from_distances(&dist, &ids, &ids).unwrap();
        assert_eq!(c.rank_rates, vec![1.0; 3]);
    }

    #[test]
    fn adversarial_distances_put_matches_last() {
        let ids = [0, 1, 2, 3];
        let dist: Vec<Vec<f64>> = (0..4)
            .map(|p| (0..4).map(|g| if p == g { 9.0 } else { 1.0 }).collect())
            .collect();
        let c = cmc_from_distances(&dist, &ids, &ids).unwrap();
        assert_eq!(c.rank_rates, vec![0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn ties_favour_smaller_gallery_id() {
        let gallery = [0, 1, 2];
        let dist = vec![vec![1.0; 3]; 3];
        let ranks = match_ranks(&dist, &[0, 1, 2], &gallery).unwrap();
        assert_eq!(ranks, vec![1, 2, 3]);
    }

    #[test]
    fn nan_distance_is_numerical() {
        let dist = vec![vec![f64::NAN, 0.0]];
        assert!(matches!(
            cmc_from_distances(&dist, &[0], &[0, 1]),
            Err(Error::Numerical(_))
        ));
    }

    #[test]
    fn rate_clamps_past_gallery() {
        let c = CmcCurve {
            rank_rates: vec![0.5, 1.0],
            trials: 1,
        };
        assert_eq!(c.reported(), [0.5, 1.0, 1.0, 1.0]);
    }
}
