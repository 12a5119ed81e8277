//! Relevant feature test: rank features by the best weighted MSE of a single
//! threshold split against a regression target.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::container::Container;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RftSettings {
    /// Uniform thresholds scanned per feature.
    pub bins: usize,
    /// Features kept per target dimension.
    pub select: usize,
    /// One selection shared by all targets, ranked by mean rank.
    pub shared_selection: bool,
}

impl Default for RftSettings {
    fn default() -> Self {
        Self { bins: 16, select: 256, shared_selection: false }
    }
}

impl RftSettings {
    pub fn validate(&self) -> Result<()> {
        if self.bins == 0 || self.select == 0 {
            return Err(Error::Config("rft.bins and rft.select must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RftScore {
    pub feature: usize,
    /// Minimal weighted MSE over the scanned thresholds.
    pub loss: f64,
    /// Threshold achieving `loss`; `NaN` when the feature is constant.
    pub threshold: f64,
    pub unsplittable: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RftSelection {
    /// Selected feature indices per target dimension, best first.
    pub per_target: Vec<Vec<usize>>,
    pub size: usize,
}

/// Threshold-bin assignment of a feature, reusable across targets. Sample `i`
/// falls left of threshold `b` exactly when `bin[i] <= b`.
struct Binned {
    bins: Vec<u32>,
    min: f64,
    range: f64,
}

fn bin_feature(z: &[f64], b: usize) -> Option<Binned> {
    let (min, max) = z.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !(max > min) {
        return None;
    }
    let range = max - min;
    let slots = (b + 1) as f64;
    let bins = z
        .iter()
        .map(|&v| {
            let pos = ((v - min) / range * slots).floor();
            pos.clamp(0.0, b as f64) as u32
        })
        .collect();
    Some(Binned { bins, min, range })
}

fn mean_and_var(y: &[f64]) -> (f64, f64) {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    (mean, y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n)
}

/// Scans thresholds of one binned feature against a target (already centered).
fn scan(binned: &Binned, yc: &[f64], b: usize, feature: usize, var: f64) -> RftScore {
    let mut cnt = vec![0usize; b + 1];
    let mut s1 = vec![0.0; b + 1];
    let mut s2 = vec![0.0; b + 1];
    for (&bin, &v) in binned.bins.iter().zip(yc) {
        let k = bin as usize;
        cnt[k] += 1;
        s1[k] += v;
        s2[k] += v * v;
    }
    let n = yc.len();
    let (tot1, tot2): (f64, f64) = (s1.iter().sum(), s2.iter().sum());
    let (mut c, mut a1, mut a2) = (0usize, 0.0, 0.0);
    let mut best = RftScore { feature, loss: f64::INFINITY, threshold: f64::NAN, unsplittable: false };
    for t in 0..b {
        c += cnt[t];
        a1 += s1[t];
        a2 += s2[t];
        if c == 0 || c == n {
            continue;
        }
        let sse_l = (a2 - a1 * a1 / c as f64).max(0.0);
        let (r1, r2) = (tot1 - a1, tot2 - a2);
        let sse_r = (r2 - r1 * r1 / (n - c) as f64).max(0.0);
        let loss = (sse_l + sse_r) / n as f64;
        if loss < best.loss {
            best.loss = loss;
            best.threshold = binned.min + binned.range * (t + 1) as f64 / (b + 1) as f64;
        }
    }
    // a split can never do worse than the mean predictor
    best.loss = best.loss.min(var);
    best
}

/// Scores one feature against one target with `b` uniform interior thresholds.
pub fn rft_score(z: &[f64], y: &[f64], b: usize) -> Result<RftScore> {
    if z.len() != y.len() {
        return Err(Error::Dimension(format!("feature has {} samples, target {}", z.len(), y.len())));
    }
    if z.len() < 2 || b == 0 {
        return Err(Error::Domain("rft needs at least 2 samples and 1 threshold".into()));
    }
    let (mean, var) = mean_and_var(y);
    match bin_feature(z, b) {
        None => Ok(RftScore { feature: 0, loss: var, threshold: f64::NAN, unsplittable: true }),
        Some(binned) => {
            let yc: Vec<f64> = y.iter().map(|v| v - mean).collect();
            Ok(scan(&binned, &yc, b, 0, var))
        }
    }
}

/// Scores every (feature, target) pair. Returns `losses[target][feature]`.
pub fn rft_losses(features: &DMatrix<f64>, targets: &DMatrix<f64>, b: usize) -> Result<Vec<Vec<f64>>> {
    let n = features.nrows();
    if targets.nrows() != n {
        return Err(Error::Dimension(format!("{n} feature rows but {} target rows", targets.nrows())));
    }
    if n < 2 || b == 0 {
        return Err(Error::Domain("rft needs at least 2 samples and 1 threshold".into()));
    }
    let centered: Vec<(Vec<f64>, f64)> = targets
        .column_iter()
        .map(|col| {
            let y: Vec<f64> = col.iter().copied().collect();
            let (mean, var) = mean_and_var(&y);
            (y.iter().map(|v| v - mean).collect(), var)
        })
        .collect();
    // per feature, all targets; then transpose
    let by_feature: Vec<Vec<f64>> = (0..features.ncols())
        .into_par_iter()
        .map(|f| {
            let z: Vec<f64> = features.column(f).iter().copied().collect();
            match bin_feature(&z, b) {
                None => centered.iter().map(|(_, var)| *var).collect(),
                Some(binned) => centered.iter().map(|(yc, var)| scan(&binned, yc, b, f, *var).loss).collect(),
            }
        })
        .collect();
    Ok((0..targets.ncols()).map(|d| by_feature.iter().map(|row| row[d]).collect()).collect())
}

fn ranked(losses: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..losses.len()).collect();
    idx.sort_by(|&a, &b| losses[a].total_cmp(&losses[b]).then(a.cmp(&b)));
    idx
}

/// Keeps the `f_s` lowest-loss features per target (clamped to the feature count).
pub fn rft_select(
    features: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    b: usize,
    f_s: usize,
    shared: bool,
) -> Result<RftSelection> {
    if f_s == 0 {
        return Err(Error::Domain("selection size must be >= 1".into()));
    }
    let size = f_s.min(features.ncols());
    let losses = rft_losses(features, targets, b)?;
    let per_target = if shared {
        let mut mean_rank = vec![0.0; features.ncols()];
        for l in &losses {
            for (rank, f) in ranked(l).into_iter().enumerate() {
                mean_rank[f] += rank as f64 / losses.len() as f64;
            }
        }
        let mut common = ranked(&mean_rank);
        common.truncate(size);
        vec![common; losses.len()]
    } else {
        losses
            .iter()
            .map(|l| {
                let mut r = ranked(l);
                r.truncate(size);
                r
            })
            .collect()
    };
    Ok(RftSelection { per_target, size })
}

impl RftSelection {
    pub fn write_into(&self, c: &mut Container, prefix: &str) {
        let flat: Vec<u64> = self.per_target.iter().flatten().map(|&i| i as u64).collect();
        c.push_u64(format!("{prefix}.indices"), &[self.per_target.len(), self.size], flat);
    }

    pub fn read_from(c: &Container, prefix: &str) -> Result<Self> {
        let (shape, flat) = c.u64s(&format!("{prefix}.indices"))?;
        if shape.len() != 2 {
            return Err(Error::format("rft selection must be a matrix"));
        }
        let size = shape[1];
        let per_target = if size == 0 {
            vec![Vec::new(); shape[0]]
        } else {
            flat.chunks(size).map(|ch| ch.iter().map(|&i| i as usize).collect()).collect()
        };
        Ok(Self { per_target, size })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_examples() {
        let s = rft_score(&[0.0, 0.0, 1.0, 1.0], &[0.0, 0.0, 1.0, 1.0], 1).unwrap();
        assert_eq!(s.loss, 0.0);
        assert_eq!(s.threshold, 0.5);
        let s = rft_score(&[1.0, 2.0, 3.0, 4.0], &[1.0, 2.0, 3.0, 4.0], 3).unwrap();
        assert_eq!(s.loss, 0.25);
        assert_eq!(s.threshold, 2.5);
        let s = rft_score(&[3.0, 1.0, 2.0], &[5.0; 3], 4).unwrap();
        assert_eq!(s.loss, 0.0);
    }

    #[test]
    fn constant_feature_is_unsplittable() {
        let s = rft_score(&[2.0; 4], &[1.0, 2.0, 3.0, 4.0], 8).unwrap();
        assert!(s.unsplittable);
        assert!((s.loss - 1.25).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(rft_score(&[1.0], &[1.0], 3).is_err());
        assert!(rft_score(&[1.0, 2.0], &[1.0], 3).is_err());
    }

    #[test]
    fn selection_orders_and_duplicates() {
        let n = 50;
        let features = DMatrix::from_fn(n, 4, |i, j| ((i * (j + 3)) % 17) as f64 + if j == 2 { i as f64 } else { 0.0 });
        let y = DMatrix::from_fn(n, 2, |i, _| i as f64);
        let sel = rft_select(&features, &y, 16, 4, false).unwrap();
        assert_eq!(sel.per_target[0], sel.per_target[1]);
        assert_eq!(sel.per_target[0][0], 2);
        let mut all = sel.per_target[0].clone();
        all.sort();
        assert_eq!(all, vec![0, 1, 2, 3]);
        let clamp = rft_select(&features, &y, 16, 10, true).unwrap();
        assert_eq!(clamp.size, 4);
    }

    #[test]
    fn selection_round_trip() {
        let sel = RftSelection { per_target: vec![vec![3, 1], vec![0, 2]], size: 2 };
        let mut c = Container::new("t");
        sel.write_into(&mut c, "rft");
        assert_eq!(RftSelection::read_from(&c, "rft").unwrap(), sel);
    }

    proptest! {
        #[test]
        fn bounded_by_variance_and_affine_invariant(
            z in prop::collection::vec(-10.0f64..10.0, 2..40),
            seed in any::<u64>(),
            a in 0.1f64..5.0,
            shift in -3.0f64..3.0,
        ) {
            let y: Vec<f64> = z.iter().enumerate().map(|(i, v)| (v * 0.7 + (i as f64 + seed as f64 % 7.0)).sin()).collect();
            let s = rft_score(&z, &y, 16).unwrap();
            let (_, var) = mean_and_var(&y);
            prop_assert!(s.loss <= var + 1e-12);
            let z2: Vec<f64> = z.iter().map(|v| a * v + shift).collect();
            let s2 = rft_score(&z2, &y, 16).unwrap();
            prop_assert!((s.loss - s2.loss).abs() <= 1e-12);
            let mut pairs: Vec<(f64, f64)> = z.iter().copied().zip(y.iter().copied()).collect();
            pairs.reverse();
            let (zr, yr): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            prop_assert!((rft_score(&zr, &yr, 16).unwrap().loss - s.loss).abs() <= 1e-12);
        }
    }
}
