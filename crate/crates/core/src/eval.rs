//! Speed-bucketed displacement errors and forward/backward divergence.

use serde::{Deserialize, Serialize};

use crate::config::{Config, SLOW_SPEED_LIMIT};
use crate::error::{Error, Result};
use crate::motion::MotionStack;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpeedBucket {
    Static,
    Slow,
    Fast,
}

/// Bucket of a ground-truth speed in m/s: static below `static_threshold`,
/// slow up to and including 5 m/s, fast above.
pub fn speed_bucket(speed: f64, static_threshold: f64) -> SpeedBucket {
    if speed < static_threshold {
        SpeedBucket::Static
    } else if speed <= SLOW_SPEED_LIMIT {
        SpeedBucket::Slow
    } else {
        SpeedBucket::Fast
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BucketStats {
    pub mean: Option<f64>,
    pub median: Option<f64>,
    pub count: usize,
}

fn stats(errors: &mut [f64]) -> BucketStats {
    if errors.is_empty() {
        return BucketStats { mean: None, median: None, count: 0 };
    }
    let mean = errors.iter().sum::<f64>() / errors.len() as f64;
    // lower median for even counts
    let mid = (errors.len() - 1) / 2;
    let (_, median, _) = errors.select_nth_unstable_by(mid, f64::total_cmp);
    BucketStats { mean: Some(mean), median: Some(*median), count: errors.len() }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    /// Horizon `t` (1-based).
    pub step: usize,
    #[serde(rename = "static")]
    pub static_: BucketStats,
    pub slow: BucketStats,
    pub fast: BucketStats,
}

/// Mean/median L2 error per speed bucket at the evaluation horizon, plus
/// the same breakdown at every horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketedMetrics {
    pub horizon: usize,
    #[serde(rename = "static")]
    pub static_: BucketStats,
    pub slow: BucketStats,
    pub fast: BucketStats,
    pub per_step: Vec<StepMetrics>,
}

impl BucketedMetrics {
    pub fn bucket(&self, b: SpeedBucket) -> &BucketStats {
        match b {
            SpeedBucket::Static => &self.static_,
            SpeedBucket::Slow => &self.slow,
            SpeedBucket::Fast => &self.fast,
        }
    }

    pub fn total_count(&self) -> usize {
        self.static_.count + self.slow.count + self.fast.count
    }
}

/// Per-cell errors pooled over any number of scenes.
#[derive(Debug, Clone, Default)]
pub struct MetricsAccumulator {
    /// `errors[step][bucket]`.
    errors: Vec<[Vec<f64>; 3]>,
}

fn bucket_index(b: SpeedBucket) -> usize {
    match b {
        SpeedBucket::Static => 0,
        SpeedBucket::Slow => 1,
        SpeedBucket::Fast => 2,
    }
}

impl MetricsAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds every valid cell of `pred` against `gt`. Buckets come from the
    /// ground-truth speed at the last horizon.
    pub fn add<T: Scalar, U: Scalar>(&mut self, pred: &MotionStack<T>, gt: &MotionStack<U>, cfg: &Config) -> Result<()> {
        pred.check_layout(gt, "prediction vs ground truth")?;
        let steps = pred.num_steps();
        if steps == 0 {
            return Ok(());
        }
        if self.errors.is_empty() {
            self.errors = vec![Default::default(); steps];
        } else if self.errors.len() != steps {
            return Err(Error::ShapeMismatch(format!("{} steps vs {} accumulated", steps, self.errors.len())));
        }
        let span = steps as f64 * cfg.frame_dt;
        let last = gt.step(steps - 1);
        for s in 0..pred.len() {
            let g = last[s];
            let speed = g[0].as_f64().hypot(g[1].as_f64()) / span;
            let b = bucket_index(speed_bucket(speed, cfg.static_speed_threshold));
            for k in 0..steps {
                let p = pred.step(k)[s];
                let g = gt.step(k)[s];
                let err = (p[0].as_f64() - g[0].as_f64()).hypot(p[1].as_f64() - g[1].as_f64());
                self.errors[k][b].push(err);
            }
        }
        Ok(())
    }

    pub fn finish(mut self) -> BucketedMetrics {
        let per_step: Vec<StepMetrics> = self
            .errors
            .iter_mut()
            .enumerate()
            .map(|(k, [st, sl, fa])| StepMetrics { step: k + 1, static_: stats(st), slow: stats(sl), fast: stats(fa) })
            .collect();
        let empty = BucketStats { mean: None, median: None, count: 0 };
        let last = per_step.last().copied();
        BucketedMetrics {
            horizon: per_step.len(),
            static_: last.map_or(empty, |s| s.static_),
            slow: last.map_or(empty, |s| s.slow),
            fast: last.map_or(empty, |s| s.fast),
            per_step,
        }
    }
}

/// Bucketed errors of one prediction against ground truth.
pub fn bucketed_errors<T: Scalar, U: Scalar>(pred: &MotionStack<T>, gt: Option<&MotionStack<U>>, cfg: &Config) -> Result<BucketedMetrics> {
    let gt = gt.ok_or(Error::MissingGroundTruth)?;
    let mut acc = MetricsAccumulator::new();
    acc.add(pred, gt, cfg)?;
    Ok(acc.finish())
}

/// One (error, divergence) sample per valid cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DivergenceSample {
    /// L2 error against ground truth at the last horizon.
    pub error: f64,
    /// `sum_t |M^{T->T+t} + M^{T->T-t}|`.
    pub divergence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceBin {
    pub divergence_lo: f64,
    pub divergence_hi: f64,
    pub mean_error: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceReport {
    pub samples: Vec<DivergenceSample>,
    /// Spearman rank correlation; `None` below three samples or with a
    /// constant variable.
    pub spearman: Option<f64>,
    pub bins: Vec<DivergenceBin>,
}

const DIVERGENCE_BINS: usize = 10;

/// Average ranks (1-based), ties sharing the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Pearson correlation of average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 3 {
        return None;
    }
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

impl DivergenceReport {
    /// Correlation and divergence-quantile bins over pooled samples.
    pub fn from_samples(samples: Vec<DivergenceSample>) -> Self {
        let err: Vec<f64> = samples.iter().map(|s| s.error).collect();
        let div: Vec<f64> = samples.iter().map(|s| s.divergence).collect();
        let spearman = spearman(&div, &err);
        let mut sorted = samples.clone();
        sorted.sort_by(|a, b| a.divergence.total_cmp(&b.divergence).then(a.error.total_cmp(&b.error)));
        let bins = if sorted.is_empty() {
            Vec::new()
        } else {
            let nb = DIVERGENCE_BINS.min(sorted.len());
            (0..nb)
                .map(|b| {
                    let chunk = &sorted[b * sorted.len() / nb..(b + 1) * sorted.len() / nb];
                    DivergenceBin {
                        divergence_lo: chunk[0].divergence,
                        divergence_hi: chunk[chunk.len() - 1].divergence,
                        mean_error: chunk.iter().map(|s| s.error).sum::<f64>() / chunk.len() as f64,
                        count: chunk.len(),
                    }
                })
                .collect()
        };
        Self { samples, spearman, bins }
    }
}

/// Per-cell divergence samples of one scene.
pub fn divergence_samples<T: Scalar, U: Scalar>(
    forward: &MotionStack<T>,
    backward: &MotionStack<T>,
    gt: &MotionStack<U>,
) -> Result<Vec<DivergenceSample>> {
    forward.check_layout(backward, "divergence: forward vs backward")?;
    forward.check_layout(gt, "divergence: forward vs ground truth")?;
    let last = forward.num_steps().saturating_sub(1);
    Ok((0..forward.len())
        .map(|s| {
            let divergence = (0..forward.num_steps())
                .map(|k| {
                    let (f, b) = (forward.step(k)[s], backward.step(k)[s]);
                    (f[0].as_f64() + b[0].as_f64()).hypot(f[1].as_f64() + b[1].as_f64())
                })
                .sum();
            let error = if forward.num_steps() == 0 {
                0.0
            } else {
                let (f, g) = (forward.step(last)[s], gt.step(last)[s]);
                (f[0].as_f64() - g[0].as_f64()).hypot(f[1].as_f64() - g[1].as_f64())
            };
            DivergenceSample { error, divergence }
        })
        .collect())
}

pub fn divergence_report<T: Scalar, U: Scalar>(
    forward: &MotionStack<T>,
    backward: &MotionStack<T>,
    gt: &MotionStack<U>,
) -> Result<DivergenceReport> {
    Ok(DivergenceReport::from_samples(divergence_samples(forward, backward, gt)?))
}
