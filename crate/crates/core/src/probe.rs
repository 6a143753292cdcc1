//! Single-layer linear probes.
//!
//! A probe is softmax regression trained by plain full-batch gradient
//! descent on standardized inputs. It is deliberately self-contained (no
//! autodiff) so it can serve as an independent read-out of what a feature
//! set encodes: the perception module uses it to compare color versus shape
//! decodability, and the metrics module uses it as the message classifier
//! behind the probe representation levels.

use crate::rngutil::stream;
use rand::Rng;

#[derive(Clone, Debug)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub lr: f64,
    pub l2: f64,
    /// Fraction of rows used for fitting in [`holdout_accuracy`].
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig { epochs: 120, lr: 2.0, l2: 1e-4, train_fraction: 0.7, seed: 1 }
    }
}

/// A trained probe: per-class weights over standardized features plus bias.
pub struct LinearProbe {
    classes: usize,
    dim: usize,
    mean: Vec<f64>,
    std: Vec<f64>,
    /// `classes x (dim + 1)`, bias last.
    w: Vec<f64>,
}

impl LinearProbe {
    pub fn predict(&self, row: &[f32]) -> usize {
        assert_eq!(row.len(), self.dim, "probe expects {} features, got {}", self.dim, row.len());
        let mut best = 0usize;
        let mut best_score = f64::NEG_INFINITY;
        for c in 0..self.classes {
            let wr = &self.w[c * (self.dim + 1)..(c + 1) * (self.dim + 1)];
            let mut s = wr[self.dim];
            for (j, &x) in row.iter().enumerate() {
                s += wr[j] * ((x as f64 - self.mean[j]) / self.std[j]);
            }
            if s > best_score {
                best_score = s;
                best = c;
            }
        }
        best
    }

    pub fn accuracy(&self, rows: &[Vec<f32>], labels: &[usize]) -> f64 {
        assert_eq!(rows.len(), labels.len());
        let hits = rows
            .iter()
            .zip(labels)
            .filter(|(row, &label)| self.predict(row) == label)
            .count();
        hits as f64 / rows.len() as f64
    }
}

/// Fit a probe on all given rows.
pub fn train_probe(
    rows: &[Vec<f32>],
    labels: &[usize],
    classes: usize,
    cfg: &ProbeConfig,
) -> LinearProbe {
    assert!(!rows.is_empty(), "cannot train a probe on zero rows");
    assert_eq!(rows.len(), labels.len());
    let n = rows.len();
    let dim = rows[0].len();

    let mut mean = vec![0.0f64; dim];
    for row in rows {
        for (m, &x) in mean.iter_mut().zip(row) {
            *m += x as f64;
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }
    let mut std = vec![0.0f64; dim];
    for row in rows {
        for (s, (&x, m)) in std.iter_mut().zip(row.iter().zip(&mean)) {
            *s += (x as f64 - m).powi(2);
        }
    }
    for s in std.iter_mut() {
        *s = (*s / n as f64).sqrt().max(1e-8);
    }

    let x: Vec<f64> = rows
        .iter()
        .flat_map(|row| {
            row.iter()
                .enumerate()
                .map(|(j, &v)| (v as f64 - mean[j]) / std[j])
                .collect::<Vec<_>>()
        })
        .collect();

    let stride = dim + 1;
    let mut w = vec![0.0f64; classes * stride];
    let mut scores = vec![0.0f64; classes];
    let mut grad = vec![0.0f64; classes * stride];

    for _ in 0..cfg.epochs {
        grad.iter_mut().for_each(|g| *g = 0.0);
        for (i, &label) in labels.iter().enumerate() {
            let xi = &x[i * dim..(i + 1) * dim];
            for (c, sc) in scores.iter_mut().enumerate() {
                let wr = &w[c * stride..(c + 1) * stride];
                *sc = wr[dim] + wr[..dim].iter().zip(xi).map(|(a, b)| a * b).sum::<f64>();
            }
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = scores.iter().map(|s| (s - max).exp()).sum();
            for c in 0..classes {
                let p = (scores[c] - max).exp() / z;
                let delta = p - if c == label { 1.0 } else { 0.0 };
                let gr = &mut grad[c * stride..(c + 1) * stride];
                for (gj, &xj) in gr[..dim].iter_mut().zip(xi) {
                    *gj += delta * xj;
                }
                gr[dim] += delta;
            }
        }
        let scale = cfg.lr / n as f64;
        for (wi, gi) in w.iter_mut().zip(&grad) {
            *wi -= scale * gi + cfg.lr * cfg.l2 * *wi;
        }
    }

    LinearProbe { classes, dim, mean, std, w }
}

/// Train on a seeded random subset and report accuracy on the held-out rest.
pub fn holdout_accuracy(
    rows: &[Vec<f32>],
    labels: &[usize],
    classes: usize,
    cfg: &ProbeConfig,
) -> f64 {
    let n = rows.len();
    let n_train = ((n as f64) * cfg.train_fraction).round() as usize;
    assert!(n_train >= 1 && n_train < n, "holdout needs rows on both sides of the split");

    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = stream(cfg.seed, "probe-holdout", &[]);
    for i in (1..n).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    let train_rows: Vec<Vec<f32>> = order[..n_train].iter().map(|&i| rows[i].clone()).collect();
    let train_labels: Vec<usize> = order[..n_train].iter().map(|&i| labels[i]).collect();
    let test_rows: Vec<Vec<f32>> = order[n_train..].iter().map(|&i| rows[i].clone()).collect();
    let test_labels: Vec<usize> = order[n_train..].iter().map(|&i| labels[i]).collect();

    let probe = train_probe(&train_rows, &train_labels, classes, cfg);
    probe.accuracy(&test_rows, &test_labels)
}
