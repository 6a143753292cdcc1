use rand::Rng;

use super::{Graph, NodeId, Real, SampleError, Tensor};

/// Index of the largest entry; ties resolve to the first occurrence.
pub fn argmax<T: Real>(xs: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Draw an index from an explicit probability vector.
///
/// Rejects inputs whose mass is off the simplex by more than 1e-4; small
/// float drift inside that tolerance is renormalized by the draw itself.
pub fn categorical_sample<T: Real, R: Rng>(probs: &[T], rng: &mut R) -> Result<usize, SampleError> {
    let total: f64 = probs.iter().map(|p| p.as_f64()).sum();
    if (total - 1.0).abs() > 1e-4 {
        return Err(SampleError::NotNormalized(total));
    }
    let u: f64 = rng.random::<f64>() * total;
    let mut cdf = 0.0;
    for (i, p) in probs.iter().enumerate() {
        cdf += p.as_f64();
        if u < cdf {
            return Ok(i);
        }
    }
    Ok(probs.len() - 1)
}

/// Gumbel(0, 1) noise tensor drawn from `rng`.
pub fn gumbel_noise<T: Real, R: Rng>(shape: &[usize], rng: &mut R) -> Tensor<T> {
    let len: usize = shape.iter().product();
    let data = (0..len)
        .map(|_| {
            let u: f64 = rng.random::<f64>().max(1e-12);
            T::from_f64(-(-u.ln()).ln())
        })
        .collect();
    Tensor::new(shape, data)
}

impl<T: Real> Graph<T> {
    /// Relaxed one-hot sample(s) from `logits` (`[V]` or `[B, V]`, one sample
    /// per row), differentiable w.r.t. the logits.
    ///
    /// Computes `softmax(logits / temperature + gumbel_noise)`: at
    /// temperature 1 this draws argmaxes distributed as `softmax(logits)`,
    /// and as the temperature approaches 0 the sample collapses onto the
    /// greedy argmax of the logits.
    ///
    /// With `straight_through`, the forward value is the hard argmax one-hot
    /// and the relaxed sample only shapes the backward pass.
    pub fn gumbel_softmax_sample<R: Rng>(
        &mut self,
        logits: NodeId,
        temperature: T,
        straight_through: bool,
        rng: &mut R,
    ) -> Result<NodeId, SampleError> {
        if temperature <= T::zero() {
            return Err(SampleError::NonPositiveTemperature(temperature.as_f64()));
        }
        let shape = self.value(logits).shape().to_vec();
        let noise = self.constant(gumbel_noise(&shape, rng));
        let scaled = self.scale(logits, T::one() / temperature);
        let shifted = self.add(scaled, noise);
        let soft = self.softmax(shifted);
        if !straight_through {
            return Ok(soft);
        }
        let v = self.value(soft);
        let cols = v.cols();
        let mut hard = Tensor::zeros(v.shape());
        for r in 0..v.rows() {
            let m = argmax(v.row(r));
            hard.data_mut()[r * cols + m] = T::one();
        }
        Ok(self.straight_through(soft, hard))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rngutil::stream;

    #[test]
    fn categorical_one_hot_is_deterministic() {
        let mut rng = stream(1, "cat", &[]);
        let probs = [0.0f32, 0.0, 1.0, 0.0];
        for _ in 0..50 {
            assert_eq!(categorical_sample(&probs, &mut rng).unwrap(), 2);
        }
    }

    #[test]
    fn categorical_uniform_frequencies() {
        let mut rng = stream(2, "cat", &[]);
        let probs = [0.25f64; 4];
        let mut counts = [0usize; 4];
        for _ in 0..10_000 {
            counts[categorical_sample(&probs, &mut rng).unwrap()] += 1;
        }
        for (i, &c) in counts.iter().enumerate() {
            let f = c as f64 / 10_000.0;
            assert!((f - 0.25).abs() < 0.02, "index {} frequency {}", i, f);
        }
    }

    #[test]
    fn categorical_rejects_unnormalized() {
        let mut rng = stream(3, "cat", &[]);
        let err = categorical_sample(&[0.5f32, 0.1], &mut rng).unwrap_err();
        assert!(matches!(err, SampleError::NotNormalized(_)));
    }

    #[test]
    fn categorical_reproducible_sequence() {
        let probs = [0.1f64, 0.2, 0.3, 0.4];
        let draw = |seed| {
            let mut rng = stream(seed, "cat-seq", &[]);
            (0..32)
                .map(|_| categorical_sample(&probs, &mut rng).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(9), draw(9));
        assert_ne!(draw(9), draw(10));
    }

    #[test]
    fn gumbel_rejects_bad_temperature() {
        let mut g = Graph::<f32>::new();
        let l = g.constant(Tensor::new(&[3], vec![0.0, 1.0, 2.0]));
        let mut rng = stream(4, "gum", &[]);
        let err = g.gumbel_softmax_sample(l, 0.0, false, &mut rng).unwrap_err();
        assert!(matches!(err, SampleError::NonPositiveTemperature(_)));
    }

    #[test]
    fn gumbel_samples_live_on_simplex() {
        let mut rng = stream(5, "gum", &[]);
        for trial in 0..20 {
            let mut g = Graph::<f64>::new();
            let l = g.constant(Tensor::new(&[5], vec![0.1, -1.0, 2.0, 0.0, 1.0]));
            let y = g.gumbel_softmax_sample(l, 1.0, false, &mut rng).unwrap();
            let s: f64 = g.value(y).data().iter().sum();
            assert!((s - 1.0).abs() < 1e-6, "trial {} sum {}", trial, s);
        }
    }

    #[test]
    fn low_temperature_sharpens_to_argmax() {
        let mut rng = stream(6, "gum-sharp", &[]);
        let mut sharp = 0;
        for _ in 0..1_000 {
            let mut g = Graph::<f64>::new();
            let l = g.constant(Tensor::new(&[3], vec![10.0, 0.0, 0.0]));
            let y = g.gumbel_softmax_sample(l, 0.01, false, &mut rng).unwrap();
            if g.value(y).data()[0] > 0.99 {
                sharp += 1;
            }
        }
        assert!(sharp >= 990, "only {}/1000 draws were sharp", sharp);
    }

    #[test]
    fn gumbel_argmax_matches_softmax_distribution() {
        // Empirical argmax frequencies over 20k draws vs analytic softmax.
        let logits = [0.5f64, -0.5, 1.5, 0.0];
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        let probs: Vec<f64> = exps.iter().map(|e| e / z).collect();

        let mut rng = stream(7, "gum-tv", &[]);
        let mut counts = [0usize; 4];
        let n = 20_000;
        for _ in 0..n {
            let mut g = Graph::<f64>::new();
            let l = g.constant(Tensor::new(&[4], logits.to_vec()));
            let y = g.gumbel_softmax_sample(l, 1.0, false, &mut rng).unwrap();
            counts[argmax(g.value(y).data())] += 1;
        }
        let tv: f64 = counts
            .iter()
            .zip(&probs)
            .map(|(&c, &p)| (c as f64 / n as f64 - p).abs())
            .sum::<f64>()
            / 2.0;
        assert!(tv < 0.02, "total variation {}", tv);
    }

    #[test]
    fn straight_through_emits_hard_one_hot() {
        let mut rng = stream(8, "gum-st", &[]);
        let mut g = Graph::<f32>::new();
        let l = g.constant(Tensor::from_rows(&[vec![0.1, 0.9, 0.0], vec![2.0, -1.0, 0.3]]));
        let y = g.gumbel_softmax_sample(l, 1.0, true, &mut rng).unwrap();
        for r in 0..2 {
            let row = g.value(y).row(r);
            assert_eq!(row.iter().filter(|&&v| v == 1.0).count(), 1);
            assert_eq!(row.iter().filter(|&&v| v == 0.0).count(), 2);
        }
    }
}
