use rand::Rng;

/// Categorical distribution over actions, parameterized by logits.
#[derive(Clone, Debug, PartialEq)]
pub struct CategoricalDist {
    logits: Vec<f64>,
    probs: Vec<f64>,
    log_probs: Vec<f64>,
}

impl CategoricalDist {
    /// Softmax with max-subtraction, so logits of any magnitude are safe.
    pub fn from_logits(logits: &[f64]) -> Self {
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = logits.iter().map(|l| (l - max).exp()).sum();
        let lse = max + sum.ln();
        let log_probs: Vec<f64> = logits.iter().map(|l| l - lse).collect();
        let probs = log_probs.iter().map(|lp| lp.exp()).collect();
        Self {
            logits: logits.to_vec(),
            probs,
            log_probs,
        }
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probs
    }

    pub fn log_prob(&self, index: usize) -> f64 {
        self.log_probs[index]
    }

    pub fn entropy(&self) -> f64 {
        -self
            .probs
            .iter()
            .zip(&self.log_probs)
            .map(|(p, lp)| if *p > 0.0 { p * lp } else { 0.0 })
            .sum::<f64>()
    }

    /// Lowest index among the most probable actions.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &l) in self.logits.iter().enumerate() {
            if l > self.logits[best] {
                best = i;
            }
        }
        best
    }

    /// Draws an index by inverse-CDF sampling; returns it with its log
    /// probability.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, f64) {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut chosen = self.probs.len() - 1;
        for (i, p) in self.probs.iter().enumerate() {
            acc += p;
            if u < acc {
                chosen = i;
                break;
            }
        }
        // Guard against rounding leaving `u` past the last cumulative sum
        // while the tail probability is zero.
        while self.probs[chosen] == 0.0 && chosen > 0 {
            chosen -= 1;
        }
        (chosen, self.log_probs[chosen])
    }

    /// ∂ log π(index) / ∂ logits = onehot(index) − p.
    pub fn log_prob_grad(&self, index: usize) -> Vec<f64> {
        let mut g: Vec<f64> = self.probs.iter().map(|p| -p).collect();
        g[index] += 1.0;
        g
    }

    /// ∂ H / ∂ logits = −p (log p + H).
    pub fn entropy_grad(&self) -> Vec<f64> {
        let h = self.entropy();
        self.probs
            .iter()
            .zip(&self.log_probs)
            .map(|(p, lp)| -p * (lp + h))
            .collect()
    }
}

/// Samples from the categorical distribution over softmax(logits).
pub fn sample_action<R: Rng + ?Sized>(dist: &CategoricalDist, rng: &mut R) -> (usize, f64) {
    dist.sample(rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn chi_square_p(counts: &[f64], probs: &[f64], n: f64) -> f64 {
        let mut chi2 = 0.0;
        let mut dof = -1.0;
        for (c, p) in counts.iter().zip(probs) {
            let e = n * p;
            if e > 0.0 {
                chi2 += (c - e).powi(2) / e;
                dof += 1.0;
            }
        }
        ChiSquared::new(dof).unwrap().sf(chi2)
    }

    #[test]
    fn uniform_logits_sample_uniformly() {
        let d = CategoricalDist::from_logits(&[0.0; 40]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 100_000;
        let mut counts = [0f64; 40];
        for _ in 0..n {
            counts[d.sample(&mut rng).0] += 1.0;
        }
        let p = 1.0 / 40.0;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c - n as f64 * p).abs() < 3.0 * sigma + 1e-9, "{c}");
        }
    }

    #[test]
    fn dominant_logit_is_near_deterministic() {
        let mut logits = [0.0; 40];
        logits[17] = 50.0;
        let d = CategoricalDist::from_logits(&logits);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let hits = (0..100_000).filter(|_| d.sample(&mut rng).0 == 17).count();
        assert!(hits as f64 / 1e5 > 0.999);
        assert_eq!(d.argmax(), 17);
    }

    #[test]
    fn samples_follow_softmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let logits: Vec<f64> = (0..40).map(|_| rng.random_range(-2.0..2.0)).collect();
        let d = CategoricalDist::from_logits(&logits);
        let n = 100_000;
        let mut counts = vec![0f64; 40];
        for _ in 0..n {
            let (i, lp) = d.sample(&mut rng);
            assert_eq!(lp, d.log_prob(i));
            counts[i] += 1.0;
        }
        // Independent softmax.
        let z: f64 = logits.iter().map(|l| l.exp()).sum();
        let probs: Vec<f64> = logits.iter().map(|l| l.exp() / z).collect();
        assert!(chi_square_p(&counts, &probs, n as f64) > 0.01);
    }

    proptest! {
        #[test]
        fn softmax_normalized_even_for_extreme_logits(logits in prop::collection::vec(-500.0f64..500.0, 40)) {
            let d = CategoricalDist::from_logits(&logits);
            let s: f64 = d.probabilities().iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-9);
            for (i, p) in d.probabilities().iter().enumerate() {
                prop_assert!(*p >= 0.0);
                prop_assert!((d.log_prob(i).exp() - p).abs() < 1e-9);
            }
            prop_assert!(d.entropy().is_finite());
        }
    }
}
