//! Split-sweep classification harness with the two all-features classifiers:
//! Gaussian naive Bayes and multinomial logistic regression.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{derive_seed, AnalysisConfig};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Classifier {
    GaussianNaiveBayes,
    MultinomialLogistic,
}

impl Classifier {
    pub fn name(self) -> &'static str {
        match self {
            Classifier::GaussianNaiveBayes => "gaussian-naive-bayes",
            Classifier::MultinomialLogistic => "multinomial-logistic",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "gaussian-naive-bayes" | "gnb" => Some(Classifier::GaussianNaiveBayes),
            "multinomial-logistic" | "logistic" => Some(Classifier::MultinomialLogistic),
            _ => None,
        }
    }
}

/// Mean test accuracy at one test-set fraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FractionAccuracy {
    pub test_fraction: f64,
    pub mean_accuracy: f64,
    /// Repetitions that produced a usable split.
    pub completed: usize,
}

/// Sweeps the configured test fractions; at each one, averages test accuracy
/// over `repetitions` seeded random splits. Splits leaving a class without
/// training data are resampled a bounded number of times, then skipped with
/// a warning. Deterministic for a fixed seed.
pub fn classification_harness(
    features: &[Vec<f64>],
    labels: &[u32],
    algorithm: Classifier,
    cfg: &AnalysisConfig,
    seed: u64,
) -> Result<Vec<FractionAccuracy>> {
    let n = features.len();
    if n != labels.len() {
        return Err(Error::InvalidInput(
            "feature and label counts disagree".into(),
        ));
    }
    if n < 2 {
        return Err(Error::InvalidInput(
            "harness needs at least 2 samples".into(),
        ));
    }
    let mut classes: Vec<u32> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();

    let mut results = Vec::with_capacity(cfg.test_fractions.len());
    for (fraction_idx, fraction) in cfg.test_fractions.iter().enumerate() {
        let test_n = ((fraction * n as f64).round() as usize).clamp(1, n - 1);
        let mut total = 0.0;
        let mut completed = 0usize;
        for rep in 0..cfg.repetitions {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                seed,
                &format!("classify:f{fraction_idx}:r{rep}"),
            ));
            let mut indices: Vec<usize> = (0..n).collect();
            let mut split = None;
            for _ in 0..=cfg.split_retries {
                indices.shuffle(&mut rng);
                let (test_idx, train_idx) = indices.split_at(test_n);
                let covered = classes
                    .iter()
                    .all(|c| train_idx.iter().any(|i| labels[*i] == *c));
                if covered {
                    split = Some((test_idx.to_vec(), train_idx.to_vec()));
                    break;
                }
            }
            let Some((test_idx, train_idx)) = split else {
                log::warn!(
                    "no class-covering split found at fraction {fraction} (rep {rep}); skipping"
                );
                continue;
            };

            let train_x: Vec<&[f64]> = train_idx.iter().map(|i| features[*i].as_slice()).collect();
            let train_y: Vec<u32> = train_idx.iter().map(|i| labels[*i]).collect();
            let correct: usize = match algorithm {
                Classifier::GaussianNaiveBayes => {
                    let model = GaussianNb::fit(&train_x, &train_y);
                    test_idx
                        .iter()
                        .filter(|i| model.predict(&features[**i]) == labels[**i])
                        .count()
                }
                Classifier::MultinomialLogistic => {
                    let model = Logistic::fit(
                        &train_x,
                        &train_y,
                        cfg.logistic_iters,
                        cfg.logistic_lr,
                    );
                    test_idx
                        .iter()
                        .filter(|i| model.predict(&features[**i]) == labels[**i])
                        .count()
                }
            };
            total += correct as f64 / test_idx.len() as f64;
            completed += 1;
        }
        let mean_accuracy = if completed > 0 {
            total / completed as f64
        } else {
            f64::NAN
        };
        results.push(FractionAccuracy {
            test_fraction: *fraction,
            mean_accuracy,
            completed,
        });
    }
    Ok(results)
}

/// Gaussian naive Bayes with per-feature class-conditional normals and a
/// variance floor of 1e-9.
struct GaussianNb {
    classes: Vec<u32>,
    log_priors: Vec<f64>,
    means: Vec<Vec<f64>>,
    variances: Vec<Vec<f64>>,
}

const VARIANCE_FLOOR: f64 = 1e-9;

impl GaussianNb {
    fn fit(x: &[&[f64]], y: &[u32]) -> Self {
        let mut classes: Vec<u32> = y.to_vec();
        classes.sort_unstable();
        classes.dedup();
        let dim = x[0].len();
        let mut log_priors = Vec::with_capacity(classes.len());
        let mut means = Vec::with_capacity(classes.len());
        let mut variances = Vec::with_capacity(classes.len());
        for class in &classes {
            let members: Vec<&[f64]> = x
                .iter()
                .zip(y)
                .filter(|(_, l)| *l == class)
                .map(|(f, _)| *f)
                .collect();
            let count = members.len() as f64;
            log_priors.push((count / x.len() as f64).ln());
            let mut mean = vec![0.0; dim];
            for m in &members {
                for (s, v) in mean.iter_mut().zip(*m) {
                    *s += v;
                }
            }
            for s in mean.iter_mut() {
                *s /= count;
            }
            let mut var = vec![0.0; dim];
            for m in &members {
                for (s, (v, mu)) in var.iter_mut().zip(m.iter().zip(&mean)) {
                    *s += (v - mu) * (v - mu);
                }
            }
            for s in var.iter_mut() {
                *s = (*s / count).max(VARIANCE_FLOOR);
            }
            means.push(mean);
            variances.push(var);
        }
        Self {
            classes,
            log_priors,
            means,
            variances,
        }
    }

    fn predict(&self, x: &[f64]) -> u32 {
        let mut best = self.classes[0];
        let mut best_score = f64::NEG_INFINITY;
        for (c, class) in self.classes.iter().enumerate() {
            let mut score = self.log_priors[c];
            for ((v, mu), var) in x.iter().zip(&self.means[c]).zip(&self.variances[c]) {
                score -= 0.5 * ((2.0 * std::f64::consts::PI * var).ln() + (v - mu) * (v - mu) / var);
            }
            if score > best_score {
                best_score = score;
                best = *class;
            }
        }
        best
    }
}

/// Multinomial logistic regression trained with full-batch gradient descent
/// on the softmax cross-entropy. Features are standardized with the training
/// set's moments for conditioning; zero initialization keeps fitting
/// deterministic.
struct Logistic {
    classes: Vec<u32>,
    feature_mean: Vec<f64>,
    feature_scale: Vec<f64>,
    /// Per class: dim weights plus a trailing bias.
    weights: Vec<Vec<f64>>,
}

impl Logistic {
    fn fit(x: &[&[f64]], y: &[u32], iters: usize, lr: f64) -> Self {
        let mut classes: Vec<u32> = y.to_vec();
        classes.sort_unstable();
        classes.dedup();
        let k = classes.len();
        let dim = x[0].len();
        let n = x.len() as f64;
        let targets: Vec<usize> = y
            .iter()
            .map(|l| classes.iter().position(|c| c == l).expect("class known"))
            .collect();

        let mut feature_mean = vec![0.0; dim];
        for sample in x {
            for (m, v) in feature_mean.iter_mut().zip(*sample) {
                *m += v;
            }
        }
        for m in feature_mean.iter_mut() {
            *m /= n;
        }
        let mut feature_scale = vec![0.0; dim];
        for sample in x {
            for (s, (v, m)) in feature_scale.iter_mut().zip(sample.iter().zip(&feature_mean)) {
                *s += (v - m) * (v - m);
            }
        }
        for s in feature_scale.iter_mut() {
            let std = (*s / n).sqrt();
            *s = if std < 1e-12 { 1.0 } else { std };
        }
        let standardized: Vec<Vec<f64>> = x
            .iter()
            .map(|sample| {
                sample
                    .iter()
                    .zip(feature_mean.iter().zip(&feature_scale))
                    .map(|(v, (m, s))| (v - m) / s)
                    .collect()
            })
            .collect();

        let mut weights = vec![vec![0.0; dim + 1]; k];
        let mut probs = vec![0.0; k];
        let mut grads = vec![vec![0.0; dim + 1]; k];
        for _ in 0..iters {
            for g in grads.iter_mut() {
                g.fill(0.0);
            }
            for (sample, target) in standardized.iter().zip(&targets) {
                softmax_into(&weights, sample, &mut probs);
                for (c, grad) in grads.iter_mut().enumerate() {
                    let delta = probs[c] - if c == *target { 1.0 } else { 0.0 };
                    for (g, v) in grad.iter_mut().zip(sample) {
                        *g += delta * v;
                    }
                    grad[dim] += delta;
                }
            }
            for (w, g) in weights.iter_mut().zip(&grads) {
                for (wi, gi) in w.iter_mut().zip(g) {
                    *wi -= lr * gi / n;
                }
            }
        }
        Self {
            classes,
            feature_mean,
            feature_scale,
            weights,
        }
    }

    fn predict(&self, x: &[f64]) -> u32 {
        let standardized: Vec<f64> = x
            .iter()
            .zip(self.feature_mean.iter().zip(&self.feature_scale))
            .map(|(v, (m, s))| (v - m) / s)
            .collect();
        let mut best = 0usize;
        let mut best_z = f64::NEG_INFINITY;
        for (c, w) in self.weights.iter().enumerate() {
            let z = logit(w, &standardized);
            if z > best_z {
                best_z = z;
                best = c;
            }
        }
        self.classes[best]
    }
}

fn logit(weights: &[f64], x: &[f64]) -> f64 {
    let dim = x.len();
    weights[..dim]
        .iter()
        .zip(x)
        .map(|(w, v)| w * v)
        .sum::<f64>()
        + weights[dim]
}

fn softmax_into(weights: &[Vec<f64>], x: &[f64], out: &mut [f64]) {
    let mut max_z = f64::NEG_INFINITY;
    for (o, w) in out.iter_mut().zip(weights) {
        *o = logit(w, x);
        max_z = max_z.max(*o);
    }
    let mut total = 0.0;
    for o in out.iter_mut() {
        *o = (*o - max_z).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}
