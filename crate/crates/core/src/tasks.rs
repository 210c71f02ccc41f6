//! Synthetic task environments and meta-dataset sampling.
//!
//! Both environments expose the exact conditional law `p(y | x)`, so the
//! ground-truth oracle predictor and exact conditional coverage are
//! available.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::meta::{MetaDataset, MetaPair, MetaTask};
use crate::rng::SeedTree;

pub const MULTINOMIAL_INPUT_DIM: usize = 10;
pub const MULTINOMIAL_CLASSES: usize = 5;
/// Probability that the first feature equals 1 (otherwise -8).
pub const MULTINOMIAL_RARE_PROB: f64 = 0.2;
pub const MULTINOMIAL_RARE_VALUE: f64 = 1.0;
pub const MULTINOMIAL_COMMON_VALUE: f64 = -8.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Environment {
    Multinomial,
    Demodulation,
}

impl Environment {
    pub fn generate(self, seed: u64) -> TaskSpec {
        match self {
            Environment::Multinomial => gen_multinomial_task(seed),
            Environment::Demodulation => gen_demodulation_task(seed),
        }
    }

    /// Seed of task `t` for a given purpose (e.g. "meta-train", "eval").
    pub fn task_seed(root: u64, purpose: &str, t: usize) -> u64 {
        SeedTree::new(root).child(purpose).index(t as u64).key()
    }
}

/// Softmax-linear classification task with a Gaussian weight matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MultinomialTask {
    pub seed: u64,
    /// `weight_matrix[i][y]`, 10 rows and one column per class.
    pub weight_matrix: Vec<Vec<f64>>,
}

impl MultinomialTask {
    pub fn classes(&self) -> usize {
        self.weight_matrix[0].len()
    }

    fn conditional(&self, x: &[f64]) -> Vec<f64> {
        let logits: Vec<f64> = (0..self.classes())
            .map(|y| x.iter().zip(&self.weight_matrix).map(|(xi, row)| xi * row[y]).sum())
            .collect();
        let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
        let s: f64 = e.iter().sum();
        e.into_iter().map(|v| v / s).collect()
    }

    fn sample_input<R: Rng>(rng: &mut R) -> Vec<f64> {
        let mut x = Vec::with_capacity(MULTINOMIAL_INPUT_DIM);
        x.push(if rng.random::<f64>() < MULTINOMIAL_RARE_PROB {
            MULTINOMIAL_RARE_VALUE
        } else {
            MULTINOMIAL_COMMON_VALUE
        });
        x.extend((1..MULTINOMIAL_INPUT_DIM).map(|_| -> f64 { StandardNormal.sample(rng) }));
        x
    }
}

/// Noisy demodulation of a phase-shifted spiral constellation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemodulationTask {
    pub seed: u64,
    pub phase: f64,
    pub m: usize,
    pub radius: f64,
    pub flip: f64,
    /// `(re, im)` of each symbol.
    pub constellation: Vec<[f64; 2]>,
    pub neighbors: Vec<Vec<usize>>,
}

impl DemodulationTask {
    pub fn new(seed: u64, phase: f64, m: usize, radius: f64, flip: f64) -> Self {
        let constellation = constellation(phase, m);
        let neighbors = (0..m)
            .map(|i| {
                (0..m)
                    .filter(|&j| j != i && dist(constellation[i], constellation[j]) <= radius)
                    .collect()
            })
            .collect();
        Self {
            seed,
            phase,
            m,
            radius,
            flip,
            constellation,
            neighbors,
        }
    }

    /// Index of the symbol at `x`.
    pub fn symbol_of(&self, x: &[f64]) -> Result<usize> {
        if x.len() != 2 {
            return Err(Error::DimensionMismatch {
                expected: 2,
                actual: x.len(),
            });
        }
        self.constellation
            .iter()
            .position(|c| dist(*c, [x[0], x[1]]) < 1e-9)
            .ok_or_else(|| Error::invalid("x", "not a constellation point"))
    }

    fn conditional_at(&self, s: usize) -> Vec<f64> {
        let nb = &self.neighbors[s];
        let mut p = vec![0.0; self.m];
        if nb.is_empty() {
            p[s] = 1.0;
        } else {
            p[s] = 1.0 - self.flip;
            for &j in nb {
                p[j] = self.flip / nb.len() as f64;
            }
        }
        p
    }
}

/// Symbol `z = 1..=m` sits at radius `sqrt(2z/(m+1))` and angle
/// `2 pi (1 - (sqrt 5 - 1)/2) z + phase`.
pub fn constellation(phase: f64, m: usize) -> Vec<[f64; 2]> {
    let turn = 2.0 * PI * (1.0 - (5f64.sqrt() - 1.0) / 2.0);
    (1..=m)
        .map(|z| {
            let r = (2.0 * z as f64 / (m as f64 + 1.0)).sqrt();
            let a = turn * z as f64 + phase;
            [r * a.cos(), r * a.sin()]
        })
        .collect()
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskSpec {
    Multinomial(MultinomialTask),
    Demodulation(DemodulationTask),
}

impl TaskSpec {
    pub fn environment(&self) -> Environment {
        match self {
            TaskSpec::Multinomial(_) => Environment::Multinomial,
            TaskSpec::Demodulation(_) => Environment::Demodulation,
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            TaskSpec::Multinomial(t) => t.seed,
            TaskSpec::Demodulation(t) => t.seed,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            TaskSpec::Multinomial(_) => MULTINOMIAL_INPUT_DIM,
            TaskSpec::Demodulation(_) => 2,
        }
    }

    pub fn classes(&self) -> usize {
        match self {
            TaskSpec::Multinomial(t) => t.classes(),
            TaskSpec::Demodulation(t) => t.m,
        }
    }

    /// Exact `p(y | x)`.
    pub fn conditional(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            TaskSpec::Multinomial(t) => {
                if x.len() != MULTINOMIAL_INPUT_DIM {
                    return Err(Error::DimensionMismatch {
                        expected: MULTINOMIAL_INPUT_DIM,
                        actual: x.len(),
                    });
                }
                Ok(t.conditional(x))
            }
            TaskSpec::Demodulation(t) => Ok(t.conditional_at(t.symbol_of(x)?)),
        }
    }

    /// One `(x, y)` draw.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> Sample {
        let x = match self {
            TaskSpec::Multinomial(_) => MultinomialTask::sample_input(rng),
            TaskSpec::Demodulation(t) => t.constellation[rng.random_range(0..t.m)].to_vec(),
        };
        let p = self.conditional(&x).expect("sampled inputs are valid");
        let y = categorical(&p, rng.random::<f64>());
        Sample::new(x, y)
    }

    /// Discrete input statistic used for conditional metrics: the value of
    /// the first feature (rare = 0, common = 1) or the transmitted symbol.
    pub fn bucket(&self, x: &[f64]) -> Result<usize> {
        match self {
            TaskSpec::Multinomial(_) => match x.first() {
                Some(&v) if v == MULTINOMIAL_RARE_VALUE => Ok(0),
                Some(&v) if v == MULTINOMIAL_COMMON_VALUE => Ok(1),
                _ => Err(Error::invalid("x", "first feature is neither 1 nor -8")),
            },
            TaskSpec::Demodulation(t) => t.symbol_of(x),
        }
    }

    pub fn bucket_names(&self) -> Vec<String> {
        match self {
            TaskSpec::Multinomial(_) => vec!["x1=1".into(), "x1=-8".into()],
            TaskSpec::Demodulation(t) => (0..t.m).map(|s| format!("symbol={s}")).collect(),
        }
    }
}

fn categorical(p: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, &pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            return i;
        }
    }
    // Rounding can leave the cumulative sum just below 1.
    p.iter().rposition(|&pi| pi > 0.0).unwrap_or(p.len() - 1)
}

pub fn gen_multinomial_task(seed: u64) -> TaskSpec {
    gen_multinomial_task_with_classes(seed, MULTINOMIAL_CLASSES)
}

pub fn gen_multinomial_task_with_classes(seed: u64, classes: usize) -> TaskSpec {
    let mut rng = SeedTree::new(seed).child("multinomial").rng();
    let weight_matrix = (0..MULTINOMIAL_INPUT_DIM)
        .map(|_| (0..classes).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect();
    TaskSpec::Multinomial(MultinomialTask { seed, weight_matrix })
}

pub fn gen_demodulation_task(seed: u64) -> TaskSpec {
    let mut rng = SeedTree::new(seed).child("demodulation").rng();
    let phase = rng.random_range(0.0..2.0 * PI);
    TaskSpec::Demodulation(DemodulationTask::new(seed, phase, 6, 1.3, 0.2))
}

/// `n` i.i.d. draws from `task`.
pub fn sample_dataset(task: &TaskSpec, n: usize, seed: SeedTree) -> Dataset {
    let mut rng = seed.rng();
    Dataset::new((0..n).map(|_| task.sample(&mut rng)).collect())
}

/// `t` tasks, each with `m` realizations of a size-`n` dataset and a test
/// pair.
pub fn sample_meta_dataset(env: Environment, t: usize, m: usize, n: usize, seed: u64) -> Result<MetaDataset> {
    if t == 0 || m == 0 || n == 0 {
        return Err(Error::invalid("meta-dataset size", "T, M_t and N must be positive"));
    }
    let root = SeedTree::new(seed).child("realizations");
    let tasks: Vec<TaskSpec> = (0..t)
        .map(|i| env.generate(Environment::task_seed(seed, "meta-train", i)))
        .collect();
    let meta_tasks = tasks
        .iter()
        .enumerate()
        .map(|(i, spec)| MetaTask {
            task_id: i,
            pairs: (0..m)
                .map(|j| {
                    let s = root.index(i as u64).index(j as u64);
                    let data = sample_dataset(spec, n, s.child("data"));
                    let test = spec.sample(&mut s.child("test").rng());
                    MetaPair { data, test }
                })
                .collect(),
        })
        .collect();
    Ok(MetaDataset {
        input_dim: tasks[0].input_dim(),
        classes: tasks[0].classes(),
        tasks: meta_tasks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_input_gives_uniform() {
        let t = gen_multinomial_task(1);
        let p = t.conditional(&[0.0; 10]).unwrap();
        for v in p {
            assert!((v - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn conditional_is_direct_softmax() {
        let t = gen_multinomial_task(2);
        let TaskSpec::Multinomial(m) = &t else { unreachable!() };
        let x: Vec<f64> = (0..10).map(|i| 0.1 * i as f64 - 0.3).collect();
        let logits: Vec<f64> = (0..5).map(|y| (0..10).map(|i| x[i] * m.weight_matrix[i][y]).sum()).collect();
        let z: f64 = logits.iter().map(|l| l.exp()).sum();
        for (p, l) in t.conditional(&x).unwrap().iter().zip(&logits) {
            assert!((p - l.exp() / z).abs() < 1e-12);
        }
    }

    #[test]
    fn rare_feature_frequency() {
        let t = gen_multinomial_task(3);
        let d = sample_dataset(&t, 100_000, SeedTree::new(3));
        let rare = d.iter().filter(|s| s.x[0] == 1.0).count() as f64 / 1e5;
        assert!((rare - 0.2).abs() < 0.005, "{rare}");
        assert!(d.iter().all(|s| s.x[0] == 1.0 || s.x[0] == -8.0));
    }

    #[test]
    fn multinomial_labels_follow_conditionals() {
        // Label frequencies against the average exact conditional at the
        // same inputs.
        let t = gen_multinomial_task(4);
        let d = sample_dataset(&t, 100_000, SeedTree::new(4));
        let mut freq = [0.0; 5];
        let mut expect = [0.0; 5];
        for s in d.iter() {
            freq[s.y] += 1.0;
            for (e, p) in expect.iter_mut().zip(t.conditional(&s.x).unwrap()) {
                *e += p;
            }
        }
        for y in 0..5 {
            let p = expect[y] / 1e5;
            let sigma = (p * (1.0 - p) / 1e5).sqrt();
            assert!((freq[y] / 1e5 - p).abs() <= 3.0 * sigma + 1e-12, "class {y}");
        }
    }

    #[test]
    fn demodulation_constellation_geometry() {
        let c = constellation(0.0, 6);
        let (re, im) = (c[0][0], c[0][1]);
        assert!((re.hypot(im) - (2.0f64 / 7.0).sqrt()).abs() < 1e-15);
        assert!((re.hypot(im) - 0.534_522_483_824_848_8).abs() < 1e-15);
        let angle = 2.0 * PI * (1.0 - (5f64.sqrt() - 1.0) / 2.0);
        assert!((angle - 2.399_963_229_728_653).abs() < 1e-14);
        assert!((im.atan2(re) - angle).abs() < 1e-12);
    }

    #[test]
    fn demodulation_neighbors_and_mass() {
        for seed in 0..20 {
            let TaskSpec::Demodulation(t) = gen_demodulation_task(seed) else { unreachable!() };
            assert!((0.0..2.0 * PI).contains(&t.phase));
            for i in 0..6 {
                for &j in &t.neighbors[i] {
                    assert!(t.neighbors[j].contains(&i));
                }
                let p = t.conditional_at(i);
                assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                if !t.neighbors[i].is_empty() {
                    assert!((p[i] - 0.8).abs() < 1e-15);
                    let share = 0.2 / t.neighbors[i].len() as f64;
                    for &j in &t.neighbors[i] {
                        assert!((p[j] - share).abs() < 1e-15);
                    }
                }
            }
        }
    }

    #[test]
    fn demodulation_marginal_matches_mixture() {
        let spec = gen_demodulation_task(5);
        let TaskSpec::Demodulation(t) = &spec else { unreachable!() };
        let mut exact = [0.0; 6];
        for s in 0..6 {
            for (e, p) in exact.iter_mut().zip(t.conditional_at(s)) {
                *e += p / 6.0;
            }
        }
        let d = sample_dataset(&spec, 100_000, SeedTree::new(5));
        for (y, &e) in exact.iter().enumerate() {
            let f = d.iter().filter(|s| s.y == y).count() as f64 / 1e5;
            let sigma = (e * (1.0 - e) / 1e5).sqrt();
            assert!((f - e).abs() <= 3.0 * sigma, "symbol {y}: {f} vs {e}");
        }
    }

    #[test]
    fn regeneration_and_round_trip() {
        for env in [Environment::Multinomial, Environment::Demodulation] {
            let a = env.generate(17);
            assert_eq!(a, env.generate(a.seed()));
            let json = serde_json::to_string(&a).unwrap();
            assert_eq!(serde_json::from_str::<TaskSpec>(&json).unwrap(), a);
            let d = sample_dataset(&a, 9, SeedTree::new(1));
            assert_eq!(d, sample_dataset(&a, 9, SeedTree::new(1)));
            let dj = serde_json::to_string(&d).unwrap();
            assert_eq!(serde_json::from_str::<Dataset>(&dj).unwrap(), d);
        }
        assert_ne!(gen_multinomial_task(1), gen_multinomial_task(2));
    }

    #[test]
    fn meta_dataset_shape() {
        let m = sample_meta_dataset(Environment::Multinomial, 3, 2, 9, 0).unwrap();
        assert_eq!(m.tasks.len(), 3);
        assert!(m.tasks.iter().all(|t| t.pairs.len() == 2));
        assert_eq!(m.n(), 9);
        m.validate().unwrap();
        let one = sample_meta_dataset(Environment::Demodulation, 1, 1, 9, 0).unwrap();
        assert_eq!(one.classes, 6);
        assert_eq!(one.input_dim, 2);
        let seeds: std::collections::HashSet<u64> =
            (0..100).map(|i| Environment::task_seed(0, "meta-train", i)).collect();
        assert_eq!(seeds.len(), 100);
        assert_eq!(m, sample_meta_dataset(Environment::Multinomial, 3, 2, 9, 0).unwrap());
    }

    #[test]
    fn buckets() {
        let t = gen_multinomial_task(0);
        let mut x = vec![0.0; 10];
        x[0] = 1.0;
        assert_eq!(t.bucket(&x).unwrap(), 0);
        x[0] = -8.0;
        assert_eq!(t.bucket(&x).unwrap(), 1);
        x[0] = 0.5;
        assert!(t.bucket(&x).is_err());
        let d = gen_demodulation_task(0);
        assert_eq!(d.bucket_names().len(), 6);
    }

    #[test]
    fn categorical_edges() {
        assert_eq!(categorical(&[0.5, 0.5], 0.0), 0);
        assert_eq!(categorical(&[0.5, 0.5, 0.0], 0.999_999_999_999), 1);
        assert_eq!(categorical(&[0.3, 0.3, 0.3], 0.95), 2);
    }
}
