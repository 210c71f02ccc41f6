//! Set predictors: validation-based and cross-validation-based conformal
//! prediction, the naive model-mass predictor and the ground-truth oracle.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::numerics::{gd_train, mlp_forward, GdConfig, ParamVector};
use crate::quantiles::{empirical_quantile, lower_rank, Extended};
use crate::rng::SeedTree;
use crate::scores::ScoreKind;

/// Assignment of `N` sample indices to `K` equally sized folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPartition {
    folds: Vec<Vec<usize>>,
    membership: Vec<usize>,
}

impl FoldPartition {
    /// Random permutation of `0..n` cut into `k` contiguous blocks.
    pub fn new(n: usize, k: usize, seed: SeedTree) -> Result<Self> {
        check_folds(n, k)?;
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut seed.rng());
        Self::from_order(&perm, k)
    }

    /// Folds `{0}, {1}, ...` when `k == n`, otherwise blocks in index order.
    pub fn sequential(n: usize, k: usize) -> Result<Self> {
        check_folds(n, k)?;
        Self::from_order(&(0..n).collect::<Vec<_>>(), k)
    }

    fn from_order(order: &[usize], k: usize) -> Result<Self> {
        let size = order.len() / k;
        let mut folds: Vec<Vec<usize>> = order.chunks(size).map(<[usize]>::to_vec).collect();
        let mut membership = vec![0; order.len()];
        for (j, fold) in folds.iter_mut().enumerate() {
            fold.sort_unstable();
            for &i in fold.iter() {
                membership[i] = j;
            }
        }
        Ok(Self { folds, membership })
    }

    pub fn n(&self) -> usize {
        self.membership.len()
    }

    pub fn k(&self) -> usize {
        self.folds.len()
    }

    /// Sorted indices in fold `j`.
    pub fn fold(&self, j: usize) -> &[usize] {
        &self.folds[j]
    }

    pub fn folds(&self) -> &[Vec<usize>] {
        &self.folds
    }

    /// Fold holding sample `i`.
    pub fn fold_of(&self, i: usize) -> usize {
        self.membership[i]
    }
}

fn check_folds(n: usize, k: usize) -> Result<()> {
    if k < 2 || k > n || !n.is_multiple_of(k) {
        return Err(Error::InvalidFolds { n, k });
    }
    Ok(())
}

/// Sorted class labels (zero-based).
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PredictionSet(Vec<usize>);

impl PredictionSet {
    pub fn from_members(mut members: Vec<usize>) -> Self {
        members.sort_unstable();
        members.dedup();
        Self(members)
    }

    pub fn full(classes: usize) -> Self {
        Self((0..classes).collect())
    }

    /// Labels whose flag is set.
    pub fn from_mask(mask: &[bool]) -> Self {
        Self(
            mask.iter()
                .enumerate()
                .filter(|(_, &m)| m)
                .map(|(y, _)| y)
                .collect(),
        )
    }

    pub fn members(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, y: usize) -> bool {
        self.0.binary_search(&y).is_ok()
    }

    pub fn is_subset(&self, other: &PredictionSet) -> bool {
        self.0.iter().all(|&y| other.contains(y))
    }
}

/// Target miscoverage together with the corrected level used by XB-CP.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaBudget {
    pub alpha: f64,
    /// `alpha - (1 - K/N) / (K + 1)`; equals `alpha` for VB-CP.
    pub alpha_prime: f64,
}

impl AlphaBudget {
    /// Level for VB-CP with `n_val` validation points.
    pub fn for_vb(alpha: f64, n_val: usize) -> Result<Self> {
        check_unit(alpha)?;
        let b = Self {
            alpha,
            alpha_prime: alpha,
        };
        if lower_rank(alpha, n_val) == 0 {
            return Err(Error::AlphaOutOfRange {
                alpha,
                min_alpha: 1.0 / (n_val as f64 + 1.0),
                what: format!("VB-CP with {n_val} validation points"),
            });
        }
        Ok(b)
    }

    /// Level for K-fold XB-CP on `n` points.
    pub fn for_xb(alpha: f64, n: usize, k: usize) -> Result<Self> {
        check_unit(alpha)?;
        check_folds(n, k)?;
        let correction = xb_correction(n, k);
        let alpha_prime = alpha - correction;
        if alpha_prime <= 0.0 || lower_rank(alpha_prime, n) == 0 {
            return Err(Error::AlphaOutOfRange {
                alpha,
                min_alpha: 1.0 / (n as f64 + 1.0) + correction,
                what: format!("{k}-fold XB-CP with N = {n}"),
            });
        }
        Ok(Self { alpha, alpha_prime })
    }

    /// `floor(alpha' (N + 1))` for `n` calibration scores.
    pub fn threshold_count(&self, n: usize) -> usize {
        lower_rank(self.alpha_prime, n)
    }
}

/// `(1 - K/N) / (K + 1)`
pub fn xb_correction(n: usize, k: usize) -> f64 {
    (1.0 - k as f64 / n as f64) / (k as f64 + 1.0)
}

/// Smallest alpha accepted by [`AlphaBudget::for_xb`].
pub fn xb_min_alpha(n: usize, k: usize) -> f64 {
    1.0 / (n as f64 + 1.0) + xb_correction(n, k)
}

fn check_unit(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid("alpha", format!("{alpha} is not in (0, 1)")))
    }
}

/// XB-CP after training: one model per fold and the held-out score of
/// every calibration point.
#[derive(Debug, Clone)]
pub struct XbFit {
    pub score: ScoreKind,
    pub models: Vec<ParamVector>,
    /// `NC(z_i | D without fold k(i))`
    pub calibration: Vec<f64>,
}

impl XbFit {
    pub fn fit(
        data: &Dataset,
        xi: &ParamVector,
        partition: &FoldPartition,
        score: &ScoreKind,
        cfg: &GdConfig,
    ) -> Result<Self> {
        if partition.n() != data.len() {
            return Err(Error::DimensionMismatch {
                expected: partition.n(),
                actual: data.len(),
            });
        }
        score.validate()?;
        let models = (0..partition.k())
            .into_par_iter()
            .map(|j| gd_train(&data.without(partition.fold(j)), xi, cfg))
            .collect::<Result<Vec<_>>>()?;
        let calibration = data
            .iter()
            .enumerate()
            .map(|(i, z)| {
                let probs = mlp_forward(&z.x, &models[partition.fold_of(i)])?;
                Ok(score.from_probs(&probs, z.y))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            score: *score,
            models,
            calibration,
        })
    }

    /// `min_k NC((x, y) | D without fold k)` for every label `y`.
    pub fn candidate_scores(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut best: Option<Vec<f64>> = None;
        for m in &self.models {
            let s = self.score.all_labels(x, m)?;
            best = Some(match best {
                None => s,
                Some(b) => b.iter().zip(&s).map(|(a, c)| a.min(*c)).collect(),
            });
        }
        best.ok_or(Error::EmptyInput("fold models"))
    }

    /// Counting rule: `y` is kept when at least `floor(alpha'(N+1))`
    /// calibration scores are no smaller than its candidate score.
    pub fn predict(&self, x: &[f64], budget: &AlphaBudget) -> Result<PredictionSet> {
        let cand = self.candidate_scores(x)?;
        Ok(xb_set_from_scores(&cand, &self.calibration, budget))
    }

    /// Quantile rule: `y` is kept when the `(1 - alpha')` quantile of
    /// `NC_i - candidate` is non-negative.
    pub fn predict_quantile_form(&self, x: &[f64], budget: &AlphaBudget) -> Result<PredictionSet> {
        let cand = self.candidate_scores(x)?;
        let mask = cand
            .iter()
            .map(|&c| {
                let diffs: Vec<f64> = self.calibration.iter().map(|&s| s - c).collect();
                Ok(empirical_quantile(&diffs, budget.alpha_prime)?.is_nonnegative())
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PredictionSet::from_mask(&mask))
    }
}

/// Counting rule applied to precomputed candidate and calibration scores.
pub fn xb_set_from_scores(candidates: &[f64], calibration: &[f64], budget: &AlphaBudget) -> PredictionSet {
    let need = budget.threshold_count(calibration.len());
    let mask: Vec<bool> = candidates
        .iter()
        .map(|&c| calibration.iter().filter(|&&s| c <= s).count() >= need)
        .collect();
    PredictionSet::from_mask(&mask)
}

/// K-fold XB-CP set for input `x`.
#[allow(clippy::too_many_arguments)]
pub fn xb_predict(
    x: &[f64],
    data: &Dataset,
    xi: &ParamVector,
    alpha: f64,
    partition: &FoldPartition,
    score: &ScoreKind,
    cfg: &GdConfig,
) -> Result<PredictionSet> {
    let budget = AlphaBudget::for_xb(alpha, data.len(), partition.k())?;
    XbFit::fit(data, xi, partition, score, cfg)?.predict(x, &budget)
}

/// [`xb_predict`] computed through the quantile of score differences.
#[allow(clippy::too_many_arguments)]
pub fn xb_predict_quantile_form(
    x: &[f64],
    data: &Dataset,
    xi: &ParamVector,
    alpha: f64,
    partition: &FoldPartition,
    score: &ScoreKind,
    cfg: &GdConfig,
) -> Result<PredictionSet> {
    let budget = AlphaBudget::for_xb(alpha, data.len(), partition.k())?;
    XbFit::fit(data, xi, partition, score, cfg)?.predict_quantile_form(x, &budget)
}

/// VB-CP after training on the first `n_tr` points.
#[derive(Debug, Clone)]
pub struct VbFit {
    pub score: ScoreKind,
    pub model: ParamVector,
    /// Scores of the validation points.
    pub calibration: Vec<f64>,
}

impl VbFit {
    pub fn fit(data: &Dataset, xi: &ParamVector, n_tr: usize, score: &ScoreKind, cfg: &GdConfig) -> Result<Self> {
        if n_tr == 0 || n_tr >= data.len() {
            return Err(Error::invalid(
                "split",
                format!("n_tr = {n_tr} must lie in 1..{}", data.len()),
            ));
        }
        score.validate()?;
        let (train, val) = data.samples().split_at(n_tr);
        let model = gd_train(train, xi, cfg)?;
        let calibration = val
            .iter()
            .map(|z| Ok(score.from_probs(&mlp_forward(&z.x, &model)?, z.y)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            score: *score,
            model,
            calibration,
        })
    }

    pub fn predict(&self, x: &[f64], budget: &AlphaBudget) -> Result<PredictionSet> {
        let threshold = vb_threshold(&self.calibration, budget.alpha)?;
        let cand = self.score.all_labels(x, &self.model)?;
        Ok(PredictionSet::from_mask(
            &cand.iter().map(|&c| threshold.admits(c)).collect::<Vec<_>>(),
        ))
    }
}

/// `Q_{1-alpha}` of the validation scores, without the range check; below
/// `1/(N_val + 1)` it is `+inf`.
pub fn vb_threshold(validation_scores: &[f64], alpha: f64) -> Result<Extended> {
    empirical_quantile(validation_scores, alpha)
}

/// VB-CP set for input `x` with `n_tr` training points.
pub fn vb_predict(
    x: &[f64],
    data: &Dataset,
    xi: &ParamVector,
    alpha: f64,
    n_tr: usize,
    score: &ScoreKind,
    cfg: &GdConfig,
) -> Result<PredictionSet> {
    let budget = AlphaBudget::for_vb(alpha, data.len().saturating_sub(n_tr))?;
    VbFit::fit(data, xi, n_tr, score, cfg)?.predict(x, &budget)
}

/// Default training share for VB-CP: `ceil(N / 2)`.
pub fn default_vb_split(n: usize) -> usize {
    n.div_ceil(2)
}

/// Smallest set, built greedily by decreasing probability (ties by label),
/// with mass at least `1 - alpha`.
pub fn greedy_set(probs: &[f64], alpha: f64) -> PredictionSet {
    if alpha <= 0.0 {
        return PredictionSet::full(probs.len());
    }
    let target = 1.0 - alpha;
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    let mut members = Vec::new();
    let mut mass = 0.0;
    for c in order {
        if mass >= target - 1e-12 {
            break;
        }
        mass += probs[c];
        members.push(c);
    }
    PredictionSet::from_members(members)
}

/// Model-mass predictor trained on all of `data`.
pub fn naive_predict(x: &[f64], data: &[Sample], xi: &ParamVector, alpha_naive: f64, cfg: &GdConfig) -> Result<PredictionSet> {
    if !(0.0..=1.0).contains(&alpha_naive) {
        return Err(Error::invalid("alpha_naive", format!("{alpha_naive} is not in [0, 1]")));
    }
    let model = gd_train(data, xi, cfg)?;
    Ok(greedy_set(&mlp_forward(x, &model)?, alpha_naive))
}

/// Smallest set with true conditional mass at least `1 - alpha`.
pub fn oracle_predict(p_true: &[f64], alpha: f64) -> Result<PredictionSet> {
    let total: f64 = p_true.iter().sum();
    if (total - 1.0).abs() > 1e-9 || p_true.iter().any(|&p| p.is_nan() || p < 0.0) {
        return Err(Error::invalid("p_true", format!("not a probability vector (sum {total})")));
    }
    Ok(greedy_set(p_true, alpha))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Layout;
    use proptest::prelude::*;
    use rand::Rng;

    fn toy(n: usize, seed: u64) -> Dataset {
        let mut rng = SeedTree::new(seed).rng();
        Dataset::new(
            (0..n)
                .map(|_| {
                    let x: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
                    let y = usize::from(x[0] > 0.0) + 2 * usize::from(x[1] > 0.3);
                    Sample::new(x, y)
                })
                .collect(),
        )
    }

    fn init(seed: u64) -> ParamVector {
        ParamVector::random_init(Layout::new(2, vec![6], 5).unwrap(), SeedTree::new(seed))
    }

    #[test]
    fn partitions() {
        let loo = FoldPartition::new(9, 9, SeedTree::new(1)).unwrap();
        assert_eq!(loo.k(), 9);
        for i in 0..9 {
            assert_eq!(loo.fold(loo.fold_of(i)), &[i]);
        }
        let p = FoldPartition::new(9, 3, SeedTree::new(1)).unwrap();
        assert!(p.folds().iter().all(|f| f.len() == 3));
        let mut all: Vec<usize> = p.folds().concat();
        all.sort_unstable();
        assert_eq!(all, (0..9).collect::<Vec<_>>());
        for i in 0..9 {
            assert!(p.fold(p.fold_of(i)).contains(&i));
        }
        assert_eq!(p, FoldPartition::new(9, 3, SeedTree::new(1)).unwrap());
        assert!(matches!(FoldPartition::new(10, 3, SeedTree::new(0)), Err(Error::InvalidFolds { .. })));
        assert!(FoldPartition::new(9, 1, SeedTree::new(0)).is_err());
    }

    #[test]
    fn alpha_budget_arithmetic() {
        let b = AlphaBudget::for_xb(0.5, 9, 3).unwrap();
        assert!((b.alpha_prime - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(b.threshold_count(9), 3);
        assert_eq!(AlphaBudget::for_xb(0.1, 9, 9).unwrap().alpha_prime, 0.1);
        match AlphaBudget::for_xb(0.1, 9, 3) {
            Err(Error::AlphaOutOfRange { min_alpha, .. }) => {
                assert!((min_alpha - (0.1 + 1.0 / 6.0)).abs() < 1e-12)
            }
            other => panic!("{other:?}"),
        }
        assert!(AlphaBudget::for_vb(0.1, 4).is_err());
        assert!(AlphaBudget::for_vb(0.2, 4).is_ok());
    }

    #[test]
    fn vb_threshold_examples() {
        let s: Vec<f64> = (1..=9).map(f64::from).collect();
        assert_eq!(vb_threshold(&s, 0.1).unwrap(), Extended::Finite(9.0));
        assert_eq!(vb_threshold(&s[..4], 0.1).unwrap(), Extended::Infinity);
    }

    #[test]
    fn vb_excludes_candidates_above_threshold() {
        let fit = VbFit {
            score: ScoreKind::ConventionalLogloss,
            model: ParamVector::zeros(Layout::new(2, vec![], 5).unwrap()),
            calibration: vec![0.1; 9],
        };
        // Uniform model scores ln 5 > 0.1 for every label.
        let set = fit.predict(&[0.0, 0.0], &AlphaBudget::for_vb(0.1, 9).unwrap()).unwrap();
        assert!(set.is_empty());
    }

    #[test]
    fn vb_rejects_alpha_below_range() {
        let d = toy(9, 0);
        let r = vb_predict(&[0.0, 0.0], &d, &init(0), 0.1, 5, &ScoreKind::ConventionalLogloss, &GdConfig::default());
        assert!(matches!(r, Err(Error::AlphaOutOfRange { .. })));
    }

    #[test]
    fn xb_counting_examples() {
        let b = AlphaBudget::for_xb(0.1, 9, 9).unwrap();
        let cal = [0.5; 9];
        assert_eq!(xb_set_from_scores(&[0.1, 0.9], &cal, &b).members(), &[0]);
        let b3 = AlphaBudget::for_xb(0.5, 9, 3).unwrap();
        let cal: Vec<f64> = (1..=9).map(f64::from).collect();
        // Candidate 7 has three calibration scores >= it: kept.
        assert_eq!(xb_set_from_scores(&[7.0, 7.5, 0.0], &cal, &b3).members(), &[0, 2]);
    }

    #[test]
    fn quantile_form_matches_counting_form_on_random_tasks() {
        let score = ScoreKind::ConventionalLogloss;
        let cfg = GdConfig::default();
        for t in 0..500u64 {
            let d = toy(9, 1000 + t);
            let k = if t % 2 == 0 { 9 } else { 3 };
            let alpha = if k == 9 { 0.1 + 0.05 * (t % 5) as f64 } else { 0.3 + 0.1 * (t % 4) as f64 };
            let part = FoldPartition::new(9, k, SeedTree::new(t)).unwrap();
            let fit = XbFit::fit(&d, &init(t), &part, &score, &cfg).unwrap();
            let b = AlphaBudget::for_xb(alpha, 9, k).unwrap();
            let x = [0.3, -0.8];
            assert_eq!(fit.predict(&x, &b).unwrap(), fit.predict_quantile_form(&x, &b).unwrap());
        }
    }

    #[test]
    fn forms_agree_on_extreme_scores() {
        let b = AlphaBudget::for_xb(0.2, 9, 9).unwrap();
        let fit = |cal: Vec<f64>| XbFit {
            score: ScoreKind::ConventionalLogloss,
            models: vec![ParamVector::zeros(Layout::new(2, vec![], 5).unwrap())],
            calibration: cal,
        };
        // Uniform model: every candidate scores ln 5.
        let below = fit(vec![5.0; 9]);
        assert_eq!(below.predict(&[0.0, 0.0], &b).unwrap().len(), 5);
        assert_eq!(below.predict_quantile_form(&[0.0, 0.0], &b).unwrap().len(), 5);
        let above = fit(vec![0.5; 9]);
        assert!(above.predict(&[0.0, 0.0], &b).unwrap().is_empty());
        assert!(above.predict_quantile_form(&[0.0, 0.0], &b).unwrap().is_empty());
    }

    #[test]
    fn xb_trains_one_model_per_fold() {
        let d = toy(9, 3);
        let part = FoldPartition::new(9, 3, SeedTree::new(3)).unwrap();
        let fit = XbFit::fit(&d, &init(3), &part, &ScoreKind::Adaptive, &GdConfig::default()).unwrap();
        assert_eq!(fit.models.len(), 3);
        assert_eq!(fit.calibration.len(), 9);
    }

    #[test]
    fn greedy_examples() {
        assert_eq!(greedy_set(&[0.6, 0.3, 0.1], 0.2).members(), &[0, 1]);
        assert_eq!(greedy_set(&[0.6, 0.3, 0.1], 0.0).len(), 3);
        assert!(greedy_set(&[0.6, 0.3, 0.1], 1.0).is_empty());
        assert_eq!(oracle_predict(&[0.2; 5], 0.1).unwrap().len(), 5);
        assert_eq!(oracle_predict(&[1.0, 0.0, 0.0], 0.7).unwrap().members(), &[0]);
        assert_eq!(oracle_predict(&[0.5, 0.3, 0.2], 0.5).unwrap().members(), &[0]);
        assert_eq!(greedy_set(&[0.25, 0.5, 0.25], 0.4).members(), &[0, 1]);
        assert!(oracle_predict(&[0.5, 0.4], 0.1).is_err());
    }

    #[test]
    fn naive_zero_alpha_is_full() {
        let d = toy(6, 4);
        let s = naive_predict(&[0.1, 0.2], d.samples(), &init(4), 0.0, &GdConfig::default()).unwrap();
        assert_eq!(s.len(), 5);
    }

    #[test]
    fn prediction_set_serializes_sorted() {
        let s = PredictionSet::from_members(vec![3, 0, 3, 1]);
        assert_eq!(serde_json::to_string(&s).unwrap(), "[0,1,3]");
    }

    proptest! {
        #[test]
        fn xb_sets_shrink_as_alpha_grows(
            cal in prop::collection::vec(0.0f64..3.0, 9),
            cand in prop::collection::vec(0.0f64..3.0, 5),
            a1 in 0.1f64..0.95,
            a2 in 0.1f64..0.95,
        ) {
            let (lo, hi) = if a1 <= a2 { (a1, a2) } else { (a2, a1) };
            let s_lo = xb_set_from_scores(&cand, &cal, &AlphaBudget::for_xb(lo, 9, 9).unwrap());
            let s_hi = xb_set_from_scores(&cand, &cal, &AlphaBudget::for_xb(hi, 9, 9).unwrap());
            prop_assert!(s_hi.is_subset(&s_lo));
        }

        #[test]
        fn counting_and_quantile_rules_agree(
            cal in prop::collection::vec(-2i32..3, 9),
            c in -3i32..4,
            alpha in 0.1f64..0.95,
        ) {
            let cal: Vec<f64> = cal.into_iter().map(f64::from).collect();
            let c = f64::from(c);
            let b = AlphaBudget::for_xb(alpha, 9, 9).unwrap();
            let counted = !xb_set_from_scores(&[c], &cal, &b).is_empty();
            let diffs: Vec<f64> = cal.iter().map(|s| s - c).collect();
            let q = empirical_quantile(&diffs, b.alpha_prime).unwrap();
            prop_assert_eq!(counted, q.is_nonnegative());
        }
    }
}
