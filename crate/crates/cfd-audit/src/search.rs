//! The counterfactual-dataset search loops, their baselines, and the
//! exhaustive ground-truth oracle.
//!
//! Every trial retrains from the *same* initialization seed and
//! hyperparameters as the original model, so flipped labels are the only
//! difference between runs and results are bit-reproducible.
//!
//! Two search variants mirror the two experimental regimes:
//!
//! * **small** (`m = 1`): iteration `t` flips only the `t`-th ranked label,
//!   up to `⌊0.1·n_ψ⌋` (at least 1) iterations.
//! * **large**: for each flip count `k = 1..m`, the first attempt flips the
//!   top-`k` ranked labels; the remaining attempts sample fresh `k`-subsets
//!   of the top-`a·k` labels, where `a` is the smallest integer with
//!   `C(a·k, k) > 10`, for at most `10·m` retrains in total.
//!
//! Random mode replaces the ranking with seeded uniform draws over the
//! ψ rows. Per-trial seeds derive from (master seed, test row, k, attempt),
//! so attempts are reproducible and independent of execution order.

use crate::dataset::{flip_labels, phi_passes, psi_mask, Dataset, FilterConfig, PsiMode, Split};
use crate::linalg::Vector;
use crate::mlp::{Learner, MlpModel};
use crate::scoring::{random_ranking, Ranking, ScoreMode, ScoreTable};
use crate::{derive_seed, Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeSet, HashSet};
use std::time::Instant;

/// Which experimental regime the search runs in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchMode {
    Small,
    Large,
}

impl std::fmt::Display for SearchMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SearchMode::Small => "small",
            SearchMode::Large => "large",
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchConfig {
    pub mode: SearchMode,
    pub score_mode: ScoreMode,
    /// Flip budget; `None` selects `⌈0.001·n_train⌉` (at least 1).
    pub m: Option<usize>,
    /// Iteration cap override; `None` selects the mode default
    /// (`⌊0.1·n_ψ⌋`, at least 1, for small; `10·m` for large).
    pub t_override: Option<usize>,
    pub attempts_per_k: usize,
    pub lambda: f64,
    pub master_seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            mode: SearchMode::Small,
            score_mode: ScoreMode::Combined,
            m: None,
            t_override: None,
            attempts_per_k: 10,
            lambda: 1e-2,
            master_seed: 0,
        }
    }
}

/// Default flip budget: 0.1% of the training rows, rounded up.
pub fn default_m(n_train: usize) -> usize {
    ((0.001 * n_train as f64).ceil() as usize).max(1)
}

/// Small-mode iteration budget: 10% of the ψ rows, rounded down, at least 1.
pub fn small_t_budget(n_psi: usize) -> usize {
    ((0.1 * n_psi as f64).floor() as usize).max(1)
}

/// Saturating binomial coefficient.
pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.saturating_mul((n - i) as u128) / (i + 1) as u128;
    }
    acc
}

/// Smallest `a` such that `C(a·k, k) > 10`, the sampling-pool multiplier
/// that guarantees enough distinct subsets for the non-top attempts.
pub fn smallest_a(k: usize) -> usize {
    assert!(k >= 1);
    (1..).find(|&a| binomial(a * k, k) > 10).expect("binomial grows past 10")
}

/// One retraining trial.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialRecord {
    pub iteration: usize,
    pub flips: Vec<usize>,
    pub retrain_seed: u64,
    /// Logit of the retrained model on the test input; `None` on divergence.
    pub logit: Option<f64>,
    pub changed: bool,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct WallTimes {
    pub scoring_s: f64,
    pub per_retrain_s: f64,
    pub total_s: f64,
}

/// Outcome of the CFD search for one test row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CfdResult {
    /// Stable row index of the test input.
    pub test_index: usize,
    pub phi_passed: bool,
    pub found: bool,
    pub flipped_indices: Vec<usize>,
    pub k_used: Option<usize>,
    pub iterations_used: usize,
    pub original_logit: f64,
    pub new_logit: Option<f64>,
    pub n_psi: usize,
    /// Whether an independent fresh retrain confirmed the found flip set.
    pub verified: bool,
    pub trials: Vec<TrialRecord>,
    pub notes: Vec<String>,
    pub wall: WallTimes,
}

impl CfdResult {
    fn skeleton(test_index: usize, original_logit: f64) -> Self {
        Self {
            test_index,
            phi_passed: false,
            found: false,
            flipped_indices: Vec::new(),
            k_used: None,
            iterations_used: 0,
            original_logit,
            new_logit: None,
            n_psi: 0,
            verified: false,
            trials: Vec::new(),
            notes: Vec::new(),
            wall: WallTimes::default(),
        }
    }
}

/// Retrains on the flipped dataset and reports the new logit; divergence is
/// mapped to `None`.
fn retrain_logit(
    d: &Dataset,
    learner: &Learner,
    flips: &BTreeSet<usize>,
    x: &Vector,
) -> Result<Option<f64>> {
    let flipped = flip_labels(d, flips)?;
    match learner.fit(&flipped) {
        Ok(model) => Ok(Some(model.logit(x)?)),
        Err(Error::Train { epoch, detail }) => {
            log::warn!("retrain diverged at epoch {epoch}: {detail}");
            Ok(None)
        }
        Err(e) => Err(e),
    }
}

/// Retrains from the original seed on the flipped dataset and reports whether
/// the predicted label for `x` changes. Divergence counts as unchanged.
pub fn verify_cfd(
    d: &Dataset,
    learner: &Learner,
    flips: &BTreeSet<usize>,
    x: &Vector,
    original_pred: u8,
) -> Result<(bool, Option<f64>)> {
    match retrain_logit(d, learner, flips, x)? {
        Some(logit) => {
            let pred = if logit > 0.0 { 1 } else { 0 };
            Ok((pred != original_pred, Some(logit)))
        }
        None => Ok((false, None)),
    }
}

/// Ground-truth outcome from exhaustive enumeration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OracleOutcome {
    /// Smallest flip set that changes the prediction, if any exists within
    /// the budget. Minimal in k, lexicographically first within k.
    pub found: Option<Vec<usize>>,
    pub retrains: usize,
}

/// Enumerates every flip subset of the ψ rows in order of increasing size
/// (lexicographic within a size), retraining on each, and returns the first
/// one that changes the prediction.
///
/// Refuses up front when `Σ_{k≤m} C(n_ψ, k)` exceeds `cap`.
pub fn exhaustive_oracle(
    d: &Dataset,
    learner: &Learner,
    m: usize,
    x: &Vector,
    psi: &[usize],
    cap: u128,
    original_pred: u8,
) -> Result<OracleOutcome> {
    let total: u128 = (1..=m).map(|k| binomial(psi.len(), k)).fold(0u128, |a, b| {
        a.saturating_add(b)
    });
    if total > cap {
        return Err(Error::OracleCap { subsets: total, cap });
    }
    let mut retrains = 0usize;
    for k in 1..=m.min(psi.len()) {
        let mut picks: Vec<usize> = (0..k).collect();
        loop {
            let flips: BTreeSet<usize> = picks.iter().map(|&p| psi[p]).collect();
            retrains += 1;
            if let Some(logit) = retrain_logit(d, learner, &flips, x)? {
                let pred = if logit > 0.0 { 1 } else { 0 };
                if pred != original_pred {
                    return Ok(OracleOutcome {
                        found: Some(flips.into_iter().collect()),
                        retrains,
                    });
                }
            }
            // advance to the next lexicographic k-combination
            let mut i = k;
            loop {
                if i == 0 {
                    break;
                }
                i -= 1;
                if picks[i] != i + psi.len() - k {
                    picks[i] += 1;
                    for j in i + 1..k {
                        picks[j] = picks[j - 1] + 1;
                    }
                    break;
                }
                if i == 0 {
                    picks.clear();
                    break;
                }
            }
            if picks.is_empty() {
                break;
            }
        }
    }
    Ok(OracleOutcome { found: None, retrains })
}

/// Mutable state shared by the search loops: trial log and retrain clock.
struct TrialRun<'a> {
    d: &'a Dataset,
    learner: &'a Learner,
    x: &'a Vector,
    original_pred: u8,
    trials: Vec<TrialRecord>,
    retrain_secs: f64,
}

impl<'a> TrialRun<'a> {
    fn new(d: &'a Dataset, learner: &'a Learner, x: &'a Vector, original_pred: u8) -> Self {
        Self { d, learner, x, original_pred, trials: Vec::new(), retrain_secs: 0.0 }
    }

    fn run(&mut self, flips: &BTreeSet<usize>) -> Result<(bool, Option<f64>)> {
        let t0 = Instant::now();
        let logit = retrain_logit(self.d, self.learner, flips, self.x)?;
        self.retrain_secs += t0.elapsed().as_secs_f64();
        let changed = match logit {
            Some(l) => (if l > 0.0 { 1 } else { 0 }) != self.original_pred,
            None => false,
        };
        self.trials.push(TrialRecord {
            iteration: self.trials.len() + 1,
            flips: flips.iter().copied().collect(),
            retrain_seed: self.learner.cfg.seed,
            logit,
            changed,
        });
        Ok((changed, logit))
    }
}

struct SearchHit {
    flips: Vec<usize>,
    k_used: usize,
    new_logit: Option<f64>,
}

/// Small-mode loop: iteration `t` flips only the `t`-th ranked label.
fn search_small(
    run: &mut TrialRun<'_>,
    ranking: &Ranking,
    t_budget: usize,
) -> Result<Option<SearchHit>> {
    for t in 1..=t_budget {
        let Some(&row) = ranking.order.get(t - 1) else {
            break; // ranking exhausted before the budget
        };
        let flips: BTreeSet<usize> = [row].into();
        let (changed, logit) = run.run(&flips)?;
        if changed {
            return Ok(Some(SearchHit { flips: vec![row], k_used: 1, new_logit: logit }));
        }
    }
    Ok(None)
}

/// Draws a `k`-subset of `pool` not yet in `seen`; `None` when the pool has
/// no unseen subset to offer (checked exactly) or 100 draws all collide.
fn sample_new_subset(
    pool: &[usize],
    k: usize,
    seen: &HashSet<BTreeSet<usize>>,
    rng: &mut rand_chacha::ChaCha20Rng,
) -> Option<BTreeSet<usize>> {
    if pool.len() < k || binomial(pool.len(), k) <= seen.len() as u128 {
        return None;
    }
    for _ in 0..100 {
        let picks = rand::seq::index::sample(rng, pool.len(), k);
        let subset: BTreeSet<usize> = picks.iter().map(|p| pool[p]).collect();
        if !seen.contains(&subset) {
            return Some(subset);
        }
    }
    None
}

/// Large-mode loop: top-k first, then sampled subsets of the top-`a·k` pool.
#[allow(clippy::too_many_arguments)]
fn search_large(
    run: &mut TrialRun<'_>,
    ranking: &Ranking,
    psi: &[usize],
    m: usize,
    attempts_per_k: usize,
    t_budget: usize,
    master_seed: u64,
    test_row: usize,
    notes: &mut Vec<String>,
) -> Result<Option<SearchHit>> {
    use rand::SeedableRng;
    let random_mode = ranking.mode == ScoreMode::Random;
    'k_loop: for k in 1..=m {
        let mut seen: HashSet<BTreeSet<usize>> = HashSet::new();
        for attempt in 1..=attempts_per_k {
            if run.trials.len() >= t_budget {
                break 'k_loop;
            }
            let flips = if random_mode {
                let seed = derive_seed(master_seed, test_row as u64, k as u64, attempt as u64);
                let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
                sample_new_subset(psi, k, &seen, &mut rng)
            } else if attempt == 1 {
                if ranking.order.len() < k {
                    break 'k_loop; // not enough ranked rows to flip top-k
                }
                Some(ranking.order[..k].iter().copied().collect())
            } else {
                let a = smallest_a(k);
                let mut pool_len = a * k;
                if pool_len > ranking.order.len() {
                    pool_len = ranking.order.len();
                    if attempt == 2 {
                        notes.push(format!(
                            "k={k}: sampling pool truncated from {} to {pool_len}",
                            a * k
                        ));
                        log::debug!("k={k}: sampling pool truncated to {pool_len}");
                    }
                }
                let seed = derive_seed(master_seed, test_row as u64, k as u64, attempt as u64);
                let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
                sample_new_subset(&ranking.order[..pool_len], k, &seen, &mut rng)
            };
            let Some(flips) = flips else {
                continue; // attempt skipped: no fresh subset available
            };
            seen.insert(flips.clone());
            let (changed, logit) = run.run(&flips)?;
            if changed {
                return Ok(Some(SearchHit {
                    flips: flips.into_iter().collect(),
                    k_used: k,
                    new_logit: logit,
                }));
            }
        }
    }
    Ok(None)
}

/// Full audit configuration: the learner, the φ/ψ filters, the search
/// parameters, and the parallelism degree (0 = all cores).
#[derive(Debug, Clone)]
pub struct AuditConfig {
    pub learner: Learner,
    pub filter: FilterConfig,
    pub search: SearchConfig,
    pub jobs: usize,
}

pub struct AuditOutput {
    pub model: MlpModel,
    pub results: Vec<CfdResult>,
    pub resolved_m: usize,
    pub train_secs: f64,
}

fn validate_audit(d: &Dataset, cfg: &AuditConfig, tests: &[usize], m: usize) -> Result<()> {
    cfg.learner.arch.validate()?;
    cfg.learner.cfg.validate()?;
    if cfg.learner.arch.input_dim != d.n_features() {
        return Err(Error::Config(format!(
            "architecture expects {} inputs but the dataset has {} features",
            cfg.learner.arch.input_dim,
            d.n_features()
        )));
    }
    let n_train = d.train_indices().len();
    if m == 0 || m > n_train {
        return Err(Error::Config(format!("m = {m} out of range 1..={n_train}")));
    }
    if cfg.search.mode == SearchMode::Small && m != 1 {
        return Err(Error::Config(format!(
            "small mode flips one label per iteration and requires m = 1, got m = {m}"
        )));
    }
    if cfg.search.attempts_per_k == 0 {
        return Err(Error::Config("attempts_per_k must be at least 1".into()));
    }
    if !(cfg.search.lambda >= 0.0) {
        return Err(Error::Config(format!("lambda must be nonnegative, got {}", cfg.search.lambda)));
    }
    for &t in tests {
        if t >= d.n_rows() {
            return Err(Error::Config(format!("test row {t} out of range")));
        }
        if d.split[t] != Split::Test {
            return Err(Error::Config(format!("row {t} is not in the test split")));
        }
    }
    // Group-based filters need a categorical protected attribute; fail fast
    // instead of once per test case.
    let needs_group = cfg.filter.phi != crate::dataset::PhiMode::Always
        || cfg.filter.psi != PsiMode::All;
    if needs_group {
        let g = d.feature_map.protected()?;
        if g.kind != crate::dataset::ColumnKind::Categorical {
            return Err(Error::Config(format!(
                "protected attribute '{}' must be categorical for group filters",
                g.column
            )));
        }
        if cfg.filter.phi == crate::dataset::PhiMode::GroupMembership {
            let token = cfg.filter.group_token.as_ref().ok_or_else(|| {
                Error::Config("phi = group_membership requires --phi-group".into())
            })?;
            if !g.tokens.iter().any(|t| t == token) {
                return Err(Error::Config(format!(
                    "group token '{token}' not in protected vocabulary {:?}",
                    g.tokens
                )));
            }
        }
    }
    Ok(())
}

/// Audits one test row against an already-trained original model.
pub fn audit_one(
    d: &Dataset,
    model: &MlpModel,
    cfg: &AuditConfig,
    m: usize,
    test_row: usize,
) -> CfdResult {
    let started = Instant::now();
    let x = d.row(test_row);
    let original_logit = model.logit(&x).unwrap_or(f64::NAN);
    let mut result = CfdResult::skeleton(test_row, original_logit);

    let body = (|| -> Result<()> {
        let original_pred = model.predict(&x)?;
        result.phi_passed = phi_passes(&cfg.filter, d, model, &x)?;
        if !result.phi_passed {
            return Ok(());
        }
        let psi = psi_mask(&cfg.filter, d, model, &x)?;
        result.n_psi = psi.len();
        if psi.is_empty() {
            result.notes.push("psi mask is empty; search skipped".into());
            log::warn!("test row {test_row}: empty psi mask");
            return Ok(());
        }

        let scoring_started = Instant::now();
        let ranking = if cfg.search.score_mode == ScoreMode::Random {
            random_ranking(&psi, derive_seed(cfg.search.master_seed, test_row as u64, 0, 0))
        } else {
            ScoreTable::compute(d, model, &x, cfg.search.lambda, &psi)?
                .ranking(cfg.search.score_mode)
        };
        result.wall.scoring_s = scoring_started.elapsed().as_secs_f64();

        let t_budget = match cfg.search.mode {
            SearchMode::Small => cfg.search.t_override.unwrap_or_else(|| small_t_budget(psi.len())),
            SearchMode::Large => cfg.search.t_override.unwrap_or(10 * m),
        };

        let mut run = TrialRun::new(d, &cfg.learner, &x, original_pred);
        let hit = match cfg.search.mode {
            SearchMode::Small => search_small(&mut run, &ranking, t_budget)?,
            SearchMode::Large => search_large(
                &mut run,
                &ranking,
                &psi,
                m,
                cfg.search.attempts_per_k,
                t_budget,
                cfg.search.master_seed,
                test_row,
                &mut result.notes,
            )?,
        };
        result.iterations_used = run.trials.len();
        result.wall.per_retrain_s = if run.trials.is_empty() {
            0.0
        } else {
            run.retrain_secs / run.trials.len() as f64
        };
        result.trials = run.trials;

        if let Some(hit) = hit {
            let flips: BTreeSet<usize> = hit.flips.iter().copied().collect();
            // Fresh verification retrain, distinct from the search trials.
            let (verified, _) = verify_cfd(d, &cfg.learner, &flips, &x, original_pred)?;
            result.verified = verified;
            result.found = verified;
            result.flipped_indices = hit.flips;
            result.k_used = Some(hit.k_used);
            result.new_logit = hit.new_logit;
            if !verified {
                result.notes.push("verification retrain did not reproduce the change".into());
                log::error!("test row {test_row}: verification failed");
            }
        }
        Ok(())
    })();

    if let Err(e) = body {
        result.notes.push(format!("error: {e}"));
        log::error!("test row {test_row}: {e}");
    }
    result.wall.total_s = started.elapsed().as_secs_f64();
    result
}

/// Trains the original model once, then audits every requested test row.
/// Rows run in parallel across `jobs` threads; results keep input order, so
/// parallel and sequential runs produce identical reports.
pub fn run_audit(d: &Dataset, cfg: &AuditConfig, tests: &[usize]) -> Result<AuditOutput> {
    let m = cfg.search.m.unwrap_or_else(|| default_m(d.train_indices().len()));
    validate_audit(d, cfg, tests, m)?;

    let t0 = Instant::now();
    let model = cfg.learner.fit(d)?;
    let train_secs = t0.elapsed().as_secs_f64();

    let results: Vec<CfdResult> = if cfg.jobs == 1 {
        tests.iter().map(|&t| audit_one(d, &model, cfg, m, t)).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.jobs)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        pool.install(|| {
            use rayon::prelude::*;
            tests.par_iter().map(|&t| audit_one(d, &model, cfg, m, t)).collect()
        })
    };

    Ok(AuditOutput { model, results, resolved_m: m, train_secs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::PhiMode;
    use crate::mlp::{Architecture, TrainConfig};
    use crate::synth::SynthConfig;

    fn quick_learner(input_dim: usize) -> Learner {
        let mut cfg = TrainConfig::default();
        cfg.max_epochs = 40;
        cfg.seed = 3;
        Learner::new(Architecture::new(input_dim, vec![4, 4]), cfg)
    }

    fn fixture() -> (Dataset, Learner) {
        let d = SynthConfig { rows: 50, seed: 5, split_seed: 5, ..Default::default() }
            .dataset()
            .unwrap();
        let learner = quick_learner(d.n_features());
        (d, learner)
    }

    fn open_filter() -> FilterConfig {
        FilterConfig { phi: PhiMode::Always, psi: PsiMode::All, group_token: None }
    }

    #[test]
    fn binomial_and_smallest_a_match_hand_values() {
        assert_eq!(binomial(11, 1), 11);
        assert_eq!(binomial(4, 2), 6);
        assert_eq!(binomial(6, 2), 15);
        assert_eq!(binomial(8, 4), 70);
        assert_eq!(binomial(3, 5), 0);
        assert_eq!(smallest_a(1), 11);
        assert_eq!(smallest_a(2), 3);
        assert_eq!(smallest_a(3), 2);
        assert_eq!(smallest_a(4), 2);
    }

    #[test]
    fn default_budgets_match_the_published_setups() {
        assert_eq!(default_m(30), 1);
        assert_eq!(default_m(3702), 4);
        assert_eq!(default_m(18000), 18);
        assert_eq!(default_m(18292), 19);
        assert_eq!(default_m(27132), 28);
        assert_eq!(small_t_budget(8), 1);
        assert_eq!(small_t_budget(9), 1);
        assert_eq!(small_t_budget(23), 2);
        assert_eq!(small_t_budget(197), 19);
        assert_eq!(small_t_budget(48), 4);
        assert_eq!(small_t_budget(267), 26);
    }

    #[test]
    fn empty_flip_set_never_changes_the_prediction() {
        let (d, learner) = fixture();
        let model = learner.fit(&d).unwrap();
        let test_row = d.indices_of(Split::Test)[0];
        let x = d.row(test_row);
        let pred = model.predict(&x).unwrap();
        let (changed, logit) =
            verify_cfd(&d, &learner, &BTreeSet::new(), &x, pred).unwrap();
        assert!(!changed);
        assert_eq!(logit, Some(model.logit(&x).unwrap()));
    }

    #[test]
    fn oracle_with_zero_budget_finds_nothing() {
        let (d, learner) = fixture();
        let model = learner.fit(&d).unwrap();
        let test_row = d.indices_of(Split::Test)[0];
        let x = d.row(test_row);
        let psi = d.train_indices();
        let out = exhaustive_oracle(&d, &learner, 0, &x, &psi, 5000, model.predict(&x).unwrap())
            .unwrap();
        assert!(out.found.is_none());
        assert_eq!(out.retrains, 0);
    }

    #[test]
    fn oracle_counts_every_retrain_when_nothing_changes() {
        let (d, learner) = fixture();
        let model = learner.fit(&d).unwrap();
        // A far-from-boundary test input; single flips on 3 candidate rows.
        let test_row = d
            .indices_of(Split::Test)
            .into_iter()
            .max_by(|&a, &b| {
                model
                    .logit(&d.row(a))
                    .unwrap()
                    .abs()
                    .partial_cmp(&model.logit(&d.row(b)).unwrap().abs())
                    .unwrap()
            })
            .unwrap();
        let x = d.row(test_row);
        let psi: Vec<usize> = d.train_indices().into_iter().take(3).collect();
        let pred = model.predict(&x).unwrap();
        let out = exhaustive_oracle(&d, &learner, 1, &x, &psi, 5000, pred).unwrap();
        if out.found.is_none() {
            assert_eq!(out.retrains, 3);
        } else {
            assert!(out.retrains <= 3);
        }
    }

    #[test]
    fn oracle_refuses_past_the_cap_without_partial_answers() {
        let (d, learner) = fixture();
        let model = learner.fit(&d).unwrap();
        let test_row = d.indices_of(Split::Test)[0];
        let x = d.row(test_row);
        let psi = d.train_indices(); // 30 rows, m=3 → 30 + 435 + 4060 = 4525 > 100
        match exhaustive_oracle(&d, &learner, 3, &x, &psi, 100, model.predict(&x).unwrap()) {
            Err(Error::OracleCap { subsets, cap }) => {
                assert_eq!(subsets, 4525);
                assert_eq!(cap, 100);
            }
            other => panic!("expected cap refusal, got {other:?}"),
        }
    }

    #[test]
    fn oracle_solution_is_minimal_and_reverifies() {
        let (d, learner) = fixture();
        let model = learner.fit(&d).unwrap();
        let psi = d.train_indices();
        // Pick the test row closest to the boundary for a likely hit.
        let test_row = d
            .indices_of(Split::Test)
            .into_iter()
            .min_by(|&a, &b| {
                model
                    .logit(&d.row(a))
                    .unwrap()
                    .abs()
                    .partial_cmp(&model.logit(&d.row(b)).unwrap().abs())
                    .unwrap()
            })
            .unwrap();
        let x = d.row(test_row);
        let pred = model.predict(&x).unwrap();
        let out = exhaustive_oracle(&d, &learner, 1, &x, &psi, 5000, pred).unwrap();
        if let Some(flips) = out.found {
            let set: BTreeSet<usize> = flips.iter().copied().collect();
            let (changed, _) = verify_cfd(&d, &learner, &set, &x, pred).unwrap();
            assert!(changed, "oracle-found flip set must reverify");
            // Minimality at k=1 is structural; check no earlier candidate works.
            let pos = psi.iter().position(|&i| i == flips[0]).unwrap();
            for &earlier in &psi[..pos] {
                let (changed, _) =
                    verify_cfd(&d, &learner, &[earlier].into(), &x, pred).unwrap();
                assert!(!changed, "row {earlier} precedes the oracle answer");
            }
        }
    }

    fn audit_cfg(learner: Learner, mode: SearchMode, score: ScoreMode) -> AuditConfig {
        AuditConfig {
            learner,
            filter: open_filter(),
            search: SearchConfig {
                mode,
                score_mode: score,
                m: Some(1),
                ..Default::default()
            },
            jobs: 1,
        }
    }

    #[test]
    fn audit_returns_empty_results_for_empty_test_list() {
        let (d, learner) = fixture();
        let cfg = audit_cfg(learner, SearchMode::Small, ScoreMode::Combined);
        let out = run_audit(&d, &cfg, &[]).unwrap();
        assert!(out.results.is_empty());
        assert_eq!(out.resolved_m, 1);
    }

    #[test]
    fn audit_rejects_bad_configs() {
        let (d, learner) = fixture();
        let mut cfg = audit_cfg(learner, SearchMode::Small, ScoreMode::Combined);
        cfg.search.m = Some(2); // small mode demands m = 1
        assert!(matches!(run_audit(&d, &cfg, &[]), Err(Error::Config(_))));
        cfg.search.m = Some(1);
        let train_row = d.train_indices()[0];
        assert!(matches!(run_audit(&d, &cfg, &[train_row]), Err(Error::Config(_))));
    }

    #[test]
    fn search_never_exceeds_budget_and_trials_match_iterations() {
        let (d, learner) = fixture();
        let cfg = audit_cfg(learner, SearchMode::Small, ScoreMode::Combined);
        let tests = d.indices_of(Split::Test);
        let out = run_audit(&d, &cfg, &tests).unwrap();
        for r in &out.results {
            assert_eq!(r.iterations_used, r.trials.len());
            if r.phi_passed && r.n_psi > 0 {
                assert!(r.iterations_used <= small_t_budget(r.n_psi));
            }
            if r.found {
                assert!(!r.flipped_indices.is_empty() && r.flipped_indices.len() <= 1);
                assert!(r.verified);
            }
        }
    }

    #[test]
    fn found_results_agree_with_oracle_existence() {
        let (d, learner) = fixture();
        let model = learner.fit(&d).unwrap();
        let cfg = audit_cfg(learner.clone(), SearchMode::Small, ScoreMode::Combined);
        let tests = d.indices_of(Split::Test);
        let out = run_audit(&d, &cfg, &tests).unwrap();
        for r in &out.results {
            if !r.phi_passed || r.n_psi == 0 {
                continue;
            }
            let x = d.row(r.test_index);
            let psi = psi_mask(&cfg.filter, &d, &model, &x).unwrap();
            let oracle = exhaustive_oracle(
                &d,
                &learner,
                1,
                &x,
                &psi,
                5000,
                model.predict(&x).unwrap(),
            )
            .unwrap();
            if oracle.found.is_none() {
                assert!(!r.found, "search found a CFD the oracle says cannot exist");
            }
            if r.found {
                // The search hit must be one the oracle also certifies.
                let set: BTreeSet<usize> = r.flipped_indices.iter().copied().collect();
                let (changed, _) =
                    verify_cfd(&d, &learner, &set, &x, model.predict(&x).unwrap()).unwrap();
                assert!(changed);
            }
        }
    }

    #[test]
    fn random_mode_is_reproducible_under_one_master_seed() {
        let (d, learner) = fixture();
        let mut cfg = audit_cfg(learner, SearchMode::Small, ScoreMode::Random);
        cfg.search.master_seed = 99;
        let tests = d.indices_of(Split::Test);
        let a = run_audit(&d, &cfg, &tests).unwrap();
        let b = run_audit(&d, &cfg, &tests).unwrap();
        for (ra, rb) in a.results.iter().zip(&b.results) {
            assert_eq!(ra.found, rb.found);
            assert_eq!(ra.flipped_indices, rb.flipped_indices);
            assert_eq!(ra.iterations_used, rb.iterations_used);
            let ta: Vec<_> = ra.trials.iter().map(|t| t.flips.clone()).collect();
            let tb: Vec<_> = rb.trials.iter().map(|t| t.flips.clone()).collect();
            assert_eq!(ta, tb);
        }
    }

    #[test]
    fn large_mode_respects_budget_and_pool_sizes() {
        let d = SynthConfig { rows: 120, seed: 8, split_seed: 8, ..Default::default() }
            .dataset()
            .unwrap();
        let learner = quick_learner(d.n_features());
        let mut cfg = audit_cfg(learner, SearchMode::Large, ScoreMode::Combined);
        cfg.search.m = Some(2);
        let tests: Vec<usize> = d.indices_of(Split::Test).into_iter().take(3).collect();
        let out = run_audit(&d, &cfg, &tests).unwrap();
        for r in &out.results {
            assert!(r.iterations_used <= 20, "budget 10m exceeded: {}", r.iterations_used);
            // distinct subsets within each k
            let mut seen: HashSet<Vec<usize>> = HashSet::new();
            for t in &r.trials {
                assert!(t.flips.len() <= 2);
                assert!(seen.insert(t.flips.clone()), "repeated subset {:?}", t.flips);
            }
            if r.found {
                assert!(r.verified);
                assert_eq!(r.k_used.unwrap(), r.flipped_indices.len());
            }
        }
    }

    #[test]
    fn large_mode_first_attempt_flips_top_k_prefix() {
        let d = SynthConfig { rows: 120, seed: 9, split_seed: 9, ..Default::default() }
            .dataset()
            .unwrap();
        let learner = quick_learner(d.n_features());
        let model = learner.fit(&d).unwrap();
        let mut cfg = audit_cfg(learner, SearchMode::Large, ScoreMode::LrOnly);
        cfg.search.m = Some(2);
        let test_row = d.indices_of(Split::Test)[0];
        let x = d.row(test_row);
        let psi = psi_mask(&cfg.filter, &d, &model, &x).unwrap();
        let ranking = ScoreTable::compute(&d, &model, &x, cfg.search.lambda, &psi)
            .unwrap()
            .ranking(ScoreMode::LrOnly);

        let out = run_audit(&d, &cfg, &[test_row]).unwrap();
        let r = &out.results[0];
        if !r.trials.is_empty() {
            assert_eq!(r.trials[0].flips, vec![ranking.order[0]]);
        }
        // attempts 2.. for k=1 stay within the top-11 pool
        let pool: BTreeSet<usize> = ranking.order.iter().take(11).copied().collect();
        for t in r.trials.iter().take_while(|t| t.flips.len() == 1).skip(1) {
            assert!(pool.contains(&t.flips[0]), "trial {:?} outside top-11 pool", t.flips);
        }
    }

    #[test]
    fn parallel_and_sequential_audits_agree() {
        let (d, learner) = fixture();
        let mut cfg = audit_cfg(learner, SearchMode::Small, ScoreMode::Combined);
        let tests = d.indices_of(Split::Test);
        let seq = run_audit(&d, &cfg, &tests).unwrap();
        cfg.jobs = 4;
        let par = run_audit(&d, &cfg, &tests).unwrap();
        for (a, b) in seq.results.iter().zip(&par.results) {
            assert_eq!(a.test_index, b.test_index);
            assert_eq!(a.found, b.found);
            assert_eq!(a.flipped_indices, b.flipped_indices);
            assert_eq!(a.iterations_used, b.iterations_used);
            assert_eq!(a.original_logit.to_bits(), b.original_logit.to_bits());
        }
    }

    #[test]
    fn phi_failure_short_circuits_without_retrains() {
        let (d, learner) = fixture();
        // group_membership on token "a": rows in group "b" fail φ
        let mut cfg = audit_cfg(learner, SearchMode::Small, ScoreMode::Combined);
        cfg.filter = FilterConfig {
            phi: PhiMode::GroupMembership,
            psi: PsiMode::All,
            group_token: Some("a".into()),
        };
        let tests = d.indices_of(Split::Test);
        let out = run_audit(&d, &cfg, &tests).unwrap();
        let g = d.feature_map.protected().unwrap().clone();
        let tok_a = g.tokens.iter().position(|t| t == "a").unwrap();
        for r in &out.results {
            let in_a = d.protected_token_of(&d.row(r.test_index)).unwrap() == tok_a;
            assert_eq!(r.phi_passed, in_a);
            if !r.phi_passed {
                assert_eq!(r.iterations_used, 0);
                assert!(r.trials.is_empty());
                assert!(!r.found);
            }
        }
    }
}
