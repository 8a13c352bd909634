//! Ranking analyses over training rows for one test input.
//!
//! Three score families are computed for every train-split row, in stable
//! index order:
//!
//! * `z_score` — magnitude of the ridge-surrogate influence weight. The
//!   surrogate prediction is `Σ zᵢ yᵢ`, so `|zᵢ|` bounds how much flipping
//!   label `i` can move it.
//! * `sim_score` — activation-pattern similarity between the test input and
//!   the row. The decayed variant (the search default) weights layers closer
//!   to the output more: the last hidden layer gets weight 1, the one before
//!   it ½, then ¼, and so on. The undecayed variant is one minus the
//!   normalized Hamming distance over all hidden neurons.
//! * `l2_score` — Euclidean distance in the embedded feature space (the
//!   proximity baseline; lower is better).
//!
//! [`combine`] min-max normalizes the z and similarity families over the
//! ψ-passing rows and averages them; rankings sort best-first with ties
//! broken by ascending train index.

use crate::dataset::Dataset;
use crate::linalg::{influence_weights, Vector};
use crate::mlp::{ActivationPattern, MlpModel};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

/// Which ranking drives the search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMode {
    Combined,
    LrOnly,
    ActivationOnly,
    L2,
    Random,
}

impl std::fmt::Display for ScoreMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ScoreMode::Combined => "combined",
            ScoreMode::LrOnly => "lr",
            ScoreMode::ActivationOnly => "activation",
            ScoreMode::L2 => "l2",
            ScoreMode::Random => "random",
        };
        f.write_str(s)
    }
}

/// Scores for one training row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreRow {
    pub train_index: usize,
    pub z_score: f64,
    pub sim_score: f64,
    pub l2_score: f64,
    /// Mean of the min-max normalized z and sim scores; ψ rows only.
    pub combined_score: Option<f64>,
    pub psi_included: bool,
}

/// Per-test-case score table over all train rows, in stable index order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreTable {
    pub rows: Vec<ScoreRow>,
}

/// Ordered train indices, best candidate first.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Ranking {
    pub mode: ScoreMode,
    pub order: Vec<usize>,
}

/// Ridge-surrogate influence magnitudes `|zᵢ|` per train row.
pub fn lr_scores(d: &Dataset, x: &Vector, lambda: f64) -> Result<Vec<(usize, f64)>> {
    let (x_train, _, idx) = d.train_matrix();
    if idx.is_empty() {
        return Err(Error::Config("train split is empty".into()));
    }
    let z = influence_weights(&x_train, x, lambda)?;
    Ok(idx
        .into_iter()
        .enumerate()
        .map(|(local, global)| (global, z.get(local).abs()))
        .collect())
}

/// Similarity of two activation patterns.
///
/// Undecayed: `1 − mismatches/d` over all `d` hidden neurons (1.0 when there
/// are none). Decayed: weighted matches over total weight, layer ℓ of L
/// hidden layers carrying weight `2^{-(L-1-ℓ)}`.
pub fn pattern_similarity(a: &ActivationPattern, b: &ActivationPattern, decay: bool) -> f64 {
    debug_assert_eq!(a.layers.len(), b.layers.len());
    if a.len() == 0 {
        return 1.0;
    }
    if decay {
        let n_layers = a.layers.len();
        let mut matched = 0.0;
        let mut total = 0.0;
        for (l, (la, lb)) in a.layers.iter().zip(&b.layers).enumerate() {
            let w = 0.5f64.powi((n_layers - 1 - l) as i32);
            for (&ba, &bb) in la.iter().zip(lb) {
                total += w;
                if ba == bb {
                    matched += w;
                }
            }
        }
        matched / total
    } else {
        let d = a.len();
        let mismatches: usize = a
            .layers
            .iter()
            .zip(&b.layers)
            .map(|(la, lb)| la.iter().zip(lb).filter(|(x, y)| x != y).count())
            .sum();
        1.0 - mismatches as f64 / d as f64
    }
}

/// Activation similarity of every train row to `x`.
pub fn activation_scores(
    model: &MlpModel,
    d: &Dataset,
    x: &Vector,
    decay: bool,
) -> Result<Vec<(usize, f64)>> {
    let target = model.activation_pattern(x)?;
    d.train_indices()
        .into_iter()
        .map(|i| {
            let p = model.activation_pattern(&d.row(i))?;
            Ok((i, pattern_similarity(&target, &p, decay)))
        })
        .collect()
}

/// Euclidean distance of every train row to `x` (lower is better).
pub fn l2_scores(d: &Dataset, x: &Vector) -> Result<Vec<(usize, f64)>> {
    d.train_indices()
        .into_iter()
        .map(|i| Ok((i, d.row(i).distance(x)?)))
        .collect()
}

/// Min-max normalization over the given values; a constant family maps to
/// 0.5 everywhere so the average with the other family stays meaningful.
fn min_max(values: &[f64]) -> Vec<f64> {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let range = hi - lo;
    if !(range > 1e-15) {
        return vec![0.5; values.len()];
    }
    values.iter().map(|v| (v - lo) / range).collect()
}

fn sort_best_first(mut scored: Vec<(usize, f64)>, descending: bool) -> Vec<usize> {
    scored.sort_by(|a, b| {
        let ord = a.1.partial_cmp(&b.1).expect("scores are finite");
        let ord = if descending { ord.reverse() } else { ord };
        ord.then(a.0.cmp(&b.0))
    });
    scored.into_iter().map(|(i, _)| i).collect()
}

/// Combined ranking: restrict both families to ψ rows, min-max normalize
/// each, average, and sort descending (ties by ascending train index).
pub fn combine(
    z_scores: &[(usize, f64)],
    sim_scores: &[(usize, f64)],
    psi: &[usize],
) -> Ranking {
    let psi_set: BTreeSet<usize> = psi.iter().copied().collect();
    let z_kept: Vec<(usize, f64)> = z_scores
        .iter()
        .filter(|(i, _)| psi_set.contains(i))
        .copied()
        .collect();
    let sim_kept: Vec<(usize, f64)> = sim_scores
        .iter()
        .filter(|(i, _)| psi_set.contains(i))
        .copied()
        .collect();
    debug_assert_eq!(z_kept.len(), sim_kept.len());
    let zn = min_max(&z_kept.iter().map(|(_, v)| *v).collect::<Vec<_>>());
    let sn = min_max(&sim_kept.iter().map(|(_, v)| *v).collect::<Vec<_>>());
    let combined: Vec<(usize, f64)> = z_kept
        .iter()
        .zip(zn.iter().zip(&sn))
        .map(|((i, _), (a, b))| (*i, (a + b) / 2.0))
        .collect();
    Ranking { mode: ScoreMode::Combined, order: sort_best_first(combined, true) }
}

/// Seeded uniform permutation of the ψ rows; consuming it in order draws
/// rows uniformly without replacement.
pub fn random_ranking(psi: &[usize], seed: u64) -> Ranking {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut order = psi.to_vec();
    let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    Ranking { mode: ScoreMode::Random, order }
}

impl ScoreTable {
    /// Computes all score families for one test input. `psi` holds the
    /// ψ-passing train rows; `sim_score` uses the decayed similarity.
    pub fn compute(
        d: &Dataset,
        model: &MlpModel,
        x: &Vector,
        lambda: f64,
        psi: &[usize],
    ) -> Result<ScoreTable> {
        let z = lr_scores(d, x, lambda)?;
        let sim = activation_scores(model, d, x, true)?;
        let l2 = l2_scores(d, x)?;
        let psi_set: BTreeSet<usize> = psi.iter().copied().collect();

        let kept: Vec<usize> = z
            .iter()
            .map(|(i, _)| *i)
            .filter(|i| psi_set.contains(i))
            .collect();
        let zn = min_max(
            &z.iter()
                .filter(|(i, _)| psi_set.contains(i))
                .map(|(_, v)| *v)
                .collect::<Vec<_>>(),
        );
        let sn = min_max(
            &sim.iter()
                .filter(|(i, _)| psi_set.contains(i))
                .map(|(_, v)| *v)
                .collect::<Vec<_>>(),
        );
        let mut combined = std::collections::BTreeMap::new();
        for (pos, &i) in kept.iter().enumerate() {
            combined.insert(i, (zn[pos] + sn[pos]) / 2.0);
        }

        let rows = z
            .iter()
            .zip(&sim)
            .zip(&l2)
            .map(|(((i, zv), (i2, sv)), (i3, lv))| {
                debug_assert!(i == i2 && i == i3);
                ScoreRow {
                    train_index: *i,
                    z_score: *zv,
                    sim_score: *sv,
                    l2_score: *lv,
                    combined_score: combined.get(i).copied(),
                    psi_included: psi_set.contains(i),
                }
            })
            .collect();
        Ok(ScoreTable { rows })
    }

    /// Ranking over ψ rows for a deterministic score mode. `Random` mode
    /// does not rank; use [`random_ranking`].
    pub fn ranking(&self, mode: ScoreMode) -> Ranking {
        let psi_rows: Vec<&ScoreRow> = self.rows.iter().filter(|r| r.psi_included).collect();
        let order = match mode {
            ScoreMode::Combined => sort_best_first(
                psi_rows
                    .iter()
                    .map(|r| (r.train_index, r.combined_score.unwrap_or(0.0)))
                    .collect(),
                true,
            ),
            ScoreMode::LrOnly => sort_best_first(
                psi_rows.iter().map(|r| (r.train_index, r.z_score)).collect(),
                true,
            ),
            ScoreMode::ActivationOnly => sort_best_first(
                psi_rows.iter().map(|r| (r.train_index, r.sim_score)).collect(),
                true,
            ),
            ScoreMode::L2 => sort_best_first(
                psi_rows.iter().map(|r| (r.train_index, r.l2_score)).collect(),
                false,
            ),
            ScoreMode::Random => panic!("random mode has no score ranking"),
        };
        Ranking { mode, order }
    }

    /// Audit CSV: `train_index,z,sim,l2,combined,psi_included`.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["train_index", "z", "sim", "l2", "combined", "psi_included"])
            .map_err(|e| Error::Report(e.to_string()))?;
        for r in &self.rows {
            w.write_record(&[
                r.train_index.to_string(),
                r.z_score.to_string(),
                r.sim_score.to_string(),
                r.l2_score.to_string(),
                r.combined_score.map(|c| c.to_string()).unwrap_or_default(),
                r.psi_included.to_string(),
            ])
            .map_err(|e| Error::Report(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}
