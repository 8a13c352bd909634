//! Training-label bias auditing for feedforward ReLU classifiers.
//!
//! Given a tabular dataset, a deterministic learning procedure, a flip budget
//! `m`, and a test input, this crate searches for a *counterfactual dataset*
//! (CFD): a copy of the training set with at most `m` labels flipped whose
//! retrained model predicts a different label for that test input. Finding one
//! is evidence that the original prediction depends on potentially biased
//! labels.
//!
//! The search is guided by two rankings over the training rows:
//!
//! * a ridge-regression surrogate that scores each row's label influence on
//!   the prediction in closed form ([`scoring::lr_scores`]), and
//! * neuron-activation similarity between the test input and each training
//!   row ([`scoring::activation_scores`]).
//!
//! Both exploit the fact that a bias-free ReLU network is exactly linear on
//! the activation region of a given input ([`mlp::MlpModel::linearize`]).
//!
//! Module map:
//! * [`linalg`] — dense matrices and the regularized solve behind the surrogate
//! * [`dataset`] — CSV ingestion, preprocessing, splits, label flips, φ/ψ filters
//! * [`mlp`] — bias-free ReLU networks, deterministic full-batch Adam training
//! * [`scoring`] — the two rankings, the L2 baseline, and the combiner
//! * [`search`] — the search loops, baselines, and the exhaustive ground-truth oracle
//! * [`report`] — run reports, aggregates, and cross-method comparison
//! * [`synth`] — seeded synthetic fixtures for tests and demos

pub mod dataset;
pub mod linalg;
pub mod mlp;
pub mod report;
pub mod scoring;
pub mod search;
pub mod synth;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Dimension mismatch in a linear-algebra operation.
    #[error("shape error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    /// A linear system could not be solved.
    #[error("singular system: {matrix} is not invertible at lambda = {lambda}")]
    Singular { matrix: &'static str, lambda: f64 },

    /// A value that must be finite was NaN or infinite.
    #[error("non-finite value in {op}")]
    NonFinite { op: &'static str },

    /// Dataset ingestion failure. `row` is the 1-based CSV data row when known.
    #[error("dataset error{}: {detail}", row.map(|r| format!(" at row {r}")).unwrap_or_default())]
    Load { row: Option<usize>, detail: String },

    /// Invalid configuration (schema, flags, filter setup).
    #[error("configuration error: {0}")]
    Config(String),

    /// Training produced a non-finite loss.
    #[error("training diverged at epoch {epoch}: {detail}")]
    Train { epoch: usize, detail: String },

    /// The exhaustive oracle refused to enumerate past its cap.
    #[error("oracle refused: {subsets} candidate flip sets exceed cap {cap}")]
    OracleCap { subsets: u128, cap: u128 },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("report error: {0}")]
    Report(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI: 2 for configuration errors, 3 for
    /// dataset errors, 1 otherwise.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Config(_) => 2,
            Error::Load { .. } => 3,
            _ => 1,
        }
    }
}

/// One splitmix64 step; used to derive per-trial RNG seeds from a master seed.
pub(crate) fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic seed for the trial at (test row, k, attempt) under a master seed.
pub fn derive_seed(master: u64, test_row: u64, k: u64, attempt: u64) -> u64 {
    let mut s = splitmix64(master);
    s = splitmix64(s ^ test_row);
    s = splitmix64(s ^ k);
    splitmix64(s ^ attempt)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_seeds_are_stable_and_distinct() {
        let a = derive_seed(7, 1, 2, 3);
        let b = derive_seed(7, 1, 2, 3);
        assert_eq!(a, b);
        assert_ne!(a, derive_seed(7, 1, 2, 4));
        assert_ne!(a, derive_seed(8, 1, 2, 3));
    }

    #[test]
    fn exit_codes_follow_error_class() {
        assert_eq!(Error::Config("x".into()).exit_code(), 2);
        assert_eq!(
            Error::Load {
                row: Some(3),
                detail: "bad".into()
            }
            .exit_code(),
            3
        );
        assert_eq!(
            Error::Train {
                epoch: 1,
                detail: "nan".into()
            }
            .exit_code(),
            1
        );
    }
}
