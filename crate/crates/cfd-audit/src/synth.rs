//! Seeded synthetic tabular fixtures.
//!
//! Generates small fairness-audit-shaped datasets: a few numeric columns, a
//! binary protected attribute (`group` ∈ {a, b}), and a binary label whose
//! clean value is a linear function of the numerics plus a group effect,
//! corrupted by seeded label noise. Used by the test suites and to produce
//! the bundled demo data; real audits ingest CSV + schema instead.

use crate::dataset::{load_csv_reader, preprocess, Dataset, RawDataset, Schema};
use crate::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use std::path::Path;

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub rows: usize,
    pub numeric_features: usize,
    pub seed: u64,
    /// Probability that a clean label is flipped at generation time.
    pub label_noise: f64,
    /// Additive logit shift for group "a" (and its negation for "b").
    pub group_effect: f64,
    pub split_seed: u64,
    pub split_ratios: (f64, f64, f64),
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            rows: 50,
            numeric_features: 4,
            seed: 1,
            label_noise: 0.15,
            group_effect: 0.5,
            split_seed: 1,
            split_ratios: (0.6, 0.2, 0.2),
        }
    }
}

fn normal(rng: &mut ChaCha20Rng) -> f64 {
    let u1: f64 = rng.gen_range(1e-12..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

impl SynthConfig {
    pub fn schema(&self) -> Schema {
        let mut columns: Vec<(String, crate::dataset::ColumnKind)> = (0..self.numeric_features)
            .map(|j| (format!("num{j}"), crate::dataset::ColumnKind::Numerical))
            .collect();
        columns.push(("group".into(), crate::dataset::ColumnKind::Categorical));
        columns.push(("outcome".into(), crate::dataset::ColumnKind::Label));
        Schema {
            columns,
            protected_attribute: "group".into(),
            positive_label: "pos".into(),
            delimiter: b',',
            split_seed: self.split_seed,
            split_ratios: self.split_ratios,
            append_bias_feature: false,
        }
    }

    /// CSV text with header, in schema column order.
    pub fn csv_string(&self) -> String {
        let mut rng = ChaCha20Rng::seed_from_u64(self.seed);
        let weights: Vec<f64> =
            (0..self.numeric_features).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut out = String::new();
        for j in 0..self.numeric_features {
            out.push_str(&format!("num{j},"));
        }
        out.push_str("group,outcome\n");
        for _ in 0..self.rows {
            let group_a = rng.gen_bool(0.5);
            let feats: Vec<f64> = (0..self.numeric_features).map(|_| normal(&mut rng)).collect();
            let score: f64 = feats.iter().zip(&weights).map(|(f, w)| f * w).sum::<f64>()
                + if group_a { self.group_effect } else { -self.group_effect };
            let clean = score > 0.0;
            let label = clean ^ rng.gen_bool(self.label_noise);
            for f in &feats {
                out.push_str(&format!("{f:.6},"));
            }
            out.push_str(if group_a { "a," } else { "b," });
            out.push_str(if label { "pos\n" } else { "neg\n" });
        }
        out
    }

    pub fn raw(&self) -> Result<RawDataset> {
        load_csv_reader(self.csv_string().as_bytes(), &self.schema())
    }

    pub fn dataset(&self) -> Result<Dataset> {
        preprocess(&self.raw()?, &self.schema())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.csv_string())?;
        Ok(())
    }

    /// TOML schema document matching [`SynthConfig::schema`].
    pub fn schema_toml(&self) -> String {
        let mut cols = String::new();
        for j in 0..self.numeric_features {
            cols.push_str(&format!("    [\"num{j}\", \"numerical\"],\n"));
        }
        cols.push_str("    [\"group\", \"categorical\"],\n");
        cols.push_str("    [\"outcome\", \"label\"],\n");
        format!(
            "columns = [\n{cols}]\nprotected_attribute = \"group\"\npositive_label = \"pos\"\nsplit_seed = {}\nsplit_ratios = [{}, {}, {}]\n",
            self.split_seed, self.split_ratios.0, self.split_ratios.1, self.split_ratios.2
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Schema, Split};

    #[test]
    fn generation_is_deterministic() {
        let cfg = SynthConfig::default();
        assert_eq!(cfg.csv_string(), cfg.csv_string());
        let d1 = cfg.dataset().unwrap();
        let d2 = cfg.dataset().unwrap();
        assert_eq!(d1.content_hash(), d2.content_hash());
    }

    #[test]
    fn shapes_match_config() {
        let cfg = SynthConfig { rows: 50, numeric_features: 4, ..Default::default() };
        let d = cfg.dataset().unwrap();
        assert_eq!(d.n_rows(), 50);
        // 4 numerics + 2 one-hot group indicators
        assert_eq!(d.n_features(), 6);
        assert_eq!(d.indices_of(Split::Train).len(), 30);
        assert_eq!(d.indices_of(Split::Val).len(), 10);
        assert_eq!(d.indices_of(Split::Test).len(), 10);
        assert!(d.feature_map.protected_group.is_some());
    }

    #[test]
    fn schema_toml_round_trips() {
        let cfg = SynthConfig::default();
        let parsed = Schema::from_toml_str(&cfg.schema_toml()).unwrap();
        assert_eq!(parsed.columns, cfg.schema().columns);
        assert_eq!(parsed.split_seed, cfg.schema().split_seed);
    }
}
