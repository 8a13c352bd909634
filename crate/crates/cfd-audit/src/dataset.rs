//! Tabular dataset ingestion and the filtering predicates of the audit.
//!
//! A dataset flows through three stages: [`load_csv`] reads and validates raw
//! tokens (dropping rows with empty cells), [`split`] assigns deterministic
//! train/val/test tags, and [`preprocess`] turns tokens into the embedded
//! feature matrix (z-scored numericals, one-hot categoricals, labels in
//! `{0,1}`). Normalization statistics come from the train split only.
//!
//! Rows are addressed everywhere by the stable integer index assigned at load
//! time, so flipped-label sets in reports are reproducible.

use crate::linalg::{Matrix, Vector};
use crate::mlp::MlpModel;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

/// Role of a CSV column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Numerical,
    Categorical,
    Label,
    Ignore,
}

impl ColumnKind {
    fn parse(s: &str) -> Result<Self> {
        match s {
            "numerical" => Ok(Self::Numerical),
            "categorical" => Ok(Self::Categorical),
            "label" => Ok(Self::Label),
            "ignore" => Ok(Self::Ignore),
            other => Err(Error::Config(format!("unknown column kind '{other}'"))),
        }
    }
}

/// Column layout, protected attribute, and label mapping for one dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Schema {
    /// Ordered `(name, kind)` pairs; this order defines the feature layout.
    pub columns: Vec<(String, ColumnKind)>,
    pub protected_attribute: String,
    /// Raw label token mapped to 1; the single remaining token maps to 0.
    pub positive_label: String,
    /// Field delimiter, default `,`.
    pub delimiter: u8,
    pub split_seed: u64,
    pub split_ratios: (f64, f64, f64),
    /// When set, a constant-1 feature is appended so trained weights can
    /// absorb an intercept while the network itself stays bias-free.
    pub append_bias_feature: bool,
}

#[derive(Deserialize)]
struct SchemaDoc {
    columns: Vec<(String, String)>,
    protected_attribute: String,
    positive_label: String,
    delimiter: Option<String>,
    split_seed: Option<u64>,
    split_ratios: Option<[f64; 3]>,
    append_bias_feature: Option<bool>,
}

impl Schema {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let doc: SchemaDoc =
            toml::from_str(text).map_err(|e| Error::Config(format!("schema parse: {e}")))?;
        let mut columns = Vec::with_capacity(doc.columns.len());
        for (name, kind) in doc.columns {
            columns.push((name, ColumnKind::parse(&kind)?));
        }
        let delimiter = match doc.delimiter.as_deref() {
            None => b',',
            Some(d) if d.len() == 1 => d.as_bytes()[0],
            Some(d) => {
                return Err(Error::Config(format!("delimiter must be one byte, got '{d}'")))
            }
        };
        let ratios = doc.split_ratios.unwrap_or([0.6, 0.2, 0.2]);
        let schema = Schema {
            columns,
            protected_attribute: doc.protected_attribute,
            positive_label: doc.positive_label,
            delimiter,
            split_seed: doc.split_seed.unwrap_or(0),
            split_ratios: (ratios[0], ratios[1], ratios[2]),
            append_bias_feature: doc.append_bias_feature.unwrap_or(false),
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let labels: Vec<_> = self
            .columns
            .iter()
            .filter(|(_, k)| *k == ColumnKind::Label)
            .collect();
        if labels.len() != 1 {
            return Err(Error::Config(format!(
                "schema must have exactly one label column, found {}",
                labels.len()
            )));
        }
        let mut seen = BTreeSet::new();
        for (name, _) in &self.columns {
            if !seen.insert(name.clone()) {
                return Err(Error::Config(format!("duplicate column '{name}' in schema")));
            }
        }
        match self.columns.iter().find(|(n, _)| *n == self.protected_attribute) {
            None => {
                return Err(Error::Config(format!(
                    "protected attribute '{}' is not a schema column",
                    self.protected_attribute
                )))
            }
            Some((_, ColumnKind::Label)) => {
                return Err(Error::Config(
                    "protected attribute may not be the label column".into(),
                ))
            }
            Some(_) => {}
        }
        let (a, b, c) = self.split_ratios;
        if !(a >= 0.0 && b >= 0.0 && c >= 0.0 && (a + b + c - 1.0).abs() < 1e-9) {
            return Err(Error::Config(format!(
                "split ratios must be nonnegative and sum to 1, got ({a}, {b}, {c})"
            )));
        }
        Ok(())
    }

    fn label_column(&self) -> usize {
        self.columns
            .iter()
            .position(|(_, k)| *k == ColumnKind::Label)
            .expect("validated schema has a label column")
    }
}

/// Tokens as read from disk, after dropping rows with empty cells.
#[derive(Debug, Clone)]
pub struct RawDataset {
    /// Rows in schema column order.
    pub rows: Vec<Vec<String>>,
    /// 1-based CSV data row each retained row came from.
    pub source_rows: Vec<usize>,
    pub dropped: usize,
}

impl RawDataset {
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }
}

/// Reads a delimited file with a header, reordering fields into schema order.
///
/// Rows with an empty cell in any non-ignored column are dropped and counted.
/// Numerical cells must parse and label tokens must come from a two-token
/// vocabulary containing the configured positive token.
pub fn load_csv(path: &Path, schema: &Schema) -> Result<RawDataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::Load {
        row: None,
        detail: format!("cannot open {}: {e}", path.display()),
    })?;
    load_csv_reader(file, schema)
}

pub fn load_csv_reader<R: std::io::Read>(reader: R, schema: &Schema) -> Result<RawDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter)
        .trim(csv::Trim::All)
        .has_headers(true)
        .from_reader(reader);

    let headers = rdr
        .headers()
        .map_err(|e| Error::Load { row: None, detail: format!("cannot read header: {e}") })?
        .clone();
    let mut header_pos = BTreeMap::new();
    for (i, h) in headers.iter().enumerate() {
        if header_pos.insert(h.to_string(), i).is_some() {
            return Err(Error::Load {
                row: None,
                detail: format!("duplicate header column '{h}'"),
            });
        }
    }
    let mut order = Vec::with_capacity(schema.columns.len());
    for (name, _) in &schema.columns {
        match header_pos.remove(name) {
            Some(i) => order.push(i),
            None => {
                return Err(Error::Load {
                    row: None,
                    detail: format!("missing column '{name}' in header"),
                })
            }
        }
    }
    if let Some((name, _)) = header_pos.iter().next() {
        return Err(Error::Load {
            row: None,
            detail: format!("header column '{name}' is not in the schema"),
        });
    }

    let label_col = schema.label_column();
    let mut rows = Vec::new();
    let mut source_rows = Vec::new();
    let mut dropped = 0usize;
    let mut negative_token: Option<String> = None;

    for (i, record) in rdr.records().enumerate() {
        let csv_row = i + 1;
        let record = record.map_err(|e| Error::Load {
            row: Some(csv_row),
            detail: format!("parse failure: {e}"),
        })?;
        let fields: Vec<String> = order.iter().map(|&p| record[p].to_string()).collect();

        let has_empty = fields
            .iter()
            .zip(&schema.columns)
            .any(|(f, (_, kind))| *kind != ColumnKind::Ignore && f.is_empty());
        if has_empty {
            dropped += 1;
            continue;
        }

        for (f, (name, kind)) in fields.iter().zip(&schema.columns) {
            if *kind == ColumnKind::Numerical {
                let v: f64 = f.parse().map_err(|_| Error::Load {
                    row: Some(csv_row),
                    detail: format!("column '{name}': unparseable numeric '{f}'"),
                })?;
                if !v.is_finite() {
                    return Err(Error::Load {
                        row: Some(csv_row),
                        detail: format!("column '{name}': non-finite numeric '{f}'"),
                    });
                }
            }
        }

        let label = &fields[label_col];
        if *label != schema.positive_label {
            match &negative_token {
                None => negative_token = Some(label.clone()),
                Some(neg) if neg == label => {}
                Some(neg) => {
                    return Err(Error::Load {
                        row: Some(csv_row),
                        detail: format!(
                            "unknown label token '{label}' (expected '{}' or '{neg}')",
                            schema.positive_label
                        ),
                    })
                }
            }
        }

        rows.push(fields);
        source_rows.push(csv_row);
    }

    log::info!("loaded {} rows, dropped {} with empty cells", rows.len(), dropped);
    Ok(RawDataset { rows, source_rows, dropped })
}

/// Split membership tag for one row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Deterministic split: shuffle `0..n` with a seeded RNG, then assign the
/// first `⌊r_train·n⌋` rows to train, the next `⌊r_val·n⌋` to val, and the
/// remainder to test.
pub fn split(n_rows: usize, ratios: (f64, f64, f64), seed: u64) -> Result<Vec<Split>> {
    let (a, b, c) = ratios;
    if !(a >= 0.0 && b >= 0.0 && c >= 0.0 && (a + b + c - 1.0).abs() < 1e-9) {
        return Err(Error::Config(format!(
            "split ratios must be nonnegative and sum to 1, got ({a}, {b}, {c})"
        )));
    }
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut order: Vec<usize> = (0..n_rows).collect();
    let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let n_train = (a * n_rows as f64).floor() as usize;
    let n_val = (b * n_rows as f64).floor() as usize;
    let mut tags = vec![Split::Test; n_rows];
    for (pos, &row) in order.iter().enumerate() {
        tags[row] = if pos < n_train {
            Split::Train
        } else if pos < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }
    Ok(tags)
}

/// How one raw column maps into the embedded feature matrix.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureGroup {
    pub column: String,
    pub kind: ColumnKind,
    /// First feature index of this group.
    pub start: usize,
    pub width: usize,
    /// One-hot token vocabulary (categorical only), sorted.
    pub tokens: Vec<String>,
    /// Train-split statistics (numerical only; population std).
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureMap {
    pub groups: Vec<FeatureGroup>,
    /// Index into `groups` of the protected attribute, when it is embedded.
    pub protected_group: Option<usize>,
    pub n_features: usize,
}

impl FeatureMap {
    pub fn protected(&self) -> Result<&FeatureGroup> {
        self.protected_group
            .map(|g| &self.groups[g])
            .ok_or_else(|| Error::Config("dataset has no protected attribute group".into()))
    }
}

/// Preprocessed dataset: embedded features, binary labels, split tags, and
/// the raw tokens they came from.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub x: Matrix,
    pub y: Vector,
    pub raw_rows: Vec<Vec<String>>,
    pub feature_map: FeatureMap,
    pub split: Vec<Split>,
    pub warnings: Vec<String>,
}

/// Embeds raw tokens into features. Numerical columns are z-scored with
/// train-split statistics (population std); a train-constant column is
/// embedded as zeros with a warning. Categorical columns are one-hot encoded
/// over the sorted token vocabulary of all retained rows.
pub fn preprocess(raw: &RawDataset, schema: &Schema) -> Result<Dataset> {
    if raw.rows.is_empty() {
        return Err(Error::Load { row: None, detail: "no rows after filtering".into() });
    }
    let n = raw.n_rows();
    let tags = split(n, schema.split_ratios, schema.split_seed)?;
    let train_rows: Vec<usize> = (0..n).filter(|&i| tags[i] == Split::Train).collect();
    if train_rows.is_empty() {
        return Err(Error::Load { row: None, detail: "train split is empty".into() });
    }

    let mut groups: Vec<FeatureGroup> = Vec::new();
    let mut protected_group = None;
    let mut warnings = Vec::new();
    let mut start = 0usize;
    let label_col = schema.label_column();

    for (col_idx, (name, kind)) in schema.columns.iter().enumerate() {
        match kind {
            ColumnKind::Label | ColumnKind::Ignore => continue,
            ColumnKind::Numerical => {
                let parse = |i: usize| -> f64 { raw.rows[i][col_idx].parse().unwrap() };
                let mean = train_rows.iter().map(|&i| parse(i)).sum::<f64>()
                    / train_rows.len() as f64;
                let var = train_rows
                    .iter()
                    .map(|&i| {
                        let d = parse(i) - mean;
                        d * d
                    })
                    .sum::<f64>()
                    / train_rows.len() as f64;
                let std = var.sqrt();
                let constant = std < 1e-12;
                if constant {
                    warnings
                        .push(format!("numerical column '{name}' is constant on the train split; embedded as zeros"));
                    log::warn!("column '{name}' constant on train split");
                }
                groups.push(FeatureGroup {
                    column: name.clone(),
                    kind: *kind,
                    start,
                    width: 1,
                    tokens: Vec::new(),
                    mean,
                    std: if constant { 0.0 } else { std },
                });
                start += 1;
            }
            ColumnKind::Categorical => {
                let tokens: BTreeSet<String> =
                    raw.rows.iter().map(|r| r[col_idx].clone()).collect();
                let tokens: Vec<String> = tokens.into_iter().collect();
                let width = tokens.len();
                if *name == schema.protected_attribute {
                    protected_group = Some(groups.len());
                }
                groups.push(FeatureGroup {
                    column: name.clone(),
                    kind: *kind,
                    start,
                    width,
                    tokens,
                    mean: 0.0,
                    std: 1.0,
                });
                start += width;
            }
        }
    }
    if schema.append_bias_feature {
        groups.push(FeatureGroup {
            column: "(bias)".into(),
            kind: ColumnKind::Numerical,
            start,
            width: 1,
            tokens: Vec::new(),
            mean: 0.0,
            std: 1.0,
        });
        start += 1;
    }
    let n_features = start;

    let mut data = vec![0.0; n * n_features];
    let mut labels = vec![0.0; n];
    for (i, row) in raw.rows.iter().enumerate() {
        let out = &mut data[i * n_features..(i + 1) * n_features];
        let mut gi = 0usize;
        for (col_idx, (name, kind)) in schema.columns.iter().enumerate() {
            match kind {
                ColumnKind::Label | ColumnKind::Ignore => continue,
                ColumnKind::Numerical => {
                    let g = &groups[gi];
                    let v: f64 = row[col_idx].parse().unwrap();
                    out[g.start] = if g.std == 0.0 { 0.0 } else { (v - g.mean) / g.std };
                    gi += 1;
                }
                ColumnKind::Categorical => {
                    let g = &groups[gi];
                    let t = g
                        .tokens
                        .iter()
                        .position(|tok| *tok == row[col_idx])
                        .unwrap_or_else(|| panic!("token vocabulary for '{name}' is complete"));
                    out[g.start + t] = 1.0;
                    gi += 1;
                }
            }
        }
        if schema.append_bias_feature {
            out[n_features - 1] = 1.0;
        }
        labels[i] = if row[label_col] == schema.positive_label { 1.0 } else { 0.0 };
    }

    Ok(Dataset {
        x: Matrix::from_vec(n, n_features, data)?,
        y: Vector::from_vec(labels)?,
        raw_rows: raw.rows.clone(),
        feature_map: FeatureMap { groups, protected_group, n_features },
        split: tags,
        warnings,
    })
}

impl Dataset {
    /// Builds an in-memory dataset from already-embedded features. Raw tokens
    /// are synthesized from the feature values so row-level reporting works.
    pub fn from_parts(x: Matrix, y: Vector, split_tags: Vec<Split>) -> Result<Self> {
        if x.rows() != y.len() || x.rows() != split_tags.len() {
            return Err(Error::Shape {
                op: "Dataset::from_parts",
                detail: format!("{} rows, {} labels, {} tags", x.rows(), y.len(), split_tags.len()),
            });
        }
        if y.as_slice().iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::Load { row: None, detail: "labels must be 0 or 1".into() });
        }
        let n_features = x.cols();
        let groups = (0..n_features)
            .map(|j| FeatureGroup {
                column: format!("f{j}"),
                kind: ColumnKind::Numerical,
                start: j,
                width: 1,
                tokens: Vec::new(),
                mean: 0.0,
                std: 1.0,
            })
            .collect();
        let raw_rows = (0..x.rows())
            .map(|i| x.row(i).iter().map(|v| format!("{v}")).collect())
            .collect();
        Ok(Dataset {
            x,
            y,
            raw_rows,
            feature_map: FeatureMap { groups, protected_group: None, n_features },
            split: split_tags,
            warnings: Vec::new(),
        })
    }

    pub fn n_rows(&self) -> usize {
        self.x.rows()
    }

    pub fn n_features(&self) -> usize {
        self.x.cols()
    }

    pub fn row(&self, i: usize) -> Vector {
        self.x.row_vector(i)
    }

    pub fn indices_of(&self, tag: Split) -> Vec<usize> {
        (0..self.n_rows()).filter(|&i| self.split[i] == tag).collect()
    }

    pub fn train_indices(&self) -> Vec<usize> {
        self.indices_of(Split::Train)
    }

    /// Train-split feature matrix, labels, and the global index of each row.
    pub fn train_matrix(&self) -> (Matrix, Vector, Vec<usize>) {
        self.submatrix(Split::Train)
    }

    pub fn val_matrix(&self) -> (Matrix, Vector, Vec<usize>) {
        self.submatrix(Split::Val)
    }

    fn submatrix(&self, tag: Split) -> (Matrix, Vector, Vec<usize>) {
        let idx = self.indices_of(tag);
        let p = self.n_features();
        let mut data = Vec::with_capacity(idx.len() * p);
        let mut y = Vec::with_capacity(idx.len());
        for &i in &idx {
            data.extend_from_slice(self.x.row(i));
            y.push(self.y.get(i));
        }
        (
            Matrix::from_vec(idx.len(), p, data).expect("submatrix of a valid dataset"),
            Vector::from_vec(y).expect("labels of a valid dataset"),
            idx,
        )
    }

    /// Which protected-attribute token (index into the group vocabulary) an
    /// embedded input carries.
    pub fn protected_token_of(&self, x: &Vector) -> Result<usize> {
        let g = self.feature_map.protected()?;
        if g.kind != ColumnKind::Categorical {
            return Err(Error::Config(format!(
                "protected attribute '{}' is not categorical; φ/ψ group filters need a one-hot group",
                g.column
            )));
        }
        for t in 0..g.width {
            if x.get(g.start + t) > 0.5 {
                return Ok(t);
            }
        }
        Err(Error::Config(format!(
            "input carries no indicator for protected group '{}'",
            g.column
        )))
    }

    /// Copies of `x` with the protected one-hot set to each other token.
    pub fn protected_variants(&self, x: &Vector) -> Result<Vec<Vector>> {
        let current = self.protected_token_of(x)?;
        let g = self.feature_map.protected()?.clone();
        let mut variants = Vec::with_capacity(g.width.saturating_sub(1));
        for t in 0..g.width {
            if t == current {
                continue;
            }
            let mut v = x.clone();
            for u in 0..g.width {
                v.set(g.start + u, if u == t { 1.0 } else { 0.0 });
            }
            variants.push(v);
        }
        Ok(variants)
    }

    /// Content digest of the preprocessed matrix and labels; stamped into
    /// reports so cross-dataset comparisons are rejected.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.n_rows() as u64).to_le_bytes());
        h.update((self.n_features() as u64).to_le_bytes());
        for v in self.x.as_slice() {
            h.update(v.to_le_bytes());
        }
        for v in self.y.as_slice() {
            h.update(v.to_le_bytes());
        }
        for s in &self.split {
            h.update([*s as u8]);
        }
        hex::encode(h.finalize())
    }
}

/// Returns a copy of the dataset with the labels at `indices` flipped
/// (`y ↦ 1 − y`). Indices must be train-split rows.
pub fn flip_labels(d: &Dataset, indices: &BTreeSet<usize>) -> Result<Dataset> {
    for &i in indices {
        if i >= d.n_rows() {
            return Err(Error::Config(format!("flip index {i} out of range")));
        }
        if d.split[i] != Split::Train {
            return Err(Error::Config(format!("flip index {i} is not a train row")));
        }
    }
    let mut out = d.clone();
    for &i in indices {
        out.y.set(i, 1.0 - out.y.get(i));
    }
    Ok(out)
}

/// Test-input filter φ: which test rows are eligible for CFD search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhiMode {
    /// Pass inputs whose prediction is invariant to the protected attribute.
    InferenceFair,
    /// Pass inputs belonging to the configured protected group.
    GroupMembership,
    Always,
}

/// Training-row filter ψ: which labels may be flipped for a given test input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PsiMode {
    /// Rows sharing the input's protected group whose label equals the
    /// model's prediction for the input.
    SameGroupAndPrediction,
    SameGroup,
    All,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FilterConfig {
    pub phi: PhiMode,
    pub psi: PsiMode,
    /// Protected-group token for `GroupMembership`.
    pub group_token: Option<String>,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            phi: PhiMode::InferenceFair,
            psi: PsiMode::SameGroupAndPrediction,
            group_token: None,
        }
    }
}

impl fmt::Display for PhiMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            PhiMode::InferenceFair => "inference_fair",
            PhiMode::GroupMembership => "group_membership",
            PhiMode::Always => "always",
        };
        f.write_str(s)
    }
}

impl fmt::Display for PsiMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            PsiMode::SameGroupAndPrediction => "same_group_and_prediction",
            PsiMode::SameGroup => "same_group",
            PsiMode::All => "all",
        };
        f.write_str(s)
    }
}

/// Evaluates φ for one embedded input.
pub fn phi_passes(cfg: &FilterConfig, d: &Dataset, model: &MlpModel, x: &Vector) -> Result<bool> {
    match cfg.phi {
        PhiMode::Always => Ok(true),
        PhiMode::GroupMembership => {
            let token = cfg.group_token.as_ref().ok_or_else(|| {
                Error::Config("phi = group_membership requires a group token".into())
            })?;
            let g = d.feature_map.protected()?;
            let t = g
                .tokens
                .iter()
                .position(|tok| tok == token)
                .ok_or_else(|| {
                    Error::Config(format!(
                        "group token '{token}' not in protected vocabulary {:?}",
                        g.tokens
                    ))
                })?;
            Ok(d.protected_token_of(x)? == t)
        }
        PhiMode::InferenceFair => {
            let base = model.predict(x)?;
            for variant in d.protected_variants(x)? {
                if model.predict(&variant)? != base {
                    return Ok(false);
                }
            }
            Ok(true)
        }
    }
}

/// Evaluates ψ: the train rows whose labels may be flipped for input `x`,
/// as sorted global row indices.
pub fn psi_mask(cfg: &FilterConfig, d: &Dataset, model: &MlpModel, x: &Vector) -> Result<Vec<usize>> {
    let train = d.train_indices();
    let kept = match cfg.psi {
        PsiMode::All => train,
        PsiMode::SameGroup => {
            let t = d.protected_token_of(x)?;
            train
                .into_iter()
                .filter(|&i| {
                    d.protected_token_of(&d.row(i)).map(|ti| ti == t).unwrap_or(false)
                })
                .collect()
        }
        PsiMode::SameGroupAndPrediction => {
            let t = d.protected_token_of(x)?;
            let pred = model.predict(x)? as f64;
            train
                .into_iter()
                .filter(|&i| {
                    d.y.get(i) == pred
                        && d.protected_token_of(&d.row(i)).map(|ti| ti == t).unwrap_or(false)
                })
                .collect()
        }
    };
    log::debug!("psi mask kept {} train rows", kept.len());
    Ok(kept)
}
