//! Subject-level survival records, covariate encoding, CSV ingest and
//! cross-fitting fold assignment.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::spline::{self, place_knots};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("column `{0}` not found in header")]
    MissingColumn(String),
    #[error("row {row}: column `{column}` has non-numeric value {value:?}")]
    NonNumericValue { row: usize, column: String, value: String },
    #[error("row {row}: column `{column}` must be 0 or 1, got {value:?}")]
    InvalidIndicator { row: usize, column: String, value: String },
    #[error("row {row}: column `{column}` is missing")]
    MissingValue { row: usize, column: String },
    #[error("row {row}: follow-up time is negative")]
    NegativeTime { row: usize },
    #[error("row {row}: level {level:?} of `{column}` was not seen when the encoding was fitted")]
    UnknownLevel { row: usize, column: String, level: String },
    #[error("covariate `{column}` needs numeric values for its encoding")]
    EncodingMismatch { column: String },
    #[error("cannot split {n} subjects into {k} folds")]
    KTooLarge { n: usize, k: usize },
    #[error("invalid design spec: {0}")]
    InvalidSpec(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

/// Treatment arm. `Treated` is coded 1 and `Control` 0 on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Arm {
    Control,
    Treated,
}

impl Arm {
    pub const BOTH: [Arm; 2] = [Arm::Control, Arm::Treated];

    #[inline]
    pub fn index(self) -> usize {
        match self {
            Arm::Control => 0,
            Arm::Treated => 1,
        }
    }

    #[inline]
    pub fn other(self) -> Arm {
        match self {
            Arm::Control => Arm::Treated,
            Arm::Treated => Arm::Control,
        }
    }

    pub fn from_index(i: usize) -> Arm {
        if i == 0 {
            Arm::Control
        } else {
            Arm::Treated
        }
    }
}

impl From<Arm> for u8 {
    fn from(a: Arm) -> u8 {
        a.index() as u8
    }
}

impl TryFrom<u8> for Arm {
    type Error = String;
    fn try_from(v: u8) -> Result<Self, Self::Error> {
        match v {
            0 => Ok(Arm::Control),
            1 => Ok(Arm::Treated),
            other => Err(format!("treatment must be 0 or 1, got {other}")),
        }
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.index())
    }
}

/// One subject: encoded covariates, treatment, observed follow-up
/// `min(Y, C)` and whether the failure was observed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalRecord {
    pub covariates: Vec<f64>,
    pub treatment: Arm,
    pub time: f64,
    pub event: bool,
}

impl SurvivalRecord {
    /// Apply administrative truncation at `tau_dagger`: later follow-up is
    /// censored at the truncation time.
    pub fn truncated(&self, tau_dagger: f64) -> SurvivalRecord {
        if self.time > tau_dagger {
            SurvivalRecord {
                covariates: self.covariates.clone(),
                treatment: self.treatment,
                time: tau_dagger,
                event: false,
            }
        } else {
            self.clone()
        }
    }
}

/// Analysis settings shared by the estimator, bootstrap and CLI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudyConfig {
    /// Analysis horizon τ.
    pub tau: f64,
    /// Administrative truncation τ† (> τ).
    pub tau_dagger: f64,
    /// Evaluation times in `[0, τ]`, ascending.
    pub s_grid: Vec<f64>,
    /// Sensitivity values for the control arm.
    pub gamma0: Vec<f64>,
    /// Sensitivity values for the treated arm.
    pub gamma1: Vec<f64>,
    pub folds: usize,
    /// Kernel bandwidth; `None` selects `σ̂_T · n^{-1/5}` per fitted model.
    pub bandwidth: Option<f64>,
    pub trunc_percentile: f64,
    /// Number of midpoints covering `(0, τ†)`.
    pub grid_size: usize,
    /// Fitted treatment probabilities are clipped to `[floor, 1 − floor]`.
    pub propensity_floor: f64,
    pub seed: u64,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            tau: 130.0,
            tau_dagger: 150.0,
            s_grid: vec![24.0, 60.0, 120.0],
            gamma0: vec![0.0],
            gamma1: vec![0.0],
            folds: 5,
            bandwidth: None,
            trunc_percentile: 0.995,
            grid_size: 200,
            propensity_floor: 0.01,
            seed: 1,
        }
    }
}

impl StudyConfig {
    pub fn gammas(&self, arm: Arm) -> &[f64] {
        match arm {
            Arm::Control => &self.gamma0,
            Arm::Treated => &self.gamma1,
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: String| Err(DataError::InvalidConfig(m));
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return bad(format!("tau must be positive, got {}", self.tau));
        }
        if !(self.tau_dagger.is_finite() && self.tau_dagger > self.tau) {
            return bad(format!("tau_dagger ({}) must exceed tau ({})", self.tau_dagger, self.tau));
        }
        if self.s_grid.is_empty() {
            return bad("s_grid is empty".into());
        }
        if self.s_grid.iter().any(|&s| !(0.0..=self.tau).contains(&s)) {
            return bad(format!("s_grid must lie in [0, {}]", self.tau));
        }
        if self.s_grid.windows(2).any(|w| w[0] >= w[1]) {
            return bad("s_grid must be strictly ascending".into());
        }
        if self.gamma0.iter().chain(&self.gamma1).any(|g| !g.is_finite()) {
            return bad("gamma values must be finite".into());
        }
        if self.folds < 2 {
            return bad(format!("need at least 2 folds, got {}", self.folds));
        }
        if let Some(b) = self.bandwidth {
            if !(b.is_finite() && b > 0.0) {
                return bad(format!("bandwidth must be positive, got {b}"));
            }
        }
        if !(self.trunc_percentile > 0.0 && self.trunc_percentile <= 1.0) {
            return bad(format!("trunc_percentile must be in (0, 1], got {}", self.trunc_percentile));
        }
        if !(self.propensity_floor >= 0.0 && self.propensity_floor < 0.5) {
            return bad(format!("propensity_floor must be in [0, 0.5), got {}", self.propensity_floor));
        }
        if self.grid_size < 10 {
            return bad(format!("grid_size must be at least 10, got {}", self.grid_size));
        }
        Ok(())
    }
}

/// How one covariate enters the design row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "encoding", rename_all = "snake_case")]
pub enum Encoding {
    Identity,
    /// Reference-coded indicators. The reference defaults to the most
    /// frequent level.
    Categorical {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reference: Option<String>,
    },
    /// Natural cubic spline; knots default to sample quantiles.
    Spline {
        #[serde(default = "default_df")]
        df: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        knots: Option<Vec<f64>>,
    },
}

fn default_df() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateSpec {
    pub name: String,
    #[serde(flatten)]
    pub encoding: Encoding,
}

/// Column roles of an input table, serialised as JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignSpec {
    pub time: String,
    pub event: String,
    pub treatment: String,
    #[serde(default)]
    pub covariates: Vec<CovariateSpec>,
}

impl DesignSpec {
    pub fn from_json(text: &str) -> Result<Self, DataError> {
        let spec: DesignSpec =
            serde_json::from_str(text).map_err(|e| DataError::InvalidSpec(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let mut seen = std::collections::HashSet::new();
        for c in &self.covariates {
            if !seen.insert(c.name.as_str()) {
                return Err(DataError::InvalidSpec(format!("covariate `{}` listed twice", c.name)));
            }
            if let Encoding::Spline { knots: Some(k), .. } = &c.encoding {
                if k.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(DataError::InvalidSpec(format!(
                        "knots for `{}` must be strictly increasing",
                        c.name
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Raw values of one covariate column.
#[derive(Debug, Clone, PartialEq)]
pub enum CovariateColumn {
    Numeric(Vec<f64>),
    Levels(Vec<String>),
}

impl CovariateColumn {
    pub fn len(&self) -> usize {
        match self {
            CovariateColumn::Numeric(v) => v.len(),
            CovariateColumn::Levels(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, idx: &[usize]) -> CovariateColumn {
        match self {
            CovariateColumn::Numeric(v) => CovariateColumn::Numeric(idx.iter().map(|&i| v[i]).collect()),
            CovariateColumn::Levels(v) => {
                CovariateColumn::Levels(idx.iter().map(|&i| v[i].clone()).collect())
            }
        }
    }
}

/// Unencoded table: outcome columns plus named covariate columns.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RawData {
    pub time: Vec<f64>,
    pub event: Vec<bool>,
    pub treatment: Vec<Arm>,
    pub covariates: Vec<(String, CovariateColumn)>,
}

impl RawData {
    pub fn len(&self) -> usize {
        self.time.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time.is_empty()
    }

    fn column(&self, name: &str) -> Option<&CovariateColumn> {
        self.covariates.iter().find(|(n, _)| n == name).map(|(_, c)| c)
    }
}

/// Encoding of one covariate after fitting to data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FittedEncoding {
    Identity,
    Indicators { reference: String, levels: Vec<String> },
    Spline {
        /// Knots on the original covariate scale.
        knots: Vec<f64>,
        requested_df: usize,
        /// Tied quantiles removed knots; the spline has fewer columns than requested.
        reduced: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedCovariate {
    pub name: String,
    /// First design column of this covariate.
    pub offset: usize,
    pub width: usize,
    pub encoding: FittedEncoding,
}

/// Consecutive design columns that belong to one covariate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnGroup {
    pub name: String,
    pub start: usize,
    pub len: usize,
    /// Spline knots on the scaled axis the basis is evaluated on; `None`
    /// for linear components.
    pub scaled_knots: Option<Vec<f64>>,
}

impl ColumnGroup {
    /// One linear component per column.
    pub fn per_column(width: usize) -> Vec<ColumnGroup> {
        (0..width)
            .map(|j| ColumnGroup { name: format!("x{j}"), start: j, len: 1, scaled_knots: None })
            .collect()
    }
}

/// Fitted mapping from raw covariates to design rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    pub covariates: Vec<EncodedCovariate>,
    pub width: usize,
}

fn scale_for(knots: &[f64]) -> (f64, f64) {
    let lo = knots[0];
    let span = knots[knots.len() - 1] - lo;
    (lo, span)
}

impl Encoder {
    /// Fit knots and reference levels from `raw`.
    pub fn fit(spec: &DesignSpec, raw: &RawData) -> Result<Encoder, DataError> {
        spec.validate()?;
        let mut covariates = Vec::with_capacity(spec.covariates.len());
        let mut offset = 0;
        for c in &spec.covariates {
            let column = raw
                .column(&c.name)
                .ok_or_else(|| DataError::MissingColumn(c.name.clone()))?;
            let encoding = match (&c.encoding, column) {
                (Encoding::Identity, CovariateColumn::Numeric(_)) => FittedEncoding::Identity,
                (Encoding::Categorical { reference }, col) => {
                    let labels: Vec<String> = match col {
                        CovariateColumn::Levels(v) => v.clone(),
                        CovariateColumn::Numeric(v) => v.iter().map(|x| format!("{x}")).collect(),
                    };
                    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
                    for l in &labels {
                        *counts.entry(l.as_str()).or_default() += 1;
                    }
                    let reference = match reference {
                        Some(r) => {
                            if !counts.contains_key(r.as_str()) {
                                return Err(DataError::InvalidSpec(format!(
                                    "reference level {r:?} of `{}` does not occur",
                                    c.name
                                )));
                            }
                            r.clone()
                        }
                        // Most frequent level; BTreeMap order breaks ties lexically.
                        None => counts
                            .iter()
                            .fold(None::<(&str, usize)>, |best, (&l, &n)| match best {
                                Some((_, bn)) if bn >= n => best,
                                _ => Some((l, n)),
                            })
                            .map(|(l, _)| l.to_string())
                            .unwrap_or_default(),
                    };
                    let levels = counts.keys().filter(|&&l| l != reference).map(|l| l.to_string()).collect();
                    FittedEncoding::Indicators { reference, levels }
                }
                (Encoding::Spline { df, knots }, CovariateColumn::Numeric(v)) => match knots {
                    Some(k) => FittedEncoding::Spline { knots: k.clone(), requested_df: *df, reduced: false },
                    None => {
                        let kp = place_knots(v, *df);
                        FittedEncoding::Spline { knots: kp.knots, requested_df: *df, reduced: kp.reduced }
                    }
                },
                _ => return Err(DataError::EncodingMismatch { column: c.name.clone() }),
            };
            let width = match &encoding {
                FittedEncoding::Identity => 1,
                FittedEncoding::Indicators { levels, .. } => levels.len(),
                FittedEncoding::Spline { knots, .. } => knots.len().saturating_sub(1).max(1),
            };
            covariates.push(EncodedCovariate { name: c.name.clone(), offset, width, encoding });
            offset += width;
        }
        Ok(Encoder { covariates, width: offset })
    }

    /// Column groups for additive (per-covariate) models.
    pub fn groups(&self) -> Vec<ColumnGroup> {
        self.covariates
            .iter()
            .filter(|c| c.width > 0)
            .map(|c| {
                let scaled_knots = match &c.encoding {
                    FittedEncoding::Spline { knots, .. } if knots.len() >= 3 => {
                        let (lo, span) = scale_for(knots);
                        Some(knots.iter().map(|k| (k - lo) / span).collect())
                    }
                    _ => None,
                };
                ColumnGroup { name: c.name.clone(), start: c.offset, len: c.width, scaled_knots }
            })
            .collect()
    }

    /// Encode every row of `raw` into survival records. Rows are reported
    /// 1-based.
    pub fn encode(&self, raw: &RawData) -> Result<Vec<SurvivalRecord>, DataError> {
        let cols: Vec<&CovariateColumn> = self
            .covariates
            .iter()
            .map(|c| raw.column(&c.name).ok_or_else(|| DataError::MissingColumn(c.name.clone())))
            .collect::<Result<_, _>>()?;
        let mut out = Vec::with_capacity(raw.len());
        for i in 0..raw.len() {
            let mut row = Vec::with_capacity(self.width);
            for (c, col) in self.covariates.iter().zip(&cols) {
                self.encode_value(c, col, i, &mut row)?;
            }
            out.push(SurvivalRecord {
                covariates: row,
                treatment: raw.treatment[i],
                time: raw.time[i],
                event: raw.event[i],
            });
        }
        Ok(out)
    }

    fn encode_value(
        &self,
        c: &EncodedCovariate,
        col: &CovariateColumn,
        i: usize,
        row: &mut Vec<f64>,
    ) -> Result<(), DataError> {
        match (&c.encoding, col) {
            (FittedEncoding::Identity, CovariateColumn::Numeric(v)) => row.push(v[i]),
            (FittedEncoding::Indicators { reference, levels }, col) => {
                let label = match col {
                    CovariateColumn::Levels(v) => v[i].clone(),
                    CovariateColumn::Numeric(v) => format!("{}", v[i]),
                };
                if label != *reference && !levels.contains(&label) {
                    return Err(DataError::UnknownLevel { row: i + 1, column: c.name.clone(), level: label });
                }
                row.extend(levels.iter().map(|l| if *l == label { 1.0 } else { 0.0 }));
            }
            (FittedEncoding::Spline { knots, .. }, CovariateColumn::Numeric(v)) => {
                if knots.len() >= 3 {
                    let (lo, span) = scale_for(knots);
                    let scaled: Vec<f64> = knots.iter().map(|k| (k - lo) / span).collect();
                    spline::basis_into((v[i] - lo) / span, &scaled, row);
                } else {
                    row.push(v[i]);
                }
            }
            _ => return Err(DataError::EncodingMismatch { column: c.name.clone() }),
        }
        Ok(())
    }

    /// Names of the design columns, in order.
    pub fn column_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.width);
        for c in &self.covariates {
            match &c.encoding {
                FittedEncoding::Identity => names.push(c.name.clone()),
                FittedEncoding::Indicators { levels, .. } => {
                    names.extend(levels.iter().map(|l| format!("{}[{}]", c.name, l)))
                }
                FittedEncoding::Spline { .. } => {
                    names.extend((0..c.width).map(|j| format!("{}[ns{}]", c.name, j + 1)))
                }
            }
        }
        names
    }
}

/// Encoded records together with the encoding that produced them.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub records: Vec<SurvivalRecord>,
    pub encoder: Encoder,
}

impl Dataset {
    pub fn from_raw(spec: &DesignSpec, raw: &RawData) -> Result<Dataset, DataError> {
        let encoder = Encoder::fit(spec, raw)?;
        let records = encoder.encode(raw)?;
        Ok(Dataset { records, encoder })
    }
}

fn parse_number(field: &str, row: usize, column: &str) -> Result<f64, DataError> {
    let trimmed = field.trim();
    if trimmed.is_empty() || trimmed.eq_ignore_ascii_case("na") {
        return Err(DataError::MissingValue { row, column: column.to_string() });
    }
    trimmed
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| DataError::NonNumericValue { row, column: column.to_string(), value: field.to_string() })
}

fn parse_indicator(field: &str, row: usize, column: &str) -> Result<bool, DataError> {
    let v = parse_number(field, row, column)?;
    if v == 0.0 {
        Ok(false)
    } else if v == 1.0 {
        Ok(true)
    } else {
        Err(DataError::InvalidIndicator { row, column: column.to_string(), value: field.to_string() })
    }
}

/// Read raw columns named by `spec` from a CSV file with a header row.
pub fn read_csv(path: &Path, spec: &DesignSpec) -> Result<RawData, DataError> {
    let file = std::fs::File::open(path)
        .map_err(|source| DataError::Io { path: path.display().to_string(), source })?;
    read_csv_from(file, spec)
}

pub fn read_csv_from<R: std::io::Read>(reader: R, spec: &DesignSpec) -> Result<RawData, DataError> {
    spec.validate()?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers()?.clone();
    let find = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::MissingColumn(name.to_string()))
    };
    let time_col = find(&spec.time)?;
    let event_col = find(&spec.event)?;
    let treat_col = find(&spec.treatment)?;
    let cov_cols: Vec<usize> = spec.covariates.iter().map(|c| find(&c.name)).collect::<Result<_, _>>()?;

    let mut raw = RawData::default();
    let mut cov_values: Vec<CovariateColumn> = spec
        .covariates
        .iter()
        .map(|c| match c.encoding {
            Encoding::Categorical { .. } => CovariateColumn::Levels(Vec::new()),
            _ => CovariateColumn::Numeric(Vec::new()),
        })
        .collect();

    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        let get = |col: usize| rec.get(col).unwrap_or("");
        let time = parse_number(get(time_col), row, &spec.time)?;
        if time < 0.0 {
            return Err(DataError::NegativeTime { row });
        }
        let event = parse_indicator(get(event_col), row, &spec.event)?;
        let treated = parse_indicator(get(treat_col), row, &spec.treatment)?;
        for ((c, &col), values) in spec.covariates.iter().zip(&cov_cols).zip(cov_values.iter_mut()) {
            let field = get(col);
            match values {
                CovariateColumn::Numeric(v) => v.push(parse_number(field, row, &c.name)?),
                CovariateColumn::Levels(v) => {
                    if field.is_empty() {
                        return Err(DataError::MissingValue { row, column: c.name.clone() });
                    }
                    v.push(field.to_string());
                }
            }
        }
        raw.time.push(time);
        raw.event.push(event);
        raw.treatment.push(if treated { Arm::Treated } else { Arm::Control });
    }
    raw.covariates = spec.covariates.iter().map(|c| c.name.clone()).zip(cov_values).collect();
    Ok(raw)
}

/// Parse and encode a CSV file in one step.
pub fn load_csv(path: &Path, spec: &DesignSpec) -> Result<Dataset, DataError> {
    let raw = read_csv(path, spec)?;
    Dataset::from_raw(spec, &raw)
}

/// Cross-fitting split: `fold_of[i]` is the (0-based) fold of subject `i`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub k: usize,
    pub fold_of: Vec<usize>,
}

impl FoldAssignment {
    pub fn new(k: usize, fold_of: Vec<usize>) -> Result<FoldAssignment, DataError> {
        if k < 2 || fold_of.iter().any(|&f| f >= k) {
            return Err(DataError::InvalidConfig(format!("fold ids must lie in 0..{k} with k >= 2")));
        }
        Ok(FoldAssignment { k, fold_of })
    }

    pub fn len(&self) -> usize {
        self.fold_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fold_of.is_empty()
    }

    pub fn members(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_of.len()).filter(|&i| self.fold_of[i] == fold).collect()
    }

    pub fn complement(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_of.len()).filter(|&i| self.fold_of[i] != fold).collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &f in &self.fold_of {
            s[f] += 1;
        }
        s
    }
}

/// Shuffle `0..n` with a seeded generator and cut the permutation into `k`
/// blocks whose sizes differ by at most one.
pub fn assign_folds(n: usize, k: usize, seed: u64) -> Result<FoldAssignment, DataError> {
    if k < 2 {
        return Err(DataError::InvalidConfig(format!("need at least 2 folds, got {k}")));
    }
    if k > n {
        return Err(DataError::KTooLarge { n, k });
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let base = n / k;
    let extra = n % k;
    let mut fold_of = vec![0; n];
    let mut pos = 0;
    for fold in 0..k {
        let size = base + usize::from(fold < extra);
        for &subject in &perm[pos..pos + size] {
            fold_of[subject] = fold;
        }
        pos += size;
    }
    Ok(FoldAssignment { k, fold_of })
}
