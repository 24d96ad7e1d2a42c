//! Observational data: loading, validation, fold plans and descriptive
//! summaries.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from;
use crate::stats::quantile_sorted;

/// Treatment arm.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Arm {
    Control,
    Treated,
}

impl Arm {
    pub const BOTH: [Arm; 2] = [Arm::Control, Arm::Treated];

    pub fn index(self) -> usize {
        match self {
            Arm::Control => 0,
            Arm::Treated => 1,
        }
    }

    pub fn other(self) -> Arm {
        match self {
            Arm::Control => Arm::Treated,
            Arm::Treated => Arm::Control,
        }
    }

    pub fn from_index(t: usize) -> Option<Arm> {
        match t {
            0 => Some(Arm::Control),
            1 => Some(Arm::Treated),
            _ => None,
        }
    }
}

impl TryFrom<u8> for Arm {
    type Error = String;
    fn try_from(v: u8) -> std::result::Result<Self, Self::Error> {
        Arm::from_index(v as usize).ok_or_else(|| format!("arm must be 0 or 1, got {v}"))
    }
}

impl From<Arm> for u8 {
    fn from(a: Arm) -> u8 {
        a.index() as u8
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.index())
    }
}

/// One observed unit `(X, T, Y)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub x: Vec<f64>,
    pub t: Arm,
    pub y: f64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Covariate,
    Treatment,
    Outcome,
    Ignore,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    #[default]
    Numeric,
    Categorical,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub role: Role,
    #[serde(default)]
    pub kind: ColumnKind,
    /// Reference level of a categorical covariate; defaults to the first
    /// level in sort order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
}

/// Column-role map for CSV input. Columns absent from the map are ignored.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub columns: BTreeMap<String, ColumnSpec>,
}

impl Schema {
    pub fn from_json(s: &str) -> Result<Schema> {
        Ok(serde_json::from_str(s)?)
    }

    fn single(&self, role: Role) -> Result<String> {
        let names: Vec<_> = self
            .columns
            .iter()
            .filter(|(_, c)| c.role == role)
            .map(|(n, _)| n.clone())
            .collect();
        match names.len() {
            1 => Ok(names.into_iter().next().unwrap()),
            0 => Err(Error::Schema(format!("schema names no {role:?} column"))),
            _ => Err(Error::Schema(format!("schema names several {role:?} columns: {names:?}"))),
        }
    }
}

/// A categorical source column expanded into indicators.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoricalGroup {
    pub name: String,
    /// All levels in sort order, reference included.
    pub levels: Vec<String>,
    pub reference: String,
    /// Covariate positions of the non-reference indicators, in level order.
    pub columns: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum CovariateKind {
    Numeric,
    Indicator { group: usize, level: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Covariate {
    pub name: String,
    pub kind: CovariateKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
enum Source {
    Numeric(usize),
    Categorical(usize),
}

/// Validated observational dataset. Immutable after construction.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    rows: Vec<Observation>,
    covariates: Vec<Covariate>,
    groups: Vec<CategoricalGroup>,
    sources: Vec<Source>,
    treatment_name: String,
    outcome_name: String,
}

fn parse_number(raw: &str, row: usize, col: &str) -> Result<f64> {
    let s = raw.trim();
    if s.is_empty() || s.eq_ignore_ascii_case("na") || s.eq_ignore_ascii_case("nan") {
        return Err(Error::Validation { row, msg: format!("missing value in column '{col}'") });
    }
    let v: f64 = s.parse().map_err(|_| Error::Validation {
        row,
        msg: format!("non-numeric value '{s}' in column '{col}'"),
    })?;
    if !v.is_finite() {
        return Err(Error::Validation { row, msg: format!("non-finite value in column '{col}'") });
    }
    Ok(v)
}

/// Numeric-aware ordering of categorical levels.
fn sort_levels(levels: &mut [String]) {
    let numeric: Option<Vec<f64>> = levels.iter().map(|l| l.parse::<f64>().ok()).collect();
    if numeric.is_some() {
        levels.sort_by(|a, b| a.parse::<f64>().unwrap().total_cmp(&b.parse::<f64>().unwrap()));
    } else {
        levels.sort();
    }
}

impl Dataset {
    /// Build an all-numeric dataset.
    pub fn new(covariate_names: Vec<String>, rows: Vec<Observation>) -> Result<Dataset> {
        let covariates = covariate_names
            .into_iter()
            .map(|name| Covariate { name, kind: CovariateKind::Numeric })
            .collect::<Vec<_>>();
        let sources = (0..covariates.len()).map(Source::Numeric).collect();
        let ds = Dataset {
            rows,
            covariates,
            groups: Vec::new(),
            sources,
            treatment_name: "treatment".into(),
            outcome_name: "outcome".into(),
        };
        ds.validate()?;
        Ok(ds)
    }

    fn validate(&self) -> Result<()> {
        if self.rows.is_empty() {
            return Err(Error::Validation { row: 0, msg: "dataset has no rows".into() });
        }
        let p = self.covariates.len();
        if p == 0 {
            return Err(Error::Schema("at least one covariate column is required".into()));
        }
        for (i, r) in self.rows.iter().enumerate() {
            if r.x.len() != p {
                return Err(Error::Shape { expected: p, got: r.x.len() });
            }
            if !r.y.is_finite() || r.x.iter().any(|v| !v.is_finite()) {
                return Err(Error::Validation { row: i, msg: "non-finite entry".into() });
            }
        }
        Ok(())
    }

    pub fn load_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<Dataset> {
        let f = std::fs::File::open(path.as_ref())?;
        Self::read_csv(f, schema)
    }

    /// Parse CSV text with a header row. Categorical covariates become
    /// indicator columns with the reference level dropped.
    pub fn read_csv<R: Read>(reader: R, schema: &Schema) -> Result<Dataset> {
        let treatment_name = schema.single(Role::Treatment)?;
        let outcome_name = schema.single(Role::Outcome)?;
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
        for name in schema.columns.keys() {
            if !header.contains(name) {
                return Err(Error::Schema(format!("column '{name}' not found in input header")));
            }
        }
        if !schema.columns.values().any(|c| c.role == Role::Covariate) {
            return Err(Error::Schema("schema names no covariate column".into()));
        }
        let col_of = |name: &str| header.iter().position(|h| h == name).unwrap();
        let t_col = col_of(&treatment_name);
        let y_col = col_of(&outcome_name);
        // covariate source columns in header order
        let cov_cols: Vec<(usize, &String, &ColumnSpec)> = header
            .iter()
            .enumerate()
            .filter_map(|(i, h)| {
                schema
                    .columns
                    .get(h)
                    .filter(|c| c.role == Role::Covariate)
                    .map(|c| (i, h, c))
            })
            .collect();

        let records: Vec<csv::StringRecord> = rdr.records().collect::<std::result::Result<_, _>>()?;
        // data rows are numbered from 1 (the header is row 0)
        let mut ts = Vec::with_capacity(records.len());
        let mut ys = Vec::with_capacity(records.len());
        for (i, rec) in records.iter().enumerate() {
            let row = i + 1;
            let t = parse_number(rec.get(t_col).unwrap_or(""), row, &treatment_name)?;
            let t = if t == 0.0 {
                Arm::Control
            } else if t == 1.0 {
                Arm::Treated
            } else {
                return Err(Error::Validation {
                    row,
                    msg: format!("treatment value {t} is not binary"),
                });
            };
            ts.push(t);
            ys.push(parse_number(rec.get(y_col).unwrap_or(""), row, &outcome_name)?);
        }

        let mut covariates = Vec::new();
        let mut groups = Vec::new();
        let mut sources = Vec::new();
        let mut columns: Vec<Vec<f64>> = Vec::new();
        for &(ci, name, spec) in &cov_cols {
            match spec.kind {
                ColumnKind::Numeric => {
                    let vals = records
                        .iter()
                        .enumerate()
                        .map(|(i, r)| parse_number(r.get(ci).unwrap_or(""), i + 1, name))
                        .collect::<Result<Vec<_>>>()?;
                    sources.push(Source::Numeric(covariates.len()));
                    covariates.push(Covariate { name: name.clone(), kind: CovariateKind::Numeric });
                    columns.push(vals);
                }
                ColumnKind::Categorical => {
                    let raw: Vec<String> = records
                        .iter()
                        .enumerate()
                        .map(|(i, r)| {
                            let s = r.get(ci).unwrap_or("").trim().to_string();
                            if s.is_empty() || s.eq_ignore_ascii_case("na") {
                                Err(Error::Validation {
                                    row: i + 1,
                                    msg: format!("missing value in column '{name}'"),
                                })
                            } else {
                                Ok(s)
                            }
                        })
                        .collect::<Result<_>>()?;
                    let mut levels: Vec<String> =
                        raw.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
                    sort_levels(&mut levels);
                    let reference = match &spec.reference {
                        Some(r) if levels.contains(r) => r.clone(),
                        Some(r) => {
                            return Err(Error::Schema(format!(
                                "reference level '{r}' does not occur in column '{name}'"
                            )))
                        }
                        None => levels[0].clone(),
                    };
                    let g = groups.len();
                    let mut cols = Vec::new();
                    for level in levels.iter().filter(|l| **l != reference) {
                        cols.push(covariates.len());
                        covariates.push(Covariate {
                            name: format!("{name}={level}"),
                            kind: CovariateKind::Indicator { group: g, level: level.clone() },
                        });
                        columns.push(raw.iter().map(|v| f64::from(u8::from(v == level))).collect());
                    }
                    groups.push(CategoricalGroup {
                        name: name.clone(),
                        levels,
                        reference,
                        columns: cols,
                    });
                    sources.push(Source::Categorical(g));
                }
            }
        }
        let rows = (0..records.len())
            .map(|i| Observation { x: columns.iter().map(|c| c[i]).collect(), t: ts[i], y: ys[i] })
            .collect();
        let ds = Dataset { rows, covariates, groups, sources, treatment_name, outcome_name };
        ds.validate()?;
        Ok(ds)
    }

    /// Schema under which [`Dataset::write_csv`] output reloads to `self`.
    pub fn schema(&self) -> Schema {
        let mut columns = BTreeMap::new();
        for s in &self.sources {
            match s {
                Source::Numeric(c) => {
                    columns.insert(
                        self.covariates[*c].name.clone(),
                        ColumnSpec { role: Role::Covariate, kind: ColumnKind::Numeric, reference: None },
                    );
                }
                Source::Categorical(g) => {
                    let g = &self.groups[*g];
                    columns.insert(
                        g.name.clone(),
                        ColumnSpec {
                            role: Role::Covariate,
                            kind: ColumnKind::Categorical,
                            reference: Some(g.reference.clone()),
                        },
                    );
                }
            }
        }
        columns.insert(
            self.treatment_name.clone(),
            ColumnSpec { role: Role::Treatment, kind: ColumnKind::Numeric, reference: None },
        );
        columns.insert(
            self.outcome_name.clone(),
            ColumnSpec { role: Role::Outcome, kind: ColumnKind::Numeric, reference: None },
        );
        Schema { columns }
    }

    /// Write source columns (categoricals collapsed back to their levels),
    /// then treatment, then outcome.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = self
            .sources
            .iter()
            .map(|s| match s {
                Source::Numeric(c) => self.covariates[*c].name.clone(),
                Source::Categorical(g) => self.groups[*g].name.clone(),
            })
            .collect();
        header.push(self.treatment_name.clone());
        header.push(self.outcome_name.clone());
        w.write_record(&header)?;
        for (i, r) in self.rows.iter().enumerate() {
            let mut rec: Vec<String> = self
                .sources
                .iter()
                .map(|s| match s {
                    Source::Numeric(c) => format!("{}", r.x[*c]),
                    Source::Categorical(g) => self.level_of(i, *g).to_string(),
                })
                .collect();
            rec.push(r.t.to_string());
            rec.push(format!("{}", r.y));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_csv_path(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    /// Level of categorical group `g` for row `i`.
    pub fn level_of(&self, i: usize, g: usize) -> &str {
        let grp = &self.groups[g];
        for &c in &grp.columns {
            if self.rows[i].x[c] == 1.0 {
                if let CovariateKind::Indicator { level, .. } = &self.covariates[c].kind {
                    return level;
                }
            }
        }
        &grp.reference
    }

    pub fn rows(&self) -> &[Observation] {
        &self.rows
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn p(&self) -> usize {
        self.covariates.len()
    }

    pub fn covariates(&self) -> &[Covariate] {
        &self.covariates
    }

    pub fn covariate_names(&self) -> Vec<String> {
        self.covariates.iter().map(|c| c.name.clone()).collect()
    }

    pub fn categorical_groups(&self) -> &[CategoricalGroup] {
        &self.groups
    }

    pub fn covariate_index(&self, name: &str) -> Option<usize> {
        self.covariates.iter().position(|c| c.name == name)
    }

    pub fn group_index(&self, name: &str) -> Option<usize> {
        self.groups.iter().position(|g| g.name == name)
    }

    pub fn treatment_name(&self) -> &str {
        &self.treatment_name
    }

    pub fn outcome_name(&self) -> &str {
        &self.outcome_name
    }

    pub fn arm_count(&self, t: Arm) -> usize {
        self.rows.iter().filter(|r| r.t == t).count()
    }

    pub fn arm_indices(&self, t: Arm) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.rows[i].t == t).collect()
    }

    /// Mean outcome among rows with `T = t`; NaN for an empty arm.
    pub fn arm_mean(&self, t: Arm) -> f64 {
        let (s, c) = self
            .rows
            .iter()
            .filter(|r| r.t == t)
            .fold((0.0, 0usize), |(s, c), r| (s + r.y, c + 1));
        s / c as f64
    }

    /// Rows at `indices` (repeats allowed), keeping all column metadata.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
            covariates: self.covariates.clone(),
            groups: self.groups.clone(),
            sources: self.sources.clone(),
            treatment_name: self.treatment_name.clone(),
            outcome_name: self.outcome_name.clone(),
        }
    }

    /// Same columns, new rows.
    pub fn with_rows(&self, rows: Vec<Observation>) -> Result<Dataset> {
        let ds = Dataset { rows, ..self.subset(&[]) };
        ds.validate()?;
        Ok(ds)
    }

    pub fn covariate_rows(&self) -> Vec<Vec<f64>> {
        self.rows.iter().map(|r| r.x.clone()).collect()
    }

    pub fn summary(&self) -> SummaryTable {
        empirical_summary(self)
    }
}

/// Assignment of rows to `k` folds.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub k: usize,
    /// Fold of each row, `0..k`.
    pub assignment: Vec<usize>,
    pub seed: u64,
}

impl SplitPlan {
    pub fn fold_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.assignment.len()).filter(|&i| self.assignment[i] == fold).collect()
    }

    pub fn training_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.assignment.len()).filter(|&i| self.assignment[i] != fold).collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &f in &self.assignment {
            s[f] += 1;
        }
        s
    }

    /// Check the plan fits `ds` and every fold holds both arms.
    pub fn validate_for(&self, ds: &Dataset) -> Result<()> {
        if self.assignment.len() != ds.n() {
            return Err(Error::InfeasibleSplit(format!(
                "plan covers {} rows, dataset has {}",
                self.assignment.len(),
                ds.n()
            )));
        }
        let mut seen = vec![[false; 2]; self.k];
        for (r, &f) in ds.rows().iter().zip(&self.assignment) {
            if f >= self.k {
                return Err(Error::InfeasibleSplit(format!("fold index {f} out of range")));
            }
            seen[f][r.t.index()] = true;
        }
        if let Some(f) = seen.iter().position(|s| !(s[0] && s[1])) {
            return Err(Error::InfeasibleSplit(format!("fold {f} lacks one treatment arm")));
        }
        Ok(())
    }
}

/// Treatment-stratified K-fold plan: each arm is shuffled under `seed`, the
/// treated rows are dealt round-robin first and the control rows continue
/// the same deal, so fold sizes differ by at most one and both arms spread
/// evenly.
pub fn make_folds(ds: &Dataset, k: usize, seed: u64) -> Result<SplitPlan> {
    let arms: Vec<Arm> = ds.rows().iter().map(|r| r.t).collect();
    let assignment = stratified_assignment(&arms, k, seed)?;
    Ok(SplitPlan { k, assignment, seed })
}

/// Fold index in `0..k` for each label, stratified as in [`make_folds`].
pub fn stratified_assignment(arms: &[Arm], k: usize, seed: u64) -> Result<Vec<usize>> {
    let n = arms.len();
    if k < 2 || k > n {
        return Err(Error::InfeasibleSplit(format!("need 2 <= K <= n, got K={k}, n={n}")));
    }
    let mut order = Vec::with_capacity(n);
    for t in [Arm::Treated, Arm::Control] {
        let mut idx: Vec<usize> = (0..n).filter(|&i| arms[i] == t).collect();
        if idx.len() < k {
            return Err(Error::InfeasibleSplit(format!(
                "arm {t} has {} observations, fewer than K={k}",
                idx.len()
            )));
        }
        let mut rng = rng_from(seed, &[0x464F_4C44, t.index() as u64]);
        idx.shuffle(&mut rng);
        order.extend(idx);
    }
    let mut assignment = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        assignment[i] = pos % k;
    }
    Ok(assignment)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NumericSummary {
    pub name: String,
    pub mean: f64,
    pub iqr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CategoricalSummary {
    pub name: String,
    /// `(level, percent)` in level order.
    pub levels: Vec<(String, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ArmSummary {
    pub arm: Arm,
    pub n: usize,
    pub outcome_mean: f64,
    pub numeric: Vec<NumericSummary>,
    pub categorical: Vec<CategoricalSummary>,
}

/// Covariate distribution by treatment arm, indexed by `Arm::index`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SummaryTable {
    pub arms: [ArmSummary; 2],
}

impl SummaryTable {
    /// Long-format CSV: `variable,statistic,treated,control`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["variable", "statistic", "treated", "control"])?;
        let [c, t] = &self.arms;
        w.write_record(["n", "count", &t.n.to_string(), &c.n.to_string()])?;
        w.write_record(["outcome", "mean", &t.outcome_mean.to_string(), &c.outcome_mean.to_string()])?;
        for (nt, nc) in t.numeric.iter().zip(&c.numeric) {
            w.write_record([&nt.name, "mean", &nt.mean.to_string(), &nc.mean.to_string()])?;
            w.write_record([&nt.name, "iqr", &nt.iqr.to_string(), &nc.iqr.to_string()])?;
        }
        for (gt, gc) in t.categorical.iter().zip(&c.categorical) {
            for ((level, pt), (_, pc)) in gt.levels.iter().zip(&gc.levels) {
                w.write_record([&gt.name, &format!("pct:{level}"), &pt.to_string(), &pc.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Per-arm counts, numeric means and IQRs, and categorical level
/// percentages.
pub fn empirical_summary(ds: &Dataset) -> SummaryTable {
    let summarize = |t: Arm| {
        let idx = ds.arm_indices(t);
        let numeric = ds
            .covariates
            .iter()
            .enumerate()
            .filter(|(_, c)| c.kind == CovariateKind::Numeric)
            .map(|(j, c)| {
                let mut v: Vec<f64> = idx.iter().map(|&i| ds.rows[i].x[j]).collect();
                v.sort_by(f64::total_cmp);
                let (mean, iqr) = if v.is_empty() {
                    (f64::NAN, f64::NAN)
                } else {
                    (
                        v.iter().sum::<f64>() / v.len() as f64,
                        quantile_sorted(&v, 0.75) - quantile_sorted(&v, 0.25),
                    )
                };
                NumericSummary { name: c.name.clone(), mean, iqr }
            })
            .collect();
        let categorical = ds
            .groups
            .iter()
            .enumerate()
            .map(|(g, grp)| {
                let levels = grp
                    .levels
                    .iter()
                    .map(|l| {
                        let hits = idx.iter().filter(|&&i| ds.level_of(i, g) == l).count();
                        (l.clone(), 100.0 * hits as f64 / idx.len() as f64)
                    })
                    .collect();
                CategoricalSummary { name: grp.name.clone(), levels }
            })
            .collect();
        ArmSummary { arm: t, n: idx.len(), outcome_mean: ds.arm_mean(t), numeric, categorical }
    };
    SummaryTable { arms: [summarize(Arm::Control), summarize(Arm::Treated)] }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn schema(json: &str) -> Schema {
        Schema::from_json(json).unwrap()
    }

    const BASIC: &str = r#"{"columns":{"age":{"role":"covariate"},"smoke":{"role":"treatment"},"bwt":{"role":"outcome"}}}"#;

    #[test]
    fn loads_three_rows() {
        let csv = "age,smoke,bwt\n24,1,3000\n31,0,3400\n28,0,3550.5\n";
        let ds = Dataset::read_csv(csv.as_bytes(), &schema(BASIC)).unwrap();
        assert_eq!(ds.n(), 3);
        assert_eq!(ds.p(), 1);
        assert_eq!(ds.rows()[0].t, Arm::Treated);
        assert_eq!(ds.rows()[2].y, 3550.5);
    }

    #[test]
    fn rejects_non_binary_treatment() {
        let csv = "age,smoke,bwt\n24,1,3000\n31,2,3400\n";
        let err = Dataset::read_csv(csv.as_bytes(), &schema(BASIC)).unwrap_err();
        assert!(matches!(err, Error::Validation { row: 2, .. }), "{err}");
    }

    #[test]
    fn rejects_non_numeric_outcome_and_missing_values() {
        let csv = "age,smoke,bwt\n24,1,heavy\n";
        assert!(matches!(
            Dataset::read_csv(csv.as_bytes(), &schema(BASIC)),
            Err(Error::Validation { .. })
        ));
        let csv = "age,smoke,bwt\n,1,3000\n";
        assert!(matches!(
            Dataset::read_csv(csv.as_bytes(), &schema(BASIC)),
            Err(Error::Validation { .. })
        ));
    }

    #[test]
    fn missing_column_is_schema_error() {
        let csv = "age,smoke\n24,1\n";
        assert!(matches!(Dataset::read_csv(csv.as_bytes(), &schema(BASIC)), Err(Error::Schema(_))));
    }

    #[test]
    fn categorical_expands_with_reference_dropped() {
        let s = schema(
            r#"{"columns":{"age":{"role":"covariate"},"edu":{"role":"covariate","kind":"categorical"},
                "smoke":{"role":"treatment"},"bwt":{"role":"outcome"},"id":{"role":"ignore"}}}"#,
        );
        let csv = "id,age,edu,smoke,bwt\n1,24,b,1,3000\n2,31,a,0,3400\n3,28,c,0,3550\n";
        let ds = Dataset::read_csv(csv.as_bytes(), &s).unwrap();
        assert_eq!(ds.p(), 3);
        assert_eq!(ds.covariate_names(), vec!["age", "edu=b", "edu=c"]);
        assert_eq!(ds.rows()[0].x, vec![24.0, 1.0, 0.0]);
        assert_eq!(ds.rows()[1].x, vec![31.0, 0.0, 0.0]);
        assert_eq!(ds.level_of(1, 0), "a");
    }

    fn toy(n_treated: usize, n_control: usize) -> Dataset {
        let rows = (0..n_treated + n_control)
            .map(|i| Observation {
                x: vec![i as f64],
                t: if i < n_treated { Arm::Treated } else { Arm::Control },
                y: i as f64,
            })
            .collect();
        Dataset::new(vec!["x".into()], rows).unwrap()
    }

    #[test]
    fn balanced_folds() {
        let plan = make_folds(&toy(5, 5), 5, 1).unwrap();
        assert_eq!(plan.fold_sizes(), vec![2; 5]);
        plan.validate_for(&toy(5, 5)).unwrap();
    }

    #[test]
    fn infeasible_when_arm_too_small() {
        assert!(matches!(make_folds(&toy(3, 7), 5, 1), Err(Error::InfeasibleSplit(_))));
        assert!(matches!(make_folds(&toy(3, 7), 1, 1), Err(Error::InfeasibleSplit(_))));
    }

    #[test]
    fn folds_are_deterministic() {
        let ds = toy(20, 30);
        assert_eq!(make_folds(&ds, 5, 9).unwrap(), make_folds(&ds, 5, 9).unwrap());
        assert_ne!(make_folds(&ds, 5, 9).unwrap(), make_folds(&ds, 5, 10).unwrap());
    }

    #[test]
    fn single_row_summary() {
        let ds = toy(1, 0);
        let s = empirical_summary(&ds);
        assert_eq!(s.arms[1].n, 1);
        assert_eq!(s.arms[1].numeric[0].iqr, 0.0);
        assert_eq!(s.arms[0].n, 0);
    }

    #[test]
    fn summary_percentages() {
        let s = schema(
            r#"{"columns":{"edu":{"role":"covariate","kind":"categorical"},
                "smoke":{"role":"treatment"},"bwt":{"role":"outcome"}}}"#,
        );
        let csv = "edu,smoke,bwt\na,1,1\nb,1,2\nb,1,3\na,0,4\n";
        let ds = Dataset::read_csv(csv.as_bytes(), &s).unwrap();
        let t = &empirical_summary(&ds).arms[1];
        assert_eq!(t.categorical[0].levels[0].0, "a");
        assert!((t.categorical[0].levels[0].1 - 100.0 / 3.0).abs() < 1e-12);
        assert!((t.outcome_mean - 2.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn folds_partition_and_stratify(n1 in 5usize..40, n0 in 5usize..60, k in 2usize..6, seed: u64) {
            let ds = toy(n1, n0);
            let plan = make_folds(&ds, k, seed).unwrap();
            let sizes = plan.fold_sizes();
            prop_assert_eq!(sizes.iter().sum::<usize>(), ds.n());
            let (mn, mx) = (*sizes.iter().min().unwrap(), *sizes.iter().max().unwrap());
            prop_assert!(mx - mn <= 1);
            plan.validate_for(&ds).unwrap();
            let global = n1 as f64 / ds.n() as f64;
            for f in 0..k {
                let rows = plan.fold_rows(f);
                let treated = rows.iter().filter(|&&i| ds.rows()[i].t == Arm::Treated).count();
                let frac = treated as f64 / rows.len() as f64;
                prop_assert!((frac - global).abs() < 1.0 / rows.len() as f64);
            }
        }

        #[test]
        fn csv_round_trip(
            rows in prop::collection::vec((-1e6f64..1e6, 0usize..3, any::<bool>(), -1e4f64..1e4), 1..30)
        ) {
            let s = schema(
                r#"{"columns":{"v":{"role":"covariate"},"g":{"role":"covariate","kind":"categorical"},
                    "t":{"role":"treatment"},"y":{"role":"outcome"}}}"#,
            );
            let mut text = String::from("v,g,t,y\n");
            for (v, g, t, y) in &rows {
                text.push_str(&format!("{v},{},{},{y}\n", ["lo", "mid", "hi"][*g], u8::from(*t)));
            }
            let ds = Dataset::read_csv(text.as_bytes(), &s).unwrap();
            let mut buf = Vec::new();
            ds.write_csv(&mut buf).unwrap();
            let again = Dataset::read_csv(buf.as_slice(), &ds.schema()).unwrap();
            prop_assert_eq!(again, ds);
        }
    }
}
