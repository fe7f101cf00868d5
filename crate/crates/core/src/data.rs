//! Core record types and long-format CSV ingestion.
//!
//! Experiment data arrives as one row per measurement:
//!
//! ```text
//! treatment,individual,feature,value
//! 20ppm,p1,dry_weight,3.41
//! 20ppm,p1,calcium,12.9
//! ```
//!
//! Treatments keep the order of their first appearance in the file, features
//! likewise. Individuals are identified by their `individual` value, so the
//! row order within a treatment never changes the parsed table.

use std::cmp::Ordering;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{BtmeError, Result};

const HEADER: [&str; 4] = ["treatment", "individual", "feature", "value"];

/// What counts as ideal for one feature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Goal {
    Maximize,
    Minimize,
    Range { a: f64, b: f64 },
}

/// How a measurement's distance from the ideal is penalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviationMode {
    #[default]
    Symmetric,
    /// Only shortfalls below the ideal count; overshoot is a zero deviation.
    PenalizeBelowOnly,
    /// Only excess above the ideal counts.
    PenalizeAboveOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub goal: Goal,
    pub importance: f64,
    pub alpha: f64,
    pub deviation: DeviationMode,
}

impl FeatureSpec {
    pub fn new(name: impl Into<String>, goal: Goal) -> Self {
        Self {
            name: name.into(),
            goal,
            importance: 1.0,
            alpha: 1.0,
            deviation: DeviationMode::Symmetric,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if let Goal::Range { a, b } = self.goal {
            if !(a.is_finite() && b.is_finite() && a < b) {
                problems.push(format!("feature `{}`: range requires a < b (got {a}, {b})", self.name));
            }
        }
        if !(self.importance.is_finite() && self.importance > 0.0) {
            problems.push(format!("feature `{}`: importance must be > 0", self.name));
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            problems.push(format!("feature `{}`: alpha must be > 0", self.name));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(BtmeError::Validation(problems))
        }
    }
}

/// Raw measurements for one treatment: `values[i][j]` is individual `i`, feature `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct TreatmentBlock {
    pub label: String,
    pub individuals: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl TreatmentBlock {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentTable {
    pub features: Vec<String>,
    pub treatments: Vec<TreatmentBlock>,
}

impl ExperimentTable {
    /// Builds a table from nested values, naming individuals `1..=n_k`.
    pub fn from_values(treatments: Vec<String>, features: Vec<String>, values: Vec<Vec<Vec<f64>>>) -> Self {
        let treatments = treatments
            .into_iter()
            .zip(values)
            .map(|(label, values)| TreatmentBlock {
                label,
                individuals: (1..=values.len()).map(|i| i.to_string()).collect(),
                values,
            })
            .collect();
        Self { features, treatments }
    }

    pub fn num_treatments(&self) -> usize {
        self.treatments.len()
    }

    pub fn num_features(&self) -> usize {
        self.features.len()
    }

    pub fn sample_sizes(&self) -> Vec<usize> {
        self.treatments.iter().map(TreatmentBlock::len).collect()
    }

    pub fn treatment_labels(&self) -> Vec<String> {
        self.treatments.iter().map(|t| t.label.clone()).collect()
    }

    /// All measurements of feature `j`, pooled over treatments.
    pub fn feature_column(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        self.treatments
            .iter()
            .flat_map(move |t| t.values.iter().map(move |row| row[j]))
    }

    /// Checks every table invariant, reporting one diagnostic per violation.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        let m = self.features.len();
        if self.treatments.len() < 2 {
            problems.push("need at least two treatments".to_string());
        }
        if m == 0 {
            problems.push("need at least one feature".to_string());
        }
        if let Some(dup) = first_duplicate(self.features.iter()) {
            problems.push(format!("duplicate feature name `{dup}`"));
        }
        if let Some(dup) = first_duplicate(self.treatments.iter().map(|t| &t.label)) {
            problems.push(format!("duplicate treatment label `{dup}`"));
        }
        for t in &self.treatments {
            if t.values.is_empty() {
                problems.push(format!("treatment `{}` has no individuals", t.label));
            }
            if t.individuals.len() != t.values.len() {
                problems.push(format!(
                    "treatment `{}`: {} individual ids for {} rows",
                    t.label,
                    t.individuals.len(),
                    t.values.len()
                ));
            }
            for (i, row) in t.values.iter().enumerate() {
                let id = t.individuals.get(i).map(String::as_str).unwrap_or("?");
                if row.len() != m {
                    problems.push(format!(
                        "treatment `{}` individual `{id}`: expected {m} values, found {}",
                        t.label,
                        row.len()
                    ));
                    continue;
                }
                for (j, v) in row.iter().enumerate() {
                    if !v.is_finite() {
                        problems.push(format!(
                            "non-finite value {v} at treatment `{}` individual `{id}` feature `{}`",
                            t.label, self.features[j]
                        ));
                    }
                }
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(BtmeError::Validation(problems))
        }
    }

    /// Writes the table back out in the long CSV format it was parsed from.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("treatment,individual,feature,value\n");
        for t in &self.treatments {
            for (id, row) in t.individuals.iter().zip(&t.values) {
                for (name, v) in self.features.iter().zip(row) {
                    out.push_str(&format!(
                        "{},{},{},{}\n",
                        csv_field(&t.label),
                        csv_field(id),
                        csv_field(name),
                        v
                    ));
                }
            }
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn first_duplicate<'a, I: Iterator<Item = &'a String>>(items: I) -> Option<&'a String> {
    let mut seen = std::collections::HashSet::new();
    items.into_iter().find(|s| !seen.insert(s.as_str()))
}

/// Integer-looking ids sort numerically, everything else lexically after them.
fn individual_order(a: &str, b: &str) -> Ordering {
    match (a.parse::<i64>(), b.parse::<i64>()) {
        (Ok(x), Ok(y)) => x.cmp(&y),
        (Ok(_), Err(_)) => Ordering::Less,
        (Err(_), Ok(_)) => Ordering::Greater,
        (Err(_), Err(_)) => a.cmp(b),
    }
}

/// Parses the long-format `treatment,individual,feature,value` CSV.
pub fn parse_experiment_csv(text: &str) -> Result<ExperimentTable> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());

    let header = reader.headers()?.clone();
    let found: Vec<&str> = header.iter().collect();
    if found != HEADER {
        return Err(BtmeError::Parse {
            line: 1,
            message: format!("expected header `{}`, found `{}`", HEADER.join(","), found.join(",")),
        });
    }

    let mut treatment_order: Vec<String> = Vec::new();
    let mut feature_order: Vec<String> = Vec::new();
    let mut feature_index: HashMap<String, usize> = HashMap::new();
    // treatment -> individual -> feature index -> value
    let mut cells: HashMap<String, HashMap<String, HashMap<usize, f64>>> = HashMap::new();

    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != 4 {
            return Err(BtmeError::Parse {
                line,
                message: format!("expected 4 fields, found {}", record.len()),
            });
        }
        let (treatment, individual, feature, raw) = (&record[0], &record[1], &record[2], &record[3]);
        let value: f64 = raw.parse().map_err(|_| BtmeError::Parse {
            line,
            message: format!("non-numeric value `{raw}`"),
        })?;
        if !cells.contains_key(treatment) {
            treatment_order.push(treatment.to_string());
        }
        let j = *feature_index.entry(feature.to_string()).or_insert_with(|| {
            feature_order.push(feature.to_string());
            feature_order.len() - 1
        });
        let slot = cells
            .entry(treatment.to_string())
            .or_default()
            .entry(individual.to_string())
            .or_default();
        if slot.insert(j, value).is_some() {
            return Err(BtmeError::Parse {
                line,
                message: format!(
                    "duplicate row for treatment `{treatment}` individual `{individual}` feature `{feature}`"
                ),
            });
        }
    }

    if treatment_order.len() < 2 {
        return Err(BtmeError::Validation(vec!["need at least two treatments".to_string()]));
    }

    let m = feature_order.len();
    let mut treatments = Vec::with_capacity(treatment_order.len());
    for label in treatment_order {
        let mut by_individual = cells.remove(&label).unwrap_or_default();
        let mut ids: Vec<String> = by_individual.keys().cloned().collect();
        ids.sort_by(|a, b| individual_order(a, b));
        let mut values = Vec::with_capacity(ids.len());
        for id in &ids {
            let row = by_individual.remove(id).unwrap_or_default();
            let mut dense = Vec::with_capacity(m);
            for (j, name) in feature_order.iter().enumerate() {
                match row.get(&j) {
                    Some(v) => dense.push(*v),
                    None => {
                        return Err(BtmeError::Validation(vec![format!(
                            "incomplete individual: treatment `{label}` individual `{id}` has no value for feature `{name}`"
                        )]))
                    }
                }
            }
            values.push(dense);
        }
        treatments.push(TreatmentBlock {
            label,
            individuals: ids,
            values,
        });
    }

    let table = ExperimentTable {
        features: feature_order,
        treatments,
    };
    table.validate()?;
    Ok(table)
}

/// Resolved ideal value per feature.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdealProfile {
    pub ideal: Vec<f64>,
}

/// Nonnegative deviations, shaped exactly like the source table's values.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviationTable {
    pub values: Vec<Vec<Vec<f64>>>,
}

impl DeviationTable {
    pub fn num_treatments(&self) -> usize {
        self.values.len()
    }

    pub fn num_features(&self) -> usize {
        self.values
            .iter()
            .flat_map(|t| t.first())
            .map(Vec::len)
            .next()
            .unwrap_or(0)
    }

    pub fn sample_sizes(&self) -> Vec<usize> {
        self.values.iter().map(Vec::len).collect()
    }

    /// Deviations of treatment `k` on feature `j`.
    pub fn column(&self, k: usize, j: usize) -> impl Iterator<Item = f64> + '_ {
        self.values[k].iter().map(move |row| row[j])
    }
}

/// Counts `y[j][r][s]`: how often an individual of `r` deviated strictly less
/// than an individual of `s` on feature `j`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ComparisonArray {
    num_features: usize,
    num_treatments: usize,
    counts: Vec<u64>,
    sample_sizes: Vec<usize>,
}

impl ComparisonArray {
    pub fn zeros(num_features: usize, sample_sizes: Vec<usize>) -> Self {
        let k = sample_sizes.len();
        Self {
            num_features,
            num_treatments: k,
            counts: vec![0; num_features * k * k],
            sample_sizes,
        }
    }

    /// Builds from nested `counts[j][r][s]`, checking every invariant.
    pub fn from_nested(counts: &[Vec<Vec<u64>>], sample_sizes: Vec<usize>) -> Result<Self> {
        let mut y = Self::zeros(counts.len(), sample_sizes);
        let k = y.num_treatments;
        for (j, block) in counts.iter().enumerate() {
            if block.len() != k || block.iter().any(|row| row.len() != k) {
                return Err(BtmeError::Shape(format!("feature {j}: expected a {k}x{k} block")));
            }
            for (r, row) in block.iter().enumerate() {
                for (s, &c) in row.iter().enumerate() {
                    y.set(j, r, s, c);
                }
            }
        }
        y.validate()?;
        Ok(y)
    }

    #[inline]
    fn index(&self, j: usize, r: usize, s: usize) -> usize {
        (j * self.num_treatments + r) * self.num_treatments + s
    }

    #[inline]
    pub fn get(&self, j: usize, r: usize, s: usize) -> u64 {
        self.counts[self.index(j, r, s)]
    }

    pub fn set(&mut self, j: usize, r: usize, s: usize, value: u64) {
        let i = self.index(j, r, s);
        self.counts[i] = value;
    }

    pub fn num_features(&self) -> usize {
        self.num_features
    }

    pub fn num_treatments(&self) -> usize {
        self.num_treatments
    }

    pub fn sample_sizes(&self) -> &[usize] {
        &self.sample_sizes
    }

    /// Number of individual pairs compared between `r` and `s`.
    pub fn trials(&self, r: usize, s: usize) -> u64 {
        (self.sample_sizes[r] * self.sample_sizes[s]) as u64
    }

    /// Pairs decided for neither side because the deviations were equal.
    pub fn ties(&self, j: usize, r: usize, s: usize) -> u64 {
        self.trials(r, s) - self.get(j, r, s) - self.get(j, s, r)
    }

    pub fn to_nested(&self) -> Vec<Vec<Vec<u64>>> {
        (0..self.num_features)
            .map(|j| {
                (0..self.num_treatments)
                    .map(|r| (0..self.num_treatments).map(|s| self.get(j, r, s)).collect())
                    .collect()
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.num_treatments < 2 {
            problems.push("need at least two treatments".to_string());
        }
        if self.num_features < 1 {
            problems.push("need at least one feature".to_string());
        }
        if let Some(k) = self.sample_sizes.iter().position(|&n| n == 0) {
            problems.push(format!("treatment {k} has sample size 0"));
        }
        for j in 0..self.num_features {
            for r in 0..self.num_treatments {
                if self.get(j, r, r) != 0 {
                    problems.push(format!("feature {j}: diagonal count y[{r}][{r}] must be 0"));
                }
                for s in (r + 1)..self.num_treatments {
                    let n = self.trials(r, s);
                    let (a, b) = (self.get(j, r, s), self.get(j, s, r));
                    if a.checked_add(b).is_none_or(|total| total > n) {
                        problems.push(format!(
                            "feature {j}: y[{r}][{s}] + y[{s}][{r}] = {a} + {b} exceeds {n} trials"
                        ));
                    }
                }
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(BtmeError::Validation(problems))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_table() {
        let t = parse_experiment_csv("treatment,individual,feature,value\nA,1,h,1.0\nB,1,h,2.0\n").unwrap();
        assert_eq!(t.num_treatments(), 2);
        assert_eq!(t.num_features(), 1);
        assert_eq!(t.sample_sizes(), vec![1, 1]);
    }

    #[test]
    fn missing_cell_is_incomplete_individual() {
        let csv = "treatment,individual,feature,value\n\
                   A,1,h,1\nA,1,w,2\nB,1,h,3\n";
        let err = parse_experiment_csv(csv).unwrap_err().to_string();
        assert!(err.contains("incomplete individual"), "{err}");
        assert!(err.contains("`w`"), "{err}");
    }

    #[test]
    fn non_numeric_and_duplicate_rows() {
        let err = parse_experiment_csv("treatment,individual,feature,value\nA,1,h,abc\nB,1,h,1\n").unwrap_err();
        assert!(matches!(err, BtmeError::Parse { line: 2, .. }), "{err}");

        let err = parse_experiment_csv("treatment,individual,feature,value\nA,1,h,1\nA,1,h,2\nB,1,h,1\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("duplicate row"), "{err}");
    }

    #[test]
    fn single_treatment_rejected() {
        let err = parse_experiment_csv("treatment,individual,feature,value\nA,1,h,1\nA,2,h,2\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("need at least two treatments"));
    }

    #[test]
    fn wrong_header() {
        let err = parse_experiment_csv("t,i,f,v\nA,1,h,1\n").unwrap_err();
        assert!(matches!(err, BtmeError::Parse { line: 1, .. }));
    }

    #[test]
    fn individual_order_does_not_matter() {
        let a = "treatment,individual,feature,value\nA,2,h,5\nA,10,h,7\nA,1,h,3\nB,1,h,0\n";
        let b = "treatment,individual,feature,value\nA,1,h,3\nB,1,h,0\nA,10,h,7\nA,2,h,5\n";
        let ta = parse_experiment_csv(a).unwrap();
        let tb = parse_experiment_csv(b).unwrap();
        assert_eq!(ta, tb);
        assert_eq!(ta.treatments[0].individuals, vec!["1", "2", "10"]);
    }

    #[test]
    fn validate_reports_each_problem() {
        let t = ExperimentTable::from_values(vec!["A".into()], vec!["h".into()], vec![vec![vec![f64::NAN]]]);
        let BtmeError::Validation(problems) = t.validate().unwrap_err() else {
            panic!("expected validation error")
        };
        assert_eq!(problems.len(), 2);
        assert!(problems[0].contains("need at least two treatments"));
        assert!(problems[1].contains("treatment `A` individual `1` feature `h`"));
    }

    #[test]
    fn validate_ok() {
        let t = ExperimentTable::from_values(
            vec!["A".into(), "B".into()],
            vec!["h".into()],
            vec![vec![vec![1.0]], vec![vec![2.0], vec![3.0]]],
        );
        t.validate().unwrap();
    }

    #[test]
    fn feature_spec_checks() {
        let mut f = FeatureSpec::new("h", Goal::Range { a: 4.0, b: 2.0 });
        assert!(f.validate().is_err());
        f.goal = Goal::Maximize;
        f.validate().unwrap();
        f.importance = 0.0;
        assert!(f.validate().is_err());
    }

    #[test]
    fn comparison_array_invariants() {
        let y = ComparisonArray::from_nested(&[vec![vec![0, 3], vec![1, 0]]], vec![2, 2]).unwrap();
        assert_eq!(y.ties(0, 0, 1), 0);
        assert_eq!(y.to_nested(), vec![vec![vec![0, 3], vec![1, 0]]]);
        assert!(ComparisonArray::from_nested(&[vec![vec![0, 4], vec![1, 0]]], vec![2, 2]).is_err());
        assert!(ComparisonArray::from_nested(&[vec![vec![1, 0], vec![0, 0]]], vec![2, 2]).is_err());
    }
}
