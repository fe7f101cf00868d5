//! Ideal profiles, deviation tables and the cross-treatment comparison counts.

use crate::data::{ComparisonArray, DeviationMode, DeviationTable, ExperimentTable, FeatureSpec, Goal, IdealProfile};
use crate::error::{BtmeError, Result};

/// Resolves each feature goal against the pooled data of all treatments.
pub fn build_ideal_profile(table: &ExperimentTable, specs: &[FeatureSpec]) -> Result<IdealProfile> {
    if specs.len() != table.num_features() {
        return Err(BtmeError::Shape(format!(
            "{} feature specs for {} features",
            specs.len(),
            table.num_features()
        )));
    }
    let ideal = specs
        .iter()
        .enumerate()
        .map(|(j, spec)| match spec.goal {
            Goal::Maximize => table.feature_column(j).fold(f64::NEG_INFINITY, f64::max),
            Goal::Minimize => table.feature_column(j).fold(f64::INFINITY, f64::min),
            Goal::Range { a, b } => (a + b) / 2.0,
        })
        .collect();
    Ok(IdealProfile { ideal })
}

#[inline]
pub fn deviation(ideal: f64, x: f64, mode: DeviationMode) -> f64 {
    match mode {
        DeviationMode::Symmetric => (ideal - x).abs(),
        DeviationMode::PenalizeBelowOnly => (ideal - x).max(0.0),
        DeviationMode::PenalizeAboveOnly => (x - ideal).max(0.0),
    }
}

pub fn compute_deviations(
    table: &ExperimentTable,
    profile: &IdealProfile,
    modes: &[DeviationMode],
) -> Result<DeviationTable> {
    let m = table.num_features();
    if profile.ideal.len() != m || modes.len() != m {
        return Err(BtmeError::Shape(format!(
            "profile has {} entries and {} deviation modes for {m} features",
            profile.ideal.len(),
            modes.len()
        )));
    }
    let values = table
        .treatments
        .iter()
        .map(|t| {
            t.values
                .iter()
                .map(|row| {
                    row.iter()
                        .zip(&profile.ideal)
                        .zip(modes)
                        .map(|((&x, &ideal), &mode)| deviation(ideal, x, mode))
                        .collect()
                })
                .collect()
        })
        .collect();
    Ok(DeviationTable { values })
}

/// Builds `y[j][r][s]`, the number of individual pairs `(a, b)` with
/// `D[r][a][j] < D[s][b][j]`. Ties count for neither side.
///
/// Each column of `s` is sorted once; every deviation of `r` then counts the
/// strictly larger entries by binary search.
pub fn count_comparisons(dev: &DeviationTable) -> ComparisonArray {
    let k = dev.num_treatments();
    let m = dev.num_features();
    let mut y = ComparisonArray::zeros(m, dev.sample_sizes());
    for j in 0..m {
        let sorted: Vec<Vec<f64>> = (0..k)
            .map(|t| {
                let mut col: Vec<f64> = dev.column(t, j).collect();
                col.sort_by(f64::total_cmp);
                col
            })
            .collect();
        for r in 0..k {
            for s in 0..k {
                if r == s {
                    continue;
                }
                let others = &sorted[s];
                let wins: usize = sorted[r]
                    .iter()
                    .map(|&x| others.len() - others.partition_point(|&v| v <= x))
                    .sum();
                y.set(j, r, s, wins as u64);
            }
        }
    }
    y
}

/// One entry of the tie diagnostic: pairs of individuals that no side won.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct TieCount {
    pub feature: usize,
    pub r: usize,
    pub s: usize,
    pub ties: u64,
    pub trials: u64,
}

pub fn tie_counts(y: &ComparisonArray) -> Vec<TieCount> {
    let k = y.num_treatments();
    let mut out = Vec::new();
    for j in 0..y.num_features() {
        for r in 0..k {
            for s in (r + 1)..k {
                out.push(TieCount {
                    feature: j,
                    r,
                    s,
                    ties: y.ties(j, r, s),
                    trials: y.trials(r, s),
                });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table_one_feature(cols: &[&[f64]]) -> ExperimentTable {
        ExperimentTable::from_values(
            (0..cols.len()).map(|k| format!("T{k}")).collect(),
            vec!["f".into()],
            cols.iter().map(|c| c.iter().map(|&v| vec![v]).collect()).collect(),
        )
    }

    fn devs(cols: &[&[f64]]) -> DeviationTable {
        DeviationTable {
            values: cols.iter().map(|c| c.iter().map(|&v| vec![v]).collect()).collect(),
        }
    }

    #[test]
    fn ideal_profile_goals() {
        let t = table_one_feature(&[&[1.0, 5.0], &[3.0]]);
        let max = build_ideal_profile(&t, &[FeatureSpec::new("f", Goal::Maximize)]).unwrap();
        assert_eq!(max.ideal, vec![5.0]);
        let min = build_ideal_profile(&t, &[FeatureSpec::new("f", Goal::Minimize)]).unwrap();
        assert_eq!(min.ideal, vec![1.0]);
        let mid = build_ideal_profile(&t, &[FeatureSpec::new("f", Goal::Range { a: 2.0, b: 4.0 })]).unwrap();
        assert_eq!(mid.ideal, vec![3.0]);
        assert!(build_ideal_profile(&t, &[]).is_err());
    }

    #[test]
    fn deviation_modes() {
        assert_eq!(deviation(5.0, 3.0, DeviationMode::Symmetric), 2.0);
        assert_eq!(deviation(5.0, 7.0, DeviationMode::Symmetric), 2.0);
        assert_eq!(deviation(5.0, 7.0, DeviationMode::PenalizeBelowOnly), 0.0);
        assert_eq!(deviation(5.0, 3.0, DeviationMode::PenalizeBelowOnly), 2.0);
        assert_eq!(deviation(5.0, 3.0, DeviationMode::PenalizeAboveOnly), 0.0);
        for mode in [
            DeviationMode::Symmetric,
            DeviationMode::PenalizeBelowOnly,
            DeviationMode::PenalizeAboveOnly,
        ] {
            assert_eq!(deviation(4.25, 4.25, mode), 0.0);
        }
    }

    #[test]
    fn compute_deviations_shape() {
        let t = table_one_feature(&[&[1.0, 5.0], &[3.0]]);
        let p = IdealProfile { ideal: vec![5.0] };
        let d = compute_deviations(&t, &p, &[DeviationMode::Symmetric]).unwrap();
        assert_eq!(d.values, vec![vec![vec![4.0], vec![0.0]], vec![vec![2.0]]]);
        assert!(compute_deviations(&t, &p, &[]).is_err());
    }

    #[test]
    fn counts_examples() {
        let y = count_comparisons(&devs(&[&[1.0, 2.0], &[3.0, 4.0]]));
        assert_eq!((y.get(0, 0, 1), y.get(0, 1, 0)), (4, 0));

        let y = count_comparisons(&devs(&[&[1.0], &[1.0]]));
        assert_eq!((y.get(0, 0, 1), y.get(0, 1, 0)), (0, 0));
        assert_eq!(y.ties(0, 0, 1), 1);

        // pairs (1,2) (1,3) (4,2) (4,3): r wins twice, s wins twice
        let y = count_comparisons(&devs(&[&[1.0, 4.0], &[2.0, 3.0]]));
        assert_eq!((y.get(0, 0, 1), y.get(0, 1, 0)), (2, 2));
        assert_eq!(y.get(0, 0, 0), 0);
    }

    #[test]
    fn tie_report_lists_upper_triangle() {
        let y = count_comparisons(&devs(&[&[1.0, 2.0], &[2.0], &[0.5]]));
        let ties = tie_counts(&y);
        assert_eq!(ties.len(), 3);
        assert_eq!(
            ties[0],
            TieCount {
                feature: 0,
                r: 0,
                s: 1,
                ties: 1,
                trials: 2
            }
        );
    }
}
