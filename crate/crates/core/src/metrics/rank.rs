use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One method's scores; every field must be present to be ranked.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodScores {
    pub name: String,
    pub accuracy: Option<f64>,
    pub macro_f1: Option<f64>,
    pub mad: Option<f64>,
}

impl MethodScores {
    pub fn new(name: impl Into<String>, accuracy: f64, macro_f1: f64, mad: f64) -> Self {
        MethodScores {
            name: name.into(),
            accuracy: Some(accuracy),
            macro_f1: Some(macro_f1),
            mad: Some(mad),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankRow {
    pub name: String,
    pub accuracy_rank: usize,
    pub macro_f1_rank: usize,
    pub mad_rank: usize,
    /// Mean of the three ranks.
    pub average: f64,
    /// Position of `average` among all methods, ties sharing the best place.
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankTable {
    pub rows: Vec<RankRow>,
}

/// `1 + #{values strictly better}` for every entry.
fn competition(values: &[i128], better: impl Fn(i128, i128) -> bool) -> Vec<usize> {
    values
        .iter()
        .map(|&v| 1 + values.iter().filter(|&&w| better(w, v)).count())
        .collect()
}

/// Rank every metric descending with shared places for ties, average the
/// three ranks, then place the methods by that average.
pub fn integrative_rank(methods: &[MethodScores]) -> Result<RankTable> {
    if methods.is_empty() {
        return Err(Error::Contract("ranking needs at least one method".into()));
    }
    let column = |metric: &str, get: fn(&MethodScores) -> Option<f64>| -> Result<Vec<usize>> {
        let values = methods
            .iter()
            .map(|m| match get(m) {
                Some(v) if v.is_finite() => Ok(v),
                _ => Err(Error::Contract(format!("method '{}' is missing metric '{metric}'", m.name))),
            })
            .collect::<Result<Vec<f64>>>()?;
        let ranks = values
            .iter()
            .map(|&v| 1 + values.iter().filter(|&&w| w > v).count())
            .collect();
        Ok(ranks)
    };
    let acc = column("accuracy", |m| m.accuracy)?;
    let f1 = column("macro_f1", |m| m.macro_f1)?;
    let mad = column("mad", |m| m.mad)?;
    let sums: Vec<i128> = (0..methods.len()).map(|i| (acc[i] + f1[i] + mad[i]) as i128).collect();
    let places = competition(&sums, |w, v| w < v);
    let rows = methods
        .iter()
        .enumerate()
        .map(|(i, m)| RankRow {
            name: m.name.clone(),
            accuracy_rank: acc[i],
            macro_f1_rank: f1[i],
            mad_rank: mad[i],
            average: sums[i] as f64 / 3.0,
            rank: places[i],
        })
        .collect();
    Ok(RankTable { rows })
}

impl RankTable {
    pub fn rank_of(&self, name: &str) -> Option<usize> {
        self.rows.iter().find(|r| r.name == name).map(|r| r.rank)
    }

    /// Aligned plain-text table.
    pub fn to_text(&self) -> String {
        let width = self.rows.iter().map(|r| r.name.len()).max().unwrap_or(0).max("method".len());
        let mut out = format!(
            "{:<width$}  {:>4}  {:>4}  {:>4}  {:>7}  {:>4}\n",
            "method", "acc", "f1", "mad", "average", "rank"
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{:<width$}  {:>4}  {:>4}  {:>4}  {:>7.3}  {:>4}\n",
                r.name, r.accuracy_rank, r.macro_f1_rank, r.mad_rank, r.average, r.rank
            ));
        }
        out
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        for row in &self.rows {
            writer.serialize(row).map_err(|e| Error::Data(e.to_string()))?;
        }
        let bytes = writer.into_inner().map_err(|e| Error::Data(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Data(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_and_dominant() {
        let t = integrative_rank(&[MethodScores::new("a", 0.1, 0.2, 3.0)]).unwrap();
        assert_eq!(t.rows[0].rank, 1);
        let t = integrative_rank(&[
            MethodScores::new("a", 0.5, 0.5, 5.0),
            MethodScores::new("b", 0.9, 0.9, 9.0),
            MethodScores::new("c", 0.5, 0.7, 1.0),
        ])
        .unwrap();
        assert_eq!(t.rank_of("b"), Some(1));
        assert_eq!(t.rows[0].accuracy_rank, 2);
        assert_eq!(t.rows[2].accuracy_rank, 2);
    }

    #[test]
    fn missing_metric_names_method() {
        let mut m = MethodScores::new("broken", 0.1, 0.2, 3.0);
        m.macro_f1 = None;
        let err = integrative_rank(&[m]).unwrap_err().to_string();
        assert!(err.contains("broken") && err.contains("macro_f1"), "{err}");
    }

    #[test]
    fn csv_has_header() {
        let t = integrative_rank(&[MethodScores::new("x", 1.0, 1.0, 1.0)]).unwrap();
        let csv = t.to_csv().unwrap();
        assert!(csv.starts_with("name,accuracy_rank,macro_f1_rank,mad_rank,average,rank\n"));
        assert!(t.to_text().contains("x"));
    }
}
