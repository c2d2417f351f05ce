//! Iris CSV ingestion: parsing, min-max normalization, one-hot labels and a
//! seeded stratified train/test split.

use std::path::Path;

use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::SeedableRng;

use crate::engine::derive_seed;
use crate::error::{Error, Result};
use crate::nn::DataSplit;

pub const FEATURES: usize = 4;
pub const CLASSES: usize = 3;
pub const SPECIES: [&str; CLASSES] = ["setosa", "versicolor", "virginica"];

const SPLIT_SALT: u64 = 0x53_504c_4954; // "SPLIT"

/// Parsed and normalized dataset with a stratified 0.8/0.2 split.
#[derive(Clone, Debug)]
pub struct Dataset {
    /// Per-feature min-max normalized to [0, 1].
    pub features: Vec<Vec<f64>>,
    /// One-hot class labels.
    pub labels: Vec<Vec<f64>>,
    pub train_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    /// Materialize the split for the trainers.
    pub fn split(&self) -> DataSplit {
        DataSplit {
            train_features: self
                .train_idx
                .iter()
                .map(|&i| self.features[i].clone())
                .collect(),
            train_labels: self
                .train_idx
                .iter()
                .map(|&i| self.labels[i].clone())
                .collect(),
            test_features: self
                .test_idx
                .iter()
                .map(|&i| self.features[i].clone())
                .collect(),
            test_labels: self
                .test_idx
                .iter()
                .map(|&i| self.labels[i].clone())
                .collect(),
        }
    }
}

fn parse_species(raw: &str, line_no: usize) -> Result<usize> {
    let name = raw.trim().trim_matches('"');
    let name = name.strip_prefix("Iris-").unwrap_or(name);
    SPECIES
        .iter()
        .position(|s| s.eq_ignore_ascii_case(name))
        .ok_or_else(|| Error::Data(format!("line {line_no}: unknown species '{raw}'")))
}

/// Parse an iris CSV (four numeric feature columns plus a species column,
/// optional header), normalize each feature to [0, 1] and split 0.8/0.2
/// stratified by class under the given seed.
pub fn load_iris(path: &Path, seed: u64) -> Result<Dataset> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    load_iris_str(&text, seed)
}

/// As [`load_iris`], from already-read text.
pub fn load_iris_str(text: &str, seed: u64) -> Result<Dataset> {
    let mut features: Vec<Vec<f64>> = Vec::new();
    let mut classes: Vec<usize> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').collect();
        if fields.len() != FEATURES + 1 {
            return Err(Error::Data(format!(
                "line {line_no}: expected {} columns, found {}",
                FEATURES + 1,
                fields.len()
            )));
        }
        // header detection: first line whose first field is not numeric
        if idx == 0 && fields[0].trim().parse::<f64>().is_err() {
            continue;
        }
        let mut row = Vec::with_capacity(FEATURES);
        for (col, field) in fields.iter().take(FEATURES).enumerate() {
            let value: f64 = field.trim().parse().map_err(|_| {
                Error::Data(format!(
                    "line {line_no}: column {} is not numeric: '{field}'",
                    col + 1
                ))
            })?;
            row.push(value);
        }
        classes.push(parse_species(fields[FEATURES], line_no)?);
        features.push(row);
    }
    if features.is_empty() {
        return Err(Error::Data("no data rows found".into()));
    }

    // min-max per feature over the whole set
    for col in 0..FEATURES {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for row in &features {
            lo = lo.min(row[col]);
            hi = hi.max(row[col]);
        }
        let span = if hi > lo { hi - lo } else { 1.0 };
        for row in &mut features {
            row[col] = (row[col] - lo) / span;
        }
    }

    let labels = classes
        .iter()
        .map(|&c| {
            let mut one_hot = vec![0.0; CLASSES];
            one_hot[c] = 1.0;
            one_hot
        })
        .collect();

    // stratified 0.8/0.2 split, seeded
    let mut train_idx = Vec::new();
    let mut test_idx = Vec::new();
    let mut rng = StdRng::seed_from_u64(derive_seed(seed, SPLIT_SALT));
    for class in 0..CLASSES {
        let mut members: Vec<usize> = classes
            .iter()
            .enumerate()
            .filter(|(_, c)| **c == class)
            .map(|(i, _)| i)
            .collect();
        members.shuffle(&mut rng);
        let n_train = (members.len() as f64 * 0.8).round() as usize;
        train_idx.extend_from_slice(&members[..n_train]);
        test_idx.extend_from_slice(&members[n_train..]);
    }
    train_idx.sort_unstable();
    test_idx.sort_unstable();

    Ok(Dataset {
        features,
        labels,
        train_idx,
        test_idx,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_csv() -> String {
        let mut text = String::from("sepal_length,sepal_width,petal_length,petal_width,species\n");
        for i in 0..10 {
            text.push_str(&format!("{}.0,3.0,1.{},0.2,setosa\n", 4 + i % 3, i));
            text.push_str(&format!("{}.0,2.8,4.{},1.3,versicolor\n", 5 + i % 3, i));
            text.push_str(&format!("{}.0,3.1,5.{},2.0,Iris-virginica\n", 6 + i % 3, i));
        }
        text
    }

    #[test]
    fn split_is_stratified_and_seeded() {
        let data = load_iris_str(&toy_csv(), 1).unwrap();
        assert_eq!(data.len(), 30);
        assert_eq!(data.train_idx.len(), 24);
        assert_eq!(data.test_idx.len(), 6);
        for class in 0..CLASSES {
            let in_test = data
                .test_idx
                .iter()
                .filter(|&&i| data.labels[i][class] == 1.0)
                .count();
            assert_eq!(in_test, 2, "class {class} must keep its 0.2 share");
        }
        let again = load_iris_str(&toy_csv(), 1).unwrap();
        assert_eq!(data.train_idx, again.train_idx);
        let other = load_iris_str(&toy_csv(), 2).unwrap();
        assert_ne!(data.train_idx, other.train_idx);
    }

    #[test]
    fn normalization_hits_zero_and_one() {
        let data = load_iris_str(&toy_csv(), 1).unwrap();
        for col in 0..FEATURES {
            let values: Vec<f64> = data.features.iter().map(|r| r[col]).collect();
            let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(lo, 0.0);
            assert_eq!(hi, 1.0);
        }
    }

    #[test]
    fn malformed_rows_name_their_line() {
        let text = "5.1,3.5,1.4,0.2,setosa\n5.0,3.3,1.4,setosa\n";
        let err = load_iris_str(text, 1).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");

        let text = "5.1,3.5,1.4,0.2,setosa\n5.0,oops,1.4,0.2,setosa\n";
        let err = load_iris_str(text, 1).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");

        let text = "5.1,3.5,1.4,0.2,setosa\n5.0,3.3,1.4,0.2,tulip\n";
        let err = load_iris_str(text, 1).unwrap_err();
        assert!(err.to_string().contains("tulip"), "{err}");
    }

    #[test]
    fn missing_file_is_a_data_error() {
        let err = load_iris(Path::new("/nonexistent/iris.csv"), 1).unwrap_err();
        assert!(matches!(err, Error::Data(_)));
    }
}
