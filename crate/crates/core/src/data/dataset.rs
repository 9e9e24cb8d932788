use std::collections::HashMap;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{CapsError, Result};
use crate::subset::FeatureSubset;

pub const MIN_ROWS: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Binary,
    Multiclass,
    Regression,
}

impl Task {
    pub fn is_classification(self) -> bool {
        !matches!(self, Task::Regression)
    }
}

impl std::str::FromStr for Task {
    type Err = CapsError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "binary" => Ok(Task::Binary),
            "multiclass" => Ok(Task::Multiclass),
            "regression" => Ok(Task::Regression),
            other => Err(CapsError::Config(format!("unknown task `{other}`"))),
        }
    }
}

/// Feature matrix plus labels. Class labels are stored as `0..C` in `y`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// Row-major `n x D`.
    x: Vec<f64>,
    y: Vec<f64>,
    feature_names: Vec<String>,
    task: Task,
    /// Original label strings for classification, indexed by class id.
    class_names: Vec<String>,
}

impl Dataset {
    pub fn new(rows: Vec<Vec<f64>>, y: Vec<f64>, feature_names: Vec<String>, task: Task) -> Result<Self> {
        let d = feature_names.len();
        if rows.len() != y.len() {
            return Err(CapsError::contract(format!(
                "{} rows but {} labels",
                rows.len(),
                y.len()
            )));
        }
        if rows.len() < MIN_ROWS {
            return Err(CapsError::contract(format!(
                "dataset needs at least {MIN_ROWS} rows, got {}",
                rows.len()
            )));
        }
        if d < 2 {
            return Err(CapsError::contract("dataset needs at least 2 features"));
        }
        if rows.iter().any(|r| r.len() != d) {
            return Err(CapsError::contract("row width does not match feature count"));
        }
        if rows.iter().flatten().chain(&y).any(|v| !v.is_finite()) {
            return Err(CapsError::contract("dataset contains non-finite values"));
        }
        let mut class_names = Vec::new();
        if task.is_classification() {
            if y.iter().any(|v| v.fract() != 0.0 || *v < 0.0) {
                return Err(CapsError::contract("class labels must be non-negative integers"));
            }
            let c = y.iter().fold(0.0f64, |a, &b| a.max(b)) as usize + 1;
            let mut seen = vec![false; c];
            for &v in &y {
                seen[v as usize] = true;
            }
            if seen.iter().any(|s| !s) {
                return Err(CapsError::contract("class ids must be contiguous from 0"));
            }
            class_names = (0..c).map(|i| i.to_string()).collect();
        }
        Ok(Dataset {
            x: rows.concat(),
            y,
            feature_names,
            task,
            class_names,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.y.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn labels(&self) -> &[f64] {
        &self.y
    }

    pub fn value(&self, row: usize, feature: usize) -> f64 {
        self.x[row * self.n_features() + feature]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        let d = self.n_features();
        &self.x[row * d..(row + 1) * d]
    }

    /// Column-restricted copy `X[rows, subset]`, row-major.
    pub fn project(&self, rows: &[usize], subset: &FeatureSubset) -> Vec<f64> {
        let mut out = Vec::with_capacity(rows.len() * subset.len());
        for &r in rows {
            let row = self.row(r);
            out.extend(subset.ids().iter().map(|&j| row[j]));
        }
        out
    }

    pub fn labels_at(&self, rows: &[usize]) -> Vec<f64> {
        rows.iter().map(|&r| self.y[r]).collect()
    }

    /// Writes features followed by a `label_column`; class labels are written
    /// by name, so [`load_csv`] restores the same ids.
    pub fn write_csv(&self, path: &Path, label_column: &str) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(self.feature_names.iter().map(String::as_str).chain([label_column]))?;
        for r in 0..self.n_rows() {
            let mut rec: Vec<String> = self.row(r).iter().map(|v| v.to_string()).collect();
            rec.push(if self.task.is_classification() {
                self.class_names[self.y[r] as usize].clone()
            } else {
                self.y[r].to_string()
            });
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Loads a comma-separated file with a header row. Lines starting with `#`
/// are comments. Rows with an unparseable or missing cell are dropped.
pub fn load_csv(path: &Path, label_column: &str, task_override: Option<Task>) -> Result<Dataset> {
    let load_err = |msg: String| CapsError::Load {
        what: path.display().to_string(),
        msg,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| load_err(e.to_string()))?;
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let label_idx = headers
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| load_err(format!("label column `{label_column}` not found in header")))?;
    let feature_names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != label_idx)
        .map(|(_, h)| h.clone())
        .collect();

    let mut rows = Vec::new();
    let mut raw_labels = Vec::new();
    let mut dropped = 0usize;
    for record in reader.records() {
        let record = match record {
            Ok(r) => r,
            Err(_) => {
                dropped += 1;
                continue;
            }
        };
        if record.len() != headers.len() {
            dropped += 1;
            continue;
        }
        let feats: Option<Vec<f64>> = record
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != label_idx)
            .map(|(_, cell)| cell.parse::<f64>().ok().filter(|v| v.is_finite()))
            .collect();
        let label = &record[label_idx];
        match feats {
            Some(f) if !label.is_empty() => {
                rows.push(f);
                raw_labels.push(label.to_string());
            }
            _ => dropped += 1,
        }
    }
    if dropped > 0 {
        warn!(
            "{}: dropped {dropped} rows with missing or unparseable cells",
            path.display()
        );
    }
    if rows.len() < MIN_ROWS {
        return Err(load_err(format!(
            "only {} usable rows (need at least {MIN_ROWS})",
            rows.len()
        )));
    }

    let numeric: Option<Vec<f64>> = raw_labels.iter().map(|s| s.parse::<f64>().ok()).collect();
    let task = match task_override {
        Some(t) => t,
        None => infer_task(&raw_labels, numeric.as_deref()),
    };
    let (y, class_names) = if task.is_classification() {
        encode_classes(&raw_labels)
    } else {
        let y = numeric.ok_or_else(|| load_err("regression labels must be numeric".into()))?;
        (y, Vec::new())
    };
    let mut ds = Dataset::new(rows, y, feature_names, task).map_err(|e| load_err(e.to_string()))?;
    if task.is_classification() {
        if class_names.len() < 2 {
            return Err(load_err("classification needs at least 2 classes".into()));
        }
        ds.class_names = class_names;
    }
    Ok(ds)
}

fn infer_task(raw: &[String], numeric: Option<&[f64]>) -> Task {
    if let Some(vals) = numeric {
        if vals.iter().any(|v| v.fract() != 0.0) {
            return Task::Regression;
        }
    }
    let mut distinct: Vec<&String> = raw.iter().collect();
    distinct.sort();
    distinct.dedup();
    if distinct.len() == 2 {
        Task::Binary
    } else {
        Task::Multiclass
    }
}

/// Maps labels to ids in first-appearance order, except that purely integer
/// labels `0..C` keep their numeric value.
fn encode_classes(raw: &[String]) -> (Vec<f64>, Vec<String>) {
    let ints: Option<Vec<usize>> = raw.iter().map(|s| s.parse::<usize>().ok()).collect();
    if let Some(ints) = ints {
        let mut distinct = ints.clone();
        distinct.sort_unstable();
        distinct.dedup();
        if distinct.iter().enumerate().all(|(i, &v)| i == v) {
            let names = distinct.iter().map(usize::to_string).collect();
            return (ints.into_iter().map(|v| v as f64).collect(), names);
        }
    }
    let mut ids: HashMap<&str, usize> = HashMap::new();
    let mut names = Vec::new();
    let y = raw
        .iter()
        .map(|s| {
            let next = ids.len();
            let id = *ids.entry(s.as_str()).or_insert_with(|| {
                names.push(s.clone());
                next
            });
            id as f64
        })
        .collect();
    (y, names)
}

/// Binary indicator vector of a subset over `num_features` columns.
pub fn one_hot_rep(subset: &FeatureSubset, num_features: usize) -> Result<Vec<f64>> {
    subset.check_bound(num_features)?;
    let mut v = vec![0.0; num_features];
    for &j in subset.ids() {
        v[j] = 1.0;
    }
    Ok(v)
}

/// Inverse of [`one_hot_rep`].
pub fn subset_from_one_hot(rep: &[f64]) -> FeatureSubset {
    FeatureSubset::from_ids(rep.iter().enumerate().filter(|(_, &v)| v != 0.0).map(|(i, _)| i))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    fn padded(header: &str, rows: &[&str]) -> String {
        let mut s = format!("{header}\n");
        for r in rows {
            s.push_str(r);
            s.push('\n');
        }
        s
    }

    #[test]
    fn string_labels_binary_first_appearance() {
        let rows: Vec<String> = (0..12)
            .map(|i| format!("{i},{},{}", i * 2, if i % 3 == 1 { "b" } else { "a" }))
            .collect();
        let refs: Vec<&str> = rows.iter().map(String::as_str).collect();
        let f = write(&padded("f0,f1,label", &refs));
        let ds = load_csv(f.path(), "label", None).unwrap();
        assert_eq!(ds.task(), Task::Binary);
        assert_eq!(&ds.labels()[..3], &[0.0, 1.0, 0.0]);
        assert_eq!(ds.class_names(), &["a".to_string(), "b".to_string()]);
        assert_eq!(ds.feature_names(), &["f0".to_string(), "f1".to_string()]);
    }

    #[test]
    fn real_labels_are_regression() {
        let rows: Vec<String> = (0..12)
            .map(|i| format!("{i},{},{}", i + 1, if i % 2 == 0 { "0.1" } else { "2.7" }))
            .collect();
        let refs: Vec<&str> = rows.iter().map(String::as_str).collect();
        let f = write(&padded("a,b,y", &refs));
        assert_eq!(load_csv(f.path(), "y", None).unwrap().task(), Task::Regression);
    }

    #[test]
    fn missing_label_column_is_named() {
        let f = write("a,b,y\n1,2,3\n");
        let err = load_csv(f.path(), "target", None).unwrap_err().to_string();
        assert!(err.contains("target"), "{err}");
    }

    #[test]
    fn bad_rows_dropped_and_minimum_enforced() {
        let mut rows: Vec<String> = (0..11).map(|i| format!("{i},{},{}", i * 3, i % 3)).collect();
        rows.push("oops,1,0".into());
        rows.push("2,,1".into());
        let refs: Vec<&str> = rows.iter().map(String::as_str).collect();
        let f = write(&padded("a,b,c", &refs));
        let ds = load_csv(f.path(), "c", None).unwrap();
        assert_eq!(ds.n_rows(), 11);
        assert_eq!(ds.task(), Task::Multiclass);

        let f = write("a,b,c\n1,2,0\n2,3,1\n3,4,0\n");
        assert!(load_csv(f.path(), "c", None).is_err());
    }

    #[test]
    fn missing_file_is_a_load_error() {
        assert!(matches!(
            load_csv(Path::new("/nonexistent/data.csv"), "y", None),
            Err(CapsError::Load { .. })
        ));
    }

    #[test]
    fn one_hot_examples() {
        assert_eq!(
            one_hot_rep(&FeatureSubset::from_ids([0, 2]), 4).unwrap(),
            vec![1.0, 0.0, 1.0, 0.0]
        );
        assert_eq!(one_hot_rep(&FeatureSubset::from_ids([]), 3).unwrap(), vec![0.0; 3]);
        assert_eq!(one_hot_rep(&FeatureSubset::all(3), 3).unwrap(), vec![1.0; 3]);
        assert!(matches!(
            one_hot_rep(&FeatureSubset::from_ids([4]), 4),
            Err(CapsError::Index { index: 4, .. })
        ));
    }

    proptest::proptest! {
        #[test]
        fn one_hot_is_a_bijection(ids in proptest::collection::btree_set(0usize..16, 0..16)) {
            let s = FeatureSubset::from_ids(ids);
            let rep = one_hot_rep(&s, 16).unwrap();
            proptest::prop_assert_eq!(subset_from_one_hot(&rep), s);
        }
    }
}
