//! Dataset ingestion, standardization, and one-hot encoding.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Schema {
    /// Name of the label column; every other column is a feature.
    pub label: String,
}

impl Schema {
    pub fn new(label: impl Into<String>) -> Self {
        Self { label: label.into() }
    }
}

/// Per-feature affine transform fitted on a training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Features passed through unscaled.
    pub zero_variance: Vec<bool>,
}

impl Standardizer {
    /// Population mean and standard deviation of each feature.
    pub fn fit(inputs: &[Vec<f64>]) -> Self {
        let n = inputs.len().max(1) as f64;
        let dim = inputs.first().map_or(0, Vec::len);
        let mut mean = vec![0.0; dim];
        for x in inputs {
            for (m, v) in mean.iter_mut().zip(x) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for x in inputs {
            for ((s, v), m) in var.iter_mut().zip(x).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std: Vec<f64> = var.iter().map(|s| (s / n).sqrt()).collect();
        let zero_variance: Vec<bool> = std.iter().map(|&s| s <= f64::EPSILON).collect();
        Self { mean, std, zero_variance }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(k, &v)| if self.zero_variance[k] { v } else { (v - self.mean[k]) / self.std[k] })
            .collect()
    }

    pub fn invert(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(k, &v)| if self.zero_variance[k] { v } else { v * self.std[k] + self.mean[k] })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub feature_names: Vec<String>,
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
    pub standardizer: Option<Standardizer>,
}

impl Dataset {
    pub fn new(inputs: Vec<Vec<f64>>, targets: Vec<Vec<f64>>) -> Result<Self> {
        if inputs.len() != targets.len() {
            return Err(Error::ShapeMismatch(format!("{} inputs vs {} targets", inputs.len(), targets.len())));
        }
        if let Some(first) = inputs.first() {
            if inputs.iter().any(|x| x.len() != first.len()) {
                return Err(Error::ShapeMismatch("samples differ in feature count".into()));
            }
        }
        if let Some(first) = targets.first() {
            if targets.iter().any(|t| t.len() != first.len()) {
                return Err(Error::ShapeMismatch("targets differ in width".into()));
            }
        }
        let dim = inputs.first().map_or(0, Vec::len);
        Ok(Self { feature_names: (0..dim).map(|k| format!("x{k}")).collect(), inputs, targets, standardizer: None })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.first().map_or(0, Vec::len)
    }

    pub fn target_dim(&self) -> usize {
        self.targets.first().map_or(0, Vec::len)
    }

    /// Class index of each target: argmax for one-hot rows, the rounded
    /// value for scalar targets.
    pub fn classes(&self) -> Vec<usize> {
        self.targets.iter().map(|t| target_class(t)).collect()
    }

    pub fn subset(&self, idx: &[usize]) -> Result<Self> {
        if let Some(&bad) = idx.iter().find(|&&i| i >= self.len()) {
            return Err(Error::OutOfRange(format!("sample index {bad} >= {}", self.len())));
        }
        Ok(Self {
            feature_names: self.feature_names.clone(),
            inputs: idx.iter().map(|&i| self.inputs[i].clone()).collect(),
            targets: idx.iter().map(|&i| self.targets[i].clone()).collect(),
            standardizer: self.standardizer.clone(),
        })
    }

    pub fn with_standardizer(&self, s: &Standardizer) -> Self {
        Self {
            feature_names: self.feature_names.clone(),
            inputs: self.inputs.iter().map(|x| s.apply(x)).collect(),
            targets: self.targets.clone(),
            standardizer: Some(s.clone()),
        }
    }

    /// Per-feature `[min, max]` over all samples.
    pub fn bounding_box(&self) -> Vec<(f64, f64)> {
        let mut b = vec![(f64::INFINITY, f64::NEG_INFINITY); self.input_dim()];
        for x in &self.inputs {
            for (iv, &v) in b.iter_mut().zip(x) {
                iv.0 = iv.0.min(v);
                iv.1 = iv.1.max(v);
            }
        }
        b
    }
}

/// Class of a target row under the argmax rule (ties to the lowest index);
/// a width-1 target is read as a 0/1 label thresholded at 0.5.
pub fn target_class(t: &[f64]) -> usize {
    if t.len() == 1 {
        return usize::from(t[0] >= 0.5);
    }
    argmax(t)
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub fn load_dataset(path: impl AsRef<Path>, schema: &Schema) -> Result<Dataset> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| csv_error(&display, e))?;
    let headers = rdr.headers().map_err(|e| csv_error(&display, e))?.clone();
    let label_col = headers.iter().position(|h| h == schema.label).ok_or_else(|| Error::Parse {
        path: display.clone(),
        line: 1,
        msg: format!("label column `{}` not found", schema.label),
    })?;
    let feature_names: Vec<String> =
        headers.iter().enumerate().filter(|&(i, _)| i != label_col).map(|(_, h)| h.to_string()).collect();

    let mut inputs = Vec::new();
    let mut targets = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(&display, e))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != headers.len() {
            return Err(Error::Parse {
                path: display.clone(),
                line,
                msg: format!("expected {} fields, found {}", headers.len(), rec.len()),
            });
        }
        let mut x = Vec::with_capacity(feature_names.len());
        let mut label = 0.0;
        for (i, field) in rec.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| Error::NonNumericFeature { column: headers[i].to_string(), line })?;
            if i == label_col {
                label = v;
            } else {
                x.push(v);
            }
        }
        inputs.push(x);
        targets.push(vec![label]);
    }
    if inputs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut d = Dataset::new(inputs, targets)?;
    d.feature_names = feature_names;
    Ok(d)
}

fn csv_error(path: &str, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    Error::Parse { path: path.to_string(), line, msg: e.to_string() }
}

/// Standardizes features (population statistics, constant features passed
/// through) and/or one-hot encodes scalar class labels.
pub fn preprocess(d: &Dataset, standardize: bool, one_hot: bool) -> Result<Dataset> {
    let mut out = if standardize { d.with_standardizer(&Standardizer::fit(&d.inputs)) } else { d.clone() };
    if one_hot {
        out.targets = one_hot_encode(&d.targets)?;
    }
    Ok(out)
}

pub fn one_hot_encode(targets: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let mut labels = Vec::with_capacity(targets.len());
    for t in targets {
        let v = match t.as_slice() {
            [v] => *v,
            _ => return Err(Error::ShapeMismatch("one-hot encoding needs scalar labels".into())),
        };
        if v < 0.0 || v.fract() != 0.0 {
            return Err(Error::ShapeMismatch(format!("label {v} is not a class index")));
        }
        labels.push(v as usize);
    }
    let k = labels.iter().max().map_or(0, |m| m + 1);
    Ok(labels
        .into_iter()
        .map(|c| {
            let mut row = vec![0.0; k];
            row[c] = 1.0;
            row
        })
        .collect())
}

/// Train/test partition read from an index-list file:
///
/// ```text
/// train: 0 1 2 3
/// test: 4 5
/// ```
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    pub fn parse(text: &str, path: &str) -> Result<Self> {
        let mut split = Split::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, rest) = line.split_once(':').ok_or_else(|| Error::Parse {
                path: path.to_string(),
                line: lineno + 1,
                msg: "expected `train:` or `test:`".into(),
            })?;
            let target = match key.trim() {
                "train" => &mut split.train,
                "test" => &mut split.test,
                other => {
                    return Err(Error::Parse {
                        path: path.to_string(),
                        line: lineno + 1,
                        msg: format!("unknown split `{other}`"),
                    })
                }
            };
            for tok in rest.split_whitespace() {
                target.push(tok.parse().map_err(|_| Error::Parse {
                    path: path.to_string(),
                    line: lineno + 1,
                    msg: format!("bad index `{tok}`"),
                })?);
            }
        }
        Ok(split)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }
}

#[cfg(test)]
mod tests {
    use std::io::Write;

    use super::*;

    fn write_tmp(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn xor_csv() {
        let f = write_tmp("x1,x2,y\n0,0,0\n0,1,1\n1,0,1\n1,1,0\n");
        let d = load_dataset(f.path(), &Schema::new("y")).unwrap();
        assert_eq!((d.len(), d.input_dim()), (4, 2));
        assert_eq!(d.targets[1], vec![1.0]);
    }

    #[test]
    fn header_only_is_empty() {
        let f = write_tmp("x1,x2,y\n");
        assert!(matches!(load_dataset(f.path(), &Schema::new("y")), Err(Error::EmptyDataset)));
    }

    #[test]
    fn non_numeric_reports_line() {
        let f = write_tmp("x1,y\n1,0\nabc,1\n");
        match load_dataset(f.path(), &Schema::new("y")) {
            Err(Error::NonNumericFeature { column, line }) => assert_eq!((column.as_str(), line), ("x1", 3)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn three_class_one_hot_width() {
        let mut text = String::from("a,b,c,d,label\n");
        for i in 0..150 {
            text.push_str(&format!("{},{},{},{},{}\n", i, i * 2, i % 7, i % 5, i % 3));
        }
        let f = write_tmp(&text);
        let d = load_dataset(f.path(), &Schema::new("label")).unwrap();
        let d = preprocess(&d, true, true).unwrap();
        assert_eq!((d.len(), d.input_dim(), d.target_dim()), (150, 4, 3));
        assert!(d.targets.iter().all(|t| t.iter().sum::<f64>() == 1.0));
    }

    #[test]
    fn two_point_standardization() {
        let d = Dataset::new(vec![vec![0.0], vec![2.0]], vec![vec![0.0], vec![1.0]]).unwrap();
        let s = preprocess(&d, true, false).unwrap();
        assert_eq!(s.inputs, vec![vec![-1.0], vec![1.0]]);
    }

    #[test]
    fn one_hot_rows() {
        let rows = one_hot_encode(&[vec![0.0], vec![2.0], vec![1.0]]).unwrap();
        assert_eq!(rows, vec![vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0], vec![0.0, 1.0, 0.0]]);
    }

    #[test]
    fn constant_column_passes_through() {
        let d = Dataset::new(vec![vec![5.0], vec![5.0], vec![5.0]], vec![vec![0.0]; 3]).unwrap();
        let s = preprocess(&d, true, false).unwrap();
        assert_eq!(s.inputs, d.inputs);
        assert!(s.standardizer.unwrap().zero_variance[0]);
    }

    #[test]
    fn split_file() {
        let s = Split::parse("train: 0 1 2\n# comment\ntest: 3\n", "s").unwrap();
        assert_eq!(s.train, vec![0, 1, 2]);
        assert_eq!(s.test, vec![3]);
    }

    mod props {
        use proptest::prelude::*;

        use super::super::*;

        proptest! {
            #[test]
            fn standardize_stats_and_inverse(rows in prop::collection::vec(prop::collection::vec(-1e3f64..1e3, 3), 2..40)) {
                let s = Standardizer::fit(&rows);
                let z: Vec<Vec<f64>> = rows.iter().map(|x| s.apply(x)).collect();
                let n = rows.len() as f64;
                for k in 0..3 {
                    if s.zero_variance[k] || s.std[k] < 1e-6 {
                        continue;
                    }
                    let mean = z.iter().map(|x| x[k]).sum::<f64>() / n;
                    let var = z.iter().map(|x| (x[k] - mean).powi(2)).sum::<f64>() / n;
                    prop_assert!(mean.abs() <= 1e-9);
                    prop_assert!((var.sqrt() - 1.0).abs() <= 1e-6);
                }
                for (x, zx) in rows.iter().zip(&z) {
                    let back = s.invert(zx);
                    for (a, b) in x.iter().zip(&back) {
                        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
                    }
                }
            }
        }
    }
}
