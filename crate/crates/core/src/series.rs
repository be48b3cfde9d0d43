//! Univariate series ingestion, lag embedding and chronological splitting.

use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// A raw univariate time series in file (time-ascending) order.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesFrame {
    values: Vec<f64>,
    name: String,
    source_path: PathBuf,
}

impl SeriesFrame {
    /// Builds a frame from in-memory values. Rejects empty or non-finite input.
    pub fn new(name: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("series must contain at least one value"));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("series value {i} is not finite")));
        }
        Ok(Self {
            values,
            name: name.into(),
            source_path: PathBuf::new(),
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn source_path(&self) -> &Path {
        &self.source_path
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Reads a series file: one value per line, optional single non-numeric
/// header line which becomes the series name.
///
/// Line endings may be `\n` or `\r\n`. Trailing blank lines are ignored; a
/// blank line inside the body is a missing value and is rejected.
pub fn load_series(path: impl AsRef<Path>) -> Result<SeriesFrame> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_series(&text, path)
}

fn parse_series(text: &str, path: &Path) -> Result<SeriesFrame> {
    let mut lines: Vec<&str> = text
        .split('\n')
        .map(|l| l.strip_suffix('\r').unwrap_or(l))
        .collect();
    while lines.last().is_some_and(|l| l.trim().is_empty()) {
        lines.pop();
    }
    if lines.is_empty() {
        return Err(Error::EmptySeries { path: path.into() });
    }

    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.into(),
        line,
        message,
    };

    let mut name = None;
    let mut body_start = 0;
    let first = lines[0].trim();
    if first.parse::<f64>().is_err() {
        name = Some(first.to_string());
        body_start = 1;
    }

    let mut values = Vec::with_capacity(lines.len() - body_start);
    for (idx, raw) in lines.iter().enumerate().skip(body_start) {
        let line_no = idx + 1;
        let field = raw.trim();
        if field.is_empty() {
            return Err(parse_err(line_no, "missing value".into()));
        }
        let v: f64 = field
            .parse()
            .map_err(|_| parse_err(line_no, format!("not a number: {field:?}")))?;
        if !v.is_finite() {
            return Err(parse_err(line_no, format!("non-finite value: {field:?}")));
        }
        values.push(v);
    }
    if values.is_empty() {
        return Err(Error::EmptySeries { path: path.into() });
    }

    let name = name.unwrap_or_else(|| {
        path.file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    });
    Ok(SeriesFrame {
        values,
        name,
        source_path: path.into(),
    })
}

/// Supervised pairs built from a series: row `i` holds the `p` lags preceding
/// target `i`, most recent lag first.
#[derive(Debug, Clone, PartialEq)]
pub struct LagDataset {
    inputs: Vec<f64>,
    targets: Vec<f64>,
    lags: usize,
}

impl LagDataset {
    /// Builds a dataset from a row-major `n × lags` input matrix and `n` targets.
    pub fn from_parts(lags: usize, inputs: Vec<f64>, targets: Vec<f64>) -> Result<Self> {
        if lags == 0 {
            return Err(Error::invalid("lag count must be at least 1"));
        }
        if inputs.len() != targets.len() * lags {
            return Err(Error::Dimension {
                expected: targets.len() * lags,
                got: inputs.len(),
            });
        }
        if inputs.iter().chain(&targets).any(|v| !v.is_finite()) {
            return Err(Error::invalid("dataset contains non-finite values"));
        }
        Ok(Self {
            inputs,
            targets,
            lags,
        })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn lags(&self) -> usize {
        self.lags
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.lags..(i + 1) * self.lags]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.inputs.chunks_exact(self.lags)
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    /// Contiguous row range as a new dataset.
    pub fn slice(&self, range: Range<usize>) -> LagDataset {
        LagDataset {
            inputs: self.inputs[range.start * self.lags..range.end * self.lags].to_vec(),
            targets: self.targets[range].to_vec(),
            lags: self.lags,
        }
    }

    /// Rows picked by index, in the given order.
    pub fn select(&self, indices: &[usize]) -> LagDataset {
        let mut inputs = Vec::with_capacity(indices.len() * self.lags);
        let mut targets = Vec::with_capacity(indices.len());
        for &i in indices {
            inputs.extend_from_slice(self.row(i));
            targets.push(self.targets[i]);
        }
        LagDataset {
            inputs,
            targets,
            lags: self.lags,
        }
    }
}

/// Builds the lag embedding of `series` with `lags` inputs per row.
///
/// Row `i` targets `x[i + lags]` and holds `[x[i+lags-1], ..., x[i]]`.
pub fn embed_lags(series: &SeriesFrame, lags: usize) -> Result<LagDataset> {
    if lags == 0 {
        return Err(Error::invalid("lag count must be at least 1"));
    }
    let x = series.values();
    if x.len() <= lags {
        return Err(Error::invalid(format!(
            "series of length {} is too short for {lags} lags",
            x.len()
        )));
    }
    let n = x.len() - lags;
    let mut inputs = Vec::with_capacity(n * lags);
    let mut targets = Vec::with_capacity(n);
    for t in lags..x.len() {
        inputs.extend((1..=lags).map(|k| x[t - k]));
        targets.push(x[t]);
    }
    Ok(LagDataset {
        inputs,
        targets,
        lags,
    })
}

/// Chronological train/test windows. The test window immediately follows
/// the training window, which starts `offset` rows into the dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSpec {
    pub offset: usize,
    pub n_train: usize,
    pub n_test: usize,
}

impl SplitSpec {
    pub fn new(n_train: usize, n_test: usize) -> Self {
        Self {
            offset: 0,
            n_train,
            n_test,
        }
    }

    /// Checks the windows fit inside a dataset of `n` rows.
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.n_train == 0 || self.n_test == 0 {
            return Err(Error::invalid("n_train and n_test must both be at least 1"));
        }
        let needed = self.offset + self.n_train + self.n_test;
        if needed > n {
            return Err(Error::invalid(format!(
                "split needs {needed} rows (offset {} + train {} + test {}) but dataset has {n}",
                self.offset, self.n_train, self.n_test
            )));
        }
        Ok(())
    }
}

/// Splits `ds` into consecutive train and test windows without shuffling.
pub fn split(ds: &LagDataset, spec: SplitSpec) -> Result<(LagDataset, LagDataset)> {
    spec.validate(ds.len())?;
    let train_end = spec.offset + spec.n_train;
    Ok((
        ds.slice(spec.offset..train_end),
        ds.slice(train_end..train_end + spec.n_test),
    ))
}
