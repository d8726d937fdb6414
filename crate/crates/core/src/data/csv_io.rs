use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A column selected by header name or zero-based position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Column {
    Name(String),
    Index(usize),
}

impl From<&str> for Column {
    fn from(s: &str) -> Self {
        Column::Name(s.to_string())
    }
}

impl From<usize> for Column {
    fn from(i: usize) -> Self {
        Column::Index(i)
    }
}

fn format_err(line: u64, msg: impl std::fmt::Display) -> Error {
    Error::Format(format!("line {line}: {msg}"))
}

/// Reads the selected numeric columns as a `[rows, columns]` series.
///
/// An empty selection reads every column.
pub fn load_csv(path: impl AsRef<Path>, has_header: bool, columns: &[Column]) -> Result<Tensor> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .trim(csv::Trim::All)
        .from_path(path.as_ref())
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            other => Error::Format(format!("{other:?}")),
        })?;
    let header: Vec<String> = if has_header {
        reader
            .headers()
            .map_err(|e| format_err(1, e))?
            .iter()
            .map(str::to_string)
            .collect()
    } else {
        Vec::new()
    };
    let mut picked: Option<Vec<usize>> = None;
    if !columns.is_empty() {
        let mut idx = Vec::with_capacity(columns.len());
        for c in columns {
            idx.push(match c {
                Column::Index(i) => *i,
                Column::Name(n) => header
                    .iter()
                    .position(|h| h == n)
                    .ok_or_else(|| format_err(1, format!("no column named '{n}'")))?,
            });
        }
        picked = Some(idx);
    }

    let mut data = Vec::new();
    let mut width = None;
    let mut rows = 0;
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            format_err(line, e)
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let idx: Vec<usize> = match &picked {
            Some(p) => p.clone(),
            None => (0..record.len()).collect(),
        };
        if *width.get_or_insert(idx.len()) != idx.len() {
            return Err(format_err(line, "row width changed"));
        }
        for i in idx {
            let field = record
                .get(i)
                .ok_or_else(|| format_err(line, format!("missing column {i}")))?;
            let v: f64 = field
                .parse()
                .map_err(|_| format_err(line, format!("'{field}' is not a number")))?;
            data.push(v);
        }
        rows += 1;
    }
    let Some(k) = width.filter(|&k| k > 0 && rows > 0) else {
        return Err(Error::Data("csv file has no data rows".into()));
    };
    Tensor::new(&[rows, k], data)
}

/// Writes a `[rows, columns]` series, with an optional header row.
pub fn write_csv(path: impl AsRef<Path>, series: &Tensor, header: Option<&[&str]>) -> Result<()> {
    let [_, k] = series.shape() else {
        return Err(Error::Shape(format!("write_csv expects [rows, columns], got {:?}", series.shape())));
    };
    let mut w = csv::Writer::from_path(path.as_ref()).map_err(|e| Error::Format(e.to_string()))?;
    let io = |e: csv::Error| Error::Format(e.to_string());
    if let Some(h) = header {
        w.write_record(h).map_err(io)?;
    }
    for row in series.data().chunks((*k).max(1)) {
        w.write_record(row.iter().map(|v| v.to_string())).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}
