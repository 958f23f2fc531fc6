//! CSV datasets: header `x0,…,x{d-1},y`, one sample per row.

use std::path::Path;

use locsvm::Dataset;

use crate::error::{CliError, CliResult};

pub fn load(path: &Path) -> CliResult<Dataset> {
    let fail = |message: String| CliError::Dataset {
        path: path.to_path_buf(),
        message,
    };
    let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(file);
    let header = reader.headers().map_err(|e| fail(e.to_string()))?.clone();
    let cols = header.len();
    if cols < 2 {
        return Err(fail("expected columns x0,…,x{d-1},y".into()));
    }
    for (j, name) in header.iter().enumerate() {
        let expect = if j + 1 == cols {
            "y".to_string()
        } else {
            format!("x{j}")
        };
        if name != expect {
            return Err(fail(format!(
                "column {} is named {name:?}, expected {expect:?}",
                j + 1
            )));
        }
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| fail(e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        let mut row = Vec::with_capacity(cols);
        for (j, field) in record.iter().enumerate() {
            if field.is_empty() {
                return Err(fail(format!(
                    "line {line}: missing value in column {}",
                    &header[j]
                )));
            }
            let v: f64 = field
                .parse()
                .map_err(|_| fail(format!("line {line}: {field:?} is not a number")))?;
            if !v.is_finite() {
                return Err(fail(format!("line {line}: non-finite value {field:?}")));
            }
            row.push(v);
        }
        ys.push(row.pop().expect("at least two columns"));
        xs.push(row);
    }
    Dataset::new(xs, ys).map_err(|e| fail(e.to_string()))
}
