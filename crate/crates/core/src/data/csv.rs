use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::array::DenseArray;
use crate::error::{Error, Result};

/// Formats rows as CSV under `header`. Values use the shortest
/// representation that parses back to the same `f64`.
pub fn to_csv(header: &[&str], rows: &DenseArray) -> Result<String> {
    if rows.rank() != 2 || rows.shape()[1] != header.len() {
        return Err(Error::Dimension {
            op: "to_csv",
            detail: format!("{} columns for data {:?}", header.len(), rows.shape()),
        });
    }
    let mut out = header.join(",");
    out.push('\n');
    for row in rows.row_iter() {
        for (i, v) in row.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            write!(out, "{v}").unwrap();
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn write_csv(path: &Path, header: &[&str], rows: &DenseArray) -> Result<()> {
    fs::write(path, to_csv(header, rows)?)?;
    Ok(())
}

/// Parses numeric CSV with a header row; returns the header and the data.
pub fn parse_csv(text: &str) -> Result<(Vec<String>, DenseArray)> {
    let bad = |detail: String| Error::Format { kind: "CSV", detail };
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| bad("missing header row".into()))?
        .split(',')
        .map(|s| s.trim().to_string())
        .collect();
    let mut data = Vec::new();
    let mut n = 0;
    for (i, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != header.len() {
            return Err(bad(format!(
                "line {} has {} fields, header has {}",
                i + 2,
                fields.len(),
                header.len()
            )));
        }
        for f in fields {
            data.push(
                f.trim()
                    .parse::<f64>()
                    .map_err(|_| bad(format!("line {}: bad number {f:?}", i + 2)))?,
            );
        }
        n += 1;
    }
    Ok((header.clone(), DenseArray::new(vec![n, header.len()], data)?))
}

pub fn read_csv(path: &Path) -> Result<(Vec<String>, DenseArray)> {
    parse_csv(&fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_points_export_with_header() {
        let pts = DenseArray::from_rows(&[[0.1, -2.5], [1e-7, 3.0]]).unwrap();
        let text = to_csv(&["x1", "x2"], &pts).unwrap();
        assert!(text.starts_with("x1,x2\n"));
        let (header, back) = parse_csv(&text).unwrap();
        assert_eq!(header, vec!["x1", "x2"]);
        assert_eq!(back, pts);
        assert!(to_csv(&["x1"], &pts).is_err());
        assert!(parse_csv("a,b\n1,2,3\n").is_err());
    }
}
