//! CSV observation files: a header row, an optional leading `group` column
//! with values in {1, 2}, then one numeric column per coordinate.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use crate::em::TrainingData;
use crate::error::{Error, Result};
use crate::ese::Group;

#[derive(Debug, Clone, PartialEq)]
pub struct Observations {
    pub columns: Vec<String>,
    /// Present iff the file has a `group` column.
    pub labels: Option<Vec<Group>>,
    pub rows: DMatrix<f64>,
}

impl Observations {
    pub fn dim(&self) -> usize {
        self.rows.ncols()
    }

    /// Rows split by group label.
    pub fn training_data(&self) -> Result<TrainingData> {
        let labels = self
            .labels
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("a group column is required".into()))?;
        let pick = |g: Group| {
            let idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == g).collect();
            DMatrix::from_fn(idx.len(), self.dim(), |i, j| self.rows[(idx[i], j)])
        };
        TrainingData::new(pick(Group::One), pick(Group::Two))
    }
}

pub fn parse_observations(text: &str, origin: &Path) -> Result<Observations> {
    let fmt = |message: String| Error::Format {
        path: origin.into(),
        message,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| fmt(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.is_empty() || header.iter().all(String::is_empty) {
        return Err(fmt("missing header row".into()));
    }
    let labelled = header[0].eq_ignore_ascii_case("group");
    let first = usize::from(labelled);
    let d = header.len() - first;
    if d == 0 {
        return Err(fmt("no coordinate columns".into()));
    }
    let mut labels = Vec::new();
    let mut values = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| fmt(e.to_string()))?;
        let row = line + 2;
        if labelled {
            let g = rec[0]
                .parse::<u8>()
                .ok()
                .and_then(Group::from_u8)
                .ok_or_else(|| {
                    fmt(format!(
                        "row {row}: group must be 1 or 2, got '{}'",
                        &rec[0]
                    ))
                })?;
            labels.push(g);
        }
        for j in first..header.len() {
            let v: f64 = rec[j].parse().map_err(|_| {
                fmt(format!(
                    "row {row}: column '{}' is not a number: '{}'",
                    header[j], &rec[j]
                ))
            })?;
            if !v.is_finite() {
                return Err(fmt(format!(
                    "row {row}: non-finite value in column '{}'",
                    header[j]
                )));
            }
            values.push(v);
        }
    }
    let n = values.len() / d;
    Ok(Observations {
        columns: header[first..].to_vec(),
        labels: labelled.then_some(labels),
        rows: DMatrix::from_row_slice(n, d, &values),
    })
}

pub fn read_observations(path: &Path) -> Result<Observations> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.into(),
        source,
    })?;
    parse_observations(&text, path)
}

/// `group,y1..yd` CSV text for the two groups.
pub fn format_training_csv(data: &TrainingData) -> String {
    let d = data.dim();
    let mut out = String::from("group");
    for j in 1..=d {
        out.push_str(&format!(",y{j}"));
    }
    out.push('\n');
    for g in 0..2 {
        for row in data.group(g).row_iter() {
            out.push_str(&(g + 1).to_string());
            for v in row.iter() {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Observations> {
        parse_observations(text, Path::new("mem.csv"))
    }

    #[test]
    fn labelled_and_unlabelled() {
        let o = parse("group,y1,y2\n1,0.5,1\n2,3,-1e-3\n").unwrap();
        assert_eq!(o.labels, Some(vec![Group::One, Group::Two]));
        assert_eq!(
            o.rows,
            DMatrix::from_row_slice(2, 2, &[0.5, 1.0, 3.0, -1e-3])
        );
        let o = parse("a,b\n1,2\n").unwrap();
        assert!(o.labels.is_none());
        assert_eq!(o.columns, ["a", "b"]);
    }

    #[test]
    fn rejects_bad_rows() {
        assert!(parse("group,y1\n3,0.5\n")
            .unwrap_err()
            .to_string()
            .contains("group must be 1 or 2"));
        assert!(parse("group,y1\n1,abc\n").is_err());
        assert!(parse("group,y1\n1,0.5,2\n").is_err());
        assert!(parse("group\n1\n").is_err());
        assert!(parse("y1\n1,0\n").is_err());
    }

    #[test]
    fn training_round_trip() {
        let y1 = DMatrix::from_row_slice(3, 1, &[0.1, 0.2, 0.3]);
        let y2 = DMatrix::from_row_slice(3, 1, &[1.0, 2.0, 3.5]);
        let data = TrainingData::new(y1.clone(), y2.clone()).unwrap();
        let back = parse(&format_training_csv(&data))
            .unwrap()
            .training_data()
            .unwrap();
        assert_eq!(back.group(0), &y1);
        assert_eq!(back.group(1), &y2);
    }
}
