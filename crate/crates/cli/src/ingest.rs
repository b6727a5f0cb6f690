//! CSV input: a header row, then `x_1..x_d,y` numeric rows.

use std::io::Read;
use std::path::Path;

use ste_core::{Dataset, Result, SteError};

/// A rectangular numeric table with its header.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl CsvTable {
    pub fn from_reader<R: Read>(r: R) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(r);
        let header: Vec<String> = reader
            .headers()
            .map_err(|e| SteError::Data(format!("unreadable header: {e}")))?
            .iter()
            .map(str::to_string)
            .collect();
        if header.is_empty() || header.iter().all(String::is_empty) {
            return Err(SteError::Data("empty file: a header row is required".into()));
        }
        let mut rows = Vec::new();
        for (i, rec) in reader.records().enumerate() {
            let row = i + 1;
            let rec = rec.map_err(|e| SteError::Data(format!("malformed row: {e}")).at_row(row))?;
            if rec.len() != header.len() {
                return Err(SteError::Data(format!("expected {} fields, found {}", header.len(), rec.len())).at_row(row));
            }
            let values = rec
                .iter()
                .enumerate()
                .map(|(c, cell)| match cell.parse::<f64>() {
                    Ok(v) if v.is_finite() => Ok(v),
                    _ => Err(SteError::Data(format!("column '{}': '{cell}' is not a finite number", header[c])).at_row(row)),
                })
                .collect::<Result<Vec<f64>>>()?;
            rows.push(values);
        }
        if rows.is_empty() {
            return Err(SteError::Data("no data rows".into()));
        }
        Ok(CsvTable { header, rows })
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| SteError::Data(format!("{}: {e}", path.display())))?;
        Self::from_reader(file)
    }

    pub fn n_cols(&self) -> usize {
        self.header.len()
    }
}

/// Reads `x_1..x_d,y` rows, dividing column `j` by `rescale[j]`.
pub fn ingest(path: &Path, rescale: Option<&[f64]>) -> Result<Dataset> {
    to_dataset(CsvTable::from_path(path)?, rescale)
}

pub fn to_dataset(table: CsvTable, rescale: Option<&[f64]>) -> Result<Dataset> {
    let cols = table.n_cols();
    if cols < 2 {
        return Err(SteError::Data("need at least one input column and a response column".into()));
    }
    let scale = match rescale {
        Some(s) if s.len() != cols => return Err(SteError::Dimension { expected: cols, got: s.len() }),
        Some(s) if s.iter().any(|c| !(c.is_finite() && *c > 0.0)) => {
            return Err(SteError::InvalidParams("rescale factors must be finite and positive".into()))
        }
        Some(s) => s.to_vec(),
        None => vec![1.0; cols],
    };
    let (x, y): (Vec<Vec<f64>>, Vec<f64>) = table
        .rows
        .into_iter()
        .map(|row| {
            let x = row[..cols - 1].iter().zip(&scale).map(|(v, c)| v / c).collect();
            (x, row[cols - 1] / scale[cols - 1])
        })
        .unzip();
    Dataset::new(x, y)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(text: &str) -> Result<CsvTable> {
        CsvTable::from_reader(text.as_bytes())
    }

    #[test]
    fn rescales_every_column() {
        let t = table("t,dji,ftse\n6000,12000,3000\n12000,18000,4500\n3,7,11\n").unwrap();
        let d = to_dataset(t, Some(&[6000.0, 6000.0, 6000.0])).unwrap();
        assert_eq!(d.row(0), &[1.0, 2.0]);
        assert_eq!(d.row(2), &[3.0 / 6000.0, 7.0 / 6000.0]);
        assert_eq!(d.y(), &[0.5, 0.75, 11.0 / 6000.0]);
    }

    #[test]
    fn identity_without_rescale() {
        let d = to_dataset(table("x,y\n1.5,2\n2.5,-3e2\n").unwrap(), None).unwrap();
        assert_eq!(d.row(1), &[2.5]);
        assert_eq!(d.y(), &[2.0, -300.0]);
    }

    #[test]
    fn reports_offending_row() {
        let mut text = String::from("x,y\n");
        for i in 1..=6 {
            text += &format!("{i},{i}\n");
        }
        text += "7,abc\n8,8\n";
        match table(&text) {
            Err(SteError::AtRow { row: 7, source }) => assert!(source.to_string().contains("abc")),
            other => panic!("{other:?}"),
        }
        assert!(matches!(table("x,y\n1,2\n3\n"), Err(SteError::AtRow { row: 2, .. })));
        assert!(matches!(table("x,y\n1,NaN\n"), Err(SteError::AtRow { row: 1, .. })));
    }

    #[test]
    fn empty_inputs() {
        assert!(table("").is_err());
        assert!(table("x,y\n").is_err());
        assert!(to_dataset(table("y\n1\n").unwrap(), None).is_err());
        let t = table("x,y\n1,2\n").unwrap();
        assert!(to_dataset(t.clone(), Some(&[1.0])).is_err());
        assert!(to_dataset(t, Some(&[1.0, 0.0])).is_err());
    }
}
