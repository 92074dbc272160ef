//! Header-addressed CSV tables, the input format of the analysis commands.

use std::path::Path;

use crate::error::CliError;

#[derive(Debug, Default)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    /// Reads and concatenates tables that share one header row.
    pub fn read_all(paths: &[impl AsRef<Path>]) -> Result<Table, CliError> {
        let mut table = Table::default();
        for path in paths {
            let path = path.as_ref();
            let mut reader = csv::Reader::from_path(path)
                .map_err(|e| CliError::invalid(format!("cannot read {}: {e}", path.display())))?;
            let headers: Vec<String> = reader
                .headers()
                .map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))?
                .iter()
                .map(str::to_string)
                .collect();
            if table.headers.is_empty() {
                table.headers = headers;
            } else if table.headers != headers {
                return Err(CliError::invalid(format!("{}: header differs from the first table", path.display())));
            }
            for record in reader.records() {
                let record = record.map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))?;
                table.rows.push(record.iter().map(str::to_string).collect());
            }
        }
        Ok(table)
    }

    pub fn column(&self, name: &str) -> Result<usize, CliError> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::invalid(format!("no column `{name}` (have: {})", self.headers.join(", "))))
    }

    pub fn filter(mut self, filters: &[(String, String)]) -> Result<Table, CliError> {
        for (name, value) in filters {
            let c = self.column(name)?;
            self.rows.retain(|r| r[c] == *value);
        }
        Ok(self)
    }

    /// Joins the given columns of a row with `/`.
    pub fn key(&self, row: &[String], columns: &[usize]) -> String {
        columns.iter().map(|&c| row[c].as_str()).collect::<Vec<_>>().join("/")
    }

    pub fn number(&self, row: &[String], column: usize) -> Result<f64, CliError> {
        row[column].parse().map_err(|_| {
            CliError::invalid(format!("column `{}`: `{}` is not a number", self.headers[column], row[column]))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concatenates_and_filters() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.csv");
        let b = dir.path().join("b.csv");
        std::fs::write(&a, "q,eps,v\nMS,0.1,0.5\nVR,0.1,0.7\n").unwrap();
        std::fs::write(&b, "q,eps,v\nMS,0.01,0.4\n").unwrap();
        let t = Table::read_all(&[&a, &b]).unwrap();
        assert_eq!(t.rows.len(), 3);
        let t = t.filter(&[("eps".into(), "0.1".into())]).unwrap();
        assert_eq!(t.rows.len(), 2);
        let v = t.column("v").unwrap();
        assert_eq!(t.number(&t.rows[1], v).unwrap(), 0.7);
        assert!(t.column("missing").is_err());
    }

    #[test]
    fn mismatched_headers_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.csv");
        let b = dir.path().join("b.csv");
        std::fs::write(&a, "x,y\n1,2\n").unwrap();
        std::fs::write(&b, "x,z\n1,2\n").unwrap();
        assert!(Table::read_all(&[a, b]).is_err());
    }
}
