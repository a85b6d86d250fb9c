//! Header-named grid of string cells: the in-memory image of a CSV file.

use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum TableError {
    #[error("header column {0} is empty")]
    EmptyColumnName(usize),
    #[error("duplicate header column `{0}`")]
    DuplicateColumn(String),
    #[error("row {row} has {found} cells, header has {expected}")]
    Ragged { row: usize, found: usize, expected: usize },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: Vec<String>, rows: Vec<Vec<String>>) -> Result<Self, TableError> {
        let mut seen = HashSet::new();
        for (i, h) in header.iter().enumerate() {
            if h.is_empty() {
                return Err(TableError::EmptyColumnName(i));
            }
            if !seen.insert(h.as_str()) {
                return Err(TableError::DuplicateColumn(h.clone()));
            }
        }
        for (i, r) in rows.iter().enumerate() {
            if r.len() != header.len() {
                return Err(TableError::Ragged {
                    row: i,
                    found: r.len(),
                    expected: header.len(),
                });
            }
        }
        Ok(Table { header, rows })
    }

    pub fn empty(header: Vec<String>) -> Result<Self, TableError> {
        Table::new(header, Vec::new())
    }

    pub fn header(&self) -> &[String] {
        &self.header
    }

    pub fn rows(&self) -> &[Vec<String>] {
        &self.rows
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.header.len()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    pub fn column(&self, idx: usize) -> impl Iterator<Item = &str> + '_ {
        self.rows.iter().map(move |r| r[idx].as_str())
    }

    pub fn push_row(&mut self, row: Vec<String>) -> Result<(), TableError> {
        if row.len() != self.header.len() {
            return Err(TableError::Ragged {
                row: self.rows.len(),
                found: row.len(),
                expected: self.header.len(),
            });
        }
        self.rows.push(row);
        Ok(())
    }

    /// Keeps only the listed columns, in the given order.
    pub fn select(&self, columns: &[usize]) -> Table {
        Table {
            header: columns.iter().map(|&c| self.header[c].clone()).collect(),
            rows: self
                .rows
                .iter()
                .map(|r| columns.iter().map(|&c| r[c].clone()).collect())
                .collect(),
        }
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Table, TableError> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let mut rows = Vec::new();
        for rec in rdr.records() {
            rows.push(rec?.iter().map(str::to_string).collect());
        }
        Table::new(header, rows)
    }

    pub fn read_csv_path(path: impl AsRef<Path>) -> Result<Table, TableError> {
        Table::read_csv(std::fs::File::open(path)?)
    }

    /// RFC 4180 output with `\n` record terminators.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), TableError> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(writer);
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("cells are utf-8")
    }

    pub fn write_csv_path(&self, path: impl AsRef<Path>) -> Result<(), TableError> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }
}
