//! The testing-matrix file format.
//!
//! Comma-separated, one row per individual and one column per day. The header
//! holds contiguous ISO dates, optionally preceded by one non-date column of
//! opaque id hints. Cells are `P`, `N` or empty. Cells beginning with `~` are
//! reserved for future result types and rejected for now.

use std::io::{Read, Write};

use chrono::NaiveDate;

use crate::error::{Error, Result};
use crate::population::Day;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Cell {
    #[default]
    Absent,
    Negative,
    Positive,
}

impl Cell {
    pub fn is_test(self) -> bool {
        self != Cell::Absent
    }

    fn symbol(self) -> &'static str {
        match self {
            Cell::Absent => "",
            Cell::Negative => "N",
            Cell::Positive => "P",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TestingMatrix {
    /// Calendar date of day 1.
    pub start: NaiveDate,
    pub id_hints: Option<Vec<String>>,
    pub rows: Vec<Vec<Cell>>,
}

impl TestingMatrix {
    pub fn new(start: NaiveDate, rows: Vec<Vec<Cell>>) -> Result<Self> {
        let m = TestingMatrix {
            start,
            id_hints: None,
            rows,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn days(&self) -> Day {
        self.rows.first().map_or(0, |r| r.len() as Day)
    }

    pub fn validate(&self) -> Result<()> {
        let width = self.days() as usize;
        if let Some(i) = self.rows.iter().position(|r| r.len() != width) {
            return Err(Error::Parse {
                line: i + 2,
                column: 0,
                message: format!("row has {} cells, expected {width}", self.rows[i].len()),
            });
        }
        if let Some(h) = &self.id_hints {
            if h.len() != self.rows.len() {
                return Err(Error::Config("id hints do not match row count".into()));
            }
        }
        Ok(())
    }

    /// Cell for individual `i` on day `t` (1-based).
    pub fn cell(&self, i: usize, t: Day) -> Cell {
        self.rows[i][(t - 1) as usize]
    }

    pub fn date_of(&self, t: Day) -> NaiveDate {
        self.start + chrono::Days::new((t - 1) as u64)
    }

    /// Number of tests on each day (index `t - 1`).
    pub fn daily_test_counts(&self) -> Vec<u64> {
        let mut out = vec![0u64; self.days() as usize];
        for r in &self.rows {
            for (k, c) in r.iter().enumerate() {
                out[k] += u64::from(c.is_test());
            }
        }
        out
    }

    pub fn total_tests(&self) -> u64 {
        self.daily_test_counts().iter().sum()
    }
}

fn parse_date(s: &str) -> Option<NaiveDate> {
    NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d").ok()
}

/// Parses a testing matrix; errors carry 1-based line and column numbers.
pub fn parse_testing_matrix<R: Read>(reader: R) -> Result<TestingMatrix> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut records = rdr.records();
    let parse_err = |line: usize, column: usize, message: String| Error::Parse {
        line,
        column,
        message,
    };
    let header = match records.next() {
        None => return Err(parse_err(1, 0, "empty file".into())),
        Some(r) => r.map_err(|e| parse_err(1, 0, e.to_string()))?,
    };
    let has_ids = header.get(0).is_some_and(|f| parse_date(f).is_none());
    let offset = usize::from(has_ids);
    let mut dates = Vec::new();
    for (k, f) in header.iter().enumerate().skip(offset) {
        let d = parse_date(f).ok_or_else(|| parse_err(1, k + 1, format!("`{f}` is not an ISO date")))?;
        if let Some(prev) = dates.last() {
            if d != *prev + chrono::Days::new(1) {
                return Err(parse_err(1, k + 1, format!("date {d} does not follow {prev}")));
            }
        }
        dates.push(d);
    }
    let Some(&start) = dates.first() else {
        return Err(parse_err(1, 0, "header has no date columns".into()));
    };
    let width = header.len();
    let mut rows = Vec::new();
    let mut ids = Vec::new();
    for (r, rec) in records.enumerate() {
        let line = r + 2;
        let rec = rec.map_err(|e| parse_err(line, 0, e.to_string()))?;
        if rec.len() == 1 && rec.get(0) == Some("") && width > 1 {
            // csv yields a single empty field for a blank line.
            continue;
        }
        if rec.len() != width {
            return Err(parse_err(line, 0, format!("row has {} fields, header has {width}", rec.len())));
        }
        if has_ids {
            ids.push(rec.get(0).unwrap_or_default().to_string());
        }
        let row = rec
            .iter()
            .enumerate()
            .skip(offset)
            .map(|(k, f)| match f.trim() {
                "" => Ok(Cell::Absent),
                "N" => Ok(Cell::Negative),
                "P" => Ok(Cell::Positive),
                s if s.starts_with('~') => Err(parse_err(line, k + 1, format!("reserved cell value `{s}`"))),
                s => Err(parse_err(line, k + 1, format!("unknown cell value `{s}`"))),
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(TestingMatrix {
        start,
        id_hints: has_ids.then_some(ids),
        rows,
    })
}

pub fn write_testing_matrix<W: Write>(w: W, m: &TestingMatrix) -> Result<()> {
    let mut wr = csv::WriterBuilder::new().from_writer(w);
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    let mut header: Vec<String> = Vec::new();
    if m.id_hints.is_some() {
        header.push("id_hint".into());
    }
    header.extend((1..=m.days()).map(|t| m.date_of(t).format("%Y-%m-%d").to_string()));
    wr.write_record(&header).map_err(io)?;
    for (i, r) in m.rows.iter().enumerate() {
        let mut rec: Vec<&str> = Vec::with_capacity(r.len() + 1);
        if let Some(h) = &m.id_hints {
            rec.push(&h[i]);
        }
        rec.extend(r.iter().map(|c| c.symbol()));
        wr.write_record(&rec).map_err(io)?;
    }
    wr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_small_matrix() {
        let m = parse_testing_matrix("2020-08-17,2020-08-18,2020-08-19\nN,,P\n,N,\n".as_bytes()).unwrap();
        assert_eq!(m.rows.len(), 2);
        assert_eq!(m.total_tests(), 3);
        assert_eq!(m.cell(0, 3), Cell::Positive);
        assert!(m.id_hints.is_none());
    }

    #[test]
    fn empty_file_is_an_error() {
        assert!(matches!(parse_testing_matrix("".as_bytes()), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn bad_cells_report_location() {
        let err = parse_testing_matrix("2020-08-17,2020-08-18\nN,\n,X\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, column: 2, .. }), "{err}");
        let err = parse_testing_matrix("2020-08-17,2020-08-18\n~Q,\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, column: 1, .. }), "{err}");
    }

    #[test]
    fn ragged_and_unordered_rejected() {
        assert!(parse_testing_matrix("2020-08-17,2020-08-18\nN\n".as_bytes()).is_err());
        assert!(parse_testing_matrix("2020-08-18,2020-08-17\nN,N\n".as_bytes()).is_err());
        assert!(parse_testing_matrix("2020-08-17,2020-08-19\nN,N\n".as_bytes()).is_err());
    }

    #[test]
    fn id_column_round_trips() {
        let text = "id_hint,2020-08-17,2020-08-18\na,N,\nb,,P\n";
        let m = parse_testing_matrix(text.as_bytes()).unwrap();
        assert_eq!(m.id_hints.as_deref(), Some(&["a".to_string(), "b".to_string()][..]));
        let mut out = Vec::new();
        write_testing_matrix(&mut out, &m).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), text);
    }
}
