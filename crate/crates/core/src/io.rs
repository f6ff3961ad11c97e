//! Plain CSV output with round-trippable floats.

use std::io::Write;

use crate::error::{invalid, Result};

/// Scientific notation with 17 significant digits, enough to round-trip
/// every `f64`.
pub fn float(v: f64) -> String {
    format!("{v:.16e}")
}

pub struct CsvWriter<W: Write> {
    inner: W,
    columns: usize,
}

impl<W: Write> CsvWriter<W> {
    pub fn new<S: AsRef<str>>(mut inner: W, header: &[S]) -> Result<Self> {
        let line = header.iter().map(|s| s.as_ref()).collect::<Vec<_>>().join(",");
        writeln!(inner, "{line}")?;
        Ok(Self { inner, columns: header.len() })
    }

    pub fn row<I, S>(&mut self, cells: I) -> Result<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let cells: Vec<S> = cells.into_iter().collect();
        if cells.len() != self.columns {
            return Err(invalid(format!("CSV row has {} cells, header has {}", cells.len(), self.columns)));
        }
        let line = cells.iter().map(|s| s.as_ref()).collect::<Vec<_>>().join(",");
        writeln!(self.inner, "{line}")?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        self.inner.flush()?;
        Ok(self.inner)
    }
}

/// Header `prefix_1 .. prefix_d`.
pub fn coordinate_columns(dim: usize) -> Vec<String> {
    (1..=dim).map(|i| format!("x_{i}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 6.02e23, f64::MIN_POSITIVE] {
            let s = float(v);
            assert_eq!(s.parse::<f64>().unwrap(), v);
        }
        assert_eq!(float(1.0), "1.0000000000000000e0");
    }

    #[test]
    fn rows_must_match_header() {
        let mut w = CsvWriter::new(Vec::new(), &["a", "b"]).unwrap();
        w.row(["1", "2"]).unwrap();
        assert!(w.row(["1"]).is_err());
        assert_eq!(String::from_utf8(w.finish().unwrap()).unwrap(), "a,b\n1,2\n");
    }
}
