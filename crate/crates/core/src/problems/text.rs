//! Plain-text instance format.
//!
//! ```text
//! wior-instance <kind>
//! scalar <name> <value>
//! count <name> <value>
//! vector <name> <len>
//! <v_1> ... <v_len>
//! matrix <name> <rows> <cols>
//! <row 1: cols values>
//! ...
//! ```
//!
//! Values are decimal text in shortest round-trip form, so a write/read
//! cycle reproduces every bit. Lists are written as a `count` entry followed
//! by that many items of the same name.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub trait TextInstance: Sized {
    fn to_text(&self) -> String;
    fn from_text(text: &str) -> Result<Self>;
}

pub struct TextWriter {
    buf: String,
}

impl TextWriter {
    pub fn new(kind: &str) -> Self {
        Self {
            buf: format!("wior-instance {kind}\n"),
        }
    }

    pub fn scalar(&mut self, name: &str, v: f64) -> &mut Self {
        self.buf.push_str(&format!("scalar {name} {v:e}\n"));
        self
    }

    pub fn count(&mut self, name: &str, v: usize) -> &mut Self {
        self.buf.push_str(&format!("count {name} {v}\n"));
        self
    }

    pub fn vector(&mut self, name: &str, v: &[f64]) -> &mut Self {
        self.buf.push_str(&format!("vector {name} {}\n", v.len()));
        self.buf.push_str(&join(v.iter()));
        self.buf.push('\n');
        self
    }

    pub fn matrix(&mut self, name: &str, m: &DMatrix<f64>) -> &mut Self {
        self.buf
            .push_str(&format!("matrix {name} {} {}\n", m.nrows(), m.ncols()));
        for r in 0..m.nrows() {
            self.buf.push_str(&join(m.row(r).iter()));
            self.buf.push('\n');
        }
        self
    }

    pub fn vectors(&mut self, name: &str, items: &[DVector<f64>]) -> &mut Self {
        self.count(name, items.len());
        for it in items {
            self.vector(name, it.as_slice());
        }
        self
    }

    pub fn matrices(&mut self, name: &str, items: &[DMatrix<f64>]) -> &mut Self {
        self.count(name, items.len());
        for it in items {
            self.matrix(name, it);
        }
        self
    }

    pub fn finish(&mut self) -> String {
        std::mem::take(&mut self.buf)
    }
}

fn join<'a>(it: impl Iterator<Item = &'a f64>) -> String {
    it.map(|v| format!("{v:e}")).collect::<Vec<_>>().join(" ")
}

pub struct TextReader<'a> {
    lines: std::iter::Peekable<std::iter::Enumerate<std::str::Lines<'a>>>,
    line_no: usize,
}

impl<'a> TextReader<'a> {
    pub fn new(text: &'a str, kind: &str) -> Result<Self> {
        let mut r = Self {
            lines: text.lines().enumerate().peekable(),
            line_no: 0,
        };
        let head = r.next_line()?;
        let words: Vec<&str> = head.split_whitespace().collect();
        if words != ["wior-instance", kind] {
            return Err(r.err(format!("expected header `wior-instance {kind}`")));
        }
        Ok(r)
    }

    fn err(&self, message: impl Into<String>) -> Error {
        Error::Parse {
            line: self.line_no,
            message: message.into(),
        }
    }

    fn next_line(&mut self) -> Result<&'a str> {
        loop {
            match self.lines.next() {
                Some((i, l)) => {
                    self.line_no = i + 1;
                    if !l.trim().is_empty() {
                        return Ok(l);
                    }
                }
                None => return Err(self.err("unexpected end of input")),
            }
        }
    }

    fn entry(&mut self, tag: &str, name: &str, n_args: usize) -> Result<Vec<&'a str>> {
        let line = self.next_line()?;
        let words: Vec<&str> = line.split_whitespace().collect();
        if words.len() != 2 + n_args || words[0] != tag || words[1] != name {
            return Err(self.err(format!("expected `{tag} {name}` with {n_args} argument(s)")));
        }
        Ok(words[2..].to_vec())
    }

    fn parse_f64(&self, s: &str) -> Result<f64> {
        s.parse::<f64>()
            .map_err(|_| self.err(format!("bad number {s:?}")))
    }

    fn parse_usize(&self, s: &str) -> Result<usize> {
        s.parse::<usize>()
            .map_err(|_| self.err(format!("bad count {s:?}")))
    }

    fn row(&mut self, len: usize) -> Result<Vec<f64>> {
        let line = self.next_line()?;
        let vals = line
            .split_whitespace()
            .map(|w| self.parse_f64(w))
            .collect::<Result<Vec<_>>>()?;
        if vals.len() != len {
            return Err(self.err(format!("expected {len} values, found {}", vals.len())));
        }
        Ok(vals)
    }

    pub fn scalar(&mut self, name: &str) -> Result<f64> {
        let a = self.entry("scalar", name, 1)?;
        self.parse_f64(a[0])
    }

    pub fn count(&mut self, name: &str) -> Result<usize> {
        let a = self.entry("count", name, 1)?;
        self.parse_usize(a[0])
    }

    pub fn vector(&mut self, name: &str) -> Result<DVector<f64>> {
        let a = self.entry("vector", name, 1)?;
        let len = self.parse_usize(a[0])?;
        if len == 0 {
            // an empty row is skipped as blank
            return Ok(DVector::zeros(0));
        }
        Ok(DVector::from_vec(self.row(len)?))
    }

    pub fn matrix(&mut self, name: &str) -> Result<DMatrix<f64>> {
        let a = self.entry("matrix", name, 2)?;
        let rows = self.parse_usize(a[0])?;
        let cols = self.parse_usize(a[1])?;
        let mut data = Vec::with_capacity(rows * cols);
        if cols > 0 {
            for _ in 0..rows {
                data.extend(self.row(cols)?);
            }
        }
        Ok(DMatrix::from_row_slice(rows, cols, &data))
    }

    pub fn vectors(&mut self, name: &str) -> Result<Vec<DVector<f64>>> {
        let k = self.count(name)?;
        (0..k).map(|_| self.vector(name)).collect()
    }

    pub fn matrices(&mut self, name: &str) -> Result<Vec<DMatrix<f64>>> {
        let k = self.count(name)?;
        (0..k).map(|_| self.matrix(name)).collect()
    }

    pub fn finish(mut self) -> Result<()> {
        while let Some((i, l)) = self.lines.next() {
            if !l.trim().is_empty() {
                self.line_no = i + 1;
                return Err(self.err("trailing content"));
            }
        }
        Ok(())
    }
}
