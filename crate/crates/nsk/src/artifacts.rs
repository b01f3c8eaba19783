//! Output directory bookkeeping and number formatting.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::nskf::{self, Snapshot};

/// 17 significant digits.
pub fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

/// Files written so far, in order.
#[derive(Debug)]
pub struct OutDir {
    dir: PathBuf,
    written: Vec<String>,
}

impl OutDir {
    pub fn create(dir: &Path) -> io::Result<Self> {
        fs::create_dir_all(dir)?;
        for stale in ["status.json", "error.json"] {
            let p = dir.join(stale);
            if p.exists() {
                fs::remove_file(p)?;
            }
        }
        Ok(OutDir { dir: dir.to_path_buf(), written: Vec::new() })
    }

    pub fn path(&self) -> &Path {
        &self.dir
    }

    pub fn written(&self) -> &[String] {
        &self.written
    }

    fn open(&mut self, name: &str) -> io::Result<BufWriter<File>> {
        let f = File::create(self.dir.join(name))?;
        self.written.push(name.into());
        Ok(BufWriter::new(f))
    }

    /// CSV with a header row; floats are written with [`fmt`].
    pub fn csv(&mut self, name: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<Cell>>) -> io::Result<()> {
        let mut w = csv::Writer::from_writer(self.open(name)?);
        w.write_record(header)?;
        for row in rows {
            w.write_record(row.iter().map(Cell::text))?;
        }
        w.flush()
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> io::Result<()> {
        let mut w = self.open(name)?;
        serde_json::to_writer_pretty(&mut w, value)?;
        w.write_all(b"\n")?;
        w.flush()
    }

    pub fn snapshot(&mut self, name: &str, s: &Snapshot) -> io::Result<()> {
        let mut w = self.open(name)?;
        s.write(&mut w)?;
        w.flush()
    }

    pub fn series(&mut self, name: &str, entries: &[(f64, Snapshot)]) -> io::Result<()> {
        let mut w = self.open(name)?;
        nskf::write_series(&mut w, entries)?;
        w.flush()
    }
}

/// One CSV field.
#[derive(Debug, Clone)]
pub enum Cell {
    F(f64),
    I(u64),
    S(String),
}

impl Cell {
    fn text(&self) -> String {
        match self {
            Cell::F(x) => fmt(*x),
            Cell::I(i) => i.to_string(),
            Cell::S(s) => s.clone(),
        }
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::F(x)
    }
}

impl From<usize> for Cell {
    fn from(i: usize) -> Self {
        Cell::I(i as u64)
    }
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::S(s.into())
    }
}
