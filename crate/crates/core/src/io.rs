//! CSV and JSON persistence for matrices, observations and run manifests.
//!
//! Matrices are headerless CSV, one matrix row per line. Observation files
//! carry the header `i,row,col,y` with 1-based indices.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matops::Matrix;
use crate::sampling::ObservationSet;

pub fn write_matrix<W: Write>(w: W, a: &Matrix) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    for i in 0..a.nrows() {
        wtr.write_record(a.row(i).iter().map(|v| v.to_string()))?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_matrix<R: Read>(r: R) -> Result<Matrix> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_reader(r);
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec?;
        if *cols.get_or_insert(rec.len()) != rec.len() {
            return Err(Error::Parse(format!("row {} has {} fields", rows + 1, rec.len())));
        }
        for field in rec.iter() {
            data.push(parse_f64(field)?);
        }
        rows += 1;
    }
    let cols = cols.ok_or_else(|| Error::Parse("empty matrix file".into()))?;
    Ok(Matrix::from_row_slice(rows, cols, &data))
}

fn parse_f64(field: &str) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|e| Error::Parse(format!("`{field}`: {e}")))
}

pub fn save_matrix(path: impl AsRef<Path>, a: &Matrix) -> Result<()> {
    write_matrix(BufWriter::new(File::create(path)?), a)
}

pub fn load_matrix(path: impl AsRef<Path>) -> Result<Matrix> {
    read_matrix(BufReader::new(File::open(path)?))
}

#[derive(Debug, Serialize, Deserialize)]
struct ObservationRow {
    i: usize,
    row: usize,
    col: usize,
    y: f64,
}

pub fn write_observations<W: Write>(w: W, obs: &ObservationSet) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for (i, ((k, l), y)) in obs.iter().enumerate() {
        wtr.serialize(ObservationRow {
            i: i + 1,
            row: k + 1,
            col: l + 1,
            y,
        })?;
    }
    wtr.flush()?;
    Ok(())
}

/// Reads observations for an `m1 × m2` matrix. Rows are taken in file order.
pub fn read_observations<R: Read>(r: R, m1: usize, m2: usize) -> Result<ObservationSet> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut omegas = Vec::new();
    let mut ys = Vec::new();
    for rec in rdr.deserialize::<ObservationRow>() {
        let rec = rec?;
        if rec.row == 0 || rec.col == 0 {
            return Err(Error::Parse(format!("observation {}: indices are 1-based", rec.i)));
        }
        omegas.push((rec.row - 1, rec.col - 1));
        ys.push(rec.y);
    }
    ObservationSet::new(m1, m2, omegas, ys)
}

pub fn save_observations(path: impl AsRef<Path>, obs: &ObservationSet) -> Result<()> {
    write_observations(BufWriter::new(File::create(path)?), obs)
}

pub fn load_observations(path: impl AsRef<Path>, m1: usize, m2: usize) -> Result<ObservationSet> {
    read_observations(BufReader::new(File::open(path)?), m1, m2)
}

pub fn save_json<T: Serialize + ?Sized>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn load_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

/// Serializes `rows` as a CSV with a header derived from the row type.
pub fn write_rows<W: Write, T: Serialize>(w: W, rows: &[T]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn save_rows<T: Serialize>(path: impl AsRef<Path>, rows: &[T]) -> Result<()> {
    write_rows(BufWriter::new(File::create(path)?), rows)
}
