//! fvecs / ivecs and CSV readers and writers.
//!
//! Both binary formats store one record per row: a little-endian `i32`
//! dimension followed by that many little-endian `f32` (fvecs) or `i32`
//! (ivecs) values.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};

fn parse_records<T>(bytes: &[u8], read: impl Fn(&mut &[u8]) -> std::io::Result<T>) -> Result<Vec<Vec<T>>> {
    let mut rows = Vec::new();
    let mut dim: Option<usize> = None;
    let mut rest = bytes;
    while !rest.is_empty() {
        let offset = (bytes.len() - rest.len()) as u64;
        if rest.len() < 4 {
            return Err(Error::Parse {
                offset,
                message: "truncated record header".into(),
            });
        }
        let raw = rest.read_i32::<LittleEndian>()?;
        let d = usize::try_from(raw).map_err(|_| Error::Parse {
            offset,
            message: format!("negative dimension {raw}"),
        })?;
        match dim {
            None => dim = Some(d),
            Some(expected) if expected != d => {
                return Err(Error::Parse {
                    offset,
                    message: format!("record dimension {d} differs from {expected}"),
                })
            }
            Some(_) => {}
        }
        if rest.len() < d * 4 {
            return Err(Error::Parse {
                offset: offset + 4,
                message: format!("truncated payload: need {} bytes, have {}", d * 4, rest.len()),
            });
        }
        let mut row = Vec::with_capacity(d);
        for _ in 0..d {
            row.push(read(&mut rest)?);
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn parse_fvecs(bytes: &[u8]) -> Result<Vec<Vec<f32>>> {
    parse_records(bytes, |r| r.read_f32::<LittleEndian>())
}

pub fn parse_ivecs(bytes: &[u8]) -> Result<Vec<Vec<i32>>> {
    parse_records(bytes, |r| r.read_i32::<LittleEndian>())
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut buf)?;
    Ok(buf)
}

pub fn load_fvecs(path: impl AsRef<Path>) -> Result<Vec<Vec<f32>>> {
    parse_fvecs(&read_all(path.as_ref())?)
}

pub fn load_ivecs(path: impl AsRef<Path>) -> Result<Vec<Vec<i32>>> {
    parse_ivecs(&read_all(path.as_ref())?)
}

fn header(len: usize) -> Result<i32> {
    i32::try_from(len).map_err(|_| Error::InvalidParameter(format!("row length {len} does not fit a record header")))
}

pub fn write_fvecs<W: Write, V: AsRef<[f32]>>(mut w: W, rows: &[V]) -> Result<()> {
    for row in rows {
        let row = row.as_ref();
        w.write_i32::<LittleEndian>(header(row.len())?)?;
        for &x in row {
            w.write_f32::<LittleEndian>(x)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_ivecs<W: Write, V: AsRef<[i32]>>(mut w: W, rows: &[V]) -> Result<()> {
    for row in rows {
        let row = row.as_ref();
        w.write_i32::<LittleEndian>(header(row.len())?)?;
        for &x in row {
            w.write_i32::<LittleEndian>(x)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn save_fvecs<V: AsRef<[f32]>>(path: impl AsRef<Path>, rows: &[V]) -> Result<()> {
    write_fvecs(BufWriter::new(File::create(path)?), rows)
}

pub fn save_ivecs<V: AsRef<[i32]>>(path: impl AsRef<Path>, rows: &[V]) -> Result<()> {
    write_ivecs(BufWriter::new(File::create(path)?), rows)
}

/// Float matrix from CSV with a header row; every row must have the same width.
pub fn read_csv_vectors<R: Read>(r: R) -> Result<Vec<Vec<f32>>> {
    let mut reader = csv::Reader::from_reader(r);
    let mut rows = Vec::new();
    let mut width = None;
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        if *width.get_or_insert(record.len()) != record.len() {
            return Err(Error::Format(format!("line {line}: expected {} columns, found {}", width.unwrap_or(0), record.len())));
        }
        let row = record
            .iter()
            .map(|f| {
                f.trim()
                    .parse::<f32>()
                    .map_err(|_| Error::Format(format!("line {line}: not a number: {f:?}")))
            })
            .collect::<Result<Vec<f32>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

/// Writes `x0,x1,...` as the header followed by one row per vector.
pub fn write_csv_vectors<W: Write, V: AsRef<[f32]>>(w: W, rows: &[V]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let dim = rows.first().map_or(0, |r| r.as_ref().len());
    out.write_record((0..dim).map(|i| format!("x{i}")))?;
    for row in rows {
        out.write_record(row.as_ref().iter().map(|x| x.to_string()))?;
    }
    out.flush()?;
    Ok(())
}

/// Single-column label CSV with a header row.
pub fn read_csv_labels<R: Read>(r: R) -> Result<Vec<i32>> {
    let mut reader = csv::Reader::from_reader(r);
    let mut labels = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != 1 {
            return Err(Error::Format(format!("line {line}: label file must have one column")));
        }
        labels.push(
            record[0]
                .trim()
                .parse()
                .map_err(|_| Error::Format(format!("line {line}: not an integer label: {:?}", &record[0])))?,
        );
    }
    Ok(labels)
}

pub fn write_csv_labels<W: Write>(w: W, labels: &[i32]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["label"])?;
    for l in labels {
        out.write_record([l.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

/// Labels from an `.ivecs` file (one single-value record per row) or a CSV.
pub fn load_labels(path: impl AsRef<Path>) -> Result<Vec<i32>> {
    let path = path.as_ref();
    if path.extension().is_some_and(|e| e == "ivecs") {
        load_ivecs(path)?
            .into_iter()
            .enumerate()
            .map(|(i, row)| match row.as_slice() {
                [l] => Ok(*l),
                _ => Err(Error::Format(format!("label record {i} has {} values", row.len()))),
            })
            .collect()
    } else {
        read_csv_labels(File::open(path)?)
    }
}

/// Vectors from `.fvecs` or CSV, chosen by extension.
pub fn load_vectors(path: impl AsRef<Path>) -> Result<Vec<Vec<f32>>> {
    let path = path.as_ref();
    if path.extension().is_some_and(|e| e == "fvecs") {
        load_fvecs(path)
    } else {
        read_csv_vectors(File::open(path)?)
    }
}
