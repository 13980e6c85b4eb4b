//! CSV ingestion and the on-disk artifact formats.
//!
//! Data files carry a header row whose first column holds sample ids.
//! Floats are written with Rust's shortest round-trip formatting, so a
//! value read back is bit-identical to the value written.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use ndarray::{Array1, Array2};
use serde::Serialize;
use zidm::model::{CountMatrix, Sample, Trace, TraceMeta};

use crate::error::{CliError, Result};

fn ingestion(path: &Path, msg: impl std::fmt::Display) -> CliError {
    CliError::Ingestion(format!("{}: {msg}", path.display()))
}

/// A parsed data file: header names (excluding the id column), row ids and
/// the raw cell strings.
struct RawTable {
    columns: Vec<String>,
    ids: Vec<String>,
    cells: Vec<Vec<String>>,
}

fn read_table(path: &Path) -> Result<RawTable> {
    let file = File::open(path).map_err(|e| ingestion(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(file);
    let header = reader.headers().map_err(|e| ingestion(path, e))?.clone();
    if header.is_empty() {
        return Err(ingestion(path, "missing header row"));
    }
    let columns: Vec<String> = header.iter().skip(1).map(|s| s.trim().to_string()).collect();
    let mut ids = Vec::new();
    let mut cells = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let line = r + 2;
        let record = record.map_err(|e| ingestion(path, format!("line {line}: {e}")))?;
        if record.len() != header.len() {
            return Err(ingestion(
                path,
                format!("line {line}: expected {} fields, found {} (ragged row)", header.len(), record.len()),
            ));
        }
        ids.push(record[0].trim().to_string());
        cells.push(record.iter().skip(1).map(|s| s.trim().to_string()).collect());
    }
    if ids.is_empty() {
        return Err(ingestion(path, "no data rows"));
    }
    Ok(RawTable { columns, ids, cells })
}

fn parse_cells<T: std::str::FromStr>(path: &Path, table: &RawTable, what: &str) -> Result<Array2<T>> {
    let (n, p) = (table.ids.len(), table.columns.len());
    let mut values = Vec::with_capacity(n * p);
    for (r, row) in table.cells.iter().enumerate() {
        for (c, cell) in row.iter().enumerate() {
            let at = || format!("line {}, column {} ({})", r + 2, c + 2, table.columns[c]);
            if cell.is_empty() || cell.eq_ignore_ascii_case("na") || cell.eq_ignore_ascii_case("nan") {
                return Err(ingestion(path, format!("missing value at {}", at())));
            }
            let v = cell.parse::<T>().map_err(|_| ingestion(path, format!("'{cell}' is not {what} at {}", at())))?;
            values.push(v);
        }
    }
    Ok(Array2::from_shape_vec((n, p), values).expect("rectangular by construction"))
}

pub fn read_counts(path: &Path) -> Result<CountMatrix> {
    let table = read_table(path)?;
    let counts = parse_cells::<u64>(path, &table, "a non-negative integer count")?;
    CountMatrix::with_names(counts, table.columns, table.ids).map_err(|e| ingestion(path, e))
}

/// Covariate columns (no intercept) whose ids must match `expected_ids`
/// in order.
pub fn read_covariates(path: &Path, expected_ids: &[String]) -> Result<(Array2<f64>, Vec<String>)> {
    let table = read_table(path)?;
    if table.ids != expected_ids {
        let first = table.ids.iter().zip(expected_ids).position(|(a, b)| a != b);
        return Err(ingestion(
            path,
            match first {
                Some(k) => format!("sample id '{}' on line {} does not match counts id '{}'", table.ids[k], k + 2, expected_ids[k]),
                None => format!("{} rows but the count matrix has {}", table.ids.len(), expected_ids.len()),
            },
        ));
    }
    let x = parse_cells::<f64>(path, &table, "a number")?;
    if let Some(((r, c), _)) = x.indexed_iter().find(|(_, v)| !v.is_finite()) {
        return Err(ingestion(path, format!("non-finite value at line {}, column {}", r + 2, c + 2)));
    }
    Ok((x, table.columns))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::WriterBuilder::new().from_writer(BufWriter::new(File::create(path)?)))
}

/// Writes an id column plus one column per entry of `columns`.
pub fn write_matrix<T: ToString>(path: &Path, id_name: &str, ids: &[String], columns: &[String], values: &Array2<T>) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header = vec![id_name.to_string()];
    header.extend(columns.iter().cloned());
    w.write_record(&header)?;
    for (id, row) in ids.iter().zip(values.rows()) {
        let mut rec = vec![id.clone()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_counts(path: &Path, counts: &CountMatrix) -> Result<()> {
    write_matrix(path, "sample_id", counts.sample_ids(), counts.taxon_names(), counts.counts())
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let file = File::open(path).map_err(|e| ingestion(path, e))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|e| ingestion(path, e))
}

pub const TRACE_HEADER: &str = "chain,iteration,block,j,index,value";

fn write_block_matrix<W: Write, T: Copy>(
    w: &mut W,
    prefix: &str,
    block: &str,
    a: &Array2<T>,
    by_column: bool,
    fmt: impl Fn(T) -> String,
) -> std::io::Result<()> {
    // Coefficient blocks are J×P (j = row); per-cell blocks are N×J and
    // written with j = column, index = row.
    for ((r, c), &v) in a.indexed_iter() {
        let (j, index) = if by_column { (c, r) } else { (r, c) };
        writeln!(w, "{prefix},{block},{j},{index},{}", fmt(v))?;
    }
    Ok(())
}

fn bit(b: bool) -> String {
    if b { "1" } else { "0" }.to_string()
}

fn real(v: f64) -> String {
    v.to_string()
}

/// Long-format gzip CSV: `chain,iteration,block,j,index,value`.
///
/// Blocks `beta_gamma`, `varphi`, `beta_theta`, `zeta` use `j` for the
/// component and `index` for the design column. Per-cell blocks `psi`,
/// `eta`, `c`, `omega` use `index` for the observation; `u` leaves `j`
/// empty. `n_active_gamma` / `n_active_theta` count included covariate
/// terms (intercepts excluded) and leave both `j` and `index` empty.
pub fn write_trace(path: &Path, trace: &Trace) -> Result<()> {
    // Fixed header mtime and level keep the bytes reproducible.
    let gz = GzEncoder::new(BufWriter::new(File::create(path)?), Compression::new(6));
    let mut w = BufWriter::new(gz);
    writeln!(w, "{TRACE_HEADER}")?;
    for s in &trace.samples {
        let prefix = format!("{},{}", s.chain, s.iteration);
        write_block_matrix(&mut w, &prefix, "beta_gamma", &s.beta_gamma, false, real)?;
        write_block_matrix(&mut w, &prefix, "varphi", &s.varphi, false, bit)?;
        if let (Some(b), Some(z)) = (&s.beta_theta, &s.zeta) {
            write_block_matrix(&mut w, &prefix, "beta_theta", b, false, real)?;
            write_block_matrix(&mut w, &prefix, "zeta", z, false, bit)?;
        }
        if let Some(a) = &s.psi {
            write_block_matrix(&mut w, &prefix, "psi", a, true, real)?;
        }
        if let Some(a) = &s.eta {
            write_block_matrix(&mut w, &prefix, "eta", a, true, bit)?;
        }
        if let Some(a) = &s.c {
            write_block_matrix(&mut w, &prefix, "c", a, true, real)?;
        }
        if let Some(a) = &s.omega {
            write_block_matrix(&mut w, &prefix, "omega", a, true, real)?;
        }
        if let Some(u) = &s.u {
            for (i, v) in u.iter().enumerate() {
                writeln!(w, "{prefix},u,,{i},{v}")?;
            }
        }
        let count = |a: &Array2<bool>| a.indexed_iter().filter(|((_, p), &on)| *p > 0 && on).count();
        writeln!(w, "{prefix},n_active_gamma,,,{}", count(&s.varphi))?;
        if let Some(z) = &s.zeta {
            writeln!(w, "{prefix},n_active_theta,,,{}", count(z))?;
        }
    }
    let gz = w.into_inner().map_err(|e| CliError::Io(e.to_string()))?;
    gz.finish()?.flush()?;
    Ok(())
}

fn empty_sample(meta: &TraceMeta, chain: usize, iteration: usize) -> Sample {
    let zi = meta.kind.zero_inflated();
    Sample {
        chain,
        iteration,
        beta_gamma: Array2::zeros((meta.j, meta.p_gamma)),
        varphi: Array2::from_elem((meta.j, meta.p_gamma), false),
        beta_theta: zi.then(|| Array2::zeros((meta.j, meta.p_theta))),
        zeta: zi.then(|| Array2::from_elem((meta.j, meta.p_theta), false)),
        psi: None,
        eta: None,
        c: None,
        u: None,
        omega: None,
    }
}

/// Reads a trace written by [`write_trace`]. `meta` supplies dimensions.
pub fn read_trace(path: &Path, meta: &TraceMeta) -> Result<Trace> {
    let file = File::open(path).map_err(|e| ingestion(path, e))?;
    let reader = BufReader::new(GzDecoder::new(file));
    let mut lines = reader.lines();
    match lines.next() {
        Some(Ok(h)) if h == TRACE_HEADER => {}
        Some(Ok(h)) => return Err(ingestion(path, format!("unexpected header '{h}'"))),
        Some(Err(e)) => return Err(ingestion(path, format!("unreadable trace: {e}"))),
        None => return Err(ingestion(path, "empty trace file")),
    }
    let (n, j) = (meta.n, meta.j);
    let mut samples: Vec<Sample> = Vec::new();
    for (k, line) in lines.enumerate() {
        let line_no = k + 2;
        let line = line.map_err(|e| ingestion(path, format!("line {line_no}: {e}")))?;
        let bad = |what: &str| ingestion(path, format!("line {line_no}: {what}: '{line}'"));
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(bad("expected 6 fields"));
        }
        let chain: usize = f[0].parse().map_err(|_| bad("bad chain"))?;
        let iteration: usize = f[1].parse().map_err(|_| bad("bad iteration"))?;
        if samples.last().is_none_or(|s| s.chain != chain || s.iteration != iteration) {
            samples.push(empty_sample(meta, chain, iteration));
        }
        let s = samples.last_mut().expect("just pushed");
        let idx = |field: &str| -> Result<usize> { field.parse().map_err(|_| bad("bad index")) };
        let value: f64 = f[5].parse().map_err(|_| bad("bad value"))?;
        let flag = value != 0.0;
        let block = f[2];
        let cell = |limit: (usize, usize)| -> Result<(usize, usize)> {
            let (jj, ii) = (idx(f[3])?, idx(f[4])?);
            if jj >= limit.0 || ii >= limit.1 {
                return Err(bad("index out of range"));
            }
            Ok((jj, ii))
        };
        match block {
            "beta_gamma" | "varphi" => {
                let (jj, p) = cell((j, meta.p_gamma))?;
                if block == "varphi" {
                    s.varphi[[jj, p]] = flag;
                } else {
                    s.beta_gamma[[jj, p]] = value;
                }
            }
            "beta_theta" | "zeta" => {
                let (jj, p) = cell((j, meta.p_theta))?;
                let missing = || bad("theta block in a model without zero inflation");
                if block == "zeta" {
                    s.zeta.as_mut().ok_or_else(missing)?[[jj, p]] = flag;
                } else {
                    s.beta_theta.as_mut().ok_or_else(missing)?[[jj, p]] = value;
                }
            }
            "psi" | "c" | "omega" => {
                let (jj, i) = cell((j, n))?;
                let slot = match block {
                    "psi" => &mut s.psi,
                    "c" => &mut s.c,
                    _ => &mut s.omega,
                };
                slot.get_or_insert_with(|| Array2::zeros((n, j)))[[i, jj]] = value;
            }
            "eta" => {
                let (jj, i) = cell((j, n))?;
                s.eta.get_or_insert_with(|| Array2::from_elem((n, j), false))[[i, jj]] = flag;
            }
            "u" => {
                let i = idx(f[4])?;
                if i >= n {
                    return Err(bad("index out of range"));
                }
                s.u.get_or_insert_with(|| Array1::zeros(n))[i] = value;
            }
            "n_active_gamma" | "n_active_theta" => {}
            _ => return Err(bad("unknown block")),
        }
    }
    Ok(Trace { meta: meta.clone(), samples })
}
