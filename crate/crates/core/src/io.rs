//! File formats: CSV series, chain records, truth and graph JSON.
//!
//! Chain files hold one JSON object per line. Matrices are flattened in row
//! order, lag by lag; `K` keeps its lower triangle row by row; the indicator
//! string packs the off-diagonal indicators (lag, column, row order) four
//! bits per hex digit, most significant bit first.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluate::ScoreRow;
use crate::simulate::{SimulatedDataset, Truth};
use crate::types::{ChainDraw, ExpandedParams, StableVarParams, TimeSeries, UndirectedGraph};

/// Reads a series with a header row of variable names.
pub fn read_series_csv(path: &Path) -> Result<TimeSeries> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)?;
    let names: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    if names.is_empty() {
        return Err(Error::InvalidData("missing header row".into()));
    }
    let mut values = Vec::new();
    let mut n = 0;
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != names.len() {
            return Err(Error::InvalidData(format!(
                "row {} has {} fields, expected {}",
                row + 1,
                rec.len(),
                names.len()
            )));
        }
        for (col, field) in rec.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                Error::InvalidData(format!(
                    "row {}, column {}: cannot parse {field:?}",
                    row + 1,
                    col + 1
                ))
            })?;
            values.push(v);
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::InvalidData("no observations".into()));
    }
    TimeSeries::with_names(DMatrix::from_row_slice(n, names.len(), &values), names)
}

pub fn write_series_csv(path: &Path, y: &TimeSeries) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(y.names())?;
    for t in 0..y.n() {
        w.write_record(y.data().row(t).iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Per-column centring and scaling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub names: Vec<String>,
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
}

impl Standardization {
    /// Column means and sample standard deviations.
    pub fn fit(y: &TimeSeries) -> Result<Self> {
        if y.n() < 2 {
            return Err(Error::InvalidData(
                "need at least two observations to standardise".into(),
            ));
        }
        let mut means = Vec::with_capacity(y.m());
        let mut sds = Vec::with_capacity(y.m());
        for (k, col) in y.data().column_iter().enumerate() {
            let mean = col.mean();
            let sd =
                (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (y.n() - 1) as f64).sqrt();
            if !(sd > 0.0) {
                return Err(Error::InvalidData(format!(
                    "variable {} is constant",
                    y.names()[k]
                )));
            }
            means.push(mean);
            sds.push(sd);
        }
        Ok(Self {
            names: y.names().to_vec(),
            means,
            sds,
        })
    }

    pub fn apply(&self, y: &TimeSeries) -> Result<TimeSeries> {
        self.check(y)?;
        let data = DMatrix::from_fn(y.n(), y.m(), |t, k| {
            (y.data()[(t, k)] - self.means[k]) / self.sds[k]
        });
        TimeSeries::with_names(data, y.names().to_vec())
    }

    pub fn invert(&self, y: &TimeSeries) -> Result<TimeSeries> {
        self.check(y)?;
        let data = DMatrix::from_fn(y.n(), y.m(), |t, k| {
            y.data()[(t, k)] * self.sds[k] + self.means[k]
        });
        TimeSeries::with_names(data, y.names().to_vec())
    }

    fn check(&self, y: &TimeSeries) -> Result<()> {
        if y.m() != self.means.len() {
            return Err(Error::Dimension(format!(
                "{} variables, standardisation has {}",
                y.m(),
                self.means.len()
            )));
        }
        Ok(())
    }
}

/// Fits the standardisation and applies it.
pub fn standardize(y: &TimeSeries) -> Result<(TimeSeries, Standardization)> {
    let st = Standardization::fit(y)?;
    Ok((st.apply(y)?, st))
}

/// Sidecar describing the chain files of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainMeta {
    pub format: String,
    pub version: u32,
    pub m: usize,
    pub p: usize,
    pub names: Vec<String>,
    pub random_mu: bool,
    pub layout: ChainLayout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainLayout {
    pub z_tilde: String,
    pub gamma: String,
    pub k: String,
    pub g2: String,
    pub phi: String,
}

pub const CHAIN_FORMAT: &str = "stable-gvar-chain";

impl ChainMeta {
    pub fn new(m: usize, p: usize, names: Vec<String>, random_mu: bool) -> Self {
        Self {
            format: CHAIN_FORMAT.into(),
            version: 1,
            m,
            p,
            names,
            random_mu,
            layout: ChainLayout {
                z_tilde: "p blocks of m x m, each row-major".into(),
                gamma: "hex bits of off-diagonal indicators, order lag, column, row; msb first"
                    .into(),
                k: "lower triangle, row-major".into(),
                g2: "edge list [a, b] with a < b".into(),
                phi: "p blocks of m x m, each row-major".into(),
            },
        }
    }

    pub fn read(path: &Path) -> Result<Self> {
        let meta: Self = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        if meta.format != CHAIN_FORMAT {
            return Err(Error::InvalidData(format!(
                "{} is not a chain metadata file",
                path.display()
            )));
        }
        Ok(meta)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}

/// One line of a chain file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawRecord {
    pub iteration: u64,
    pub z_tilde: Vec<f64>,
    pub gamma: String,
    pub u: f64,
    pub tau: f64,
    pub vartheta: f64,
    pub omega: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(rename = "K")]
    pub k: Vec<f64>,
    pub g2: Vec<[usize; 2]>,
    pub phi: Vec<f64>,
}

fn flatten_blocks(mats: &[DMatrix<f64>]) -> Vec<f64> {
    mats.iter()
        .flat_map(|a| a.transpose().iter().copied().collect::<Vec<_>>())
        .collect()
}

fn unflatten_blocks(v: &[f64], m: usize, p: usize, what: &str) -> Result<Vec<DMatrix<f64>>> {
    if v.len() != m * m * p {
        return Err(Error::InvalidData(format!(
            "{what} has {} entries, expected {}",
            v.len(),
            m * m * p
        )));
    }
    Ok(v.chunks(m * m)
        .map(|c| DMatrix::from_row_slice(m, m, c))
        .collect())
}

/// Packs bits four per hex digit, most significant first.
pub fn pack_bits(bits: &[bool]) -> String {
    bits.chunks(4)
        .map(|c| {
            let v = c
                .iter()
                .enumerate()
                .fold(0u32, |acc, (i, &b)| acc | (u32::from(b) << (3 - i)));
            char::from_digit(v, 16).expect("nibble")
        })
        .collect()
}

pub fn unpack_bits(s: &str, len: usize) -> Result<Vec<bool>> {
    if s.len() != len.div_ceil(4) {
        return Err(Error::InvalidData(format!(
            "bit string of length {} cannot hold {len} bits",
            s.len()
        )));
    }
    let mut out = Vec::with_capacity(len);
    for ch in s.chars() {
        let v = ch
            .to_digit(16)
            .ok_or_else(|| Error::InvalidData(format!("invalid hex digit {ch:?}")))?;
        for i in 0..4 {
            if out.len() < len {
                out.push(v >> (3 - i) & 1 == 1);
            }
        }
    }
    Ok(out)
}

impl DrawRecord {
    pub fn from_draw(d: &ChainDraw) -> Self {
        let x = &d.expanded;
        let m = d.k.nrows();
        let gamma_bits = crate::evaluate::off_diagonal_entries(&x.gamma);
        let k = (0..m)
            .flat_map(|i| (0..=i).map(move |j| (i, j)))
            .map(|(i, j)| d.k[(i, j)])
            .collect();
        Self {
            iteration: d.iteration,
            z_tilde: flatten_blocks(&x.z_tilde),
            gamma: pack_bits(&gamma_bits),
            u: x.u,
            tau: x.tau,
            vartheta: x.vartheta,
            omega: x.omega,
            mu: x.mu,
            k,
            g2: d.g2.edges().into_iter().map(|(a, b)| [a, b]).collect(),
            phi: flatten_blocks(&d.phi),
        }
    }

    pub fn to_draw(&self, m: usize, p: usize) -> Result<ChainDraw> {
        let z_tilde = unflatten_blocks(&self.z_tilde, m, p, "z_tilde")?;
        let phi = unflatten_blocks(&self.phi, m, p, "phi")?;
        let bits = unpack_bits(&self.gamma, p * m * (m - 1))?;
        let mut it = bits.into_iter();
        let mut gamma = vec![DMatrix::from_element(m, m, true); p];
        for g in gamma.iter_mut() {
            for j in 0..m {
                for i in 0..m {
                    if i != j {
                        g[(i, j)] = it.next().expect("length checked");
                    }
                }
            }
        }
        if self.k.len() != m * (m + 1) / 2 {
            return Err(Error::InvalidData(format!(
                "K has {} entries, expected {}",
                self.k.len(),
                m * (m + 1) / 2
            )));
        }
        let mut k = DMatrix::zeros(m, m);
        let mut idx = 0;
        for i in 0..m {
            for j in 0..=i {
                k[(i, j)] = self.k[idx];
                k[(j, i)] = self.k[idx];
                idx += 1;
            }
        }
        let edges: Vec<(usize, usize)> = self.g2.iter().map(|e| (e[0], e[1])).collect();
        let expanded = ExpandedParams {
            z_tilde,
            gamma,
            u: self.u,
            tau: self.tau,
            vartheta: self.vartheta,
            omega: self.omega,
            mu: self.mu,
        };
        Ok(ChainDraw {
            iteration: self.iteration,
            expanded,
            phi,
            k,
            g2: UndirectedGraph::from_edges(m, &edges)?,
        })
    }
}

/// Appends draws to a chain file, one line each.
pub struct DrawWriter {
    out: BufWriter<File>,
}

impl DrawWriter {
    pub fn create(path: &Path) -> Result<Self> {
        Ok(Self {
            out: BufWriter::new(File::create(path)?),
        })
    }

    /// Opens an existing file for appending.
    pub fn append(path: &Path) -> Result<Self> {
        Ok(Self {
            out: BufWriter::new(File::options().append(true).open(path)?),
        })
    }

    pub fn write(&mut self, draw: &ChainDraw) -> Result<()> {
        serde_json::to_writer(&mut self.out, &DrawRecord::from_draw(draw))?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

pub fn read_draws(path: &Path, meta: &ChainMeta) -> Result<Vec<ChainDraw>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: DrawRecord = serde_json::from_str(&line)
            .map_err(|e| Error::InvalidData(format!("{} line {}: {e}", path.display(), i + 1)))?;
        out.push(rec.to_draw(meta.m, meta.p)?);
    }
    Ok(out)
}

/// Keeps only the records with iteration at most `last`, rewriting the file.
pub fn truncate_draws(path: &Path, last: u64) -> Result<usize> {
    let mut kept = Vec::new();
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: DrawRecord = serde_json::from_str(&line)?;
        if rec.iteration > last {
            break;
        }
        kept.push(line);
    }
    let mut w = BufWriter::new(File::create(path)?);
    for line in &kept {
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(kept.len())
}

fn nested(a: &DMatrix<f64>) -> Vec<Vec<f64>> {
    a.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn nested_bool(a: &DMatrix<bool>) -> Vec<Vec<u8>> {
    a.row_iter()
        .map(|r| r.iter().map(|&b| u8::from(b)).collect())
        .collect()
}

fn from_nested(v: &[Vec<f64>], m: usize, what: &str) -> Result<DMatrix<f64>> {
    if v.len() != m || v.iter().any(|r| r.len() != m) {
        return Err(Error::InvalidData(format!("{what} must be {m} x {m}")));
    }
    Ok(DMatrix::from_fn(m, m, |i, j| v[i][j]))
}

fn from_nested_bool(v: &[Vec<u8>], m: usize, what: &str) -> Result<DMatrix<bool>> {
    if v.len() != m || v.iter().any(|r| r.len() != m) {
        return Err(Error::InvalidData(format!("{what} must be {m} x {m}")));
    }
    Ok(DMatrix::from_fn(m, m, |i, j| v[i][j] != 0))
}

/// Generating parameters of a simulated dataset, as nested arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthFile {
    pub m: usize,
    pub p: usize,
    pub u: f64,
    pub z_tilde: Vec<Vec<Vec<f64>>>,
    pub gamma: Vec<Vec<Vec<u8>>>,
    pub phi: Vec<Vec<Vec<f64>>>,
    #[serde(rename = "K")]
    pub k: Vec<Vec<f64>>,
    /// `directed[b][a] = 1` when `a` Granger-causes `b` at some lag.
    pub directed: Vec<Vec<u8>>,
    pub undirected: Vec<Vec<u8>>,
}

impl TruthFile {
    pub fn new(params: &StableVarParams, truth: &Truth) -> Self {
        let m = params.k.nrows();
        let directed =
            DMatrix::from_fn(m, m, |b, a| a != b && truth.gamma.iter().any(|g| g[(b, a)]));
        let undirected = DMatrix::from_fn(m, m, |a, b| truth.g2.has_edge(a, b));
        Self {
            m,
            p: params.phi.len(),
            u: truth.u,
            z_tilde: truth.z_tilde.iter().map(nested).collect(),
            gamma: truth.gamma.iter().map(nested_bool).collect(),
            phi: params.phi.iter().map(nested).collect(),
            k: nested(&params.k),
            directed: nested_bool(&directed),
            undirected: nested_bool(&undirected),
        }
    }

    pub fn to_parts(&self) -> Result<(StableVarParams, Truth)> {
        let m = self.m;
        if self.z_tilde.len() != self.p || self.gamma.len() != self.p || self.phi.len() != self.p {
            return Err(Error::InvalidData(format!(
                "truth file must hold {} lags",
                self.p
            )));
        }
        let phi = self
            .phi
            .iter()
            .map(|a| from_nested(a, m, "phi"))
            .collect::<Result<_>>()?;
        let z_tilde = self
            .z_tilde
            .iter()
            .map(|a| from_nested(a, m, "z_tilde"))
            .collect::<Result<_>>()?;
        let gamma = self
            .gamma
            .iter()
            .map(|a| from_nested_bool(a, m, "gamma"))
            .collect::<Result<_>>()?;
        let g2 =
            UndirectedGraph::from_adjacency(from_nested_bool(&self.undirected, m, "undirected")?)?;
        let k = from_nested(&self.k, m, "K")?;
        Ok((
            StableVarParams { phi, k },
            Truth {
                gamma,
                z_tilde,
                u: self.u,
                g2,
            },
        ))
    }

    pub fn directed_adjacency(&self) -> Result<DMatrix<bool>> {
        from_nested_bool(&self.directed, self.m, "directed")
    }

    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}

/// Mixed graph with edge probabilities; `[a, b, prob]` means `a -> b`
/// for directed edges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphJson {
    pub nodes: Vec<String>,
    pub directed: Vec<(String, String, f64)>,
    pub undirected: Vec<(String, String, f64)>,
}

impl GraphJson {
    /// Edges whose probability strictly exceeds `threshold`; pass a negative
    /// threshold to keep every pair.
    pub fn from_probabilities(
        names: &[String],
        directed: &DMatrix<f64>,
        undirected: &DMatrix<f64>,
        threshold: f64,
    ) -> Self {
        let m = names.len();
        let mut d = Vec::new();
        let mut u = Vec::new();
        for a in 0..m {
            for b in 0..m {
                if a != b && directed[(b, a)] > threshold {
                    d.push((names[a].clone(), names[b].clone(), directed[(b, a)]));
                }
                if a < b && undirected[(a, b)] > threshold {
                    u.push((names[a].clone(), names[b].clone(), undirected[(a, b)]));
                }
            }
        }
        Self {
            nodes: names.to_vec(),
            directed: d,
            undirected: u,
        }
    }
}

/// Square matrix with a header and a leading name column.
pub fn write_matrix_csv(path: &Path, names: &[String], a: &DMatrix<f64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(std::iter::once("").chain(names.iter().map(String::as_str)))?;
    for (i, name) in names.iter().enumerate() {
        w.write_record(
            std::iter::once(name.clone()).chain(a.row(i).iter().map(|v| v.to_string())),
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_scores_csv(path: &Path, rows: &[ScoreRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub id: String,
    pub n: usize,
    pub m: usize,
    pub p: usize,
    pub r: f64,
    pub replicate: usize,
    pub data: String,
    pub truth: String,
}

/// Writes each dataset as `<id>.csv` plus `<id>.truth.json` and a manifest.
pub fn write_datasets(dir: &Path, datasets: &[SimulatedDataset]) -> Result<Vec<ManifestRow>> {
    std::fs::create_dir_all(dir)?;
    let mut rows = Vec::with_capacity(datasets.len());
    for ds in datasets {
        let data = format!("{}.csv", ds.id);
        let truth = format!("{}.truth.json", ds.id);
        write_series_csv(&dir.join(&data), &ds.series)?;
        TruthFile::new(&ds.params, &ds.truth).write(&dir.join(&truth))?;
        rows.push(ManifestRow {
            id: ds.id.clone(),
            n: ds.cell.n,
            m: ds.cell.m,
            p: ds.cell.p,
            r: ds.cell.r,
            replicate: ds.replicate + 1,
            data,
            truth,
        });
    }
    let mut w = csv::Writer::from_path(dir.join("manifest.csv"))?;
    for row in &rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(rows)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let mut rdr = csv::Reader::from_path(path)?;
    Ok(rdr.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// Pretty-printed JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}
