//! File formats: dataset CSV, report JSON lines, results CSV and trace CSV.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};

use ldperm_core::data::{Dataset, Provenance};
use ldperm_core::privacy::{clip_record, PlayerReport};
use ldperm_core::solver::Trace;

pub const RESULT_COLUMNS: [&str; 10] = [
    "loss",
    "epsilon",
    "delta",
    "degree",
    "n",
    "p",
    "seed",
    "excess_risk",
    "baseline_value",
    "wall_ms",
];

pub const TRACE_COLUMNS: [&str; 4] = ["iteration", "player_id", "iterate_norm", "step_size"];

/// Writes `y, x_1, ..., x_p` rows under a header.
pub fn write_dataset<W: Write>(data: &Dataset, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["y".to_string()];
    header.extend((1..=data.dim()).map(|j| format!("x{j}")));
    w.write_record(&header)?;
    for (x, y) in data.records() {
        let mut row = vec![y.to_string()];
        row.extend(x.iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a dataset CSV. A header row is optional and recognised by a
/// non-numeric first field.
pub fn read_dataset<R: Read>(input: R) -> Result<Dataset> {
    read_dataset_with(input, false)
}

/// Like [`read_dataset`], optionally projecting each record into the
/// feasible region first.
pub fn read_dataset_with<R: Read>(input: R, clip: bool) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(input);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut dim = None;
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        if rec.iter().all(str::is_empty) {
            continue;
        }
        let first = rec.get(0).unwrap_or("");
        if i == 0 && first.parse::<f64>().is_err() {
            continue;
        }
        let values: Vec<f64> = rec
            .iter()
            .map(|f| f.parse::<f64>().map_err(|e| anyhow!("row {}: {f:?}: {e}", i + 1)))
            .collect::<Result<_>>()?;
        if values.len() < 2 {
            bail!("row {}: need y and at least one feature", i + 1);
        }
        let p = values.len() - 1;
        match dim {
            None => dim = Some(p),
            Some(d) if d != p => bail!("row {}: expected {d} features, found {p}", i + 1),
            _ => {}
        }
        if clip {
            let (x, y) = clip_record(&values[1..], values[0]).map_err(|e| anyhow!("row {}: {e}", i + 1))?;
            ys.push(y);
            xs.extend(x);
        } else {
            ys.push(values[0]);
            xs.extend_from_slice(&values[1..]);
        }
    }
    let dim = dim.ok_or_else(|| anyhow!("dataset has no rows"))?;
    Dataset::new(xs, ys, dim).map_err(|e| {
        anyhow!("{e}; records must satisfy ||x|| <= 1 and |y| <= 1 (normalize the data or use clipping)")
    })
}

pub fn load_dataset(path: &Path, clip: bool) -> Result<Dataset> {
    let f = File::open(path).with_context(|| format!("opening dataset {}", path.display()))?;
    let data = read_dataset_with(BufReader::new(f), clip).with_context(|| format!("reading {}", path.display()))?;
    Ok(data.with_provenance(Provenance {
        generator: format!("csv:{}", path.display()),
        seed: 0,
        planted: None,
    }))
}

pub fn save_dataset(data: &Dataset, path: &Path) -> Result<()> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    write_dataset(data, BufWriter::new(f))
}

/// One line of a reports file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRecord {
    pub player_id: u64,
    pub x0: Vec<f64>,
    pub y0: f64,
    pub x_copies: Vec<Vec<f64>>,
    pub y_copies: Vec<f64>,
}

impl From<&PlayerReport> for ReportRecord {
    fn from(r: &PlayerReport) -> Self {
        ReportRecord {
            player_id: r.player_id,
            x0: r.x0().to_vec(),
            y0: r.y0(),
            x_copies: (0..r.num_copies()).map(|k| r.x_copy(k).to_vec()).collect(),
            y_copies: r.y_copies().to_vec(),
        }
    }
}

/// Recovers `d` from the copy count `d (d + 1)`.
pub fn degree_from_copies(m: usize) -> Option<usize> {
    let d = ((m as f64).sqrt()) as usize;
    (d..=d + 1).find(|&d| d >= 1 && d * (d + 1) == m)
}

impl TryFrom<ReportRecord> for PlayerReport {
    type Error = anyhow::Error;

    fn try_from(r: ReportRecord) -> Result<Self> {
        let m = r.y_copies.len();
        let d = degree_from_copies(m)
            .ok_or_else(|| anyhow!("player {}: {m} copies is not d(d+1) for any d >= 1", r.player_id))?;
        if r.x_copies.len() != m {
            bail!(
                "player {}: {} x copies but {m} y copies",
                r.player_id,
                r.x_copies.len()
            );
        }
        let p = r.x0.len();
        let mut flat = Vec::with_capacity(m * p);
        for (k, c) in r.x_copies.iter().enumerate() {
            if c.len() != p {
                bail!("player {}: copy {k} has length {}, expected {p}", r.player_id, c.len());
            }
            flat.extend_from_slice(c);
        }
        PlayerReport::new(r.player_id, d, r.x0, r.y0, flat, r.y_copies)
            .map_err(|e| anyhow!("player {}: {e}", r.player_id))
    }
}

pub fn write_reports<W: Write>(reports: &[PlayerReport], out: W) -> Result<()> {
    let mut out = BufWriter::new(out);
    for r in reports {
        serde_json::to_writer(&mut out, &ReportRecord::from(r))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_reports<R: Read>(input: R) -> Result<Vec<PlayerReport>> {
    let mut reports = Vec::new();
    for (i, line) in BufReader::new(input).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ReportRecord = serde_json::from_str(&line).with_context(|| format!("line {}", i + 1))?;
        reports.push(PlayerReport::try_from(rec).with_context(|| format!("line {}", i + 1))?);
    }
    if let Some(first) = reports.first() {
        let (d, p) = (first.degree(), first.dim());
        if let Some(bad) = reports.iter().find(|r| r.degree() != d || r.dim() != p) {
            bail!(
                "player {} has degree {} and dimension {}, the first report has {d} and {p}",
                bad.player_id,
                bad.degree(),
                bad.dim()
            );
        }
    }
    Ok(reports)
}

/// One row of a results file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub loss: String,
    pub epsilon: f64,
    pub delta: f64,
    pub degree: usize,
    pub n: usize,
    pub p: usize,
    pub seed: u64,
    pub excess_risk: f64,
    pub baseline_value: f64,
    pub wall_ms: u64,
}

pub fn write_results<W: Write>(rows: &[ResultRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    if rows.is_empty() {
        w.write_record(RESULT_COLUMNS)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_results<R: Read>(input: R) -> Result<Vec<ResultRow>> {
    let mut reader = csv::Reader::from_reader(input);
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header != RESULT_COLUMNS {
        bail!("unexpected results header {header:?}, expected {RESULT_COLUMNS:?}");
    }
    reader
        .deserialize()
        .map(|r| r.map_err(anyhow::Error::from))
        .collect()
}

pub fn write_trace<W: Write>(trace: &Trace, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACE_COLUMNS)?;
    for r in &trace.records {
        w.write_record([
            r.iteration.to_string(),
            r.player_id.to_string(),
            r.iterate_norm.to_string(),
            r.step_size.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
