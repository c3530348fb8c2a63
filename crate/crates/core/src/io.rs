//! On-disk formats.
//!
//! Ensemble dump (`EVOENS01`), all integers and floats little-endian:
//!
//! ```text
//! magic     8 bytes  "EVOENS01"
//! spec_hash u64
//! s, t      f64, f64
//! d         u64
//! x         d x f64     starting point
//! n         u64
//! lineage   3 x u64     master seed, shard index, counter
//! divergent u64
//! weights   u8          1 when a log-weight column follows the states
//! columns   d x n x f64 coordinate j of every path, then j+1, ...
//! [log_w]   n x f64
//! ```
//!
//! Measure dump (`EVOMEA01`): magic, spec_hash, time tag, burn-in, d, start
//! point, n, lineage, coupling bias (f64), dropped (u64), then d columns.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::Serialize;

use crate::engine::{Ensemble, SeedLineage};
use crate::inequalities::{summarize, Counts, InequalityReport};
use crate::measures::EmpiricalMeasure;
use crate::stats::McEstimate;
use crate::{Error, Result};

pub const ENSEMBLE_MAGIC: &[u8; 8] = b"EVOENS01";
pub const MEASURE_MAGIC: &[u8; 8] = b"EVOMEA01";

struct Writer<W: Write>(W);

impl<W: Write> Writer<W> {
    fn u64(&mut self, v: u64) -> Result<()> {
        Ok(self.0.write_all(&v.to_le_bytes())?)
    }

    fn f64(&mut self, v: f64) -> Result<()> {
        Ok(self.0.write_all(&v.to_le_bytes())?)
    }

    fn lineage(&mut self, l: &SeedLineage) -> Result<()> {
        self.u64(l.master_seed)?;
        self.u64(l.shard_index)?;
        self.u64(l.counter)
    }

    fn columns(&mut self, rows: &[f64], d: usize) -> Result<()> {
        let n = rows.len() / d.max(1);
        let mut buf = Vec::with_capacity(8 * n);
        for j in 0..d {
            buf.clear();
            for i in 0..n {
                buf.extend_from_slice(&rows[i * d + j].to_le_bytes());
            }
            self.0.write_all(&buf)?;
        }
        Ok(())
    }
}

struct Reader<R: Read>(R);

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.0.read_exact(&mut b)?;
        Ok(b)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }

    fn len(&mut self, what: &str) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v)
            .ok()
            .filter(|v| *v < 1 << 40)
            .ok_or_else(|| Error::Format(format!("implausible {what} {v}")))
    }

    fn lineage(&mut self) -> Result<SeedLineage> {
        Ok(SeedLineage {
            master_seed: self.u64()?,
            shard_index: self.u64()?,
            counter: self.u64()?,
        })
    }

    fn vec(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }

    fn columns(&mut self, n: usize, d: usize) -> Result<Vec<f64>> {
        let mut rows = vec![0.0; n * d];
        for j in 0..d {
            for i in 0..n {
                rows[i * d + j] = self.f64()?;
            }
        }
        Ok(rows)
    }

    fn magic(&mut self, expected: &[u8; 8]) -> Result<()> {
        let m: [u8; 8] = self.bytes()?;
        if &m != expected {
            return Err(Error::Format(format!(
                "bad magic {:?}, expected {}",
                String::from_utf8_lossy(&m),
                String::from_utf8_lossy(expected)
            )));
        }
        Ok(())
    }
}

pub fn write_ensemble(out: impl Write, ens: &Ensemble, spec_hash: u64) -> Result<()> {
    let mut w = Writer(out);
    w.0.write_all(ENSEMBLE_MAGIC)?;
    w.u64(spec_hash)?;
    w.f64(ens.end_time)?;
    w.f64(ens.start_time)?;
    w.u64(ens.dim as u64)?;
    for v in &ens.start {
        w.f64(*v)?;
    }
    w.u64(ens.len() as u64)?;
    w.lineage(&ens.lineage)?;
    w.u64(ens.divergent as u64)?;
    w.0.write_all(&[ens.log_weights.is_some() as u8])?;
    w.columns(&ens.states, ens.dim)?;
    if let Some(lw) = &ens.log_weights {
        for v in lw {
            w.f64(*v)?;
        }
    }
    Ok(w.0.flush()?)
}

/// Returns the ensemble and the recorded spec hash.
pub fn read_ensemble(input: impl Read) -> Result<(Ensemble, u64)> {
    let mut r = Reader(input);
    r.magic(ENSEMBLE_MAGIC)?;
    let spec_hash = r.u64()?;
    let (s, t) = (r.f64()?, r.f64()?);
    let dim = r.len("dimension")?;
    let start = r.vec(dim)?;
    let n = r.len("sample count")?;
    let lineage = r.lineage()?;
    let divergent = r.len("divergent count")?;
    let [flag] = r.bytes::<1>()?;
    let states = r.columns(n, dim)?;
    let log_weights = match flag {
        0 => None,
        1 => Some(r.vec(n)?),
        f => return Err(Error::Format(format!("bad weight flag {f}"))),
    };
    Ok((
        Ensemble {
            start_time: t,
            end_time: s,
            start,
            dim,
            lineage,
            states,
            log_weights,
            divergent,
        },
        spec_hash,
    ))
}

pub fn write_measure(out: impl Write, m: &EmpiricalMeasure) -> Result<()> {
    let mut w = Writer(out);
    w.0.write_all(MEASURE_MAGIC)?;
    w.u64(m.spec_hash)?;
    w.f64(m.time_tag)?;
    w.f64(m.burn_in)?;
    w.u64(m.dim as u64)?;
    for v in &m.start {
        w.f64(*v)?;
    }
    w.u64(m.len() as u64)?;
    w.lineage(&m.lineage)?;
    w.f64(m.coupling_bias)?;
    w.u64(m.dropped as u64)?;
    w.columns(&m.particles, m.dim)?;
    Ok(w.0.flush()?)
}

pub fn read_measure(input: impl Read) -> Result<EmpiricalMeasure> {
    let mut r = Reader(input);
    r.magic(MEASURE_MAGIC)?;
    let spec_hash = r.u64()?;
    let (time_tag, burn_in) = (r.f64()?, r.f64()?);
    let dim = r.len("dimension")?;
    let start = r.vec(dim)?;
    let n = r.len("sample count")?;
    let lineage = r.lineage()?;
    let coupling_bias = r.f64()?;
    let dropped = r.len("dropped count")?;
    let particles = r.columns(n, dim)?;
    Ok(EmpiricalMeasure {
        time_tag,
        dim,
        particles,
        burn_in,
        start,
        lineage,
        spec_hash,
        coupling_bias,
        dropped,
    })
}

/// `name,value,stderr,n,seed`.
pub fn write_estimates_csv(out: impl Write, rows: &[(String, McEstimate, u64)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["name", "value", "stderr", "n", "seed"])
        .map_err(std::io::Error::from)?;
    for (name, e, seed) in rows {
        w.write_record([
            name.clone(),
            e.value.to_string(),
            e.stderr.to_string(),
            e.n.to_string(),
            seed.to_string(),
        ])
        .map_err(std::io::Error::from)?;
    }
    Ok(w.flush()?)
}

/// One row per report; parameters are packed as `key=value;...`.
pub fn write_reports_csv(out: impl Write, reports: &[InequalityReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "name",
        "tag",
        "params",
        "lhs",
        "lhs_se",
        "rhs",
        "rhs_se",
        "margin",
        "margin_se",
        "verdict",
        "seed",
        "notes",
    ])
    .map_err(std::io::Error::from)?;
    for r in reports {
        w.write_record([
            r.name.clone(),
            r.tag.clone(),
            r.params_string(),
            r.lhs.value.to_string(),
            r.lhs.stderr.to_string(),
            r.rhs.value.to_string(),
            r.rhs.stderr.to_string(),
            r.margin.value.to_string(),
            r.margin.stderr.to_string(),
            r.verdict.to_string(),
            r.seed.to_string(),
            r.notes.join(" | "),
        ])
        .map_err(std::io::Error::from)?;
    }
    Ok(w.flush()?)
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub total: Counts,
    pub by_tag: BTreeMap<String, Counts>,
}

pub fn summary(reports: &[InequalityReport]) -> Summary {
    let by_tag = summarize(reports);
    let mut total = Counts::default();
    for r in reports {
        total.add(r.verdict);
    }
    Summary { total, by_tag }
}

/// Two whitespace-separated columns with a `#` header line.
pub fn write_plot_data(
    mut out: impl Write,
    header: (&str, &str),
    rows: &[(f64, f64)],
) -> Result<()> {
    writeln!(out, "# {} {}", header.0, header.1)?;
    for (x, y) in rows {
        writeln!(out, "{x:e} {y:e}")?;
    }
    Ok(out.flush()?)
}
