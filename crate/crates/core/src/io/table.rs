//! CSV tables. Floats are written in Rust's shortest round-trip form, so
//! equal values always produce equal text.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::Overlap;
use crate::orchestrator::{ElboRecord, ElboTerms};

/// Column header of ELBO traces.
pub const TRACE_HEADER: &str = "level,iteration,elbo,likelihood,categorical,entropy,gw_kl,bias_prior,velocity_prior,template_prior";

/// Column header of overlap tables; one row per (pair, region), pooled
/// scores repeated on each row of a pair, undefined values empty.
pub const OVERLAP_HEADER: &str = "source,target,region,target_voxels,overlap_voxels,tpr,pooled_weighted,pooled_unweighted";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub level: usize,
    pub iteration: usize,
    pub elbo: f64,
    pub likelihood: f64,
    pub categorical: f64,
    pub entropy: f64,
    pub gw_kl: f64,
    pub bias_prior: f64,
    pub velocity_prior: f64,
    pub template_prior: f64,
}

impl From<&ElboRecord> for TraceRow {
    fn from(r: &ElboRecord) -> Self {
        let t = &r.terms;
        TraceRow {
            level: r.level,
            iteration: r.iteration,
            elbo: t.total(),
            likelihood: t.likelihood,
            categorical: t.categorical,
            entropy: t.entropy,
            gw_kl: t.gw_kl,
            bias_prior: t.bias_prior,
            velocity_prior: t.velocity_prior,
            template_prior: t.template_prior,
        }
    }
}

impl TraceRow {
    pub fn terms(&self) -> ElboTerms {
        ElboTerms {
            likelihood: self.likelihood,
            categorical: self.categorical,
            entropy: self.entropy,
            gw_kl: self.gw_kl,
            bias_prior: self.bias_prior,
            velocity_prior: self.velocity_prior,
            template_prior: self.template_prior,
        }
    }
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Bundle(format!("CSV: {other:?}")),
    }
}

pub fn write_trace(path: impl AsRef<Path>, trace: &[ElboRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    for r in trace {
        w.serialize(TraceRow::from(r)).map_err(csv_error)?;
    }
    if trace.is_empty() {
        w.write_record(TRACE_HEADER.split(',')).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trace(path: impl AsRef<Path>) -> Result<Vec<TraceRow>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_error)?;
    let header: Vec<String> = r.headers().map_err(csv_error)?.iter().map(str::to_string).collect();
    if header.join(",") != TRACE_HEADER {
        return Err(Error::Bundle(format!("trace header `{}` is not `{TRACE_HEADER}`", header.join(","))));
    }
    r.deserialize().map(|row| row.map_err(csv_error)).collect()
}

#[derive(Serialize)]
struct OverlapRow<'a> {
    source: &'a str,
    target: &'a str,
    region: u32,
    target_voxels: usize,
    overlap_voxels: usize,
    tpr: Option<f64>,
    pooled_weighted: Option<f64>,
    pooled_unweighted: Option<f64>,
}

/// Writes `(source, target, overlap)` triples.
pub fn write_overlap<'a>(path: impl AsRef<Path>, pairs: impl IntoIterator<Item = (&'a str, &'a str, &'a Overlap)>) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path).map_err(csv_error)?;
    w.write_record(OVERLAP_HEADER.split(',')).map_err(csv_error)?;
    for (source, target, o) in pairs {
        for r in &o.regions {
            let row = OverlapRow {
                source,
                target,
                region: r.label,
                target_voxels: r.target_voxels,
                overlap_voxels: r.overlap_voxels,
                tpr: r.tpr,
                pooled_weighted: o.pooled_weighted,
                pooled_unweighted: o.pooled_unweighted,
            };
            w.serialize(row).map_err(csv_error)?;
        }
    }
    w.flush()?;
    Ok(())
}
