use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::DIVERGENCE_NORM;
use crate::error::Error;
use crate::linalg;
use crate::sampler::Strategy;
use crate::types::{Iterate, OracleCounters};

pub const CSV_HEADER: &str = "step,epoch,hypergrad_norm,loss,y_err,u_err,gc_f,gc_g,jv_g,hv_g,wall_seconds";

/// Metrics at one evaluation point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: usize,
    /// Completed epochs at `step`.
    pub epoch: usize,
    pub hypergrad_norm: f64,
    pub loss: Option<f64>,
    pub y_err: Option<f64>,
    pub u_err: Option<f64>,
    pub counters: OracleCounters,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub algorithm: String,
    pub strategy: Strategy,
    pub seed: u64,
    pub records: Vec<TraceRecord>,
    pub final_iterate: Iterate,
    /// Stopped early by the wall-clock limit.
    pub truncated: bool,
    /// Oracle calls made by the solver itself.
    pub counters: OracleCounters,
    /// Oracle calls spent on reference evaluations for the records.
    pub reference_counters: OracleCounters,
    /// Projection radius used for `u`, if the algorithm has one.
    pub iota: Option<f64>,
    /// `‖u‖` right after each epoch-boundary projection.
    pub boundary_u_norms: Vec<f64>,
}

impl RunTrace {
    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }

    pub fn final_hypergrad_norm(&self) -> Option<f64> {
        self.last().map(|r| r.hypergrad_norm)
    }

    /// Epoch-boundary projections that left `‖u‖ > ι`.
    pub fn projection_violations(&self) -> usize {
        match self.iota {
            Some(iota) => self.boundary_u_norms.iter().filter(|&&n| !(n <= iota)).count(),
            None => 0,
        }
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{CSV_HEADER}")?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.records {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{}",
                r.step,
                r.epoch,
                r.hypergrad_norm,
                opt(r.loss),
                opt(r.y_err),
                opt(r.u_err),
                r.counters.gc_f,
                r.counters.gc_g,
                r.counters.jv_g,
                r.counters.hv_g,
                r.wall_seconds
            )?;
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ascii output")
    }
}

/// First recorded epoch with `hypergrad_norm <= target`.
pub fn epochs_to_tolerance(trace: &RunTrace, target: f64) -> Option<usize> {
    trace
        .records
        .iter()
        .find(|r| r.hypergrad_norm <= target)
        .map(|r| r.epoch)
}

pub(crate) struct Metrics {
    pub hypergrad_norm: f64,
    pub loss: Option<f64>,
    pub y_err: Option<f64>,
    pub u_err: Option<f64>,
}

/// Shared bookkeeping of a run: records, wall clock, divergence.
pub(crate) struct Recorder {
    start: Instant,
    max_wall: Option<f64>,
    trace: RunTrace,
}

impl Recorder {
    pub fn new(algorithm: &str, strategy: Strategy, seed: u64, iota: Option<f64>, max_wall: Option<f64>, init: &Iterate) -> Self {
        Self {
            start: Instant::now(),
            max_wall,
            trace: RunTrace {
                algorithm: algorithm.to_string(),
                strategy,
                seed,
                records: Vec::new(),
                final_iterate: init.clone(),
                truncated: false,
                counters: OracleCounters::default(),
                reference_counters: OracleCounters::default(),
                iota,
                boundary_u_norms: Vec::new(),
            },
        }
    }

    pub fn boundary(&mut self, u: &[f64]) {
        self.trace.boundary_u_norms.push(linalg::norm(u));
    }

    pub fn boundary_norm(&mut self, n: f64) {
        self.trace.boundary_u_norms.push(n);
    }

    pub fn last_step(&self) -> Option<usize> {
        self.trace.records.last().map(|r| r.step)
    }

    pub fn record(&mut self, step: usize, epoch: usize, counters: OracleCounters, m: Metrics) {
        self.trace.records.push(TraceRecord {
            step,
            epoch,
            hypergrad_norm: m.hypergrad_norm,
            loss: m.loss,
            y_err: m.y_err,
            u_err: m.u_err,
            counters,
            wall_seconds: self.start.elapsed().as_secs_f64(),
        });
    }

    pub fn out_of_time(&self) -> bool {
        self.max_wall
            .is_some_and(|w| self.start.elapsed().as_secs_f64() > w)
    }

    pub fn finish(mut self, last: Iterate, counters: OracleCounters, reference: OracleCounters, truncated: bool) -> RunTrace {
        self.trace.final_iterate = last;
        self.trace.counters = counters;
        self.trace.reference_counters = reference;
        self.trace.truncated = truncated;
        self.trace
    }

    pub fn diverged(self, step: usize, reason: String, last: Iterate, counters: OracleCounters, reference: OracleCounters) -> Error {
        let trace = self.finish(last, counters, reference, false);
        Error::Diverged {
            step,
            reason,
            trace: Box::new(trace),
        }
    }
}

/// Reason to abort, if the state has left the finite, bounded region.
pub(crate) fn divergence(it: &Iterate) -> Option<String> {
    if !it.is_finite() {
        return Some("non-finite iterate".into());
    }
    let nx = linalg::norm(&it.x);
    if nx > DIVERGENCE_NORM {
        return Some(format!("‖x‖ = {nx:e} exceeds {DIVERGENCE_NORM:e}"));
    }
    None
}
