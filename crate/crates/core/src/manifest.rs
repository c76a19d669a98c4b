//! Run manifest and loss-trace CSV written next to every edited image.

use serde::{Deserialize, Serialize};

use crate::bench::Method;
use crate::instruction::{EditSpec, HyperParams};
use crate::lro::{RunResult, TraceEntry};
use crate::pipeline::ComponentSelection;

pub const MANIFEST_VERSION: u32 = 1;
pub const TRACE_HEADER: [&str; 4] = ["t", "k", "eta", "loss"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: u32,
    pub method: Method,
    pub components: ComponentSelection,
    pub params: HyperParams,
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub instructions: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intent_note: Option<String>,
    pub events: usize,
    pub cancelled: bool,
    pub latency_ms: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_loss: Option<f64>,
    pub loss_trace: Vec<TraceEntry>,
}

impl RunManifest {
    pub fn new<T>(
        spec: &EditSpec,
        method: Method,
        components: ComponentSelection,
        seed: u64,
        result: &RunResult<T>,
    ) -> Self {
        Self {
            version: MANIFEST_VERSION,
            method,
            components,
            params: spec.params,
            seed,
            width: spec.width(),
            height: spec.height(),
            instructions: spec.instructions.len(),
            intent_note: spec.intent_note.clone(),
            events: result.loss_trace.len(),
            cancelled: result.cancelled,
            latency_ms: result.latency_ms,
            final_loss: result.loss_trace.last().map(|e| e.loss),
            loss_trace: result.loss_trace.clone(),
        }
    }
}

/// `t,k,eta,loss` rows with shortest round-trip float formatting.
pub fn trace_csv(trace: &[TraceEntry]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(TRACE_HEADER).expect("in-memory write");
    for e in trace {
        w.serialize((e.t, e.k, e.eta, e.loss)).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is utf-8")
}

pub fn parse_trace_csv(text: &str) -> Result<Vec<TraceEntry>, csv::Error> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize::<(usize, usize, f64, f64)>()
        .map(|r| r.map(|(t, k, eta, loss)| TraceEntry { t, k, eta, loss }))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trace_csv_round_trips_exactly() {
        let trace = vec![
            TraceEntry { t: 38, k: 0, eta: 0.0, loss: 12.5 },
            TraceEntry { t: 38, k: 1, eta: 1.0 / 60.0, loss: 0.1 + 0.2 },
        ];
        let text = trace_csv(&trace);
        assert!(text.starts_with("t,k,eta,loss\n38,0,0.0,12.5\n"));
        assert_eq!(parse_trace_csv(&text).unwrap(), trace);
    }
}
