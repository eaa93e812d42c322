//! Text serializations of run artifacts. Floats use Rust's shortest
//! round-trip formatting and absent values are empty CSV fields.

use std::fmt::Write as _;
use std::path::Path;

use serde_json::{json, Value};

use crate::distill::EpochRecord;
use crate::error::{Error, Result};
use crate::eval::{Accuracy, RunMetrics};
use crate::linalg::Matrix;

pub fn write(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn acc_fields(a: Option<Accuracy>) -> [String; 2] {
    [opt(a.map(|a| a.top1)), opt(a.map(|a| a.top5))]
}

pub const METRICS_HEADER: &str = "round,lr,clip_norm,sigma,client_top1,client_top5,server_top1,server_top5";

pub fn metrics_csv(metrics: &RunMetrics) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in &metrics.rounds {
        let [c1, c5] = acc_fields(r.client);
        let [s1, s5] = acc_fields(r.server);
        let _ = writeln!(out, "{},{},{},{},{c1},{c5},{s1},{s5}", r.round, r.lr, opt(r.clip_norm), opt(r.sigma));
    }
    out
}

/// Participation bookkeeping that does not belong in the metrics table.
pub fn round_details_csv(metrics: &RunMetrics) -> String {
    let mut out = String::from("round,participants,surviving,skipped,max_clipped_norm\n");
    for r in &metrics.rounds {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.round,
            r.participants,
            r.surviving,
            u8::from(r.skipped),
            opt(r.max_clipped_norm)
        );
    }
    out
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,lr,l1,l2,cos,ce,total,teacher_ce,client_top1,client_top5,server_top1,server_top5\n");
    for h in history {
        let [c1, c5] = acc_fields(h.client);
        let [s1, s5] = acc_fields(h.server);
        let l = &h.loss;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{c1},{c5},{s1},{s5}",
            h.epoch, h.lr, l.l1_term, l.l2_term, l.cos_term, l.ce_term, l.total, h.teacher_ce
        );
    }
    out
}

/// Square count matrix with a `C` header line, one row per line.
pub fn count_matrix_text(m: &[Vec<u64>]) -> String {
    let mut out = format!("{}\n", m.len());
    for row in m {
        let line: Vec<String> = row.iter().map(u64::to_string).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

pub fn real_matrix_text(m: &Matrix) -> String {
    let mut out = format!("{}\n", m.rows());
    for row in m.row_iter() {
        let line: Vec<String> = row.iter().map(f64::to_string).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

/// Rows are classes, columns are clients.
pub fn partition_csv(counts: &[Vec<usize>], num_clients: usize) -> String {
    let mut out = String::from("class");
    for k in 0..num_clients {
        let _ = write!(out, ",client_{k}");
    }
    out.push('\n');
    for (c, row) in counts.iter().enumerate() {
        let _ = write!(out, "{c}");
        for n in row {
            let _ = write!(out, ",{n}");
        }
        out.push('\n');
    }
    out
}

/// Run manifest: command, resolved configuration and produced files.
pub fn manifest(command: &str, config: &std::collections::BTreeMap<&'static str, String>, outputs: &[String]) -> String {
    let v: Value = json!({
        "tool": "cafkt",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "parallel_feature": crate::exec::parallel_available(),
        "config": config,
        "outputs": outputs,
    });
    let mut s = serde_json::to_string_pretty(&v).expect("manifest values are plain strings");
    s.push('\n');
    s
}
