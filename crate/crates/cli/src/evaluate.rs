use std::collections::HashMap;
use std::path::Path;

use serde::Serialize;

use emlabel_core::metrics::{alde, binary_prf, mnre, BinaryScores};

use crate::{Failure, MetricArg};

/// One `id<TAB>value` line, remembered with its line number for diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub line: usize,
    pub id: String,
    pub value: f64,
}

/// Parses `id<TAB>value[<TAB>...]` lines. Blank lines and `#` comments are
/// skipped; ratio metrics additionally require every value to be positive.
pub fn parse_values(name: &str, text: &str, positive: bool) -> Result<Vec<Entry>, Failure> {
    let mut out = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() || raw.starts_with('#') {
            continue;
        }
        let bad = |msg: String| Failure::Data(format!("{name} line {line}: {msg}"));
        let mut cols = raw.split('\t');
        let id = cols.next().unwrap_or_default().trim();
        if id.is_empty() {
            return Err(bad("empty id".into()));
        }
        let field = cols.next().ok_or_else(|| bad("expected id<TAB>value".into()))?.trim();
        let value: f64 = field
            .parse()
            .map_err(|_| bad(format!("value {field:?} is not a number")))?;
        if !value.is_finite() {
            return Err(bad(format!("value {field:?} is not finite")));
        }
        if positive && value <= 0.0 {
            return Err(bad(format!("value {value} must be positive for ratio metrics")));
        }
        if let Some(first) = seen.insert(id.to_string(), line) {
            return Err(bad(format!("duplicate id {id:?} (first on line {first})")));
        }
        out.push(Entry {
            line,
            id: id.to_string(),
            value,
        });
    }
    if out.is_empty() {
        return Err(Failure::Data(format!("{name} has no values")));
    }
    Ok(out)
}

/// Prediction/truth pairs in truth order; every id must appear in both files.
pub fn pair_up(
    pred_name: &str,
    pred: &[Entry],
    truth_name: &str,
    truth: &[Entry],
) -> Result<Vec<(f64, f64)>, Failure> {
    let by_id: HashMap<&str, &Entry> = pred.iter().map(|e| (e.id.as_str(), e)).collect();
    let truth_ids: HashMap<&str, ()> = truth.iter().map(|e| (e.id.as_str(), ())).collect();
    if let Some(extra) = pred.iter().find(|e| !truth_ids.contains_key(e.id.as_str())) {
        return Err(Failure::Data(format!(
            "{pred_name} line {}: id {:?} has no ground truth",
            extra.line, extra.id
        )));
    }
    truth
        .iter()
        .map(|t| {
            by_id.get(t.id.as_str()).map(|p| (p.value, t.value)).ok_or_else(|| {
                Failure::Data(format!("{truth_name} line {}: id {:?} has no prediction", t.line, t.id))
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "metric", rename_all = "snake_case")]
pub enum Report {
    Mnre { n: usize, value: f64 },
    Alde { n: usize, value: f64 },
    Prf {
        n: usize,
        threshold: f64,
        tp: u64,
        fp: u64,
        #[serde(rename = "fn")]
        fn_: u64,
        tn: u64,
        scores: BinaryScores,
    },
}

fn truth_bit(v: f64) -> Option<bool> {
    if v == 1.0 {
        Some(true)
    } else if v == 0.0 {
        Some(false)
    } else {
        None
    }
}

pub fn evaluate(metric: MetricArg, pairs: &[(f64, f64)], threshold: f64) -> Result<Report, Failure> {
    let n = pairs.len();
    let mean = |f: fn(f64, f64) -> emlabel_core::Result<f64>| -> Result<f64, Failure> {
        let mut total = 0.0;
        for &(p, t) in pairs {
            total += f(p, t)?;
        }
        Ok(total / n as f64)
    };
    Ok(match metric {
        MetricArg::Mnre => Report::Mnre { n, value: mean(mnre)? },
        MetricArg::Alde => Report::Alde { n, value: mean(alde)? },
        MetricArg::Prf => {
            let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
            for &(p, t) in pairs {
                let truth = truth_bit(t)
                    .ok_or_else(|| Failure::Data(format!("truth value {t} is not a 0/1 label")))?;
                match (p >= threshold, truth) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fn_ += 1,
                    (false, false) => tn += 1,
                }
            }
            Report::Prf {
                n,
                threshold,
                tp,
                fp,
                fn_,
                tn,
                scores: binary_prf(tp, fp, fn_, tn),
            }
        }
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |x| format!("{x:.4}"))
}

impl Report {
    pub fn to_text(&self) -> String {
        match self {
            Report::Mnre { n, value } => format!("mnre\t{value:.6}\tn={n}\n"),
            Report::Alde { n, value } => format!("alde\t{value:.6}\tn={n}\n"),
            Report::Prf {
                n,
                tp,
                fp,
                fn_,
                tn,
                scores,
                ..
            } => format!(
                "n\t{n}\ntp\t{tp}\nfp\t{fp}\nfn\t{fn_}\ntn\t{tn}\nprecision\t{}\nrecall\t{}\nf1\t{}\naccuracy\t{}\n",
                fmt_opt(scores.precision),
                fmt_opt(scores.recall),
                fmt_opt(scores.f1),
                fmt_opt(scores.accuracy)
            ),
        }
    }
}

pub fn run(pred_path: &Path, truth_path: &Path, metric: MetricArg, threshold: f64) -> Result<Report, Failure> {
    let read = |p: &Path| {
        std::fs::read_to_string(p).map_err(|e| Failure::Data(format!("cannot read {}: {e}", p.display())))
    };
    let positive = matches!(metric, MetricArg::Mnre | MetricArg::Alde);
    let (pn, tn) = (pred_path.display().to_string(), truth_path.display().to_string());
    let pred = parse_values(&pn, &read(pred_path)?, positive)?;
    let truth = parse_values(&tn, &read(truth_path)?, positive)?;
    let pairs = pair_up(&pn, &pred, &tn, &truth)?;
    evaluate(metric, &pairs, threshold)
}
