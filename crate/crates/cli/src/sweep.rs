//! Parameter sweeps: one row per grid point, verdict transitions refined by
//! bisection along the first parameter.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use filippov_core::field::{decompose_sigma, RegionLabel, Side};
use filippov_core::flow::fold_approaches;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::commands::{classification, Output};
use crate::config::{RunConfig, SweepAnalysis};
use crate::CliError;

#[derive(Debug, Clone, Serialize)]
struct Row {
    index: usize,
    params: BTreeMap<String, f64>,
    verdict: Option<String>,
    stat: Option<f64>,
    error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
struct Transition {
    param: String,
    lo: f64,
    hi: f64,
    estimate: f64,
    from: String,
    to: String,
    /// Key statistic at both ends of the final bracket; a jump here marks a
    /// switch between branches rather than a zero crossing.
    stat_lo: f64,
    stat_hi: f64,
    fixed: BTreeMap<String, f64>,
}

fn short(l: RegionLabel) -> &'static str {
    match l {
        RegionLabel::Crossing => "C",
        RegionLabel::StableSliding => "S",
        RegionLabel::UnstableSliding => "U",
        RegionLabel::Tangential => "T",
    }
}

/// Verdict string and one key statistic at a parameter point.
fn evaluate(cfg: &RunConfig, params: &BTreeMap<String, f64>) -> Result<(String, f64), CliError> {
    let s = cfg.scenario_with(params)?;
    match cfg.sweep.analysis {
        SweepAnalysis::Decomposition => {
            let mut parts = Vec::new();
            let mut n = 0;
            for &sigma in s.field.sigmas() {
                let d = decompose_sigma(&s.field, sigma);
                n += d.intervals.len();
                let labels: Vec<&str> = d.intervals.iter().map(|i| short(i.label)).collect();
                let mut p = format!("{sigma}:{}", labels.join(""));
                if !d.findings.is_empty() {
                    p.push('*');
                }
                parts.push(p);
            }
            if s.is_degenerate() {
                parts.push("degenerate".into());
            }
            Ok((parts.join(" "), n as f64))
        }
        SweepAnalysis::Classify => {
            let r = classification(cfg, &s)?;
            let v = serde_json::to_value(&r.verdict).expect("verdict serializes");
            let tag = v["verdict"].as_str().unwrap_or("?").to_string();
            Ok((tag, r.evidence.len() as f64))
        }
        SweepAnalysis::FoldConnection => {
            let a = fold_approaches(&s.field, Side::Minus);
            let best = a
                .iter()
                .map(|a| a.miss)
                .fold(f64::NAN, |m, v| if m.is_nan() || v.abs() < m.abs() { v } else { m });
            if best.is_nan() {
                return Ok(("no-fold-orbit".into(), f64::NAN));
            }
            let tag = if best.abs() < 1e-12 {
                "hit"
            } else if best > 0.0 {
                "inside"
            } else {
                "outside"
            };
            Ok((tag.into(), best))
        }
    }
}

fn linspace(start: f64, end: f64, steps: usize) -> Vec<f64> {
    match steps {
        0 => Vec::new(),
        1 => vec![start],
        n => (0..n).map(|i| start + (end - start) * i as f64 / (n - 1) as f64).collect(),
    }
}

fn refine(cfg: &RunConfig, a: &Row, b: &Row, param: &str) -> Option<Transition> {
    let (from, to) = (a.verdict.clone()?, b.verdict.clone()?);
    let (mut lo, mut hi) = (a.params[param], b.params[param]);
    let fixed: BTreeMap<String, f64> = a.params.iter().filter(|(k, _)| *k != param).map(|(k, v)| (k.clone(), *v)).collect();
    let at = |x: f64| {
        let mut p = fixed.clone();
        p.insert(param.to_string(), x);
        evaluate(cfg, &p).ok()
    };
    let (mut stat_lo, mut stat_hi) = (a.stat.unwrap_or(f64::NAN), b.stat.unwrap_or(f64::NAN));
    while (hi - lo).abs() > cfg.sweep.refine_tol {
        let m = 0.5 * (lo + hi);
        match at(m) {
            Some((v, s)) if v == from => {
                lo = m;
                stat_lo = s;
            }
            r => {
                hi = m;
                stat_hi = r.map_or(f64::NAN, |r| r.1);
            }
        }
    }
    Some(Transition {
        param: param.to_string(),
        lo,
        hi,
        estimate: 0.5 * (lo + hi),
        from,
        to,
        stat_lo,
        stat_hi,
        fixed,
    })
}

pub fn sweep(cfg: &RunConfig, out: &mut Output) -> Result<Value, CliError> {
    let sw = &cfg.sweep;
    let axes: Vec<(String, Vec<f64>)> = sw.ranges.iter().map(|r| (r.param.clone(), linspace(r.start, r.end, r.steps))).collect();
    let mut points: Vec<BTreeMap<String, f64>> = Vec::new();
    if let Some((p1, v1)) = axes.first() {
        let outer: Vec<Option<f64>> = match axes.get(1) {
            Some((_, v2)) => v2.iter().map(|&v| Some(v)).collect(),
            None => vec![None],
        };
        for o in outer {
            for &x in v1 {
                let mut m = BTreeMap::new();
                m.insert(p1.clone(), x);
                if let (Some(v), Some((p2, _))) = (o, axes.get(1)) {
                    m.insert(p2.clone(), v);
                }
                points.push(m);
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(sw.workers)
        .build()
        .map_err(|e| CliError::Config(format!("worker pool: {e}")))?;
    let rows: Vec<Row> = pool.install(|| {
        points
            .par_iter()
            .enumerate()
            .map(|(index, p)| match evaluate(cfg, p) {
                Ok((v, s)) => Row { index, params: p.clone(), verdict: Some(v), stat: Some(s), error: None },
                Err(e) => Row { index, params: p.clone(), verdict: None, stat: None, error: Some(e.to_string()) },
            })
            .collect()
    });
    let mut transitions = Vec::new();
    if let Some((p1, v1)) = axes.first() {
        let line = v1.len().max(1);
        let pairs: Vec<(&Row, &Row)> = rows
            .chunks(line)
            .flat_map(|c| c.windows(2).map(|w| (&w[0], &w[1])))
            .filter(|(a, b)| a.verdict.is_some() && b.verdict.is_some() && a.verdict != b.verdict)
            .collect();
        transitions = pool.install(|| pairs.par_iter().filter_map(|(a, b)| refine(cfg, a, b, p1)).collect());
    }
    let names: Vec<&str> = axes.iter().map(|a| a.0.as_str()).collect();
    let mut csv = format!("index,{}verdict,stat,error\n", names.iter().map(|n| format!("{n},")).collect::<String>());
    for r in &rows {
        let vals: String = names.iter().map(|n| format!("{:.17e},", r.params[*n])).collect();
        let _ = writeln!(
            csv,
            "{},{vals}{},{},{}",
            r.index,
            r.verdict.as_deref().unwrap_or(""),
            r.stat.map(|s| format!("{s:.17e}")).unwrap_or_default(),
            r.error.as_deref().unwrap_or("").replace(',', ";")
        );
    }
    out.write("sweep.csv", &csv)?;
    let v = json!({ "analysis": sw.analysis, "rows": rows, "transitions": transitions });
    out.json("sweep.json", &v)?;
    Ok(json!({ "rows": rows.len(), "transitions": transitions }))
}
