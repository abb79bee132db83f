//! Side-by-side view of two metrics reports.

use ckalab_sim::MetricsReport;
use serde::Serialize;
use serde_json::Value;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Row {
    pub metric: String,
    pub a: Option<f64>,
    pub b: Option<f64>,
    /// `a / b`. Equal values give 1.0, including two zeros.
    pub ratio: Option<f64>,
}

pub fn ratio(a: f64, b: f64) -> Option<f64> {
    if a == b {
        Some(1.0)
    } else if b == 0.0 {
        None
    } else {
        Some(a / b)
    }
}

fn numeric_totals(report: &MetricsReport) -> Vec<(String, f64)> {
    match serde_json::to_value(&report.totals).expect("totals serialise") {
        Value::Object(m) => m
            .into_iter()
            .map(|(k, v)| (k, v.as_f64().expect("totals are numeric")))
            .collect(),
        _ => unreachable!("totals is a struct"),
    }
}

/// One row per flow latency, then one per total, in report order.
pub fn compare(a: &MetricsReport, b: &MetricsReport) -> Vec<Row> {
    let mut rows = Vec::new();
    let flows = a.flows.len().max(b.flows.len());
    for i in 0..flows {
        let fa = a.flows.get(i);
        let fb = b.flows.get(i);
        let (from, to) = fa
            .or(fb)
            .map(|f| (f.from.as_str(), f.to.as_str()))
            .expect("one side has the flow");
        let va = fa.and_then(|f| f.ttfpb_s);
        let vb = fb.and_then(|f| f.ttfpb_s);
        rows.push(Row {
            metric: format!("flow[{i}] {from}->{to} ttfpb_s"),
            a: va,
            b: vb,
            ratio: va.zip(vb).and_then(|(x, y)| ratio(x, y)),
        });
    }
    for ((name, va), (_, vb)) in numeric_totals(a).into_iter().zip(numeric_totals(b)) {
        rows.push(Row {
            metric: name,
            a: Some(va),
            b: Some(vb),
            ratio: ratio(va, vb),
        });
    }
    rows
}

/// Shortest round-trip spelling, always with a decimal point for non-integers.
pub fn fmt_num(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

fn fmt_ratio(r: Option<f64>) -> String {
    match r {
        Some(r) => format!("{:.3}", r),
        None => "-".into(),
    }
}

/// Aligned text table headed by the two scenario names.
pub fn render(a_name: &str, b_name: &str, rows: &[Row]) -> String {
    let cells: Vec<[String; 4]> = rows
        .iter()
        .map(|r| {
            [
                r.metric.clone(),
                r.a.map(fmt_num).unwrap_or_else(|| "-".into()),
                r.b.map(fmt_num).unwrap_or_else(|| "-".into()),
                fmt_ratio(r.ratio),
            ]
        })
        .collect();
    let header = [
        "metric".to_string(),
        a_name.to_string(),
        b_name.to_string(),
        "ratio".to_string(),
    ];
    let mut width = [0usize; 4];
    for row in std::iter::once(&header).chain(&cells) {
        for (w, c) in width.iter_mut().zip(row) {
            *w = (*w).max(c.len());
        }
    }
    let line = |row: &[String; 4]| {
        format!(
            "{:<w0$}  {:>w1$}  {:>w2$}  {:>w3$}\n",
            row[0],
            row[1],
            row[2],
            row[3],
            w0 = width[0],
            w1 = width[1],
            w2 = width[2],
            w3 = width[3]
        )
    };
    let mut out = line(&header);
    for row in &cells {
        out += &line(row);
    }
    out
}

pub fn to_csv(a_name: &str, b_name: &str, rows: &[Row]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["metric", a_name, b_name, "ratio"])
        .expect("in-memory write");
    let cell = |v: Option<f64>| v.map(fmt_num).unwrap_or_default();
    for r in rows {
        w.write_record([r.metric.clone(), cell(r.a), cell(r.b), cell(r.ratio)])
            .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}
