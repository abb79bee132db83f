mod common;

use ckalab_sim::MetricsReport;
use common::*;
use serde_json::Value;

fn json_cell(v: &Value) -> String {
    match v {
        Value::Null => String::new(),
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn assert_csv_matches_json(report: &MetricsReport) {
    let json: Value = serde_json::from_str(&report.to_json()).unwrap();
    let csv_text = report.to_csv();
    let mut rd = csv::Reader::from_reader(csv_text.as_bytes());
    let header: Vec<String> = rd.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(header, MetricsReport::csv_header());
    let records: Vec<csv::StringRecord> = rd.records().map(Result::unwrap).collect();
    assert_eq!(records.len(), report.flows.len().max(1));
    for (i, rec) in records.iter().enumerate() {
        for (col, cell) in header.iter().zip(rec.iter()) {
            let expected = match col.as_str() {
                "scenario" | "seed" | "policy" => json_cell(&json[col]),
                "flow" | "from" | "to" | "ttfpb_s" => {
                    json["flows"].get(i).map(|f| json_cell(&f[col])).unwrap_or_default()
                }
                _ => json_cell(&json["totals"][col]),
            };
            assert_eq!(cell, expected, "row {i} column {col}");
        }
    }
}

#[test]
fn csv_and_json_agree() {
    let traffic =
        "[[traffic]]\nat_s = 1.0\nfrom = \"a\"\nto = \"b\"\n\n[[traffic]]\nat_s = 2.0\nfrom = \"b\"\nto = \"a\"\n";
    for policy in [CKA, BASELINE, PSK] {
        assert_csv_matches_json(&run(&pair_scenario("near_earth", 0.1, 5.0, policy, traffic)).metrics);
    }
    assert_csv_matches_json(&run(&pair_scenario("near_earth", 0.1, 5.0, CKA, "")).metrics);
}

#[test]
fn json_round_trips() {
    let out = run(&pair_scenario("near_earth", 0.1, 5.0, BASELINE, &one_send(1.0)));
    let back = MetricsReport::from_json(&out.metrics.to_json()).unwrap();
    assert_eq!(back, out.metrics);
}

#[test]
fn undelivered_flow_has_empty_latency_cell() {
    let traffic = "[[traffic]]\nat_s = 4.95\nfrom = \"a\"\nto = \"b\"\n";
    let out = run(&pair_scenario("near_earth", 0.1, 5.0, CKA, traffic));
    assert_eq!(out.metrics.flows[0].ttfpb_s, None);
    let t = &out.metrics.totals;
    assert_eq!(t.in_store_at_end + t.in_flight_at_end, 1);
    assert_csv_matches_json(&out.metrics);
}
