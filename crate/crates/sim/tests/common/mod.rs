#![allow(dead_code)]

use ckalab_sim::{RunOutput, Scenario};
use serde_json::Value;

pub fn scenario(toml: &str) -> Scenario {
    Scenario::from_toml(toml).unwrap_or_else(|e| panic!("scenario rejected: {e}"))
}

pub fn run(toml: &str) -> RunOutput {
    scenario(toml).run()
}

/// Parsed event rows (header skipped).
pub fn rows(out: &RunOutput) -> Vec<Value> {
    out.log
        .to_ndjson()
        .lines()
        .skip(1)
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

pub fn events<'a>(rows: &'a [Value], name: &str) -> Vec<&'a Value> {
    rows.iter().filter(|r| r["event"] == name).collect()
}

pub fn t_us(row: &Value) -> u64 {
    row["t_us"].as_u64().unwrap()
}

/// Two nodes `a` and `b` joined by an always-on symmetric link.
pub fn pair_scenario(profile: &str, delay_s: f64, duration_s: f64, policy: &str, traffic: &str) -> String {
    format!(
        r#"
schema_version = "v1"
name = "pair"
profile = "{profile}"
seed = 7
duration_s = {duration_s}

[[nodes]]
id = "a"
roles = ["cka_member", "baseline_endpoint"]

[[nodes]]
id = "b"
roles = ["cka_member", "baseline_endpoint"]

[[contacts]]
from = "a"
to = "b"
delay_s = {delay_s}
rate = "unlimited"
symmetric = true

[[routes]]
node = "a"
dest = "*"
via = "direct"

[[routes]]
node = "b"
dest = "*"
via = "direct"

[key_policy]
{policy}

{traffic}
"#
    )
}

pub const CKA: &str = r#"kind = "cka""#;
pub const BASELINE: &str = r#"kind = "baseline""#;
pub const PSK: &str = r#"kind = "psk""#;

pub fn one_send(at_s: f64) -> String {
    format!("[[traffic]]\nat_s = {at_s}\nfrom = \"a\"\nto = \"b\"\n")
}

/// Hub `m0` linked to spokes `m1..m{n-1}`; spokes route everything via the hub.
pub fn star(n: usize, delay_s: f64, duration_s: f64, policy: &str, extra: &str) -> String {
    let mut s = format!(
        "schema_version = \"v1\"\nname = \"star{n}\"\nprofile = \"custom\"\nseed = 11\nduration_s = {duration_s}\n\n\
         [key_policy]\n{policy}\n\n"
    );
    for i in 0..n {
        s += &format!("[[nodes]]\nid = \"m{i}\"\nroles = [\"cka_member\", \"baseline_endpoint\"]\n\n");
    }
    for i in 1..n {
        s += &format!(
            "[[contacts]]\nfrom = \"m0\"\nto = \"m{i}\"\ndelay_s = {delay_s}\nrate = \"unlimited\"\nsymmetric = true\n\n"
        );
    }
    s += "[[routes]]\nnode = \"m0\"\ndest = \"*\"\nvia = \"direct\"\n\n";
    for i in 1..n {
        s += &format!("[[routes]]\nnode = \"m{i}\"\ndest = \"*\"\nvia = \"m0\"\n\n");
    }
    s + extra
}

pub fn op(at_s: f64, by: &str, kind: &str, target: Option<&str>, measure: bool) -> String {
    let mut s = format!("[[key_policy.ops]]\nat_s = {at_s}\nby = \"{by}\"\nop = \"{kind}\"\n");
    if let Some(t) = target {
        s += &format!("target = \"{t}\"\n");
    }
    if measure {
        s += "measure = true\n";
    }
    s
}
