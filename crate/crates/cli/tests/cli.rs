use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn scenario(name: &str) -> PathBuf {
    root().join("scenarios").join(format!("{name}.toml"))
}

fn ckalab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ckalab"))
        .args(args)
        .env_remove("CKA_LAB_OUT")
        .output()
        .expect("binary runs")
}

fn run_json(name: &str, out: &Path) -> Value {
    let o = ckalab(&["run", scenario(name).to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_str(&fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap()
}

#[test]
fn geo_baseline_pays_three_one_way_delays() {
    let dir = TempDir::new().unwrap();
    let m = run_json("geo_baseline", dir.path());
    assert_eq!(m["flows"][0]["ttfpb_s"], 0.375);
    assert!(dir.path().join("eventlog.ndjson").is_file());
}

#[test]
fn geo_cka_pays_one() {
    let dir = TempDir::new().unwrap();
    assert_eq!(run_json("geo_cka", dir.path())["flows"][0]["ttfpb_s"], 0.125);
}

#[test]
fn csv_output_holds_the_same_numbers() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().to_str().unwrap();
    let cfg = scenario("geo_baseline");
    assert!(ckalab(&["run", cfg.to_str().unwrap(), "--out", out, "--format", "csv"])
        .status
        .success());
    let json = run_json("geo_baseline", dir.path());
    let mut rd = csv::Reader::from_path(dir.path().join("metrics.csv")).unwrap();
    let header = rd.headers().unwrap().clone();
    let row = rd.records().next().unwrap().unwrap();
    let get = |c: &str| {
        row.get(header.iter().position(|h| h == c).unwrap())
            .unwrap()
            .to_string()
    };
    assert_eq!(get("ttfpb_s"), "0.375");
    assert_eq!(
        get("handshakes_completed"),
        json["totals"]["handshakes_completed"].to_string()
    );
    assert_eq!(
        get("key_establishment_bytes"),
        json["totals"]["key_establishment_bytes"].to_string()
    );
}

#[test]
fn rerun_with_same_seed_is_byte_identical() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    for d in [&a, &b] {
        let o = ckalab(&[
            "run",
            scenario("lunar_occlusion_cka").to_str().unwrap(),
            "--seed",
            "17",
            "--out",
            d.path().to_str().unwrap(),
        ]);
        assert!(o.status.success());
    }
    for f in ["metrics.json", "eventlog.ndjson"] {
        assert_eq!(
            fs::read(a.path().join(f)).unwrap(),
            fs::read(b.path().join(f)).unwrap(),
            "{f}"
        );
    }
    let m: Value = serde_json::from_slice(&fs::read(a.path().join("metrics.json")).unwrap()).unwrap();
    assert_eq!(m["seed"], 17);
}

#[test]
fn output_directory_defaults_from_environment() {
    let dir = TempDir::new().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_ckalab"))
        .args(["run", scenario("geo_cka").to_str().unwrap()])
        .env("CKA_LAB_OUT", dir.path())
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("metrics.json").is_file());
}

#[test]
fn malformed_config_exits_2_naming_the_field() {
    let dir = TempDir::new().unwrap();
    let text = fs::read_to_string(scenario("geo_cka"))
        .unwrap()
        .replace("delay_s = 0.125", "delay_s = 5.0");
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, text).unwrap();
    let o = ckalab(&["run", bad.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("contacts[0].delay_s"), "{err}");
    assert!(!dir.path().join("metrics.json").exists());
}

#[test]
fn missing_config_exits_2() {
    let o = ckalab(&["run", "/nonexistent/scenario.toml", "--out", "/tmp"]);
    assert_eq!(o.status.code(), Some(2));
}

fn compare(a: &str, b: &str) -> String {
    let o = ckalab(&["compare", scenario(a).to_str().unwrap(), scenario(b).to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn table_row<'a>(table: &'a str, metric: &str) -> Vec<&'a str> {
    table
        .lines()
        .find(|l| l.starts_with(metric))
        .unwrap_or_else(|| panic!("no row {metric}"))
        .split_whitespace()
        .collect()
}

#[test]
fn identical_configs_compare_at_ratio_one() {
    let table = compare("geo_cka", "geo_cka");
    for line in table.lines().skip(1) {
        assert!(line.trim_end().ends_with("1.000"), "{line}");
    }
}

#[test]
fn mars_handshake_costs_three_times_the_group_path() {
    let table = compare("mars_max_baseline", "mars_max_cka");
    let row = table_row(&table, "flow[0]");
    assert_eq!(&row[row.len() - 3..], ["2070", "690", "3.000"]);
}

#[test]
fn pairwise_keying_of_eight_versus_group() {
    let dir = TempDir::new().unwrap();
    let cfg = |n: &str| scenario(n).to_str().unwrap().to_owned();
    let o = ckalab(&[
        "compare",
        &cfg("group_scaling_n8_baseline"),
        &cfg("group_scaling_n8_cka"),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let table = String::from_utf8(o.stdout).unwrap();
    assert_eq!(table_row(&table, "handshakes_completed")[1..3], ["28", "0"]);
    assert_eq!(table_row(&table, "welcomes")[1..3], ["0", "7"]);
    assert_eq!(table_row(&table, "path_ciphertexts_per_commit")[2], "3");
    let csv_text = fs::read_to_string(dir.path().join("comparison.csv")).unwrap();
    assert!(
        csv_text.lines().any(|l| l == "handshakes_completed,28,0,"),
        "{csv_text}"
    );
}

fn copy_vectors() -> TempDir {
    let dir = TempDir::new().unwrap();
    let src = root().join("vectors");
    for entry in walk(&src) {
        let rel = entry.strip_prefix(&src).unwrap();
        let dst = dir.path().join(rel);
        fs::create_dir_all(dst.parent().unwrap()).unwrap();
        fs::copy(&entry, dst).unwrap();
    }
    dir
}

fn walk(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}

#[test]
fn shipped_vectors_pass() {
    let o = ckalab(&["vectors", "--check", root().join("vectors").to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn mutated_fixture_fails_naming_the_file() {
    let dir = copy_vectors();
    let f = dir.path().join("bundles/bcb_psk.bin");
    let mut bytes = fs::read(&f).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 1;
    fs::write(&f, bytes).unwrap();
    let o = ckalab(&["vectors", "--check", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("bundles/bcb_psk.bin"), "{err}");
    assert!(!err.contains("key_schedule.json"), "{err}");
}

#[test]
fn missing_fixture_directory_exits_3() {
    let o = ckalab(&["vectors", "--check", "/nonexistent/vectors"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn encode_and_decode_are_inverse() {
    let dir = TempDir::new().unwrap();
    let vectors = root().join("vectors/bundles");
    for id in ["plain", "bcb_psk", "bib_psk"] {
        let bin = dir.path().join(format!("{id}.bin"));
        let json = vectors.join(format!("{id}.json"));
        let o = ckalab(&["encode", json.to_str().unwrap(), "-o", bin.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        assert_eq!(
            fs::read(&bin).unwrap(),
            fs::read(vectors.join(format!("{id}.bin"))).unwrap()
        );
        let o = ckalab(&["decode", bin.to_str().unwrap()]);
        assert!(o.status.success());
        let back: Value = serde_json::from_slice(&o.stdout).unwrap();
        let want: Value = serde_json::from_str(&fs::read_to_string(&json).unwrap()).unwrap();
        assert_eq!(back, want);
    }
}

#[test]
fn encode_to_stdout_is_hex_and_decode_accepts_it() {
    let dir = TempDir::new().unwrap();
    let json = root().join("vectors/bundles/plain.json");
    let o = ckalab(&["encode", json.to_str().unwrap()]);
    let hex_text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(
        hex::decode(hex_text.trim()).unwrap(),
        fs::read(root().join("vectors/bundles/plain.bin")).unwrap()
    );
    let f = dir.path().join("plain.hex");
    fs::write(&f, hex_text).unwrap();
    assert!(ckalab(&["decode", "--hex", f.to_str().unwrap()]).status.success());
}

#[test]
fn decoding_garbage_fails_cleanly() {
    let dir = TempDir::new().unwrap();
    let f = dir.path().join("junk.bin");
    fs::write(&f, [0xB7, 0xff, 0xff, 0xff, 0xff, 1, 2, 3]).unwrap();
    let o = ckalab(&["decode", f.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("is not a bundle"));
}
