//! Run metrics and their JSON and CSV forms.

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowMetrics {
    pub flow: usize,
    pub from: String,
    pub to: String,
    /// Send intent to first decrypted byte at the destination, in seconds.
    pub ttfpb_s: Option<f64>,
}

/// Scalar totals. Field order is the CSV column order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Totals {
    pub handshakes_attempted: u64,
    pub handshakes_completed: u64,
    pub handshake_round_trips: u64,
    pub key_establishment_bytes: u64,
    pub wasted_bytes_incomplete_handshakes: u64,
    pub commits: u64,
    pub welcomes: u64,
    pub rekey_count: u64,
    pub path_ciphertexts_per_commit: f64,
    pub created: u64,
    pub delivered: u64,
    pub expired: u64,
    pub dropped_no_route: u64,
    pub dropped_capacity: u64,
    pub lost_in_transit: u64,
    pub in_store_at_end: u64,
    pub in_flight_at_end: u64,
    pub protected_delivered: u64,
    pub undecryptable: u64,
    pub oracle_mismatches: u64,
    pub nonce_reuse: u64,
    pub commit_conflicts: u64,
    pub adversary_past_bundles: u64,
    pub adversary_past_decrypted: u64,
    pub adversary_future_bundles: u64,
    pub adversary_future_decrypted: u64,
}

impl Totals {
    /// Every created bundle ends in exactly one bucket.
    pub fn conservation_holds(&self) -> bool {
        self.created
            == self.delivered
                + self.expired
                + self.dropped_no_route
                + self.dropped_capacity
                + self.lost_in_transit
                + self.in_store_at_end
                + self.in_flight_at_end
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsReport {
    pub scenario: String,
    pub seed: u64,
    pub policy: String,
    pub flows: Vec<FlowMetrics>,
    pub totals: Totals,
}

/// Leading CSV columns; the [`Totals`] fields follow in declaration order.
pub const CSV_FLOW_COLUMNS: [&str; 7] = ["scenario", "seed", "policy", "flow", "from", "to", "ttfpb_s"];

impl MetricsReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serialises");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    /// Names of the [`Totals`] columns, in order.
    pub fn total_columns() -> Vec<String> {
        match serde_json::to_value(Totals::default()).expect("totals serialise") {
            serde_json::Value::Object(m) => m.keys().cloned().collect(),
            _ => unreachable!("totals is a struct"),
        }
    }

    pub fn csv_header() -> Vec<String> {
        CSV_FLOW_COLUMNS
            .iter()
            .map(|s| s.to_string())
            .chain(Self::total_columns())
            .collect()
    }

    /// One row per flow (a single flowless row if there are none), with the
    /// totals repeated. Values use their JSON spelling; missing values are
    /// empty.
    pub fn to_csv(&self) -> String {
        let cell = |v: &serde_json::Value| match v {
            serde_json::Value::Null => String::new(),
            serde_json::Value::String(s) => s.clone(),
            other => other.to_string(),
        };
        let totals = match serde_json::to_value(&self.totals).expect("totals serialise") {
            serde_json::Value::Object(m) => m,
            _ => unreachable!("totals is a struct"),
        };
        let total_cells: Vec<String> = totals.values().map(cell).collect();
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(Self::csv_header()).expect("in-memory write");
        let mut rows: Vec<[String; 4]> = self
            .flows
            .iter()
            .map(|f| {
                [
                    f.flow.to_string(),
                    f.from.clone(),
                    f.to.clone(),
                    cell(&serde_json::to_value(f.ttfpb_s).expect("number")),
                ]
            })
            .collect();
        if rows.is_empty() {
            rows.push(Default::default());
        }
        for flow in rows {
            let record = [self.scenario.clone(), self.seed.to_string(), self.policy.clone()]
                .into_iter()
                .chain(flow)
                .chain(total_cells.iter().cloned());
            w.write_record(record).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }
}
