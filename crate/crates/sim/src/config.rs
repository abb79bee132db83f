//! Scenario files: TOML with `schema_version = "v1"`. Unknown keys are
//! rejected.

use std::collections::BTreeSet;

use ckalab_core::baseline::{HandshakeConfig, HandshakeMode};
use ckalab_core::bundle::EndpointId;
use ckalab_core::SimTime;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::plan::{Contact, ContactPlan, PlanError, Profile, Rate, RoutingTable, Via, DEFAULT_RATE};

pub const SCHEMA_VERSION: &str = "v1";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("{0}")]
    Parse(String),
    #[error("{field}: {reason}")]
    Invalid { field: String, reason: String },
    #[error("{field}: {source}")]
    Plan { field: String, source: PlanError },
}

impl ConfigError {
    fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        ConfigError::Invalid {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// Path of the offending key, when known.
    pub fn field(&self) -> Option<&str> {
        match self {
            ConfigError::Parse(_) => None,
            ConfigError::Invalid { field, .. } | ConfigError::Plan { field, .. } => Some(field),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    CkaMember,
    BaselineEndpoint,
    Relay,
    Directory,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeConfig {
    pub id: String,
    pub roles: Vec<Role>,
    /// Store size in bytes; unbounded when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capacity_bytes: Option<u64>,
    #[serde(default)]
    pub re_encrypt: bool,
}

impl NodeConfig {
    pub fn has(&self, role: Role) -> bool {
        self.roles.contains(&role)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Repeat {
    pub count: u32,
    pub period_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContactConfig {
    pub from: String,
    pub to: String,
    #[serde(default)]
    pub start_s: f64,
    /// Defaults to the scenario duration.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end_s: Option<f64>,
    pub delay_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate: Option<Rate>,
    #[serde(default)]
    pub loss: f64,
    /// Also adds the reverse direction.
    #[serde(default)]
    pub symmetric: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repeat: Option<Repeat>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RouteConfig {
    pub node: String,
    /// A node id or `"*"`.
    pub dest: String,
    /// A node id or `"direct"`.
    pub via: String,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bootstrap {
    /// Every member is in the group at time zero.
    #[default]
    Established,
    /// Only the creator is; others join through scripted adds.
    Creator,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Add,
    Remove,
    Update,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpConfig {
    pub at_s: f64,
    pub by: String,
    pub op: OpKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    /// Count this commit towards `path_ciphertexts_per_commit`.
    #[serde(default)]
    pub measure: bool,
}

fn default_group_id() -> String {
    "dtn-group".into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CkaPolicy {
    #[serde(default)]
    pub bootstrap: Bootstrap,
    /// Defaults to the first `cka_member` node.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub creator: Option<String>,
    #[serde(default = "default_group_id")]
    pub group_id: String,
    #[serde(default)]
    pub retention_window: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub update_interval_s: Option<f64>,
    /// Member issuing periodic updates; defaults to the creator.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub update_by: Option<String>,
    #[serde(default)]
    pub ops: Vec<OpConfig>,
    /// Lifetime of commit, welcome and directory bundles; defaults to the
    /// scenario duration.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub control_lifetime_s: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselinePolicy {
    #[serde(default = "default_mode")]
    pub mode: HandshakeMode,
    #[serde(default = "default_hello")]
    pub hello_bytes: u64,
    #[serde(default = "default_response")]
    pub response_bytes: u64,
    #[serde(default = "default_finished")]
    pub finished_bytes: u64,
    #[serde(default = "default_retransmits")]
    pub max_retransmits: u32,
    /// Establish a session for every pair of endpoints at time zero.
    #[serde(default)]
    pub mesh: bool,
}

fn default_mode() -> HandshakeMode {
    HandshakeConfig::default().mode
}
fn default_hello() -> u64 {
    HandshakeConfig::default().hello_bytes
}
fn default_response() -> u64 {
    HandshakeConfig::default().response_bytes
}
fn default_finished() -> u64 {
    HandshakeConfig::default().finished_bytes
}
fn default_retransmits() -> u32 {
    HandshakeConfig::default().max_retransmits
}

impl BaselinePolicy {
    pub fn handshake(&self) -> HandshakeConfig {
        HandshakeConfig {
            mode: self.mode,
            hello_bytes: self.hello_bytes,
            response_bytes: self.response_bytes,
            finished_bytes: self.finished_bytes,
            max_retransmits: self.max_retransmits,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PskPolicy {
    /// 32-byte key in hex; derived from the seed when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key_hex: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KeyPolicy {
    Cka(CkaPolicy),
    Baseline(BaselinePolicy),
    Psk(PskPolicy),
}

impl KeyPolicy {
    pub fn name(&self) -> &'static str {
        match self {
            KeyPolicy::Cka(_) => "cka",
            KeyPolicy::Baseline(_) => "baseline",
            KeyPolicy::Psk(_) => "psk",
        }
    }
}

fn default_bytes() -> u64 {
    64
}
fn default_count() -> u32 {
    1
}
fn default_interval() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrafficConfig {
    pub at_s: f64,
    pub from: String,
    pub to: String,
    /// Application bytes per bundle.
    #[serde(default = "default_bytes")]
    pub bytes: u64,
    #[serde(default = "default_count")]
    pub count: u32,
    #[serde(default = "default_interval")]
    pub interval_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lifetime_s: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompromiseConfig {
    pub at_s: f64,
    pub node: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: String,
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    pub profile: Profile,
    pub seed: u64,
    pub duration_s: f64,
    pub nodes: Vec<NodeConfig>,
    #[serde(default)]
    pub contacts: Vec<ContactConfig>,
    #[serde(default)]
    pub routes: Vec<RouteConfig>,
    pub key_policy: KeyPolicy,
    #[serde(default)]
    pub traffic: Vec<TrafficConfig>,
    #[serde(default)]
    pub compromise: Vec<CompromiseConfig>,
}

fn time(field: &str, secs: f64) -> Result<SimTime, ConfigError> {
    if !secs.is_finite() || secs < 0.0 {
        return Err(ConfigError::invalid(
            field,
            "must be a finite, non-negative number of seconds",
        ));
    }
    Ok(SimTime::from_secs_f64(secs))
}

fn positive_time(field: &str, secs: f64) -> Result<SimTime, ConfigError> {
    let t = time(field, secs)?;
    if t == SimTime::ZERO {
        return Err(ConfigError::invalid(field, "must be positive"));
    }
    Ok(t)
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(ConfigError::invalid(
                "schema_version",
                format!("expected {SCHEMA_VERSION:?}, got {:?}", cfg.schema_version),
            ));
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn duration(&self) -> SimTime {
        SimTime::from_secs_f64(self.duration_s)
    }

    pub fn node(&self, id: &str) -> Option<&NodeConfig> {
        self.nodes.iter().find(|n| n.id == id)
    }

    /// Nodes holding `role`, in file order.
    pub fn nodes_with(&self, role: Role) -> impl Iterator<Item = &NodeConfig> {
        self.nodes.iter().filter(move |n| n.has(role))
    }

    fn require_node(&self, field: &str, id: &str) -> Result<&NodeConfig, ConfigError> {
        self.node(id)
            .ok_or_else(|| ConfigError::invalid(field, format!("unknown node {id:?}")))
    }

    fn within_duration(&self, field: &str, secs: f64) -> Result<SimTime, ConfigError> {
        let t = time(field, secs)?;
        if t > self.duration() {
            return Err(ConfigError::invalid(field, "is after the end of the scenario"));
        }
        Ok(t)
    }

    /// Checks cross-references and value ranges, and builds the plan and
    /// routing table.
    pub fn validate(&self) -> Result<(ContactPlan, RoutingTable), ConfigError> {
        if self.name.trim().is_empty() {
            return Err(ConfigError::invalid("name", "must not be empty"));
        }
        positive_time("duration_s", self.duration_s)?;
        if self.nodes.is_empty() {
            return Err(ConfigError::invalid("nodes", "at least one node is required"));
        }
        let mut seen = BTreeSet::new();
        for (i, n) in self.nodes.iter().enumerate() {
            let field = format!("nodes[{i}].id");
            EndpointId::node(&n.id).map_err(|e| ConfigError::invalid(&field, e.to_string()))?;
            if !seen.insert(n.id.as_str()) {
                return Err(ConfigError::invalid(field, format!("duplicate node {:?}", n.id)));
            }
            if n.capacity_bytes == Some(0) {
                return Err(ConfigError::invalid(
                    format!("nodes[{i}].capacity_bytes"),
                    "must be positive",
                ));
            }
            if n.re_encrypt && !(matches!(self.key_policy, KeyPolicy::Cka(_)) && n.has(Role::CkaMember)) {
                return Err(ConfigError::invalid(
                    format!("nodes[{i}].re_encrypt"),
                    "only a cka_member under the cka policy can re-encrypt",
                ));
            }
        }
        let plan = self.build_plan()?;
        let routes = self.build_routes()?;
        self.validate_policy()?;
        for (i, t) in self.traffic.iter().enumerate() {
            let f = |k: &str| format!("traffic[{i}].{k}");
            self.require_node(&f("from"), &t.from)?;
            self.require_node(&f("to"), &t.to)?;
            if t.from == t.to {
                return Err(ConfigError::invalid(f("to"), "must differ from `from`"));
            }
            self.within_duration(&f("at_s"), t.at_s)?;
            if t.count == 0 {
                return Err(ConfigError::invalid(f("count"), "must be at least 1"));
            }
            if t.count > 1 {
                positive_time(&f("interval_s"), t.interval_s)?;
            }
            if let Some(l) = t.lifetime_s {
                positive_time(&f("lifetime_s"), l)?;
            }
            let endpoint_role = match self.key_policy {
                KeyPolicy::Cka(_) => Some(Role::CkaMember),
                KeyPolicy::Baseline(_) => Some(Role::BaselineEndpoint),
                KeyPolicy::Psk(_) => None,
            };
            if let Some(role) = endpoint_role {
                for (k, id) in [("from", &t.from), ("to", &t.to)] {
                    if !self.node(id).expect("checked").has(role) {
                        return Err(ConfigError::invalid(
                            f(k),
                            format!("node {id:?} lacks the {role:?} role"),
                        ));
                    }
                }
            }
        }
        for (i, c) in self.compromise.iter().enumerate() {
            let n = self.require_node(&format!("compromise[{i}].node"), &c.node)?;
            if !n.has(Role::CkaMember) && !n.has(Role::BaselineEndpoint) {
                return Err(ConfigError::invalid(
                    format!("compromise[{i}].node"),
                    "only cka_member or baseline_endpoint nodes hold key state",
                ));
            }
            self.within_duration(&format!("compromise[{i}].at_s"), c.at_s)?;
        }
        Ok((plan, routes))
    }

    fn build_plan(&self) -> Result<ContactPlan, ConfigError> {
        let mut contacts = Vec::new();
        let mut source = Vec::new();
        for (i, c) in self.contacts.iter().enumerate() {
            let f = |k: &str| format!("contacts[{i}].{k}");
            self.require_node(&f("from"), &c.from)?;
            self.require_node(&f("to"), &c.to)?;
            let start = time(&f("start_s"), c.start_s)?;
            let end = match c.end_s {
                Some(e) => time(&f("end_s"), e)?,
                None => self.duration(),
            };
            let delay = time(&f("delay_s"), c.delay_s)?;
            if !c.loss.is_finite() {
                return Err(ConfigError::invalid(f("loss"), "must be a number"));
            }
            let (count, period) = match &c.repeat {
                None => (1, SimTime::ZERO),
                Some(r) => {
                    if r.count == 0 {
                        return Err(ConfigError::invalid(f("repeat.count"), "must be at least 1"));
                    }
                    (r.count, positive_time(&f("repeat.period_s"), r.period_s)?)
                }
            };
            for k in 0..count as u64 {
                let shift = SimTime(period.0 * k);
                let base = Contact {
                    from: c.from.clone(),
                    to: c.to.clone(),
                    start: start + shift,
                    end: end + shift,
                    one_way_delay: delay,
                    rate: c.rate.unwrap_or(DEFAULT_RATE),
                    loss_prob: c.loss,
                };
                if c.symmetric {
                    contacts.push(Contact {
                        from: c.to.clone(),
                        to: c.from.clone(),
                        ..base.clone()
                    });
                    source.push(i);
                }
                contacts.push(base);
                source.push(i);
            }
        }
        ContactPlan::with_sources(self.profile, contacts, source).map_err(|e| {
            let field = match &e {
                PlanError::ProfileViolation { index, .. } => format!("contacts[{index}].delay_s"),
                other => format!("contacts[{}]", other.index()),
            };
            ConfigError::Plan { field, source: e }
        })
    }

    fn build_routes(&self) -> Result<RoutingTable, ConfigError> {
        let mut table = RoutingTable::new();
        for (i, r) in self.routes.iter().enumerate() {
            let f = |k: &str| format!("routes[{i}].{k}");
            self.require_node(&f("node"), &r.node)?;
            let dest = match r.dest.as_str() {
                "*" => None,
                d => Some(self.require_node(&f("dest"), d)?.id.as_str()),
            };
            let via = match r.via.as_str() {
                "direct" => Via::Direct,
                v => Via::Node(self.require_node(&f("via"), v)?.id.clone()),
            };
            table.insert(&r.node, dest, via);
        }
        Ok(table)
    }

    fn validate_policy(&self) -> Result<(), ConfigError> {
        match &self.key_policy {
            KeyPolicy::Cka(p) => {
                let members: Vec<_> = self.nodes_with(Role::CkaMember).collect();
                if members.is_empty() {
                    return Err(ConfigError::invalid(
                        "nodes",
                        "a cka policy needs at least one cka_member",
                    ));
                }
                if p.group_id.is_empty() {
                    return Err(ConfigError::invalid("key_policy.group_id", "must not be empty"));
                }
                let member = |field: &str, id: &str| -> Result<(), ConfigError> {
                    if !self.require_node(field, id)?.has(Role::CkaMember) {
                        return Err(ConfigError::invalid(field, format!("node {id:?} is not a cka_member")));
                    }
                    Ok(())
                };
                if let Some(c) = &p.creator {
                    member("key_policy.creator", c)?;
                }
                if let Some(u) = &p.update_by {
                    member("key_policy.update_by", u)?;
                }
                if let Some(i) = p.update_interval_s {
                    positive_time("key_policy.update_interval_s", i)?;
                }
                if let Some(l) = p.control_lifetime_s {
                    positive_time("key_policy.control_lifetime_s", l)?;
                }
                for (i, op) in p.ops.iter().enumerate() {
                    let f = |k: &str| format!("key_policy.ops[{i}].{k}");
                    self.within_duration(&f("at_s"), op.at_s)?;
                    member(&f("by"), &op.by)?;
                    match (op.op, &op.target) {
                        (OpKind::Add | OpKind::Remove, None) => {
                            return Err(ConfigError::invalid(f("target"), "required for add and remove"));
                        }
                        (_, Some(t)) => member(&f("target"), t)?,
                        (OpKind::Update, None) => {}
                    }
                }
                if self.nodes_with(Role::Directory).count() > 1 {
                    return Err(ConfigError::invalid("nodes", "at most one directory node is supported"));
                }
            }
            KeyPolicy::Baseline(p) => {
                p.handshake()
                    .validate()
                    .map_err(|e| ConfigError::invalid("key_policy", e.to_string()))?;
            }
            KeyPolicy::Psk(p) => {
                if let Some(k) = &p.key_hex {
                    if hex_key(k).is_none() {
                        return Err(ConfigError::invalid("key_policy.key_hex", "must be 64 hex digits"));
                    }
                }
            }
        }
        Ok(())
    }
}

pub(crate) fn hex_key(s: &str) -> Option<[u8; 32]> {
    hex::decode(s).ok()?.try_into().ok()
}
