//! The discrete-event loop and node behaviours.
//!
//! Events are ordered by `(time, insertion sequence)`. A bundle entering a
//! store immediately reserves the first contact towards its next hop that
//! can carry it whole; the reservation becomes a `Depart` event.

use std::collections::{BTreeMap, BTreeSet};

use ckalab_core::baseline::{self, HandshakeConfig, SessionState};
use ckalab_core::bpsec::{self, BpsecError, SecurityBlock, SecurityParameters, StaticPsk};
use ckalab_core::bundle::{self, BlockType, Bundle, EndpointId, PAYLOAD_BLOCK_NUMBER};
use ckalab_core::cka::{
    CkaError, CommitMessage, GroupState, LeafIndex, PreKeyBundle, PreKeyPrivate, Proposal, ProposalKind,
    SigningIdentity, WelcomeMessage,
};
use ckalab_core::crypto::{CipherSuiteProfile, Secret};
use ckalab_core::keyservice::{Directory, DirectoryMessage, DirectoryRecord, OP_FETCH, OP_PUBLISH, OP_RESPONSE};
use ckalab_core::SimTime;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::adversary::{Adversary, Capture, CaptureKind, COMMIT_PAYLOAD};
use crate::config::{hex_key, Bootstrap, ConfigError, KeyPolicy, OpConfig, OpKind, Role, ScenarioConfig};
use crate::eventlog::{Event, EventLog, PayloadKind};
use crate::metrics::{FlowMetrics, MetricsReport, Totals};
use crate::path::SimPath;
use crate::plan::{ContactPlan, RoutingTable};

pub const DATA_PAYLOAD: u8 = 0x10;
pub const WELCOME_PAYLOAD: u8 = 0x21;
const DATA_HEADER_LEN: usize = 9;

/// A validated scenario, ready to run any number of times.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub plan: ContactPlan,
    pub routes: RoutingTable,
}

/// Everything a run produces.
#[derive(Debug)]
pub struct RunOutput {
    pub log: EventLog,
    pub metrics: MetricsReport,
    pub adversary: Adversary,
}

impl Scenario {
    pub fn from_config(config: ScenarioConfig) -> Result<Self, ConfigError> {
        let (plan, routes) = config.validate()?;
        Ok(Scenario { config, plan, routes })
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Self::from_config(ScenarioConfig::from_toml(text)?)
    }

    /// Runs for the configured duration with the configured seed.
    pub fn run(&self) -> RunOutput {
        run(self, self.config.duration(), self.config.seed)
    }
}

/// Runs `scenario` up to and including time `until`.
pub fn run(scenario: &Scenario, until: SimTime, seed: u64) -> RunOutput {
    let mut sim = Sim::new(scenario, until, seed);
    sim.schedule_initial();
    sim.run_loop();
    sim.finish()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Fate {
    InStore,
    InFlight,
    Delivered,
    Expired,
    NoRoute,
    Capacity,
    Lost,
}

struct Meta {
    fate: Fate,
    observed: bool,
}

struct Held {
    id: u64,
    bundle: Bundle,
    entered: SimTime,
    size: u64,
}

struct CkaNode {
    prekey: PreKeyPrivate,
    bundle: PreKeyBundle,
    state: Option<GroupState>,
    /// Commits for an epoch this node has not reached.
    future_commits: Vec<CommitMessage>,
    /// Protected bundles this node cannot open yet.
    held_data: Vec<(u64, Bundle)>,
    /// Send intents waiting for group membership.
    outbox: Vec<(usize, u32)>,
    /// Add ops waiting on a directory response, by target name.
    pending_adds: Vec<(usize, String)>,
}

struct NodeRt {
    name: String,
    capacity: Option<u64>,
    re_encrypt: bool,
    store: Vec<Held>,
    used: u64,
    next_sequence: u64,
    nonce_counter: u64,
    cka: Option<CkaNode>,
}

struct Session {
    client: usize,
    state: Option<SessionState>,
    in_progress: bool,
    client_ready: bool,
    server_ready: bool,
    queued: Vec<(usize, usize, u32)>,
    held_rx: Vec<(usize, u64, Bundle)>,
}

enum Policy {
    Cka {
        retention_window: u32,
    },
    Psk(StaticPsk),
    Baseline {
        config: HandshakeConfig,
        sessions: BTreeMap<(usize, usize), Session>,
    },
}

struct FlowRt {
    first_intent: Option<SimTime>,
    first_decrypt: Option<SimTime>,
}

enum Ev {
    Log(Event),
    ContactOpen(usize),
    ContactClose(usize),
    Depart {
        contact: usize,
        node: usize,
        id: u64,
    },
    Arrive {
        node: usize,
        id: u64,
        bundle: Bundle,
        entered: SimTime,
    },
    Expire {
        node: usize,
        id: u64,
    },
    Traffic {
        flow: usize,
        seq: u32,
    },
    Op(usize),
    Compromise(usize),
    Handshake {
        client: usize,
        server: usize,
    },
    SessionReady {
        pair: (usize, usize),
        client_side: bool,
    },
}

struct Sim<'a> {
    sc: &'a Scenario,
    until: SimTime,
    now: SimTime,
    queue: BTreeMap<(SimTime, u64), Ev>,
    next_seq: u64,
    nodes: Vec<NodeRt>,
    index: BTreeMap<String, usize>,
    busy_until: Vec<SimTime>,
    meta: Vec<Meta>,
    log: EventLog,
    crypto_rng: ChaCha20Rng,
    loss_rng: ChaCha20Rng,
    adversary: Adversary,
    totals: Totals,
    measured_cts: Vec<u64>,
    all_cts: Vec<u64>,
    flows: Vec<FlowRt>,
    oracle: BTreeMap<(u32, u32), Vec<u8>>,
    nonces: BTreeSet<([u8; 32], [u8; 12])>,
    ops: Vec<OpConfig>,
    policy: Policy,
    directory: Option<(usize, Directory)>,
    control_lifetime: SimTime,
}

fn pair(a: usize, b: usize) -> (usize, usize) {
    (a.min(b), a.max(b))
}

fn has_bcb(b: &Bundle) -> bool {
    b.blocks.iter().any(|x| x.block_type == BlockType::Bcb)
}

fn bcb_params(b: &Bundle) -> Option<SecurityParameters> {
    b.blocks
        .iter()
        .find(|x| x.block_type == BlockType::Bcb)
        .and_then(|x| SecurityBlock::decode(&x.body).ok())
        .map(|sb| sb.parameters)
}

impl<'a> Sim<'a> {
    fn new(sc: &'a Scenario, until: SimTime, seed: u64) -> Self {
        let cfg = &sc.config;
        let crypto_rng = ChaCha20Rng::seed_from_u64(seed);
        let mut loss_rng = ChaCha20Rng::seed_from_u64(seed);
        loss_rng.set_stream(1);
        let nodes: Vec<NodeRt> = cfg
            .nodes
            .iter()
            .map(|n| NodeRt {
                name: n.id.clone(),
                capacity: n.capacity_bytes,
                re_encrypt: n.re_encrypt,
                store: Vec::new(),
                used: 0,
                next_sequence: 0,
                nonce_counter: 0,
                cka: None,
            })
            .collect();
        let index = nodes.iter().enumerate().map(|(i, n)| (n.name.clone(), i)).collect();
        let mut sim = Sim {
            sc,
            until,
            now: SimTime::ZERO,
            queue: BTreeMap::new(),
            next_seq: 0,
            nodes,
            index,
            busy_until: vec![SimTime::ZERO; sc.plan.contacts.len()],
            meta: Vec::new(),
            log: EventLog::new(&cfg.name, seed),
            crypto_rng,
            loss_rng,
            adversary: Adversary::new(),
            totals: Totals::default(),
            measured_cts: Vec::new(),
            all_cts: Vec::new(),
            flows: cfg
                .traffic
                .iter()
                .map(|_| FlowRt {
                    first_intent: None,
                    first_decrypt: None,
                })
                .collect(),
            oracle: BTreeMap::new(),
            nonces: BTreeSet::new(),
            ops: Vec::new(),
            policy: Policy::Cka { retention_window: 0 },
            directory: None,
            control_lifetime: cfg.duration(),
        };
        sim.policy = sim.setup_policy();
        sim
    }

    fn setup_policy(&mut self) -> Policy {
        let cfg = &self.sc.config;
        match &cfg.key_policy {
            KeyPolicy::Cka(p) => {
                let suite = CipherSuiteProfile::default();
                let members: Vec<usize> = cfg.nodes_with(Role::CkaMember).map(|n| self.index[&n.id]).collect();
                for &m in &members {
                    let signer =
                        SigningIdentity::generate(&self.nodes[m].name, &mut self.crypto_rng).expect("valid node name");
                    let (bundle, prekey) = PreKeyBundle::generate(&signer, suite, &mut self.crypto_rng);
                    self.nodes[m].cka = Some(CkaNode {
                        prekey,
                        bundle,
                        state: None,
                        future_commits: Vec::new(),
                        held_data: Vec::new(),
                        outbox: Vec::new(),
                        pending_adds: Vec::new(),
                    });
                }
                let creator = p.creator.as_ref().map_or(members[0], |c| self.index[c]);
                let signer = self.cka(creator).prekey.signer.clone();
                let mut state = GroupState::create(signer, suite, p.group_id.as_bytes(), &mut self.crypto_rng)
                    .expect("valid group parameters");
                state.set_retention_window(p.retention_window);
                if p.bootstrap == Bootstrap::Established && members.len() > 1 {
                    let others: Vec<usize> = members.iter().copied().filter(|&m| m != creator).collect();
                    let adds: Vec<Proposal> = others
                        .iter()
                        .map(|&m| state.propose_add(self.cka(m).bundle.clone()))
                        .collect();
                    let out = state.commit(&adds, &mut self.crypto_rng).expect("bootstrap commit");
                    let welcome = out.welcome.expect("adds produce a welcome");
                    for &m in &others {
                        let mut s = GroupState::join(&self.cka(m).prekey, &welcome).expect("bootstrap join");
                        s.set_retention_window(p.retention_window);
                        self.cka_mut(m).state = Some(s);
                    }
                    state = out.state.expect("creator stays");
                }
                self.cka_mut(creator).state = Some(state);

                if let Some(dir) = cfg.nodes_with(Role::Directory).next() {
                    let mut d = Directory::new();
                    for &m in &members {
                        d.publish(DirectoryRecord::new(self.cka(m).bundle.clone(), SimTime::ZERO))
                            .expect("fresh bundles verify");
                    }
                    self.directory = Some((self.index[&dir.id], d));
                }
                if let Some(l) = p.control_lifetime_s {
                    self.control_lifetime = SimTime::from_secs_f64(l);
                }
                let mut ops = p.ops.clone();
                if let Some(iv) = p.update_interval_s {
                    let by = p.update_by.clone().unwrap_or_else(|| self.nodes[creator].name.clone());
                    let mut k = 1u64;
                    while iv * k as f64 <= cfg.duration_s {
                        ops.push(OpConfig {
                            at_s: iv * k as f64,
                            by: by.clone(),
                            op: OpKind::Update,
                            target: None,
                            measure: false,
                        });
                        k += 1;
                    }
                }
                ops.sort_by(|a, b| a.at_s.total_cmp(&b.at_s));
                self.ops = ops;
                Policy::Cka {
                    retention_window: p.retention_window,
                }
            }
            KeyPolicy::Psk(p) => {
                let secret = match &p.key_hex {
                    Some(k) => hex_key(k).expect("validated"),
                    None => {
                        let mut s = [0u8; 32];
                        self.crypto_rng.fill_bytes(&mut s);
                        s
                    }
                };
                Policy::Psk(StaticPsk {
                    key_id: b"psk".to_vec(),
                    secret,
                })
            }
            KeyPolicy::Baseline(p) => Policy::Baseline {
                config: p.handshake(),
                sessions: BTreeMap::new(),
            },
        }
    }

    fn cka(&self, n: usize) -> &CkaNode {
        self.nodes[n].cka.as_ref().expect("node is a cka member")
    }

    fn cka_mut(&mut self, n: usize) -> &mut CkaNode {
        self.nodes[n].cka.as_mut().expect("node is a cka member")
    }

    fn schedule(&mut self, at: SimTime, ev: Ev) {
        self.queue.insert((at, self.next_seq), ev);
        self.next_seq += 1;
    }

    fn emit(&mut self, ev: Event) {
        self.log.push(self.now, ev);
    }

    fn schedule_initial(&mut self) {
        let sc = self.sc;
        for (i, c) in sc.plan.contacts.iter().enumerate() {
            if c.start <= self.until {
                self.schedule(c.start, Ev::ContactOpen(i));
            }
            if c.end <= self.until {
                self.schedule(c.end, Ev::ContactClose(i));
            }
        }
        if let KeyPolicy::Baseline(p) = &sc.config.key_policy {
            if p.mesh {
                let ends: Vec<usize> = sc
                    .config
                    .nodes_with(Role::BaselineEndpoint)
                    .map(|n| self.index[&n.id])
                    .collect();
                for (k, &a) in ends.iter().enumerate() {
                    for &b in &ends[k + 1..] {
                        self.schedule(SimTime::ZERO, Ev::Handshake { client: a, server: b });
                    }
                }
            }
        }
        for i in 0..self.ops.len() {
            let at = SimTime::from_secs_f64(self.ops[i].at_s);
            self.schedule(at, Ev::Op(i));
        }
        for (i, c) in sc.config.compromise.iter().enumerate() {
            self.schedule(SimTime::from_secs_f64(c.at_s), Ev::Compromise(i));
        }
        for (flow, t) in sc.config.traffic.iter().enumerate() {
            let start = SimTime::from_secs_f64(t.at_s);
            let step = SimTime::from_secs_f64(t.interval_s);
            for seq in 0..t.count {
                self.schedule(start + SimTime(step.0 * seq as u64), Ev::Traffic { flow, seq });
            }
        }
    }

    fn run_loop(&mut self) {
        while let Some(entry) = self.queue.first_entry() {
            let (t, _) = *entry.key();
            if t > self.until {
                break;
            }
            let ev = entry.remove();
            self.now = t;
            self.handle(ev);
        }
        self.now = self.until;
    }

    fn handle(&mut self, ev: Ev) {
        match ev {
            Ev::Log(e) => self.emit(e),
            Ev::ContactOpen(i) | Ev::ContactClose(i) => {
                let c = &self.sc.plan.contacts[i];
                let (from, to) = (c.from.clone(), c.to.clone());
                self.emit(match ev {
                    Ev::ContactOpen(_) => Event::ContactOpen { from, to },
                    _ => Event::ContactClose { from, to },
                });
            }
            Ev::Depart { contact, node, id } => self.depart(contact, node, id),
            Ev::Arrive {
                node,
                id,
                bundle,
                entered,
            } => self.arrive(node, id, bundle, entered),
            Ev::Expire { node, id } => self.expire(node, id),
            Ev::Traffic { flow, seq } => self.traffic(flow, seq),
            Ev::Op(i) => self.op(i),
            Ev::Compromise(i) => self.compromise(i),
            Ev::Handshake { client, server } => self.handshake(client, server),
            Ev::SessionReady { pair, client_side } => self.session_ready(pair, client_side),
        }
    }

    // ---- bundle movement ----

    fn originate(
        &mut self,
        node: usize,
        dst: usize,
        payload: &[u8],
        lifetime: SimTime,
        kind: PayloadKind,
    ) -> (u64, Bundle) {
        let n = &mut self.nodes[node];
        let sequence = n.next_sequence;
        n.next_sequence += 1;
        let b = bundle::create_bundle(
            EndpointId::node(&n.name).expect("validated name"),
            EndpointId::node(&self.nodes[dst].name).expect("validated name"),
            payload,
            lifetime,
            self.now,
            sequence,
        )
        .expect("lifetime and payload within limits");
        let id = self.meta.len() as u64;
        self.meta.push(Meta {
            fate: Fate::InStore,
            observed: false,
        });
        self.totals.created += 1;
        self.emit(Event::Created {
            bundle: id,
            src: self.nodes[node].name.clone(),
            dst: self.nodes[dst].name.clone(),
            kind,
            bytes: payload.len() as u64,
        });
        (id, b)
    }

    fn enqueue(&mut self, node: usize, id: u64, bundle: Bundle) {
        let size = bundle.encoded_len() as u64;
        let n = &self.nodes[node];
        if n.capacity.is_some_and(|cap| n.used + size > cap) {
            self.meta[id as usize].fate = Fate::Capacity;
            self.emit(Event::DroppedCapacity {
                bundle: id,
                node: n.name.clone(),
            });
            return;
        }
        let remaining = bundle.primary.lifetime.saturating_sub(bundle.age());
        let hop = self
            .sc
            .routes
            .next_hop(&n.name, bundle.primary.destination.name())
            .ok()
            .map(|h| self.index[h]);
        self.meta[id as usize].fate = Fate::InStore;
        let n = &mut self.nodes[node];
        n.used += size;
        n.store.push(Held {
            id,
            bundle,
            entered: self.now,
            size,
        });
        self.schedule(
            self.now.saturating_add(remaining).saturating_add(SimTime::TICK),
            Ev::Expire { node, id },
        );
        if let Some(hop) = hop {
            self.reserve(node, hop, id, size);
        }
    }

    fn reserve(&mut self, node: usize, hop: usize, id: u64, size: u64) {
        let plan = &self.sc.plan;
        for &ci in plan.link(&self.nodes[node].name, &self.nodes[hop].name) {
            let c = &plan.contacts[ci];
            if let Some((depart, _)) = c.launch(self.now.max(self.busy_until[ci]), size) {
                self.busy_until[ci] = depart + c.rate.tx_time(size);
                self.schedule(depart, Ev::Depart { contact: ci, node, id });
                return;
            }
        }
    }

    fn take_held(&mut self, node: usize, id: u64) -> Option<Held> {
        let n = &mut self.nodes[node];
        let pos = n.store.iter().position(|h| h.id == id)?;
        let h = n.store.remove(pos);
        n.used -= h.size;
        Some(h)
    }

    fn depart(&mut self, contact: usize, node: usize, id: u64) {
        let Some(held) = self.take_held(node, id) else {
            return;
        };
        let c = &self.sc.plan.contacts[contact];
        self.emit(Event::Depart {
            bundle: id,
            from: c.from.clone(),
            to: c.to.clone(),
            bytes: held.size,
        });
        let meta = &mut self.meta[id as usize];
        if !meta.observed {
            meta.observed = true;
            self.adversary.observe(self.now, &held.bundle);
        }
        if c.loss_prob > 0.0 && self.loss_rng.gen_bool(c.loss_prob) {
            self.meta[id as usize].fate = Fate::Lost;
            self.emit(Event::Lost {
                bundle: id,
                from: c.from.clone(),
                to: c.to.clone(),
            });
            return;
        }
        self.meta[id as usize].fate = Fate::InFlight;
        let arrival = self.now + c.rate.tx_time(held.size) + c.one_way_delay;
        let to = self.index[&c.to];
        self.schedule(
            arrival,
            Ev::Arrive {
                node: to,
                id,
                bundle: held.bundle,
                entered: held.entered,
            },
        );
    }

    fn arrive(&mut self, node: usize, id: u64, bundle: Bundle, entered: SimTime) {
        let name = self.nodes[node].name.clone();
        self.emit(Event::Arrive {
            bundle: id,
            node: name.clone(),
        });
        let bundle = match bundle::process_at_hop(bundle, self.now - entered) {
            Ok(b) => b,
            Err(_) => {
                self.meta[id as usize].fate = Fate::Expired;
                self.emit(Event::Expired { bundle: id, node: name });
                return;
            }
        };
        if bundle.primary.destination.name() == name {
            self.meta[id as usize].fate = Fate::Delivered;
            self.emit(Event::Delivered { bundle: id, node: name });
            self.deliver(node, id, bundle);
        } else {
            let bundle = if self.nodes[node].re_encrypt {
                self.re_encrypt(node, id, bundle)
            } else {
                bundle
            };
            self.enqueue(node, id, bundle);
        }
    }

    fn expire(&mut self, node: usize, id: u64) {
        let Some(held) = self.take_held(node, id) else {
            return;
        };
        let name = self.nodes[node].name.clone();
        let routed = self
            .sc
            .routes
            .next_hop(&name, held.bundle.primary.destination.name())
            .is_ok();
        if routed {
            self.meta[id as usize].fate = Fate::Expired;
            self.emit(Event::Expired { bundle: id, node: name });
        } else {
            self.meta[id as usize].fate = Fate::NoRoute;
            self.emit(Event::DroppedNoRoute { bundle: id, node: name });
        }
    }

    fn deliver(&mut self, node: usize, id: u64, bundle: Bundle) {
        if has_bcb(&bundle) {
            return self.deliver_protected(node, id, bundle);
        }
        match bundle.payload().first().copied() {
            Some(COMMIT_PAYLOAD) => self.receive_commit(node, &bundle.payload()[1..]),
            Some(WELCOME_PAYLOAD) => self.receive_welcome(node, &bundle.payload()[1..]),
            Some(OP_PUBLISH | OP_FETCH) => self.directory_request(node, &bundle),
            Some(OP_RESPONSE) => self.directory_response(node, bundle.payload()),
            _ => {
                let name = self.nodes[node].name.clone();
                self.undecryptable(id, name, "unprotected or unknown payload".into());
            }
        }
    }

    fn undecryptable(&mut self, id: u64, node: String, reason: String) {
        self.totals.undecryptable += 1;
        self.emit(Event::Undecryptable {
            bundle: id,
            node,
            reason,
        });
    }

    // ---- application data ----

    fn data_payload(&mut self, flow: usize, seq: u32) -> Vec<u8> {
        let len = self.sc.config.traffic[flow].bytes as usize;
        let mut p = Vec::with_capacity(DATA_HEADER_LEN + len);
        p.push(DATA_PAYLOAD);
        p.extend_from_slice(&(flow as u32).to_be_bytes());
        p.extend_from_slice(&seq.to_be_bytes());
        let mut body = vec![0u8; len];
        self.crypto_rng.fill_bytes(&mut body);
        p.extend_from_slice(&body);
        self.oracle.insert((flow as u32, seq), p.clone());
        p
    }

    fn next_nonce_seed(&mut self, node: usize) -> [u8; 8] {
        let n = &mut self.nodes[node];
        n.nonce_counter += 1;
        n.nonce_counter.to_be_bytes()
    }

    fn note_nonce(&mut self, key_nonce: Result<([u8; 32], [u8; 12]), BpsecError>) {
        if let Ok(kn) = key_nonce {
            if !self.nonces.insert(kn) {
                self.totals.nonce_reuse += 1;
            }
        }
    }

    fn traffic(&mut self, flow: usize, seq: u32) {
        self.flows[flow].first_intent.get_or_insert(self.now);
        let from = self.index[&self.sc.config.traffic[flow].from];
        match &self.policy {
            Policy::Cka { .. } => {
                if self.cka(from).state.is_some() {
                    self.send_cka_data(from, flow, seq);
                } else {
                    self.cka_mut(from).outbox.push((flow, seq));
                }
            }
            Policy::Psk(psk) => {
                let psk = psk.clone();
                let id = psk.key_id.clone();
                self.send_with_key(from, flow, seq, &psk, id, 0);
            }
            Policy::Baseline { .. } => self.baseline_intent(from, flow, seq),
        }
    }

    fn send_with_key(
        &mut self,
        from: usize,
        flow: usize,
        seq: u32,
        source: &impl bpsec::BlockKeySource,
        key_id: Vec<u8>,
        epoch: u64,
    ) {
        let t = &self.sc.config.traffic[flow];
        let to = self.index[&t.to];
        let lifetime = t.lifetime_s.map_or(self.sc.config.duration(), SimTime::from_secs_f64);
        let payload = self.data_payload(flow, seq);
        let params = SecurityParameters {
            group_id: key_id,
            epoch,
            sender_leaf: LeafIndex(from as u32),
            nonce_seed: self.next_nonce_seed(from),
        };
        let (id, b) = self.originate(from, to, &payload, lifetime, PayloadKind::Data);
        self.note_nonce(bpsec::bcb_key_nonce(source, &params, PAYLOAD_BLOCK_NUMBER));
        let b = bpsec::apply_bcb(b, source, PAYLOAD_BLOCK_NUMBER, &params).expect("fresh bundle accepts a BCB");
        self.enqueue(from, id, b);
    }

    fn send_cka_data(&mut self, from: usize, flow: usize, seq: u32) {
        let state = self.cka_mut(from).state.take().expect("caller checked membership");
        let (id, epoch) = (state.group_id().to_vec(), state.epoch());
        self.send_with_key(from, flow, seq, &state, id, epoch);
        self.cka_mut(from).state = Some(state);
    }

    fn deliver_protected(&mut self, node: usize, id: u64, bundle: Bundle) {
        let name = self.nodes[node].name.clone();
        let Some(params) = bcb_params(&bundle) else {
            return self.undecryptable(id, name, "malformed BCB".into());
        };
        let opened = match &mut self.policy {
            Policy::Psk(psk) => bpsec::remove_bcb(bundle, &*psk),
            Policy::Cka { .. } => {
                let Some(cka) = self.nodes[node].cka.as_mut() else {
                    return self.undecryptable(id, name, "not a group member".into());
                };
                match &cka.state {
                    Some(s) if params.epoch <= s.epoch() => bpsec::remove_bcb(bundle, s),
                    _ => {
                        cka.held_data.push((id, bundle));
                        return;
                    }
                }
            }
            Policy::Baseline { sessions, .. } => {
                let src = self.index[bundle.primary.source.name()];
                let Some(sess) = sessions.get_mut(&pair(src, node)) else {
                    return self.undecryptable(id, name, "no session".into());
                };
                let ready = if sess.client == node {
                    sess.client_ready
                } else {
                    sess.server_ready
                };
                match (&sess.state, ready) {
                    (Some(st), true) => bpsec::remove_bcb(bundle, &session_key(st)),
                    _ => {
                        sess.held_rx.push((node, id, bundle));
                        return;
                    }
                }
            }
        };
        match opened {
            Ok(plain) => self.on_plaintext(node, id, plain.payload(), params.epoch),
            Err(e) => self.undecryptable(id, name, e.to_string()),
        }
    }

    fn on_plaintext(&mut self, node: usize, id: u64, payload: &[u8], epoch: u64) {
        let name = self.nodes[node].name.clone();
        if payload.len() < DATA_HEADER_LEN || payload[0] != DATA_PAYLOAD {
            self.totals.oracle_mismatches += 1;
            return self.undecryptable(id, name, "not a data payload".into());
        }
        let flow = u32::from_be_bytes(payload[1..5].try_into().expect("4 bytes"));
        let seq = u32::from_be_bytes(payload[5..9].try_into().expect("4 bytes"));
        if self.oracle.get(&(flow, seq)).map(Vec::as_slice) != Some(payload) {
            self.totals.oracle_mismatches += 1;
        }
        self.totals.protected_delivered += 1;
        if let Some(f) = self.flows.get_mut(flow as usize) {
            f.first_decrypt.get_or_insert(self.now);
        }
        self.emit(Event::Decrypted {
            bundle: id,
            node: name,
            flow,
            seq,
            epoch,
        });
    }

    fn re_encrypt(&mut self, node: usize, id: u64, bundle: Bundle) -> Bundle {
        if !has_bcb(&bundle) {
            return bundle;
        }
        let Some(state) = self.nodes[node].cka.as_mut().and_then(|c| c.state.take()) else {
            return bundle;
        };
        let out = match bpsec::remove_bcb(bundle.clone(), &state) {
            Ok(plain) => {
                let params = SecurityParameters {
                    group_id: state.group_id().to_vec(),
                    epoch: state.epoch(),
                    sender_leaf: state.own_leaf(),
                    nonce_seed: self.next_nonce_seed(node),
                };
                self.note_nonce(bpsec::bcb_key_nonce(&state, &params, PAYLOAD_BLOCK_NUMBER));
                let b = bpsec::apply_bcb(plain, &state, PAYLOAD_BLOCK_NUMBER, &params).expect("BCB was just removed");
                self.emit(Event::ReEncrypted {
                    bundle: id,
                    node: self.nodes[node].name.clone(),
                    epoch: state.epoch(),
                });
                b
            }
            Err(_) => bundle,
        };
        self.nodes[node].cka.as_mut().expect("member").state = Some(state);
        out
    }

    // ---- CKA control ----

    fn op(&mut self, i: usize) {
        let op = self.ops[i].clone();
        let by = self.index[&op.by];
        let skip = |reason: &str| Event::OpSkipped {
            node: op.by.clone(),
            reason: reason.into(),
        };
        let Some(state) = self.cka(by).state.as_ref() else {
            return self.emit(skip("not a group member"));
        };
        let target_leaf = op.target.as_deref().and_then(|t| state.tree().find_leaf_by_name(t));
        let proposal = match op.op {
            OpKind::Update => None,
            OpKind::Remove => match target_leaf {
                Some(leaf) => Some(state.propose_remove(leaf)),
                None => return self.emit(skip("remove target is not a member")),
            },
            OpKind::Add => {
                if target_leaf.is_some() {
                    return self.emit(skip("add target is already a member"));
                }
                let target = op.target.clone().expect("validated");
                match &self.directory {
                    Some((dir, _)) if *dir != by => {
                        let dir = *dir;
                        return self.fetch_prekey(by, dir, i, target);
                    }
                    Some((_, d)) => match d.fetch(&target) {
                        Ok(kp) => Some(state.propose_add(kp.clone())),
                        Err(e) => return self.emit(skip(&e.to_string())),
                    },
                    None => Some(state.propose_add(self.cka(self.index[&target]).bundle.clone())),
                }
            }
        };
        self.commit(by, proposal.into_iter().collect(), op.measure, op.op == OpKind::Update);
    }

    fn fetch_prekey(&mut self, by: usize, dir: usize, op: usize, target: String) {
        let msg = DirectoryMessage::Fetch { name: target.clone() }.encode();
        let (id, b) = self.originate(by, dir, &msg, self.control_lifetime, PayloadKind::Directory);
        self.totals.key_establishment_bytes += b.encoded_len() as u64;
        self.cka_mut(by).pending_adds.push((op, target.clone()));
        self.emit(Event::DirectoryFetch {
            node: self.nodes[by].name.clone(),
            name: target,
        });
        self.enqueue(by, id, b);
    }

    fn commit(&mut self, by: usize, proposals: Vec<Proposal>, measure: bool, is_update: bool) {
        let name = self.nodes[by].name.clone();
        let state = self.nodes[by]
            .cka
            .as_ref()
            .and_then(|c| c.state.as_ref())
            .expect("caller checked membership");
        let recipients: Vec<usize> = state
            .tree()
            .members()
            .filter(|(leaf, _)| *leaf != state.own_leaf())
            .map(|(_, l)| self.index[&l.identity.name])
            .collect();
        let joiners: Vec<usize> = proposals
            .iter()
            .filter_map(|p| match &p.kind {
                ProposalKind::Add(b) => self.index.get(&b.identity.name).copied(),
                _ => None,
            })
            .collect();
        let out = match state.commit(&proposals, &mut self.crypto_rng) {
            Ok(o) => o,
            Err(e) => {
                return self.emit(Event::OpSkipped {
                    node: name,
                    reason: e.to_string(),
                })
            }
        };
        let new_epoch = state.epoch() + 1;
        let cts = out.commit.path_ciphertext_count() as u64;
        let mut commit_payload = vec![COMMIT_PAYLOAD];
        commit_payload.extend_from_slice(&out.commit.encode());
        let welcome_payload = out.welcome.as_ref().map(|w| {
            let mut p = vec![WELCOME_PAYLOAD];
            p.extend_from_slice(&w.encode());
            p
        });
        let removed = out.state.is_none();
        self.cka_mut(by).state = out.state;

        let mut bytes = 0u64;
        let mut outgoing = Vec::new();
        for &r in &recipients {
            let (id, b) = self.originate(by, r, &commit_payload, self.control_lifetime, PayloadKind::Commit);
            bytes += b.encoded_len() as u64;
            outgoing.push((id, b));
        }
        if let Some(wp) = &welcome_payload {
            for &j in &joiners {
                let (id, b) = self.originate(by, j, wp, self.control_lifetime, PayloadKind::Welcome);
                bytes += b.encoded_len() as u64;
                outgoing.push((id, b));
            }
        }
        self.totals.commits += 1;
        self.totals.welcomes += joiners.len() as u64;
        self.totals.key_establishment_bytes += bytes;
        if is_update {
            self.totals.rekey_count += 1;
        }
        self.all_cts.push(cts);
        if measure {
            self.measured_cts.push(cts);
        }
        self.emit(Event::Commit {
            node: name.clone(),
            epoch: new_epoch,
            path_ciphertexts: cts,
            joiners: joiners.len() as u64,
            bytes,
        });
        if removed {
            self.emit(Event::RemovedFromGroup { node: name });
        }
        for (id, b) in outgoing {
            self.enqueue(by, id, b);
        }
        self.after_state_change(by);
    }

    fn receive_commit(&mut self, node: usize, body: &[u8]) {
        let name = self.nodes[node].name.clone();
        let Some(cka) = self.nodes[node].cka.as_mut() else {
            return;
        };
        let msg = match CommitMessage::decode(body) {
            Ok(m) => m,
            Err(e) => {
                return self.emit(Event::CommitDiscarded {
                    node: name,
                    commit_epoch: 0,
                    local_epoch: 0,
                    reason: e.to_string(),
                })
            }
        };
        cka.future_commits.push(msg);
        self.after_state_change(node);
    }

    fn apply_commit(&mut self, node: usize, msg: CommitMessage) {
        let name = self.nodes[node].name.clone();
        let state = self.cka(node).state.as_ref().expect("caller checked membership");
        let local_epoch = state.epoch();
        match state.process_commit(&msg) {
            Ok(next) => {
                let epoch = next.epoch();
                self.cka_mut(node).state = Some(next);
                self.emit(Event::CommitApplied { node: name, epoch });
            }
            Err(CkaError::RemovedFromGroup) => {
                self.cka_mut(node).state = None;
                self.emit(Event::RemovedFromGroup { node: name });
            }
            Err(e) => {
                self.totals.commit_conflicts += 1;
                self.emit(Event::CommitDiscarded {
                    node: name,
                    commit_epoch: msg.epoch,
                    local_epoch,
                    reason: e.to_string(),
                });
            }
        }
    }

    /// Applies any buffered commit that now matches, discards stale ones,
    /// then retries held data and sends queued intents.
    fn after_state_change(&mut self, node: usize) {
        loop {
            let cka = self.cka_mut(node);
            let Some(epoch) = cka.state.as_ref().map(GroupState::epoch) else {
                break;
            };
            let mut stale = Vec::new();
            cka.future_commits.retain(|c| {
                if c.epoch < epoch {
                    stale.push(c.epoch);
                    false
                } else {
                    true
                }
            });
            let next = cka.future_commits.iter().position(|c| c.epoch == epoch);
            let next = next.map(|p| cka.future_commits.remove(p));
            for commit_epoch in stale {
                self.totals.commit_conflicts += 1;
                self.emit(Event::CommitDiscarded {
                    node: self.nodes[node].name.clone(),
                    commit_epoch,
                    local_epoch: epoch,
                    reason: "stale epoch".into(),
                });
            }
            match next {
                Some(msg) => self.apply_commit(node, msg),
                None => break,
            }
        }
        if self.cka(node).state.is_none() {
            return;
        }
        let held = std::mem::take(&mut self.cka_mut(node).held_data);
        for (id, b) in held {
            self.deliver_protected(node, id, b);
        }
        let outbox = std::mem::take(&mut self.cka_mut(node).outbox);
        for (flow, seq) in outbox {
            self.send_cka_data(node, flow, seq);
        }
    }

    fn receive_welcome(&mut self, node: usize, body: &[u8]) {
        let name = self.nodes[node].name.clone();
        let Policy::Cka { retention_window } = self.policy else {
            return;
        };
        let Some(cka) = self.nodes[node].cka.as_mut() else {
            return;
        };
        if cka.state.is_some() {
            return self.emit(Event::OpSkipped {
                node: name,
                reason: "welcome for a node already in the group".into(),
            });
        }
        match WelcomeMessage::decode(body)
            .map_err(CkaError::from)
            .and_then(|w| GroupState::join(&cka.prekey, &w))
        {
            Ok(mut s) => {
                s.set_retention_window(retention_window);
                let epoch = s.epoch();
                cka.state = Some(s);
                self.emit(Event::Joined { node: name, epoch });
                self.after_state_change(node);
            }
            Err(e) => self.emit(Event::OpSkipped {
                node: name,
                reason: format!("welcome rejected: {e}"),
            }),
        }
    }

    fn directory_request(&mut self, node: usize, bundle: &Bundle) {
        let Some((dir, d)) = self.directory.as_mut().filter(|(dir, _)| *dir == node) else {
            return;
        };
        let dir = *dir;
        let Ok(msg) = DirectoryMessage::decode(bundle.payload()) else {
            return;
        };
        if let Ok(Some(resp)) = d.handle(&msg) {
            let requester = self.index[bundle.primary.source.name()];
            let (id, b) = self.originate(
                dir,
                requester,
                &resp.encode(),
                self.control_lifetime,
                PayloadKind::Directory,
            );
            self.totals.key_establishment_bytes += b.encoded_len() as u64;
            self.enqueue(dir, id, b);
        }
    }

    fn directory_response(&mut self, node: usize, payload: &[u8]) {
        let Ok(DirectoryMessage::Response { name, bundle }) = DirectoryMessage::decode(payload) else {
            return;
        };
        let node_name = self.nodes[node].name.clone();
        self.emit(Event::DirectoryResponse {
            node: node_name.clone(),
            name: name.clone(),
            found: bundle.is_some(),
        });
        let Some(cka) = self.nodes[node].cka.as_mut() else {
            return;
        };
        let (ready, rest): (Vec<_>, Vec<_>) = std::mem::take(&mut cka.pending_adds)
            .into_iter()
            .partition(|(_, t)| *t == name);
        cka.pending_adds = rest;
        for (op, _) in ready {
            let measure = self.ops[op].measure;
            let reason = match (&bundle, self.cka(node).state.as_ref()) {
                (None, _) => "directory has no bundle for the target",
                (_, None) => "not a group member",
                (Some(_), Some(s)) if s.tree().find_leaf_by_name(&name).is_some() => "add target is already a member",
                (Some(kp), Some(s)) => {
                    let p = s.propose_add(kp.clone());
                    self.commit(node, vec![p], measure, false);
                    continue;
                }
            };
            self.emit(Event::OpSkipped {
                node: node_name.clone(),
                reason: reason.into(),
            });
        }
    }

    // ---- session baseline ----

    fn baseline_intent(&mut self, from: usize, flow: usize, seq: u32) {
        let to = self.index[&self.sc.config.traffic[flow].to];
        let Policy::Baseline { sessions, .. } = &mut self.policy else {
            unreachable!("baseline policy")
        };
        let sess = sessions.entry(pair(from, to)).or_insert_with(|| Session {
            client: from,
            state: None,
            in_progress: false,
            client_ready: false,
            server_ready: false,
            queued: Vec::new(),
            held_rx: Vec::new(),
        });
        let ready = if sess.client == from {
            sess.client_ready
        } else {
            sess.server_ready
        };
        if ready {
            let key = session_key(sess.state.as_ref().expect("ready sessions hold state"));
            let id = key.key_id.clone();
            return self.send_with_key(from, flow, seq, &key, id, 0);
        }
        sess.queued.push((from, flow, seq));
        if !sess.in_progress && sess.state.is_none() {
            let client = sess.client;
            self.handshake(client, if client == from { to } else { from });
        }
    }

    fn handshake(&mut self, client: usize, server: usize) {
        let Policy::Baseline { config, sessions } = &mut self.policy else {
            return;
        };
        let sess = sessions.entry(pair(client, server)).or_insert_with(|| Session {
            client,
            state: None,
            in_progress: false,
            client_ready: false,
            server_ready: false,
            queued: Vec::new(),
            held_rx: Vec::new(),
        });
        if sess.state.is_some() {
            return;
        }
        sess.in_progress = true;
        let config = *config;
        let (cn, sn) = (self.nodes[client].name.clone(), self.nodes[server].name.clone());
        let mut path = SimPath {
            plan: &self.sc.plan,
            routes: &self.sc.routes,
            rng: &mut self.loss_rng,
            max_hops: self.nodes.len(),
        };
        let trace = baseline::run_handshake(&cn, &sn, &mut path, &config, self.now, &mut self.crypto_rng)
            .expect("validated handshake config");
        self.totals.handshakes_attempted += 1;
        self.totals.key_establishment_bytes += trace.bytes_exchanged;
        let mut last = self.now;
        for row in &trace.rows {
            last = last.max(row.t);
            self.schedule(
                row.t,
                Ev::Log(Event::Handshake {
                    from: row.from.clone(),
                    to: row.to.clone(),
                    msg: row.kind,
                    bytes: row.bytes,
                    flag: row.flag,
                }),
            );
        }
        let key = pair(client, server);
        if trace.completed {
            let session = trace.session.expect("completed handshakes carry a session");
            let (t2, t3) = (
                session.established_at,
                trace.first_protected_byte_at.expect("completed handshakes send data"),
            );
            self.totals.handshakes_completed += 1;
            self.totals.handshake_round_trips += trace.round_trips as u64;
            if let Policy::Baseline { sessions, .. } = &mut self.policy {
                let sess = sessions.get_mut(&key).expect("inserted above");
                sess.state = Some(session);
                sess.in_progress = false;
            }
            self.schedule(
                t2,
                Ev::SessionReady {
                    pair: key,
                    client_side: true,
                },
            );
            self.schedule(
                t3,
                Ev::SessionReady {
                    pair: key,
                    client_side: false,
                },
            );
        } else {
            self.totals.wasted_bytes_incomplete_handshakes += trace.wasted_bytes;
            self.schedule(
                last,
                Ev::Log(Event::HandshakeIncomplete {
                    client: cn.clone(),
                    server: sn.clone(),
                    wasted_bytes: trace.wasted_bytes,
                }),
            );
            let retry = self
                .sc
                .routes
                .next_hop(&cn, &sn)
                .ok()
                .and_then(|hop| self.sc.plan.next_opening(&cn, hop, self.now))
                .filter(|&t| t <= self.until);
            match retry {
                Some(t) => self.schedule(t, Ev::Handshake { client, server }),
                None => {
                    if let Policy::Baseline { sessions, .. } = &mut self.policy {
                        sessions.get_mut(&key).expect("inserted above").in_progress = false;
                    }
                }
            }
        }
    }

    fn session_ready(&mut self, key: (usize, usize), client_side: bool) {
        let Policy::Baseline { sessions, .. } = &mut self.policy else {
            return;
        };
        let sess = sessions.get_mut(&key).expect("scheduled for a known session");
        let side = if client_side {
            sess.client
        } else if sess.client == key.0 {
            key.1
        } else {
            key.0
        };
        if client_side {
            sess.client_ready = true;
        } else {
            sess.server_ready = true;
        }
        let key_src = session_key(sess.state.as_ref().expect("ready sessions hold state"));
        let (go, wait): (Vec<_>, Vec<_>) = std::mem::take(&mut sess.queued).into_iter().partition(|q| q.0 == side);
        sess.queued = wait;
        let (rx, rx_wait): (Vec<_>, Vec<_>) = std::mem::take(&mut sess.held_rx).into_iter().partition(|h| h.0 == side);
        sess.held_rx = rx_wait;
        let client = sess.client;
        if client_side {
            let server = if client == key.0 { key.1 } else { key.0 };
            self.emit(Event::HandshakeDone {
                client: self.nodes[client].name.clone(),
                server: self.nodes[server].name.clone(),
                round_trips: 1,
            });
        }
        for (from, flow, seq) in go {
            self.send_with_key(from, flow, seq, &key_src, key_src.key_id.clone(), 0);
        }
        for (node, id, b) in rx {
            self.deliver_protected(node, id, b);
        }
    }

    // ---- adversary ----

    fn compromise(&mut self, i: usize) {
        let name = self.sc.config.compromise[i].node.clone();
        let node = self.index[&name];
        let (kind, bytes) = match &self.policy {
            Policy::Cka { .. } => (
                CaptureKind::CkaState,
                self.nodes[node]
                    .cka
                    .as_ref()
                    .and_then(|c| c.state.as_ref())
                    .map(GroupState::encode)
                    .unwrap_or_default(),
            ),
            Policy::Psk(psk) => (CaptureKind::Psk, psk.secret.to_vec()),
            Policy::Baseline { sessions, .. } => {
                let mut out = Vec::new();
                for ((a, b), s) in sessions {
                    if *a == node || *b == node {
                        if let Some(st) = &s.state {
                            out.extend_from_slice(&st.traffic_secret);
                            out.extend_from_slice(st.resumption_ticket.as_deref().unwrap_or_default());
                        }
                    }
                }
                (CaptureKind::Sessions, out)
            }
        };
        self.emit(Event::Compromise {
            node: name.clone(),
            captured_bytes: bytes.len() as u64,
        });
        self.adversary.capture(Capture {
            node: name,
            at: self.now,
            kind,
            bytes,
        });
    }

    fn finish(mut self) -> RunOutput {
        for m in &self.meta {
            match m.fate {
                Fate::InStore => self.totals.in_store_at_end += 1,
                Fate::InFlight => self.totals.in_flight_at_end += 1,
                Fate::Delivered => self.totals.delivered += 1,
                Fate::Expired => self.totals.expired += 1,
                Fate::NoRoute => self.totals.dropped_no_route += 1,
                Fate::Capacity => self.totals.dropped_capacity += 1,
                Fate::Lost => self.totals.lost_in_transit += 1,
            }
        }
        let sweep = self.adversary.sweep();
        self.totals.adversary_past_bundles = sweep.past_bundles;
        self.totals.adversary_past_decrypted = sweep.past_decrypted;
        self.totals.adversary_future_bundles = sweep.future_bundles;
        self.totals.adversary_future_decrypted = sweep.future_decrypted;
        let cts = if self.measured_cts.is_empty() {
            &self.all_cts
        } else {
            &self.measured_cts
        };
        self.totals.path_ciphertexts_per_commit = if cts.is_empty() {
            0.0
        } else {
            cts.iter().sum::<u64>() as f64 / cts.len() as f64
        };
        let cfg = &self.sc.config;
        let flows = cfg
            .traffic
            .iter()
            .zip(&self.flows)
            .enumerate()
            .map(|(flow, (t, f))| FlowMetrics {
                flow,
                from: t.from.clone(),
                to: t.to.clone(),
                ttfpb_s: match (f.first_intent, f.first_decrypt) {
                    (Some(a), Some(b)) => Some((b - a).as_secs_f64()),
                    _ => None,
                },
            })
            .collect();
        RunOutput {
            metrics: MetricsReport {
                scenario: cfg.name.clone(),
                seed: self.log.rng_seed,
                policy: cfg.key_policy.name().to_owned(),
                flows,
                totals: self.totals,
            },
            log: self.log,
            adversary: self.adversary,
        }
    }
}

fn session_key(state: &SessionState) -> StaticPsk {
    StaticPsk {
        key_id: state.connection_id.clone(),
        secret: state.traffic_secret as Secret,
    }
}
