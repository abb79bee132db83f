//! Timed message-count model of a 1-RTT session handshake with optional
//! resumption, used as the comparison baseline. Nothing here is
//! cryptographic beyond drawing fresh secrets from the injected RNG.
//!
//! Handshake messages are not stored and forwarded: each must be carried by
//! the link the moment it is sent, as a connection-oriented transport would
//! need. A message the link cannot carry ends the attempt as incomplete.

use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::time::SimTime;

pub const DEFAULT_HELLO_BYTES: u64 = 1200;
pub const DEFAULT_RESPONSE_BYTES: u64 = 3000;
pub const DEFAULT_FINISHED_BYTES: u64 = 64;
pub const DEFAULT_MAX_RETRANSMITS: u32 = 3;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BaselineError {
    #[error("message sizes must be positive")]
    ZeroSize,
    #[error("resumption requested without a ticket")]
    NoTicket,
    #[error("pairwise cost needs at least two members, got {0}")]
    TooSmall(u64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HandshakeMode {
    #[serde(rename = "full_1rtt")]
    Full1Rtt,
    #[serde(rename = "resumption_0rtt")]
    Resumption0Rtt,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HandshakeConfig {
    pub mode: HandshakeMode,
    pub hello_bytes: u64,
    pub response_bytes: u64,
    pub finished_bytes: u64,
    /// Retransmissions allowed per message after a loss.
    pub max_retransmits: u32,
}

impl Default for HandshakeConfig {
    fn default() -> Self {
        HandshakeConfig {
            mode: HandshakeMode::Full1Rtt,
            hello_bytes: DEFAULT_HELLO_BYTES,
            response_bytes: DEFAULT_RESPONSE_BYTES,
            finished_bytes: DEFAULT_FINISHED_BYTES,
            max_retransmits: DEFAULT_MAX_RETRANSMITS,
        }
    }
}

impl HandshakeConfig {
    pub fn validate(&self) -> Result<(), BaselineError> {
        if self.hello_bytes == 0 || self.response_bytes == 0 || self.finished_bytes == 0 {
            return Err(BaselineError::ZeroSize);
        }
        Ok(())
    }

    pub fn total_bytes(&self) -> u64 {
        self.hello_bytes + self.response_bytes + self.finished_bytes
    }
}

#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionState {
    pub connection_id: Vec<u8>,
    pub traffic_secret: [u8; 32],
    pub established_at: SimTime,
    pub resumption_ticket: Option<Vec<u8>>,
}

impl std::fmt::Debug for SessionState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SessionState")
            .field("connection_id", &hex::encode(&self.connection_id))
            .field("established_at", &self.established_at)
            .finish_non_exhaustive()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MsgKind {
    ClientHello,
    ServerResponse,
    Finished,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceFlag {
    Delivered,
    Lost,
    /// No contact could carry the message when it was sent.
    Unavailable,
}

/// One transmission attempt: `(t, from, to, kind, bytes, flag)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: SimTime,
    pub from: String,
    pub to: String,
    pub kind: MsgKind,
    pub bytes: u64,
    pub flag: TraceFlag,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HandshakeTrace {
    pub rows: Vec<TraceRow>,
    pub completed: bool,
    /// Round trips spent before the first protected byte could be sent.
    pub round_trips: u32,
    pub bytes_exchanged: u64,
    /// Bytes spent on an attempt that did not complete.
    pub wasted_bytes: u64,
    pub first_protected_byte_at: Option<SimTime>,
    pub replay_window_open: bool,
    pub session: Option<SessionState>,
}

/// What happened to one message put on the link.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Transmission {
    Delivered(SimTime),
    Lost,
    Unavailable,
}

/// The links a handshake runs over.
pub trait PathModel {
    /// Sends `bytes` from `from` to `to` at exactly `depart`.
    fn transmit(&mut self, from: &str, to: &str, depart: SimTime, bytes: u64) -> Transmission;

    /// Round-trip estimate used for the retransmission timer.
    fn rtt_estimate(&self, from: &str, to: &str, at: SimTime) -> SimTime;
}

/// A symmetric link with fixed one-way delay, unlimited rate and optional
/// contact windows `[start, end)`. A message goes out only if it would
/// arrive before its window closes.
#[derive(Clone, Debug)]
pub struct FixedLink {
    pub one_way_delay: SimTime,
    pub windows: Option<Vec<(SimTime, SimTime)>>,
    /// Sends with these (0-based) indices are lost.
    pub lose: Vec<usize>,
    sent: usize,
}

impl FixedLink {
    pub fn always_on(one_way_delay: SimTime) -> Self {
        FixedLink {
            one_way_delay,
            windows: None,
            lose: Vec::new(),
            sent: 0,
        }
    }

    pub fn windowed(one_way_delay: SimTime, windows: Vec<(SimTime, SimTime)>) -> Self {
        FixedLink {
            windows: Some(windows),
            ..Self::always_on(one_way_delay)
        }
    }
}

impl PathModel for FixedLink {
    fn transmit(&mut self, _from: &str, _to: &str, depart: SimTime, _bytes: u64) -> Transmission {
        let arrival = depart + self.one_way_delay;
        let open = match &self.windows {
            None => true,
            Some(ws) => ws.iter().any(|&(s, e)| s <= depart && arrival <= e),
        };
        if !open {
            return Transmission::Unavailable;
        }
        let index = self.sent;
        self.sent += 1;
        if self.lose.contains(&index) {
            Transmission::Lost
        } else {
            Transmission::Delivered(arrival)
        }
    }

    fn rtt_estimate(&self, _from: &str, _to: &str, _at: SimTime) -> SimTime {
        self.one_way_delay + self.one_way_delay
    }
}

struct Run<'a, P> {
    path: &'a mut P,
    config: &'a HandshakeConfig,
    rows: Vec<TraceRow>,
    bytes: u64,
}

impl<P: PathModel> Run<'_, P> {
    /// Sends one message with retransmission on loss. Returns its arrival.
    fn send(&mut self, from: &str, to: &str, at: SimTime, kind: MsgKind, bytes: u64) -> Option<SimTime> {
        let mut depart = at;
        for _ in 0..=self.config.max_retransmits {
            let outcome = self.path.transmit(from, to, depart, bytes);
            let flag = match outcome {
                Transmission::Delivered(_) => TraceFlag::Delivered,
                Transmission::Lost => TraceFlag::Lost,
                Transmission::Unavailable => TraceFlag::Unavailable,
            };
            if outcome != Transmission::Unavailable {
                self.bytes += bytes;
            }
            self.rows.push(TraceRow {
                t: depart,
                from: from.to_owned(),
                to: to.to_owned(),
                kind,
                bytes,
                flag,
            });
            match outcome {
                Transmission::Delivered(arrival) => return Some(arrival),
                Transmission::Unavailable => return None,
                Transmission::Lost => {
                    let rto = self.path.rtt_estimate(from, to, depart);
                    depart = depart + rto + rto;
                }
            }
        }
        None
    }

    fn finish(
        self,
        completed: bool,
        round_trips: u32,
        first: Option<SimTime>,
        replay_window_open: bool,
        session: Option<SessionState>,
    ) -> HandshakeTrace {
        HandshakeTrace {
            rows: self.rows,
            completed,
            round_trips: if completed { round_trips } else { 0 },
            bytes_exchanged: self.bytes,
            wasted_bytes: if completed { 0 } else { self.bytes },
            first_protected_byte_at: first,
            replay_window_open,
            session: if completed { session } else { None },
        }
    }
}

fn new_session(rng: &mut (impl RngCore + CryptoRng), established_at: SimTime) -> SessionState {
    let mut connection_id = vec![0u8; 8];
    rng.fill_bytes(&mut connection_id);
    let mut traffic_secret = [0u8; 32];
    rng.fill_bytes(&mut traffic_secret);
    let mut ticket = vec![0u8; 32];
    rng.fill_bytes(&mut ticket);
    SessionState {
        connection_id,
        traffic_secret,
        established_at,
        resumption_ticket: Some(ticket),
    }
}

/// Full handshake: hello at `now`, response one delay later, then the
/// client's finished flight carries the first protected bytes.
pub fn run_handshake(
    client: &str,
    server: &str,
    path: &mut impl PathModel,
    config: &HandshakeConfig,
    now: SimTime,
    rng: &mut (impl RngCore + CryptoRng),
) -> Result<HandshakeTrace, BaselineError> {
    config.validate()?;
    let mut run = Run {
        path,
        config,
        rows: Vec::new(),
        bytes: 0,
    };
    let Some(t1) = run.send(client, server, now, MsgKind::ClientHello, config.hello_bytes) else {
        return Ok(run.finish(false, 0, None, false, None));
    };
    let Some(t2) = run.send(server, client, t1, MsgKind::ServerResponse, config.response_bytes) else {
        return Ok(run.finish(false, 0, None, false, None));
    };
    let Some(t3) = run.send(client, server, t2, MsgKind::Finished, config.finished_bytes) else {
        return Ok(run.finish(false, 0, None, false, None));
    };
    let session = new_session(rng, t2);
    Ok(run.finish(true, 1, Some(t3), false, Some(session)))
}

/// Re-establishes a session. Full mode costs exactly what
/// [`run_handshake`] costs; resumption sends protected data with the hello
/// and leaves a replay window open.
#[allow(clippy::too_many_arguments)]
pub fn reconnect(
    state: &SessionState,
    mode: HandshakeMode,
    client: &str,
    server: &str,
    path: &mut impl PathModel,
    config: &HandshakeConfig,
    now: SimTime,
    rng: &mut (impl RngCore + CryptoRng),
) -> Result<HandshakeTrace, BaselineError> {
    match mode {
        HandshakeMode::Full1Rtt => run_handshake(client, server, path, config, now, rng),
        HandshakeMode::Resumption0Rtt => {
            config.validate()?;
            if state.resumption_ticket.is_none() {
                return Err(BaselineError::NoTicket);
            }
            let mut run = Run {
                path,
                config,
                rows: Vec::new(),
                bytes: 0,
            };
            let Some(t1) = run.send(client, server, now, MsgKind::ClientHello, config.hello_bytes) else {
                return Ok(run.finish(false, 0, None, true, None));
            };
            let completed = run
                .send(server, client, t1, MsgKind::ServerResponse, config.response_bytes)
                .and_then(|t2| run.send(client, server, t2, MsgKind::Finished, config.finished_bytes))
                .is_some();
            let session = new_session(rng, now);
            let mut trace = run.finish(completed, 0, Some(t1), true, Some(session));
            // Early data already reached the server even if the rest failed.
            trace.first_protected_byte_at = Some(t1);
            Ok(trace)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairwiseCost {
    pub handshakes: u64,
    pub bytes: u64,
    pub round_trips: u64,
}

/// Cost of giving every pair of `n` members its own session.
pub fn pairwise_group_cost(n: u64, config: &HandshakeConfig) -> Result<PairwiseCost, BaselineError> {
    if n < 2 {
        return Err(BaselineError::TooSmall(n));
    }
    config.validate()?;
    let handshakes = n * (n - 1) / 2;
    let per_rtt = match config.mode {
        HandshakeMode::Full1Rtt => 1,
        HandshakeMode::Resumption0Rtt => 0,
    };
    Ok(PairwiseCost {
        handshakes,
        bytes: handshakes * config.total_bytes(),
        round_trips: handshakes * per_rtt,
    })
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    use super::*;

    fn rng() -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(0)
    }

    fn full(d: SimTime) -> HandshakeTrace {
        run_handshake(
            "c",
            "s",
            &mut FixedLink::always_on(d),
            &HandshakeConfig::default(),
            SimTime::ZERO,
            &mut rng(),
        )
        .unwrap()
    }

    #[test]
    fn full_handshake_takes_three_one_way_delays() {
        let t = full(SimTime::from_millis(125));
        assert!(t.completed);
        assert_eq!(t.first_protected_byte_at, Some(SimTime::from_millis(375)));
        assert_eq!(t.round_trips, 1);
        assert_eq!(t.bytes_exchanged, 1200 + 3000 + 64);
        assert_eq!(t.wasted_bytes, 0);
        assert_eq!(
            full(SimTime::from_secs(690)).first_protected_byte_at,
            Some(SimTime::from_secs(2070))
        );
    }

    #[test]
    fn short_window_leaves_handshake_incomplete() {
        let mut link = FixedLink::windowed(
            SimTime::from_millis(125),
            vec![(SimTime::ZERO, SimTime::from_millis(200))],
        );
        let t = run_handshake(
            "c",
            "s",
            &mut link,
            &HandshakeConfig::default(),
            SimTime::ZERO,
            &mut rng(),
        )
        .unwrap();
        assert!(!t.completed);
        assert_eq!(t.wasted_bytes, DEFAULT_HELLO_BYTES);
        assert!(t.session.is_none());
        assert_eq!(t.first_protected_byte_at, None);
        assert_eq!(t.rows.last().unwrap().flag, TraceFlag::Unavailable);
    }

    #[test]
    fn full_reconnect_costs_another_three_delays() {
        let d = SimTime::from_secs(7);
        let first = full(d);
        let session = first.session.unwrap();
        let again = reconnect(
            &session,
            HandshakeMode::Full1Rtt,
            "c",
            "s",
            &mut FixedLink::always_on(d),
            &HandshakeConfig::default(),
            SimTime::from_secs(100),
            &mut rng(),
        )
        .unwrap();
        assert_eq!(again.first_protected_byte_at, Some(SimTime::from_secs(121)));
        assert!(!again.replay_window_open);
    }

    #[test]
    fn resumption_sends_early_data_with_replay_window() {
        let d = SimTime::from_secs(7);
        let session = full(d).session.unwrap();
        let t = reconnect(
            &session,
            HandshakeMode::Resumption0Rtt,
            "c",
            "s",
            &mut FixedLink::always_on(d),
            &HandshakeConfig::default(),
            SimTime::ZERO,
            &mut ChaCha20Rng::seed_from_u64(1),
        )
        .unwrap();
        assert_eq!(t.round_trips, 0);
        assert_eq!(t.first_protected_byte_at, Some(d));
        assert!(t.replay_window_open);
        assert!(t.bytes_exchanged >= DEFAULT_HELLO_BYTES);
        assert_ne!(t.session.unwrap().traffic_secret, session.traffic_secret);
    }

    #[test]
    fn resumption_needs_a_ticket() {
        let mut session = full(SimTime::from_secs(1)).session.unwrap();
        session.resumption_ticket = None;
        let err = reconnect(
            &session,
            HandshakeMode::Resumption0Rtt,
            "c",
            "s",
            &mut FixedLink::always_on(SimTime::from_secs(1)),
            &HandshakeConfig::default(),
            SimTime::ZERO,
            &mut rng(),
        )
        .unwrap_err();
        assert_eq!(err, BaselineError::NoTicket);
    }

    #[test]
    fn loss_retransmits_after_two_round_trips() {
        let d = SimTime::from_millis(100);
        let mut link = FixedLink::always_on(d);
        link.lose = vec![1];
        let t = run_handshake(
            "c",
            "s",
            &mut link,
            &HandshakeConfig::default(),
            SimTime::ZERO,
            &mut rng(),
        )
        .unwrap();
        assert!(t.completed);
        // Response lost at 100 ms, resent at 100 + 400 ms.
        assert_eq!(t.rows[2].t, SimTime::from_millis(500));
        assert_eq!(t.first_protected_byte_at, Some(SimTime::from_millis(700)));
        assert_eq!(t.bytes_exchanged, 1200 + 3000 + 3000 + 64);
    }

    #[test]
    fn persistent_loss_gives_up() {
        let mut link = FixedLink::always_on(SimTime::from_millis(10));
        link.lose = (0..10).collect();
        let t = run_handshake(
            "c",
            "s",
            &mut link,
            &HandshakeConfig::default(),
            SimTime::ZERO,
            &mut rng(),
        )
        .unwrap();
        assert!(!t.completed);
        assert_eq!(t.wasted_bytes, 4 * DEFAULT_HELLO_BYTES);
    }

    #[test]
    fn sessions_are_fresh() {
        let mut r = rng();
        let mut link = FixedLink::always_on(SimTime::from_millis(10));
        let cfg = HandshakeConfig::default();
        let a = run_handshake("c", "s", &mut link, &cfg, SimTime::ZERO, &mut r).unwrap();
        let b = run_handshake("c", "s", &mut link, &cfg, SimTime::ZERO, &mut r).unwrap();
        assert_ne!(a.session.unwrap().traffic_secret, b.session.unwrap().traffic_secret);
    }

    #[test]
    fn pairwise_cost_is_quadratic() {
        let cfg = HandshakeConfig::default();
        assert_eq!(pairwise_group_cost(2, &cfg).unwrap().handshakes, 1);
        assert_eq!(pairwise_group_cost(8, &cfg).unwrap().handshakes, 28);
        let c = pairwise_group_cost(64, &cfg).unwrap();
        assert_eq!(c.handshakes, 2016);
        assert_eq!(c.bytes, 2016 * 4264);
        assert_eq!(c.round_trips, 2016);
        assert_eq!(pairwise_group_cost(1, &cfg).unwrap_err(), BaselineError::TooSmall(1));
    }

    #[test]
    fn zero_sizes_are_rejected() {
        let cfg = HandshakeConfig {
            finished_bytes: 0,
            ..HandshakeConfig::default()
        };
        assert_eq!(cfg.validate().unwrap_err(), BaselineError::ZeroSize);
    }
}
