//! Contact plans, link timing and static routing.

use std::collections::BTreeMap;
use std::fmt;

use ckalab_core::SimTime;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Delay regime a plan is checked against.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    NearEarth,
    Lunar,
    DeepSpace,
    Custom,
}

impl Profile {
    /// Inclusive round-trip bounds, `None` for [`Profile::Custom`].
    pub fn rtt_bounds(self) -> Option<(SimTime, SimTime)> {
        match self {
            Profile::NearEarth => Some((SimTime::from_millis(20), SimTime::from_millis(250))),
            Profile::Lunar => Some((SimTime::from_secs(5), SimTime::from_secs(14))),
            Profile::DeepSpace => Some((SimTime::from_secs(50), SimTime::from_secs(23 * 60))),
            Profile::Custom => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Profile::NearEarth => "near_earth",
            Profile::Lunar => "lunar",
            Profile::DeepSpace => "deep_space",
            Profile::Custom => "custom",
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Link data rate. Scenario files write either a byte count per second or
/// the string `"unlimited"`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RateRepr", into = "RateRepr")]
pub enum Rate {
    Unlimited,
    BytesPerSec(u64),
}

/// 1 Mbit/s.
pub const DEFAULT_RATE: Rate = Rate::BytesPerSec(125_000);

impl Default for Rate {
    fn default() -> Self {
        DEFAULT_RATE
    }
}

impl Rate {
    /// Serialisation time for `bytes`, rounded up to the next tick.
    pub fn tx_time(self, bytes: u64) -> SimTime {
        match self {
            Rate::Unlimited => SimTime::ZERO,
            Rate::BytesPerSec(r) => SimTime(((bytes as u128 * 1_000_000).div_ceil(r as u128)) as u64),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum RateRepr {
    BytesPerSec(u64),
    Word(String),
}

impl TryFrom<RateRepr> for Rate {
    type Error = String;

    fn try_from(r: RateRepr) -> Result<Self, String> {
        match r {
            RateRepr::BytesPerSec(0) => Err("rate must be positive".into()),
            RateRepr::BytesPerSec(n) => Ok(Rate::BytesPerSec(n)),
            RateRepr::Word(w) if w == "unlimited" => Ok(Rate::Unlimited),
            RateRepr::Word(w) => Err(format!(
                "unknown rate {w:?}, expected bytes per second or \"unlimited\""
            )),
        }
    }
}

impl From<Rate> for RateRepr {
    fn from(r: Rate) -> Self {
        match r {
            Rate::Unlimited => RateRepr::Word("unlimited".into()),
            Rate::BytesPerSec(n) => RateRepr::BytesPerSec(n),
        }
    }
}

/// A directional transmission opportunity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Contact {
    pub from: String,
    pub to: String,
    pub start: SimTime,
    pub end: SimTime,
    pub one_way_delay: SimTime,
    pub rate: Rate,
    pub loss_prob: f64,
}

impl Contact {
    /// Earliest launch at or after `earliest` whose whole transfer
    /// `[depart, depart + tx + delay]` fits inside the window. Returns
    /// `(depart, arrival)`.
    pub fn launch(&self, earliest: SimTime, bytes: u64) -> Option<(SimTime, SimTime)> {
        let depart = earliest.max(self.start);
        let arrival = depart
            .saturating_add(self.rate.tx_time(bytes))
            .saturating_add(self.one_way_delay);
        (arrival <= self.end).then_some((depart, arrival))
    }

    pub fn rtt(&self) -> SimTime {
        self.one_way_delay + self.one_way_delay
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlanError {
    #[error("contact {index}: {reason}")]
    InvalidContact { index: usize, reason: String },
    #[error("contacts {first} and {second} overlap on {from} -> {to}")]
    Overlap {
        first: usize,
        second: usize,
        from: String,
        to: String,
    },
    #[error("contact {index}: round trip {rtt} outside the {profile} range {min}..={max}")]
    ProfileViolation {
        index: usize,
        profile: Profile,
        rtt: SimTime,
        min: SimTime,
        max: SimTime,
    },
}

impl PlanError {
    pub fn index(&self) -> usize {
        match self {
            PlanError::InvalidContact { index, .. } | PlanError::ProfileViolation { index, .. } => *index,
            PlanError::Overlap { second, .. } => *second,
        }
    }
}

/// A validated plan. Contacts keep the order given; `source[i]` is the
/// caller's index for contact `i` (repeats and reverse directions share it).
#[derive(Clone, Debug, PartialEq)]
pub struct ContactPlan {
    pub profile: Profile,
    pub contacts: Vec<Contact>,
    source: Vec<usize>,
    by_link: BTreeMap<(String, String), Vec<usize>>,
}

impl ContactPlan {
    pub fn new(profile: Profile, contacts: Vec<Contact>) -> Result<Self, PlanError> {
        let source = (0..contacts.len()).collect();
        Self::with_sources(profile, contacts, source)
    }

    pub(crate) fn with_sources(
        profile: Profile,
        contacts: Vec<Contact>,
        source: Vec<usize>,
    ) -> Result<Self, PlanError> {
        let invalid = |i: usize, reason: &str| PlanError::InvalidContact {
            index: source[i],
            reason: reason.to_owned(),
        };
        for (i, c) in contacts.iter().enumerate() {
            if c.from == c.to {
                return Err(invalid(i, "from and to are the same node"));
            }
            if c.start >= c.end {
                return Err(invalid(i, "start must be before end"));
            }
            if c.one_way_delay == SimTime::ZERO {
                return Err(invalid(i, "delay must be positive"));
            }
            if !(0.0..=1.0).contains(&c.loss_prob) {
                return Err(invalid(i, "loss must be within [0, 1]"));
            }
            if let Some((min, max)) = profile.rtt_bounds() {
                let rtt = c.rtt();
                if rtt < min || rtt > max {
                    return Err(PlanError::ProfileViolation {
                        index: source[i],
                        profile,
                        rtt,
                        min,
                        max,
                    });
                }
            }
        }
        let mut by_link: BTreeMap<(String, String), Vec<usize>> = BTreeMap::new();
        for (i, c) in contacts.iter().enumerate() {
            by_link.entry((c.from.clone(), c.to.clone())).or_default().push(i);
        }
        for list in by_link.values_mut() {
            list.sort_by_key(|&i| (contacts[i].start, i));
            for w in list.windows(2) {
                let (a, b) = (&contacts[w[0]], &contacts[w[1]]);
                if b.start < a.end {
                    return Err(PlanError::Overlap {
                        first: source[w[0]],
                        second: source[w[1]],
                        from: a.from.clone(),
                        to: a.to.clone(),
                    });
                }
            }
        }
        Ok(ContactPlan {
            profile,
            contacts,
            source,
            by_link,
        })
    }

    /// Caller index of contact `i`.
    pub fn source_index(&self, i: usize) -> usize {
        self.source[i]
    }

    /// Indices of contacts `from -> to`, earliest first.
    pub fn link(&self, from: &str, to: &str) -> &[usize] {
        self.by_link
            .get(&(from.to_owned(), to.to_owned()))
            .map_or(&[], Vec::as_slice)
    }

    /// The contact whose window covers `at`, if any.
    pub fn open_at(&self, from: &str, to: &str, at: SimTime) -> Option<&Contact> {
        self.link(from, to)
            .iter()
            .map(|&i| &self.contacts[i])
            .find(|c| c.start <= at && at < c.end)
    }

    /// First contact `from -> to` starting strictly after `after`.
    pub fn next_opening(&self, from: &str, to: &str, after: SimTime) -> Option<SimTime> {
        self.link(from, to)
            .iter()
            .map(|&i| self.contacts[i].start)
            .find(|&s| s > after)
    }
}

/// How a node reaches a destination.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Via {
    Direct,
    Node(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("no route from {node} to {destination}")]
pub struct NoRoute {
    pub node: String,
    pub destination: String,
}

/// Static per-node routing. An exact destination entry beats the `*`
/// wildcard.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RoutingTable {
    exact: BTreeMap<(String, String), Via>,
    wildcard: BTreeMap<String, Via>,
}

impl RoutingTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// `destination` of `None` installs the wildcard entry.
    pub fn insert(&mut self, node: &str, destination: Option<&str>, via: Via) {
        match destination {
            Some(d) => {
                self.exact.insert((node.to_owned(), d.to_owned()), via);
            }
            None => {
                self.wildcard.insert(node.to_owned(), via);
            }
        }
    }

    pub fn next_hop<'a>(&'a self, node: &str, destination: &'a str) -> Result<&'a str, NoRoute> {
        let via = self
            .exact
            .get(&(node.to_owned(), destination.to_owned()))
            .or_else(|| self.wildcard.get(node))
            .ok_or_else(|| NoRoute {
                node: node.to_owned(),
                destination: destination.to_owned(),
            })?;
        Ok(match via {
            Via::Direct => destination,
            Via::Node(n) => n,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn contact(from: &str, to: &str, start: u64, end: u64, delay_ms: u64) -> Contact {
        Contact {
            from: from.into(),
            to: to.into(),
            start: SimTime::from_secs(start),
            end: SimTime::from_secs(end),
            one_way_delay: SimTime::from_millis(delay_ms),
            rate: Rate::Unlimited,
            loss_prob: 0.0,
        }
    }

    #[test]
    fn tx_time_rounds_up() {
        assert_eq!(Rate::BytesPerSec(125_000).tx_time(1200), SimTime::from_micros(9_600));
        assert_eq!(Rate::BytesPerSec(3).tx_time(1), SimTime(333_334));
        assert_eq!(Rate::Unlimited.tx_time(u64::MAX), SimTime::ZERO);
    }

    #[test]
    fn launch_must_finish_inside_the_window() {
        let c = contact("a", "b", 10, 11, 125);
        assert_eq!(
            c.launch(SimTime::ZERO, 0),
            Some((SimTime::from_secs(10), SimTime::from_millis(10_125)))
        );
        assert_eq!(
            c.launch(SimTime::from_millis(10_875), 0).unwrap().1,
            SimTime::from_secs(11)
        );
        assert_eq!(c.launch(SimTime::from_millis(10_876), 0), None);
    }

    #[test]
    fn overlapping_windows_on_one_link_are_rejected() {
        let err = ContactPlan::new(
            Profile::Custom,
            vec![contact("a", "b", 0, 10, 5), contact("a", "b", 9, 20, 5)],
        )
        .unwrap_err();
        assert!(matches!(
            err,
            PlanError::Overlap {
                first: 0,
                second: 1,
                ..
            }
        ));
        // Back-to-back windows and opposite directions are fine.
        ContactPlan::new(
            Profile::Custom,
            vec![
                contact("a", "b", 0, 10, 5),
                contact("a", "b", 10, 20, 5),
                contact("b", "a", 5, 15, 5),
            ],
        )
        .unwrap();
    }

    #[test]
    fn profile_bounds_are_inclusive() {
        ContactPlan::new(
            Profile::NearEarth,
            vec![contact("a", "b", 0, 1, 10), contact("b", "a", 0, 1, 125)],
        )
        .unwrap();
        let err = ContactPlan::new(Profile::NearEarth, vec![contact("a", "b", 0, 1, 126)]).unwrap_err();
        assert!(matches!(err, PlanError::ProfileViolation { index: 0, .. }));
        ContactPlan::new(Profile::DeepSpace, vec![contact("a", "b", 0, 5000, 690_000)]).unwrap();
    }

    #[test]
    fn routing_prefers_exact_entries() {
        let mut r = RoutingTable::new();
        r.insert("a", None, Via::Node("hub".into()));
        r.insert("a", Some("b"), Via::Direct);
        assert_eq!(r.next_hop("a", "b").unwrap(), "b");
        assert_eq!(r.next_hop("a", "c").unwrap(), "hub");
        assert!(r.next_hop("b", "a").is_err());
    }
}
