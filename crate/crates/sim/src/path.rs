//! End-to-end message timing for the session baseline.

use ckalab_core::baseline::{PathModel, Transmission};
use ckalab_core::SimTime;
use rand::Rng;
use rand_chacha::ChaCha20Rng;

use crate::plan::{ContactPlan, RoutingTable};

/// Walks the static routes hop by hop. Every hop must be able to carry the
/// message the moment it reaches that hop: a handshake packet is not held
/// in a store waiting for the next window. Links are not reserved, so
/// handshake traffic never queues behind bundles.
pub struct SimPath<'a> {
    pub plan: &'a ContactPlan,
    pub routes: &'a RoutingTable,
    pub rng: &'a mut ChaCha20Rng,
    pub max_hops: usize,
}

impl PathModel for SimPath<'_> {
    fn transmit(&mut self, from: &str, to: &str, depart: SimTime, bytes: u64) -> Transmission {
        let mut at = depart;
        let mut cur = from.to_owned();
        for _ in 0..self.max_hops {
            let Ok(hop) = self.routes.next_hop(&cur, to) else {
                return Transmission::Unavailable;
            };
            let Some(c) = self
                .plan
                .link(&cur, hop)
                .iter()
                .map(|&i| &self.plan.contacts[i])
                .find(|c| c.start <= at && c.launch(at, bytes).is_some_and(|(d, _)| d == at))
            else {
                return Transmission::Unavailable;
            };
            if c.loss_prob > 0.0 && self.rng.gen_bool(c.loss_prob) {
                return Transmission::Lost;
            }
            at = c.launch(at, bytes).expect("checked above").1;
            cur = hop.to_owned();
            if cur == to {
                return Transmission::Delivered(at);
            }
        }
        Transmission::Unavailable
    }

    fn rtt_estimate(&self, from: &str, to: &str, at: SimTime) -> SimTime {
        let mut one_way = SimTime::ZERO;
        let mut cur = from.to_owned();
        for _ in 0..self.max_hops {
            let Ok(hop) = self.routes.next_hop(&cur, to) else {
                break;
            };
            let link = self.plan.link(&cur, hop);
            let c = self
                .plan
                .open_at(&cur, hop, at)
                .or_else(|| link.first().map(|&i| &self.plan.contacts[i]));
            if let Some(c) = c {
                one_way += c.one_way_delay;
            }
            cur = hop.to_owned();
            if cur == to {
                break;
            }
        }
        one_way + one_way
    }
}
