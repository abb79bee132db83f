mod common;

use ckalab_core::SimTime;
use ckalab_sim::plan::{Contact, ContactPlan, PlanError, Profile, Rate};
use ckalab_sim::{ConfigError, Scenario, ScenarioConfig};
use common::*;

fn contact(from: &str, to: &str, start_s: f64, end_s: f64, delay_s: f64) -> Contact {
    Contact {
        from: from.into(),
        to: to.into(),
        start: SimTime::from_secs_f64(start_s),
        end: SimTime::from_secs_f64(end_s),
        one_way_delay: SimTime::from_secs_f64(delay_s),
        rate: Rate::Unlimited,
        loss_prob: 0.0,
    }
}

#[test]
fn geo_link_fits_near_earth() {
    let plan = ContactPlan::new(Profile::NearEarth, vec![contact("g", "s", 0.0, 100.0, 0.125)]);
    assert!(plan.is_ok());
}

#[test]
fn five_second_delay_is_not_near_earth() {
    let err = ContactPlan::new(Profile::NearEarth, vec![contact("g", "s", 0.0, 100.0, 5.0)]).unwrap_err();
    assert!(matches!(err, PlanError::ProfileViolation { index: 0, .. }), "{err}");
}

#[test]
fn lunar_plan_with_gaps_is_valid() {
    let contacts = vec![
        contact("e", "m", 0.0, 3600.0, 7.0),
        contact("e", "m", 7200.0, 10800.0, 7.0),
        contact("m", "e", 0.0, 3600.0, 7.0),
    ];
    let plan = ContactPlan::new(Profile::Lunar, contacts).unwrap();
    assert!(plan.open_at("e", "m", SimTime::from_secs_f64(5000.0)).is_none());
    assert_eq!(
        plan.next_opening("e", "m", SimTime::from_secs_f64(5000.0)),
        Some(SimTime::from_secs_f64(7200.0))
    );
}

#[test]
fn overlapping_windows_on_one_link_are_rejected() {
    let contacts = vec![contact("a", "b", 0.0, 10.0, 0.1), contact("a", "b", 5.0, 15.0, 0.1)];
    let err = ContactPlan::new(Profile::NearEarth, contacts).unwrap_err();
    assert!(matches!(err, PlanError::Overlap { .. }), "{err}");
}

#[test]
fn touching_windows_are_allowed() {
    let contacts = vec![contact("a", "b", 0.0, 10.0, 0.1), contact("a", "b", 10.0, 15.0, 0.1)];
    assert!(ContactPlan::new(Profile::NearEarth, contacts).is_ok());
}

fn expect_field(toml: &str, field: &str) {
    let Err(err) = Scenario::from_toml(toml) else {
        panic!("config must be rejected");
    };
    let msg = err.to_string();
    assert!(msg.contains(field), "message {msg:?} does not name {field:?}");
    assert_eq!(err.field(), Some(field), "{err:?}");
}

#[test]
fn profile_violation_names_the_delay_field() {
    let toml = pair_scenario("near_earth", 5.0, 100.0, CKA, "");
    expect_field(&toml, "contacts[0].delay_s");
}

#[test]
fn negative_delay_names_the_contact() {
    let toml = pair_scenario("near_earth", -1.0, 100.0, CKA, "");
    let err = Scenario::from_toml(&toml).err().unwrap();
    assert!(err.to_string().contains("contacts[0]"), "{err}");
}

#[test]
fn unknown_traffic_endpoint_is_named() {
    let traffic = "[[traffic]]\nat_s = 1.0\nfrom = \"a\"\nto = \"zz\"\n";
    let toml = pair_scenario("near_earth", 0.1, 10.0, CKA, traffic);
    let err = Scenario::from_toml(&toml).err().unwrap();
    assert!(err.to_string().contains("traffic[0]"), "{err}");
}

#[test]
fn unknown_key_is_a_parse_error_naming_it() {
    let toml = pair_scenario("near_earth", 0.1, 10.0, CKA, "bogus_key = 3\n");
    let err = Scenario::from_toml(&toml).err().unwrap();
    assert!(matches!(err, ConfigError::Parse(_)));
    assert!(err.to_string().contains("bogus_key"), "{err}");
}

#[test]
fn wrong_schema_version_is_rejected() {
    let toml = pair_scenario("near_earth", 0.1, 10.0, CKA, "").replace("\"v1\"", "\"v9\"");
    expect_field(&toml, "schema_version");
}

#[test]
fn bad_psk_hex_is_named() {
    let toml = pair_scenario("near_earth", 0.1, 10.0, "kind = \"psk\"\nkey_hex = \"xyz\"", "");
    let err = Scenario::from_toml(&toml).err().unwrap();
    assert!(err.to_string().contains("key_hex"), "{err}");
}

#[test]
fn config_round_trips_through_toml() {
    let toml = pair_scenario("near_earth", 0.125, 10.0, CKA, &one_send(1.0));
    let cfg = ScenarioConfig::from_toml(&toml).unwrap();
    let again = ScenarioConfig::from_toml(&cfg.to_toml()).unwrap();
    assert_eq!(cfg, again);
}

#[test]
fn re_encrypt_needs_group_membership() {
    let toml = pair_scenario("near_earth", 0.1, 10.0, PSK, "");
    let toml = toml.replacen(
        "roles = [\"cka_member\", \"baseline_endpoint\"]",
        "roles = [\"relay\"]\nre_encrypt = true",
        1,
    );
    expect_field(&toml, "nodes[0].re_encrypt");
}
