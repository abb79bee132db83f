mod common;

use common::*;

#[test]
fn first_protected_byte_costs_three_one_way_delays() {
    for (profile, d) in [
        ("near_earth", 0.01),
        ("near_earth", 0.125),
        ("lunar", 7.0),
        ("deep_space", 690.0),
    ] {
        let dur = 10.0 * d + 10.0;
        let base = run(&pair_scenario(profile, d, dur, BASELINE, &one_send(1.0)));
        let cka = run(&pair_scenario(profile, d, dur, CKA, &one_send(1.0)));
        let b = base.metrics.flows[0].ttfpb_s.unwrap();
        let c = cka.metrics.flows[0].ttfpb_s.unwrap();
        assert!((b - 3.0 * d).abs() <= 1e-6, "{profile} d={d}: baseline {b}");
        assert!((c - d).abs() <= 1e-6, "{profile} d={d}: cka {c}");
        assert_eq!(base.metrics.totals.handshakes_completed, 1);
        assert_eq!(base.metrics.totals.handshake_round_trips, 1);
    }
}

#[test]
fn mesh_needs_a_handshake_per_pair() {
    for n in [2usize, 3, 5, 8] {
        let out = run(&star(n, 0.01, 10.0, "kind = \"baseline\"\nmesh = true", ""));
        let t = &out.metrics.totals;
        let pairs = (n * (n - 1) / 2) as u64;
        assert_eq!(t.handshakes_attempted, pairs, "n={n}");
        assert_eq!(t.handshakes_completed, pairs, "n={n}");
    }
}

#[test]
fn session_is_reused_for_later_sends() {
    let traffic = "[[traffic]]\nat_s = 1.0\nfrom = \"a\"\nto = \"b\"\ncount = 5\ninterval_s = 1.0\n";
    let out = run(&pair_scenario("near_earth", 0.1, 10.0, BASELINE, traffic));
    let t = &out.metrics.totals;
    assert_eq!(t.handshakes_attempted, 1);
    assert_eq!(t.protected_delivered, 5);
}

fn windows(policy: &str) -> String {
    let traffic = "[[traffic]]\nat_s = 0.0\nfrom = \"a\"\nto = \"b\"\ncount = 10\ninterval_s = 1.0\nlifetime_s = 0.5\n";
    pair_scenario("near_earth", 0.125, 10.0, policy, traffic).replace(
        "symmetric",
        "end_s = 0.2\nrepeat = { count = 10, period_s = 1.0 }\nsymmetric",
    )
}

#[test]
fn short_windows_starve_the_handshake() {
    let out = run(&windows(BASELINE));
    let t = &out.metrics.totals;
    assert_eq!(t.handshakes_completed, 0);
    assert!(t.handshakes_attempted >= 10, "{t:?}");
    assert!(t.wasted_bytes_incomplete_handshakes > 0);
    assert_eq!(t.protected_delivered, 0);
}

#[test]
fn short_windows_still_carry_cka_traffic() {
    let out = run(&windows(CKA));
    let rows = rows(&out);
    let decrypted = events(&rows, "decrypted");
    for w in 0..10u64 {
        let (lo, hi) = (w * 1_000_000, w * 1_000_000 + 200_000);
        assert!(
            decrypted.iter().any(|r| (lo..=hi).contains(&t_us(r))),
            "nothing delivered in window {w}"
        );
    }
}
