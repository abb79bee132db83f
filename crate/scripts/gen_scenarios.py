#!/usr/bin/env python3
"""Regenerates scenarios/*.toml. Run from the repository root."""

from pathlib import Path

OUT = Path(__file__).resolve().parent.parent / "scenarios"


def header(name, description, profile, seed, duration_s):
    return (
        f'schema_version = "v1"\n'
        f'name = "{name}"\n'
        f'description = "{description}"\n'
        f'profile = "{profile}"\n'
        f"seed = {seed}\n"
        f"duration_s = {duration_s}\n\n"
    )


def node(i, roles, extra=""):
    roles = ", ".join(f'"{r}"' for r in roles)
    return f'[[nodes]]\nid = "{i}"\nroles = [{roles}]\n{extra}\n'


def contact(a, b, delay_s, extra=""):
    return (
        f'[[contacts]]\nfrom = "{a}"\nto = "{b}"\ndelay_s = {delay_s}\n'
        f'rate = "unlimited"\nsymmetric = true\n{extra}\n'
    )


def route(n, dest, via):
    return f'[[routes]]\nnode = "{n}"\ndest = "{dest}"\nvia = "{via}"\n\n'


def policy(kind, body=""):
    return f'[key_policy]\nkind = "{kind}"\n{body}\n'


def op(at_s, by, kind, target=None, measure=False):
    s = f'[[key_policy.ops]]\nat_s = {at_s}\nby = "{by}"\nop = "{kind}"\n'
    if target:
        s += f'target = "{target}"\n'
    if measure:
        s += "measure = true\n"
    return s + "\n"


def traffic(at_s, src, dst, count=1, interval_s=None, lifetime_s=None):
    s = f'[[traffic]]\nat_s = {at_s}\nfrom = "{src}"\nto = "{dst}"\n'
    if count != 1:
        s += f"count = {count}\ninterval_s = {interval_s}\n"
    if lifetime_s is not None:
        s += f"lifetime_s = {lifetime_s}\n"
    return s + "\n"


def compromise(at_s, n):
    return f'[[compromise]]\nat_s = {at_s}\nnode = "{n}"\n\n'


ENDPOINT = ["cka_member", "baseline_endpoint"]


def pair(name, description, profile, delay_s, duration_s, pol, tail="", contact_extra="", seed=1):
    return (
        header(name, description, profile, seed, duration_s)
        + node("earth", ENDPOINT)
        + node("remote", ENDPOINT)
        + contact("earth", "remote", delay_s, contact_extra)
        + route("earth", "*", "direct")
        + route("remote", "*", "direct")
        + pol
        + tail
    )


def write(name, text):
    (OUT / f"{name}.toml").write_text(text)


def latency():
    cases = [
        ("leo", "near_earth", 0.01, "low earth orbit pass"),
        ("geo", "near_earth", 0.125, "geostationary relay"),
        ("lunar", "lunar", 7.0, "lunar surface link"),
        ("mars_min", "deep_space", 28.0, "Mars at closest approach"),
        ("mars_max", "deep_space", 690.0, "Mars at conjunction distance"),
    ]
    for stem, profile, d, what in cases:
        duration = round(1.0 + 10 * d + 5.0, 6)
        for kind, how in [("baseline", "full handshake before the first send"), ("cka", "established group")]:
            write(
                f"{stem}_{kind}",
                pair(f"{stem}_{kind}", f"{what}, one-way {d} s, {how}", profile, d, duration,
                     policy(kind), traffic(1.0, "earth", "remote")),
            )


def lunar_occlusion():
    windows = "start_s = 0.0\nend_s = 1800.0\nrepeat = { count = 4, period_s = 3600.0 }\n"
    for kind, body in [("baseline", ""), ("cka", 'update_interval_s = 3600.0\nupdate_by = "earth"\n')]:
        write(
            f"lunar_occlusion_{kind}",
            pair(f"lunar_occlusion_{kind}", "lander hidden behind the limb half of every hour",
                 "lunar", 2.5, 14400.0, policy(kind, body),
                 traffic(10.0, "earth", "remote", count=48, interval_s=300.0, lifetime_s=7200.0),
                 contact_extra=windows),
        )


def star(name, description, n, duration_s, pol):
    s = header(name, description, "near_earth", 3, duration_s)
    for i in range(n):
        s += node(f"m{i}", ENDPOINT + (["relay"] if i == 0 else []))
    for i in range(1, n):
        s += contact("m0", f"m{i}", 0.01)
    s += route("m0", "*", "direct")
    for i in range(1, n):
        s += route(f"m{i}", "*", "m0")
    return s + pol


def group_scaling():
    for n in [2, 4, 8, 16, 32, 64]:
        ops = "".join(op(float(i), "m0", "add", f"m{i}") for i in range(1, n))
        ops += "".join(op(float(n + i), f"m{i}", "update") for i in range(1, n))
        ops += op(float(2 * n + 1), "m0", "update", measure=True)
        write(
            f"group_scaling_n{n}_cka",
            star(f"group_scaling_n{n}_cka", f"{n} members joined one by one, then a full-tree empty commit",
                 n, float(2 * n + 5), policy("cka", 'bootstrap = "creator"\n\n' + ops)),
        )
        write(
            f"group_scaling_n{n}_baseline",
            star(f"group_scaling_n{n}_baseline", f"{n} members keyed pairwise", n, 5.0,
                 policy("baseline", "mesh = true\n")),
        )


def compromises():
    fs_tail = traffic(1.0, "earth", "remote", count=100, interval_s=0.05) + compromise(12.0, "remote")
    pcs_tail = compromise(1.0, "earth") + traffic(5.0, "earth", "remote", count=100, interval_s=0.05)
    for kind in ["cka", "psk"]:
        fs_body = op(10.0, "earth", "update") if kind == "cka" else ""
        pcs_body = op(2.0, "earth", "update") if kind == "cka" else ""
        write(
            f"compromise_fs_{kind}",
            pair(f"compromise_fs_{kind}", "receiver seized after an epoch change; earlier traffic is targeted",
                 "near_earth", 0.1, 20.0, policy(kind, fs_body), fs_tail),
        )
        write(
            f"compromise_pcs_{kind}",
            pair(f"compromise_pcs_{kind}", "sender seized, then rekeys; later traffic is targeted",
                 "near_earth", 0.1, 20.0, policy(kind, pcs_body), pcs_tail),
        )


def intermittent():
    windows = "end_s = 0.2\nrepeat = { count = 10, period_s = 1.0 }\n"
    for kind in ["baseline", "cka"]:
        write(
            f"intermittent_dos_{kind}",
            pair(f"intermittent_dos_{kind}", "200 ms contact windows each second over a 250 ms round trip",
                 "near_earth", 0.125, 10.0, policy(kind),
                 traffic(0.0, "earth", "remote", count=10, interval_s=1.0, lifetime_s=0.5),
                 contact_extra=windows),
        )


def main():
    OUT.mkdir(exist_ok=True)
    for old in OUT.glob("*.toml"):
        old.unlink()
    latency()
    lunar_occlusion()
    group_scaling()
    compromises()
    intermittent()


if __name__ == "__main__":
    main()
