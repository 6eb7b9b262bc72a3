"""Command-line orchestration for the analyses.

Exit codes: 0 pass, 1 input error, 2 certified failure or undecided verdict,
3 resource exhaustion (search exhausted, missing fixtures).
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import sympy as sp

from . import actions, heisenberg, hprinciple, report

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_FAIL = 2
EXIT_EXHAUSTED = 3


@dataclass
class RunConfig:
    command: str
    seed: int = 0
    precision_bits: int = 128
    n_box: int = 2
    samples: int = 500
    out_dir: str = "nilrigid-out"
    fixtures: str | None = None
    threads: int = 1
    extra: dict = field(default_factory=dict)


def _threads_from_env():
    raw = os.environ.get("NILRIGID_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _add_common(parser):
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--precision-bits", type=int, default=128)
    parser.add_argument("--n-box", type=int, default=2,
                        help="radius of the iterate box")
    parser.add_argument("--samples", type=int, default=500)
    parser.add_argument("--out-dir", default="nilrigid-out")
    parser.add_argument("--fixtures", default=None,
                        help="path to a pair-fixtures JSON file")


def build_parser():
    p = argparse.ArgumentParser(
        prog="nilrigid",
        description="Lyapunov / rigidity analysis for Z^r nilmanifold "
                    "automorphism actions",
    )
    sub = p.add_subparsers(dest="command", required=True)

    pa = sub.add_parser("analyze", help="full report for an action file")
    pa.add_argument("action_file")
    _add_common(pa)

    ph = sub.add_parser("heisenberg",
                        help="the 13-dimensional Heisenberg example")
    hsub = ph.add_subparsers(dest="subcommand", required=True)
    hs = hsub.add_parser("search", help="search for a commuting pair")
    hs.add_argument("--poly-height-bound", type=int, default=6)
    hs.add_argument("--centralizer-bound", type=int, default=2)
    _add_common(hs)
    hv = hsub.add_parser("verify", help="re-verify a frozen pair")
    _add_common(hv)
    hd = hsub.add_parser("demo", help="full evidence bundle")
    _add_common(hd)

    pp = sub.add_parser("hprinciple", help="drift-decomposition sweeps")
    pp.add_argument("--dim", type=int, default=None,
                    help="drift degree d: canonical single-Jordan-block "
                         "instance of size d+1")
    pp.add_argument("--blocks", default=None,
                    help="comma-separated Jordan block sizes, e.g. 3,2")
    pp.add_argument("--direction", default=None,
                    help="comma-separated direction components")
    pp.add_argument("--eps", default="0.5,0.1,0.01")
    pp.add_argument("--scales", default="1e-3,1e-4,1e-5")
    _add_common(pp)
    return p


def _config(args):
    cfg = RunConfig(
        command=args.command,
        seed=args.seed,
        precision_bits=args.precision_bits,
        n_box=args.n_box,
        samples=args.samples,
        out_dir=args.out_dir,
        fixtures=args.fixtures,
        threads=_threads_from_env(),
    )
    sub = getattr(args, "subcommand", None)
    if sub:
        cfg.command = f"{args.command}-{sub}"
    report.ensure_out_dir(cfg.out_dir)
    return cfg


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "analyze":
            return cmd_analyze(args)
        if args.command == "heisenberg":
            return {
                "search": cmd_heisenberg_search,
                "verify": cmd_heisenberg_verify,
                "demo": cmd_heisenberg_demo,
            }[args.subcommand](args)
        if args.command == "hprinciple":
            return cmd_hprinciple(args)
    except json.JSONDecodeError as err:
        print(f"input error: malformed JSON at line {err.lineno} "
              f"column {err.colno}: {err.msg}", file=sys.stderr)
        return EXIT_INPUT
    except (FileNotFoundError, actions.ActionError,
            heisenberg.VerificationError, ValueError) as err:
        print(f"input error: {err}", file=sys.stderr)
        return EXIT_INPUT
    return EXIT_INPUT


# ---------------------------------------------------------------------------
# analyze
# ---------------------------------------------------------------------------

def _interval_pair(iv):
    m, w = iv.mid(), iv.width()
    return (m - w / 2, m + w / 2)


def cmd_analyze(args):
    cfg = _config(args)
    a = actions.load_action(args.action_file)
    rep = actions.validate_action(a)
    if not rep.passed:
        print("input error: invalid action:", file=sys.stderr)
        for f in rep.failures:
            print(f"  {f}", file=sys.stderr)
        return EXIT_INPUT

    s = actions.lyapunov_spectrum(a, cfg.precision_bits, cfg.seed)
    entries = []
    for i, e in enumerate(s.entries):
        lohis = [_interval_pair(iv) for iv in e.chi]
        entries.append({
            "entry": i,
            "block": e.block_index,
            "multiplicity": e.multiplicity,
            "coarse_class": e.coarse_class,
            "chi": [[lo, hi] for lo, hi in lohis],
        })
    coarse_dims = []
    for cls in s.coarse_classes:
        coarse_dims.append(sum(s.entries[i].multiplicity for i in cls))

    layers, sigma = actions.equivariant_tower(a, cfg.seed)
    tower = [{"layer": i, "dim": L.layer_dim,
              "cumulative_dim": L.subgroup.dim}
             for i, L in enumerate(layers)]

    obs = actions.obstruction_report(a, cfg.n_box, cfg.precision_bits,
                                     cfg.seed)

    payload = {
        "action": {"dim": a.algebra.dim, "rank": a.rank,
                   "nilpotency_class": a.algebra.nilpotency_class},
        "lyapunov_table": entries,
        "coarse_class_dims": coarse_dims,
        "tower_layers": tower,
        "sigma_index": int(abs(sp.Matrix(sigma).det())),
        "obstruction": obs,
    }
    report.write_json(os.path.join(cfg.out_dir, "analyze.json"), cfg, payload)
    rows = []
    for n, v in sorted(obs.entropy_table.items()):
        rows.append(list(n) + (["", ""] if v is None else [v[0], v[1]]))
    ncols = [f"n{j+1}" for j in range(a.rank)]
    report.write_csv(os.path.join(cfg.out_dir, "entropy.csv"), cfg,
                     ncols + ["entropy_lo", "entropy_hi"], rows)
    lrows = [[e["entry"], e["block"], e["multiplicity"], e["coarse_class"]]
             + [c for pair in e["chi"] for c in pair] for e in entries]
    ccols = [f"chi{j+1}_{side}" for j in range(a.rank) for side in ("lo", "hi")]
    report.write_csv(os.path.join(cfg.out_dir, "lyapunov.csv"), cfg,
                     ["entry", "block", "multiplicity", "coarse_class"] + ccols,
                     lrows)
    report.figure_entropy(os.path.join(cfg.out_dir, "entropy.png"),
                          obs.entropy_table, a.rank)

    print(f"action: dim {a.algebra.dim}, rank {a.rank}, "
          f"class {a.algebra.nilpotency_class}")
    print(f"Lyapunov entries: {len(entries)}; coarse classes "
          f"{coarse_dims} (sum {sum(coarse_dims)})")
    print(f"tower layers: {[t['dim'] for t in tower]}")
    for v in obs.factors:
        print(f"  factor {v.description} (dim {v.dim}): "
              f"virtually cyclic = {v.virtually_cyclic}")
    if obs.overall == "no-virtually-cyclic-factor":
        print("no virtually cyclic algebraic factor: CERTIFIED")
    elif obs.overall == "virtually-cyclic-factor-found":
        print("virtually cyclic algebraic factor: FOUND")
    else:
        print("virtually cyclic factor check: UNDECIDED")
        return EXIT_FAIL
    return EXIT_OK


# ---------------------------------------------------------------------------
# heisenberg
# ---------------------------------------------------------------------------

def _load_pair(cfg):
    if cfg.fixtures is None:
        return heisenberg.load_katok_fixture()
    if not os.path.exists(cfg.fixtures):
        print(f"missing fixtures at {cfg.fixtures} (run search first)",
              file=sys.stderr)
        return None
    with open(cfg.fixtures) as fh:
        data = json.load(fh)
    return heisenberg.KatokPair(
        A=sp.Matrix(data["A"]), B=sp.Matrix(data["B"]),
        poly=data["poly"], g=data["g"], certificate=data["certificate"],
    )


def cmd_heisenberg_search(args):
    cfg = _config(args)
    try:
        pair = heisenberg.search_katok_pair(args.poly_height_bound,
                                            args.centralizer_bound)
    except heisenberg.SearchExhausted as err:
        print(f"search exhausted: {err}", file=sys.stderr)
        return EXIT_EXHAUSTED
    path = cfg.fixtures or os.path.join(cfg.out_dir, "katok_fixtures.json")
    heisenberg.save_katok_fixture(pair, path)
    report.write_json(os.path.join(cfg.out_dir, "search.json"), cfg, {
        "poly": pair.poly, "g": pair.g, "certificate": pair.certificate,
        "fixtures_path": path,
    })
    print(f"pair found: charpoly {pair.poly}, B = g(A) with g {pair.g}")
    print(f"fixtures written to {path}")
    return EXIT_OK


def cmd_heisenberg_verify(args):
    cfg = _config(args)
    pair = _load_pair(cfg)
    if pair is None:
        return EXIT_EXHAUSTED
    verified, failures = heisenberg.verify_katok_pair(pair.A, pair.B)
    payload = {
        "verified": verified is not None,
        "failures": failures,
        "certificate": verified.certificate if verified else None,
    }
    report.write_json(os.path.join(cfg.out_dir, "verify.json"), cfg, payload)
    if verified is None:
        print("pair verification FAILED:")
        for f in failures:
            print(f"  {f}")
        return EXIT_FAIL
    print("pair verification passed; certificate:")
    for k, v in verified.certificate.items():
        print(f"  {k}: {v}")
    return EXIT_OK


def cmd_heisenberg_demo(args):
    cfg = _config(args)
    pair = _load_pair(cfg)
    if pair is None:
        return EXIT_EXHAUSTED
    verified, failures = heisenberg.verify_katok_pair(pair.A, pair.B)
    if verified is None:
        print("fixtures failed re-verification:", file=sys.stderr)
        for f in failures:
            print(f"  {f}", file=sys.stderr)
        return EXIT_FAIL
    pair = verified

    action = heisenberg.build_action(pair)
    obs = actions.obstruction_report(action, cfg.n_box, cfg.precision_bits,
                                     cfg.seed)
    plane = heisenberg.invariant_plane(pair)
    radius = heisenberg.circle_radius(plane)
    samples = heisenberg.sample_mu(cfg.seed, cfg.samples, plane, radius)

    eq = heisenberg.check_equivariance(pair, samples, n_range=cfg.n_box,
                                       precision_bits=cfg.precision_bits)
    torus = heisenberg.torus_factor_report(pair, samples, plane, radius,
                                           n_range=cfg.n_box)

    states = [s.point for s in samples]
    on_section = heisenberg.section_membership(states, plane, radius)
    translated = [heisenberg.translate_center(s, 0.25) for s in states]
    after_translation = heisenberg.section_membership(translated, plane,
                                                      radius)

    with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
        scans = list(pool.map(heisenberg.h_orbit_compactness, states))
    not_detected = sum(1 for r in scans if r.status == "NOT_DETECTED")
    nd_fraction = not_detected / len(scans)

    # Monte-Carlo character sums scale like 1/sqrt(N); 4/sqrt(N) is the
    # 0.04 budget at the reference 10^4 samples.
    char_threshold = 4.0 / math.sqrt(len(samples))
    checks = {
        "no_virtually_cyclic_factor":
            obs.overall == "no-virtually-cyclic-factor",
        "equivariance_below_1e-9": eq.max_error < 1e-9,
        "y_character_sums_below_threshold":
            torus.max_y_character_sum < char_threshold,
        "center_translation_breaks_section":
            on_section == 1.0 and after_translation == 0.0,
        "compactness_not_detected_ge_0.99": nd_fraction >= 0.99,
    }
    payload = {
        "certificate": pair.certificate,
        "circle_radius": radius,
        "obstruction": obs,
        "equivariance": {"max_error": eq.max_error,
                         "precision_bits": eq.precision_bits,
                         "samples": eq.sample_count, "n_range": eq.n_range},
        "torus_factor": {
            "max_y_character_sum": torus.max_y_character_sum,
            "y_character_threshold": char_threshold,
            "max_circle_distance": torus.max_circle_distance,
            "birkhoff_rate": torus.birkhoff_rate,
            "notes": torus.notes,
        },
        "section_membership": on_section,
        "section_membership_after_center_translation": after_translation,
        "compactness_not_detected_fraction": nd_fraction,
        "checks": checks,
    }
    report.write_json(os.path.join(cfg.out_dir, "demo.json"), cfg, payload)

    report.write_csv(
        os.path.join(cfg.out_dir, "equivariance.csv"), cfg,
        ["n1", "n2", "max_error"],
        [[n1, n2, err] for (n1, n2), err in sorted(eq.per_n.items())],
    )
    report.write_csv(
        os.path.join(cfg.out_dir, "character_sums.csv"), cfg,
        [f"k{j+1}" for j in range(6)] + ["abs_mean"],
        [list(k) + [v] for k, v in sorted(torus.y_character_sums.items())],
    )
    report.write_csv(
        os.path.join(cfg.out_dir, "orbit_trace.csv"), cfg,
        ["n1", "n2"] + [f"c{j+1}" for j in range(13)],
        _orbit_trace_rows(pair, samples[0].point, cfg.n_box),
    )
    report.figure_equivariance(
        os.path.join(cfg.out_dir, "equivariance.png"), eq.per_n, eq.n_range)
    report.figure_character_sums(
        os.path.join(cfg.out_dir, "character_sums.png"),
        torus.y_character_sums, char_threshold)

    print(f"circle radius: {radius}")
    print(f"equivariance max error ({cfg.precision_bits} bits): "
          f"{eq.max_error:.3e}")
    print(f"max |y-character sum|: {torus.max_y_character_sum:.4f}")
    print(f"section membership: {on_section:.3f} -> "
          f"{after_translation:.3f} after center translation by 0.25")
    print(f"compactness NOT_DETECTED: {nd_fraction:.3f}")
    for name, ok in checks.items():
        print(f"  [{'pass' if ok else 'FAIL'}] {name}")
    return EXIT_OK if all(checks.values()) else EXIT_FAIL


def _orbit_trace_rows(pair, state, n_box):
    rows = []
    A, B = np.array(pair.A, dtype=float), np.array(pair.B, dtype=float)
    Ait = np.linalg.inv(A).T
    Bit = np.linalg.inv(B).T
    x0, y0 = np.asarray(state.x), np.asarray(state.y)
    for n1 in range(-n_box, n_box + 1):
        for n2 in range(-n_box, n_box + 1):
            M = np.linalg.matrix_power(A, n1) @ np.linalg.matrix_power(B, n2)
            N = (np.linalg.matrix_power(Ait, n1)
                 @ np.linalg.matrix_power(Bit, n2))
            x, y = M @ x0, N @ y0
            p = heisenberg.fundamental_representative(
                heisenberg.HeisState(tuple(x), tuple(y), float(state.z)))
            rows.append([n1, n2] + [float(c) for c in p.coords()])
    return rows


# ---------------------------------------------------------------------------
# hprinciple
# ---------------------------------------------------------------------------

def _floats(raw):
    return [float(v) for v in raw.split(",") if v.strip()]


def cmd_hprinciple(args):
    cfg = _config(args)
    eps_list = _floats(args.eps)
    scales = _floats(args.scales)
    if args.blocks is not None:
        flow = hprinciple.UnipotentFlow(
            [int(b) for b in args.blocks.split(",")])
        if args.direction is not None:
            direction = np.asarray(_floats(args.direction))
        else:
            rng = np.random.default_rng(cfg.seed)
            direction = hprinciple._random_small_vector(rng, flow.dim, 1.0)
        slope_target = 1.0 / flow.dim
    else:
        d = args.dim if args.dim is not None else 3
        flow, direction = hprinciple.degree_sweep_instance(d)
        slope_target = 1.0 / d

    direction = direction / np.linalg.norm(direction)
    rows = []
    fraction_failures = []
    for scale in sorted(scales, reverse=True):
        v = direction * scale
        if flow.is_fixed(v):
            for eps in eps_list:
                rows.append([scale, "INFINITE", 0.0, eps, "", ""])
            continue
        T = hprinciple.drift_time(flow, v)
        ts = np.linspace(0.0, T, 4096)
        env = float(hprinciple.w_perp_norm_samples(flow, v, ts).max())
        for eps in eps_list:
            _, kappa, frac = hprinciple.good_window(
                flow, v, eps, samples=cfg.samples * 20)
            ok = frac >= 1 - eps
            if not ok:
                fraction_failures.append((scale, eps, frac))
            rows.append([scale, T, env, eps, frac, "pass" if ok else "FAIL"])

    sweep = [(r[0], r[1], r[2]) for i, r in enumerate(rows)
             if r[1] != "INFINITE" and i % len(eps_list) == 0]
    slope = (hprinciple.loglog_slope([(s, m) for s, _, m in sweep])
             if len(sweep) >= 2 else None)
    slope_ok = (slope is not None
                and abs(slope - slope_target) / slope_target < 0.15)

    report.write_csv(
        os.path.join(cfg.out_dir, "hprinciple.csv"), cfg,
        ["scale", "T", "max_w_perp", "eps", "good_fraction", "verdict"],
        rows)
    report.write_json(os.path.join(cfg.out_dir, "hprinciple.json"), cfg, {
        "blocks": list(flow.block_dims),
        "direction": [float(c) for c in direction],
        "slope": slope, "slope_target": slope_target, "slope_ok": slope_ok,
        "fraction_failures": fraction_failures,
    })
    if sweep:
        report.figure_drift_sweep(
            os.path.join(cfg.out_dir, "hprinciple.png"),
            sweep, slope if slope is not None else 0.0, slope_target)

    print(f"flow blocks {list(flow.block_dims)}; "
          f"target slope {slope_target:.4f}")
    for r in rows:
        print("  scale {} T {} max|w_perp| {} eps {} fraction {} {}".format(
            *r))
    if slope is not None:
        print(f"log-log slope {slope:.4f} "
              f"({'within' if slope_ok else 'OUTSIDE'} 15% of target)")
    if fraction_failures or (slope is not None and not slope_ok):
        return EXIT_FAIL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
