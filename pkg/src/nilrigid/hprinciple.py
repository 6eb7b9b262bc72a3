"""Quantitative drift decomposition for a one-parameter unipotent flow.

For U^t = exp(tN) with N a nilpotent single-step shift in a Jordan basis,
a small vector v drifts as U^t v = w(t) + w_perp(t), where w(t) collects the
flow-fixed (degree-0) Jordan components.  The module computes the natural
time horizon T, the split, and measures the (1-eps)-good window on [0, T]
where |w(t)| clears a threshold kappa = C * eps^(d(d-1)/2).

The constants C (window threshold) and C_d (the |w_perp| <= C_d |v|^{1/d}
envelope) are not explicit in the underlying estimates; they are calibrated
once by brute force and frozen in data/hprinciple_constants.json.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from fractions import Fraction
from importlib import resources
from math import factorial

import numpy as np
import sympy as sp

INFINITE = float("inf")
DEFAULT_SMALLNESS_BOUND = 1e-3


class FlowError(ValueError):
    pass


class UnipotentFlow:
    """One-parameter unipotent flow exp(tN) in its Jordan basis.

    N maps e_{l,i} -> e_{l,i-1} within each block and kills e_{l,0}; the
    coordinates of a vector are grouped block by block, lowest degree first.
    """

    def __init__(self, block_dims):
        block_dims = [int(b) for b in block_dims]
        if not block_dims or any(b < 1 for b in block_dims):
            raise FlowError("block dimensions must be positive")
        self.block_dims = tuple(block_dims)
        self.dim = sum(block_dims)
        self.offsets = []
        off = 0
        for b in block_dims:
            self.offsets.append(off)
            off += b

    def generator_log(self):
        N = sp.zeros(self.dim, self.dim)
        for off, b in zip(self.offsets, self.block_dims):
            for i in range(1, b):
                N[off + i - 1, off + i] = 1
        return N

    def blocks_of(self, v):
        if len(v) != self.dim:
            raise FlowError("vector length must match the flow dimension")
        return [
            list(v[off : off + b]) for off, b in zip(self.offsets, self.block_dims)
        ]

    def is_fixed(self, v):
        """Flow-fixed iff only degree-0 components are present."""
        return all(
            all(c == 0 for c in blk[1:]) for blk in self.blocks_of(v)
        )

    def apply(self, v, t):
        """U^t v; exact for rational inputs.  f_{l,j}(t) = sum_{i>=j}
        v_{l,i} t^{i-j}/(i-j)!."""
        tt = Fraction(t) if isinstance(t, int) else t
        out = []
        for blk in self.blocks_of(v):
            b = len(blk)
            for j in range(b):
                acc = 0
                for i in range(j, b):
                    acc = acc + blk[i] * tt ** (i - j) / factorial(i - j)
                out.append(acc)
        return out

    def __repr__(self):
        return f"UnipotentFlow(blocks={list(self.block_dims)})"


@dataclass
class DriftSplit:
    t: object
    w: list
    w_perp: list
    T: float


def drift_time(flow: UnipotentFlow, v):
    """First t > 0 at which some degree-j term c_j v_{l,j} t^j (j >= 1,
    c_j = 1/j!) reaches absolute value 1; INFINITE iff v is flow-fixed."""
    if all(c == 0 for c in v):
        raise FlowError("v must be nonzero")
    best = INFINITE
    for blk in flow.blocks_of(v):
        for j in range(1, len(blk)):
            if blk[j] != 0:
                t = (factorial(j) / abs(float(blk[j]))) ** (1.0 / j)
                best = min(best, t)
    return best


def drift_decomposition(flow: UnipotentFlow, v, t) -> DriftSplit:
    if all(c == 0 for c in v):
        raise FlowError("v must be nonzero")
    img = flow.apply(v, t)
    w = []
    w_perp = []
    pos = 0
    for b in flow.block_dims:
        for j in range(b):
            if j == 0:
                w.append(img[pos])
                w_perp.append(0 * img[pos])
            else:
                w.append(0 * img[pos])
                w_perp.append(img[pos])
            pos += 1
    return DriftSplit(t=t, w=w, w_perp=w_perp, T=drift_time(flow, v))


# ---------------------------------------------------------------------------
# vectorized evaluation (numpy) for measurement and calibration
# ---------------------------------------------------------------------------

def _component_polys(flow, v):
    """Per block: coefficient arrays of f_{l,0} and of the f_{l,j>=1}."""
    fixed = []
    rest = []
    for blk in flow.blocks_of(v):
        b = len(blk)
        fixed.append(np.array([float(blk[i]) / factorial(i) for i in range(b)]))
        blk_rest = []
        for j in range(1, b):
            blk_rest.append(
                np.array([float(blk[i]) / factorial(i - j) for i in range(j, b)])
            )
        rest.append(blk_rest)
    return fixed, rest


def _eval_poly(coeffs, ts):
    """coeffs ascending; ts array."""
    out = np.zeros_like(ts)
    p = np.ones_like(ts)
    for c in coeffs:
        out += c * p
        p *= ts
    return out


def w_norm_samples(flow, v, ts):
    acc = np.zeros_like(ts)
    fixed, _ = _component_polys(flow, v)
    for coeffs in fixed:
        acc += _eval_poly(coeffs, ts) ** 2
    return np.sqrt(acc)


def w_perp_norm_samples(flow, v, ts):
    acc = np.zeros_like(ts)
    _, rest = _component_polys(flow, v)
    for blk_rest in rest:
        for coeffs in blk_rest:
            acc += _eval_poly(coeffs, ts) ** 2
    return np.sqrt(acc)


# ---------------------------------------------------------------------------
# frozen calibrated constants
# ---------------------------------------------------------------------------

def load_constants():
    with resources.files("nilrigid").joinpath(
        "data/hprinciple_constants.json"
    ).open() as fh:
        return json.load(fh)


def calibrate(dims=range(2, 7), instances=400, t_samples=512, seed=20240817,
              scale=DEFAULT_SMALLNESS_BOUND, eps_list=(0.5, 0.1, 0.01),
              safety_envelope=2.0, safety_window=0.5):
    """Brute-force oracle for the frozen constants.

    C_d: observed max over random v of max_t |w_perp(t)| / |v|^{1/d},
    times a safety factor.  C: observed min over random (v, eps) of the
    eps-quantile of |w(t)| divided by eps^{d(d-1)/2}, times a safety factor
    below one so the frozen threshold stays clearable.
    """
    rng = np.random.default_rng(seed)
    out = {"C_d": {}, "C": {}, "meta": {
        "instances": instances, "t_samples": t_samples, "seed": seed,
        "scale": scale, "eps_list": list(eps_list),
        "safety_envelope": safety_envelope, "safety_window": safety_window,
    }}
    for d in dims:
        flow = UnipotentFlow([d])
        worst_env = 0.0
        worst_c = INFINITE
        expo = d * (d - 1) / 2
        for _ in range(instances):
            v = _random_small_vector(rng, d, scale)
            T = drift_time(flow, v)
            ts = np.linspace(0.0, T, t_samples)
            env = w_perp_norm_samples(flow, v, ts).max()
            nv = float(np.linalg.norm(v))
            worst_env = max(worst_env, env / nv ** (1.0 / d))
            wn = w_norm_samples(flow, v, ts)
            for eps in eps_list:
                q = float(np.quantile(wn, eps))
                worst_c = min(worst_c, q / eps**expo)
        out["C_d"][str(d)] = worst_env * safety_envelope
        out["C"][str(d)] = worst_c * safety_window
    return out


def _random_small_vector(rng, d, scale):
    """Random direction with at least one positive-degree component, scaled
    to a norm uniform in [scale/10, scale]."""
    while True:
        v = rng.standard_normal(d)
        if np.any(np.abs(v[1:]) > 1e-3):
            break
    v /= np.linalg.norm(v)
    return v * rng.uniform(scale / 10, scale)


# ---------------------------------------------------------------------------
# good window
# ---------------------------------------------------------------------------

def good_window(flow: UnipotentFlow, v, eps, samples=10_000,
                smallness_bound=DEFAULT_SMALLNESS_BOUND, kappa=None):
    """(T, kappa_used, measured_fraction) for the window {t in [0,T] :
    |w(t)| > kappa} with kappa = C eps^{d(d-1)/2} from the frozen constants.

    Uses exact polynomial root counting when every block has size <= 3,
    uniform sampling otherwise.
    """
    if not 0 < eps < 1:
        raise FlowError("eps must lie in (0, 1)")
    if flow.is_fixed(v):
        raise FlowError("v is flow-fixed: no drift to window")
    nv = math.sqrt(sum(float(c) ** 2 for c in v))
    if nv > smallness_bound * (1 + 1e-9):
        raise FlowError(
            f"|v| = {nv:g} exceeds the smallness bound {smallness_bound:g}"
        )
    d = flow.dim
    if kappa is None:
        consts = load_constants()
        C = consts["C"][str(d)]
        kappa = C * eps ** (d * (d - 1) / 2)
    T = drift_time(flow, v)
    if all(b <= 3 for b in flow.block_dims):
        frac = _exact_good_fraction(flow, v, T, kappa)
    else:
        ts = np.linspace(0.0, T, samples)
        frac = float(np.mean(w_norm_samples(flow, v, ts) > kappa))
    return T, kappa, frac


def _exact_good_fraction(flow, v, T, kappa):
    """Lebesgue fraction of {|w(t)|^2 > kappa^2} on [0, T] via real roots of
    the polynomial |w(t)|^2 - kappa^2 (rational coefficients)."""
    # floats are dyadic, so Fraction(float(...)) is exact and keeps all
    # denominators powers of two
    t = sp.symbols("t")
    expr = -sp.Rational(Fraction(float(kappa))) ** 2
    for blk in flow.blocks_of(v):
        f = sum(
            sp.Rational(Fraction(float(c))) * t**i / factorial(i)
            for i, c in enumerate(blk)
        )
        expr = expr + f**2
    poly = sp.Poly(sp.expand(expr), t)
    Tq = sp.Rational(Fraction(float(T)))
    roots = [r for r in sp.real_roots(poly) if 0 < r < Tq]
    pts = [sp.Rational(0)] + sorted(roots) + [Tq]
    good = sp.Rational(0)
    for a, b in zip(pts, pts[1:]):
        midv = poly.eval((a + b) / 2)
        if midv > 0:
            good += b - a
    return float(good / Tq)


# ---------------------------------------------------------------------------
# sweeps (consumed by the CLI)
# ---------------------------------------------------------------------------

def scale_sweep(flow, direction, scales, t_samples=2048):
    """Rows (|v|, T, max |w_perp| on [0,T], slope target 1/d context)."""
    direction = np.asarray([float(c) for c in direction])
    direction = direction / np.linalg.norm(direction)
    rows = []
    for s in scales:
        v = direction * s
        if flow.is_fixed(v):
            rows.append((s, INFINITE, 0.0))
            continue
        T = drift_time(flow, v)
        ts = np.linspace(0.0, T, t_samples)
        rows.append((s, T, float(w_perp_norm_samples(flow, v, ts).max())))
    return rows


def degree_sweep_instance(degree):
    """Canonical instance realizing the |v|^{1/degree} drift rate exactly:
    a single Jordan block of size degree+1 with the direction split between
    the flow-fixed bottom vector and the top-degree vector.  Lower-degree
    components would pollute the measured rate at moderate scales."""
    if degree < 1:
        raise FlowError("degree must be at least 1")
    flow = UnipotentFlow([degree + 1])
    direction = np.zeros(degree + 1)
    direction[0] = 1.0
    direction[-1] = 1.0
    return flow, direction


def loglog_slope(pairs):
    """Least-squares slope of log(y) against log(x)."""
    xs = np.log([p[0] for p in pairs])
    ys = np.log([p[1] for p in pairs])
    A = np.vstack([xs, np.ones_like(xs)]).T
    slope, _ = np.linalg.lstsq(A, ys, rcond=None)[0]
    return float(slope)
