"""The 13-dimensional Heisenberg nilmanifold and its Z^2 automorphism action.

Coordinates (x, y, z) in R^6 + R^6 + R with bracket
[(x,y,z),(x',y',z')] = (0, 0, 2 x.y' - 2 x'.y) and group law
(x,y,z)(x',y',z') = (x+x', y+y', z+z'+x.y'-x'.y).  A commuting pair of
SL(6,Z) matrices with one unit-circle eigenvalue pair each (a Katok pair)
induces the action n.(x,y,z) = (beta^n x, betahat^n y, z) with
betahat^n = (beta^-n)^T.  The invariant circle-times-torus measure is
carried by the section psi(x, y) = (x, y, x.y) over a small invariant
circle in the rotation plane.

The matrix pair is discovered by exact search and frozen with its
certificate in data/katok_fixtures.json.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from importlib import resources

import gmpy2
import numpy as np
import sympy as sp
from gmpy2 import mpfr

from . import actions, exact, lie
from .exact import (
    AlgebraicEnclosure,
    ComplexBox,
    IntPolynomial,
    RealInterval,
)

DIM = 6
Z_INDEX = 12
DEFAULT_RATIONAL_TOL = 1e-12

_X = sp.symbols("x")


class SearchExhausted(RuntimeError):
    """No matrix pair found within the given bounds; raise them."""


class VerificationError(ValueError):
    pass


# ---------------------------------------------------------------------------
# the nilpotent algebra and the closed-form group operations
# ---------------------------------------------------------------------------

def heis13_algebra() -> lie.NilAlgebra:
    """[e_i, e_{6+i}] = 2 e_13 for i = 1..6; two-step nilpotent."""
    bracket = {(i, DIM + i): {Z_INDEX: sp.Integer(2)} for i in range(DIM)}
    return lie.NilAlgebra(13, bracket)


@dataclass
class HeisState:
    x: tuple
    y: tuple
    z: object

    def coords(self):
        return list(self.x) + list(self.y) + [self.z]


def group_law(p: HeisState, q: HeisState) -> HeisState:
    x = tuple(a + b for a, b in zip(p.x, q.x))
    y = tuple(a + b for a, b in zip(p.y, q.y))
    z = p.z + q.z \
        + sum(a * b for a, b in zip(p.x, q.y)) \
        - sum(a * b for a, b in zip(q.x, p.y))
    return HeisState(x, y, z)


def _frac(t):
    """Representative in [-1/2, 1/2)."""
    return t - math.floor(t + 0.5)


def fundamental_representative(p: HeisState) -> HeisState:
    """Representative of p modulo the integer lattice, in [-1/2,1/2)^13:
    ({x}, {y}, {z + x.{y} - {x}.y})."""
    xf = tuple(_frac(c) for c in p.x)
    yf = tuple(_frac(c) for c in p.y)
    z = p.z + sum(a * b for a, b in zip(p.x, yf)) \
        - sum(a * b for a, b in zip(xf, p.y))
    return HeisState(xf, yf, _frac(z))


# ---------------------------------------------------------------------------
# the matrix pair: search and exact verification
# ---------------------------------------------------------------------------

@dataclass
class KatokPair:
    A: sp.Matrix
    B: sp.Matrix
    poly: list          # charpoly(A) coefficients, ascending
    g: list             # B = g(A), coefficients ascending
    certificate: dict


def _reciprocal_sextic(a, b, c):
    return sp.Poly([1, a, b, c, b, a, 1], _X)


def _trace_cubic(a, b, c):
    """p(x) = x^3 q(x + 1/x) with q(t) = t^3 + a t^2 + (b-3) t + (c-2a)."""
    return sp.Poly([1, a, b - 3, c - 2 * a], _X)


def _has_root_pattern(a, b, c):
    """One unit-circle conjugate pair, four real roots of pairwise distinct
    absolute value; all checks exact."""
    q = _trace_cubic(a, b, c)
    if q.count_roots() != 3:
        return False
    if q.count_roots(-2, 2) != 1:
        return False
    p = _reciprocal_sextic(a, b, c)
    if not p.is_irreducible:
        return False
    # distinct absolute values: reciprocal pairs differ unless |root| = 1,
    # so the only degeneracy is a common root of p(x) and p(-x)
    pm = sp.Poly([1, -a, b, -c, b, -a, 1], _X)
    if sp.gcd(p, pm).degree() != 0:
        return False
    return True


def candidate_polynomials(height_bound):
    """Reciprocal sextics x^6+ax^5+bx^4+cx^3+bx^2+ax+1 with the Katok root
    pattern, in order of increasing coefficient height."""
    seen = []
    for h in range(1, height_bound + 1):
        rng = range(-h, h + 1)
        for a, b, c in itertools.product(rng, rng, rng):
            if max(abs(a), abs(b), abs(c)) != h:
                continue
            if _has_root_pattern(a, b, c):
                seen.append((a, b, c))
    return seen


def _inverse_mod_poly(a, b, c):
    """x^{-1} in Q[x]/(p): from p(x) = 0, x^{-1} = -(x^5+ax^4+bx^3+cx^2+bx+a)."""
    return sp.Poly([-1, -a, -b, -c, -b, -a], _X)


def _reciprocity_holds(p, g):
    """Exact check of g(x) g(x^{-1}) = 1 in Q[x]/(p); forces |g(zeta)| = 1
    on the unit-circle pair and reciprocally-paired real eigenvalues."""
    a, b, c = [int(v) for v in p.all_coeffs()[1:4]]
    inv = _inverse_mod_poly(a, b, c)
    ginv = sp.rem(g.compose(inv), p)
    return sp.rem(g * ginv, p) == sp.Poly(1, _X)


def _centralizer_prefilter(a, b, c, g_height):
    """Float screen over the coefficient grid: keep g with g(z)g(1/z) = 1
    at every root and a genuinely non-real value on the circle pair."""
    coeffs = [1, a, b, c, b, a, 1]
    roots = np.roots(coeffs)
    inv_idx = [int(np.argmin(np.abs(roots - 1 / r))) for r in roots]
    circle = [
        i for i, r in enumerate(roots)
        if abs(abs(r) - 1) < 1e-9 and abs(r.imag) > 1e-9
    ]
    powers = np.vander(roots, DIM, increasing=True).T
    grid = np.array(
        list(itertools.product(range(-g_height, g_height + 1), repeat=DIM)),
        dtype=float,
    )
    vals = grid @ powers
    ok = np.ones(len(grid), dtype=bool)
    for i in range(DIM):
        ok &= np.abs(vals[:, i] * vals[:, inv_idx[i]] - 1) < 1e-6
    ok &= np.abs(vals[:, circle[0]].imag) > 1e-6
    cands = grid[ok].astype(int)
    # drop monomials +-x^k: they give B = +-A^k, multiplicatively dependent
    cands = [g for g in cands if np.count_nonzero(g) > 1]
    cands.sort(key=lambda g: (int(np.abs(g).max()), tuple(int(v) for v in g)))
    return cands


def _poly_of_matrix(A, g_ascending):
    out = sp.zeros(*A.shape)
    P = sp.eye(A.shape[0])
    for gk in g_ascending:
        out += int(gk) * P
        P = P * A
    return out


def search_katok_pair(poly_height_bound=6, centralizer_search_bound=2):
    """Enumerate reciprocal sextics with the right exact root pattern, take
    the companion matrix A, and scan integer polynomials g of degree <= 5
    for a unit B = g(A) completing the pair.  First fully verified pair
    wins."""
    if poly_height_bound < 1 or centralizer_search_bound < 1:
        raise ValueError("bounds must be positive")
    for a, b, c in candidate_polynomials(poly_height_bound):
        p = _reciprocal_sextic(a, b, c)
        A = sp.Matrix(sp.Matrix.companion(p))
        for g_coeffs in _centralizer_prefilter(a, b, c, centralizer_search_bound):
            g = sp.Poly(list(reversed([int(v) for v in g_coeffs])), _X)
            if not _reciprocity_holds(p, g):
                continue
            B = _poly_of_matrix(A, [int(v) for v in g_coeffs])
            pair, failures = verify_katok_pair(A, B)
            if not failures:
                pair.certificate["search"] = {
                    "poly_height_bound": poly_height_bound,
                    "centralizer_search_bound": centralizer_search_bound,
                }
                return pair
    raise SearchExhausted(
        f"no pair within poly height {poly_height_bound}, "
        f"centralizer height {centralizer_search_bound}; raise the bounds"
    )


def _recover_centralizer_poly(A, B):
    """g with B = g(A), degree <= 5; exists over Q whenever B commutes with
    an irreducible A.  None if no rational solution."""
    cols = []
    P = sp.eye(DIM)
    for _ in range(DIM):
        cols.append(sp.Matrix([P[i, j] for i in range(DIM) for j in range(DIM)]))
        P = P * A
    M = sp.Matrix.hstack(*cols)
    rhs = sp.Matrix([B[i, j] for i in range(DIM) for j in range(DIM)])
    try:
        sol, params = M.gauss_jordan_solve(rhs)
    except ValueError:
        return None
    if params:
        sol = sol.subs({t: 0 for t in params})
    if M * sol != rhs:
        return None
    return [sp.nsimplify(v, rational=True) for v in sol]


def verify_katok_pair(A, B):
    """Exact verification of the five defining properties.  Returns
    (KatokPair, failures); failures is empty iff the pair is valid."""
    A, B = sp.Matrix(A), sp.Matrix(B)
    failures = []
    cert = {}
    if A.shape != (DIM, DIM) or B.shape != (DIM, DIM) or not all(
        e.is_Integer for e in list(A) + list(B)
    ):
        return None, ["not integer 6x6 matrices"]
    if A.det() != 1 or B.det() != 1:
        failures.append("unimodular: det != 1")
    cert["det_A"], cert["det_B"] = int(A.det()), int(B.det())
    if A * B != B * A:
        failures.append("commuting: AB != BA")

    p = sp.Poly(A.charpoly(_X).as_expr(), _X)
    pcoeffs = [int(v) for v in p.all_coeffs()]
    cert["charpoly_A"] = list(reversed(pcoeffs))
    ip = IntPolynomial(sp.Poly(pcoeffs, _X))
    if not p.is_irreducible:
        failures.append("(1) charpoly of A reducible over Q")
        return None, failures

    # root pattern of A via the trace cubic (exact Sturm counts)
    if pcoeffs != list(reversed(pcoeffs)):
        failures.append("(2) charpoly of A not self-reciprocal")
        return None, failures
    a, b, c = pcoeffs[1], pcoeffs[2], pcoeffs[3]
    q = _trace_cubic(a, b, c)
    cert["trace_cubic"] = [int(v) for v in q.all_coeffs()]
    n_in = q.count_roots(-2, 2)
    if q.count_roots() != 3 or n_in != 1:
        failures.append("(2)/(3) root pattern: need exactly one unit-circle "
                        "pair and four real eigenvalues")
    circle_idx = exact.unit_circle_root_indices(ip)
    cert["circle_root_indices_A"] = sorted(circle_idx or [])
    if not circle_idx or len(circle_idx) != 2:
        failures.append("(2) unit-circle certificate failed for A")
    if exact.is_cyclotomic(ip):
        failures.append("(2) circle pair of A is a root of unity")
    cert["charpoly_A_cyclotomic"] = exact.is_cyclotomic(ip)

    pm = sp.Poly([v if i % 2 == 0 else -v for i, v in enumerate(pcoeffs)], _X)
    gcd_deg = sp.gcd(p, pm).degree()
    cert["distinct_abs_gcd_degree"] = int(gcd_deg)
    if gcd_deg != 0:
        failures.append("(4) real eigenvalues of A share absolute values")

    # B through the centralizer: B = g(A)
    g_coeffs = _recover_centralizer_poly(A, B)
    if g_coeffs is None:
        failures.append("commuting: B is not a polynomial in A")
        return None, failures
    if not all(v.is_rational for v in g_coeffs):
        failures.append("commuting: centralizer solve not rational")
        return None, failures
    g = sp.Poly(list(reversed([sp.Rational(v) for v in g_coeffs])), _X)
    cert["g"] = [str(v) for v in g_coeffs]
    if g.degree() <= 0:
        failures.append("(2) B is scalar")
    recip = g.domain.is_ZZ and _reciprocity_holds(p, g)
    cert["reciprocity_identity"] = bool(recip)
    if not recip:
        failures.append("(2) unit-circle pair of B: g(x)g(1/x) != 1 mod p")

    # the circle eigenvalue of B must not be a root of unity, and property
    # (5): the pair (log|eigenvalue_A|, log|eigenvalue_B|) at two
    # non-reciprocal real roots must span rank 2
    if not failures:
        encl = exact.enclosures_of(ip)
        zeta_b = actions.match_value_enclosure(
            encl[min(circle_idx)], g.as_expr()
        )
        cert["circle_value_B_minpoly"] = list(
            reversed([int(v) for v in zeta_b.minimal_polynomial.coefficients])
        )
        if exact.is_root_of_unity(zeta_b):
            failures.append("(2) circle pair of B is a root of unity")
        real_idx = [i for i in range(DIM) if i not in circle_idx]
        rank_ok = False
        for i, j in itertools.combinations(real_idx, 2):
            la_i = exact.certified_abs_log(encl[i])
            la_j = exact.certified_abs_log(encl[j])
            lb_i = exact.certified_abs_log(
                actions.match_value_enclosure(encl[i], g.as_expr())
            )
            lb_j = exact.certified_abs_log(
                actions.match_value_enclosure(encl[j], g.as_expr())
            )
            det = la_i * lb_j - la_j * lb_i
            if not det.contains_zero():
                rank_ok = True
                cert["log_rank_witness"] = {
                    "root_indices": [i, j],
                    "minor_interval": [det.mid() - det.width() / 2,
                                       det.mid() + det.width() / 2],
                }
                break
        if not rank_ok:
            failures.append("(5) multiplicative independence not certified")

    if failures:
        return None, failures
    pair = KatokPair(
        A=A, B=B,
        poly=list(reversed(pcoeffs)),
        g=[int(v) for v in g_coeffs],
        certificate=cert,
    )
    return pair, []


def load_katok_fixture() -> KatokPair:
    with resources.files("nilrigid").joinpath(
        "data/katok_fixtures.json"
    ).open() as fh:
        data = json.load(fh)
    return KatokPair(
        A=sp.Matrix(data["A"]),
        B=sp.Matrix(data["B"]),
        poly=data["poly"],
        g=data["g"],
        certificate=data["certificate"],
    )


def save_katok_fixture(pair: KatokPair, path):
    data = {
        "A": [[int(pair.A[i, j]) for j in range(DIM)] for i in range(DIM)],
        "B": [[int(pair.B[i, j]) for j in range(DIM)] for i in range(DIM)],
        "poly": pair.poly,
        "g": pair.g,
        "certificate": pair.certificate,
    }
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2)


# ---------------------------------------------------------------------------
# the induced action on the 13-dimensional algebra
# ---------------------------------------------------------------------------

def _block_generator(M):
    Minv_t = (M.inv()).T
    out = sp.zeros(13, 13)
    out[0:6, 0:6] = M
    out[6:12, 6:12] = Minv_t
    out[12, 12] = 1
    return out


def build_action(pair: KatokPair) -> actions.AutoAction:
    """Generators block-diag(A, (A^-1)^T, 1) and block-diag(B, (B^-1)^T, 1)
    acting on the 13-dimensional algebra."""
    algebra = heis13_algebra()
    gens = [_block_generator(pair.A), _block_generator(pair.B)]
    action = actions.AutoAction(algebra, gens)
    report = actions.validate_action(action)
    if not report.passed:
        raise VerificationError(f"pair induces a broken action: {report.failures}")
    return action


# ---------------------------------------------------------------------------
# the rotation plane, the invariant circle and the section
# ---------------------------------------------------------------------------

@dataclass
class InvariantPlane:
    u1: list                   # certified boxes are kept alongside float
    u2: list                   # midpoints used for sampling
    u1_boxes: list
    u2_boxes: list
    rotation_A: list           # 2x2 float rotation matrices on (u1, u2)
    rotation_B: list
    angle_A: RealInterval
    angle_B: RealInterval
    coordinate_sup: Fraction   # certified upper bound for max_i |u1_i cos + u2_i sin|


def _cyclic_vector(A):
    for k in range(DIM):
        w = sp.zeros(DIM, 1)
        w[k] = 1
        K = sp.Matrix.hstack(*[(A**j) * w for j in range(DIM)])
        if K.rank() == DIM:
            return w
    raise VerificationError("no cyclic vector (charpoly must be reducible)")


def _angle_interval(box: ComplexBox, bits=96) -> RealInterval:
    pad = Fraction(1, 2**48)
    corners = [
        math.atan2(float(im), float(re))
        for re in (box.re_lo, box.re_hi)
        for im in (box.im_lo, box.im_hi)
    ]
    lo = Fraction(min(corners)) - pad
    hi = Fraction(max(corners)) + pad
    return RealInterval.from_endpoints(lo, hi, bits)


def invariant_plane(pair: KatokPair, bits=128) -> InvariantPlane:
    """Real and imaginary parts of the unit-circle eigenvector span the
    plane on which both matrices rotate.  The eigenvector is built from
    certified root boxes through a cyclic vector, so every coordinate
    carries an exact rational enclosure."""
    p = sp.Poly(list(reversed(pair.poly)), _X)
    ip = IntPolynomial(sp.Poly([int(v) for v in p.all_coeffs()], _X))
    circle_idx = exact.unit_circle_root_indices(ip)
    encl = exact.enclosures_of(ip, bits)
    root = None
    for i in sorted(circle_idx):
        encl[i].refine(bits)
        if encl[i].box().im_lo > 0:
            root = encl[i]
            break
        if encl[i].box().im_hi < 0:
            continue
    if root is None:
        raise VerificationError("could not isolate the upper circle root")
    zbox = root.box()
    w = _cyclic_vector(pair.A)
    powers_w = [(pair.A**j) * w for j in range(DIM)]
    # v = sum_j b_j(zeta) A^j w is a zeta-eigenvector when b_5 = 1 and
    # b_j = zeta b_{j+1} + a_{j+1} (Horner tails of the charpoly); the
    # leftover relation b_{-1} = p(zeta) = 0 closes the recurrence
    asc = [Fraction(v) for v in pair.poly]   # a_0 .. a_6, a_6 = 1
    b = [None] * DIM
    b[DIM - 1] = ComplexBox.from_rational(Fraction(1))
    for j in range(DIM - 2, -1, -1):
        b[j] = zbox * b[j + 1] + ComplexBox.from_rational(asc[j + 1])
    v_boxes = []
    for i in range(DIM):
        acc = ComplexBox.from_rational(Fraction(0))
        for j in range(DIM):
            acc = acc + b[j] * ComplexBox.from_rational(Fraction(int(powers_w[j][i])))
        v_boxes.append(acc)
    u1_boxes = [(bx.re_lo, bx.re_hi) for bx in v_boxes]
    u2_boxes = [(bx.im_lo, bx.im_hi) for bx in v_boxes]
    u1 = [float((lo + hi) / 2) for lo, hi in u1_boxes]
    u2 = [float((lo + hi) / 2) for lo, hi in u2_boxes]
    cs, sn = float((zbox.re_lo + zbox.re_hi) / 2), float((zbox.im_lo + zbox.im_hi) / 2)
    gb = actions.match_value_enclosure(root, sp.Poly(list(reversed(pair.g)), _X).as_expr())
    gbox = gb.box()
    cb, sb = float((gbox.re_lo + gbox.re_hi) / 2), float((gbox.im_lo + gbox.im_hi) / 2)
    # certified sup of the circle coordinates at radius 1:
    # max_i sqrt(u1_i^2 + u2_i^2)
    sup2 = max(
        max(r1 * r1 for r1 in (abs(lo1), abs(hi1))) +
        max(r2 * r2 for r2 in (abs(lo2), abs(hi2)))
        for (lo1, hi1), (lo2, hi2) in zip(u1_boxes, u2_boxes)
    )
    return InvariantPlane(
        u1=u1, u2=u2, u1_boxes=u1_boxes, u2_boxes=u2_boxes,
        rotation_A=[[cs, sn], [-sn, cs]],
        rotation_B=[[cb, sb], [-sb, cb]],
        angle_A=_angle_interval(zbox),
        angle_B=_angle_interval(gbox),
        coordinate_sup=_fraction_sqrt_upper(sup2),
    )


def _fraction_sqrt_upper(q: Fraction) -> Fraction:
    """Rational upper bound for sqrt(q)."""
    r = Fraction(math.sqrt(float(q))).limit_denominator(10**12)
    while r * r < q:
        r *= Fraction(1000001, 1000000)
    return r


def circle_radius(plane: InvariantPlane, denominator=64) -> Fraction:
    """Largest k/denominator with certified circle coordinates < 1/2 in
    every coordinate, then halved once more for margin."""
    sup = plane.coordinate_sup
    k = 0
    while Fraction(k + 1, denominator) * sup < Fraction(1, 2):
        k += 1
    if k == 0:
        raise VerificationError("eigenvector scaling too coarse for the box")
    return Fraction(k, 2 * denominator)


def circle_point(plane: InvariantPlane, radius, theta):
    rho = float(radius)
    c, s = math.cos(theta), math.sin(theta)
    return tuple(rho * (c * a + s * b) for a, b in zip(plane.u1, plane.u2))


def section_map(x, y, plane: InvariantPlane, radius, tol=1e-9) -> HeisState:
    """psi(x, y) = (x, y, x.y) for x on the invariant circle and y in the
    fundamental box."""
    a, b, resid = _plane_coordinates(plane, x)
    rho = math.hypot(a, b)
    if resid > tol or abs(rho - float(radius)) > tol:
        raise VerificationError(
            f"x is off the circle (residual {resid:g}, radius error "
            f"{abs(rho - float(radius)):g})"
        )
    if any(not (-0.5 <= float(c) < 0.5) for c in y):
        raise VerificationError("y outside the fundamental box")
    z = sum(float(a_) * float(b_) for a_, b_ in zip(x, y))
    return HeisState(tuple(x), tuple(y), z)


def _plane_coordinates(plane, x):
    U = np.array([plane.u1, plane.u2]).T
    sol, res, *_ = np.linalg.lstsq(U, np.asarray(x, dtype=float), rcond=None)
    resid = float(np.linalg.norm(U @ sol - np.asarray(x, dtype=float)))
    return float(sol[0]), float(sol[1]), resid


# ---------------------------------------------------------------------------
# the invariant measure: counter-based sampling and the equivariance check
# ---------------------------------------------------------------------------

@dataclass
class MuSample:
    theta: float
    y: tuple
    point: HeisState
    seed: int
    index: int


def sample_mu(seed, count, plane: InvariantPlane, radius) -> list:
    """theta uniform on [0, 2pi), y uniform on [-1/2, 1/2)^6; sample i is
    drawn from a counter-based generator keyed (seed, i), so it does not
    depend on the batch size."""
    if count < 1:
        raise ValueError("count must be >= 1")
    out = []
    for i in range(count):
        rng = np.random.Generator(np.random.Philox(key=[seed, i]))
        u = rng.random(7)
        theta = 2 * math.pi * u[0]
        y = tuple(u[1:] - 0.5)
        x = circle_point(plane, radius, theta)
        z = sum(a * b for a, b in zip(x, y))
        out.append(MuSample(theta, y, HeisState(x, y, z), seed, i))
    return out


@dataclass
class EquivarianceReport:
    max_error: float
    per_n: dict
    precision_bits: int
    sample_count: int
    n_range: int


def _int_rows(M):
    return [[int(M[i, j]) for j in range(DIM)] for i in range(DIM)]


def check_equivariance(pair: KatokPair, samples, n_range=5,
                       precision_bits=128) -> EquivarianceReport:
    """Max discrepancy between psi({beta^n x}, {betahat^n y}) and the
    fundamental-domain reduction of alpha^n.psi(x, y), over all samples and
    n in [-n_range, n_range]^2.  The identity is exact (it uses
    {beta^n x} = beta^n x on the small circle), so the discrepancy is pure
    rounding at the working precision."""
    half = mpfr("0.5", precision_bits)
    with gmpy2.context(precision=precision_bits):
        Ainv = pair.A.inv()
        Binv = pair.B.inv()
        pts = []
        for s in samples:
            x = [mpfr(c) for c in s.point.x]
            y = [mpfr(c) for c in s.point.y]
            xy = sum(a * b for a, b in zip(x, y))
            pts.append((x, y, xy))
        per_n = {}
        worst = mpfr(0)
        rng = range(-n_range, n_range + 1)
        for n1 in rng:
            An = pair.A**n1 if n1 >= 0 else Ainv**(-n1)
            for n2 in rng:
                Bn_mat = An * (pair.B**n2 if n2 >= 0 else Binv**(-n2))
                Bn = _int_rows(Bn_mat)
                Cn = _int_rows((Bn_mat.inv()).T)
                err = mpfr(0)
                for x, y, xy in pts:
                    w = [
                        row[0] * x[0] + row[1] * x[1] + row[2] * x[2]
                        + row[3] * x[3] + row[4] * x[4] + row[5] * x[5]
                        for row in Bn
                    ]
                    u = [
                        row[0] * y[0] + row[1] * y[1] + row[2] * y[2]
                        + row[3] * y[3] + row[4] * y[4] + row[5] * y[5]
                        for row in Cn
                    ]
                    uf = [t - gmpy2.floor(t + half) for t in u]
                    # left side: psi(beta^n x, {betahat^n y})
                    z_l = sum(a * b for a, b in zip(w, uf))
                    # right side: reduce (beta^n x, betahat^n y, x.y)
                    z_r = xy + z_l - sum(a * b for a, b in zip(w, u))
                    # wrap-aware distance between the two reduced values
                    d = (z_l - gmpy2.floor(z_l + half)) - (z_r - gmpy2.floor(z_r + half))
                    d = abs(d - gmpy2.rint(d))
                    if d > err:
                        err = d
                per_n[(n1, n2)] = float(err)
                if err > worst:
                    worst = err
    return EquivarianceReport(
        max_error=float(worst),
        per_n=per_n,
        precision_bits=precision_bits,
        sample_count=len(samples),
        n_range=n_range,
    )


# ---------------------------------------------------------------------------
# orbit compactness and the torus-factor evidence report
# ---------------------------------------------------------------------------

@dataclass
class OrbitCompactness:
    status: str          # "COMPACT" or "NOT_DETECTED"
    witness: list        # rational x coordinates when COMPACT


def h_orbit_compactness(point: HeisState, denominator_bound=10**6,
                        tol=DEFAULT_RATIONAL_TOL) -> OrbitCompactness:
    """The orbit of (x, y, z) under the subgroup {(0, v, 0)} is compact
    exactly when x is rational; detection by continued fractions.

    A generic real always has some approximation with error ~ 1/den^2, which
    for denominators near 10^6 already undercuts a flat 10^-12 threshold; a
    detected rational must therefore also clear the significance filter
    err * den^2 << 1 (exact rationals sit at err ~ 0 and always pass)."""
    witness = []
    for c in point.x:
        q = Fraction(float(c)).limit_denominator(denominator_bound)
        err = abs(float(c) - float(q))
        if err >= tol or err * q.denominator**2 >= 1e-2:
            return OrbitCompactness("NOT_DETECTED", [])
        witness.append(q)
    return OrbitCompactness("COMPACT", witness)


def section_membership(states, plane: InvariantPlane, radius,
                       tol=1e-9):
    """Fraction of states lying on the section: x on the circle and
    z = x.y modulo 1."""
    ok = 0
    for st in states:
        a, b, resid = _plane_coordinates(plane, st.x)
        on_circle = resid <= tol and abs(math.hypot(a, b) - float(radius)) <= tol
        zdiff = _frac(float(st.z) - sum(
            float(p) * float(q) for p, q in zip(st.x, st.y)
        ))
        if on_circle and abs(zdiff) <= tol:
            ok += 1
    return ok / len(states)


def translate_center(state: HeisState, t) -> HeisState:
    return HeisState(state.x, state.y, state.z + t)


def _character_set(box, max_support=2):
    """Nonzero integer vectors k in [-box, box]^6 supported on at most
    max_support coordinates (canonical representatives, k > 0 lexic.)."""
    out = []
    for support in itertools.combinations(range(DIM), max_support):
        for vals in itertools.product(range(-box, box + 1), repeat=max_support):
            if all(v == 0 for v in vals):
                continue
            first = next(v for v in vals if v != 0)
            if first < 0:
                continue  # -k gives the conjugate sum
            k = [0] * DIM
            for pos, v in zip(support, vals):
                k[pos] = v
            if k not in out:
                out.append(k)
    return out


@dataclass
class TorusFactorReport:
    y_character_sums: dict          # k -> |mean e(k.y)|
    max_y_character_sum: float
    max_circle_distance: float
    x_character_comparison: dict    # k -> (empirical, quadrature, |diff|)
    birkhoff_sums: dict             # (sample, k) -> |orbit average|
    birkhoff_rate: float
    notes: str


def torus_factor_report(pair: KatokPair, samples, plane: InvariantPlane,
                        radius, n_range=5, character_box=3) -> TorusFactorReport:
    """Evidence that the projection of the invariant measure to the second
    torus is Lebesgue and the first-factor marginal is the circle measure.
    Birkhoff character averages are consistency evidence, not proof of
    ergodicity."""
    ys = np.array([s.y for s in samples])
    xs = np.array([s.point.x for s in samples])
    n = len(samples)

    y_sums = {}
    for k in _character_set(character_box):
        val = np.exp(2j * np.pi * (ys @ np.array(k, dtype=float))).mean()
        y_sums[tuple(k)] = float(abs(val))
    max_y = max(y_sums.values())

    # x-marginal concentrates on the circle
    dists = []
    for x in xs:
        a, b, resid = _plane_coordinates(plane, x)
        dists.append(math.hypot(resid, math.hypot(a, b) - float(radius)))
    max_dist = float(max(dists))

    # x-block characters match the direct circle average, not zero
    thetas = np.linspace(0.0, 2 * np.pi, 4096, endpoint=False)
    circ = np.array([circle_point(plane, radius, t) for t in thetas])
    x_cmp = {}
    for k in ([1, 0, 0, 0, 0, 0], [0, 1, 0, 0, 0, 0], [1, 1, 0, 0, 0, 0]):
        kv = np.array(k, dtype=float)
        emp = np.exp(2j * np.pi * (xs @ kv)).mean()
        quad = np.exp(2j * np.pi * (circ @ kv)).mean()
        x_cmp[tuple(k)] = (complex(emp), complex(quad), float(abs(emp - quad)))

    # Birkhoff averages along individual orbits, characters on the y-block
    ks = ([0] * DIM + [1, 0, 0, 0, 0, 0], [0] * DIM + [0, 0, 1, 0, 0, 0])
    nvals = [
        (n1, n2)
        for n1 in range(-n_range, n_range + 1)
        for n2 in range(-n_range, n_range + 1)
    ]
    mats = {}
    Ainv, Binv = pair.A.inv(), pair.B.inv()
    for n1, n2 in nvals:
        M = (pair.A**n1 if n1 >= 0 else Ainv**(-n1)) * (
            pair.B**n2 if n2 >= 0 else Binv**(-n2)
        )
        mats[(n1, n2)] = np.array(
            _int_rows((M.inv()).T), dtype=float
        )
    birkhoff = {}
    for si in range(min(16, n)):
        y = np.array(samples[si].y)
        for k in ks:
            kv = np.array(k[DIM:], dtype=float)
            acc = 0j
            for nv in nvals:
                yy = mats[nv] @ y
                yy -= np.floor(yy + 0.5)
                acc += np.exp(2j * np.pi * (kv @ yy))
            birkhoff[(si, tuple(k[DIM:]))] = float(abs(acc) / len(nvals))
    rate = 4.0 / math.sqrt(len(nvals))

    return TorusFactorReport(
        y_character_sums=y_sums,
        max_y_character_sum=max_y,
        max_circle_distance=max_dist,
        x_character_comparison=x_cmp,
        birkhoff_sums=birkhoff,
        birkhoff_rate=rate,
        notes=(
            "Birkhoff character averages decaying at the Monte Carlo rate "
            "are consistency evidence for ergodicity, not a proof; "
            "ergodicity is a measure-theoretic statement beyond finite "
            "sampling."
        ),
    )
