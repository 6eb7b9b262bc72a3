"""Exact rational/integer linear algebra and certified high-precision numerics.

Everything here is either exact (sympy rationals, integer polynomials) or a
directed-rounding interval, so that downstream dichotomies (root of unity or
not, on the unit circle or not, rank r or less) are decided honestly instead
of by floating point luck.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import mpmath
import sympy as sp
from mpmath.libmp import (
    from_int,
    from_rational,
    mpf_add,
    mpf_cmp,
    mpf_log,
    mpf_mul,
    mpf_neg,
    mpf_sqrt,
    mpf_sub,
    to_fixed,
    fzero,
    fone,
)
from sympy import Poly, Rational, symbols

_X = symbols("x")

DEFAULT_PREC_BITS = 128
MAX_PREC_BITS = 1024


class ExactError(ValueError):
    pass


class IndeterminateRank(ArithmeticError):
    """A singular value enclosure straddles the tolerance; raise precision."""


class RefinementError(ArithmeticError):
    """Interval refinement failed to reach the target width."""


# ---------------------------------------------------------------------------
# directed-rounding real intervals
# ---------------------------------------------------------------------------

def _to_float(x):
    return float(mpmath.mpf(x))


class RealInterval:
    """Closed interval [lo, hi] with outward-rounded mpf endpoints."""

    __slots__ = ("lo", "hi", "prec")

    def __init__(self, lo, hi, prec):
        self.lo = lo
        self.hi = hi
        self.prec = prec

    # -- constructors -------------------------------------------------------

    @staticmethod
    def from_rational(q, prec=DEFAULT_PREC_BITS):
        q = Fraction(q.p, q.q) if isinstance(q, Rational) else Fraction(q)
        lo = from_rational(q.numerator, q.denominator, prec, "f")
        hi = from_rational(q.numerator, q.denominator, prec, "c")
        return RealInterval(lo, hi, prec)

    @staticmethod
    def from_endpoints(a, b, prec=DEFAULT_PREC_BITS):
        a, b = Fraction(a), Fraction(b)
        if a > b:
            raise ExactError("interval endpoints out of order")
        lo = from_rational(a.numerator, a.denominator, prec, "f")
        hi = from_rational(b.numerator, b.denominator, prec, "c")
        return RealInterval(lo, hi, prec)

    @staticmethod
    def zero(prec=DEFAULT_PREC_BITS):
        return RealInterval(fzero, fzero, prec)

    @staticmethod
    def from_float(x, prec=DEFAULT_PREC_BITS):
        return RealInterval.from_rational(Fraction(x), prec)

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        p = min(self.prec, other.prec)
        return RealInterval(
            mpf_add(self.lo, other.lo, p, "f"),
            mpf_add(self.hi, other.hi, p, "c"),
            p,
        )

    def __sub__(self, other):
        p = min(self.prec, other.prec)
        return RealInterval(
            mpf_sub(self.lo, other.hi, p, "f"),
            mpf_sub(self.hi, other.lo, p, "c"),
            p,
        )

    def __neg__(self):
        return RealInterval(mpf_neg(self.hi), mpf_neg(self.lo), self.prec)

    def __mul__(self, other):
        if isinstance(other, int):
            other = RealInterval.from_rational(Fraction(other), self.prec)
        p = min(self.prec, other.prec)
        cands_lo = []
        cands_hi = []
        for a in (self.lo, self.hi):
            for b in (other.lo, other.hi):
                cands_lo.append(mpf_mul(a, b, p, "f"))
                cands_hi.append(mpf_mul(a, b, p, "c"))
        lo = cands_lo[0]
        for c in cands_lo[1:]:
            if mpf_cmp(c, lo) < 0:
                lo = c
        hi = cands_hi[0]
        for c in cands_hi[1:]:
            if mpf_cmp(c, hi) > 0:
                hi = c
        return RealInterval(lo, hi, p)

    __rmul__ = __mul__

    def scale(self, q):
        """Multiply by an exact rational."""
        return self * RealInterval.from_rational(Fraction(q), self.prec)

    def log(self):
        if mpf_cmp(self.lo, fzero) <= 0:
            raise ExactError("log of interval touching zero")
        return RealInterval(
            mpf_log(self.lo, self.prec, "f"), mpf_log(self.hi, self.prec, "c"), self.prec
        )

    def sqrt(self):
        if mpf_cmp(self.lo, fzero) < 0:
            raise ExactError("sqrt of interval below zero")
        return RealInterval(
            mpf_sqrt(self.lo, self.prec, "f"), mpf_sqrt(self.hi, self.prec, "c"), self.prec
        )

    def half(self):
        return RealInterval(
            mpf_mul(self.lo, from_rational(1, 2, self.prec, "f"), self.prec, "f"),
            mpf_mul(self.hi, from_rational(1, 2, self.prec, "c"), self.prec, "c"),
            self.prec,
        )

    # -- queries ------------------------------------------------------------

    def contains_zero(self):
        return mpf_cmp(self.lo, fzero) <= 0 and mpf_cmp(self.hi, fzero) >= 0

    def is_positive(self):
        return mpf_cmp(self.lo, fzero) > 0

    def is_negative(self):
        return mpf_cmp(self.hi, fzero) < 0

    def is_exact_zero(self):
        return self.lo == fzero and self.hi == fzero

    def width(self):
        return _to_float(mpf_sub(self.hi, self.lo, self.prec, "c"))

    def mid(self):
        return 0.5 * (_to_float(self.lo) + _to_float(self.hi))

    def mid_mpf(self):
        with mpmath.workprec(self.prec):
            return (mpmath.mpf(self.lo) + mpmath.mpf(self.hi)) / 2

    def overlaps(self, other):
        return not (mpf_cmp(self.hi, other.lo) < 0 or mpf_cmp(other.hi, self.lo) < 0)

    def __repr__(self):
        return f"[{_to_float(self.lo)!r}, {_to_float(self.hi)!r}]"


def interval_sum(intervals, prec=DEFAULT_PREC_BITS):
    acc = RealInterval.zero(prec)
    for iv in intervals:
        acc = acc + iv
    return acc


def interval_dot(n, intervals):
    """Sum of n_j * chi_j for an integer vector n."""
    acc = RealInterval.zero(intervals[0].prec if intervals else DEFAULT_PREC_BITS)
    for nj, iv in zip(n, intervals):
        acc = acc + iv * int(nj)
    return acc


# ---------------------------------------------------------------------------
# exact complex boxes (rational endpoints)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ComplexBox:
    """Axis-aligned rectangle with exact rational corners."""

    re_lo: Fraction
    re_hi: Fraction
    im_lo: Fraction
    im_hi: Fraction

    def __add__(self, other):
        return ComplexBox(
            self.re_lo + other.re_lo,
            self.re_hi + other.re_hi,
            self.im_lo + other.im_lo,
            self.im_hi + other.im_hi,
        )

    def __mul__(self, other):
        def imul(alo, ahi, blo, bhi):
            c = [alo * blo, alo * bhi, ahi * blo, ahi * bhi]
            return min(c), max(c)

        rr = imul(self.re_lo, self.re_hi, other.re_lo, other.re_hi)
        ii = imul(self.im_lo, self.im_hi, other.im_lo, other.im_hi)
        ri = imul(self.re_lo, self.re_hi, other.im_lo, other.im_hi)
        ir = imul(self.im_lo, self.im_hi, other.re_lo, other.re_hi)
        return ComplexBox(rr[0] - ii[1], rr[1] - ii[0], ri[0] + ir[0], ri[1] + ir[1])

    @staticmethod
    def from_rational(q):
        q = Fraction(q.p, q.q) if isinstance(q, Rational) else Fraction(q)
        return ComplexBox(q, q, Fraction(0), Fraction(0))

    def abs2_range(self):
        """Exact rational range of |z|^2 over the box."""
        if self.re_lo <= 0 <= self.re_hi:
            re_min = Fraction(0)
        else:
            re_min = min(abs(self.re_lo), abs(self.re_hi))
        re_max = max(abs(self.re_lo), abs(self.re_hi))
        if self.im_lo <= 0 <= self.im_hi:
            im_min = Fraction(0)
        else:
            im_min = min(abs(self.im_lo), abs(self.im_hi))
        im_max = max(abs(self.im_lo), abs(self.im_hi))
        return re_min**2 + im_min**2, re_max**2 + im_max**2

    def contains_origin(self):
        return self.re_lo <= 0 <= self.re_hi and self.im_lo <= 0 <= self.im_hi

    def poly_eval(self, coeffs):
        """Horner evaluation of a polynomial with rational coefficients.

        `coeffs` in descending order.
        """
        acc = ComplexBox.from_rational(Fraction(0))
        for c in coeffs:
            acc = acc * self + ComplexBox.from_rational(c)
        return acc


# ---------------------------------------------------------------------------
# rational matrices
# ---------------------------------------------------------------------------

def _as_rational(v):
    if isinstance(v, Rational):
        return v
    if isinstance(v, Fraction):
        return Rational(v.numerator, v.denominator)
    if isinstance(v, int):
        return Rational(v)
    if isinstance(v, str):
        return Rational(v)
    if isinstance(v, sp.Integer):
        return Rational(v)
    raise ExactError(f"entry {v!r} is not an exact rational")


class RationalMatrix:
    """Immutable exact matrix over the rationals."""

    __slots__ = ("m",)

    def __init__(self, rows):
        if isinstance(rows, sp.MatrixBase):
            m = sp.ImmutableMatrix(rows)
            for e in m:
                if not (e.is_Rational):
                    raise ExactError(f"entry {e!r} is not an exact rational")
        else:
            m = sp.ImmutableMatrix([[_as_rational(v) for v in row] for row in rows])
        if m.rows == 0 or m.cols == 0:
            raise ExactError("empty matrix")
        object.__setattr__(self, "m", m) if False else setattr(self, "m", m)

    # -- basic queries ------------------------------------------------------

    @property
    def rows(self):
        return self.m.rows

    @property
    def cols(self):
        return self.m.cols

    def is_square(self):
        return self.m.rows == self.m.cols

    def is_integer(self):
        return all(e.is_Integer for e in self.m)

    def __getitem__(self, key):
        return self.m[key]

    def __eq__(self, other):
        return isinstance(other, RationalMatrix) and self.m == other.m

    def __hash__(self):
        return hash(self.m)

    # -- algebra ------------------------------------------------------------

    def __mul__(self, other):
        if isinstance(other, RationalMatrix):
            return RationalMatrix(self.m * other.m)
        return RationalMatrix(self.m * _as_rational(other))

    def __add__(self, other):
        return RationalMatrix(self.m + other.m)

    def __sub__(self, other):
        return RationalMatrix(self.m - other.m)

    def __neg__(self):
        return RationalMatrix(-self.m)

    def transpose(self):
        return RationalMatrix(self.m.T)

    def det(self):
        self._require_square()
        return self.m.det()

    def inverse(self):
        self._require_square()
        return RationalMatrix(self.m.inv())

    def pow(self, k):
        self._require_square()
        return RationalMatrix(self.m**k)

    @staticmethod
    def identity(n):
        return RationalMatrix(sp.eye(n))

    def _require_square(self):
        if not self.is_square():
            raise ExactError(f"square matrix required, got {self.rows}x{self.cols}")

    def __repr__(self):
        return f"RationalMatrix({self.m.tolist()!r})"

    def tolist(self):
        return self.m.tolist()


# ---------------------------------------------------------------------------
# integer polynomials
# ---------------------------------------------------------------------------

class IntPolynomial:
    """Primitive polynomial with arbitrary-precision integer coefficients."""

    __slots__ = ("poly",)

    def __init__(self, poly):
        if not isinstance(poly, Poly):
            poly = Poly(poly, _X)
        poly = Poly(poly, _X, domain="QQ")
        _, prim = poly.clear_denoms()
        self.poly = Poly(prim, _X, domain="ZZ")

    @property
    def degree(self):
        if self.poly.is_zero:
            return 0
        return self.poly.degree()

    @property
    def coefficients(self):
        """Descending order, leading coefficient first."""
        return tuple(int(c) for c in self.poly.all_coeffs())

    def is_zero(self):
        return self.poly.is_zero

    def is_irreducible(self):
        return bool(self.poly.is_irreducible)

    def is_monic(self):
        return self.poly.LC() == 1

    def __call__(self, v):
        return self.poly.eval(v)

    def __eq__(self, other):
        return isinstance(other, IntPolynomial) and self.poly == other.poly

    def __hash__(self):
        return hash(self.poly)

    def __mul__(self, other):
        return IntPolynomial(self.poly * other.poly)

    def __repr__(self):
        return f"IntPolynomial({self.poly.as_expr()})"

    def reversed(self):
        """x^deg * p(1/x)."""
        return IntPolynomial(Poly(list(reversed(self.poly.all_coeffs())), _X))

    def is_self_reciprocal(self):
        c = self.poly.all_coeffs()
        return c == list(reversed(c)) or c == [-v for v in reversed(c)]


def charpoly(m: RationalMatrix) -> IntPolynomial:
    """det(xI - m), with denominators cleared to a primitive integer poly."""
    m._require_square()
    return IntPolynomial(m.m.charpoly(_X))


def factor_rational(p: IntPolynomial):
    """Irreducible factorization over Q, content dropped."""
    if p.is_zero():
        raise ExactError("cannot factor the zero polynomial")
    _, factors = p.poly.factor_list()
    return [(IntPolynomial(f), int(k)) for f, k in factors]


# ---------------------------------------------------------------------------
# algebraic enclosures
# ---------------------------------------------------------------------------

class AlgebraicEnclosure:
    """A root of an irreducible integer polynomial, isolated in a box."""

    __slots__ = ("minimal_polynomial", "root_index", "precision_bits", "_root")

    def __init__(self, minimal_polynomial: IntPolynomial, root_index: int,
                 precision_bits: int = DEFAULT_PREC_BITS):
        if not minimal_polynomial.is_irreducible():
            raise ExactError("minimal polynomial must be irreducible")
        self.minimal_polynomial = minimal_polynomial
        self.root_index = root_index
        self.precision_bits = precision_bits
        if minimal_polynomial.degree == 1:
            c0, c1 = minimal_polynomial.coefficients
            self._root = Rational(-c1, c0)
        else:
            self._root = sp.CRootOf(minimal_polynomial.poly, root_index)
        self.refine(precision_bits)

    @property
    def root(self):
        return self._root

    def is_real(self):
        return bool(self._root.is_real)

    def is_rational(self):
        return self.minimal_polynomial.degree == 1

    def refine(self, bits):
        if not self.is_rational():
            self._root.eval_rational(Rational(1, sp.Integer(2) ** (bits // 2)))
        self.precision_bits = max(self.precision_bits, bits)

    def box(self) -> ComplexBox:
        if self.is_rational():
            q = Fraction(self._root.p, self._root.q)
            return ComplexBox(q, q, Fraction(0), Fraction(0))
        iv = self._root._get_interval()

        def frac(v):
            return Fraction(int(v.numerator), int(v.denominator))

        if self.is_real():
            a, b = frac(iv.a), frac(iv.b)
            return ComplexBox(min(a, b), max(a, b), Fraction(0), Fraction(0))
        ax, bx, ay, by = frac(iv.ax), frac(iv.bx), frac(iv.ay), frac(iv.by)
        return ComplexBox(min(ax, bx), max(ax, bx), min(ay, by), max(ay, by))

    def approx(self, prec=53):
        with mpmath.workprec(prec):
            v = complex(self._root.evalf(prec // 3 + 5))
        return v

    def mp_value(self, prec):
        v = self._root.evalf(int(prec / 3.2) + 10)
        with mpmath.workprec(prec):
            return mpmath.mpc(sp.re(v), sp.im(v))

    def __repr__(self):
        return (f"AlgebraicEnclosure({self.minimal_polynomial.poly.as_expr()}, "
                f"index={self.root_index})")


def enclosures_of(p: IntPolynomial, bits=DEFAULT_PREC_BITS):
    """All roots of p (with multiplicity structure dropped), as enclosures."""
    out = []
    for f, _ in factor_rational(p):
        for idx in range(f.degree):
            out.append(AlgebraicEnclosure(f, idx, bits))
    return out


@lru_cache(maxsize=None)
def _cyclotomic_orders(degree):
    """All k with euler_phi(k) == degree.  phi(k) >= sqrt(k/2) bounds k."""
    bound = 2 * degree * degree + 4
    return tuple(k for k in range(1, bound + 1) if sp.totient(k) == degree)


def is_cyclotomic(p: IntPolynomial) -> bool:
    """True iff p is (up to sign) a cyclotomic polynomial."""
    if p.is_zero() or not p.is_irreducible():
        return False
    poly = p.poly if p.poly.LC() > 0 else IntPolynomial(-p.poly.as_expr()).poly
    if poly.LC() != 1:
        return False
    d = poly.degree()
    for k in _cyclotomic_orders(d):
        xk = Poly(_X**k - 1, _X)
        if sp.rem(xk, poly, _X) == 0:
            return True
    return False


def is_root_of_unity(e: AlgebraicEnclosure) -> bool:
    return is_cyclotomic(e.minimal_polynomial)


def certified_abs_log(e: AlgebraicEnclosure, bits: int = DEFAULT_PREC_BITS,
                      max_iter: int = 40) -> RealInterval:
    """Interval of width <= 2^(-bits/4) containing log|root|."""
    if bits < 32:
        raise ExactError("need at least 32 bits")
    # exact shortcuts keep the zero class exactly zero
    if unit_circle_root_indices(e.minimal_polynomial) is not None and \
            e.root_index in unit_circle_root_indices(e.minimal_polynomial):
        return RealInterval.zero(bits)
    target = 2.0 ** (-bits / 4)
    work = max(bits, 64)
    for it in range(max_iter):
        box = e.box()
        lo2, hi2 = box.abs2_range()
        if lo2 > 0:
            iv = RealInterval.from_endpoints(lo2, hi2, work).log().half()
            if iv.width() <= target:
                return iv
        e.refine(min(2 * e.precision_bits, 1 << 24))
        work = max(work, e.precision_bits)
    raise RefinementError("certified_abs_log failed to converge (degenerate box?)")


@lru_cache(maxsize=None)
def unit_circle_root_indices(p: IntPolynomial):
    """Indices of roots of irreducible p certified to lie on the unit circle.

    Exact: a self-reciprocal even-degree p decomposes through the trace
    variable t = x + 1/x; each real trace root in the open interval (-2, 2)
    corresponds to a conjugate pair on the circle, real trace roots outside
    give real off-circle pairs.  If the count of non-real roots of p matches
    twice the trace-root count in (-2, 2), every non-real root is on the
    circle.  Returns None when the certificate does not apply.
    """
    if not p.is_irreducible():
        return None
    d = p.degree
    if d == 1:
        c = p.coefficients
        # root is -c1/c0; on circle iff = +-1
        return frozenset([0]) if abs(c[1]) == abs(c[0]) else frozenset()
    if d % 2 != 0 or not p.is_self_reciprocal():
        return frozenset()
    tp = trace_polynomial(p)
    if tp is None:
        return frozenset()
    in_count = tp.poly.count_roots(-2, 2)
    # endpoints +-2 would force roots +-1, impossible for irreducible d >= 2
    roots = [sp.CRootOf(p.poly, i) for i in range(d)]
    nonreal = [i for i, r in enumerate(roots) if not r.is_real]
    if len(nonreal) == 2 * in_count:
        return frozenset(nonreal)
    return frozenset()


def trace_polynomial(p: IntPolynomial):
    """For self-reciprocal p of even degree 2k, the degree-k polynomial in
    t = x + 1/x with p(x) = x^k * q(x + 1/x).  None if p is not of this form."""
    d = p.degree
    if d % 2 != 0:
        return None
    k = d // 2
    t = symbols("t")
    # x^j + x^-j as polynomial in t, by the Chebyshev-style recurrence
    basis = [sp.Integer(2), t]
    for j in range(2, k + 1):
        basis.append(sp.expand(t * basis[-1] - basis[-2]))
    c = list(reversed(p.coefficients))  # ascending: c[0] + c[1] x + ...
    if c != list(reversed(c)):
        # allow anti-palindromic? no: trace form needs palindromic
        return None
    # p(x)/x^k = c[k] + sum_{j=1..k} c[k+j] (x^j + x^-j)
    expr = sp.Integer(c[k])
    for j in range(1, k + 1):
        expr += c[k + j] * basis[j]
    q = Poly(sp.expand(expr), t)
    return IntPolynomial(Poly(q.all_coeffs(), _X))


# ---------------------------------------------------------------------------
# numeric rank of interval matrices
# ---------------------------------------------------------------------------

def numeric_rank(rows, tol, prec=DEFAULT_PREC_BITS):
    """Number of singular values certifiably greater than tol.

    `rows` is a list of lists whose entries are RealInterval or exact
    rationals/ints.  Raises IndeterminateRank when some singular value's
    enclosure straddles tol.
    """
    if tol <= 0:
        raise ExactError("tol must be positive")
    tol = Fraction(tol)
    nr = len(rows)
    nc = len(rows[0])
    with mpmath.workprec(prec):
        mid = mpmath.zeros(nr, nc)
        rad_sq = mpmath.mpf(0)
        for i, row in enumerate(rows):
            for j, v in enumerate(row):
                if isinstance(v, RealInterval):
                    mid[i, j] = v.mid_mpf()
                    rad_sq += (mpmath.mpf(v.width()) / 2) ** 2
                else:
                    mid[i, j] = mpmath.mpf(sp.Rational(v).p) / sp.Rational(v).q
        if all(mid[i, j] == 0 for i in range(nr) for j in range(nc)) and rad_sq == 0:
            return 0
        sv = mpmath.svd_r(mid, compute_uv=False)
        normA = max(abs(sv[i]) for i in range(sv.rows))
        # perturbation by the radius matrix plus a numerical fudge for svd error
        err = mpmath.sqrt(rad_sq) + normA * mpmath.mpf(2) ** (-prec + 16) * nr * nc
        tol = mpmath.mpf(tol.numerator) / tol.denominator
        count = 0
        for i in range(sv.rows):
            s = sv[i]
            if s - err > tol:
                count += 1
            elif s + err >= tol:
                raise IndeterminateRank(
                    f"singular value enclosure [{float(s - err)}, {float(s + err)}]"
                    f" straddles tol {float(tol)}"
                )
        return count


def numeric_rank_escalating(rows_fn, tol, start=DEFAULT_PREC_BITS, limit=MAX_PREC_BITS):
    """Retry numeric_rank with doubled precision on INDETERMINATE.

    `rows_fn(prec)` must rebuild the interval rows at the requested precision.
    """
    prec = start
    while True:
        try:
            return numeric_rank(rows_fn(prec), tol, prec)
        except IndeterminateRank:
            if prec >= limit:
                raise
            prec *= 2


# ---------------------------------------------------------------------------
# Smith normal form and lattice utilities
# ---------------------------------------------------------------------------

def smith_normal_form(m):
    """U m V = D with U, V unimodular and D a divisibility chain.  Exact.

    Accepts a RationalMatrix with integer entries, a sympy Matrix, or a list
    of lists of ints.  Returns (U, D, V) as sympy Matrices.
    """
    if isinstance(m, RationalMatrix):
        if not m.is_integer():
            raise ExactError("smith_normal_form requires integer entries")
        a = sp.Matrix(m.m)
    else:
        a = sp.Matrix(m)
        if any(not sp.Rational(e).is_Integer for e in a):
            raise ExactError("smith_normal_form requires integer entries")
    nr, nc = a.rows, a.cols
    U = sp.eye(nr)
    V = sp.eye(nc)
    a = a.as_mutable()
    U = U.as_mutable()
    V = V.as_mutable()

    def pivot_search(s):
        best = None
        for i in range(s, nr):
            for j in range(s, nc):
                if a[i, j] != 0 and (best is None or abs(a[i, j]) < abs(a[best[0], best[1]])):
                    best = (i, j)
        return best

    s = 0
    while s < min(nr, nc):
        piv = pivot_search(s)
        if piv is None:
            break
        i0, j0 = piv
        if i0 != s:
            a.row_swap(s, i0)
            U.row_swap(s, i0)
        if j0 != s:
            a.col_swap(s, j0)
            V.col_swap(s, j0)
        if a[s, s] < 0:
            a[s, :] = -a[s, :]
            U[s, :] = -U[s, :]
        dirty = True
        while dirty:
            dirty = False
            for i in range(s + 1, nr):
                if a[i, s] != 0:
                    q = a[i, s] // a[s, s]
                    a[i, :] -= q * a[s, :]
                    U[i, :] -= q * U[s, :]
                    if a[i, s] != 0:
                        a.row_swap(s, i)
                        U.row_swap(s, i)
                        dirty = True
            for j in range(s + 1, nc):
                if a[s, j] != 0:
                    q = a[s, j] // a[s, s]
                    a[:, j] -= q * a[:, s]
                    V[:, j] -= q * V[:, s]
                    if a[s, j] != 0:
                        a.col_swap(s, j)
                        V.col_swap(s, j)
                        dirty = True
            if not dirty:
                # enforce divisibility of the remaining block
                for i in range(s + 1, nr):
                    for j in range(s + 1, nc):
                        if a[i, j] % a[s, s] != 0:
                            a[s, :] += a[i, :]
                            U[s, :] += U[i, :]
                            dirty = True
                            break
                    if dirty:
                        break
        if a[s, s] < 0:
            a[s, :] = -a[s, :]
            U[s, :] = -U[s, :]
        s += 1
    return sp.ImmutableMatrix(U), sp.ImmutableMatrix(a), sp.ImmutableMatrix(V)


def integer_kernel_basis(m):
    """Saturated integer basis (columns) of the rational kernel of m."""
    a = sp.Matrix(m)
    null = a.nullspace()
    if not null:
        return sp.zeros(a.cols, 0)
    B = sp.Matrix.hstack(*null)
    # clear denominators columnwise, then saturate via SNF of the stacked basis
    for j in range(B.cols):
        den = sp.ilcm(1, *[sp.Rational(B[i, j]).q for i in range(B.rows)])
        B[:, j] = B[:, j] * den
        g = sp.igcd(0, *[int(B[i, j]) for i in range(B.rows)])
        if g > 1:
            B[:, j] = B[:, j] / g
    return saturate_columns(B)


def saturate_columns(B):
    """Saturation of the column span: primitive lattice basis of span(B) cap Z^n."""
    if B.cols == 0:
        return B
    U, D, V = smith_normal_form(B)
    k = sum(1 for i in range(min(D.rows, D.cols)) if D[i, i] != 0)
    Uinv = U.inv()
    return sp.Matrix(Uinv[:, :k])


def lattice_intersection(B1, B2):
    """Integer basis of the intersection of two saturated column lattices."""
    if B1.cols == 0 or B2.cols == 0:
        return sp.zeros(B1.rows, 0)
    stacked = sp.Matrix.hstack(B1, -B2)
    K = integer_kernel_basis(stacked)
    if K.cols == 0:
        return sp.zeros(B1.rows, 0)
    u = K[: B1.cols, :]
    return saturate_columns(B1 * u)


def hermite_column_basis(vectors, n):
    """Lattice basis (columns) generated by the given integer vectors in Z^n."""
    if not vectors:
        return sp.zeros(n, 0)
    M = sp.Matrix.hstack(*[sp.Matrix(v) for v in vectors])
    U, D, V = smith_normal_form(M)
    k = sum(1 for i in range(min(D.rows, D.cols)) if D[i, i] != 0)
    Uinv = U.inv()
    return sp.Matrix.hstack(*[Uinv[:, i] * D[i, i] for i in range(k)])
