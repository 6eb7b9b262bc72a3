"""Nilpotent Lie algebras over Q, the associated group via truncated BCH,
lattices, rational subspaces, quotients, and fundamental-domain reduction.

All group elements live in exponential coordinates: the point with coordinate
vector v is exp(sum v_i e_i).  With rational structure constants every group
operation on rational points is exact.
"""

from __future__ import annotations

import json
from fractions import Fraction
from functools import lru_cache

import sympy as sp
from sympy import Rational

from .exact import (
    ExactError,
    RealInterval,
    saturate_columns,
    smith_normal_form,
)

MAX_BCH_CLASS = 6


class LieError(ValueError):
    pass


def _rat(v):
    if isinstance(v, Rational):
        return v
    if isinstance(v, (int, str, Fraction, sp.Integer)):
        return Rational(v)
    raise LieError(f"structure constant {v!r} is not exact")


class NilAlgebra:
    """Nilpotent Lie algebra with rational structure constants.

    The basis e_1..e_d is adapted to the lattice: the lattice in the group is
    exp of the Z-span of the basis.  Brackets are stored as a dict
    {(i,j): {k: c}} for i < j (0-based), antisymmetry implied.
    """

    def __init__(self, dim, brackets, nilpotency_class=None):
        if dim < 1:
            raise LieError("dim must be positive")
        self.dim = dim
        table = {}
        for (i, j), comps in brackets.items():
            if not (0 <= i < dim and 0 <= j < dim):
                raise LieError(f"bracket index out of range: {(i, j)}")
            if i == j:
                if any(_rat(c) != 0 for c in comps.values()):
                    raise LieError(f"[e_{i}, e_{i}] must vanish")
                continue
            entry = {k: _rat(c) for k, c in comps.items() if _rat(c) != 0}
            if not entry:
                continue
            key = (i, j) if i < j else (j, i)
            entry = entry if i < j else {k: -c for k, c in entry.items()}
            if key in table and table[key] != entry:
                raise LieError(f"inconsistent bracket for {key} (antisymmetry)")
            table[key] = entry
        self.table = table
        self._check_jacobi()
        actual_class = self._compute_class()
        if nilpotency_class is not None and nilpotency_class != actual_class:
            raise LieError(
                f"declared class {nilpotency_class} but computed {actual_class}"
            )
        self.nilpotency_class = actual_class
        if self.nilpotency_class > MAX_BCH_CLASS:
            raise LieError(f"nilpotency class > {MAX_BCH_CLASS} unsupported")
        self._malcev_order = None

    # -- bracket ------------------------------------------------------------

    def bracket_basis(self, i, j):
        """[e_i, e_j] as a coordinate dict {k: Rational}."""
        if i == j:
            return {}
        if i < j:
            return self.table.get((i, j), {})
        return {k: -c for k, c in self.table.get((j, i), {}).items()}

    def bracket(self, u, v):
        """[u, v] for coordinate sequences; works for rationals or reals."""
        out = [0] * self.dim
        for (i, j), comps in self.table.items():
            coef = u[i] * v[j] - u[j] * v[i]
            if coef == 0:
                continue
            for k, c in comps.items():
                out[k] = out[k] + coef * c
        return out

    def ad_matrix(self, i):
        """Matrix of ad(e_i) acting on coordinate columns."""
        m = sp.zeros(self.dim, self.dim)
        for j in range(self.dim):
            for k, c in self.bracket_basis(i, j).items():
                m[k, j] = c
        return m

    # -- validation ---------------------------------------------------------

    def _check_jacobi(self):
        for i in range(self.dim):
            for j in range(i + 1, self.dim):
                for k in range(j + 1, self.dim):
                    ei = [Rational(1) if t == i else Rational(0) for t in range(self.dim)]
                    ej = [Rational(1) if t == j else Rational(0) for t in range(self.dim)]
                    ek = [Rational(1) if t == k else Rational(0) for t in range(self.dim)]
                    s = [
                        a + b + c
                        for a, b, c in zip(
                            self.bracket(ei, self.bracket(ej, ek)),
                            self.bracket(ej, self.bracket(ek, ei)),
                            self.bracket(ek, self.bracket(ei, ej)),
                        )
                    ]
                    if any(v != 0 for v in s):
                        raise LieError(f"Jacobi identity fails at ({i},{j},{k})")

    def _compute_class(self):
        series = self._lower_central_bases()
        return len(series) - 1

    def _lower_central_bases(self):
        """Bases (sympy column matrices) of g = g_0 > g_1 > ... > 0."""
        full = sp.eye(self.dim)
        series = [full]
        current = full
        while current.cols > 0:
            cols = []
            for i in range(self.dim):
                for j in range(current.cols):
                    v = self.bracket(
                        [Rational(1) if t == i else Rational(0) for t in range(self.dim)],
                        list(current[:, j]),
                    )
                    vv = sp.Matrix(v)
                    if any(e != 0 for e in vv):
                        cols.append(vv)
            if not cols:
                series.append(sp.zeros(self.dim, 0))
                break
            nxt = _column_space_lattice(sp.Matrix.hstack(*cols))
            if nxt.cols == current.cols and nxt.cols == self.dim:
                raise LieError("algebra is not nilpotent")
            if nxt.cols >= current.cols and current is not full:
                raise LieError("lower central series not strictly decreasing")
            series.append(nxt)
            current = nxt
        if series[-1].cols != 0:
            series.append(sp.zeros(self.dim, 0))
        return series

    # -- Mal'cev order -------------------------------------------------------

    def malcev_order(self):
        """Basis indices ordered shallow-to-deep along the lower central series.

        Requires each basis vector to lie in some series term exactly (the
        basis is adapted); raises otherwise.
        """
        if self._malcev_order is not None:
            return self._malcev_order
        series = self._lower_central_bases()
        depths = []
        for i in range(self.dim):
            e = sp.zeros(self.dim, 1)
            e[i] = 1
            depth = 0
            for j in range(1, len(series)):
                if series[j].cols and _in_column_space(series[j], e):
                    depth = j
            depths.append(depth)
        for j in range(len(series)):
            need = series[j].cols
            have = sum(1 for d in depths if d >= j)
            if have != need:
                raise LieError(
                    "basis is not adapted to the lower central series; "
                    "no Mal'cev coordinate order exists for it"
                )
        order = sorted(range(self.dim), key=lambda i: (depths[i], i))
        self._malcev_order = order
        return order

    def __eq__(self, other):
        return (
            isinstance(other, NilAlgebra)
            and self.dim == other.dim
            and self.table == other.table
        )

    def __repr__(self):
        return f"NilAlgebra(dim={self.dim}, class={self.nilpotency_class})"


def abelian_algebra(dim):
    return NilAlgebra(dim, {})


def _column_space_lattice(m):
    """Saturated integer column basis of the rational column space of m."""
    cs = sp.Matrix(m).columnspace()
    if not cs:
        return sp.zeros(sp.Matrix(m).rows, 0)
    B = sp.Matrix.hstack(*cs)
    for j in range(B.cols):
        den = sp.ilcm(1, *[Rational(B[i, j]).q for i in range(B.rows)])
        B[:, j] = B[:, j] * den
    return saturate_columns(B)


def _in_column_space(B, v):
    aug = sp.Matrix.hstack(B, v)
    return aug.rank() == B.rank()


def _solve_in_basis(B, v):
    """Coefficients c with B c = v, or None."""
    sol = sp.linsolve((B, sp.Matrix(v)))
    if not sol:
        return None
    vec = list(sol)[0]
    if any(s.free_symbols for s in vec):
        # underdetermined (shouldn't happen for full-rank B); pick particular
        vec = [s.subs({t: 0 for t in s.free_symbols}) for s in vec]
    return sp.Matrix(vec)


class RationalSubspace:
    """Subspace of the algebra spanned by exact rational columns."""

    def __init__(self, algebra, basis):
        basis = sp.Matrix(basis) if not isinstance(basis, sp.MatrixBase) else sp.Matrix(basis)
        if basis.rows != algebra.dim:
            raise LieError("basis row count must equal algebra dimension")
        if basis.cols and basis.rank() != basis.cols:
            raise LieError("basis columns must be independent")
        for e in basis:
            if not Rational(e).is_Rational:
                raise LieError("basis entries must be rational")
        self.algebra = algebra
        self.basis = sp.ImmutableMatrix(basis)

    @property
    def dim(self):
        return self.basis.cols

    def contains(self, v):
        if self.basis.cols == 0:
            return all(e == 0 for e in sp.Matrix(v))
        return _in_column_space(sp.Matrix(self.basis), sp.Matrix(v))

    def saturated(self):
        """Same subspace with a primitive integer lattice basis."""
        if self.basis.cols == 0:
            return self
        return RationalSubspace(self.algebra, _column_space_lattice(self.basis))

    def is_bracket_ideal(self):
        B = sp.Matrix(self.basis)
        for i in range(self.algebra.dim):
            ei = [Rational(1) if t == i else Rational(0) for t in range(self.algebra.dim)]
            for j in range(B.cols):
                w = self.algebra.bracket(ei, list(B[:, j]))
                if not self.contains(w):
                    return False
        return True

    def __repr__(self):
        return f"RationalSubspace(dim={self.dim} of {self.algebra.dim})"


class GroupPoint:
    """Group element in exponential coordinates."""

    __slots__ = ("algebra", "coords")

    def __init__(self, algebra, coords):
        coords = tuple(coords)
        if len(coords) != algebra.dim:
            raise LieError("coordinate length must equal algebra dimension")
        self.algebra = algebra
        self.coords = coords

    @staticmethod
    def identity(algebra):
        return GroupPoint(algebra, [Rational(0)] * algebra.dim)

    @staticmethod
    def basis_multiple(algebra, i, k):
        coords = [Rational(0)] * algebra.dim
        coords[i] = Rational(k) if isinstance(k, (int, Fraction, str)) else k
        return GroupPoint(algebra, coords)

    def inverse(self):
        return GroupPoint(self.algebra, [-c for c in self.coords])

    def is_rational(self):
        return all(
            isinstance(c, (int, Fraction)) or getattr(c, "is_Rational", False)
            for c in self.coords
        )

    def __eq__(self, other):
        return (
            isinstance(other, GroupPoint)
            and self.algebra == other.algebra
            and list(self.coords) == list(other.coords)
        )

    def __repr__(self):
        return f"GroupPoint({list(self.coords)!r})"


# ---------------------------------------------------------------------------
# BCH via the Dynkin formula
# ---------------------------------------------------------------------------

def _compositions(total_max, n):
    """All sequences of n pairs (r_i, s_i) >= 0 with r_i + s_i >= 1 and
    total letter count <= total_max."""
    if n == 0:
        yield ()
        return
    for r in range(total_max + 1):
        for s in range(total_max - r + 1):
            if r + s == 0 or r + s > total_max:
                continue
            for rest in _compositions(total_max - r - s, n - 1):
                yield ((r, s),) + rest


@lru_cache(maxsize=None)
def bch_words(cls):
    """Dynkin-formula terms up to total degree `cls`.

    Returns a tuple of (word, coefficient) with word a tuple over {0, 1}
    (0 = first argument, 1 = second) evaluated as the right-nested bracket
    [w_0, [w_1, [... [w_{m-2}, w_{m-1}] ...]]].  Coefficients are exact and
    aggregated per word.
    """
    if cls > MAX_BCH_CLASS:
        raise LieError(f"nilpotency class > {MAX_BCH_CLASS} unsupported")
    acc = {}
    for n in range(1, cls + 1):
        sign = Rational((-1) ** (n - 1), n)
        for comp in _compositions(cls, n):
            total = sum(r + s for r, s in comp)
            if total == 0 or total > cls:
                continue
            word = []
            denom = total
            for r, s in comp:
                word.extend([0] * r)
                word.extend([1] * s)
                denom *= sp.factorial(r) * sp.factorial(s)
            word = tuple(word)
            # right-nested bracket vanishes when the innermost two letters agree
            if len(word) >= 2 and word[-1] == word[-2]:
                continue
            coeff = sign / denom
            acc[word] = acc.get(word, Rational(0)) + coeff
    return tuple((w, c) for w, c in acc.items() if c != 0)


def bch_multiply(a: GroupPoint, b: GroupPoint) -> GroupPoint:
    """Group product exp(a)exp(b) in exponential coordinates."""
    if a.algebra is not b.algebra and a.algebra != b.algebra:
        raise LieError("points must share an algebra")
    alg = a.algebra
    out = [x + y for x, y in zip(a.coords, b.coords)]
    if alg.nilpotency_class >= 2:
        vecs = (list(a.coords), list(b.coords))
        for word, coeff in bch_words(alg.nilpotency_class):
            if len(word) < 2:
                continue
            val = vecs[word[-1]]
            for letter in reversed(word[:-1]):
                val = alg.bracket(vecs[letter], val)
                if all(v == 0 for v in val):
                    break
            else:
                for k in range(alg.dim):
                    if val[k] != 0:
                        out[k] = out[k] + coeff * val[k]
    return GroupPoint(alg, out)


# ---------------------------------------------------------------------------
# structural operations
# ---------------------------------------------------------------------------

def lower_central_series(alg: NilAlgebra):
    return [RationalSubspace(alg, B) for B in alg._lower_central_bases()]


def center(alg: NilAlgebra) -> RationalSubspace:
    # kernel of the map v -> ([v, e_j])_j, whose matrix rows stack bracket data
    rows = []
    for j in range(alg.dim):
        for k in range(alg.dim):
            row = [alg.bracket_basis(i, j).get(k, Rational(0)) for i in range(alg.dim)]
            rows.append(row)
    M = sp.Matrix(rows)
    null = M.nullspace()
    if not null:
        return RationalSubspace(alg, sp.zeros(alg.dim, 0))
    return RationalSubspace(alg, _column_space_lattice(sp.Matrix.hstack(*null)))


def is_rational_subspace(s, denominator_bound=10**6):
    """Exact subspaces pass trivially; interval bases are rationalized.

    For an interval matrix (list of rows of RealInterval) the simplest
    rational inside each interval is taken; succeeds iff all denominators
    stay within the bound.  Returns (bool, basis-or-None).
    """
    if isinstance(s, RationalSubspace):
        return True, sp.Matrix(s.basis)
    rows = []
    for row in s:
        out = []
        for iv in row:
            if isinstance(iv, RealInterval):
                lo = Fraction(mp_to_fraction(iv.lo))
                hi = Fraction(mp_to_fraction(iv.hi))
                q = simplest_rational_between(lo, hi)
            else:
                q = Fraction(Rational(iv).p, Rational(iv).q)
            if q.denominator > denominator_bound:
                return False, None
            out.append(Rational(q.numerator, q.denominator))
        rows.append(out)
    return True, sp.Matrix(rows)


def mp_to_fraction(raw):
    """Exact value of a raw mpf tuple (sign, mantissa, exponent, bitcount)."""
    sign, man, exp, _ = raw
    man, exp = int(man), int(exp)
    if man == 0:
        return Fraction(0)
    v = Fraction(-man if sign else man)
    return v * Fraction(2) ** exp


def simplest_rational_between(lo, hi):
    """Rational with smallest denominator in [lo, hi] (Stern-Brocot)."""
    if lo > hi:
        lo, hi = hi, lo
    if lo <= 0 <= hi:
        return Fraction(0)
    if hi < 0:
        return -simplest_rational_between(-hi, -lo)

    a, b = lo, hi
    stack = []
    while True:
        ia = a.numerator // a.denominator
        if a == ia:
            result = Fraction(ia)
            break
        if ia + 1 <= b:
            result = Fraction(ia + 1)
            break
        stack.append(ia)
        a, b = 1 / (b - ia), 1 / (a - ia)
    for ia in reversed(stack):
        result = ia + 1 / result
    return result


def quotient_with_maps(alg: NilAlgebra, ideal: RationalSubspace):
    """Quotient algebra together with (projection, section) matrices.

    projection: (d-k) x d, coordinates of the image in the quotient lattice
    basis; section: d x (d-k), a lattice lift of the quotient basis.
    """
    if ideal.algebra != alg:
        raise LieError("ideal belongs to a different algebra")
    sat = ideal.saturated()
    if sat.dim and not sat.is_bracket_ideal():
        raise LieError("subspace is not a bracket ideal")
    k = sat.dim
    d = alg.dim
    if k == 0:
        proj = sp.eye(d)
        return alg, proj, sp.eye(d)
    B = sp.Matrix(sat.basis)
    U, D, V = smith_normal_form(B)
    T = U.inv()  # unimodular; first k columns span the ideal lattice
    Tinv = sp.Matrix(U)
    # quotient basis = images of T's last d-k columns
    proj = Tinv[k:, :]
    section = T[:, k:]
    new_dim = d - k
    brackets = {}
    for a in range(new_dim):
        for b in range(a + 1, new_dim):
            w = alg.bracket(list(section[:, a]), list(section[:, b]))
            img = proj * sp.Matrix(w)
            comps = {t: img[t] for t in range(new_dim) if img[t] != 0}
            if comps:
                brackets[(a, b)] = comps
    return NilAlgebra(new_dim, brackets), proj, section


def quotient(alg: NilAlgebra, ideal: RationalSubspace) -> NilAlgebra:
    q, _, _ = quotient_with_maps(alg, ideal)
    return q


# ---------------------------------------------------------------------------
# fundamental-domain reduction
# ---------------------------------------------------------------------------

def _floor_coord(c):
    if isinstance(c, Rational) or getattr(c, "is_Rational", False):
        return int(sp.floor(c))
    import mpmath

    return int(mpmath.floor(c))


def reduce_fundamental(p: GroupPoint):
    """Split p = representative * lattice_part with representative in
    [-1/2, 1/2)^d, reducing coordinate-by-coordinate in Mal'cev order."""
    alg = p.algebra
    order = alg.malcev_order()
    rep = p
    lam = GroupPoint.identity(alg)
    for i in order:
        c = rep.coords[i]
        k = _floor_coord(c + Rational(1, 2))
        if k != 0:
            step = GroupPoint.basis_multiple(alg, i, k)
            rep = bch_multiply(rep, step.inverse())
            lam = bch_multiply(step, lam)
    return rep, lam


# ---------------------------------------------------------------------------
# file format
# ---------------------------------------------------------------------------

def load_algebra(source) -> NilAlgebra:
    """Algebra from {"dim": d, "class": c, "brackets": [[i, j, [[k, "p/q"]...]]]}
    with 1-based indices; antisymmetric closure applied with consistency check."""
    if isinstance(source, str):
        with open(source) as fh:
            data = json.load(fh)
    else:
        data = source
    dim = int(data["dim"])
    declared = data.get("class")
    brackets = {}
    for item in data.get("brackets", []):
        i, j, comps = item
        i, j = int(i) - 1, int(j) - 1
        entry = {int(k) - 1: Rational(str(c)) for k, c in comps}
        key = (i, j)
        if key in brackets and brackets[key] != entry:
            raise LieError(f"duplicate inconsistent bracket entry for {item[:2]}")
        mirror = (j, i)
        if mirror in brackets:
            if brackets[mirror] != {k: -c for k, c in entry.items()}:
                raise LieError(f"antisymmetry violated between {key} and {mirror}")
        brackets[key] = entry
    return NilAlgebra(dim, brackets, int(declared) if declared is not None else None)
