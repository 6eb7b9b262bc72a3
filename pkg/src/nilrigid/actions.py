"""Analysis of Z^r-actions by lattice-preserving Lie algebra automorphisms.

The spectral workhorse is a generic integer combination M_c of the commuting
generators: its primary components are the common generalized eigenspaces,
and on each component every generator's semisimple part is a polynomial in
the semisimple part of M_c, which pins down the joint eigenvalue pairing
exactly.  Eigenvalue magnitudes are certified intervals; eigenvalues that lie
on the unit circle are recognized exactly so zero Lyapunov exponents are
exactly zero.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from fractions import Fraction

import mpmath
import sympy as sp
from sympy import Rational, symbols

from .exact import (
    AlgebraicEnclosure,
    DEFAULT_PREC_BITS,
    ExactError,
    IntPolynomial,
    IndeterminateRank,
    RationalMatrix,
    RealInterval,
    certified_abs_log,
    charpoly,
    factor_rational,
    interval_dot,
    is_root_of_unity,
    numeric_rank,
    saturate_columns,
    smith_normal_form,
)
from .lie import (
    LieError,
    NilAlgebra,
    RationalSubspace,
    abelian_algebra,
    center,
    load_algebra,
    lower_central_series,
    quotient_with_maps,
)

_X, _Y = symbols("x y")

MAX_GENERIC_TRIES = 32
ORBIT_CAP = 4096


class ActionError(ValueError):
    pass


class UndecidedError(Exception):
    """A certificate applies in neither direction; the question stays open."""


class StraddleError(ArithmeticError):
    """An exponent enclosure straddles zero at the maximum precision."""


# ---------------------------------------------------------------------------
# actions
# ---------------------------------------------------------------------------

class AutoAction:
    """r commuting, bracket- and lattice-preserving generators on the algebra."""

    def __init__(self, algebra: NilAlgebra, generators):
        gens = []
        for g in generators:
            g = g if isinstance(g, RationalMatrix) else RationalMatrix(g)
            if g.rows != algebra.dim or g.cols != algebra.dim:
                raise ActionError("generator size must match algebra dimension")
            gens.append(g)
        if not gens:
            raise ActionError("need at least one generator")
        self.algebra = algebra
        self.generators = tuple(gens)
        self.rank = len(gens)

    def matrix_power(self, n):
        """alpha^n for an integer vector n."""
        m = sp.eye(self.algebra.dim)
        for g, k in zip(self.generators, n):
            gm = sp.Matrix(g.m)
            m = m * (gm**int(k) if k >= 0 else gm.inv() ** (-int(k)))
        return RationalMatrix(m)

    def __repr__(self):
        return f"AutoAction(dim={self.algebra.dim}, rank={self.rank})"


@dataclass
class ValidationReport:
    passed: bool
    failures: list


def validate_action(a: AutoAction) -> ValidationReport:
    failures = []
    d = a.algebra.dim
    for i, g in enumerate(a.generators):
        if not g.is_integer():
            failures.append(f"generator {i} has non-integer entries")
        elif g.det() not in (1, -1):
            failures.append(f"generator {i} has determinant {g.det()}, not +-1")
    for i in range(a.rank):
        for j in range(i + 1, a.rank):
            comm = a.generators[i] * a.generators[j] - a.generators[j] * a.generators[i]
            if any(e != 0 for e in comm.m):
                failures.append(f"generators {i} and {j} do not commute")
    for gi, g in enumerate(a.generators):
        gm = sp.Matrix(g.m)
        for i in range(d):
            for j in range(i + 1, d):
                lhs = sp.Matrix(
                    a.algebra.bracket(list(gm[:, i]), list(gm[:, j]))
                )
                ei = [Rational(1) if t == i else Rational(0) for t in range(d)]
                ej = [Rational(1) if t == j else Rational(0) for t in range(d)]
                rhs = gm * sp.Matrix(a.algebra.bracket(ei, ej))
                if lhs != rhs:
                    failures.append(
                        f"generator {gi} breaks the bracket on basis pair ({i},{j})"
                    )
    return ValidationReport(not failures, failures)


# ---------------------------------------------------------------------------
# Jordan-Chevalley decomposition (exact, additive)
# ---------------------------------------------------------------------------

def semisimple_part(m):
    """Semisimple summand of the additive Jordan decomposition, exact."""
    m = sp.Matrix(m)
    p = m.charpoly(_X)
    poly = sp.Poly(p, _X)
    red = sp.Poly(sp.quo(poly, sp.gcd(poly, poly.diff(_X)), _X), _X)
    s = m
    dprime = red.diff(_X)
    for _ in range(m.rows.bit_length() + 2):
        val = _poly_of_matrix(red, s)
        if all(e == 0 for e in val):
            return s
        s = s - _poly_of_matrix(dprime, s).inv() * val
    raise ActionError("semisimple part iteration failed to converge")


def _poly_of_matrix(poly, m):
    out = sp.zeros(m.rows, m.rows)
    for c in poly.all_coeffs():
        out = out * m + sp.eye(m.rows) * c
    return out


# ---------------------------------------------------------------------------
# Lyapunov spectrum
# ---------------------------------------------------------------------------

@dataclass
class SpectrumEntry:
    chi: tuple                       # r RealIntervals, chi evaluated at generators
    multiplicity: int
    block_index: int
    combo_root: AlgebraicEnclosure
    values: tuple                    # r AlgebraicEnclosures, generator eigenvalues
    coarse_class: int = -1

    def chi_at(self, n) -> RealInterval:
        return interval_dot(n, list(self.chi))

    def is_exact_zero(self):
        return all(iv.is_exact_zero() for iv in self.chi)


@dataclass
class SpectrumBlock:
    factor: IntPolynomial            # irreducible factor of the combo charpoly
    multiplicity: int
    subspace: RationalSubspace       # rational common generalized eigenspace
    gen_polys: tuple                 # g_j with (semisimple of M_j) = g_j(S_c)


@dataclass
class LyapunovSpectrum:
    action: AutoAction
    combo: tuple                     # the generic integer combination used
    blocks: list
    entries: list
    coarse_classes: list             # list of lists of entry indices
    precision_bits: int

    def dimension_check(self):
        return sum(e.multiplicity for e in self.entries) == self.action.algebra.dim

    def zero_sum(self) -> list:
        """Interval vector of sum over entries of multiplicity * chi."""
        r = self.action.rank
        out = []
        for j in range(r):
            acc = RealInterval.zero(self.precision_bits)
            for e in self.entries:
                acc = acc + e.chi[j] * e.multiplicity
            out.append(acc)
        return out


def _restrict(B, M):
    """X with M B = B X for an invariant column space B; exact."""
    sol = sp.Matrix(B).solve(sp.Matrix(M) * sp.Matrix(B))
    return sol


def _kernel_lattice(m):
    null = sp.Matrix(m).nullspace()
    if not null:
        return sp.zeros(sp.Matrix(m).rows, 0)
    B = sp.Matrix.hstack(*null)
    for j in range(B.cols):
        den = sp.ilcm(1, *[Rational(B[i, j]).q for i in range(B.rows)])
        B[:, j] = B[:, j] * den
    return saturate_columns(B)


def match_value_enclosure(combo_root: AlgebraicEnclosure, g, bits=DEFAULT_PREC_BITS):
    """Enclosure for g(zeta): minimal polynomial by resultant, root matched
    to the interval image of the combo root's box."""
    f = combo_root.minimal_polynomial.poly
    gx = sp.Poly(g, _X)
    res = sp.Poly(
        sp.resultant(f.as_expr().subs(_X, _Y), _X - gx.as_expr().subs(_X, _Y), _Y), _X
    )
    candidates = []
    for fac, _ in factor_rational(IntPolynomial(res)):
        for idx in range(fac.degree):
            candidates.append(AlgebraicEnclosure(fac, idx, bits))
    coeffs = [Fraction(Rational(c).p, Rational(c).q) for c in gx.all_coeffs()] or [
        Fraction(0)
    ]
    for _ in range(40):
        vbox = combo_root.box().poly_eval(coeffs)
        alive = [c for c in candidates if _boxes_overlap(c.box(), vbox)]
        if len(alive) == 1:
            return alive[0]
        if len(alive) == 0:
            # outward rounding starved the box; refine and retry
            alive = candidates
        candidates = alive
        combo_root.refine(2 * combo_root.precision_bits)
        for c in candidates:
            c.refine(2 * c.precision_bits)
    raise ActionError("could not isolate the image eigenvalue")


def _boxes_overlap(a, b):
    return not (
        a.re_hi < b.re_lo
        or b.re_hi < a.re_lo
        or a.im_hi < b.im_lo
        or b.im_hi < a.im_lo
    )


def lyapunov_spectrum(a: AutoAction, precision_bits=DEFAULT_PREC_BITS, seed=0):
    rng = random.Random(seed)
    d = a.algebra.dim
    last_err = None
    for attempt in range(MAX_GENERIC_TRIES):
        if attempt == 0:
            combo = tuple([1] + [2 * j + 2 for j in range(a.rank - 1)])
        else:
            combo = tuple(rng.randint(-9, 9) for _ in range(a.rank))
            if all(c == 0 for c in combo):
                continue
        Mc = sp.zeros(d, d)
        for c, g in zip(combo, a.generators):
            Mc += c * sp.Matrix(g.m)
        try:
            blocks = _decompose_blocks(a, Mc)
        except _ComboRejected as err:
            last_err = err
            continue
        return _build_spectrum(a, combo, blocks, precision_bits)
    raise ActionError(f"generic combination search exhausted: {last_err}")


class _ComboRejected(Exception):
    pass


def _decompose_blocks(a: AutoAction, Mc):
    d = a.algebra.dim
    p = charpoly(RationalMatrix(Mc))
    blocks = []
    total = 0
    for f, m in factor_rational(p):
        fM = _poly_of_matrix(f.poly, Mc)
        V = _kernel_lattice(fM**m)
        e = f.degree
        if V.cols != e * m:
            raise _ComboRejected("primary component dimension mismatch")
        total += V.cols
        Mc_B = _restrict(V, Mc)
        Sc = Mc_B if m == 1 else semisimple_part(Mc_B)
        powers = [sp.eye(V.cols)]
        for _ in range(e - 1):
            powers.append(powers[-1] * Sc)
        gen_polys = []
        for g in a.generators:
            Xg = _restrict(V, sp.Matrix(g.m))
            # for m == 1 the block is one-dimensional over Q[x]/(f), so every
            # commuting restriction is already semisimple
            Sg = Xg if m == 1 else semisimple_part(Xg)
            sol = _solve_matrix_combination(powers, Sg)
            if sol is None:
                raise _ComboRejected("generator eigenvalues collide across classes")
            gen_polys.append(sp.Poly(list(reversed(sol)), _X))
        blocks.append(
            SpectrumBlock(f, m, RationalSubspace(a.algebra, V), tuple(gen_polys))
        )
    if total != d:
        raise _ComboRejected("primary components do not fill the space")
    return blocks


def _solve_matrix_combination(powers, target):
    """Coefficients a_t with sum a_t powers[t] == target, or None."""
    cols = [sp.Matrix([p]).reshape(p.rows * p.cols, 1) for p in powers]
    A = sp.Matrix.hstack(*[sp.Matrix(p).reshape(p.rows * p.cols, 1) for p in powers])
    b = sp.Matrix(target).reshape(target.rows * target.cols, 1)
    try:
        sol, params = A.gauss_jordan_solve(b)
    except ValueError:
        return None
    if params:
        sol = sol.subs({t: 0 for t in params})
    if A * sol != b:
        return None
    return [sol[i] for i in range(sol.rows)]


def _build_spectrum(a, combo, blocks, bits):
    entries = []
    for bi, blk in enumerate(blocks):
        value_cache = {}
        for ridx in range(blk.factor.degree):
            root = AlgebraicEnclosure(blk.factor, ridx, bits)
            values = []
            chi = []
            for g in blk.gen_polys:
                val = match_value_enclosure(root, g, bits)
                values.append(val)
                chi.append(certified_abs_log(val, bits))
            entries.append(
                SpectrumEntry(
                    chi=tuple(chi),
                    multiplicity=blk.multiplicity,
                    block_index=bi,
                    combo_root=root,
                    values=tuple(values),
                )
            )
    classes = _group_coarse(entries, bits)
    return LyapunovSpectrum(a, combo, blocks, entries, classes, bits)


def _group_coarse(entries, bits):
    tol = 2.0 ** (-bits / 8)
    classes = []
    for idx, e in enumerate(entries):
        placed = False
        for cls in classes:
            rep = entries[cls[0]]
            if _positively_proportional(e.chi, rep.chi, tol):
                cls.append(idx)
                placed = True
                break
        if placed:
            continue
        classes.append([idx])
    for ci, cls in enumerate(classes):
        for idx in cls:
            entries[idx].coarse_class = ci
    return classes


def _positively_proportional(chi1, chi2, tol):
    z1 = all(iv.is_exact_zero() or abs(iv.mid()) < tol for iv in chi1)
    z2 = all(iv.is_exact_zero() or abs(iv.mid()) < tol for iv in chi2)
    if z1 or z2:
        return z1 and z2
    v1 = [iv.mid() for iv in chi1]
    v2 = [iv.mid() for iv in chi2]
    cross_ok = all(
        abs(v1[i] * v2[j] - v1[j] * v2[i]) <= tol * (1 + abs(v1[i]) + abs(v2[j]))
        for i in range(len(v1))
        for j in range(len(v1))
    )
    if not cross_ok:
        return False
    dot = sum(x * y for x, y in zip(v1, v2))
    return dot > 0


# ---------------------------------------------------------------------------
# unstable subspaces and entropy
# ---------------------------------------------------------------------------

def _chi_sign(entry, n):
    """+1 / -1 / 0 for the certified sign of chi(n); StraddleError otherwise."""
    if all(iv.is_exact_zero() for iv in entry.chi):
        return 0
    iv = entry.chi_at(n)
    if iv.is_exact_zero():
        return 0
    if iv.is_positive():
        return 1
    if iv.is_negative():
        return -1
    if iv.contains_zero() and iv.width() < 2.0 ** (-entry.chi[0].prec / 8):
        # nonzero functionals vanishing at n would need exact cancellation;
        # a tight interval around zero is still a straddle unless exact
        raise StraddleError(f"chi({list(n)}) enclosure straddles zero: {iv}")
    raise StraddleError(f"chi({list(n)}) enclosure straddles zero: {iv}")


def unstable_subalgebra(s: LyapunovSpectrum, n, precision_bits=None):
    """Numeric basis (mpmath matrix columns) of the sum of coarse subspaces
    with chi(n) > 0.  Dually, pass -n for the stable subalgebra."""
    bits = precision_bits or s.precision_bits
    cols = []
    for e in s.entries:
        if _chi_sign(e, n) > 0:
            box = e.combo_root.box()
            if box.im_hi < 0:
                continue  # real form: the conjugate entry carries this plane
            for c in _entry_basis_numeric(s, e, bits):
                if box.im_lo > 0:
                    cols.append([v.real for v in c])
                    cols.append([v.imag for v in c])
                else:
                    cols.append([mpmath.mpf(v.real) if isinstance(v, mpmath.mpc)
                                 else v for v in c])
    d = s.action.algebra.dim
    out = mpmath.zeros(d, len(cols)) if cols else mpmath.zeros(d, 0)
    for j, c in enumerate(cols):
        for i in range(d):
            out[i, j] = c[i]
    return out


def stable_subalgebra(s, n, precision_bits=None):
    return unstable_subalgebra(s, [-v for v in n], precision_bits)


def _entry_basis_numeric(s, entry, bits):
    """Generalized eigenvectors of the combo for this entry's root."""
    blk = s.blocks[entry.block_index]
    B = sp.Matrix(blk.subspace.basis)
    Mc_B = _restrict(B, _combo_matrix(s))
    with mpmath.workprec(bits):
        z = entry.combo_root.mp_value(bits)
        k = Mc_B.rows
        M = mpmath.matrix(k, k)
        for i in range(k):
            for j in range(k):
                q = Rational(Mc_B[i, j])
                M[i, j] = mpmath.mpf(q.p) / q.q
        A = M - z * mpmath.eye(k)
        P = A
        for _ in range(entry.multiplicity - 1):
            P = P * A
        # singular vectors for the smallest singular values span the kernel
        U, S, V = mpmath.svd(P)
        idx = sorted(range(k), key=lambda t: abs(S[t]))[: entry.multiplicity]
        cols = []
        Bm = mpmath.matrix(B.rows, B.cols)
        for i in range(B.rows):
            for j in range(B.cols):
                q = Rational(B[i, j])
                Bm[i, j] = mpmath.mpf(q.p) / q.q
        for t in idx:
            v = mpmath.matrix([V[t, j] for j in range(k)])
            cols.append(Bm * v)
        return cols


def _combo_matrix(s):
    d = s.action.algebra.dim
    Mc = sp.zeros(d, d)
    for c, g in zip(s.combo, s.action.generators):
        Mc += c * sp.Matrix(g.m)
    return Mc


def haar_entropy(s: LyapunovSpectrum, n) -> RealInterval:
    """Entropy of alpha^n for the uniform measure: sum of positive chi(n)."""
    acc = RealInterval.zero(s.precision_bits)
    for e in s.entries:
        if _chi_sign(e, n) > 0:
            acc = acc + e.chi_at(n) * e.multiplicity
    return acc


# ---------------------------------------------------------------------------
# irreducibility and virtually-cyclic certificates
# ---------------------------------------------------------------------------

def _irreducible_generator(a: AutoAction):
    for g in a.generators:
        p = charpoly(g)
        if p.is_irreducible():
            return g, p
    return None, None


def _has_invariant_proper_subspace(a: AutoAction):
    """Search for a common invariant rational subspace: first among
    single-generator primary components, then among joint Krylov closures of
    standard basis vectors (which are invariant by construction and can be
    proper even when every primary component is full, e.g. when the
    generators share their characteristic polynomial across two blocks).
    Returns a basis or None (None means none FOUND)."""
    d = a.algebra.dim
    for g in a.generators:
        for f, m in factor_rational(charpoly(g)):
            for power in range(1, m + 1):
                V = _kernel_lattice(_poly_of_matrix(f.poly, sp.Matrix(g.m)) ** power)
                if 0 < V.cols < d:
                    if all(
                        _is_invariant(V, sp.Matrix(h.m)) for h in a.generators
                    ):
                        return V
    gens = [sp.Matrix(g.m) for g in a.generators]
    for k in range(d):
        v = sp.zeros(d, 1)
        v[k] = 1
        V = _joint_krylov(gens, v)
        if 0 < V.cols < d:
            return V
    return None


def _joint_krylov(gens, v):
    """Saturated lattice basis of the smallest subspace containing v that is
    invariant under every generator (generators are invertible, so forward
    closure suffices)."""
    B = sp.Matrix(v)
    while True:
        cols = [B]
        for g in gens:
            cols.append(g * B)
        big = sp.Matrix.hstack(*cols)
        basis = big.columnspace()
        if len(basis) == B.cols:
            break
        B = sp.Matrix.hstack(*basis)
    denom = sp.ilcm(1, *[sp.Rational(e).q for e in B])
    return saturate_columns(sp.Matrix(B * denom))


def _is_invariant(B, M):
    MB = M * B
    for j in range(MB.cols):
        aug = sp.Matrix.hstack(B, MB[:, j])
        if aug.rank() != B.rank():
            return False
    return True


def ratio_polynomial(p: IntPolynomial) -> IntPolynomial:
    """Polynomial whose roots are all ratios zeta_k / zeta_j of roots of p
    (up to a constant), computed by a resultant; p must have nonzero roots."""
    f = p.poly.as_expr()
    res = sp.resultant(f.subs(_X, _Y), sp.expand(f.subs(_X, _X * _Y)), _Y)
    return IntPolynomial(sp.Poly(sp.expand(res), _X))


def is_totally_irreducible(a: AutoAction) -> bool:
    """Toral total irreducibility via the eigenvalue-ratio certificate.

    Sufficient direction: a generator with irreducible characteristic
    polynomial and no eigenvalue ratio a root of unity stays irreducible
    under every nonzero power, hence under every finite-index restriction.
    Raises UndecidedError when no certificate applies either way.
    """
    if a.algebra.nilpotency_class != 1:
        raise ActionError("total irreducibility is defined for toral actions")
    d = a.algebra.dim
    if d == 1:
        return True
    g, p = _irreducible_generator(a)
    if p is not None:
        rp = ratio_polynomial(p)
        clean = sp.Poly(
            sp.quo(rp.poly, sp.Poly((_X - 1) ** d, _X), _X), _X
        )
        from .exact import is_cyclotomic

        for fac, _ in factor_rational(IntPolynomial(clean)):
            if is_cyclotomic(fac):
                return False
        return True
    if _has_invariant_proper_subspace(a) is not None:
        return False
    raise UndecidedError(
        "no generator has irreducible characteristic polynomial and the "
        "invariant-subspace search found nothing; certificate inconclusive"
    )


def is_virtually_cyclic(a: AutoAction, precision_bits=DEFAULT_PREC_BITS) -> bool:
    """For an irreducible toral block: does the eigenvalue image in the units
    have rank <= 1?  Exact for torsion; interval rank for the log embedding."""
    if a.algebra.nilpotency_class != 1:
        raise ActionError("virtually-cyclic test applies to toral blocks")
    g, p = _irreducible_generator(a)
    if p is None:
        if _has_invariant_proper_subspace(a) is not None:
            raise ActionError("block is not irreducible over Q")
        raise UndecidedError("irreducibility of the block could not be certified")
    if a.rank == 1:
        return True
    s = lyapunov_spectrum(a, precision_bits)
    if all(is_root_of_unity(v) for e in s.entries for v in e.values):
        return True
    bits = precision_bits
    while True:
        rows = []
        for j in range(a.rank):
            rows.append([e.chi[j] for e in s.entries])
        try:
            return numeric_rank(rows, Fraction(1, 10**9), bits) <= 1
        except IndeterminateRank:
            if bits >= 1024:
                raise
            bits *= 2
            s = lyapunov_spectrum(a, bits)


# ---------------------------------------------------------------------------
# irreducible block decomposition of a toral action
# ---------------------------------------------------------------------------

@dataclass
class ToralBlock:
    sublattice: sp.ImmutableMatrix   # columns: saturated invariant sublattice
    action: AutoAction               # induced action on the block
    irreducible: bool


def toral_blocks(generators, seed=0):
    """Decompose Z^d under commuting integer matrices into invariant
    Q-irreducible (where certifiable) sublattice blocks."""
    gens = [sp.Matrix(g.m if isinstance(g, RationalMatrix) else g) for g in generators]
    d = gens[0].rows
    act = AutoAction(abelian_algebra(d), [RationalMatrix(g) for g in gens])
    s = lyapunov_spectrum(act, DEFAULT_PREC_BITS, seed)
    out = []
    for blk in s.blocks:
        B = sp.Matrix(blk.subspace.basis)
        induced = [RationalMatrix(_restrict(B, g)) for g in gens]
        sub = AutoAction(abelian_algebra(B.cols), induced)
        out.extend(_split_block(B, sub))
    return out


def _split_block(B, sub):
    g, p = _irreducible_generator(sub)
    if p is not None:
        return [ToralBlock(sp.ImmutableMatrix(B), sub, True)]
    V = _has_invariant_proper_subspace(sub)
    if V is None:
        return [ToralBlock(sp.ImmutableMatrix(B), sub, False)]
    gens = [sp.Matrix(m.m) for m in sub.generators]
    inner = [RationalMatrix(_restrict(V, m)) for m in gens]
    first = _split_block(B * V, AutoAction(abelian_algebra(V.cols), inner))
    # complement: primary components not meeting V; fall back to quotient-free
    # search on a complementary invariant subspace when one exists
    comp = _invariant_complement(gens, V)
    if comp is None:
        return first + [ToralBlock(sp.ImmutableMatrix(B), sub, False)]
    outer = [RationalMatrix(_restrict(comp, m)) for m in gens]
    rest = _split_block(B * comp, AutoAction(abelian_algebra(comp.cols), outer))
    return first + rest


def _invariant_complement(gens, V):
    d = gens[0].rows
    for g in gens:
        for f, m in factor_rational(charpoly(RationalMatrix(g))):
            W = _kernel_lattice(_poly_of_matrix(f.poly, g) ** m)
            if W.cols == d - V.cols:
                if sp.Matrix.hstack(V, W).rank() == d and all(
                    _is_invariant(W, h) for h in gens
                ):
                    return W
    for k in range(d):
        v = sp.zeros(d, 1)
        v[k] = 1
        if sp.Matrix.hstack(V, v).rank() == V.cols:
            continue
        W = _joint_krylov(gens, v)
        if W.cols == d - V.cols and sp.Matrix.hstack(V, W).rank() == d:
            return W
    return None


# ---------------------------------------------------------------------------
# central irreducible layers and the equivariant tower
# ---------------------------------------------------------------------------

@dataclass
class TowerLayer:
    subgroup: RationalSubspace       # H_i in the ORIGINAL algebra coordinates
    layer_dim: int
    induced_action: list             # integer matrices on the layer lattice
    sigma: sp.ImmutableMatrix        # columns generate the finite-index Sigma


def central_irreducible_layer(a: AutoAction, seed=0):
    """A central, rational, invariant sublattice with totally irreducible
    induced action, together with its stabilizer Sigma (here: full Z^r or a
    finite-index subgroup found by orbit enumeration)."""
    c = center(a.algebra).saturated()
    if c.dim == 0:
        raise ActionError("algebra has trivial center")
    C = sp.Matrix(c.basis)
    induced = [_restrict(C, sp.Matrix(g.m)) for g in a.generators]
    sub, sigma = _minimal_irreducible_sublattice(induced, seed)
    Z = RationalSubspace(a.algebra, C * sub)
    return Z.saturated(), sigma


def _minimal_irreducible_sublattice(gens, seed=0, depth=0):
    """(sublattice columns, Sigma generator matrix) inside Z^c under commuting
    integer matrices; the sublattice's induced action is totally irreducible."""
    c = gens[0].rows
    r_id = sp.ImmutableMatrix(sp.eye(len(gens)))
    if c == 1:
        return sp.eye(1), r_id
    if all(g == sp.eye(c) or g == -sp.eye(c) for g in gens):
        v = sp.zeros(c, 1)
        v[0] = 1
        return v, r_id
    if depth > c:
        raise ActionError("irreducible sublattice recursion exceeded depth cap")
    act = AutoAction(abelian_algebra(c), [RationalMatrix(g) for g in gens])
    s = lyapunov_spectrum(act, DEFAULT_PREC_BITS, seed)
    blocks = sorted(s.blocks, key=lambda b: b.subspace.dim)
    for blk in blocks:
        B = sp.Matrix(blk.subspace.basis)
        inner = [_restrict(B, g) for g in gens]
        sub_act = AutoAction(abelian_algebra(B.cols), [RationalMatrix(g) for g in inner])
        try:
            if is_totally_irreducible(sub_act):
                return B, r_id
        except UndecidedError:
            continue
        if B.cols < c:
            sub, sigma = _minimal_irreducible_sublattice(inner, seed, depth + 1)
            return saturate_columns(B * sub), sigma
    # single block equal to the whole space and not totally irreducible:
    # pass to a finite-index subgroup via eigenvalue-ratio torsion order
    return _finite_index_descent(gens, seed, depth)


def _rank_of(gens):
    return getattr(_rank_of, "_r", None) or len(gens)


def _finite_index_descent(gens, seed, depth):
    """Q-irreducible but not totally irreducible: restrict to powers that
    kill the root-of-unity eigenvalue ratios, split, and compute Sigma by
    orbit/stabilizer enumeration of the chosen sublattice."""
    from .exact import is_cyclotomic

    act = AutoAction(abelian_algebra(gens[0].rows), [RationalMatrix(g) for g in gens])
    g, p = _irreducible_generator(act)
    if p is None:
        raise UndecidedError("cannot split a non-certifiable block")
    d = p.degree
    rp = ratio_polynomial(p)
    clean = sp.Poly(sp.quo(rp.poly, sp.Poly((_X - 1) ** d, _X), _X), _X)
    orders = [1]
    for fac, _ in factor_rational(IntPolynomial(clean)):
        if is_cyclotomic(fac):
            for k in range(1, 2 * fac.degree**2 + 5):
                if sp.rem(sp.Poly(_X**k - 1, _X), fac.poly, _X) == 0:
                    orders.append(k)
                    break
    m = sp.ilcm(1, *orders)
    powered = [sp.Matrix(h) ** int(m) for h in gens]
    sub, _ = _minimal_irreducible_sublattice(powered, seed, depth + 1)
    sigma = _stabilizer_of_sublattice(gens, sub)
    return sub, sigma


def _stabilizer_of_sublattice(gens, sub):
    """Sigma = {n : M^n L = L} by breadth-first orbit enumeration."""
    r = len(gens)
    d = gens[0].rows
    inv = [sp.Matrix(g).inv() for g in gens]

    def canon(B):
        U, D, V = smith_normal_form(
            sp.Matrix.hstack(*[B[:, j] for j in range(B.cols)])
        )
        S = saturate_columns(B)
        # Hermite-style canonical form via row-reduced echelon of the transpose
        M = sp.Matrix(S).T.rref()[0]
        return sp.ImmutableMatrix(M)

    start = canon(sub)
    reps = {start: tuple([0] * r)}
    frontier = [(start, sub, tuple([0] * r))]
    relations = []
    seen = 0
    while frontier:
        seen += 1
        if seen > ORBIT_CAP:
            raise ActionError("sublattice orbit enumeration cap exceeded")
        key, B, nvec = frontier.pop()
        for j in range(r):
            for step, mat in ((1, sp.Matrix(gens[j])), (-1, inv[j])):
                nb = saturate_columns(mat * B)
                nk = canon(nb)
                nn = tuple(
                    v + (step if t == j else 0) for t, v in enumerate(nvec)
                )
                if nk in reps:
                    rel = [x - y for x, y in zip(nn, reps[nk])]
                    if any(rel):
                        relations.append(rel)
                else:
                    reps[nk] = nn
                    frontier.append((nk, nb, nn))
    if not relations:
        raise ActionError("orbit closed without relations; cap too small?")
    R = sp.Matrix.hstack(*[sp.Matrix(rel) for rel in relations])
    # Sigma = column lattice generated by the relations (full rank r expected)
    U, D, V = smith_normal_form(R)
    k = sum(1 for i in range(min(D.rows, D.cols)) if D[i, i] != 0)
    if k < r:
        raise ActionError("stabilizer is not finite index (unexpected)")
    Uinv = U.inv()
    cols = [Uinv[:, i] * D[i, i] for i in range(k)]
    return sp.ImmutableMatrix(sp.Matrix.hstack(*cols))


def equivariant_tower(a: AutoAction, seed=0):
    """Chain of invariant normal rational subgroups with abelian, totally
    irreducible layers, from the bottom (center directions) up."""
    layers = []
    alg = a.algebra
    gens = [sp.Matrix(g.m) for g in a.generators]
    lift = sp.eye(alg.dim)  # columns: current-quotient basis in original coords
    accumulated = sp.zeros(alg.dim, 0)
    sigma_total = sp.eye(a.rank)
    while alg.dim > 0:
        cur = AutoAction(alg, [RationalMatrix(g) for g in gens])
        Z, sigma = central_irreducible_layer(cur, seed)
        ZB = sp.Matrix(Z.basis)
        induced = [_restrict(ZB, g) for g in gens]
        new_acc = sp.Matrix.hstack(accumulated, lift * ZB)
        layers.append(
            TowerLayer(
                subgroup=RationalSubspace(a.algebra, new_acc).saturated(),
                layer_dim=ZB.cols,
                induced_action=[sp.ImmutableMatrix(m) for m in induced],
                sigma=sp.ImmutableMatrix(sigma),
            )
        )
        accumulated = new_acc
        sigma_total = _sigma_intersect(sigma_total, sigma)
        if ZB.cols == alg.dim:
            break
        qalg, proj, section = quotient_with_maps(alg, Z)
        gens = [proj * g * section for g in gens]
        lift = lift * section
        alg = qalg
    return layers, sp.ImmutableMatrix(sigma_total)


def _sigma_intersect(S1, S2):
    from .exact import lattice_intersection

    if S1 == sp.eye(S1.rows) and S2 == sp.eye(S2.rows):
        return sp.eye(S1.rows)
    I = lattice_intersection(sp.Matrix(S1), sp.Matrix(S2))
    return I


# ---------------------------------------------------------------------------
# semisimple / unipotent split
# ---------------------------------------------------------------------------

@dataclass
class SemisimpleUnipotentSplit:
    spectrum: LyapunovSpectrum
    class_index: int
    basis: sp.Matrix                 # class subspace basis (rational case)
    Z_parts: list                    # semisimple restriction per generator
    U_generators: list
    U_logs: list


def semisimple_unipotent_split(s: LyapunovSpectrum, class_index):
    cls = s.coarse_classes[class_index]
    touched = {}
    for idx in cls:
        touched.setdefault(s.entries[idx].block_index, []).append(idx)
    full_blocks = all(
        len(idxs) == s.blocks[bi].factor.degree for bi, idxs in touched.items()
    )
    semisimple_blocks = all(s.blocks[bi].multiplicity == 1 for bi in touched)
    if full_blocks:
        B = sp.Matrix.hstack(
            *[sp.Matrix(s.blocks[bi].subspace.basis) for bi in sorted(touched)]
        )
        Zs, Us, logs = [], [], []
        for g in s.action.generators:
            Xg = _restrict(B, sp.Matrix(g.m))
            Sg = semisimple_part(Xg)
            Ug = Sg.inv() * Xg
            Zs.append(Sg)
            Us.append(Ug)
            logs.append(_nilpotent_log(Ug))
        _check_split(Us)
        return SemisimpleUnipotentSplit(s, class_index, B, Zs, Us, logs)
    if semisimple_blocks:
        # the class cuts semisimple blocks: the unipotent part is trivial on
        # any invariant subspace of them, so U = Id on the class
        dim = sum(s.entries[i].multiplicity for i in cls)
        eye = sp.eye(dim)
        return SemisimpleUnipotentSplit(
            s, class_index, None, [None] * s.action.rank,
            [eye] * s.action.rank, [sp.zeros(dim, dim)] * s.action.rank,
        )
    raise ActionError(
        "class cuts a non-semisimple rational block; split unsupported"
    )


def _nilpotent_log(U):
    n = U.rows
    N = U - sp.eye(n)
    out = sp.zeros(n, n)
    P = sp.eye(n)
    for k in range(1, n + 1):
        P = P * N
        if all(e == 0 for e in P):
            break
        out += Rational((-1) ** (k + 1), k) * P
    return out


def _check_split(Us):
    for i in range(len(Us)):
        n = Us[i].rows
        P = Us[i] - sp.eye(n)
        Q = sp.eye(n)
        for _ in range(n):
            Q = Q * P
        if any(e != 0 for e in Q):
            raise ActionError("unipotent part is not unipotent (merged eigenvalues?)")
        for j in range(i + 1, len(Us)):
            if Us[i] * Us[j] != Us[j] * Us[i]:
                raise ActionError("unipotent parts do not commute")


def unipotent_real_power(split: SemisimpleUnipotentSplit, q):
    """U^q = exp(sum q_i log U^{e_i}); exact for rational q."""
    n = split.U_logs[0].rows
    N = sp.zeros(n, n)
    for qi, L in zip(q, split.U_logs):
        N += sp.nsimplify(qi, rational=True) * L
    out = sp.eye(n)
    P = sp.eye(n)
    for k in range(1, n + 1):
        P = P * N / k
        if all(e == 0 for e in P):
            break
        out += P
    return out


def isometric_subspace(split: SemisimpleUnipotentSplit, p):
    """ker(U^p - Id) on the class subspace, with invariance checks."""
    Up = unipotent_real_power(split, p)
    n = Up.rows
    K = _kernel_lattice(Up - sp.eye(n))
    if K.cols:
        for U in split.U_generators:
            if not _is_invariant(K, U):
                raise ActionError("isometric subspace not U-invariant")
        for Z in split.Z_parts:
            if Z is not None and not _is_invariant(K, Z):
                raise ActionError("isometric subspace not Z-invariant")
    return K


# ---------------------------------------------------------------------------
# obstruction report
# ---------------------------------------------------------------------------

@dataclass
class FactorVerdict:
    description: str
    dim: int
    virtually_cyclic: str            # "yes" / "no" / "undecided"


@dataclass
class ObstructionReport:
    factors: list
    overall: str                     # "no-virtually-cyclic-factor" / "found" / "undecided"
    entropy_table: dict              # n tuple -> (float lo, float hi)
    notes: list = field(default_factory=list)


def obstruction_report(a: AutoAction, n_box=5, precision_bits=DEFAULT_PREC_BITS,
                       seed=0) -> ObstructionReport:
    """Check the two rigidity obstruction hypotheses: existence of a
    virtually cyclic algebraic factor, and positivity of the uniform-measure
    entropy over a box of iterates.

    Any virtually cyclic algebraic factor of a nilmanifold action induces a
    virtually cyclic factor on a torus quotient of the abelianization, so
    checking every Q-irreducible invariant block of the abelianized action is
    complete: the overall verdict is certified when every block verdict is.
    """
    report = ObstructionReport([], "undecided", {})
    series = lower_central_series(a.algebra)
    if len(series) > 1 and series[1].dim > 0:
        qalg, proj, section = quotient_with_maps(a.algebra, series[1])
        ab_gens = [proj * sp.Matrix(g.m) * section for g in a.generators]
    else:
        ab_gens = [sp.Matrix(g.m) for g in a.generators]
    blocks = toral_blocks([RationalMatrix(g) for g in ab_gens], seed)
    verdicts = []
    for i, blk in enumerate(blocks):
        if not blk.irreducible:
            verdicts.append(
                FactorVerdict(f"abelianized block {i}", blk.action.algebra.dim,
                              "undecided")
            )
            continue
        try:
            vc = is_virtually_cyclic(blk.action, precision_bits)
            verdicts.append(
                FactorVerdict(
                    f"abelianized block {i}", blk.action.algebra.dim,
                    "yes" if vc else "no",
                )
            )
        except (UndecidedError, IndeterminateRank) as err:
            verdicts.append(
                FactorVerdict(f"abelianized block {i}", blk.action.algebra.dim,
                              "undecided")
            )
            report.notes.append(str(err))
    report.factors = verdicts
    if any(v.virtually_cyclic == "yes" for v in verdicts):
        report.overall = "virtually-cyclic-factor-found"
    elif all(v.virtually_cyclic == "no" for v in verdicts):
        report.overall = "no-virtually-cyclic-factor"
    else:
        report.overall = "undecided"
    s = lyapunov_spectrum(a, precision_bits, seed)
    rank = a.rank
    for n in _n_box(rank, n_box):
        try:
            h = haar_entropy(s, n)
            report.entropy_table[n] = (
                float(mpmath.mpf(h.lo)), float(mpmath.mpf(h.hi))
            )
        except StraddleError:
            report.entropy_table[n] = None
            report.notes.append(f"entropy enclosure straddles at n={n}")
    return report


def _n_box(rank, radius):
    if rank == 1:
        return [(k,) for k in range(-radius, radius + 1)]
    out = []

    def rec(prefix):
        if len(prefix) == rank:
            out.append(tuple(prefix))
            return
        for k in range(-radius, radius + 1):
            rec(prefix + [k])

    rec([])
    return out


# ---------------------------------------------------------------------------
# file format
# ---------------------------------------------------------------------------

def load_action(source) -> AutoAction:
    if isinstance(source, str):
        with open(source) as fh:
            data = json.load(fh)
    else:
        data = source
    if "torus_dim" in data:
        alg = abelian_algebra(int(data["torus_dim"]))
    else:
        alg_src = data["algebra"]
        alg = load_algebra(alg_src)
    gens = []
    for rows in data["generators"]:
        gens.append([[Rational(str(v)) for v in row] for row in rows])
    act = AutoAction(alg, gens)
    declared = data.get("rank")
    if declared is not None and int(declared) != act.rank:
        raise ActionError(f"declared rank {declared} but {act.rank} generators")
    return act
