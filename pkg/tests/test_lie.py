import random
from fractions import Fraction

import pytest
import sympy as sp
from sympy import Rational

from nilrigid.lie import (
    GroupPoint,
    LieError,
    NilAlgebra,
    RationalSubspace,
    abelian_algebra,
    bch_multiply,
    bch_words,
    center,
    is_rational_subspace,
    load_algebra,
    lower_central_series,
    quotient,
    quotient_with_maps,
    reduce_fundamental,
    simplest_rational_between,
)
from nilrigid.exact import RealInterval


def heis3():
    # [e1, e2] = e3
    return NilAlgebra(3, {(0, 1): {2: 1}})


def heis13():
    # [x_i, y_i] = 2 e_z, coordinates (x1..x6, y1..y6, z)
    return NilAlgebra(13, {(i, 6 + i): {12: 2} for i in range(6)})


def filiform4():
    # class-3 fixture: [e1,e2]=e3, [e1,e3]=e4
    return NilAlgebra(4, {(0, 1): {2: 1}, (0, 2): {3: 1}})


def heis_closed_form(a, b):
    """Closed-form product on heis13 coordinates (x, y, z)."""
    x, y, z = a[:6], a[6:12], a[12]
    xp, yp, zp = b[:6], b[6:12], b[12]
    xy = sum(u * v for u, v in zip(x, yp))
    yx = sum(u * v for u, v in zip(xp, y))
    return tuple(u + v for u, v in zip(x, xp)) + tuple(
        u + v for u, v in zip(y, yp)
    ) + (z + zp + xy - yx,)


def rand_rat(rng, den=12, num=30):
    return Rational(rng.randint(-num, num), rng.randint(1, den))


class TestNilAlgebra:
    def test_class_computation(self):
        assert abelian_algebra(3).nilpotency_class == 1
        assert heis3().nilpotency_class == 2
        assert heis13().nilpotency_class == 2
        assert filiform4().nilpotency_class == 3

    def test_jacobi_rejected(self):
        # [e1,e2]=e3, [e1,e3]=e2 breaks nilpotency/Jacobi structure
        with pytest.raises(LieError):
            NilAlgebra(3, {(0, 1): {2: 1}, (0, 2): {2: 1}, (1, 2): {0: 1}})

    def test_antisymmetry_consistency(self):
        alg = heis3()
        assert alg.bracket_basis(1, 0) == {2: Rational(-1)}

    def test_declared_class_mismatch(self):
        with pytest.raises(LieError):
            NilAlgebra(3, {(0, 1): {2: 1}}, nilpotency_class=3)

    def test_irrational_rejected(self):
        with pytest.raises(LieError):
            NilAlgebra(2, {(0, 1): {0: 0.5}})


class TestBCH:
    def test_degree2_coefficient(self):
        words = dict(bch_words(2))
        assert words[(0, 1)] + -words.get((1, 0), Rational(0)) == Rational(1, 2)

    def test_identity_law(self):
        alg = heis3()
        g = GroupPoint(alg, [Rational(1, 3), Rational(-2, 5), Rational(7)])
        e = GroupPoint.identity(alg)
        assert bch_multiply(e, g) == g
        assert bch_multiply(g, e) == g

    def test_inverse_law(self):
        rng = random.Random(3)
        for alg in (heis3(), filiform4()):
            for _ in range(10):
                g = GroupPoint(alg, [rand_rat(rng) for _ in range(alg.dim)])
                assert bch_multiply(g, g.inverse()) == GroupPoint.identity(alg)
                assert bch_multiply(g.inverse(), g) == GroupPoint.identity(alg)

    def test_associativity_class3(self):
        alg = filiform4()
        rng = random.Random(5)
        for _ in range(25):
            g, h, k = (
                GroupPoint(alg, [rand_rat(rng) for _ in range(4)]) for _ in range(3)
            )
            left = bch_multiply(bch_multiply(g, h), k)
            right = bch_multiply(g, bch_multiply(h, k))
            assert left == right

    def test_associativity_class4(self):
        # [e1,e2]=e3, [e1,e3]=e4, [e1,e4]=e5
        alg = NilAlgebra(5, {(0, 1): {2: 1}, (0, 2): {3: 1}, (0, 3): {4: 1}})
        assert alg.nilpotency_class == 4
        rng = random.Random(6)
        for _ in range(10):
            g, h, k = (
                GroupPoint(alg, [rand_rat(rng, den=6, num=6) for _ in range(5)])
                for _ in range(3)
            )
            assert bch_multiply(bch_multiply(g, h), k) == bch_multiply(
                g, bch_multiply(h, k)
            )

    def test_heisenberg_closed_form_1000(self):
        alg = heis13()
        rng = random.Random(11)
        for _ in range(1000):
            a = [rand_rat(rng) for _ in range(13)]
            b = [rand_rat(rng) for _ in range(13)]
            got = bch_multiply(GroupPoint(alg, a), GroupPoint(alg, b)).coords
            assert list(got) == list(heis_closed_form(tuple(a), tuple(b)))

    def test_numeric_coords(self):
        alg = heis3()
        g = GroupPoint(alg, [0.5, 0.25, 0.0])
        h = GroupPoint(alg, [0.25, -0.5, 0.0])
        p = bch_multiply(g, h)
        # z = 1/2 (x y' - x' y) = 1/2 (-0.25 - 0.0625)
        assert p.coords[2] == pytest.approx(0.5 * (0.5 * -0.5 - 0.25 * 0.25))


class TestStructure:
    def test_lcs_abelian(self):
        s = lower_central_series(abelian_algebra(4))
        assert [t.dim for t in s] == [4, 0]

    def test_lcs_heis13(self):
        s = lower_central_series(heis13())
        assert [t.dim for t in s] == [13, 1, 0]
        assert s[1].contains([0] * 12 + [1])

    def test_lcs_heis3(self):
        assert [t.dim for t in lower_central_series(heis3())] == [3, 1, 0]

    def test_center_abelian(self):
        assert center(abelian_algebra(5)).dim == 5

    def test_center_heis13(self):
        c = center(heis13())
        assert c.dim == 1
        assert c.contains([0] * 12 + [1])

    def test_center_heis3_plus_line(self):
        alg = NilAlgebra(4, {(0, 1): {2: 1}})  # Heis3 + R
        assert center(alg).dim == 2


class TestRationalization:
    def test_exact_passes(self):
        alg = heis3()
        ok, _ = is_rational_subspace(RationalSubspace(alg, sp.eye(3)[:, :2]))
        assert ok

    def test_simplest_rational(self):
        assert simplest_rational_between(Fraction(2, 7), Fraction(1, 3)) == Fraction(
            1, 3
        )
        assert simplest_rational_between(Fraction(-1, 10), Fraction(1, 10)) == 0
        assert simplest_rational_between(Fraction(31, 10), Fraction(33, 10)) == Fraction(13, 4)

    def test_interval_rationalizes_half(self):
        iv = RealInterval.from_endpoints(Fraction(49, 100), Fraction(51, 100), 64)
        ok, basis = is_rational_subspace([[iv]])
        assert ok and basis[0, 0] == Rational(1, 2)

    def test_sqrt2_rejected(self):
        s = sp.sqrt(2).evalf(40)
        q = Fraction(str(s))
        eps = Fraction(1, 10**30)
        iv = RealInterval.from_endpoints(q - eps, q + eps, 192)
        ok, _ = is_rational_subspace([[iv]], denominator_bound=10**6)
        assert not ok


class TestQuotient:
    def test_quotient_by_zero(self):
        alg = heis3()
        q = quotient(alg, RationalSubspace(alg, sp.zeros(3, 0)))
        assert q == alg

    def test_quotient_heis13_by_center(self):
        alg = heis13()
        q = quotient(alg, center(alg))
        assert q.dim == 12
        assert q.nilpotency_class == 1

    def test_quotient_lattice_adapted(self):
        # Z^2 by span((1,1)): induced lattice must be Z
        alg = abelian_algebra(2)
        ideal = RationalSubspace(alg, sp.Matrix([[1], [1]]))
        q, proj, section = quotient_with_maps(alg, ideal)
        assert q.dim == 1
        assert abs(sp.Matrix.hstack(sp.Matrix([[1], [1]]), section).det()) == 1

    def test_not_an_ideal(self):
        alg = heis3()
        with pytest.raises(LieError):
            quotient(alg, RationalSubspace(alg, sp.Matrix([[1], [0], [0]])))

    def test_quotient_respects_brackets(self):
        alg = filiform4()
        ideal = RationalSubspace(alg, sp.Matrix([0, 0, 0, 1]))
        q, proj, _ = quotient_with_maps(alg, ideal)
        rng = random.Random(9)
        for _ in range(20):
            a = [rand_rat(rng) for _ in range(4)]
            b = [rand_rat(rng) for _ in range(4)]
            lhs = proj * sp.Matrix(alg.bracket(a, b))
            rhs = sp.Matrix(q.bracket(list(proj * sp.Matrix(a)), list(proj * sp.Matrix(b))))
            assert lhs == rhs


class TestReduceFundamental:
    def test_integer_point(self):
        alg = heis13()
        p = GroupPoint(alg, [Rational(v) for v in range(13)])
        rep, lam = reduce_fundamental(p)
        assert rep == GroupPoint.identity(alg)
        assert bch_multiply(rep, lam) == p

    def test_heisenberg_z_formula(self):
        alg = heis13()
        rng = random.Random(17)
        for _ in range(200):
            x = [rand_rat(rng) for _ in range(6)]
            y = [rand_rat(rng) for _ in range(6)]
            z = rand_rat(rng)
            p = GroupPoint(alg, x + y + [z])
            rep, lam = reduce_fundamental(p)
            assert bch_multiply(rep, lam) == p
            assert all(
                Rational(-1, 2) <= c < Rational(1, 2) for c in rep.coords
            )
            frac = lambda t: t - sp.floor(t + Rational(1, 2))
            fy = [frac(v) for v in y]
            fx = [frac(v) for v in x]
            zexp = frac(
                z
                + sum(a * b for a, b in zip(x, fy))
                - sum(a * b for a, b in zip(fx, y))
            )
            assert rep.coords[12] == zexp
            assert list(rep.coords[:6]) == fx
            assert list(rep.coords[6:12]) == fy

    def test_idempotent(self):
        alg = filiform4()
        rng = random.Random(23)
        for _ in range(50):
            p = GroupPoint(alg, [rand_rat(rng) for _ in range(4)])
            rep, lam = reduce_fundamental(p)
            rep2, lam2 = reduce_fundamental(rep)
            assert rep2 == rep
            assert lam2 == GroupPoint.identity(alg)
            assert bch_multiply(rep, lam) == p

    def test_lattice_part_integer_when_log_lattice_closed(self):
        # with the factor-2 bracket the closed-form product of integer points
        # stays integer, so the lattice part has integer exp-coordinates
        alg = heis13()
        rng = random.Random(29)
        for _ in range(50):
            p = GroupPoint(alg, [rand_rat(rng) for _ in range(13)])
            _, lam = reduce_fundamental(p)
            assert all(sp.Rational(c).is_Integer for c in lam.coords)


class TestLoadAlgebra:
    def test_roundtrip_heis3(self):
        alg = load_algebra(
            {"dim": 3, "class": 2, "brackets": [[1, 2, [[3, "1"]]]]}
        )
        assert alg == heis3()

    def test_antisymmetric_closure_conflict(self):
        with pytest.raises(LieError):
            load_algebra(
                {
                    "dim": 3,
                    "brackets": [[1, 2, [[3, "1"]]], [2, 1, [[3, "1"]]]],
                }
            )

    def test_fraction_entries(self):
        alg = load_algebra(
            {"dim": 3, "brackets": [[1, 2, [[3, "2/3"]]]]}
        )
        assert alg.bracket_basis(0, 1) == {2: Rational(2, 3)}
