import numpy as np
import pytest

from findim import exprlang as el
from findim.pde import build_hull
from findim.system import (HullSample, NotDiagonalizable, NotPositive, SpecError, SystemSpec,
                           block_structure, check_consistency, diagonalize, example_family,
                           transform_system)


def _hull(m, rng, n_pairs=10, nx=17, scale=1.0):
    x = np.linspace(0, 1, nx)
    env = np.sin(np.pi * x)
    u = scale * rng.standard_normal((n_pairs, m, 1)) * env
    v = scale * rng.standard_normal((n_pairs, m, 1)) * env
    return HullSample(x=x, u=u, v=v)


# -- spec validation ---------------------------------------------------------------


def test_build_rejects_alpha_outside_range():
    with pytest.raises(SpecError):
        SystemSpec.build(np.eye(1), [["0"]], ["0"], alpha=0.7)
    with pytest.raises(SpecError):
        SystemSpec.build(np.eye(1), [["0"]], ["0"], alpha=1.0)


def test_build_rejects_boundary_incompatible():
    with pytest.raises(SpecError, match="boundary"):
        SystemSpec.build(np.eye(1), [["0"]], ["1 + u1"])
    # sin(x) does not vanish at x = 1
    with pytest.raises(SpecError):
        SystemSpec.build(np.eye(2), [["0", "sin(x)"], ["0", "0"]], ["0", "0"])
    spec = SystemSpec.build(np.eye(1), [["0"]], ["1 + u1"], strict=False)
    assert spec.boundary_values() == 1.0


def test_build_rejects_bad_shapes():
    with pytest.raises(SpecError):
        SystemSpec.build(np.eye(2), [["0"]], ["0", "0"])
    with pytest.raises(SpecError):
        SystemSpec.build(np.eye(2), [["0", "0"], ["0", "0"]], ["0"])


def test_cutoff_wraps_entries():
    spec = SystemSpec.build(np.eye(1), [["0"]], ["u1^3"], cutoff=1.0)
    assert spec.eval_g(0.5, np.array([[0.5]]))[0, 0] == pytest.approx(0.125)
    assert spec.eval_g(0.5, np.array([[3.0]]))[0, 0] == 0.0


def test_jacobians_match_finite_differences(rng):
    spec = example_family("commuting_family")
    x = rng.uniform(0, 1, 9)
    u = rng.uniform(-2, 2, (2, 9))
    df = spec.eval_df(x, u)
    h = 1e-6
    for l in range(2):
        e = np.zeros((2, 1))
        e[l] = h
        fd = (spec.eval_f(x, u + e) - spec.eval_f(x, u - e)) / (2 * h)
        np.testing.assert_allclose(df[:, :, l], fd, atol=1e-6)
        gd = (spec.eval_g(x, u + e) - spec.eval_g(x, u - e)) / (2 * h)
        np.testing.assert_allclose(spec.eval_dg(x, u)[:, l], gd, atol=1e-5)


def test_digest_stable_and_sensitive():
    a = example_family("commuting_family")
    b = example_family("commuting_family")
    c = example_family("commuting_family", alpha=0.9)
    assert a.digest == b.digest
    assert a.digest != c.digest


# -- diagonalisation ---------------------------------------------------------------


def test_diagonalize_identity():
    dg = diagonalize(np.eye(2))
    np.testing.assert_array_equal(dg.C, np.eye(2))
    np.testing.assert_array_equal(dg.Dbar, np.eye(2))
    assert dg.cond == 1.0


def test_diagonalize_triangular():
    D = np.array([[2.0, 1.0], [0.0, 3.0]])
    dg = diagonalize(D)
    np.testing.assert_allclose(dg.d, [2.0, 3.0], rtol=1e-14)
    assert dg.residual(D) <= 1e-10
    for k in range(2):
        np.testing.assert_allclose(D @ dg.C[:, k], dg.d[k] * dg.C[:, k], atol=1e-14)


def test_diagonalize_rotation_rejected():
    with pytest.raises((NotDiagonalizable, NotPositive)):
        diagonalize(np.array([[0.0, 1.0], [-1.0, 0.0]]))


def test_diagonalize_defective_rejected():
    with pytest.raises(NotDiagonalizable):
        diagonalize(np.array([[1.0, 1.0], [0.0, 1.0]]))


def test_diagonalize_negative_rejected():
    with pytest.raises(NotPositive):
        diagonalize(np.diag([1.0, -2.0]))


def test_diagonalize_sorts_ascending():
    dg = diagonalize(np.diag([3.0, 1.0, 2.0]))
    np.testing.assert_array_equal(dg.d, [1.0, 2.0, 3.0])
    assert dg.cond == 1.0


@pytest.mark.parametrize("seed", range(5))
def test_diagonalize_random_similar(seed):
    rng = np.random.default_rng(seed)
    m = 4
    C = rng.standard_normal((m, m)) + 3 * np.eye(m)
    d = rng.uniform(0.5, 4.0, m)
    D = C @ np.diag(d) @ np.linalg.inv(C)
    dg = diagonalize(D)
    np.testing.assert_allclose(dg.d, np.sort(d), rtol=1e-10)
    assert dg.residual(D) <= 1e-10


# -- transform ------------------------------------------------------------------------


def test_transform_identity_is_identity(rng):
    spec = example_family("commuting_family")
    dg = diagonalize(spec.D)
    t = transform_system(spec, dg)
    x = rng.uniform(0, 1, 11)
    u = rng.uniform(-2, 2, (2, 11))
    np.testing.assert_array_equal(t.eval_f(x, u), spec.eval_f(x, u))
    np.testing.assert_array_equal(t.eval_g(x, u), spec.eval_g(x, u))


def test_transform_scalar_case(rng):
    spec = SystemSpec.build([[2.0]], [["sin(pi*x)*u1^2"]], ["4*u1 - u1^3"])
    dg = diagonalize(spec.D).__class__(C=np.array([[3.0]]), Cinv=np.array([[1 / 3]]),
                                      d=np.array([2.0]), cond=1.0)
    t = transform_system(spec, dg)
    x = rng.uniform(0, 1, 11)
    v = rng.uniform(-1, 1, (1, 11))
    np.testing.assert_allclose(t.eval_f(x, v), spec.eval_f(x, 3 * v), rtol=1e-13)
    np.testing.assert_allclose(t.eval_g(x, v), spec.eval_g(x, 3 * v) / 3, rtol=1e-13)


def test_transform_matches_conjugation(rng):
    D = np.array([[2.0, 1.0], [0.0, 3.0]])
    f = [["sin(pi*x)*u1", "u2^2"], ["x*(1 - x)", "cos(u1) - 1"]]
    g = ["u1*u2", "sin(u2)"]
    spec = SystemSpec.build(D, f, g)
    dg = diagonalize(D)
    t = transform_system(spec, dg)
    np.testing.assert_allclose(t.D, np.diag([2.0, 3.0]), atol=1e-15)
    x = rng.uniform(0, 1, 13)
    v = rng.uniform(-1, 1, (2, 13))
    u = dg.C @ v
    fu = np.moveaxis(spec.eval_f(x, u), -1, 0)
    expected = dg.Cinv @ fu @ dg.C
    np.testing.assert_allclose(np.moveaxis(t.eval_f(x, v), -1, 0), expected, atol=1e-12)
    np.testing.assert_allclose(t.eval_g(x, v), dg.Cinv @ spec.eval_g(x, u), atol=1e-12)


def test_transform_constant_f_oracle():
    D = np.array([[2.0, 1.0], [0.0, 3.0]])
    spec = SystemSpec.build(D, [["1", "0"], ["0", "2"]], ["0", "0"], strict=False)
    dg = diagonalize(D)
    t = transform_system(spec, dg)
    expected = dg.Cinv @ np.diag([1.0, 2.0]) @ dg.C
    got = np.array([[float(el.evaluate(e, 0.3, [0.0, 0.0])) for e in row] for row in t.f])
    np.testing.assert_allclose(got, expected, atol=1e-14)


def test_rediagonalising_diagonal_result_has_unit_condition():
    D = np.array([[2.0, 1.0], [0.0, 3.0]])
    spec = example_family("commuting_family", D=D, D1=D + np.eye(2),
                          g=["26*u1 - u1^3", "38*u2 - u2^3"])
    t = transform_system(spec, diagonalize(D))
    assert diagonalize(t.D).cond == 1.0


# -- consistency ---------------------------------------------------------------------


def test_scalar_diffusion_commutes_exactly(rng):
    spec = example_family("scalar_diffusion", f=[["u1", "sin(u2)"], ["u1*u2", "0"]])
    rep = check_consistency(spec, _hull(2, rng))
    assert rep.max_commutator == 0.0
    assert rep.verdict == "PASS"


def test_constant_offdiagonal_commutator_is_one(rng):
    spec = SystemSpec.build(np.diag([1.0, 2.0]), [["0", "1"], ["0", "0"]], ["0", "0"],
                            strict=False)
    rep = check_consistency(spec, _hull(2, rng))
    assert rep.max_commutator == pytest.approx(1.0, rel=1e-15)
    assert rep.verdict == "FAIL"
    # first maximiser in (x, pair, tau) order
    assert rep.witness["x"] == 0.0 and rep.witness["pair"] == 0 and rep.witness["tau"] == 0.0


def test_commuting_family_passes(commuting, rng):
    rep = check_consistency(commuting, _hull(2, rng, scale=2.0))
    assert rep.verdict == "PASS"
    assert rep.max_commutator <= 1e-12


def test_violating_family_witness(violating, violating_samples):
    hull = build_hull(violating_samples, n_pairs=200, seed=0)
    rep = check_consistency(violating, hull)
    assert rep.verdict == "FAIL"
    assert rep.witness["commutator"] >= 0.5
    assert rep.n_samples == 200 * 65 * 5


def test_consistency_covariant_under_transform(rng):
    D = np.array([[2.0, 1.0], [0.0, 3.0]])
    good = example_family("commuting_family", D=D, D1=D + np.eye(2),
                          g=["26*u1 - u1^3", "38*u2 - u2^3"])
    bad = SystemSpec.build(D, [["0", "sin(pi*x)"], ["0", "0"]], ["0", "0"])
    hull = _hull(2, rng)
    for spec in (good, bad):
        dg = diagonalize(spec.D)
        t = transform_system(spec, dg)
        th = HullSample(hull.x, np.einsum("ab,pbx->pax", dg.Cinv, hull.u),
                        np.einsum("ab,pbx->pax", dg.Cinv, hull.v))
        assert check_consistency(spec, hull).verdict == check_consistency(t, th).verdict


# -- block structure ---------------------------------------------------------------------


def test_block_partition():
    bs = block_structure(np.diag([1.0, 1.0, 2.0]))
    assert bs.groups == ((0, 1), (2,))


def test_diagonal_f_respects_blocks(rng):
    spec = SystemSpec.build(np.diag([1.0, 2.0, 3.0]),
                            [["u1", "0", "0"], ["0", "sin(u2)", "0"], ["0", "0", "u1*u3"]],
                            ["0", "0", "0"])
    assert block_structure(spec.D).respects_blocks(spec, _hull(3, rng))


def test_single_block_respects_anything(rng):
    spec = example_family("scalar_diffusion", f=[["u1", "u2"], ["u1*u2", "1 - cos(u1)"]])
    assert block_structure(spec.D).respects_blocks(spec, _hull(2, rng))


def test_block_family_respects_blocks(rng):
    spec = example_family("block_family")
    assert block_structure(spec.D).respects_blocks(spec, _hull(3, rng))
    assert check_consistency(spec, _hull(3, rng)).verdict == "PASS"


def test_unknown_family():
    with pytest.raises(ValueError):
        example_family("nope")
