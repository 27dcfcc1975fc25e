import numpy as np
import pytest

from poletsky import maps
from poletsky.errors import ConfigError, DomainError, InvalidInputError
from poletsky.maps import DomainDescriptor, gallery

GALLERY_CASES = [
    ("identity", {"n": 2}),
    ("identity", {"n": 3}),
    ("linear", {"matrix": [[2.0, 1.0], [-0.5, 1.5]]}),
    ("linear", {"matrix": [[1.0, 0.2, 0.0], [0.0, 2.0, 0.3], [0.1, 0.0, 0.5]]}),
    ("radial", {"alpha": 3.0, "n": 2}),
    ("radial", {"alpha": 1.0 / 3.0, "n": 2}),
    ("radial", {"alpha": 2.5, "n": 3}),
    ("winding", {"k": 2}),
    ("winding", {"k": 3}),
]


def _interior_points(fmap, rng, m=100, rmin=0.2, rmax=3.0):
    d = rng.normal(size=(m, fmap.n))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return d * rng.uniform(rmin, rmax, size=(m, 1))


def test_eval_examples():
    assert np.allclose(gallery("identity")([1.0, 2.0]), [1.0, 2.0])
    assert np.allclose(gallery("winding", {"k": 2})([1.0, 0.0]), [1.0, 0.0])
    # |x|^(alpha-1) x with alpha = 3 at (2, 0)
    assert np.allclose(gallery("radial", {"alpha": 3})([2.0, 0.0]), [8.0, 0.0])


def test_eval_outside_domain():
    f = gallery("identity", domain=DomainDescriptor.ball([0, 0], 1.0))
    with pytest.raises(DomainError):
        f([2.0, 0.0])


def test_jacobian_examples():
    assert np.allclose(gallery("identity").jacobian([0.3, -2.0]), np.eye(2))
    A = [[1.0, 2.0], [3.0, 4.0]]
    assert np.allclose(gallery("linear", {"matrix": A}).jacobian([5.0, 1.0]), A)
    assert np.allclose(gallery("radial", {"alpha": 3}).jacobian([1.0, 0.0]), np.diag([3.0, 1.0]))


@pytest.mark.parametrize("name,params", GALLERY_CASES)
def test_analytic_jacobian_matches_finite_differences(name, params, rng):
    f = gallery(name, params)
    X = _interior_points(f, rng)
    Ja = f.jacobian(X)
    Jf = f.jacobian(X, mode="finite-difference")
    scale = np.abs(Ja).max(axis=(1, 2), keepdims=True)
    assert np.all(np.abs(Ja - Jf) <= 1e-5 * scale)


@pytest.mark.parametrize("name,params", GALLERY_CASES)
def test_preimages_map_back(name, params, rng):
    f = gallery(name, params)
    Y = f(_interior_points(f, rng, m=50))
    for y in Y:
        P = f.preimages(y)
        assert len(P) >= 1
        assert np.allclose(f(P), y, atol=1e-9 * max(1.0, np.linalg.norm(y)))
        if name != "winding":
            assert len(P) == 1
        else:
            assert len(P) == params["k"]


def test_preimage_examples():
    assert np.allclose(gallery("identity").preimages([0.5, 0.5]), [[0.5, 0.5]])
    P = gallery("winding", {"k": 2}).preimages([4.0, 0.0])
    assert sorted(map(tuple, np.round(P, 12))) == [(-2.0, 0.0), (2.0, 0.0)]
    assert np.allclose(gallery("radial", {"alpha": 3}).preimages([8.0, 0.0]), [[2.0, 0.0]])


def test_preimages_outside_image_are_empty():
    f = gallery("radial", {"alpha": 3}, domain=DomainDescriptor.ball([0, 0], 1.0))
    assert f.preimages([8.0, 0.0]).shape == (0, 2)


def test_newton_mode_matches_analytic(rng):
    dom = DomainDescriptor.ball([0, 0], 3.0)
    fa = gallery("winding", {"k": 3}, domain=dom)
    fn = gallery("winding", {"k": 3}, domain=dom, jacobian_mode="finite-difference", preimage_mode="newton")
    for y in fa(_interior_points(fa, rng, m=5, rmin=0.5, rmax=2.5)):
        Pn, info = fn.preimages(y, return_info=True)
        Pa = fa.preimages(y)
        assert info["best_effort"] and info["mode"] == "newton"
        assert len(Pn) == len(Pa) == 3
        for p in Pa:
            assert np.min(np.linalg.norm(Pn - p, axis=1)) < 1e-7


def test_custom_callable_map():
    dom = DomainDescriptor.box([-2, -2], [2, 2])
    f = maps.SmoothMap(n=2, domain=dom, func=lambda X: np.stack([X[..., 0] + X[..., 1] ** 3, X[..., 1]], -1))
    J = f.jacobian([1.0, 1.0])
    assert np.allclose(J, [[1.0, 3.0], [0.0, 1.0]], atol=1e-6)
    P = f.preimages([2.0, 1.0])
    assert np.allclose(P, [[1.0, 1.0]], atol=1e-9)


def test_radial_alpha_one_is_identity(rng):
    f = gallery("radial", {"alpha": 1.0})
    X = _interior_points(f, rng)
    assert np.allclose(f(X), X)
    assert np.allclose(f.jacobian(X), np.eye(2))
    assert f.branch_locus.shape[0] == 0


def test_winding_branch_locus():
    f = gallery("winding", {"k": 2})
    assert np.array_equal(f.branch_locus, [[0.0, 0.0]])
    assert abs(np.linalg.det(f.jacobian([0.0, 0.0]))) == 0.0


def test_inverse_map(rng):
    f = gallery("radial", {"alpha": 3}, domain=DomainDescriptor.ball([0, 0], 2.0))
    g = maps.inverse(f)
    X = _interior_points(f, rng, rmax=1.9)
    Y = f(X)
    assert np.allclose(g(Y), X)
    assert np.allclose(g.jacobian(Y) @ f.jacobian(X), np.eye(2), atol=1e-10)
    for x in X[:5]:
        assert np.allclose(g.preimages(x), [f(x)])


@pytest.mark.parametrize("name,params", [
    ("nope", {}), ("radial", {"alpha": -1}), ("radial", {}), ("winding", {"k": 0}),
    ("winding", {"k": 1.5}), ("linear", {}), ("linear", {"matrix": [[1, 2, 3]]}),
    ("identity", {"n": 1}), ("winding", {"k": 2, "n": 3}),
])
def test_gallery_config_errors(name, params):
    with pytest.raises(ConfigError):
        gallery(name, params)


def test_domain_descriptor():
    a = DomainDescriptor.annulus([0, 0], 1.0, 2.0)
    assert list(a.contains([[1.5, 0], [0.5, 0], [2.5, 0], [2.0, 0]])) == [True, False, False, True]
    b = DomainDescriptor.box([0, 0], [1, 2])
    assert list(b.contains([[0.5, 1.9], [1.1, 0.0]])) == [True, False]
    assert DomainDescriptor.from_dict(a.to_dict()) == a
    with pytest.raises(ConfigError):
        DomainDescriptor.annulus([0, 0], 2.0, 1.0)
    with pytest.raises(InvalidInputError):
        gallery("identity")([1.0, 2.0, 3.0])


def test_auto_domain():
    f = gallery("radial", {"alpha": 3})
    dom = maps.auto_domain(f, [0, 0], 8.0)
    assert dom.radius == pytest.approx(2.0)
    assert maps.auto_domain(gallery("winding", {"k": 2}), [0, 0], 16.0).radius == pytest.approx(4.0)
