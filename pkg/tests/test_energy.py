import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from invjko.energy import EnergyParams, EntropyCache, Mask, estimate_energy, kl_entropy, pushforward_entropy
from invjko.potentials import make_potential, symmetrize_kernel
from invjko.nets import layer_views


class LinearMaps:
    """Duck-typed map ensemble x -> M x, for exact change-of-variables checks."""

    def __init__(self, M):
        self.M = torch.as_tensor(M, dtype=torch.float64)

    def step_fn(self, k, values=None):
        return lambda x: self.M @ x

    def __call__(self, X, k, values=None):
        return X @ self.M.T


def make_energy(mask="V", dim=2, **kw):
    return EnergyParams.create(dim, Mask.parse(mask), 0, **kw)


def test_mask_parse():
    assert Mask.parse("V+W+U") == Mask(True, True, True)
    assert str(Mask.parse("vu")) == "VU"
    with pytest.raises(ValueError):
        Mask.parse("X")


def test_constant_potential(rng):
    th = make_energy("V")
    v = torch.zeros_like(th.values)
    v[th.v_spec.n_params - 1] = 2.5
    th.values = v
    assert float(estimate_energy(th, rng.standard_normal((7, 2)), 0.0)) == pytest.approx(2.5)


def odd_linear_kernel(th: EnergyParams, w):
    """Set the interaction net to z -> softplus(w.z) - softplus(-w.z) = w.z."""
    v = torch.zeros_like(th.values)
    blk = th.blocks(v)["theta2"]
    (W0, _), (W1, _), (W2, _) = layer_views(th.w_spec, blk)
    W0[0] = torch.as_tensor(w)
    W0[1] = -torch.as_tensor(w)
    # second hidden layer passes unit 0/1 through softplus again; use pure
    # weights so that h2 = softplus(h1) and readout h2_0 - h2_1 stays odd
    W1[0, 0] = 1.0
    W1[1, 1] = 1.0
    W2[0, 0] = 1.0
    W2[0, 1] = -1.0
    th.values = v


def test_symmetrized_odd_kernel_cancels(rng):
    th = make_energy("W", hidden=(2, 2))
    odd_linear_kernel(th, [0.7, -1.3])
    X = rng.standard_normal((6, 2))
    th.symmetrize_W = False
    Z = torch.from_numpy(rng.standard_normal((5, 2)))
    raw = th.interaction(Z)
    assert torch.allclose(raw, -th.interaction(-Z))  # odd without symmetrization
    th.symmetrize_W = True
    assert abs(float(estimate_energy(th, X, 0.0))) < 1e-12


def test_entropy_term_arithmetic():
    th = make_energy("U", theta3_init=math.log(math.exp(2.0) - 1.0))
    assert th.theta3 == pytest.approx(2.0)
    assert float(estimate_energy(th, np.zeros((3, 2)), 1.5)) == pytest.approx(-3.0)


def test_interaction_needs_pairs():
    with pytest.raises(ValueError):
        estimate_energy(make_energy("W"), np.zeros((1, 2)), 0.0)


def test_energy_permutation_invariant(rng):
    th = make_energy("VWU")
    X = rng.standard_normal((9, 2))
    perm = rng.permutation(9)
    assert float(estimate_energy(th, X, 0.4)) == pytest.approx(float(estimate_energy(th, X[perm], 0.4)), abs=1e-12)


def test_symmetrized_interaction_even(rng):
    th = make_energy("W")
    Z = torch.from_numpy(rng.standard_normal((20, 2)))
    assert torch.allclose(th.interaction(Z), th.interaction(-Z), atol=1e-14)


def test_kl_entropy_gaussian(rng):
    h = kl_entropy(rng.standard_normal((10_000, 2)))
    assert abs(h - math.log(2 * math.pi * math.e)) <= 0.05


def test_kl_entropy_uniform(rng):
    assert abs(kl_entropy(rng.uniform(size=(10_000, 2)))) <= 0.05


def test_kl_entropy_scaling_and_translation(rng):
    X = rng.standard_normal((10_000, 2))
    h = kl_entropy(X)
    assert kl_entropy(2 * X) - h == pytest.approx(2 * math.log(2), abs=0.02)
    assert kl_entropy(X + np.array([5.0, -3.0])) == pytest.approx(h, abs=1e-9)


def test_kl_entropy_errors(rng):
    with pytest.raises(ValueError):
        kl_entropy(rng.standard_normal((5, 2)), k=5)


def test_kl_entropy_handles_duplicates(rng):
    X = rng.standard_normal((200, 2))
    X[1] = X[0]
    assert math.isfinite(kl_entropy(X))


def test_pushforward_entropy_linear(rng):
    X = torch.from_numpy(rng.standard_normal((10, 2)))
    assert float(pushforward_entropy(1.0, LinearMaps(np.eye(2)), 0, X)) == pytest.approx(1.0)
    assert float(pushforward_entropy(1.0, LinearMaps(2 * np.eye(2)), 0, X)) == pytest.approx(1 + 2 * math.log(2))
    for _ in range(5):
        M = rng.standard_normal((2, 2))
        expected = math.log(abs(np.linalg.det(M)))
        assert float(pushforward_entropy(0.0, LinearMaps(M), 0, X)) == pytest.approx(expected, abs=1e-12)


def test_pushforward_composition(rng):
    M1, M2 = rng.standard_normal((2, 2)), rng.standard_normal((2, 2))
    X = torch.from_numpy(rng.standard_normal((8, 2)))
    h1 = pushforward_entropy(0.3, LinearMaps(M1), 0, X)
    h2 = pushforward_entropy(h1, LinearMaps(M2), 0, X @ torch.from_numpy(M1).T)
    assert float(h2) == pytest.approx(float(pushforward_entropy(0.3, LinearMaps(M2 @ M1), 0, X)), abs=1e-9)


def test_symmetrize_kernel_examples(rng):
    odd = symmetrize_kernel(lambda z: z[:, 0])
    z = rng.standard_normal((10, 1))
    assert np.allclose(odd(z), 0.0)
    sq = symmetrize_kernel(lambda z: np.sum(z**2, axis=1))
    assert np.allclose(sq(z), np.sum(z**2, axis=1))
    st_ = symmetrize_kernel(make_potential("styblinski_tang").value)
    z = rng.uniform(-5, 5, size=(1000, 2))
    assert np.max(np.abs(st_(z) - st_(-z))) <= 1e-12


@settings(max_examples=25, deadline=None)
@given(st.floats(-10, 10), st.floats(-10, 10))
def test_kl_entropy_translation_property(a, b):
    X = np.random.default_rng(1).standard_normal((300, 2))
    assert kl_entropy(X + [a, b]) == pytest.approx(kl_entropy(X), abs=1e-8)


def test_entropy_cache_roundtrip(tmp_path, rng):
    cache = EntropyCache.compute([rng.standard_normal((50, 2)) for _ in range(3)])
    cache.save(tmp_path / "entropy.json")
    back = EntropyCache.load(tmp_path / "entropy.json")
    assert back.estimates == cache.estimates and back.neighbors == 5 and back.counts == [50, 50, 50]
