import math

import numpy as np
import pytest
import torch

from invjko.diffcore import NonFiniteError, batch_jacobian, gradient, jacobian, logabsdet
from invjko.nets import MapEnsemble, MlpSpec, init_params, mlp_apply

from conftest import central_diff, rel_err


def cofactor_det(M: np.ndarray) -> float:
    n = M.shape[0]
    if n == 1:
        return float(M[0, 0])
    return sum((-1) ** j * M[0, j] * cofactor_det(np.delete(M[1:], j, axis=1)) for j in range(n))


def test_gradient_of_square():
    g = gradient(lambda x: (x**2).sum(), torch.tensor([3.0]))
    assert g.item() == pytest.approx(6.0)


def test_gradient_logabsdet_identity():
    g = gradient(lambda m: logabsdet(m.view(2, 2))[0], torch.eye(2).flatten())
    assert torch.allclose(g.view(2, 2), torch.eye(2))


def test_gradient_two_layer_net_matches_finite_differences(rng):
    spec = MlpSpec(3, (8,), "softplus", 1)
    p = init_params(spec, 3).values
    x = torch.from_numpy(rng.standard_normal((5, 3)))

    def f(v):
        return mlp_apply(spec, torch.as_tensor(v), x).sum()

    g = gradient(f, p)
    fd = central_diff(lambda v: float(f(v)), p.numpy())
    assert rel_err(g.numpy(), fd) <= 1e-4


@pytest.mark.parametrize("op", [torch.exp, torch.tanh, torch.sin, torch.nn.functional.softplus,
                                torch.nn.functional.selu, torch.nn.functional.celu, torch.sigmoid])
def test_primitive_gradients_at_random_points(op, rng):
    xs = rng.uniform(-2, 2, size=100)
    x = torch.from_numpy(xs)
    g = gradient(lambda v: op(v).sum(), x)
    # selu/celu kink at 0 is avoided with probability 1
    fd = central_diff(lambda v: float(op(torch.from_numpy(v)).sum()), xs)
    assert np.max(np.abs(g.numpy() - fd) / np.maximum(np.abs(fd), 1e-8)) <= 1e-4


def test_gradient_non_finite_raises():
    with pytest.raises(NonFiniteError):
        gradient(lambda x: torch.log(x).sum(), torch.tensor([-1.0]))


def test_jacobian_linear_and_identity():
    assert torch.allclose(jacobian(lambda x: 2 * x, torch.ones(2)), 2 * torch.eye(2))
    assert torch.allclose(jacobian(lambda x: x, torch.zeros(4)), torch.eye(4))


def test_jacobian_shape_mismatch():
    with pytest.raises(ValueError):
        jacobian(lambda x: x[:1], torch.ones(2))


def test_jacobian_mlp_matches_finite_differences(rng):
    spec = MlpSpec(3, (16, 16), "selu", 3)
    v = init_params(spec, 1).values
    x0 = rng.standard_normal(3)
    J = jacobian(lambda x: mlp_apply(spec, v, x), torch.from_numpy(x0)).numpy()
    fd = np.stack([central_diff(lambda x: float(mlp_apply(spec, v, torch.from_numpy(x))[i]), x0) for i in range(3)])
    assert rel_err(J, fd) <= 1e-4


def test_batch_jacobian_agrees_with_pointwise(rng):
    f = lambda x: torch.stack([x[0] * x[1], torch.sin(x[0])])  # noqa: E731
    X = torch.from_numpy(rng.standard_normal((4, 2)))
    Jb = batch_jacobian(f, X)
    for i in range(4):
        assert torch.allclose(Jb[i], jacobian(f, X[i]))


def test_logabsdet_examples():
    l, s = logabsdet(torch.eye(2))
    assert float(l) == 0.0 and float(s) == 1.0
    l, s = logabsdet(torch.diag(torch.tensor([2.0, 3.0])))
    assert float(l) == pytest.approx(math.log(6), abs=1e-12) and float(s) == 1.0


def test_logabsdet_matches_cofactor(rng):
    M = rng.standard_normal((4, 4))
    det = cofactor_det(M)
    l, s = logabsdet(torch.from_numpy(M))
    assert abs(float(s) * math.exp(float(l)) - det) / abs(det) <= 1e-10


def test_logabsdet_clamps_singular():
    l, _ = logabsdet(torch.zeros(2, 2))
    assert float(l) == pytest.approx(math.log(1e-12))


def test_logabsdet_is_additive(rng):
    for _ in range(20):
        A = rng.standard_normal((3, 3)) + 3 * np.eye(3)
        B = rng.standard_normal((3, 3)) + 3 * np.eye(3)
        lab = float(logabsdet(torch.from_numpy(A @ B))[0])
        assert lab == pytest.approx(float(logabsdet(torch.from_numpy(A))[0]) + float(logabsdet(torch.from_numpy(B))[0]),
                                    abs=1e-9)


def test_nested_gradient_through_logdet_jacobian(rng):
    ens = MapEnsemble.create(2, 1, seed=4, hidden=(6,), time_conditioned=False)
    x = torch.from_numpy(rng.standard_normal(2))

    def f(v):
        v = torch.as_tensor(v)
        return logabsdet(jacobian(ens.step_fn(0, v), x))[0]

    g = gradient(f, ens.values)
    fd = central_diff(lambda v: float(f(v)), ens.values.numpy())
    assert rel_err(g.numpy(), fd) <= 1e-3
