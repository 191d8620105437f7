import math

import numpy as np
import pytest
import torch

from invjko.nets import (MapEnsemble, MlpSpec, ParamVector, ensemble_from_dict, ensemble_to_dict, forward_map,
                         forward_scalar, init_params, param_from_dict, param_to_dict)


def test_init_deterministic():
    spec = MlpSpec(2)
    assert torch.equal(init_params(spec, 5).values, init_params(spec, 5).values)
    assert not torch.equal(init_params(spec, 5).values, init_params(spec, 6).values)


def test_parameter_count():
    assert MlpSpec(2, (64, 64), "softplus", 1).n_params == 4417
    assert init_params(MlpSpec(2), 0).values.shape == (4417,)


def test_layout_slices_disjoint_and_exhaustive():
    spec = MlpSpec(3, (5, 4), "selu", 2)
    covered = []
    for e in spec.layout():
        covered.extend(range(e["offset"], e["offset"] + int(np.prod(e["shape"]))))
    assert sorted(covered) == list(range(spec.n_params))


def test_weight_variance_is_one_over_fan_in():
    spec = MlpSpec(1, (100_000,), "softplus", 1)
    p = init_params(spec, 0)
    W1, b1 = p.layers()[1][0], p.layers()[0][1]
    W0 = p.layers()[0][0]
    assert abs(W0.var().item() - 1.0) / 1.0 <= 0.1
    assert abs(W1.var().item() - 1e-5) / 1e-5 <= 0.1
    assert torch.count_nonzero(b1) == 0


def test_forward_scalar_constant_output():
    spec = MlpSpec(2, (4,), "softplus", 1)
    v = torch.zeros(spec.n_params)
    v[-1] = 1.7
    p = ParamVector(spec, v)
    for x in ([0.0, 0.0], [3.0, -2.0]):
        assert float(forward_scalar(p, torch.tensor(x))) == pytest.approx(1.7)


def test_softplus_at_zero():
    spec = MlpSpec(1, (1,), "softplus", 1)
    v = torch.zeros(spec.n_params)
    v[2] = 1.0  # output weight; layout is W0, b0, W1, b1
    assert float(forward_scalar(ParamVector(spec, v), torch.zeros(1))) == pytest.approx(math.log(2), abs=1e-12)


def test_forward_scalar_matches_naive_evaluation(rng):
    spec = MlpSpec(2, (16,), "softplus", 1)
    p = init_params(spec, 9)
    v = p.values.numpy()
    W0 = v[:32].reshape(16, 2)
    b0 = rng.standard_normal(16)
    v = v.copy()
    v[32:48] = b0
    W1 = v[48:64].reshape(1, 16)
    b1 = v[64]
    p = ParamVector(spec, torch.from_numpy(v))
    for _ in range(10):
        x = rng.standard_normal(2)
        h = np.zeros(16)
        for i in range(16):
            s = b0[i] + W0[i, 0] * x[0] + W0[i, 1] * x[1]
            h[i] = math.log1p(math.exp(s))
        ref = b1 + sum(W1[0, i] * h[i] for i in range(16))
        assert float(forward_scalar(p, torch.from_numpy(x))) == pytest.approx(ref, abs=1e-12)


def test_forward_scalar_dim_mismatch():
    with pytest.raises(ValueError):
        forward_scalar(init_params(MlpSpec(2), 0), torch.zeros(3))


def test_zero_map_and_selu_zero():
    ens = MapEnsemble.create(2, 3, 0)
    ens.values = torch.zeros_like(ens.values)
    assert torch.equal(forward_map(ens, torch.tensor([1.0, 2.0]), 1), torch.zeros(2))
    spec = MlpSpec(2, (3,), "selu", 2)
    ens2 = MapEnsemble(spec, 1, False, init_params(spec, 0).values)
    assert torch.equal(ens2(torch.zeros(2), 0), torch.zeros(2))


def test_time_conditioning_changes_output():
    ens = MapEnsemble.create(2, 2, 0, hidden=(4,))
    v = torch.zeros_like(ens.values)
    # first layer weight on the time coordinate, identity-ish readout
    W0 = ens.spec.layout()[0]
    v[W0["offset"] + 2] = 1.0  # row 0, column 2 (time)
    W1 = ens.spec.layout()[2]
    v[W1["offset"]] = 1.0
    ens.values = v
    x = torch.tensor([0.3, -0.1])
    assert not torch.allclose(ens(x, 0), ens(x, 1))


def test_time_index_required_and_bounded():
    ens = MapEnsemble.create(2, 2, 0)
    with pytest.raises(ValueError):
        forward_map(ens, torch.zeros(2), None)
    with pytest.raises(IndexError):
        ens(torch.zeros(2), 2)


def test_per_step_and_shared_maps_share_signature():
    x = torch.randn(5, 2)
    for tc in (True, False):
        ens = MapEnsemble.create(2, 3, 0, time_conditioned=tc)
        assert ens(x, 2).shape == (5, 2)


def test_checkpoint_roundtrip_bit_exact(tmp_path):
    p = init_params(MlpSpec(2, (7,), "celu", 1), 3)
    q = param_from_dict(param_to_dict(p))
    assert torch.equal(p.values, q.values) and q.spec == p.spec
    e = MapEnsemble.create(2, 3, 1, time_conditioned=False)
    f = ensemble_from_dict(ensemble_to_dict(e))
    assert torch.equal(e.values, f.values) and not f.time_conditioned
