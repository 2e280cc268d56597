"""End-to-end smoke tests for the python bindings.

The C++ test suites carry the numerical burden; here we check that the
bound surface is importable, runs a miniature train/eval flow, and maps
exceptions onto the conventional python hierarchy.
"""

import math

import numpy as np
import pytest

import s2sreid as s2s


def zero_batch(n, m, d):
    return np.zeros((n, 2, m, d), dtype=np.float64)


def test_import_surface():
    for name in s2s.__all__:
        assert hasattr(s2s, name), name
    assert issubclass(s2s.UsageError, ValueError)
    assert issubclass(s2s.DataError, IOError)
    assert issubclass(s2s.NumericalError, ArithmeticError)


def test_network_build_and_params_roundtrip():
    net = s2s.build_network(s2s.ScaleConfig.desk_scale(), seed=1)
    assert net.output_dim == 64
    p = net.params
    assert p.shape == (4048,)
    assert p.flags["C_CONTIGUOUS"] and p.std() > 0.0
    q = p.copy()
    q[0] += 1.0
    net.params = q
    assert net.params[0] == pytest.approx(p[0] + 1.0)
    with pytest.raises(ValueError):
        net.params = np.zeros(3)


def test_pairwise_hand_value():
    # one positive pair at squared distance 0.5: max(0.175 - (0.325 - 0.5), 0) = 0.35
    emb = zero_batch(2, 1, 2)
    emb[0, 1, 0, 0] = math.sqrt(0.5)
    emb[1, :, :, :] = 20.0
    pairs = [((0, 0, 0), (0, 1, 0), +1)]
    r = s2s.pairwise_loss(emb, [0, 1], pairs)
    assert r["loss"] == pytest.approx(0.35, abs=1e-12)
    assert r["active"] == 1
    assert r["units"] == 1
    assert r["grad"].shape == emb.shape


def test_triplet_degenerate_value():
    # coincident anchor/positive/negative leaves the full margin as loss
    emb = zero_batch(2, 1, 2)
    triplets = [((0, 0, 0), (0, 1, 0), (1, 1, 0))]
    r = s2s.triplet_loss(emb, [0, 1], triplets)
    assert r["loss"] == pytest.approx(1.0, abs=1e-12)
    conv = s2s.conventional_triplet_loss(emb, [0, 1], triplets)
    assert conv["loss"] == pytest.approx(1.0, abs=1e-12)


def test_total_loss_recomposes():
    rng = np.random.default_rng(7)
    emb = rng.normal(size=(3, 2, 2, 4))
    ids = [0, 1, 2]
    triplets = s2s.sample_triplets(emb, ids, s2s.MiningConfig(), seed=11)
    assert triplets == s2s.sample_triplets(emb, ids, s2s.MiningConfig(), seed=11)
    pairs = s2s.select_marginal_pairs(emb, ids)
    assert pairs and all(s in (-1, 1) for _, _, s in pairs)
    params = rng.normal(size=5)

    rep = s2s.total_loss(emb, ids, triplets, pairs, params)
    m = s2s.MarginConfig()
    expect = m.alpha * rep["l_c"] + rep["l_t"] + m.lambda_ * rep["l_p"] + m.beta * rep["reg"]
    assert rep["total"] == pytest.approx(expect, abs=1e-12)
    assert rep["grad_embeddings"].shape == emb.shape
    reg_value, reg_grad = s2s.regularization(params)
    assert rep["reg"] == pytest.approx(reg_value, abs=1e-12)
    assert np.allclose(reg_grad, 2.0 * params)


def test_direction_weight_update_hand_value():
    # single active unit with d2(a,p)=1, d2(p,n)=0.5 pulls phi down by eta
    emb = zero_batch(2, 1, 2)
    emb[0, 1, 0, 0] = 1.0              # positive
    emb[1, 1, 0] = (1.0, math.sqrt(0.5))  # negative
    emb[1, 0, 0] = (9.0, 9.0)
    triplets = [((0, 0, 0), (0, 1, 0), (1, 1, 0))]
    w = s2s.DirectionWeights()
    assert (w.psi, w.phi, w.eta) == (0.5, 0.1, 0.001)
    out = s2s.update_direction_weights(w, emb, [0, 1], triplets)
    assert out.phi == pytest.approx(0.099, abs=1e-12)
    assert out.mu == pytest.approx(0.599, abs=1e-12)
    assert out.nu == pytest.approx(0.401, abs=1e-12)
    assert out.mu + out.nu == pytest.approx(2.0 * w.psi, abs=0.0)


def test_gradient_check_passes():
    r = s2s.run_gradient_check("triplet", seed=3, instances=5)
    assert r["pass"] is True
    assert r["max_rel_err"] < r["threshold"]
    assert r["term"] == "triplet"
    assert r["instances"] == 5


def test_synth_train_eval_flow(tmp_path):
    spec = s2s.SyntheticSpec()
    spec.n_identities = 4
    spec.per_view = 2
    spec.dims = [1, 24, 8]
    spec.seed = 3
    data = s2s.generate_synthetic(spec)
    assert len(data) == 4 * 2 * 2
    data.validate()
    assert data.sample_shape() == [1, 24, 8]
    ident, view, sample = data.sample(0)
    assert ident in data.identities() and view in (0, 1)
    assert sample.shape == (1, 24, 8)

    s2s.save_dataset(data, str(tmp_path))
    again = s2s.load_dataset(str(tmp_path / "dataset.manifest"))
    assert len(again) == len(data)

    net = s2s.build_network(s2s.ScaleConfig.desk_scale(), seed=1)
    cfg = s2s.TrainConfig()
    cfg.learning_rate = 1e-3
    cfg.max_iterations = 2
    cfg.mining.ids_per_batch = 3
    cfg.mining.samples_per_view = 2
    cfg.rng_seed = 5
    trained, weights, history = s2s.train(data, net, cfg)
    assert len(history) == 2
    row = history[0]
    assert set(row) == {"iter", "total", "l_c", "l_t", "l_p", "reg",
                        "mu", "nu", "active_t", "active_p", "step"}
    assert row["iter"] == 1 and row["step"] > 0.0
    assert weights.mu + weights.nu == pytest.approx(1.0, abs=0.0)

    train_split, probe, gallery = s2s.split_protocol(data, 0.5, seed=2)
    assert len(probe) == 2 * 2 and len(gallery) == 2 * 2
    curve = s2s.cmc(probe, gallery, trained, trials=2, seed=0)
    assert curve.shape == (2,)
    assert np.all(np.diff(curve) >= 0) and curve[-1] == pytest.approx(1.0)
    score = s2s.map_score(probe, gallery, trained)
    assert 0.0 < score <= 1.0

    model_path = tmp_path / "model.s2sm"
    trained.save(str(model_path))
    loaded = s2s.load_model(str(model_path))
    assert loaded.output_dim == trained.output_dim
    assert np.array_equal(loaded.params, trained.params)


def test_exception_mapping():
    with pytest.raises(IOError):
        s2s.load_dataset("/nonexistent/dataset.manifest")
    with pytest.raises(ValueError):
        s2s.class_loss(np.zeros((2, 2, 1, 2)), [0])  # id list length mismatch
    with pytest.raises(ValueError):
        s2s.run_gradient_check("triplet", eps=0.0)

    spec = s2s.SyntheticSpec()
    spec.n_identities = 3
    spec.per_view = 2
    spec.dims = [1, 24, 8]
    data = s2s.generate_synthetic(spec)
    net = s2s.build_network(s2s.ScaleConfig.desk_scale(), seed=1)
    cfg = s2s.TrainConfig()
    cfg.learning_rate = 1e100  # guaranteed overflow within a few steps
    cfg.max_iterations = 8
    cfg.mining.ids_per_batch = 3
    cfg.mining.samples_per_view = 2
    with pytest.raises(ArithmeticError):
        s2s.train(data, net, cfg)
