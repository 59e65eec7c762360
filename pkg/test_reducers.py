#!/usr/bin/env python3
"""
Tests for PCA, the three networks, inference and model persistence.
"""
import math
import tempfile
from pathlib import Path

import numpy as np
import pandas as pd

from errors import ConfigError, KindMismatch, ParseError
from fixtures import make_city, synthetic_table
from models import EmbeddingTable, FilteredVocabulary, ReducerSpec, Vocabulary
from nnkit import Tensor, grad_check, gaussian_kl
from reducers import (VaeLstm, build_network, export_latent, fit_pca, fit_reducer, jacobi_eigh, load_model,
                      network_loss, reconstruct, save_model, trace_frame, transform)

NET_SETTINGS = dict(hidden_dims=(32, 16, 8), batch_size=50, lr=5e-3, lstm_steps=5, lstm_features=8, lstm_hidden=16)


def _table(vectors):
    words = [f"w{i}" for i in range(len(vectors))]
    return EmbeddingTable(vocabulary=Vocabulary(words=words), vectors=np.asarray(vectors, dtype=np.float64))


def _random_orthonormal(rng, dim, k):
    q, _ = np.linalg.qr(rng.normal(size=(dim, k)))
    return q.T


def test_jacobi_matches_numpy():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(8, 8))
    matrix = a @ a.T
    values, vectors = jacobi_eigh(matrix)
    expected = np.linalg.eigh(matrix)[0][::-1]
    assert np.allclose(values, expected, rtol=1e-10)
    assert np.allclose(matrix @ vectors, vectors * values, atol=1e-9)
    assert np.allclose(vectors.T @ vectors, np.eye(8), atol=1e-10)


def test_pca_matches_brute_force_oracle():
    rng = np.random.default_rng(1)
    for n, dim in ((60, 10), (200, 20), (120, 30), (80, 40), (150, 50)):
        X = rng.normal(size=(n, dim)) @ rng.normal(size=(dim, dim)) + rng.normal(size=dim)
        model = fit_pca(_table(X), ReducerSpec(kind="pca"))
        projected = transform(model, X)
        variances = projected.var(axis=0, ddof=1)
        oracle = np.linalg.eigh(np.cov(X, rowvar=False))[0][::-1][:2]
        assert np.all(np.abs(variances - oracle) / oracle < 1e-8)

        mean = X.mean(axis=0)
        pca_error = np.sum((reconstruct(model, X) - X) ** 2)
        for _ in range(100):
            basis = _random_orthonormal(rng, dim, 2)
            random_error = np.sum(((X - mean) @ basis.T @ basis + mean - X) ** 2)
            assert pca_error <= random_error * (1.0 + 1e-12)


def test_jacobi_off_diagonal_tolerance():
    rng = np.random.default_rng(8)
    a = rng.uniform(-1.0, 1.0, size=(6, 6))
    unit = (a + a.T) / 4.0
    assert np.max(np.abs(unit)) <= 1.0
    values, vectors = jacobi_eigh(unit)
    rotated = vectors.T @ unit @ vectors
    assert np.max(np.abs(rotated - np.diag(np.diag(rotated)))) < 1e-12
    assert np.allclose(np.diag(rotated), values, atol=1e-12)

    scaled = unit * 1e6
    values, vectors = jacobi_eigh(scaled)
    rotated = vectors.T @ scaled @ vectors
    assert np.max(np.abs(rotated - np.diag(np.diag(rotated)))) < 1e-12 * np.max(np.abs(scaled))
    assert np.allclose(vectors.T @ vectors, np.eye(6), atol=1e-12)


def test_pca_scores_are_uncorrelated():
    rng = np.random.default_rng(5)
    for dim in (3, 8, 25):
        X = rng.normal(size=(150, dim)) @ rng.normal(size=(dim, dim))
        projected = transform(fit_pca(_table(X), ReducerSpec(kind="pca")), X)
        covariance = np.cov(projected, rowvar=False)
        assert abs(covariance[0, 1]) <= 1e-9 * math.sqrt(covariance[0, 0] * covariance[1, 1])
        assert covariance[0, 0] >= covariance[1, 1]


def test_pca_full_rank_rotation_preserves_distances():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(30, 2)) * [3.0, 1.0]
    X -= X.mean(axis=0)
    projected = transform(fit_pca(_table(X), ReducerSpec(kind="pca")), X)
    before = np.linalg.norm(X[:, None] - X[None], axis=2)
    after = np.linalg.norm(projected[:, None] - projected[None], axis=2)
    assert np.allclose(before, after, atol=1e-10)


def test_pca_planar_points_in_five_dimensions():
    X = np.array([[1.0, 2.0, 0.0, 0.0, 1.0], [3.0, -1.0, 0.0, 0.0, 2.0], [0.0, 0.0, 0.0, 0.0, -2.0]])
    model = fit_pca(_table(X), ReducerSpec(kind="pca"))
    total = transform(model, X).var(axis=0, ddof=1).sum()
    oracle = np.linalg.eigh(np.cov(X, rowvar=False))[0][::-1][:2].sum()
    assert abs(total - oracle) / oracle < 1e-8


def test_pca_identical_points_are_degenerate():
    model = fit_pca(_table(np.ones((5, 4))), ReducerSpec(kind="pca"))
    assert model.degenerate
    assert transform(model, np.ones((2, 4))).shape == (2, 2)


def test_transform_basics():
    table = synthetic_table(n=50, dim=6)
    none = fit_reducer(table, ReducerSpec(kind="none"))
    assert np.array_equal(transform(none, table.vectors), table.vectors)

    pca = fit_reducer(table, ReducerSpec(kind="pca"))
    mean = pca.parameters["mean"][None, :]
    assert np.allclose(transform(pca, mean), 0.0, atol=1e-12)
    assert np.array_equal(transform(pca, table.vectors), transform(pca, table.vectors))


def test_zero_epoch_network_is_usable():
    table = synthetic_table(n=40, dim=40)
    for kind in ("ae", "vae", "vae-lstm"):
        model = fit_reducer(table, ReducerSpec(kind=kind, epochs=0, **NET_SETTINGS))
        assert len(model.training_trace) == 1 and model.training_trace[0].epoch == 0
        assert transform(model, table.vectors).shape == (40, 2)


def test_initial_trace_row_uses_the_mean_path():
    table = synthetic_table(n=40, dim=40)
    for kind in ("ae", "vae", "vae-lstm"):
        model = fit_reducer(table, ReducerSpec(kind=kind, epochs=0, **NET_SETTINGS))
        first = model.training_trace[0]
        assert abs(first.recon - model.recon_mse) <= 1e-12 * max(1.0, model.recon_mse), kind
        again = fit_reducer(table, ReducerSpec(kind=kind, epochs=0, **NET_SETTINGS)).training_trace[0]
        assert (again.loss, again.recon, again.kl) == (first.loss, first.recon, first.kl)


def test_network_training_is_deterministic():
    table = synthetic_table(n=60, dim=40)
    for kind in ("ae", "vae"):
        spec = ReducerSpec(kind=kind, epochs=2, seed=11, **NET_SETTINGS)
        first, second = fit_reducer(table, spec), fit_reducer(table, spec)
        assert first.parameters.keys() == second.parameters.keys()
        assert all(np.array_equal(first.parameters[k], second.parameters[k]) for k in first.parameters)


def test_networks_halve_reconstruction_error():
    table = synthetic_table(seed=0, n=500, dim=40)
    for kind, epochs in (("ae", 200), ("vae", 200), ("vae-lstm", 60)):
        model = fit_reducer(table, ReducerSpec(kind=kind, epochs=epochs, seed=0, **NET_SETTINGS))
        initial = model.training_trace[0].recon
        assert model.recon_mse < 0.5 * initial, f"{kind}: {model.recon_mse} vs initial {initial}"


def test_vae_loss_descends_and_kl_is_non_negative():
    table = synthetic_table(seed=0, n=500, dim=40)
    model = fit_reducer(table, ReducerSpec(kind="vae", epochs=15, seed=0, **NET_SETTINGS))
    losses = [row.loss for row in model.training_trace[1:]]
    averages = [sum(losses[i:i + 3]) / 3 for i in range(len(losses) - 2)]
    assert all(b <= a + 1e-12 for a, b in zip(averages, averages[1:]))

    held_out = synthetic_table(seed=99, n=100, dim=40).vectors
    net = build_network(model.spec, 40)
    params = {k: Tensor(v) for k, v in model.parameters.items()}
    mu, logvar = net.encode(Tensor(held_out), params)
    kl = gaussian_kl(mu, logvar).item()
    assert np.isfinite(kl) and kl >= 0.0


def test_vae_without_kl_weight_is_plain_reconstruction():
    spec = ReducerSpec(kind="vae", kl_weight=0.0, **NET_SETTINGS)
    net = build_network(spec, 40)
    params = {k: Tensor(v) for k, v in net.init_parameters(np.random.default_rng(0)).items()}
    x = synthetic_table(n=20, dim=40).vectors
    noise = np.random.default_rng(1).normal(size=(20, 2))
    total, recon, kl = net.loss(Tensor(x), params, noise)
    assert total.item() == recon.item() and kl.item() > 0.0


def test_vae_lstm_chunking():
    VaeLstm(ReducerSpec(kind="vae-lstm", lstm_steps=25, lstm_features=8), 200)
    try:
        VaeLstm(ReducerSpec(kind="vae-lstm", lstm_steps=30, lstm_features=7), 200)
        assert False, "expected ConfigError"
    except ConfigError:
        pass


def test_full_network_gradients():
    small = dict(hidden_dims=(8, 6, 4), lstm_steps=5, lstm_features=2, lstm_hidden=4)
    for kind in ("ae", "vae", "vae-lstm"):
        spec = ReducerSpec(kind=kind, **small)
        net = build_network(spec, 10)
        for seed in (0, 1, 2):
            rng = np.random.default_rng(seed)
            point = net.init_parameters(rng)
            for name, value in point.items():
                if name.endswith(".b"):
                    point[name] = rng.normal(scale=0.1, size=value.shape)
            x = rng.normal(size=(3, 10))
            noise = rng.normal(size=(3, 2)) if net.variational else None
            error = grad_check(lambda p: network_loss(net, p, x, noise), point, atol=1e-9)
            assert error < 1e-4, f"{kind} seed {seed}: {error}"


def test_model_round_trip_for_every_kind():
    table = synthetic_table(n=30, dim=40)
    probe = np.random.default_rng(4).normal(size=(5, 40))
    with tempfile.TemporaryDirectory() as tmp:
        for kind in ("none", "pca", "ae", "vae", "vae-lstm"):
            model = fit_reducer(table, ReducerSpec(kind=kind, epochs=1, **NET_SETTINGS))
            path = save_model(model, Path(tmp) / f"model_{kind}.txt")
            loaded = load_model(path, expected_kind=kind)
            assert loaded.spec == model.spec
            assert loaded.recon_mse == model.recon_mse
            assert loaded.training_trace == model.training_trace
            assert np.allclose(transform(loaded, probe), transform(model, probe), rtol=0, atol=1e-15)


def test_model_file_errors():
    table = synthetic_table(n=30, dim=6)
    with tempfile.TemporaryDirectory() as tmp:
        path = save_model(fit_reducer(table, ReducerSpec(kind="pca")), Path(tmp) / "model_pca.txt")
        try:
            load_model(path, expected_kind="ae")
            assert False, "expected KindMismatch"
        except KindMismatch:
            pass

        lines = path.read_text(encoding="utf-8").splitlines()
        truncated = Path(tmp) / "truncated.txt"
        truncated.write_text("\n".join(lines[:len(lines) // 2]) + "\n", encoding="utf-8")
        try:
            load_model(truncated)
            assert False, "expected ParseError"
        except ParseError:
            pass


def test_trace_and_latent_export():
    table = synthetic_table(n=30, dim=6)
    model = fit_reducer(table, ReducerSpec(kind="pca"))
    assert list(trace_frame(fit_reducer(synthetic_table(n=30, dim=40),
                                        ReducerSpec(kind="ae", epochs=2, **NET_SETTINGS))).columns) == \
        ["epoch", "loss", "recon", "kl"]

    city = make_city(table.words[1], 10.0, 20.0, row=0)
    fvocab = FilteredVocabulary(words=table.words[:3], city_index={table.words[1]: [city]})
    with tempfile.TemporaryDirectory() as tmp:
        frame = pd.read_csv(export_latent(model, table, fvocab, Path(tmp) / "latent_pca.csv"))
        assert list(frame.columns) == ["word", "x", "y", "is_city"]
        assert frame["is_city"].tolist() == [0, 1, 0]


def main():
    """Run all tests."""
    print("🚀 Running reducer tests...\n")
    tests = [
        test_jacobi_matches_numpy,
        test_jacobi_off_diagonal_tolerance,
        test_pca_matches_brute_force_oracle,
        test_pca_scores_are_uncorrelated,
        test_pca_full_rank_rotation_preserves_distances,
        test_pca_planar_points_in_five_dimensions,
        test_pca_identical_points_are_degenerate,
        test_transform_basics,
        test_zero_epoch_network_is_usable,
        test_initial_trace_row_uses_the_mean_path,
        test_network_training_is_deterministic,
        test_networks_halve_reconstruction_error,
        test_vae_loss_descends_and_kl_is_non_negative,
        test_vae_without_kl_weight_is_plain_reconstruction,
        test_vae_lstm_chunking,
        test_full_network_gradients,
        test_model_round_trip_for_every_kind,
        test_model_file_errors,
        test_trace_and_latent_export,
    ]

    passed = 0
    for test in tests:
        try:
            test()
            print(f"✅ {test.__name__}")
            passed += 1
        except Exception as e:
            print(f"❌ {test.__name__}: {e!r}")

    print(f"\n📊 Test Results: {passed}/{len(tests)} tests passed")
    return passed == len(tests)


if __name__ == "__main__":
    main()
