import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from w2vlab.autodiff import Tensor, Parameter, mse, no_grad
from w2vlab.pca import fit_pca
from w2vlab.w2v import (
    W2VArch, W2VBuildError, W2VTrainConfig, append_ledger_row, build_baseline, build_w2v, load_w2v, mlp_params,
    parameter_checksum, predict_voltage, save_w2v, solve_mlp_width, train_w2v, w2v_forward, w2v_loss,
)
from w2vlab.weatherfield import feature_columns

from _oracles import central_diff, rank_k_dataset, rel_err

ONE_PER_BLOCK = {"temperature": 1, "wind": 1, "ghi": 1}


@pytest.fixture(scope="module")
def rank_k():
    ds = rank_k_dataset()
    wtr, _ = ds.subset("random", "train")
    return ds, fit_pca(wtr, feature_columns(ds.n_locations), n_components=ONE_PER_BLOCK)


@pytest.fixture(scope="module")
def small_pca(small_dataset):
    wtr, _ = small_dataset.subset("random", "train")
    return fit_pca(wtr, feature_columns(small_dataset.n_locations), 0.08)


def arch_for(ds, pca, **kw):
    return W2VArch(ds.W, ds.B, pca.K, **{"hidden_w": 16, "hidden_v": 24, **kw})


def test_pca_encoder_equals_projection(small_dataset, small_pca):
    m = build_w2v(arch_for(small_dataset, small_pca), small_pca, seed=0)
    x = np.random.default_rng(0).normal(size=(13, small_dataset.W))
    with no_grad():
        z = m.encode(Tensor(x)).data
    assert np.max(np.abs(z - small_pca.project(x))) < 1e-12
    with no_grad():
        z_mu = m.encode(Tensor(small_pca.mean[None])).data
    assert np.max(np.abs(z_mu)) < 1e-12


def test_residual_block_keeps_warm_start(small_dataset, small_pca):
    m = build_w2v(arch_for(small_dataset, small_pca, encoder_hidden=8), small_pca, seed=0)
    x = small_dataset.weather[:5]
    with no_grad():
        assert np.max(np.abs(m.encode(Tensor(x)).data - small_pca.project(x))) < 1e-12


def test_dimension_mismatch(small_dataset, small_pca):
    with pytest.raises(W2VBuildError, match="K="):
        build_w2v(W2VArch(small_dataset.W, small_dataset.B, small_pca.K + 1), small_pca)
    m = build_w2v(arch_for(small_dataset, small_pca), small_pca)
    with pytest.raises(W2VBuildError, match="weather columns"):
        m(np.ones((2, small_dataset.W + 1)))


def test_same_seed_same_parameters_and_shared_decoders(small_dataset, small_pca):
    arch = arch_for(small_dataset, small_pca)
    a, b = build_w2v(arch, small_pca, 3), build_w2v(arch, small_pca, 3)
    assert parameter_checksum(a) == parameter_checksum(b)
    rnd = build_baseline("ae_random", arch, 3)
    for (na, pa), (nr, pr) in zip(a.named_parameters(), rnd.named_parameters()):
        assert na == nr and pa.shape == pr.shape
        if not na.startswith("encoder"):
            assert np.array_equal(pa.data, pr.data)


def test_batch_independence(small_dataset, small_pca):
    m = build_w2v(arch_for(small_dataset, small_pca), small_pca, 0)
    x = small_dataset.weather[:9]
    with no_grad():
        full = [t.data for t in w2v_forward(m, x)]
        for i in (0, 4, 8):
            one = [t.data for t in w2v_forward(m, x[i:i + 1])]
            for f, o in zip(full, one):
                assert np.max(np.abs(f[i] - o[0])) < 1e-12


def test_voltage_mse_gradient_wrt_weather(small_dataset, small_pca):
    m = build_w2v(arch_for(small_dataset, small_pca, encoder_hidden=8), small_pca, 0)
    rng = np.random.default_rng(1)
    w0 = small_dataset.weather[:6] + 0.01 * rng.normal(size=(6, small_dataset.W))
    v = small_dataset.voltage[:6]
    wp = Parameter(w0)
    mse(m.voltage(wp), Tensor(v)).backward()

    def f(w):
        with no_grad():
            return float(mse(m.voltage(Tensor(w)), Tensor(v)).data)

    assert rel_err(wp.grad, central_diff(f, w0)) < 1e-5


def test_loss_decomposition(small_dataset, small_pca):
    w, v = small_dataset.weather[:20], small_dataset.voltage[:20]
    m = build_w2v(arch_for(small_dataset, small_pca, lam=0.8), small_pca, 0)
    with no_grad():
        total, l_v, l_w = w2v_loss(m, w, v)
        _, w_hat, v_hat = m(w)
    assert float(l_v.data) == pytest.approx(np.mean((v_hat.data - v) ** 2), rel=1e-13)
    assert float(l_w.data) == pytest.approx(np.mean((w_hat.data - w) ** 2), rel=1e-13)
    assert float(total.data) == pytest.approx(float(l_v.data) + 0.8 * float(l_w.data), rel=1e-13)
    m.lam = 0.0
    with no_grad():
        total0, l_v0, _ = w2v_loss(m, w, v)
    assert float(total0.data) == float(l_v0.data)


def test_perfect_fit_gives_zero_loss(small_dataset, small_pca):
    m = build_w2v(arch_for(small_dataset, small_pca), small_pca, 0)
    w = small_dataset.weather[:4]
    with no_grad():
        _, _, v_hat = m(w)
        m.lam = 0.0
        total, l_v, _ = w2v_loss(m, w, v_hat.data)
    assert float(total.data) == 0.0 and float(l_v.data) == 0.0


def test_zero_epochs_echo_initial_losses(rank_k):
    ds, pca = rank_k
    m = build_w2v(arch_for(ds, pca), pca, 0)
    r = train_w2v(m, ds, W2VTrainConfig(epochs=0))
    assert len(r.history) == 1 and r.best_epoch == 0 and r.epochs_run == 0
    w, v = ds.subset("random", "val")
    with no_grad():
        total, _, _ = w2v_loss(m, w, v)
    assert r.history[0]["val_total"] == float(total.data)


def test_training_deterministic(rank_k):
    ds, pca = rank_k
    cfg = W2VTrainConfig(epochs=5, seed=4)
    ra = train_w2v(build_w2v(arch_for(ds, pca), pca, 1), ds, cfg)
    rb = train_w2v(build_w2v(arch_for(ds, pca), pca, 1), ds, cfg)
    assert ra == rb


def test_best_epoch_is_min_validation(rank_k):
    ds, pca = rank_k
    m = build_w2v(arch_for(ds, pca), pca, 0)
    r = train_w2v(m, ds, W2VTrainConfig(epochs=30, lr=3e-3, seed=0))
    vals = [row["val_total"] for row in r.history]
    assert r.best_epoch == int(np.argmin(vals))
    w, v = ds.subset("random", "val")
    with no_grad():
        total, _, _ = w2v_loss(m, w, v)
    assert float(total.data) == r.final_val == min(vals)


TRAIN = W2VTrainConfig(epochs=300, lr=3e-3, batch_size=32, seed=0, min_delta=1e-12)


def test_rank_k_map_recovered_by_pca_w2v(rank_k):
    ds, pca = rank_k
    m = build_w2v(W2VArch(ds.W, ds.B, 3, 32, 32, lam=0.0), pca, 0)
    assert train_w2v(m, ds, TRAIN).test["rmse_norm"] < 1e-3


@pytest.mark.parametrize("kind", ["ae_random", "mlp3"])
def test_rank_k_map_baselines(rank_k, kind):
    ds, _ = rank_k
    m = build_baseline(kind, W2VArch(ds.W, ds.B, 3, 32, 32, lam=0.0), 0)
    assert train_w2v(m, ds, TRAIN).test["rmse_norm"] < 1e-2


def test_mlp3_parameter_budget(desk_dataset):
    arch = W2VArch(desk_dataset.W, desk_dataset.B, 13, 32, 128)
    w2v = build_w2v(arch, None, 0)
    mlp = build_baseline("mlp3", arch, 0)
    assert abs(mlp.num_parameters() - w2v.num_parameters()) <= 0.10 * w2v.num_parameters()
    assert mlp.num_parameters() == mlp_params(arch.W, arch.B, mlp.hidden)
    assert len(mlp.net.layers) == 4


def test_mlp_width_unreachable():
    with pytest.raises(W2VBuildError, match="widths"):
        solve_mlp_width(1000, 1000, 50)


def test_unknown_baseline(small_dataset, small_pca):
    with pytest.raises(W2VBuildError, match="unknown baseline"):
        build_baseline("cnn", arch_for(small_dataset, small_pca))


@pytest.mark.parametrize("kind", ["w2v", "mlp3"])
def test_checkpoint_roundtrip(tmp_path, small_dataset, small_pca, kind):
    arch = arch_for(small_dataset, small_pca, encoder_hidden=4)
    m = build_w2v(arch, small_pca, 2) if kind == "w2v" else build_baseline("mlp3", arch, 2)
    back = load_w2v(save_w2v(tmp_path / "m.npz", m, meta={"seed": 2}))
    assert parameter_checksum(back) == parameter_checksum(m)
    x = small_dataset.weather[:7]
    assert np.array_equal(predict_voltage(back, x), predict_voltage(m, x))


def test_predict_voltage_batching(small_dataset, small_pca):
    m = build_w2v(arch_for(small_dataset, small_pca), small_pca, 0)
    x = small_dataset.weather[:50]
    # BLAS blocking may differ per batch size in the last ulp
    np.testing.assert_allclose(predict_voltage(m, x, batch=7), predict_voltage(m, x), rtol=0, atol=1e-12)
    assert predict_voltage(m, x.reshape(5, 10, -1)).shape == (5, 10, small_dataset.B)


def test_ledger_rows(tmp_path):
    p = tmp_path / "runs.csv"
    append_ledger_row(p, {"kind": "w2v", "rmse": 0.1})
    append_ledger_row(p, {"kind": "mlp3", "rmse": 0.2})
    assert p.read_text().splitlines() == ["kind,rmse", "w2v,0.1", "mlp3,0.2"]


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**16), lam=st.floats(0, 5))
def test_loss_components_non_negative(small_dataset, small_pca, seed, lam):
    m = build_w2v(arch_for(small_dataset, small_pca, lam=lam), None, seed)
    with no_grad():
        total, l_v, l_w = w2v_loss(m, small_dataset.weather[:10], small_dataset.voltage[:10])
    assert float(l_v.data) >= 0 and float(l_w.data) >= 0
    assert float(total.data) == pytest.approx(float(l_v.data) + lam * float(l_w.data), rel=1e-12, abs=1e-15)
