"""Acceptance gate: one PASS/FAIL line per criterion, at the stated tolerances.

The summary block is printed at the end of the pytest run. Criterion 7 trains
nine small models and dominates the runtime (roughly 12 minutes on one core).
"""

import time

import numpy as np
import pytest
from threadpoolctl import threadpool_limits

from trendgcn import autodiff as ad
from trendgcn.adversary import (
    AdvConfig,
    MlpDiscriminator,
    build_graph_sample,
    build_seq_sample,
    forward_difference,
    frozen,
    gen_adv_loss,
    l1_prediction_loss,
    reflect_prediction,
    trend_loss,
)
from trendgcn.autodiff import Tensor
from trendgcn.cli import main
from trendgcn.dagg import EmbeddingBank, GraphGenConfig, build_adjacency, expand_terms, weighted_terms
from trendgcn.data import (
    SpatialTemporalSeries,
    load_container,
    metrics,
    save_container,
    split_bounds,
    synthesize,
)
from trendgcn.selfcheck import run_gradcheck, toy_model
from trendgcn.training import TrainConfig, ablate, fit, noise_run


@pytest.fixture(autouse=True)
def single_thread():
    with threadpool_limits(limits=1):
        yield


def test_criterion_01_gradient_oracle(criterion):
    t0 = time.perf_counter()
    results = run_gradcheck(seed=0, eps=1e-5)
    elapsed = time.perf_counter() - t0
    worst = max(results, key=lambda r: r.max_rel_err)
    composed = [r for r in results if r.name == "composed_loss"][0]
    ok = all(r.max_rel_err < 1e-4 for r in results) and elapsed < 30
    criterion(1, ok, f"{len(results)} cases, worst {worst.name} {worst.max_rel_err:.2e}, "
                     f"composed loss {composed.max_rel_err:.2e}, {elapsed:.1f}s")


def test_criterion_02_expansion_identity(criterion):
    t0 = time.perf_counter()
    cfg = GraphGenConfig(layer_norm_enabled=False, dropout_rate=0.0)
    worst = 0.0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        n, d_e = int(rng.integers(2, 9)), int(rng.integers(1, 7))
        bank = EmbeddingBank.init(n, 12, d_e, cfg, rng, np.float64)
        t = int(rng.integers(1, 13))
        recon = weighted_terms(expand_terms(bank, t, cfg), 1.0, 1.0, 1.0).data
        worst = max(worst, float(np.max(np.abs(recon - build_adjacency(bank, t, cfg).scores.data))))
    elapsed = time.perf_counter() - t0
    criterion(2, worst <= 1e-10 and elapsed < 5, f"max |expansion - scores| {worst:.1e} over 100 seeds, {elapsed:.2f}s")


def test_criterion_03_static_special_case(criterion):
    cfg = GraphGenConfig(layer_norm_enabled=False, dropout_rate=0.0)
    bank = EmbeddingBank.init(8, 12, 6, cfg, np.random.default_rng(0), np.float64)
    mats = [weighted_terms(expand_terms(bank, t, cfg), 1.0, 0.0, 0.0).data for t in range(1, 13)]
    dev_terms = max(float(np.max(np.abs(m - mats[0]))) for m in mats)
    static_cfg = GraphGenConfig(static=True)
    bank2 = EmbeddingBank.init(8, 12, 6, static_cfg, np.random.default_rng(1), np.float64)
    adj = [build_adjacency(bank2, t, static_cfg).scores.data for t in range(1, 13)]
    dev_flag = max(float(np.max(np.abs(a - adj[0]))) for a in adj)
    criterion(3, dev_terms == 0.0 and dev_flag == 0.0,
              f"max deviation across t: weighted terms {dev_terms}, static flag {dev_flag}")


def test_criterion_04_reflection_oracle(criterion):
    rng = np.random.default_rng(0)
    exact, worst_trend, separated, deviating = True, 0.0, 0, 0
    for _ in range(1000):
        shape = (int(rng.integers(2, 13)), int(rng.integers(1, 6)))
        # dyadic grid so that 2*truth - pred and the sums are exact in float64
        truth = rng.integers(-2 ** 20, 2 ** 20, size=shape) / 2.0 ** 10
        pred = rng.integers(-2 ** 20, 2 ** 20, size=shape) / 2.0 ** 10
        refl = reflect_prediction(truth, pred)
        exact &= l1_prediction_loss(truth, pred).item() == l1_prediction_loss(truth, refl).item()
        m, m_hat, m_tilde = (forward_difference(v) for v in (truth, pred, refl))
        worst_trend = max(worst_trend, float(np.max(np.abs(m_tilde - (2 * m - m_hat)))))
        if np.any(m_hat != m):
            deviating += 1
            separated += trend_loss(pred, refl) > 0
    ok = exact and worst_trend <= 1e-12 and separated == deviating
    criterion(4, ok, f"L1 equal on all pairs: {exact}; trend identity err {worst_trend:.1e}; "
                     f"trend_loss separates {separated}/{deviating} deviating pairs")


def test_criterion_05_normalisation_invariants(criterion):
    cfg = GraphGenConfig()
    bank = EmbeddingBank.init(16, 12, 6, cfg, np.random.default_rng(0))
    adj_err = max(float(np.max(np.abs(build_adjacency(bank, t, cfg, training=True, rng=ad.CounterRNG(t))
                                       .normalized.data.sum(axis=1) - 1.0))) for t in range(1, 13))
    g = build_graph_sample(np.random.default_rng(1).normal(size=(8, 12, 16)).astype(np.float32)).data
    graph_err = float(np.max(np.abs(g.sum(axis=-1) - 1.0)))
    d = MlpDiscriminator(24, seed=0)
    scores = d(1e3 * np.random.default_rng(2).normal(size=(500, 24)).astype(np.float32)).data
    in_open = bool(np.all(scores > 0) and np.all(scores < 1))
    series, _ = synthesize(6, 600, seed=0)
    res = fit(TrainConfig(hidden=8, d_e=2, epochs=1, batch_size=32, max_batches=5), series)
    total_err = max(abs(r["l_total"] - (r["l_p"] + r["l_adv"])) for r in res.loss_log)
    ok = adj_err <= 1e-6 and graph_err <= 1e-6 and in_open and total_err <= 1e-6
    criterion(5, ok, f"adjacency row err {adj_err:.1e}, graph-sample row err {graph_err:.1e}, "
                     f"D scores in (0,1): {in_open}, |l_total - l_p - l_adv| {total_err:.1e}")


def test_criterion_06_generator_loss_constancy(criterion):
    model, d_seq, d_graph, x, y = toy_model(0)
    adv = AdvConfig(alpha=0.01, beta=1.0)
    hist, fut = x[..., 0], y[..., 0]

    def grads(full):
        for p in model.parameters():
            p.grad = None
        with frozen(d_seq, d_graph):
            pred0 = model.forward(Tensor(x))[..., 0]
            fake_s, fake_g = build_seq_sample(hist, pred0), build_graph_sample(pred0)
            if full:
                loss = gen_adv_loss(d_seq, d_graph, build_seq_sample(hist, fut), fake_s,
                                    build_graph_sample(fut), fake_g, adv)
            else:
                flat = ad.reshape(fake_g, (fake_g.shape[0], fake_g.shape[1] * fake_g.shape[2]))
                loss = ad.add(ad.scale(ad.mean(ad.log(d_seq(fake_s), floor=1e-12)), -adv.alpha),
                              ad.scale(ad.mean(ad.log(d_graph(flat), floor=1e-12)), -adv.beta))
            loss.backward()
        return [p.grad.copy() for p in model.parameters()]

    diff = max(float(np.max(np.abs(a - b))) for a, b in zip(grads(True), grads(False)))
    criterion(6, diff <= 1e-10, f"max |grad(full) - grad(fake-only)| {diff:.1e}")


def test_criterion_07_direction_of_effect(criterion):
    t0 = time.perf_counter()
    wins_static, wins_adv, lines = 0, 0, []
    for seed in (0, 1, 2):
        series, _ = synthesize(16, 2880, seed=seed)
        base = TrainConfig(hidden=32, epochs=15, patience=15, seed=seed)
        rows = {r["name"]: r["val_mae"] for r in
                ablate(base, series, names={"dynamic+full", "static+full", "dynamic+none"})}
        full = rows["dynamic+full"]
        wins_static += full < rows["static+full"]
        wins_adv += full < rows["dynamic+none"]
        lines.append(f"s{seed} {full:.4f}/{rows['static+full']:.4f}/{rows['dynamic+none']:.4f}")
    elapsed = time.perf_counter() - t0
    ok = wins_static >= 2 and wins_adv >= 2 and elapsed < 900
    criterion(7, ok, f"val MAE full/static/no-adv: {'; '.join(lines)}; beats static {wins_static}/3, "
                     f"beats no-adv {wins_adv}/3; {elapsed:.0f}s")


def test_criterion_08_noise_direction(criterion):
    series, _ = synthesize(16, 1440, seed=0)
    cfg = TrainConfig(hidden=32, epochs=3, patience=3, seed=0)
    noisy = noise_run(cfg, series, 1.0)
    clean = noise_run(cfg, series, 0.0)
    mae_inc, rmse_inc = noisy.increments
    noisy_row, clean_row = noisy.lines()[2][1], clean.lines()[2][1]
    ok = mae_inc > 0 and rmse_inc > 0 and noisy_row.count("+") == 2 and clean_row == "+0.00%/+0.00%"
    criterion(8, ok, f"sigma=1 {noisy_row}; sigma=0 {clean_row}")


def test_criterion_09_data_pipeline(criterion, tmp_path):
    b = split_bounds(16992, (0.6, 0.2, 0.2))
    counts = [b[1] - b[0], b[2] - b[1], b[3] - b[2]]
    data = np.random.default_rng(0).normal(size=(300, 7, 3)).astype(np.float32)
    back = load_container(save_container(SpatialTemporalSeries(data), tmp_path / "c.stts"))
    round_trip = back.data.tobytes() == data.tobytes()
    rng = np.random.default_rng(1)
    ident, jensen = True, True
    for _ in range(1000):
        x = rng.normal(10, 5, size=tuple(rng.integers(1, 6, size=3)))
        y = x + rng.normal(size=x.shape) * rng.uniform(0, 3)
        mae0, rmse0, _ = metrics(x, x, mask_eps=-1.0)
        ident &= mae0 == 0.0 and rmse0 == 0.0
        mae, rmse, _ = metrics(x, y, mask_eps=-1.0)
        jensen &= rmse >= mae
    ok = counts == [10195, 3398, 3399] and round_trip and ident and jensen
    criterion(9, ok, f"split {counts[0]}/{counts[1]}/{counts[2]}; container bit-exact {round_trip}; "
                     f"MAE(x,x)=RMSE(x,x)=0 {ident}; RMSE>=MAE {jensen}")


def test_criterion_10_real_extents_end_to_end(criterion, tmp_path):
    rng = np.random.default_rng(0)
    steps = 130
    flow = 200 + 50 * rng.normal(size=(steps, 307, 1))
    speed = 60 + 5 * rng.normal(size=(steps, 307, 1))
    occ = rng.uniform(0, 0.3, size=(steps, 307, 1))
    data = np.concatenate([flow, speed, occ], axis=2).astype(np.float32)
    path = save_container(SpatialTemporalSeries(data, feature_names=["F", "S", "O"]), tmp_path / "pems04.stts")
    t0 = time.perf_counter()
    train_rc = main(["train", "--data", str(path), "--dataset", "PEMS04", "--epochs", "1",
                     "--out", str(tmp_path / "run")])
    eval_rc = main(["eval", "--checkpoint", str(tmp_path / "run" / "model.ckpt"), "--data", str(path),
                    "--out", str(tmp_path / "metrics.csv")]) if train_rc == 0 else -1
    rows = (tmp_path / "metrics.csv").read_text().splitlines() if eval_rc == 0 else []
    ok = train_rc == 0 and eval_rc == 0 and len(rows) == 14
    criterion(10, ok, f"N=307 F=3 defaults (F'=64, d_e=6, lr=0.003, batch 64): train rc {train_rc}, "
                      f"eval rc {eval_rc}, {max(len(rows) - 1, 0)} metric rows, {time.perf_counter() - t0:.0f}s")
