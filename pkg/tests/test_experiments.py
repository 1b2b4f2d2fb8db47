import csv
import io
import json

import numpy as np
import pytest

from robust_sensing import experiments as ex
from robust_sensing.experiments import (ClassificationReport, ExperimentSpec, classify,
                                        generate_rs_instance, generate_rsn_instance, phase_grid)
from robust_sensing.linalg import RngStream, toeplitz_sqrt_pair
from robust_sensing.model import SolverOutput
from robust_sensing.solvers import solve_genie_ls, solve_ls


def test_rs_instance_equal_energy():
    rel = unrel = 0.0
    trials = 10_000
    for t in range(trials):
        p, _ = generate_rs_instance(20, 4, 2, 1, RngStream(3, t))
        rel += np.sum(p.block(0)[1] ** 2)
        unrel += np.sum(p.block(1)[1] ** 2)
    assert abs(rel / trials / 4 - 1) < 0.05
    assert abs(unrel / trials / 4 - 1) < 0.05


def test_rs_instance_all_consistent_and_reproducible():
    p, t = generate_rs_instance(5, 2, 4, 4, RngStream(1, 2))
    assert np.allclose(p.b, p.A @ t.x0, atol=0)
    q, u = generate_rs_instance(5, 2, 4, 4, RngStream(1, 2))
    assert p == q and np.array_equal(t.x0, u.x0)
    assert t.reliable_set == frozenset(range(4))


@pytest.mark.parametrize("args", [(5, 2, 4, 5), (5, 2, 4, 0), (0, 2, 4, 2)])
def test_rs_instance_rejects_bad_dims(args):
    with pytest.raises(ValueError):
        generate_rs_instance(*args, RngStream(0))


def test_rsn_instance_small_noise():
    p, t = generate_rsn_instance(10, 3, 6, 4, 1e-14, rng=RngStream(0))
    assert np.max(p.residual_norms(t.x0)[:4]) <= 1e-12
    assert np.allclose(t.x0, 1 / np.sqrt(10))


def test_snr_mapping():
    assert ex.snr_to_sigma(10.0) == pytest.approx(10 ** -0.5)
    # per-measurement signal power is ||x0||^2 = 1 for x0 = 1/sqrt(n)
    p, t = generate_rsn_instance(50, 4, 500, 500, 1e-9, rng=RngStream(4))
    assert np.mean((p.A @ t.x0) ** 2) == pytest.approx(1.0, rel=0.05)


def test_laplacian_outlier_variance():
    sigma = 0.5
    p, _ = generate_rsn_instance(2, 10, 10_001, 1, sigma, "laplacian-outlier", rng=RngStream(9))
    vals = p.b[10:]
    assert vals.size == 100_000
    assert abs(vals.var() / (sigma ** 2 + 1) - 1) < 0.05


def test_colored_noise_covariance():
    Sigma, _ = toeplitz_sqrt_pair(0.9 ** np.arange(4))
    draws = []
    for t in range(20_000):
        p, truth = generate_rsn_instance(1, 4, 1, 1, 1.0, Sigma=Sigma, rng=RngStream(5, t))
        draws.append(p.b - p.A @ truth.x0)
    draws = np.array(draws)
    assert np.allclose(np.cov(draws.T), Sigma, atol=0.05)


@pytest.mark.parametrize("Sigma,msg", [(np.eye(3), "12x12"), (-np.eye(12), "positive definite")])
def test_rsn_instance_bad_covariance(Sigma, msg):
    with pytest.raises(ValueError, match=msg):
        generate_rsn_instance(2, 3, 4, 2, 0.1, Sigma=Sigma, rng=RngStream(0))


def test_classify_genie_noise_free():
    p, t = generate_rs_instance(20, 4, 16, 10, RngStream(0))
    rep = classify(solve_genie_ls(p, t.reliable_set), t, problem=p)
    assert rep.per_sensor_correct == 1.0 and rep.whole_network_success


def test_classify_ls_noisy_flags_everything():
    p, t = generate_rsn_instance(20, 4, 16, 12, 0.3, rng=RngStream(0))
    rep = classify(solve_ls(p), t, "residual", norm="l2")
    assert rep.per_sensor_correct == pytest.approx(4 / 16)
    assert not rep.labels.any()


def test_classify_u_support():
    from robust_sensing.model import GroundTruth
    t = GroundTruth(np.zeros(2), range(3))
    out = SolverOutput(np.zeros(2), np.ones(3), u_hat=np.zeros((3, 2)))
    rep = classify(out, t, "u-support")
    assert rep == ClassificationReport(1.0, True, rep.labels)
    out.u_hat[1, 0] = 1e-300
    assert classify(out, t, "u-support").per_sensor_correct == pytest.approx(2 / 3)
    with pytest.raises(ValueError):
        classify(SolverOutput(np.zeros(2), np.ones(3)), t, "u-support")
    with pytest.raises(ValueError):
        classify(out, t, "residual")          # max-abs rule needs the problem


def test_phase_grid_rounding():
    cells = phase_grid(40, 20)
    ks = sorted({k for k, _ in cells})
    assert ks == [2, 3, 4, 5, 7, 11]
    assert (11, 6) in cells and (11, 5) not in cells and (2, 1) in cells


def test_spec_validation():
    with pytest.raises(ValueError):
        ExperimentSpec("nope")
    with pytest.raises(ValueError):
        ExperimentSpec.default("rs-table", 0, trials=0)
    with pytest.raises(ValueError):
        ExperimentSpec.default("rs-table", 0, methods=("P3",))
    with pytest.raises(ValueError):
        ExperimentSpec.default("rsn-mse", 0, snr_db=None)
    with pytest.raises(ValueError):
        ExperimentSpec.default("rs-table", 0, s_values=(17,))


def test_rs_table_small_run_is_deterministic_and_parallel_safe():
    spec = ExperimentSpec.default("rs-table", seed=3, trials=6, s_values=(10, 16))
    a = ex.table_csv(ex.run_rs_table(spec))
    b = ex.table_csv(ex.run_rs_table(spec))
    c = ex.table_csv(ex.run_rs_table(spec, threads=2))
    assert a == b == c
    rows = list(csv.DictReader(io.StringIO(a)))
    assert list(rows[0]) == list(ex.TABLE_HEADER)
    ga = [r for r in rows if r["method"] == "GA-LS"]
    assert all(float(r["per_sensor_pct"]) == 100.0 for r in ga)
    ls16 = [r for r in rows if r["method"] == "LS" and r["s"] == "16"]
    assert float(ls16[0]["per_sensor_pct"]) == 100.0


def test_mse_curve_small_run():
    spec = ExperimentSpec.default("colored", seed=1, trials=3, s_values=(12,),
                                  methods=("GA-LS", "P3", "P3-colored"))
    rows = ex.run_mse_curve(spec)
    assert [r.method for r in rows] == ["GA-LS", "P3", "P3-colored"]
    assert all(r.mse > 0 and r.trials == 3 for r in rows)
    text = ex.mse_csv(rows)
    assert text.splitlines()[0] == ",".join(ex.MSE_HEADER)


def test_rsn_table_small_run():
    spec = ExperimentSpec.default("rsn-table", seed=1, trials=2, s_values=(24,), methods=("LS", "P3"))
    rows = ex.run_rsn_table(spec)
    assert rows[0].per_sensor_pct == pytest.approx(25.0)


def test_phase_diagram_small_run():
    spec = ExperimentSpec.default("phase-diagram", seed=0, trials=2, nm_pairs=((8, 4),), n_gammas=3)
    diag = ex.run_phase_diagram(spec)
    text = ex.phase_csv(diag)
    assert text.splitlines()[0] == ",".join(ex.PHASE_HEADER)
    for c in diag.cells:
        assert c.gamma == pytest.approx(8 / (c.k * 4))
        assert 0.0 <= c.success_rate <= 1.0
    assert diag.curve[0][1] == pytest.approx((np.sqrt(diag.curve[0][0]) + 1) / 2)


def test_manifest_records_spec():
    spec = ExperimentSpec.default("rs-table", seed=11, trials=2)
    doc = json.loads(ex.manifest(spec))
    assert doc["seed"] == 11 and doc["spec"]["family"] == "rs-table" and "version" in doc


def test_resolve_threads(monkeypatch):
    monkeypatch.setenv("ROBUST_SENSING_THREADS", "3")
    assert ex.resolve_threads(None) == 3
    assert ex.resolve_threads(2) == 2
    monkeypatch.delenv("ROBUST_SENSING_THREADS")
    assert ex.resolve_threads(None) == 1
    with pytest.raises(ValueError):
        ex.resolve_threads(0)
