"""End-to-end acceptance checks; each records a PASS/FAIL line in the summary."""

import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_RESULTS
from shap_ptdf import (
    BackgroundSet,
    analytical_ptdf,
    compare_ptdf,
    explain_dataset,
    feature_importance,
    fit_gbt,
    fit_linear,
    recover_all,
    shap_exact,
    shap_tree,
    solve_dc,
)
from shap_ptdf.cli import main
from shap_ptdf.powerflow import PtdfMatrix, balance_residual, bus_injections
from shap_ptdf.recovery import ptdf_from_csv

from reference_ptdf import LINES, TRUE_PTDF
from test_shapley import random_triple


def record(number, passed, detail):
    ACCEPTANCE_RESULTS.append((number, bool(passed), detail))
    assert passed, detail


def test_c1_analytical_ptdf(tmp_path):
    t0 = time.perf_counter()
    code = main(["ptdf", "--out-dir", str(tmp_path)])
    elapsed = time.perf_counter() - t0
    d = ptdf_from_csv((tmp_path / "ptdf_true.csv").read_text())
    assert code == 0 and list(d.row_labels) == LINES
    err = float(np.max(np.abs(d.values - np.array(TRUE_PTDF))))
    record(1, err <= 5e-5 and elapsed < 1.0,
           f"max |D - published| = {err:.2e} (<= 5e-5), {elapsed:.3f} s (< 1 s)")


def test_c2_linear_recovery(net, train_test):
    train, _ = train_test
    t0 = time.perf_counter()
    bg = BackgroundSet(train.X)
    es = {lbl: explain_dataset(fit_linear(train, f"F{lbl}"), train, bg) for lbl in net.branch_labels}
    d_hat = recover_all(net, es, train)
    elapsed = time.perf_counter() - t0
    err = compare_ptdf(analytical_ptdf(net), d_hat).max_abs_error
    record(2, err <= 1e-6 and elapsed < 5.0, f"max-abs error {err:.2e} (<= 1e-6), {elapsed:.2f} s (< 5 s)")


def test_c3_tree_recovery(net, train_test):
    train, _ = train_test
    t0 = time.perf_counter()
    bg = BackgroundSet.from_dataset(train, 200, seed=0)
    es = {lbl: explain_dataset(fit_gbt(train, f"F{lbl}"), train, bg) for lbl in net.branch_labels}
    d_hat = recover_all(net, es, train)
    elapsed = time.perf_counter() - t0
    err = compare_ptdf(analytical_ptdf(net), d_hat).max_abs_error
    record(3, err <= 1e-2 and elapsed < 60.0,
           f"max-abs error {err:.2e} (<= 1e-2), {elapsed:.1f} s (< 60 s)")


def test_c4_tree_matches_exact():
    worst, count, dims = 0.0, 1000, set()
    for seed in range(count):
        model, x, bg = random_triple(seed)
        dims.add(len(x))
        t, e = shap_tree(model, x, bg), shap_exact(model, x, bg)
        worst = max(worst, float(np.max(np.abs(t.phis - e.phis))), abs(t.base_value - e.base_value))
    record(4, worst <= 1e-9 and dims == {1, 2, 3},
           f"{count} triples, M in {sorted(dims)}, max |tree - exact| = {worst:.2e} (<= 1e-9)")


def test_c5_local_accuracy(net, dataset, train_test, gbt_models):
    train, _ = train_test
    bg = BackgroundSet(train.X)
    worst = 0.0
    for lbl in net.branch_labels:
        es = explain_dataset(gbt_models[lbl], dataset, bg)
        worst = max(worst, max(e.local_accuracy_error for e in es))
    record(5, worst <= 1e-6,
           f"{len(dataset)} rows x {net.n_branches} lines, max |phi0 + sum(phi) - f(x)| = {worst:.2e} MW")


def test_c6_reference_scenario(train_test, gbt_models):
    train, test = train_test
    point = np.array([15.0, 267.8])
    row = int(np.argmin(((test.X - point) ** 2).sum(axis=1)))
    e = explain_dataset(gbt_models["4-5"], test.take([row]), BackgroundSet(train.X))[0]
    checks = {
        "base": (e.base_value, -102.3, 10.0),
        "phi_PG2": (e.phis[0], 82.6, 5.0),
        "phi_PG3": (e.phis[1], -10.2, 5.0),
        "f(x)": (e.fx, -29.9, 5.0),
    }
    ok = all(abs(v - target) <= tol for v, target, tol in checks.values())
    detail = f"test row {row} at ({e.feature_values[0]:.1f}, {e.feature_values[1]:.1f}): " + ", ".join(
        f"{name} {v:.1f} (target {target} +/- {tol:g})" for name, (v, target, tol) in checks.items()
    )
    record(6, ok, detail)


def test_c7_global_ordering(train_test, gbt_models):
    train, _ = train_test
    es = explain_dataset(gbt_models["4-5"], train, BackgroundSet(train.X))
    ranking = feature_importance(es)
    r = float(np.corrcoef(es.feature_values[:, 1], es.phis[:, 1])[0, 1])
    record(7, ranking[0][0] == "PG3" and r < 0,
           f"ranking {[n for n, _ in ranking]}, corr(PG3, phi_PG3) = {r:.3f} (< 0)")


def test_c8_physics(net):
    rng = np.random.default_rng(8)
    P = rng.uniform(0, 500, size=(1000, 2))
    conservation = 0.0
    flows = []
    for p in P:
        _, f = solve_dc(net, p)
        flows.append(f)
        conservation = max(conservation, float(np.max(np.abs(balance_residual(net, p, f)))))
    _, f0 = solve_dc(net, np.zeros(2))
    d = analytical_ptdf(net).values
    superposition = float(np.max(np.abs(np.array(flows) - (f0 + P @ d.T))))
    fd = float(np.max(np.abs(analytical_ptdf(net, "finite_difference").values - d)))
    record(8, conservation <= 1e-8 and superposition <= 1e-8 and fd <= 1e-9,
           f"conservation {conservation:.1e}, superposition {superposition:.1e} (<= 1e-8), "
           f"FD vs closed form {fd:.1e} (<= 1e-9)")


def test_c9_determinism(tmp_path):
    out = tmp_path / "run"

    def snapshot():
        return {p.relative_to(out).as_posix(): p.read_bytes()
                for p in sorted(out.rglob("*")) if p.is_file() and p.name != "manifest.json"}

    assert main(["reproduce", "--out-dir", str(out)]) == 0
    first = snapshot()
    assert main(["reproduce", "--out-dir", str(out)]) == 0
    second = snapshot()
    differing = sorted(k for k in first.keys() | second.keys() if first.get(k) != second.get(k))
    kinds = {"dataset.csv", "models/gbt_4-5.model", "compare_gbt.txt"}
    record(9, not differing and kinds <= first.keys(),
           f"{len(first)} files compared across two runs, {len(differing)} differ")
