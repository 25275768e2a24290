"""Acceptance criteria 1-9, each reported as one PASS/FAIL line in the terminal summary."""

import math
import time

import numpy as np
import pytest

from claimsnet.calibration import apply_correction, fit_smearing_factor
from claimsnet.dataset import TEST, TRAIN, VALIDATION, assign_splits, build_observations, claim_observations
from claimsnet.evaluation import PredictionSet, m1_vs_m2, male, msle, ocl_err
from claimsnet.nn.model import ModelSpec
from claimsnet.nn.ops import lstm_cell_forward
from claimsnet.pipeline import ExperimentConfig, Pipeline, read_predictions
from claimsnet.simulator import simulate_portfolio
from claimsnet.tuning import GridSpace, enumerate_grid

from conftest import desk_config
from gradcheck import LAYER_KINDS, TOL, check_layer, check_model, layer_cases
from test_dataset import _open_quarters_bruteforce, make_claim
from test_nn import lstm_params, scalar_lstm

RESULTS = {}


def record(number, name, ok, detail):
    RESULTS[number] = (name, bool(ok), detail)
    print(f"criterion {number} [{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    assert ok, detail


# 1 ---------------------------------------------------------------------------


def test_criterion_1_gradient_fidelity():
    start = time.perf_counter()
    rng = np.random.default_rng(101)
    worst = {}
    for kind in LAYER_KINDS:
        errs = []
        for _ in range(20):
            layer, run, x, check_input = layer_cases(kind, rng)
            errs.append(check_layer(layer, run, x, rng, check_input))
        worst[kind] = max(errs)
    fnn = ModelSpec("FNN+", n_dense_layers=3, units=4)
    lstm = ModelSpec("LSTM+", n_recurrent_layers=1, n_dense_layers=2, units=3)
    worst["FNN+ model"] = max(check_model(fnn, 6, 0, rng, seed=s) for s in range(20))
    worst["LSTM+ model"] = max(check_model(lstm, 3, 4, rng, seed=s) for s in range(20))
    elapsed = time.perf_counter() - start
    ok = all(v < TOL for v in worst.values()) and elapsed < 120
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + f"; {elapsed:.1f}s"
    record(1, "gradient fidelity", ok, detail)


# 2 ---------------------------------------------------------------------------


def test_criterion_2_lstm_oracle():
    rng = np.random.default_rng(102)
    worst = 0.0
    for _ in range(100):
        n_h, n_x = int(rng.integers(1, 6)), int(rng.integers(1, 6))
        p = lstm_params(rng, n_h, n_x, scale=1.0)
        h0, c0, x = rng.normal(size=n_h), rng.normal(size=n_h), rng.normal(size=n_x)
        h, c = lstm_cell_forward(h0, c0, x, p)
        h2, c2 = scalar_lstm(h0.tolist(), c0.tolist(), x.tolist(), {k: v.tolist() for k, v in p.items()})
        worst = max(worst, np.max(np.abs(h - h2)), np.max(np.abs(c - c2)))
    record(2, "equation-literal LSTM oracle", worst <= 1e-12, f"max abs diff {worst:.1e} over 100 instances")


# 3 ---------------------------------------------------------------------------


def naive_metrics(pred1, pred2, paid, actual):
    n = len(actual)
    errs = []
    for k in range(n):
        os_pred = pred1[k] - paid[k]
        os_act = actual[k] - paid[k]
        errs.append(math.log(os_pred / os_act) if os_pred > 0 else math.log(os_act))
    out = {
        "male": sum(abs(e) for e in errs) / n,
        "msle": sum(e * e for e in errs) / n,
        "ocl": sum(pred1[k] - paid[k] for k in range(n)) / sum(actual[k] - paid[k] for k in range(n)) - 1,
    }
    total_y = sum(actual)
    total_os = sum(actual[k] - paid[k] for k in range(n))
    for name in ("unit", "claim_size", "ocl"):
        acc = 0.0
        for k in range(n):
            if abs(pred1[k] - actual[k]) < abs(pred2[k] - actual[k]):
                w = {"unit": 1 / n, "claim_size": actual[k] / total_y, "ocl": (actual[k] - paid[k]) / total_os}[name]
                acc += w
        out[f"vs_{name}"] = acc
    return out


def test_criterion_3_metric_oracle():
    rng = np.random.default_rng(103)
    worst = 0.0
    n_replaced = n_ties = 0
    for _ in range(200):
        n = int(rng.integers(1, 21))
        actual = np.round(np.exp(rng.normal(9, 1.5, size=n)), 2)
        paid = np.round(actual * rng.uniform(0, 0.95, size=n), 2)
        pred1 = paid + (actual - paid) * np.exp(rng.normal(0, 1, size=n))
        pred2 = paid + (actual - paid) * np.exp(rng.normal(0, 1, size=n))
        below = rng.random(n) < 0.2
        pred1[below] = paid[below] * rng.uniform(0.3, 1.0, size=below.sum())
        tie = rng.random(n) < 0.2
        pred2[tie] = pred1[tie]
        n_replaced += int(below.sum())
        n_ties += int(tie.sum())
        a = PredictionSet(np.arange(n), np.full(n, 20), pred1, paid, actual, actual)
        b = a.with_predictions(pred2, "m2")
        ref = naive_metrics(pred1.tolist(), pred2.tolist(), paid.tolist(), actual.tolist())
        got = {"male": male(a), "msle": msle(a), "ocl": ocl_err(a)}
        got.update({f"vs_{w}": m1_vs_m2(a, b, w) for w in ("unit", "claim_size", "ocl")})
        worst = max(worst, max(abs(got[k] - ref[k]) for k in ref))
    ok = worst <= 1e-10 and n_replaced > 0 and n_ties > 0
    record(3, "metric oracle equivalence", ok,
           f"max abs diff {worst:.1e}; {n_replaced} replacement and {n_ties} tie cases")


# 4 ---------------------------------------------------------------------------


def test_criterion_4_smearing_identities():
    rng = np.random.default_rng(104)
    y = rng.normal(9, 1.5, size=500)
    b_zero = fit_smearing_factor(y, y).b
    b_ln2 = fit_smearing_factor(y, y - math.log(2)).b
    yhat = y + rng.normal(0, 0.8, size=500)
    b = fit_smearing_factor(y, yhat).b
    b_refit = fit_smearing_factor(y, np.log(apply_correction(yhat, b))).b
    ok = b_zero == 1.0 and abs(b_ln2 - 2) <= 1e-12 and abs(b_refit - 1) <= 1e-12
    record(4, "smearing identities", ok, f"b0={b_zero!r}, b_ln2={b_ln2!r}, refit={b_refit!r}")


# 5 ---------------------------------------------------------------------------


def test_criterion_5_split_leakage():
    start = time.perf_counter()
    problems = []
    for seed in range(10):
        portfolio = simulate_portfolio(desk_config(seed=1000 + seed))
        a = assign_splits(portfolio, (16, 20), 0.2, seed=seed)
        obs = build_observations(portfolio)
        parts = a.partition(obs)
        leaks = sum(o.claim.settlement_time >= 20 for s in (TRAIN, VALIDATION) for o in parts[s])
        labels = {}
        straddle = 0
        for split, group in parts.items():
            for o in group:
                if labels.setdefault(o.claim_id, split) != split:
                    straddle += 1
        n_val = sum(16 <= c.settlement_time < 20 for c in portfolio)
        moved_ok = abs(len(a.moved) - 0.2 * n_val) <= 1
        identity = sum(max(0, math.floor(c.settlement_time) - math.floor(c.notification_time)) for c in portfolio)
        if leaks or straddle or not moved_ok or identity != len(obs):
            problems.append((seed, leaks, straddle, len(a.moved), n_val, identity, len(obs)))
    elapsed = time.perf_counter() - start
    ok = not problems and elapsed < 60
    record(5, "split leakage suite", ok, f"10 portfolios, problems={problems}; {elapsed:.1f}s")


# 6 ---------------------------------------------------------------------------


def test_criterion_6_observation_rule():
    rng = np.random.default_rng(106)
    mismatches = same_quarter = 0
    for k in range(1000):
        t1 = float(rng.uniform(0, 40))
        # a share of pairs settle inside the notification quarter
        d = float(rng.uniform(0, math.ceil(t1 + 1e-12) - t1)) if k % 4 == 0 else float(rng.exponential(4))
        t2 = t1 + max(d, 1e-6)
        got = [o.prediction_quarter for o in claim_observations(make_claim(t1, t2))]
        expect = _open_quarters_bruteforce(t1, t2, 80)
        same_quarter += math.floor(t1) == math.floor(t2)
        mismatches += got != expect
    ok = mismatches == 0 and same_quarter > 0
    record(6, "observation rule", ok, f"1000 pairs, {mismatches} mismatches, {same_quarter} same-quarter exclusions")


# 7 ---------------------------------------------------------------------------


def test_criterion_7_grid_cardinality():
    sizes = {v: len(enumerate_grid(GridSpace(), v)) for v in ("LSTM", "LSTM+", "FNN", "FNN+")}
    ok = sizes == {"LSTM": 16, "LSTM+": 16, "FNN": 24, "FNN+": 24}
    record(7, "grid cardinality", ok, str(sizes))


# 8 and 9 ---------------------------------------------------------------------


@pytest.fixture(scope="module")
def desk_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("desk") / "run"
    config = ExperimentConfig()
    start = time.perf_counter()
    Pipeline(config, out).run()
    return config, out, time.perf_counter() - start


def _scores(out, ds, variant):
    return read_predictions(out / "predictions" / ds / f"{variant}.csv", variant)


def test_criterion_8_qualitative_replication(desk_run):
    config, out, elapsed = desk_run
    wins_a = wins_c = 0
    b_ok = True
    lines = []
    for ds in config.dataset_ids:
        fnn, plus = _scores(out, ds, "FNN"), _scores(out, ds, "FNN+")
        ce = _scores(out, ds, "CE")
        male_f, male_p = male(fnn), male(plus)
        ocl_f, ocl_p = ocl_err(fnn), ocl_err(plus)
        vs = m1_vs_m2(plus, fnn, "ocl")
        a = male_p < male_f and abs(ocl_p) < abs(ocl_f) and vs > 0.5
        wins_a += a
        c = True
        for s in (fnn, plus):
            raw = s.with_predictions(s.extra["predicted_uncorrected"], s.source)
            c &= abs(ocl_err(s)) < abs(ocl_err(raw))
        wins_c += c
        final = ce.extra["final_revision_reached"].astype(bool)
        ce_err = np.abs(ce.predicted[final] - ce.actual[final])
        fnn_err = np.abs(fnn.predicted[final] - fnn.actual[final])
        b_ok &= bool(final.any()) and np.all(ce_err == 0) and np.any(fnn_err > 0)
        lines.append(f"{ds}: MALE {male_f:.3f}->{male_p:.3f}, OCLerr {ocl_f:+.3f}->{ocl_p:+.3f}, vs {vs:.2f}, "
                     f"final-revision n={int(final.sum())}")
    ok = wins_a >= 4 and wins_c >= 4 and b_ok
    detail = f"(a) {wins_a}/5, (b) {'ok' if b_ok else 'failed'}, (c) {wins_c}/5; run {elapsed:.0f}s; " + "; ".join(lines)
    record(8, "qualitative replication", ok, detail)


def _report_tree(root):
    files = {}
    for sub in ("reports", "summary", "predictions", "tuning", "models"):
        for p in sorted((root / sub).rglob("*")):
            if p.is_file():
                files[str(p.relative_to(root))] = p.read_bytes()
    return files


def test_criterion_9_determinism(desk_run, tmp_path):
    config, out, _ = desk_run
    before = _report_tree(out)
    rerun = Pipeline(config, out)
    rerun.run()
    noop = not any(rerun.counters.values())
    fresh = tmp_path / "fresh"
    Pipeline(config, fresh).run()
    after = _report_tree(fresh)
    same = before == after and before == _report_tree(out)
    diff = sorted(k for k in set(before) | set(after) if before.get(k) != after.get(k))
    record(9, "determinism", noop and same,
           f"rerun counters {rerun.counters}; fresh run byte-identical over {len(before)} files; diff {diff[:3]}")
