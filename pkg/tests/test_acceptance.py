"""One test per acceptance criterion; each records a PASS/FAIL line shown in the terminal summary."""
import copy
import time

import numpy as np
import pytest
from scipy.linalg import subspace_angles

from streamrom.cae import build_cae
from streamrom.config import PipelineConfig
from streamrom.dynamics import FfnnModel, build_lstm, lstm_cell_step, split_gates
from streamrom.linalg import orthonormality_error
from streamrom.metrics import eps_abs, eps_l2, eps_nrms, eps_rel, error_curves
from streamrom.nn.gradcheck import grad_check
from streamrom.nn.layers import LayerSpec, build_sequential
from streamrom.pipeline import bundle_bytes, forecast, load_bundle, offline_train, online_predict, save_bundle
from streamrom.snapshots import (
    Grid2D,
    cd_analytic_field,
    cd_boundary_x,
    cd_initial_field,
    cd_time_grid,
    generate_cd_snapshots,
    partition_times,
    sample_parameters,
)
from streamrom.svd_stream import blocks_from_matrix, project, reconstruct, svd_init, svd_update

from test_dynamics import hand_unrolled_cell

GRAD_TOL = 1e-5


# --------------------------------------------------------------------------- 1

def geometric_matrix(seed: int, rows=200, cols=60, ratio=0.7):
    rng = np.random.default_rng(seed)
    left = np.linalg.qr(rng.normal(size=(rows, cols)))[0]
    right = np.linalg.qr(rng.normal(size=(cols, cols)))[0]
    return left @ np.diag(ratio ** np.arange(cols)) @ right.T


def test_criterion_1_streaming_matches_batch(verdict):
    seconds = worst_angle = worst_orth = 0.0
    failing = []
    for seed in range(10):
        A = geometric_matrix(seed)
        state = None
        for block in blocks_from_matrix(A, block_size=10):
            t0 = time.perf_counter()
            state = svd_init(block, 1e-8) if state is None else svd_update(state, block)
            seconds += time.perf_counter() - t0
            worst_orth = max(worst_orth, orthonormality_error(state.U))
        batch = np.linalg.svd(A, full_matrices=False)[0][:, :state.k]
        angle = float(np.max(subspace_angles(state.U, batch)))
        worst_angle = max(worst_angle, angle)
        if angle > 1e-6:
            failing.append(seed)
    ok = worst_angle <= 1e-6 and worst_orth <= 1e-10 and seconds < 5
    verdict(1, ok, f"max angle {worst_angle:.2e} (tol 1e-6, seeds over tol {failing}), "
                   f"max orth {worst_orth:.1e} (tol 1e-10), {seconds:.2f}s streaming (tol 5s)")
    assert worst_orth <= 1e-10 and seconds < 5
    assert worst_angle <= 1e-6, f"seeds {failing} exceed the angle tolerance"


# --------------------------------------------------------------------------- 2

def test_criterion_2_projection_accuracy(verdict):
    t0 = time.perf_counter()
    params = sample_parameters([[100, 200], [100, 200]], 6, 0, seed=0)
    snaps = generate_cd_snapshots(Grid2D(64, 64), params.training, cd_time_grid(0.0075, 75))
    state = None
    for j in range(snaps.m):
        for cols in partition_times(75, 25):
            block = snaps.block(j, cols)
            state = svd_init(block, 1e-7) if state is None else svd_update(state, block)
    S = snaps.matrix(0)
    errs = [eps_l2(S[:, i], reconstruct(state.U, project(state.U, S[:, i]))) for i in range(S.shape[1])]
    seconds = time.perf_counter() - t0
    ok = max(errs) <= 1e-4 and seconds < 60
    verdict(2, ok, f"max eps_l2 {max(errs):.2e} (tol 1e-4), rank {state.k}, {seconds:.1f}s (tol 60s)")
    assert ok


# --------------------------------------------------------------------------- 3

def _randomize(model, rng, scale=0.5):
    for _, p, _ in model.named_parameters():
        p[...] = rng.normal(scale=scale, size=p.shape)
    return model


def test_criterion_3_gradient_suite(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    errors = {}
    layer_cases = {
        "dense": ([LayerSpec("dense", 3, "tanh")], (4,)),
        "conv2d": ([LayerSpec("conv2d", 2, "elu")], (4, 4, 2)),
        "maxpool2d": ([LayerSpec("maxpool2d")], (4, 4, 2)),
        "upsample2d": ([LayerSpec("upsample2d")], (2, 2, 2)),
        "flatten": ([LayerSpec("flatten")], (2, 2, 2)),
        "reshape": ([LayerSpec("reshape", shape=(2, 2, 2))], (8,)),
    }
    for name, (specs, shape) in layer_cases.items():
        net = _randomize(build_sequential(specs, shape, rng), rng)
        x = rng.normal(size=(2, *shape))
        errors[name] = grad_check(net, x, rng.normal(size=(2, *net.output_shape)))
    cae = _randomize(build_cae(18, 4, "cd", seed=1), rng, 0.3)
    x = rng.normal(size=(2, 18))
    errors["cae"] = grad_check(cae, x, x, max_entries=25)
    lstm = _randomize(build_lstm(2, 2, hidden=(3, 3), seed=2), rng)
    errors["lstm"] = grad_check(lstm, rng.normal(size=(3, 4, 4)), rng.normal(size=(3, 2)))
    ffnn = _randomize(FfnnModel(3, 4, (6,), "swish", seed=3), rng)
    errors["ffnn"] = grad_check(ffnn, rng.normal(size=(4, 3)), rng.normal(size=(4, 4)))
    seconds = time.perf_counter() - t0
    worst = max(errors, key=errors.get)
    ok = errors[worst] <= GRAD_TOL and seconds < 60
    verdict(3, ok, f"max rel error {errors[worst]:.1e} in {worst} (tol {GRAD_TOL:.0e}), {seconds:.1f}s (tol 60s)")
    assert ok, errors


# --------------------------------------------------------------------------- 4

def test_criterion_4_lstm_cell_oracle(verdict):
    rng = np.random.default_rng(4)
    H, D = 50, 6
    w = split_gates(rng.normal(size=(4 * H, H + D)), rng.normal(size=4 * H))
    worst = 0.0
    for _ in range(100):
        x, h0, c0 = rng.normal(size=D), rng.normal(size=H), rng.normal(size=H)
        h, c = lstm_cell_step(x, h0, c0, w)
        ho, co = hand_unrolled_cell(x, h0, c0, w["W_in"], w["W_fo"], w["W_ca"], w["W_out"],
                                    w["b_in"], w["b_fo"], w["b_ca"], w["b_out"])
        worst = max(worst, float(np.max(np.abs(h - ho))), float(np.max(np.abs(c - co))))
    ok = worst <= 1e-12
    verdict(4, ok, f"max deviation {worst:.1e} over 100 inputs (tol 1e-12)")
    assert ok


# --------------------------------------------------------------------------- 5

def end_to_end_config() -> PipelineConfig:
    cfg = PipelineConfig()
    cfg.data.m = 12
    cfg.cae.epochs = cfg.lstm.epochs = cfg.ffnn.epochs = 300
    return cfg


@pytest.mark.slow
def test_criterion_5_end_to_end_cd(verdict):
    t0 = time.perf_counter()
    bundle, _ = offline_train(end_to_end_config())
    mu = (122.0, 176.0)
    pred = forecast(bundle, mu, 100)
    seconds = time.perf_counter() - t0
    grid = Grid2D(64, 64)
    truth = np.stack([cd_analytic_field(grid, mu, t) for t in pred.times])
    rep = error_curves(truth, pred.fields, pred.times)
    inside = ~pred.extrapolated
    peak = float(rep.eps_rel[inside].max())
    at_end = rep.at(0.01)
    ok = peak <= 0.05 and at_end["eps_rel"] <= 0.3 and seconds <= 900
    verdict(5, ok, f"mu {mu}: peak predict eps_rel {peak:.3f} (tol 0.05), "
                   f"forecast eps_rel at t={at_end['t']:.4f} {at_end['eps_rel']:.3f} (tol 0.3), "
                   f"{seconds:.0f}s (tol 900s)")
    assert seconds <= 900
    assert peak <= 0.05 and at_end["eps_rel"] <= 0.3


# --------------------------------------------------------------------------- 6 and 8

def reduced_epoch_config() -> PipelineConfig:
    cfg = PipelineConfig()
    cfg.cae.epochs = cfg.lstm.epochs = cfg.ffnn.epochs = 2
    return cfg


@pytest.fixture(scope="module")
def reduced_run():
    return offline_train(reduced_epoch_config())


def test_criterion_6_nas(verdict, reduced_run):
    bundle, report = reduced_run
    nas = report.nas
    names = [t.activation for t in nas.trials]
    vals = [t.val_loss for t in nas.trials]
    argmin = names[int(np.nanargmin(vals))]
    ok = names == ["sigmoid", "leaky_relu", "relu", "elu", "swish"] and nas.winner == argmin \
        and bundle.ffnn.activation == nas.winner
    verdict(6, ok, f"{len(names)} trials, winner {nas.winner}, argmin {argmin}")
    assert ok


def test_criterion_8_determinism_and_persistence(verdict, reduced_run, tmp_path):
    bundle, _ = reduced_run
    again, _ = offline_train(reduced_epoch_config())
    identical = bundle_bytes(again) == bundle_bytes(bundle)
    save_bundle(bundle, tmp_path / "cd.srmb")
    loaded = load_bundle(tmp_path / "cd.srmb")
    mu = bundle.test_params[0]
    same_pred = np.array_equal(online_predict(loaded, mu).fields, online_predict(bundle, mu).fields)
    ok = identical and same_pred
    verdict(8, ok, f"bundles bit-identical {identical}, reloaded prediction bit-identical {same_pred}")
    assert ok


# --------------------------------------------------------------------------- 7

def test_criterion_7_metrics(verdict):
    trivial = [
        np.array_equal(eps_abs([1.0, 2.0], [1.0, 1.0]), [0.0, 1.0]),
        eps_rel([1.0, 2.0], [1.0, 1.0]) == 1 / 3,
        eps_nrms([0.0, 2.0], [1.0, 1.0]) == 0.5,
        eps_l2([3.0, 4.0], [0.0, 0.0]) == 1.0,
        eps_rel([1.0, 2.0], [1.0, 2.0]) == 0.0 and eps_nrms([0.0, 2.0], [0.0, 2.0]) == 0.0,
    ]
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(100):
        u, v = rng.normal(size=40), rng.normal(size=40)
        c, s = rng.uniform(-100, 100), rng.uniform(-100, 100)
        worst = max(worst,
                    abs(eps_rel(c * u, c * v) - eps_rel(u, v)) / eps_rel(u, v),
                    abs(eps_l2(c * u, c * v) - eps_l2(u, v)) / eps_l2(u, v),
                    abs(eps_nrms(u + s, v + s) - eps_nrms(u, v)) / eps_nrms(u, v))
    ok = all(trivial) and worst <= 1e-12
    verdict(7, ok, f"{sum(trivial)}/{len(trivial)} trivial examples exact, max invariance deviation {worst:.1e} (tol 1e-12)")
    assert ok


# --------------------------------------------------------------------------- 9

def test_criterion_9_analytic_fidelity(verdict):
    grid = Grid2D(64, 64)
    X, Y = grid.coordinates()
    params = sample_parameters([[100, 200], [100, 200]], 6, 4, seed=0)
    worst = float(np.max(np.abs(cd_analytic_field(grid, params.training[0], 0.0) - cd_initial_field(grid))))
    for v in np.vstack([params.training, params.testing]):
        for t in np.concatenate([[0.0], cd_time_grid(0.01, 100)]):
            c = cd_analytic_field(grid, v, t)
            if t == 0.0:
                worst = max(worst, float(np.max(np.abs(c - cd_initial_field(grid)))))
            for side in (0, 1):
                mask = X == side
                worst = max(worst, float(np.max(np.abs(c[mask] - cd_boundary_x(Y[mask], v, t, side)))))
    ok = worst <= 1e-14
    verdict(9, ok, f"max IC/BC deviation {worst:.1e} (tol 1e-14)")
    assert ok
