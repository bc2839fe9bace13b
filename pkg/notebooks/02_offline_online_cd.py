# %% [markdown]
# # Offline training and online prediction for the convection-diffusion case
#
# The offline phase compresses snapshots, trains the autoencoder on the reduced
# coefficients, trains the LSTM on latent windows, searches the FFNN activation
# and trains the FFNN. The online phase predicts a held-out velocity pair and
# continues past the training horizon.
#
# Set EPOCHS to 300 for the desk-scale run (about 10 minutes on one core).

# %%
import os
import time

import numpy as np

from streamrom.config import PipelineConfig
from streamrom.metrics import error_curves
from streamrom.pipeline import benchmark_online, forecast, offline_train, save_bundle
from streamrom.snapshots import Grid2D, cd_analytic_field

EPOCHS = int(os.environ.get("EPOCHS", "20"))
cfg = PipelineConfig()
cfg.data.m = int(os.environ.get("M", "12"))
cfg.cae.epochs = cfg.lstm.epochs = cfg.ffnn.epochs = EPOCHS

t0 = time.perf_counter()
bundle, report = offline_train(cfg)
print(f"offline phase: {time.perf_counter() - t0:.0f}s")
for key, value in report.summary().items():
    print(f"  {key}: {value}")

# %% [markdown]
# Activation search results, one trial per candidate.

# %%
for row in report.nas.to_rows():
    print(f"  {row['activation']:>10}  val {row['val_loss']:.3e}{'  <- winner' if row['winner'] else ''}")

# %% [markdown]
# Predict and forecast 25% beyond the final training time, then compare with the analytic field.

# %%
mu = (122.0, 176.0)
pred = forecast(bundle, mu, 100)
grid = Grid2D(cfg.data.nx, cfg.data.ny)
truth = np.stack([cd_analytic_field(grid, mu, t) for t in pred.times])
rep = error_curves(truth, pred.fields, pred.times)
for t in (0.001, 0.004, 0.0075, 0.01):
    row = rep.at(t)
    print(f"  t={row['t']:.4f}  eps_rel {row['eps_rel']:.3f}  eps_nrms {row['eps_nrms']:.3f}")

# %% [markdown]
# Online cost against the analytic generator used as the reference solver.

# %%
timing = benchmark_online(bundle, mu, repeats=5, hfm_seconds=report.hfm_seconds_per_query)
print(f"  online total {timing['total_seconds']:.4f}s, speed-up {timing['total_speedup']:.2f}x")
save_bundle(bundle, "cd_demo.srmb")
