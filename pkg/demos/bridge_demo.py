"""
Steering a Brownian particle to a point
=======================================

The two-dimensional system ``dX = U dt + eps dW`` (eps = 0.3) must be driven
from ``x0 = (0, 0)`` to ``x_f = (2, 2)`` in ``T = 1``.

1. Simulate the auxiliary process backwards from a small Gaussian around
   ``x_f`` (width sigma = 0.1), pushed by the reversed deterministic input
   ``u = x0 - x_f``.
2. Learn its score with implicit score matching (residual MLP).
3. Close the loop with the resulting feedback law and compare with the
   closed-form bridge controller and the predicted terminal error.

Run ``python demos/bridge_demo.py --iterations 10000`` for the full setting;
the default is a short run that finishes in well under a minute.
"""
import argparse
from pathlib import Path

import numpy as np

from revsteer import LinearSystem, NoiseSource, TimeGrid, builtin_system, predicted_terminal_error
from revsteer import make_exact_linear_controller, save_bundle, simulate_controlled, synthesize
from revsteer.bench import EVAL_SEED_OFFSET, mse, u_norm
from revsteer.lingauss import brownian_bridge_control
from revsteer.score import TrainConfig
from revsteer.sde_sim import write_trajectories_csv

p = argparse.ArgumentParser(description=__doc__.splitlines()[1])
p.add_argument("--iterations", type=int, default=1500)
p.add_argument("--rollouts", type=int, default=2000)
p.add_argument("--out", default=str(Path(__file__).parent / "runs" / "bridge"))
args = p.parse_args()
out = Path(args.out)

eps, sigma = 0.3, 0.1
x0, xf = np.zeros(2), np.array([2.0, 2.0])
sys = builtin_system("brownian2d", epsilon=eps)
lin = LinearSystem.from_system(sys)
grid = TimeGrid(1.0, 0.004)

# What the closed-form analysis predicts for the exact law with u = x0 - x_f (no bias)
# and with u = 0 (bias from the sigma-relaxed start).
for label, zT in (("u = x0 - x_f", x0), ("u = 0", None)):
    e = predicted_terminal_error(lin, x0, xf, sigma, 1.0, z_mean_T=zT)
    print(f"predicted E|X_T - x_f|^2 with {label}: bias^2 {e.bias2:.4f} + variance {e.variance:.4f} = {e.total:.4f}")

# Learn the feedback law from 1000 auxiliary paths.
cfg = TrainConfig(iterations=args.iterations, lr=1e-3, lr_final_factor=0.01, seed=0)
learned = synthesize(sys, grid, xf, sigma, x0 - xf, N=1000, train_config=cfg, seed=0)
print(f"training loss: first 100 mean {learned.losses[:100].mean():.3f}, last 100 mean {learned.losses[-100:].mean():.3f}")
save_bundle(learned, out / "bundle", {"steering": {"x0": x0.tolist()}})

exact = make_exact_linear_controller(lin, grid, xf, sigma, x0 - xf, system=sys)

# Roll both controllers out on the same evaluation noise.
for name, ctrl in (("learned", learned), ("exact", exact)):
    batch = simulate_controlled(sys, grid, args.rollouts, x0, ctrl, NoiseSource(EVAL_SEED_OFFSET))
    write_trajectories_csv(batch, out / f"trajectories_{name}.csv")
    print(f"{name:>8}: terminal MSE {mse(batch, xf):.4f}   control energy {u_norm(batch):.3f}")

# The learned law against the closed-form bridge law at a few points on the nominal path.
for t in (0.0, 0.5, 0.9):
    x = (1 - t) * x0 + t * xf
    print(f"t={t:.1f}  learned {np.round(learned(t, x[None])[0], 3)}  "
          f"bridge {np.round(brownian_bridge_control(x0, xf, eps, sigma, 1.0, t, x), 3)}")
print(f"outputs in {out}")
