"""
How step size and relaxation width trade off
============================================

Two sweeps on the Brownian bridge (eps = 0.3, x0 = (0, 0), x_f = (2, 2), T = 1):

* step size: with sigma = 0 the exact feedback law's terminal error shrinks
  roughly like 0.18 dt, while replaying the reversed input open loop is stuck
  at the free-diffusion error 2 eps^2 T = 0.18;
* relaxation width sigma: a wider start makes the law gentler (less control
  energy) but less precise; the reversed input u = x0 - x_f removes the bias
  that sigma otherwise introduces.

Tables are appended to JSON-lines files and reused on a rerun. Pass
``--learned`` to add the trained controller to the step-size sweep (slow).
"""
import argparse
from pathlib import Path

from revsteer.bench import bridge_config, sweep_dt, sweep_sigma

p = argparse.ArgumentParser(description=__doc__.splitlines()[1])
p.add_argument("--learned", action="store_true")
p.add_argument("--out", default=str(Path(__file__).parent / "runs" / "sweeps"))
args = p.parse_args()
out = Path(args.out)
out.mkdir(parents=True, exist_ok=True)

seeds = [0, 1, 2, 3, 4]
kinds = ("exact-linear", "open-loop") + (("learned",) if args.learned else ())
cfg = bridge_config(sigma=0.0, seeds=seeds, train={"iterations": 2000, "lr_final_factor": 0.01})
rows = sweep_dt(cfg, [0.032, 0.016, 0.008, 0.004], kinds, out_path=out / "sweep_dt.jsonl")
print("dt requested   dt used   controller     mean MSE")
for r in rows:
    print(f"{r['dt_requested']:>12}  {r['dt']:.5f}   {r['controller']:<13} {r['mse_mean']:.5f}")

rows = sweep_sigma(bridge_config(seeds=seeds), [0.02, 0.05, 0.1, 0.2, 0.3], out_path=out / "sweep_sigma.jsonl")
print("\nsigma   input      mean MSE   mean U_norm")
for r in rows:
    print(f"{r['sigma']:<6}  {r['u']:<9}  {r['mse_mean']:.5f}    {r['unorm_mean']:.3f}")
print(f"\ntables in {out}")
