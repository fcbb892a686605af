"""How fast the MC embedding mean converges as passes accumulate.

Trains a small net with dropout, then measures the across-repetition
variance of the mean embedding at several mc settings. The variance
should fall roughly like 1/mc; the printed ratio column makes that
visible without any plotting dependencies.

    python scripts/mc_convergence.py
"""

import argparse
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from mcretrieval.config import RunConfig
from mcretrieval.data import preset_args, synth_generate
from mcretrieval.training import train
from mcretrieval.uncertainty import mc_embed


def parse_args(argv):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--preset", default="hdd-like")
    ap.add_argument("--items", type=int, default=240)
    ap.add_argument("--epochs", type=int, default=80)
    ap.add_argument("--notion", default="stimulus")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--reps", type=int, default=20)
    ap.add_argument("--mc", default="5,10,20,40,80")
    ap.add_argument("--probe-items", type=int, default=8)
    return ap.parse_args(argv)


def main(argv=None):
    args = parse_args(argv)
    mc_grid = [int(m) for m in args.mc.split(",")]
    ds = synth_generate(items=args.items, seed=args.seed, **preset_args(args.preset))
    cfg = RunConfig(embed_dim=16, hidden_dim=16, epochs=args.epochs,
                    decay_start=args.epochs // 2, dropout=0.1, lr=0.01,
                    seed=args.seed, batch_size=128, triplet_cap=200,
                    frame_samples=3)
    net = train(ds, cfg).net
    probes = ds.items[: args.probe_items]

    # rep blocks spaced past the largest mc so repetitions never share streams
    stride = max(mc_grid) + 64

    def spread(mc):
        per_item = []
        for item in probes:
            means = [mc_embed(net, item.payloads, args.notion, mc,
                              10_000 + stride * r).mean for r in range(args.reps)]
            per_item.append(np.var(np.stack(means), axis=0).mean())
        return float(np.mean(per_item))

    print(f"{'mc':>5}{'var(mean)':>14}{'var*mc':>12}{'vs prev':>9}")
    prev = None
    for mc in mc_grid:
        v = spread(mc)
        ratio = f"{prev / v:>8.2f}x" if prev is not None else f"{'-':>9}"
        print(f"{mc:>5}{v:>14.3e}{v * mc:>12.3e}{ratio}")
        prev = v
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
