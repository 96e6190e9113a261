"""Simulate a one-pool Tarlee-style record and recover its parameters.

Runs four short chains (a few minutes on one core) and prints posterior
summaries next to the truth, the Gelman-Rubin table and SOC change.
Pass ``--desk`` for the full 20k-iteration preset.
"""

import argparse

import numpy as np

from soilcarbon import (
    ChainConfig,
    ModelSpec,
    Pools,
    SimConfig,
    Site,
    SoilCarbonContext,
    example_theta,
    gelman_rubin,
    run_chains,
    simulate,
    soc_change,
)


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--desk", action="store_true", help="use the 20k-iteration desk preset")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    spec = ModelSpec(Pools.ONE, Site.TARLEE)
    truth = example_theta(spec)
    data, latent = simulate(SimConfig(spec, truth, horizon=20, seed=args.seed, dense=True))

    cfg = ChainConfig.desk(seed=args.seed)
    if not args.desk:
        cfg = ChainConfig.desk(iterations=3000, burn_in=1000, stride=10, seed=args.seed)
    ctx = SoilCarbonContext(spec, data, n_particles=cfg.n_particles)
    chains = run_chains(ctx, cfg, n_chains=4)

    draws = np.concatenate([c.theta for c in chains])
    rhat = gelman_rubin(chains).as_dict()
    print(f"{'parameter':>10} {'truth':>9} {'mean':>9} {'5%':>9} {'95%':>9} {'R-hat':>6}")
    for j, name in enumerate(ctx.names):
        lo, hi = np.percentile(draws[:, j], [5, 95])
        print(f"{name:>10} {truth[name]:9.4f} {draws[:, j].mean():9.4f} {lo:9.4f} {hi:9.4f} {rhat[name][0]:6.2f}")
    print("acceptance:", ", ".join(f"{c.acceptance_rate:.3f}" for c in chains))

    change = soc_change(chains)
    true_change = latent.values[:, -1, -1] - latent.values[:, 0, -1]
    for f in range(3):
        q = change.quantiles[f]
        print(f"field {f + 1}: SOC change {change.baseline}-{change.target} "
              f"median {q[2]:.2f} t/ha (95% {q[0]:.2f} to {q[4]:.2f}), truth {true_change[f]:.2f}")


if __name__ == "__main__":
    main()
