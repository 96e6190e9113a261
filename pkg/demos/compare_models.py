"""Leave-future-out comparison of the one- and five-pool models.

Data come from the one-pool model, so the simpler model should score at
least as well.  Short chains by default; ``--desk`` uses the desk preset.
"""

import argparse

from soilcarbon import ChainConfig, ModelSpec, Pools, SimConfig, Site, SoilCarbonContext, elpd_lfo, example_theta, simulate


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--desk", action="store_true")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--L", type=int, default=22, help="first fit length")
    args = ap.parse_args()

    one = ModelSpec(Pools.ONE, Site.TARLEE)
    data, _ = simulate(SimConfig(one, example_theta(one), horizon=25, seed=args.seed, dense=True))
    cfg = ChainConfig.desk(seed=args.seed)
    if not args.desk:
        cfg = ChainConfig.desk(iterations=2000, burn_in=500, stride=10, seed=args.seed)

    for pools in (Pools.ONE, Pools.FIVE):
        spec = ModelSpec(pools, Site.TARLEE)
        res = elpd_lfo(SoilCarbonContext(spec, data, n_particles=cfg.n_particles), cfg, L=args.L)
        lpds = ", ".join(f"t={t}: {v:.2f}" for t, v in zip(res.times, res.lpd))
        print(f"{pools.name.lower():>5}-pool  ELPD {res.elpd:8.2f}  ({lpds})")


if __name__ == "__main__":
    main()
