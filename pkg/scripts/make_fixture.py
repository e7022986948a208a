"""Regenerate the shipped synthetic fixture.

One draw of n = 38 records from the v = m = 1 model at fixed reference
estimates, with error variances drawn as in the uniform scenario.
"""

import sys
from pathlib import Path

from eivbias.cli import write_csv
from eivbias.model import Theta
from eivbias.montecarlo import Scenario, generate_taus, simulate_dataset

MEN = Theta.univariate(-2.0799, 0.4690, -1.0924, 4.3163, 4.8883)


def main(path):
    scn = Scenario("uniform", MEN, n=38, seed=38)
    data = simulate_dataset(scn, generate_taus(scn), 0)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        write_csv(data, fh)


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else Path(__file__).parents[1] / "src/eivbias/data/men_synthetic.csv")
