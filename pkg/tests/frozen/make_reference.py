"""Regenerate ``reference.json`` from the oracles on fixed inputs.

Only oracle code and the data generator run here; package estimators are
compared against these numbers in the tests.
"""

import json
import sys
from pathlib import Path

import numpy as np

HERE = Path(__file__).parent
sys.path.insert(0, str(HERE.parent))

import oracles  # noqa: E402
from drdb.bench import DgpConfig, generate_dgp  # noqa: E402


def main():
    rng = np.random.default_rng(99)
    x = rng.standard_normal((40, 3))
    design = np.hstack([np.ones((40, 1)), x])
    y = design @ np.array([1.0, 2.0, -1.0, 0.5]) + 0.3 * rng.standard_normal(40)
    labels = (rng.random(40) < 1 / (1 + np.exp(-x[:, 0]))).astype(float)
    penalty = np.array([1e-4, 1.0, 1.0, 1.0])

    data, truth = generate_dgp(DgpConfig(n=300, p=4, s=2), 777)
    eif = oracles.aipw_mean(data.y, data.t, truth.m1(data.x), truth.m0(data.x), truth.e(data.x))

    ref = {
        "regression_design_seed": 99,
        "ridge_lam_0p7": oracles.ridge_augmented(design, y, 0.7).tolist(),
        "logistic_mode": oracles.logistic_mode_bfgs(design, labels, penalty).tolist(),
        "small_sim_eif_mean": eif,
        "small_sim_treated": int(data.t.sum()),
    }
    (HERE / "reference.json").write_text(json.dumps(ref, indent=2) + "\n")


if __name__ == "__main__":
    main()
