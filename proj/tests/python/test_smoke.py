import math
import unittest
from pathlib import Path

import numpy as np

import kronfit

DATA = Path(__file__).resolve().parent.parent / "data"

DESIGN = {
    "subjects": 40, "t": 3, "s": 4,
    "covariates": [{"name": "x", "kind": "subject_normal"}],
    "beta": [1.0, 0.5], "sigma2": 1.0,
    "factor1": {"family": "lear", "params": [0.8, 0.5]},
    "factor2": {"family": "ar1", "params": [0.5]},
    "seed": 3,
}


class Smoke(unittest.TestCase):
    def test_simulate_and_fit(self):
        ds = kronfit.simulate(DESIGN)
        self.assertEqual(ds.num_subjects, 40)
        self.assertEqual(ds.n, 40 * 12)
        self.assertEqual(ds.covariate_names, ["(Intercept)", "x"])
        x, y = ds.design(), ds.response()
        self.assertEqual(x.shape, (480, 2))
        self.assertEqual(y.shape, (480,))

        rep = kronfit.fit(ds, "lear", "ar1")
        self.assertTrue(rep["converged"])
        beta = np.array([c["estimate"] for c in rep["coefficients"]])
        f1 = rep["covariance"]["factor1"]
        f2 = rep["covariance"]["factor2"]
        spec1 = "lear:%r,%r" % (f1["params"][0]["estimate"], f1["scaled_decay"]["estimate"])
        spec2 = "ar1:%r" % f2["params"][0]["estimate"]
        self.assertAlmostEqual(kronfit.profile_loglik(ds, beta, spec1, spec2), rep["loglik"], delta=1e-8)

    def test_same_seed_same_data(self):
        a = kronfit.simulate(DESIGN).response()
        b = kronfit.simulate(DESIGN).response()
        c = kronfit.simulate(DESIGN, seed=4).response()
        self.assertTrue(np.array_equal(a, b))
        self.assertFalse(np.array_equal(a, c))

    def test_fixture_round_trip(self):
        ds = kronfit.load_dataset(DATA / "lear_fixture.csv")
        self.assertEqual(kronfit.validate(ds)["warnings"], 0)
        sel = kronfit.select(ds, "lear,ar1", "lear,ar1", threads=2)
        self.assertEqual((sel["best"]["factor1"], sel["best"]["factor2"]), ("lear", "lear"))

    def test_surface_and_correlation(self):
        rep = kronfit.surface("lear:0.9,1", "lear:0.9,1", (0, 2), (0, 2), steps=3)
        self.assertAlmostEqual(rep["predicted"][1][1], 0.81, places=12)
        self.assertAlmostEqual(kronfit.lear_correlation(0.9, 4.0, 3.0, 1.0, 5.0), 0.9 ** 3, places=14)
        self.assertTrue(math.isclose(kronfit.lear_correlation(0.9, 0.0, 3.0, 1.0, 5.0), 0.9))

    def test_errors(self):
        with self.assertRaises(kronfit.InputError):
            kronfit.load_dataset(DATA / "missing.csv")
        with self.assertRaises(kronfit.KronfitError):
            kronfit.fit(kronfit.simulate(DESIGN), "bogus", "ar1")


if __name__ == "__main__":
    unittest.main()
