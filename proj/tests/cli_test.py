"""End-to-end tests of the kronfit command-line tool.

Usage: cli_test.py <path-to-kronfit> <fixture-dir>
"""

import csv
import io
import json
import math
import os
import subprocess
import sys
import tempfile
import unittest
from pathlib import Path

KRONFIT = None
DATA = None


def run(*args, env=None):
    full_env = dict(os.environ)
    full_env.pop("KRONFIT_THREADS", None)
    if env:
        full_env.update(env)
    return subprocess.run([KRONFIT, *map(str, args)], capture_output=True, text=True, env=full_env)


def sections(csv_text):
    """Splits a sectioned CSV report into {section: rows}."""
    out, name, buf = {}, None, []
    for line in csv_text.splitlines():
        if line.startswith("# "):
            if name is not None:
                out[name] = list(csv.DictReader(io.StringIO("\n".join(buf))))
            name, buf = line[2:].strip(), []
        elif line.strip():
            buf.append(line)
    if name is not None:
        out[name] = list(csv.DictReader(io.StringIO("\n".join(buf))))
    return out


def assert_close_json(tc, got, want, path="$"):
    if isinstance(want, dict):
        tc.assertEqual(list(got.keys()), list(want.keys()), path)
        for k in want:
            assert_close_json(tc, got[k], want[k], f"{path}.{k}")
    elif isinstance(want, list):
        tc.assertEqual(len(got), len(want), path)
        for i, (g, w) in enumerate(zip(got, want)):
            assert_close_json(tc, g, w, f"{path}[{i}]")
    elif isinstance(want, float) and not isinstance(want, bool):
        tc.assertTrue(math.isclose(got, want, rel_tol=1e-7, abs_tol=1e-9), f"{path}: {got} vs {want}")
    else:
        tc.assertEqual(got, want, path)


class ExitCodes(unittest.TestCase):
    def test_missing_subcommand_and_file(self):
        self.assertEqual(run().returncode, 1)
        r = run("fit", "--data", "does-not-exist.csv")
        self.assertEqual(r.returncode, 1)
        self.assertIn("cannot open", r.stderr)
        self.assertEqual(run("--help").returncode, 0)

    def test_malformed_csv_names_the_line(self):
        with tempfile.TemporaryDirectory() as tmp:
            bad = Path(tmp, "bad.csv")
            bad.write_text("subject,f1,f2_id,y\na,0,1,1.0\na,0,2\n")
            r = run("fit", "--data", bad)
            self.assertEqual(r.returncode, 1)
            self.assertIn("line 3", r.stderr)
            bad.write_text("subject,f1,f2_id,y\na,0,1,abc\n")
            r = run("validate", "--data", bad)
            self.assertEqual(r.returncode, 1)
            self.assertIn("line 2", r.stderr)

    def test_non_convergence_still_writes_the_report(self):
        with tempfile.TemporaryDirectory() as tmp:
            cfg = Path(tmp, "cfg.json")
            cfg.write_text(json.dumps({"fit": {"max_iter": 1}}))
            out = Path(tmp, "fit.json")
            r = run("fit", "--data", DATA / "lear_fixture.csv", "--config", cfg, "--format", "json", "--out", out)
            self.assertEqual(r.returncode, 2)
            self.assertFalse(json.loads(out.read_text())["converged"])

    def test_bad_flags(self):
        self.assertEqual(run("fit", "--data", DATA / "lear_fixture.csv", "--factor1", "bogus").returncode, 1)
        self.assertEqual(run("fit", "--data", DATA / "lear_fixture.csv", "--format", "xml").returncode, 1)
        r = run("select", "--data", DATA / "lear_fixture.csv", env={"KRONFIT_THREADS": "zero"})
        self.assertEqual(r.returncode, 1)
        with tempfile.TemporaryDirectory() as tmp:
            cfg = Path(tmp, "cfg.json")
            cfg.write_text(json.dumps({"fitt": {}}))
            self.assertEqual(run("fit", "--data", DATA / "lear_fixture.csv", "--config", cfg).returncode, 1)


class Fit(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        r = run("fit", "--data", DATA / "lear_fixture.csv", "--format", "json")
        assert r.returncode == 0, r.stderr
        cls.report = json.loads(r.stdout)

    def test_golden_report(self):
        want = json.loads((DATA / "lear_fixture.fit.golden.json").read_text())
        assert_close_json(self, self.report, want)

    def test_estimates_cover_the_simulating_truth(self):
        truth = json.loads((DATA / "lear_fixture.truth.json").read_text())
        beta = truth["design"]["beta"]
        for coef, b in zip(self.report["coefficients"], beta):
            self.assertLess(abs(coef["estimate"] - b), 4 * coef["se"], coef["term"])
        for factor in ("factor1", "factor2"):
            block = self.report["covariance"][factor]
            rho = block["params"][0]
            self.assertLess(abs(rho["estimate"] - 0.9), 4 * rho["se"])
            dec = block["scaled_decay"]
            self.assertLess(abs(dec["estimate"] - 0.5), 4 * dec["se"])

    def test_formats_agree(self):
        csv_out = run("fit", "--data", DATA / "lear_fixture.csv", "--format", "csv")
        text_out = run("fit", "--data", DATA / "lear_fixture.csv")
        self.assertEqual(csv_out.returncode, 0)
        coef = sections(csv_out.stdout)["coefficients"]
        for row, c in zip(coef, self.report["coefficients"]):
            self.assertEqual(row["term"], c["term"])
            for key in ("estimate", "se", "p_value"):
                self.assertLessEqual(abs(float(row[key]) - c[key]), 1e-12 * max(1.0, abs(c[key])))
                self.assertIn(f"{c[key]:.4f}", text_out.stdout)
        self.assertIn(f"{self.report['loglik']:.4f}", text_out.stdout)

    def test_text_layout(self):
        text = run("fit", "--data", DATA / "lear_fixture.csv").stdout
        self.assertIn("Estimates, standard errors, and p-values", text)
        header = next(l for l in text.splitlines() if l.startswith("term"))
        self.assertEqual(header.split(), ["term", "Estimate", "SE", "p-value"])
        self.assertIn("Covariance parameters", text)
        self.assertLess(text.index("Estimates, standard errors"), text.index("Covariance parameters"))
        for name in ("sigma2", "factor1.rho", "factor1.delta_scaled", "factor2.rho", "factor2.delta_scaled"):
            self.assertIn(name, text)

    def test_trace_file(self):
        with tempfile.TemporaryDirectory() as tmp:
            trace = Path(tmp, "trace.jsonl")
            r = run("fit", "--data", DATA / "lear_fixture.csv", "--trace", trace)
            self.assertEqual(r.returncode, 0)
            lines = [json.loads(l) for l in trace.read_text().splitlines()]
            self.assertEqual(len(lines), len(self.report["trace"]))
            ll = [l["loglik"] for l in lines]
            for a, b in zip(ll, ll[1:]):
                self.assertGreaterEqual(b, a - 1e-12 * abs(a))


class Select(unittest.TestCase):
    def test_lear_fixture_selects_lear(self):
        r = run("select", "--data", DATA / "lear_fixture.csv", "--format", "json", "--threads", "2")
        self.assertEqual(r.returncode, 0, r.stderr)
        rep = json.loads(r.stdout)
        self.assertEqual(rep["best"]["factor1"], "lear")
        self.assertEqual(rep["best"]["factor2"], "lear")

    def test_single_cell_grid_is_a_fit(self):
        fit = json.loads(run("fit", "--data", DATA / "null_fixture.csv", "--factor1", "ar1", "--factor2", "ar1",
                             "--format", "json").stdout)
        sel = json.loads(run("select", "--data", DATA / "null_fixture.csv", "--families1", "ar1", "--families2",
                             "ar1", "--format", "json").stdout)
        self.assertEqual(len(sel["cells"]), 1)
        self.assertEqual(sel["cells"][0]["loglik"], fit["loglik"])
        self.assertEqual(sel["cells"][0]["aic"], fit["aic"])

    def test_null_fixture_reduces_to_intercept(self):
        r = run("select", "--data", DATA / "null_fixture.csv", "--families1", "ar1", "--families2", "ar1",
                "--backward", "--format", "json")
        self.assertEqual(r.returncode, 0, r.stderr)
        back = json.loads(r.stdout)["backward"]
        self.assertEqual(back["alpha"], 0.2)
        self.assertEqual(back["kept"], [])
        self.assertEqual(sorted(s["term"] for s in back["removed"]), ["z1", "z2", "z3"])
        for s in back["removed"]:
            self.assertGreater(s["p_value"], 0.2)
        self.assertEqual([c["term"] for c in back["final"]["coefficients"]], ["(Intercept)"])


class Surface(unittest.TestCase):
    def grid(self, *args):
        r = run("surface", *args, "--format", "csv")
        self.assertEqual(r.returncode, 0, r.stderr)
        rows = list(csv.DictReader(io.StringIO(r.stdout)))
        return {(float(x["d1"]), float(x["d2"])): float(x["predicted"]) for x in rows}

    def test_ar1_reduction(self):
        g = self.grid("--factor1", "lear:0.9,1", "--factor2", "lear:0.9,1", "--range1", "0:4", "--range2", "0:4",
                      "--steps", "5")
        self.assertAlmostEqual(g[(1.0, 1.0)], 0.81, places=12)
        for (d1, d2), v in g.items():
            self.assertAlmostEqual(v, 0.9 ** d1 * 0.9 ** d2, places=12)

    def test_monotone_in_decay(self):
        slow = self.grid("--factor1", "lear:0.9,0.5", "--factor2", "lear:0.9,0.5", "--range1", "1:4", "--range2",
                         "1:4")
        fast = self.grid("--factor1", "lear:0.9,2", "--factor2", "lear:0.9,2", "--range1", "1:4", "--range2", "1:4")
        for key in slow:
            self.assertGreaterEqual(slow[key], fast[key])

    def test_surface_from_saved_fit_with_overlay(self):
        with tempfile.TemporaryDirectory() as tmp:
            fit = Path(tmp, "fit.json")
            run("fit", "--data", DATA / "lear_fixture.csv", "--format", "json", "--out", fit)
            r = run("surface", "--fit", fit, "--data", DATA / "lear_fixture.csv", "--format", "json")
            self.assertEqual(r.returncode, 0, r.stderr)
            rep = json.loads(r.stdout)
            self.assertTrue(rep["observed"])
            self.assertEqual(run("surface", "--factor1", "lear:1.5,1", "--factor2", "ar1:0.5").returncode, 1)


class Simulate(unittest.TestCase):
    def test_fixture_regenerates_byte_identically(self):
        with tempfile.TemporaryDirectory() as tmp:
            out = Path(tmp, "lear_fixture.csv")
            r = run("simulate", "--config", DATA / "lear_fixture.sim.json", "--out", out, "--format", "json")
            self.assertEqual(r.returncode, 0, r.stderr)
            self.assertEqual(out.read_bytes(), (DATA / "lear_fixture.csv").read_bytes())
            self.assertEqual(Path(tmp, "lear_fixture.f2dist.csv").read_bytes(),
                             (DATA / "lear_fixture.f2dist.csv").read_bytes())
            truth = json.loads(Path(tmp, "lear_fixture.truth.json").read_text())
            self.assertEqual(truth["seed"], 20231)
            self.assertEqual(json.loads(r.stdout), truth)

    def test_simulated_data_validates_cleanly(self):
        with tempfile.TemporaryDirectory() as tmp:
            out = Path(tmp, "d.csv")
            self.assertEqual(run("simulate", "--config", DATA / "null_fixture.sim.json", "--seed", "99", "--out",
                                 out).returncode, 0)
            r = run("validate", "--data", out, "--format", "json")
            self.assertEqual(r.returncode, 0, r.stderr)
            self.assertEqual(json.loads(r.stdout)["warnings"], 0)

    def test_seed_override_changes_the_draw(self):
        with tempfile.TemporaryDirectory() as tmp:
            a, b = Path(tmp, "a.csv"), Path(tmp, "b.csv")
            run("simulate", "--config", DATA / "null_fixture.sim.json", "--seed", "1", "--out", a)
            run("simulate", "--config", DATA / "null_fixture.sim.json", "--seed", "2", "--out", b)
            self.assertNotEqual(a.read_bytes(), b.read_bytes())


if __name__ == "__main__":
    KRONFIT = sys.argv[1]
    DATA = Path(sys.argv[2])
    unittest.main(argv=[sys.argv[0], "-v"])
