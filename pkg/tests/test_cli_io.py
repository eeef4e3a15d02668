#!/usr/bin/env python3
# -*- coding: utf-8 -*-

import csv
import json
import os
import shutil
import sys
import tempfile
import unittest

import numpy as np

# Add src directory to path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '../src')))

from analytics import Profile
from cli_io import (COMMANDS, EXIT_CRITERION_FAILED, EXIT_INVALID_INPUT, EXIT_PASS,
                    ExperimentConfig, load_profile, run_config, verify_output, write_profile)
from main import main
from utils import apply_overrides, load_config


def read_csv(path):
    """Header comment lines and the data rows of an output file."""
    with open(path, 'r') as f:
        lines = f.read().splitlines()
    comments = [line for line in lines if line.startswith('#')]
    rows = list(csv.reader(line for line in lines if not line.startswith('#')))
    return comments, rows[0], rows[1:]


class TestProfileFiles(unittest.TestCase):
    """Reading and writing profile tables."""

    def setUp(self):
        self.test_dir = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.test_dir)

    def _write(self, name, text):
        path = os.path.join(self.test_dir, name)
        with open(path, 'w') as f:
            f.write(text)
        return path

    def test_zero_profile(self):
        profile = load_profile(self._write("zero.txt", "-1 0\n1 0\n"))
        self.assertTrue(profile.is_zero())

    def test_triangle_with_comments(self):
        path = self._write("tri.txt", "# knots\n-1 0\n\n0 1   # peak\n1 0\n")
        profile = load_profile(path)
        self.assertEqual(profile.evaluate(0.0), 1.0)
        self.assertEqual(profile.support, (-1.0, 1.0))

    def test_negative_value_reports_line(self):
        path = self._write("neg.txt", "0 0\n0.5 -2\n1 0\n")
        with self.assertRaises(ValueError) as ctx:
            load_profile(path)
        self.assertIn(":2:", str(ctx.exception))
        self.assertIn("negative", str(ctx.exception))

    def test_malformed_line(self):
        path = self._write("bad.txt", "0 0\n0.5 abc\n1 0\n")
        with self.assertRaises(ValueError) as ctx:
            load_profile(path)
        self.assertIn(":2:", str(ctx.exception))
        path = self._write("cols.txt", "0 0 0\n")
        with self.assertRaises(ValueError):
            load_profile(path)

    def test_missing_file(self):
        with self.assertRaises(FileNotFoundError):
            load_profile(os.path.join(self.test_dir, "missing.txt"))

    def test_round_trip_is_exact(self):
        profile = Profile(knots=np.array([-1.0, 0.1234567891234567, 0.7, 1.0]),
                          values=np.array([0.0, 1.0 / 3.0, 2.0 ** 0.5, 0.0]))
        path = os.path.join(self.test_dir, "round.txt")
        write_profile(profile, path)
        loaded = load_profile(path)
        np.testing.assert_array_equal(loaded.knots, profile.knots)
        np.testing.assert_array_equal(loaded.values, profile.values)


class TestExperimentConfig(unittest.TestCase):
    """Validation of merged configurations."""

    def _config(self, **experiment):
        config = load_config()
        config["experiment"].update(experiment)
        return config

    def test_defaults_are_valid(self):
        cfg = ExperimentConfig.from_dict(self._config())
        self.assertEqual(cfg.command, "kernel")
        self.assertEqual(cfg.output_format, "csv")

    def test_invalid_settings(self):
        invalid = [
            self._config(command="teleport"),
            self._config(t=0.0),
            self._config(command="lln", n_list=[20]),
            self._config(command="lln", n_list=[200, 20]),
            self._config(command="hydro", profile_path="p.txt", test_fn_path=None),
            self._config(command="local-eq", profile_path=None),
            self._config(command="laplace", profile_path="p.txt", **{"lambda": {}}),
            self._config(replicas=0),
            self._config(steps=1.5),
            self._config(replicas=None),
            self._config(t=None),
            self._config(t="fast"),
            self._config(n=True),
            self._config(command="lln", n_list=20),
            self._config(command="laplace", profile_path="p.txt", **{"lambda": [1, 2]}),
            self._config(command="laplace", profile_path="p.txt", **{"lambda": {"a": 1.0}}),
            self._config(probe_offsets=None),
            self._config(command="heat", profile_path=7),
        ]
        for config in invalid:
            with self.assertRaises(ValueError, msg=str(config["experiment"])):
                ExperimentConfig.from_dict(config)

    def test_wrong_type_tolerance(self):
        config = self._config()
        config["tolerances"]["ks_bound"] = None
        with self.assertRaises(ValueError):
            ExperimentConfig.from_dict(config)

    def test_wrong_type_values_exit_as_invalid_input(self):
        for experiment in ({"replicas": None}, {"t": None}, {"lambda": [1, 2]}):
            config = self._config(**experiment)
            self.assertEqual(run_config(config), EXIT_INVALID_INPUT, msg=str(experiment))
        config = self._config()
        config["experiment"] = None
        self.assertEqual(run_config(config), EXIT_INVALID_INPUT)

    def test_nonpositive_tolerance(self):
        config = self._config()
        config["tolerances"]["tv_threshold"] = 0.0
        with self.assertRaises(ValueError):
            ExperimentConfig.from_dict(config)

    def test_large_seed_is_kept_exactly(self):
        seed = 2 ** 63 + 1
        self.assertEqual(ExperimentConfig.from_dict(self._config(seed=seed)).seed, seed)

    def test_lambda_keys_become_sites(self):
        cfg = ExperimentConfig.from_dict(self._config(
            command="laplace", profile_path="p.txt", **{"lambda": {"-1": 0.5, "2": 1}}))
        self.assertEqual(cfg.lam, {-1: 0.5, 2: 1.0})


class TestRun(unittest.TestCase):
    """End-to-end command runs."""

    def setUp(self):
        self.test_dir = tempfile.mkdtemp()
        self.triangle_path = os.path.join(self.test_dir, "triangle.txt")
        self.zero_path = os.path.join(self.test_dir, "zero.txt")
        write_profile(Profile.triangle(), self.triangle_path)
        write_profile(Profile.zero(), self.zero_path)

    def tearDown(self):
        shutil.rmtree(self.test_dir)

    def _config(self, out_name, fmt="csv", **experiment):
        config = load_config()
        config["experiment"].update(experiment)
        config["logging"]["enabled"] = True
        return apply_overrides(config, out=os.path.join(self.test_dir, out_name), fmt=fmt)

    def test_evolve_rows(self):
        config = self._config("evolve.csv", command="evolve", site=0, coin="PLUS", steps=3)
        self.assertEqual(run_config(config), EXIT_PASS)
        comments, header, rows = read_csv(os.path.join(self.test_dir, "evolve.csv"))
        self.assertEqual(header, ["site", "probability"])
        self.assertEqual([int(r[0]) for r in rows], [-3, -1, 1, 3])
        for row, expected in zip(rows, [0.125, 0.125, 0.625, 0.125]):
            self.assertAlmostEqual(float(row[1]), expected, delta=1e-12)
        self.assertTrue(any(line.startswith("# version:") for line in comments))
        self.assertTrue(any(line.startswith("# config:") for line in comments))

    def test_kernel_json(self):
        config = self._config("kernel.json", fmt="json", command="kernel", n=40)
        self.assertEqual(run_config(config), EXIT_PASS)
        with open(os.path.join(self.test_dir, "kernel.json")) as f:
            document = json.load(f)
        self.assertEqual(document["columns"], ["site", "probability"])
        self.assertTrue(document["verdict"]["passed"])
        self.assertEqual(document["provenance"]["command"], "kernel")
        self.assertAlmostEqual(sum(row[1] for row in document["rows"]), 1.0, delta=1e-12)

    def test_lln_scan_and_density_table(self):
        config = self._config("lln.csv", command="lln", n_list=[20, 200])
        config["tolerances"]["ks_bound"] = 0.5
        self.assertEqual(run_config(config), EXIT_PASS)
        _, header, rows = read_csv(os.path.join(self.test_dir, "lln.csv"))
        self.assertEqual(header[:3], ["n", "ks_distance", "stderr"])
        self.assertLess(float(rows[1][1]), float(rows[0][1]))
        _, density_header, density_rows = read_csv(os.path.join(self.test_dir, "lln.density.csv"))
        self.assertEqual(density_header, ["x", "rescaled_pmf", "density_f"])
        self.assertGreater(len(density_rows), 150)

    def test_criterion_failure_still_writes_output(self):
        config = self._config("lln_fail.csv", command="lln", n_list=[20, 200])
        config["tolerances"]["ks_bound"] = 1e-6
        self.assertEqual(run_config(config), EXIT_CRITERION_FAILED)
        self.assertTrue(os.path.exists(os.path.join(self.test_dir, "lln_fail.csv")))

    def test_hydro_zero_profile_passes(self):
        config = self._config("hydro.csv", command="hydro", n_list=[10, 20], replicas=5,
                              profile_path=self.zero_path, test_fn_path=self.triangle_path)
        self.assertEqual(run_config(config), EXIT_PASS)
        _, header, rows = read_csv(os.path.join(self.test_dir, "hydro.csv"))
        column = header.index("functional_mean")
        self.assertEqual([float(r[column]) for r in rows], [0.0, 0.0])

    def test_hydro_bound_is_relative_only(self):
        config = self._config("hydro_tri.csv", command="hydro", n_list=[10, 20], replicas=3,
                              seed=0, profile_path=self.triangle_path,
                              test_fn_path=self.triangle_path)
        self.assertEqual(run_config(config), EXIT_CRITERION_FAILED)
        comments, _, _ = read_csv(os.path.join(self.test_dir, "hydro_tri.csv"))
        verdict = json.loads(next(line for line in comments
                                  if line.startswith("# verdict:"))[len("# verdict:"):])
        self.assertAlmostEqual(verdict["allowed_error"], 0.05 * abs(verdict["target"]),
                               delta=1e-15)
        self.assertGreater(verdict["last"], verdict["allowed_error"])

    def test_local_eq_needs_a_decrease(self):
        # TV against Poisson(0) is 0 at every scale, so it never decreases
        config = self._config("local_eq.csv", command="local-eq", n_list=[8, 16], replicas=20,
                              profile_path=self.zero_path)
        self.assertEqual(run_config(config), EXIT_CRITERION_FAILED)
        comments, _, rows = read_csv(os.path.join(self.test_dir, "local_eq.csv"))
        self.assertEqual([float(r[1]) for r in rows], [0.0, 0.0])
        verdict = json.loads(next(line for line in comments
                                  if line.startswith("# verdict:"))[len("# verdict:"):])
        self.assertTrue(verdict["below_threshold"])
        self.assertFalse(verdict["passed"])

    def test_negative_profile_is_invalid_input(self):
        bad = os.path.join(self.test_dir, "bad.txt")
        with open(bad, 'w') as f:
            f.write("0 0\n0.5 -2\n1 0\n")
        config = self._config("bad.csv", command="heat", profile_path=bad)
        self.assertEqual(run_config(config), EXIT_INVALID_INPUT)

    def test_missing_profile_is_invalid_input(self):
        config = self._config("missing.csv", command="heat",
                              profile_path=os.path.join(self.test_dir, "missing.txt"))
        self.assertEqual(run_config(config), EXIT_INVALID_INPUT)

    def test_invalid_time_is_invalid_input(self):
        config = self._config("t.csv", command="heat", profile_path=self.triangle_path, t=-1.0)
        self.assertEqual(run_config(config), EXIT_INVALID_INPUT)

    def test_heat_table(self):
        config = self._config("heat.csv", command="heat", profile_path=self.triangle_path,
                              grid_points=21)
        self.assertEqual(run_config(config), EXIT_PASS)
        _, header, rows = read_csv(os.path.join(self.test_dir, "heat.csv"))
        self.assertEqual(header, ["x", "rho", "heat"])
        self.assertEqual(len(rows), 21)
        self.assertEqual(float(rows[0][1]), 0.0)
        self.assertGreater(float(rows[0][2]), 0.0)
        self.assertTrue(os.path.exists(os.path.join(self.test_dir, "heat.kernel.csv")))

    def test_laplace_command(self):
        config = self._config("laplace.csv", command="laplace", n=16, t=1.0, replicas=2000,
                              profile_path=self.triangle_path,
                              **{"lambda": {"-1": 0.5, "0": 1.0, "1": 0.5}})
        config["tolerances"]["laplace_sigma"] = 4.0
        self.assertEqual(run_config(config), EXIT_PASS)
        _, header, rows = read_csv(os.path.join(self.test_dir, "laplace.csv"))
        self.assertEqual(header, ["n", "steps", "exact", "monte_carlo", "stderr", "gap"])
        self.assertEqual(len(rows), 1)

    def test_identical_seeds_give_identical_bytes(self):
        settings = {
            "evolve": {"steps": 5},
            "kernel": {"n": 20},
            "lln": {"n_list": [20, 200]},
            "local-eq": {"n_list": [8, 16], "replicas": 20, "profile_path": self.triangle_path},
            "hydro": {"n_list": [10, 20], "replicas": 5, "profile_path": self.triangle_path,
                      "test_fn_path": self.triangle_path},
            "laplace": {"n": 16, "replicas": 50, "profile_path": self.triangle_path,
                        "lambda": {"0": 1.0, "2": 0.5}},
            "heat": {"grid_points": 11, "profile_path": self.triangle_path},
            "product-poisson": {"n": 16, "replicas": 50, "profile_path": self.triangle_path},
        }
        self.assertEqual(set(settings), set(COMMANDS))
        for command in COMMANDS:
            with self.subTest(command=command):
                path = os.path.join(self.test_dir, f"same_{command}.csv")
                outputs = []
                for _ in range(2):
                    config = self._config("unused.csv", command=command, seed=123,
                                          **settings[command])
                    config["output"]["path"] = path
                    self.assertIn(run_config(config), (EXIT_PASS, EXIT_CRITERION_FAILED))
                    with open(path, 'rb') as f:
                        outputs.append(f.read())
                self.assertEqual(outputs[0], outputs[1])

    def test_digest_sidecar(self):
        config = self._config("digest.csv", command="kernel", n=10)
        config["output"]["write_digest"] = True
        self.assertEqual(run_config(config), EXIT_PASS)
        path = os.path.join(self.test_dir, "digest.csv")
        self.assertTrue(os.path.exists(path + ".sha256"))
        self.assertTrue(verify_output(path))
        with open(path, 'a') as f:
            f.write("tampered\n")
        self.assertFalse(verify_output(path))


class TestMain(unittest.TestCase):
    """Command line entry point."""

    def setUp(self):
        self.test_dir = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.test_dir)

    def test_flags_override_config(self):
        config_path = os.path.join(self.test_dir, "config.json")
        with open(config_path, 'w') as f:
            json.dump({"experiment": {"command": "kernel", "n": 8}}, f)
        out = os.path.join(self.test_dir, "evolve.json")
        code = main(["evolve", "--config", config_path, "--out", out, "--format", "json",
                     "--log-level", "WARNING"])
        self.assertEqual(code, EXIT_PASS)
        with open(out) as f:
            document = json.load(f)
        self.assertEqual(document["provenance"]["command"], "evolve")

    def test_bad_config_file(self):
        config_path = os.path.join(self.test_dir, "broken.json")
        with open(config_path, 'w') as f:
            f.write("{not json")
        self.assertEqual(main(["--config", config_path]), EXIT_INVALID_INPUT)


if __name__ == "__main__":
    unittest.main()
