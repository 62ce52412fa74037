import json
import os
import tempfile
import unittest

import numpy as np

from liner_blc_transfer.config import load_config
from liner_blc_transfer.exceptions import InvalidInputError, TrainingError
from liner_blc_transfer.image_prep import read_png
from liner_blc_transfer.pipeline import PreparedData, StackPredictor, run_crossval, \
    select_config, train, write_prediction
from liner_blc_transfer.surface_core import read_blc
from liner_blc_transfer.synthlab import generate_dataset

TINY = {"preprocess": {"k": 32, "resize": [32, 32]},
        "params": {"hidden": [8], "epochs": 2, "batch_size": 16},
        "blc": {"channels": [4], "kernel": 3, "epochs": 2, "batch_size": 16},
        "split": {"eval_fraction": 0.2, "folds": 5},
        "synth": {"size": 32, "liners": 12, "k": 32}}


class TestPipeline(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.tmp = tempfile.TemporaryDirectory()
        cls.config = load_config(overrides=TINY)
        _, cls.manifest = generate_dataset(os.path.join(cls.tmp.name, "data"),
                                           cls.config["synth"], seed=3, n=24)

    @classmethod
    def tearDownClass(cls):
        cls.tmp.cleanup()

    def test_prepared_data(self):
        subset = self.manifest.subset(self.manifest.ids[:3])
        data = PreparedData(subset, self.config)
        record = data.records[subset.ids[0]]
        self.assertEqual(len(record.stacks), 4)
        self.assertEqual(record.label.k, 32)
        stacks, blcs, params = data.arrays(subset.ids)
        self.assertEqual(len(stacks), 12)
        self.assertEqual(blcs.shape, (12, 32))
        self.assertEqual(params.shape, (12, 3))
        plain = PreparedData(subset, self.config, augmented=False)
        self.assertEqual(len(plain.records[subset.ids[0]].stacks), 1)
        self.assertTrue(np.array_equal(plain.records[subset.ids[0]].stacks[0].curves,
                                       record.stacks[0].curves))

    def test_crossval_table(self):
        result = run_crossval(self.manifest, self.config)
        folds = [row["fold"] for row in result.rows]
        self.assertEqual(folds, [1, 2, 3, 4, 5, "avg", "eval"])
        self.assertEqual(sum(row["n"] for row in result.rows[:5]), result.rows[5]["n"])
        self.assertEqual(len(result.reports), 5)
        self.assertGreater(result.baseline_w1, 0.0)
        self.assertIsNotNone(result.eval_report)
        held = {s.liner_id for s in result.eval_report.samples}
        tested = {s.liner_id for report in result.reports for s in report.samples}
        self.assertFalse(held & tested)

        again = run_crossval(self.manifest, self.config)
        self.assertEqual(again.rows, result.rows)

        path = result.write(os.path.join(self.tmp.name, "crossval.csv"))
        with open(path) as f:
            self.assertEqual(len(f.read().splitlines()), 8)

    def test_without_holdout(self):
        result = run_crossval(self.manifest, self.config, holdout=False)
        self.assertEqual(result.rows[-1]["fold"], "avg")
        self.assertIsNone(result.eval_report)
        self.assertEqual(result.rows[-1]["n"], len(self.manifest))

    def test_fold_in_error_context(self):
        config = load_config(overrides=dict(TINY, params={"hidden": [8], "epochs": 2,
                                                          "batch_size": 16,
                                                          "lr": float("nan")}))
        with self.assertRaises(TrainingError) as ctx:
            run_crossval(self.manifest, config, holdout=False)
        self.assertEqual(ctx.exception.context["fold"], 0)
        self.assertEqual(ctx.exception.context["stage"], "params")

    def test_select_config(self):
        candidates = [{"blc": {"lr": 0.0}}, {"blc": {"lr": 0.01}}]
        best, scores = select_config(self.manifest, self.config, candidates)
        self.assertEqual(len(scores), 2)
        self.assertEqual(best["blc"]["lr"], candidates[int(np.argmin(scores))]["blc"]["lr"])
        with self.assertRaises(InvalidInputError):
            select_config(self.manifest, self.config, [])

    def test_train_and_predict(self):
        bundle = train(self.manifest, self.config)
        record = self.manifest.records[0]
        image_path = self.manifest.path(record.rgb_path)
        result = bundle.transfer(read_png(image_path))
        out = os.path.join(self.tmp.name, "pred")
        os.makedirs(out, exist_ok=True)
        blc_path, json_path = write_prediction(result, bundle, image_path, out)
        self.assertTrue(np.array_equal(read_blc(blc_path).values, result.blc.values))
        with open(json_path) as f:
            sidecar = json.load(f)
        self.assertEqual(sidecar["k"], 32)
        self.assertEqual(sidecar["model_hash"], bundle.digest())
        self.assertTrue(sidecar["monotone_projection"])
        self.assertEqual(set(sidecar["params"]), {"sk", "vvv", "vmp"})
        self.assertEqual(len(sidecar["input_hash"]), 64)

        data = PreparedData(self.manifest.subset([record.id]), self.config, augmented=False)
        cached = StackPredictor(bundle, data).predict_record(self.manifest, record)
        self.assertTrue(np.array_equal(cached.blc.values, result.blc.values))
