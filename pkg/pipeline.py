# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#    http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
"""Training, cross-validation and prediction workflows over a manifest."""
import hashlib
import json
from copy import deepcopy
from dataclasses import dataclass, field
from os.path import basename, join, splitext

import numpy as np
from ovos_utils.json_helper import merge_dict
from ovos_utils.log import LOG

from .augment import TrainingPair, augment
from .blc_module import BlcModule, ModelBundle, assemble_batch
from .config import load_config
from .evaluation import MeanBlcBaseline, TABLE_FIELDS, average_rows, evaluate, \
    table_row, write_csv
from .exceptions import BlcTransferError, DataIOError, InvalidInputError
from .image_prep import Preprocessor
from .param_module import ParameterModule, ParamTriple, build_feature_vector
from .splits import grouped_split, make_folds
from .surface_core import write_blc


@dataclass
class PreparedRecord:
    stacks: list
    label: object
    params: ParamTriple


class PreparedData:
    """Psi stacks of every record, original image first, plus its labels."""

    def __init__(self, manifest, config=None, augmented=True, workers=1):
        self.config = config or load_config()
        self.manifest = manifest
        self.sk_search = self.config["surface"]["sk_search"]
        self.k = int(self.config["preprocess"]["k"])
        preprocessor = Preprocessor(self.config["preprocess"])
        self.records = {}
        for record in manifest:
            label = manifest.load_blc(record, self.k)
            pair = TrainingPair(manifest.load_image(record), label, record.id)
            variants = augment(pair, self.config["augment"]) if augmented else [pair]
            stacks = preprocessor.transform_many([v.image for v in variants], workers)
            self.records[record.id] = PreparedRecord(
                stacks=stacks, label=label, params=ParamTriple.from_blc(label, self.sk_search))
        LOG.info("prepared %d records (%d stacks)", len(self.records),
                 sum(len(r.stacks) for r in self.records.values()))

    def arrays(self, ids):
        """Training arrays over every variant of the given record ids."""
        stacks, blcs, params = [], [], []
        for record_id in ids:
            prepared = self.records[record_id]
            for stack in prepared.stacks:
                stacks.append(stack)
                blcs.append(prepared.label.values)
                params.append(prepared.params.as_array())
        return stacks, np.stack(blcs), np.stack(params)


class StackPredictor:
    """Evaluates a bundle on cached original-image stacks."""

    def __init__(self, bundle, data):
        self.bundle = bundle
        self.data = data

    @property
    def k(self):
        return self.bundle.k

    def predict_record(self, manifest, record):
        return self.bundle.transfer_stack(self.data.records[record.id].stacks[0])


def fit_bundle(stacks, blcs, params, config):
    """Train stage one, freeze it, then train stage two on its outputs."""
    sk_search = config["surface"]["sk_search"]
    features = np.stack([build_feature_vector(s, sk_search) for s in stacks])
    stage1 = ParameterModule(config["params"]).fit(features, params,
                                                   scheduler=config["scheduler"])
    signals = assemble_batch(stacks, stage1.predict_standardized(features))
    stage2 = BlcModule(config["blc"]).fit(signals, blcs, scheduler=config["scheduler"])
    return ModelBundle(stage1, stage2, deepcopy(config))


def train(manifest, config=None, workers=1, data=None):
    config = config or load_config()
    data = data or PreparedData(manifest, config, workers=workers)
    return fit_bundle(*data.arrays(manifest.ids), config)


@dataclass
class CrossvalResult:
    rows: list = field(default_factory=list)
    reports: list = field(default_factory=list)
    eval_report: object = None
    baseline_w1: float = None

    def write(self, path):
        return write_csv(path, self.rows, list(TABLE_FIELDS))


def _fold_context(err, fold):
    if isinstance(err, BlcTransferError):
        err.context["fold"] = fold


def run_crossval(manifest, config=None, workers=1, holdout=None):
    """k-fold cross-validation grouped by liner.

    With `holdout` (default: split.eval_fraction > 0) a stratified share of the
    liners is set aside first, the folds run on the rest, and a final model
    trained on all remaining liners is scored on the held-out ones.
    """
    config = config or load_config()
    split = config["split"]
    seed = int(config["runtime"]["seed"])
    holdout = float(split["eval_fraction"]) > 0 if holdout is None else holdout
    train_part, eval_part = manifest, None
    if holdout:
        train_part, eval_part = grouped_split(manifest, float(split["eval_fraction"]), seed)
    plan = make_folds(train_part, int(split["folds"]), seed)
    data = PreparedData(train_part, config, workers=workers)
    result = CrossvalResult()
    for fold in range(plan.k):
        LOG.info("fold %d/%d: %d test records", fold + 1, plan.k, len(plan.test_ids(fold)))
        try:
            bundle = fit_bundle(*data.arrays(plan.train_ids(fold)), config)
            report = evaluate(StackPredictor(bundle, data),
                              train_part.subset(plan.test_ids(fold)),
                              data.sk_search)
        except BlcTransferError as err:
            _fold_context(err, fold)
            raise
        result.reports.append(report)
        result.rows.append(table_row(report.summary(), fold + 1))
    result.rows.append(average_rows(result.rows))
    if eval_part is not None:
        bundle = fit_bundle(*data.arrays(train_part.ids), config)
        result.eval_report = evaluate(bundle, eval_part, data.sk_search, workers)
        result.rows.append(table_row(result.eval_report.summary(), "eval"))
        baseline = MeanBlcBaseline(data.sk_search).fit(
            [data.records[i].label for i in train_part.ids])
        result.baseline_w1 = evaluate(baseline, eval_part, data.sk_search).summary()["w1"]
        LOG.info("eval W1 %.4g against mean-curve baseline %.4g",
                 result.rows[-1]["w1"], result.baseline_w1)
    return result


def select_config(manifest, base=None, candidates=(), workers=1):
    """The candidate override with the lowest average cross-validated W1."""
    base = base or load_config()
    if not candidates:
        raise InvalidInputError("no candidate configurations to compare")
    scores = []
    for overrides in candidates:
        config = merge_dict(deepcopy(base), deepcopy(overrides))
        avg = run_crossval(manifest, config, workers, holdout=False).rows[-1]
        scores.append(avg["w1"])
        LOG.info("candidate %s: average W1 %.4g", json.dumps(overrides, sort_keys=True),
                 avg["w1"])
    best = int(np.argmin(scores))
    return merge_dict(deepcopy(base), deepcopy(candidates[best])), scores


def file_digest(path):
    try:
        with open(path, "rb") as f:
            return hashlib.sha256(f.read()).hexdigest()
    except OSError as err:
        raise DataIOError(f"cannot read {path}: {err}")


def write_prediction(result, bundle, image_path, out_dir):
    """Curve file plus a JSON sidecar with parameters and provenance."""
    stem = splitext(basename(image_path))[0]
    blc_path = join(out_dir, f"{stem}.blc")
    write_blc(blc_path, result.blc)
    sidecar = {"params": result.params.as_dict(), "stage1": result.stage1.as_dict(),
               "monotone_projection": bundle.blc.monotone,
               "projection_changed": result.projected, "k": result.blc.k,
               "model_hash": bundle.digest(), "input_hash": file_digest(image_path),
               "source": image_path}
    json_path = join(out_dir, f"{stem}.json")
    try:
        with open(json_path, "w", encoding="utf-8") as f:
            json.dump(sidecar, f, indent=2, sort_keys=True)
    except OSError as err:
        raise DataIOError(f"cannot write {json_path}: {err}")
    return blc_path, json_path
