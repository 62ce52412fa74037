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
"""Scoring predicted curves against measured ones.

Volumes are handled in ml/m² here; the cross-validation table converts them
to µl/m².
"""
import csv
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from os.path import exists, join

import numpy as np
from ovos_utils.log import LOG

from .blc_module import TransferResult
from .exceptions import DataIOError, InvalidInputError
from .param_module import ParamTriple
from .surface_core import Blc, blc_area_quartiles, wasserstein1
from .svg import box_plot, scatter_plot

QUARTILES = (25, 50, 75)
ML_TO_UL = 1000.0
TABLE_FIELDS = ("fold", "n", "w1", "w1_std", "sk_mae", "sk_mae_std", "sk_mape",
                "sk_mape_std", "vvv_mae", "vvv_mae_std", "vmp_mae", "vmp_mae_std")


def box_summary(values):
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        return {"count": 0, "min": 0.0, "q1": 0.0, "median": 0.0, "q3": 0.0, "max": 0.0}
    q1, median, q3 = np.percentile(values, QUARTILES)
    return {"count": int(values.size), "min": float(values.min()), "q1": float(q1),
            "median": float(median), "q3": float(q3), "max": float(values.max())}


@dataclass
class SampleResult:
    id: str
    liner_id: str
    operating_hours: float
    w1: float
    truth: ParamTriple
    pred: ParamTriple
    quartiles_truth: tuple
    quartiles_pred: tuple
    stage1: ParamTriple = None


def _mae(errors):
    errors = np.abs(np.asarray(errors, dtype=np.float64))
    if errors.size == 0:
        return 0.0, 0.0
    return float(errors.mean()), float(errors.std())


@dataclass
class EvalReport:
    samples: list = field(default_factory=list)

    @property
    def w1(self):
        return np.array([s.w1 for s in self.samples])

    def _errors(self, name, source="pred"):
        return [getattr(getattr(s, source), name) - getattr(s.truth, name)
                for s in self.samples if getattr(s, source) is not None]

    def summary(self):
        sk_ape = [100.0 * abs(s.pred.sk - s.truth.sk) / s.truth.sk
                  for s in self.samples if s.truth.sk > 0]
        out = {"n": len(self.samples)}
        out["w1"], out["w1_std"] = _mae(self.w1)
        out["sk_mae"], out["sk_mae_std"] = _mae(self._errors("sk"))
        out["sk_mape"], out["sk_mape_std"] = _mae(sk_ape)
        out["vvv_mae"], out["vvv_mae_std"] = _mae(self._errors("vvv"))
        out["vmp_mae"], out["vmp_mae_std"] = _mae(self._errors("vmp"))
        if any(s.stage1 is not None for s in self.samples):
            for name in ("sk", "vvv", "vmp"):
                out[f"stage1_{name}_mae"], out[f"stage1_{name}_mae_std"] = \
                    _mae(self._errors(name, "stage1"))
        return out

    def quartile_rows(self):
        rows = []
        for s in self.samples:
            for q, t, p in zip(QUARTILES, s.quartiles_truth, s.quartiles_pred):
                rows.append({"id": s.id, "quartile": q, "truth": t, "prediction": p})
        return rows

    def param_rows(self):
        rows = []
        for s in self.samples:
            row = {"id": s.id}
            for name in ("sk", "vvv", "vmp"):
                row[f"{name}_truth"] = getattr(s.truth, name)
                row[f"{name}_pred"] = getattr(s.pred, name)
                if s.stage1 is not None:
                    row[f"{name}_stage1"] = getattr(s.stage1, name)
            rows.append(row)
        return rows

    def hours_bins(self):
        """W1 and Sk-difference summaries over operating-hour quartile bins."""
        if not self.samples:
            return []
        hours = np.array([s.operating_hours for s in self.samples])
        edges = np.quantile(hours, [0.0, 0.25, 0.5, 0.75, 1.0])
        bins = np.clip(np.searchsorted(edges, hours, side="right") - 1, 0, 3)
        rows = []
        for b in range(4):
            members = [s for s, i in zip(self.samples, bins) if i == b]
            if not members:
                continue
            row = {"bin": b, "hours_lo": float(edges[b]), "hours_hi": float(edges[b + 1])}
            for prefix, values in (("w1", [s.w1 for s in members]),
                                   ("sk_diff", [s.pred.sk - s.truth.sk for s in members])):
                for key, value in box_summary(values).items():
                    row[f"{prefix}_{key}"] = value
            rows.append(row)
        return rows


def table_row(summary, fold):
    """A cross-validation table row, volumes scaled to µl/m²."""
    row = {"fold": fold}
    for key in TABLE_FIELDS[1:]:
        value = summary[key]
        if key.startswith(("vvv", "vmp")):
            value *= ML_TO_UL
        row[key] = value
    return row


def average_rows(rows, name="avg"):
    avg = {"fold": name, "n": int(sum(r["n"] for r in rows))}
    for key in TABLE_FIELDS[2:]:
        avg[key] = float(np.mean([r[key] for r in rows]))
    return avg


def _params_of(values, sk_search):
    values = np.asarray(values, dtype=np.float64)
    if np.any(np.diff(values) > 0):
        values = np.sort(values)[::-1]
    return ParamTriple.from_blc(values, sk_search)


def score_sample(record, truth, result, sk_search="full"):
    if isinstance(result, Blc):
        result = TransferResult(blc=result, params=_params_of(result.values, sk_search),
                                stage1=None, raw=result.values)
    pred = result.blc
    return SampleResult(id=record.id, liner_id=record.liner_id,
                        operating_hours=record.operating_hours,
                        w1=wasserstein1(pred, truth),
                        truth=ParamTriple.from_blc(truth, sk_search), pred=result.params,
                        quartiles_truth=blc_area_quartiles(truth),
                        quartiles_pred=blc_area_quartiles(np.sort(pred.values)[::-1]),
                        stage1=result.stage1)


class MeanBlcBaseline:
    """Predicts the per-component mean of the training curves for every input."""

    def __init__(self, sk_search="full"):
        self.mean = None
        self.sk_search = sk_search

    @property
    def k(self):
        return None if self.mean is None else self.mean.size

    def fit(self, blcs):
        values = np.stack([b.values if isinstance(b, Blc) else np.asarray(b) for b in blcs])
        self.mean = values.mean(axis=0)
        return self

    def transfer(self, img=None):
        blc = Blc(self.mean)
        return TransferResult(blc=blc, params=_params_of(self.mean, self.sk_search),
                              stage1=None, raw=self.mean.copy())

    def predict_record(self, manifest, record):
        return self.transfer()


def _ground_truth(manifest, record, k):
    if record.blc_path is None and not exists(manifest.path(record.depth_path)):
        raise InvalidInputError("record has no ground truth", id=record.id)
    return manifest.load_blc(record, k)


def evaluate(model, manifest, sk_search="full", workers=1):
    """Score `model` on every record of `manifest`, in manifest order."""
    if not len(manifest):
        raise InvalidInputError("cannot evaluate an empty manifest")
    k = getattr(model, "k", None)

    def score(record):
        truth = _ground_truth(manifest, record, k)
        if hasattr(model, "predict_record"):
            result = model.predict_record(manifest, record)
        else:
            result = model.transfer(manifest.load_image(record))
        return score_sample(record, truth, result, sk_search)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            samples = list(pool.map(score, manifest.records))
    else:
        samples = [score(r) for r in manifest.records]
    report = EvalReport(samples)
    LOG.info("evaluated %d records: mean W1 %.4g", len(samples), report.summary()["w1"])
    return report


def write_csv(path, rows, fields=None):
    fields = fields or (list(rows[0]) if rows else [])
    try:
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.DictWriter(f, fieldnames=fields, lineterminator="\n")
            writer.writeheader()
            for row in rows:
                writer.writerow({k: (repr(v) if isinstance(v, float) else v)
                                 for k, v in row.items()})
    except OSError as err:
        raise DataIOError(f"cannot write {path}: {err}")
    return path


def write_report(report, out_dir, plots=True):
    os.makedirs(out_dir, exist_ok=True)
    samples = [{"id": s.id, "liner_id": s.liner_id, "operating_hours": s.operating_hours,
                "w1": s.w1, "sk_truth": s.truth.sk, "sk_pred": s.pred.sk,
                "vvv_truth": s.truth.vvv, "vvv_pred": s.pred.vvv,
                "vmp_truth": s.truth.vmp, "vmp_pred": s.pred.vmp}
               for s in report.samples]
    summary = report.summary()
    paths = [write_csv(join(out_dir, "samples.csv"), samples),
             write_csv(join(out_dir, "summary.csv"), [summary]),
             write_csv(join(out_dir, "quartiles.csv"), report.quartile_rows(),
                       ["id", "quartile", "truth", "prediction"]),
             write_csv(join(out_dir, "params.csv"), report.param_rows()),
             write_csv(join(out_dir, "hours_bins.csv"), report.hours_bins())]
    if plots and report.samples:
        series = {}
        for q in QUARTILES:
            rows = [r for r in report.quartile_rows() if r["quartile"] == q]
            series[f"{q}%"] = ([r["truth"] for r in rows], [r["prediction"] for r in rows])
        paths.append(scatter_plot(join(out_dir, "quartiles.svg"), series,
                                  "BLC area quartiles", "truth (µm)", "prediction (µm)"))
        for name, unit in (("sk", "µm"), ("vvv", "ml/m²"), ("vmp", "ml/m²")):
            truth = [getattr(s.truth, name) for s in report.samples]
            pair = {"stage 2": (truth, [getattr(s.pred, name) for s in report.samples])}
            if all(s.stage1 is not None for s in report.samples):
                pair["stage 1"] = (truth, [getattr(s.stage1, name) for s in report.samples])
            paths.append(scatter_plot(join(out_dir, f"params_{name}.svg"), pair,
                                      name.capitalize(), f"truth ({unit})",
                                      f"prediction ({unit})"))
        bins = report.hours_bins()
        for prefix, title in (("w1", "W1 per operating hours"),
                              ("sk_diff", "Sk difference per operating hours")):
            boxes = [(f"{r['hours_lo']:.0f}-{r['hours_hi']:.0f}",
                      {k: r[f"{prefix}_{k}"] for k in ("min", "q1", "median", "q3", "max")})
                     for r in bins]
            paths.append(box_plot(join(out_dir, f"hours_{prefix}.svg"), boxes, title,
                                  "operating hours", prefix))
    LOG.info("wrote evaluation report to %s", out_dir)
    return paths
