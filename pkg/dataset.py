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
import json
from collections import OrderedDict
from dataclasses import dataclass, asdict
from os.path import abspath, dirname, exists, join, relpath

import numpy as np
from ovos_utils.log import LOG

from .exceptions import DataIOError, InvalidInputError
from .image_prep import read_png
from .surface_core import compute_blc, read_blc, read_htdp

SEGMENTS = ("3h", "6h")
FIELDS = ("id", "liner_id", "segment", "operating_hours", "rgb_path", "depth_path",
          "blc_path")


@dataclass(frozen=True)
class ManifestRecord:
    id: str
    liner_id: str
    segment: str
    operating_hours: float
    rgb_path: str
    depth_path: str
    blc_path: str = None

    def __post_init__(self):
        if self.segment not in SEGMENTS:
            raise InvalidInputError(f"unknown segment '{self.segment}'", id=self.id)
        if not np.isfinite(self.operating_hours) or self.operating_hours < 0:
            raise InvalidInputError("operating hours must be finite and >= 0", id=self.id)

    def to_dict(self):
        data = asdict(self)
        return OrderedDict((k, data[k]) for k in FIELDS)

    @classmethod
    def from_dict(cls, data):
        missing = [k for k in FIELDS[:-1] if k not in data]
        if missing:
            raise InvalidInputError("manifest record is missing fields", missing=missing)
        return cls(id=str(data["id"]), liner_id=str(data["liner_id"]),
                   segment=data["segment"], operating_hours=float(data["operating_hours"]),
                   rgb_path=data["rgb_path"], depth_path=data["depth_path"],
                   blc_path=data.get("blc_path"))


class Manifest:
    """Records plus the directory their relative paths resolve against."""

    def __init__(self, records, root="."):
        self.records = list(records)
        self.root = root
        ids = [r.id for r in self.records]
        if len(set(ids)) != len(ids):
            raise InvalidInputError("manifest ids must be unique")
        self._by_id = {r.id: r for r in self.records}

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, record_id):
        return self._by_id[record_id]

    @property
    def ids(self):
        return [r.id for r in self.records]

    @property
    def liners(self):
        """liner_id -> records, both ordered by first appearance."""
        groups = OrderedDict()
        for r in self.records:
            groups.setdefault(r.liner_id, []).append(r)
        return groups

    def liner_hours(self):
        return {liner: float(np.mean([r.operating_hours for r in recs]))
                for liner, recs in self.liners.items()}

    def subset(self, ids):
        wanted = set(ids)
        return Manifest([r for r in self.records if r.id in wanted], self.root)

    def select_liners(self, liners):
        wanted = set(liners)
        return Manifest([r for r in self.records if r.liner_id in wanted], self.root)

    def path(self, rel):
        return join(self.root, rel)

    def check_files(self):
        for r in self.records:
            for rel in (r.rgb_path, r.depth_path, r.blc_path):
                if rel is not None and not exists(self.path(rel)):
                    raise DataIOError(f"manifest references a missing file: {rel}",
                                      id=r.id)

    def load_image(self, record):
        return read_png(self.path(record.rgb_path))

    def load_depth(self, record):
        return read_htdp(self.path(record.depth_path))

    def load_blc(self, record, k=None):
        if record.blc_path is not None:
            blc = read_blc(self.path(record.blc_path))
            if k is None or blc.k == k:
                return blc
            LOG.debug("stored BLC of %s has K=%d, recomputing at K=%d", record.id, blc.k, k)
        if k is None:
            raise InvalidInputError("record has no BLC file and no K was given",
                                    id=record.id)
        return compute_blc(self.load_depth(record), k)

    def to_list(self, root=None):
        root = root or self.root
        out = []
        for r in self.records:
            data = r.to_dict()
            for key in ("rgb_path", "depth_path", "blc_path"):
                if data[key] is not None:
                    data[key] = relpath(abspath(self.path(data[key])), abspath(root))
            out.append(data)
        return out

    def save(self, path):
        try:
            with open(path, "w", encoding="utf-8") as f:
                json.dump(self.to_list(dirname(path) or "."), f, indent=2)
                f.write("\n")
        except OSError as err:
            raise DataIOError(f"cannot write manifest {path}: {err}")
        return path

    @classmethod
    def load(cls, path, check_files=True):
        try:
            with open(path, "r", encoding="utf-8") as f:
                data = json.load(f)
        except OSError as err:
            raise DataIOError(f"cannot read manifest {path}: {err}")
        except json.JSONDecodeError as err:
            raise InvalidInputError(f"manifest is not valid JSON: {err}", path=path)
        if not isinstance(data, list):
            raise InvalidInputError("manifest must be a JSON array", path=path)
        manifest = cls([ManifestRecord.from_dict(d) for d in data], dirname(path) or ".")
        if check_files:
            manifest.check_files()
        return manifest
