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
"""Liner-grouped splitting: records of one liner always stay together."""
from dataclasses import dataclass

import numpy as np
from ovos_utils.log import LOG

from .exceptions import ConfigError, InvalidInputError


def grouped_split(manifest, eval_fraction=0.17, seed=0):
    """(train, eval) manifests with no liner in both.

    Liners are ordered by operating hours and cut into one bin per eval liner;
    one liner is drawn from every bin so both parts span the hour range.
    """
    if not 0.0 < eval_fraction < 1.0:
        raise ConfigError("eval fraction must lie in (0, 1)", eval_fraction=eval_fraction)
    hours = manifest.liner_hours()
    if len(hours) < 2:
        raise InvalidInputError("grouped split needs at least two liners",
                                liners=len(hours))
    n_eval = min(max(1, int(round(eval_fraction * len(hours)))), len(hours) - 1)
    ordered = sorted(hours, key=lambda liner: (hours[liner], liner))
    rng = np.random.default_rng(seed)
    held_out = []
    for stratum in np.array_split(np.arange(len(ordered)), n_eval):
        held_out.append(ordered[stratum[rng.integers(len(stratum))]])
    held_out = set(held_out)
    train = [liner for liner in hours if liner not in held_out]
    LOG.info("split %d liners into %d train and %d eval liners", len(hours),
             len(train), len(held_out))
    return manifest.select_liners(train), manifest.select_liners(held_out)


@dataclass
class FoldPlan:
    k: int
    assignment: dict

    def fold_of(self, record_id):
        return self.assignment[record_id]

    def test_ids(self, fold):
        return [i for i, f in self.assignment.items() if f == fold]

    def train_ids(self, fold):
        return [i for i, f in self.assignment.items() if f != fold]

    def sizes(self):
        return [len(self.test_ids(f)) for f in range(self.k)]


def make_folds(manifest, k=5, seed=0):
    """Assign whole liners to k folds with balanced record counts.

    Liners are shuffled, then ordered by record count (largest first) and dealt
    in a back-and-forth sweep over the folds.
    """
    groups = manifest.liners
    if k < 2:
        raise ConfigError("need at least two folds", k=k)
    if len(groups) < k:
        raise InvalidInputError("fewer liners than folds", liners=len(groups), k=k)
    rng = np.random.default_rng(seed)
    liners = [list(groups)[i] for i in rng.permutation(len(groups))]
    liners.sort(key=lambda liner: -len(groups[liner]))
    assignment = {}
    for position, liner in enumerate(liners):
        sweep, offset = divmod(position, k)
        fold = offset if sweep % 2 == 0 else k - 1 - offset
        for record in groups[liner]:
            assignment[record.id] = fold
    return FoldPlan(k=k, assignment={r.id: assignment[r.id] for r in manifest})
