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
from copy import deepcopy
from os.path import dirname, join, exists

from ovos_utils.json_helper import merge_dict
from ovos_utils.log import LOG

from .exceptions import ConfigError, DataIOError

DEFAULTS_FILE = join(dirname(__file__), "res", "config", "defaults.json")

_DEFAULTS = None


def default_config():
    """Fresh copy of the packaged defaults."""
    global _DEFAULTS
    if _DEFAULTS is None:
        with open(DEFAULTS_FILE, "r", encoding="utf-8") as f:
            _DEFAULTS = json.load(f)
    return deepcopy(_DEFAULTS)


def section(name, config=None):
    """Defaults of one section with `config` merged on top."""
    base = default_config().get(name)
    if base is None:
        raise ConfigError(f"unknown config section '{name}'")
    return merge_dict(base, deepcopy(config or {}))


def load_config(path=None, overrides=None):
    config = default_config()
    if path:
        if not exists(path):
            raise DataIOError(f"config file not found: {path}")
        try:
            with open(path, "r", encoding="utf-8") as f:
                user = json.load(f)
        except json.JSONDecodeError as err:
            raise ConfigError(f"config file is not valid JSON: {path}: {err}")
        if not isinstance(user, dict):
            raise ConfigError("config document must be a JSON object")
        unknown = set(user) - set(config)
        if unknown:
            LOG.warning("ignoring unknown config sections: %s", sorted(unknown))
        merge_dict(config, {k: v for k, v in user.items() if k in config})
    if overrides:
        merge_dict(config, deepcopy(overrides))
    return config


def write_config_lock(config, out_dir):
    path = join(out_dir, "config.lock.json")
    try:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(config, f, indent=2, sort_keys=True)
    except OSError as err:
        raise DataIOError(f"cannot write {path}: {err}")
    return path
