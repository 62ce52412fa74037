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
"""Stage two of the transfer model and the bundle holding both stages.

The conv network sees the four filtered curves plus three constant channels
carrying the standardized stage-one prediction, and emits a length-K curve.
"""
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np
from ovos_utils.log import LOG

from .config import section, load_config
from .exceptions import ConfigError, InvalidInputError, ModelFormatError, StateError
from .image_prep import FilteredBlcStack, Preprocessor
from .nn_engine import Conv1d, InstanceNorm1d, ReLU, ChannelSqueeze, Sequential, fit, \
    flatten_parameters, load_parameters, write_weight_bundle, read_weight_bundle
from .param_module import ParameterModule, ParamTriple, Standardizer, \
    build_feature_vector
from .surface_core import Blc

N_CHANNELS = 7
ARCHITECTURE = "liner-blc-two-stage-v1"


@dataclass
class AugmentedSignal:
    channels: np.ndarray

    def __post_init__(self):
        self.channels = np.asarray(self.channels, dtype=np.float64)
        if self.channels.ndim != 2 or self.channels.shape[1] != N_CHANNELS:
            raise InvalidInputError("augmented signal must be K x 7",
                                    shape=self.channels.shape)
        broadcast = self.channels[:, 4:]
        if not np.all(broadcast == broadcast[0]):
            raise InvalidInputError("parameter channels must be constant")

    @property
    def k(self):
        return self.channels.shape[0]


def assemble_input(stack, params_std):
    curves = stack.curves if isinstance(stack, FilteredBlcStack) else np.asarray(stack)
    params_std = np.asarray(params_std, dtype=np.float64).reshape(-1)
    if curves.ndim != 2 or curves.shape[1] != 4:
        raise InvalidInputError("stack must be K x 4", shape=curves.shape)
    if params_std.size != 3:
        raise InvalidInputError("need three standardized parameters", size=params_std.size)
    broadcast = np.broadcast_to(params_std, (curves.shape[0], 3))
    return AugmentedSignal(np.concatenate([curves, broadcast], axis=1))


def assemble_batch(stacks, params_std):
    return np.stack([assemble_input(s, p).channels for s, p in zip(stacks, params_std)])


def build_blc_network(channels=(64, 64, 128, 128, 256, 256, 512, 512), kernel=5,
                      padding="zeros", seed=1, in_channels=N_CHANNELS):
    rng = np.random.default_rng(seed)
    layers = []
    width = in_channels
    for size in channels:
        layers += [Conv1d(width, size, kernel, padding, rng=rng), InstanceNorm1d(), ReLU()]
        width = size
    layers += [Conv1d(width, 1, kernel, padding, rng=rng), ChannelSqueeze()]
    return Sequential(*layers)


def isotonic_nonincreasing(y):
    """Least-squares projection onto non-increasing vectors (pool adjacent violators)."""
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if y.size == 0:
        return y.copy()
    means = []
    widths = []
    for value in y:
        means.append(value)
        widths.append(1)
        # pool while the previous block sits below the new one
        while len(means) > 1 and means[-2] <= means[-1]:
            w = widths[-2] + widths[-1]
            means[-2] = means[-2] + widths[-1] / w * (means[-1] - means[-2])
            widths[-2] = w
            means.pop()
            widths.pop()
    return np.repeat(means, widths)


class BlcModule:
    """Stage two: K x 7 signal in, length-K curve out."""

    def __init__(self, config=None):
        self.config = section("blc", config)
        self.kernel = int(self.config["kernel"])
        if self.kernel % 2 == 0:
            raise ConfigError("blc.kernel must be odd", kernel=self.kernel)
        self.seed = int(self.config["seed"])
        self.monotone = bool(self.config.get("monotone", True))
        self.network = build_blc_network(tuple(self.config["channels"]), self.kernel,
                                         self.config["padding"], self.seed)
        self.history = None

    def predict_raw(self, signals):
        signals = np.asarray(signals, dtype=np.float64)
        if signals.shape[-1] != N_CHANNELS:
            raise InvalidInputError("signals must carry seven channels", shape=signals.shape)
        return self.network.apply(signals)

    def finalize(self, raw):
        if not self.monotone:
            return np.asarray(raw, dtype=np.float64)
        return isotonic_nonincreasing(raw)

    def fit(self, signals, blcs, validation=None, scheduler=None):
        signals = np.asarray(signals, dtype=np.float64)
        blcs = np.asarray(blcs, dtype=np.float64)
        if len(signals) < 2:
            raise InvalidInputError("blc training needs at least two samples",
                                    n=len(signals))
        if blcs.shape != signals.shape[:2]:
            raise InvalidInputError("targets must be N x K", shape=blcs.shape,
                                    signals=signals.shape)
        scheduler = section("scheduler", scheduler)
        LOG.info("training blc module on %d signals of length %d", *signals.shape[:2])
        # component-wise MAE of two curves is their Wasserstein-1 distance
        self.history = fit(self.network, signals, blcs,
                           epochs=int(self.config["epochs"]), lr=float(self.config["lr"]),
                           batch_size=int(self.config["batch_size"]), loss="mae",
                           seed=self.seed, factor=float(scheduler["factor"]),
                           patience=int(scheduler["patience"]), validation=validation,
                           stage="blc")
        return self

    def header(self):
        return {"channels": list(self.config["channels"]), "kernel": self.kernel,
                "padding": self.config["padding"], "in_channels": N_CHANNELS,
                "layer_shapes": self.network.layer_shapes()}


def predict_blc(model, signal):
    """Final (optionally projected) curve for one augmented signal."""
    module = model.blc if isinstance(model, ModelBundle) else model
    channels = signal.channels if isinstance(signal, AugmentedSignal) else signal
    raw = module.predict_raw(np.asarray(channels)[None])[0]
    return Blc(module.finalize(raw))


def train_blc(signals, blcs, config=None, validation=None, scheduler=None):
    if isinstance(blcs, (list, tuple)) and blcs and isinstance(blcs[0], Blc):
        blcs = np.stack([b.values for b in blcs])
    if isinstance(signals, (list, tuple)) and signals and isinstance(signals[0], AugmentedSignal):
        signals = np.stack([s.channels for s in signals])
    return BlcModule(config).fit(signals, blcs, validation, scheduler)


@dataclass
class TransferResult:
    blc: Blc
    params: ParamTriple
    stage1: ParamTriple
    raw: np.ndarray = field(repr=False)
    projected: bool = False


@dataclass
class ModelBundle:
    params: ParameterModule
    blc: BlcModule
    config: dict

    def __post_init__(self):
        self.preprocess = section("preprocess", self.config.get("preprocess"))
        self.sk_search = section("surface", self.config.get("surface"))["sk_search"]
        self._preprocessor = Preprocessor(self.preprocess)

    @property
    def networks(self):
        return [self.params.network, self.blc.network]

    @property
    def k(self):
        return int(self.preprocess["k"])

    def header(self):
        return {"architecture": ARCHITECTURE, "params": self.params.header(),
                "blc": self.blc.header(), "preprocess": self.preprocess,
                "param_counts": self.params.network.layer_counts(),
                "blc_counts": self.blc.network.layer_counts(),
                "monotone": self.blc.monotone, "config": self.config}

    def digest(self):
        head = json.dumps(self.header(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(head + flatten_parameters(self.networks)
                              .astype("<f8").tobytes()).hexdigest()

    def save(self, path):
        if self.params.standardizer is None:
            raise StateError("cannot save a bundle with an untrained parameter module")
        write_weight_bundle(path, self.header(), flatten_parameters(self.networks))
        LOG.info("saved model bundle to %s", path)
        return path

    @classmethod
    def load(cls, path):
        header, flat = read_weight_bundle(path)
        if header.get("architecture") != ARCHITECTURE:
            raise ModelFormatError("unknown bundle architecture",
                                   architecture=header.get("architecture"))
        try:
            config = header["config"]
            params = ParameterModule(config.get("params"))
            blc = BlcModule(config.get("blc"))
            expected = (header["param_counts"], header["blc_counts"])
            std = header["params"]["standardizer"]
        except (KeyError, TypeError) as err:
            raise ModelFormatError(f"bundle header is incomplete: {err}")
        except ConfigError as err:
            raise ModelFormatError(f"bundle config is invalid: {err}")
        actual = (params.network.layer_counts(), blc.network.layer_counts())
        if list(actual[0]) != list(expected[0]) or list(actual[1]) != list(expected[1]):
            raise ModelFormatError("layer parameter counts do not match the header",
                                   expected=expected, actual=actual)
        load_parameters([params.network, blc.network], flat)
        params.standardizer = Standardizer.from_dict(std) if std else None
        if "input_standardizer" in header["params"]:
            params.input_standardizer = Standardizer.from_dict(
                header["params"]["input_standardizer"])
        return cls(params, blc, config)

    def transfer_stack(self, stack):
        features = build_feature_vector(stack, self.sk_search)
        stage1_std = self.params.predict_standardized(features[None])[0]
        stage1 = ParamTriple.from_array(self.params.standardizer.inverse(stage1_std))
        signal = assemble_input(stack, stage1_std)
        raw = self.blc.predict_raw(signal.channels[None])[0]
        final = self.blc.finalize(raw)
        projected = bool(self.blc.monotone and np.max(np.abs(final - raw)) > 1e-6)
        if projected:
            LOG.warning("monotone projection moved the prediction by %.3g",
                        float(np.max(np.abs(final - raw))))
        # a curve left unprojected is still read through its rearrangement
        curve = final if self.blc.monotone else np.sort(final)[::-1]
        return TransferResult(blc=Blc(final), params=ParamTriple.from_blc(curve, self.sk_search),
                              stage1=stage1, raw=raw, projected=projected)

    def transfer(self, img):
        if self.params.standardizer is None:
            raise StateError("bundle has no trained parameter module")
        return self.transfer_stack(self._preprocessor.transform(img))


def predict_transfer(model, img):
    result = model.transfer(img)
    return result.blc, result.params


def default_bundle(config=None):
    """Untrained bundle built from `config` (defaults where missing)."""
    base = load_config(overrides=config)
    return ModelBundle(ParameterModule(base["params"]), BlcModule(base["blc"]), base)

