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
import argparse
import json
import os
import sys
from dataclasses import asdict
from os.path import basename, join, splitext

import numpy as np
from ovos_utils.log import LOG

from .blc_module import ModelBundle
from .config import load_config, write_config_lock
from .dataset import Manifest
from .evaluation import MeanBlcBaseline, evaluate, write_report
from .exceptions import ConfigError, DataIOError, InvalidInputError, ModelFormatError, \
    StateError, TrainingError
from .image_prep import Preprocessor, read_png
from .param_module import build_feature_vector
from .pipeline import PreparedData, fit_bundle, run_crossval, write_prediction
from .surface_core import compute_blc, extract_all, read_blc, read_htdp, write_blc
from .synthlab import generate_dataset

EXIT_OK, EXIT_INPUT, EXIT_IO, EXIT_TRAINING = 0, 2, 3, 4


def _print(data):
    print(json.dumps(data, indent=2, sort_keys=True))


def _require(args, name):
    if not getattr(args, name, None):
        raise InvalidInputError(f"--{name} is required for '{args.command}'")
    return getattr(args, name)


def _out_dir(args, config):
    out = _require(args, "out")
    try:
        os.makedirs(out, exist_ok=True)
    except OSError as err:
        raise DataIOError(f"cannot create output directory {out}: {err}")
    write_config_lock(config, out)
    return out


def cmd_synth(args, config):
    out = _out_dir(args, config)
    _, manifest = generate_dataset(out, config["synth"], seed=config["runtime"]["seed"],
                                   workers=args.workers, n=args.n)
    _print({"manifest": join(out, "manifest.json"), "records": len(manifest),
            "liners": len(manifest.liners)})


def cmd_blc(args, config):
    """BLC and roughness parameters of depth files."""
    k = int(args.k or config["preprocess"]["k"])
    out = _out_dir(args, config) if args.out else None
    results = {}
    for path in _require(args, "inputs"):
        blc = compute_blc(read_htdp(path), k)
        if out:
            write_blc(join(out, splitext(basename(path))[0] + ".blc"), blc)
        results[path] = extract_all(blc, config["surface"]["sk_search"])
    _print(results)


def cmd_params(args, config):
    _print({path: extract_all(read_blc(path), config["surface"]["sk_search"])
            for path in _require(args, "inputs")})


def cmd_preprocess(args, config):
    out = _out_dir(args, config)
    preprocessor = Preprocessor(config["preprocess"])
    if args.manifest:
        manifest = Manifest.load(args.manifest)
        items = [(r.id, manifest.load_image(r)) for r in manifest]
    else:
        items = [(splitext(basename(p))[0], read_png(p)) for p in _require(args, "inputs")]
    stacks = preprocessor.transform_many([img for _, img in items], args.workers)
    features = {}
    for (name, _), stack in zip(items, stacks):
        np.savetxt(join(out, f"{name}.psi.txt"), stack.curves, fmt="%.17g",
                   header=" ".join(f"sigma={s:g}" for s in stack.sigmas))
        features[name] = build_feature_vector(stack, config["surface"]["sk_search"]).tolist()
    with open(join(out, "features.json"), "w", encoding="utf-8") as f:
        json.dump(features, f, indent=2, sort_keys=True)
    _print({"stacks": len(stacks), "out": out})


def cmd_train(args, config):
    manifest = Manifest.load(_require(args, "manifest"))
    out = _out_dir(args, config)
    data = PreparedData(manifest, config, workers=args.workers)
    bundle = fit_bundle(*data.arrays(manifest.ids), config)
    path = bundle.save(join(out, "model.htwt"))
    history = {"params": asdict(bundle.params.history), "blc": asdict(bundle.blc.history)}
    with open(join(out, "history.json"), "w", encoding="utf-8") as f:
        json.dump(history, f, indent=2)
    _print({"model": path, "hash": bundle.digest()})


def cmd_crossval(args, config):
    manifest = Manifest.load(_require(args, "manifest"))
    out = _out_dir(args, config)
    result = run_crossval(manifest, config, workers=args.workers)
    result.write(join(out, "crossval.csv"))
    if result.eval_report is not None and config["eval"]["plots"]:
        write_report(result.eval_report, join(out, "eval"))
    _print({"rows": result.rows, "baseline_w1": result.baseline_w1})


def cmd_predict(args, config):
    bundle = ModelBundle.load(_require(args, "model"))
    out = _out_dir(args, config)
    written = []
    for path in _require(args, "inputs"):
        result = bundle.transfer(read_png(path))
        written.extend(write_prediction(result, bundle, path, out))
    _print({"written": written})


def cmd_eval(args, config):
    manifest = Manifest.load(_require(args, "manifest"))
    out = _out_dir(args, config)
    sk_search = config["surface"]["sk_search"]
    if args.baseline:
        reference = Manifest.load(args.baseline)
        k = int(config["preprocess"]["k"])
        model = MeanBlcBaseline(sk_search).fit([reference.load_blc(r, k) for r in reference])
    else:
        model = ModelBundle.load(_require(args, "model"))
    report = evaluate(model, manifest, sk_search, args.workers)
    write_report(report, out, plots=bool(config["eval"]["plots"]))
    _print(report.summary())


COMMANDS = {"synth": cmd_synth, "blc": cmd_blc, "params": cmd_params,
            "preprocess": cmd_preprocess, "train": cmd_train, "crossval": cmd_crossval,
            "predict": cmd_predict, "eval": cmd_eval}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="liner-blc",
        description="Predict bearing load curves of liner surfaces from reflection images")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("inputs", nargs="*", help="depth, BLC or image files")
    parser.add_argument("--config", help="JSON config merged over the defaults")
    parser.add_argument("--seed", type=int, help="seed for splits, synthesis and training")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--manifest", help="dataset manifest JSON")
    parser.add_argument("--model", help="model bundle for predict/eval")
    parser.add_argument("--baseline", help="eval: score the mean curve of this manifest instead")
    parser.add_argument("--n", type=int, help="synth: number of pairs")
    parser.add_argument("--k", type=int, help="blc: number of curve samples")
    parser.add_argument("--workers", type=int, help="parallel preprocessing threads")
    parser.add_argument("--verbose", action="store_true")
    return parser


def _seed_overrides(seed):
    return {"runtime": {"seed": seed}, "params": {"seed": seed}, "blc": {"seed": seed + 1}}


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.verbose:
        LOG.set_level("DEBUG")
    try:
        if args.seed is not None and args.seed < 0:
            raise ConfigError("--seed must be non-negative", seed=args.seed)
        overrides = _seed_overrides(args.seed) if args.seed is not None else None
        config = load_config(args.config, overrides)
        if args.workers is None:
            args.workers = int(config["runtime"]["workers"])
        COMMANDS[args.command](args, config)
    except (InvalidInputError, ConfigError, ModelFormatError) as err:
        LOG.error(err)
        return EXIT_INPUT
    except (DataIOError, OSError) as err:
        LOG.error(err)
        return EXIT_IO
    except (TrainingError, StateError) as err:
        LOG.error(err)
        return EXIT_TRAINING
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
