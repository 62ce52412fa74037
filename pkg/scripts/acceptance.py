"""End-to-end synthetic run: generate, split, train both stages, score.

Prints the held-out W1 next to the mean-curve baseline and fails loudly when
the trained model does not beat a third of it or when two runs differ.
"""
from os.path import join
from tempfile import mkdtemp
import json
import sys

from ovos_utils.log import LOG

from liner_blc_transfer.config import load_config, write_config_lock
from liner_blc_transfer.evaluation import MeanBlcBaseline, evaluate, write_report
from liner_blc_transfer.pipeline import PreparedData, fit_bundle
from liner_blc_transfer.splits import grouped_split
from liner_blc_transfer.synthlab import generate_dataset

seed = 0
k = 128
base_dir = sys.argv[1] if len(sys.argv) > 1 else mkdtemp(prefix="liner-blc-")

config = load_config(overrides={"preprocess": {"k": k, "resize": [128, 128]},
                                "synth": {"k": k},
                                "runtime": {"seed": seed}})
write_config_lock(config, base_dir)

_, manifest = generate_dataset(join(base_dir, "data"), config["synth"], seed=seed)
train_part, eval_part = grouped_split(manifest, config["split"]["eval_fraction"], seed)

data = PreparedData(train_part, config)
digests = []
for run in range(2):
    bundle = fit_bundle(*data.arrays(train_part.ids), config)
    digests.append(bundle.digest())
bundle.save(join(base_dir, "model.htwt"))

report = evaluate(bundle, eval_part, config["surface"]["sk_search"])
write_report(report, join(base_dir, "eval"))
baseline = MeanBlcBaseline().fit([data.records[i].label for i in train_part.ids])
baseline_w1 = evaluate(baseline, eval_part).summary()["w1"]

summary = report.summary()
summary["baseline_w1"] = baseline_w1
summary["deterministic"] = digests[0] == digests[1]
print(json.dumps(summary, indent=2, sort_keys=True))

if summary["w1"] > baseline_w1 / 3 or summary["sk_mape"] > 25 or not summary["deterministic"]:
    LOG.error("acceptance run failed, outputs kept in %s", base_dir)
    sys.exit(1)
LOG.info("acceptance run passed, outputs in %s", base_dir)
