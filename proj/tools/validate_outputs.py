#!/usr/bin/env python3
# Copyright 2026 The dakd Authors.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
"""Validates every JSON document dakd writes against schemas/.

With --dakd, first runs a tiny end-to-end experiment in a temporary
directory and validates its output tree. Otherwise validates an existing
experiment directory.
"""

import argparse
import json
import pathlib
import subprocess
import sys
import tempfile

import jsonschema
from referencing import Registry, Resource

SCHEMAS = pathlib.Path(__file__).resolve().parent.parent / "schemas"

TINY_CONFIG = """experiment = "tiny"
out = "{out}"
seeds = [4]

[data]
image_height = 32
image_width = 32
seed = 3

[data.counts]
source_train = 4
source_val = 2
target_train = 4
target_val = 3

[teacher]
base_width = 8
depth = 3
feature_tap_width = 8
input_height = 32
input_width = 32

[student]
base_width = 4
depth = 3
feature_tap_width = 6
input_height = 32
input_width = 32

[discriminator]
width = 8
depth = 3

[train]
teacher_iters = 4
student_iters = 4
distill_iters = 4
checkpoint_every = 2
eval_every = 2
"""


def load_schemas():
    registry = Registry()
    schemas = {}
    for path in SCHEMAS.glob("*.schema.json"):
        doc = json.loads(path.read_text())
        jsonschema.Draft202012Validator.check_schema(doc)
        registry = registry.with_resource(doc["$id"], Resource.from_contents(doc))
        schemas[path.name.removesuffix(".schema.json")] = doc
    return {name: jsonschema.Draft202012Validator(doc, registry=registry) for name, doc in schemas.items()}


def classify(path, exp):
    rel = path.relative_to(exp).parts
    if path.suffix == ".jsonl":
        return "train_log_record"
    if rel[0] == "data" and path.name == "manifest.json":
        return "manifest"
    if rel[0] == "checkpoints":
        return "checkpoint"
    if rel[0] == "reports":
        for prefix, name in (("eval_", "eval_report"), ("ladder", "ladder_report"), ("ablation_", "ablation_report")):
            if path.name.startswith(prefix):
                return name
    return None


def validate_tree(exp, validators):
    failures = 0
    seen = {}
    for path in sorted(exp.rglob("*.json*")):
        kind = classify(path, exp)
        if kind is None:
            continue
        docs = [json.loads(line) for line in path.read_text().splitlines() if line] \
            if path.suffix == ".jsonl" else [json.loads(path.read_text())]
        for doc in docs:
            errors = list(validators[kind].iter_errors(doc))
            for e in errors[:3]:
                print(f"FAIL {path}: {e.json_path}: {e.message}")
            failures += bool(errors)
        seen[kind] = seen.get(kind, 0) + len(docs)
    for kind in sorted(validators):
        if kind != "segmentation_report" and kind not in seen:
            print(f"FAIL no {kind} documents found under {exp}")
            failures += 1
    for kind, n in sorted(seen.items()):
        print(f"{kind}: {n} documents")
    return failures


def run_tiny(dakd, root):
    cfg = root / "c.toml"
    cfg.write_text(TINY_CONFIG.format(out=(root / "out").as_posix()))
    exp = root / "out" / "tiny"
    ckpt = exp / "checkpoints"
    steps = [
        ["generate-data"],
        ["pretrain", "--role", "teacher"],
        ["pretrain", "--role", "student"],
        ["distill", "--paradigm", "c", "--teacher", str(ckpt / "teacher" / "final.json"),
         "--student", str(ckpt / "student" / "final.json")],
        ["evaluate", "--checkpoint", str(ckpt / "distill_c" / "final.json")],
        ["ladder"],
        ["ladder", "--ablation", "pseudo"],
    ]
    for step in steps:
        subprocess.run([dakd, step[0], "--config", str(cfg), *step[1:]], check=True, stdout=subprocess.DEVNULL)
    # Reports must aggregate from their own output.
    subprocess.run([dakd, "ladder", "--config", str(cfg), "--aggregate", str(exp / "reports" / "ladder.json")],
                   check=True, stdout=subprocess.DEVNULL)
    return exp


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--dakd", help="path to the dakd binary; runs a tiny experiment first")
    parser.add_argument("--experiment", help="existing experiment directory to validate")
    args = parser.parse_args()
    if bool(args.dakd) == bool(args.experiment):
        parser.error("pass exactly one of --dakd and --experiment")

    validators = load_schemas()
    if args.experiment:
        return 1 if validate_tree(pathlib.Path(args.experiment), validators) else 0
    with tempfile.TemporaryDirectory(prefix="dakd_schema_") as tmp:
        exp = run_tiny(args.dakd, pathlib.Path(tmp))
        return 1 if validate_tree(exp, validators) else 0


if __name__ == "__main__":
    sys.exit(main())
