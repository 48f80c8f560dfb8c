# Copyright (c) 2026 The MGLU Authors. All Rights Reserved.
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
"""Runs each mglu subcommand and validates its JSON report against schemas/."""

import json
import subprocess
import sys
import tempfile
from pathlib import Path

import jsonschema


def run(cli, args, expect_code=0):
    proc = subprocess.run([cli, *args, "--json", "-"], capture_output=True, text=True)
    if proc.returncode != expect_code:
        sys.exit(f"{' '.join(args)}: exit {proc.returncode}, expected {expect_code}\n{proc.stderr}")
    return json.loads(proc.stdout)


def main():
    cli, root = sys.argv[1], Path(sys.argv[2])
    schemas = {p.name.split(".")[0]: json.loads(p.read_text()) for p in (root / "schemas").glob("*.schema.json")}
    for s in schemas.values():
        jsonschema.Draft202012Validator.check_schema(s)

    with tempfile.TemporaryDirectory() as tmp:
        cfg = Path(tmp) / "tiny.json"
        cfg.write_text(json.dumps({"steps": 20, "log_every": 10, "n_m": 2, "dims": {"h": 8, "d": 16},
                                   "task": {"samples": 64}, "eval_samples": 32, "batch_size": 8}))
        reports = [
            ("verify", run(cli, ["verify", "--shapes", "8x16", "--masks", "1,9", "--deterministic"])),
            ("verify", run(cli, ["verify", "--shapes", "8x16", "--masks", "2", "--no-gradients"])),
            ("verify", run(cli, ["verify", "--shapes", "8x16", "--masks", "2", "--inject-fault", "mask",
                                 "--no-gradients"], expect_code=1)),
            ("bench", run(cli, ["bench", "--shapes", "32x64", "--masks", "1,4,8", "--reps", "2", "--warmup", "0"])),
            ("train", run(cli, ["train", str(cfg), "--compare-masks"])),
            ("train", run(cli, ["train", str(cfg), "--deterministic"])),
            ("analyze", run(cli, ["analyze", "--shapes", "768x3072,2048x8192", "--masks", "1,4"])),
        ]
    for kind, doc in reports:
        jsonschema.validate(doc, schemas[kind], cls=jsonschema.Draft202012Validator)
        print(f"ok {kind}")
    if reports[2][1]["pass"]:
        sys.exit("fault-injected verify report claims pass")
    if "timestamp" in reports[0][1]["environment"] or "wall_time_s" in reports[5][1]["result"]:
        sys.exit("deterministic reports carry timing fields")


if __name__ == "__main__":
    main()
