#!/usr/bin/env python3
"""Start/status/stop hooks of a synthetic service.

This file is copied verbatim into every synthetic service directory as
``start``, ``status`` and ``stop``; the hook is picked from ``argv[0]``.
Standard library only, so services replay without wfhub installed.

Every output file is a keyed digest of the sorted input file digests, the
user config (keys not starting with ``_``) and the app version.  Feature
outputs are tables whose values are derived from the same key.

Config knobs understood by the transform:

* ``synthetic_polls``: status polls that report "running" before finishing
* ``synthetic_fail``: finish with status 2 instead of 1
"""

import hashlib
import json
import os
import sys

STATE = ".synthetic_state"


def _digest(data):
    return hashlib.sha256(data).hexdigest()


def _input_digests(work_dir, config):
    out = []
    for entry in config.get("_inputs", []):
        root = os.path.join(work_dir, entry["path"])
        for dirpath, _dirs, files in os.walk(root):
            for name in files:
                with open(os.path.join(dirpath, name), "rb") as fh:
                    out.append(_digest(fh.read()))
    return sorted(out)


def transform_key(input_digests, config, version):
    user = {k: v for k, v in config.items() if not k.startswith("_")}
    blob = json.dumps({"inputs": sorted(input_digests), "config": user, "version": version}, sort_keys=True)
    return _digest(blob.encode())


def _value(key, *parts):
    h = _digest("\0".join((key,) + parts).encode())
    return round(int(h[:13], 16) / 16 ** 13 * 100.0, 6)


def _feature_table(key, slot, feat):
    structures, measures = feat["structures"], feat["measures"]
    s_col = feat.get("structure", "structure")
    if feat.get("format", "long") == "wide":
        lines = ["\t".join([s_col] + list(measures))]
        for s in structures:
            lines.append("\t".join([s] + [repr(_value(key, slot, s, m)) for m in measures]))
    else:
        m_col, v_col = feat.get("measure", "measure"), feat.get("value", "value")
        lines = ["\t".join([s_col, m_col, v_col])]
        for s in structures:
            for m in measures:
                lines.append("\t".join([s, m, repr(_value(key, slot, s, m))]))
    return ("\n".join(lines) + "\n").encode()


def _write(path, data):
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(data)


def start(work_dir):
    with open(os.path.join(work_dir, "synthetic.json")) as fh:
        spec = json.load(fh)
    with open(os.path.join(work_dir, "config.json")) as fh:
        config = json.load(fh)
    key = transform_key(_input_digests(work_dir, config), config, spec["version"])
    paths = {o["id"]: o["path"] for o in config.get("_outputs", [])}
    for out in spec["outputs"]:
        base = os.path.join(work_dir, paths.get(out["slot"], os.path.join("outputs", out["slot"])))
        feat = out.get("features")
        for rel in out["files"]:
            if feat and rel == feat["file"]:
                data = _feature_table(key, out["slot"], feat)
            else:
                data = (_digest("\0".join((key, out["slot"], rel)).encode()) + "\n").encode()
            _write(os.path.join(base, rel), data)
    polls = int(config.get("synthetic_polls", 0))
    outcome = "failed" if config.get("synthetic_fail") else "finished"
    _write(os.path.join(work_dir, STATE), json.dumps({"state": outcome, "polls": polls}).encode())
    _write(os.path.join(work_dir, "jobid"), ("synthetic-" + key[:12] + "\n").encode())
    return 0


def status(work_dir):
    path = os.path.join(work_dir, STATE)
    try:
        with open(path) as fh:
            state = json.load(fh)
    except (OSError, ValueError):
        return 3
    if state["state"] == "stopped":
        return 2
    if state.get("polls", 0) > 0:
        state["polls"] -= 1
        _write(path, json.dumps(state).encode())
        return 0
    return 1 if state["state"] == "finished" else 2


def stop(work_dir):
    _write(os.path.join(work_dir, STATE), json.dumps({"state": "stopped", "polls": 0}).encode())
    return 0


HOOKS = {"start": start, "status": status, "stop": stop}


def main(hook, work_dir):
    return HOOKS[hook](str(work_dir))


if __name__ == "__main__":
    sys.exit(main(os.path.basename(sys.argv[0]), os.getcwd()))
