"""Reading and writing the CLI's output documents.

JSON documents are written with sorted keys and two-space indentation so
identical inputs give identical bytes. Every document carries a
``manifest`` object; its ``created_at`` field is the only part that varies
between identical runs.
"""

from __future__ import annotations

import csv
import datetime as _dt
import hashlib
import json
import os

import numpy as np

from . import __version__
from .aggregate import EstimateSet
from .errors import ValidationError


def file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return "sha256:" + h.hexdigest()


def make_manifest(command, config, inputs=(), seed=None):
    """Run manifest: command, resolved config, input digests, seed, version."""
    return {
        "command": command,
        "config": config,
        "inputs": {str(p): file_digest(p) for p in inputs if p and os.path.isfile(p)},
        "seed": seed,
        "tool": "stackdid",
        "version": __version__,
        "created_at": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
    }


def _default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (tuple, set, frozenset)):
        return list(o)
    raise TypeError(f"cannot serialize {type(o).__name__}")


def dumps(doc):
    return json.dumps(doc, indent=2, sort_keys=True, default=_default, allow_nan=False) + "\n"


def write_document(doc, dest=None):
    text = dumps(doc)
    if dest is None or dest == "-":
        import sys
        sys.stdout.write(text)
    else:
        with open(dest, "w", encoding="utf-8") as fh:
            fh.write(text)
    return text


def read_document(path):
    with open(path, encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: not a valid JSON document ({exc})") from None


def strip_volatile(doc):
    """Copy of ``doc`` without timestamp fields, for reproducibility checks."""
    if isinstance(doc, dict):
        return {k: strip_volatile(v) for k, v in doc.items() if k != "created_at"}
    if isinstance(doc, list):
        return [strip_volatile(v) for v in doc]
    return doc


def estimate_set_from_documents(est_doc, cov_doc):
    """Align an estimates document with a covariance document by label."""
    try:
        vals = {e["cohort"]: float(e["value"]) for e in est_doc["estimates"]}
        labels = list(cov_doc["labels"])
        W = np.array(cov_doc["W"], dtype=float)
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"malformed document: missing {exc}") from None
    missing = [lab for lab in labels if lab not in vals]
    if missing:
        raise ValidationError(f"estimates document lacks cohorts {missing}")
    return EstimateSet(tuple(labels), np.array([vals[lab] for lab in labels]), W)


def write_table(rows, columns, manifest, dest=None):
    """Delimited results table; the manifest sits on a leading comment line."""
    lines = ["# manifest " + json.dumps(manifest, sort_keys=True, default=_default)]
    buf = []

    class _W:
        def write(self, s):
            buf.append(s)

    w = csv.writer(_W(), lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r.get(c)) for c in columns])
    text = "\n".join(lines) + "\n" + "".join(buf)
    if dest is None or dest == "-":
        import sys
        sys.stdout.write(text)
    else:
        with open(dest, "w", encoding="utf-8") as fh:
            fh.write(text)
    return text


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def read_table(path_or_text):
    """Parse a results table back into (manifest, list of dict rows)."""
    if os.path.exists(str(path_or_text)):
        with open(path_or_text, encoding="utf-8") as fh:
            text = fh.read()
    else:
        text = str(path_or_text)
    lines = text.splitlines()
    manifest = None
    body = []
    for ln in lines:
        if ln.startswith("# manifest "):
            manifest = json.loads(ln[len("# manifest "):])
        elif not ln.startswith("#"):
            body.append(ln)
    rows = list(csv.DictReader(body))
    return manifest, rows
