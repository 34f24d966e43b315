"""JSON persistence with ``%.17g`` number formatting (lossless for doubles)."""

import json
import math

import numpy as np


def _encode(obj):
    if isinstance(obj, dict):
        return "{" + ", ".join(f"{json.dumps(str(k))}: {_encode(v)}" for k, v in obj.items()) + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ", ".join(_encode(v) for v in obj) + "]"
    if isinstance(obj, np.ndarray):
        return _encode(obj.tolist())
    if isinstance(obj, (bool, np.bool_)) or obj is None:
        return json.dumps(bool(obj) if obj is not None else None)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isnan(v):
            return "NaN"
        if math.isinf(v):
            return "Infinity" if v > 0 else "-Infinity"
        return "%.17g" % v
    return json.dumps(obj)


def dumps(obj):
    return _encode(obj)


def dump(obj, path):
    with open(path, "w") as fh:
        fh.write(_encode(obj))
        fh.write("\n")


def load(path):
    with open(path) as fh:
        return json.load(fh)


def save_model(model, path):
    dump(model.to_dict(), path)


def load_model(path):
    """Load a kernel model or a DSM score net by the document's ``provider``/``kind``."""
    doc = load(path)
    if doc.get("kind") == "dsm_net":
        from .baselines import DsmScoreNet

        return DsmScoreNet.from_dict(doc)
    from .kernel import KernelModel

    return KernelModel.from_dict(doc)
