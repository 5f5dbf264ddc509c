"""Python access to the halprobe evaluation core."""

import json

from ._core import HalprobeError, auc, jsd, naive_predict, pcc, select_threshold, version

__all__ = [
    "HalprobeError",
    "auc",
    "bayes_auc",
    "jsd",
    "naive_predict",
    "pcc",
    "run_protocol",
    "run_synthetic",
    "select_threshold",
    "version",
]

__version__ = version()


def bayes_auc(spec):
    """Closed-form AUCs for a synthetic spec given as a dict."""
    from . import _core

    return json.loads(_core.bayes_auc(json.dumps(spec)))


def run_synthetic(spec, protocol):
    """Generate the synthetic corpus for `spec` and run `protocol` on it; returns the report dict."""
    from . import _core

    return json.loads(_core.run_synthetic(json.dumps(spec), json.dumps(protocol)))


def run_protocol(protocol, datasets):
    """Run a protocol over on-disk datasets {name: (corpus_path, dump_path or None)}."""
    from . import _core

    paths = {name: (str(c), None if d is None else str(d)) for name, (c, d) in datasets.items()}
    return json.loads(_core.run_protocol(json.dumps(protocol), paths))
