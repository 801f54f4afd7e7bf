"""Self-describing JSON model documents (bit-exact float round trip)."""
import json
from pathlib import Path

import numpy as np

from .lpv_model import LpvSubnet

FORMAT = "lpvsubnet-model"
VERSION = 1


def _mlp_doc(net):
    if net is None:
        return None
    return {
        "widths": net.widths,
        "weights": [W.value.tolist() for W in net.weights],
        "biases": [b.value.tolist() for b in net.biases],
        "bypass": None if net.bypass is None else net.bypass.value.tolist(),
    }


def _load_mlp(net, doc, what):
    if (net is None) != (doc is None):
        raise ValueError(f"model document inconsistent for {what}")
    if net is None:
        return
    if list(doc["widths"]) != net.widths:
        raise ValueError(f"{what}: widths {doc['widths']} do not match {net.widths}")
    for W, v in zip(net.weights, doc["weights"]):
        W.value[...] = np.asarray(v, dtype=np.float64)
    for b, v in zip(net.biases, doc["biases"]):
        b.value[...] = np.asarray(v, dtype=np.float64)
    if (net.bypass is None) != (doc["bypass"] is None):
        raise ValueError(f"{what}: bypass presence mismatch")
    if net.bypass is not None:
        net.bypass.value[...] = np.asarray(doc["bypass"], dtype=np.float64)


def to_document(net):
    m = net.model
    return {
        "format": FORMAT,
        "version": VERSION,
        "dims": {"n_x": m.n_x, "n_u": m.n_u, "n_y": m.n_y, "n_p": m.n_p, "n_px": m.n_px,
                 "n_py": m.n_py, "lag": net.enc.lag},
        "noise": m.noise,
        "mode": net.mode,
        "normalization": {"u_mean": m.u_mean.tolist(), "u_std": m.u_std.tolist(),
                          "y_mean": m.y_mean.tolist(), "y_std": m.y_std.tolist()},
        "matrices": {k: M.coeffs.value.tolist() for k, M in m.matrices().items()},
        "scheduling": {"phi_x": _mlp_doc(net.sched.phi_x), "phi_y": _mlp_doc(net.sched.phi_y)},
        "encoder": _mlp_doc(net.enc.net),
    }


def _hidden(doc):
    return tuple(doc["widths"][1:-1]) if doc is not None else None


def from_document(doc):
    if doc.get("format") != FORMAT:
        raise ValueError(f"not a {FORMAT} document")
    if doc.get("version") != VERSION:
        raise ValueError(f"unsupported model document version {doc.get('version')}")
    d = doc["dims"]
    sched_doc = doc["scheduling"]["phi_x"] or doc["scheduling"]["phi_y"]
    hidden = _hidden(sched_doc) if sched_doc is not None else ()
    net = LpvSubnet.build(d["n_x"], d["n_u"], d["n_y"], n_p=d["n_p"], lag=d["lag"], noise=doc["noise"],
                          mode=doc["mode"], n_px=d["n_px"], hidden=hidden,
                          encoder_hidden=_hidden(doc["encoder"]))
    m = net.model
    for k, M in m.matrices().items():
        val = np.asarray(doc["matrices"][k], dtype=np.float64)
        if val.shape != M.coeffs.value.shape:
            raise ValueError(f"matrix {k}: shape {val.shape}, expected {M.coeffs.value.shape}")
        M.coeffs.value[...] = val
    nrm = doc["normalization"]
    m.set_normalization(nrm["u_mean"], nrm["u_std"], nrm["y_mean"], nrm["y_std"])
    _load_mlp(net.sched.phi_x, doc["scheduling"]["phi_x"], "phi_x")
    _load_mlp(net.sched.phi_y, doc["scheduling"]["phi_y"], "phi_y")
    _load_mlp(net.enc.net, doc["encoder"], "encoder")
    return net


def save_model(net, path):
    Path(path).write_text(json.dumps(to_document(net), allow_nan=False) + "\n")


def load_model(path):
    return from_document(json.loads(Path(path).read_text()))
