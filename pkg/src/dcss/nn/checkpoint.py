"""Lossless ``.npz`` checkpoints for network parameters and Adam state."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .layers import NetworkParams
from .optim import AdamState

FORMAT_TAG = "dcss-checkpoint/1"


def save_checkpoint(path, params: NetworkParams, state: AdamState | None = None,
                    rng: dict | None = None, extra: dict | None = None) -> Path:
    path = Path(path)
    meta = {
        "format": FORMAT_TAG,
        "spec": params.spec_dict(),
        "blocks": list(params.blocks),
        "adam": None,
        "rng": rng,
        "extra": extra or {},
    }
    arrays = {f"p/{k}": v for k, v in params.blocks.items()}
    if state is not None:
        meta["adam"] = {"lr": state.lr, "beta1": state.beta1, "beta2": state.beta2,
                        "eps": state.eps, "weight_decay": state.weight_decay, "t": state.t,
                        "moments": list(state.m)}
        arrays.update({f"m/{k}": v for k, v in state.m.items()})
        arrays.update({f"v/{k}": v for k, v in state.v.items()})
    arrays["__meta__"] = np.array(json.dumps(meta))
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    return path


def load_checkpoint(path):
    """Returns ``(params, adam_state_or_None, meta)``."""
    with np.load(path, allow_pickle=False) as f:
        meta = json.loads(str(f["__meta__"]))
        if meta.get("format") != FORMAT_TAG:
            raise ValueError(f"{path}: unsupported checkpoint format {meta.get('format')!r}")
        blocks = {k: f[f"p/{k}"] for k in meta["blocks"]}
        params = NetworkParams.from_spec_dict(meta["spec"], blocks)
        state = None
        if meta["adam"] is not None:
            a = meta["adam"]
            state = AdamState(lr=a["lr"], beta1=a["beta1"], beta2=a["beta2"], eps=a["eps"],
                              weight_decay=a["weight_decay"], t=a["t"],
                              m={k: f[f"m/{k}"] for k in a["moments"]},
                              v={k: f[f"v/{k}"] for k in a["moments"]})
    return params, state, meta
