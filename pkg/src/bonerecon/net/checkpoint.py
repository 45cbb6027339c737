"""Named-tensor checkpoints: a JSON index plus a little-endian float32 blob."""

import json
from pathlib import Path

import numpy as np
import torch

from ..errors import FormatError, ParseError
from .model import NetConfig, build_model


def _paths(path):
    path = Path(path)
    stem = path.with_suffix("") if path.suffix in (".json", ".bin") else path
    return stem.with_suffix(".json"), stem.with_suffix(".bin")


def save_checkpoint(model, path, extra=None):
    index_path, blob_path = _paths(path)
    index_path.parent.mkdir(parents=True, exist_ok=True)
    entries, offset = [], 0
    with open(blob_path, "wb") as fh:
        for name, t in model.state_dict().items():
            arr = t.detach().cpu().numpy().astype("<f4")
            entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
            fh.write(arr.tobytes())
            offset += arr.nbytes
    index = {"config": model.cfg.to_dict(), "tensors": entries, "blob": blob_path.name}
    if extra:
        index["extra"] = extra
    with open(index_path, "w") as fh:
        json.dump(index, fh, indent=1, sort_keys=True)
    return index_path


def load_checkpoint(path, dtype=torch.float32):
    index_path, blob_path = _paths(path)
    try:
        with open(index_path) as fh:
            index = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError("%s: bad checkpoint index (%s)" % (index_path, exc)) from None
    blob = np.fromfile(blob_path, dtype=np.uint8)
    model = build_model(NetConfig(**index["config"]), dtype=dtype)
    state = model.state_dict()
    loaded = {}
    for e in index["tensors"]:
        n = int(np.prod(e["shape"], dtype=np.int64))
        end = e["offset"] + 4 * n
        if end > blob.size:
            raise FormatError("%s: tensor %s runs past the end of the blob" % (blob_path, e["name"]))
        arr = blob[e["offset"]:end].view("<f4").reshape(e["shape"])
        if e["name"] not in state or tuple(state[e["name"]].shape) != tuple(e["shape"]):
            raise FormatError("%s: tensor %s does not match the configured model" % (index_path, e["name"]))
        loaded[e["name"]] = torch.from_numpy(arr.astype(np.float32)).to(dtype)
    missing = set(state) - set(loaded)
    if missing:
        raise FormatError("%s: missing tensors %s" % (index_path, sorted(missing)))
    model.load_state_dict(loaded)
    return model, index.get("extra", {})
