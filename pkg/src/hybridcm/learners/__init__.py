"""Base classifiers: random forest, boosted trees, MLP and multinomial logistic regression."""
import io
import json
import time

import numpy as np

from .base import (DEFAULTS, N_CLASSES, LearnerError, ModelSpec, TrainedModel, check_xy,
                   default_member_specs)
from .forest import ForestModel, train_forest
from .gbt import GBTModel, train_gbt
from .logreg import LogRegModel, train_logreg
from .mlp import MLPModel, train_mlp

FORMAT_VERSION = 1
_CLASSES = {"forest": ForestModel, "gbt": GBTModel, "mlp": MLPModel, "logreg": LogRegModel}


def train(spec, X, y, X_val=None, y_val=None, preset="", n_classes=N_CLASSES):
    """Fit the learner described by ``spec`` and return a TrainedModel."""
    X, y = check_xy(X, y, n_classes)
    if X_val is not None:
        X_val, y_val = check_xy(X_val, y_val, n_classes)
        if X_val.shape[1] != X.shape[1]:
            raise LearnerError("validation features differ in width from training features")
    kw = {"n_classes": n_classes, "preset": preset}
    t0 = time.perf_counter()
    if spec.kind == "forest":
        model = train_forest(spec, X, y, **kw)
    elif spec.kind == "gbt":
        model = train_gbt(spec, X, y, **kw)
    elif spec.kind == "mlp":
        model = train_mlp(spec, X, y, X_val, y_val, **kw)
    else:
        model = train_logreg(spec, X, y, **kw)
    model.meta["train_seconds"] = time.perf_counter() - t0
    model.meta["n_train"] = int(X.shape[0])
    return model


def save_model(model, path):
    scalars, arrays = model.state()
    header = {"version": FORMAT_VERSION, "kind": model.kind, "spec": model.spec.to_dict(),
              "n_features": model.n_features, "n_classes": model.n_classes,
              "preset": model.preset, "meta": model.meta, "scalars": scalars}
    buf = io.BytesIO()
    np.savez_compressed(buf, __header__=np.frombuffer(json.dumps(header).encode(), dtype=np.uint8),
                        **arrays)
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_model(path, preset=None):
    """Load a model saved by ``save_model``.

    If ``preset`` is given, refuse a model trained on a different feature preset.
    """
    with np.load(path, allow_pickle=False) as z:
        header = json.loads(bytes(z["__header__"]).decode())
        arrays = {k: z[k] for k in z.files if k != "__header__"}
    if header.get("version") != FORMAT_VERSION:
        raise LearnerError(f"unsupported model format version {header.get('version')}")
    if preset is not None and header["preset"] != preset:
        raise LearnerError(f"model was trained on preset {header['preset']!r}, not {preset!r}")
    cls = _CLASSES[header["kind"]]
    return cls.from_state(ModelSpec.from_dict(header["spec"]), header["n_features"], header["meta"],
                          header["scalars"], arrays, n_classes=header["n_classes"],
                          preset=header["preset"])


__all__ = ["ModelSpec", "TrainedModel", "LearnerError", "train", "save_model", "load_model",
           "default_member_specs", "DEFAULTS", "N_CLASSES"]
