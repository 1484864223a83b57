"""Shallow fully connected network: ReLU hidden layers, softmax output, Adam."""
import numpy as np

from .base import N_CLASSES, LearnerError, Standardizer, TrainedModel, one_hot, softmax


def init_params(sizes, rng):
    params = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        W = rng.standard_normal((fan_in, fan_out)) * np.sqrt(2.0 / fan_in)
        params += [W, np.zeros(fan_out)]
    return params


def forward(params, X):
    """Returns output logits and the per-layer activations needed by ``backward``."""
    acts = [X]
    A = X
    n_layers = len(params) // 2
    for i in range(n_layers):
        Z = A @ params[2 * i] + params[2 * i + 1]
        if i < n_layers - 1:
            A = np.maximum(Z, 0.0)
            acts.append(A)
        else:
            A = Z
    return A, acts


def loss_and_grad(params, X, Y):
    """Mean cross-entropy and its gradient w.r.t. every parameter array."""
    logits, acts = forward(params, X)
    P = softmax(logits)
    n = X.shape[0]
    loss = -np.sum(Y * np.log(np.clip(P, 1e-300, None))) / n
    grads = [None] * len(params)
    delta = (P - Y) / n
    for i in range(len(params) // 2 - 1, -1, -1):
        grads[2 * i] = acts[i].T @ delta
        grads[2 * i + 1] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ params[2 * i].T) * (acts[i] > 0)
    return loss, grads


class MLPModel(TrainedModel):
    kind = "mlp"

    def __init__(self, spec, n_features, params, scaler, history=(), **kw):
        super().__init__(spec, n_features, **kw)
        self.params = params
        self.scaler = scaler
        self.history = list(history)

    def _scores(self, X):
        logits, _ = forward(self.params, self.scaler(X))
        return softmax(logits)

    def state(self):
        arrays = {f"p{i}": a for i, a in enumerate(self.params)}
        arrays["mean"] = self.scaler.mean
        arrays["scale"] = self.scaler.scale
        return {"history": self.history, "n_params": len(self.params)}, arrays

    @classmethod
    def from_state(cls, spec, n_features, meta, scalars, arrays, **kw):
        params = [arrays[f"p{i}"] for i in range(scalars["n_params"])]
        return cls(spec, n_features, params, Standardizer(arrays["mean"], arrays["scale"]),
                   scalars.get("history", ()), meta=meta, **kw)


def train_mlp(spec, X, y, X_val=None, y_val=None, n_classes=N_CLASSES, **kw):
    if X_val is None or y_val is None or len(y_val) == 0:
        raise LearnerError("the MLP needs a validation set for early stopping")
    rng = np.random.default_rng(spec.seed)
    hidden = list(spec.get("hidden"))
    lr = float(spec.get("learning_rate"))
    batch = int(spec.get("batch_size"))
    max_epochs = int(spec.get("max_epochs"))
    patience = int(spec.get("patience"))
    b1, b2, eps = 0.9, 0.999, 1e-8

    scaler = Standardizer.fit(X)
    Xs = scaler(X)
    Xv = scaler(np.asarray(X_val, dtype=float))
    Y = one_hot(y, n_classes)
    params = init_params([X.shape[1]] + hidden + [n_classes], rng)
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    step = 0
    best_acc, best_epoch, best = -1.0, -1, [p.copy() for p in params]
    history = []
    n = X.shape[0]
    for epoch in range(max_epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch):
            sel = order[start:start + batch]
            loss, grads = loss_and_grad(params, Xs[sel], Y[sel])
            total += loss * len(sel)
            step += 1
            c1 = 1.0 - b1 ** step
            c2 = 1.0 - b2 ** step
            for i, g in enumerate(grads):
                m[i] = b1 * m[i] + (1 - b1) * g
                v[i] = b2 * v[i] + (1 - b2) * g * g
                params[i] -= lr * (m[i] / c1) / (np.sqrt(v[i] / c2) + eps)
        logits, _ = forward(params, Xv)
        acc = float(np.mean(np.argmax(logits, axis=1) == y_val))
        history.append({"epoch": epoch, "train_loss": total / n, "val_acc": acc})
        if acc > best_acc:
            best_acc, best_epoch = acc, epoch
            best = [p.copy() for p in params]
        elif epoch - best_epoch >= patience:
            break
    return MLPModel(spec, X.shape[1], best, scaler, history, n_classes=n_classes, **kw)
