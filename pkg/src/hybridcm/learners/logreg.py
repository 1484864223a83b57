"""L2-regularised multinomial logistic regression."""
import numpy as np
from scipy.optimize import minimize

from .base import N_CLASSES, LearnerError, Standardizer, TrainedModel, one_hot, softmax


def objective(theta, X, Y, l2):
    """Mean cross-entropy plus (l2/2)*||W||^2 (bias unpenalised), with gradient."""
    p, K = X.shape[1], Y.shape[1]
    W = theta[:p * K].reshape(p, K)
    b = theta[p * K:]
    Z = X @ W + b
    Z -= Z.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(Z).sum(axis=1))
    n = X.shape[0]
    loss = (np.sum(logsum) - np.sum(Z * Y)) / n + 0.5 * l2 * np.sum(W * W)
    P = np.exp(Z - logsum[:, None])
    D = (P - Y) / n
    gW = X.T @ D + l2 * W
    gb = D.sum(axis=0)
    return loss, np.concatenate([gW.ravel(), gb])


class LogRegModel(TrainedModel):
    kind = "logreg"

    def __init__(self, spec, n_features, W, b, scaler, grad_norm=np.nan, **kw):
        super().__init__(spec, n_features, **kw)
        self.W = np.asarray(W, dtype=float)
        self.b = np.asarray(b, dtype=float)
        self.scaler = scaler
        self.grad_norm = float(grad_norm)

    def _scores(self, X):
        return softmax(self.scaler(X) @ self.W + self.b)

    def state(self):
        return {"grad_norm": self.grad_norm}, {"W": self.W, "b": self.b, "mean": self.scaler.mean,
                                               "scale": self.scaler.scale}

    @classmethod
    def from_state(cls, spec, n_features, meta, scalars, arrays, **kw):
        return cls(spec, n_features, arrays["W"], arrays["b"],
                   Standardizer(arrays["mean"], arrays["scale"]), scalars.get("grad_norm", np.nan),
                   meta=meta, **kw)


def train_logreg(spec, X, y, n_classes=N_CLASSES, **kw):
    l2 = float(spec.get("l2"))
    gtol = float(spec.get("gtol"))
    scaler = Standardizer.fit(X)
    Xs = scaler(X)
    Y = one_hot(y, n_classes)
    p = X.shape[1]
    theta = np.zeros(p * n_classes + n_classes)
    for _ in range(5):
        res = minimize(objective, theta, args=(Xs, Y, l2), jac=True, method="L-BFGS-B",
                       options={"maxiter": int(spec.get("max_iter")), "gtol": gtol * 1e-2,
                                "ftol": 1e-15, "maxcor": 30})
        theta = res.x
        gnorm = float(np.linalg.norm(objective(theta, Xs, Y, l2)[1]))
        if gnorm < gtol:
            break
    else:
        if gnorm >= gtol:
            raise LearnerError(f"logistic regression did not converge (|grad|={gnorm:.3g})")
    W = theta[:p * n_classes].reshape(p, n_classes)
    return LogRegModel(spec, p, W, theta[p * n_classes:], scaler, gnorm, n_classes=n_classes, **kw)


def zero_model(spec, n_features, n_classes=N_CLASSES):
    """Logistic model with all weights zero (uniform output)."""
    return LogRegModel(spec, n_features, np.zeros((n_features, n_classes)), np.zeros(n_classes),
                       Standardizer(np.zeros(n_features), np.ones(n_features)), 0.0,
                       n_classes=n_classes)


__all__ = ["LogRegModel", "train_logreg", "objective", "zero_model", "softmax"]
