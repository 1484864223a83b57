"""Classification metrics with support-weighted averaging."""
import numpy as np

N_CLASSES = 13


def confusion_matrix(y_true, y_pred, n_classes=N_CLASSES):
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape:
        raise ValueError("y_true and y_pred differ in length")
    if y_true.size and (min(y_true.min(), y_pred.min()) < 0
                        or max(y_true.max(), y_pred.max()) >= n_classes):
        raise ValueError(f"labels must lie in 0..{n_classes - 1}")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    return cm


def _ratio(num, den):
    out = np.zeros_like(num, dtype=float)
    np.divide(num, den, out=out, where=den > 0)
    return out


def classification_metrics(y_true, y_pred, n_classes=N_CLASSES):
    """Accuracy plus per-class and support-weighted precision/recall/F1 (0/0 := 0)."""
    cm = confusion_matrix(y_true, y_pred, n_classes)
    tp = np.diag(cm).astype(float)
    support = cm.sum(axis=1).astype(float)
    predicted = cm.sum(axis=0).astype(float)
    precision = _ratio(tp, predicted)
    recall = _ratio(tp, support)
    f1 = _ratio(2 * precision * recall, precision + recall)
    n = support.sum()
    w = support / n if n else support
    return {
        "accuracy": float(tp.sum() / n) if n else 0.0,
        "precision": float(np.dot(w, precision)),
        "recall": float(np.dot(w, recall)),
        "f1": float(np.dot(w, f1)),
        "per_class": {"precision": precision.tolist(), "recall": recall.tolist(),
                      "f1": f1.tolist(), "support": support.astype(int).tolist()},
        "confusion": cm.tolist(),
        "n": int(n),
    }
