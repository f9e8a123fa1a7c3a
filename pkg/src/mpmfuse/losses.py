import numpy as np
from scipy.special import log_softmax


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Pixel-averaged softmax cross-entropy and its gradient w.r.t. ``logits``.

    ``logits`` is ``(C, H, W)``; ``labels`` is an ``(H, W)`` integer grid in
    ``0..C-1``. Returns ``(loss, dloss/dlogits)``.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    c = logits.shape[0]
    if labels.shape != logits.shape[1:]:
        raise ValueError(f"labels {labels.shape} do not match logits {logits.shape}")
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= c:
        raise ValueError(f"labels must lie in 0..{c - 1}")
    n_pix = labels.size
    logp = log_softmax(logits, axis=0)
    onehot = np.arange(c)[:, None, None] == labels[None]
    loss = -float(np.sum(logp[onehot])) / n_pix
    grad = (np.exp(logp) - onehot) / n_pix
    return loss, grad
