"""Linear probes: softmax regression trained by full-batch gradient descent.

Used to measure how linearly decodable a label (class or sensitive
group) is from features or frozen latents.
"""

from __future__ import annotations

import numpy as np


def train_linear_probe(X: np.ndarray, y: np.ndarray, num_classes: int,
                       steps: int = 300, lr: float = 0.5, l2: float = 1e-4,
                       ) -> tuple[np.ndarray, np.ndarray]:
    """Returns (W, b) of a multinomial logistic regression fit."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    n, d = X.shape
    mu, sd = X.mean(axis=0), X.std(axis=0) + 1e-8
    Xn = (X - mu) / sd
    W = np.zeros((num_classes, d))
    b = np.zeros(num_classes)
    Y = np.zeros((n, num_classes))
    Y[np.arange(n), y] = 1.0
    for _ in range(steps):
        Z = Xn @ W.T + b
        Z -= Z.max(axis=1, keepdims=True)
        P = np.exp(Z)
        P /= P.sum(axis=1, keepdims=True)
        G = (P - Y) / n
        W -= lr * (G.T @ Xn + l2 * W)
        b -= lr * G.sum(axis=0)
    # fold the normalization back into the returned parameters
    W_raw = W / sd
    b_raw = b - W_raw @ mu
    return W_raw, b_raw


def probe_accuracy(X_train, y_train, X_test, y_test, num_classes: int,
                   steps: int = 300, lr: float = 0.5) -> float:
    W, b = train_linear_probe(X_train, y_train, num_classes, steps=steps, lr=lr)
    pred = np.argmax(np.asarray(X_test, dtype=float) @ W.T + b, axis=1)
    return float(np.mean(pred == np.asarray(y_test, dtype=int)))
