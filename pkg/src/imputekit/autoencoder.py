"""Bottleneck autoencoder for tabular reconstruction, built on numpy.

The network is a symmetric ReLU MLP whose widths follow
[d, d//2, d//4, d//8, d//4, d//2, d] (floor division, clamped to >= 2), with
batch normalization before each hidden activation, He-uniform
initialization, and an Adam-optimized masked reconstruction loss: the mean
squared error is taken over originally-observed cells only, so initializer
placeholders never enter the objective.

Dropout is applied to the input layer (denoising corruption): hidden layers
here are as narrow as 2 units, where unit dropout would sever the
information path, while input dropout trains exactly the partial-input
reconstruction the imputer needs at inference.

Training holds out a seeded 10% row split for early stopping (restore best
weights). Inference disables dropout and switches batch normalization to
running averages, so reconstruction is deterministic.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .baseline import ImputationResult, ImputationError, initial_fill, snap_to_categories
from .data_model import DISCRETE, DataTable


class TrainingDiverged(RuntimeError):
    """Raised when the training loss turns non-finite."""

    def __init__(self, epoch: int):
        super().__init__(f"training diverged at epoch {epoch}")
        self.epoch = epoch


@dataclass(frozen=True)
class AEArchitecture:
    widths: tuple[int, ...]
    dropout_p: float = 0.2
    use_batchnorm: bool = True

    def __post_init__(self):
        w = self.widths
        if len(w) < 2 or w != tuple(reversed(w)):
            raise ValueError("widths must be a palindrome")
        if min(w) < 2:
            raise ValueError("every layer width must be >= 2")


def build_architecture(d: int, dropout_p: float = 0.2, use_batchnorm: bool = True) -> AEArchitecture:
    """Symmetric widths [d, d//2, d//4, d//8, d//4, d//2, d], floors clamped to 2."""
    if d < 2:
        raise ValueError(f"need at least 2 features, got {d}")
    h = [max(2, d // 2), max(2, d // 4), max(2, d // 8)]
    widths = (d, h[0], h[1], h[2], h[1], h[0], d)
    return AEArchitecture(widths=widths, dropout_p=dropout_p, use_batchnorm=use_batchnorm)


@dataclass(frozen=True)
class TrainSchedule:
    epochs: int = 100
    patience: int = 10
    batch_size: int | None = None  # None -> min(32, n // 10), at least 1
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    val_fraction: float = 0.1
    bn_momentum: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if self.patience > self.epochs:
            raise ValueError("patience must not exceed epochs")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    def resolve_batch_size(self, n: int) -> int:
        if self.batch_size is not None:
            return self.batch_size
        return max(1, min(32, n // 10))


class _Net:
    """Parameter container + forward/backward passes."""

    def __init__(self, arch: AEArchitecture, rng: np.random.Generator):
        self.arch = arch
        self.W, self.b = [], []
        for fan_in, fan_out in zip(arch.widths[:-1], arch.widths[1:]):
            limit = np.sqrt(6.0 / fan_in)  # He-uniform
            self.W.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            self.b.append(np.zeros(fan_out))
        self.n_hidden = len(self.W) - 1
        self.gamma = [np.ones(w) for w in arch.widths[1:-1]]
        self.beta = [np.zeros(w) for w in arch.widths[1:-1]]
        self.run_mean = [np.zeros(w) for w in arch.widths[1:-1]]
        self.run_var = [np.ones(w) for w in arch.widths[1:-1]]

    def parameters(self):
        params = list(self.W) + list(self.b)
        if self.arch.use_batchnorm:
            params += list(self.gamma) + list(self.beta)
        return params

    def state(self):
        return [np.array(a) for a in (self.W + self.b + self.gamma + self.beta
                                      + self.run_mean + self.run_var)]

    def load_state(self, state):
        arrs = [self.W, self.b, self.gamma, self.beta, self.run_mean, self.run_var]
        i = 0
        for group in arrs:
            for k in range(len(group)):
                group[k] = np.array(state[i])
                i += 1

    def forward(self, X, training, rng=None, bn_momentum=0.9):
        """Returns (output, cache for backward)."""
        A = X
        if training and self.arch.dropout_p > 0:
            keep = 1.0 - self.arch.dropout_p
            A = A * ((rng.random(A.shape) < keep) / keep)  # input corruption
        cache = {"A": [A], "Z": [], "bn": [], "training": training}
        for l in range(len(self.W)):
            Z = A @ self.W[l] + self.b[l]
            cache["Z"].append(Z)
            if l == len(self.W) - 1:
                A = Z  # linear output layer
                break
            if self.arch.use_batchnorm:
                if training:
                    mu = Z.mean(axis=0)
                    var = Z.var(axis=0)
                    self.run_mean[l] = bn_momentum * self.run_mean[l] + (1 - bn_momentum) * mu
                    self.run_var[l] = bn_momentum * self.run_var[l] + (1 - bn_momentum) * var
                else:
                    mu, var = self.run_mean[l], self.run_var[l]
                inv = 1.0 / np.sqrt(var + 1e-5)
                Zh = (Z - mu) * inv
                H = self.gamma[l] * Zh + self.beta[l]
                cache["bn"].append((Zh, inv))
            else:
                H = Z
                cache["bn"].append(None)
            A = np.maximum(H, 0.0)
            cache.setdefault("H", []).append(H)
            cache["A"].append(A)
        return A, cache

    def refresh_bn_stats(self, X):
        """Set batchnorm running stats from a full clean pass.

        EMA stats lag badly in the first epochs (few batches, stats start at
        identity), which poisons the early-stopping signal; recomputing them
        from the whole training set after each epoch keeps validation and
        inference calibrated to the current weights.
        """
        if not self.arch.use_batchnorm:
            return
        A = X
        for l in range(len(self.W) - 1):
            Z = A @ self.W[l] + self.b[l]
            mu = Z.mean(axis=0)
            var = Z.var(axis=0)
            self.run_mean[l] = mu
            self.run_var[l] = var
            H = self.gamma[l] * (Z - mu) / np.sqrt(var + 1e-5) + self.beta[l]
            A = np.maximum(H, 0.0)

    def backward(self, dOut, cache):
        """Gradients of all parameters given dLoss/dOutput."""
        L = len(self.W)
        dW = [None] * L
        db = [None] * L
        dgamma = [None] * (L - 1)
        dbeta = [None] * (L - 1)
        dZ = dOut
        for l in reversed(range(L)):
            A_prev = cache["A"][l]
            dW[l] = A_prev.T @ dZ
            db[l] = dZ.sum(axis=0)
            if l == 0:
                break
            dA = dZ @ self.W[l].T  # gradient w.r.t. previous activation
            k = l - 1  # hidden-layer index
            dH = dA * (cache["H"][k] > 0)
            if self.arch.use_batchnorm:
                Zh, inv = cache["bn"][k]
                m = Zh.shape[0]
                dgamma[k] = (dH * Zh).sum(axis=0)
                dbeta[k] = dH.sum(axis=0)
                if cache["training"]:
                    dZh = dH * self.gamma[k]
                    dZ = (inv / m) * (
                        m * dZh - dZh.sum(axis=0) - Zh * (dZh * Zh).sum(axis=0)
                    )
                else:
                    dZ = dH * self.gamma[k] * inv
            else:
                dZ = dH
        grads = dW + db
        if self.arch.use_batchnorm:
            grads += dgamma + dbeta
        return grads


def masked_mse(recon: np.ndarray, target: np.ndarray, observed: np.ndarray) -> float:
    w = observed.sum()
    if w == 0:
        return 0.0
    return float((((recon - target) ** 2) * observed).sum() / w)


@dataclass
class TrainedAE:
    arch: AEArchitecture
    net: _Net
    train_loss: list[float]
    val_loss: list[float]
    best_epoch: int
    epochs_run: int

    def reconstruct(self, X: np.ndarray) -> np.ndarray:
        out, _ = self.net.forward(np.asarray(X, dtype=float), training=False)
        return out


class _Adam:
    def __init__(self, shapes, lr, beta1, beta2, eps):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        for i, (p, g) in enumerate(zip(params, grads)):
            self.m[i] = self.b1 * self.m[i] + (1 - self.b1) * g
            self.v[i] = self.b2 * self.v[i] + (1 - self.b2) * g * g
            mh = self.m[i] / (1 - self.b1 ** self.t)
            vh = self.v[i] / (1 - self.b2 ** self.t)
            p -= self.lr * mh / (np.sqrt(vh) + self.eps)


def train_autoencoder(
    X_filled: np.ndarray,
    observed_mask: np.ndarray,
    arch: AEArchitecture,
    schedule: TrainSchedule,
) -> TrainedAE:
    """Train on a complete (already standardized) matrix with masked loss.

    Reconstruction error counts only originally-observed cells. A seeded 10%
    row split provides the early-stopping validation loss; the best-epoch
    weights (including batchnorm running stats) are restored before return.
    """
    X = np.asarray(X_filled, dtype=float)
    M = np.asarray(observed_mask, dtype=float)
    n = X.shape[0]
    if np.isnan(X).any():
        raise ValueError("X_filled must be complete")
    if n < 10:
        raise ValueError("training needs at least 10 rows")
    rng = np.random.default_rng(schedule.seed)
    net = _Net(arch, rng)
    perm = rng.permutation(n)
    n_val = max(1, int(round(schedule.val_fraction * n)))
    val_idx, tr_idx = perm[:n_val], perm[n_val:]
    if tr_idx.size == 0:
        raise ValueError("training split is empty")
    batch = schedule.resolve_batch_size(tr_idx.size)
    opt = _Adam(
        [p.shape for p in net.parameters()],
        schedule.learning_rate, schedule.beta1, schedule.beta2, schedule.adam_eps,
    )
    train_hist, val_hist = [], []
    best = (np.inf, -1, None)
    for epoch in range(schedule.epochs):
        order = rng.permutation(tr_idx.size)
        losses = []
        for s in range(0, tr_idx.size, batch):
            rows = tr_idx[order[s : s + batch]]
            xb, mb = X[rows], M[rows]
            out, cache = net.forward(xb, training=True, rng=rng,
                                     bn_momentum=schedule.bn_momentum)
            w = mb.sum()
            if w == 0:
                continue
            loss = masked_mse(out, xb, mb)
            if not np.isfinite(loss):
                raise TrainingDiverged(epoch)
            losses.append(loss)
            dOut = 2.0 * (out - xb) * mb / w
            grads = net.backward(dOut, cache)
            opt.step(net.parameters(), grads)
        train_hist.append(float(np.mean(losses)) if losses else 0.0)
        net.refresh_bn_stats(X[tr_idx])
        out_val, _ = net.forward(X[val_idx], training=False)
        vloss = masked_mse(out_val, X[val_idx], M[val_idx])
        if not np.isfinite(vloss):
            raise TrainingDiverged(epoch)
        val_hist.append(vloss)
        if vloss < best[0]:
            best = (vloss, epoch, net.state())
        elif epoch - best[1] >= schedule.patience:
            break
    if best[2] is not None:
        net.load_state(best[2])
    return TrainedAE(
        arch=arch,
        net=net,
        train_loss=train_hist,
        val_loss=val_hist,
        best_epoch=best[1],
        epochs_run=len(train_hist),
    )


def impute_autoencoder(
    table: DataTable,
    mask: np.ndarray,
    arch: AEArchitecture | None = None,
    schedule: TrainSchedule | None = None,
    seed: int | None = None,
) -> ImputationResult:
    """Mean-initialize, standardize, train with masked loss, and fill the
    masked cells from the deterministic reconstruction."""
    t0 = time.perf_counter()
    arch = arch or build_architecture(table.n_cols)
    schedule = schedule or TrainSchedule()
    if seed is not None:
        schedule = replace(schedule, seed=seed)
    fill = initial_fill(table, mask)
    mu = fill.mean(axis=0)
    sd = fill.std(axis=0, ddof=1)
    sd = np.where(sd > 0, sd, 1.0)
    Xz = (fill - mu) / sd
    if not mask.any():
        return ImputationResult(
            completed=fill, method="autoencoder",
            wall_time_s=time.perf_counter() - t0,
            params={"epochs_run": 0, "note": "no masked cells"},
        )
    try:
        model = train_autoencoder(Xz, ~mask, arch, schedule)
    except TrainingDiverged as exc:
        raise ImputationError(f"autoencoder: {exc}") from exc
    recon = model.reconstruct(Xz)
    out = np.array(fill)
    out[mask] = (recon * sd + mu)[mask]
    out = snap_to_categories(out, table, mask)
    out[~mask] = table.cells[~mask]
    return ImputationResult(
        completed=out,
        method="autoencoder",
        wall_time_s=time.perf_counter() - t0,
        params={
            "epochs_run": model.epochs_run,
            "best_epoch": model.best_epoch,
            "best_val_loss": model.val_loss[model.best_epoch],
            "widths": list(arch.widths),
        },
    )


def gradient_check(
    arch: AEArchitecture,
    n_rows: int = 16,
    seed: int = 0,
    max_params: int = 1000,
    h: float = 1e-5,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    Dropout and batchnorm must be disabled (the check exercises the plain
    ReLU stack at a generic point). At most `max_params` coordinates are
    probed, sampled with the same seed that builds the point. The probe
    point is redrawn (deterministically) until every pre-activation sits
    well away from the ReLU kink, where central differences are meaningless;
    zero-initialized biases would otherwise park dead rows exactly on it.
    """
    if arch.use_batchnorm or arch.dropout_p > 0:
        raise ValueError("gradient_check requires batchnorm and dropout disabled")
    rng = np.random.default_rng(seed)
    net = _Net(arch, rng)
    for b in net.b:
        b[:] = rng.uniform(-0.3, 0.3, size=b.shape)
    d = arch.widths[0]
    margin = 50.0 * h
    for _ in range(50):
        X = rng.standard_normal((n_rows, d))
        A = X
        worst_margin = np.inf
        for l in range(len(net.W) - 1):
            Z = A @ net.W[l] + net.b[l]
            worst_margin = min(worst_margin, float(np.abs(Z).min()))
            A = np.maximum(Z, 0.0)
        if worst_margin > margin:
            break
    M = (rng.random((n_rows, d)) < 0.8).astype(float)
    if M.sum() == 0:
        M[0, 0] = 1.0

    def loss_fn():
        out, _ = net.forward(X, training=False)
        return masked_mse(out, X, M)

    out, cache = net.forward(X, training=False)
    dOut = 2.0 * (out - X) * M / M.sum()
    grads = net.backward(dOut, cache)
    params = net.parameters()
    coords = []
    for pi, p in enumerate(params):
        for flat in range(p.size):
            coords.append((pi, flat))
    if len(coords) > max_params:
        take = rng.choice(len(coords), size=max_params, replace=False)
        coords = [coords[t] for t in take]
    worst = 0.0
    for pi, flat in coords:
        p = params[pi].reshape(-1)
        orig = p[flat]
        p[flat] = orig + h
        lp = loss_fn()
        p[flat] = orig - h
        lm = loss_fn()
        p[flat] = orig
        numeric = (lp - lm) / (2 * h)
        analytic = grads[pi].reshape(-1)[flat]
        denom = max(abs(analytic), abs(numeric), 1e-8)
        worst = max(worst, abs(analytic - numeric) / denom)
    return float(worst)
