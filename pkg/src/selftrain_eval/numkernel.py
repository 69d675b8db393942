"""Small dense MLP kernel: forward pass, weighted cross-entropy, exact
backprop (optionally with a Gaussian-kernel MMD term on the encoder output),
momentum SGD, and a central finite-difference gradient checker.

Matrices are plain float64 numpy arrays. A model is an encoder (the
representation map) followed by a predictor head that emits K logits.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.spatial.distance import cdist, pdist

from .errors import NumericalFailureError, RejectedInputError
from .rng import derive_seed, stream

ACTIVATIONS = ("relu", "identity")


@dataclass
class Layer:
    weight: np.ndarray  # (fan_in, fan_out)
    bias: np.ndarray  # (fan_out,)
    activation: str = "relu"

    def copy(self) -> "Layer":
        return Layer(self.weight.copy(), self.bias.copy(), self.activation)


@dataclass
class MlpModel:
    encoder: list[Layer]
    predictor: list[Layer]
    num_classes: int

    def __post_init__(self):
        if self.num_classes < 2:
            raise RejectedInputError("num_classes must be >= 2")
        layers = self.layers
        if not self.predictor:
            raise RejectedInputError("predictor needs at least one layer")
        for i, layer in enumerate(layers):
            if layer.activation not in ACTIVATIONS:
                raise RejectedInputError(f"layer {i}: unknown activation {layer.activation!r}")
            if layer.weight.ndim != 2 or layer.bias.shape != (layer.weight.shape[1],):
                raise RejectedInputError(f"layer {i}: weight/bias shapes disagree")
            if i and layers[i - 1].weight.shape[1] != layer.weight.shape[0]:
                raise RejectedInputError(f"layer {i}: input width does not chain")
        if layers[-1].weight.shape[1] != self.num_classes:
            raise RejectedInputError("final predictor width must equal num_classes")

    @property
    def layers(self) -> list[Layer]:
        return self.encoder + self.predictor

    @property
    def input_dim(self) -> int:
        return self.layers[0].weight.shape[0]

    @property
    def representation_dim(self) -> int:
        if self.encoder:
            return self.encoder[-1].weight.shape[1]
        return self.input_dim

    def parameters(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out.extend((layer.weight, layer.bias))
        return out

    def with_parameters(self, params: Sequence[np.ndarray]) -> "MlpModel":
        it = iter(params)
        enc = [Layer(np.array(next(it), dtype=float), np.array(next(it), dtype=float), l.activation)
               for l in self.encoder]
        pred = [Layer(np.array(next(it), dtype=float), np.array(next(it), dtype=float), l.activation)
                for l in self.predictor]
        return MlpModel(enc, pred, self.num_classes)

    def copy(self) -> "MlpModel":
        return MlpModel([l.copy() for l in self.encoder], [l.copy() for l in self.predictor],
                        self.num_classes)

    def flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.parameters()])


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.05
    momentum: float = 0.9
    epochs: int = 30
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise RejectedInputError("learning_rate must be >= 0")
        if not 0 <= self.momentum < 1:
            raise RejectedInputError("momentum must lie in [0, 1)")
        if self.epochs < 1 or self.batch_size < 1:
            raise RejectedInputError("epochs and batch_size must be >= 1")


@dataclass(frozen=True)
class MmdTerm:
    """Representation-matching penalty ``weight * mmd2(phi(source), phi(target))``.

    ``bandwidth=None`` means the median heuristic on the pooled representations.
    """

    target: np.ndarray
    weight: float
    bandwidth: float | None = None


def init_mlp(input_dim: int, encoder_widths: Sequence[int], predictor_widths: Sequence[int],
             num_classes: int, seed: int) -> MlpModel:
    """Scaled-uniform init, ``U(-a, a)`` with ``a = sqrt(6 / (fan_in + fan_out))``.

    Hidden layers use ReLU; the last predictor layer (width ``num_classes``)
    is linear. Biases start at zero.
    """
    rng = stream(seed, "init")
    dims = [input_dim, *encoder_widths, *predictor_widths, num_classes]
    n_enc = len(encoder_widths)
    layers = []
    for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
        lim = np.sqrt(6.0 / (a + b))
        w = rng.uniform(-lim, lim, size=(a, b))
        act = "identity" if i == len(dims) - 2 else "relu"
        layers.append(Layer(w, np.zeros(b), act))
    return MlpModel(layers[:n_enc], layers[n_enc:], num_classes)


# ---------------------------------------------------------------------------
# forward / loss
# ---------------------------------------------------------------------------

def _as_batch(model: MlpModel, batch) -> np.ndarray:
    x = np.asarray(batch, dtype=float)
    if x.ndim != 2 or x.shape[1] != model.input_dim:
        raise RejectedInputError(
            f"batch shape {x.shape} does not match model input width {model.input_dim}")
    return x


def _check_finite(a: np.ndarray, layer: int, what: str):
    if not np.all(np.isfinite(a)):
        raise NumericalFailureError(f"non-finite {what}", layer=layer)


def _run(layers: Sequence[Layer], x: np.ndarray, offset: int = 0):
    """Return the output and a cache of (input, pre-activation) per layer."""
    cache = []
    h = x
    for i, layer in enumerate(layers):
        with np.errstate(over="ignore", invalid="ignore"):
            z = h @ layer.weight + layer.bias
        _check_finite(z, offset + i, "pre-activation")
        cache.append((h, z))
        h = np.maximum(z, 0.0) if layer.activation == "relu" else z
    return h, cache


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def encode(model: MlpModel, batch) -> np.ndarray:
    x = _as_batch(model, batch)
    return _run(model.encoder, x)[0]


def forward(model: MlpModel, batch) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(representations, probabilities)`` for a batch of rows."""
    x = _as_batch(model, batch)
    rep, _ = _run(model.encoder, x)
    logits, _ = _run(model.predictor, rep, offset=len(model.encoder))
    return rep, softmax(logits)


def predict(model: MlpModel, batch) -> np.ndarray:
    """Argmax labels; ``np.argmax`` already breaks ties toward the lowest index."""
    return forward(model, batch)[1].argmax(axis=1)


def _xy(data) -> tuple[np.ndarray, np.ndarray] | None:
    if data is None:
        return None
    if isinstance(data, tuple):
        x, y = data
    else:
        x, y = data.features, data.labels
    return np.asarray(x, dtype=float), np.asarray(y, dtype=int)


def _check_labels(y: np.ndarray, k: int):
    if y.size and (y.min() < 0 or y.max() >= k):
        raise RejectedInputError(f"label out of range [0, {k})")


def _mean_ce(model: MlpModel, x: np.ndarray, y: np.ndarray) -> float:
    if len(y) == 0:
        return 0.0
    _check_labels(y, model.num_classes)
    rep, _ = _run(model.encoder, _as_batch(model, x))
    logits, _ = _run(model.predictor, rep, offset=len(model.encoder))
    return float(-_log_softmax(logits)[np.arange(len(y)), y].mean())


def weighted_ce_loss(model: MlpModel, source, pseudo=None, pseudo_weight: float = 0.0) -> float:
    """Mean source cross-entropy plus ``pseudo_weight`` times mean pseudo cross-entropy.

    ``source`` and ``pseudo`` are datasets (``.features``/``.labels``) or
    ``(X, y)`` tuples; an empty or missing pseudo set contributes nothing.
    """
    if pseudo_weight < 0:
        raise RejectedInputError("pseudo_weight must be >= 0")
    xs, ys = _xy(source)
    loss = _mean_ce(model, xs, ys)
    ps = _xy(pseudo)
    if ps is not None and len(ps[1]):
        loss += pseudo_weight * _mean_ce(model, *ps)
    return loss


# ---------------------------------------------------------------------------
# MMD
# ---------------------------------------------------------------------------

def _gauss(a: np.ndarray, b: np.ndarray, bandwidth: float) -> np.ndarray:
    return np.exp(-cdist(a, b, "sqeuclidean") / (2.0 * bandwidth ** 2))


def mmd2(x, y, bandwidth: float) -> float:
    """Biased (V-statistic) squared MMD with kernel ``exp(-|a-b|^2 / (2 bw^2))``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim != 2 or y.ndim != 2 or len(x) == 0 or len(y) == 0:
        raise RejectedInputError("mmd2 needs two non-empty 2-D samples")
    if x.shape[1] != y.shape[1]:
        raise RejectedInputError("mmd2 samples differ in dimension")
    if not bandwidth > 0:
        raise RejectedInputError("bandwidth must be > 0")
    val = (_gauss(x, x, bandwidth).mean() + _gauss(y, y, bandwidth).mean()
           - 2.0 * _gauss(x, y, bandwidth).mean())
    return max(float(val), 0.0)


def median_bandwidth(x, y=None, max_points: int = 500) -> float:
    """Median pairwise Euclidean distance of the pooled sample (1.0 if degenerate)."""
    pooled = np.asarray(x, dtype=float)
    if y is not None:
        pooled = np.vstack([pooled, np.asarray(y, dtype=float)])
    if len(pooled) > max_points:
        idx = np.linspace(0, len(pooled) - 1, max_points).round().astype(int)
        pooled = pooled[idx]
    if len(pooled) < 2:
        return 1.0
    med = float(np.median(pdist(pooled)))
    return med if med > 0 else 1.0


def _mmd2_grads(x: np.ndarray, y: np.ndarray, bw: float):
    """Gradients of the biased MMD^2 w.r.t. each row of ``x`` and ``y``."""
    n, m = len(x), len(y)
    kxx, kyy, kxy = _gauss(x, x, bw), _gauss(y, y, bw), _gauss(x, y, bw)
    s = 1.0 / bw ** 2
    # d k(a,b)/da = -k(a,b) (a-b) / bw^2
    gx = (-2.0 * s / n ** 2) * (kxx.sum(1)[:, None] * x - kxx @ x)
    gx += (2.0 * s / (n * m)) * (kxy.sum(1)[:, None] * x - kxy @ y)
    gy = (-2.0 * s / m ** 2) * (kyy.sum(1)[:, None] * y - kyy @ y)
    gy += (2.0 * s / (n * m)) * (kxy.sum(0)[:, None] * y - kxy.T @ x)
    return gx, gy


# ---------------------------------------------------------------------------
# backprop
# ---------------------------------------------------------------------------

def _backward(layers: Sequence[Layer], cache, grad_out: np.ndarray, grads: list, offset: int):
    """Accumulate parameter grads into ``grads`` (list of [dW, db]); return grad wrt input."""
    g = grad_out
    for i in range(len(layers) - 1, -1, -1):
        layer = layers[i]
        h_in, z = cache[i]
        if layer.activation == "relu":
            g = g * (z > 0)
        grads[offset + i][0] += h_in.T @ g
        grads[offset + i][1] += g.sum(axis=0)
        g = g @ layer.weight.T
        _check_finite(g, offset + i, "gradient")
    return g


def _ce_pass(model: MlpModel, x: np.ndarray, y: np.ndarray, scale: float, grads: list,
             rep_grad_hook=None) -> tuple[float, np.ndarray]:
    """Forward + backward of ``scale * mean CE``; returns (loss, representations)."""
    _check_labels(y, model.num_classes)
    n_enc = len(model.encoder)
    rep, enc_cache = _run(model.encoder, x)
    logits, pred_cache = _run(model.predictor, rep, offset=n_enc)
    logp = _log_softmax(logits)
    n = len(y)
    loss = float(-logp[np.arange(n), y].mean())
    dlogits = np.exp(logp)
    dlogits[np.arange(n), y] -= 1.0
    dlogits *= scale / n
    drep = _backward(model.predictor, pred_cache, dlogits, grads, n_enc)
    if rep_grad_hook is not None:
        drep = drep + rep_grad_hook(rep)
    _backward(model.encoder, enc_cache, drep, grads, 0)
    return loss, rep


def objective(model: MlpModel, source, pseudo=None, pseudo_weight: float = 0.0,
              mmd_term: MmdTerm | None = None) -> float:
    """Full training objective evaluated without gradients."""
    loss = weighted_ce_loss(model, source, pseudo, pseudo_weight)
    if mmd_term is not None and mmd_term.weight:
        xs, _ = _xy(source)
        rs, rt = encode(model, xs), encode(model, mmd_term.target)
        bw = mmd_term.bandwidth or median_bandwidth(rs, rt)
        loss += mmd_term.weight * mmd2(rs, rt, bw)
    return loss


def backprop(model: MlpModel, source, pseudo=None, pseudo_weight: float = 0.0,
             mmd_term: MmdTerm | None = None) -> tuple[float, MlpModel]:
    """Exact gradients of ``objective`` w.r.t. every parameter.

    Returns ``(loss, grads)`` where ``grads`` is an ``MlpModel`` whose
    weights/biases hold the partial derivatives.
    """
    if pseudo_weight < 0:
        raise RejectedInputError("pseudo_weight must be >= 0")
    xs, ys = _xy(source)
    xs = _as_batch(model, xs)
    grads = [[np.zeros_like(l.weight), np.zeros_like(l.bias)] for l in model.layers]

    hook = None
    mmd_val = 0.0
    if mmd_term is not None and mmd_term.weight:
        xt = _as_batch(model, mmd_term.target)
        rt, t_cache = _run(model.encoder, xt)
        state = {}

        def hook(rs):
            bw = mmd_term.bandwidth or median_bandwidth(rs, rt)
            if not bw > 0:
                raise RejectedInputError("bandwidth must be > 0")
            state["val"] = mmd2(rs, rt, bw)
            gs, gt = _mmd2_grads(rs, rt, bw)
            state["gt"] = gt * mmd_term.weight
            return gs * mmd_term.weight

    loss, _ = _ce_pass(model, xs, ys, 1.0, grads, hook)
    if hook is not None:
        mmd_val = state["val"]
        _backward(model.encoder, t_cache, state["gt"], grads, 0)
    ps = _xy(pseudo)
    if ps is not None and len(ps[1]) and pseudo_weight:
        pl, _ = _ce_pass(model, _as_batch(model, ps[0]), ps[1], pseudo_weight, grads)
        loss += pseudo_weight * pl
    elif ps is not None and len(ps[1]):
        _check_labels(ps[1], model.num_classes)
    if mmd_term is not None:
        loss += mmd_term.weight * mmd_val
    return loss, model.with_parameters([g for pair in grads for g in pair])


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def _chunks(perm: np.ndarray, steps: int) -> list[np.ndarray]:
    return np.array_split(perm, steps) if len(perm) else [perm] * steps


def sgd_fit(model: MlpModel, source, pseudo=None, pseudo_weight: float = 0.0,
            mmd_term: MmdTerm | None = None, config: TrainConfig = TrainConfig(),
            on_epoch_end: Callable[[int, MlpModel], None] | None = None) -> MlpModel:
    """Mini-batch SGD with classical momentum; returns a new model.

    Each epoch walks the source set in shuffled batches of ``batch_size``.
    The pseudo set and the MMD target set are shuffled and split into the
    same number of chunks, so every epoch visits each of them once too.
    With ``mmd_term.bandwidth=None`` the bandwidth is re-estimated (median
    heuristic) at the start of every epoch and held fixed within it.
    """
    xs, ys = _xy(source)
    xs = _as_batch(model, xs)
    ps = _xy(pseudo)
    if ps is not None and len(ps[1]) == 0:
        ps = None
    rng = stream(config.seed, "shuffle")
    params = [p.copy() for p in model.parameters()]
    velocity = [np.zeros_like(p) for p in params]
    current = model.with_parameters(params)
    n = len(ys)
    steps = max(1, -(-n // config.batch_size))
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        src_batches = [order[i:i + config.batch_size] for i in range(0, n, config.batch_size)]
        ps_batches = _chunks(rng.permutation(len(ps[1])), steps) if ps is not None else None
        term = None
        if mmd_term is not None and mmd_term.weight:
            xt = np.asarray(mmd_term.target, dtype=float)
            tgt_batches = _chunks(rng.permutation(len(xt)), steps)
            bw = mmd_term.bandwidth
            if bw is None:
                bw = median_bandwidth(encode(current, xs), encode(current, xt))
        for s, idx in enumerate(src_batches):
            pb = (ps[0][ps_batches[s]], ps[1][ps_batches[s]]) if ps is not None else None
            if mmd_term is not None and mmd_term.weight:
                term = MmdTerm(xt[tgt_batches[s]], mmd_term.weight, bw)
                if len(term.target) == 0:
                    term = None
            loss, grads = backprop(current, (xs[idx], ys[idx]), pb, pseudo_weight, term)
            if not np.isfinite(loss):
                raise NumericalFailureError(f"loss diverged in epoch {epoch}")
            for p, v, g in zip(params, velocity, grads.parameters()):
                v *= config.momentum
                v -= config.learning_rate * g
                p += v
            current = model.with_parameters(params)
        if on_epoch_end is not None:
            on_epoch_end(epoch, current.copy())
    return current


# ---------------------------------------------------------------------------
# finite-difference oracle
# ---------------------------------------------------------------------------

def grad_check(model: MlpModel, source, pseudo=None, pseudo_weight: float = 0.0,
               mmd_term: MmdTerm | None = None, step: float = 1e-5,
               gradient_fn: Callable | None = None, floor: float = 1e-8) -> float:
    """Max relative error between analytic and central-difference gradients.

    Relative error per parameter is ``|a - b| / max(|a|, |b|, floor)``.
    Central differences carry round-off of order ``1e-16 / step``, so
    gradients below ~1e-7 can read as large relative errors at the default
    floor; raise ``floor`` when checking such models.
    ``gradient_fn`` defaults to :func:`backprop` and exists so that a faulty
    gradient can be checked against the same oracle.
    """
    if not 1e-8 < step < 1e-2:
        raise RejectedInputError("step must lie in (1e-8, 1e-2)")
    if mmd_term is not None and mmd_term.bandwidth is None:
        # freeze the bandwidth; the median heuristic is not differentiated
        rs = encode(model, _xy(source)[0])
        rt = encode(model, mmd_term.target)
        mmd_term = MmdTerm(mmd_term.target, mmd_term.weight, median_bandwidth(rs, rt))
    gradient_fn = gradient_fn or backprop
    _, grads = gradient_fn(model, source, pseudo, pseudo_weight, mmd_term)
    analytic = grads.flat()
    theta = model.flat()
    shapes = [p.shape for p in model.parameters()]

    def unflat(v):
        out, k = [], 0
        for s in shapes:
            size = int(np.prod(s))
            out.append(v[k:k + size].reshape(s))
            k += size
        return model.with_parameters(out)

    worst = 0.0
    for i in range(theta.size):
        tp, tm = theta.copy(), theta.copy()
        tp[i] += step
        tm[i] -= step
        fd = (objective(unflat(tp), source, pseudo, pseudo_weight, mmd_term)
              - objective(unflat(tm), source, pseudo, pseudo_weight, mmd_term)) / (2 * step)
        a = analytic[i]
        err = abs(a - fd) / max(abs(a), abs(fd), floor)
        worst = max(worst, err)
    return float(worst)


def preactivation_margin(model: MlpModel, *batches) -> float:
    """Smallest ``|z|`` over every hidden ReLU pre-activation of the batches."""
    margin = np.inf
    for x in batches:
        h = _as_batch(model, x)
        for layer in model.layers:
            z = h @ layer.weight + layer.bias
            if layer.activation == "relu":
                margin = min(margin, float(np.abs(z).min()))
                h = np.maximum(z, 0.0)
            else:
                h = z
    return margin


def random_grad_checks(count: int = 50, seed: int = 0, with_mmd: bool = True,
                       step: float = 1e-5, kink_margin: float = 1e-3) -> list[float]:
    """``grad_check`` on ``count`` random small models and batches.

    Every model mixes source and pseudo-label cross-entropy; with
    ``with_mmd`` the representation-matching term is active too. Draws with
    a ReLU pre-activation within ``kink_margin`` of zero are redrawn, since
    central differences straddling a kink are not a valid oracle.
    """
    errors = []
    t = attempt = 0
    while t < count:
        rng = stream(seed, "gradcheck", attempt)
        attempt += 1
        d = int(rng.integers(2, 6))
        k = int(rng.integers(2, 5))
        enc = [int(w) for w in rng.integers(3, 7, size=int(rng.integers(1, 3)))]
        pred = [int(w) for w in rng.integers(3, 6, size=int(rng.integers(0, 2)))]
        model = init_mlp(d, enc, pred, k, seed=derive_seed(seed, "gradcheck-model", attempt))
        # biases off zero, or an all-dead ReLU row pins the next pre-activation at 0
        model = model.with_parameters(
            [p + rng.normal(scale=0.1, size=p.shape) for p in model.parameters()])
        n_s, n_p, n_t = (int(v) for v in rng.integers(4, 9, size=3))
        source = (rng.normal(size=(n_s, d)), rng.integers(0, k, size=n_s))
        pseudo = (rng.normal(size=(n_p, d)), rng.integers(0, k, size=n_p))
        target = rng.normal(0.5, 1.0, size=(n_t, d))
        if preactivation_margin(model, source[0], pseudo[0], target) < kink_margin:
            continue
        term = MmdTerm(target, float(rng.uniform(0.1, 2.0))) if with_mmd else None
        errors.append(grad_check(model, source, pseudo, float(rng.uniform(0.0, 1.0)), term,
                                 step=step))
        t += 1
    return errors
