"""Single-layer LSTM regressor trained from scratch with Adam.

Gate blocks are stacked in the order input, forget, candidate, output, so
``wx`` and ``b`` have length ``4h`` and ``wh`` has shape ``(4h, h)``.  The
scalar output head is ``wy . h_T + by``.  Series are min-max scaled to
[0, 1] per training phase; the fitted scaler travels with the weights.
"""
from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import kernels
from .errors import ConfigError, DivergedForecastError, InvalidArgument
from .series import HORIZON, Series
from .wavelet import denoise

CHECKPOINT_SCHEMA = "fslload.lstm/1"
TENSORS = ("wx", "wh", "b", "wy", "by")


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 72
    learning_rate: float = 0.001
    pretrain_steps: int = 130
    finetune_steps: int = 70
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    window_len: int = 12
    hidden_size: int = 64
    seed: int = 0
    step_mode: str = "updates"  # or "epochs"
    init_scale: float = 0.08
    forget_bias: float = 1.0
    pretrain_source: str = "prototype"  # or "members"
    carry_optimizer: bool = True

    def validate(self):
        for name in ("batch_size", "window_len", "hidden_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.learning_rate <= 0 or self.eps <= 0:
            raise ConfigError("learning_rate and eps must be positive")
        if self.pretrain_steps < 0 or self.finetune_steps < 0:
            raise ConfigError("step counts must be non-negative")
        if self.step_mode not in ("updates", "epochs"):
            raise ConfigError(f"unknown step_mode {self.step_mode!r}")
        if self.pretrain_source not in ("prototype", "members"):
            raise ConfigError(f"unknown pretrain_source {self.pretrain_source!r}")
        return self


@dataclass
class LstmParams:
    wx: np.ndarray
    wh: np.ndarray
    b: np.ndarray
    wy: np.ndarray
    by: float = 0.0

    def __post_init__(self):
        self.wx = np.asarray(self.wx, dtype=np.float64).ravel()
        self.wh = np.asarray(self.wh, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64).ravel()
        self.wy = np.asarray(self.wy, dtype=np.float64).ravel()
        self.by = float(self.by)
        h = self.wy.size
        if self.wx.size != 4 * h or self.b.size != 4 * h or self.wh.shape != (4 * h, h):
            raise InvalidArgument(f"inconsistent LSTM shapes for hidden size {h}")

    @property
    def hidden_size(self):
        return self.wy.size

    def copy(self):
        return LstmParams(self.wx.copy(), self.wh.copy(), self.b.copy(), self.wy.copy(), self.by)

    def tensors(self):
        return [self.wx, self.wh, self.b, self.wy, np.array(self.by)]

    def all_finite(self):
        return all(np.all(np.isfinite(t)) for t in self.tensors())

    @classmethod
    def zeros(cls, hidden_size, output_bias=0.0):
        h = hidden_size
        return cls(np.zeros(4 * h), np.zeros((4 * h, h)), np.zeros(4 * h), np.zeros(h), output_bias)


def init_params(hidden_size, rng, scale=0.08, forget_bias=1.0) -> LstmParams:
    h = hidden_size
    b = np.zeros(4 * h)
    b[h : 2 * h] = forget_bias
    return LstmParams(
        rng.uniform(-scale, scale, 4 * h),
        rng.uniform(-scale, scale, (4 * h, h)),
        b,
        rng.uniform(-scale, scale, h),
        0.0,
    )


@dataclass(frozen=True)
class MinMaxScaler:
    low: float = 0.0
    span: float = 1.0

    @classmethod
    def fit(cls, values):
        v = np.asarray(values, dtype=np.float64)
        lo, hi = float(v.min()), float(v.max())
        return cls(lo, hi - lo if hi > lo else 1.0)

    def transform(self, values):
        return (np.asarray(values, dtype=np.float64) - self.low) / self.span

    def inverse(self, values):
        return np.asarray(values, dtype=np.float64) * self.span + self.low


def _values(x):
    return x.values if isinstance(x, Series) else np.asarray(x, dtype=np.float64)


def effective_window(k, window_len):
    """Shrink the input window to floor(k/2) when k cannot give a single full pair."""
    return window_len if k >= window_len + 1 else max(1, k // 2)


def make_pairs(values, window_len):
    v = np.asarray(values, dtype=np.float64)
    n_pairs = v.size - window_len
    if n_pairs < 1:
        raise InvalidArgument(f"series of length {v.size} is too short for window {window_len}")
    X = np.lib.stride_tricks.sliding_window_view(v, window_len)[:n_pairs]
    return np.ascontiguousarray(X), v[window_len:].copy()


# --------------------------------------------------------------------------
# forward / gradient


def forward(params: LstmParams, window):
    """One-step prediction from a single input window, run from zero state."""
    w = np.asarray(window, dtype=np.float64).reshape(1, -1)
    if w.size == 0:
        raise InvalidArgument("window must contain at least one value")
    if not np.all(np.isfinite(w)):
        raise InvalidArgument("window contains non-finite values")
    return float(kernels.lstm_predict(params.wx, params.wh, params.b, params.wy, params.by, w)[0])


def predict_batch(params: LstmParams, X):
    return kernels.lstm_predict(params.wx, params.wh, params.b, params.wy, params.by, np.asarray(X, dtype=np.float64))


def loss_and_grads(params: LstmParams, X, y):
    loss, *grads = kernels.lstm_loss_grad(params.wx, params.wh, params.b, params.wy, params.by, X, y)
    return loss, grads


class Adam:
    def __init__(self, params: LstmParams, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(t, dtype=np.float64) for t in params.tensors()]
        self.v = [np.zeros_like(t, dtype=np.float64) for t in params.tensors()]

    def step(self, params: LstmParams, grads) -> LstmParams:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        out = []
        for i, (p, g) in enumerate(zip(params.tensors(), grads)):
            g = np.asarray(g, dtype=np.float64)
            self.m[i] = self.beta1 * self.m[i] + (1 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1 - self.beta2) * g * g
            mhat = self.m[i] / c1
            vhat = self.v[i] / c2
            out.append(p - self.lr * mhat / (np.sqrt(vhat) + self.eps))
        return LstmParams(out[0], out[1], out[2], out[3], float(out[4]))


# --------------------------------------------------------------------------
# training


@dataclass
class TrainedModel:
    params: LstmParams
    scaler: MinMaxScaler
    window_len: int
    losses: list = field(default_factory=list, repr=False)
    optimizer: Adam | None = field(default=None, repr=False, compare=False)


def _batches(n_pairs, steps, batch, mode, rng):
    if mode == "updates":
        for _ in range(steps):
            if n_pairs >= batch:
                yield rng.choice(n_pairs, batch, replace=False)
            else:
                yield rng.integers(0, n_pairs, size=batch)
    else:
        for _ in range(steps):
            perm = rng.permutation(n_pairs)
            for start in range(0, n_pairs, batch):
                yield perm[start : start + batch]


def train(params: LstmParams, series, steps: int, config: TrainConfig = TrainConfig(),
          rng=None, window_len=None, extra_series=(), optimizer=None) -> TrainedModel:
    """Run ``steps`` Adam updates (or epochs) of one-step-ahead MSE training.

    ``extra_series`` contributes additional training pairs, each scaled by
    the scaler fitted on ``series``.
    """
    config.validate()
    window_len = int(window_len or config.window_len)
    x = _values(series)
    if x.size < window_len + 1:
        raise InvalidArgument(f"series of length {x.size} is too short for window {window_len}")
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    scaler = MinMaxScaler.fit(x)
    X, y = make_pairs(scaler.transform(x), window_len)
    if extra_series:
        parts = [make_pairs(scaler.transform(_values(s)), window_len) for s in extra_series]
        X = np.vstack([X] + [p[0] for p in parts])
        y = np.concatenate([y] + [p[1] for p in parts])
    params = params.copy()
    if optimizer is not None:
        opt = copy.deepcopy(optimizer)
    else:
        opt = Adam(params, config.learning_rate, config.beta1, config.beta2, config.eps)
    losses = []
    # overflow is caught by the explicit finiteness check, not by numpy warnings
    with np.errstate(over="ignore", invalid="ignore"):
        for idx in _batches(y.size, int(steps), config.batch_size, config.step_mode, rng):
            loss, grads = loss_and_grads(params, X[idx], y[idx])
            if not np.isfinite(loss):
                raise DivergedForecastError(f"training loss became non-finite after {len(losses)} updates")
            losses.append(loss)
            params = opt.step(params, grads)
    return TrainedModel(params, scaler, window_len, losses, opt)


def pretrain(prototype, config: TrainConfig = TrainConfig(), seed=None, window_len=None,
             members=()) -> TrainedModel:
    """Phase 1: train from a seeded random init on the cluster prototype."""
    rng = np.random.default_rng(config.seed if seed is None else seed)
    params = init_params(config.hidden_size, rng, config.init_scale, config.forget_bias)
    extra = members if config.pretrain_source == "members" else ()
    return train(params, prototype, config.pretrain_steps, config, rng, window_len, extra)


def fine_tune(base, few_shot_train, config: TrainConfig = TrainConfig(), seed=None,
              window_len=None) -> TrainedModel:
    """Phase 2: continue from the pretrained weights on the k-shot sample only."""
    params = base.params if isinstance(base, TrainedModel) else base
    if window_len is None:
        window_len = base.window_len if isinstance(base, TrainedModel) else config.window_len
    rng = np.random.default_rng(config.seed if seed is None else seed)
    opt = base.optimizer if (config.carry_optimizer and isinstance(base, TrainedModel)) else None
    return train(params, few_shot_train, config.finetune_steps, config, rng, window_len, optimizer=opt)


def forecast(model: TrainedModel, seed_window, horizon: int = HORIZON):
    """Recursive multi-step forecast in original units."""
    w = _values(seed_window)
    if w.size != model.window_len:
        raise InvalidArgument(f"seed window has {w.size} values, model expects {model.window_len}")
    p = model.params
    buf = list(model.scaler.transform(w))
    out = np.empty(int(horizon))
    for i in range(int(horizon)):
        x = np.asarray(buf[-model.window_len :]).reshape(1, -1)
        with np.errstate(over="ignore", invalid="ignore"):
            nxt = float(kernels.lstm_predict(p.wx, p.wh, p.b, p.wy, p.by, x)[0])
        if not np.isfinite(nxt):
            raise DivergedForecastError(f"forecast became non-finite at step {i + 1}")
        out[i] = nxt
        buf.append(nxt)
    return model.scaler.inverse(out)


def prototype_series(members, denoise_spec="db4", use_denoise=True, mode="shrink") -> Series:
    """Pointwise mean of index-aligned member series, optionally wavelet-denoised."""
    members = list(members)
    if not members:
        raise InvalidArgument("prototype needs at least one member")
    n = len(members[0])
    start = members[0].start_index
    for m in members:
        if len(m) != n or m.start_index != start:
            raise InvalidArgument("prototype members must share length and start index")
    mean = np.mean([m.values for m in members], axis=0)
    if use_denoise:
        mean = denoise(mean, denoise_spec, mode)
    return Series("prototype", mean, start, members[0].granularity_minutes)


# --------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, model: TrainedModel, config: TrainConfig | None = None):
    p = model.params
    payload = {
        "schema": CHECKPOINT_SCHEMA,
        "hidden_size": p.hidden_size,
        "window_len": model.window_len,
        "scaler": {"low": model.scaler.low, "span": model.scaler.span},
        "params": {
            "wx": p.wx.tolist(),
            "wh": p.wh.ravel().tolist(),
            "b": p.b.tolist(),
            "wy": p.wy.tolist(),
            "by": [p.by],
        },
        "config": asdict(config) if config is not None else None,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path) -> TrainedModel:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("schema") != CHECKPOINT_SCHEMA:
        raise ConfigError(f"unsupported checkpoint schema {payload.get('schema')!r}")
    h = int(payload["hidden_size"])
    q = payload["params"]
    params = LstmParams(q["wx"], np.asarray(q["wh"]).reshape(4 * h, h), q["b"], q["wy"], q["by"][0])
    scaler = MinMaxScaler(payload["scaler"]["low"], payload["scaler"]["span"])
    return TrainedModel(params, scaler, int(payload["window_len"]))


def with_overrides(config: TrainConfig, **kw) -> TrainConfig:
    return replace(config, **kw).validate()
