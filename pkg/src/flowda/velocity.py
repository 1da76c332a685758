"""Time-conditioned MLP velocity field and its training loop.

The network is ``v(t, z) = MLP([z, embed(t)])`` with SiLU hidden
activations. Parameters live in a flat list ``[W1, b1, W2, b2, ...]``
with ``W`` shaped ``(fan_in, fan_out)`` so optimizer, EMA and clipping
treat them uniformly. Everything runs in float64.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from . import coupling as couplings
from .errors import ConfigurationError, NonFiniteError, RejectedInput
from .interpolant import InterpolantPoint

log = logging.getLogger(__name__)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
MAX_FREQ = 100.0


@dataclass
class VelocityModel:
    params: list
    input_dim: int
    time_embed_dim: int
    hidden_dims: tuple

    @property
    def layers(self):
        return list(zip(self.params[0::2], self.params[1::2]))

    def copy(self):
        return VelocityModel([p.copy() for p in self.params], self.input_dim,
                             self.time_embed_dim, tuple(self.hidden_dims))


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    warmup_steps: int = 1000
    batch_size: int = 256
    total_steps: int = 6000
    clip_max_norm: float = 1.0
    ema_decay: float = 0.999
    seed: int = 0
    time_embed_dim: int = 32
    hidden_dims: tuple = (256, 256, 256)
    ot_cap: int = 256

    def validate(self):
        if self.learning_rate <= 0:
            raise ConfigurationError("learning_rate must be > 0")
        if self.warmup_steps < 0:
            raise ConfigurationError("warmup_steps must be >= 0")
        if self.batch_size <= 0:
            raise ConfigurationError("batch_size must be > 0")
        if self.total_steps < 0:
            raise ConfigurationError("total_steps must be >= 0")
        if self.clip_max_norm <= 0:
            raise ConfigurationError("clip_max_norm must be > 0")
        if not 0.0 <= self.ema_decay < 1.0:
            raise ConfigurationError("ema_decay must lie in [0, 1)")
        if self.time_embed_dim <= 0 or self.time_embed_dim % 2:
            raise ConfigurationError("time_embed_dim must be a positive even integer")
        return self


@dataclass
class TrainerState:
    params: VelocityModel
    ema_params: VelocityModel
    m: list
    v: list
    step: int = 0
    rng_seed: int = 0
    trace: list = field(default_factory=list, repr=False)


# -- network ----------------------------------------------------------------

def time_embedding(t, dim):
    """Sinusoidal features of ``t``: ``[sin(f_k t), cos(f_k t)]`` for geometric ``f_k``."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(np.linspace(0.0, np.log(MAX_FREQ), half))
    ang = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


def init_model(input_dim, hidden_dims=(256, 256, 256), time_embed_dim=32, seed=0,
               zero_output=False):
    rng = np.random.default_rng(seed)
    widths = [input_dim + time_embed_dim, *hidden_dims, input_dim]
    params = []
    for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
        last = i == len(widths) - 2
        if last and zero_output:
            w = np.zeros((fan_in, fan_out))
        else:
            w = rng.normal(0.0, np.sqrt(1.0 / fan_in), (fan_in, fan_out))
        params += [w, np.zeros(fan_out)]
    return VelocityModel(params, input_dim, time_embed_dim, tuple(hidden_dims))


def _sigmoid(a):
    return 0.5 * (1.0 + np.tanh(0.5 * a))


def _forward(model, t, z):
    """Batched forward pass; returns output and the cache needed by backprop."""
    h = np.concatenate([z, time_embedding(t, model.time_embed_dim)], axis=1)
    cache = []
    layers = model.layers
    for w, b in layers[:-1]:
        a = h @ w + b
        cache.append((h, a))
        h = a * _sigmoid(a)
    w, b = layers[-1]
    cache.append((h, None))
    return h @ w + b, cache


def _batch(model, t, z):
    z = np.asarray(z, dtype=np.float64)
    single = z.ndim == 1
    z = np.atleast_2d(z)
    if z.shape[1] != model.input_dim:
        raise RejectedInput(f"z has dim {z.shape[1]}, model expects {model.input_dim}")
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), (len(z),))
    if np.any(t < 0) or np.any(t > 1):
        raise RejectedInput("t must lie in [0, 1]")
    return t, z, single


def forward(model, t, z):
    """Evaluate ``v(t, z)`` for one sample or a batch of rows."""
    t, z, single = _batch(model, t, z)
    out, _ = _forward(model, t, z)
    return out[0] if single else out


def _stack(points):
    if isinstance(points, InterpolantPoint):
        states = np.atleast_2d(points.state)
        targets = np.atleast_2d(points.target_velocity)
        times = np.broadcast_to(np.asarray(points.time, dtype=np.float64), (len(states),))
        return times, states, targets
    points = list(points)
    if not points:
        raise RejectedInput("empty batch")
    times = np.array([float(p.time) for p in points])
    return times, np.stack([p.state for p in points]), np.stack([p.target_velocity for p in points])


def fm_loss(model, points):
    """Mean squared residual norm ``||v(t, z_t) - u_t||^2`` over the batch.

    ``points`` is a list of :class:`InterpolantPoint` or a single batched one.
    """
    times, states, targets = _stack(points)
    if len(states) == 0:
        raise RejectedInput("empty batch")
    t, z, _ = _batch(model, times, states)
    out, _ = _forward(model, t, z)
    return float(np.mean(np.sum((out - targets) ** 2, axis=1)))


def loss_and_grad(model, points):
    times, states, targets = _stack(points)
    if len(states) == 0:
        raise RejectedInput("empty batch")
    t, z, _ = _batch(model, times, states)
    out, cache = _forward(model, t, z)
    resid = out - targets
    n = len(z)
    loss = float(np.sum(resid**2) / n)
    delta = 2.0 * resid / n
    layers = model.layers
    grads = [None] * len(model.params)
    for k in range(len(layers) - 1, -1, -1):
        h, _ = cache[k]
        w = layers[k][0]
        grads[2 * k] = h.T @ delta
        grads[2 * k + 1] = delta.sum(axis=0)
        if k == 0:
            break
        _, a_prev = cache[k - 1]
        s = _sigmoid(a_prev)
        delta = (delta @ w.T) * (s * (1.0 + a_prev * (1.0 - s)))
    return loss, grads


def grad(model, points):
    """Exact gradient of :func:`fm_loss`, one array per parameter."""
    return loss_and_grad(model, points)[1]


# -- optimisation pieces --------------------------------------------------

def global_norm(g):
    return float(np.sqrt(sum(float(np.sum(x * x)) for x in g)))


def clip_gradients(g, max_norm):
    norm = global_norm(g)
    if norm <= max_norm:
        return list(g)
    scale = max_norm / norm
    return [x * scale for x in g]


def _check_shapes(a, b):
    if len(a) != len(b) or any(x.shape != y.shape for x, y in zip(a, b)):
        raise RejectedInput("parameter shape mismatch")


def adam_step(state, g, lr):
    """One bias-corrected Adam update; mutates and returns ``state``."""
    params = state.params.params
    _check_shapes(params, g)
    step = state.step + 1
    c1 = 1.0 - ADAM_BETA1**step
    c2 = 1.0 - ADAM_BETA2**step
    for p, gi, m, v in zip(params, g, state.m, state.v):
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * gi
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * gi * gi
        p -= lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)
    state.step = step
    return state


def ema_update(ema, params, decay):
    if not 0.0 <= decay < 1.0:
        raise RejectedInput(f"decay must lie in [0, 1), got {decay}")
    ema_p = ema.params if isinstance(ema, VelocityModel) else ema
    cur = params.params if isinstance(params, VelocityModel) else params
    _check_shapes(ema_p, cur)
    for e, p in zip(ema_p, cur):
        e *= decay
        e += (1.0 - decay) * p
    return ema


def lr_at(config, step):
    if step < 0:
        raise RejectedInput("step must be >= 0")
    if step < config.warmup_steps:
        return config.learning_rate * (step + 1) / config.warmup_steps
    return config.learning_rate


def init_state(input_dim, config):
    config.validate()
    model = init_model(input_dim, config.hidden_dims, config.time_embed_dim, seed=config.seed)
    return TrainerState(
        params=model,
        ema_params=model.copy(),
        m=[np.zeros_like(p) for p in model.params],
        v=[np.zeros_like(p) for p in model.params],
        step=0,
        rng_seed=config.seed,
    )


# -- training loop ----------------------------------------------------------

def _draw(rng, n, size):
    return rng.choice(n, size=size, replace=False) if size < n else rng.permutation(n)


def train(z0, z1, strategy, config, state=None, on_step=None):
    """Fit the velocity field on paired latents ``z0[i] <-> z1[i]``.

    Each step draws ``batch_size`` rows per domain (the same rows for the
    data-dependent coupling, independent draws otherwise), lets
    ``strategy`` pair them, samples one ``t ~ U[0, 1]`` per pair and takes a clipped Adam
    step followed by an EMA update. Randomness for step ``k`` comes from
    ``default_rng([seed, k])`` so a resumed run replays the same draws.

    ``on_step`` receives each trace record as it is produced.
    """
    config.validate()
    z0 = np.asarray(z0, dtype=np.float64)
    z1 = np.asarray(z1, dtype=np.float64)
    if z0.shape != z1.shape or z0.ndim != 2 or len(z0) == 0:
        raise RejectedInput(f"need two equal-shape non-empty sample arrays, got {z0.shape}, {z1.shape}")
    if state is None:
        state = init_state(z0.shape[1], config)
    elif state.params.input_dim != z0.shape[1]:
        raise RejectedInput("resumed state does not match the data dimension")
    n = len(z0)
    bs = min(config.batch_size, n)
    while state.step < config.total_steps:
        k = state.step
        rng = np.random.default_rng([state.rng_seed, k])
        idx0 = _draw(rng, n, bs)
        # couplings over the marginals see independent draws of each domain;
        # only the data-dependent coupling keeps rows aligned
        idx1 = idx0 if strategy == couplings.DATA_DEPENDENT else _draw(rng, n, bs)
        b0, b1 = z0[idx0], z1[idx1]
        plan = couplings.couple(strategy, b0, b1, seed=[state.rng_seed, k], ot_cap=config.ot_cap)
        b1 = b1[plan.pairing]
        t = rng.random(bs)
        point = InterpolantPoint(
            state=(1.0 - t)[:, None] * b0 + t[:, None] * b1,
            time=t,
            target_velocity=b1 - b0,
        )
        loss, g = loss_and_grad(state.params, point)
        if not np.isfinite(loss):
            raise NonFiniteError(f"non-finite loss at step {k}", step=k, state=state)
        norm = global_norm(g)
        g = clip_gradients(g, config.clip_max_norm)
        lr = lr_at(config, k)
        adam_step(state, g, lr)
        ema_update(state.ema_params, state.params, config.ema_decay)
        rec = {"step": k, "lr": lr, "loss": loss, "grad_norm": norm,
               "clipped_norm": min(norm, config.clip_max_norm)}
        state.trace.append(rec)
        if on_step is not None:
            on_step(rec)
    return state
