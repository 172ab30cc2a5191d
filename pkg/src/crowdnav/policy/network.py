"""LSTM(64) + three dense layers + masked softmax, in plain numpy.

Parameter layout, in serialization order (gate blocks of the LSTM are
stacked input, forget, cell, output)::

    lstm.W_x  (4H, D)     lstm.W_h  (4H, H)     lstm.b  (4H,)
    fc1.W     (F1, H)     fc1.b     (F1,)
    fc2.W     (F2, F1)    fc2.b     (F2,)
    fc3.W     (A, F2)     fc3.b     (A,)

The first two dense layers use tanh; the third produces the action logits.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoding import N_ACTIONS, STATE_SIZE

PARAM_ORDER = ("lstm.W_x", "lstm.W_h", "lstm.b", "fc1.W", "fc1.b", "fc2.W", "fc2.b", "fc3.W", "fc3.b")
INIT_SCALE = 0.08


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _entropy(probs: np.ndarray) -> float:
    nz = probs[probs > 0]
    return float(-(nz * np.log(nz)).sum())


def masked_softmax(logits: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    if mask is None:
        mask = np.ones(z.shape, dtype=bool)
    if not mask.any():
        raise ValueError("every action is masked")
    z = np.where(mask, z, -np.inf)
    z = z - z[mask].max()
    e = np.where(mask, np.exp(z), 0.0)
    return e / e.sum()


@dataclass
class _StepCache:
    x: np.ndarray
    h_prev: np.ndarray
    c_prev: np.ndarray
    i: np.ndarray
    f: np.ndarray
    g: np.ndarray
    o: np.ndarray
    c: np.ndarray
    tanh_c: np.ndarray
    h: np.ndarray
    a1: np.ndarray
    a2: np.ndarray
    probs: np.ndarray


class PolicyNetwork:
    def __init__(self, params: dict[str, np.ndarray], input_size: int = STATE_SIZE,
                 hidden: int = 64, dense: tuple[int, int] = (64, 32), n_actions: int = N_ACTIONS):
        self.input_size = input_size
        self.hidden = hidden
        self.dense = tuple(dense)
        self.n_actions = n_actions
        expected = self.param_shapes()
        if set(params) != set(expected):
            raise ValueError(f"parameter names differ from {PARAM_ORDER}")
        for name, shape in expected.items():
            if params[name].shape != shape:
                raise ValueError(f"{name}: expected shape {shape}, got {params[name].shape}")
        self.params = {k: np.asarray(params[k], dtype=np.float64) for k in PARAM_ORDER}

    @classmethod
    def initialize(cls, seed: int, input_size: int = STATE_SIZE, hidden: int = 64,
                   dense: tuple[int, int] = (64, 32), n_actions: int = N_ACTIONS) -> "PolicyNetwork":
        """Uniform(-0.08, 0.08) weights; forget-gate bias 1."""
        rng = np.random.default_rng(seed)
        shapes = cls._shapes(input_size, hidden, dense, n_actions)
        params = {k: rng.uniform(-INIT_SCALE, INIT_SCALE, shapes[k]) for k in PARAM_ORDER}
        params["lstm.b"][hidden : 2 * hidden] = 1.0
        return cls(params, input_size, hidden, dense, n_actions)

    @staticmethod
    def _shapes(D, H, dense, A):
        F1, F2 = dense
        return {
            "lstm.W_x": (4 * H, D), "lstm.W_h": (4 * H, H), "lstm.b": (4 * H,),
            "fc1.W": (F1, H), "fc1.b": (F1,),
            "fc2.W": (F2, F1), "fc2.b": (F2,),
            "fc3.W": (A, F2), "fc3.b": (A,),
        }

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        return self._shapes(self.input_size, self.hidden, self.dense, self.n_actions)

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def copy(self) -> "PolicyNetwork":
        return PolicyNetwork({k: v.copy() for k, v in self.params.items()},
                             self.input_size, self.hidden, self.dense, self.n_actions)

    def flat(self) -> np.ndarray:
        return np.concatenate([self.params[k].ravel() for k in PARAM_ORDER])

    def set_flat(self, vector: np.ndarray) -> None:
        pos = 0
        for k in PARAM_ORDER:
            n = self.params[k].size
            self.params[k] = np.array(vector[pos : pos + n], dtype=np.float64).reshape(self.params[k].shape)
            pos += n
        if pos != len(vector):
            raise ValueError("flat parameter vector has the wrong length")

    # -- forward --------------------------------------------------------------

    def initial_state(self) -> tuple[np.ndarray, np.ndarray]:
        return np.zeros(self.hidden), np.zeros(self.hidden)

    def _step(self, x, state, mask) -> _StepCache:
        p = self.params
        H = self.hidden
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.input_size,):
            raise ValueError(f"expected an encoding of length {self.input_size}, got shape {x.shape}")
        h_prev, c_prev = state
        z = p["lstm.W_x"] @ x + p["lstm.W_h"] @ h_prev + p["lstm.b"]
        i = _sigmoid(z[:H])
        f = _sigmoid(z[H : 2 * H])
        g = np.tanh(z[2 * H : 3 * H])
        o = _sigmoid(z[3 * H :])
        c = f * c_prev + i * g
        tanh_c = np.tanh(c)
        h = o * tanh_c
        a1 = np.tanh(p["fc1.W"] @ h + p["fc1.b"])
        a2 = np.tanh(p["fc2.W"] @ a1 + p["fc2.b"])
        logits = p["fc3.W"] @ a2 + p["fc3.b"]
        probs = masked_softmax(logits, mask)
        return _StepCache(x, h_prev, c_prev, i, f, g, o, c, tanh_c, h, a1, a2, probs)

    def forward(self, x, state=None, mask=None):
        """Action distribution for one encoding, and the next recurrent state."""
        if state is None:
            state = self.initial_state()
        cache = self._step(x, state, mask)
        return cache.probs, (cache.h, cache.c)

    # -- backward -------------------------------------------------------------

    def sequence_gradients(self, xs, actions, advantages, masks=None, entropy: float = 0.0):
        """Loss ``-sum_t [A_t log pi(a_t | s_t) + entropy * H(pi(. | s_t))]`` and its exact gradient.

        The hidden state starts at zero and is carried through the episode;
        gradients flow back through every step.
        """
        T = len(actions)
        if masks is None:
            masks = [None] * T
        state = self.initial_state()
        caches = []
        loss = 0.0
        for t in range(T):
            cache = self._step(xs[t], state, masks[t])
            caches.append(cache)
            state = (cache.h, cache.c)
            loss -= advantages[t] * np.log(cache.probs[actions[t]])
            if entropy:
                loss -= entropy * _entropy(cache.probs)

        p = self.params
        H = self.hidden
        grads = {k: np.zeros_like(v) for k, v in p.items()}
        dh_next = np.zeros(H)
        dc_next = np.zeros(H)
        for t in reversed(range(T)):
            k = caches[t]
            dlogits = advantages[t] * k.probs
            dlogits[actions[t]] -= advantages[t]
            if entropy:
                p_ = k.probs
                logp = np.log(np.where(p_ > 0, p_, 1.0))
                dlogits += entropy * p_ * (logp + _entropy(p_))
            grads["fc3.W"] += np.outer(dlogits, k.a2)
            grads["fc3.b"] += dlogits
            da2 = (p["fc3.W"].T @ dlogits) * (1.0 - k.a2 ** 2)
            grads["fc2.W"] += np.outer(da2, k.a1)
            grads["fc2.b"] += da2
            da1 = (p["fc2.W"].T @ da2) * (1.0 - k.a1 ** 2)
            grads["fc1.W"] += np.outer(da1, k.h)
            grads["fc1.b"] += da1
            dh = p["fc1.W"].T @ da1 + dh_next
            do = dh * k.tanh_c
            dc = dh * k.o * (1.0 - k.tanh_c ** 2) + dc_next
            dz = np.concatenate([
                dc * k.g * k.i * (1.0 - k.i),
                dc * k.c_prev * k.f * (1.0 - k.f),
                dc * k.i * (1.0 - k.g ** 2),
                do * k.o * (1.0 - k.o),
            ])
            grads["lstm.W_x"] += np.outer(dz, k.x)
            grads["lstm.W_h"] += np.outer(dz, k.h_prev)
            grads["lstm.b"] += dz
            dh_next = p["lstm.W_h"].T @ dz
            dc_next = dc * k.f
        return float(loss), grads


def policy_gradients(net: PolicyNetwork, batch, entropy: float = 0.0) -> tuple[float, dict[str, np.ndarray]]:
    """Mean over episodes of the per-episode surrogate loss and its gradient.

    ``batch`` is a sequence of ``(encodings, actions, advantages)`` or
    ``(encodings, actions, advantages, masks)`` tuples.
    """
    if not batch:
        raise ValueError("empty batch")
    total = 0.0
    grads = {k: np.zeros_like(v) for k, v in net.params.items()}
    for item in batch:
        loss, g = net.sequence_gradients(*item, entropy=entropy) if len(item) == 4 else \
            net.sequence_gradients(*item, None, entropy=entropy)
        total += loss
        for k in grads:
            grads[k] += g[k]
    n = len(batch)
    return total / n, {k: v / n for k, v in grads.items()}
