"""Operators on value-function parameter space.

``BellmanOperator`` computes sample-based Bellman targets for a Q family.
The remaining classes are operators mapping a flat parameter vector to an
updated one: exact closed forms for finite MDPs, the scalar LQR, and
low-rank MDPs, plus learnable parameterizations (structured, linear, MLP)
trained elsewhere. Everything supports batched application via
``transform`` -- sklearn-style, an (n, dim) array in and an (n, dim) array
out -- and works on either numpy arrays or autodiff tensors so the same
code path serves evaluation and training.
"""

from __future__ import annotations

import json

import numpy as np

from .autodiff import (
    ParamLayout,
    Tensor,
    concat,
    exp,
    linear_solve,
    matmul,
    reciprocal,
    relu,
    reshape,
    square,
    stop_gradient,
    take,
    tmax,
    transpose_last2,
    truncated_normal,
    tsum,
    value_of,
)
from .environments.base import FiniteModel, TransitionBatch
from .families import QFamily

__all__ = [
    "DivergenceError",
    "NonContractiveError",
    "BellmanOperator",
    "ParameterOperator",
    "FinitePbo",
    "StructuredFinitePbo",
    "LqrPbo",
    "StructuredLqrPbo",
    "LowRankPbo",
    "LinearPbo",
    "MlpPbo",
    "iterate",
    "fixed_point",
    "contraction_factor",
    "bellman_target",
    "save_operator",
    "load_operator",
]

DIVERGENCE_LIMIT = 1e12
CONTRACTION_MARGIN = 1e-6


class DivergenceError(RuntimeError):
    """Raised when an iterated operator or a loss blows up; carries the step."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


class NonContractiveError(RuntimeError):
    """Raised when a fixed point is requested from a non-contractive operator."""

    def __init__(self, spectral_radius: float):
        super().__init__(
            f"operator is not contractive (spectral radius {spectral_radius:.6g}); "
            "the fixed-point term cannot be formed"
        )
        self.spectral_radius = spectral_radius


class BellmanOperator:
    """Sample-based optimal Bellman targets r + gamma * max_a' Q(s', a').

    Terminal transitions bootstrap nothing: their target is the reward
    alone. Targets never propagate gradients into the parameters that
    produced them.
    """

    def __init__(self, family: QFamily, gamma: float):
        self.family = family
        self.gamma = gamma

    def targets(self, q_params, batch: TransitionBatch):
        """Targets per (parameter vector, transition): shape (n_params, n)."""
        max_next = self.family.max_values(q_params, batch.next_states)
        keep = self.gamma * (1.0 - batch.terminals.astype(np.float64))
        return stop_gradient(batch.rewards[None, :] + max_next * keep[None, :])

    def target(self, q_params, transition) -> float:
        batch = TransitionBatch(
            [np.atleast_1d(transition.state)],
            [transition.action],
            [transition.reward],
            [np.atleast_1d(transition.next_state)],
            [transition.terminal],
        )
        return float(value_of(self.targets(q_params, batch))[0, 0])


def bellman_target(op: BellmanOperator, q_params, transition) -> float:
    return op.target(q_params, transition)


class ParameterOperator:
    """Base for operators on parameter space; subclasses define ``transform``.

    Learnable variants carry a flat parameter vector with a named-segment
    layout; closed-form variants have no parameters. ``transform`` accepts a
    stack of parameter vectors (n, dim) and an optional explicit parameter
    vector (used during training, where parameters flow through the graph).
    """

    dim: int
    layout: ParamLayout | None = None
    supports_fixed_point = False
    variant = "base"

    def __init__(self):
        self.params: np.ndarray | None = None

    @property
    def n_params(self) -> int:
        return 0 if self.layout is None else self.layout.size

    def init_params(self, rng: np.random.Generator, std: float) -> np.ndarray:
        if self.layout is None:
            return np.zeros(0)
        return truncated_normal(rng, self.layout.size, std)

    def _resolve_params(self, op_params):
        if op_params is not None:
            return op_params
        if self.layout is not None and self.params is None:
            raise ValueError(f"{type(self).__name__} has no parameters set")
        return self.params

    def _check_dim(self, omegas):
        got = value_of(omegas).shape[-1]
        if got != self.dim:
            raise ValueError(
                f"{type(self).__name__} operates on vectors of length {self.dim}, got {got}"
            )

    def transform(self, omegas, op_params=None):
        raise NotImplementedError

    def apply(self, omega, op_params=None) -> np.ndarray:
        """Single application on one plain parameter vector."""
        omega = np.asarray(omega, dtype=np.float64).reshape(1, -1)
        return value_of(self.transform(omega, op_params))[0]

    # checkpoint hooks ------------------------------------------------

    def checkpoint_meta(self) -> dict:
        return {"variant": self.variant, "dim": self.dim}

    def checkpoint_segments(self) -> dict[str, np.ndarray]:
        if self.layout is None:
            return {}
        if self.params is None:
            raise ValueError("no parameters to checkpoint")
        return self.layout.unflatten(self.params)


class FinitePbo(ParameterOperator):
    """Closed-form operator of a known finite MDP.

    Maps a flat table Q (entry (s, a) at index s*M + a) to
    R + gamma * P @ max_a Q(., a).
    """

    variant = "closed_form_finite"

    def __init__(self, rewards, transitions, gamma: float):
        super().__init__()
        self.rewards = np.asarray(rewards, dtype=np.float64)
        self.transitions = np.asarray(transitions, dtype=np.float64)
        self.gamma = gamma
        self.n_states = self.transitions.shape[1]
        self.n_actions = self.transitions.shape[0] // self.n_states
        self.dim = self.rewards.shape[0]
        if self.transitions.shape[0] != self.dim:
            raise ValueError("rewards and transitions disagree on N*M")

    @classmethod
    def from_model(cls, model: FiniteModel) -> "FinitePbo":
        return cls(model.rewards, model.transitions, model.gamma)

    def transform(self, omegas, op_params=None):
        self._check_dim(omegas)
        n = value_of(omegas).shape[0]
        table = reshape(omegas, (n, self.n_states, self.n_actions))
        max_q = tmax(table, axis=2)  # (n, N)
        return self.rewards[None, :] + self.gamma * matmul(max_q, self.transitions.T)

    def checkpoint_meta(self):
        return {
            "variant": self.variant,
            "dim": self.dim,
            "gamma": self.gamma,
            "n_states": self.n_states,
            "n_actions": self.n_actions,
        }

    def checkpoint_segments(self):
        return {"rewards": self.rewards, "transitions": self.transitions}


def _softmax_rows(logits):
    """Row-stochastic matrix from unconstrained logits (stable, graph-safe)."""
    shift = stop_gradient(reshape(tmax(logits, axis=1), (-1, 1)))
    e = exp(logits - shift)
    return e * reciprocal(tsum(e, axis=1, keepdims=True))


class StructuredFinitePbo(ParameterOperator):
    """Learnable finite-MDP operator: free rewards, row-stochastic transitions.

    Transition rows are parameterized by unconstrained logits pushed through
    a softmax, so the learned operator keeps the contraction property of its
    closed-form counterpart.
    """

    variant = "structured_finite"

    def __init__(self, n_states: int, n_actions: int, gamma: float):
        super().__init__()
        self.n_states = n_states
        self.n_actions = n_actions
        self.gamma = gamma
        self.dim = n_states * n_actions
        self.layout = ParamLayout(
            (("rewards", (self.dim,)), ("logits", (self.dim, n_states)))
        )

    def transform(self, omegas, op_params=None):
        self._check_dim(omegas)
        pieces = self.layout.unflatten(self._resolve_params(op_params))
        transitions = _softmax_rows(pieces["logits"])  # (N*M, N)
        n = value_of(omegas).shape[0]
        table = reshape(omegas, (n, self.n_states, self.n_actions))
        max_q = tmax(table, axis=2)
        bootstrap = matmul(max_q, transpose_last2(transitions))
        return reshape(pieces["rewards"], (1, self.dim)) + self.gamma * bootstrap

    def stochastic_matrix(self, op_params=None) -> np.ndarray:
        pieces = self.layout.unflatten(self._resolve_params(op_params))
        return value_of(_softmax_rows(pieces["logits"]))

    def checkpoint_meta(self):
        return {
            "variant": self.variant,
            "dim": self.dim,
            "gamma": self.gamma,
            "n_states": self.n_states,
            "n_actions": self.n_actions,
        }


def _lqr_outputs(c, dyn_s, dyn_a, rew_ss, rew_sa, gamma):
    out_ss = rew_ss + gamma * dyn_s * dyn_s * c
    out_sa = rew_sa + gamma * dyn_s * dyn_a * c
    return concat([out_ss, out_sa], axis=1)


class LqrPbo(ParameterOperator):
    """Closed-form operator for the scalar LQR with known constants.

    The image of any parameter vector lies on the line through
    (rew_ss, rew_sa) with direction (dyn_s^2, dyn_s*dyn_a); only the scalar
    c = w_ss - w_sa^2 / fixed_aa moves along it.
    """

    variant = "closed_form_lqr"
    dim = 2

    def __init__(
        self,
        dyn_s: float,
        dyn_a: float,
        rew_ss: float,
        rew_sa: float,
        fixed_aa: float,
        gamma: float = 1.0,
    ):
        super().__init__()
        if fixed_aa >= 0:
            raise ValueError("fixed_aa must be negative")
        self.dyn_s = dyn_s
        self.dyn_a = dyn_a
        self.rew_ss = rew_ss
        self.rew_sa = rew_sa
        self.fixed_aa = fixed_aa
        self.gamma = gamma

    @classmethod
    def from_env(cls, env, fixed_aa: float) -> "LqrPbo":
        return cls(env.dyn_s, env.dyn_a, env.rew_ss, env.rew_sa, fixed_aa, env.gamma)

    def _c(self, omegas):
        w_ss = take(omegas, [0], axis=1)
        w_sa = take(omegas, [1], axis=1)
        return w_ss + square(w_sa) * (-1.0 / self.fixed_aa)

    def transform(self, omegas, op_params=None):
        self._check_dim(omegas)
        c = self._c(omegas)
        return _lqr_outputs(c, self.dyn_s, self.dyn_a, self.rew_ss, self.rew_sa, self.gamma)

    def line_distance(self, omega) -> float:
        """Distance of a parameter vector from the operator's image line."""
        direction = np.array([self.dyn_s**2, self.dyn_s * self.dyn_a])
        direction = direction / np.linalg.norm(direction)
        offset = np.asarray(omega, dtype=np.float64).ravel() - np.array(
            [self.rew_ss, self.rew_sa]
        )
        return float(np.abs(offset[0] * direction[1] - offset[1] * direction[0]))

    def checkpoint_meta(self):
        return {
            "variant": self.variant,
            "dim": self.dim,
            "gamma": self.gamma,
            "dyn_s": self.dyn_s,
            "dyn_a": self.dyn_a,
            "rew_ss": self.rew_ss,
            "rew_sa": self.rew_sa,
            "fixed_aa": self.fixed_aa,
        }


class StructuredLqrPbo(ParameterOperator):
    """LQR operator with the four scalar constants treated as unknowns."""

    variant = "structured_lqr"
    dim = 2

    def __init__(self, fixed_aa: float, gamma: float = 1.0):
        super().__init__()
        if fixed_aa >= 0:
            raise ValueError("fixed_aa must be negative")
        self.fixed_aa = fixed_aa
        self.gamma = gamma
        self.layout = ParamLayout(
            (("dyn_s", (1,)), ("dyn_a", (1,)), ("rew_ss", (1,)), ("rew_sa", (1,)))
        )

    def transform(self, omegas, op_params=None):
        self._check_dim(omegas)
        p = self.layout.unflatten(self._resolve_params(op_params))
        w_ss = take(omegas, [0], axis=1)
        w_sa = take(omegas, [1], axis=1)
        c = w_ss + square(w_sa) * (-1.0 / self.fixed_aa)
        dyn_s = reshape(p["dyn_s"], (1, 1))
        dyn_a = reshape(p["dyn_a"], (1, 1))
        rew_ss = reshape(p["rew_ss"], (1, 1))
        rew_sa = reshape(p["rew_sa"], (1, 1))
        out_ss = rew_ss + self.gamma * square(dyn_s) * c
        out_sa = rew_sa + self.gamma * dyn_s * dyn_a * c
        return concat([out_ss, out_sa], axis=1)

    def checkpoint_meta(self):
        return {
            "variant": self.variant,
            "dim": self.dim,
            "gamma": self.gamma,
            "fixed_aa": self.fixed_aa,
        }


class LowRankPbo(ParameterOperator):
    """Closed-form operator of a finite low-rank MDP.

    With transition factors P(s'|s,a) = <features(s,a), mu(s')> and reward
    factor theta, maps w to theta + gamma * sum_{s'} max_a' <features(s',a'), w> mu(s').
    """

    variant = "closed_form_low_rank"

    def __init__(self, theta, mu, features, gamma: float):
        super().__init__()
        self.theta = np.asarray(theta, dtype=np.float64)
        self.mu = np.asarray(mu, dtype=np.float64)  # (S, d)
        self.features = np.asarray(features, dtype=np.float64)  # (S, A, d)
        self.gamma = gamma
        self.dim = self.theta.shape[0]
        if self.mu.shape[1] != self.dim or self.features.shape[2] != self.dim:
            raise ValueError("theta, mu and features disagree on the latent dimension")

    def transform(self, omegas, op_params=None):
        self._check_dim(omegas)
        n_states, n_actions, d = self.features.shape
        flat = self.features.reshape(-1, d).T  # (d, S*A)
        vals = reshape(matmul(omegas, flat), (-1, n_states, n_actions))
        max_next = tmax(vals, axis=2)  # (n, S)
        return self.theta[None, :] + self.gamma * matmul(max_next, self.mu)

    def checkpoint_meta(self):
        return {"variant": self.variant, "dim": self.dim, "gamma": self.gamma}

    def checkpoint_segments(self):
        return {"theta": self.theta, "mu": self.mu, "features": self.features}


class LinearPbo(ParameterOperator):
    """Affine operator w -> A w + b with a computable, differentiable fixed point."""

    variant = "linear"
    supports_fixed_point = True

    def __init__(self, dim: int, gamma: float | None = None):
        super().__init__()
        self.dim = dim
        self.gamma = gamma
        self.layout = ParamLayout((("matrix", (dim, dim)), ("offset", (dim,))))

    def transform(self, omegas, op_params=None):
        self._check_dim(omegas)
        p = self.layout.unflatten(self._resolve_params(op_params))
        out = matmul(omegas, transpose_last2(p["matrix"]))
        return out + reshape(p["offset"], (1, self.dim))

    def spectral_radius(self, op_params=None) -> float:
        p = self.layout.unflatten(value_of(self._resolve_params(op_params)))
        return float(np.max(np.abs(np.linalg.eigvals(p["matrix"]))))

    def fixed_point(self, op_params=None) -> np.ndarray:
        """Solve (I - A) w = b; requires spectral radius below 1 - 1e-6."""
        rho = self.spectral_radius(op_params)
        if rho >= 1.0 - CONTRACTION_MARGIN:
            raise NonContractiveError(rho)
        p = self.layout.unflatten(value_of(self._resolve_params(op_params)))
        return np.linalg.solve(np.eye(self.dim) - p["matrix"], p["offset"])

    def fixed_point_graph(self, op_params) -> Tensor:
        """Graph version of :meth:`fixed_point`, differentiable in the operator."""
        rho = self.spectral_radius(value_of(op_params))
        if rho >= 1.0 - CONTRACTION_MARGIN:
            raise NonContractiveError(rho)
        p = self.layout.unflatten(op_params)
        system = np.eye(self.dim) - p["matrix"]
        return linear_solve(system, p["offset"])

    def checkpoint_meta(self):
        return {"variant": self.variant, "dim": self.dim, "gamma": self.gamma}


class MlpPbo(ParameterOperator):
    """ReLU network from parameter space to itself (no computable fixed point)."""

    variant = "mlp"

    def __init__(self, dim: int, hidden: tuple[int, ...], gamma: float | None = None):
        super().__init__()
        if not hidden:
            raise ValueError("at least one hidden layer is required")
        self.dim = dim
        self.hidden = tuple(int(h) for h in hidden)
        self.gamma = gamma
        segments = []
        fan_in = dim
        for i, width in enumerate(self.hidden):
            segments.append((f"w{i}", (fan_in, width)))
            segments.append((f"b{i}", (width,)))
            fan_in = width
        segments.append(("w_out", (fan_in, dim)))
        segments.append(("b_out", (dim,)))
        self.layout = ParamLayout(tuple(segments))

    def transform(self, omegas, op_params=None):
        self._check_dim(omegas)
        p = self.layout.unflatten(self._resolve_params(op_params))
        h = omegas
        for i, width in enumerate(self.hidden):
            h = relu(matmul(h, p[f"w{i}"]) + reshape(p[f"b{i}"], (1, width)))
        return matmul(h, p["w_out"]) + reshape(p["b_out"], (1, self.dim))

    def checkpoint_meta(self):
        return {
            "variant": self.variant,
            "dim": self.dim,
            "gamma": self.gamma,
            "hidden": list(self.hidden),
        }


def iterate(pbo: ParameterOperator, omega0, n_steps: int, op_params=None) -> np.ndarray:
    """The chain [w, L(w), ..., L^k(w)] as a (k+1, dim) array; consumes no samples."""
    if n_steps < 0:
        raise ValueError("n_steps must be >= 0")
    omega = np.asarray(omega0, dtype=np.float64).ravel()
    chain = np.empty((n_steps + 1, len(omega)))
    chain[0] = omega
    for k in range(1, n_steps + 1):
        omega = pbo.apply(omega, op_params)
        if not np.all(np.isfinite(omega)) or np.max(np.abs(omega)) > DIVERGENCE_LIMIT:
            raise DivergenceError(f"operator iteration diverged at step {k}", step=k)
        chain[k] = omega
    return chain


def fixed_point(pbo: LinearPbo, op_params=None) -> np.ndarray:
    if not pbo.supports_fixed_point:
        raise ValueError(f"{type(pbo).__name__} has no computable fixed point")
    return pbo.fixed_point(op_params)


def contraction_factor(pbo: ParameterOperator, omega_pairs, op_params=None) -> float:
    """Empirical Lipschitz estimate in the sup norm over given parameter pairs."""
    pairs = np.asarray(omega_pairs, dtype=np.float64)
    if pairs.ndim != 3 or pairs.shape[1] != 2 or pairs.shape[0] < 2:
        raise ValueError("expected at least 2 pairs with shape (n, 2, dim)")
    left = value_of(pbo.transform(pairs[:, 0, :], op_params))
    right = value_of(pbo.transform(pairs[:, 1, :], op_params))
    gaps_in = np.max(np.abs(pairs[:, 0, :] - pairs[:, 1, :]), axis=1)
    gaps_out = np.max(np.abs(left - right), axis=1)
    keep = gaps_in > 0.0  # coincident pairs are skipped
    if not keep.any():
        raise ValueError("all pairs are coincident")
    return float(np.max(gaps_out[keep] / gaps_in[keep]))


# -- checkpoints ---------------------------------------------------------

_VARIANTS = {}


def _register(cls):
    _VARIANTS[cls.variant] = cls
    return cls


for _cls in (
    FinitePbo,
    StructuredFinitePbo,
    LqrPbo,
    StructuredLqrPbo,
    LowRankPbo,
    LinearPbo,
    MlpPbo,
):
    _register(_cls)


def save_operator(pbo: ParameterOperator, base_path: str) -> None:
    """Write ``<base>.json`` (variant, dims, gamma) and ``<base>.csv`` (segments)."""
    meta = pbo.checkpoint_meta()
    segments = pbo.checkpoint_segments()
    meta["segments"] = {name: list(np.shape(arr)) for name, arr in segments.items()}
    with open(base_path + ".json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
    with open(base_path + ".csv", "w") as fh:
        fh.write("segment,index,value\n")
        for name, arr in segments.items():
            flat = np.asarray(arr, dtype=np.float64).ravel()
            for i, v in enumerate(flat):
                fh.write(f"{name},{i},{'%.17g' % v}\n")


def load_operator(base_path: str) -> ParameterOperator:
    with open(base_path + ".json") as fh:
        meta = json.load(fh)
    segments: dict[str, np.ndarray] = {}
    with open(base_path + ".csv") as fh:
        fh.readline()
        rows = [line.strip().split(",") for line in fh if line.strip()]
    for name, shape in meta["segments"].items():
        vals = [float(v) for seg, _, v in rows if seg == name]
        segments[name] = np.array(vals).reshape(shape)

    variant = meta["variant"]
    if variant == "closed_form_finite":
        return FinitePbo(segments["rewards"], segments["transitions"], meta["gamma"])
    if variant == "closed_form_lqr":
        return LqrPbo(
            meta["dyn_s"], meta["dyn_a"], meta["rew_ss"], meta["rew_sa"],
            meta["fixed_aa"], meta["gamma"],
        )
    if variant == "closed_form_low_rank":
        return LowRankPbo(segments["theta"], segments["mu"], segments["features"], meta["gamma"])
    if variant == "structured_finite":
        pbo = StructuredFinitePbo(meta["n_states"], meta["n_actions"], meta["gamma"])
    elif variant == "structured_lqr":
        pbo = StructuredLqrPbo(meta["fixed_aa"], meta["gamma"])
    elif variant == "linear":
        pbo = LinearPbo(meta["dim"], meta.get("gamma"))
    elif variant == "mlp":
        pbo = MlpPbo(meta["dim"], tuple(meta["hidden"]), meta.get("gamma"))
    else:
        raise ValueError(f"unknown operator variant {variant!r}")
    pbo.params = pbo.layout.flatten(segments)
    return pbo
