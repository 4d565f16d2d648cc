"""Deep Q-learning machinery for rear-of-queue eviction decisions.

One hidden ReLU layer (512 units by default), explicit numpy backprop with
per-weight adaptive step sizes (Adam), a ring-buffer replay memory, and a
reward built from relative OMR/BMR changes that classifies every agent step
as discard / store-terminal / continue.
"""

from __future__ import annotations

import enum
import struct
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

N_FEATURES = 4
PAD_VALUE = -1.0

_MAGIC = b"CLQP"
_FORMAT_VERSION = 1


@dataclass(frozen=True)
class AgentHyperparams:
    """Training knobs; defaults are the recorded reproducible settings."""

    replay_capacity: int = 100_000
    batch_size: int = 64
    discount: float = 0.95
    epsilon_start: float = 1.0
    epsilon_final: float = 0.05
    epsilon_anneal_frac: float = 0.2   # of the training window's records
    epsilon_anneal_steps: Optional[int] = None  # overrides the fraction
    target_sync: int = 1000
    learning_rate: float = 1e-3
    train_interval: int = 1
    min_replay: int = 64
    hidden: int = 512


class PolicyFormatError(ValueError):
    """Unreadable or incompatible serialized policy."""


@dataclass
class ObjectStats:
    """Per-object metadata the cache keeps for feature extraction."""

    key: object
    size: int
    hits: int = 0
    last_index: int = 0
    last_time: int = 0
    prev_index: Optional[int] = None
    prev_time: Optional[int] = None


@dataclass
class RearSectionState:
    """Feature matrix over the queue tail, row 0 = the tail object.

    rows holds log-scaled raw features; padding rows (queue shorter than the
    section) are PAD_VALUE and masked out of action selection via `valid`.
    """

    rows: np.ndarray   # (n, N_FEATURES) float64
    valid: np.ndarray  # (n,) bool

    @property
    def width(self) -> int:
        return len(self.valid)


def extract_features(objects: Sequence[ObjectStats], n_rows: int,
                     clock_index: int, clock_time: int) -> RearSectionState:
    """Builds the rear-section state from tail-first object metadata.

    Feature per object: hit count while cached; request gap between its two
    most recent accesses; the same gap in seconds; object size.  The gaps of
    a once-accessed object fall back to its age since admission.  All but
    the hit count are log(1+x) scaled.
    """
    rows = np.full((n_rows, N_FEATURES), PAD_VALUE, dtype=np.float64)
    valid = np.zeros(n_rows, dtype=bool)
    for i, obj in enumerate(objects[:n_rows]):
        if obj.prev_index is not None:
            gap_req = obj.last_index - obj.prev_index
            gap_sec = obj.last_time - obj.prev_time
        else:
            gap_req = clock_index - obj.last_index
            gap_sec = clock_time - obj.last_time
        rows[i, 0] = obj.hits
        rows[i, 1] = np.log1p(max(gap_req, 0))
        rows[i, 2] = np.log1p(max(gap_sec, 0))
        rows[i, 3] = np.log1p(obj.size)
        valid[i] = True
    return RearSectionState(rows, valid)


@dataclass
class QPolicy:
    """Weights and normalization constants of the two-layer Q-network.

    Immutable by convention once published: training always produces a new
    value, so concurrent forward passes never race an update.
    """

    n_actions: int
    hidden: int
    w1: np.ndarray       # (N_FEATURES * n_actions, hidden)
    b1: np.ndarray       # (hidden,)
    w2: np.ndarray       # (hidden, n_actions)
    b2: np.ndarray       # (n_actions,)
    feat_min: np.ndarray  # (N_FEATURES,)
    feat_max: np.ndarray  # (N_FEATURES,)
    version: int = _FORMAT_VERSION

    def copy(self) -> "QPolicy":
        return QPolicy(self.n_actions, self.hidden, self.w1.copy(),
                       self.b1.copy(), self.w2.copy(), self.b2.copy(),
                       self.feat_min.copy(), self.feat_max.copy(), self.version)


def init_policy(n_actions: int, hidden: int = 512, seed: int = 0) -> QPolicy:
    rng = np.random.default_rng(seed)
    n_in = N_FEATURES * n_actions
    w1 = rng.normal(0.0, np.sqrt(2.0 / n_in), size=(n_in, hidden))
    w2 = rng.normal(0.0, np.sqrt(2.0 / hidden), size=(hidden, n_actions))
    return QPolicy(
        n_actions=n_actions,
        hidden=hidden,
        w1=w1,
        b1=np.zeros(hidden),
        w2=w2,
        b2=np.zeros(n_actions),
        feat_min=np.zeros(N_FEATURES),
        feat_max=np.ones(N_FEATURES),
    )


def _normalize_rows(policy: QPolicy, state: RearSectionState) -> np.ndarray:
    span = np.where(policy.feat_max > policy.feat_min,
                    policy.feat_max - policy.feat_min, 1.0)
    rows = np.full_like(state.rows, PAD_VALUE)
    if state.valid.any():
        rows[state.valid] = (state.rows[state.valid] - policy.feat_min) / span
    return rows


def _input_vector(policy: QPolicy, state: RearSectionState) -> np.ndarray:
    if state.width != policy.n_actions:
        raise ValueError(
            f"state width {state.width} != policy width {policy.n_actions}")
    return _normalize_rows(policy, state).reshape(-1)


def forward(policy: QPolicy, state: RearSectionState) -> np.ndarray:
    """Q-scores per rear-section index; padding indices score -inf."""
    x = _input_vector(policy, state)
    h = np.maximum(x @ policy.w1 + policy.b1, 0.0)
    scores = h @ policy.w2 + policy.b2
    scores[~state.valid] = -np.inf
    return scores


def _forward_batch(policy: QPolicy, x: np.ndarray):
    z1 = x @ policy.w1 + policy.b1
    h = np.maximum(z1, 0.0)
    return h @ policy.w2 + policy.b2, h, z1


class RewardControl(enum.Enum):
    """Fate of the transition that produced a reward."""

    DISCARD = "discard"          # r < 0: drop the transition, end the episode
    STORE_TERMINAL = "store_terminal"  # BMR outpaced OMR: keep it, end the episode
    CONTINUE = "continue"        # keep learning within the episode


@dataclass(frozen=True)
class RewardParams:
    """Weights of the three reward terms; equal miss-ratio terms must
    dominate the BMR-preference term."""

    alpha: float = 0.4
    beta: float = 0.4
    gamma: float = 0.2

    def __post_init__(self):
        if abs(self.alpha + self.beta + self.gamma - 1.0) > 1e-9:
            raise ValueError("alpha + beta + gamma must equal 1")
        if not (self.alpha == self.beta > self.gamma):
            raise ValueError("requires alpha == beta > gamma")


@dataclass(frozen=True)
class RewardInputs:
    """Cumulative miss ratios now, at the previous step, and at episode start."""

    bmr: float
    bmr_prev: float
    bmr_start: float
    omr: float
    omr_prev: float
    omr_start: float


@dataclass(frozen=True)
class RewardResult:
    value: float
    control: RewardControl
    delta_bmr: float
    delta_omr: float
    delta_gap: float


def control_outcome(r: float, delta_gap: float) -> RewardControl:
    """Transition fate as a total function of the reward and the BMR-vs-OMR
    improvement gap: negative rewards are discarded (episode over), a
    non-negative reward with a positive gap is the stored terminal step,
    anything else continues the episode."""
    if r < 0:
        return RewardControl.DISCARD
    if delta_gap > 0:
        return RewardControl.STORE_TERMINAL
    return RewardControl.CONTINUE


def reward(inputs: RewardInputs, params: RewardParams = RewardParams(),
           eps_ratio: float = 1e-9) -> RewardResult:
    """Relative-improvement reward over BMR and OMR.

    Positive when both ratios fall; the gap term pays extra when BMR falls
    faster than OMR.  Zero-valued inputs are clamped to eps_ratio with a
    warning so the relative deltas stay defined.
    """
    vals = [inputs.bmr, inputs.bmr_prev, inputs.bmr_start,
            inputs.omr, inputs.omr_prev, inputs.omr_start]
    if any(v <= 0 for v in vals):
        warnings.warn("miss ratio of 0 clamped for reward computation",
                      stacklevel=2)
        vals = [max(v, eps_ratio) for v in vals]
    b, b_prev, b0, o, o_prev, o0 = vals

    d_b = (b_prev - b) / b_prev
    d_o = (o_prev - o) / o_prev
    d_b0 = (b0 - b) / b0
    d_o0 = (o0 - o) / o0
    d_gap = d_b - d_o
    r = (params.alpha * d_b0 / (1.0 - d_b)
         + params.beta * d_o0 / (1.0 - d_o)
         + params.gamma * d_gap)
    return RewardResult(r, control_outcome(r, d_gap), d_b, d_o, d_gap)


@dataclass
class Transition:
    state: RearSectionState
    action: int
    reward: float
    next_state: Optional[RearSectionState]
    terminal: bool


class ReplayMemory:
    """Fixed-capacity ring buffer with uniform (with-replacement) sampling."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self._items: list = []
        self._cursor = 0

    def __len__(self) -> int:
        return len(self._items)

    def push(self, item: Transition) -> None:
        if len(self._items) < self.capacity:
            self._items.append(item)
        else:
            self._items[self._cursor] = item
            self._cursor = (self._cursor + 1) % self.capacity

    def sample(self, batch_size: int, rng: np.random.Generator) -> list:
        idx = rng.integers(0, len(self._items), size=batch_size)
        return [self._items[i] for i in idx]


@dataclass
class AdamState:
    """Per-weight adaptive step-size accumulators."""

    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def q_train_step(policy: QPolicy, batch: Sequence[Transition], discount: float,
                 learning_rate: float, target_policy: Optional[QPolicy] = None,
                 opt_state: Optional[AdamState] = None,
                 beta1: float = 0.9, beta2: float = 0.999,
                 adam_eps: float = 1e-8):
    """One squared-error Q-learning update on the taken actions.

    Targets are r for terminal transitions, else r + discount * max valid
    next-state score under target_policy (the policy itself when absent).
    Returns (updated policy, loss, opt_state).  learning_rate=0 reports the
    loss and leaves the weights untouched.
    """
    if not batch:
        raise ValueError("batch must be non-empty")
    target_policy = target_policy or policy
    b = len(batch)
    x = np.stack([_input_vector(policy, t.state) for t in batch])
    actions = np.array([t.action for t in batch], dtype=np.int64)
    rewards = np.array([t.reward for t in batch])

    targets = rewards.copy()
    for i, t in enumerate(batch):
        if not t.terminal and t.next_state is not None:
            nxt = forward(target_policy, t.next_state)
            targets[i] += discount * float(np.max(nxt))

    scores, h, z1 = _forward_batch(policy, x)
    q_taken = scores[np.arange(b), actions]
    err = q_taken - targets
    loss = float(np.mean(err ** 2))
    if not np.isfinite(loss):
        raise RuntimeError(
            f"non-finite training loss {loss}; q_taken range "
            f"[{q_taken.min()}, {q_taken.max()}]")

    d_scores = np.zeros_like(scores)
    d_scores[np.arange(b), actions] = 2.0 * err / b
    grads = {
        "w2": h.T @ d_scores,
        "b2": d_scores.sum(axis=0),
    }
    d_h = d_scores @ policy.w2.T
    d_z = d_h * (z1 > 0)
    grads["w1"] = x.T @ d_z
    grads["b1"] = d_z.sum(axis=0)

    opt_state = opt_state or AdamState()
    opt_state.step += 1
    t_step = opt_state.step
    new = policy.copy()
    for name, g in grads.items():
        m = opt_state.m.get(name)
        if m is None:
            m = np.zeros_like(g)
            opt_state.v[name] = np.zeros_like(g)
        v = opt_state.v[name]
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        opt_state.m[name] = m
        opt_state.v[name] = v
        m_hat = m / (1 - beta1 ** t_step)
        v_hat = v / (1 - beta2 ** t_step)
        update = learning_rate * m_hat / (np.sqrt(v_hat) + adam_eps)
        setattr(new, name, getattr(new, name) - update)
    return new, loss, opt_state


def select_action(scores: np.ndarray, epsilon: float, rng) -> int:
    """Epsilon-greedy over unmasked scores; ties go to the lowest index."""
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    finite = np.isfinite(scores)
    if not finite.any():
        raise ValueError("all actions are masked")
    if epsilon > 0 and rng.random() < epsilon:
        choices = np.flatnonzero(finite)
        return int(choices[rng.integers(0, len(choices))])
    return int(np.argmax(scores))


def top_t_actions(scores: np.ndarray, t: int) -> list:
    """Distinct unmasked indices by descending score (stable on ties)."""
    if t < 1:
        raise ValueError("t must be >= 1")
    finite = np.isfinite(scores)
    if not finite.any():
        raise ValueError("all actions are masked")
    order = np.argsort(-scores, kind="stable")
    out = [int(i) for i in order if finite[i]]
    return out[: min(t, len(out))]


def epsilon_at(step: int, anneal_steps: int, start: float = 1.0,
               final: float = 0.05) -> float:
    """Linear anneal from start to final over anneal_steps agent steps."""
    if anneal_steps <= 0 or step >= anneal_steps:
        return final
    return start + (final - start) * (step / anneal_steps)


def save_policy(policy: QPolicy, sink) -> None:
    """Little-endian binary dump; save -> load -> forward is bit-exact."""
    own = isinstance(sink, str)
    out = open(sink, "wb") if own else sink
    try:
        out.write(_MAGIC)
        out.write(struct.pack("<III", policy.version, policy.n_actions,
                              policy.hidden))
        for arr in (policy.feat_min, policy.feat_max, policy.w1, policy.b1,
                    policy.w2, policy.b2):
            out.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    finally:
        if own:
            out.close()


def _read_exact(f, count: int) -> bytes:
    data = f.read(count)
    if len(data) != count:
        raise PolicyFormatError(
            f"truncated policy file: wanted {count} bytes, got {len(data)}")
    return data


def load_policy(source) -> QPolicy:
    own = isinstance(source, str)
    f = open(source, "rb") if own else source
    try:
        if _read_exact(f, 4) != _MAGIC:
            raise PolicyFormatError("not a policy file (bad magic)")
        version, n_actions, hidden = struct.unpack("<III", _read_exact(f, 12))
        if version != _FORMAT_VERSION:
            raise PolicyFormatError(
                f"incompatible policy version {version} "
                f"(supported: {_FORMAT_VERSION})")
        if n_actions < 1 or hidden < 1:
            raise PolicyFormatError(
                f"bad dimensions: n_actions={n_actions} hidden={hidden}")

        def read_array(shape) -> np.ndarray:
            count = int(np.prod(shape))
            data = _read_exact(f, count * 8)
            return np.frombuffer(data, dtype="<f8").astype(np.float64).reshape(shape)

        n_in = N_FEATURES * n_actions
        feat_min = read_array((N_FEATURES,))
        feat_max = read_array((N_FEATURES,))
        w1 = read_array((n_in, hidden))
        b1 = read_array((hidden,))
        w2 = read_array((hidden, n_actions))
        b2 = read_array((n_actions,))
        return QPolicy(n_actions, hidden, w1, b1, w2, b2, feat_min, feat_max,
                       version)
    finally:
        if own:
            f.close()
