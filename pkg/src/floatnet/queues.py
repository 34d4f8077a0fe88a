"""Standard and floating queue dynamics.

A floating queue splits a standard backlog ``Q_n`` into a real queue holding
at most ``B`` packets and an unbounded fake-queue counter.  Services take real
packets first; real arrivals that do not fit are dropped and become fake.
The sum ``Q^r + Q^f`` evolves exactly like the standard queue.

All functions are written with numpy ufuncs so they accept scalars and
arrays alike (one entry per node, or any broadcastable batch).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class FloatingQueueError(RuntimeError):
    """A floating-queue update left the real queue outside ``[0, B]``."""


def standard_update(q, a, b):
    """``max(q - b, 0) + a``"""
    return np.maximum(np.subtract(q, b), 0) + a


def split_services(q_real, b):
    """Serve real packets before fake ones; returns ``(b_r, b_f)``."""
    b_r = np.minimum(q_real, b)
    return b_r, np.subtract(b, b_r)


def admit_arrivals(q_real, buffer_size, a_r, a_f):
    """Admit real arrivals up to the free buffer space.

    Headroom is ``B - Q^r(t)`` with the slot-start backlog.  Returns
    ``(a_r_admitted, drops, a_f_admitted)``; dropped real packets join the
    fake arrivals.
    """
    a_r_adm = np.minimum(np.subtract(buffer_size, q_real), a_r)
    drops = np.subtract(a_r, a_r_adm)
    return a_r_adm, drops, np.add(a_f, drops)


def decompose_link_flows(mu, b_r, b_f):
    """Split each link's service into real and fake parts.

    ``mu`` is the ``(N+1) x (N+1)`` service matrix; ``b_r`` and ``b_f`` hold the
    per-node real/fake service totals for nodes ``1..N``.  Exogenous arrivals
    (row 0) are all real.  Each node's real packets go to its outgoing links in
    ascending ``j`` order, exit link ``j = 0`` first; the rest is fake.
    """
    mu = np.asarray(mu, dtype=np.int64)
    b_r = np.asarray(b_r, dtype=np.int64)
    b_f = np.asarray(b_f, dtype=np.int64)
    out = mu[1:].sum(axis=1)
    if np.any(out != b_r + b_f) or np.any(b_r < 0) or np.any(b_f < 0):
        raise ValueError("flow conservation violated")
    filled_before = np.cumsum(mu[1:], axis=1) - mu[1:]
    mu_r = np.zeros_like(mu)
    mu_r[0] = mu[0]
    mu_r[1:] = np.clip(b_r[:, None] - filled_before, 0, mu[1:])
    return mu_r, mu - mu_r


@dataclass(frozen=True, eq=False)
class FlowSplit:
    """Real/fake decomposition of one slot's flows, per node and per link."""

    a_r: np.ndarray
    a_f: np.ndarray
    a_r_admitted: np.ndarray
    a_f_admitted: np.ndarray
    b_r: np.ndarray
    b_f: np.ndarray
    drops: np.ndarray
    mu_r: np.ndarray | None = None
    mu_f: np.ndarray | None = None

    def check(self, mu=None) -> list[str]:
        """Return the violated conservation identities (empty when consistent)."""
        bad = []
        if np.any(self.a_r_admitted + self.a_f_admitted != self.a_r + self.a_f):
            bad.append("admitted arrivals do not conserve a_r + a_f")
        if np.any(self.drops != self.a_r - self.a_r_admitted):
            bad.append("drops != a_r - a_r_admitted")
        for name in ("a_r", "a_f", "a_r_admitted", "a_f_admitted", "b_r", "b_f", "drops"):
            if np.any(np.asarray(getattr(self, name)) < 0):
                bad.append(f"{name} negative")
        if self.mu_r is not None:
            if mu is not None and np.any(self.mu_r + self.mu_f != mu):
                bad.append("mu_r + mu_f != mu")
            if np.any(self.mu_f[0] != 0):
                bad.append("exogenous arrivals must be real")
            if np.any(self.mu_r[:, 1:].sum(axis=0) != self.a_r):
                bad.append("a_r != sum_i mu_r[i, n]")
            if np.any(self.mu_f[:, 1:].sum(axis=0) != self.a_f):
                bad.append("a_f != sum_i mu_f[i, n]")
            if np.any(self.mu_r[1:].sum(axis=1) != self.b_r):
                bad.append("b_r != sum_j mu_r[n, j]")
            if np.any(self.mu_f[1:].sum(axis=1) != self.b_f):
                bad.append("b_f != sum_j mu_f[n, j]")
        return bad


@dataclass(frozen=True, eq=False)
class FloatingQueueState:
    real: np.ndarray
    fake: np.ndarray
    buffer_size: int | np.ndarray

    def __post_init__(self):
        real = np.asarray(self.real, dtype=np.int64)
        fake = np.asarray(self.fake, dtype=np.int64)
        if np.any(np.asarray(self.buffer_size) < 1):
            raise ValueError("buffer_size must be >= 1")
        if np.any(real < 0) or np.any(real > self.buffer_size):
            raise FloatingQueueError("real backlog outside [0, B]")
        if np.any(fake < 0):
            raise FloatingQueueError("fake backlog negative")
        object.__setattr__(self, "real", real)
        object.__setattr__(self, "fake", fake)

    @classmethod
    def empty(cls, node_count: int, buffer_size: int, fake_init=None) -> "FloatingQueueState":
        fake = np.zeros(node_count, dtype=np.int64) if fake_init is None else fake_init
        return cls(np.zeros(node_count, dtype=np.int64), fake, buffer_size)

    @property
    def backlog(self) -> np.ndarray:
        return self.real + self.fake


def floating_update(state: FloatingQueueState, split: FlowSplit) -> FloatingQueueState:
    real = state.real - split.b_r + split.a_r_admitted
    if np.any(real < 0) or np.any(real > state.buffer_size):
        raise FloatingQueueError(
            "real queue left [0, B]; the flow split is inconsistent with the state")
    fake = np.maximum(state.fake - split.b_f, 0) + split.a_f_admitted
    return FloatingQueueState(real, fake, state.buffer_size)


def step_floating_node(state: FloatingQueueState, a_r, a_f, b) -> tuple[FloatingQueueState, FlowSplit]:
    """One slot of the floating-queue update given aggregated real/fake arrivals and services.

    Order: split services, admit arrivals against the slot-start real
    backlog, then update both queues.
    """
    b_r, b_f = split_services(state.real, b)
    a_r_adm, drops, a_f_adm = admit_arrivals(state.real, state.buffer_size, a_r, a_f)
    split = FlowSplit(
        a_r=np.asarray(a_r), a_f=np.asarray(a_f),
        a_r_admitted=a_r_adm, a_f_admitted=a_f_adm,
        b_r=b_r, b_f=b_f, drops=drops,
    )
    return floating_update(state, split), split


def step_floating_network(state: FloatingQueueState, mu) -> tuple[FloatingQueueState, FlowSplit]:
    """One slot of the whole network from the chosen action's service matrix.

    Real/fake services per node come from the real backlogs, the link-level
    split decides which arrivals downstream are real, then each node admits
    and updates.
    """
    mu = np.asarray(mu, dtype=np.int64)
    b = mu[1:].sum(axis=1)
    b_r, b_f = split_services(state.real, b)
    mu_r, mu_f = decompose_link_flows(mu, b_r, b_f)
    a_r = mu_r[:, 1:].sum(axis=0)
    a_f = mu_f[:, 1:].sum(axis=0)
    a_r_adm, drops, a_f_adm = admit_arrivals(state.real, state.buffer_size, a_r, a_f)
    split = FlowSplit(a_r=a_r, a_f=a_f, a_r_admitted=a_r_adm, a_f_admitted=a_f_adm,
                      b_r=b_r, b_f=b_f, drops=drops, mu_r=mu_r, mu_f=mu_f)
    return floating_update(state, split), split
