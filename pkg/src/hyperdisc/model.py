"""Model primitives and the exact forward solution.

An agent lives for ``T`` decision periods.  Each period she observes a
discrete state ``x`` (one of ``J``), draws a vector of additive type 1
extreme value taste shocks (location shifted so the shocks have mean
zero), and picks one of ``K`` actions.  The flow payoff of action ``i``
is ``u_i(x)`` plus the shock, and the state then moves with probability
``f(x' | x, i)``.  Future payoffs are discounted quasi-hyperbolically:
a payoff ``s >= 1`` periods ahead is weighted ``beta * delta**s``, so
``beta < 1`` is an extra one-time markdown of everything beyond today
(present bias) while ``delta`` is the usual exponential factor.

The agent is sophisticated: she predicts that her future selves will be
present biased too.  The resulting behavior is the perception-perfect
profile of the intrapersonal game, computed by backward induction from a
zero continuation value after the final period.  Three arrays describe
the solution:

``V[t, x]``
    perceived long-run value of entering period ``t`` in state ``x``,
    i.e. the continuation value as evaluated one period earlier
    (discounted by ``delta`` alone from ``t`` on),
``W[t, i, x]``
    choice-specific value ``u_i(x) + beta * delta * E[V[t+1] | x, i]``
    that enters today's logit comparison,
``P[t, i, x]``
    the implied conditional choice probability
    ``exp(W[t, i, x]) / sum_j exp(W[t, j, x])``.

All arrays are indexed ``t = 0 .. T-1``, ``i = 0 .. K-1`` and
``x = 0 .. J-1``.  By convention the last action index and the last
state index act as the reference action and reference state in the
identification module.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .exceptions import InvalidInputError

# Tolerances used when validating primitives.
ROW_SUM_TOL = 1e-12
PAIR_UTILITY_TOL = 1e-12
SIMPLEX_TOL = 1e-9
CROSS_CHECK_TOL = 1e-10


def _as_float_array(value, name, shape=None):
    arr = np.asarray(value, dtype=float)
    if shape is not None and arr.shape != shape:
        raise InvalidInputError(f"{name} must have shape {shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} must be finite everywhere")
    return arr


@dataclass(frozen=True)
class ModelSpec:
    """Complete primitive set of a finite-horizon discrete choice model.

    Parameters
    ----------
    num_states : int
        Number of observed states ``J`` (at least 1).
    num_actions : int
        Number of actions ``K`` (at least 2).
    horizon : int
        Number of decision periods ``T``; the data horizon coincides
        with it.
    beta : float
        Present-bias factor in ``(0, 1]``; 1 nests plain exponential
        discounting.
    delta : float
        Standard discount factor in ``(0, 1)``.
    utility : (K, J) array
        Flow payoffs ``u_i(x)`` in utils.
    transitions : (K, J, J) array
        ``transitions[i, x, x'] = f(x' | x, i)``; every row must be a
        probability vector.
    state_values : (J,) array, optional
        Covariate value attached to each state index (defaults to
        ``0, 1, ..., J-1``).  Decouples the internal index from the
        covariate scale used in utility parameterizations.
    equality_pairs : sequence of (k, l, x1, x2)
        Assertions ``u_k(x1) = u_l(x2)``, the exclusion restrictions the
        identification module relies on.  Validated here whenever
        utilities are supplied.
    """

    num_states: int
    num_actions: int
    horizon: int
    beta: float
    delta: float
    utility: np.ndarray
    transitions: np.ndarray
    state_values: np.ndarray | None = None
    equality_pairs: tuple = field(default=())

    def __post_init__(self):
        J, K, T = int(self.num_states), int(self.num_actions), int(self.horizon)
        if J < 1:
            raise InvalidInputError("num_states must be a positive integer")
        if K < 2:
            raise InvalidInputError("num_actions must be at least 2")
        if T < 1:
            raise InvalidInputError("horizon must be a positive integer")
        if not (0.0 < self.beta <= 1.0):
            raise InvalidInputError(f"beta must lie in (0, 1], got {self.beta}")
        if not (0.0 < self.delta < 1.0):
            raise InvalidInputError(f"delta must lie in (0, 1), got {self.delta}")

        utility = _as_float_array(self.utility, "utility", (K, J))
        transitions = _as_float_array(self.transitions, "transitions", (K, J, J))
        if np.any(transitions < 0.0):
            raise InvalidInputError("transition probabilities must be non-negative")
        row_err = np.abs(transitions.sum(axis=2) - 1.0).max()
        if row_err > ROW_SUM_TOL:
            raise InvalidInputError(
                f"every transition row must sum to 1 within {ROW_SUM_TOL}; "
                f"worst deviation {row_err:.3e}"
            )

        if self.state_values is None:
            state_values = np.arange(J, dtype=float)
        else:
            state_values = _as_float_array(self.state_values, "state_values", (J,))

        pairs = []
        for pair in self.equality_pairs:
            if len(pair) != 4:
                raise InvalidInputError(f"equality pair {pair!r} must have 4 entries")
            k, l, x1, x2 = (int(v) for v in pair)
            if not (0 <= k < K and 0 <= l < K and 0 <= x1 < J and 0 <= x2 < J):
                raise InvalidInputError(f"equality pair {pair!r} is out of range")
            gap = abs(utility[k, x1] - utility[l, x2])
            if gap > PAIR_UTILITY_TOL:
                raise InvalidInputError(
                    f"equality pair {pair!r} violated: |u_k(x1) - u_l(x2)| = {gap:.3e}"
                )
            pairs.append((k, l, x1, x2))

        for arr in (utility, transitions, state_values):
            arr.setflags(write=False)
        object.__setattr__(self, "num_states", J)
        object.__setattr__(self, "num_actions", K)
        object.__setattr__(self, "horizon", T)
        object.__setattr__(self, "beta", float(self.beta))
        object.__setattr__(self, "delta", float(self.delta))
        object.__setattr__(self, "utility", utility)
        object.__setattr__(self, "transitions", transitions)
        object.__setattr__(self, "state_values", state_values)
        object.__setattr__(self, "equality_pairs", tuple(pairs))


@dataclass(frozen=True)
class ValueSolution:
    """Per-period values and choice probabilities from backward induction.

    ``V`` has shape (T, J), ``W`` and ``P`` have shape (T, K, J).  Every
    CCP column sums to one and is strictly interior, and same-state log
    CCP ratios equal the corresponding ``W`` differences (the inversion
    the identification step exploits).
    """

    V: np.ndarray
    W: np.ndarray
    P: np.ndarray

    def __post_init__(self):
        V = np.asarray(self.V, dtype=float)
        W = np.asarray(self.W, dtype=float)
        P = np.asarray(self.P, dtype=float)
        if V.ndim != 2 or W.ndim != 3 or P.shape != W.shape:
            raise InvalidInputError("V must be (T, J) and W, P must be (T, K, J)")
        if W.shape[0] != V.shape[0] or W.shape[2] != V.shape[1]:
            raise InvalidInputError("V and W dimensions are inconsistent")
        # The logit keeps probabilities strictly interior in exact
        # arithmetic, but extreme payoff gaps can round them to the
        # boundary in floating point; only genuine violations reject.
        if np.any(P < 0.0) or np.any(P > 1.0):
            raise InvalidInputError("choice probabilities must lie inside [0, 1]")
        sum_err = np.abs(P.sum(axis=1) - 1.0).max()
        if sum_err > 1e-12:
            raise InvalidInputError(
                f"choice probabilities must sum to 1 within 1e-12 per (t, x); "
                f"worst deviation {sum_err:.3e}"
            )
        for arr in (V, W, P):
            arr.setflags(write=False)
        object.__setattr__(self, "V", V)
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "P", P)

    @property
    def horizon(self):
        return self.V.shape[0]


def logsumexp(values, axis=None):
    """Overflow-safe ``log(sum(exp(values)))``.

    Shifts by the maximum before exponentiating, so inputs like 1000 do
    not overflow.  Raises on empty or non-finite input.
    """
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        raise InvalidInputError("logsumexp requires at least one value")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError("logsumexp requires finite values")
    out = special.logsumexp(arr, axis=axis)
    return float(out) if axis is None else out


def ccp_from_values(w):
    """Logit choice probabilities implied by choice-specific values.

    ``w`` holds one value per action along axis 0 (a vector for a single
    state, or a (K, J) table).  The output sums to one over actions, is
    strictly positive, and is invariant to adding a common constant to
    all entries of a state's column.
    """
    arr = np.asarray(w, dtype=float)
    if arr.size == 0:
        raise InvalidInputError("ccp_from_values requires at least one action value")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError("ccp_from_values requires finite values")
    shifted = arr - arr.max(axis=0, keepdims=True)
    expw = np.exp(shifted)
    return expw / expw.sum(axis=0, keepdims=True)


def choice_values(utility, transitions, beta, delta, v_next):
    """Choice-specific values ``u_i(x) + beta * delta * E[v_next | x, i]``.

    With ``beta = 1`` this is the perceived long-run choice value (the
    object a time-consistent self would use); the gap between the two is
    ``(1 - beta) * delta * E[v_next | x, i]``.
    """
    u = np.asarray(utility, dtype=float)
    f = np.asarray(transitions, dtype=float)
    v = np.asarray(v_next, dtype=float)
    if u.ndim != 2:
        raise InvalidInputError("utility must be a (K, J) table")
    K, J = u.shape
    if f.shape != (K, J, J):
        raise InvalidInputError(f"transitions must have shape {(K, J, J)}, got {f.shape}")
    if v.shape != (J,):
        raise InvalidInputError(f"v_next must have shape {(J,)}, got {v.shape}")
    return u + beta * delta * (f @ v)


def choice_long_run_values(utility, transitions, delta, v_next):
    """Perceived long-run choice values (``choice_values`` at beta = 1)."""
    return choice_values(utility, transitions, 1.0, delta, v_next)


def perceived_value_step(w_t, p_t, transitions, beta, delta, v_next, check=False):
    """One backward step of the perceived long-run value.

    Evaluates, state by state,

        V(x) = log(sum_i exp(W_i(x)))
               + (1 - beta) * delta * sum_j P_j(x) * E[v_next | x, j].

    The first term is the mean-zero extreme value expected maximum; the
    second corrects for the wedge between today's choice rule (driven by
    ``beta * delta``) and the long-run valuation (driven by ``delta``).
    An equivalent rewriting replaces the log-sum-exp with
    ``W_K(x) - log(P_K(x))`` for the reference action; with
    ``check=True`` both forms are evaluated and must agree to 1e-10,
    which guards against ``p_t`` and ``w_t`` drifting out of sync.
    """
    w = np.asarray(w_t, dtype=float)
    p = np.asarray(p_t, dtype=float)
    f = np.asarray(transitions, dtype=float)
    v = np.asarray(v_next, dtype=float)
    if w.ndim != 2 or p.shape != w.shape:
        raise InvalidInputError("w_t and p_t must both be (K, J) tables")
    if np.any(p <= 0.0):
        raise InvalidInputError("choice probabilities must be strictly positive")
    col_err = np.abs(p.sum(axis=0) - 1.0).max()
    if col_err > SIMPLEX_TOL:
        raise InvalidInputError(
            f"p_t columns must sum to 1 within {SIMPLEX_TOL}; worst deviation {col_err:.3e}"
        )
    ev = f @ v  # E[v_next | x, i], shape (K, J)
    correction = (1.0 - beta) * delta * (p * ev).sum(axis=0)
    lse = special.logsumexp(w, axis=0)
    value = lse + correction
    if check:
        alt = w[-1] - np.log(p[-1]) + correction
        gap = np.abs(value - alt).max()
        if gap > CROSS_CHECK_TOL:
            raise InvalidInputError(
                f"the two value-step forms disagree by {gap:.3e}; "
                "p_t is not the softmax of w_t"
            )
    return value


def _backward_core(utility, transitions, beta, delta, horizon):
    """Backward induction kernel shared by the solver and the likelihood.

    Returns ``(V, W, logP)``; the caller exponentiates ``logP`` when
    probabilities are needed.  Log CCPs are produced directly as
    ``W - logsumexp(W)`` so likelihood evaluation never takes the log of
    an underflowed probability.
    """
    K, J = utility.shape
    V = np.empty((horizon, J))
    W = np.empty((horizon, K, J))
    logP = np.empty((horizon, K, J))
    bd = beta * delta
    corr = (1.0 - beta) * delta
    v_next = np.zeros(J)
    for t in range(horizon - 1, -1, -1):
        ev = transitions @ v_next
        w = utility + bd * ev
        m = w.max(axis=0)
        lse = m + np.log(np.exp(w - m).sum(axis=0))
        lp = w - lse
        v_next = lse + corr * (np.exp(lp) * ev).sum(axis=0)
        V[t] = v_next
        W[t] = w
        logP[t] = lp
    return V, W, logP


def solve_backward(model: ModelSpec, check=False) -> ValueSolution:
    """Solve the model exactly by backward induction.

    The continuation value after the final period is zero, so terminal
    choice-specific values equal the flow payoffs.  Each earlier period
    applies ``choice_values``, ``ccp_from_values`` and
    ``perceived_value_step`` in turn.  With ``check=True`` every period's
    value is re-derived through the alternative inversion form and the
    two must agree to 1e-10.
    """
    V, W, logP = _backward_core(
        model.utility, model.transitions, model.beta, model.delta, model.horizon
    )
    solution = ValueSolution(V=V, W=W, P=np.exp(logP))
    if check:
        T = model.horizon
        for t in range(T):
            v_next = V[t + 1] if t + 1 < T else np.zeros(model.num_states)
            redone = perceived_value_step(
                solution.W[t], solution.P[t], model.transitions,
                model.beta, model.delta, v_next, check=True,
            )
            gap = np.abs(redone - V[t]).max()
            if gap > CROSS_CHECK_TOL:
                raise InvalidInputError(
                    f"backward induction cross-check failed at period {t}: gap {gap:.3e}"
                )
    return solution
