"""Affinity propagation over a dense similarity matrix.

Message passing follows Frey & Dueck: responsibilities, then
availabilities, each damped. No random jitter is added to break
degeneracies. Ties resolve toward the lowest index instead: explicit
argmax calls pick the first maximum, and the messages see a lexicographic
bias of ``TIE_EPS * scale * k`` subtracted from column k. With the median
preference, the preference always equals some pairwise similarity, and an
unbiased run tends to cycle between equally good exemplar sets.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import EmptyInput, InvalidAssignment, InvalidDamping

DEFAULT_DAMPING = 0.5
DEFAULT_MAX_ITER = 200
DEFAULT_CONVERGENCE_ITER = 15
TIE_EPS = 1e-12


@dataclass(frozen=True, eq=False)
class SimilarityMatrix:
    """``s[i, k]``: how well point k suits point i as its exemplar.

    The diagonal of ``s`` always holds ``preference``.
    """

    s: np.ndarray
    preference: np.ndarray

    def __post_init__(self):
        s = np.array(self.s, dtype=float)
        n = s.shape[0]
        if s.ndim != 2 or s.shape != (n, n):
            raise ValueError(f"similarity matrix must be square, got {s.shape}")
        pref = np.broadcast_to(np.asarray(self.preference, dtype=float), (n,)).copy()
        s[np.diag_indices(n)] = pref
        if not np.all(np.isfinite(s)):
            raise ValueError("similarity matrix has non-finite entries")
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "preference", pref)

    @property
    def n(self) -> int:
        return self.s.shape[0]


@dataclass(frozen=True)
class Clustering:
    exemplar_of: tuple
    exemplars: tuple
    converged: bool
    iterations_run: int
    net_similarity: float
    history: tuple = field(default=(), compare=False, repr=False)

    @property
    def n_clusters(self) -> int:
        return len(self.exemplars)


def median_off_diagonal(s: np.ndarray) -> float:
    n = s.shape[0]
    if n < 2:
        return 0.0
    return float(np.median(s[~np.eye(n, dtype=bool)]))


def temporal_similarity(onsets, apexes, preference: Optional[float] = None) -> SimilarityMatrix:
    """Negative squared distance between (onset, apex) time pairs.

    ``preference`` defaults to the median off-diagonal similarity, or 0
    when there is a single point.
    """
    on = np.asarray(onsets, dtype=float)
    ap = np.asarray(apexes, dtype=float)
    s = -((on[:, None] - on[None, :]) ** 2 + (ap[:, None] - ap[None, :]) ** 2)
    pref = median_off_diagonal(s) if preference is None else float(preference)
    return SimilarityMatrix(s, np.full(len(on), pref))


def build_temporal_similarity(events: Sequence, preference: Optional[float] = None) -> SimilarityMatrix:
    """Similarity between AU events: events that start and peak together score highest."""
    if len(events) == 0:
        raise EmptyInput("need at least one event")
    return temporal_similarity(
        [e.onset_time for e in events], [e.apex_time for e in events], preference
    )


def assign_to_exemplars(s: np.ndarray, exemplars: Sequence[int]) -> np.ndarray:
    """Exemplars point to themselves; every other point joins its most similar exemplar."""
    ex = np.asarray(sorted(exemplars), dtype=int)
    labels = ex[np.argmax(s[:, ex], axis=1)]
    labels[ex] = ex
    return labels


def refine_exemplars(s: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Re-pick each cluster's exemplar as the member with the highest summed
    similarity to its cluster mates, then reassign every point once."""
    exemplars = []
    for e in np.unique(labels):
        members = np.flatnonzero(labels == e)
        exemplars.append(members[np.argmax(s[np.ix_(members, members)].sum(axis=0))])
    return assign_to_exemplars(s, exemplars)


def net_similarity(S: SimilarityMatrix, exemplar_of: Sequence[int]) -> float:
    """Sum of each point's similarity to its exemplar; exemplars add their preference.

    Raises
    ------
    InvalidAssignment
        A point is assigned to something that is not its own exemplar.
    """
    labels = np.asarray(exemplar_of, dtype=int)
    if labels.shape != (S.n,) or np.any((labels < 0) | (labels >= S.n)):
        raise InvalidAssignment("assignment must hold one in-range index per point")
    if np.any(labels[labels] != labels):
        raise InvalidAssignment("a point is assigned to a non-exemplar")
    return float(S.s[np.arange(S.n), labels].sum())


def _result(S, labels, converged, iterations, history):
    labels = np.asarray(labels, dtype=int)
    return Clustering(
        exemplar_of=tuple(int(v) for v in labels),
        exemplars=tuple(int(v) for v in np.unique(labels)),
        converged=converged,
        iterations_run=iterations,
        net_similarity=net_similarity(S, labels),
        history=tuple(history),
    )


def affinity_propagation(
    S: SimilarityMatrix,
    damping: float = DEFAULT_DAMPING,
    max_iter: int = DEFAULT_MAX_ITER,
    convergence_iter: int = DEFAULT_CONVERGENCE_ITER,
    record_history: bool = False,
) -> Clustering:
    """Cluster by affinity propagation.

    Parameters
    ----------
    S : SimilarityMatrix
        Pairwise similarities with preferences on the diagonal.
    damping : float
        Weight of the previous message in each update, in [0.5, 1).
    max_iter : int
        Hard cap on message-passing iterations.
    convergence_iter : int
        Stop once the (non-empty) exemplar set has stayed the same for
        this many consecutive iterations.
    record_history : bool
        Keep ``(iteration, n_exemplars, net_similarity)`` per iteration.

    Returns
    -------
    Clustering
        Exemplars get one refinement pass after message passing (see
        :func:`refine_exemplars`). If the iteration cap is hit, ``converged`` is False and the last
        exemplar set is used. If no point ever qualifies as an exemplar,
        the point with the highest preference becomes the only one.
    """
    if not 0.5 <= damping < 1.0:
        raise InvalidDamping(f"damping must be in [0.5, 1), got {damping}")
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    if convergence_iter < 1:
        raise ValueError("convergence_iter must be >= 1")
    n = S.n
    if n == 0:
        raise EmptyInput("similarity matrix is empty")
    if n == 1:
        return _result(S, [0], True, 0, [])

    scale = float(np.abs(S.s).max()) or 1.0
    s = S.s - (TIE_EPS * scale) * np.arange(n)[None, :]
    rows = np.arange(n)
    diag = np.diag_indices(n)
    R = np.zeros((n, n))
    A = np.zeros((n, n))
    history = []
    previous = None
    stable = 0
    converged = False
    exemplars = np.zeros(n, dtype=bool)
    it = 0

    for it in range(1, max_iter + 1):
        # responsibilities
        AS = A + s
        best = np.argmax(AS, axis=1)
        first = AS[rows, best]
        AS[rows, best] = -np.inf
        second = AS.max(axis=1)
        R_new = s - first[:, None]
        R_new[rows, best] = s[rows, best] - second
        R = damping * R + (1.0 - damping) * R_new

        # availabilities
        Rp = np.maximum(R, 0.0)
        Rp[diag] = R[diag]
        A_new = Rp.sum(axis=0)[None, :] - Rp
        self_avail = A_new[diag].copy()
        np.minimum(A_new, 0.0, out=A_new)
        A_new[diag] = self_avail
        A = damping * A + (1.0 - damping) * A_new

        exemplars = (R[diag] + A[diag]) > 0
        if record_history:
            k = int(exemplars.sum())
            net = net_similarity(S, assign_to_exemplars(S.s, np.flatnonzero(exemplars))) if k else float("nan")
            history.append((it, k, net))
        if previous is not None and np.array_equal(exemplars, previous):
            stable += 1
        else:
            stable = 0
        previous = exemplars
        if exemplars.any() and stable >= convergence_iter:
            converged = True
            break

    if exemplars.any():
        labels = refine_exemplars(S.s, assign_to_exemplars(S.s, np.flatnonzero(exemplars)))
    else:
        labels = np.full(n, int(np.argmax(S.preference)))
    return _result(S, labels, converged, it, history)


def exhaustive_optimum(S: SimilarityMatrix, max_points: int = 16) -> Clustering:
    """Brute-force the exemplar subset that maximizes net similarity.

    Enumerates all 2**n - 1 nonempty exemplar sets, so it is only meant as
    a test oracle for small n. Ties keep the first subset in enumeration
    order (by size, then lexicographic).
    """
    n = S.n
    if n == 0:
        raise EmptyInput("similarity matrix is empty")
    if n > max_points:
        raise ValueError(f"refusing to enumerate 2**{n} subsets")
    best_labels, best_value = None, -np.inf
    for size in range(1, n + 1):
        for subset in itertools.combinations(range(n), size):
            labels = assign_to_exemplars(S.s, subset)
            value = float(S.s[np.arange(n), labels].sum())
            if value > best_value:
                best_labels, best_value = labels, value
    return _result(S, best_labels, True, 0, [])
