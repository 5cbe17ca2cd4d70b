"""Simultaneous dominant-pole iterations over sparse descriptor systems.

Both methods iterate a p-tuple of complex shifts. Each sweep solves, per
active shift s_j, the two systems ``(J - s_j E) x = B`` and
``(J - s_j E)^T y = C`` (one factorization each), normalizes both solutions
by ``nu_j = C^T (J - s_j E)^-1 B``, and collects the columns into blocks
X and Y. Writing W, V for the dynamic-row blocks of Y, X, the projected
matrix assembles from a rank-one update without ever touching the state
matrix:

    F = (W^T V)^-1 e vhat^T + diag(S),   W^T V = Y^T E X,
    vhat_j = 1 / nu_j,                   e = ones(p).

The full method ("dpse") takes the eigenvalues of F as the next shift
tuple, matched back to the previous one; the diagonal variant ("ddpse")
takes diag(F), which costs no eigensolve. Any tuple of distinct eigenvalues
is a fixed point of either map, and both converge quadratically near one.

Converged columns are deflated: their vectors freeze, vhat_j is set to 0
(its limit at an eigenvalue) and the diagonal entry is pinned at the locked
eigenvalue, so column j of F equals ``lambda_j e_j`` exactly and the locked
value stays an eigenvalue of every later F.
"""

from __future__ import annotations

import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.optimize

from .descriptor import VanishingNormalizerError, normalized_vectors
from .sparsela import SingularMatrixError, dense_eig

__all__ = [
    "SolverError",
    "ShiftCollisionError",
    "SolverConfig",
    "ShiftState",
    "PoleResult",
    "RunReport",
    "DEFAULT_FAN_SCALE",
    "init_shifts",
    "refresh_columns",
    "assemble_projection",
    "dpse_step",
    "ddpse_step",
    "match_shifts",
    "check_convergence",
    "deflate",
    "estimate_residue",
    "dominance",
    "damping_ratio",
    "dominance_sort_key",
    "run",
]

DEFAULT_FAN_SCALE = -0.05 + 0.5j

_METHODS = ("dpse", "ddpse")
_MATCHINGS = ("greedy-nearest", "optimal-assignment")
# Bounded retry budgets for the perturbation heuristics. Step retries use
# geometrically growing kicks: escaping an ill-conditioned W^T V needs a
# separation of roughly sqrt(1/cond_limit), far above one base perturbation.
_MAX_NORMALIZER_KICKS = 5
_MAX_STEP_RETRIES = 12
_THREADS_ENV = "DOMPOLE_THREADS"
# First retry after a singular factorization moves just far enough off the
# eigenvalue to clear the pivot threshold; one fixed-point sweep from there
# moves the shift by O(nudge^2), and the residual floor it induces is about
# nudge * |s| / |residue|, which must stay below usable tolerances even for
# weakly observable poles. The coarse config.perturbation * |s| kick stays
# as the second retry.
_SINGULAR_NUDGE = 1e-11


class SolverError(RuntimeError):
    """Unrecoverable solver failure."""


class ShiftCollisionError(SolverError):
    """Y^T E X is too ill-conditioned; two shifts target the same eigenvalue."""


@dataclass
class SolverConfig:
    """Iteration controls shared by both methods."""

    method: str = "dpse"
    p: int = 1
    tol: float = 1e-5
    max_iter: int = 50
    matching: str = "greedy-nearest"
    collision_eps: float = 1e-8
    perturbation: float = 1e-6

    def __post_init__(self):
        self.method = str(self.method).lower()
        if self.method not in _METHODS:
            raise ValueError(f"method must be one of {_METHODS}")
        if self.matching not in _MATCHINGS:
            raise ValueError(f"matching must be one of {_MATCHINGS}")
        if self.p < 1:
            raise ValueError("p must be at least 1")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if not self.collision_eps > 0:
            raise ValueError("collision_eps must be positive")

    def as_dict(self):
        return {
            "method": self.method,
            "p": self.p,
            "tol": self.tol,
            "max_iter": self.max_iter,
            "matching": self.matching,
            "collision_eps": self.collision_eps,
            "perturbation": self.perturbation,
        }


@dataclass
class ShiftState:
    """Mutable per-run state: the shift tuple, vector blocks, and bookkeeping.

    X and Y hold the normalized right/left columns for the shifts they were
    last computed at; converged columns are frozen and never recomputed.
    """

    shifts: np.ndarray
    X: np.ndarray
    Y: np.ndarray
    normalizers: np.ndarray
    converged: np.ndarray
    locked: np.ndarray
    iterations: np.ndarray
    final_residuals: np.ndarray
    ndyn: int
    iter: int = 0

    @classmethod
    def start(cls, sys, shifts):
        shifts = np.asarray(shifts, dtype=np.complex128).copy()
        p = shifts.shape[0]
        N = sys.order
        return cls(
            shifts=shifts,
            X=np.zeros((N, p), dtype=np.complex128),
            Y=np.zeros((N, p), dtype=np.complex128),
            normalizers=np.ones(p, dtype=np.complex128),
            converged=np.zeros(p, dtype=bool),
            locked=np.full(p, np.nan, dtype=np.complex128),
            iterations=np.zeros(p, dtype=np.int64),
            final_residuals=np.full((p, 2), np.nan),
            ndyn=sys.ndyn,
        )

    @property
    def p(self):
        return self.shifts.shape[0]

    @property
    def all_converged(self):
        return bool(self.converged.all())

    def active_indices(self):
        return np.flatnonzero(~self.converged)


def init_shifts(pattern, p=None, scale=DEFAULT_FAN_SCALE, center=-1.0 + 0.0j, radius=1.0):
    """Build an initial shift tuple.

    ``pattern`` is either an explicit sequence of complex shifts, ``"fan"``
    (``mu_k = k * scale`` for k = 1..p; the default scale -1/20 + i/2 spreads
    the fan along the upper-left quadrant), or ``"ring"`` (p points on the
    circle ``center + radius * exp(i theta)``, offset half a step so none
    lands on the imaginary axis).
    """
    if isinstance(pattern, str):
        name = pattern.lower()
        if p is None or p < 1:
            raise ValueError("p is required for named shift patterns")
        if name == "fan":
            return np.arange(1, p + 1, dtype=np.complex128) * complex(scale)
        if name == "ring":
            theta = 2.0 * np.pi * (np.arange(p) + 0.5) / p
            pts = complex(center) + float(radius) * np.exp(1j * theta)
            if np.any(pts.real >= 0):
                raise ValueError("ring leaves the left half-plane; shrink radius")
            return pts
        raise ValueError(f"unknown shift pattern '{pattern}'")
    arr = np.asarray(list(pattern), dtype=np.complex128)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError("explicit shift list must be a nonempty 1-D sequence")
    if p is not None and arr.size != p:
        raise ValueError(f"got {arr.size} explicit shifts but p = {p}")
    return arr


def _kick(shift, perturbation, k=1):
    return shift + perturbation * (1.0 + 1.0j) * k


def _compute_column(sys, shift, config):
    """Solve one column with the singular-shift and transmission-zero retries.

    Returns (shift_used, xcol, ycol, normalizer, events). A singular
    factorization (the shift sits on an eigenvalue) first gets a tiny
    pivot-clearing nudge, then one coarse relative kick; a vanishing
    normalizer is treated like a collision and kicked a bounded number of
    times with growing steps.
    """
    s = complex(shift)
    events = []
    singular_retries = 0
    kicks = 0
    while True:
        try:
            x, y, nu = normalized_vectors(sys, s, min_normalizer=config.collision_eps)
            return s, x, y, nu, events
        except SingularMatrixError as exc:
            if singular_retries >= 2:
                raise SolverError(
                    f"factorization stayed singular near shift {s!r}: {exc}"
                ) from exc
            scale = _SINGULAR_NUDGE if singular_retries == 0 else config.perturbation
            singular_retries += 1
            events.append(("singular-shift", s))
            s = s + scale * (abs(s) or 1.0) * (1.0 + 1.0j)
        except VanishingNormalizerError:
            kicks += 1
            if kicks > _MAX_NORMALIZER_KICKS:
                raise SolverError(
                    f"normalizer stayed below {config.collision_eps:g} near "
                    f"shift {s!r}; transfer function has a zero there"
                )
            events.append(("small-normalizer", s))
            s = _kick(s, config.perturbation, kicks)


def _thread_count():
    try:
        return max(1, int(os.environ.get(_THREADS_ENV, "1")))
    except ValueError:
        return 1


def refresh_columns(sys, state, config, events=None, iteration=0, columns=None):
    """Recompute X/Y columns for the given (default: all active) columns.

    Column solves are independent; with ``DOMPOLE_THREADS > 1`` they run on a
    thread pool. Results and event ordering are identical either way.
    """
    cols = list(state.active_indices() if columns is None else columns)
    cols = [j for j in cols if not state.converged[j]]
    if not cols:
        return

    def work(j):
        return _compute_column(sys, state.shifts[j], config)

    threads = _thread_count()
    if threads > 1 and len(cols) > 1:
        with ThreadPoolExecutor(max_workers=min(threads, len(cols))) as pool:
            results = list(pool.map(work, cols))
    else:
        results = [work(j) for j in cols]

    for j, (s, x, y, nu, col_events) in zip(cols, results):
        state.shifts[j] = s
        state.X[:, j] = x
        state.Y[:, j] = y
        state.normalizers[j] = nu
        if events is not None:
            for kind, at in col_events:
                events.append(
                    {
                        "iteration": int(iteration),
                        "column": int(j),
                        "kind": kind,
                        "shift_re": float(at.real),
                        "shift_im": float(at.imag),
                    }
                )


def _projection_parts(sys, state, cond_limit=None):
    """Shared pieces of F: u = (W^T V)^-1 e, vhat, and the diagonal.

    With a cond_limit, an ill-conditioned W^T V raises ShiftCollisionError
    for the caller's perturbation machinery. Without one, a numerically
    rank-deficient block (redundant columns, e.g. several shifts far outside
    the spectrum) is solved in the least-squares sense so the sweep stays
    finite.
    """
    n = sys.ndyn
    wtv = state.Y[:n, :].T @ state.X[:n, :]
    cond = np.linalg.cond(wtv)
    if cond_limit is not None and (not np.isfinite(cond) or cond > cond_limit):
        raise ShiftCollisionError(
            f"cond(Y^T E X) = {cond:.3e} exceeds {cond_limit:.3e}"
        )
    e = np.ones(state.p, dtype=np.complex128)
    if np.isfinite(cond) and cond <= 1e14:
        u = np.linalg.solve(wtv, e)
    else:
        u = np.linalg.lstsq(wtv, e, rcond=1e-12)[0]
    vhat = np.where(state.converged, 0.0, 1.0 / state.normalizers)
    shat = np.where(state.converged, state.locked, state.shifts)
    return u, vhat, shat


def assemble_projection(sys, state, cond_limit=None):
    """The p-by-p projected matrix F for the current state.

    Active columns contribute the rank-one resolvent update; converged
    columns are pinned so that ``F e_j = lambda_j e_j`` exactly, which keeps
    locked eigenvalues in the spectrum of every later F (block-triangular
    deflation).
    """
    u, vhat, shat = _projection_parts(sys, state, cond_limit)
    return np.outer(u, vhat) + np.diag(shat)


def match_shifts(old, candidates, strategy="greedy-nearest"):
    """Permute candidates so each aligns with its previous shift.

    ``greedy-nearest`` repeatedly pairs the globally closest unclaimed
    (old, candidate) couple; ``optimal-assignment`` minimizes the total
    pairing distance.
    """
    old = np.asarray(old, dtype=np.complex128)
    cand = np.asarray(candidates, dtype=np.complex128)
    if old.shape != cand.shape:
        raise ValueError("old and candidate tuples must have equal length")
    m = old.shape[0]
    if m == 0:
        return cand.copy()
    if strategy not in _MATCHINGS:
        raise ValueError(f"matching must be one of {_MATCHINGS}")
    dist = np.abs(old[:, None] - cand[None, :])
    out = np.empty(m, dtype=np.complex128)
    if strategy == "optimal-assignment":
        rows, cols = scipy.optimize.linear_sum_assignment(dist)
        out[rows] = cand[cols]
        return out
    taken_old = np.zeros(m, dtype=bool)
    taken_new = np.zeros(m, dtype=bool)
    for flat in np.argsort(dist, axis=None, kind="stable"):
        i, k = divmod(int(flat), m)
        if taken_old[i] or taken_new[k]:
            continue
        out[i] = cand[k]
        taken_old[i] = True
        taken_new[k] = True
        if taken_old.all():
            break
    return out


def dpse_step(sys, state, config):
    """One full sweep: eigenvalues of F matched to the previous shifts.

    Locked positions come back exactly; the matching strategy only permutes
    the remaining candidates across active columns.
    """
    F = assemble_projection(sys, state, cond_limit=1.0 / config.collision_eps)
    w, _ = dense_eig(F)
    new = np.empty(state.p, dtype=np.complex128)
    available = np.ones(state.p, dtype=bool)
    for j in np.flatnonzero(state.converged):
        k = int(np.argmin(np.where(available, np.abs(w - state.locked[j]), np.inf)))
        available[k] = False
        new[j] = state.locked[j]
    act = state.active_indices()
    if act.size:
        new[act] = match_shifts(state.shifts[act], w[available], config.matching)
    return new


def ddpse_step(sys, state, config):
    """One diagonal sweep: ``s_j + vhat_j [ (W^T V)^-1 e ]_j`` per column.

    This is diag(F) without the p-by-p eigensolve; converged columns return
    their locked eigenvalue unchanged.
    """
    u, vhat, shat = _projection_parts(sys, state, cond_limit=1.0 / config.collision_eps)
    return shat + vhat * u


def _residual_pair(sys, shift, x, y):
    n = sys.ndyn
    rx = sys.J.matvec(x)
    rx[:n] -= shift * x[:n]
    ry = sys.J.matvec_t(y)
    ry[:n] -= shift * y[:n]
    return (
        float(np.linalg.norm(rx) / np.linalg.norm(x)),
        float(np.linalg.norm(ry) / np.linalg.norm(y)),
    )


def check_convergence(sys, state, new_shifts, tol):
    """Relative residuals of the stored vectors against the new shifts.

        right_j = ||(J - s_j E) X e_j|| / ||X e_j||
        left_j  = ||(J^T - s_j E) Y e_j|| / ||Y e_j||

    using the vectors from the previous sweep, so convergence costs no extra
    solve. A column converges only when both residuals are at or below tol.
    Already-converged columns report their stored residuals.
    """
    new_shifts = np.asarray(new_shifts, dtype=np.complex128)
    flags = state.converged.copy()
    residuals = state.final_residuals.copy()
    for j in state.active_indices():
        r, l = _residual_pair(sys, new_shifts[j], state.X[:, j], state.Y[:, j])
        residuals[j] = (r, l)
        flags[j] = (r <= tol) and (l <= tol)
    return flags, residuals


def deflate(state, j, eigenvalue):
    """Lock column j at the converged eigenvalue and freeze its vectors."""
    if state.converged[j]:
        raise SolverError(f"column {j} is already deflated")
    state.converged[j] = True
    state.locked[j] = complex(eigenvalue)
    state.shifts[j] = complex(eigenvalue)


def estimate_residue(state, j):
    """Residue of a converged pole from the frozen vectors: 1 / (y^T E x)."""
    if not state.converged[j]:
        raise SolverError("residue estimate requires a converged column")
    n = state.ndyn
    ip = complex(state.Y[:n, j] @ state.X[:n, j])
    if ip == 0 or not np.isfinite(ip):
        raise SolverError(
            f"y^T E x = {ip!r} for column {j}; pair is defective or mis-converged"
        )
    return 1.0 / ip


def dominance(residue, eigenvalue):
    """|R| / |Re(lambda)|; purely imaginary poles map to infinity."""
    re = complex(eigenvalue).real
    if re == 0.0:
        return math.inf
    return abs(complex(residue)) / abs(re)


def damping_ratio(eigenvalue):
    """-Re(lambda) / |lambda| in [-1, 1]; zero for lambda = 0."""
    lam = complex(eigenvalue)
    mag = abs(lam)
    if mag == 0.0:
        return 0.0
    return -lam.real / mag


def dominance_sort_key(eigenvalue, m):
    """Descending dominance, infinities first; ties by |Im| then -Re."""
    lam = complex(eigenvalue)
    if math.isinf(m):
        return (0, 0.0, abs(lam.imag), -lam.real)
    return (1, -m, abs(lam.imag), -lam.real)


@dataclass
class PoleResult:
    """One converged pole with its vectors and quality numbers."""

    eigenvalue: complex
    right_vector: np.ndarray
    left_vector: np.ndarray
    residue: complex
    dominance: float
    damping_ratio: float
    iterations: int
    final_residuals: tuple
    time_s: float = 0.0

    def row(self):
        finite = math.isfinite(self.dominance)
        return {
            "re": self.eigenvalue.real,
            "im": self.eigenvalue.imag,
            "residue_re": self.residue.real,
            "residue_im": self.residue.imag,
            "dominance": self.dominance if finite else None,
            "dominance_infinite": not finite,
            "damping_ratio": self.damping_ratio,
            "iterations": int(self.iterations),
            "residual_right": float(self.final_residuals[0]),
            "residual_left": float(self.final_residuals[1]),
            "time_s": float(self.time_s),
        }


@dataclass
class RunReport:
    """Everything one solver run produced, serializable as JSON."""

    method: str
    config: dict
    poles: list
    unconverged: list
    trajectories: list
    residual_history: list
    events: list
    total_time_s: float
    all_converged: bool

    @property
    def converged_count(self):
        return len(self.poles)

    @property
    def upper_half_count(self):
        return sum(1 for p in self.poles if p.eigenvalue.imag > 0)

    def conjugate_duplicates(self, tol=1e-6):
        """Index pairs (i, j) of poles equal up to conjugation.

        Duplicates are reported, not suppressed: shifts started in one
        half-plane are free to converge in the other.
        """
        pairs = []
        vals = [p.eigenvalue for p in self.poles]
        for i in range(len(vals)):
            for j in range(i + 1, len(vals)):
                scale = max(1.0, abs(vals[i]))
                if (
                    abs(vals[i] - vals[j]) <= tol * scale
                    or abs(vals[i] - vals[j].conjugate()) <= tol * scale
                ):
                    pairs.append((i, j))
        return pairs

    def to_dict(self):
        return {
            "method": self.method,
            "config": self.config,
            "poles": [p.row() for p in self.poles],
            "unconverged": self.unconverged,
            "trajectories": [
                [[z.real, z.imag] for z in traj] for traj in self.trajectories
            ],
            "residual_history": [
                [[None if math.isnan(v) else float(v) for v in pair] for pair in row]
                for row in self.residual_history
            ],
            "events": self.events,
            "converged_count": self.converged_count,
            "upper_half_count": self.upper_half_count,
            "conjugate_duplicates": [list(t) for t in self.conjugate_duplicates()],
            "total_time_s": self.total_time_s,
            "all_converged": self.all_converged,
        }


def _perturb_collisions(state, config, events, iteration):
    """Push apart active shifts that sit within collision_eps of any earlier
    active shift or any locked eigenvalue (the later column moves)."""
    locked_vals = state.locked[state.converged]
    act = state.active_indices()
    for idx, j in enumerate(act):
        targets = np.concatenate([locked_vals, state.shifts[act[:idx]]])
        if targets.size == 0:
            continue
        k = 0
        while np.abs(state.shifts[j] - targets).min() <= config.collision_eps:
            k += 1
            if k > state.p + 4:
                raise SolverError(f"cannot separate shift for column {j}")
            state.shifts[j] = _kick(state.shifts[j], config.perturbation, k)
            events.append(
                {
                    "iteration": int(iteration),
                    "column": int(j),
                    "kind": "collision",
                    "shift_re": float(state.shifts[j].real),
                    "shift_im": float(state.shifts[j].imag),
                }
            )


def _collision_suspects(state, config):
    """Active columns most likely responsible for an ill-conditioned W^T V.

    Two shifts chasing the same eigenvalue give near-parallel columns; the
    conditioning blows up once their distance falls under roughly
    sqrt(collision_eps) times the local scale, so every active column that
    close to an earlier active shift or a locked eigenvalue is suspect (the
    later column moves). Returns (suspects, genuine): when no column is
    within that radius of anything the ill-conditioning is not a collision,
    ``genuine`` is False, and the fallback suspect is the closest pair's
    later member.
    """
    act = state.active_indices()
    suspects = set()
    locked_vals = state.locked[state.converged]
    for idx, j in enumerate(act):
        radius = max(
            config.collision_eps,
            np.sqrt(config.collision_eps) * (1.0 + abs(state.shifts[j])),
        )
        targets = np.concatenate([locked_vals, state.shifts[act[:idx]]])
        if targets.size and np.abs(targets - state.shifts[j]).min() <= radius:
            suspects.add(int(j))
    genuine = bool(suspects)
    if not suspects and act.size >= 2:
        best = None
        for a in range(act.size):
            for b in range(a + 1, act.size):
                d = abs(state.shifts[act[a]] - state.shifts[act[b]])
                if best is None or d < best[0]:
                    best = (d, int(act[b]))
        suspects.add(best[1])
    if not suspects and act.size:
        suspects.add(int(act[-1]))
    return sorted(suspects), genuine


def _fallback_step(sys, state, config, events, iteration):
    """Unguarded sweep for a rank-deficient projection block.

    When perturbation cannot cure the ill-conditioning (redundant columns
    rather than a shift collision), the sweep proceeds with the regularized
    least-squares solve and each active update is damped to a trust radius,
    so wayward columns stay in a sane region instead of aborting the run.
    """
    if config.method == "dpse":
        F = assemble_projection(sys, state)
        w, _ = dense_eig(F)
        new = np.empty(state.p, dtype=np.complex128)
        available = np.ones(state.p, dtype=bool)
        for j in np.flatnonzero(state.converged):
            k = int(np.argmin(np.where(available, np.abs(w - state.locked[j]), np.inf)))
            available[k] = False
            new[j] = state.locked[j]
        act = state.active_indices()
        if act.size:
            new[act] = match_shifts(state.shifts[act], w[available], config.matching)
    else:
        u, vhat, shat = _projection_parts(sys, state)
        new = shat + vhat * u
    for j in state.active_indices():
        delta = new[j] - state.shifts[j]
        radius = 10.0 * (1.0 + abs(state.shifts[j]))
        if not np.isfinite(delta) or abs(delta) > radius:
            step = radius if not np.isfinite(delta) else delta / abs(delta) * radius
            new[j] = state.shifts[j] + step
    events.append({"iteration": int(iteration), "column": -1,
                   "kind": "ill-conditioned-projection",
                   "shift_re": float("nan"), "shift_im": float("nan")})
    return new


def run(sys, config, initial_shifts=None):
    """Drive the configured method until every column converges or max_iter.

    Returns a RunReport whose ``poles`` list (sorted by dominance, most
    dominant first) holds the converged results; columns that hit max_iter
    are reported in ``unconverged`` instead of aborting the run.
    """
    if initial_shifts is None:
        shifts = init_shifts("fan", config.p)
    else:
        shifts = np.asarray(initial_shifts, dtype=np.complex128).copy()
        if shifts.shape != (config.p,):
            raise ValueError(
                f"initial shifts have shape {shifts.shape}, expected ({config.p},)"
            )
    if config.p > sys.ndyn:
        raise ValueError(
            f"p = {config.p} exceeds the {sys.ndyn} dynamic states of the system"
        )
    step = dpse_step if config.method == "dpse" else ddpse_step

    events = []
    state = ShiftState.start(sys, shifts)
    t0 = time.perf_counter()
    conv_time = np.zeros(config.p)

    _perturb_collisions(state, config, events, iteration=0)
    refresh_columns(sys, state, config, events, iteration=0)
    trajectories = [state.shifts.copy()]
    residual_history = []

    for it in range(1, config.max_iter + 1):
        state.iter = it
        new_shifts = None
        for attempt in range(1, _MAX_STEP_RETRIES + 1):
            try:
                new_shifts = step(sys, state, config)
                break
            except ShiftCollisionError:
                suspects, genuine = _collision_suspects(state, config)
                if not genuine:
                    break
                for j in suspects:
                    state.shifts[j] = _kick(
                        state.shifts[j], config.perturbation, 2 ** (attempt - 1)
                    )
                    events.append(
                        {
                            "iteration": int(it),
                            "column": int(j),
                            "kind": "collision",
                            "shift_re": float(state.shifts[j].real),
                            "shift_im": float(state.shifts[j].imag),
                        }
                    )
                refresh_columns(sys, state, config, events, it, columns=suspects)
        if new_shifts is None:
            new_shifts = _fallback_step(sys, state, config, events, it)

        flags, residuals = check_convergence(sys, state, new_shifts, config.tol)
        residual_history.append(residuals)
        for j in state.active_indices():
            if not flags[j]:
                continue
            # an exact duplicate of a locked eigenvalue would freeze two
            # parallel columns into W^T V forever; keep the column active and
            # let the collision machinery separate it (conjugate duplicates
            # are not affected and converge normally)
            locked_vals = state.locked[state.converged]
            if (
                locked_vals.size
                and np.abs(locked_vals - new_shifts[j]).min() <= config.collision_eps
            ):
                events.append(
                    {
                        "iteration": int(it),
                        "column": int(j),
                        "kind": "duplicate-deferred",
                        "shift_re": float(new_shifts[j].real),
                        "shift_im": float(new_shifts[j].imag),
                    }
                )
                continue
            deflate(state, j, new_shifts[j])
            state.final_residuals[j] = residuals[j]
            state.iterations[j] = it
            conv_time[j] = time.perf_counter() - t0
        for j in state.active_indices():
            state.shifts[j] = new_shifts[j]
        trajectories.append(state.shifts.copy())
        if state.all_converged:
            break
        _perturb_collisions(state, config, events, iteration=it)
        refresh_columns(sys, state, config, events, iteration=it)

    poles = []
    for j in np.flatnonzero(state.converged):
        lam = complex(state.locked[j])
        residue = estimate_residue(state, j)
        poles.append(
            PoleResult(
                eigenvalue=lam,
                right_vector=state.X[:, j].copy(),
                left_vector=state.Y[:, j].copy(),
                residue=residue,
                dominance=dominance(residue, lam),
                damping_ratio=damping_ratio(lam),
                iterations=int(state.iterations[j]),
                final_residuals=(
                    float(state.final_residuals[j, 0]),
                    float(state.final_residuals[j, 1]),
                ),
                time_s=float(conv_time[j]),
            )
        )
    poles.sort(key=lambda p: dominance_sort_key(p.eigenvalue, p.dominance))

    unconverged = []
    last = residual_history[-1] if residual_history else np.full((config.p, 2), np.nan)
    for j in state.active_indices():
        unconverged.append(
            {
                "column": int(j),
                "re": float(state.shifts[j].real),
                "im": float(state.shifts[j].imag),
                "residual_right": float(last[j, 0]),
                "residual_left": float(last[j, 1]),
                "iterations": int(state.iter),
            }
        )

    return RunReport(
        method=config.method,
        config=config.as_dict(),
        poles=poles,
        unconverged=unconverged,
        trajectories=trajectories,
        residual_history=residual_history,
        events=events,
        total_time_s=time.perf_counter() - t0,
        all_converged=state.all_converged,
    )
