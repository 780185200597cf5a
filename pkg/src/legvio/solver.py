"""Fixed-lag damped Gauss-Newton over a factor graph of states and landmarks.

Normal equations are assembled in two blocks. The dense block holds the
keyframe states (21 dims each, ordered by keyframe index) and any landmark
tied into a marginalisation prior. The remaining landmarks (3 dims each,
ordered by id) are block-diagonal, so they are eliminated with a Schur
complement before the reduced dense system is Cholesky-factored.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .factors import (
    LinearizedFactor,
    StereoFactor,
    is_state_key,
    key_dim,
    retract_value,
)

log = logging.getLogger(__name__)


@dataclass
class SolverConfig:
    max_states: int = 500
    max_iterations: int = 10
    damping_init: float = 1e-6
    damping_up: float = 10.0
    damping_down: float = 0.5
    damping_min: float = 1e-12
    damping_max: float = 1e10
    rel_cost_tol: float = 1e-10
    abs_cost_tol: float = 1e-14
    step_tol: float = 1e-10
    grad_tol: float = 1e-12

    def __post_init__(self):
        if self.max_states < 2:
            raise ValueError("max_states must be >= 2")


class FactorGraph:
    """Factors plus the set of variables they touch.

    ``frozen`` maps a state key to tangent indices that the solver must not
    update (used to pin the twist biases at zero).
    """

    def __init__(self, factors=None):
        self._factors = list(factors or [])
        self._keys = None
        self.frozen = {}

    @property
    def factors(self):
        return self._factors

    @factors.setter
    def factors(self, factors):
        self._factors = list(factors)
        self._keys = None

    def add(self, factor):
        self._factors.append(factor)
        if self._keys is not None:
            self._keys.update(factor.keys)
        return factor

    def extend(self, factors):
        for f in factors:
            self.add(f)

    def freeze(self, key, dims):
        self.frozen[key] = np.asarray(sorted(set(dims)), dtype=int)

    def keys(self):
        if self._keys is None:
            ks = set()
            for f in self._factors:
                ks.update(f.keys)
            self._keys = ks
        return set(self._keys)

    def state_keys(self):
        return sorted(k for k in self.keys() if is_state_key(k))

    def landmark_keys(self):
        return sorted(k for k in self.keys() if not is_state_key(k))

    def factors_on(self, key):
        return [f for f in self.factors if key in f.keys]

    def copy(self):
        g = FactorGraph(self.factors)
        g.frozen = dict(self.frozen)
        return g

    def check(self, values):
        missing = [k for k in self.keys() if k not in values]
        if missing:
            raise KeyError(f"no initial value for {missing[:5]}")


@dataclass
class LinearSystem:
    """Normal equations split into a dense block and block-diagonal landmarks.

    The dense block holds every state plus the landmarks that some
    non-stereo factor (a marginalisation prior) couples to other variables;
    ``offsets`` gives each dense key's first row.
    """

    dense_keys: list
    offsets: dict
    landmark_keys: list
    Hxx: np.ndarray
    gx: np.ndarray
    Hxl: np.ndarray
    Hll: np.ndarray  # (nL, 3, 3)
    gl: np.ndarray  # (nL, 3)
    cost: float
    factor_costs: dict
    inactive: int = 0

    @property
    def state_keys(self):
        return [k for k in self.dense_keys if is_state_key(k)]

    def full(self):
        """Dense (H, g) over [dense keys..., landmarks...]."""
        nx = self.Hxx.shape[0]
        nl = 3 * len(self.landmark_keys)
        H = np.zeros((nx + nl, nx + nl))
        H[:nx, :nx] = self.Hxx
        H[:nx, nx:] = self.Hxl
        H[nx:, :nx] = self.Hxl.T
        for a in range(len(self.landmark_keys)):
            s = nx + 3 * a
            H[s:s + 3, s:s + 3] = self.Hll[a]
        return H, np.concatenate([self.gx, self.gl.reshape(-1)])

    def all_offsets(self):
        """Row of every key in :meth:`full` ordering."""
        out = dict(self.offsets)
        nx = self.Hxx.shape[0]
        out.update({k: nx + 3 * a for a, k in enumerate(self.landmark_keys)})
        return out

    def gradient_norm(self):
        g = np.concatenate([self.gx, self.gl.reshape(-1)])
        return float(np.abs(g).max()) if g.size else 0.0


def _partition(graph):
    coupled = set()
    for f in graph.factors:
        if not isinstance(f, StereoFactor):
            coupled.update(k for k in f.keys if not is_state_key(k))
    dense = graph.state_keys() + sorted(coupled)
    sparse = [k for k in graph.landmark_keys() if k not in coupled]
    return dense, sparse


def _block_index(starts, size):
    """(n, size, size) row and column indices of square blocks at ``starts``."""
    r = starts[:, None] + np.arange(size)
    return r[:, :, None], r[:, None, :]


def _scatter(H, g, offs, Jw, rw):
    """Add one factor's ``J^T J`` and ``J^T r`` at the given key offsets."""
    if len(offs) <= 2:
        for oa, Ja in zip(offs, Jw):
            na = Ja.shape[1]
            g[oa:oa + na] += Ja.T @ rw
            for ob, Jb in zip(offs, Jw):
                H[oa:oa + na, ob:ob + Jb.shape[1]] += Ja.T @ Jb
        return
    idx = np.concatenate([o + np.arange(J.shape[1]) for o, J in zip(offs, Jw)])
    J = np.hstack(Jw)
    H[np.ix_(idx, idx)] += J.T @ J
    g[idx] += J.T @ rw


def linearize(graph, values):
    """Assemble the whitened normal equations of ``graph`` at ``values``."""
    dkeys, lkeys = _partition(graph)
    offsets, nx = {}, 0
    for k in dkeys:
        offsets[k] = nx
        nx += key_dim(k)
    lidx = {k: i for i, k in enumerate(lkeys)}
    nL = len(lkeys)
    Hxx = np.zeros((nx, nx))
    gx = np.zeros(nx)
    Hxl = np.zeros((nx, 3 * nL))
    Hll = np.zeros((nL, 3, 3))
    gl = np.zeros((nL, 3))
    factor_costs = {}
    cost = 0.0

    stereo = [f for f in graph.factors if isinstance(f, StereoFactor)]
    others = [f for f in graph.factors if not isinstance(f, StereoFactor)]
    inactive = 0
    if stereo:
        rw, Jp, Jl, inactive, c = StereoFactor.linearize_batch(stereo, values)
        cost += c
        factor_costs["StereoFactor"] = c
        so = np.array([offsets[f.keys[0]] for f in stereo])
        JpT = np.transpose(Jp, (0, 2, 1))
        np.add.at(Hxx, _block_index(so, 6), JpT @ Jp)
        np.add.at(gx, so[:, None] + np.arange(6), np.einsum("nji,nj->ni", Jp, rw))
        JlT = np.transpose(Jl, (0, 2, 1))
        Hpl = JpT @ Jl
        gli = np.einsum("nji,nj->ni", Jl, rw)
        dense = np.array([f.keys[1] in offsets for f in stereo])
        if dense.any():
            lo = np.array([offsets[f.keys[1]] for f, d in zip(stereo, dense) if d])
            np.add.at(Hxx, _block_index(lo, 3), (JlT @ Jl)[dense])
            np.add.at(gx, lo[:, None] + np.arange(3), gli[dense])
            rows = so[dense][:, None, None] + np.arange(6)[:, None]
            cols = lo[:, None, None] + np.arange(3)[None, :]
            np.add.at(Hxx, (rows, cols), Hpl[dense])
            np.add.at(Hxx, (cols.transpose(0, 2, 1), rows.transpose(0, 2, 1)),
                      np.transpose(Hpl[dense], (0, 2, 1)))
        sp = ~dense
        if sp.any():
            li = np.array([lidx[f.keys[1]] for f, d in zip(stereo, sp) if d])
            np.add.at(Hll, li, (JlT @ Jl)[sp])
            np.add.at(gl, li, gli[sp])
            rows = so[sp][:, None, None] + np.arange(6)[:, None]
            cols = 3 * li[:, None, None] + np.arange(3)[None, :]
            np.add.at(Hxl, (rows, cols), Hpl[sp])

    for f in others:
        rw, Jw, c = f.linearize(values, with_cost=True)
        cost += c
        factor_costs[f.kind] = factor_costs.get(f.kind, 0.0) + c
        _scatter(Hxx, gx, [offsets[k] for k in f.keys], Jw, rw)

    for key, dims in graph.frozen.items():
        if key not in offsets or len(dims) == 0:
            continue
        rows = offsets[key] + dims
        Hxx[rows, :] = 0.0
        Hxx[:, rows] = 0.0
        Hxx[rows, rows] = 1.0
        Hxl[rows, :] = 0.0
        gx[rows] = 0.0

    return LinearSystem(dkeys, offsets, lkeys, Hxx, gx, Hxl, Hll, gl, cost, factor_costs, inactive)


def solve_linear(ls, damping=0.0):
    """Damped step ``(H + damping I) d = -g`` via the landmark Schur complement.

    Returns (dx, dl) and raises ``np.linalg.LinAlgError`` if the reduced
    system is not positive definite.
    """
    nx = ls.Hxx.shape[0]
    nL = len(ls.landmark_keys)
    Hll = ls.Hll + damping * np.eye(3)
    if nL:
        Hll_inv = np.linalg.inv(Hll)
        Hxl3 = ls.Hxl.reshape(nx, nL, 3)
        W = np.einsum("xla,lab->xlb", Hxl3, Hll_inv).reshape(nx, 3 * nL)
        S = ls.Hxx - W @ ls.Hxl.T
        rhs = -(ls.gx - W @ ls.gl.reshape(-1))
    else:
        S = ls.Hxx.copy()
        rhs = -ls.gx
    S[np.diag_indices(nx)] += damping
    if nx:
        try:
            cf = scipy.linalg.cho_factor(S, lower=False, check_finite=False)
        except scipy.linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError(str(exc)) from exc
        dx = scipy.linalg.cho_solve(cf, rhs, check_finite=False)
    else:
        dx = np.zeros(0)
    if nL:
        back = -ls.gl.reshape(-1) - ls.Hxl.T @ dx
        dl = np.einsum("lab,lb->la", Hll_inv, back.reshape(nL, 3))
    else:
        dl = np.zeros((0, 3))
    if not (np.all(np.isfinite(dx)) and np.all(np.isfinite(dl))):
        raise np.linalg.LinAlgError("non-finite step")
    return dx, dl


def _dense_slice(ls, dx, k):
    o = ls.offsets[k]
    return dx[o:o + key_dim(k)]


def apply_step(ls, values, dx, dl):
    new = dict(values)
    for k in ls.dense_keys:
        new[k] = retract_value(k, values[k], _dense_slice(ls, dx, k))
    for a, k in enumerate(ls.landmark_keys):
        new[k] = retract_value(k, values[k], dl[a])
    return new


def step_as_dict(ls, dx, dl):
    out = {k: _dense_slice(ls, dx, k) for k in ls.dense_keys}
    out.update({k: dl[a] for a, k in enumerate(ls.landmark_keys)})
    return out


def gauss_newton_step(graph, values, damping=0.0):
    """Single undamped (by default) step as a key -> tangent-vector dict."""
    ls = linearize(graph, values)
    dx, dl = solve_linear(ls, damping)
    return step_as_dict(ls, dx, dl)


def total_cost(graph, values):
    return linearize(graph, values).cost


@dataclass
class OptimizeResult:
    values: dict
    cost: float
    initial_cost: float
    iterations: int
    factor_costs: dict
    converged: bool
    damping: float
    damping_exceeded: bool = False
    wall_time: float = 0.0
    history: list = field(default_factory=list)


def optimize(graph, initial, config=None):
    """Levenberg-damped Gauss-Newton with multiplicative damping updates.

    The cost is ``1/2 sum ||whitened r||^2`` and never increases across
    accepted iterations. Exceeding ``damping_max`` is reported through
    ``damping_exceeded`` (typically an unobservable direction without a prior).
    """
    cfg = config or SolverConfig()
    t0 = time.perf_counter()
    graph.check(initial)
    values = dict(initial)
    ls = linearize(graph, values)
    cost0 = cost = ls.cost
    lam = cfg.damping_init
    iterations = 0
    converged = False
    exceeded = False
    history = [cost]
    while iterations < cfg.max_iterations:
        if ls.gradient_norm() <= cfg.grad_tol or cost <= cfg.abs_cost_tol:
            converged = True
            break
        try:
            dx, dl = solve_linear(ls, lam)
        except np.linalg.LinAlgError:
            lam *= cfg.damping_up
            if lam > cfg.damping_max:
                exceeded = True
                log.warning("damping exceeded %g; problem likely rank deficient", cfg.damping_max)
                break
            continue
        new_values = apply_step(ls, values, dx, dl)
        new_ls = linearize(graph, new_values)
        iterations += 1
        if new_ls.cost <= cost:
            decrease = cost - new_ls.cost
            step = max(np.abs(dx).max(initial=0.0), np.abs(dl).max(initial=0.0))
            values, ls, cost = new_values, new_ls, new_ls.cost
            history.append(cost)
            lam = max(lam * cfg.damping_down, cfg.damping_min)
            if (cost <= cfg.abs_cost_tol or decrease <= cfg.abs_cost_tol + cfg.rel_cost_tol * cost
                    or step <= cfg.step_tol):
                converged = True
                break
        else:
            lam *= cfg.damping_up
            if lam > cfg.damping_max:
                exceeded = True
                log.warning("damping exceeded %g; problem likely rank deficient", cfg.damping_max)
                break
    return OptimizeResult(
        values=values,
        cost=cost,
        initial_cost=cost0,
        iterations=iterations,
        factor_costs=dict(ls.factor_costs),
        converged=converged,
        damping=lam,
        damping_exceeded=exceeded,
        wall_time=time.perf_counter() - t0,
        history=history,
    )


def marginalize_oldest(graph, values, max_states=None):
    """Remove the oldest state from ``graph`` together with landmarks nothing else touches.

    Every factor on the oldest state is folded, via the Schur complement of
    the linearised removed block, into one :class:`LinearizedFactor` on the
    remaining neighbours, which may include landmarks still observed later.
    Returns a new graph; a window at or below ``max_states`` is returned
    unchanged.
    """
    skeys = graph.state_keys()
    if not skeys or (max_states is not None and len(skeys) <= max_states):
        return graph
    x0 = skeys[0]
    used = graph.factors_on(x0)
    used_ids = {id(f) for f in used}
    rest = [f for f in graph.factors if id(f) not in used_ids]
    still = set()
    for f in rest:
        still.update(f.keys)
    marg, sep = [x0], []
    for f in used:
        for k in f.keys:
            if k in marg or k in sep:
                continue
            (sep if k in still else marg).append(k)
    sep.sort(key=lambda k: (not is_state_key(k), k))
    out = FactorGraph()
    out.factors = rest
    out.frozen = {k: v for k, v in graph.frozen.items() if k != x0}
    if sep:
        ls = linearize(FactorGraph(used), values)
        H, g = ls.full()
        at = ls.all_offsets()
        order = np.concatenate([at[k] + np.arange(key_dim(k)) for k in marg + sep])
        H, g = H[np.ix_(order, order)], g[order]
        m = sum(key_dim(k) for k in marg)
        Hmm, Hms, Hss = H[:m, :m], H[:m, m:], H[m:, m:]
        gm, gs = g[:m], g[m:]
        Hmm = 0.5 * (Hmm + Hmm.T)
        try:
            cf = scipy.linalg.cho_factor(Hmm, check_finite=False)
            X = scipy.linalg.cho_solve(cf, np.column_stack([Hms, gm]), check_finite=False)
        except scipy.linalg.LinAlgError:
            X = np.linalg.lstsq(Hmm, np.column_stack([Hms, gm]), rcond=None)[0]
        Hs = Hss - Hms.T @ X[:, :-1]
        gsm = gs - Hms.T @ X[:, -1]
        out.add(LinearizedFactor(sep, values, Hs, gsm))
    return out


def marginal_information(graph, values, key_dims):
    """Information matrix of selected (key, tangent indices) after eliminating everything else."""
    ls = linearize(graph, values)
    H, _ = ls.full()
    offs = ls.all_offsets()
    sel = np.concatenate([offs[k] + np.asarray(d) for k, d in key_dims])
    other = np.setdiff1d(np.arange(H.shape[0]), sel)
    Haa = H[np.ix_(sel, sel)]
    if other.size == 0:
        return Haa
    Hab = H[np.ix_(sel, other)]
    Hbb = H[np.ix_(other, other)]
    return Haa - Hab @ np.linalg.solve(Hbb, Hab.T)


def dump_diagnostics(path, graph, values):
    """Write the Hessian block sparsity and per-factor costs as JSON lines."""
    ls = linearize(graph, values)
    keys = ls.dense_keys + ls.landmark_keys
    H, _ = ls.full()
    offs, n = [], 0
    for k in keys:
        offs.append(n)
        n += key_dim(k)
    with open(path, "w") as fh:
        for f in graph.factors:
            rec = {"record": "factor", "kind": f.kind, "keys": [list(k) for k in f.keys],
                   "cost": f.cost(values)}
            fh.write(json.dumps(rec) + "\n")
        for a, ka in enumerate(keys):
            for b, kb in enumerate(keys):
                blk = H[offs[a]:offs[a] + key_dim(ka), offs[b]:offs[b] + key_dim(kb)]
                if np.any(blk != 0.0):
                    fh.write(json.dumps({"record": "hessian_block", "row": list(ka),
                                         "col": list(kb), "nnz": int(np.count_nonzero(blk))}) + "\n")
        fh.write(json.dumps({"record": "total", "cost": ls.cost, "by_kind": ls.factor_costs}) + "\n")
