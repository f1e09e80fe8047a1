"""Incremental SE(2) pose-graph smoother.

update() runs damped Gauss-Newton on the full graph, warm-started from the
current estimate, so after every update the result matches a from-scratch
batch solve of the same factors. Linearization is vectorized over factors
and the whitened normal equations are solved with a banded Cholesky when
every between factor joins nearby keys (the streaming chain case), falling
back to a sparse symmetric-mode LU for general graphs.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg

from .factors import BetweenFactor, Factor, FactorGraph, MeasurementFactor, PriorFactor
from .geometry import Pose2

_TWO_PI = 2.0 * np.pi

# Half-bandwidth above which the normal equations go to the sparse solver.
_BAND_LIMIT = 48

_RR = np.repeat(np.arange(3), 3)
_CC = np.tile(np.arange(3), 3)
_I3 = np.arange(3)


class GaugeError(RuntimeError):
    """No factor pins an absolute pose, or the normal equations are singular."""


@dataclass(frozen=True)
class SmootherSettings:
    max_iterations: int = 100
    relative_tolerance: float = 1e-9
    absolute_tolerance: float = 1e-12
    max_step_halvings: int = 10


@dataclass(frozen=True)
class SolveReport:
    """Outcome of one update() call."""

    iterations: int
    initial_error: float
    final_error: float
    converged: bool
    duration_ms: float
    error_history: tuple[float, ...] = ()


def _wrap(a: np.ndarray) -> np.ndarray:
    # maps onto (-pi, pi]
    return np.pi - np.mod(np.pi - a, _TWO_PI)


def _v_coeffs(th: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    small = np.abs(th) < 1e-6
    safe = np.where(small, 1.0, th)
    t2 = th * th
    h = np.sin(0.5 * th)
    a = np.where(small, 1.0 - t2 / 6.0, np.sin(th) / safe)
    b = np.where(small, 0.5 * th - th * t2 / 24.0, 2.0 * h * h / safe)
    return a, b


def _v_exp(v: np.ndarray) -> np.ndarray:
    a, b = _v_coeffs(v[:, 2])
    out = np.empty_like(v)
    out[:, 0] = a * v[:, 0] - b * v[:, 1]
    out[:, 1] = b * v[:, 0] + a * v[:, 1]
    out[:, 2] = _wrap(v[:, 2])
    return out


def _v_log(p: np.ndarray) -> np.ndarray:
    a, b = _v_coeffs(p[:, 2])
    det = a * a + b * b
    out = np.empty_like(p)
    out[:, 0] = (a * p[:, 0] + b * p[:, 1]) / det
    out[:, 1] = (a * p[:, 1] - b * p[:, 0]) / det
    out[:, 2] = p[:, 2]
    return out


def _v_between(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    c = np.cos(a[:, 2])
    s = np.sin(a[:, 2])
    dx = b[:, 0] - a[:, 0]
    dy = b[:, 1] - a[:, 1]
    out = np.empty_like(a)
    out[:, 0] = c * dx + s * dy
    out[:, 1] = -s * dx + c * dy
    out[:, 2] = _wrap(b[:, 2] - a[:, 2])
    return out


def _v_compose(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    c = np.cos(a[:, 2])
    s = np.sin(a[:, 2])
    out = np.empty_like(a)
    out[:, 0] = a[:, 0] + c * b[:, 0] - s * b[:, 1]
    out[:, 1] = a[:, 1] + s * b[:, 0] + c * b[:, 1]
    out[:, 2] = _wrap(a[:, 2] + b[:, 2])
    return out


def _v_log_dlog(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized log(z) and derivative of log(z * exp(delta)) at delta = 0."""
    th = z[:, 2]
    t2 = th * th
    small = np.abs(th) < 1e-4
    safe_th = np.where(small, 1.0, th)
    safe_t2 = np.where(small, 1.0, t2)
    s = np.sin(th)
    c = np.cos(th)
    h = np.sin(0.5 * th)
    h2 = 2.0 * h * h
    a = np.where(small, 1.0 - t2 / 6.0, s / safe_th)
    b = np.where(small, 0.5 * th - th * t2 / 24.0, h2 / safe_th)
    da = np.where(small, -th / 3.0 + th * t2 / 30.0, (th * c - s) / safe_t2)
    db = np.where(small, 0.5 - t2 / 8.0, (th * s - h2) / safe_t2)
    det = a * a + b * b
    ddet = 2.0 * (a * da + b * db)
    dda = (da * det - a * ddet) / (det * det)
    ddb = (db * det - b * ddet) / (det * det)
    r = np.empty_like(z)
    r[:, 0] = (a * z[:, 0] + b * z[:, 1]) / det
    r[:, 1] = (a * z[:, 1] - b * z[:, 0]) / det
    r[:, 2] = th
    out = np.zeros((len(th), 3, 3))
    out[:, 0, 0] = (a * c + b * s) / det
    out[:, 0, 1] = (-a * s + b * c) / det
    out[:, 1, 0] = (-b * c + a * s) / det
    out[:, 1, 1] = (b * s + a * c) / det
    out[:, 0, 2] = dda * z[:, 0] + ddb * z[:, 1]
    out[:, 1, 2] = -ddb * z[:, 0] + dda * z[:, 1]
    out[:, 2, 2] = 1.0
    return r, out


class _Store:
    """Append-only array with amortized doubling."""

    def __init__(self, width: int | None = None, dtype=np.float64):
        self._shape = (16,) if width is None else (16, width)
        self.a = np.zeros(self._shape, dtype=dtype)
        self.n = 0

    def _reserve(self, extra: int) -> None:
        need = self.n + extra
        if need <= len(self.a):
            return
        cap = len(self.a)
        while cap < need:
            cap *= 2
        grown = np.zeros((cap,) + self.a.shape[1:], dtype=self.a.dtype)
        grown[: self.n] = self.a[: self.n]
        self.a = grown

    def append(self, row) -> None:
        self._reserve(1)
        self.a[self.n] = row
        self.n += 1

    def extend(self, rows) -> None:
        m = len(rows)
        self._reserve(m)
        self.a[self.n : self.n + m] = rows
        self.n += m

    def view(self) -> np.ndarray:
        return self.a[: self.n]


class Smoother:
    """Growing pose graph with per-call batch re-solve semantics."""

    def __init__(self, settings: SmootherSettings | None = None):
        self.settings = settings or SmootherSettings()
        self._n = 0
        self._n_solved = 0
        self._updated = False
        self._x = _Store(width=3)
        self._valued: list[bool] = []
        self._pending: list[int] = []
        self._factors: list[Factor] = []
        self._first_between_to: dict[int, tuple[int, tuple[float, float, float]]] = {}
        self._max_span = 0
        # unary store holds priors and measurements together; the residual
        # and jacobian math is identical for both
        self._un_keys = _Store(dtype=np.intp)
        self._un_vals = _Store(width=3)
        self._un_w = _Store(width=3)
        self._bt_from = _Store(dtype=np.intp)
        self._bt_to = _Store(dtype=np.intp)
        self._bt_rel = _Store(width=3)
        self._bt_w = _Store(width=3)
        # index patterns, appended in step with the factor stores
        self._un_rr = _Store(dtype=np.intp)
        self._un_cc = _Store(dtype=np.intp)
        self._bt_rr: dict[str, _Store] = {k: _Store(dtype=np.intp) for k in ("ff", "ft", "tf", "tt")}
        self._bt_cc: dict[str, _Store] = {k: _Store(dtype=np.intp) for k in ("ff", "ft", "tf", "tt")}
        self._g_un = _Store(dtype=np.intp)
        self._g_f = _Store(dtype=np.intp)
        self._g_t = _Store(dtype=np.intp)
        self._pattern_cache: dict | None = None
        self._estimate_version = 0
        self._marginal_cache: tuple[int, str, object, int] | None = None

    # ---- graph construction -------------------------------------------------

    @property
    def num_variables(self) -> int:
        return self._n

    def add_variable(self, initial_guess: Pose2 | None = None) -> int:
        key = self._n
        self._n += 1
        if initial_guess is not None:
            self._x.append(initial_guess.as_tuple())
            self._valued.append(True)
        else:
            self._x.append((0.0, 0.0, 0.0))
            self._valued.append(False)
            self._pending.append(key)
        return key

    def add_factor(self, factor: Factor) -> None:
        for key in factor.keys():
            if not 0 <= key < self._n:
                raise KeyError(f"factor references unknown variable {key}")
        inv_sig = tuple(1.0 / s for s in factor.noise.sigmas())
        if isinstance(factor, (PriorFactor, MeasurementFactor)):
            key = factor.key
            value = factor.prior if isinstance(factor, PriorFactor) else factor.measured
            self._un_keys.append(key)
            self._un_vals.append(value.as_tuple())
            self._un_w.append(inv_sig)
            self._un_rr.extend(3 * key + _RR)
            self._un_cc.extend(3 * key + _CC)
            self._g_un.extend(3 * key + _I3)
        elif isinstance(factor, BetweenFactor):
            f, t = factor.key_from, factor.key_to
            self._bt_from.append(f)
            self._bt_to.append(t)
            self._bt_rel.append(factor.relative.as_tuple())
            self._bt_w.append(inv_sig)
            for name, kr, kc in (("ff", f, f), ("ft", f, t), ("tf", t, f), ("tt", t, t)):
                self._bt_rr[name].extend(3 * kr + _RR)
                self._bt_cc[name].extend(3 * kc + _CC)
            self._g_f.extend(3 * f + _I3)
            self._g_t.extend(3 * t + _I3)
            self._max_span = max(self._max_span, abs(t - f))
            self._first_between_to.setdefault(t, (f, factor.relative.as_tuple()))
        else:
            raise TypeError(f"unsupported factor type {type(factor).__name__}")
        self._factors.append(factor)
        self._pattern_cache = None

    def graph(self) -> FactorGraph:
        """Snapshot of the accumulated factors."""
        return FactorGraph(num_variables=self._n, factors=list(self._factors))

    # ---- estimates ----------------------------------------------------------

    def estimate(self) -> dict[int, Pose2]:
        if not self._updated:
            raise RuntimeError("estimate requested before the first update")
        return {k: self._pose_at(k) for k in range(self._n_solved)}

    def pose_estimate(self, key: int) -> Pose2:
        if not self._updated:
            raise RuntimeError("estimate requested before the first update")
        if not 0 <= key < self._n_solved:
            raise KeyError(f"variable {key} has no estimate yet")
        return self._pose_at(key)

    def _pose_at(self, key: int) -> Pose2:
        row = self._x.a[key]
        return Pose2(float(row[0]), float(row[1]), float(row[2]))

    # ---- solving ------------------------------------------------------------

    def _activate_pending(self) -> None:
        for key in self._pending:
            edge = self._first_between_to.get(key)
            if edge is not None and self._valued[edge[0]]:
                base = self._pose_at(edge[0])
                self._x.a[key] = base.compose(Pose2(*edge[1])).as_tuple()
            elif key > 0 and self._valued[key - 1]:
                self._x.a[key] = self._x.a[key - 1]
            else:
                self._x.a[key] = 0.0
            self._valued[key] = True
        self._pending.clear()

    def _pattern(self) -> dict:
        cached = self._pattern_cache
        if cached is not None and cached["n"] == self._n:
            return cached
        dim = 3 * self._n
        rows = np.concatenate(
            [self._un_rr.view()] + [self._bt_rr[k].view() for k in ("ff", "ft", "tf", "tt")]
        )
        cols = np.concatenate(
            [self._un_cc.view()] + [self._bt_cc[k].view() for k in ("ff", "ft", "tf", "tt")]
        )
        gidx = np.concatenate([self._g_un.view(), self._g_f.view(), self._g_t.view()])
        u = min(3 * self._max_span + 2, max(dim - 1, 0))
        pattern: dict = {"n": self._n, "dim": dim, "rows": rows, "cols": cols, "gidx": gidx, "u": u}
        if u <= _BAND_LIMIT:
            pattern["mode"] = "banded"
            mask = rows <= cols
            pattern["band_lin"] = (u + rows[mask] - cols[mask]) * dim + cols[mask]
            pattern["band_mask"] = mask
        else:
            pattern["mode"] = "sparse"
        self._pattern_cache = pattern
        return pattern

    def _error(self, X: np.ndarray) -> float:
        total = 0.0
        if self._un_keys.n:
            r = _v_log(_v_between(self._un_vals.view(), X[self._un_keys.view()]))
            rw = r * self._un_w.view()
            total += float(np.dot(rw.ravel(), rw.ravel()))
        if self._bt_from.n:
            actual = _v_between(X[self._bt_from.view()], X[self._bt_to.view()])
            r = _v_log(_v_between(self._bt_rel.view(), actual))
            rw = r * self._bt_w.view()
            total += float(np.dot(rw.ravel(), rw.ravel()))
        return 0.5 * total

    def _linearize(self, X: np.ndarray, pattern: dict):
        """Whitened normal-equation entries (H values in pattern order, g)."""
        h_parts = []
        g_parts = []
        if self._un_keys.n:
            z = _v_between(self._un_vals.view(), X[self._un_keys.view()])
            w = self._un_w.view()
            r, j = _v_log_dlog(z)
            rw = r * w
            jw = j * w[:, :, None]
            jwt = jw.transpose(0, 2, 1)
            h_parts.append(np.matmul(jwt, jw).ravel())
            g_parts.append(np.einsum("mij,mi->mj", jw, rw).ravel())
        if self._bt_from.n:
            actual = _v_between(X[self._bt_from.view()], X[self._bt_to.view()])
            z = _v_between(self._bt_rel.view(), actual)
            w = self._bt_w.view()
            r, jt = _v_log_dlog(z)
            rw = r * w
            # adjoint of actual^-1, then J_from = -J_to @ Ad
            c = np.cos(actual[:, 2])
            s = np.sin(actual[:, 2])
            ix = -(c * actual[:, 0] + s * actual[:, 1])
            iy = s * actual[:, 0] - c * actual[:, 1]
            ad = np.zeros((len(c), 3, 3))
            ad[:, 0, 0] = c
            ad[:, 0, 1] = s
            ad[:, 0, 2] = iy
            ad[:, 1, 0] = -s
            ad[:, 1, 1] = c
            ad[:, 1, 2] = -ix
            ad[:, 2, 2] = 1.0
            jf = -np.matmul(jt, ad)
            w3 = w[:, :, None]
            jfw = jf * w3
            jtw = jt * w3
            jfwt = jfw.transpose(0, 2, 1)
            jtwt = jtw.transpose(0, 2, 1)
            hft = np.matmul(jfwt, jtw)
            h_parts.append(np.matmul(jfwt, jfw).ravel())
            h_parts.append(hft.ravel())
            h_parts.append(hft.transpose(0, 2, 1).ravel())
            h_parts.append(np.matmul(jtwt, jtw).ravel())
            g_parts.append(np.einsum("mij,mi->mj", jfw, rw).ravel())
            g_parts.append(np.einsum("mij,mi->mj", jtw, rw).ravel())
        hvals = np.concatenate(h_parts)
        g = np.bincount(pattern["gidx"], weights=np.concatenate(g_parts), minlength=pattern["dim"])
        return hvals, g

    def _factorize(self, hvals: np.ndarray, pattern: dict):
        dim = pattern["dim"]
        if pattern["mode"] == "banded":
            u = pattern["u"]
            ab = np.bincount(
                pattern["band_lin"],
                weights=hvals[pattern["band_mask"]],
                minlength=(u + 1) * dim,
            ).reshape(u + 1, dim)
            try:
                cb = scipy.linalg.cholesky_banded(ab, lower=False)
            except np.linalg.LinAlgError as exc:
                raise GaugeError(f"normal equations are not positive definite: {exc}") from None
            return "banded", cb
        h = scipy.sparse.coo_matrix(
            (hvals, (pattern["rows"], pattern["cols"])), shape=(dim, dim)
        ).tocsc()
        try:
            lu = scipy.sparse.linalg.splu(
                h,
                permc_spec="MMD_AT_PLUS_A",
                diag_pivot_thresh=0.0,
                options={"SymmetricMode": True},
            )
        except RuntimeError as exc:
            raise GaugeError(f"normal equations are singular: {exc}") from None
        return "sparse", lu

    @staticmethod
    def _solve(mode: str, fact, rhs: np.ndarray) -> np.ndarray:
        if mode == "banded":
            return scipy.linalg.cho_solve_banded((fact, False), rhs)
        return fact.solve(rhs)

    def update(self) -> SolveReport:
        t0 = time.perf_counter()
        self._activate_pending()
        if self._n == 0:
            raise GaugeError("cannot update an empty graph")
        if self._un_keys.n == 0:
            raise GaugeError("graph has no prior or measurement factor to fix the gauge")
        cfg = self.settings
        pattern = self._pattern()
        X = self._x.view().copy()
        err = self._error(X)
        history = [err]
        iterations = 0
        converged = err <= cfg.absolute_tolerance
        if not converged:
            for _ in range(cfg.max_iterations):
                hvals, g = self._linearize(X, pattern)
                mode, fact = self._factorize(hvals, pattern)
                delta = self._solve(mode, fact, -g)
                if not np.all(np.isfinite(delta)):
                    raise GaugeError("normal equations produced a non-finite step")
                alpha = 1.0
                accepted = False
                for _ in range(cfg.max_step_halvings + 1):
                    trial = _v_compose(X, _v_exp(alpha * delta.reshape(-1, 3)))
                    trial_err = self._error(trial)
                    if trial_err <= err:
                        accepted = True
                        break
                    alpha *= 0.5
                if not accepted:
                    converged = bool(np.max(np.abs(delta)) < 1e-10) or err <= cfg.absolute_tolerance
                    break
                X = trial
                iterations += 1
                decrease = err - trial_err
                prev = err
                err = trial_err
                history.append(err)
                if err <= cfg.absolute_tolerance or decrease <= cfg.relative_tolerance * max(prev, 1e-300):
                    converged = True
                    break
        self._x.view()[:] = X
        self._n_solved = self._n
        self._updated = True
        self._estimate_version += 1
        return SolveReport(
            iterations=iterations,
            initial_error=history[0],
            final_error=err,
            converged=converged,
            duration_ms=(time.perf_counter() - t0) * 1e3,
            error_history=tuple(history),
        )

    # ---- marginals ----------------------------------------------------------

    def _marginal_factorization(self):
        if self._marginal_cache is not None and self._marginal_cache[0] == self._estimate_version:
            return self._marginal_cache[1], self._marginal_cache[2], self._marginal_cache[3]
        pattern = self._pattern()
        hvals, _ = self._linearize(self._x.view(), pattern)
        mode, fact = self._factorize(hvals, pattern)
        self._marginal_cache = (self._estimate_version, mode, fact, pattern["dim"])
        return mode, fact, pattern["dim"]

    def marginal_sigma(self, key: int) -> tuple[float, float, float]:
        """Sigmas of the tangent-space marginal at the current estimate."""
        if not self._updated:
            raise RuntimeError("marginals requested before the first update")
        if not 0 <= key < self._n_solved:
            raise KeyError(f"variable {key} has no estimate yet")
        if self._n != self._n_solved or self._pending:
            raise RuntimeError("marginals requested with pending variables; call update() first")
        mode, fact, dim = self._marginal_factorization()
        rhs = np.zeros((dim, 3))
        rhs[3 * key, 0] = 1.0
        rhs[3 * key + 1, 1] = 1.0
        rhs[3 * key + 2, 2] = 1.0
        sol = self._solve(mode, fact, rhs)
        var = np.array([sol[3 * key + i, i] for i in range(3)])
        if not np.all(np.isfinite(var)) or np.any(var <= 0.0):
            raise GaugeError("marginal covariance is not positive definite")
        return (math.sqrt(var[0]), math.sqrt(var[1]), math.sqrt(var[2]))
