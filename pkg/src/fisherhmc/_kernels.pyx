# cython: language_level=3
"""Compiled NUTS transition.

Mirrors ``nuts.nuts_transition_python`` operation for operation. Phase
points live in a preallocated pool of slots (one per leapfrog state), so a
transition allocates nothing. Gaussian targets are evaluated in C; any other
target is called back through its Python ``eval``.
"""

import numpy as np

from libc.math cimport exp, fabs, isfinite, isnan, log1p, INFINITY
from scipy.linalg.cython_blas cimport ddot, dgemv

cdef double DIVERGENCE_THRESHOLD = 1000.0


cdef inline double _logaddexp(double a, double b) noexcept:
    if a == b:
        return a + 0.6931471805599453
    if a > b:
        return a + log1p(exp(b - a))
    return b + log1p(exp(a - b))


cdef inline double _accept(double delta_h, int phase) noexcept:
    cdef double a
    if isnan(delta_h):
        return 0.0
    if phase == 3:
        a = fabs(delta_h)
        if a > 700.0:
            return 0.0
        return 2.0 / (1.0 + exp(a))
    if delta_h >= 0:
        return 1.0
    return exp(delta_h)


def acceptance_statistic(double delta_h, int phase):
    return _accept(delta_h, phase)


cdef class NutsKernel:
    """Per-chain workspace for NUTS transitions of a fixed dimension and depth."""

    cdef int d, max_depth, n_slots, next_slot
    cdef int kind, r
    cdef double[::1] diag, lam_m1
    cdef double[:, ::1] mat
    cdef int native
    cdef object target
    cdef double[::1] mu_t
    cdef double[:, ::1] prec_t
    cdef double[:, ::1] X, R, G, V
    cdef double[::1] LP, E
    cdef double[::1] work, work_r
    cdef double eps, h0, sum_accept, max_abs_dh
    cdef int phase, n_merge, n_leap, divergent
    cdef const double[::1] merge_u

    def __init__(self, int d, int max_depth):
        if d < 1 or max_depth < 0 or max_depth > 30:
            raise ValueError("bad kernel dimensions")
        self.d = d
        self.max_depth = max_depth
        self.n_slots = (1 << max_depth) + 1
        self.X = np.zeros((self.n_slots, d))
        self.R = np.zeros((self.n_slots, d))
        self.G = np.zeros((self.n_slots, d))
        self.V = np.zeros((self.n_slots, d))
        self.LP = np.zeros(self.n_slots)
        self.E = np.zeros(self.n_slots)
        self.work = np.zeros(d)
        self.work_r = np.zeros(1)
        self.kind = -1
        self.native = 0

    def set_mass(self, int kind, diag, mat, lam):
        """kind 0: diag = sigma2; 1: mat = inverse mass; 2: diag = sigma, mat = U, lam."""
        self.kind = kind
        self.diag = np.ascontiguousarray(diag, dtype=float) if diag is not None else np.ones(self.d)
        if mat is None:
            self.mat = np.zeros((self.d, 0))
        else:
            self.mat = np.ascontiguousarray(mat, dtype=float).reshape(self.d, -1)
        self.r = self.mat.shape[1] if kind == 2 else 0
        if kind == 2:
            self.lam_m1 = np.ascontiguousarray(lam, dtype=float) - 1.0
            self.work_r = np.zeros(max(self.r, 1))
        if kind == 1 and self.mat.shape[1] != self.d:
            raise ValueError("dense inverse mass must be d x d")

    def set_target(self, target, native=None):
        self.target = target
        if native is None:
            self.native = 0
        else:
            mu, prec = native
            self.mu_t = np.ascontiguousarray(mu, dtype=float)
            self.prec_t = np.ascontiguousarray(prec, dtype=float)
            self.native = 1

    cdef void _velocity(self, double* rho, double* v) noexcept:
        cdef int i, j, d = self.d, r = self.r
        cdef int one = 1
        cdef double alpha = 1.0, beta = 0.0
        cdef double* t
        cdef double* w
        if self.kind == 0:
            for i in range(d):
                v[i] = self.diag[i] * rho[i]
        elif self.kind == 1:
            dgemv("T", &d, &d, &alpha, &self.mat[0, 0], &d, rho, &one, &beta, v, &one)
        else:
            t = &self.work[0]
            for i in range(d):
                t[i] = self.diag[i] * rho[i]
                v[i] = t[i]
            if r > 0:
                w = &self.work_r[0]
                dgemv("N", &r, &d, &alpha, &self.mat[0, 0], &r, t, &one, &beta, w, &one)
                for j in range(r):
                    w[j] *= self.lam_m1[j]
                beta = 1.0
                dgemv("T", &r, &d, &alpha, &self.mat[0, 0], &r, w, &one, &beta, v, &one)
            for i in range(d):
                v[i] *= self.diag[i]

    cdef int _eval(self, int s) except -1:
        cdef int i, d = self.d, one = 1
        cdef double alpha = -1.0, beta = 0.0
        cdef double* x = &self.X[s, 0]
        cdef double* g = &self.G[s, 0]
        cdef double* res
        if self.native:
            res = &self.work[0]
            for i in range(d):
                res[i] = x[i] - self.mu_t[i]
            dgemv("T", &d, &d, &alpha, &self.prec_t[0, 0], &d, res, &one, &beta, g, &one)
            self.LP[s] = 0.5 * ddot(&d, res, &one, g, &one)
            return 0
        logp, score = self.target.eval(np.array(self.X[s]))
        score = np.asarray(score, dtype=float)
        for i in range(d):
            g[i] = score[i]
        self.LP[s] = float(logp)
        return 0

    cdef void _energy(self, int s) noexcept:
        cdef int i, d = self.d, one = 1
        cdef double e
        self._velocity(&self.R[s, 0], &self.V[s, 0])
        e = -self.LP[s] + 0.5 * ddot(&d, &self.R[s, 0], &one, &self.V[s, 0], &one)
        if isfinite(e):
            for i in range(d):
                if not isfinite(self.G[s, i]):
                    e = INFINITY
                    break
        else:
            e = INFINITY
        self.E[s] = e

    cdef int _leapfrog(self, int src, int dst, double eps) except -1:
        """Step src -> dst. Returns 0 if the position left the finite reals."""
        cdef int i, d = self.d
        cdef double half = 0.5 * eps
        for i in range(d):
            self.R[dst, i] = self.R[src, i] + half * self.G[src, i]
        self._velocity(&self.R[dst, 0], &self.V[dst, 0])
        for i in range(d):
            self.X[dst, i] = self.X[src, i] + eps * self.V[dst, i]
            if not isfinite(self.X[dst, i]):
                return 0
        self._eval(dst)
        for i in range(d):
            self.R[dst, i] = self.R[dst, i] + half * self.G[dst, i]
        self._energy(dst)
        return 1

    cdef bint _uturn(self, int a, int b, int direction) noexcept:
        cdef int i
        cdef double s, da = 0.0, db = 0.0
        for i in range(self.d):
            s = self.X[b, i] - self.X[a, i]
            if direction < 0:
                s = -s
            da += self.R[a, i] * s
            db += self.R[b, i] * s
        return da < 0.0 or db < 0.0

    cdef int _build(self, int edge, int direction, int depth,
                    int* first, int* last, int* sample, double* logw) except -1:
        cdef int s, f1, l1, s1, f2, l2, s2
        cdef double w1, w2, lw, dh, u
        if depth == 0:
            s = self.next_slot
            self.next_slot += 1
            if not self._leapfrog(edge, s, direction * self.eps):
                self.divergent = 1
                self.max_abs_dh = INFINITY
                return 0
            self.n_leap += 1
            dh = self.E[s] - self.h0
            if not isfinite(dh) or dh > DIVERGENCE_THRESHOLD:
                self.divergent = 1
                if isnan(dh):
                    self.max_abs_dh = INFINITY
                elif fabs(dh) > self.max_abs_dh:
                    self.max_abs_dh = fabs(dh)
                return 0
            if fabs(dh) > self.max_abs_dh:
                self.max_abs_dh = fabs(dh)
            self.sum_accept += _accept(-dh, self.phase)
            first[0] = s
            last[0] = s
            sample[0] = s
            logw[0] = -dh
            return 1
        if not self._build(edge, direction, depth - 1, &f1, &l1, &s1, &w1):
            return 0
        if not self._build(l1, direction, depth - 1, &f2, &l2, &s2, &w2):
            return 0
        lw = _logaddexp(w1, w2)
        u = self.merge_u[self.n_merge]
        self.n_merge += 1
        sample[0] = s2 if u < exp(w2 - lw) else s1
        if self._uturn(f1, l2, direction) or self._uturn(f1, f2, direction) or self._uturn(l1, l2, direction):
            return 0
        first[0] = f1
        last[0] = l2
        logw[0] = lw
        return 1

    def transition(self, const double[::1] x, double logp, const double[::1] score,
                   const double[::1] rho0, double eps, const double[::1] u, int phase):
        """Returns (x, logp, score, delta_h, accept_stat, depth, n_leapfrog, divergent)."""
        cdef int i, d = self.d, D = self.max_depth
        cdef int minus = 0, plus = 0, sample = 0, edge, far, direction, depth = 0
        cdef int f, l, s, ok
        cdef double w, logw_total = 0.0, dh
        if self.kind < 0:
            raise RuntimeError("mass matrix not set")
        if x.shape[0] != d or score.shape[0] != d or rho0.shape[0] != d:
            raise ValueError("dimension mismatch")
        if u.shape[0] < 2 * D + (1 << D):
            raise ValueError("not enough uniforms")
        for i in range(d):
            self.X[0, i] = x[i]
            self.G[0, i] = score[i]
            self.R[0, i] = rho0[i]
            if not isfinite(x[i]):
                raise ValueError("bad initial point: non-finite position")
        self.LP[0] = logp
        self._energy(0)
        if not isfinite(self.E[0]):
            raise ValueError("bad initial point: non-finite log density or score")
        self.h0 = self.E[0]
        self.eps = eps
        self.phase = phase
        self.next_slot = 1
        self.n_merge = 0
        self.n_leap = 0
        self.sum_accept = 0.0
        self.max_abs_dh = 0.0
        self.divergent = 0

        if D == 0:
            if not self._leapfrog(0, 1, eps):
                return self._result(0, INFINITY, 0.0, 0, 0, 1)
            dh = self.E[1] - self.h0
            if not isfinite(dh) or dh > DIVERGENCE_THRESHOLD:
                return self._result(0, INFINITY if isnan(dh) else fabs(dh), 0.0, 0, 1, 1)
            w = -dh
            s = 1 if (w >= 0 or u[0] < exp(w)) else 0
            return self._result(s, fabs(w), _accept(w, phase), 0, 1, 0)

        self.merge_u = u[2 * D:]
        while depth < D:
            direction = 1 if u[depth] < 0.5 else -1
            edge = plus if direction > 0 else minus
            far = minus if direction > 0 else plus
            ok = self._build(edge, direction, depth, &f, &l, &s, &w)
            depth += 1
            if not ok:
                break
            if w > logw_total or u[D + depth - 1] < exp(w - logw_total):
                sample = s
            logw_total = _logaddexp(logw_total, w)
            if direction > 0:
                plus = l
            else:
                minus = l
            if self._uturn(far, l, direction) or self._uturn(far, f, direction) or self._uturn(edge, l, direction):
                break
        accept = self.sum_accept / self.n_leap if self.n_leap > 0 else 0.0
        return self._result(sample, self.max_abs_dh, accept, depth, self.n_leap, self.divergent)

    cdef tuple _result(self, int s, double delta_h, double accept, int depth, int n_leap, int divergent):
        return (
            np.array(self.X[s]),
            self.LP[s],
            np.array(self.G[s]),
            delta_h,
            accept,
            depth,
            n_leap,
            bool(divergent),
        )
