# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops.  Behaviour matches ``_pykernels`` exactly in
selection and up to summation order in arithmetic."""
import numpy as np
cimport numpy as cnp
from libc.math cimport INFINITY, fabs, pow

cnp.import_array()


cdef inline double _soft(double x, double lam) nogil:
    if x > lam:
        return x - lam
    if x < -lam:
        return x + lam
    return 0.0


cdef double _objective(double[::1, :] X, double[::1] r, double[::1] w, double lam) nogil:
    cdef Py_ssize_t n = X.shape[0], p = X.shape[1], i, j
    cdef double rss = 0.0, l1 = 0.0
    for i in range(n):
        rss += r[i] * r[i]
    for j in range(p):
        l1 += fabs(w[j])
    return 0.5 * rss / n + lam * l1


def lasso_cd(double[::1, :] X, double[::1] y, double lam, int max_iters, double tol,
             double[::1] w0):
    """Cyclic coordinate descent on centred ``X``/``y``.

    Returns ``(w, n_sweeps, converged, objective_per_sweep)``; the first
    objective entry is the value at ``w0``.
    """
    cdef Py_ssize_t n = X.shape[0], p = X.shape[1], i, j
    cdef double[::1] w = np.array(w0, dtype=np.float64, copy=True)
    cdef double[::1] r = np.array(y, dtype=np.float64, copy=True)
    cdef double[::1] col_sq = np.zeros(p)
    cdef double rho, new, delta, max_delta
    cdef int sweep = 0
    cdef bint converged = False
    objectives = []
    with nogil:
        for j in range(p):
            for i in range(n):
                col_sq[j] += X[i, j] * X[i, j]
                r[i] -= X[i, j] * w[j]
            col_sq[j] /= n
    objectives.append(_objective(X, r, w, lam))
    while sweep < max_iters:
        max_delta = 0.0
        with nogil:
            for j in range(p):
                if col_sq[j] == 0.0:
                    continue
                rho = 0.0
                for i in range(n):
                    rho += X[i, j] * r[i]
                rho = rho / n + col_sq[j] * w[j]
                new = _soft(rho, lam) / col_sq[j]
                delta = new - w[j]
                if delta != 0.0:
                    for i in range(n):
                        r[i] -= X[i, j] * delta
                    w[j] = new
                if fabs(delta) > max_delta:
                    max_delta = fabs(delta)
        sweep += 1
        objectives.append(_objective(X, r, w, lam))
        if max_delta < tol:
            converged = True
            break
    return np.asarray(w), sweep, bool(converged), objectives


def knn_predict(double[:, ::1] train, double[::1] targets, double[:, ::1] queries,
                int k, double p):
    """Mean target of the ``k`` nearest rows; ties go to the lower row index."""
    cdef Py_ssize_t n = train.shape[0], d = train.shape[1], m = queries.shape[0]
    cdef Py_ssize_t q, i, c, pos, filled
    cdef double dist, diff, acc
    cdef double[::1] out = np.empty(m)
    cdef double[::1] best_d = np.empty(k)
    cdef Py_ssize_t[::1] best_i = np.empty(k, dtype=np.intp)
    cdef bint euclid = p == 2.0
    # small integer exponents: repeated multiplication instead of pow()
    cdef int ip = <int>p if (p == <int>p and p <= 16) else 0
    cdef int e
    cdef double term, bound
    with nogil:
        for q in range(m):
            filled = 0
            for i in range(n):
                dist = 0.0
                bound = best_d[k - 1] if filled == k else INFINITY
                if euclid:
                    for c in range(d):
                        diff = train[i, c] - queries[q, c]
                        dist += diff * diff
                else:
                    for c in range(d):
                        diff = fabs(train[i, c] - queries[q, c])
                        if ip:
                            term = diff
                            for e in range(1, ip):
                                term *= diff
                            dist += term
                        else:
                            dist += pow(diff, p)
                        if dist > bound:  # cannot enter the current top k
                            break
                if filled == k and dist >= best_d[k - 1]:
                    continue
                pos = filled if filled < k else k - 1
                while pos > 0 and best_d[pos - 1] > dist:
                    if pos < k:
                        best_d[pos] = best_d[pos - 1]
                        best_i[pos] = best_i[pos - 1]
                    pos -= 1
                best_d[pos] = dist
                best_i[pos] = i
                if filled < k:
                    filled += 1
            acc = 0.0
            for c in range(k):
                acc += targets[best_i[c]]
            out[q] = acc / k
    return np.asarray(out)
