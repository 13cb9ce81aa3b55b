# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops: counter-based normals and streamed first passage.

Mirrors ``_fallback`` step for step; see that module for the conventions.
"""
import numpy as np
cimport numpy as cnp
from cython.parallel cimport prange
from libc.math cimport sqrt, log, sin, cos, exp, fmin, NAN, M_PI
from libc.stdint cimport uint64_t, int64_t

cnp.import_array()

cdef uint64_t _M1 = 0xBF58476D1CE4E5B9ULL
cdef uint64_t _M2 = 0x94D049BB133111EBULL
cdef uint64_t _GOLDEN = 0x9E3779B97F4A7C15ULL
cdef uint64_t _STREAM_MUL = 0xD6E8FEB86659FD93ULL
cdef uint64_t _SEED_XOR = 0x5851F42D4C957F2DULL
cdef double _TWO53 = 1.1102230246251565e-16


cdef inline uint64_t _mix64(uint64_t z) noexcept nogil:
    z = (z ^ (z >> 30)) * _M1
    z = (z ^ (z >> 27)) * _M2
    return z ^ (z >> 31)


cdef inline uint64_t _seed_key(uint64_t seed) noexcept nogil:
    return _mix64(seed ^ _SEED_XOR)


cdef inline uint64_t _stream_key(uint64_t seed_key, uint64_t path, uint64_t stream) noexcept nogil:
    cdef uint64_t k = _mix64(seed_key + (path + 1) * _GOLDEN)
    return _mix64(k + (stream + 1) * _STREAM_MUL)


cdef inline double _uniform(uint64_t key, uint64_t counter) noexcept nogil:
    cdef uint64_t u = _mix64(key + (counter + 1) * _GOLDEN)
    return (<double>(u >> 11) + 0.5) * _TWO53


cdef inline double _normal(uint64_t key, uint64_t counter) noexcept nogil:
    cdef uint64_t pair = (counter >> 1) * 2
    cdef double r = sqrt(-2.0 * log(_uniform(key, pair)))
    cdef double theta = 2.0 * M_PI * _uniform(key, pair + 1)
    if counter & 1:
        return r * sin(theta)
    return r * cos(theta)


cdef inline double _bridge_hit_time(double d0, double d1, double dur, double z, double u) noexcept nogil:
    cdef double mean, shape, q, x, v
    shape = d0 * d0
    if d1 == 0.0:
        v = shape / (z * z)
    else:
        mean = d0 * dur / (d1 if d1 > 0.0 else -d1)
        q = mean * z * z / (2.0 * shape)
        x = mean / (1.0 + q + sqrt(q * q + 2.0 * q))
        if u <= mean / (mean + x):
            v = x
        else:
            v = mean * mean / x
    if v != v or v > 1e300:
        return dur
    return v * dur / (dur + v)


def normal_block(uint64_t seed, int64_t path_start, int64_t n_paths, int64_t step_start,
                 int64_t n_steps, int64_t stream=0, int n_threads=1):
    out = np.empty((n_paths, n_steps), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef uint64_t sk = _seed_key(seed)
    cdef uint64_t key
    cdef Py_ssize_t p, i
    for p in prange(n_paths, nogil=True, num_threads=n_threads, schedule="static"):
        key = _stream_key(sk, <uint64_t>(path_start + p), <uint64_t>stream)
        for i in range(n_steps):
            o[p, i] = _normal(key, <uint64_t>(step_start + i))
    return out


def uniform_block(uint64_t seed, int64_t path_start, int64_t n_paths, int64_t step_start,
                  int64_t n_steps, int64_t stream, int n_threads=1):
    out = np.empty((n_paths, n_steps), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef uint64_t sk = _seed_key(seed)
    cdef uint64_t key
    cdef Py_ssize_t p, i
    for p in prange(n_paths, nogil=True, num_threads=n_threads, schedule="static"):
        key = _stream_key(sk, <uint64_t>(path_start + p), <uint64_t>stream)
        for i in range(n_steps):
            o[p, i] = _uniform(key, <uint64_t>(step_start + i))
    return out


cdef void _one_path(uint64_t sk, int64_t path, double dt, int64_t max_steps, double slope,
                    const double[::1] ic, const double[::1] drifts, bint bridge,
                    const int64_t[::1] rec, double[:, ::1] tau, double[:, ::1] wrec,
                    double[::1] w_stop, double[::1] t_stop, double[::1] log_lr,
                    Py_ssize_t row) noexcept nogil:
    cdef Py_ssize_t n_bar = ic.shape[0]
    cdef Py_ssize_t n_rec = rec.shape[0]
    cdef Py_ssize_t k = 0, r = 0, j
    cdef int64_t step = 0
    cdef uint64_t key0 = _stream_key(sk, <uint64_t>path, 0)
    cdef double sdt = sqrt(dt)
    cdef double w = 0.0, w1, dw, mu, t0, t1, d0, d1, p, s0, x0, dur, s, tt, z, u, logl = 0.0
    cdef double r_bm = 0.0, th_bm = 0.0, z_odd = 0.0, expo
    cdef bint fire
    cdef uint64_t bkeys[16]
    for j in range(n_bar if n_bar < 16 else 16):
        bkeys[j] = _stream_key(sk, <uint64_t>path, <uint64_t>(1 + 3 * j))

    for j in range(n_bar):
        tau[row, j] = NAN
    for j in range(n_rec):
        wrec[row, j] = NAN
    while k < n_bar and ic[k] >= 0.0:
        tau[row, k] = 0.0
        k += 1
    while r < n_rec and rec[r] == 0:
        wrec[row, r] = 0.0
        r += 1

    while k < n_bar and step < max_steps:
        mu = drifts[k]
        if step & 1:
            z = z_odd
        else:
            r_bm = sqrt(-2.0 * log(_uniform(key0, <uint64_t>step)))
            th_bm = 2.0 * M_PI * _uniform(key0, <uint64_t>(step + 1))
            z = r_bm * cos(th_bm)
            z_odd = r_bm * sin(th_bm)
        dw = mu * dt + sdt * z
        w1 = w + dw
        t0 = (<double>step) * dt
        t1 = (<double>(step + 1)) * dt
        logl = logl + (-mu * dw + 0.5 * mu * mu * dt)
        d0 = w - (slope * t0 + ic[k])
        d1 = w1 - (slope * t1 + ic[k])
        fire = d1 <= 0.0
        if not fire and bridge:
            # uniforms never fall below 2**-54, so tiny crossing probabilities cannot fire
            expo = -2.0 * d0 * d1 / dt
            if expo > -38.0:
                p = exp(expo)
                if k < 16:
                    fire = _uniform(bkeys[k], <uint64_t>step) < p
                else:
                    fire = _uniform(_stream_key(sk, <uint64_t>path, <uint64_t>(1 + 3 * k)), <uint64_t>step) < p
        if fire:
            s0 = t0
            x0 = w
            while k < n_bar:
                d0 = x0 - (slope * s0 + ic[k])
                d1 = w1 - (slope * t1 + ic[k])
                dur = t1 - s0
                fire = d1 <= 0.0
                if bridge:
                    p = exp(-2.0 * d0 * (d1 if d1 > 0.0 else 0.0) / dur)
                    u = _uniform(_stream_key(sk, <uint64_t>path, <uint64_t>(1 + 3 * k)), <uint64_t>step)
                    fire = fire or (u < p)
                if not fire:
                    break
                if bridge:
                    z = _normal(_stream_key(sk, <uint64_t>path, <uint64_t>(2 + 3 * k)), <uint64_t>step)
                    u = _uniform(_stream_key(sk, <uint64_t>path, <uint64_t>(3 + 3 * k)), <uint64_t>step)
                    s = _bridge_hit_time(d0, d1, dur, z, u)
                else:
                    s = dur * d0 / (d0 - d1)
                tt = fmin(s0 + s, t1)
                tau[row, k] = tt
                s0 = tt
                x0 = slope * tt + ic[k]
                k += 1
        w = w1
        step += 1
        while r < n_rec and rec[r] == step:
            wrec[row, r] = w
            r += 1
        while r < n_rec and rec[r] < step:
            r += 1

    log_lr[row] = logl
    if k >= n_bar and n_bar > 0:
        t_stop[row] = tau[row, n_bar - 1]
        w_stop[row] = slope * t_stop[row] + ic[n_bar - 1]
        for j in range(n_rec):
            if (<double>rec[j]) * dt > t_stop[row]:
                wrec[row, j] = w_stop[row]
    else:
        t_stop[row] = (<double>step) * dt
        w_stop[row] = w


def first_passage(uint64_t seed, int64_t path_start, int64_t n_paths, double dt, int64_t max_steps,
                  double slope, intercepts, drifts, bint bridge, record_steps, int n_threads=1):
    cdef const double[::1] ic = np.ascontiguousarray(intercepts, dtype=np.float64)
    cdef const double[::1] dr = np.ascontiguousarray(drifts, dtype=np.float64)
    cdef const int64_t[::1] rec = np.ascontiguousarray(record_steps, dtype=np.int64)
    n_bar = ic.shape[0]
    tau_a = np.empty((n_paths, n_bar), dtype=np.float64)
    wrec_a = np.empty((n_paths, rec.shape[0]), dtype=np.float64)
    ws_a = np.empty(n_paths, dtype=np.float64)
    ts_a = np.empty(n_paths, dtype=np.float64)
    ll_a = np.empty(n_paths, dtype=np.float64)
    cdef double[:, ::1] tau = tau_a
    cdef double[:, ::1] wrec = wrec_a
    cdef double[::1] ws = ws_a
    cdef double[::1] ts = ts_a
    cdef double[::1] ll = ll_a
    cdef uint64_t sk = _seed_key(seed)
    cdef Py_ssize_t p
    for p in prange(n_paths, nogil=True, num_threads=n_threads, schedule="dynamic"):
        _one_path(sk, path_start + p, dt, max_steps, slope, ic, dr, bridge, rec,
                  tau, wrec, ws, ts, ll, p)
    return tau_a, wrec_a, ws_a, ts_a, ll_a
