"""Pure-numpy kernels, numerically matched to the compiled ``_kernels`` module.

Every random number is a function of ``(seed, path, stream, counter)`` only,
so results do not depend on chunking, ordering or worker count.  Node ``i``
of a uniform grid sits at ``float(i) * dt`` in both implementations.
"""
import numpy as np

_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_STREAM_MUL = np.uint64(0xD6E8FEB86659FD93)
_SEED_XOR = np.uint64(0x5851F42D4C957F2D)
_TWO53 = 2.0 ** -53

STREAM_NORMAL = 0


def bridge_stream(barrier):
    return 1 + 3 * barrier


def ig_normal_stream(barrier):
    return 2 + 3 * barrier


def ig_uniform_stream(barrier):
    return 3 + 3 * barrier


def _mix64(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def stream_keys(seed, paths, streams):
    """64-bit substream keys; ``paths`` and ``streams`` broadcast."""
    s = np.array([int(seed) % 2**64], dtype=np.uint64)
    k = _mix64(s ^ _SEED_XOR)
    p = np.asarray(paths, dtype=np.uint64)
    st = np.asarray(streams, dtype=np.uint64)
    k = _mix64(k + (p + np.uint64(1)) * _GOLDEN)
    return _mix64(k + (st + np.uint64(1)) * _STREAM_MUL)


def _uniform_from_keys(keys, counters):
    u = _mix64(keys + (counters + np.uint64(1)) * _GOLDEN)
    return ((u >> np.uint64(11)).astype(np.float64) + 0.5) * _TWO53


def uniforms(seed, paths, streams, counters):
    """Uniforms on (0, 1); all index arguments broadcast together."""
    paths, streams, counters = np.broadcast_arrays(
        np.asarray(paths, dtype=np.uint64), np.asarray(streams, dtype=np.uint64),
        np.asarray(counters, dtype=np.uint64))
    return _uniform_from_keys(stream_keys(seed, paths, streams), counters)


def normals(seed, paths, streams, counters):
    """Standard normals by Box-Muller on counter pairs (2k, 2k+1)."""
    paths, streams, counters = np.broadcast_arrays(
        np.asarray(paths, dtype=np.uint64), np.asarray(streams, dtype=np.uint64),
        np.asarray(counters, dtype=np.uint64))
    keys = stream_keys(seed, paths, streams)
    pair = (counters >> np.uint64(1)) * np.uint64(2)
    u1 = _uniform_from_keys(keys, pair)
    u2 = _uniform_from_keys(keys, pair + np.uint64(1))
    r = np.sqrt(-2.0 * np.log(u1))
    theta = 2.0 * np.pi * u2
    odd = (counters & np.uint64(1)).astype(bool)
    return np.where(odd, r * np.sin(theta), r * np.cos(theta))


def normal_block(seed, path_start, n_paths, step_start, n_steps, stream=STREAM_NORMAL):
    paths = np.arange(path_start, path_start + n_paths, dtype=np.uint64)[:, None]
    steps = np.arange(step_start, step_start + n_steps, dtype=np.uint64)[None, :]
    return normals(seed, paths, stream, steps)


def uniform_block(seed, path_start, n_paths, step_start, n_steps, stream):
    paths = np.arange(path_start, path_start + n_paths, dtype=np.uint64)[:, None]
    steps = np.arange(step_start, step_start + n_steps, dtype=np.uint64)[None, :]
    return uniforms(seed, paths, stream, steps)


def inverse_gaussian(mean, shape, z, u):
    """Michael-Schucany-Haas transform of one normal and one uniform.

    ``mean = inf`` gives the Levy limit ``shape / z**2``.
    """
    mean = np.asarray(mean, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        q = mean * z * z / (2.0 * shape)
        x = mean / (1.0 + q + np.sqrt(q * q + 2.0 * q))
        out = np.where(u <= mean / (mean + x), x, mean * mean / x)
        levy = shape / (z * z)
    return np.where(np.isfinite(mean), out, levy)


def bridge_hit_time(d0, d1, duration, z, u):
    """Exact first time a Brownian bridge from ``d0 > 0`` to ``d1`` hits zero.

    Conditional on a hit, the time-changed bridge is a drifted Brownian motion
    whose passage time is inverse Gaussian with mean ``d0 * T / |d1|`` and
    shape ``d0**2``; ``s = v T / (T + v)`` maps it back.
    """
    with np.errstate(divide="ignore"):
        mean = np.where(d1 == 0.0, np.inf, d0 * duration / np.abs(d1))
    v = inverse_gaussian(mean, d0 * d0, z, u)
    with np.errstate(invalid="ignore"):
        s = v * duration / (duration + v)
    return np.where(np.isfinite(v), s, duration)


def resolve_interval(seed, paths, steps, t0, t1, w0, w1, k, slope, intercepts, bridge):
    """Advance hit counters ``k`` through the grid interval ``[t0, t1]``.

    Each firing barrier restarts the bridge from its own hitting point, so
    several nested barriers may fire inside one interval.  Returns
    ``(k_new, taus)`` with NaN for barriers that did not fire here.
    """
    n = len(paths)
    n_bar = len(intercepts)
    taus = np.full((n, n_bar), np.nan)
    k = np.array(k, dtype=np.int64)
    paths = np.asarray(paths, dtype=np.int64)
    steps = np.broadcast_to(np.asarray(steps, dtype=np.int64), (n,))
    s0 = np.array(np.broadcast_to(t0, (n,)), dtype=float)
    t_end = np.array(np.broadcast_to(t1, (n,)), dtype=float)
    x0 = np.array(w0, dtype=float)
    w1 = np.asarray(w1, dtype=float)
    active = k < n_bar
    while np.any(active):
        idx = np.nonzero(active)[0]
        kk = k[idx]
        ic = intercepts[kk]
        d0 = x0[idx] - (slope * s0[idx] + ic)
        d1 = w1[idx] - (slope * t_end[idx] + ic)
        dur = t_end[idx] - s0[idx]
        fire = d1 <= 0.0
        if bridge:
            ub = uniforms(seed, paths[idx], bridge_stream(kk), steps[idx])
            with np.errstate(over="ignore"):
                p = np.exp(-2.0 * d0 * np.maximum(d1, 0.0) / dur)
            fire = fire | (ub < p)
        active[idx[~fire]] = False
        if not np.any(fire):
            break
        hit = idx[fire]
        hk = kk[fire]
        hd0, hd1, hdur = d0[fire], d1[fire], dur[fire]
        if bridge:
            z = normals(seed, paths[hit], ig_normal_stream(hk), steps[hit])
            u = uniforms(seed, paths[hit], ig_uniform_stream(hk), steps[hit])
            s = bridge_hit_time(hd0, hd1, hdur, z, u)
        else:
            s = hdur * hd0 / (hd0 - hd1)
        tau = np.minimum(s0[hit] + s, t_end[hit])
        taus[hit, hk] = tau
        s0[hit] = tau
        x0[hit] = slope * tau + intercepts[hk]
        k[hit] = hk + 1
        active[hit] = k[hit] < n_bar
    return k, taus


def _interval_events(seed, paths, k, counters, valid, d0, d1, dt, bridge):
    event = (d1 <= 0.0) & valid
    if bridge:
        ub = uniforms(seed, paths[:, None], bridge_stream(k)[:, None], np.where(valid, counters, 0))
        with np.errstate(over="ignore", invalid="ignore"):
            p = np.exp(-2.0 * d0 * np.maximum(d1, 0.0) / dt)
        event |= (ub < p) & valid
    return event


def first_passage(seed, path_start, n_paths, dt, max_steps, slope, intercepts, drifts,
                  bridge, record_steps, block=512):
    """Stream Brownian paths until every barrier ``W <= slope*t + c_j`` is hit.

    Barriers are ordered from highest intercept to lowest; ``drifts[k]`` is the
    proposal drift used on grid steps that start with ``k`` barriers hit.
    Returns ``(tau, w_record, w_stop, t_stop, log_lr)`` where ``log_lr`` is
    the exact log-likelihood ratio of the driftless law against the proposal
    on the consumed grid increments.
    """
    intercepts = np.asarray(intercepts, dtype=float)
    drifts = np.asarray(drifts, dtype=float)
    record_steps = np.asarray(record_steps, dtype=np.int64)
    n_bar = len(intercepts)
    sdt = np.sqrt(dt)
    tau = np.full((n_paths, n_bar), np.nan)
    w_record = np.full((n_paths, len(record_steps)), np.nan)
    w_stop = np.zeros(n_paths)
    t_stop = np.zeros(n_paths)
    log_lr = np.zeros(n_paths)

    paths = np.arange(path_start, path_start + n_paths, dtype=np.int64)
    k = np.zeros(n_paths, dtype=np.int64)
    for j in range(n_bar):
        at_zero = (k == j) & (intercepts[j] >= 0.0)
        tau[at_zero, j] = 0.0
        k[at_zero] += 1
    w = np.zeros(n_paths)
    step = np.zeros(n_paths, dtype=np.int64)
    if len(record_steps):
        w_record[:, record_steps == 0] = 0.0

    alive = np.nonzero(k < n_bar)[0]
    while alive.size:
        alive = alive[step[alive] < max_steps]
        if not alive.size:
            break
        nb = np.minimum(block, max_steps - step[alive])
        width = int(nb.max())
        offs = np.arange(width, dtype=np.int64)[None, :]
        counters = step[alive][:, None] + offs
        valid = offs < nb[:, None]
        z = normals(seed, paths[alive][:, None], 0, np.where(valid, counters, 0))
        ka = k[alive]
        mu = drifts[ka]
        dw = np.where(valid, mu[:, None] * dt + sdt * z, 0.0)
        wpath = np.cumsum(np.concatenate([w[alive][:, None], dw], axis=1), axis=1)
        nodes = (step[alive][:, None] + np.arange(width + 1)[None, :]).astype(float) * dt
        dist = wpath - (slope * nodes + intercepts[ka][:, None])
        d0 = dist[:, :-1]
        d1 = dist[:, 1:]
        event = _interval_events(seed, paths[alive], ka, counters, valid, d0, d1, dt, bridge)
        has = event.any(axis=1)
        first = event.argmax(axis=1)
        used = np.where(has, first + 1, nb)
        consumed = offs < used[:, None]
        log_lr[alive] += np.sum(np.where(consumed, -mu[:, None] * dw + 0.5 * mu[:, None] ** 2 * dt, 0.0), axis=1)

        if len(record_steps):
            for r, rs in enumerate(record_steps):
                off = rs - step[alive]
                inside = (off >= 1) & (off <= used)
                if np.any(inside):
                    rows = np.nonzero(inside)[0]
                    w_record[alive[rows], r] = wpath[rows, off[rows]]

        quiet = ~has
        w[alive[quiet]] = wpath[quiet, nb[quiet]]
        step[alive[quiet]] += nb[quiet]

        if np.any(has):
            rows = np.nonzero(has)[0]
            pidx = alive[rows]
            fi = first[rows]
            ev_step = step[pidx] + fi
            k_new, taus = resolve_interval(
                seed, paths[pidx], ev_step, ev_step.astype(float) * dt, (ev_step + 1).astype(float) * dt,
                wpath[rows, fi], wpath[rows, fi + 1], k[pidx], slope, intercepts, bridge)
            fired = ~np.isnan(taus)
            sub = tau[pidx]
            sub[fired] = taus[fired]
            tau[pidx] = sub
            k[pidx] = k_new
            w[pidx] = wpath[rows, fi + 1]
            step[pidx] = ev_step + 1
        alive = alive[k[alive] < n_bar]

    done = k >= n_bar
    if n_bar:
        last = tau[:, n_bar - 1]
        w_stop = np.where(done, slope * last + intercepts[n_bar - 1], w)
        t_stop = np.where(done, last, step.astype(float) * dt)
    if len(record_steps):
        late = done[:, None] & (record_steps[None, :].astype(float) * dt > t_stop[:, None])
        w_record = np.where(late, w_stop[:, None], w_record)
    return tau, w_record, w_stop, t_stop, log_lr


def hitting_on_grid(seed, path_ids, times, values, slope, intercepts, bridge):
    """Hitting times of stored paths ``values[p, i] = W(times[i])``.

    Uses the same random streams as :func:`first_passage`, so a stored
    ensemble and a streamed one agree on a uniform grid.  Returns
    ``(tau, index)`` where ``index`` is the grid interval of each hit.
    """
    intercepts = np.asarray(intercepts, dtype=float)
    times = np.asarray(times, dtype=float)
    n, m1 = values.shape
    n_bar = len(intercepts)
    tau = np.full((n, n_bar), np.nan)
    index = np.full((n, n_bar), -1, dtype=np.int64)
    k = np.zeros(n, dtype=np.int64)
    for j in range(n_bar):
        at_zero = (k == j) & (intercepts[j] >= 0.0)
        tau[at_zero, j] = 0.0
        index[at_zero, j] = 0
        k[at_zero] += 1
    paths = np.asarray(path_ids, dtype=np.int64)
    dts = np.diff(times)
    act = np.nonzero(k < n_bar)[0]
    pos = np.zeros(n, dtype=np.int64)
    while act.size:
        ka = k[act]
        p0 = pos[act]
        width = m1 - 1 - int(p0.min())
        if width <= 0:
            break
        offs = np.arange(width)[None, :]
        cols = p0[:, None] + offs
        valid = cols < m1 - 1
        c = np.minimum(cols, m1 - 2)
        ic = intercepts[ka][:, None]
        d0 = values[act[:, None], c] - (slope * times[c] + ic)
        d1 = values[act[:, None], c + 1] - (slope * times[c + 1] + ic)
        event = (d1 <= 0.0) & valid
        if bridge:
            ub = uniforms(seed, paths[act][:, None], bridge_stream(ka)[:, None], c)
            with np.errstate(over="ignore", invalid="ignore"):
                p = np.exp(-2.0 * d0 * np.maximum(d1, 0.0) / dts[c])
            event |= (ub < p) & valid
        has = event.any(axis=1)
        if not np.any(has):
            break
        rows = np.nonzero(has)[0]
        i_ev = c[rows, event[rows].argmax(axis=1)]
        pidx = act[rows]
        k_new, taus = resolve_interval(seed, paths[pidx], i_ev, times[i_ev], times[i_ev + 1],
                                       values[pidx, i_ev], values[pidx, i_ev + 1], k[pidx],
                                       slope, intercepts, bridge)
        fired = ~np.isnan(taus)
        sub = tau[pidx]
        sub[fired] = taus[fired]
        tau[pidx] = sub
        isub = index[pidx]
        isub[fired] = np.broadcast_to(i_ev[:, None], isub.shape)[fired]
        index[pidx] = isub
        k[pidx] = k_new
        pos[pidx] = i_ev + 1
        act = pidx[(k_new < n_bar) & (i_ev + 1 < m1 - 1)]
    return tau, index
