"""Compiled simulation core.

State lives in flat arrays grouped into tuples so that numba can pass them
around cheaply:

``V``  per-vehicle slots (slot order == id order)
``O``  active vehicles sorted by (track, x, id) plus per-track blocks
``N``  road geometry
``NB`` leader/follower of every vehicle on its own track
``R``  route lookup tables
``Z``  braking zones
``I``  inflow injector

The safety formulas and both built-in controllers are mirrored here from
:mod:`safedrive.kernel`, :mod:`safedrive.action` and
:mod:`safedrive.controllers`, operation for operation, so both paths produce
identical floating-point results. Tests compare them directly.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

INF = math.inf

EXIT, END, RING = 0, 1, 2
BALLISTIC, SEMI_IMPLICIT, EXPLICIT = 0, 1, 2
OK, CRASH, EGO_EXIT, BAD_ACTION = 0, 1, 2, 3
GIPPS, COMFORT = 1, 2

# neighbour-context columns; rows are right (0), current (1), left (2)
C_EXISTS, C_GAP, C_BGAP, C_LEAD, C_LEAD_V, C_LEAD_D, C_FOL, C_FOL_V, C_FOL_D, C_FOL_R, C_LEAD_R = range(11)
CTX_COLS = 11

# controller config slots
K_THRESHOLD, K_GRID, K_MANDATORY, K_WCOMF, K_WLC, K_WMLC, K_GAMMA, K_CAP = range(8)

# metric accumulator slots
M_STEPS, M_SUM_V, M_SUM_J2, M_SUM_ABS_J, M_PREV_A, M_MIN_GAP, M_HAVE_PREV = range(7)
N_METRICS = 7


# -- kernel mirrors -------------------------------------------------------------
@njit(cache=True, error_model="numpy")
def safe_speed(gap, v, vl, d, r, eps, dl, cap):
    if gap == INF:
        return cap, False
    half = r * d / 2
    disc = half * half - 2 * d * (r * v / 2 - vl * vl / (2 * dl) - gap + eps)
    if disc < half * half:
        return 0.0, True
    return math.sqrt(disc) - half, False


@njit(cache=True, error_model="numpy")
def lane_safe(ctx, k, v, d, r, eps, cap):
    if ctx[k, C_LEAD] == 0.0:
        return cap, False
    return safe_speed(ctx[k, C_GAP], v, ctx[k, C_LEAD_V], d, r, eps, ctx[k, C_LEAD_D], cap)


@njit(cache=True, error_model="numpy")
def feasible(ctx, k, v, d, r, eps):
    if k == 1:
        return True
    if ctx[k, C_EXISTS] == 0.0:
        return False
    fg = ctx[k, C_GAP]
    bg = ctx[k, C_BGAP]
    if fg <= 0 or bg <= 0:
        return False
    if ctx[k, C_LEAD] != 0.0:
        lv = ctx[k, C_LEAD_V]
        need = v * r + v * v / (2 * d) - lv * lv / (2 * ctx[k, C_LEAD_D]) + eps
        if fg < need:
            return False
    if ctx[k, C_FOL] != 0.0:
        fv = ctx[k, C_FOL_V]
        need = fv * ctx[k, C_FOL_R] + fv * fv / (2 * ctx[k, C_FOL_D]) - v * v / (2 * d) + eps
        if bg < need:
            return False
    return True


@njit(cache=True, error_model="numpy")
def accel_ub(ctx, v, amax, d, r, eps, cap, k):
    s, unsafe = lane_safe(ctx, 1, v, d, r, eps, cap)
    if unsafe:
        return -d
    a_safe = (s - v) / r
    if k != 1:
        s2, u2 = lane_safe(ctx, k, v, d, r, eps, cap)
        if u2:
            return -d
        a_safe = min(a_safe, (s2 - v) / r)
    return min(max(a_safe, -d), amax)


@njit(cache=True, error_model="numpy")
def boost(v0, v1, amax, r, gamma):
    n = math.floor(abs(v0 - v1) / (amax * r) + 0.5)
    if n == 0:
        return 0.0
    if gamma == 0:
        return 1.0
    q = 1.0 - gamma
    return -math.expm1(n * math.log1p(-q)) / q


# -- controller mirrors -----------------------------------------------------------
@njit(cache=True, error_model="numpy")
def _in_window(delta, dist_end, mand):
    return delta > 0 and dist_end <= mand * delta


@njit(cache=True, error_model="numpy")
def _route_blocks(k, rdelta, has_route, dist_end, mand):
    if not has_route or rdelta[k] < 0:
        return False
    return rdelta[k] > rdelta[1]


@njit(cache=True, error_model="numpy")
def gipps(ctx, v, limit, amax, d, r, eps, cfg, rdelta, has_route, dist_end):
    cap = cfg[K_CAP]
    mand = cfg[K_MANDATORY]
    choice = 1
    if has_route and _in_window(rdelta[1], dist_end, mand):
        for k in (2, 0):
            if rdelta[k] >= 0 and rdelta[k] < rdelta[1] and feasible(ctx, k, v, d, r, eps):
                choice = k
                break
    else:
        tc = min(lane_safe(ctx, 1, v, d, r, eps, cap)[0], limit)
        best = cfg[K_THRESHOLD]
        for k in (2, 0):
            if ctx[k, C_EXISTS] == 0.0:
                continue
            gain = min(lane_safe(ctx, k, v, d, r, eps, cap)[0], limit) - tc
            if (gain > best and feasible(ctx, k, v, d, r, eps)
                    and not _route_blocks(k, rdelta, has_route, dist_end, mand)):
                best = gain
                choice = k
    a_ub = accel_ub(ctx, v, amax, d, r, eps, cap, choice)
    return max(-d, min(a_ub, (limit - v) / r)), choice - 1


@njit(cache=True, error_model="numpy")
def _better(score, jerk, tgt, is_cur, is_left, b_score, b_jerk, b_tgt, b_cur, b_left):
    if score != b_score:
        return score > b_score
    if jerk != b_jerk:
        return jerk < b_jerk
    if tgt != b_tgt:
        return tgt > b_tgt
    if is_cur != b_cur:
        return is_cur > b_cur
    if is_left != b_left:
        return is_left > b_left
    return False


@njit(cache=True, error_model="numpy")
def comfort(ctx, v, prev_a, limit, amax, d, r, eps, cfg, rdelta, has_route, dist_end):
    cap = cfg[K_CAP]
    mand = cfg[K_MANDATORY]
    w_comf, w_lc, w_mlc, gamma = cfg[K_WCOMF], cfg[K_WLC], cfg[K_WMLC], cfg[K_GAMMA]
    n = int(cfg[K_GRID])
    tgt = np.zeros(3)
    for k in range(3):
        if ctx[k, C_EXISTS] != 0.0:
            tgt[k] = min(lane_safe(ctx, k, v, d, r, eps, cap)[0], limit)
    tc = tgt[1]
    allowed = np.zeros(3, dtype=np.bool_)
    allowed[1] = True
    for k in (2, 0):
        allowed[k] = feasible(ctx, k, v, d, r, eps)
    if has_route and _in_window(rdelta[1], dist_end, mand):
        closer = -1
        for k in (2, 0):
            if allowed[k] and rdelta[k] < rdelta[1]:
                closer = k
                break
        if closer >= 0:
            allowed[:] = False
            allowed[closer] = True
        else:
            for k in (2, 0):
                if allowed[k] and rdelta[k] > rdelta[1]:
                    allowed[k] = False
    else:
        for k in (2, 0):
            if allowed[k] and _route_blocks(k, rdelta, has_route, dist_end, mand):
                allowed[k] = False

    b_score, b_jerk, b_tgt, b_cur, b_left = -INF, INF, -INF, False, False
    found = False
    best_a, best_k = 0.0, 1
    for k in (1, 2, 0):
        if not allowed[k]:
            continue
        a_ub = accel_ub(ctx, v, amax, d, r, eps, cap, k)
        r_lc = 0.0
        if k != 1 and tc > 0:
            r_lc = boost(tgt[k], tc, amax, r, gamma) * (tgt[k] - tc) / tc
        r_mlc = 0.0
        if has_route:
            r_mlc = -rdelta[k] / (1.0 + dist_end)
        for j in range(n):
            a = -d + (a_ub + d) * j / (n - 1)
            v_next = max(v + a * r, 0.0)
            r_eff = 0.0
            if tc > 0:
                r_eff = -abs(tc - v_next) / tc
            t = (a - prev_a) / (amax + d)
            score = r_eff + w_comf * -(t * t) + w_lc * r_lc + w_mlc * r_mlc
            jerk = abs(a - prev_a)
            if not found or _better(score, jerk, tgt[k], k == 1, k == 2, b_score, b_jerk, b_tgt, b_cur, b_left):
                found = True
                b_score, b_jerk, b_tgt, b_cur, b_left = score, jerk, tgt[k], k == 1, k == 2
                best_a, best_k = a, k
    return best_a, best_k - 1


# -- geometry ------------------------------------------------------------------
# Per-vehicle hot paths take plain arrays: passing the state tuples into a
# call that LLVM does not inline costs a refcount round-trip per array.
@njit(cache=True, error_model="numpy")
def locate(N, t, xx):
    """(section, lane) of position ``xx`` on track ``t``."""
    return _locate(N[3], N[4], N[5], N[6], t, xx)


@njit(cache=True, error_model="numpy")
def _locate(seg_ptr, seg_x0, seg_sec, seg_lane, t, xx):
    s = seg_ptr[t]
    e = seg_ptr[t + 1]
    p = e - 1
    while p > s and seg_x0[p] > xx:
        p -= 1
    return seg_sec[p], seg_lane[p]


@njit(cache=True, error_model="numpy")
def _before(i, j, track, x, vid):
    if track[i] != track[j]:
        return track[i] < track[j]
    if x[i] != x[j]:
        return x[i] < x[j]
    return vid[i] < vid[j]


@njit(cache=True, error_model="numpy")
def resort(V, O):
    vid, active, track, x = V[0], V[1], V[2], V[3]
    order, meta, blk_start, blk_end = O
    m = 0
    for p in range(meta[1]):
        i = order[p]
        if active[i]:
            order[m] = i
            m += 1
    for p in range(1, m):
        i = order[p]
        q = p - 1
        while q >= 0 and _before(i, order[q], track, x, vid):
            order[q + 1] = order[q]
            q -= 1
        order[q + 1] = i
    meta[1] = m
    p = 0
    for t in range(blk_start.shape[0]):
        blk_start[t] = p
        while p < m and track[order[p]] == t:
            p += 1
        blk_end[t] = p


@njit(cache=True, error_model="numpy")
def find_neighbors(V, O, N, NB):
    x, v, dmax, vlen = V[3], V[4], V[7], V[10]
    order, _, blk_start, blk_end = O
    trk_end, trk_term, circ = N[1], N[2], N[11]
    lead, lgap, lv, ld, fol, fgap = NB
    for t in range(blk_start.shape[0]):
        s = blk_start[t]
        e = blk_end[t]
        ring = trk_term[t] == RING
        for p in range(s, e):
            i = order[p]
            if p + 1 < e:
                j = order[p + 1]
                lead[i] = j
                lgap[i] = x[j] - vlen[j] - x[i]
            elif ring and e - s >= 2:
                j = order[s]
                lead[i] = j
                lgap[i] = x[j] + circ - vlen[j] - x[i]
            elif trk_term[t] == END:
                j = -2
                lead[i] = -2
                lgap[i] = trk_end[t] - x[i]
            else:
                j = -1
                lead[i] = -1
                lgap[i] = INF
            if j >= 0:
                lv[i] = v[j]
                ld[i] = dmax[j]
            else:
                lv[i] = 0.0
                ld[i] = dmax[i]
            if p > s:
                j = order[p - 1]
                fol[i] = j
                fgap[i] = x[i] - vlen[i] - x[j]
            elif ring and e - s >= 2:
                j = order[e - 1]
                fol[i] = j
                fgap[i] = x[i] + circ - vlen[i] - x[j]
            else:
                fol[i] = -1
                fgap[i] = INF


@njit(cache=True, error_model="numpy")
def _set_leader(ctx, k, j, gap, V, own, scan):
    if gap > scan or j == -1:
        ctx[k, C_GAP] = INF
        ctx[k, C_LEAD] = 0.0
        return
    ctx[k, C_GAP] = gap
    ctx[k, C_LEAD] = 1.0
    if j < 0:  # end of a dropped lane: a stopped obstacle as capable as ego
        j = own
        ctx[k, C_LEAD_V] = 0.0
    else:
        ctx[k, C_LEAD_V] = V[4][j]
    ctx[k, C_LEAD_D] = V[7][j]
    ctx[k, C_LEAD_R] = V[8][j]


@njit(cache=True, error_model="numpy")
def _set_follower(ctx, k, j, gap, V, scan):
    if gap > scan or j < 0:
        ctx[k, C_BGAP] = INF
        ctx[k, C_FOL] = 0.0
        return
    ctx[k, C_BGAP] = gap
    ctx[k, C_FOL] = 1.0
    ctx[k, C_FOL_V] = V[4][j]
    ctx[k, C_FOL_D] = V[7][j]
    ctx[k, C_FOL_R] = V[8][j]


@njit(cache=True, error_model="numpy")
def build_ctx(i, V, O, N, NB, scan, ctx):
    """Six-neighbour view of vehicle ``i``. Adjacent-lane overlaps read as gap 0."""
    track, x, vlen = V[2], V[3], V[10]
    order, _, blk_start, blk_end = O
    trk_end, trk_term, sec_nl, lane_trk, circ = N[1], N[2], N[9], N[10], N[11]
    lead, lgap, _, _, fol, fgap = NB
    ctx[:, :] = 0.0
    sec, lane = locate(N, track[i], x[i])
    ctx[1, C_EXISTS] = 1.0
    _set_leader(ctx, 1, lead[i], lgap[i], V, i, scan)
    _set_follower(ctx, 1, fol[i], fgap[i], V, scan)
    for k in (0, 2):
        ln = lane + k - 1
        if ln < 0 or ln >= sec_nl[sec]:
            ctx[k, C_GAP] = -1.0
            ctx[k, C_BGAP] = -1.0
            continue
        ctx[k, C_EXISTS] = 1.0
        t2 = lane_trk[sec, ln]
        s = blk_start[t2]
        e = blk_end[t2]
        lo, hi = s, e
        while lo < hi:
            mid = (lo + hi) // 2
            if x[order[mid]] > x[i]:
                hi = mid
            else:
                lo = mid + 1
        ring = trk_term[t2] == RING
        if lo < e:
            j = order[lo]
            g = x[j] - vlen[j] - x[i]
        elif ring and e > s:
            j = order[s]
            g = x[j] + circ - vlen[j] - x[i]
        elif trk_term[t2] == END:
            j = -2
            g = trk_end[t2] - x[i]
        else:
            j = -1
            g = INF
        _set_leader(ctx, k, j, max(g, 0.0), V, i, scan)
        if lo > s:
            j = order[lo - 1]
            g = x[i] - vlen[i] - x[j]
        elif ring and e > s:
            j = order[e - 1]
            g = x[i] + circ - vlen[i] - x[j]
        else:
            j = -1
            g = INF
        _set_follower(ctx, k, j, max(g, 0.0), V, scan)


@njit(cache=True, error_model="numpy")
def route_view(i, V, N, R, rdelta):
    """Fill ``rdelta`` for lanes right/current/left; returns (on route?, distance to section end)."""
    track, x, route = V[2], V[3], V[13]
    sec_off, sec_len, sec_nl = N[7], N[8], N[9]
    route_delta, route_sidx = R
    sec, lane = locate(N, track[i], x[i])
    rdelta[:] = -1
    dist_end = sec_len[sec] - (x[i] - sec_off[sec])
    rid = route[i]
    if rid < 0 or route_sidx[rid, sec] < 0:
        return False, dist_end
    for k in range(3):
        ln = lane + k - 1
        if 0 <= ln < sec_nl[sec]:
            rdelta[k] = route_delta[rid, sec, ln]
    return True, dist_end


# -- dynamics -------------------------------------------------------------------
@njit(cache=True, error_model="numpy")
def _zone(sec, lane, pos, v, step, dt, z_sec, z_lanes, z_x0, z_x1, z_t0, z_t1, z_dec, z_floor):
    best = INF
    for z in range(z_sec.shape[0]):
        if (z_sec[z] == sec and z_lanes[z, lane] and z_x0[z] <= pos < z_x1[z]
                and z_t0[z] <= step < z_t1[z]):
            best = min(best, max(-z_dec[z], (z_floor[z] - v) / dt))
    return best


@njit(cache=True, error_model="numpy")
def _follow(v, amax, d, r, eps, limit, lead, lgap, lv, ld, dt, cap):
    if lead == -1:
        vh = cap
    else:
        vh, unsafe = safe_speed(lgap, v, lv, d, r, eps, ld, cap)
        if unsafe:
            return -d
    return min(max((min(vh, limit) - v) / dt, -d), amax)


@njit(cache=True, error_model="numpy")
def zone_accel(i, V, N, Z, step, dt):
    """Scripted-braking acceleration for vehicle ``i``, or +inf outside every zone."""
    if Z[0].shape[0] == 0:
        return INF
    sec, lane = locate(N, V[2][i], V[3][i])
    return _zone(sec, lane, V[3][i] - N[7][sec], V[4][i], step, dt, *Z)


@njit(cache=True, error_model="numpy")
def uncontrolled_accel(i, V, N, NB, Z, step, dt, cap):
    a = _follow(V[4][i], V[6][i], V[7][i], V[8][i], V[9][i], V[11][i], NB[0][i], NB[1][i], NB[2][i],
                NB[3][i], dt, cap)
    return min(a, zone_accel(i, V, N, Z, step, dt))


@njit(cache=True, error_model="numpy")
def _inject(V, O, N, I):
    vid, active, track, x, v, a, amax, dmax, rt, eps, vlen, limit, ctrl, route, lat, miss = V
    order, meta, blk_start, blk_end = O
    trk_start = N[0]
    in_tracks, in_speeds, in_f, in_state = I
    if in_tracks.shape[0] == 0 or in_state[1] >= in_speeds.shape[0] or meta[0] >= vid.shape[0]:
        return False
    head = in_f[0]
    last = in_state[2]
    if last >= 0 and active[last] and x[last] - in_f[7] < head:
        return False
    t = in_tracks[in_state[0] % in_tracks.shape[0]]
    x0 = trk_start[t]
    d, r, e = in_f[2], in_f[3], in_f[4]
    room = INF
    if blk_end[t] > blk_start[t]:
        j = order[blk_start[t]]
        gap = x[j] - vlen[j] - x0
        if gap <= 0:
            return False
        room = gap - e + v[j] * v[j] / (2 * dmax[j])
        if room < 0:
            return False
    speed = in_speeds[in_state[1]]
    if room < INF:
        speed = min(speed, -r * d + math.sqrt((r * d) * (r * d) + 2 * d * room))
    s = meta[0]
    vid[s] = meta[3]
    active[s] = True
    track[s] = t
    x[s] = x0
    v[s] = speed
    a[s] = 0.0
    amax[s], dmax[s], rt[s], eps[s], vlen[s], limit[s] = in_f[1], d, r, e, in_f[5], in_f[6]
    ctrl[s] = False
    route[s] = -1
    lat[s] = 0.0
    miss[s] = False
    order[meta[1]] = s
    meta[1] += 1
    meta[0] += 1
    meta[3] += 1
    in_state[0] += 1
    in_state[1] += 1
    in_state[2] = s
    in_f[7] = x0
    return True


@njit(cache=True, error_model="numpy")
def step_core(V, O, N, NB, R, Z, I, acc_cmd, lc_cmd, dt, integ, step, cap, ego, scratch, ctx):
    """Advance the world by one step given controlled actions. Returns a status code."""
    vid, active, track, x, v, a, amax, dmax, rt, eps, vlen, limit, ctrl, route, lat, miss = V
    order, meta, blk_start, blk_end = O
    trk_end, trk_term, sec_nl, lane_trk, circ, lane_width = N[1], N[2], N[9], N[10], N[11], N[12]
    route_delta, route_sidx = R
    sec_b, lane_b = scratch
    n_used = meta[0]

    # lane changes, in id order; later movers are re-checked against earlier ones
    moved = False
    for i in range(n_used):
        lat[i] = 0.0
        if not (active[i] and ctrl[i]) or lc_cmd[i] == 0:
            continue
        if moved:
            resort(V, O)
            find_neighbors(V, O, N, NB)
            build_ctx(i, V, O, N, NB, INF, ctx)
            if not feasible(ctx, lc_cmd[i] + 1, v[i], dmax[i], rt[i], eps[i]):
                lc_cmd[i] = 0
                continue
        sec, lane = locate(N, track[i], x[i])
        ln = lane + lc_cmd[i]
        if ln < 0 or ln >= sec_nl[sec]:
            return BAD_ACTION
        track[i] = lane_trk[sec, ln]
        lat[i] = lc_cmd[i] * lane_width / dt
        moved = True
    if moved:
        resort(V, O)
        find_neighbors(V, O, N, NB)

    seg_ptr, seg_x0, seg_sec, seg_lane, sec_off = N[3], N[4], N[5], N[6], N[7]
    lead, lgap, lv, ld = NB[0], NB[1], NB[2], NB[3]
    z_sec, z_lanes, z_x0, z_x1, z_t0, z_t1, z_dec, z_floor = Z
    zones = z_sec.shape[0] > 0
    for p in range(meta[1]):
        i = order[p]
        if route[i] >= 0:
            sec_b[i], lane_b[i] = _locate(seg_ptr, seg_x0, seg_sec, seg_lane, track[i], x[i])
        if not ctrl[i]:
            acc = _follow(v[i], amax[i], dmax[i], rt[i], eps[i], limit[i], lead[i], lgap[i], lv[i], ld[i], dt, cap)
            if zones:
                sec, lane = _locate(seg_ptr, seg_x0, seg_sec, seg_lane, track[i], x[i])
                acc = min(acc, _zone(sec, lane, x[i] - sec_off[sec], v[i], step, dt,
                                     z_sec, z_lanes, z_x0, z_x1, z_t0, z_t1, z_dec, z_floor))
            acc_cmd[i] = acc

    status = OK
    for p in range(meta[1]):
        i = order[p]
        a_i = acc_cmd[i]
        v0 = v[i]
        v1 = v0 + a_i * dt
        if integ == BALLISTIC:
            if v1 < 0:
                dx = v0 * v0 / (-2 * a_i)
                v1 = 0.0
            else:
                dx = (v0 + v1) / 2 * dt
        else:
            v1 = max(v1, 0.0)
            dx = v1 * dt if integ == SEMI_IMPLICIT else v0 * dt
        x[i] += dx
        a[i] = (v1 - v0) / dt
        v[i] = v1
        t = track[i]
        if trk_term[t] == RING:
            if x[i] >= circ:
                x[i] -= circ
        elif x[i] >= trk_end[t]:
            if trk_term[t] == EXIT:
                active[i] = False
            elif x[i] > trk_end[t]:
                status = CRASH

    # route bookkeeping: leaving a section on an off-route lane is a miss
    for p in range(meta[1]):
        i = order[p]
        if route[i] < 0:
            continue
        left_section = not active[i]
        if not left_section:
            sec, _ = _locate(seg_ptr, seg_x0, seg_sec, seg_lane, track[i], x[i])
            left_section = sec != sec_b[i]
        sb = sec_b[i]
        if left_section and route_sidx[route[i], sb] >= 0 and route_delta[route[i], sb, lane_b[i]] > 0:
            miss[i] = True

    ego_gone = not active[ego]
    resort(V, O)
    find_neighbors(V, O, N, NB)
    lead, lgap = NB[0], NB[1]
    for p in range(meta[1]):
        i = order[p]
        if lead[i] != -1 and lgap[i] <= 0:
            status = CRASH
    if status == CRASH:
        return CRASH
    if _inject(V, O, N, I):
        resort(V, O)
        find_neighbors(V, O, N, NB)
    if ego_gone:
        return EGO_EXIT
    return OK


@njit(cache=True, error_model="numpy")
def decide(V, O, N, NB, R, ctrl_id, cfg, acc_cmd, lc_cmd, ctx, rdelta):
    """Compiled controller decisions for every active controlled vehicle."""
    active, v, a, amax, dmax, rt, eps, limit, ctrl = V[1], V[4], V[5], V[6], V[7], V[8], V[9], V[11], V[12]
    for i in range(O[1][0]):
        if not (active[i] and ctrl[i]):
            continue
        build_ctx(i, V, O, N, NB, INF, ctx)
        has_route, dist_end = route_view(i, V, N, R, rdelta)
        if ctrl_id == GIPPS:
            acc, lc = gipps(ctx, v[i], limit[i], amax[i], dmax[i], rt[i], eps[i], cfg, rdelta, has_route, dist_end)
        else:
            acc, lc = comfort(ctx, v[i], a[i], limit[i], amax[i], dmax[i], rt[i], eps[i], cfg, rdelta,
                              has_route, dist_end)
        acc_cmd[i] = acc
        lc_cmd[i] = lc


@njit(cache=True, error_model="numpy")
def record(V, NB, ego, dt, acc):
    """Fold the ego's post-step state into the metric accumulators."""
    v, a = V[4], V[5]
    acc[M_STEPS] += 1
    acc[M_SUM_V] += v[ego]
    if acc[M_HAVE_PREV] != 0.0:
        j = (a[ego] - acc[M_PREV_A]) / dt
        acc[M_SUM_J2] += j * j
        acc[M_SUM_ABS_J] += abs(j)
    acc[M_PREV_A] = a[ego]
    acc[M_HAVE_PREV] = 1.0
    if V[1][ego] and NB[0][ego] != -1:
        acc[M_MIN_GAP] = min(acc[M_MIN_GAP], NB[1][ego])


@njit(cache=True, error_model="numpy")
def run_compiled(V, O, N, NB, R, Z, I, ctrl_id, cfg, dt, integ, ego, horizon, scratch, acc):
    """Whole episode with a built-in controller. Returns (status, steps run)."""
    n = V[0].shape[0]
    acc_cmd = np.zeros(n)
    lc_cmd = np.zeros(n, dtype=np.int64)
    ctx = np.zeros((3, CTX_COLS))
    rdelta = np.zeros(3, dtype=np.int64)
    cap = cfg[K_CAP]
    for step in range(O[1][2], horizon):
        decide(V, O, N, NB, R, ctrl_id, cfg, acc_cmd, lc_cmd, ctx, rdelta)
        st = step_core(V, O, N, NB, R, Z, I, acc_cmd, lc_cmd, dt, integ, step, cap, ego, scratch, ctx)
        O[1][2] = step + 1
        record(V, NB, ego, dt, acc)
        if st != OK:
            return st
    return OK
