"""Hot loops for the slot simulator.

Everything here is written in the numba-compatible subset of Python and
decorated with :func:`mmwave_cran._accel.jit`, so the same code runs either
compiled or interpreted. The public modules wrap these scalar helpers with
dataclass-friendly signatures.

Index conventions inside kernels are 0-based; ``prev == -1`` means there
was no previous association.
"""
import math

import numpy as np

from ._accel import jit

FLOOR_EPS = 1e-9

# policy codes
PROPOSED = 0
MAX_RATE = 1
MAX_QUEUE = 2
RANDOM = 3
EXACT = 4

# layout of the mutable scalar state vector
S_T, S_QC, S_PREV, S_PEND_B, S_PEND_L1, S_WARMUP = range(6)
N_SCALARS = 6

# accumulator layout (int64)
(A_COUNTED, A_QSUM, A_DROPS, A_SAT, A_HANDOVERS, A_DELIVERED, A_ARRIVALS,
 A_DROPS_TOTAL, A_SLOTS) = range(9)
N_ACC = 9

# per-slot record columns (int64)
(R_B, R_L1, R_DELIVERED, R_ARRIVALS, R_DROPS, R_HANDOVER, R_QSUM,
 R_QC_NEXT) = range(8)
N_REC = 8


def n_uniforms(J):
    """Uniform draws consumed per slot: arrivals, 2J links, 3+3 policy."""
    return 2 * J + 7


@jit
def floor_eps(x):
    return math.floor(x + FLOOR_EPS)


@jit
def handover_time(changed, r1, r2, zeta):
    if not changed:
        return 0.0
    if r1 <= 0.0 or r2 <= 0.0:
        return math.inf
    return zeta * (1.0 / r1 + 1.0 / r2)


@jit
def l1_bound(qc, qb, q_max, rho, r1, slot):
    budget = slot - rho
    cap = 0
    if budget > 0.0 and r1 > 0.0:
        cap = floor_eps(budget * r1)
        if cap < 0:
            cap = 0
    room = q_max - qb
    return min(qc, room, cap)


@jit
def delivered(qb, l1, rho, r1, r2, slot):
    if math.isinf(rho) or r2 <= 0.0:
        return 0
    budget = slot - rho
    if l1 > 0:
        if r1 <= 0.0:
            return 0
        budget -= l1 / r1
    cap = 0
    if budget > 0.0:
        cap = floor_eps(budget * r2)
        if cap < 0:
            cap = 0
    return min(qb + l1, cap)


@jit
def draw(cdf, u):
    """Inverse-CDF draw: first index whose cumulative mass exceeds ``u``."""
    k = 0
    n = cdf.shape[0]
    while k < n - 1 and u >= cdf[k]:
        k += 1
    return k


@jit
def is_handover(j, prev, always, free_first):
    if always:
        return True
    if prev < 0:
        return not free_first
    return j != prev


@jit
def rho_for(j, prev, f, a, rate1, rate2, zeta, always, free_first):
    return handover_time(is_handover(j, prev, always, free_first),
                         rate1[j, f[j]], rate2[j, a[j]], zeta)


@jit
def learning_rate(t, alpha0):
    return alpha0 / (math.log(t) + 1.0)


# ---------------------------------------------------------------- policies

@jit
def greedy_action(qc, q, f, a, prev, v_cu, v_rrh, rate1, rate2,
                  q_max, slot, zeta, always, free_first):
    """Two-step greedy over the decomposed post-decision tables.

    Step one picks the best packet count per RRH, step two the best RRH.
    Ties go to the largest count, then to the lowest RRH index.
    """
    J = q.shape[0]
    best_b = 0
    best_l = 0
    best_w = math.inf
    base_c = v_cu[qc]
    for j in range(J):
        r1 = rate1[j, f[j]]
        r2 = rate2[j, a[j]]
        rho = rho_for(j, prev, f, a, rate1, rate2, zeta, always, free_first)
        ub = l1_bound(qc, q[j], q_max, rho, r1, slot)
        base_j = v_rrh[j, f[j], a[j], q[j]]
        wj = math.inf
        lj = 0
        for l in range(ub + 1):
            d = delivered(q[j], l, rho, r1, r2, slot)
            w = (v_cu[qc - l] + v_rrh[j, f[j], a[j], q[j] + l - d]
                 - base_c - base_j)
            if w <= wj:
                wj = w
                lj = l
        if wj < best_w:
            best_w = wj
            best_b = j
            best_l = lj
    return best_b, best_l


@jit
def uniform_feasible(qc, q, f, a, prev, rate1, rate2, q_max, slot, zeta,
                     always, free_first, u):
    """Uniform draw over all feasible (rrh, count) pairs."""
    J = q.shape[0]
    total = 0
    for j in range(J):
        rho = rho_for(j, prev, f, a, rate1, rate2, zeta, always, free_first)
        total += l1_bound(qc, q[j], q_max, rho, rate1[j, f[j]], slot) + 1
    k = int(u * total)
    if k >= total:
        k = total - 1
    for j in range(J):
        rho = rho_for(j, prev, f, a, rate1, rate2, zeta, always, free_first)
        n = l1_bound(qc, q[j], q_max, rho, rate1[j, f[j]], slot) + 1
        if k < n:
            return j, k
        k -= n
    return J - 1, 0


@jit
def baseline_action(policy, qc, q, f, a, prev, rate1, rate2, q_max, slot,
                    zeta, always, free_first, u1, u2):
    J = q.shape[0]
    b = 0
    if policy == MAX_RATE:
        best = -1.0
        for j in range(J):
            s = rate1[j, f[j]] + rate2[j, a[j]]
            if s > best:
                best = s
                b = j
    elif policy == MAX_QUEUE:
        best_q = -1
        for j in range(J):
            if q[j] > best_q:
                best_q = q[j]
                b = j
    else:
        b = int(u1 * J)
        if b >= J:
            b = J - 1
    rho = rho_for(b, prev, f, a, rate1, rate2, zeta, always, free_first)
    ub = l1_bound(qc, q[b], q_max, rho, rate1[b, f[b]], slot)
    if policy == RANDOM:
        l1 = int(u2 * (ub + 1))
        if l1 > ub:
            l1 = ub
        return b, l1
    return b, ub


@jit
def exact_index(qc, q, f, a, prev, strides, augment):
    idx = qc * strides[0]
    J = q.shape[0]
    for j in range(J):
        k = 1 + 3 * j
        idx += f[j] * strides[k] + a[j] * strides[k + 1] + q[j] * strides[k + 2]
    if augment:
        p = prev if prev >= 0 else 0
        idx += p * strides[1 + 3 * J]
    return idx


@jit
def decide(policy, qc, q, f, a, prev, v_cu, v_rrh, eps, pol_b, pol_l1,
           strides, augment, rate1, rate2, q_max, slot, zeta, always,
           free_first, u0, u1, u2):
    if policy == PROPOSED:
        if eps > 0.0 and u0 < eps:
            return uniform_feasible(qc, q, f, a, prev, rate1, rate2, q_max,
                                    slot, zeta, always, free_first, u1)
        return greedy_action(qc, q, f, a, prev, v_cu, v_rrh, rate1, rate2,
                             q_max, slot, zeta, always, free_first)
    if policy == EXACT:
        idx = exact_index(qc, q, f, a, prev, strides, augment)
        return pol_b[idx], pol_l1[idx]
    return baseline_action(policy, qc, q, f, a, prev, rate1, rate2, q_max,
                           slot, zeta, always, free_first, u1, u2)


# ---------------------------------------------------------------- slot loop

@jit
def run_slots(u, scal, q, f, a,
              q_max, slot, zeta, gamma, always, free_first,
              rate1, rate2, cdf1, cdf2, arr_cdf,
              policy, v_cu, v_rrh, alpha0, ref_cu, ref_rrh, eps, learn,
              pol_b, pol_l1, strides, augment,
              acc, rec, rec_rho, trace_idx, trace_out):
    """Advance the system by ``u.shape[0]`` slots, mutating state in place.

    ``rec``/``rec_rho``/``trace_out`` are filled only when they have one row
    per slot; pass zero-row arrays to skip recording.
    """
    n = u.shape[0]
    J = q.shape[0]
    record = rec.shape[0] == n
    n_trace = trace_idx.shape[0]
    do_trace = n_trace > 0 and trace_out.shape[0] == n
    c_now = 2 * J + 1
    c_next = 2 * J + 4
    for i in range(n):
        t = scal[S_T]
        qc = scal[S_QC]
        prev = scal[S_PREV]

        if policy == PROPOSED and scal[S_PEND_B] >= 0:
            b = scal[S_PEND_B]
            l1 = scal[S_PEND_L1]
        else:
            b, l1 = decide(policy, qc, q, f, a, prev, v_cu, v_rrh, eps,
                           pol_b, pol_l1, strides, augment, rate1, rate2,
                           q_max, slot, zeta, always, free_first,
                           u[i, c_now], u[i, c_now + 1], u[i, c_now + 2])

        changed = is_handover(b, prev, always, free_first)
        r1 = rate1[b, f[b]]
        r2 = rate2[b, a[b]]
        rho = handover_time(changed, r1, r2, zeta)
        ub = l1_bound(qc, q[b], q_max, rho, r1, slot)
        if l1 > ub:
            l1 = ub
        if l1 < 0:
            l1 = 0
        d = delivered(q[b], l1, rho, r1, r2, slot)
        arrivals = draw(arr_cdf, u[i, 0])

        qsum = qc
        for j in range(J):
            qsum += q[j]
        if t >= scal[S_WARMUP]:
            acc[A_COUNTED] += 1
            acc[A_QSUM] += qsum
            if qc == q_max:
                acc[A_SAT] += 1

        total = qc + arrivals - l1
        drops = total - q_max if total > q_max else 0
        qc_next = total if total < q_max else q_max
        qb_old = q[b]
        fb_old = f[b]
        ab_old = a[b]
        q[b] = qb_old + l1 - d

        for j in range(J):
            f[j] = draw(cdf1[j, f[j]], u[i, 1 + 2 * j])
            a[j] = draw(cdf2[j, a[j]], u[i, 2 + 2 * j])

        if t >= scal[S_WARMUP]:
            acc[A_DROPS] += drops
        hand = 1 if (prev >= 0 and b != prev) else 0
        acc[A_HANDOVERS] += hand
        acc[A_DELIVERED] += d
        acc[A_ARRIVALS] += arrivals
        acc[A_DROPS_TOTAL] += drops
        acc[A_SLOTS] += 1

        scal[S_QC] = qc_next
        scal[S_PREV] = b

        if policy == PROPOSED:
            nb, nl = decide(PROPOSED, qc_next, q, f, a, b, v_cu, v_rrh, eps,
                            pol_b, pol_l1, strides, augment, rate1, rate2,
                            q_max, slot, zeta, always, free_first,
                            u[i, c_next], u[i, c_next + 1], u[i, c_next + 2])
            nrho = rho_for(nb, b, f, a, rate1, rate2, zeta, always, free_first)
            nub = l1_bound(qc_next, q[nb], q_max, nrho, rate1[nb, f[nb]], slot)
            if nl > nub:
                nl = nub
            scal[S_PEND_B] = nb
            scal[S_PEND_L1] = nl
            if learn:
                nd = delivered(q[nb], nl, nrho, rate1[nb, f[nb]],
                               rate2[nb, a[nb]], slot)
                alpha = learning_rate(t + 1, alpha0)
                # targets read the tables before either write
                post_c_next = qc_next - nl
                target_c = (gamma * drops + qc_next + v_cu[post_c_next]
                            - v_cu[ref_cu])
                post_b_next = q[b]
                if nb == b:
                    post_b_next = q[b] + nl - nd
                target_b = (q[b] + v_rrh[b, f[b], a[b], post_b_next]
                            - v_rrh[b, ref_rrh[b, 0], ref_rrh[b, 1],
                                    ref_rrh[b, 2]])
                post_c = qc - l1
                post_b = qb_old + l1 - d
                v_cu[post_c] = (1.0 - alpha) * v_cu[post_c] + alpha * target_c
                v_rrh[b, fb_old, ab_old, post_b] = (
                    (1.0 - alpha) * v_rrh[b, fb_old, ab_old, post_b]
                    + alpha * target_b)

        if record:
            rec[i, R_B] = b
            rec[i, R_L1] = l1
            rec[i, R_DELIVERED] = d
            rec[i, R_ARRIVALS] = arrivals
            rec[i, R_DROPS] = drops
            rec[i, R_HANDOVER] = hand
            rec[i, R_QSUM] = qsum
            rec[i, R_QC_NEXT] = qc_next
            rec_rho[i] = rho
        if do_trace:
            for k in range(n_trace):
                j = trace_idx[k, 0]
                if j < 0:
                    trace_out[i, k] = v_cu[trace_idx[k, 3]]
                else:
                    trace_out[i, k] = v_rrh[j, trace_idx[k, 1],
                                            trace_idx[k, 2], trace_idx[k, 3]]
        scal[S_T] = t + 1
