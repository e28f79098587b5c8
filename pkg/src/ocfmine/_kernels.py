"""Compiled inner loops of the ERC equilibrium.

Coalitions are processed in descending reward-factor order (stable on ties),
so every sum is taken in an order that does not depend on how the caller
listed the coalitions.

Status codes: 0 interior, 1 zero, 2 capped.
"""

import math

import numpy as np
from numba import njit


@njit(cache=True)
def classify(S, th, cp, p):
    M = th.size
    code = np.empty(M, np.int64)
    for m in range(M):
        if cp[m] <= 0:
            code[m] = 1
            continue
        x = S - p * S * S / th[m]
        if x <= 0:
            code[m] = 1
        elif x >= cp[m]:
            code[m] = 2
        else:
            code[m] = 0
    return code


@njit(cache=True)
def real_solution(th, cp, p):
    """Active-set loop; ``th``/``cp`` must already be in descending-theta order.

    Returns (code, S, iterations, converged).
    """
    M = th.size
    code = np.empty(M, np.int64)
    for m in range(M):
        code[m] = 0 if cp[m] > 0 else 1
    S = 0.0
    iterations = 0
    converged = False
    for it in range(1, 4 * M + 5):
        iterations = it
        n_int = 0
        inv_sum = 0.0
        pinned = 0.0
        for m in range(M):
            if code[m] == 0:
                n_int += 1
                inv_sum += 1.0 / th[m]
            elif code[m] == 2:
                pinned += cp[m]
        if n_int == 0:
            S = pinned
        else:
            a = p * inv_sum
            b = n_int - 1.0
            S = (b + math.sqrt(b * b + 4.0 * a * pinned)) / (2.0 * a)
        if S <= 0:
            break
        new_code = classify(S, th, cp, p)
        same = True
        for m in range(M):
            if new_code[m] != code[m]:
                same = False
                break
        code = new_code
        if same:
            converged = True
            break
    return code, S, iterations, converged


@njit(cache=True)
def _payoff(l, others, theta, p):
    total = l + others
    if total <= 0:
        return 0.0
    return l * theta / total - l * p


@njit(cache=True)
def integer_best_response(theta, others, p, cap):
    if cap <= 0:
        return 0.0
    if p <= 0:
        return cap
    if others <= 0:
        return 1.0 if theta > p else 0.0
    x = math.sqrt(theta * others / p) - others
    if x <= 0:
        return 0.0
    if x >= cap:
        return cap
    lo = math.floor(x)
    if lo == x:
        return lo
    hi = lo + 1.0
    if _payoff(hi, others, theta, p) > _payoff(lo, others, theta, p):
        return hi
    return lo


@njit(cache=True)
def integer_solution(th, cp, p, x, interior, max_steps):
    """Rounding plus best-response repair in the given (descending-theta) order.

    Returns (levels, utilities, repair_steps).
    """
    M = th.size
    total = 0.0
    for m in range(M):
        total += x[m]
    lv = np.empty(M)
    for m in range(M):
        xm = x[m]
        lo = math.floor(xm)
        if interior[m] and xm != lo:
            others = total - xm
            hi = min(math.ceil(xm), cp[m])
            if _payoff(hi, others, th[m], p) > _payoff(lo, others, th[m], p):
                lv[m] = hi
            else:
                lv[m] = lo
        else:
            lv[m] = min(xm, cp[m])
    steps = 0
    while steps < max_steps:
        total = 0.0
        for m in range(M):
            total += lv[m]
        switched = False
        for m in range(M):
            br = integer_best_response(th[m], total - lv[m], p, cp[m])
            if br != lv[m]:
                lv[m] = br
                switched = True
                break
        if not switched:
            break
        steps += 1
    total = 0.0
    for m in range(M):
        total += lv[m]
    ut = np.empty(M)
    for m in range(M):
        ut[m] = _payoff(lv[m], total - lv[m], th[m], p)
    return lv, ut, steps



# move kinds, in tie-break order
MERGE_A, MERGE_B, SPLIT_A, SPLIT_B, LEAVE = 0, 1, 2, 3, 4


@njit(cache=True)
def _lex_less(a, b):
    """Sorted-member-tuple order of two distinct membership rows."""
    N = a.size
    for d in range(N):
        if a[d] != b[d]:
            other = b if a[d] else a
            rest = False
            for n in range(d + 1, N):
                if other[n]:
                    rest = True
                    break
            # the row holding d is smaller unless the other one ends before d
            return a[d] == rest
    return False


@njit(cache=True)
def _rank(th, rows, Mp):
    """Indices by descending theta; exact ties in canonical member order."""
    order = np.argsort(-th[:Mp], kind="mergesort")
    for i in range(1, Mp):
        j = i
        while j > 0 and th[order[j]] == th[order[j - 1]] and _lex_less(rows[order[j]], rows[order[j - 1]]):
            order[j], order[j - 1] = order[j - 1], order[j]
            j -= 1
    return order


@njit(cache=True)
def _theta(row, top_fee, top_id, stamp, tick, I, base, scale):
    """Reward factor of a member row from each member's own top fees."""
    buf = np.empty(top_fee.shape[0] * top_fee.shape[1])
    k = 0
    for n in range(row.size):
        if row[n]:
            for q in range(top_fee.shape[1]):
                tx = top_id[n, q]
                if tx < 0:
                    break
                if stamp[tx] != tick:
                    stamp[tx] = tick
                    buf[k] = top_fee[n, q]
                    k += 1
    vals = np.sort(buf[:k])
    fee = 0.0
    for q in range(min(I, k)):
        fee += vals[k - 1 - q]
    return (base + fee) * scale


@njit(cache=True)
def _utilities(th, rows, Mp, p, cap, steps_per):
    """Integer-equilibrium utilities in list order, or an empty array when unsettled."""
    order = _rank(th, rows, Mp)
    ths = th[:Mp][order]
    cp = np.full(Mp, cap)
    code, S, _, converged = real_solution(ths, cp, p)
    if not converged:
        return np.empty(0), order
    x = np.empty(Mp)
    for i in range(Mp):
        if code[i] == 1:
            x[i] = 0.0
        elif code[i] == 2:
            x[i] = cp[i]
        else:
            x[i] = S - p * S * S / ths[i]
    _, ut, _ = integer_solution(ths, cp, p, x, code == 0, steps_per * Mp)
    return ut, order


@njit(cache=True)
def structure_xi(mem, th, sizes, p, cap, capacity, steps_per):
    """Per-MU utility of a canonical structure; ``ok`` False when unsettled here."""
    M, N = mem.shape
    xi = np.zeros(N)
    if M <= 1 or p <= 0 or cap <= 0:
        return xi, False
    ut_sorted, order = _utilities(th, mem, M, p, cap, steps_per)
    if ut_sorted.size == 0:
        return xi, False
    ut = np.empty(M)
    for pos in range(M):
        ut[order[pos]] = ut_sorted[pos]
    counts = np.zeros(N, np.int64)
    for m in range(M):
        for n in range(N):
            if mem[m, n]:
                counts[n] += 1
    for m in range(M):
        share = ut[m] / sizes[m]
        for n in range(N):
            if mem[m, n] and counts[n] <= capacity:
                xi[n] += share
    return xi, True


@njit(cache=True)
def _same(a, b):
    for n in range(a.size):
        if a[n] != b[n]:
            return False
    return True


@njit(cache=True)
def scan_moves(mem, th, sizes, actor, capacity, chosen, before, p, cap, tol, steps_per,
               top_fee, top_id, stamp, I, base, scale):
    """Every move of ``actor`` against coalition ``chosen`` (all when -1), scored.

    Returns (kind, source, target, gain, flag) per candidate. ``gain`` is
    -inf for moves that are not admissible and NaN for no-op moves;
    ``flag`` marks candidates left to the caller (fewer than two
    coalitions after the move, or an unsettled active set).
    """
    M, N = mem.shape
    mine = np.zeros(M, np.bool_)
    n_mine = 0
    solo_exists = False
    for m in range(M):
        if mem[m, actor]:
            mine[m] = True
            n_mine += 1
            if sizes[m] == 1:
                solo_exists = True
    spare = n_mine < capacity
    cap_k = M * M + 2 * M + 1
    kind = np.empty(cap_k, np.int64)
    src = np.empty(cap_k, np.int64)
    tgt = np.empty(cap_k, np.int64)
    seen_b = np.zeros((M, M), np.bool_)
    K = 0
    lo = 0 if chosen < 0 else chosen
    hi = M if chosen < 0 else chosen + 1
    for m in range(lo, hi):
        if not mine[m]:
            if spare:
                kind[K], src[K], tgt[K] = MERGE_A, -1, m
                K += 1
            for s in range(M):
                if mine[s] and not seen_b[s, m]:
                    seen_b[s, m] = True
                    kind[K], src[K], tgt[K] = MERGE_B, s, m
                    K += 1
        else:
            for t in range(M):
                if not mine[t] and not seen_b[m, t]:
                    seen_b[m, t] = True
                    kind[K], src[K], tgt[K] = MERGE_B, m, t
                    K += 1
            if sizes[m] > 1:
                kind[K], src[K], tgt[K] = SPLIT_B, m, -1
                K += 1
            kind[K], src[K], tgt[K] = LEAVE, m, -1
            K += 1
    if spare and not solo_exists:
        kind[K], src[K], tgt[K] = SPLIT_A, -1, -1
        K += 1

    gain = np.full(K, -np.inf)
    flag = np.zeros(K, np.bool_)
    rows = np.zeros((M + 2, N), np.bool_)
    th_new = np.empty(M + 2)
    sz_new = np.empty(M + 2)
    add = np.zeros((2, N), np.bool_)
    after = np.empty(N)
    tick = stamp.max()
    for k in range(K):
        # removed base coalitions and added rows, as the move defines them
        r0, r1 = -1, -1
        n_add = 0
        add[:, :] = False
        kd = kind[k]
        if kd == MERGE_A:
            r0 = tgt[k]
            add[0] = mem[tgt[k]]
            add[0, actor] = True
            n_add = 1
        elif kd == MERGE_B:
            r0, r1 = src[k], tgt[k]
            add[0] = mem[src[k]]
            add[0, actor] = False
            add[1] = mem[tgt[k]]
            add[1, actor] = True
            n_add = 2
        elif kd == SPLIT_A:
            add[0, actor] = True
            n_add = 1
        elif kd == SPLIT_B:
            r0 = src[k]
            add[0] = mem[src[k]]
            add[0, actor] = False
            add[1, actor] = True
            n_add = 2
        else:
            r0 = src[k]
            add[0] = mem[src[k]]
            add[0, actor] = False
            n_add = 1
        keep_add = np.zeros(2, np.bool_)
        for j in range(n_add):
            empty = True
            for n in range(N):
                if add[j, n]:
                    empty = False
                    break
            if empty:
                continue
            keep_add[j] = True
            for m in range(M):
                if _same(add[j], mem[m]):
                    keep_add[j] = False
                    # re-adding a removed coalition cancels its removal
                    if m == r0:
                        r0 = -1
                    elif m == r1:
                        r1 = -1
                    break
        if r0 < 0 and r1 < 0 and not keep_add[0] and not keep_add[1]:
            gain[k] = np.nan
            continue
        Mp = 0
        for m in range(M):
            if m != r0 and m != r1:
                rows[Mp] = mem[m]
                th_new[Mp] = th[m]
                sz_new[Mp] = sizes[m]
                Mp += 1
        for j in range(2):
            if keep_add[j]:
                rows[Mp] = add[j]
                tick += 1
                th_new[Mp] = _theta(add[j], top_fee, top_id, stamp, tick, I, base, scale)
                cnt = 0
                for n in range(N):
                    if add[j, n]:
                        cnt += 1
                sz_new[Mp] = cnt
                Mp += 1
        if Mp <= 1:
            flag[k] = True
            continue
        ut, order = _utilities(th_new, rows, Mp, p, cap, steps_per)
        if ut.size == 0:
            flag[k] = True
            continue
        after[:] = 0.0
        for pos in range(Mp):
            i = order[pos]
            share = ut[pos] / sz_new[i]
            for n in range(N):
                if rows[i, n]:
                    after[n] += share
        g = after[actor] - before[actor]
        if not g > tol * max(1.0, abs(before[actor])):
            continue
        if kd == MERGE_A or kd == MERGE_B:
            ok = True
            for n in range(N):
                if mem[tgt[k], n] and before[n] - after[n] > tol * max(1.0, abs(before[n])):
                    ok = False
                    break
            if not ok:
                continue
        gain[k] = g
    return kind[:K], src[:K], tgt[:K], gain, flag
