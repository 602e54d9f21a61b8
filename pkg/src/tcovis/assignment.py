"""Optimal bipartite assignment and the two supervision strategies.

``hungarian`` solves the rectangular linear assignment problem with a
dense shortest-augmenting-path solver that maintains dual potentials,
then refines ties so the returned pair list is the lexicographically
smallest one among all optimal assignments. ``brute_force_assign`` is
the independent oracle: exhaustive enumeration under a factorial guard,
with the same tie rule.

``global_instance_assignment`` matches ground truth to prediction slots
on whole-clip costs; ``locpro_assignment`` is the local-matching baseline
that assigns on each object's first frame and propagates, reported with
its whole-clip total so the two strategies are directly comparable.
"""

from __future__ import annotations

import itertools

import numpy as np

from .cost import LossWeights, frame_matching_cost, global_matching_cost
from .model import Assignment

BRUTE_FORCE_MAX_ROWS = 8
BRUTE_FORCE_MAX_COLS = 10


def _as_cost_matrix(matrix) -> np.ndarray:
    a = np.asarray(matrix, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"cost matrix must be 2-D, got shape {a.shape}")
    if a.size and not np.isfinite(a).all():
        raise ValueError("cost matrix entries must be finite")
    if a.shape[0] > a.shape[1]:
        raise ValueError(f"need rows <= cols, got shape {a.shape}")
    return a


def _pairs_total(cost: np.ndarray, cols) -> float:
    # canonical order: ascending row, left-to-right accumulation
    total = 0.0
    for r, c in enumerate(cols):
        total += float(cost[r, c])
    return total


def _sap_solve(cost: np.ndarray):
    """Shortest-augmenting-path LAP solve for rows <= cols.

    Returns (col4row, u, v) where the dual potentials satisfy
    cost[i, j] - u[i] - v[j] >= 0 with equality on matched edges.
    """
    nr, nc = cost.shape
    u = np.zeros(nr)
    v = np.zeros(nc)
    col4row = np.full(nr, -1, dtype=np.int64)
    row4col = np.full(nc, -1, dtype=np.int64)

    for cur_row in range(nr):
        shortest = np.full(nc, np.inf)
        path = np.full(nc, -1, dtype=np.int64)
        on_path = np.zeros(nr, dtype=bool)
        open_col = np.ones(nc, dtype=bool)
        min_val = 0.0
        i = cur_row
        sink = -1
        while sink == -1:
            on_path[i] = True
            d = (cost[i] + (min_val - u[i])) - v
            better = (d < shortest) & open_col
            np.copyto(shortest, d, where=better)
            path[better] = i
            masked = np.where(open_col, shortest, np.inf)
            j = int(masked.argmin())
            min_val = float(masked[j])
            open_col[j] = False
            if row4col[j] == -1:
                sink = j
            else:
                i = int(row4col[j])

        u[cur_row] += min_val
        others = on_path.copy()
        others[cur_row] = False
        rows = np.flatnonzero(others)
        if rows.size:
            u[rows] += min_val - shortest[col4row[rows]]
        scanned = ~open_col
        v[scanned] -= min_val - shortest[scanned]

        j = sink
        while True:
            i = int(path[j])
            row4col[j] = i
            col4row[i], j = j, col4row[i]
            if i == cur_row:
                break
    return col4row, u, v


def _augment(adjacency, owner: dict, start, blocked) -> bool:
    """One Kuhn augmentation from `start`; `owner` maps right node -> left."""
    visited = set(blocked)

    def try_assign(left) -> bool:
        for right in adjacency(left):
            if right in visited:
                continue
            visited.add(right)
            holder = owner.get(right)
            if holder is None or try_assign(holder):
                owner[right] = left
                return True
        return False

    return try_assign(start)


def _lexicographic_pairs(cost: np.ndarray, col4row: np.ndarray,
                         u: np.ndarray, v: np.ndarray):
    """Smallest pair list (rows ascending) among optimal assignments,
    derived from the tight-edge graph of the optimal duals."""
    nr, nc = cost.shape
    scale = max(1.0, float(np.abs(cost).max()))
    tau = 64.0 * np.finfo(np.float64).eps * scale * max(nr, 4)

    reduced = cost - u[:, None] - v[None, :]
    tight = reduced <= tau
    tight[np.arange(nr), col4row] = True
    row_adj = [np.flatnonzero(tight[r]).tolist() for r in range(nr)]
    col_adj = [np.flatnonzero(tight[:, j]).tolist() for j in range(nc)]

    # Complementary slackness: every optimal assignment uses only tight
    # edges and covers every column whose potential is strictly negative.
    # A candidate (r, j) is acceptable iff, after fixing it, the remaining
    # rows can still be saturated by tight edges AND the remaining mandatory
    # columns can still be covered by later rows (Mendelsohn-Dulmage lets
    # the two saturations merge into one matching).
    mandatory = set(int(j) for j in np.flatnonzero(v < -tau))

    used = np.zeros(nc, dtype=bool)
    col_owner = {int(col4row[r]): r for r in range(nr)}   # remaining rows matching
    demand = {j: col_owner[j] for j in mandatory}         # mandatory-column matching

    def row_adjacency(left):
        return [c for c in row_adj[left] if not used[c]]

    pairs = []
    for r in range(nr):
        chosen = -1
        for j in row_adj[r]:
            if used[j]:
                continue

            # rows side: force (r, j), re-augment any displaced row
            trial_cols = dict(col_owner)
            old = next((c for c, row in trial_cols.items() if row == r), None)
            if old is not None:
                del trial_cols[old]
            displaced = trial_cols.pop(j, None)
            trial_cols[j] = r
            if displaced is not None and not _augment(
                    row_adjacency, trial_cols, displaced, blocked={j}):
                continue

            # demand side: j is covered by r now; any mandatory column that
            # was relying on row r must find a home among the rows after r
            trial_demand = {c: row for c, row in demand.items() if c != j}
            rehome = [c for c, row in trial_demand.items() if row <= r]
            if rehome:
                row_owner = {row: c for c, row in trial_demand.items() if row > r}

                def col_adjacency(col):
                    return [i for i in col_adj[col] if i > r]

                ok = True
                for c in rehome:
                    del trial_demand[c]
                    if not _augment(col_adjacency, row_owner, c, blocked=set()):
                        ok = False
                        break
                if not ok:
                    continue
                trial_demand = {c: row for row, c in row_owner.items()}

            trial_cols.pop(j, None)
            col_owner = trial_cols
            demand = trial_demand
            used[j] = True
            chosen = j
            break
        if chosen == -1:
            return None
        pairs.append((r, chosen))
    return pairs


def hungarian(cost_matrix) -> Assignment:
    """Minimum-cost injective assignment of rows to columns.

    Ties between equally cheap assignments are broken in favor of the
    lexicographically smallest pair list.
    """
    cost = _as_cost_matrix(cost_matrix)
    nr = cost.shape[0]
    if nr == 0:
        return Assignment(pairs=(), total_cost=0.0)

    col4row, u, v = _sap_solve(cost)
    incumbent = [(r, int(col4row[r])) for r in range(nr)]
    best_total = _pairs_total(cost, col4row)

    refined = _lexicographic_pairs(cost, col4row, u, v)
    if refined is not None and refined != incumbent:
        refined_total = _pairs_total(cost, [c for _, c in refined])
        if refined_total == best_total:
            return Assignment(pairs=tuple(refined), total_cost=best_total)
    return Assignment(pairs=tuple(incumbent), total_cost=best_total)


_INJECTION_CACHE: dict = {}


def _injections(nr: int, nc: int) -> np.ndarray:
    key = (nr, nc)
    if key not in _INJECTION_CACHE:
        count = 1
        for k in range(nc, nc - nr, -1):
            count *= k
        flat = np.fromiter(itertools.chain.from_iterable(
            itertools.permutations(range(nc), nr)), dtype=np.int8, count=count * nr)
        _INJECTION_CACHE[key] = flat.reshape(count, nr)
    return _INJECTION_CACHE[key]


def brute_force_assign(cost_matrix) -> Assignment:
    """Exhaustive minimum over all injections; oracle for ``hungarian``.

    Enumeration is lexicographic in the pair list and only strict
    improvements replace the incumbent, so ties resolve identically to
    ``hungarian``.
    """
    cost = _as_cost_matrix(cost_matrix)
    nr, nc = cost.shape
    if nr > BRUTE_FORCE_MAX_ROWS or nc > BRUTE_FORCE_MAX_COLS:
        raise ValueError(f"brute force guard: shape {cost.shape} exceeds "
                         f"({BRUTE_FORCE_MAX_ROWS}, {BRUTE_FORCE_MAX_COLS})")
    if nr == 0:
        return Assignment(pairs=(), total_cost=0.0)
    injections = _injections(nr, nc)
    totals = cost[np.arange(nr)[None, :], injections].sum(axis=1)
    winner = injections[int(totals.argmin())]
    return Assignment(pairs=tuple((r, int(c)) for r, c in enumerate(winner)),
                      total_cost=_pairs_total(cost, winner))


def build_global_cost_matrix(gt_tracks, pred_tracks, weights: LossWeights) -> np.ndarray:
    """Whole-clip cost of every (ground truth, prediction slot) pair."""
    n_gt, n_slots = len(gt_tracks), len(pred_tracks)
    if n_gt > n_slots:
        raise ValueError(f"{n_gt} ground-truth tracks exceed {n_slots} prediction slots")
    matrix = np.empty((n_gt, n_slots), dtype=np.float64)
    for g, gt in enumerate(gt_tracks):
        for s, pred in enumerate(pred_tracks):
            matrix[g, s] = global_matching_cost(gt, pred, weights)
    return matrix


def global_instance_assignment(gt_tracks, pred_tracks, weights: LossWeights) -> Assignment:
    """Optimal matching on whole-clip costs (the global strategy)."""
    return hungarian(build_global_cost_matrix(gt_tracks, pred_tracks, weights))


def _first_frame(track) -> int:
    present = np.flatnonzero(track.masks.reshape(track.masks.shape[0], -1).any(axis=1))
    if present.size == 0:
        raise ValueError("ground-truth track has no nonempty frame")
    return int(present[0])


def locpro_assignment(gt_tracks, pred_tracks, weights: LossWeights) -> Assignment:
    """Local match-and-propagate baseline.

    Objects are matched by frame-level cost at their first visible frame,
    earliest frames first; each stage only considers still-unmatched slots,
    and matched identities persist for the rest of the clip. The returned
    total is the whole-clip cost of the resulting pairs, so it is directly
    comparable with the global strategy.
    """
    n_gt, n_slots = len(gt_tracks), len(pred_tracks)
    if n_gt > n_slots:
        raise ValueError(f"{n_gt} ground-truth tracks exceed {n_slots} prediction slots")
    first = [_first_frame(track) for track in gt_tracks]
    free_slots = list(range(n_slots))
    pairs = []
    for t in sorted(set(first)):
        rows = [g for g in range(n_gt) if first[g] == t]
        stage = np.empty((len(rows), len(free_slots)), dtype=np.float64)
        for ri, g in enumerate(rows):
            for ci, s in enumerate(free_slots):
                stage[ri, ci] = frame_matching_cost(gt_tracks[g], pred_tracks[s], t, weights)
        local = hungarian(stage)
        taken = [free_slots[ci] for _, ci in local.pairs]
        for ri, ci in local.pairs:
            pairs.append((rows[ri], free_slots[ci]))
        for s in taken:
            free_slots.remove(s)
    pairs.sort()
    total = 0.0
    for g, s in pairs:
        total += global_matching_cost(gt_tracks[g], pred_tracks[s], weights)
    return Assignment(pairs=tuple(pairs), total_cost=total)


def assignment_total_global_cost(assignment: Assignment, gt_tracks, pred_tracks,
                                 weights: LossWeights) -> float:
    """Recompute the whole-clip cost of an assignment from its inputs."""
    n_gt, n_slots = len(gt_tracks), len(pred_tracks)
    total = 0.0
    for g, s in sorted(assignment.pairs):
        if not 0 <= g < n_gt or not 0 <= s < n_slots:
            raise ValueError(f"assignment pair ({g}, {s}) out of range")
        total += global_matching_cost(gt_tracks[g], pred_tracks[s], weights)
    return total
