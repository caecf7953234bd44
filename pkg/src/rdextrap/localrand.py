"""Window-based randomization inference for extrapolation.

Treats small nearest-neighbor windows around the low cutoff and the
extrapolation point as local experiments: the control-group gap is estimated
in the cutoff window, subtracted from the group contrast in the evaluation
window, and inference proceeds by permuting cutoff labels (Fisher, with a
confidence-set correction for the estimated gap) or by a studentized normal
approximation (Neyman).
"""

import math
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
from numpy.random import Generator, Philox
from scipy import stats

from .dataset import CutoffPair
from .errors import (
    EmptyCell,
    InsufficientData,
    InvalidEta,
    OverlappingWindows,
    ZeroVariance,
)

MIN_PERMUTATIONS = 500
_PHILOX_SALT = 0x9E3779B97F4A7C15  # fixed second key word


@dataclass
class LRWindow:
    """The k observations nearest to a center point (ties all kept)."""

    center: float
    k: int
    members: np.ndarray
    half_width: float

    @property
    def interval(self):
        return (self.center - self.half_width, self.center + self.half_width)


def build_window(ds, center, k):
    """Select the k rows with the smallest score distance to ``center``.

    Rows tied at the boundary distance are all included, so the window may
    hold more than k rows; the realized half width is reported.
    """
    n = len(ds)
    if k < 4:
        raise InsufficientData(f"window size must be at least 4, got {k}")
    if k > n:
        raise InsufficientData(f"window size {k} exceeds the {n} available rows")
    dist = np.abs(ds.x - center)
    order = np.lexsort((np.arange(n), dist))
    threshold = dist[order[k - 1]]
    members = np.flatnonzero(dist <= threshold)
    return LRWindow(center=float(center), k=k, members=members,
                    half_width=float(threshold))


@dataclass
class LRResult:
    """Estimates and inference for the window-based extrapolation."""

    delta_hat: float
    tau_hat: float
    adjustment: str
    counts: tuple
    V1: float
    V_delta: float
    k: int
    window_low: LRWindow
    window_eval: LRWindow
    eta: float = None
    p_fisher_bb: float = None
    p_neyman: float = None
    T_neyman: float = None
    inference_meta: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "delta_hat": self.delta_hat,
            "tau_hat": self.tau_hat,
            "adjustment": self.adjustment,
            "counts": {
                "control_low_at_low": self.counts[0],
                "high_at_low": self.counts[1],
                "low_at_eval": self.counts[2],
                "high_at_eval": self.counts[3],
            },
            "V1": self.V1,
            "V_delta": self.V_delta,
            "k": self.k,
            "window_low": list(self.window_low.interval),
            "window_eval": list(self.window_eval.interval),
            "eta": self.eta,
            "p_fisher_bb": self.p_fisher_bb,
            "p_neyman": self.p_neyman,
            "T_neyman": self.T_neyman,
            "inference": self.inference_meta,
        }


def _canonical(x, y):
    # aggregate in score order so results do not depend on row order
    order = np.lexsort((y, x))
    return x[order], y[order]


def _cell_value(x, y, center, adjustment):
    """Cell mean, or the intercept of a within-cell linear fit at the center."""
    x, y = _canonical(x, y)
    if adjustment == "linear" and np.unique(x).size >= 2:
        u = x - center
        ubar = u.mean()
        slope = float(np.sum((u - ubar) * (y - y.mean())) / np.sum((u - ubar) ** 2))
        return float(y.mean() - slope * ubar)
    return float(y.mean())


def _cell_variance(x, y, center, adjustment):
    m = y.size
    if m < 2:
        return 0.0
    x, y = _canonical(x, y)
    if adjustment == "linear" and np.unique(x).size >= 2:
        u = x - center
        ubar = u.mean()
        slope = np.sum((u - ubar) * (y - y.mean())) / np.sum((u - ubar) ** 2)
        resid = y - (y.mean() + slope * (u - ubar))
        return float(resid @ resid) / max(m - 2, 1) / m
    return float(np.var(y, ddof=1)) / m


def lr_estimate(ds, pair, xbar, k, adjustment="constant"):
    """Window-based extrapolated effect (no randomization inference yet).

    The gap between control groups is a difference in cell means inside the
    low-cutoff window; the effect contrasts low- against high-group outcomes
    in the evaluation window and subtracts the gap.  With ``adjustment =
    'linear'`` each cell mean is replaced by the intercept of a within-cell
    regression of the outcome on the centered score.
    """
    if adjustment not in ("constant", "linear"):
        raise ValueError(f"adjustment must be 'constant' or 'linear', got {adjustment!r}")
    pair = pair if isinstance(pair, CutoffPair) else CutoffPair(*pair)
    pair.validate(ds)
    win_low = build_window(ds, pair.low, k)
    win_eval = build_window(ds, xbar, k)
    lo_l, hi_l = win_low.interval
    lo_e, hi_e = win_eval.interval
    if max(lo_l, lo_e) <= min(hi_l, hi_e):
        raise OverlappingWindows(
            f"windows [{lo_l:g}, {hi_l:g}] and [{lo_e:g}, {hi_e:g}] intersect"
        )

    mem_l, mem_e = win_low.members, win_eval.members
    in_low = {
        "control_low_at_low": mem_l[(ds.c[mem_l] == pair.low) & (ds.d[mem_l] == 0)],
        "high_at_low": mem_l[ds.c[mem_l] == pair.high],
    }
    in_eval = {
        "low_at_eval": mem_e[ds.c[mem_e] == pair.low],
        "high_at_eval": mem_e[ds.c[mem_e] == pair.high],
    }
    for name, rows in {**in_low, **in_eval}.items():
        if rows.size == 0:
            raise EmptyCell(name)

    def cell(rows, center):
        return _cell_value(ds.x[rows], ds.y[rows], center, adjustment)

    def cellvar(rows, center):
        return _cell_variance(ds.x[rows], ds.y[rows], center, adjustment)

    a, b = in_low["control_low_at_low"], in_low["high_at_low"]
    cc, dd = in_eval["low_at_eval"], in_eval["high_at_eval"]
    delta = cell(a, pair.low) - cell(b, pair.low)
    tau = cell(cc, xbar) - cell(dd, xbar) - delta
    V_delta = cellvar(a, pair.low) + cellvar(b, pair.low)
    V1 = cellvar(cc, xbar) + cellvar(dd, xbar)
    return LRResult(
        delta_hat=delta,
        tau_hat=tau,
        adjustment=adjustment,
        counts=(int(a.size), int(b.size), int(cc.size), int(dd.size)),
        V1=V1,
        V_delta=V_delta,
        k=k,
        window_low=win_low,
        window_eval=win_eval,
    )


def neyman_test(lr):
    """Studentized statistic and two-sided normal p-value for ``tau_hat``."""
    total = lr.V1 + lr.V_delta
    if total <= 0:
        raise ZeroVariance("V1 + V_delta must be positive")
    T = lr.tau_hat / math.sqrt(total)
    p = float(2 * stats.norm.sf(abs(T)))
    lr.T_neyman = float(T)
    lr.p_neyman = p
    return float(T), p


def _perm_rng(seed, gridpoint, perm_index, stream=0):
    key = np.array([np.uint64(seed & 0xFFFFFFFFFFFFFFFF), np.uint64(_PHILOX_SALT)])
    counter = np.array([np.uint64(perm_index), np.uint64(gridpoint),
                        np.uint64(stream), np.uint64(0)])
    return Generator(Philox(key=key, counter=counter))


def _group_stat(x, y_adj, is_low, center, adjustment):
    if not is_low.any() or is_low.all():
        return None
    lo = _cell_value(x[is_low], y_adj[is_low], center, adjustment)
    hi = _cell_value(x[~is_low], y_adj[~is_low], center, adjustment)
    return lo - hi


def _assignment_matrix(m, n_low):
    rows = list(combinations(range(m), n_low))
    mat = np.zeros((len(rows), m), dtype=bool)
    for i, chosen in enumerate(rows):
        mat[i, list(chosen)] = True
    return mat


def _stats_for_assignments(x, y_adj, masks, center, adjustment):
    """Low-minus-high contrast for every assignment row of ``masks``."""
    low = masks.astype(np.float64)
    high = 1.0 - low
    n_lo = low.sum(axis=1)
    n_hi = high.sum(axis=1)
    mean_lo = (low @ y_adj) / n_lo
    mean_hi = (high @ y_adj) / n_hi
    if adjustment != "linear":
        return mean_lo - mean_hi

    u = x - center
    vals = []
    for grp, n, ybar in ((low, n_lo, mean_lo), (high, n_hi, mean_hi)):
        ubar = (grp @ u) / n
        suu = grp @ (u * u) - n * ubar**2
        suy = grp @ (u * y_adj) - n * ubar * ybar
        with np.errstate(divide="ignore", invalid="ignore"):
            slope = np.where(suu > 0, suy / np.where(suu > 0, suu, 1.0), 0.0)
        vals.append(ybar - slope * ubar)
    return vals[0] - vals[1]


def _randomization_pvalue_window(x, y, is_low, center, adjustment, delta, M,
                                 seed, gridpoint=0, stream=0, exhaustive="auto",
                                 masks=None):
    """Fixed-margins randomization p-value for one window and one gap value.

    Outcomes are shifted by ``delta`` for high-group rows, the low-vs-high
    contrast is the test statistic, and cutoff labels are permuted holding
    group counts fixed.  All distinct label assignments are enumerated when
    their number does not exceed the permutation budget (yielding an exact
    p-value); otherwise M counter-seeded draws are used with the add-one
    correction.
    """
    m = x.size
    n_low = int(is_low.sum())
    if n_low == 0 or n_low == m:
        raise EmptyCell("evaluation window lost a cutoff group")
    y_adj = y + delta * (~is_low)
    n_comb = math.comb(m, n_low)
    if masks is None and (
        exhaustive is True or (exhaustive == "auto" and n_comb <= max(M, 1))
    ):
        masks = _assignment_matrix(m, n_low)
    if masks is not None:
        stats_all = _stats_for_assignments(x, y_adj, masks, center, adjustment)
        observed = np.flatnonzero((masks == is_low).all(axis=1))[0]
        t_obs = stats_all[observed]
        hits = int(np.sum(np.abs(stats_all) >= abs(t_obs)))
        return hits / n_comb, "exhaustive", n_comb
    # one counter-seeded generator per draw; statistics evaluated in one
    # vectorized pass with the observed assignment as the first row
    draws = np.zeros((M + 1, m), dtype=bool)
    draws[0] = is_low
    for j in range(M):
        rng = _perm_rng(seed, gridpoint, j, stream)
        draws[j + 1, rng.permutation(m)[:n_low]] = True
    stats_all = _stats_for_assignments(x, y_adj, draws, center, adjustment)
    t_obs = stats_all[0]
    hits = int(np.sum(np.abs(stats_all[1:]) >= abs(t_obs)))
    return (1 + hits) / (M + 1), "monte-carlo", M


def randomization_pvalue(ds, pair, xbar, k, adjustment="constant", delta=0.0,
                         M=2000, seed=0, exhaustive="auto"):
    """Randomization p-value at a known control-group gap ``delta``."""
    pair = pair if isinstance(pair, CutoffPair) else CutoffPair(*pair)
    lr = lr_estimate(ds, pair, xbar, k, adjustment)
    rows = lr.window_eval.members
    keep = np.isin(ds.c[rows], (pair.low, pair.high))
    rows = rows[keep]
    is_low = ds.c[rows] == pair.low
    p, method, draws = _randomization_pvalue_window(
        ds.x[rows], ds.y[rows], is_low, xbar, adjustment, delta, M, seed,
        exhaustive=exhaustive,
    )
    return p


@dataclass
class BergerBoosResult:
    p_star: float
    eta: float
    delta_hat: float
    V_delta: float
    grid: tuple
    p_values: tuple
    method: str
    draws: int
    seed: int

    def to_dict(self):
        return {
            "p_star": self.p_star,
            "eta": self.eta,
            "delta_hat": self.delta_hat,
            "V_delta": self.V_delta,
            "delta_grid": list(self.grid),
            "p_values": list(self.p_values),
            "method": self.method,
            "draws": self.draws,
            "seed": self.seed,
        }


def bergerboos_pvalue(ds, pair, xbar, k, adjustment="constant", eta=0.01,
                      M=2000, G=100, seed=0, exhaustive="auto", stream=0):
    """Confidence-set-corrected randomization p-value for the effect.

    Builds a (1 - eta) normal-approximation interval for the control-group
    gap, evaluates the fixed-margins randomization p-value at G equidistant
    gap values inside it, and returns the supremum plus eta.
    """
    if not 0 < eta <= 0.1:
        raise InvalidEta(f"eta must be in (0, 0.1], got {eta}")
    if M < MIN_PERMUTATIONS:
        raise InsufficientData(f"at least {MIN_PERMUTATIONS} permutations required")
    if G < 1:
        raise InsufficientData("grid size must be at least 1")
    pair = pair if isinstance(pair, CutoffPair) else CutoffPair(*pair)
    lr = lr_estimate(ds, pair, xbar, k, adjustment)

    z = float(stats.norm.ppf(1 - eta / 2))
    half = z * math.sqrt(max(lr.V_delta, 0.0))
    if half > 0:
        grid = np.linspace(lr.delta_hat - half, lr.delta_hat + half, G)
    else:
        grid = np.array([lr.delta_hat])

    rows = lr.window_eval.members
    keep = np.isin(ds.c[rows], (pair.low, pair.high))
    rows = rows[keep]
    is_low = ds.c[rows] == pair.low
    x_w, y_w = ds.x[rows], ds.y[rows]

    # one assignment enumeration shared across the whole gap grid
    n_low = int(is_low.sum())
    n_comb = math.comb(x_w.size, n_low) if 0 < n_low < x_w.size else 0
    masks = None
    if n_comb and (
        exhaustive is True or (exhaustive == "auto" and n_comb <= max(M, 1))
    ):
        masks = _assignment_matrix(x_w.size, n_low)

    p_values = []
    method, draws = "exhaustive", 0
    for g, delta in enumerate(grid):
        p, method, draws = _randomization_pvalue_window(
            x_w, y_w, is_low, xbar, adjustment, float(delta), M, seed,
            gridpoint=g, stream=stream, exhaustive=exhaustive, masks=masks,
        )
        p_values.append(p)
    p_star = max(p_values) + eta

    lr.eta = eta
    lr.p_fisher_bb = p_star
    result = BergerBoosResult(
        p_star=p_star,
        eta=eta,
        delta_hat=lr.delta_hat,
        V_delta=lr.V_delta,
        grid=tuple(float(v) for v in grid),
        p_values=tuple(p_values),
        method=method,
        draws=draws,
        seed=seed,
    )
    return result, lr


def lr_inference(ds, pair, xbar, k, adjustment="constant", eta=0.01, M=2000,
                 G=100, seed=0, exhaustive="auto", stream=0):
    """Full local-randomization pipeline: estimate plus both p-values."""
    bb, lr = bergerboos_pvalue(ds, pair, xbar, k, adjustment=adjustment, eta=eta,
                               M=M, G=G, seed=seed, exhaustive=exhaustive,
                               stream=stream)
    neyman_test(lr)
    lr.inference_meta = {
        "statistic": "difference-in-means" if adjustment == "constant"
        else "linear-adjusted difference",
        "permutation_scheme": "fixed-margins cutoff relabeling",
        "method": bb.method,
        "draws": bb.draws,
        "delta_grid_size": len(bb.grid),
        "seed": seed,
    }
    return lr, bb


@dataclass
class SensitivityRow:
    k: int
    tau_hat: float = None
    p_star: float = None
    p_neyman: float = None
    delta_hat: float = None
    error: str = None

    @property
    def ok(self):
        return self.error is None

    def to_dict(self):
        return {"k": self.k, "tau_hat": self.tau_hat, "p_star": self.p_star,
                "p_neyman": self.p_neyman, "delta_hat": self.delta_hat,
                "error": self.error}


def lr_sensitivity(ds, pair, xbar, k_list, adjustment="constant", eta=0.01,
                   M=2000, G=100, seed=0, exhaustive="auto"):
    """Re-run the pipeline over a list of window sizes.

    Each window size gets its own counter stream, so results are
    deterministic given the seed and unaffected by evaluation order;
    infeasible window sizes are flagged without disturbing the rest.
    """
    rows = []
    for idx, k in enumerate(k_list):
        try:
            lr, bb = lr_inference(ds, pair, xbar, int(k), adjustment=adjustment,
                                  eta=eta, M=M, G=G, seed=seed,
                                  exhaustive=exhaustive, stream=idx + 1)
            rows.append(SensitivityRow(k=int(k), tau_hat=lr.tau_hat,
                                       p_star=lr.p_fisher_bb,
                                       p_neyman=lr.p_neyman,
                                       delta_hat=lr.delta_hat))
        except (InsufficientData, EmptyCell, OverlappingWindows, ZeroVariance) as exc:
            rows.append(SensitivityRow(k=int(k), error=str(exc)))
    return rows
