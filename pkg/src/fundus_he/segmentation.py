"""Expanding-window adaptive threshold segmentation.

Hemorrhages are dark blobs surrounded by bright structures of varying
intensity, and they are frequently larger than the seed window that found
them.  Segmentation therefore works per window:

1. multi-level Otsu thresholding of the cropped window, with the region
   count grown adaptively until the between-region variance explains at
   least ``eta_stop`` of the total variance,
2. keep only the darkest region (everything at or below the lowest
   threshold),
3. prune to the two largest objects, then to the one nearest the window
   center,
4. if the retained object touches a window border, push that border
   outward (left/top by 5 px, right/bottom by 10 px) while the moved edge
   still intersects the search space, and repeat.

A window that cannot expand further inside the search space is finalized
as clipped; windows with an interior object are complete.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from .raster import Bbox, ConnectedComponent, clip_bbox, crop, histogram

STATUS_COMPLETE = "complete"
STATUS_CLIPPED = "clipped_by_search_space"
STATUS_ITERATION_CAP = "iteration_cap"


class DegenerateWindowError(Exception):
    """Window has zero intensity variance; no threshold exists."""


class NoObjectError(Exception):
    """Thresholded window contains no foreground object."""


@dataclass(frozen=True)
class OtsuResult:
    """Optimal threshold tuple with its variance bookkeeping.

    ``thresholds`` splits the gray range into ``len(thresholds) + 1``
    regions; ``eta`` = between-region variance / total variance.
    """

    thresholds: Tuple[int, ...]
    sigma_b2: float
    sigma_t2: float
    eta: float


@dataclass(frozen=True)
class SegmentConfig:
    eta_stop: float = 0.8      # variance-explained stopping ratio
    max_regions: int = 20
    step_left_top: int = 5
    step_right_bottom: int = 10
    max_iter: int = 200        # backstop; expansion is bounded by the search space


@dataclass
class WindowState:
    """One iteration of the window loop (mainly for inspection/demos)."""

    bbox: Bbox
    flags: Tuple[int, int, int, int]
    window: np.ndarray        # cropped calibrated intensities
    object_mask: np.ndarray   # retained object within the window
    iterations: int


@dataclass
class Segment:
    """Final segmentation of one seed window, in image coordinates."""

    object: ConnectedComponent
    window: Bbox
    status: str
    iterations: int


class _ThresholdSearch:
    """Exact threshold search over the histogram's nonempty support.

    Every optimal tuple puts each threshold on a nonempty bin (a threshold
    drifting up through empty bins changes nothing, and a tuple wasting a
    region on empty mass is strictly beaten once enough distinct levels
    exist), so the search runs on the compressed support and maps indices
    back to gray levels.  That also makes ties resolve to the
    lexicographically smallest tuple for free.
    """

    def __init__(self, hist: np.ndarray):
        hist = np.asarray(hist, dtype=np.float64)
        if hist.shape != (256,):
            raise ValueError("expected a 256-bin histogram")
        if (hist < 0).any():
            raise ValueError("histogram counts must be non-negative")
        total = hist.sum()
        if total <= 0:
            raise DegenerateWindowError("degenerate window: empty histogram")
        self.support = np.nonzero(hist)[0]
        if len(self.support) < 2:
            raise DegenerateWindowError("degenerate window: single gray level")
        v = self.support.astype(np.float64)
        p = hist[self.support] / total
        self.mu_t = float((p * v).sum())
        self.sigma_t2 = float((p * v * v).sum() - self.mu_t * self.mu_t)
        if self.sigma_t2 <= 0:
            raise DegenerateWindowError("degenerate window: zero total variance")
        cp = np.concatenate([[0.0], np.cumsum(p)])
        cs = np.concatenate([[0.0], np.cumsum(p * v)])
        n = len(v)
        omega = cp[1:][None, :] - cp[:-1][:, None]    # [i, j] = mass of bins i..j
        s = cs[1:][None, :] - cs[:-1][:, None]
        idx = np.arange(n)
        # cost[i, j] = omega * (mu - mu_T)^2 for the support run i..j
        self.cost = np.where(
            idx[:, None] <= idx[None, :],
            (s - omega * self.mu_t) ** 2 / np.where(omega > 0, omega, 1.0),
            -np.inf,
        )
        self._layers: List[np.ndarray] = []  # suffix DP, filled lazily

    def _dp_layer(self, k: int) -> np.ndarray:
        """g_k[i] = best variance sum splitting support i.. into k regions."""
        while len(self._layers) < k:
            kk = len(self._layers) + 1
            if kk == 1:
                g = self.cost[:, -1].copy()
            else:
                prev = self._layers[-1]
                g = (self.cost[:, :-1] + prev[1:][None, :]).max(axis=1)
            self._layers.append(g)
        return self._layers[k - 1]

    def best(self, regions: int) -> OtsuResult:
        n = len(self.support)
        if not 2 <= regions <= 20:
            raise ValueError(f"region count must be in [2, 20], got {regions}")
        if n < regions:
            raise ValueError(f"histogram has {n} nonempty bins, need >= {regions}")
        cost = self.cost
        if regions == 2:
            vals = cost[0, : n - 1] + cost[1:n, n - 1]
            t1 = int(np.argmax(vals))
            best = float(vals[t1])
            picks = [t1]
        elif regions == 3:
            vals = cost[0, : n - 1][:, None] + cost[1:n, : n - 1] + cost[1:n, n - 1][None, :]
            idx = np.arange(n - 1)
            vals[idx[:, None] >= idx[None, :]] = -np.inf   # need t1 < t2
            flat = int(np.argmax(vals))
            t1, t2 = divmod(flat, n - 1)
            best = float(vals[t1, t2])
            picks = [t1, t2]
        else:
            top = self._dp_layer(regions)  # fills layers 1..regions
            best = float(top[0])
            picks = []
            i = 0
            for k in range(regions, 1, -1):
                cand = cost[i, : n - 1] + self._layers[k - 2][1:]
                t_star = int(np.nonzero(cand == self._layers[k - 1][i])[0][0])
                picks.append(t_star)
                i = t_star + 1
        thresholds = tuple(int(self.support[t]) for t in picks)
        return OtsuResult(
            thresholds=thresholds, sigma_b2=best, sigma_t2=self.sigma_t2, eta=best / self.sigma_t2
        )


def multilevel_otsu(hist: np.ndarray, regions: int) -> OtsuResult:
    """Maximize between-region variance over all threshold tuples.

    Returns the tuple of ``regions - 1`` strictly increasing thresholds
    maximizing the weighted between-region variance.  The search is exact:
    exhaustive for up to 3 regions, suffix dynamic programming over prefix
    moment sums beyond that.  Ties resolve to the lexicographically
    smallest tuple.
    """
    return _ThresholdSearch(hist).best(regions)


def adaptive_thresholds(hist: np.ndarray, cfg: SegmentConfig | None = None) -> OtsuResult:
    """Grow the region count until the thresholds explain enough variance.

    Starts at two regions and increments while ``eta < cfg.eta_stop``, more
    nonempty bins remain, and the region count stays within
    ``cfg.max_regions``.  Bright, simple windows stop immediately; windows
    mixing several dark structures earn more regions.
    """
    cfg = cfg or SegmentConfig()
    search = _ThresholdSearch(hist)
    nonempty = len(search.support)
    regions = 2
    result = search.best(regions)
    while result.eta < cfg.eta_stop and regions < cfg.max_regions and nonempty >= regions + 1:
        regions += 1
        result = search.best(regions)
    return result


def binarize_min(window: np.ndarray, thresholds: Sequence[int]) -> np.ndarray:
    """Foreground = pixels at or below the lowest threshold (darkest region)."""
    if len(thresholds) == 0:
        raise ValueError("empty threshold vector")
    return np.asarray(window) <= min(thresholds)


def prune_objects(mask: np.ndarray) -> Tuple[np.ndarray, ConnectedComponent]:
    """Keep the most central of the two largest objects in the window.

    Large objects win first (big lesions outrank specks and partial
    shades); between the two largest, the one whose nearest pixel is
    closest to the window center wins.  Remaining ties fall back to the
    earlier (row-major first-pixel) label, which makes the choice
    deterministic.
    """
    labels, n = ndimage.label(mask, structure=np.ones((3, 3), dtype=int))
    if n == 0:
        raise NoObjectError("no object in window")
    h, w = mask.shape
    ys, xs = np.nonzero(mask)
    lab = labels[ys, xs]
    areas = np.bincount(lab, minlength=n + 1)
    dist = np.hypot(xs - (w - 1) / 2.0, ys - (h - 1) / 2.0)
    dmin = np.full(n + 1, np.inf)
    np.minimum.at(dmin, lab, dist)
    first = np.full(n + 1, h * w)  # row-major first pixel defines label order
    np.minimum.at(first, lab, ys * w + xs)
    biggest = sorted(range(1, n + 1), key=lambda k: (-areas[k], dmin[k], first[k]))[:2]
    keep = min(biggest, key=lambda k: (dmin[k], first[k]))
    keep_mask = labels == keep
    kxs = xs[lab == keep]
    kys = ys[lab == keep]
    comp = ConnectedComponent(
        label=1 + sum(1 for k in range(1, n + 1) if first[k] < first[keep]),
        pixels=np.column_stack([kxs, kys]).astype(np.int64),
        area=int(areas[keep]),
        bbox=(int(kxs.min()), int(kys.min()), int(kxs.max()), int(kys.max())),
        centroid=(float(kxs.mean()), float(kys.mean())),
    )
    return keep_mask, comp


def border_flags(mask: np.ndarray) -> Tuple[int, int, int, int]:
    """(left, top, right, bottom) flags: 1 where the object meets that edge."""
    return (
        int(mask[:, 0].any()),
        int(mask[0, :].any()),
        int(mask[:, -1].any()),
        int(mask[-1, :].any()),
    )


def expand_window(
    bbox: Bbox,
    flags: Tuple[int, int, int, int],
    search: np.ndarray,
    cfg: SegmentConfig | None = None,
) -> Tuple[Bbox, bool]:
    """Push flagged borders outward while they stay inside the search space.

    Each flagged edge moves by the configured step, clipped to image
    bounds.  A move fails when the edge cannot move at all or the moved
    edge no longer touches any search-space pixel; any failed move
    finalizes the window (returns the original bbox and False).
    """
    cfg = cfg or SegmentConfig()
    if not any(flags):
        raise ValueError("expand_window requires at least one set border flag")
    h, w = search.shape
    v1, v2, v3, v4 = bbox
    q1, q2, q3, q4 = flags
    new = [v1, v2, v3, v4]
    moves = (
        (q1, 0, max(0, v1 - cfg.step_left_top), lambda c: search[v2 : v4 + 1, c].any()),
        (q2, 1, max(0, v2 - cfg.step_left_top), lambda c: search[c, v1 : v3 + 1].any()),
        (q3, 2, min(w - 1, v3 + cfg.step_right_bottom), lambda c: search[v2 : v4 + 1, c].any()),
        (q4, 3, min(h - 1, v4 + cfg.step_right_bottom), lambda c: search[c, v1 : v3 + 1].any()),
    )
    for flag, idx, cand, edge_in_search in moves:
        if not flag:
            continue
        if cand == bbox[idx] or not edge_in_search(cand):
            return bbox, False
        new[idx] = cand
    return (new[0], new[1], new[2], new[3]), True


def _shift_component(comp: ConnectedComponent, dx: int, dy: int) -> ConnectedComponent:
    pixels = comp.pixels + np.array([dx, dy], dtype=comp.pixels.dtype)
    v1, v2, v3, v4 = comp.bbox
    return ConnectedComponent(
        label=comp.label,
        pixels=pixels,
        area=comp.area,
        bbox=(v1 + dx, v2 + dy, v3 + dx, v4 + dy),
        centroid=(comp.centroid[0] + dx, comp.centroid[1] + dy),
    )


def segment_window_states(
    calibrated: np.ndarray,
    seed_bbox: Bbox,
    search: np.ndarray,
    cfg: SegmentConfig | None = None,
) -> Tuple[Segment, List[WindowState]]:
    """Run the window loop for one seed, keeping every intermediate state."""
    cfg = cfg or SegmentConfig()
    h, w = calibrated.shape
    bbox = clip_bbox(seed_bbox, w, h)
    if not search[bbox[1] : bbox[3] + 1, bbox[0] : bbox[2] + 1].any():
        raise ValueError(f"seed bbox {seed_bbox} does not intersect the search space")

    states: List[WindowState] = []
    status = STATUS_ITERATION_CAP
    comp: Optional[ConnectedComponent] = None
    for iteration in range(1, cfg.max_iter + 1):
        window = crop(calibrated, bbox)
        result = adaptive_thresholds(histogram(window), cfg)
        mask = binarize_min(window, result.thresholds)
        pruned, comp = prune_objects(mask)
        flags = border_flags(pruned)
        states.append(WindowState(bbox, flags, window, pruned, iteration))
        if not any(flags):
            status = STATUS_COMPLETE
            break
        grown, ok = expand_window(bbox, flags, search, cfg)
        if not ok:
            status = STATUS_CLIPPED
            break
        if iteration == cfg.max_iter:
            break  # cap reached; report the window the object was found in
        bbox = grown

    assert comp is not None
    segment = Segment(
        object=_shift_component(comp, bbox[0], bbox[1]),
        window=bbox,
        status=status,
        iterations=states[-1].iterations,
    )
    return segment, states


def segment_window(
    calibrated: np.ndarray,
    seed_bbox: Bbox,
    search: np.ndarray,
    cfg: SegmentConfig | None = None,
) -> Segment:
    """Segment the most central dark object reachable from one seed window."""
    segment, _ = segment_window_states(calibrated, seed_bbox, search, cfg)
    return segment
