"""Computerized adaptive testing with maximum-information item selection."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import PopulationParams
from .traits import (TraitEstimate, confidence_interval, information_matrix, item_information,
                     map_estimate, map_estimate_batch)


class PoolExhausted(RuntimeError):
    pass


@dataclass
class CatSession:
    params: PopulationParams
    subject_id: str = ""
    administered: list[int] = field(default_factory=list)
    responses: list[tuple[int, float]] = field(default_factory=list)
    current: TraitEstimate | None = None
    level: float = 0.95

    @property
    def available(self) -> list[int]:
        used = set(self.administered)
        return [j for j in range(self.params.n_items) if j not in used]

    def observed_rows(self):
        """Full-length (R, log T, mask) rows for the administered items."""
        j = self.params.n_items
        r = np.zeros(j)
        lt = np.zeros(j)
        mask = np.zeros(j, dtype=bool)
        for item, (resp, logt) in zip(self.administered, self.responses):
            r[item], lt[item], mask[item] = resp, logt, True
        return r, lt, mask

    def refresh(self) -> None:
        r, lt, mask = self.observed_rows()
        est = map_estimate(self.params, r, lt, mask)
        info = information_matrix(self.params, est[0], mask)
        self.current = confidence_interval(est, info, self.level)


def _check_item(params: PopulationParams, item) -> int:
    if not isinstance(item, (int, np.integer)) or not 0 <= item < params.n_items:
        raise KeyError(f"unknown item {item!r}")
    return int(item)


def start_session(params: PopulationParams, initial_items=(), responses=(), subject_id: str = "",
                  level: float = 0.95) -> CatSession:
    """Open a session and score the initial batch of (R, log T) responses."""
    items = [_check_item(params, j) for j in initial_items]
    if len(set(items)) != len(items):
        raise ValueError("initial items must be distinct")
    responses = [(int(r), float(lt)) for r, lt in responses]
    if len(responses) != len(items):
        raise ValueError("need one (R, log T) response per initial item")
    s = CatSession(params, subject_id, items, responses, level=level)
    s.refresh()
    return s


def select_next_item(session: CatSession) -> int:
    """Available item with the largest accuracy information at the current theta."""
    avail = session.available
    if not avail:
        raise PoolExhausted("no items left in the pool")
    info = item_information(session.params, session.current.theta_hat)[avail]
    return avail[int(np.argmax(info))]  # argmax keeps the first (smallest index) on ties


def record_response(session: CatSession, item, r: int, log_t: float) -> CatSession:
    item = _check_item(session.params, item)
    if item in session.administered:
        raise ValueError(f"item {item} already has a recorded response")
    session.administered.append(item)
    session.responses.append((int(r), float(log_t)))
    session.refresh()
    return session


def run_cat_batch(params: PopulationParams, R, log_t, init_items, budget: int | None = None) -> np.ndarray:
    """Simulate CAT for every row at once; returns theta estimates of shape (N, steps).

    Column k holds the estimate after ``len(init_items) + k`` administered
    items.  Per-row behaviour matches a ``CatSession`` fed the same responses.
    """
    R = np.atleast_2d(R)
    log_t = np.atleast_2d(log_t)
    n, j = R.shape
    budget = j if budget is None else budget
    init = [_check_item(params, k) for k in init_items]
    if len(set(init)) != len(init) or not len(init) <= budget <= j:
        raise ValueError("need distinct initial items and len(init) <= budget <= J")
    mask = np.zeros((n, j), dtype=bool)
    mask[:, init] = True
    rows = np.arange(n)
    out = []
    while True:
        theta, _ = map_estimate_batch(params, R, log_t, mask)
        out.append(theta)
        if mask[0].sum() >= budget:
            break
        info = np.where(mask, -np.inf, item_information(params, theta))
        mask[rows, np.argmax(info, axis=1)] = True
    return np.stack(out, axis=1)
