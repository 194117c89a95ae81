from __future__ import annotations

import logging
from dataclasses import dataclass

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SplitSpec:
    """Contiguous day ranges along time: train, its validation tail, then test.

    Ranges are half-open day indices. ``fit`` is the part of the training
    period that gradient steps (and normalisation statistics) may see.
    """

    n_days: int
    n_train: int
    n_val: int
    n_test: int

    @property
    def train(self) -> range:
        return range(0, self.n_train)

    @property
    def fit(self) -> range:
        return range(0, self.n_train - self.n_val) if self.n_val < self.n_train else range(0, self.n_train)

    @property
    def val(self) -> range:
        return range(self.n_train - self.n_val, self.n_train)

    @property
    def test(self) -> range:
        return range(self.n_train, self.n_days)

    def target_days(self, name: str, T_in: int) -> range:
        """Target days of the windows belonging to split ``name``."""
        days = {"fit": self.fit, "train": self.fit, "val": self.val, "test": self.test}[name]
        return range(max(days.start, T_in), days.stop)


def split(n_days: int, T_in: int, val_days: int = 30, test_ratio: int = 8) -> SplitSpec:
    """7:1 train:test along time; validation is the last ``val_days`` training days."""
    if n_days < T_in + 8:
        raise ValueError(f"series too short: {n_days} days for T_in={T_in} (need >= T_in + 8)")
    n_test = n_days // test_ratio
    n_train = n_days - n_test
    n_val = val_days
    if n_train <= val_days:
        logger.warning("training period (%d days) not longer than the validation tail; validating on all of it",
                       n_train)
        n_val = n_train
    spec = SplitSpec(n_days, n_train, n_val, n_test)
    if spec.fit.stop <= T_in:
        logger.warning("no fit window has a full %d-day history before the validation tail", T_in)
    return spec
