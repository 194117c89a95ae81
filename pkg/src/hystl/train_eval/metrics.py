from __future__ import annotations

import numpy as np


def mae_mape(y_true, y_pred) -> dict:
    """Day-averaged MAE and MAPE for (days, regions) arrays.

    MAPE only uses entries with positive ground truth; a day without any is
    left out of the MAPE average. Both exclusions are counted.
    """
    y_true = np.asarray(y_true, dtype=np.float64)
    y_pred = np.asarray(y_pred, dtype=np.float64)
    if y_true.shape != y_pred.shape or y_true.ndim != 2:
        raise ValueError(f"expected matching (days, regions) arrays, got {y_true.shape} and {y_pred.shape}")
    err = np.abs(y_true - y_pred)
    mae_days = err.mean(axis=1)
    pos = y_true > 0
    n_pos = pos.sum(axis=1)
    ratio = np.divide(err, y_true, out=np.zeros_like(err), where=pos)
    valid = n_pos > 0
    mape_days = ratio.sum(axis=1)[valid] / n_pos[valid]
    return {
        "MAE": float(mae_days.mean()) if mae_days.size else float("nan"),
        "MAPE": float(mape_days.mean()) if mape_days.size else float("nan"),
        "n_days": int(y_true.shape[0]),
        "mape_excluded_entries": int((~pos).sum()),
        "mape_excluded_days": int((~valid).sum()),
    }
