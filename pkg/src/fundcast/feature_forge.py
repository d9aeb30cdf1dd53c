"""Feature engineering on the quarterly panel.

Turns raw variables into comparable formats (growth rates and log common-size
ratios), clips outliers against positive-origin quantile caps, runs the
four-tier missing-value policy, expands the per-company lag structure, and
builds classification labels from relative earnings changes.

Conventions shared with panel_ingest: NaN is the missing marker until the
constant fill-in step replaces the leftovers with -1.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    InsufficientDataError,
    MissingDenominatorError,
    PanelError,
)
from .panel_ingest import (
    CONVERTED_FORMATS,
    RATIO_FORMATS,
    Format,
    RawPanel,
)

DEFAULT_ASSETS_VAR = "atq"
DEFAULT_REVENUE_VAR = "revtq"
CONSTANT_FILL = -1.0

FORMAT_ORDER = (Format.YOY, Format.QOQ, Format.PCT_ASSETS, Format.PCT_REVENUE, Format.RAW)


@dataclass(frozen=True)
class FeatureColumnMeta:
    """Identity of one matrix column: source variable, format, lag.

    cap is the stored outlier ceiling (set by clip_outliers) and expand_lags
    marks financial-origin columns that build_lags multiplies out; neither
    participates in column identity.
    """

    base_variable: str
    format: Format
    lag: int = 0
    cap: float | None = field(default=None, compare=False)
    expand_lags: bool = field(default=True, compare=False)

    @property
    def name(self) -> str:
        base = f"{self.base_variable}_{self.format.value}"
        return base if self.lag == 0 else f"{base}_l{self.lag:02d}"


@dataclass
class FeatureMatrix:
    """Samples-by-features values with per-column metadata.

    origin_positive marks cells whose source inputs were all strictly
    positive (the population the outlier caps are estimated on) and
    raw_missing carries per-variable missing masks for the crucial-variable
    deletion rule. Both are attached by convert_formats and dropped by the
    stages that consume them.
    """

    keys: list
    values: np.ndarray
    metas: list
    origin_positive: np.ndarray | None = None
    raw_missing: dict | None = None
    dedupe_pairs: list = field(default_factory=list)

    def __post_init__(self):
        n, d = self.values.shape
        if len(self.keys) != n:
            raise PanelError(f"{len(self.keys)} keys for {n} rows")
        if len(self.metas) != d:
            raise PanelError(f"{len(self.metas)} metas for {d} columns")
        idents = {(m.base_variable, m.format, m.lag) for m in self.metas}
        if len(idents) != d:
            raise PanelError("duplicate (base_variable, format, lag) column")

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_cols(self) -> int:
        return self.values.shape[1]

    def column_names(self) -> list:
        return [m.name for m in self.metas]

    def company_slices(self) -> list:
        out = []
        start = 0
        for i in range(1, len(self.keys) + 1):
            if i == len(self.keys) or self.keys[i][0] != self.keys[start][0]:
                out.append((self.keys[start][0], start, i))
                start = i
        return out

    def take_rows(self, mask: np.ndarray) -> "FeatureMatrix":
        mask = np.asarray(mask)
        keys = [k for k, keep in zip(self.keys, mask) if keep]
        return FeatureMatrix(
            keys, self.values[mask], list(self.metas),
            origin_positive=None if self.origin_positive is None
            else self.origin_positive[mask],
            raw_missing=None if self.raw_missing is None
            else {name: col[mask] for name, col in self.raw_missing.items()},
            dedupe_pairs=list(self.dedupe_pairs))


@dataclass
class LabelVector:
    """Per-key class labels; NaN marks rows without a computable target."""

    keys: list
    values: np.ndarray
    n_classes: int
    horizon: str
    scheme: str

    def __post_init__(self):
        if self.n_classes not in (2, 3, 6, 9):
            raise ValueError(f"n_classes must be one of 2,3,6,9, got {self.n_classes}")
        if self.horizon not in ("qoq", "yoy"):
            raise ValueError(f"horizon must be qoq or yoy, got {self.horizon!r}")
        if self.scheme not in ("quantile_rank", "sign"):
            raise ValueError(f"unknown scheme {self.scheme!r}")

    def present(self) -> np.ndarray:
        return ~np.isnan(self.values)


@dataclass
class FillReport:
    """Audit record of the missing-value policy."""

    chosen_p: dict = field(default_factory=dict)
    residuals: dict = field(default_factory=dict)
    deleted_rows: int = 0
    deleted_columns: list = field(default_factory=list)
    relevant_filled: int = 0
    constant_filled: int = 0

    def to_records(self) -> list:
        out = []
        for name in sorted(self.chosen_p):
            res = self.residuals.get(name)
            out.append({
                "column": name,
                "chosen_p": int(self.chosen_p[name]),
                "mean_square_residuals": None if res is None else
                    [None if np.isnan(v) else float(v) for v in res],
            })
        return out


def _shifted(values: np.ndarray, q_idx: np.ndarray, start: int, stop: int,
             shift: int) -> np.ndarray:
    """Values of the same company shift quarters earlier, NaN where absent."""
    qi = q_idx[start:stop]
    want = qi - shift
    pos = np.searchsorted(qi, want)
    pos_clipped = np.minimum(pos, len(qi) - 1)
    ok = (want >= qi[0]) & (qi[pos_clipped] == want)
    out = np.full(stop - start, np.nan)
    out[ok] = values[start:stop][pos_clipped[ok]]
    return out


def convert_formats(panel: RawPanel, schema, *,
                    assets_var: str = DEFAULT_ASSETS_VAR,
                    revenue_var: str = DEFAULT_REVENUE_VAR,
                    formula_variant: str = "standard") -> FeatureMatrix:
    """Emit one lag-0 column per (variable, enabled format).

    Growth rates use zero-clamped inputs: QoQ = (T0 - T-1)/T-1 and
    YoY = (T0 - T-4)/T-4 after max(value, 0) on both quarters. Percent
    formats are ln(max(T0, 0)/denominator + 1) with the denominator taken
    as-is and required positive. Raw passes through untouched. Missing
    propagates; a clamped zero denominator yields +inf (capped later) or
    NaN when the numerator is zero too.

    formula_variant="minus_one" subtracts an extra 1 from the growth rates.
    """
    if formula_variant not in ("standard", "minus_one"):
        raise ValueError(f"unknown formula_variant {formula_variant!r}")
    wants_assets = any(Format.PCT_ASSETS in s.formats for s in schema)
    wants_revenue = any(Format.PCT_REVENUE in s.formats for s in schema)
    if wants_assets and assets_var not in panel.columns:
        raise MissingDenominatorError(f"{assets_var!r} column required for pct_assets")
    if wants_revenue and revenue_var not in panel.columns:
        raise MissingDenominatorError(f"{revenue_var!r} column required for pct_revenue")

    n = panel.n_rows
    q_idx = np.array([q.index for _, q in panel.keys], dtype=np.int64)
    slices = panel.company_slices()
    extra = -1.0 if formula_variant == "minus_one" else 0.0

    def growth(raw: np.ndarray, shift: int):
        prev = np.full(n, np.nan)
        for _, start, stop in slices:
            prev[start:stop] = _shifted(raw, q_idx, start, stop, shift)
        cur_c = np.maximum(raw, 0.0)
        prev_c = np.maximum(prev, 0.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = (cur_c - prev_c) / prev_c + extra
        origin = (raw > 0) & (prev > 0)
        return out, origin

    def ratio(raw: np.ndarray, denom: np.ndarray):
        num = np.maximum(raw, 0.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.log(num / denom + 1.0)
        out[~(denom > 0)] = np.nan
        origin = (raw > 0) & (denom > 0)
        return out, origin

    assets = panel.columns.get(assets_var)
    revenue = panel.columns.get(revenue_var)

    cols, metas, origins = [], [], []
    for spec in schema:
        raw = panel.columns[spec.name]
        for fmt in FORMAT_ORDER:
            if fmt not in spec.formats:
                continue
            if fmt is Format.QOQ:
                col, origin = growth(raw, 1)
            elif fmt is Format.YOY:
                col, origin = growth(raw, 4)
            elif fmt is Format.PCT_ASSETS:
                col, origin = ratio(raw, assets)
            elif fmt is Format.PCT_REVENUE:
                col, origin = ratio(raw, revenue)
            else:
                col, origin = raw.copy(), np.ones(n, dtype=bool)
            cols.append(col)
            origins.append(origin)
            metas.append(FeatureColumnMeta(
                spec.name, fmt, 0, expand_lags=spec.is_financial))

    values = np.column_stack(cols) if cols else np.empty((n, 0))
    origin_positive = np.column_stack(origins) if origins else np.empty((n, 0), bool)
    raw_missing = {s.name: np.isnan(panel.columns[s.name]) for s in schema}
    return FeatureMatrix(list(panel.keys), values, metas,
                         origin_positive=origin_positive, raw_missing=raw_missing)


def clip_outliers(m: FeatureMatrix, pct: float = 0.95,
                  fit_rows: np.ndarray | None = None) -> FeatureMatrix:
    """Cap converted columns at the pct quantile of their positive-origin values.

    The cap population is restricted to cells whose source inputs were all
    strictly positive (no clamp, no zero denominator); the 'higher' quantile
    is used so the cap is always an observed value. Caps are estimated on
    fit_rows (default: all rows), applied everywhere, and stored in the
    column metas for reuse. Raw columns are untouched.
    """
    values = m.values.copy()
    metas = list(m.metas)
    rows = np.arange(m.n_rows) if fit_rows is None else np.asarray(fit_rows)
    for j, meta in enumerate(metas):
        if meta.format not in CONVERTED_FORMATS:
            continue
        col_fit = values[rows, j]
        finite = np.isfinite(col_fit)
        if m.origin_positive is not None:
            mask = finite & m.origin_positive[rows, j]
        else:
            mask = finite
        if not mask.any():
            continue
        cap = float(np.quantile(col_fit[mask], pct, method="higher"))
        values[:, j] = np.minimum(values[:, j], cap)
        metas[j] = replace(meta, cap=cap)
    return FeatureMatrix(list(m.keys), values, metas,
                         origin_positive=None if m.origin_positive is None
                         else m.origin_positive.copy(),
                         raw_missing=m.raw_missing,
                         dedupe_pairs=list(m.dedupe_pairs))


def apply_caps(m: FeatureMatrix, reference_metas) -> FeatureMatrix:
    """Re-apply caps previously stored by clip_outliers to a new matrix."""
    caps = {(r.base_variable, r.format, r.lag): r.cap
            for r in reference_metas if r.cap is not None}
    values = m.values.copy()
    metas = list(m.metas)
    for j, meta in enumerate(metas):
        cap = caps.get((meta.base_variable, meta.format, meta.lag))
        if cap is None:
            continue
        values[:, j] = np.minimum(values[:, j], cap)
        metas[j] = replace(meta, cap=cap)
    return FeatureMatrix(list(m.keys), values, metas,
                         origin_positive=m.origin_positive,
                         raw_missing=m.raw_missing,
                         dedupe_pairs=list(m.dedupe_pairs))


def fill_period_residuals(series: np.ndarray, max_p: int = 20) -> np.ndarray:
    """Mean squared one-step residual for rolling means of 1..max_p past values.

    The window holds up to p most recent present values (partial windows at
    the start), so every present value after the first contributes for every
    p and the residual counts match across candidates.
    """
    series = np.asarray(series, dtype=np.float64)
    vals = series[~np.isnan(series)]
    n = len(vals)
    if n < 2:
        raise InsufficientDataError(f"need >= 2 present values, got {n}")
    csum = np.concatenate(([0.0], np.cumsum(vals)))
    i_idx = np.arange(1, n)
    p_grid = np.arange(1, max_p + 1)[:, None]
    w = np.minimum(p_grid, i_idx[None, :])
    pred = (csum[i_idx] - csum[i_idx - w]) / w
    resid = (vals[i_idx] - pred) ** 2
    return resid.mean(axis=1)


def select_fill_period(series: np.ndarray, max_p: int = 20) -> int:
    """Rolling period in 1..max_p minimizing the mean squared residual.

    Ties resolve toward the smallest period.
    """
    residuals = fill_period_residuals(series, max_p)
    return int(np.argmin(residuals)) + 1


def _pooled_fill_period(column: np.ndarray, slices, fit_mask: np.ndarray,
                        max_p: int):
    """Choose p for one column by pooling residuals across companies.

    Residual contributions are restricted to present values on fit rows;
    the look-back window itself may use any past present value.
    """
    sse = np.zeros(max_p)
    cnt = 0
    for _, start, stop in slices:
        seg = column[start:stop]
        present = ~np.isnan(seg)
        if present.sum() < 2:
            continue
        vals = seg[present]
        contrib = fit_mask[start:stop][present][1:]
        if not contrib.any():
            continue
        n = len(vals)
        csum = np.concatenate(([0.0], np.cumsum(vals)))
        i_idx = np.arange(1, n)
        w = np.minimum(np.arange(1, max_p + 1)[:, None], i_idx[None, :])
        pred = (csum[i_idx] - csum[i_idx - w]) / w
        resid = (vals[i_idx] - pred) ** 2
        sse += resid[:, contrib].sum(axis=1)
        cnt += int(contrib.sum())
    if cnt == 0:
        return 1, None
    mse = sse / cnt
    return int(np.argmin(mse)) + 1, mse


def _fill_column_runs(seg: np.ndarray, p: int, horizon_cap: int) -> int:
    """Fill the first horizon_cap values of each NaN run with the rolling
    mean of the last p present-or-filled values. Returns cells filled."""
    isnan = np.isnan(seg)
    if not isnan.any():
        return 0
    filled = 0
    n = len(seg)
    i = 0
    while i < n:
        if not isnan[i]:
            i += 1
            continue
        run_start = i
        while i < n and isnan[i]:
            i += 1
        # window of up to p values directly before the run, skipping NaNs
        window = []
        j = run_start - 1
        while j >= 0 and len(window) < p:
            if not np.isnan(seg[j]):
                window.append(seg[j])
            j -= 1
        if not window:
            continue
        window.reverse()
        for k in range(run_start, min(run_start + horizon_cap, i)):
            value = float(np.mean(window[-p:]))
            seg[k] = value
            window.append(value)
            filled += 1
    return filled


def impute(m: FeatureMatrix, schema, *, look_back: int = 20,
           horizon_cap: int = 8, max_p: int = 20,
           fit_rows: np.ndarray | None = None):
    """Run the four-tier missing-value policy; returns (matrix, FillReport).

    1. Delete rows where any crucial variable is missing anywhere in the
       current-plus-look-back window (quarters without a stored row count
       as missing).
    2. Delete columns whose missing rate on the surviving fit rows exceeds
       70 percent, measured before any filling.
    3. For percent-format columns, fill the first horizon_cap values of
       each missing run with the rolling mean of the previous p present
       values, p chosen per column by residual minimization on fit rows.
    4. Replace every remaining missing cell with the constant -1.

    fit_rows restricts the fitted statistics (deletion rates, fill periods)
    to the training window; deletions and fills still apply to all rows.
    """
    report = FillReport()
    n = m.n_rows
    fit_mask = np.zeros(n, dtype=bool)
    if fit_rows is None:
        fit_mask[:] = True
    else:
        fit_mask[np.asarray(fit_rows)] = True

    # (1) sample deletion on crucial-variable presence over the window
    crucial = [s.name for s in schema if s.crucial]
    retained = np.ones(n, dtype=bool)
    if crucial:
        missing_any = np.zeros(n, dtype=bool)
        for name in crucial:
            if m.raw_missing is not None and name in m.raw_missing:
                missing_any |= m.raw_missing[name]
            else:
                owned = [j for j, meta in enumerate(m.metas)
                         if meta.base_variable == name]
                if not owned:
                    raise PanelError(
                        f"crucial variable {name!r} has no presence information")
                raw_cols = [j for j in owned if m.metas[j].format is Format.RAW]
                j = raw_cols[0] if raw_cols else owned[0]
                missing_any |= np.isnan(m.values[:, j])
        present = ~missing_any
        q_idx = np.array([q.index for _, q in m.keys], dtype=np.int64)
        for _, start, stop in m.company_slices():
            qi = q_idx[start:stop]
            span = qi[-1] - qi[0] + 1
            dense = np.zeros(span, dtype=np.int64)
            dense[qi - qi[0]] = present[start:stop].astype(np.int64)
            csum = np.concatenate(([0], np.cumsum(dense)))
            pos = qi - qi[0]
            ok = np.zeros(stop - start, dtype=bool)
            deep = pos >= look_back - 1
            ok[deep] = (csum[pos[deep] + 1] - csum[pos[deep] + 1 - look_back]
                        ) == look_back
            retained[start:stop] = ok
    report.deleted_rows = int((~retained).sum())

    keys = [k for k, keep in zip(m.keys, retained) if keep]
    values = m.values[retained]
    fit_mask = fit_mask[retained]
    metas = list(m.metas)

    # (2) variable deletion at > 70% missing rate on surviving fit rows
    keep_cols = np.ones(len(metas), dtype=bool)
    fit_values = values[fit_mask]
    if fit_values.shape[0] > 0:
        rates = np.isnan(fit_values).mean(axis=0)
        keep_cols = rates <= 0.70
    report.deleted_columns = [metas[j].name
                              for j in np.flatnonzero(~keep_cols)]
    values = values[:, keep_cols]
    metas = [meta for meta, keep in zip(metas, keep_cols) if keep]

    sub = FeatureMatrix(keys, values, metas)
    slices = sub.company_slices()

    # (3) relevant fill-in for percent formats
    for j, meta in enumerate(metas):
        if meta.format not in RATIO_FORMATS:
            continue
        col = values[:, j]
        p, mse = _pooled_fill_period(col, slices, fit_mask, max_p)
        report.chosen_p[meta.name] = p
        if mse is not None:
            report.residuals[meta.name] = mse
        if not np.isnan(col).any():
            continue
        for _, start, stop in slices:
            report.relevant_filled += _fill_column_runs(
                col[start:stop], p, horizon_cap)

    # (4) constant fill-in
    remaining = np.isnan(values)
    report.constant_filled = int(remaining.sum())
    values[remaining] = CONSTANT_FILL

    out = FeatureMatrix(keys, values, metas)
    return out, report


def correlation_dedupe_inputs(m: FeatureMatrix, cutoff: float = 0.9,
                              fit_rows: np.ndarray | None = None) -> FeatureMatrix:
    """Greedy scan in meta order dropping columns correlated above cutoff.

    Pearson correlation is measured on fit_rows (default: all). Dropped
    (kept-partner, r) pairs are recorded on the returned matrix. Constant
    columns correlate with nothing and are kept.
    """
    rows = np.arange(m.n_rows) if fit_rows is None else np.asarray(fit_rows)
    x = m.values[rows]
    n = x.shape[0]
    mu = x.mean(axis=0)
    sd = x.std(axis=0)
    z = np.zeros_like(x)
    nz = sd > 0
    z[:, nz] = (x[:, nz] - mu[nz]) / sd[nz]

    kept = []
    pairs = []
    kept_z = np.empty((n, m.n_cols))
    for j in range(m.n_cols):
        if kept:
            r = kept_z[:, :len(kept)].T @ z[:, j] / n
            worst = int(np.argmax(np.abs(r)))
            if abs(r[worst]) > cutoff:
                pairs.append((m.metas[j].name, m.metas[kept[worst]].name,
                              float(r[worst])))
                continue
        kept_z[:, len(kept)] = z[:, j]
        kept.append(j)

    kept_idx = np.array(kept, dtype=np.int64)
    return FeatureMatrix(list(m.keys), m.values[:, kept_idx].copy(),
                         [m.metas[j] for j in kept],
                         dedupe_pairs=pairs)


def build_lags(m: FeatureMatrix, n_lags: int = 20) -> FeatureMatrix:
    """Expand each lag-flagged column into n_lags columns (lag 0..n_lags-1).

    Lag k takes the same company's value k quarters earlier; rows lacking a
    stored row for any required quarter are dropped. Macro and market
    columns pass through unlagged.
    """
    if n_lags < 1:
        raise ValueError("n_lags must be >= 1")
    lag_cols = [j for j, meta in enumerate(m.metas) if meta.expand_lags]
    flat_cols = [j for j, meta in enumerate(m.metas) if not meta.expand_lags]
    if any(m.metas[j].lag != 0 for j in lag_cols):
        raise PanelError("build_lags expects a lag-0 matrix")

    q_idx = np.array([q.index for _, q in m.keys], dtype=np.int64)
    keep_parts = []
    gather_parts = []
    for _, start, stop in m.company_slices():
        qi = q_idx[start:stop]
        length = stop - start
        gather = np.full((length, n_lags), -1, dtype=np.int64)
        ok = np.ones(length, dtype=bool)
        if qi[-1] - qi[0] == length - 1:
            t = np.arange(length)
            ok = t >= n_lags - 1
            for k in range(n_lags):
                gather[:, k] = start + t - k
        else:
            for k in range(n_lags):
                want = qi - k
                pos = np.searchsorted(qi, want)
                pos_c = np.minimum(pos, length - 1)
                hit = (want >= qi[0]) & (qi[pos_c] == want)
                ok &= hit
                gather[hit, k] = start + pos_c[hit]
        keep_parts.append(np.flatnonzero(ok) + start)
        gather_parts.append(gather[ok])

    keep = np.concatenate(keep_parts) if keep_parts else np.empty(0, np.int64)
    gather = (np.concatenate(gather_parts, axis=0) if gather_parts
              else np.empty((0, n_lags), np.int64))

    n_out = len(keep)
    d_out = len(lag_cols) * n_lags + len(flat_cols)
    values = np.empty((n_out, d_out))
    metas = []
    col = 0
    for j in lag_cols:
        base = m.metas[j]
        for k in range(n_lags):
            values[:, col] = m.values[gather[:, k], j]
            metas.append(replace(base, lag=k, expand_lags=False))
            col += 1
    for j in flat_cols:
        values[:, col] = m.values[keep, j]
        metas.append(m.metas[j])
        col += 1
    keys = [m.keys[i] for i in keep]
    return FeatureMatrix(keys, values, metas)


def relative_change_targets(keys, slices, future_income: np.ndarray,
                            past_income: np.ndarray, assets: np.ndarray,
                            horizon: str) -> np.ndarray:
    """Relative earnings-change targets per key.

    qoq: (future(T+1) - past(T)) / assets(T)
    yoy: (sum future(T+1..T+4) - sum past(T-3..T)) / assets(T)

    Every term must be present and assets strictly positive, else NaN.
    """
    n = len(keys)
    q_idx = np.array([q.index for _, q in keys], dtype=np.int64)
    num = np.full(n, np.nan)
    for _, start, stop in slices:
        if horizon == "qoq":
            fut = _shifted(future_income, q_idx, start, stop, -1)
            num[start:stop] = fut - past_income[start:stop]
        else:
            acc = np.zeros(stop - start)
            ok = np.ones(stop - start, dtype=bool)
            for k in (1, 2, 3, 4):
                term = _shifted(future_income, q_idx, start, stop, -k)
                ok &= ~np.isnan(term)
                acc = acc + np.where(np.isnan(term), 0.0, term)
            for k in (0, 1, 2, 3):
                term = _shifted(past_income, q_idx, start, stop, k)
                ok &= ~np.isnan(term)
                acc = acc - np.where(np.isnan(term), 0.0, term)
            acc[~ok] = np.nan
            num[start:stop] = acc
    with np.errstate(divide="ignore", invalid="ignore"):
        target = num / assets
    target[~(assets > 0)] = np.nan
    return target


def quantile_rank_classes(keys, targets: np.ndarray, n_classes: int) -> np.ndarray:
    """Cut targets into equal-count classes within each calendar quarter.

    Ranks ascend with the target (higher target, higher class); ties break
    on company_id so the labeling is deterministic. Class counts within a
    quarter differ by at most one.
    """
    n = len(keys)
    out = np.full(n, np.nan)
    companies = np.array([c for c, _ in keys])
    quarter_rows = {}
    for i, (_, q) in enumerate(keys):
        quarter_rows.setdefault(q.index, []).append(i)
    for rows in quarter_rows.values():
        rows = np.array(rows, dtype=np.int64)
        present = rows[~np.isnan(targets[rows])]
        k = len(present)
        if k == 0:
            continue
        order = np.lexsort((companies[present], targets[present]))
        ranks = np.arange(k)
        out[present[order]] = (ranks * n_classes) // k
    return out


def build_labels(panel: RawPanel, horizon: str = "qoq", n_classes: int = 3,
                 scheme: str = "quantile_rank", *,
                 income_var: str = "niq",
                 assets_var: str = DEFAULT_ASSETS_VAR) -> LabelVector:
    """Construct classification labels from relative earnings changes.

    quantile_rank cuts the targets within each calendar quarter into
    n_classes equal-count bins; sign yields 1 for a strict increase and 0
    otherwise. Rows with missing future income get a missing label.
    """
    if income_var not in panel.columns or assets_var not in panel.columns:
        raise PanelError(
            f"labels need {income_var!r} and {assets_var!r} columns")
    slices = panel.company_slices()
    income = panel.columns[income_var]
    assets = panel.columns[assets_var]
    targets = relative_change_targets(
        panel.keys, slices, income, income, assets, horizon)
    if scheme == "sign":
        if n_classes != 2:
            raise ValueError("sign scheme requires n_classes=2")
        values = np.where(targets > 0, 1.0, 0.0)
        values[np.isnan(targets)] = np.nan
    else:
        values = quantile_rank_classes(panel.keys, targets, n_classes)
    return LabelVector(list(panel.keys), values, n_classes, horizon, scheme)
