"""Risk classes, model parameters, and claims panels.

A risk class is a covariate combination with a-priori means
lambda1 = exp(x beta1), lambda2 = exp(x beta2) under dummy coding, plus a
portfolio weight.  Claims panels hold per-subject yearly records
(count n, aggregate amount s) with constant covariates per subject.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from itertools import product
from pathlib import Path

import numpy as np

from bonusmalus.effects import EffectsSpec

__all__ = [
    "ENTITY_LEVELS",
    "COVERAGE_LEVELS",
    "CoefficientSet",
    "default_design",
    "RiskClass",
    "Portfolio",
    "ModelParams",
    "build_classes",
    "cross_classes",
    "cross_weights",
    "ClaimsPanel",
    "ingest_panel",
    "write_panel_csv",
    "summarize_panel",
    "PanelSummary",
]

# Default categorical structure: six entity types (baseline Miscellaneous)
# and three coverage groups (baseline Coverage1).
ENTITY_LEVELS = ("Miscellaneous", "City", "County", "School", "Town", "Village")
COVERAGE_LEVELS = ("Coverage1", "Coverage2", "Coverage3")

PANEL_COLUMNS = ("subject", "year", "n", "s", "entity", "coverage")


@dataclass(frozen=True)
class CoefficientSet:
    """Log-link regression coefficients shared by all modules.

    ``labels`` names the position of every coefficient; any label equal to
    "Intercept" is always active.  ``baselines`` lists the covariate levels
    absorbed into the intercept, which contribute nothing to the linear
    predictor but are still legal level names.
    """

    beta1: np.ndarray
    beta2: np.ndarray
    labels: tuple[str, ...]
    baselines: tuple[str, ...] = ("Miscellaneous", "Coverage1")

    def __post_init__(self) -> None:
        b1 = np.asarray(self.beta1, dtype=float)
        b2 = np.asarray(self.beta2, dtype=float)
        object.__setattr__(self, "beta1", b1)
        object.__setattr__(self, "beta2", b2)
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "baselines", tuple(self.baselines))
        if b1.ndim != 1 or b2.ndim != 1:
            raise ValueError("beta1 and beta2 must be vectors")
        if len(self.labels) != b1.shape[0] or len(self.labels) != b2.shape[0]:
            raise ValueError(
                f"label count {len(self.labels)} must match coefficient "
                f"lengths {b1.shape[0]} and {b2.shape[0]}"
            )
        if len(set(self.labels)) != len(self.labels):
            raise ValueError("labels must be unique")
        if set(self.labels) & set(self.baselines):
            raise ValueError("a level cannot be both a label and a baseline")
        if not (np.all(np.isfinite(b1)) and np.all(np.isfinite(b2))):
            raise ValueError("coefficients must be finite")

    @property
    def size(self) -> int:
        return len(self.labels)

    def design_row(self, levels: tuple[str, ...]) -> np.ndarray:
        """Dummy-coded design vector for one covariate combination."""
        x = np.zeros(self.size)
        try:
            x[self.labels.index("Intercept")] = 1.0
        except ValueError:
            pass
        for level in levels:
            if level in self.baselines:
                continue
            try:
                x[self.labels.index(level)] = 1.0
            except ValueError:
                raise ValueError(
                    f"unknown covariate level {level!r}; expected one of "
                    f"{sorted(set(self.labels) - {'Intercept'}) + sorted(self.baselines)}"
                ) from None
        return x


def default_design(beta1, beta2) -> CoefficientSet:
    """CoefficientSet for the standard entity/coverage structure.

    Positions: Intercept, the five non-baseline entity levels, then the two
    non-baseline coverage levels.
    """
    labels = ("Intercept",) + ENTITY_LEVELS[1:] + COVERAGE_LEVELS[1:]
    return CoefficientSet(np.asarray(beta1, float), np.asarray(beta2, float), labels)


@dataclass(frozen=True)
class RiskClass:
    """One a-priori class: label, means, portfolio weight."""

    label: str
    lambda1: float
    lambda2: float
    weight: float
    levels: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not (self.lambda1 > 0.0 and math.isfinite(self.lambda1)):
            raise ValueError(f"lambda1 must be positive, got {self.lambda1}")
        if not (self.lambda2 > 0.0 and math.isfinite(self.lambda2)):
            raise ValueError(f"lambda2 must be positive, got {self.lambda2}")
        if not (0.0 <= self.weight <= 1.0):
            raise ValueError(f"weight must lie in [0, 1], got {self.weight}")
        object.__setattr__(self, "levels", tuple(self.levels))


@dataclass(frozen=True)
class Portfolio:
    """A finite mixture of risk classes with weights summing to one."""

    classes: tuple[RiskClass, ...]

    def __post_init__(self) -> None:
        classes = tuple(self.classes)
        if not classes:
            raise ValueError("portfolio needs at least one class")
        total = math.fsum(c.weight for c in classes)
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"class weights must sum to 1 within 1e-12, got {total!r}")
        object.__setattr__(self, "classes", classes)

    def __len__(self) -> int:
        return len(self.classes)

    @property
    def weights(self) -> np.ndarray:
        return np.array([c.weight for c in self.classes])

    @property
    def lambda1(self) -> np.ndarray:
        return np.array([c.lambda1 for c in self.classes])

    @property
    def lambda2(self) -> np.ndarray:
        return np.array([c.lambda2 for c in self.classes])


@dataclass(frozen=True)
class ModelParams:
    """Full model parameterization: coefficients, effect law, dispersions.

    The count family is Poisson, so psi1 is pinned to 1.0 and rejected
    otherwise; psi2 is the severity dispersion.
    """

    coeffs: CoefficientSet
    effects: EffectsSpec
    psi2: float
    psi1: float = 1.0

    def __post_init__(self) -> None:
        if not (self.psi2 > 0.0 and math.isfinite(self.psi2)):
            raise ValueError(f"psi2 must be positive, got {self.psi2}")
        if self.psi1 != 1.0:
            raise ValueError("psi1 is fixed at 1.0 (Poisson counts)")


def cross_classes(*level_lists: tuple[str, ...]) -> list[tuple[str, ...]]:
    """Cartesian product of covariate levels, first axis slowest."""
    return [tuple(combo) for combo in product(*level_lists)]


def cross_weights(*proportion_lists) -> np.ndarray:
    """Product-of-marginals joint weights for :func:`cross_classes` order.

    The joint composition of the covariates is often unavailable; the
    product of the marginal proportions is the default assumption, and an
    explicit joint vector can be passed to :func:`build_classes` instead.
    """
    w = np.ones(1)
    for props in proportion_lists:
        p = np.asarray(props, dtype=float)
        if np.any(p < 0):
            raise ValueError("proportions must be nonnegative")
        p = p / p.sum()
        w = np.outer(w, p).ravel()
    return w


def build_classes(coeffs: CoefficientSet, class_defs, weights) -> Portfolio:
    """Assemble a Portfolio from covariate combinations and weights.

    Weights must be nonnegative and sum to 1 within 1e-9; they are then
    renormalized so the stored weights sum to 1 exactly.
    """
    class_defs = [tuple(d) for d in class_defs]
    w = np.asarray(weights, dtype=float)
    if w.shape != (len(class_defs),):
        raise ValueError(
            f"got {len(class_defs)} class definitions but {w.shape} weights"
        )
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be nonnegative and finite")
    total = math.fsum(w.tolist())
    if abs(total - 1.0) > 1e-9:
        raise ValueError(f"weights must sum to 1 within 1e-9, got {total!r}")
    w = w / total
    classes = []
    for levels, weight in zip(class_defs, w):
        x = coeffs.design_row(levels)
        classes.append(
            RiskClass(
                label=":".join(levels),
                lambda1=float(np.exp(x @ coeffs.beta1)),
                lambda2=float(np.exp(x @ coeffs.beta2)),
                weight=float(weight),
                levels=levels,
            )
        )
    return Portfolio(tuple(classes))


@dataclass(frozen=True)
class ClaimsPanel:
    """Validated claims history records.

    Arrays are aligned per record.  ``subject`` keeps ids as strings in file
    order; covariates are constant within a subject and years strictly
    increase within a subject.
    """

    subject: np.ndarray
    year: np.ndarray
    n: np.ndarray
    s: np.ndarray
    entity: np.ndarray
    coverage: np.ndarray

    def __post_init__(self) -> None:
        subject = np.asarray(self.subject, dtype=object)
        year = np.asarray(self.year, dtype=int)
        n = np.asarray(self.n, dtype=int)
        s = np.asarray(self.s, dtype=float)
        entity = np.asarray(self.entity, dtype=object)
        coverage = np.asarray(self.coverage, dtype=object)
        lengths = {a.shape[0] for a in (subject, year, n, s, entity, coverage)}
        if len(lengths) != 1:
            raise ValueError(f"column lengths differ: {sorted(lengths)}")
        problems = _validate_records(subject, year, n, s, entity, coverage)
        if problems:
            raise ValueError("invalid panel: " + "; ".join(problems[:10]))
        for name, arr in (
            ("subject", subject), ("year", year), ("n", n),
            ("s", s), ("entity", entity), ("coverage", coverage),
        ):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __len__(self) -> int:
        return self.subject.shape[0]

    @property
    def subject_ids(self) -> list:
        """Distinct subjects in order of first appearance."""
        seen: dict = {}
        for sid in self.subject:
            if sid not in seen:
                seen[sid] = len(seen)
        return list(seen)

    @property
    def n_subjects(self) -> int:
        return len(self.subject_ids)

    def subject_index(self) -> np.ndarray:
        """Record-aligned integer codes, 0..n_subjects-1 by first appearance."""
        order = {sid: i for i, sid in enumerate(self.subject_ids)}
        return np.fromiter((order[sid] for sid in self.subject), dtype=int, count=len(self))

    def subject_levels(self) -> list[tuple[str, str]]:
        """(entity, coverage) per subject, aligned with ``subject_ids``."""
        idx = self.subject_index()
        first = np.full(self.n_subjects, -1, dtype=int)
        for rec, i in enumerate(idx):
            if first[i] < 0:
                first[i] = rec
        return [(str(self.entity[r]), str(self.coverage[r])) for r in first]


def _validate_records(subject, year, n, s, entity, coverage) -> list[str]:
    problems = []
    if np.any(n < 0):
        problems.append(f"negative claim count at record {int(np.argmax(n < 0))}")
    if np.any(s < 0):
        problems.append(f"negative amount at record {int(np.argmax(s < 0))}")
    zero_bad = (n == 0) & (s != 0.0)
    if np.any(zero_bad):
        problems.append(
            f"record {int(np.argmax(zero_bad))} has n=0 but s="
            f"{s[np.argmax(zero_bad)]}"
        )
    last_year: dict = {}
    covs: dict = {}
    seen_pairs = set()
    for i in range(subject.shape[0]):
        key = (subject[i], int(year[i]))
        if key in seen_pairs:
            problems.append(f"duplicate (subject, year) {key} at record {i}")
        seen_pairs.add(key)
        prev = last_year.get(subject[i])
        if prev is not None and int(year[i]) <= prev:
            problems.append(
                f"years not strictly increasing for subject {subject[i]!r} at record {i}"
            )
        last_year[subject[i]] = int(year[i])
        cov = (entity[i], coverage[i])
        ref = covs.setdefault(subject[i], cov)
        if cov != ref:
            problems.append(
                f"covariates change within subject {subject[i]!r} at record {i}: "
                f"{ref} -> {cov}"
            )
    return problems


def ingest_panel(path, schema: dict | None = None) -> ClaimsPanel:
    """Read a claims panel from CSV.

    ``schema`` maps the canonical names (subject, year, n, s, entity,
    coverage) to the file's column names; omitted keys default to
    themselves.  Violations are reported with 1-based file line numbers.
    """
    colmap = {name: name for name in PANEL_COLUMNS}
    if schema:
        unknown = set(schema) - set(PANEL_COLUMNS)
        if unknown:
            raise ValueError(f"schema keys must be among {PANEL_COLUMNS}, got {sorted(unknown)}")
        colmap.update(schema)
    rows = {name: [] for name in PANEL_COLUMNS}
    lines = []
    problems = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ValueError(f"{path}: empty file, expected a header row")
        missing = [colmap[name] for name in PANEL_COLUMNS if colmap[name] not in reader.fieldnames]
        if missing:
            raise ValueError(f"{path}: missing columns {missing}")
        for record in reader:
            line = reader.line_num
            try:
                year = int(record[colmap["year"]])
                n = int(record[colmap["n"]])
                s = float(record[colmap["s"]])
            except (TypeError, ValueError) as exc:
                problems.append(f"line {line}: {exc}")
                continue
            if n < 0:
                problems.append(f"line {line}: negative claim count {n}")
            if s < 0:
                problems.append(f"line {line}: negative amount {s}")
            if n == 0 and s != 0.0:
                problems.append(f"line {line}: n=0 but s={s}")
            rows["subject"].append(record[colmap["subject"]])
            rows["year"].append(year)
            rows["n"].append(n)
            rows["s"].append(s)
            rows["entity"].append(record[colmap["entity"]])
            rows["coverage"].append(record[colmap["coverage"]])
            lines.append(line)
    if problems:
        raise ValueError(f"{path}: " + "; ".join(problems[:10]))
    subject = np.asarray(rows["subject"], dtype=object)
    year = np.asarray(rows["year"], dtype=int)
    n = np.asarray(rows["n"], dtype=int)
    s = np.asarray(rows["s"], dtype=float)
    entity = np.asarray(rows["entity"], dtype=object)
    coverage = np.asarray(rows["coverage"], dtype=object)
    structural = _validate_records(subject, year, n, s, entity, coverage)
    if structural:
        # map record indices back to file line numbers where present
        renumbered = []
        for msg in structural[:10]:
            for rec, line in enumerate(lines):
                token = f"record {rec}"
                if token in msg:
                    msg = msg.replace(token, f"line {line}")
                    break
            renumbered.append(msg)
        raise ValueError(f"{path}: " + "; ".join(renumbered))
    return ClaimsPanel(subject, year, n, s, entity, coverage)


def write_panel_csv(panel: ClaimsPanel, path) -> None:
    """Emit a panel in the canonical CSV layout (round-trips exactly)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(PANEL_COLUMNS)
        for i in range(len(panel)):
            writer.writerow(
                [
                    panel.subject[i],
                    int(panel.year[i]),
                    int(panel.n[i]),
                    repr(float(panel.s[i])),
                    panel.entity[i],
                    panel.coverage[i],
                ]
            )


@dataclass(frozen=True)
class PanelSummary:
    """Descriptive tables for a claims panel.

    frequency_by_year
        Rows (claim count, year, subject-years) plus an "all" year column
        per claim count.
    by_level
        Rows (covariate, level, year, records, mean frequency, average
        severity).  Average severity is claims-weighted, total s over total
        n; empty when the cell has no claims.
    totals
        Single-row table: subjects, subject-years, claims, amount, share of
        zero-claim subject-years.
    """

    frequency_by_year: list[dict] = field(default_factory=list)
    by_level: list[dict] = field(default_factory=list)
    totals: list[dict] = field(default_factory=list)

    def write_csv(self, directory) -> list[Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        written = []
        for name, rows in (
            ("frequency_by_year", self.frequency_by_year),
            ("by_level", self.by_level),
            ("totals", self.totals),
        ):
            out = directory / f"summary_{name}.csv"
            with open(out, "w", newline="", encoding="utf-8") as fh:
                if rows:
                    writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
                    writer.writeheader()
                    writer.writerows(rows)
            written.append(out)
        return written


def summarize_panel(panel: ClaimsPanel) -> PanelSummary:
    """Frequency, severity, and composition summaries of a panel."""
    if len(panel) == 0:
        raise ValueError("cannot summarize an empty panel")
    years = sorted(set(int(y) for y in panel.year))
    max_n = int(panel.n.max())

    freq_rows = []
    for count in range(max_n + 1):
        hit = panel.n == count
        for yr in years:
            freq_rows.append(
                {
                    "frequency": count,
                    "year": yr,
                    "subject_years": int(np.sum(hit & (panel.year == yr))),
                }
            )
        freq_rows.append(
            {"frequency": count, "year": "all", "subject_years": int(np.sum(hit))}
        )

    level_rows = []
    for covariate, column in (("entity", panel.entity), ("coverage", panel.coverage)):
        for level in sorted(set(column.tolist())):
            sel_level = column == level
            for yr in [*years, "all"]:
                sel = sel_level if yr == "all" else sel_level & (panel.year == yr)
                count = int(np.sum(sel))
                if count == 0:
                    continue
                claims = int(panel.n[sel].sum())
                level_rows.append(
                    {
                        "covariate": covariate,
                        "level": level,
                        "year": yr,
                        "records": count,
                        "mean_frequency": repr(float(panel.n[sel].mean())),
                        "avg_severity": repr(float(panel.s[sel].sum() / claims)) if claims else "",
                    }
                )

    zero_share = float(np.mean(panel.n == 0))
    totals = [
        {
            "subjects": panel.n_subjects,
            "subject_years": len(panel),
            "claims": int(panel.n.sum()),
            "amount": repr(float(panel.s.sum())),
            "zero_claim_share": repr(zero_share),
        }
    ]
    return PanelSummary(freq_rows, level_rows, totals)
