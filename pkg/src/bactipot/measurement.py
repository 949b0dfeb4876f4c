"""qPCR cycle-threshold observation model and dataset I/O.

A qPCR run reports a Ct value that is linear in the base-2 log of the genome
count: ``ct = a - log2(total) + noise``, where ``a`` is an instrument
calibration constant and the noise is centered Gaussian. Lower Ct means more
genomes. This module synthesizes Ct observations from simulated populations
and reads/writes the CSV interchange format used for real plate data.

CSV schema (UTF-8, header required)::

    concentration,replicate,ct
    0.015625,1,-21.97
    ...

Concentrations are written as plain decimal literals (never exponent
notation), replicates are positive integers, and each (concentration,
replicate) pair appears at most once. An untreated control lane, when
present, is recorded at a sentinel concentration below the treated grid.
"""

from __future__ import annotations

import csv
import io
import math
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterable, Iterator, Sequence

import numpy as np

from .branching import GrowthParams, dist_from_mean, mean_from_concentration, simulate_batch
from .errors import DatasetFormatError, InvalidParameterError

CSV_COLUMNS = ("concentration", "replicate", "ct")


@dataclass(frozen=True)
class MeasurementConfig:
    """Parameters of one synthetic qPCR experiment.

    Attributes:
        a: Calibration constant (Ct units). Zero for plain synthetic data.
        sigma_eps: Standard deviation of the Ct measurement noise, >= 0.
        x0: Initial live cells per well.
        n_generations: Generations grown before measurement.
        replicates: Independent wells per concentration.
    """

    a: float = 0.0
    sigma_eps: float = 0.2
    x0: int = 10_000
    n_generations: int = 10
    replicates: int = 3

    def __post_init__(self):
        if self.sigma_eps < 0.0 or math.isnan(self.sigma_eps):
            raise InvalidParameterError(f"sigma_eps must be >= 0, got {self.sigma_eps!r}")
        if self.x0 < 1:
            raise InvalidParameterError(f"x0 must be >= 1, got {self.x0!r}")
        if self.n_generations < 1:
            raise InvalidParameterError(
                f"n_generations must be >= 1, got {self.n_generations!r}"
            )
        if self.replicates < 1:
            raise InvalidParameterError(f"replicates must be >= 1, got {self.replicates!r}")


@dataclass(frozen=True)
class CtObservation:
    """One well: concentration, replicate index, measured Ct."""

    concentration: float
    replicate: int
    ct: float

    def __post_init__(self):
        if not (self.concentration > 0.0):
            raise InvalidParameterError(
                f"concentration must be positive, got {self.concentration!r}"
            )
        if self.replicate < 1:
            raise InvalidParameterError(f"replicate must be >= 1, got {self.replicate!r}")
        if not math.isfinite(self.ct):
            raise InvalidParameterError(f"ct must be finite, got {self.ct!r}")


@dataclass(frozen=True)
class CtDataset:
    """An ordered collection of Ct observations over a concentration grid.

    ``config`` is carried along for synthetic data and absent (None) for
    ingested lab data.
    """

    observations: tuple[CtObservation, ...]
    config: MeasurementConfig | None = None

    def __post_init__(self):
        object.__setattr__(self, "observations", tuple(self.observations))
        seen = set()
        for obs in self.observations:
            key = (obs.concentration, obs.replicate)
            if key in seen:
                raise InvalidParameterError(
                    f"duplicate (concentration, replicate) pair {key!r}"
                )
            seen.add(key)

    def __len__(self) -> int:
        return len(self.observations)

    def concentrations(self) -> tuple[float, ...]:
        """Distinct concentrations in increasing order."""
        return tuple(sorted({obs.concentration for obs in self.observations}))

    def cts_at(self, concentration: float) -> tuple[float, ...]:
        """Ct values measured at one concentration, in input order."""
        return tuple(
            obs.ct for obs in self.observations if obs.concentration == concentration
        )

    def grouped(self) -> dict[float, tuple[float, ...]]:
        """Ct values keyed by concentration, keys in increasing order."""
        groups: dict[float, list[float]] = {}
        for obs in self.observations:
            groups.setdefault(obs.concentration, []).append(obs.ct)
        return {c: tuple(groups[c]) for c in sorted(groups)}


def synthesize_ct(
    total_count: int, config: MeasurementConfig, rng: np.random.Generator
) -> float:
    """Ct value for a single well holding ``total_count`` genomes.

    Returns ``a - log2(total_count) + sigma_eps * N(0, 1)``. With zero noise
    the result is exact, bit for bit.

    Raises:
        InvalidParameterError: if ``total_count`` is not >= 1 (the process
            never produces fewer genomes than it started with, so a zero
            count signals caller error).
    """
    if total_count < 1:
        raise InvalidParameterError(f"total_count must be >= 1, got {total_count!r}")
    return config.a - math.log2(total_count) + config.sigma_eps * float(rng.standard_normal())


def simulate_experiment(
    params: GrowthParams,
    concentrations: Sequence[float],
    config: MeasurementConfig,
    rng: np.random.Generator,
    untreated_lane: float | None = None,
) -> CtDataset:
    """Synthesize a full Ct dataset for one plate.

    For each concentration the offspring mean is computed from the
    dose-response law, ``config.replicates`` independent populations are
    grown for ``config.n_generations`` generations from ``config.x0`` cells,
    and each final total count is turned into one Ct observation. All wells
    are independent.

    Args:
        params: True dose-response parameters.
        concentrations: Treated lanes; non-empty, positive, strictly
            increasing.
        config: Experiment dimensions and noise level.
        rng: Source of randomness.
        untreated_lane: Optional sentinel concentration, strictly below the
            grid, at which an antibiotic-free control lane (offspring mean 2)
            is recorded. None synthesizes treated lanes only.

    Returns:
        Dataset with ``config`` attached; replicates are numbered from 1.
    """
    grid = list(concentrations)
    if not grid:
        raise InvalidParameterError("concentration grid must be non-empty")
    if any(c <= 0.0 for c in grid):
        raise InvalidParameterError("concentrations must be positive")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise InvalidParameterError("concentrations must be strictly increasing")

    observations: list[CtObservation] = []
    if untreated_lane is not None:
        if not (0.0 < untreated_lane < grid[0]):
            raise InvalidParameterError(
                "untreated sentinel concentration must lie strictly below the grid"
            )
        observations.extend(_synthesize_lane(2.0, untreated_lane, config, rng))
    for c in grid:
        m = mean_from_concentration(params, c)
        observations.extend(_synthesize_lane(m, c, config, rng))
    return CtDataset(tuple(observations), config=config)


def _synthesize_lane(
    mean: float, concentration: float, config: MeasurementConfig, rng: np.random.Generator
) -> list[CtObservation]:
    alive, dead = simulate_batch(
        config.x0, dist_from_mean(mean), config.n_generations, config.replicates, rng
    )
    totals = (alive + dead).astype(float)
    cts = config.a - np.log2(totals) + config.sigma_eps * rng.standard_normal(config.replicates)
    return [
        CtObservation(concentration, i + 1, float(ct)) for i, ct in enumerate(cts)
    ]


# ---------------------------------------------------------------------------
# CSV ingestion / serialization
# ---------------------------------------------------------------------------


def read_dataset(source: str | Path | IO[str]) -> CtDataset:
    """Parse a Ct dataset from CSV.

    Rows are preserved in input order. Errors report the 1-based line number
    of the offending record.

    Args:
        source: Path or open text stream holding CSV per the module schema.

    Raises:
        DatasetFormatError: on a bad header, malformed number, out-of-domain
            value, or duplicate (concentration, replicate) pair.
    """
    with _open_text(source, "r") as stream:
        reader = csv.reader(stream)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetFormatError("empty file: missing header") from None
        _check_header(header)

        observations: list[CtObservation] = []
        seen: set[tuple[float, int]] = set()
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise DatasetFormatError(
                    f"expected 3 fields, got {len(row)}", line=line
                )
            concentration = _parse_float(row[0], "concentration", line)
            replicate = _parse_int(row[1], "replicate", line)
            ct = _parse_float(row[2], "ct", line)
            try:
                obs = CtObservation(concentration, replicate, ct)
            except InvalidParameterError as exc:
                raise DatasetFormatError(str(exc), line=line) from None
            key = (obs.concentration, obs.replicate)
            if key in seen:
                raise DatasetFormatError(
                    f"duplicate (concentration, replicate) pair {key!r}", line=line
                )
            seen.add(key)
            observations.append(obs)
    return CtDataset(tuple(observations), config=None)


def write_dataset(dataset: CtDataset, sink: str | Path | IO[str]) -> None:
    """Write a dataset as CSV, the inverse of ``read_dataset``.

    Floats are rendered in canonical positional-decimal form: the shortest
    decimal literal that round-trips exactly, never exponent notation.
    """
    with _open_text(sink, "w") as stream:
        writer = csv.writer(stream, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for obs in dataset.observations:
            writer.writerow(
                [_format_float(obs.concentration), obs.replicate, _format_float(obs.ct)]
            )


def _format_float(value: float) -> str:
    return np.format_float_positional(value, unique=True, trim="0")


def _check_header(header: Iterable[str]) -> None:
    names = [h.strip() for h in header]
    if names == list(CSV_COLUMNS):
        return
    missing = [c for c in CSV_COLUMNS if c not in names]
    if missing:
        raise DatasetFormatError(f"missing column(s) {missing!r} in header", line=1)
    raise DatasetFormatError(
        f"header must be exactly {','.join(CSV_COLUMNS)!r}, got {names!r}", line=1
    )


def _parse_float(text: str, column: str, line: int) -> float:
    try:
        return float(text)
    except ValueError:
        raise DatasetFormatError(
            f"malformed number {text!r} in column {column!r}", line=line
        ) from None


def _parse_int(text: str, column: str, line: int) -> int:
    try:
        return int(text)
    except ValueError:
        raise DatasetFormatError(
            f"malformed integer {text!r} in column {column!r}", line=line
        ) from None


@contextmanager
def _open_text(target: str | Path | IO[str], mode: str) -> Iterator[IO[str]]:
    if isinstance(target, (str, Path)):
        with open(target, mode, encoding="utf-8", newline="") as handle:
            yield handle
    elif isinstance(target, io.TextIOBase) or hasattr(target, "read" if "r" in mode else "write"):
        yield target
    else:
        raise InvalidParameterError(f"expected path or text stream, got {target!r}")
