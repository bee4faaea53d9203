"""File formats: model / table / quasi-model / factors JSON and the
plain-text sequence format.

Model files store Q and O row-major with ``Q[i][j] = P(next=i+1 | cur=j+1)``;
writers always emit the stationary distribution and readers recompute it and
cross-check within 1e-8 (falling back to verifying ``Q pi = pi`` when the
stationary distribution is not unique, e.g. the identity-transition fixture).
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import DegeneracyError
from .models import Hmm, QuasiHmm, stationary_distribution
from .sampling import SampleBatch
from .stats import JointTable
from .tensordecomp import CpFactors

#: operator-ordering convention recorded in quasi-model files
OPERATOR_CONVENTION = "latest-symbol-leftmost"


def write_model(model: Hmm, path) -> None:
    payload = {
        "d": model.d,
        "k": model.k,
        "Q": model.Q.tolist(),
        "O": model.O.tolist(),
        "pi": model.pi.tolist(),
    }
    Path(path).write_text(json.dumps(payload, indent=1))


def read_model(path) -> Hmm:
    payload = json.loads(Path(path).read_text())
    Q = np.asarray(payload["Q"], float)
    O = np.asarray(payload["O"], float)
    d, k = int(payload["d"]), int(payload["k"])
    stored_pi = payload.get("pi")
    if stored_pi is None:
        return Hmm(d=d, k=k, Q=Q, O=O)
    pi = np.asarray(stored_pi, float)
    try:
        recomputed = stationary_distribution(Q)
        if np.max(np.abs(recomputed - pi)) > 1e-8:
            raise ValueError(
                f"stored stationary distribution deviates from the recomputed one "
                f"by {np.max(np.abs(recomputed - pi)):.3e} (> 1e-8)"
            )
    except DegeneracyError:
        if np.max(np.abs(Q @ pi - pi)) > 1e-8:
            raise ValueError("stored pi is not stationary for the stored Q")
    return Hmm(d=d, k=k, Q=Q, O=O, pi=pi)


def write_table(table: JointTable, path) -> None:
    payload = {
        "d": table.d,
        "N": table.N,
        "values": table.values.tolist(),
        "provenance": table.provenance,
    }
    if table.sample_count is not None:
        payload["sample_count"] = table.sample_count
    Path(path).write_text(json.dumps(payload))


def read_table(path) -> JointTable:
    payload = json.loads(Path(path).read_text())
    return JointTable(
        int(payload["d"]),
        int(payload["N"]),
        np.asarray(payload["values"], float),
        provenance=payload.get("provenance", "exact"),
        sample_count=payload.get("sample_count"),
    )


def write_quasi(model: QuasiHmm, path) -> None:
    payload = {
        "d": model.d,
        "k": model.k,
        "u": model.u.tolist(),
        "v": model.v.tolist(),
        "ops": model.ops.tolist(),
        "convention": OPERATOR_CONVENTION,
    }
    Path(path).write_text(json.dumps(payload))


def read_quasi(path) -> QuasiHmm:
    payload = json.loads(Path(path).read_text())
    convention = payload.get("convention", OPERATOR_CONVENTION)
    if convention != OPERATOR_CONVENTION:
        raise ValueError(f"unsupported operator convention {convention!r}")
    return QuasiHmm(
        d=int(payload["d"]),
        k=int(payload["k"]),
        u=np.asarray(payload["u"], float),
        v=np.asarray(payload["v"], float),
        ops=np.asarray(payload["ops"], float),
    )


def write_factors(factors: CpFactors, path) -> None:
    payload = {
        "k": factors.k,
        "A": factors.A.tolist(),
        "B": factors.B.tolist(),
        "C": factors.C.tolist(),
        "residual": factors.residual,
        "backend": factors.backend,
    }
    Path(path).write_text(json.dumps(payload))


def read_factors(path) -> CpFactors:
    payload = json.loads(Path(path).read_text())
    return CpFactors(
        k=int(payload["k"]),
        A=np.asarray(payload["A"], float),
        B=np.asarray(payload["B"], float),
        C=np.asarray(payload["C"], float),
        residual=float(payload["residual"]),
        backend=payload.get("backend", ""),
    )


def write_sequences(batch: SampleBatch, path) -> None:
    """One line per sequence, space-separated 1-based letters."""
    lines = [f"#d={batch.d} N/A"]
    lines.extend(" ".join(str(x) for x in row) for row in batch.sequences)
    Path(path).write_text("\n".join(lines) + "\n")


def read_sequences(path) -> SampleBatch:
    lines = Path(path).read_text().strip().splitlines()
    if not lines or not lines[0].startswith("#d="):
        raise ValueError("sequence file must start with a '#d=<d> N/A' header")
    d = int(lines[0].split()[0][3:])
    rows = [[int(x) for x in line.split()] for line in lines[1:]]
    if not rows:
        raise ValueError("sequence file holds no sequences")
    lengths = {len(row) for row in rows}
    if len(lengths) != 1:
        raise ValueError("sequences must share one length")
    sequences = np.asarray(rows, dtype=np.int64)
    if sequences.min() < 1 or sequences.max() > d:
        raise ValueError(f"letters outside [1, {d}]")
    return SampleBatch(
        d=d,
        length=sequences.shape[1],
        count=sequences.shape[0],
        sequences=sequences,
        seed=-1,
    )
