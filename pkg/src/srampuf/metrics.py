"""PUF quality metrics and reliable-cell masks.

Definitions, with HD the Hamming distance and L the response length:

* uniqueness: mean over unordered chip pairs of HD / L, in percent (ideal 50)
* uniformity: share of 1 bits in one response, in percent (ideal 50)
* bit aliasing: share of 1 bits at each position across chips, averaged over
  positions, in percent (ideal 50)
* reliability: 100 * (1 - mean over repeated reads of HD(reference, read) / L)
  (ideal 100)

Response files
--------------
A text response file holds one read per line as '0'/'1' characters; the
first line is the reference read and later lines are repeated reads.  The
chip id is the file stem.  JSON files hold ``{"chip_id": ..., "reads":
["0101...", ...]}``.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import rng
from .errors import EmptySetError, MalformedError, SizeMismatchError
from .separatrix import SdRecord
from .startup import StartupDataset
from .transfer import invert_threshold

IDEALS = {"uniqueness": 50.0, "uniformity": 50.0, "bit_aliasing": 50.0, "reliability": 100.0}
NOT_AVAILABLE = "N/A"


@dataclass(frozen=True)
class PufResponse:
    chip_id: str
    bits: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.bits, dtype=np.uint8).ravel()
        if b.size == 0:
            raise EmptySetError("response has no bits")
        if np.any(b > 1):
            raise ValueError("response bits must be 0 or 1")
        object.__setattr__(self, "bits", b)

    def __len__(self) -> int:
        return int(self.bits.size)

    @classmethod
    def from_string(cls, chip_id: str, text: str) -> "PufResponse":
        text = text.strip()
        if not text or set(text) - {"0", "1"}:
            raise ValueError("response must be a non-empty string of 0/1")
        return cls(chip_id, np.frombuffer(text.encode("ascii"), dtype=np.uint8) - ord("0"))

    def to_string(self) -> str:
        return (self.bits + ord("0")).astype(np.uint8).tobytes().decode("ascii")

    def masked(self, mask: "CellMask") -> "PufResponse":
        if len(mask) != len(self):
            raise SizeMismatchError(f"mask of {len(mask)} bits for a {len(self)}-bit response")
        return PufResponse(self.chip_id, self.bits[mask.bits.astype(bool)])


@dataclass(frozen=True)
class CellMask:
    bits: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "bits", np.asarray(self.bits, dtype=np.uint8).ravel())

    def __len__(self) -> int:
        return int(self.bits.size)

    @property
    def selected_count(self) -> int:
        return int(np.count_nonzero(self.bits))


def _stack(responses) -> np.ndarray:
    responses = list(responses)
    if not responses:
        raise EmptySetError("no responses")
    lengths = {len(r) for r in responses}
    if len(lengths) != 1:
        raise SizeMismatchError(f"responses differ in length: {sorted(lengths)}")
    return np.vstack([r.bits for r in responses])


def uniqueness(responses) -> float:
    """Mean pairwise inter-chip fractional Hamming distance, percent."""
    bits = _stack(responses)
    if len(bits) < 2:
        raise EmptySetError("uniqueness needs at least two responses")
    total = 0.0
    pairs = 0
    for i, j in itertools.combinations(range(len(bits)), 2):
        total += np.count_nonzero(bits[i] != bits[j]) / bits.shape[1]
        pairs += 1
    return 100.0 * total / pairs


def uniformity(response: PufResponse) -> float:
    return 100.0 * np.count_nonzero(response.bits) / len(response)


def bit_aliasing(responses) -> float:
    """Average over positions of the across-chip share of ones, percent.

    Computed from the total count of ones, which makes it equal to the mean
    of the per-chip uniformities.
    """
    bits = _stack(responses)
    if len(bits) < 2:
        raise EmptySetError("bit aliasing needs at least two responses")
    return 100.0 * np.count_nonzero(bits) / bits.size


def reliability(reference: PufResponse, repeats) -> float:
    repeats = list(repeats)
    if not repeats:
        raise EmptySetError("reliability needs at least one repeated read")
    bits = _stack([reference] + repeats)
    hd = np.count_nonzero(bits[1:] != bits[0], axis=1) / bits.shape[1]
    return 100.0 * (1.0 - float(np.mean(hd)))


def select_mask(dataset: StartupDataset, p_threshold: float) -> CellMask:
    """Cells whose preferred value repeats with probability >= ``p_threshold``."""
    if not 0.5 < p_threshold <= 1.0:
        raise ValueError("p_threshold must lie in (0.5, 1]")
    sup1 = dataset.sup1
    return CellMask((np.maximum(sup1, 1.0 - sup1) >= p_threshold).astype(np.uint8))


def select_mask_from_sd(sd_records, model, p_threshold: float, vdd: float = 1.2) -> CellMask:
    """Cells whose |SD| reaches the model's threshold for ``p_threshold``."""
    th = invert_threshold(model, p_threshold, vdd)
    sd = np.array([r.sd if isinstance(r, SdRecord) else float(r) for r in sd_records])
    return CellMask((np.abs(sd) >= th).astype(np.uint8))


def sample_responses(dataset: StartupDataset, n_reads: int, seed: int,
                     chip_id: str = "chip0", chip_index: int = 0) -> list[PufResponse]:
    """Independent reads where cell ``k`` outputs 1 with probability ``sup1[k]``.

    Read ``r`` of cell ``k`` depends only on ``(seed, chip_index, k, r)``.
    """
    if n_reads < 1:
        raise ValueError("n_reads must be >= 1")
    n = len(dataset)
    idx = (np.int64(chip_index) << np.int64(32)) + np.arange(n, dtype=np.int64)
    u = rng.uniforms(seed, rng.STREAM_RESPONSES, idx, n_reads)
    bits = (u < dataset.sup1[:, None]).astype(np.uint8)
    return [PufResponse(chip_id, bits[:, r]) for r in range(n_reads)]


def metric_report(chips: dict[str, list[PufResponse]], mask: CellMask | None = None) -> dict:
    """Table-style report over chips, each a list of reads (first = reference)."""
    if not chips:
        raise EmptySetError("no chips")
    if mask is not None:
        chips = {c: [r.masked(mask) for r in reads] for c, reads in chips.items()}
    refs = [reads[0] for reads in chips.values()]
    _stack(refs)
    values = {
        "uniformity": float(np.mean([uniformity(r) for r in refs])),
        "uniqueness": uniqueness(refs) if len(refs) >= 2 else None,
        "bit_aliasing": bit_aliasing(refs) if len(refs) >= 2 else None,
    }
    rel = [reliability(reads[0], reads[1:]) for reads in chips.values() if len(reads) > 1]
    values["reliability"] = float(np.mean(rel)) if rel else None
    report = {name: {"value": NOT_AVAILABLE if values[name] is None else values[name],
                     "ideal": IDEALS[name]}
              for name in ("uniqueness", "bit_aliasing", "reliability", "uniformity")}
    report["n_chips"] = len(refs)
    report["length"] = len(refs[0])
    report["chips"] = sorted(chips)
    return report


# --------------------------------------------------------------------------
# persistence


def write_response_file(reads, path) -> Path:
    path = Path(path)
    path.write_text("".join(r.to_string() + "\n" for r in reads))
    return path


def read_response_file(path) -> tuple[str, list[PufResponse]]:
    """Returns (chip_id, reads) from a text or JSON response file."""
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() == ".json":
        try:
            d = json.loads(text)
            chip_id = str(d["chip_id"])
            lines = list(d["reads"])
        except json.JSONDecodeError as exc:
            raise MalformedError(str(exc), path, exc.lineno) from exc
        except (KeyError, TypeError) as exc:
            raise MalformedError(f"expected keys chip_id and reads ({exc})", path) from exc
        numbered = [(None, s) for s in lines]
    else:
        chip_id = path.stem
        numbered = [(k + 1, ln.strip()) for k, ln in enumerate(text.splitlines()) if ln.strip()]
    if not numbered:
        raise MalformedError("no reads", path, 1)
    reads = []
    for lineno, s in numbered:
        try:
            reads.append(PufResponse.from_string(chip_id, str(s)))
        except ValueError as exc:
            raise MalformedError(str(exc), path, lineno) from exc
        if len(reads[-1]) != len(reads[0]):
            raise MalformedError(f"read of {len(reads[-1])} bits, expected {len(reads[0])}",
                                 path, lineno)
    return chip_id, reads


def write_mask_json(mask: CellMask, path) -> Path:
    path = Path(path)
    d = {"length": len(mask), "selected_count": mask.selected_count,
         "bits": PufResponse("mask", mask.bits).to_string() if len(mask) else ""}
    path.write_text(json.dumps(d, indent=1) + "\n")
    return path


def read_mask_json(path) -> CellMask:
    path = Path(path)
    try:
        d = json.loads(path.read_text())
        s = str(d["bits"])
        if set(s) - {"0", "1"}:
            raise ValueError("mask bits must be 0/1")
        mask = CellMask(np.frombuffer(s.encode("ascii"), dtype=np.uint8) - ord("0"))
        if len(mask) != int(d["length"]) or mask.selected_count != int(d["selected_count"]):
            raise ValueError("length or selected_count disagrees with bits")
    except json.JSONDecodeError as exc:
        raise MalformedError(str(exc), path, exc.lineno) from exc
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedError(f"bad mask ({exc})", path) from exc
    return mask


def write_report_json(report: dict, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(report, indent=1, sort_keys=True) + "\n")
    return path
