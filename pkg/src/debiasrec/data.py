"""News catalog and impression-log TSV formats, parsing and splits.

news file:       news_id<TAB>title
behaviors file:  impression_id<TAB>user_id<TAB>timestamp<TAB>history<TAB>candidates
  history    space-separated "news:pos:size" entries, "-" when empty
  candidates space-separated "news:pos:size:label" entries
  sizes      mini / small / medium / large
Files ending in .gz are transparently compressed.  Positions are clipped
into [1, max_position] at ingestion.
"""

import gzip
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from .bias import SIZE_IDS, SIZE_NAMES, clip_position


class DataFormatError(ValueError):
    """A malformed input file; message carries the offending line number."""


@dataclass(frozen=True)
class NewsArticle:
    news_id: str
    title: str


@dataclass(frozen=True)
class HistoryEntry:
    news_id: str
    position: int
    size: int


@dataclass(frozen=True)
class CandidateEntry:
    news_id: str
    position: int
    size: int
    label: int


@dataclass
class ImpressionRecord:
    impression_id: str
    user_id: str
    timestamp: int
    history: List[HistoryEntry]   # ordered by click time
    candidates: List[CandidateEntry]


def _open(path, mode):
    if str(path).endswith(".gz"):
        return gzip.open(path, mode + "t", encoding="utf-8")
    return open(path, mode, encoding="utf-8")


def load_news(path) -> Dict[str, NewsArticle]:
    """Parse the catalog; duplicate ids and malformed lines are errors."""
    catalog: Dict[str, NewsArticle] = {}
    with _open(path, "r") as fh:
        for ln, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t", 1)
            if len(parts) != 2 or not parts[0]:
                raise DataFormatError(f"{path}:{ln}: expected news_id<TAB>title")
            news_id, title = parts
            if news_id in catalog:
                raise DataFormatError(f"{path}:{ln}: duplicate news id {news_id!r}")
            catalog[news_id] = NewsArticle(news_id=news_id, title=title)
    if not catalog:
        raise DataFormatError(f"{path}: empty news file")
    return catalog


def write_news(path, articles: Sequence[NewsArticle]):
    with _open(path, "w") as fh:
        for a in articles:
            if "\t" in a.news_id or ":" in a.news_id or " " in a.news_id:
                raise ValueError(f"news id {a.news_id!r} contains reserved characters")
            fh.write(f"{a.news_id}\t{a.title}\n")


def _parse_size(token: str, where: str) -> int:
    if token not in SIZE_IDS:
        raise DataFormatError(f"{where}: unknown size name {token!r}")
    return SIZE_IDS[token]


def _parse_int(token: str, where: str, what: str) -> int:
    try:
        return int(token)
    except ValueError:
        raise DataFormatError(f"{where}: bad {what} {token!r}") from None


def load_behaviors(path, catalog: Dict[str, NewsArticle],
                   max_position: int = 400) -> List[ImpressionRecord]:
    """Parse an impression log, validating every news reference."""
    records: List[ImpressionRecord] = []
    with _open(path, "r") as fh:
        for ln, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            where = f"{path}:{ln}"
            parts = line.split("\t")
            if len(parts) != 5:
                raise DataFormatError(f"{where}: expected 5 tab-separated fields")
            imp_id, user_id, ts_s, hist_s, cand_s = parts
            ts = _parse_int(ts_s, where, "timestamp")
            history = []
            if hist_s != "-":
                for ent in hist_s.split(" "):
                    f = ent.split(":")
                    if len(f) != 3:
                        raise DataFormatError(f"{where}: bad history entry {ent!r}")
                    if f[0] not in catalog:
                        raise DataFormatError(f"{where}: unknown news id {f[0]!r}")
                    history.append(HistoryEntry(
                        news_id=f[0],
                        position=clip_position(_parse_int(f[1], where, "position"), max_position),
                        size=_parse_size(f[2], where)))
            candidates = []
            if not cand_s:
                raise DataFormatError(f"{where}: empty candidate list")
            for ent in cand_s.split(" "):
                f = ent.split(":")
                if len(f) != 4:
                    raise DataFormatError(f"{where}: bad candidate entry {ent!r}")
                if f[0] not in catalog:
                    raise DataFormatError(f"{where}: unknown news id {f[0]!r}")
                label = _parse_int(f[3], where, "label")
                if label not in (0, 1):
                    raise DataFormatError(f"{where}: label must be 0 or 1, got {label}")
                candidates.append(CandidateEntry(
                    news_id=f[0],
                    position=clip_position(_parse_int(f[1], where, "position"), max_position),
                    size=_parse_size(f[2], where),
                    label=label))
            records.append(ImpressionRecord(
                impression_id=imp_id, user_id=user_id, timestamp=ts,
                history=history, candidates=candidates))
    return records


def write_behaviors(path, records: Sequence[ImpressionRecord]):
    with _open(path, "w") as fh:
        for r in records:
            hist = " ".join(f"{h.news_id}:{h.position}:{SIZE_NAMES[h.size]}"
                            for h in r.history) or "-"
            cands = " ".join(f"{c.news_id}:{c.position}:{SIZE_NAMES[c.size]}:{c.label}"
                             for c in r.candidates)
            fh.write(f"{r.impression_id}\t{r.user_id}\t{r.timestamp}\t{hist}\t{cands}\n")


@dataclass
class DatasetSplit:
    train: List[ImpressionRecord]
    validation: List[ImpressionRecord]
    test: List[ImpressionRecord]


def split(impressions: Sequence[ImpressionRecord], val_fraction: float,
          seed: int, boundary: Optional[int] = None) -> DatasetSplit:
    """Time-partition into train/test, then carve a seeded validation set.

    Impressions strictly before ``boundary`` form the training pool; the
    rest are the test set.  ``boundary=None`` uses the 80% time quantile.
    A uniform ``val_fraction`` sample of the pool becomes validation.
    """
    if not impressions:
        raise ValueError("no impressions to split")
    times = np.array([r.timestamp for r in impressions])
    if boundary is None:
        boundary = int(np.quantile(times, 0.8))
    pool = [r for r in impressions if r.timestamp < boundary]
    test = [r for r in impressions if r.timestamp >= boundary]
    if not pool:
        raise ValueError("empty training pool: boundary precedes every impression")
    if not test:
        raise ValueError("empty test set: boundary is after every impression")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 0x5EED])))
    n_val = int(round(val_fraction * len(pool)))
    val_idx = set(rng.choice(len(pool), size=n_val, replace=False).tolist())
    train = [r for i, r in enumerate(pool) if i not in val_idx]
    validation = [r for i, r in enumerate(pool) if i in val_idx]
    if not train:
        raise ValueError("validation fraction leaves no training impressions")
    return DatasetSplit(train=train, validation=validation, test=test)
