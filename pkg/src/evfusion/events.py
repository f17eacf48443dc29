"""Event stream ingestion, blocking, pseudo-intensity frames, and the
complementary-filter baseline.

Event text format: one event per line, ``t x y p`` with t in seconds
(decimal), integer pixel coordinates, and p in {0, 1} (0 maps to polarity
-1), ordered by t. Internally polarity lives in {-1, +1}.
"""

from __future__ import annotations

import io
import logging
from dataclasses import dataclass, field

import numpy as np

from .core import IntensityFrame

log = logging.getLogger(__name__)


class EventFormatError(ValueError):
    """Malformed event input; the message names the offending line."""


@dataclass(frozen=True)
class Event:
    t: float
    x: int
    y: int
    polarity: int


@dataclass
class EventStream:
    """Time-ordered event arrays plus the sensor size.

    Timestamps are non-decreasing; ties keep their original order.
    """

    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    polarity: np.ndarray
    width: int
    height: int
    dropped_out_of_bounds: int = 0

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=np.float64)
        self.x = np.asarray(self.x, dtype=np.int32)
        self.y = np.asarray(self.y, dtype=np.int32)
        self.polarity = np.asarray(self.polarity, dtype=np.int8)
        n = len(self.t)
        if not (len(self.x) == len(self.y) == len(self.polarity) == n):
            raise ValueError("event field arrays must have equal length")
        if n and np.any(np.diff(self.t) < 0):
            raise ValueError("event timestamps must be non-decreasing")
        if n and (
            self.x.min() < 0
            or self.x.max() >= self.width
            or self.y.min() < 0
            or self.y.max() >= self.height
        ):
            raise ValueError("event coordinates outside the sensor")
        if n and not np.all(np.isin(self.polarity, (-1, 1))):
            raise ValueError("polarity must be +1 or -1")

    def __len__(self):
        return len(self.t)

    def __getitem__(self, i) -> Event:
        return Event(float(self.t[i]), int(self.x[i]), int(self.y[i]), int(self.polarity[i]))

    def time_slice(self, t_start: float, t_end: float) -> slice:
        """Index slice of events with t_start <= t < t_end."""
        i0 = int(np.searchsorted(self.t, t_start, side="left"))
        i1 = int(np.searchsorted(self.t, t_end, side="left"))
        return slice(i0, i1)


@dataclass
class EventBlock:
    """A contiguous run of events from one stream window."""

    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    polarity: np.ndarray
    width: int
    height: int
    index: int = 0
    short: bool = False

    def __len__(self):
        return len(self.t)

    @property
    def t_start(self) -> float:
        return float(self.t[0])

    @property
    def t_end(self) -> float:
        return float(self.t[-1])

    @property
    def t_mid(self) -> float:
        return 0.5 * (self.t_start + self.t_end)


def parse_events(source, width: int, height: int) -> EventStream:
    """Parse the event text format from a path, file object, or string.

    Out-of-bounds events are dropped (counted and logged); malformed lines
    and non-monotonic timestamps raise :class:`EventFormatError` naming the
    line number.
    """
    if hasattr(source, "read"):
        text = source.read()
    elif isinstance(source, str) and "\n" in source:
        text = source
    else:
        with open(source) as f:
            text = f.read()
    ts, xs, ys, ps = [], [], [], []
    dropped = 0
    last_t = -np.inf
    for lineno, line in enumerate(io.StringIO(text), start=1):
        line = line.strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 4:
            raise EventFormatError(f"line {lineno}: expected 't x y p', got {line!r}")
        try:
            t = float(parts[0])
            x = int(parts[1])
            y = int(parts[2])
            p = int(parts[3])
        except ValueError as exc:
            raise EventFormatError(f"line {lineno}: {exc}") from None
        if p not in (0, 1):
            raise EventFormatError(f"line {lineno}: polarity must be 0 or 1, got {p}")
        if t < last_t:
            raise EventFormatError(
                f"line {lineno}: timestamp {t!r} is earlier than the previous event"
            )
        last_t = t
        if not (0 <= x < width and 0 <= y < height):
            dropped += 1
            continue
        ts.append(t)
        xs.append(x)
        ys.append(y)
        ps.append(1 if p == 1 else -1)
    if dropped:
        log.warning("dropped %d out-of-bounds events", dropped)
    return EventStream(
        t=np.array(ts),
        x=np.array(xs, dtype=np.int32),
        y=np.array(ys, dtype=np.int32),
        polarity=np.array(ps, dtype=np.int8),
        width=width,
        height=height,
        dropped_out_of_bounds=dropped,
    )


def serialize_events(stream: EventStream) -> str:
    """Inverse of :func:`parse_events`; float repr keeps the roundtrip bit-exact."""
    lines = []
    for i in range(len(stream)):
        p = 1 if stream.polarity[i] > 0 else 0
        lines.append(f"{float(stream.t[i])!r} {stream.x[i]} {stream.y[i]} {p}")
    return "\n".join(lines) + ("\n" if lines else "")


def write_events(path, stream: EventStream) -> None:
    with open(path, "w") as f:
        f.write(serialize_events(stream))


def frame_events(
    stream: EventStream, block_size: int, t_start: float, t_end: float
) -> list[EventBlock]:
    """Partition the window [t_start, t_end) into consecutive event blocks.

    Full blocks hold exactly ``block_size`` events; a trailing remainder is
    kept as a short final block when it has at least half a block of events,
    otherwise it merges into the previous block. Fewer than ``block_size``
    events in the whole window produce a single short block; zero events an
    empty list.
    """
    if block_size < 1:
        raise ValueError("block_size must be >= 1")
    sl = stream.time_slice(t_start, t_end)
    n = sl.stop - sl.start
    if n == 0:
        log.warning("no events in window [%s, %s)", t_start, t_end)
        return []

    bounds = list(range(0, n + 1, block_size))
    if bounds[-1] != n:
        remainder = n - bounds[-1]
        if remainder >= block_size / 2 or len(bounds) == 1:
            bounds.append(n)
        else:
            bounds[-1] = n
    blocks = []
    for j, (a, b) in enumerate(zip(bounds[:-1], bounds[1:])):
        blk = slice(sl.start + a, sl.start + b)
        blocks.append(
            EventBlock(
                t=stream.t[blk].copy(),
                x=stream.x[blk].copy(),
                y=stream.y[blk].copy(),
                polarity=stream.polarity[blk].copy(),
                width=stream.width,
                height=stream.height,
                index=j + 1,
                short=(b - a) != block_size,
            )
        )
    if n < block_size:
        log.warning(
            "window [%s, %s) holds only %d events (< block size %d)",
            t_start,
            t_end,
            n,
            block_size,
        )
    return blocks


# ---------------------------------------------------------------------------
# Pseudo-intensity reconstruction (leaky integrator + total variation)
# ---------------------------------------------------------------------------


@dataclass
class PseudoIntensityFrame:
    """Edge-like intensity surrogate integrated from one event block."""

    pixels: np.ndarray
    t_mid: float
    block_index: int = 0

    def __post_init__(self):
        self.pixels = np.clip(np.asarray(self.pixels, dtype=np.float64), 0.0, 1.0)

    @property
    def height(self):
        return self.pixels.shape[0]

    @property
    def width(self):
        return self.pixels.shape[1]


def _tv_descend(img: np.ndarray, weight: float, iters: int, eps: float = 1.0) -> np.ndarray:
    """Gradient steps on an isotropic total-variation objective."""
    s = img.copy()
    for _ in range(iters):
        dx = np.diff(s, axis=1)
        dy = np.diff(s, axis=0)
        mag_x = np.sqrt(dx * dx + eps * eps)
        mag_y = np.sqrt(dy * dy + eps * eps)
        gx = dx / mag_x
        gy = dy / mag_y
        grad = np.zeros_like(s)
        grad[:, 1:] += gx
        grad[:, :-1] -= gx
        grad[1:, :] += gy
        grad[:-1, :] -= gy
        s = np.clip(s - weight * grad, 0.0, 1.0)
    return s


def pseudo_intensity(
    block: EventBlock,
    prior: PseudoIntensityFrame | None = None,
    decay: float = 0.8,
    contrast_step: float = 0.1,
    tv_weight: float = 0.1,
    tv_iters: int = 20,
    tv_eps: float = 1.0,
) -> PseudoIntensityFrame:
    """Integrate one event block into an edge-like frame.

    The carried state decays toward the neutral level 0.5 (``decay=1`` keeps
    the prior untouched, no prior starts neutral); each event then bumps its
    pixel by ``polarity * contrast_step`` with clamping to [0, 1], and a few
    total-variation descent steps suppress isolated speckle. If the result's
    range collapses below 0.05 it is stretched back to [0, 1]. ``tv_eps``
    is the smoothing constant inside the TV magnitude; values comparable to
    the response amplitude (or larger) average event speckle, which matters
    for pose alignment quality downstream.
    """
    if prior is None:
        s = np.full((block.height, block.width), 0.5)
    else:
        s = 0.5 + decay * (prior.pixels - 0.5)
    # events apply sequentially: clamping makes same-pixel order significant
    step = contrast_step
    xs, ys, ps = block.x, block.y, block.polarity
    for i in range(len(block)):
        yy, xx = ys[i], xs[i]
        s[yy, xx] = min(1.0, max(0.0, s[yy, xx] + ps[i] * step))
    if tv_iters > 0:
        s = _tv_descend(s, tv_weight, tv_iters, eps=tv_eps)
    rng = s.max() - s.min()
    if rng < 0.05 and rng > 0:
        s = (s - s.min()) / rng
    t_mid = block.t_mid if len(block) else (prior.t_mid if prior else 0.0)
    return PseudoIntensityFrame(pixels=s, t_mid=t_mid, block_index=block.index)


def reference_block(stream: EventStream, t_ref: float, block_size: int) -> EventBlock | None:
    """Block of ~block_size events centered on ``t_ref`` (for E^0 frames).

    The pseudo-intensity of a block represents the geometry near the block's
    temporal middle, so a reference frame pinned to an intensity-frame
    timestamp draws half its events from each side. Near the stream ends the
    block degrades to one-sided. Returns None when the stream is empty.
    """
    n = len(stream)
    if n == 0:
        return None
    mid = int(np.searchsorted(stream.t, t_ref, side="left"))
    half = block_size // 2
    lo = max(0, mid - half)
    hi = min(n, lo + block_size)
    lo = max(0, hi - block_size)
    sl = slice(lo, hi)
    return EventBlock(
        t=stream.t[sl].copy(),
        x=stream.x[sl].copy(),
        y=stream.y[sl].copy(),
        polarity=stream.polarity[sl].copy(),
        width=stream.width,
        height=stream.height,
        index=0,
        short=(hi - lo) != block_size,
    )


# ---------------------------------------------------------------------------
# Complementary filter baseline
# ---------------------------------------------------------------------------


def complementary_filter(
    stream: EventStream,
    frames: list[IntensityFrame],
    sample_times,
    cutoff: float = 6.28,
    contrast: float = 0.1,
) -> list[IntensityFrame]:
    """Per-pixel continuous-time fusion of events with intensity frames.

    The log-intensity state takes a ``polarity * contrast`` step at each
    event and decays toward the log of the latest intensity frame at rate
    ``cutoff`` (rad/s) in between; ``exp(state)`` is sampled at the requested
    times. Events stamped exactly at a frame time are applied after the
    frame update; events stamped exactly at a sample time do not enter that
    sample.
    """
    if cutoff <= 0:
        raise ValueError("cutoff must be positive")
    if not frames:
        raise ValueError("at least one intensity frame is required")
    frames = sorted(frames, key=lambda f: f.timestamp)
    sample_times = sorted(float(t) for t in sample_times)

    def log_img(f):
        return np.log(np.maximum(f.pixels, 1e-4))

    log_ref = log_img(frames[0])
    state = log_ref.copy()
    t_now = min(
        [frames[0].timestamp]
        + ([float(stream.t[0])] if len(stream) else [])
        + (sample_times[:1] if sample_times else [])
    )

    boundaries = [("frame", f.timestamp, f) for f in frames]
    boundaries += [("sample", t, None) for t in sample_times]
    boundaries.sort(key=lambda b: (b[1], 0 if b[0] == "frame" else 1))

    out = []

    def advance(t_to):
        """Exact update over [t_now, t_to): decay plus event impulses."""
        nonlocal state, t_now
        if t_to < t_now:
            raise ValueError("boundaries must be processed in time order")
        if t_to == t_now:
            return
        sl = stream.time_slice(t_now, t_to)
        dt = t_to - t_now
        state = log_ref + (state - log_ref) * np.exp(-cutoff * dt)
        if sl.stop > sl.start:
            w = np.exp(-cutoff * (t_to - stream.t[sl]))
            np.add.at(
                state,
                (stream.y[sl], stream.x[sl]),
                stream.polarity[sl] * contrast * w,
            )
        t_now = t_to

    for kind, t_b, payload in boundaries:
        advance(t_b)
        if kind == "frame":
            log_ref = log_img(payload)
        else:
            out.append(
                IntensityFrame(pixels=np.clip(np.exp(state), 0.0, 1.0), timestamp=t_b)
            )
    return out
