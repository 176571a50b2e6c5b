"""Deterministic synthetic streaming sessions for dataset-free testing.

Sessions come from two content clusters: low spatio-temporal complexity
(TI and SI below the usual split thresholds) and high complexity (at least
one of TI/SI well above). Generic playback behavior (bitrate traces, stalls,
fps) is drawn identically for both clusters, so only TI and SI separate the
groups distributionally. MOS follows a closed-form quality model: it rises
with playout bitrate, falls with every second of stalling, and complex
content is penalized harder when streamed at low bitrate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import SessionRecord
from .errors import ValidationError

# Bitrate ladder: 13 levels spanning 0.2..7.2 Mbps.
BITRATE_LADDER = tuple(np.round(np.linspace(0.2, 7.2, 13), 4).tolist())


@dataclass(frozen=True)
class SynthConfig:
    n_sessions: int = 450
    low_complexity_sessions: int = 353  # sessions whose content lands in g0
    seed: int = 0
    segments_min: int = 6
    segments_max: int = 14
    n_contents_low: int = 14
    n_contents_high: int = 6
    stall_probability: float = 0.45
    max_stalls: int = 3
    noise_std: float = 2.5

    def __post_init__(self):
        if not 0 < self.low_complexity_sessions < self.n_sessions:
            raise ValidationError(
                f"low_complexity_sessions must be in (0, {self.n_sessions}), "
                f"got {self.low_complexity_sessions}"
            )
        if self.segments_min < 1 or self.segments_max < self.segments_min:
            raise ValidationError("need 1 <= segments_min <= segments_max")


def mos_model(
    ti: float,
    si: float,
    mean_bitrate: float,
    bitrate_trend: float,
    last_bitrate: float,
    n_stalls: float,
    stall_intermediate_total: float,
    stall_initial_total: float,
) -> float:
    """Closed-form ground-truth MOS before noise and clipping.

    Strictly decreasing in every stalling quantity and strictly increasing in
    mean bitrate; the complexity penalty couples TI/SI with bitrate shortfall.
    """
    quality = (
        22.0
        + 8.2 * mean_bitrate
        + 1.1 * last_bitrate
        + 2.0 * bitrate_trend
        - 2.4 * stall_intermediate_total
        - 1.6 * n_stalls
        - 1.1 * stall_initial_total
    )
    complexity = (ti + si) / 200.0
    shortfall = max(7.2 - mean_bitrate, 0.0) / 7.2
    quality -= 16.0 * complexity * shortfall
    return quality


def _draw_contents(cfg: SynthConfig, rng: np.random.Generator):
    low = [
        ("low%02d" % i, float(rng.uniform(15.0, 70.0)), float(rng.uniform(15.0, 70.0)))
        for i in range(cfg.n_contents_low)
    ]
    high = []
    for i in range(cfg.n_contents_high):
        ti_high = bool(rng.integers(0, 2))
        ti = float(rng.uniform(95.0, 135.0)) if ti_high else float(rng.uniform(30.0, 80.0))
        si = float(rng.uniform(95.0, 135.0)) if not ti_high else float(rng.uniform(30.0, 80.0))
        if rng.random() < 0.3:  # some contents are complex in both dimensions
            ti = float(rng.uniform(95.0, 135.0))
            si = float(rng.uniform(95.0, 135.0))
        high.append(("high%02d" % i, ti, si))
    return low, high


def _bitrate_trace(rng: np.random.Generator, n_segments: int) -> tuple[float, ...]:
    # Random walk on the ladder, biased by one of the switching styles.
    style = rng.integers(0, 4)
    level = int(rng.integers(0, len(BITRATE_LADDER)))
    trace = []
    for _ in range(n_segments):
        trace.append(BITRATE_LADDER[level])
        if style == 0:  # stable
            step = 0
        elif style == 1:  # ramp up
            step = int(rng.integers(0, 3))
        elif style == 2:  # ramp down
            step = -int(rng.integers(0, 3))
        else:  # fluctuating
            step = int(rng.integers(-2, 3))
        level = min(max(level + step, 0), len(BITRATE_LADDER) - 1)
    return tuple(trace)


def make_sessions(cfg: SynthConfig) -> list[SessionRecord]:
    """Generate the configured sessions; identical output for identical config."""
    rng = np.random.default_rng(cfg.seed)
    low_contents, high_contents = _draw_contents(cfg, rng)
    records = []
    for i in range(cfg.n_sessions):
        in_low = i < cfg.low_complexity_sessions
        pool = low_contents if in_low else high_contents
        content_id, ti, si = pool[int(rng.integers(0, len(pool)))]
        fps = float(rng.choice(np.array([24.0, 25.0, 30.0])))
        n_segments = int(rng.integers(cfg.segments_min, cfg.segments_max + 1))
        bitrates = _bitrate_trace(rng, n_segments)

        initial_stall = float(np.round(rng.exponential(0.9), 3))
        stalls: tuple[float, ...] = ()
        if rng.random() < cfg.stall_probability:
            count = int(rng.integers(1, cfg.max_stalls + 1))
            stalls = tuple(float(np.round(rng.uniform(0.3, 3.0), 3)) for _ in range(count))

        arr = np.asarray(bitrates)
        x = np.arange(n_segments, dtype=np.float64)
        trend = 0.0
        if n_segments > 1:
            xc = x - x.mean()
            trend = float(xc @ (arr - arr.mean()) / (xc @ xc))
        mos = mos_model(
            ti,
            si,
            float(arr.mean()),
            trend,
            float(arr[-1]),
            float(len(stalls)),
            float(sum(stalls)),
            initial_stall,
        )
        mos += float(rng.normal(0.0, cfg.noise_std))
        mos = float(np.clip(np.round(mos, 3), 0.0, 100.0))

        records.append(
            SessionRecord(
                session_id=f"synth{i:04d}",
                content_id=content_id,
                ti=round(ti, 3),
                si=round(si, 3),
                fps=fps,
                segment_bitrates=bitrates,
                initial_stall_s=initial_stall,
                intermediate_stalls=stalls,
                mos=mos,
            )
        )
    return records
