"""Network drop generation: geometry, pathloss, association, pilots.

A drop is a pure function of (config, seed): same inputs give a bitwise
identical :class:`Scenario`, which is immutable and safe to share across
workers.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, fields
from enum import Enum
from pathlib import Path

import numpy as np

from .config import NetworkConfig


class AssociationRule(str, Enum):
    DISTANCE = "distance"
    SIGNAL_POWER = "signal_power"


def hex_centers(cell_radius: float, num_rrus: int = 7) -> np.ndarray:
    """Cell centers of the 7-site hexagonal layout (first ``num_rrus`` sites).

    Center-to-center spacing is sqrt(3) times the cell radius.
    """
    d = np.sqrt(3.0) * cell_radius
    ang = np.arange(6) * np.pi / 3.0
    ring = d * np.stack([np.cos(ang), np.sin(ang)], axis=1)
    centers = np.vstack([[0.0, 0.0], ring])
    return centers[:num_rrus].copy()


def wrap_translations(cell_radius: float) -> np.ndarray:
    """Zero translation plus the 6 lattice vectors replicating the 7-site cluster."""
    d = np.sqrt(3.0) * cell_radius
    a1 = np.array([d, 0.0])
    a2 = np.array([d / 2.0, d * np.sqrt(3.0) / 2.0])
    v1 = 2.0 * a1 + a2
    v2 = -a1 + 2.0 * a2  # v1 rotated by 60 degrees
    v3 = v1 - v2
    return np.array([[0.0, 0.0], v1, -v1, v2, -v2, v3, -v3])


def wrap_distance(points_a: np.ndarray, points_b: np.ndarray, cell_radius: float) -> np.ndarray:
    """Pairwise wrap-around distances, shape (len(a), len(b)).

    Minimum over the 7 canonical images of ``points_b``; never exceeds the
    direct Euclidean distance (the zero translation is included).
    """
    a = np.atleast_2d(points_a)
    b = np.atleast_2d(points_b)
    shifts = wrap_translations(cell_radius)
    diffs = a[:, None, None, :] - (b[None, :, None, :] + shifts[None, None, :, :])
    return np.linalg.norm(diffs, axis=-1).min(axis=-1)


def _in_hex(points: np.ndarray, center: np.ndarray, cell_radius: float) -> np.ndarray:
    """Membership test for the Voronoi hexagon of one lattice site."""
    half = np.sqrt(3.0) * cell_radius / 2.0
    q = points - center
    ang = np.array([0.0, np.pi / 3.0, 2.0 * np.pi / 3.0])
    axes = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    proj = np.abs(q @ axes.T)
    return np.all(proj <= half + 1e-9, axis=1)


def sample_user_positions(rng: np.random.Generator, num_users: int,
                          cell_radius: float, num_rrus: int = 7) -> np.ndarray:
    """Uniform positions over the union of the network's hexagonal cells."""
    centers = hex_centers(cell_radius, num_rrus)
    lo = centers.min(axis=0) - cell_radius
    hi = centers.max(axis=0) + cell_radius
    out = np.empty((num_users, 2))
    filled = 0
    while filled < num_users:
        cand = rng.uniform(lo, hi, size=(2 * num_users, 2))
        inside = np.zeros(len(cand), dtype=bool)
        for c in centers:
            inside |= _in_hex(cand, c, cell_radius)
        cand = cand[inside]
        take = min(len(cand), num_users - filled)
        out[filled:filled + take] = cand[:take]
        filled += take
    return out


@dataclass(frozen=True)
class Scenario:
    """Geometry, large-scale coefficients, association and pilot map of one drop."""

    config: NetworkConfig
    rru_positions: np.ndarray    # (L, 2) meters
    user_positions: np.ndarray   # (K, 2) meters
    beta: np.ndarray             # (L, K) linear power gains
    association: np.ndarray      # (K,) serving RRU index per user
    pilot_of: np.ndarray         # (K,) pilot index in 0..T_p-1
    association_rule: str

    def __post_init__(self):
        for name in ("rru_positions", "user_positions", "beta", "association", "pilot_of"):
            getattr(self, name).setflags(write=False)
        if np.any(self.beta <= 0.0):
            raise ValueError("beta must be strictly positive")
        if np.any((self.association < 0) | (self.association >= self.num_rrus)):
            raise ValueError("association out of range")
        if np.any((self.pilot_of < 0) | (self.pilot_of >= self.config.pilot_length)):
            raise ValueError("pilot index out of range")

    @property
    def num_rrus(self) -> int:
        return self.rru_positions.shape[0]

    @property
    def num_users(self) -> int:
        return self.user_positions.shape[0]

    @property
    def pilot_share(self) -> np.ndarray:
        """K x K binary matrix, 1 where two users use the same pilot."""
        b = self.pilot_of
        return (b[:, None] == b[None, :]).astype(float)

    def users_of_rru(self, l: int) -> np.ndarray:
        return np.flatnonzero(self.association == l)

    def to_json(self, path: str | Path | None = None) -> str:
        doc = {
            "config": {f.name: getattr(self.config, f.name) for f in fields(self.config)},
            "rru_positions": self.rru_positions.tolist(),
            "user_positions": self.user_positions.tolist(),
            "beta": self.beta.tolist(),
            "association": self.association.tolist(),
            "pilot_of": self.pilot_of.tolist(),
            "association_rule": self.association_rule,
        }
        text = json.dumps(doc, indent=2)
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_json(cls, source: str | Path) -> "Scenario":
        text = Path(source).read_text() if Path(str(source)).exists() else str(source)
        doc = json.loads(text)
        return cls(
            config=NetworkConfig(**doc["config"]),
            rru_positions=np.asarray(doc["rru_positions"], dtype=float),
            user_positions=np.asarray(doc["user_positions"], dtype=float),
            beta=np.asarray(doc["beta"], dtype=float),
            association=np.asarray(doc["association"], dtype=np.int64),
            pilot_of=np.asarray(doc["pilot_of"], dtype=np.int64),
            association_rule=doc["association_rule"],
        )


def pathloss_db(distance_m: np.ndarray, cfg: NetworkConfig) -> np.ndarray:
    """Distance-dependent pathloss in dB; distances clamped at cfg.min_distance."""
    d_km = np.maximum(np.asarray(distance_m, dtype=float), cfg.min_distance) / 1000.0
    return cfg.pathloss_intercept + cfg.pathloss_slope * np.log10(d_km)


def associate(distances: np.ndarray, beta: np.ndarray,
              rule: AssociationRule | str) -> np.ndarray:
    """Serving RRU per user; ties break toward the lowest RRU index."""
    rule = AssociationRule(rule)
    if rule is AssociationRule.DISTANCE:
        return np.argmin(distances, axis=0).astype(np.int64)
    return np.argmax(beta, axis=0).astype(np.int64)


def allocate_pilots(association: np.ndarray, num_rrus: int, pilot_length: int,
                    rng: np.random.Generator) -> np.ndarray:
    """Random per-cell pilot allocation.

    Within a cell the first T_p users (index order) draw distinct pilots;
    any overflow users reuse pilots drawn uniformly with replacement.
    """
    pilots = np.empty(len(association), dtype=np.int64)
    for l in range(num_rrus):
        users = np.flatnonzero(association == l)
        n = len(users)
        if n == 0:
            continue
        head = min(n, pilot_length)
        pilots[users[:head]] = rng.permutation(pilot_length)[:head]
        if n > head:
            pilots[users[head:]] = rng.integers(0, pilot_length, size=n - head)
    return pilots


def generate_drop(cfg: NetworkConfig,
                  rule: AssociationRule | str = AssociationRule.DISTANCE,
                  seed: int | None = None) -> Scenario:
    """Generate one reproducible network drop.

    RNG draw order is fixed (positions, shadowing, pilots) so that drops with
    the same seed share geometry and shadowing across association rules.
    """
    rule = AssociationRule(rule)
    rng = np.random.default_rng(cfg.rng_seed if seed is None else seed)
    rru_pos = hex_centers(cfg.cell_radius, cfg.num_rrus)
    user_pos = sample_user_positions(rng, cfg.num_users, cfg.cell_radius, cfg.num_rrus)
    dist = wrap_distance(rru_pos, user_pos, cfg.cell_radius)
    shadow = rng.normal(0.0, cfg.shadowing_stddev, size=dist.shape)
    beta = 10.0 ** (-(pathloss_db(dist, cfg) + shadow) / 10.0)
    assoc = associate(dist, beta, rule)
    pilots = allocate_pilots(assoc, cfg.num_rrus, cfg.pilot_length, rng)
    return Scenario(config=cfg, rru_positions=rru_pos, user_positions=user_pos,
                    beta=beta, association=assoc, pilot_of=pilots,
                    association_rule=rule.value)
