"""Plain record types shared by the world generator, loaders and models."""
from dataclasses import dataclass, field

import numpy as np

MODES = ("auto", "active", "pt", "other")
ARCHETYPE_FEATURES = ("street_grid_density", "green_fraction", "building_scale", "curvature")
# building_scale is rendered into tiles but withheld from sociodemographics.
HIDDEN_FEATURE = "building_scale"


@dataclass(frozen=True)
class Archetype:
    id: int
    street_grid_density: float
    green_fraction: float
    building_scale: float
    curvature: float

    def __post_init__(self):
        if not 0 <= self.id <= 4:
            raise ValueError(f"archetype id must be in 0..4, got {self.id}")
        for name in ARCHETYPE_FEATURES:
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"{name}={v} outside [0, 1]")

    @property
    def features(self):
        return np.array([getattr(self, n) for n in ARCHETYPE_FEATURES])


@dataclass
class RegionRecord:
    region_id: str
    x_sd: np.ndarray
    shares: np.ndarray
    tile_ids: list

    def __post_init__(self):
        self.x_sd = np.asarray(self.x_sd, dtype=float)
        self.shares = np.asarray(self.shares, dtype=float)
        if not np.all(np.isfinite(self.x_sd)):
            raise ValueError(f"region {self.region_id}: non-finite sociodemographics")
        if np.any(self.shares < 0) or abs(self.shares.sum() - 1.0) > 1e-9:
            raise ValueError(f"region {self.region_id}: shares must be a probability vector")


@dataclass
class TripRecord:
    trip_id: str
    origin: str
    destination: str
    x_sd_trip: np.ndarray
    x_alt: np.ndarray  # [K modes x A attributes]
    chosen: int

    def __post_init__(self):
        self.x_alt = np.asarray(self.x_alt, dtype=float)
        if not 0 <= self.chosen < self.x_alt.shape[0]:
            raise ValueError(f"trip {self.trip_id}: chosen={self.chosen} outside [0, K)")
        if not np.all(np.isfinite(self.x_alt)):
            raise ValueError(f"trip {self.trip_id}: non-finite alternative attributes")


@dataclass
class ImageTile:
    pixels: np.ndarray  # H x W x C in [0, 1]
    region_id: str = ""

    def __post_init__(self):
        if self.pixels.ndim != 3:
            raise ValueError("tile pixels must be H x W x C")
        if self.pixels.min() < 0 or self.pixels.max() > 1:
            raise ValueError("tile pixels must lie in [0, 1]")


@dataclass
class TripTable:
    """Column store for trips; indexing yields TripRecord views."""

    trip_ids: list
    origin: np.ndarray        # region index
    destination: np.ndarray   # region index
    x_sd: np.ndarray          # N x D
    x_alt: np.ndarray         # N x K x A
    chosen: np.ndarray        # N
    region_ids: list = field(default_factory=list)

    def __len__(self):
        return len(self.trip_ids)

    def __getitem__(self, i):
        return TripRecord(
            trip_id=self.trip_ids[i],
            origin=self.region_ids[self.origin[i]],
            destination=self.region_ids[self.destination[i]],
            x_sd_trip=self.x_sd[i],
            x_alt=self.x_alt[i],
            chosen=int(self.chosen[i]),
        )

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def subset(self, idx):
        idx = np.asarray(idx)
        return TripTable(
            trip_ids=[self.trip_ids[i] for i in idx],
            origin=self.origin[idx],
            destination=self.destination[idx],
            x_sd=self.x_sd[idx],
            x_alt=self.x_alt[idx],
            chosen=self.chosen[idx],
            region_ids=self.region_ids,
        )
