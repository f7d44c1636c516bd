"""Physical environment: flat ground, axis-aligned buildings, visibility queries."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np

# endpoint offset (m); reflection points sit exactly on facades
EPS = 1e-6
# minimum overlap length that counts as blockage; grazing contacts are below it
_GRAZE = 1e-12


class Point3(NamedTuple):
    x: float
    y: float
    z: float

    def __sub__(self, other):  # type: ignore[override]
        return Point3(self.x - other.x, self.y - other.y, self.z - other.z)

    def norm(self) -> float:
        return math.hypot(self.x, self.y, self.z)


def as_point(p) -> Point3:
    x, y, z = (float(v) for v in p)
    if not (math.isfinite(x) and math.isfinite(y) and math.isfinite(z)):
        raise ValueError(f"non-finite coordinate in {p!r}")
    return Point3(x, y, z)


@dataclass(frozen=True)
class BuildingBox:
    min_corner: Point3
    max_corner: Point3

    def __post_init__(self):
        lo, hi = as_point(self.min_corner), as_point(self.max_corner)
        object.__setattr__(self, "min_corner", lo)
        object.__setattr__(self, "max_corner", hi)
        if not (lo.x < hi.x and lo.y < hi.y and lo.z < hi.z):
            raise ValueError(f"degenerate building box {lo} - {hi}")

    @classmethod
    def from_footprint(cls, min_xy, max_xy, height: float) -> "BuildingBox":
        return cls(Point3(min_xy[0], min_xy[1], 0.0), Point3(max_xy[0], max_xy[1], height))

    @property
    def height(self) -> float:
        return self.max_corner.z

    def contains(self, p: Point3) -> bool:
        lo, hi = self.min_corner, self.max_corner
        return lo.x < p.x < hi.x and lo.y < p.y < hi.y and lo.z <= p.z < hi.z


def default_band_plan(carrier_hz: float, n_bands: int, spacing_hz: float = 20e6) -> tuple:
    """Equally spaced sub-band centres, symmetric about the carrier."""
    return tuple(carrier_hz + (i - (n_bands - 1) / 2.0) * spacing_hz for i in range(n_bands))


@dataclass(frozen=True)
class Scene:
    buildings: tuple = ()
    bounds: tuple = (0.0, 0.0, 100.0, 100.0)  # (xmin, ymin, xmax, ymax)
    carrier_hz: float = 28e9
    band_plan: tuple = field(default=None)  # type: ignore[assignment]
    bs_location: Optional[Point3] = None

    def __post_init__(self):
        object.__setattr__(self, "buildings", tuple(self.buildings))
        object.__setattr__(self, "bounds", tuple(float(b) for b in self.bounds))
        if self.band_plan is None:
            object.__setattr__(self, "band_plan", default_band_plan(self.carrier_hz, 1))
        object.__setattr__(self, "band_plan", tuple(float(f) for f in self.band_plan))
        if self.bs_location is not None:
            object.__setattr__(self, "bs_location", as_point(self.bs_location))

        xmin, ymin, xmax, ymax = self.bounds
        if not (xmin < xmax and ymin < ymax):
            raise ValueError(f"invalid bounds {self.bounds}")
        if self.carrier_hz <= 0:
            raise ValueError("carrier_hz must be positive")
        if len(self.band_plan) < 1:
            raise ValueError("band plan needs at least one band")
        if any(b <= a for a, b in zip(self.band_plan, self.band_plan[1:])):
            raise ValueError("band plan must be strictly increasing")
        for b in self.buildings:
            lo, hi = b.min_corner, b.max_corner
            if lo.x < xmin or lo.y < ymin or hi.x > xmax or hi.y > ymax:
                raise ValueError(f"building {lo}-{hi} outside scene bounds")

    @property
    def n_bands(self) -> int:
        return len(self.band_plan)

    def in_bounds(self, p) -> bool:
        xmin, ymin, xmax, ymax = self.bounds
        return xmin <= p[0] <= xmax and ymin <= p[1] <= ymax

    def inside_building(self, p) -> bool:
        p = Point3(*p)
        return any(b.contains(p) for b in self.buildings)

    # JSON document: {bounds, carrier_hz, band_plan, bs_location, buildings:[{min, max, height}]}
    def to_dict(self) -> dict:
        return {
            "bounds": list(self.bounds),
            "carrier_hz": self.carrier_hz,
            "band_plan": list(self.band_plan),
            "bs_location": list(self.bs_location) if self.bs_location is not None else None,
            "buildings": [
                {
                    "min": [b.min_corner.x, b.min_corner.y],
                    "max": [b.max_corner.x, b.max_corner.y],
                    "height": b.height,
                }
                for b in self.buildings
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Scene":
        try:
            buildings = [
                BuildingBox.from_footprint(b["min"], b["max"], float(b["height"]))
                for b in doc.get("buildings", [])
            ]
            bs = doc.get("bs_location")
            return cls(
                buildings=tuple(buildings),
                bounds=tuple(doc["bounds"]),
                carrier_hz=float(doc.get("carrier_hz", 28e9)),
                band_plan=tuple(doc["band_plan"]) if doc.get("band_plan") else None,
                bs_location=as_point(bs) if bs is not None else None,
            )
        except (KeyError, TypeError, IndexError) as exc:
            raise ValueError(f"malformed scene document: {exc!r}") from exc


def load_scene(path) -> Scene:
    with open(path) as fh:
        return Scene.from_dict(json.load(fh))


def ray_box_intersect(box: BuildingBox, origin, direction, t_max: float) -> Optional[float]:
    """Entry distance of the ray ``origin + t*direction`` into ``box``.

    Only the part of the ray with ``EPS < t < t_max`` is considered. Returns
    ``None`` when that part does not pass through the box interior (rays that
    merely graze a face or an edge are not counted).
    """
    o = as_point(origin)
    d = as_point(direction)
    if not math.isfinite(t_max) or t_max <= 0:
        raise ValueError("t_max must be finite and positive")
    if abs(d.norm() - 1.0) > 1e-9:
        raise ValueError("direction must have unit norm")

    t_near, t_far = -math.inf, math.inf
    for oc, dc, lo, hi in (
        (o.x, d.x, box.min_corner.x, box.max_corner.x),
        (o.y, d.y, box.min_corner.y, box.max_corner.y),
        (o.z, d.z, box.min_corner.z, box.max_corner.z),
    ):
        if dc == 0.0:
            if not (lo < oc < hi):
                return None
            continue
        t1 = (lo - oc) / dc
        t2 = (hi - oc) / dc
        if t1 > t2:
            t1, t2 = t2, t1
        if t1 > t_near:
            t_near = t1
        if t2 < t_far:
            t_far = t2

    enter = max(t_near, EPS)
    leave = min(t_far, t_max)
    if leave - enter > _GRAZE:
        return enter
    return None


def los_visible(scene: Scene, a, b) -> bool:
    """True when the open segment between ``a`` and ``b`` crosses no building."""
    a = as_point(a)
    b = as_point(b)
    diff = b - a
    length = diff.norm()
    if length == 0.0:
        raise ValueError("segment endpoints coincide")
    if length <= 2 * EPS:
        return True
    u = Point3(diff.x / length, diff.y / length, diff.z / length)
    # a direction renormalisation can leave |u| off by an ulp; skip re-validation
    return not any(_hits(box, a, u, length - EPS) for box in scene.buildings)


def _hits(box: BuildingBox, o: Point3, d: Point3, t_max: float) -> bool:
    # inner loop of los_visible, same rule as ray_box_intersect without validation
    t_near, t_far = -math.inf, math.inf
    for oc, dc, lo, hi in (
        (o.x, d.x, box.min_corner.x, box.max_corner.x),
        (o.y, d.y, box.min_corner.y, box.max_corner.y),
        (o.z, d.z, box.min_corner.z, box.max_corner.z),
    ):
        if dc == 0.0:
            if not (lo < oc < hi):
                return False
            continue
        t1 = (lo - oc) / dc
        t2 = (hi - oc) / dc
        if t1 > t2:
            t1, t2 = t2, t1
        if t1 > t_near:
            t_near = t1
        if t2 < t_far:
            t_far = t2
        if t_far - t_near <= _GRAZE:
            return False
    return min(t_far, t_max) - max(t_near, EPS) > _GRAZE


def grid_locations(scene: Scene, step: float, z: float, outdoor_only: bool = False,
                   region: Optional[Sequence[float]] = None) -> list:
    """Cell-centred sampling grid over ``region`` (defaults to the scene bounds)."""
    if step <= 0:
        raise ValueError("grid step must be positive")
    x0, y0, x1, y1 = region if region is not None else scene.bounds
    nx = int(round((x1 - x0) / step))
    ny = int(round((y1 - y0) / step))
    pts = []
    for j in range(ny):
        for i in range(nx):
            p = Point3(x0 + (i + 0.5) * step, y0 + (j + 0.5) * step, z)
            if outdoor_only and scene.inside_building(p):
                continue
            pts.append(p)
    return pts


def random_outdoor_point(scene: Scene, rng: np.random.Generator, z: float,
                         max_tries: int = 10000) -> Point3:
    xmin, ymin, xmax, ymax = scene.bounds
    for _ in range(max_tries):
        p = Point3(float(rng.uniform(xmin, xmax)), float(rng.uniform(ymin, ymax)), z)
        if not scene.inside_building(p):
            return p
    raise RuntimeError("could not find an outdoor point; scene fully built up?")


def urban_grid_scene(
    n_blocks: int = 3,
    block_size: float = 20.0,
    street_width: float = 10.0,
    height_range: tuple = (10.0, 40.0),
    carrier_hz: float = 28e9,
    n_bands: int = 1,
    band_spacing_hz: float = 20e6,
    bs_location=None,
    fill_prob: float = 1.0,
    seed: int = 0,
) -> Scene:
    """Manhattan-style block layout with seeded heights and footprint jitter.

    Blocks are ``block_size`` squares separated by streets; the scene bounds
    include a street around the outside so every block has four free facades.
    """
    rng = np.random.default_rng(seed)
    pitch = block_size + street_width
    extent = n_blocks * pitch + street_width
    buildings = []
    for bi in range(n_blocks):
        for bj in range(n_blocks):
            if rng.uniform() > fill_prob:
                continue
            x0 = street_width + bi * pitch
            y0 = street_width + bj * pitch
            # shrink footprints a little so facades are not on a regular lattice
            sx0, sy0, sx1, sy1 = rng.uniform(0.0, 0.2 * block_size, size=4)
            h = float(rng.uniform(*height_range))
            buildings.append(
                BuildingBox.from_footprint(
                    (x0 + sx0, y0 + sy0), (x0 + block_size - sx1, y0 + block_size - sy1), h
                )
            )
    return Scene(
        buildings=tuple(buildings),
        bounds=(0.0, 0.0, extent, extent),
        carrier_hz=carrier_hz,
        band_plan=default_band_plan(carrier_hz, n_bands, band_spacing_hz),
        bs_location=as_point(bs_location) if bs_location is not None else None,
    )


# layouts used by the experiments; keyword overrides go straight to urban_grid_scene
PRESETS = {
    "d2d": dict(n_blocks=3, block_size=15.0, street_width=10.0, height_range=(10.0, 40.0),
                carrier_hz=2.4e9, n_bands=12, band_spacing_hz=20e6, seed=1),
    "mmwave": dict(n_blocks=4, block_size=20.0, street_width=12.0, height_range=(15.0, 40.0),
                   carrier_hz=28e9, n_bands=1, bs_location=(54.0, 6.0, 10.0), seed=3),
}


def preset_scene(name: str, **overrides) -> Scene:
    if name not in PRESETS:
        raise ValueError(f"unknown scene preset {name!r}; choose from {sorted(PRESETS)}")
    kw = dict(PRESETS[name])
    kw.update({k: v for k, v in overrides.items() if v is not None})
    if "height_range" in kw:
        kw["height_range"] = tuple(kw["height_range"])
    return urban_grid_scene(**kw)
