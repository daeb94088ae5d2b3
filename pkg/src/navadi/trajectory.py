"""Pose trajectories: timed rigid poses of the vehicle body in a local tangent frame.

Frames: the trajectory pose maps the vehicle sensor-unit body frame (x
forward, y left, z up - the frame the extrinsic calibration chain refers to)
into a local NED tangent frame anchored at the trajectory origin. The
navigation stack works internally in a forward-right-down body frame; the
conversion between the two is the fixed axis flip diag(1, -1, -1).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation, Slerp

from . import geodesy
from .errors import EmptyStream, PoseGap
from .geodesy import GeodeticPosition
from .mechanization import NavState

# FLU (x fwd, y left, z up) <-> FRD (x fwd, y right, z down) axis flip
FLU_TO_FRD = np.diag([1.0, -1.0, -1.0])

_TIME_TOL = 1e-6  # [s] slack allowed at trajectory ends


def local_tangent_offset(pos: GeodeticPosition, origin: GeodeticPosition) -> np.ndarray:
    """NED offset [m] of ``pos`` from ``origin``, using curvature radii at the origin."""
    rn = geodesy.meridian_radius(origin.lat) + origin.height
    re = geodesy.normal_radius(origin.lat) + origin.height
    return np.array([
        (pos.lat - origin.lat) * rn,
        (pos.lon - origin.lon) * re * np.cos(origin.lat),
        -(pos.height - origin.height),
    ])


@dataclass
class PoseTrajectory:
    """Timestamped body-in-local-tangent poses with interpolation.

    ``rotations`` are 3x3 body(FLU)-to-NED matrices, ``translations`` the
    body origin in the NED tangent frame [m].
    """

    timestamps: np.ndarray
    rotations: np.ndarray      # (N, 3, 3)
    translations: np.ndarray   # (N, 3)
    origin: GeodeticPosition
    _slerp: Slerp | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=float)
        self.rotations = np.asarray(self.rotations, dtype=float)
        self.translations = np.asarray(self.translations, dtype=float)
        if len(self.timestamps) == 0:
            raise EmptyStream("pose trajectory has no states")
        if np.any(np.diff(self.timestamps) <= 0.0):
            raise ValueError("pose timestamps must be strictly increasing")

    def __len__(self) -> int:
        return len(self.timestamps)

    @classmethod
    def from_nav_states(cls, states: list[NavState],
                        origin: GeodeticPosition | None = None) -> "PoseTrajectory":
        """Build from navigation states (FRD body attitude, geodetic position)."""
        if not states:
            raise EmptyStream("no navigation states")
        if origin is None:
            origin = states[0].pos
        ts = np.array([s.timestamp for s in states])
        rots = np.stack([s.c_b_n @ FLU_TO_FRD for s in states])
        trans = np.stack([local_tangent_offset(s.pos, origin) for s in states])
        return cls(ts, rots, trans, origin)

    def pose_at(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        """Interpolated (R, t) at time ``t``; raises PoseGap outside the span."""
        ts = self.timestamps
        if t < ts[0] - _TIME_TOL or t > ts[-1] + _TIME_TOL:
            raise PoseGap(f"time {t} outside trajectory span [{ts[0]}, {ts[-1]}]")
        t = min(max(t, ts[0]), ts[-1])
        i = int(np.searchsorted(ts, t, side="right")) - 1
        i = min(max(i, 0), len(ts) - 1)
        if ts[i] == t or i == len(ts) - 1:
            return self.rotations[i].copy(), self.translations[i].copy()
        if self._slerp is None:
            self._slerp = Slerp(ts, Rotation.from_matrix(self.rotations))
        r = self._slerp(t).as_matrix()
        w = (t - ts[i]) / (ts[i + 1] - ts[i])
        trans = (1.0 - w) * self.translations[i] + w * self.translations[i + 1]
        return r, trans

    def as_matrices(self) -> np.ndarray:
        """(N, 3, 4) stacked [R | t] pose rows."""
        out = np.empty((len(self), 3, 4))
        out[:, :, :3] = self.rotations
        out[:, :, 3] = self.translations
        return out
