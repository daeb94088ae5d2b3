"""Readers and writers for KITTI-raw-format sequences and artifact products.

Covers: velodyne binary scans, per-frame OXTS text records with nanosecond
timestamp files, the three calibration text files, the shared binary tensor
format (magic ``TNSR``), 3-channel ADI export (float tensor or normalized
8-bit PNG with a sidecar), and plain-text pose files. Byte-exact layouts are
documented in docs/formats.md.

Frame conventions: the OXTS unit frame is x forward, y left, z up (FLU); the
navigation stack's body frame is x forward, y right, z down (FRD). OXTS yaw
is counter-clockwise from east (ENU); lat/lon are converted from degrees to
radians at parse time.
"""

from __future__ import annotations

import calendar
import datetime as _dt
import math
import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from . import geodesy
from .errors import (IoError, MalformedFile, MalformedNumber, MissingField,
                     MissingFile)
from .geodesy import GeodeticPosition
from .kalman import AidingMeasurement
from .lidar_geometry import CalibrationSet, PointCloud, RigidTransform
from .mechanization import ImuSample, NavState
from .trajectory import FLU_TO_FRD, PoseTrajectory

# NED (n, e, d) from ENU (e, n, u)
NED_FROM_ENU = np.array([[0.0, 1.0, 0.0],
                         [1.0, 0.0, 0.0],
                         [0.0, 0.0, -1.0]])

OXTS_FIELDS = (
    "lat", "lon", "alt", "roll", "pitch", "yaw",
    "vn", "ve", "vf", "vl", "vu",
    "ax", "ay", "az", "af", "al", "au",
    "wx", "wy", "wz", "wf", "wl", "wu",
    "pos_accuracy", "vel_accuracy",
    "navstat", "numsats", "posmode", "velmode", "orimode",
)

_POINT_RECORD = struct.Struct("<4f")


# --- small atomic-write helpers ------------------------------------------------

def atomic_write_bytes(path, data: bytes) -> None:
    """Write via a temp file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    try:
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    except OSError as exc:
        raise IoError(f"writing {path}: {exc}") from exc


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


# --- velodyne ------------------------------------------------------------------

def read_velodyne(path, timestamp: float = 0.0) -> PointCloud:
    """Read a binary scan of little-endian float32 (x, y, z, reflectance) records."""
    path = Path(path)
    if not path.exists():
        raise MissingFile(str(path))
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise IoError(f"reading {path}: {exc}") from exc
    if len(raw) % _POINT_RECORD.size != 0:
        raise MalformedFile(
            f"{path}: size {len(raw)} not a multiple of {_POINT_RECORD.size}")
    data = np.frombuffer(raw, dtype="<f4").reshape(-1, 4)
    return PointCloud(data[:, :3].astype(float), data[:, 3].astype(float),
                      frame="lidar", timestamp=timestamp)


def write_velodyne(path, cloud: PointCloud) -> None:
    data = np.empty((len(cloud), 4), dtype="<f4")
    data[:, :3] = cloud.xyz
    data[:, 3] = cloud.reflectance
    atomic_write_bytes(path, data.tobytes())


# --- timestamps ------------------------------------------------------------------

def _parse_stamp(line: str) -> tuple[int, float]:
    """KITTI timestamp line -> (integer epoch seconds, fractional seconds)."""
    line = line.strip()
    try:
        if "." in line:
            main, frac = line.split(".", 1)
            frac_val = float("0." + frac)
        else:
            main, frac_val = line, 0.0
        dt = _dt.datetime.strptime(main, "%Y-%m-%d %H:%M:%S")
    except ValueError as exc:
        raise MalformedNumber(f"bad timestamp line {line!r}") from exc
    return calendar.timegm(dt.timetuple()), frac_val


def read_timestamps(path) -> tuple[list[tuple[int, float]], int]:
    """Parse a timestamps file into (sec, frac) pairs; also return the line count."""
    path = Path(path)
    if not path.exists():
        raise MissingFile(str(path))
    stamps = []
    for line in path.read_text().splitlines():
        if line.strip():
            stamps.append(_parse_stamp(line))
    return stamps, len(stamps)


def relative_times(stamps: list[tuple[int, float]],
                   origin: tuple[int, float]) -> np.ndarray:
    """Seconds elapsed since ``origin``, computed without large-epoch rounding."""
    sec0, frac0 = origin
    return np.array([(s - sec0) + (f - frac0) for s, f in stamps])


def write_timestamps(path, times, base: str = "2011-09-26 13:00:00") -> None:
    """Write relative times [s] as KITTI nanosecond timestamp lines."""
    lines = []
    base_dt = _dt.datetime.strptime(base, "%Y-%m-%d %H:%M:%S")
    for t in times:
        whole = int(math.floor(t))
        ns = int(round((t - whole) * 1e9))
        if ns >= 1_000_000_000:
            whole += 1
            ns -= 1_000_000_000
        stamp = base_dt + _dt.timedelta(seconds=whole)
        lines.append(stamp.strftime("%Y-%m-%d %H:%M:%S") + f".{ns:09d}")
    atomic_write_text(path, "\n".join(lines) + "\n")


# --- OXTS ------------------------------------------------------------------------

@dataclass
class OxtsRecord:
    """One parsed OXTS record; angles in radians, lat/lon converted from degrees."""

    lat: float
    lon: float
    alt: float
    roll: float
    pitch: float
    yaw: float
    vn: float
    ve: float
    vf: float
    vl: float
    vu: float
    ax: float
    ay: float
    az: float
    af: float
    al: float
    au: float
    wx: float
    wy: float
    wz: float
    wf: float
    wl: float
    wu: float
    pos_accuracy: float
    vel_accuracy: float
    navstat: int
    numsats: int
    posmode: int
    velmode: int
    orimode: int
    timestamp: float = 0.0

    @property
    def position(self) -> GeodeticPosition:
        return GeodeticPosition(self.lat, self.lon, self.alt)

    @property
    def v_ned(self) -> np.ndarray:
        return np.array([self.vn, self.ve, -self.vu])

    def c_b_n(self) -> np.ndarray:
        """Body(FRD)-to-NED attitude from the record's roll/pitch/yaw."""
        c_flu_enu = geodesy.euler_to_matrix(self.roll, self.pitch, self.yaw)
        return NED_FROM_ENU @ c_flu_enu @ FLU_TO_FRD


def parse_oxts_line(line: str, timestamp: float = 0.0) -> OxtsRecord:
    parts = line.split()
    if len(parts) != len(OXTS_FIELDS):
        raise MissingField(
            f"OXTS record has {len(parts)} fields, expected {len(OXTS_FIELDS)}")
    values = {}
    for name, token in zip(OXTS_FIELDS, parts):
        try:
            values[name] = float(token)
        except ValueError as exc:
            raise MalformedNumber(f"field {name} = {token!r}") from exc
    if not (-90.0 <= values["lat"] <= 90.0) or not (-180.0 <= values["lon"] <= 180.0):
        raise MalformedFile(
            f"lat/lon {values['lat']},{values['lon']} outside valid degree range")
    values["lat"] = math.radians(values["lat"])
    values["lon"] = math.radians(values["lon"])
    for name in ("navstat", "numsats", "posmode", "velmode", "orimode"):
        values[name] = int(values[name])
    return OxtsRecord(timestamp=timestamp, **values)


def format_oxts_line(rec: OxtsRecord) -> str:
    """Inverse of :func:`parse_oxts_line` (degrees on disk, lossless %.17g)."""
    out = []
    for name in OXTS_FIELDS:
        value = getattr(rec, name)
        if name in ("lat", "lon"):
            value = math.degrees(value)
        if name in ("navstat", "numsats", "posmode", "velmode", "orimode"):
            out.append(str(int(value)))
        else:
            out.append(f"{value:.17g}")
    return " ".join(out)


def read_oxts(seq_dir) -> list[OxtsRecord]:
    """Read oxts/data/*.txt with timestamps relative to the first record."""
    seq_dir = Path(seq_dir)
    data_dir = seq_dir / "oxts" / "data"
    ts_file = seq_dir / "oxts" / "timestamps.txt"
    if not data_dir.is_dir():
        raise MissingFile(str(data_dir))
    files = sorted(data_dir.glob("*.txt"))
    stamps, n = read_timestamps(ts_file)
    if n != len(files):
        raise MalformedFile(
            f"{ts_file}: {n} timestamps for {len(files)} oxts files")
    times = relative_times(stamps, stamps[0])
    if np.any(np.diff(times) <= 0.0):
        raise MalformedFile(f"{ts_file}: timestamps not strictly increasing")
    records = []
    for path, t in zip(files, times):
        text = path.read_text().strip()
        if not text:
            raise MalformedFile(f"{path}: empty record")
        records.append(parse_oxts_line(text.splitlines()[0], timestamp=float(t)))
    return records


def imu_samples(records: list[OxtsRecord],
                accel_triplet: str = "af_al_au") -> list[ImuSample]:
    """OXTS records -> body-FRD IMU samples.

    ``accel_triplet`` selects (af, al, au) [paired with wf, wl, wu] or
    (ax, ay, az) [paired with wx, wy, wz]; both are FLU-axis triplets. The
    raw format does not state whether the accelerometer output is gravity
    compensated; this reader assumes raw specific force (see docs).
    """
    samples = []
    for r in records:
        if accel_triplet == "af_al_au":
            f_flu = np.array([r.af, r.al, r.au])
            w_flu = np.array([r.wf, r.wl, r.wu])
        elif accel_triplet == "ax_ay_az":
            f_flu = np.array([r.ax, r.ay, r.az])
            w_flu = np.array([r.wx, r.wy, r.wz])
        else:
            raise ValueError(f"unknown accel triplet {accel_triplet!r}")
        flip = np.array([1.0, -1.0, -1.0])
        samples.append(ImuSample(f_flu * flip, w_flu * flip, r.timestamp))
    return samples


def aiding_measurements(records: list[OxtsRecord], period: float,
                        pos_std: float, vel_std: float) -> list[AidingMeasurement]:
    """Decimate OXTS position/velocity to roughly one fix per ``period`` seconds."""
    out = []
    next_t = records[0].timestamp if records else 0.0
    for r in records:
        if r.timestamp + 1e-9 >= next_t:
            out.append(AidingMeasurement(
                pos=r.position, v_eb_n=r.v_ned, timestamp=r.timestamp,
                pos_std=np.full(3, pos_std), vel_std=np.full(3, vel_std)))
            next_t = r.timestamp + period
    return out


def initial_nav_state(record: OxtsRecord) -> NavState:
    return NavState(record.position, record.v_ned, record.c_b_n(),
                    record.timestamp)


def oxts_pose_trajectory(records: list[OxtsRecord],
                         origin: GeodeticPosition | None = None) -> PoseTrajectory:
    """Poses taken directly from the OXTS solution (no filtering)."""
    states = [initial_nav_state(r) for r in records]
    return PoseTrajectory.from_nav_states(states, origin=origin)


# --- calibration -------------------------------------------------------------------

def _read_kv_file(path) -> dict[str, list[float]]:
    path = Path(path)
    if not path.exists():
        raise MissingFile(str(path))
    out: dict[str, list[float]] = {}
    for line in path.read_text().splitlines():
        if ":" not in line:
            continue
        key, rest = line.split(":", 1)
        tokens = rest.split()
        try:
            out[key.strip()] = [float(t) for t in tokens]
        except ValueError:
            continue  # non-numeric entries like calib_time
    return out


def _require(d: dict, key: str, n: int, path) -> np.ndarray:
    if key not in d:
        raise MissingField(f"{path}: missing {key}")
    if len(d[key]) != n:
        raise MalformedFile(f"{path}: {key} has {len(d[key])} values, expected {n}")
    return np.array(d[key])


def _rigid_from_rt(d: dict, path, src: str, dst: str) -> RigidTransform:
    r = _require(d, "R", 9, path).reshape(3, 3)
    t = _require(d, "T", 3, path)
    return RigidTransform(r, t, src=src, dst=dst)


def read_calibration(seq_dir, camera: str = "02") -> CalibrationSet:
    """Assemble a CalibrationSet from the three KITTI calibration files.

    Files are searched in the sequence directory, then one level up (the
    KITTI raw layout keeps them beside the drive directories). The reference
    camera defaults to the left color camera (image_02).
    """
    seq_dir = Path(seq_dir)
    def find(name: str) -> Path:
        for base in (seq_dir, seq_dir.parent):
            p = base / name
            if p.exists():
                return p
        raise MissingFile(f"{name} not found in {seq_dir} or its parent")

    velo_cam = _read_kv_file(find("calib_velo_to_cam.txt"))
    imu_velo = _read_kv_file(find("calib_imu_to_velo.txt"))
    cam_cam_path = find("calib_cam_to_cam.txt")
    cam_cam = _read_kv_file(cam_cam_path)

    t_lidar_cam = _rigid_from_rt(velo_cam, "calib_velo_to_cam.txt",
                                 src="lidar", dst="camera")
    t_imu_lidar = _rigid_from_rt(imu_velo, "calib_imu_to_velo.txt",
                                 src="body", dst="lidar")
    r_rect = np.eye(4)
    r_rect[:3, :3] = _require(cam_cam, "R_rect_00", 9, cam_cam_path).reshape(3, 3)
    p_rect = _require(cam_cam, f"P_rect_{camera}", 12, cam_cam_path).reshape(3, 4)
    size = _require(cam_cam, f"S_rect_{camera}", 2, cam_cam_path)
    image_size = (int(round(size[1])), int(round(size[0])))  # file stores W H
    return CalibrationSet(t_lidar_cam=t_lidar_cam, r_rect=r_rect,
                          p_rect=p_rect, t_imu_lidar=t_imu_lidar,
                          image_size=image_size)


def write_calibration(seq_dir, calib: CalibrationSet) -> None:
    """Emit the three calibration files for a (synthetic) sequence."""
    seq_dir = Path(seq_dir)

    def rt_text(t: RigidTransform) -> str:
        r = " ".join(f"{v:.17g}" for v in t.r.ravel())
        tt = " ".join(f"{v:.17g}" for v in t.t)
        return f"R: {r}\nT: {tt}\n"

    atomic_write_text(seq_dir / "calib_velo_to_cam.txt", rt_text(calib.t_lidar_cam))
    atomic_write_text(seq_dir / "calib_imu_to_velo.txt", rt_text(calib.t_imu_lidar))
    h, w = calib.image_size
    lines = [
        "R_rect_00: " + " ".join(f"{v:.17g}" for v in calib.r_rect[:3, :3].ravel()),
        "P_rect_02: " + " ".join(f"{v:.17g}" for v in calib.p_rect.ravel()),
        f"S_rect_02: {w:.6g} {h:.6g}",
    ]
    atomic_write_text(seq_dir / "calib_cam_to_cam.txt", "\n".join(lines) + "\n")


# --- binary tensor format -----------------------------------------------------------

_TENSOR_MAGIC = b"TNSR"
_TENSOR_VERSION = 1
_DTYPE_CODES = {1: np.dtype("<f4"), 2: np.dtype("<f8"), 3: np.dtype("u1")}
_CODE_FOR_KIND = {("f", 4): 1, ("f", 8): 2, ("u", 1): 3}


def write_tensor(path, array: np.ndarray) -> None:
    """Write the documented little-endian tensor format (magic TNSR)."""
    array = np.asarray(array)
    key = (array.dtype.kind, array.dtype.itemsize)
    if key not in _CODE_FOR_KIND:
        raise ValueError(f"unsupported tensor dtype {array.dtype}")
    code = _CODE_FOR_KIND[key]
    header = _TENSOR_MAGIC + struct.pack("<BBH", _TENSOR_VERSION, code, array.ndim)
    header += struct.pack(f"<{array.ndim}Q", *array.shape)
    body = np.ascontiguousarray(array.astype(_DTYPE_CODES[code], copy=False))
    atomic_write_bytes(path, header + body.tobytes())


def read_tensor(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise MissingFile(str(path))
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise IoError(f"reading {path}: {exc}") from exc
    if len(raw) < 8 or raw[:4] != _TENSOR_MAGIC:
        raise MalformedFile(f"{path}: bad magic")
    version, code, ndim = struct.unpack_from("<BBH", raw, 4)
    if version != _TENSOR_VERSION:
        raise MalformedFile(f"{path}: unsupported version {version}")
    if code not in _DTYPE_CODES:
        raise MalformedFile(f"{path}: unknown dtype code {code}")
    header_end = 8 + 8 * ndim
    if len(raw) < header_end:
        raise MalformedFile(f"{path}: truncated shape header")
    shape = struct.unpack_from(f"<{ndim}Q", raw, 8)
    dtype = _DTYPE_CODES[code]
    expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize if ndim else dtype.itemsize
    if len(raw) - header_end != expected:
        raise MalformedFile(
            f"{path}: payload {len(raw) - header_end} bytes, expected {expected}")
    data = np.frombuffer(raw, dtype=dtype, offset=header_end)
    return data.reshape(shape).copy()


# --- ADI / pose products --------------------------------------------------------------

def write_adi(adi, path, mode: str = "float") -> None:
    """Export a 3-channel ADI.

    ``float``: TNSR float32 tensor (3, H, W), NaN at invalid pixels.
    ``png8``: per-channel min-max normalized 8-bit RGB PNG (invalid pixels 0)
    with the normalization constants in ``<path>.meta.txt``.
    """
    stacked = adi.stacked()
    if mode == "float":
        write_tensor(path, stacked.astype(np.float32))
        return
    if mode != "png8":
        raise ValueError(f"unknown ADI export mode {mode!r}")
    valid = adi.valid_stacked()
    h, w = stacked.shape[1:]
    img = np.zeros((h, w, 3), dtype=np.uint8)
    meta = ["mode=png8", f"height={h}", f"width={w}"]
    for i in range(3):
        ch = stacked[i]
        ok = valid[i]
        if np.any(ok):
            lo = float(ch[ok].min())
            hi = float(ch[ok].max())
        else:
            lo, hi = 0.0, 0.0
        span = hi - lo
        if span > 0.0:
            scaled = np.zeros((h, w))
            scaled[ok] = 1.0 + 254.0 * (ch[ok] - lo) / span
            img[:, :, i] = np.round(scaled).astype(np.uint8)
        elif np.any(ok):
            img[:, :, i][ok] = 1  # constant channel, degenerate range
        meta.append(f"channel{i}_min={lo:.17g}")
        meta.append(f"channel{i}_max={hi:.17g}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = Image.fromarray(img, "RGB")
    try:
        buf.save(path, format="PNG")
    except OSError as exc:
        raise IoError(f"writing {path}: {exc}") from exc
    atomic_write_text(str(path) + ".meta.txt", "\n".join(meta) + "\n")


def write_poses(traj: PoseTrajectory, path) -> None:
    """3x4 [R|t] rows, one pose per line; timestamps go to ``<path>.times``."""
    lines = []
    for m in traj.as_matrices():
        lines.append(" ".join(f"{v:.12g}" for v in m.ravel()))
    atomic_write_text(path, "\n".join(lines) + "\n")
    times = "\n".join(f"{t:.9f}" for t in traj.timestamps)
    atomic_write_text(str(path) + ".times", times + "\n")


def read_poses(path) -> tuple[np.ndarray, np.ndarray | None]:
    """Read pose rows back; returns (N, 3, 4) matrices and optional timestamps."""
    path = Path(path)
    if not path.exists():
        raise MissingFile(str(path))
    rows = []
    for line in path.read_text().splitlines():
        if not line.strip():
            continue
        tokens = line.split()
        if len(tokens) != 12:
            raise MalformedFile(f"{path}: pose line with {len(tokens)} values")
        try:
            rows.append([float(t) for t in tokens])
        except ValueError as exc:
            raise MalformedNumber(f"{path}: {exc}") from exc
    mats = np.array(rows).reshape(-1, 3, 4)
    times_path = Path(str(path) + ".times")
    times = None
    if times_path.exists():
        try:
            times = np.array([float(t) for t in times_path.read_text().split()])
        except ValueError as exc:
            raise MalformedNumber(f"{times_path}: {exc}") from exc
        if len(times) != len(mats):
            raise MalformedFile(f"{times_path}: {len(times)} times for {len(mats)} poses")
    return mats, times


def pose_trajectory_from_file(path, origin: GeodeticPosition) -> PoseTrajectory:
    mats, times = read_poses(path)
    if times is None:
        raise MalformedFile(f"{path}: no .times sidecar; cannot interpolate")
    return PoseTrajectory(times, mats[:, :, :3], mats[:, :, 3], origin)


# --- sequence manifest -----------------------------------------------------------------

@dataclass
class FrameEntry:
    index: int
    time: float
    velodyne_path: Path
    image_path: Path | None
    oxts_index: int


@dataclass
class SequenceManifest:
    """Deterministic binding of per-frame sensor files and timestamps."""

    sequence_dir: Path
    frames: list[FrameEntry]
    oxts: list[OxtsRecord]
    calib: CalibrationSet

    @classmethod
    def build(cls, seq_dir) -> "SequenceManifest":
        seq_dir = Path(seq_dir)
        velo_dir = seq_dir / "velodyne_points" / "data"
        if not velo_dir.is_dir():
            raise MissingFile(str(velo_dir))
        velo_files = sorted(velo_dir.glob("*.bin"))
        velo_stamps, n = read_timestamps(seq_dir / "velodyne_points" / "timestamps.txt")
        if n != len(velo_files):
            raise MalformedFile(
                f"velodyne timestamps: {n} entries for {len(velo_files)} files")
        oxts_stamps, _ = read_timestamps(seq_dir / "oxts" / "timestamps.txt")
        origin = min(velo_stamps + oxts_stamps)

        records = read_oxts(seq_dir)
        oxts_shift = relative_times([oxts_stamps[0]], origin)[0]
        for r in records:
            r.timestamp += oxts_shift
        oxts_times = np.array([r.timestamp for r in records])

        velo_times = relative_times(velo_stamps, origin)
        if np.any(np.diff(velo_times) <= 0.0):
            raise MalformedFile("velodyne timestamps not strictly increasing")

        image_dir = seq_dir / "image_02" / "data"
        image_files = sorted(image_dir.glob("*.png")) if image_dir.is_dir() else []

        frames = []
        for i, (path, t) in enumerate(zip(velo_files, velo_times)):
            oxts_index = int(np.argmin(np.abs(oxts_times - t)))
            image_path = image_files[i] if i < len(image_files) else None
            frames.append(FrameEntry(i, float(t), path, image_path, oxts_index))
        calib = read_calibration(seq_dir)
        return cls(seq_dir, frames, records, calib)

    def cloud(self, index: int) -> PointCloud:
        frame = self.frames[index]
        return read_velodyne(frame.velodyne_path, timestamp=frame.time)
