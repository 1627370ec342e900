"""Physics-based synthetic jump-clip generator with exact ground-truth
takeoff velocity, rendered from three camera views.

A jump is a Gaussian-blob stick figure (legs, torso, head) on a fixed
phase-normalized timeline: stand -> crouch -> push -> ballistic flight ->
landing (drop jumps start elevated and rebound). Clips are trimmed to the
jump and resampled to a fixed frame count, so apex displacement (proportional
to velocity squared) is the velocity cue, not flight duration.

Views: center is frontal orthographic; left/right add a horizontal offset of
+-S/8 and horizontal scale 0.9. Each participant's recording session draws a
camera scale/height jitter per camera rig -- one draw for the center rig and
one shared by the left/right pair, so single views carry irreducible
calibration noise that fusing views averages out. A screen-fixed luminance
gradient (lens vignette proxy) gives every image row a distinct brightness
level; without it, absolute vertical position would be nearly invisible to a
translation-invariant feature extractor under global pooling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import vten
from .datasets import (
    DatasetIndex,
    SampleRecord,
    VIEWS,
    load_manifest,
    write_manifest,
)
from ._runtime import tune_process
from .errors import ConfigError, RenderError

# Geometry, as fractions of the image side unless noted.
GROUND_FRAC = 0.87           # screen row of the floor line
ARC_APEX_FRAC = 0.24         # flight apex at the reference max velocity
ARC_REF_VELOCITY = 0.9       # velocity that reaches ARC_APEX_FRAC
BODY_HEIGHT_FRAC = (0.35, 0.375)
BODY_WIDTH_FRAC = (0.07, 0.095)
CROUCH_DEPTH_FRAC = (0.08, 0.10)
INTENSITY_RANGE = (0.75, 1.0)
HEAD_SIGMA_FRAC = 0.036
DROP_ELEV_FRAC = 0.16        # starting elevation of a drop jump
SIDE_SHIFT_FRAC = 1.0 / 8.0  # horizontal offset of the side views
SIDE_HSCALE = 0.9            # horizontal perspective squeeze of the side views

# Camera-session nuisance (per rig, fixed for a participant's whole session).
# Clips carry no clean standing reference (they are trimmed to the jump), so
# a single view cannot fully separate rig height/distance from displacement;
# fusing rigs averages these draws out.
CAM_SCALE_JITTER = 0.12      # distance jitter: scale in 1 +- this
CAM_SHIFT_FRAC = 0.05        # tripod-height jitter: +- this * S pixels

GRADIENT_AMP = 0.12          # screen-fixed top-to-bottom luminance gradient
NOISE_AMP = 0.02             # additive uniform pixel noise, +- amplitude


@dataclass
class SyntheticSpec:
    participants: int = 86
    jumps_per_participant: int = 2
    frames: int = 16
    image_size: int = 32
    cmj_fraction: float = 0.5
    vel_mean: float = 0.5
    vel_std: float = 0.1
    vel_low: float = 0.2
    vel_high: float = 0.9
    seed: int = 0
    channels: int = 1

    def validate(self) -> None:
        if min(self.participants, self.jumps_per_participant, self.frames) < 1:
            raise ConfigError("participants, jumps and frames must be >= 1")
        if self.image_size < 12:
            raise ConfigError("image_size must be at least 12 pixels")
        if not self.vel_low < self.vel_high:
            raise ConfigError(
                f"velocity truncation bounds out of order: "
                f"[{self.vel_low}, {self.vel_high}]"
            )
        if self.channels != 1:
            raise ConfigError("only single-channel rendering is implemented")
        if not 0.0 <= self.cmj_fraction <= 1.0:
            raise ConfigError("cmj_fraction must lie in [0, 1]")
        # Worst-case head position at apex must stay inside the frame.
        s = self.image_size
        apex = _arc_gain(s) * self.vel_high ** 2
        top_extent = (1.0 + CAM_SCALE_JITTER) * (
            apex + 0.92 * BODY_HEIGHT_FRAC[1] * s + 2.5 * HEAD_SIGMA_FRAC * s
        )
        top_row = GROUND_FRAC * (s - 1) - CAM_SHIFT_FRAC * s - top_extent
        if top_row < 0:
            raise ConfigError(
                f"max-velocity apex would leave the frame (top row {top_row:.1f})"
            )


@dataclass
class ParticipantProfile:
    participant_id: int
    body_height: float   # standing height, pixels
    body_width: float    # torso sigma, pixels
    intensity: float
    crouch_depth: float  # pixels of compression at the deepest crouch
    seed: int


def _arc_gain(image_size: int) -> float:
    return ARC_APEX_FRAC * image_size / ARC_REF_VELOCITY ** 2


def sample_profile(spec: SyntheticSpec, index: int) -> ParticipantProfile:
    """Deterministic profile from (master seed, participant index)."""
    if not 0 <= index < spec.participants:
        raise ConfigError(f"participant index {index} out of range")
    ss = np.random.SeedSequence(spec.seed, spawn_key=(101, index))
    rng = np.random.default_rng(ss)
    s = spec.image_size
    return ParticipantProfile(
        participant_id=index,
        body_height=s * rng.uniform(*BODY_HEIGHT_FRAC),
        body_width=s * rng.uniform(*BODY_WIDTH_FRAC),
        intensity=rng.uniform(*INTENSITY_RANGE),
        crouch_depth=s * rng.uniform(*CROUCH_DEPTH_FRAC),
        seed=int(np.random.SeedSequence(spec.seed, spawn_key=(102, index))
                 .generate_state(1, np.uint64)[0]),
    )


def _smoothstep(q: np.ndarray) -> np.ndarray:
    q = np.clip(q, 0.0, 1.0)
    return q * q * (3.0 - 2.0 * q)


def _pose_track(jump_type: str, velocity: float, frames: int,
                image_size: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-frame (feet elevation above ground, crouch factor in [0, 1]).

    The timeline is phase-normalized: clips are trimmed to the jump and every
    clip spends the same frame budget on each phase whatever the velocity, so
    apex displacement (not airborne time) carries the velocity information.
    Clips open mid-movement; there is no clean standing segment.
    """
    tau = (np.arange(frames) + 0.5) / frames
    apex = _arc_gain(image_size) * velocity * velocity
    elev = np.zeros(frames)
    crouch = np.zeros(frames)
    if jump_type == "cmj":
        crouch += 0.4 + 0.6 * _smoothstep(tau / 0.18)         # finish descending
        crouch -= _smoothstep((tau - 0.30) / 0.12)            # push back up
        up, dn = 0.42, 0.82
    elif jump_type == "drop":
        q = np.clip((tau - 0.12) / 0.18, 0.0, 1.0)
        drop0 = DROP_ELEV_FRAC * image_size
        elev += np.where(tau < 0.30, drop0 * (1.0 - q * q), 0.0)  # fall
        crouch += 0.8 * _smoothstep((tau - 0.30) / 0.14)          # absorb
        crouch -= 0.8 * _smoothstep((tau - 0.44) / 0.08)          # rebound push
        up, dn = 0.52, 0.88
    else:
        raise ConfigError(f"unknown jump type {jump_type!r}")
    u = (tau - up) / (dn - up)
    flight = (u > 0.0) & (u < 1.0)
    elev[flight] += apex * 4.0 * u[flight] * (1.0 - u[flight])
    # landing dip, no full recovery inside the clip
    crouch += 0.35 * _smoothstep((tau - dn) / 0.08)
    return elev, np.clip(crouch, 0.0, 1.0)


def _body_blobs(profile: ParticipantProfile, elev: float, crouch: float,
                head_sigma: float):
    """Blob list (height above ground, sigma_x, sigma_y, weight)."""
    h_eff = profile.body_height - profile.crouch_depth * crouch
    w = profile.body_width
    return [
        (elev + 0.22 * h_eff, 0.80 * w * (1.0 + 0.18 * crouch), 0.16 * h_eff, 0.90),
        (elev + 0.56 * h_eff, w * (1.0 + 0.25 * crouch), 0.17 * h_eff, 1.00),
        (elev + 0.90 * h_eff, head_sigma, head_sigma, 0.95),
    ]


def _view_params(image_size: int, session_rng: np.random.Generator):
    """(hscale, hshift, cam_scale, cam_shift) per view.

    Draw order is fixed: center rig first, then the shared left/right rig.
    """
    s_c = session_rng.uniform(1.0 - CAM_SCALE_JITTER, 1.0 + CAM_SCALE_JITTER)
    o_c = session_rng.uniform(-CAM_SHIFT_FRAC, CAM_SHIFT_FRAC) * image_size
    s_lr = session_rng.uniform(1.0 - CAM_SCALE_JITTER, 1.0 + CAM_SCALE_JITTER)
    o_lr = session_rng.uniform(-CAM_SHIFT_FRAC, CAM_SHIFT_FRAC) * image_size
    shift = SIDE_SHIFT_FRAC * image_size
    return {
        "left": (SIDE_HSCALE, +shift, s_lr, o_lr),
        "center": (1.0, 0.0, s_c, o_c),
        "right": (SIDE_HSCALE, -shift, s_lr, o_lr),
    }


def vignette(image_size: int) -> np.ndarray:
    """Screen-fixed luminance gradient, brightest at the top row."""
    rows = np.arange(image_size, dtype=np.float64)
    return GRADIENT_AMP * (1.0 - rows / (image_size - 1))


def render_jump(profile: ParticipantProfile, velocity: float, jump_type: str,
                frames: int, image_size: int) -> dict:
    """Render one jump; deterministic in all arguments.

    Returns {view: (frames, S, S, 1) float32}, pixel values in [0, 1].
    """
    s = image_size
    ground = GROUND_FRAC * (s - 1)
    cx0 = (s - 1) / 2.0
    head_sigma = HEAD_SIGMA_FRAC * s

    session_rng = np.random.default_rng(
        np.random.SeedSequence(profile.seed, spawn_key=(1,))
    )
    views = _view_params(s, session_rng)
    vbits = int(np.float64(velocity).view(np.uint64))
    tcode = 0 if jump_type == "cmj" else 1
    noise_rng = np.random.default_rng(
        np.random.SeedSequence(entropy=(profile.seed, 2, vbits, tcode))
    )

    elev, crouch = _pose_track(jump_type, velocity, frames, s)
    rows = np.arange(s, dtype=np.float64)
    cols = np.arange(s, dtype=np.float64)
    base_grad = vignette(s)[:, None]

    out = {}
    for view in VIEWS:
        hscale, hshift, cam_s, cam_o = views[view]
        stack = np.empty((frames, s, s), dtype=np.float64)
        cx = cx0 + hshift
        for t in range(frames):
            frame = np.zeros((s, s), dtype=np.float64)
            for height, sx, sy, weight in _body_blobs(
                profile, elev[t], crouch[t], head_sigma
            ):
                cy = ground + cam_o - cam_s * height
                if not -1.0 <= cy <= s:
                    raise RenderError(
                        f"blob row {cy:.1f} outside frame for view {view}"
                    )
                gy = np.exp(-0.5 * ((rows - cy) / (cam_s * sy)) ** 2)
                gx = np.exp(-0.5 * ((cols - cx) / (hscale * cam_s * sx)) ** 2)
                frame += weight * profile.intensity * np.outer(gy, gx)
            stack[t] = frame
        stack = np.clip(stack + base_grad, 0.0, 1.0)
        stack += noise_rng.uniform(-NOISE_AMP, NOISE_AMP, size=stack.shape)
        out[view] = np.clip(stack, 0.0, 1.0).astype(np.float32)[..., None]
    return out


def sample_velocity(rng: np.random.Generator, spec: SyntheticSpec) -> float:
    """Truncated-Gaussian label, by rejection."""
    while True:
        v = rng.normal(spec.vel_mean, spec.vel_std)
        if spec.vel_low <= v <= spec.vel_high:
            return float(v)


def jump_type_for(spec: SyntheticSpec, jump: int) -> str:
    """Deterministic type mix: round-robin against cmj_fraction."""
    return "cmj" if (jump + 0.5) / spec.jumps_per_participant <= spec.cmj_fraction \
        else "drop"


def generate_dataset(spec: SyntheticSpec, out_dir) -> DatasetIndex:
    """Render the full dataset to ``out_dir`` and return its loaded index.

    Pure function of ``spec``: regenerating with the same spec produces
    byte-identical files.
    """
    tune_process()
    spec.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = []
    for pidx in range(spec.participants):
        profile = sample_profile(spec, pidx)
        pdir = out_dir / f"p{pidx:03d}"
        pdir.mkdir(exist_ok=True)
        for j in range(spec.jumps_per_participant):
            jtype = jump_type_for(spec, j)
            vel_rng = np.random.default_rng(
                np.random.SeedSequence(spec.seed, spawn_key=(103, pidx, j))
            )
            velocity = sample_velocity(vel_rng, spec)
            clips = render_jump(profile, velocity, jtype, spec.frames,
                                spec.image_size)
            paths = {}
            for view in VIEWS:
                rel = f"p{pidx:03d}/j{j}_{jtype}_{view}.vten"
                vten.write(out_dir / rel, clips[view])
                paths[view] = rel
            records.append(SampleRecord(pidx, j, jtype, velocity, paths))
    index = DatasetIndex(root=out_dir, records=tuple(records))
    write_manifest(index, out_dir / "manifest.tsv")
    return load_manifest(out_dir / "manifest.tsv")
