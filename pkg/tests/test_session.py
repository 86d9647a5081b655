import json
import math

import numpy as np
import pytest

from harnesslab.errors import (
    DataError,
    NotSyncedError,
    RecordingError,
    ValidationError,
)
from harnesslab.geometry import UNAVAILABLE_POSE, default_calibration
from harnesslab.ingest import (
    KEYPOINT_NAMES,
    ForceSample,
    Keypoint,
    KeypointFrame,
    read_force_file,
    serialize_force_record,
)
from harnesslab.projection import ViewConfig, ground_to_ray, ray_to_persp_pixel
from harnesslab.session import (
    FusedSample,
    FusionCore,
    SessionRecord,
    SessionRecorder,
    StopFlagTracker,
    TapFlagTracker,
    fuse_session,
    fused_to_wire,
    load_session,
    pace,
    require_mapping,
    save_session,
)
from harnesslab.synth import SynthSpec, generate
from harnesslab.timesync import TimeMapping

VIEW = ViewConfig.from_degrees(0.0, -45.0, 110.0)
CAL = default_calibration(camera_height_m=1.5)


def force_at(t, fz=0.0, fx=0.0, overload=False):
    return ForceSample(t=t, f=(fx, 0.0, fz), m=(0.0, 0.0, 0.0),
                       overload=overload)


def dog_frame(t_cam, yaw):
    """Keypoint frame for a dog at the given body yaw, handle straight."""
    tail = (0.0, 1.1)
    pts = {
        "head": (tail[0] + 0.9 * math.sin(yaw), tail[1] + 0.9 * math.cos(yaw)),
        "tail": tail,
        "left_leg": (tail[0] - 0.12 * math.cos(yaw),
                     tail[1] + 0.12 * math.sin(yaw)),
        "right_leg": (tail[0] + 0.12 * math.cos(yaw),
                      tail[1] - 0.12 * math.sin(yaw)),
        "handle": (0.18, 1.17),
        "grip": (0.18, 0.75),
    }
    kp = {}
    for name in KEYPOINT_NAMES:
        uv = ray_to_persp_pixel(ground_to_ray(*pts[name], 1.5), VIEW)
        kp[name] = Keypoint(uv[0], uv[1], 0.9)
    return KeypointFrame(t=t_cam, view=VIEW, kp=kp)


class TestFusedWire:
    def test_canonical_fields(self):
        frame = dog_frame(0.0, math.radians(15))
        core = FusionCore(TimeMapping(0.0), CAL)
        core.push_frame(frame)
        fused = core.push_force(force_at(0.05, fz=12.0))
        msg = json.loads(fused_to_wire(fused))
        assert msg["type"] == "fused"
        assert msg["t"] == 0.05
        assert msg["axial_n"] == 12.0
        assert msg["quality"] == "full"
        assert msg["rel_angle_deg"] == pytest.approx(15.0, abs=1e-6)
        assert msg["force_n"] == [0.0, 0.0, 12.0]
        assert msg["flags"] == []
        # fixed key order makes equal samples byte-equal
        assert fused_to_wire(fused) == fused_to_wire(fused)
        assert fused_to_wire(fused).startswith('{"type":"fused","t":')

    def test_null_angle_when_unavailable(self):
        core = FusionCore(TimeMapping(0.0), CAL)
        fused = core.push_force(force_at(0.0, fz=5.0))
        msg = json.loads(fused_to_wire(fused))
        assert msg["rel_angle_deg"] is None
        assert msg["quality"] == "unavailable"
        assert msg["flags"] == ["stale"]


class TestFlagTrackers:
    def test_stop_hysteresis_sequence(self):
        tracker = StopFlagTracker()
        values = [0.0, 31.0, 28.0, 26.0, 24.0, 31.0, 10.0]
        want = [False, True, True, True, False, True, False]
        assert [tracker.update(v) for v in values] == want

    def test_tap_is_lateral_only(self):
        tracker = TapFlagTracker()
        assert tracker.update(force_at(0.0, fx=6.0))
        assert not tracker.update(force_at(0.0, fz=40.0))
        assert not tracker.update(force_at(0.0, fx=4.9))


class TestFusion:
    def test_pose_attach_rule(self):
        """Each fused sample carries the latest frame at or before it,
        within the staleness budget; checked against an index oracle."""
        mapping = TimeMapping(0.5)
        yaws = [math.radians(5 * j) for j in range(6)]
        frames = [dog_frame(0.4 * j, yaws[j]) for j in range(6)]  # 0.4 s apart
        force = [force_at(round(0.05 * i, 2), fz=10.0) for i in range(70)]
        out = list(fuse_session(force, frames, mapping, CAL))
        assert len(out) == len(force)
        ts = [1.0 * (0.4 * j) + 0.5 for j in range(6)]  # mapping's own floats
        for sample in out:
            later = [j for j in range(6) if ts[j] <= sample.t]
            if later and sample.t - ts[later[-1]] <= 0.25:
                want = yaws[later[-1]]
                assert sample.pose.dog_yaw_rad == pytest.approx(want, abs=1e-9)
                assert "stale" not in sample.flags
            else:
                assert sample.pose.quality == "unavailable"
                assert "stale" in sample.flags

    def test_frame_on_sample_tie_applies_first(self):
        mapping = TimeMapping(0.5)
        frame = dog_frame(1.0, math.radians(10))  # maps to exactly 1.5
        out = list(fuse_session([force_at(1.5, fz=1.0)], [frame], mapping, CAL))
        assert out[0].pose.dog_yaw_rad == pytest.approx(math.radians(10),
                                                        abs=1e-9)

    def test_keypoint_gap_goes_stale_then_recovers(self):
        frames = [dog_frame(0.0, 0.0), dog_frame(2.0, 0.0)]
        force = [force_at(round(0.1 * i, 1), fz=5.0) for i in range(25)]
        out = list(fuse_session(force, frames, TimeMapping(0.0), CAL))
        stale = ["stale" in s.flags for s in out]
        assert not stale[0] and not stale[2]
        assert stale[10]  # 1.0 s: 0.75 s past the budget
        assert not stale[21]  # fresh again after the second frame

    def test_stop_and_tap_flags_in_stream(self):
        t = np.round(np.arange(0.0, 8.0, 0.01), 2)
        axial = np.zeros_like(t)
        axial[(t >= 2.0) & (t < 2.5)] = 35.0
        lateral = np.zeros_like(t)
        lateral[(t >= 5.0) & (t < 5.05)] = 18.0
        force = [force_at(float(ti), fz=float(a), fx=float(x))
                 for ti, a, x in zip(t, axial, lateral)]
        out = list(fuse_session(force, [], TimeMapping(0.0), CAL))
        by_t = {s.t: s for s in out}
        assert "stop" in by_t[2.25].flags
        assert "stop" not in by_t[1.0].flags
        assert "stop" not in by_t[3.0].flags
        assert "tap" in by_t[5.02].flags
        assert "tap" not in by_t[6.0].flags

    def test_overload_flag_passes_through(self):
        out = list(fuse_session([force_at(0.0, fz=10.0, overload=True)], [],
                                TimeMapping(0.0), CAL))
        assert "overload" in out[0].flags

    def test_out_of_order_rejected(self):
        core = FusionCore(TimeMapping(0.0), CAL)
        core.push_force(force_at(1.0))
        with pytest.raises(DataError):
            core.push_force(force_at(0.5))
        core2 = FusionCore(TimeMapping(0.0), CAL)
        core2.push_frame(dog_frame(1.0, 0.0))
        with pytest.raises(DataError):
            core2.push_frame(dog_frame(0.5, 0.0))

    def test_batch_rerun_is_byte_identical(self):
        mapping = TimeMapping(0.25)
        frames = [dog_frame(0.1 * j, math.radians(j)) for j in range(20)]
        force = [force_at(round(0.02 * i, 2), fz=float(i % 7))
                 for i in range(150)]
        a = [fused_to_wire(s) for s in fuse_session(force, frames, mapping, CAL)]
        b = [fused_to_wire(s) for s in fuse_session(force, frames, mapping, CAL)]
        assert a == b

    def test_live_feed_order_matches_batch(self):
        """Driving FusionCore sample-by-sample the way the live path does
        produces the same bytes as the batch merge."""
        mapping = TimeMapping(0.3)
        frames = [dog_frame(0.25 * j, math.radians(3 * j)) for j in range(10)]
        force = [force_at(round(0.03 * i, 2), fz=float(i % 5))
                 for i in range(100)]
        batch = [fused_to_wire(s)
                 for s in fuse_session(force, frames, mapping, CAL)]
        core = FusionCore(mapping, CAL)
        live = []
        fi = iter(frames)
        pending = next(fi, None)
        for sample in force:
            while pending is not None \
                    and core.frame_sensor_time(pending) <= sample.t:
                core.push_frame(pending)
                pending = next(fi, None)
            live.append(fused_to_wire(core.push_force(sample)))
        assert live == batch


class TestPace:
    def test_sleep_budget(self):
        naps = []
        samples = [FusedSample(t=0.1 * i, force_n=(0, 0, 0),
                               torque_nm=(0, 0, 0), axial_n=0.0,
                               pose=UNAVAILABLE_POSE, flags=("stale",))
                   for i in range(101)]
        out = list(pace(samples, speed=1.0, sleep=naps.append))
        assert len(out) == 101
        assert sum(naps) == pytest.approx(10.0, abs=0.01)
        naps.clear()
        list(pace(samples, speed=4.0, sleep=naps.append))
        assert sum(naps) == pytest.approx(2.5, abs=0.01)
        naps.clear()
        list(pace(samples, speed=0.0, sleep=naps.append))
        assert naps == []

    def test_negative_speed_rejected(self):
        with pytest.raises(ValidationError):
            list(pace([], speed=-1.0))


class TestSessionManifest:
    def test_load_synth_session(self, tmp_path):
        generate(SynthSpec(duration_s=6.0), tmp_path)
        record = load_session(tmp_path)
        assert record.id == "synth-0"
        assert record.mapping is None
        with pytest.raises(NotSyncedError):
            require_mapping(record)

    def test_mapping_round_trip(self, tmp_path):
        generate(SynthSpec(duration_s=6.0), tmp_path)
        record = load_session(tmp_path)
        updated = SessionRecord.from_wire(record.to_wire())
        assert updated == record
        from dataclasses import replace
        save_session(replace(record, mapping=TimeMapping(0.5)), tmp_path)
        again = load_session(tmp_path)
        assert require_mapping(again).offset_s == 0.5

    def test_missing_files_rejected(self, tmp_path):
        generate(SynthSpec(duration_s=6.0), tmp_path)
        (tmp_path / "force.jsonl").unlink()
        with pytest.raises(DataError):
            load_session(tmp_path)

    def test_missing_manifest_rejected(self, tmp_path):
        with pytest.raises(DataError):
            load_session(tmp_path)


class TestSessionRecorder:
    def test_verbatim_round_trip(self, tmp_path):
        rec = SessionRecorder(tmp_path, "rec-1")
        lines = [serialize_force_record(force_at(0.01 * i, fz=float(i)))
                 for i in range(50)]
        for i, line in enumerate(lines):
            rec.write_force_raw(line.encode(), t=0.01 * i)
        mid = load_session(tmp_path)
        assert mid.partial  # until closed, the manifest says so
        rec.close()
        final = load_session(tmp_path)
        assert not final.partial
        assert (tmp_path / "force.jsonl").read_text().splitlines() == lines
        assert len(read_force_file(tmp_path / "force.jsonl")) == 50
        assert rec.force_stats.samples_seen == 50
        assert rec.force_stats.samples_dropped == 0

    def test_interrupted_recording_is_replayable_prefix(self, tmp_path):
        rec = SessionRecorder(tmp_path, "rec-2")
        for i in range(10):
            rec.write_force_raw(
                serialize_force_record(force_at(0.01 * i)).encode(), t=0.01 * i)
        rec._force_fh.flush()
        # no close(): manifest still marks the session partial
        record = load_session(tmp_path)
        assert record.partial
        assert len(read_force_file(tmp_path / "force.jsonl")) == 10

    def test_desk_scale_load(self, tmp_path):
        rec = SessionRecorder(tmp_path, "rec-3")
        n = 10_000  # ten seconds of a 1 kHz force stream
        for i in range(n):
            rec.write_force_raw(
                serialize_force_record(force_at(0.001 * i, fz=1.0)).encode(),
                t=0.001 * i)
        rec.close()
        assert rec.force_stats.samples_seen == n
        assert rec.force_stats.samples_dropped == 0
        assert rec.force_stats.rate_hz == pytest.approx(1000.0, rel=0.01)
        assert len(read_force_file(tmp_path / "force.jsonl")) == n

    def test_write_after_close_rejected(self, tmp_path):
        rec = SessionRecorder(tmp_path, "rec-4")
        rec.close()
        with pytest.raises(RecordingError):
            rec.write_force_raw(b"{}")
