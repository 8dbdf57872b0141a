"""Mirror geometry, ray tracing, channel synthesis, and CKM baselines."""

import math

import numpy as np
import pytest

from autocomm.configs import Box, ChannelSceneConfig, Track
from autocomm.geochannel import (
    CkmDataset,
    DegenerateGeometry,
    Facade,
    Path,
    build_ckm,
    classify_scatterers,
    enumerate_facades,
    fit_linear_gcp,
    geometry_predictor,
    grid_search_reflection_oracle,
    is_blocked,
    linear_gcp_predict,
    load_fixture_scene,
    mirror_reflection_point,
    nmse_db,
    nn_ckm_predict,
    reflection_residual,
    synthesize_channel,
    trace_paths,
)

WALL = Facade("wall", 0, "y", 0.0, (0.0, 1.0, 0.0), (0.0, 30.0), 20.0)
BS = (0.0, 8.0, 10.0)
USER = (30.0, 6.0, 1.5)


# ---------------------------------------------------------------------------
# Mirror reflection


def test_mirror_matches_hand_computed_image_point():
    # Image of the BS across y=0 is (0, -8, 10); the segment to the user
    # crosses the plane at t = 8/14, giving (120/7, 0, 36/7).
    q = mirror_reflection_point(BS, USER, WALL)
    assert q == pytest.approx([120.0 / 7.0, 0.0, 36.0 / 7.0])
    assert reflection_residual(BS, USER, q, WALL) < 1e-12


def test_residual_positive_off_the_specular_point():
    q = mirror_reflection_point(BS, USER, WALL)
    off = q + np.array([0.5, 0.0, 0.0])
    assert reflection_residual(BS, USER, off, WALL) > 1e-3


def test_mirror_none_when_endpoint_behind_plane():
    assert mirror_reflection_point(BS, (30.0, -6.0, 1.5), WALL) is None
    assert mirror_reflection_point((0.0, -8.0, 10.0), USER, WALL) is None


def test_mirror_degenerate_on_plane():
    with pytest.raises(DegenerateGeometry):
        mirror_reflection_point(BS, (30.0, 0.0, 1.5), WALL)


def test_mirror_none_outside_extent():
    short = Facade("s", 0, "y", 0.0, (0.0, 1.0, 0.0), (0.0, 10.0), 20.0)
    assert mirror_reflection_point(BS, USER, short) is None
    low = Facade("l", 0, "y", 0.0, (0.0, 1.0, 0.0), (0.0, 30.0), 4.0)
    assert mirror_reflection_point(BS, USER, low) is None


def test_grid_oracle_agrees_with_mirror():
    q = mirror_reflection_point(BS, USER, WALL)
    g = grid_search_reflection_oracle(BS, USER, WALL)
    assert np.linalg.norm(q - g) < 0.02
    short = Facade("s", 0, "y", 0.0, (0.0, 1.0, 0.0), (0.0, 10.0), 20.0)
    assert grid_search_reflection_oracle(BS, USER, short) is None


def test_enumerate_facades_fixed_order():
    cfg = ChannelSceneConfig(buildings=(Box((0.0, 20.0), (-11.0, -5.0), 15.0),))
    facades = enumerate_facades(cfg)
    assert [f.facade_id for f in facades] == \
        ["b0:xmin", "b0:xmax", "b0:ymin", "b0:ymax"]
    assert [f.normal for f in facades] == \
        [(-1.0, 0.0, 0.0), (1.0, 0.0, 0.0), (0.0, -1.0, 0.0), (0.0, 1.0, 0.0)]
    assert facades[3].urange == (0.0, 20.0) and facades[3].offset == -5.0


# ---------------------------------------------------------------------------
# Occlusion


BOX = Box((0.0, 20.0), (0.0, 6.0), 10.0)


def test_segment_through_box_is_blocked():
    assert is_blocked((-5.0, 3.0, 2.0), (25.0, 3.0, 2.0), [BOX])


def test_touching_a_face_does_not_block():
    assert not is_blocked((0.0, 3.0, 2.0), (-5.0, 3.0, 2.0), [BOX])
    assert not is_blocked((-5.0, 0.0, 2.0), (25.0, 0.0, 2.0), [BOX])


def test_passing_above_the_roof_is_clear():
    assert not is_blocked((-5.0, 3.0, 12.0), (25.0, 3.0, 12.0), [BOX])
    assert not is_blocked((-5.0, 3.0, 2.0), (25.0, 3.0, 2.0), [])


# ---------------------------------------------------------------------------
# Scene tracing


def test_scene1_paths_and_statuses():
    cfg = load_fixture_scene(1).channel
    slots = [p.slot for p in trace_paths(cfg, (5.0, -3.0, 1.5))]
    assert slots == ["los", "b0:ymax"]
    statuses = classify_scatterers(cfg, (5.0, -3.0, 1.5))
    assert statuses == {"b0:xmin": "behind_plane", "b0:xmax": "behind_plane",
                        "b0:ymin": "behind_plane", "b0:ymax": "active"}


def test_classify_covers_blocked_and_outside():
    cfg3 = load_fixture_scene(3).channel
    assert classify_scatterers(cfg3, (45.0, 3.0, 1.5))["b2:ymax"] == "blocked"
    cfg1 = load_fixture_scene(1).channel
    assert classify_scatterers(cfg1, (40.0, -3.0, 1.5))["b0:ymax"] == \
        "outside_extent"


def test_nlos_user_keeps_only_the_reflection():
    cfg = load_fixture_scene(3).channel
    assert [p.slot for p in trace_paths(cfg, (30.0, 3.0, 1.5))] == ["b2:ymax"]


def test_user_on_extended_facade_plane_does_not_crash():
    # x=20 is the extension of scene1's east wall; grazing incidence must be
    # skipped, not raised, by the tracer and the predictor.
    cfg = load_fixture_scene(1).channel
    user = (20.0, 1.0, 1.5)
    slots = [p.slot for p in trace_paths(cfg, user)]
    assert "b0:xmax" not in slots
    h = geometry_predictor(cfg, user)
    assert np.any(h)


def test_reflection_path_geometry_is_consistent():
    cfg = load_fixture_scene(1).channel
    refl = [p for p in trace_paths(cfg, (5.0, -3.0, 1.5))
            if p.kind == "reflection"][0]
    bs, q, user = (np.array(p) for p in refl.points)
    assert refl.length_m == pytest.approx(
        np.linalg.norm(q - bs) + np.linalg.norm(user - q))
    assert refl.delay_s == pytest.approx(refl.length_m / 299792458.0)
    assert q[1] == pytest.approx(-5.0)  # on the north face of the building


# ---------------------------------------------------------------------------
# Channel synthesis and NMSE


def test_single_path_steering_vector():
    cfg = ChannelSceneConfig(num_antennas=4)
    p = Path(kind="los", facade_id=None, length_m=10.0, delay_s=0.0,
             gain=0.5 + 0.25j, aod_rad=math.asin(0.3), aoa_rad=0.0,
             points=())
    h = synthesize_channel(cfg, [p])
    n = np.arange(4)
    expected = (0.5 + 0.25j) * np.exp(-1j * math.pi * n * 0.3)
    np.testing.assert_allclose(h, expected, rtol=1e-12)


def test_no_paths_gives_zero_channel():
    cfg = ChannelSceneConfig(num_antennas=8)
    assert not np.any(synthesize_channel(cfg, []))


def test_nmse_floor_and_edge_cases():
    h = np.array([1.0 + 1j, 2.0, 0.5j])
    assert nmse_db(h, h.copy()) == -150.0
    assert nmse_db(np.zeros(3), np.zeros(3)) == -150.0
    assert nmse_db(np.zeros(3), h) == math.inf
    assert nmse_db(h, np.zeros(3)) == pytest.approx(0.0)
    assert nmse_db(h, 2 * h) == pytest.approx(0.0)  # |h - 2h|^2 == |h|^2


# ---------------------------------------------------------------------------
# Geometry predictor stages


def test_predictor_default_reproduces_tracer():
    cfg = load_fixture_scene(2).channel
    for user in [(5.0, -3.0, 1.5), (16.0, 1.0, 1.5), (25.0, -1.0, 1.5)]:
        truth = synthesize_channel(cfg, trace_paths(cfg, user))
        assert nmse_db(truth, geometry_predictor(cfg, user)) == -150.0


def test_predictor_stage1_label_sensitivity():
    cfg = load_fixture_scene(1).channel
    user = (5.0, -3.0, 1.5)
    truth = synthesize_channel(cfg, trace_paths(cfg, user))
    wrong = geometry_predictor(cfg, user, stage1_labels=["los"])
    assert nmse_db(truth, wrong) > -150.0


def test_predictor_stage2_offset_sensitivity():
    cfg = load_fixture_scene(1).channel
    user = (5.0, -3.0, 1.5)
    truth = synthesize_channel(cfg, trace_paths(cfg, user))
    assert nmse_db(truth, geometry_predictor(cfg, user,
                                             stage2_offset=0.0)) == -150.0
    assert nmse_db(truth, geometry_predictor(cfg, user,
                                             stage2_offset=0.5)) > -60.0


# ---------------------------------------------------------------------------
# CKM baselines


def test_nn_ckm_exact_at_training_points():
    cfg = load_fixture_scene(1).channel
    positions = [(5.0, -3.0, 1.5), (12.0, -1.0, 1.5), (22.0, 3.0, 1.5)]
    ckm = build_ckm(cfg, positions)
    for i, p in enumerate(positions):
        np.testing.assert_array_equal(nn_ckm_predict(ckm, p),
                                      ckm.channels[i])


def test_nn_ckm_tie_goes_to_lower_index():
    cfg = load_fixture_scene(1).channel
    ckm = build_ckm(cfg, [(4.0, -3.0, 1.5), (6.0, -3.0, 1.5)])
    np.testing.assert_array_equal(nn_ckm_predict(ckm, (5.0, -3.0, 1.5)),
                                  ckm.channels[0])


def test_nn_ckm_empty_map_raises():
    empty = CkmDataset(positions=np.zeros((0, 3)),
                       channels=np.zeros((0, 4), dtype=complex), paths=())
    with pytest.raises(ValueError, match="empty channel map"):
        nn_ckm_predict(empty, (0.0, 0.0, 1.5))


def test_linear_gcp_recovers_constant_map():
    cfg = load_fixture_scene(1).channel
    pos = (5.0, -3.0, 1.5)
    ckm = build_ckm(cfg, [pos, pos, pos])
    model = fit_linear_gcp(cfg, ckm)
    truth = ckm.channels[0]
    assert nmse_db(truth, linear_gcp_predict(model, pos)) < -100.0


def test_linear_gcp_sparse_slot_never_invents_a_path():
    cfg = ChannelSceneConfig(num_antennas=4)
    los = Path(kind="los", facade_id=None, length_m=10.0, delay_s=0.0,
               gain=0.1 + 0.0j, aod_rad=0.2, aoa_rad=0.0, points=())
    refl = Path(kind="reflection", facade_id="b0:ymax", length_m=15.0,
                delay_s=0.0, gain=0.05j, aod_rad=-0.1, aoa_rad=0.0,
                points=())
    ckm = CkmDataset(
        positions=np.array([[0.0, 0.0, 1.5], [1.0, 0.0, 1.5],
                            [2.0, 0.0, 1.5], [3.0, 0.0, 1.5]]),
        channels=np.zeros((4, 4), dtype=complex),
        paths=({"los": los}, {"los": los}, {"los": los},
               {"los": los, "b0:ymax": refl}))
    model = fit_linear_gcp(cfg, ckm)
    assert not np.any(model.weights["b0:ymax"])  # under 3 samples: zeroed


def test_nn_beats_linear_on_blockage_rich_lane():
    cfg = load_fixture_scene(3).channel
    train = [(x, -3.0, 1.5) for x in np.arange(0.0, 30.01, 0.5)]
    ckm = build_ckm(cfg, train)
    model = fit_linear_gcp(cfg, ckm)
    nn_vals, lin_vals = [], []
    for x in np.arange(5.0, 25.01, 2.0):
        q = (x + 0.3, -3.0, 1.5)
        truth = synthesize_channel(cfg, trace_paths(cfg, q))
        if not np.any(truth):
            continue
        nn_vals.append(nmse_db(truth, nn_ckm_predict(ckm, q)))
        lin_vals.append(nmse_db(truth, linear_gcp_predict(model, q)))
    assert nn_vals
    assert np.mean(nn_vals) <= np.mean(lin_vals)


# ---------------------------------------------------------------------------
# Fixtures


def test_fixture_scenes_scale_in_clutter():
    counts = [len(load_fixture_scene(i).channel.buildings)
              for i in (1, 2, 3, 4)]
    assert counts == [1, 2, 3, 4]
    for i in (1, 2, 3, 4):
        scenario = load_fixture_scene(i)
        assert scenario.track is Track.CHANNEL
        assert scenario.channel is not None


@pytest.mark.parametrize("bad", [0, 5, -1])
def test_fixture_scene_index_out_of_range(bad):
    with pytest.raises(ValueError):
        load_fixture_scene(bad)
