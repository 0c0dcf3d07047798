"""Shared fixtures: the expensive synthetic-scene products are built once."""

import numpy as np
import pytest

from videostereo import completion, cost_volume, features, refinement, synthetic


@pytest.fixture(scope="session")
def standard_sequence():
    """Eight-frame textured three-plane scene with the fixed default seed."""
    spec = synthetic.standard_scene(num_frames=8, seed=0)
    return spec, synthetic.generate_scene(spec)


@pytest.fixture(scope="session")
def frame0_chain(standard_sequence):
    """Single-frame matching chain on frame 0 with default settings."""
    spec, frames = standard_sequence
    frame = frames[0]
    fl = features.extract_features(frame.left, kind="zncc_patch", radius=4)
    fr = features.extract_features(frame.right, kind="zncc_patch", radius=4)
    volume = cost_volume.build_cost_volume(fl, fr, spec.num_hypotheses)
    semi = cost_volume.wta_semidense(volume, threshold=0.3)
    comp = completion.complete(semi, context=fl)
    disp, hidden, trace = refinement.iterate(
        comp.dense, comp.state, volume, fl, refinement.RefinementConfig())
    return {"spec": spec, "frame": frame, "features": fl, "volume": volume,
            "semi": semi, "completion": comp, "disparity": disp,
            "hidden": hidden, "trace": trace}
