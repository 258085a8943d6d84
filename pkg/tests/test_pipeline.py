import json

import pytest

from salinst.crf import CrfParams
from salinst.metrics import ap_r
from salinst.pipeline import PipelineConfig, run_pipeline
from salinst.spectral import InstanceCountError
from salinst.synth import synth_fixture


def test_config_defaults_match_stock_parameters():
    config = PipelineConfig()
    assert config.n_superpixels == 250
    assert config.compactness == 10.0
    assert config.lam == 3.0
    assert config.sigma2 == 10.0
    assert config.saliency_threshold == 0.5
    assert (config.crf.w1, config.crf.w2) == (30.0, 30.0)
    assert (config.crf.theta_alpha, config.crf.theta_beta, config.crf.theta_gamma) == (61.0, 13.0, 1.0)
    assert config.crf.iters == 10


def test_config_from_dict_and_override():
    raw = {"n_superpixels": 100, "crf": {"iters": 3}}
    config = PipelineConfig.from_dict(raw)
    assert config.n_superpixels == 100
    assert config.crf.iters == 3
    assert raw == {"n_superpixels": 100, "crf": {"iters": 3}}  # input left intact
    bumped = config.override(n_superpixels=80, iters=5)
    assert bumped.n_superpixels == 80
    assert bumped.crf.iters == 5
    assert config.crf.iters == 3  # original untouched


def test_config_rejects_unknown_keys(tmp_path):
    with pytest.raises(ValueError):
        PipelineConfig.from_dict({"bogus": 1})
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"crf": {"nope": 2}}))
    with pytest.raises(ValueError):
        PipelineConfig.from_json_file(str(path))


def test_pipeline_recovers_fixture():
    fix = synth_fixture(2, 64, 64, seed=14)
    result = run_pipeline(fix.image, fix.saliency, fix.features, fix.k)
    assert ap_r([result.segmentation], [fix.gt_labels], 0.5) == 1.0
    assert set(result.timings) >= {"mask_lab", "slic", "features", "cluster"}


def test_pipeline_resizes_feature_map():
    fix = synth_fixture(2, 64, 64, seed=14)
    small = fix.features[::2, ::2]
    result = run_pipeline(fix.image, fix.saliency, small, fix.k)
    assert ap_r([result.segmentation], [fix.gt_labels], 0.5) == 1.0


def test_pipeline_crf_refinement_path():
    fix = synth_fixture(2, 64, 64, seed=14)
    config = PipelineConfig(crf=CrfParams(iters=2), crf_grid_limit=64)
    result = run_pipeline(fix.image, fix.saliency, fix.features, fix.k, config, refine_crf=True)
    assert "crf" in result.timings
    assert result.saliency.shape == (64, 64)
    # oracle saliency is crisp, refinement keeps the instances recoverable
    assert ap_r([result.segmentation], [fix.gt_labels], 0.5) == 1.0


def test_pipeline_k_override_wins():
    fix = synth_fixture(3, 64, 64, seed=5)
    config = PipelineConfig(k_override=1)
    result = run_pipeline(fix.image, fix.saliency, fix.features, 3, config)
    assert result.segmentation.labels.max() == 1


def test_pipeline_infeasible_k_raises():
    fix = synth_fixture(1, 64, 64, seed=1)
    with pytest.raises(InstanceCountError):
        run_pipeline(fix.image, fix.saliency, fix.features, 500)


def test_pipeline_shape_validation():
    fix = synth_fixture(1, 64, 64, seed=1)
    with pytest.raises(ValueError):
        run_pipeline(fix.image, fix.saliency[:32], fix.features, 1)
    with pytest.raises(ValueError):
        run_pipeline(fix.image[:, :, :2], fix.saliency, fix.features, 1)
