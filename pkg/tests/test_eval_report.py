"""Tests for the per-arm evaluation report assembly."""

from __future__ import annotations

import numpy as np
import pytest

from styleshield.errors import DimensionMismatchError
from styleshield.evalsuite.providers import MetricProvider
from styleshield.evalsuite.report import EvalReport, evaluate_run
from styleshield.images import ImageTensor


def _images(rng, n: int = 3) -> list:
    return [ImageTensor(rng.uniform(size=(64, 64, 3)), provenance="clean")
            for _ in range(n)]


def test_eval_report_requires_reason_for_missing_metric():
    with pytest.raises(ValueError):
        EvalReport(arm="clean", psnr_db=None, ssim=1.0, lpips=0.0,
                   artfid=1.0, csd_cos=1.0, runtime_s_per_img=0.1)
    EvalReport(arm="clean", psnr_db=None, ssim=1.0, lpips=0.0,
               artfid=1.0, csd_cos=1.0, runtime_s_per_img=0.1,
               omitted={"psnr_db": "left out on purpose"})


def test_eval_report_rejects_contradictory_omission():
    with pytest.raises(ValueError):
        EvalReport(arm="clean", psnr_db=10.0, ssim=1.0, lpips=0.0,
                   artfid=1.0, csd_cos=1.0, runtime_s_per_img=0.1,
                   omitted={"psnr_db": "but it is present"})


def test_eval_report_rejects_non_finite_and_bad_tags():
    with pytest.raises(ValueError):
        EvalReport(arm="clean", transform_tag="sepia", psnr_db=1.0, ssim=1.0,
                   lpips=0.0, artfid=1.0, csd_cos=1.0, runtime_s_per_img=0.1)
    with pytest.raises(ValueError):
        EvalReport(arm="clean", psnr_db=float("inf"), ssim=1.0, lpips=0.0,
                   artfid=1.0, csd_cos=1.0, runtime_s_per_img=0.1)


def test_evaluate_run_clean_row_is_identical_pair(provider, rng):
    clean = _images(rng)
    protected = [ImageTensor(np.clip(img.data + 0.02, 0, 1),
                             provenance="protected") for img in clean]
    gen = _images(rng)
    clean_report, protected_report = evaluate_run(
        clean, protected, gen, gen, clean, provider)
    assert clean_report.psnr_db == 100.0
    assert clean_report.ssim == pytest.approx(1.0, abs=1e-12)
    assert clean_report.lpips == 0.0
    assert protected_report.psnr_db < 100.0
    assert protected_report.arm == "protected"
    assert clean_report.provider_id == provider.provider_id


def test_evaluate_run_runtime_is_omitted_with_reason(provider, rng):
    clean = _images(rng)
    a, b = evaluate_run(clean, clean, clean, clean, clean, provider)
    for report in (a, b):
        assert report.runtime_s_per_img is None
        assert "runtime_s_per_img" in report.omitted
    c, d = evaluate_run(clean, clean, clean, clean, clean, provider,
                        runtime_s_per_img=1.25)
    assert c.runtime_s_per_img == 1.25
    assert "runtime_s_per_img" not in d.omitted


def test_evaluate_run_records_attacker_and_transform(provider, rng):
    clean = _images(rng)
    attacker = {"finetune_steps": 200, "learning_rate": 1e-3}
    a, b = evaluate_run(clean, clean, clean, clean, clean, provider,
                        transform="jpeg75", attacker=attacker)
    assert a.transform_tag == "jpeg75" and b.transform_tag == "jpeg75"
    assert b.attacker == attacker
    assert b.attacker is not attacker  # defensive copy


def test_evaluate_run_provider_outage_omits_not_zero_fills(rng):
    clean = _images(rng)
    broken = MetricProvider(provider_id="broken", lpips_fn=None,
                            style_embed_fn=None, inception_embed_fn=None,
                            details={})
    a, _ = evaluate_run(clean, clean, clean, clean, clean, broken)
    assert a.lpips is None and "lpips" in a.omitted
    assert a.artfid is None and "artfid" in a.omitted
    assert a.csd_cos is None and "csd_cos" in a.omitted
    assert a.psnr_db == 100.0  # provider-free metrics still present


def test_evaluate_run_validates_inputs(provider, rng):
    clean = _images(rng)
    with pytest.raises(DimensionMismatchError):
        evaluate_run(clean, clean[:2], clean, clean, clean, provider)
    with pytest.raises(ValueError):
        evaluate_run([], [], clean, clean, clean, provider)
    with pytest.raises(ValueError):
        evaluate_run(clean, clean, [], clean, clean, provider)


def test_eval_report_to_dict_is_json_ready(provider, rng):
    clean = _images(rng)
    a, _ = evaluate_run(clean, clean, clean, clean, clean, provider)
    payload = a.to_dict()
    assert payload["arm"] == "clean"
    assert set(payload) == {
        "arm", "transform_tag", "psnr_db", "ssim", "lpips", "artfid",
        "csd_cos", "runtime_s_per_img", "omitted", "attacker",
        "provider_id", "notes"}
    assert isinstance(payload["psnr_db"], float)
