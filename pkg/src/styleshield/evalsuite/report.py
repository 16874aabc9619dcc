"""Evaluation reports pairing an unprotected arm with a protected arm."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import DimensionMismatchError, ProviderUnavailableError
from .metrics import artfid, csd_cosine, lpips, psnr, ssim

TRANSFORM_TAGS = ("none", "jpeg75", "blur3")

# Column order mirrors the reference result table.
METRIC_FIELDS = ("psnr_db", "ssim", "lpips", "artfid", "csd_cos",
                 "runtime_s_per_img")


@dataclass
class EvalReport:
    """One arm's scores; every metric is either a finite value or an
    entry in `omitted` explaining why it is absent."""

    arm: str
    transform_tag: str = "none"
    psnr_db: float | None = None
    ssim: float | None = None
    lpips: float | None = None
    artfid: float | None = None
    csd_cos: float | None = None
    runtime_s_per_img: float | None = None
    omitted: dict = field(default_factory=dict)
    attacker: dict = field(default_factory=dict)
    provider_id: str | None = None
    notes: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.transform_tag not in TRANSFORM_TAGS:
            raise ValueError(
                f"transform_tag must be one of {TRANSFORM_TAGS}, "
                f"got {self.transform_tag!r}"
            )
        for name in METRIC_FIELDS:
            value = getattr(self, name)
            if value is not None and not math.isfinite(float(value)):
                raise ValueError(f"metric {name} is not finite: {value!r}")
            if value is None and name not in self.omitted:
                raise ValueError(
                    f"metric {name} is absent without a reason in `omitted`"
                )
            if value is not None and name in self.omitted:
                raise ValueError(
                    f"metric {name} is both populated and marked omitted"
                )

    def to_dict(self) -> dict:
        out = {"arm": self.arm, "transform_tag": self.transform_tag}
        for name in METRIC_FIELDS:
            value = getattr(self, name)
            out[name] = None if value is None else float(value)
        out["omitted"] = dict(sorted(self.omitted.items()))
        out["attacker"] = self.attacker
        out["provider_id"] = self.provider_id
        out["notes"] = dict(sorted(self.notes.items()))
        return out


def _invisibility(reference: list, candidate: list, provider):
    pairs = list(zip(reference, candidate))
    scores = {
        "psnr_db": float(np.mean([psnr(a, b) for a, b in pairs])),
        "ssim": float(np.mean([ssim(a, b) for a, b in pairs])),
    }
    omitted = {}
    try:
        scores["lpips"] = float(np.mean([lpips(a, b, provider) for a, b in pairs]))
    except ProviderUnavailableError as exc:
        scores["lpips"] = None
        omitted["lpips"] = str(exc)
    return scores, omitted


def _protection(generated: list, originals: list, provider):
    scores, omitted = {}, {}
    try:
        scores["artfid"] = artfid(generated, originals, provider)
    except ProviderUnavailableError as exc:
        scores["artfid"] = None
        omitted["artfid"] = str(exc)
    try:
        scores["csd_cos"] = csd_cosine(generated, originals, provider)
    except ProviderUnavailableError as exc:
        scores["csd_cos"] = None
        omitted["csd_cos"] = str(exc)
    return scores, omitted


def evaluate_run(clean: list, protected: list, generated_from_clean: list,
                 generated_from_protected: list, originals: list, provider,
                 transform: str = "none", runtime_s_per_img: float | None = None,
                 attacker: dict | None = None):
    """Score both arms of one experiment; returns (clean, protected) reports.

    Invisibility compares each arm's training images against the clean
    originals (the clean arm therefore scores the identical-pair row);
    protection compares each arm's attacker generations against the
    originals. `transform` only tags the reports: applying it to the
    protected set before the attacker runs is the caller's job, because
    it changes what the attacker trains on, not how scoring works.
    """
    if len(clean) != len(protected):
        raise DimensionMismatchError(
            f"clean and protected sets are misaligned: "
            f"{len(clean)} vs {len(protected)}"
        )
    if not clean:
        raise ValueError("evaluate_run needs at least one training image")
    if not generated_from_clean or not generated_from_protected:
        raise ValueError("evaluate_run needs generated images for both arms")
    attacker = attacker or {}
    provider_id = getattr(provider, "provider_id", None)
    notes = {
        "csd_estimator": "mean over all generated-original pairs",
        "artfid_pairing": "generated[i] pairs with originals[i mod n]",
    }
    runtime_omission = {}
    if runtime_s_per_img is None:
        runtime_omission["runtime_s_per_img"] = (
            "not measured in this call; wall-clock timings are reported "
            "separately from deterministic artifacts"
        )

    reports = []
    for arm, candidate, generated in (
        ("clean", clean, generated_from_clean),
        ("protected", protected, generated_from_protected),
    ):
        inv, inv_omit = _invisibility(clean, candidate, provider)
        prot, prot_omit = _protection(generated, originals, provider)
        reports.append(EvalReport(
            arm=arm,
            transform_tag=transform,
            psnr_db=inv["psnr_db"],
            ssim=inv["ssim"],
            lpips=inv["lpips"],
            artfid=prot["artfid"],
            csd_cos=prot["csd_cos"],
            runtime_s_per_img=runtime_s_per_img,
            omitted={**inv_omit, **prot_omit, **runtime_omission},
            attacker=dict(attacker),
            provider_id=provider_id,
            notes=notes,
        ))
    return reports[0], reports[1]
