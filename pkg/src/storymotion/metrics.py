"""Quantitative evaluation: position-error metrics, foot skating, Fréchet
distance over toy extractor features, retrieval scores, jerk-based
smoothness, and the Average/Cross conditioning protocols.

Absolute scores come from a small synthetic-data action classifier and are
not comparable to any externally published benchmark; reports carry an
"extractor: toy" tag.
"""

from __future__ import annotations

import hashlib
import itertools
import json
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import torch
import torch.nn as nn

from .motion import ContractViolation, MotionClip, project, recover_joint_positions, to_root_relative
from .skeleton import FOOT_JOINTS, default_skeleton
from .synthdata import VOCABULARY, extract_conditions, load_entry

CONTACT_HEIGHT = 0.05
SKATE_THRESHOLD = 0.0025  # meters per frame at 20 fps


def _positions(x) -> np.ndarray:
    if isinstance(x, MotionClip):
        return np.asarray(recover_joint_positions(x))
    x = np.asarray(x)
    if x.ndim == 2 and x.shape[1] != 3:
        return np.asarray(recover_joint_positions(x))
    return x


def mpjpe(gen, gt, k_mask, dims: str = "3D", camera=None) -> float:
    """Mean per-joint position error at the masked frames, root-relative
    (non-root joints; the root is identically zero after centering).
    dims="2D" compares projections under `camera`."""
    p_gen = _positions(gen)
    p_gt = _positions(gt)
    if dims == "2D":
        if camera is None:
            raise ContractViolation("2D error needs a camera")
        p_gen, p_gt = project(p_gen, camera), project(p_gt, camera)
    rel_gen = np.asarray(to_root_relative(p_gen))[:, 1:]
    rel_gt = np.asarray(to_root_relative(p_gt))[:, 1:]
    frames = np.flatnonzero(np.asarray(k_mask) > 0)
    if frames.size == 0:
        raise ContractViolation("mpjpe needs at least one masked frame")
    dist = np.linalg.norm(rel_gen[frames] - rel_gt[frames], axis=-1)
    return float(dist.mean())


def avg_traj_err(gen, bundle) -> float:
    """Mean distance between generated end-effector positions and the
    bundle's trajectory targets over masked cells (2D under the bundle's
    camera)."""
    pos = _positions(gen)
    if bundle.dims == "2D":
        pos = np.asarray(project(pos, bundle.camera))
    mask = bundle.trajectory_mask > 0
    if not mask.any():
        raise ContractViolation("avg_traj_err needs a nonempty trajectory mask")
    dist = np.linalg.norm(pos - bundle.trajectory, axis=-1)
    return float(dist[mask].mean())


def foot_skating_ratio(clip, threshold: float = SKATE_THRESHOLD,
                       contact_height: float = CONTACT_HEIGHT) -> float:
    """Fraction of ground-contact foot frames whose horizontal displacement
    exceeds the per-frame threshold (scaled by fps/20)."""
    fps = clip.fps if isinstance(clip, MotionClip) else 20.0
    pos = _positions(clip)
    feet = pos[:, list(FOOT_JOINTS)]          # (N, 4, 3)
    contact = feet[:-1, :, 1] < contact_height
    disp = np.linalg.norm(feet[1:, :, [0, 2]] - feet[:-1, :, [0, 2]], axis=-1)
    n_contact = contact.sum()
    if n_contact == 0:
        return 0.0
    sliding = (disp > threshold * (fps / 20.0)) & contact
    return float(sliding.sum() / n_contact)


def fid(gen_feats: np.ndarray, ref_feats: np.ndarray) -> float:
    """Fréchet distance between Gaussians fitted to the two feature sets."""
    gen_feats = np.atleast_2d(np.asarray(gen_feats, dtype=np.float64))
    ref_feats = np.atleast_2d(np.asarray(ref_feats, dtype=np.float64))
    if gen_feats.shape[0] < 2 or ref_feats.shape[0] < 2:
        raise ContractViolation("fid needs at least 2 samples per set")
    mu1, mu2 = gen_feats.mean(0), ref_feats.mean(0)
    c1 = np.cov(gen_feats, rowvar=False).reshape(mu1.size, mu1.size)
    c2 = np.cov(ref_feats, rowvar=False).reshape(mu2.size, mu2.size)
    covmean = scipy.linalg.sqrtm(c1 @ c2)
    if np.iscomplexobj(covmean):
        covmean = covmean.real
    return float(((mu1 - mu2) ** 2).sum() + np.trace(c1 + c2 - 2.0 * covmean))


# ---------------------------------------------------------------------------
# toy extractor: an action classifier whose penultimate layer is the motion
# feature space and whose class weight rows act as action-side embeddings
# ---------------------------------------------------------------------------

class MotionExtractor(nn.Module):
    def __init__(self, feat_dim: int = 263, hidden: int = 64, n_actions: int = len(VOCABULARY)):
        super().__init__()
        self.words = tuple(VOCABULARY)
        self.net = nn.Sequential(
            nn.Linear(2 * feat_dim, hidden), nn.ReLU(), nn.Linear(hidden, hidden)
        )
        self.head = nn.Linear(hidden, n_actions)

    def pool(self, feats: torch.Tensor) -> torch.Tensor:
        return torch.cat([feats.mean(dim=1), feats.std(dim=1)], dim=-1)

    def features(self, feats: torch.Tensor) -> torch.Tensor:
        return self.net(self.pool(feats))

    def action_embedding(self, word: str) -> torch.Tensor:
        return self.head.weight[self.words.index(word)]

    def forward(self, feats: torch.Tensor) -> torch.Tensor:
        return self.head(self.features(feats))


def train_extractor(feats: torch.Tensor, labels, steps: int = 400,
                    lr: float = 1e-3, seed: int = 0) -> MotionExtractor:
    """Fit the toy classifier on (M, N, 263) clips with action-word labels."""
    torch.manual_seed(seed)
    model = MotionExtractor(feat_dim=feats.shape[-1])
    y = torch.as_tensor([model.words.index(w) for w in labels])
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    for _ in range(steps):
        loss = nn.functional.cross_entropy(model(feats), y)
        opt.zero_grad()
        loss.backward()
        opt.step()
    model.eval()
    return model


def extract_features(extractor: MotionExtractor, clips) -> np.ndarray:
    feats = torch.stack([torch.as_tensor(c.features if isinstance(c, MotionClip) else c) for c in clips])
    with torch.no_grad():
        return extractor.features(feats).numpy()


def r_precision(clips, labels, extractor: MotionExtractor, batch: int = 8,
                top_k: int = 1, seed: int = 0) -> float:
    """Top-k motion-to-action retrieval accuracy over shuffled batches."""
    feats = extract_features(extractor, clips)
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(clips))
    hits, total = 0, 0
    emb = np.stack([extractor.action_embedding(w).detach().numpy() for w in extractor.words])
    for start in range(0, len(order) - batch + 1, batch):
        idx = order[start : start + batch]
        cand = [labels[i] for i in idx]
        for i in idx:
            dists = [np.linalg.norm(feats[i] - emb[extractor.words.index(w)]) for w in cand]
            rank = np.argsort(dists)
            correct = [k for k, w in enumerate(cand) if w == labels[i]]
            if any(r in correct for r in rank[:top_k]):
                hits += 1
            total += 1
    return hits / max(total, 1)


def mm_dist(clips, labels, extractor: MotionExtractor) -> float:
    """Mean distance between each motion feature and its action embedding."""
    feats = extract_features(extractor, clips)
    dists = [
        np.linalg.norm(feats[i] - extractor.action_embedding(w).detach().numpy())
        for i, w in enumerate(labels)
    ]
    return float(np.mean(dists))


# ---------------------------------------------------------------------------
# smoothness
# ---------------------------------------------------------------------------

def jerk_profile(clip) -> np.ndarray:
    """Per-frame jerk curve: max over joints of the third-finite-difference
    magnitude of world positions; length N-3."""
    pos = _positions(clip)
    jerk = np.diff(pos, n=3, axis=0)
    return np.linalg.norm(jerk, axis=-1).max(axis=1)


def auj(clip) -> float:
    """Area under the jerk curve, normalized by clip length."""
    pos = _positions(clip)
    return float(jerk_profile(clip).sum() / pos.shape[0])


def pj(clip) -> float:
    """Peak jerk over the whole clip."""
    return float(jerk_profile(clip).max())


# ---------------------------------------------------------------------------
# protocols
# ---------------------------------------------------------------------------

@dataclass
class EvalReport:
    protocol: str
    count: int
    metrics: dict
    config_hash: str
    extractor: str = "toy"

    def validate(self) -> "EvalReport":
        if self.count <= 0:
            raise ContractViolation("EvalReport needs count > 0")
        for k, v in self.metrics.items():
            if not np.isfinite(v):
                raise ContractViolation(f"metric {k} is not finite")
        return self

    def to_json(self) -> str:
        return json.dumps(
            {"protocol": self.protocol, "count": self.count, "metrics": self.metrics,
             "config_hash": self.config_hash, "extractor": self.extractor},
            sort_keys=True, indent=1,
        )

    def render_table(self) -> str:
        rows = [f"| {'Metric':24} | {'Value':>10} |", "|" + "-" * 26 + "|" + "-" * 12 + "|"]
        for k in sorted(self.metrics):
            rows.append(f"| {k:24} | {self.metrics[k]:10.4f} |")
        head = f"Protocol: {self.protocol}  samples: {self.count}  extractor: {self.extractor}"
        return head + "\n" + "\n".join(rows)


def cross_subsets(end_effectors, count: int, seed: int = 0) -> list:
    """Seeded per-sample nonempty end-effector subsets, drawn from the 63
    possible combinations of the six controllable joints."""
    combos = []
    for r in range(1, len(end_effectors) + 1):
        combos.extend(itertools.combinations(end_effectors, r))
    combos = combos[:63]
    rng = np.random.default_rng(seed)
    return [sorted(combos[int(rng.integers(0, len(combos)))]) for _ in range(count)]


def _config_hash(d: dict) -> str:
    return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


def run_protocol(state, root: str, manifest, protocol: str = "Average",
                 seed: int = 0, max_samples: int = 64, extractor=None,
                 guidance=None, steps: int = 50) -> EvalReport:
    """Generate conditioned samples for the test split and score them.

    Average conditions on all six end-effectors; Cross re-extracts each
    sample's conditions for a seeded random subset of them.
    """
    from .sampling import generate

    if protocol not in ("Average", "Cross"):
        raise ContractViolation(f"unknown protocol {protocol!r}")
    skeleton = default_skeleton()
    entries = [e for e in manifest.entries if e["split"] == "test"][:max_samples]
    if not entries:
        raise ContractViolation("no test entries in manifest")
    subsets = (
        cross_subsets(skeleton.end_effectors, len(entries), seed)
        if protocol == "Cross"
        else [sorted(skeleton.end_effectors)] * len(entries)
    )

    per = {"MPJPE-3D": [], "AvgErr-3D": [], "FootSkate": [], "AUJ": [], "PJ": []}
    gen_clips, gt_clips, labels = [], [], []
    for i, entry in enumerate(entries):
        clip, b3, _ = load_entry(root, entry)
        b3new, _ = extract_conditions(
            clip, skeleton, _any_camera(), b3.direction, subsets[i], clip.n_frames
        )
        b3new.action_word = entry["action_word"]
        out = generate(state, entry["action_word"], bundle=b3new,
                       seed=seed + i, steps=steps, guidance=guidance)[0]
        per["MPJPE-3D"].append(mpjpe(out, clip, b3new.keypose_mask))
        per["AvgErr-3D"].append(avg_traj_err(out, b3new))
        per["FootSkate"].append(foot_skating_ratio(out))
        per["AUJ"].append(auj(out))
        per["PJ"].append(pj(out))
        gen_clips.append(out)
        gt_clips.append(clip)
        labels.append(entry["action_word"])

    metrics = {k: float(np.mean(v)) for k, v in per.items()}
    if extractor is not None:
        metrics["FID"] = fid(
            extract_features(extractor, gen_clips), extract_features(extractor, gt_clips)
        )
        metrics["R-precision-top1"] = r_precision(gen_clips, labels, extractor, seed=seed)
        metrics["MM-Dist"] = mm_dist(gen_clips, labels, extractor)
    cfg = {"protocol": protocol, "seed": seed, "samples": len(entries), "steps": steps}
    return EvalReport(
        protocol=protocol, count=len(entries), metrics=metrics, config_hash=_config_hash(cfg)
    ).validate()


def _any_camera():
    from .motion import CameraView

    return CameraView(scale=1.0, pitch=15.0, yaw=0.0, roll=0.0)
