"""Self-checks over every module, runnable from the command line.

``fast`` covers geometry, shapes, normalisation laws, metrics, schedule/loss
anchors and the batch policy. ``full`` adds central finite-difference checks
of every block on micro configurations in float64.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .backbone import AFMSRes2Block, Gate, MRABlock
from .engine import functional as F
from .engine.functional import GLN_EPS
from .engine.autograd import Parameter, Tensor
from .engine.gradcheck import GradCheck, gradient_check
from .evaluator import center_crop, eer, min_dcf
from .frontend import ParamFbank, TCNBlock, derive_geometry
from .model import AttentiveStatsPool, ModelConfig, assemble, count_params, embed_waveforms
from .trainer import AAMHead, BatchPolicy, aam_logits, aam_softmax_loss, cosine_lr

GRAD_TOLERANCE = 1e-4
NORM_TOLERANCE = 1e-12


class CheckFailed(AssertionError):
    pass


def require(condition: bool, message: str) -> None:
    if not condition:
        raise CheckFailed(message)


@dataclass
class SuiteResult:
    name: str
    passed: bool
    seconds: float
    detail: str = ""
    values: dict = field(default_factory=dict)

    def line(self) -> str:
        """One result line; timings are left out so reruns print identical bytes."""
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name:<20} {self.detail}".rstrip()


# -- fast suites --------------------------------------------------------------

def check_geometry() -> dict:
    geometry = derive_geometry(50, 16, 4)
    strides = {g.frame_stride for g in geometry}
    require(strides == {160}, f"frame strides {strides}, expected {{160}}")
    model = assemble(ModelConfig.micro(), seed=0)
    trace: dict = {}
    embed_waveforms(model, np.zeros((1, 1, 3200)), trace)
    require(trace["o1"][2] == 20, f"micro model gives {trace['o1'][2]} frames for 3200 samples")
    return {"frame_stride": 160}


def check_shapes() -> dict:
    model = assemble(ModelConfig.micro(), seed=0)
    model.eval()
    dims = set()
    for seconds in (1, 2, 3, 5):
        emb = embed_waveforms(model, np.zeros((1, 1, 16000 * seconds)))
        dims.add(emb.shape)
    require(dims == {(1, model.config.embed_dim)}, f"embedding shapes vary: {dims}")
    return {"embed_dim": model.config.embed_dim}


def check_softmax() -> dict:
    rng = np.random.default_rng(0)
    x = rng.normal(scale=30, size=(4, 7))
    p = F.softmax(Tensor(x), axis=1).data
    require(np.all(p >= 0), "softmax produced negative probabilities")
    require(np.abs(p.sum(axis=1) - 1).max() < NORM_TOLERANCE, "softmax rows do not sum to 1")
    shifted = F.softmax(Tensor(x + 123.0), axis=1).data
    require(np.abs(shifted - p).max() < NORM_TOLERANCE, "softmax is not shift invariant")
    require(np.isfinite(F.softmax(Tensor(np.array([[1e4, 0.0]])), axis=1).data).all(),
            "softmax overflows on large logits")
    return {}


def check_gate_normalization() -> dict:
    rng = np.random.default_rng(1)
    gate = Gate(8, 4, rng=rng)
    gate.train()
    branches = [Tensor(rng.normal(size=(3, 8, 11))) for _ in range(3)]
    alpha = gate.attention(branches).data
    require(alpha.shape == (3, 3, 8), f"gate weights have shape {alpha.shape}")
    err = float(np.abs(alpha.sum(axis=0) - 1).max())
    require(err < NORM_TOLERANCE, f"gate weights sum to 1 only within {err:.3g}")
    require(np.all(alpha >= 0), "gate weights are negative")
    return {"max_sum_error": err}


def check_asp_normalization() -> dict:
    rng = np.random.default_rng(2)
    pool = AttentiveStatsPool(6, 5, rng=rng)
    x = Tensor(rng.normal(size=(2, 6, 13)))
    w = pool.weights(x).data
    err = float(np.abs(w.sum(axis=2) - 1).max())
    require(err < NORM_TOLERANCE, f"pooling weights sum to 1 only within {err:.3g}")
    out = pool(x).data
    require(out.shape == (2, 12), f"pooled shape {out.shape}")
    require(np.all(out[:, 6:] >= 0), "pooled standard deviation is negative")
    return {"max_sum_error": err}


def check_gln() -> dict:
    rng = np.random.default_rng(3)
    x = rng.normal(loc=3, scale=5, size=(2, 4, 9))
    gamma, beta = Tensor(np.ones(4)), Tensor(np.zeros(4))
    y = F.global_layer_norm(Tensor(x), gamma, beta).data
    mean_err = float(np.abs(y.mean(axis=(1, 2))).max())
    v = x.var(axis=(1, 2))
    var_err = float(np.abs(y.var(axis=(1, 2)) - v / (v + GLN_EPS)).max())
    unit_err = float(np.abs(y.var(axis=(1, 2)) - 1).max())
    require(mean_err < 1e-10, f"gLN output mean {mean_err:.3g}")
    require(var_err < 1e-12, f"gLN output variance off its closed form by {var_err:.3g}")
    require(unit_err < 1e-6, f"gLN output variance off 1 by {unit_err:.3g}")
    scaled = F.global_layer_norm(Tensor(7 * x + 2), gamma, beta).data
    require(np.abs(scaled - y).max() < 1e-6, "gLN is not invariant to affine input rescaling")
    return {}


def _brute_force(scores: np.ndarray, labels: np.ndarray, p_target: float = 0.05):
    tar, non = scores[labels], scores[~labels]
    points = []
    for t in np.append(np.unique(scores), np.inf):
        points.append((np.mean(tar < t), np.mean(non >= t)))
    best = min(p_target * pm + (1 - p_target) * pf for pm, pf in points) / min(p_target, 1 - p_target)
    for (m0, f0), (m1, f1) in zip(points, points[1:]):
        if m0 - f0 <= 0 <= m1 - f1:
            if m0 == f0:
                return m0, best
            if m1 == f1:
                return m1, best
            lam = (f0 - m0) / ((m1 - f1) - (m0 - f0))
            return m0 + lam * (m1 - m0), best
    raise AssertionError("curves never cross")


def check_metric_oracle(instances: int = 100) -> dict:
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(instances):
        n = int(rng.integers(2, 201))
        labels = rng.random(n) < 0.5
        labels[0], labels[1] = True, False
        scores = np.round(rng.normal(size=n) + labels * rng.uniform(0, 2), int(rng.integers(1, 4)))
        want_eer, want_dcf = _brute_force(scores, labels)
        worst = max(worst, abs(eer(scores, labels)[0] - want_eer),
                    abs(min_dcf(scores, labels) - want_dcf))
    require(worst < 1e-12, f"metrics disagree with brute force by {worst:.3g}")
    labels = np.array([True, True, False, False])
    perfect = np.array([0.9, 0.8, 0.1, 0.2])
    require(eer(perfect, labels)[0] == 0 and min_dcf(perfect, labels) == 0, "perfect separation")
    require(eer(perfect, ~labels)[0] == 1.0, "flipped labels must give EER 1")
    require(min_dcf(np.full(4, 0.5), labels) == 1.0, "identical scores must give minDCF 1")
    crop, short = center_crop(np.arange(80000), 1.0)
    require(crop[0] == 32000 and crop.size == 16000 and not short, "centre crop arithmetic")
    return {"max_abs_error": worst}


def check_schedule_loss() -> dict:
    require(cosine_lr(0, 100) == 5e-4 and cosine_lr(100, 100) == 3e-6, "lr endpoints")
    logit = aam_logits(Tensor(np.array([[1.0, 0.0]])), [0], 0.3, 30.0).data[0, 0]
    require(abs(logit - 30 * math.cos(0.3)) < 1e-9, f"target logit {logit}")
    rng = np.random.default_rng(5)
    head = AAMHead(5, 6, margin=0.0, scale=1.0, rng=rng)
    emb = Tensor(rng.normal(size=(4, 6)))
    labels = np.array([0, 3, 4, 1])
    loss, cosine = aam_softmax_loss(emb, labels, head)
    plain = F.cross_entropy(cosine, labels).item()
    require(abs(loss.item() - plain) < 1e-12, "m=0, s=1 must reduce to cross-entropy")
    return {"target_logit": float(logit)}


def check_batch_policy(draws: int = 10000) -> dict:
    policy = BatchPolicy()
    rng = np.random.default_rng(6)
    lengths = np.array([policy.draw_length(rng) for _ in range(draws)])
    frac = float(np.mean(lengths == 48000))
    require(abs(frac - 0.5) <= 0.02, f"full-length fraction {frac:.4f}")
    require(np.all(lengths % 160 == 0), "crop length not a multiple of 160")
    require(lengths.min() >= 16000 and lengths.max() <= 48000, "crop length out of range")
    return {"full_fraction": frac}


# -- gradient suites ----------------------------------------------------------

def _probe(shape, rng) -> np.ndarray:
    """Fixed random readout so every output element contributes to the loss."""
    return rng.normal(size=shape)


def _merge(checks: list[GradCheck]) -> GradCheck:
    return GradCheck(max(c.max_rel_err for c in checks), sum(c.probes for c in checks),
                     sum(c.straddled for c in checks))


def _block_check(module, make_input, rng, max_probes=6) -> GradCheck:
    module.train()
    x = Parameter(make_input(rng))
    readout = None

    def loss():
        nonlocal readout
        y = module(x)
        if readout is None:
            readout = _probe(y.shape, rng)
        return (y * readout).sum()

    loss()
    params = [x] + module.parameters()
    return gradient_check(loss, params, max_probes=max_probes, rng=np.random.default_rng(0))


def grad_tcn_block() -> GradCheck:
    rng = np.random.default_rng(10)
    return _block_check(TCNBlock(4, 6, 2, rng=rng), lambda r: r.normal(size=(2, 4, 12)), rng)


def grad_fbank() -> GradCheck:
    rng = np.random.default_rng(11)
    fb = ParamFbank(6, 25, 10)
    return _block_check(fb, lambda r: r.normal(size=(2, 1, 120)), rng)


def grad_afms_res2() -> GradCheck:
    rng = np.random.default_rng(12)
    return _block_check(AFMSRes2Block(8, 2, rng=rng), lambda r: r.normal(size=(3, 8, 10)), rng)


def grad_mra_block() -> GradCheck:
    rng = np.random.default_rng(13)
    return _block_check(MRABlock(8, 2, 4, rng=rng), lambda r: r.normal(size=(2, 8, 9)), rng)


def grad_gate() -> GradCheck:
    rng = np.random.default_rng(14)
    gate = Gate(8, 4, rng=rng)
    gate.train()
    branches = [Parameter(rng.normal(size=(3, 8, 7))) for _ in range(3)]
    readout = rng.normal(size=(3, 8, 7))
    return gradient_check(lambda: (gate(*branches) * readout).sum(),
                          branches + gate.parameters(), max_probes=6, rng=np.random.default_rng(0))


def grad_asp() -> GradCheck:
    rng = np.random.default_rng(15)
    return _block_check(AttentiveStatsPool(6, 5, rng=rng), lambda r: r.normal(size=(2, 6, 11)), rng)


def grad_aam_loss() -> GradCheck:
    rng = np.random.default_rng(16)
    head = AAMHead(5, 8, margin=0.3, scale=30.0, rng=rng)
    emb = Parameter(rng.normal(size=(6, 8)))
    labels = np.array([0, 1, 2, 3, 4, 0])
    return gradient_check(lambda: aam_softmax_loss(emb, labels, head)[0],
                          [emb] + head.parameters(), rng=np.random.default_rng(0))


def grad_micro_model() -> GradCheck:
    rng = np.random.default_rng(17)
    model = assemble(ModelConfig.micro(), seed=17)
    model.train()
    head = AAMHead(4, model.config.embed_dim, rng=rng)
    x = rng.normal(scale=0.3, size=(3, 1, 3200))
    labels = np.array([0, 1, 3])
    loss = lambda: aam_softmax_loss(embed_waveforms(model, x), labels, head)[0]
    return _merge([gradient_check(loss, [p], max_probes=1, rng=np.random.default_rng(0))
                   for p in model.parameters()])


GRADIENT_CHECKS: dict[str, Callable[[], GradCheck]] = {
    "fbank": grad_fbank,
    "tcn-block": grad_tcn_block,
    "afms-res2-block": grad_afms_res2,
    "mra-block": grad_mra_block,
    "gate": grad_gate,
    "asp": grad_asp,
    "aam-loss": grad_aam_loss,
    "micro-model": grad_micro_model,
}


MAX_STRADDLED_FRACTION = 0.1


def check_gradients(blocks: dict = GRADIENT_CHECKS) -> dict:
    """Max relative error per block; also fails when too many probes sit on kinks."""
    checks = {name: fn() for name, fn in blocks.items()}
    bad = [f"{k}={c.max_rel_err:.3g}" for k, c in checks.items() if not c.max_rel_err < GRAD_TOLERANCE]
    bad += [f"{k}: {c.straddled}/{c.probes} probes on kinks" for k, c in checks.items()
            if c.straddled > MAX_STRADDLED_FRACTION * c.probes]
    require(not bad, "gradient mismatch: " + ", ".join(bad))
    return {k: c.max_rel_err for k, c in checks.items()}


FAST_SUITES: dict[str, Callable[[], dict]] = {
    "geometry": check_geometry,
    "shapes": check_shapes,
    "softmax": check_softmax,
    "gate-normalization": check_gate_normalization,
    "asp-normalization": check_asp_normalization,
    "gln": check_gln,
    "metric-oracle": check_metric_oracle,
    "schedule-loss": check_schedule_loss,
    "batch-policy": check_batch_policy,
}
FULL_SUITES = {**FAST_SUITES, "gradients": check_gradients}


def run_suites(level: str = "fast") -> list[SuiteResult]:
    if level not in ("fast", "full"):
        raise ValueError(f"unknown verify level {level!r}")
    suites = FAST_SUITES if level == "fast" else FULL_SUITES
    results = []
    for name, fn in suites.items():
        start = time.perf_counter()
        try:
            values = fn() or {}
            passed, detail = True, ""
        except Exception as exc:  # a crashing suite is a failing suite
            values, passed, detail = {}, False, f"{type(exc).__name__}: {exc}"
        if passed and name == "gradients":
            detail = "max rel err " + ", ".join(f"{k}={v:.2e}" for k, v in values.items())
        results.append(SuiteResult(name, passed, time.perf_counter() - start, detail, values))
    return results


def parameter_summary(model) -> str:
    total, breakdown = count_params(model)
    lines = [f"  {name:<12} {n:>12,d}" for name, n in breakdown.items()]
    return "\n".join(lines + [f"  {'total':<12} {total:>12,d}"])
