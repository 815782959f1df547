"""Acceptance criteria 1-10, each at its stated tolerance and time budget.

Every test prints exactly one ``PASS``/``FAIL`` line (also repeated in the
terminal summary). The overfit runs behind criteria 7 and 8 come from the
session cache in conftest.py, so each seed is trained once.
"""

import math
import subprocess
import sys
import time

import numpy as np
import pytest
import yaml

import conftest
from mrrawnet.backbone import Gate
from mrrawnet.engine import functional as F
from mrrawnet.engine.autograd import Tensor
from mrrawnet.evaluator import eer, min_dcf
from mrrawnet.frontend import MRFE, MRFEConfig, derive_geometry
from mrrawnet.model import AttentiveStatsPool, ModelConfig, assemble, count_params, embed_waveforms
from mrrawnet.recipes import OVERFIT_STEPS, overfit_config, run_overfit
from mrrawnet.synth import synth_corpus
from mrrawnet.trainer import AAMHead, BatchPolicy, aam_logits, aam_softmax_loss, cosine_lr, make_batch
from mrrawnet.verify import check_gradients

from oracles import eer_brute, min_dcf_brute

TREND_SEEDS = (0, 1, 2, 3, 4)


class Criterion:
    """Collects named checks, then prints and asserts one verdict line."""

    def __init__(self, number: int, title: str, budget_s: float, capsys):
        self.number, self.title, self.budget = number, title, budget_s
        self.capsys = capsys
        self.checks: list = []
        self.notes: list = []
        self.start = time.perf_counter()
        self.extra_seconds = 0.0

    def check(self, name: str, ok: bool, note: str = "") -> None:
        self.checks.append((name, bool(ok)))
        if note:
            self.notes.append(note)

    def conclude(self) -> None:
        seconds = time.perf_counter() - self.start + self.extra_seconds
        self.check(f"time < {self.budget:g}s", seconds < self.budget)
        failed = [name for name, ok in self.checks if not ok]
        verdict = "PASS" if not failed else "FAIL"
        line = f"{verdict} criterion {self.number:>2} {self.title} [{seconds:.1f}s]"
        if self.notes:
            line += " -- " + "; ".join(self.notes)
        if failed:
            line += " -- failed: " + ", ".join(failed)
        conftest.ACCEPTANCE_LINES[self.number] = line
        with self.capsys.disabled():
            print("\n" + line)
        assert not failed, line


@pytest.fixture
def criterion(capsys):
    return lambda number, title, budget: Criterion(number, title, budget, capsys)


def test_criterion_01_geometry(criterion):
    c = criterion(1, "geometry anchor", 1.0)
    geometry = derive_geometry(50, 16, 4)
    strides = {g.frame_stride for g in geometry}
    c.check("S == 160", strides == {160}, f"S={sorted(strides)}")
    # default kernels and strides at narrow widths: frame counts depend on geometry only
    cfg = MRFEConfig(fbank_filters=4, tcn_channels=2, tcn_hidden=2, blocks_per_repeat=1, repeats=1)
    mrfe = MRFE(cfg, rng=np.random.default_rng(0))
    for t_len in (48000, 16000, 32000):
        x = Tensor(np.random.default_rng(1).normal(size=(1, 1, t_len)))
        frames = [fe(x)[0].shape[2] for fe in mrfe.extractors]
        c.check(f"T={t_len} frames == T/160", frames == [t_len // 160] * 4)
        if t_len == 48000:
            c.check("T=48000 -> 300 frames", frames == [300] * 4, f"frames {frames}")
    c.conclude()


def test_criterion_02_parameter_count(criterion):
    c = criterion(2, "parameter-count anchor", 5.0)
    ours, _ = count_params(assemble(ModelConfig.default()))
    theirs, _ = count_params(assemble(ModelConfig.baseline()))
    c.check("within 15.5M +/- 20%", 0.8 * 15.5e6 <= ours <= 1.2 * 15.5e6, f"MR-RawNet {ours:,d}")
    c.check("below baseline", ours < theirs, f"baseline {theirs:,d}")
    c.conclude()


def test_criterion_03_gradients(criterion):
    c = criterion(3, "gradient suite", 300.0)
    errors = check_gradients()
    worst = max(errors, key=errors.get)
    for name, err in errors.items():
        c.check(f"{name} < 1e-4", err < 1e-4)
    c.check("covers every block",
            {"tcn-block", "afms-res2-block", "mra-block", "gate", "asp", "aam-loss",
             "micro-model"} <= set(errors))
    c.notes.append(f"worst {worst}={errors[worst]:.2e}")
    c.conclude()


def test_criterion_04_normalization(criterion):
    c = criterion(4, "normalization invariants", 30.0)
    rng = np.random.default_rng(4)
    gate_err = asp_err = soft_err = gln_mean = gln_var = 0.0
    positive = True
    for trial in range(20):
        gate = Gate(8, 4, rng=rng)
        gate.train(trial % 2 == 0)
        branches = [Tensor(rng.normal(scale=3, size=(2, 8, 9))) for _ in range(3)]
        alpha = gate.attention(branches).data
        gate_err = max(gate_err, float(np.abs(alpha.sum(axis=0) - 1).max()))
        positive &= bool(np.all((alpha > 0) & (alpha < 1)))

        pool = AttentiveStatsPool(6, 5, rng=rng)
        w = pool.weights(Tensor(rng.normal(scale=2, size=(2, 6, 17)))).data
        asp_err = max(asp_err, float(np.abs(w.sum(axis=2) - 1).max()))
        positive &= bool(np.all(w >= 0))

        logits = rng.normal(scale=20, size=(5, 11))
        p = F.softmax(Tensor(logits), axis=1).data
        soft_err = max(soft_err, float(np.abs(p.sum(axis=1) - 1).max()))
        positive &= bool(np.all(p >= 0))

        x = rng.normal(loc=rng.uniform(-5, 5), scale=rng.uniform(0.2, 10), size=(2, 4, 13))
        y = F.global_layer_norm(Tensor(x), Tensor(np.ones(4)), Tensor(np.zeros(4))).data
        gln_mean = max(gln_mean, float(np.abs(y.mean(axis=(1, 2))).max()))
        gln_var = max(gln_var, float(np.abs(y.var(axis=(1, 2)) - 1).max()))
    c.check("gate sums", gate_err <= 1e-12, f"gate {gate_err:.1e}")
    c.check("ASP sums", asp_err <= 1e-12, f"ASP {asp_err:.1e}")
    c.check("softmax sums", soft_err <= 1e-12, f"softmax {soft_err:.1e}")
    c.check("gLN mean", gln_mean < 1e-10, f"gLN mean {gln_mean:.1e}")
    c.check("gLN variance", gln_var < 1e-6, f"gLN var-1 {gln_var:.1e}")
    c.check("weights are probabilities", positive)
    c.conclude()


def test_criterion_05_metric_oracle(criterion):
    c = criterion(5, "metric oracle equivalence", 30.0)
    rng = np.random.default_rng(5)
    worst_eer = worst_dcf = 0.0
    for _ in range(100):
        n = int(rng.integers(2, 201))
        labels = rng.random(n) < rng.uniform(0.1, 0.9)
        labels[:2] = [True, False]
        scores = np.round(rng.normal(size=n) + labels * rng.uniform(0, 2), int(rng.integers(1, 4)))
        worst_eer = max(worst_eer, abs(eer(scores, labels)[0] - eer_brute(scores.tolist(), labels.tolist())))
        worst_dcf = max(worst_dcf, abs(min_dcf(scores, labels) - min_dcf_brute(scores.tolist(), labels.tolist())))
    c.check("EER matches brute force", worst_eer <= 1e-12, f"max EER diff {worst_eer:.1e}")
    c.check("minDCF matches brute force", worst_dcf <= 1e-12, f"max minDCF diff {worst_dcf:.1e}")
    perfect = ([0.9, 0.8, 0.1, 0.2], [1, 1, 0, 0])
    c.check("perfect separation EER 0", eer(*perfect)[0] == 0.0)
    c.check("perfect separation minDCF 0", min_dcf(*perfect) == 0.0)
    c.check("all-equal minDCF 1", min_dcf([0.3] * 8, [1, 0] * 4) == 1.0)
    c.conclude()


def test_criterion_06_schedule_and_loss(criterion):
    c = criterion(6, "schedule/loss anchors", 30.0)
    c.check("lr(0) == 5e-4", cosine_lr(0, 1234) == 5e-4)
    c.check("lr(total) == 3e-6", cosine_lr(1234, 1234) == 3e-6)
    target = aam_logits(Tensor(np.array([[1.0, 0.0]])), [0], 0.3, 30.0).data[0, 0]
    c.check("target logit 30cos(0.3)", abs(target - 30 * math.cos(0.3)) < 1e-9, f"logit {target:.9f}")
    rng = np.random.default_rng(6)
    worst = 0.0
    for _ in range(10):
        head = AAMHead(6, 9, margin=0.0, scale=1.0, rng=rng)
        emb = Tensor(rng.normal(size=(7, 9)))
        labels = rng.integers(0, 6, size=7)
        loss, cosine = aam_softmax_loss(emb, labels, head)
        z = cosine.data
        plain = np.mean([np.log(np.exp(row - row.max()).sum()) + row.max() - row[y]
                          for row, y in zip(z, labels)])
        worst = max(worst, abs(loss.item() - plain))
    c.check("m=0,s=1 is cross-entropy", worst <= 1e-12, f"CE diff {worst:.1e}")
    c.conclude()


def test_criterion_07_overfit(criterion, overfit_runs):
    c = criterion(7, "overfit oracle", 15 * 60.0)
    outcome, seconds = overfit_runs(0)
    # the run may come from the session cache; its training time counts either way
    c.start, c.extra_seconds = time.perf_counter(), seconds
    acc = outcome.train.train_accuracy
    eer_full = outcome.report.row(None).eer_percent
    c.check("train accuracy >= 95%", acc >= 0.95, f"seed 0: acc {acc:.3f} in {OVERFIT_STEPS} steps")
    c.check("EER(full) < 20%", eer_full < 20.0, f"EER(full) {eer_full:.2f}%")
    again = run_overfit(overfit_config(0))
    same = (again.train.metrics == outcome.train.metrics
            and again.report.to_jsonl() == outcome.report.to_jsonl())
    c.check("deterministic per seed", same)
    c.conclude()


def test_criterion_08_duration_trend(criterion, overfit_runs):
    c = criterion(8, "duration robustness", 20 * 60.0)
    outcomes, seconds = zip(*(overfit_runs(s) for s in TREND_SEEDS))
    # seed 0 was trained for criterion 7 already; every seed's time counts here
    c.start, c.extra_seconds = time.perf_counter(), sum(seconds)
    model = outcomes[0].model
    dims = {embed_waveforms(model, np.zeros((1, 1, 16000 * s))).shape for s in (1, 2, 3, 5)}
    c.check("same embedding dim at 1/2/3/5 s", len(dims) == 1, f"dims {sorted(dims)}")
    c.notes.append(f"train acc {[round(o.train.train_accuracy, 3) for o in outcomes]}")
    full = [o.report.row(None).eer_percent for o in outcomes]
    one = [o.report.row(1.0).eer_percent for o in outcomes]
    c.check("mean EER(1s) >= mean EER(full)", np.mean(one) >= np.mean(full),
            f"mean EER full {np.mean(full):.2f}% vs 1s {np.mean(one):.2f}% "
            f"(full {[round(v, 2) for v in full]}, 1s {[round(v, 2) for v in one]})")
    c.conclude()


def test_criterion_09_batch_policy(criterion):
    c = criterion(9, "batch-policy statistics", 30.0)
    corpus = synth_corpus(2, 2, seed=9, min_duration=3.0, max_duration=3.2)
    policy = BatchPolicy()
    rng = np.random.default_rng(9)
    lengths = np.array([make_batch(corpus.utterances, policy, rng, 1).length for _ in range(10000)])
    full = float(np.mean(lengths == 48000))
    c.check("50/50 mix within 2pp", abs(full - 0.5) <= 0.02, f"full-length fraction {full:.4f}")
    c.check("multiples of S", bool(np.all(lengths % 160 == 0)))
    c.check("lengths in [1 s, 3 s]", lengths.min() >= 16000 and lengths.max() <= 48000)
    c.conclude()


def _cli(*args, cwd):
    return subprocess.run([sys.executable, "-m", "mrrawnet", *args], cwd=cwd,
                          capture_output=True)


def _tree(root):
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_criterion_10_determinism(criterion, tmp_path):
    c = criterion(10, "determinism", 300.0)
    config = {
        "model": "micro",
        "corpus": {"num_speakers": 4, "utts_per_speaker": 5, "train_per_speaker": 3},
        "train": {"batch_size": 4, "steps_per_epoch": 6},
        "seed": 11,
    }
    runs = {}
    for run in ("a", "b"):
        # separate working dirs, same relative paths: outputs must match byte for byte
        cwd = tmp_path / run
        cwd.mkdir()
        (cwd / "run.yaml").write_text(yaml.safe_dump(config))
        train = _cli("train", "--config", "run.yaml", "--out", "out", cwd=cwd)
        c.check(f"train {run} exit 0", train.returncode == 0)
        ev = _cli("eval", "--checkpoint", "out/model.mrrw", "--trials", "out/trials.txt", cwd=cwd)
        c.check(f"eval {run} exit 0", ev.returncode == 0)
        ver = _cli("verify", "fast", cwd=cwd)
        c.check(f"verify {run} exit 0", ver.returncode == 0)
        runs[run] = (train.stdout, ev.stdout, ver.stdout, _tree(cwd / "out"))
    a, b = runs["a"], runs["b"]
    reports = {"report.txt", "report.jsonl"}
    c.check("train identical", a[0] == b[0] and {k: v for k, v in a[3].items() if k not in reports}
            == {k: v for k, v in b[3].items() if k not in reports})
    c.check("eval identical", a[1] == b[1] and reports <= set(a[3])
            and all(a[3][k] == b[3][k] for k in reports))
    c.check("verify identical", a[2] == b[2])
    c.notes.append(f"{len(a[3])} files + stdout compared byte for byte")
    c.conclude()
