"""Acceptance gate: ten checks that define "working" for this package.

Each criterion is one test named ``test_criterion_NN_*`` so a verbose
pytest run shows exactly one pass/fail line per criterion; each also
prints a ``PASS n:`` line (visible with ``-s``).  Tolerances and time
bounds are stated inline.

Run with::

    pytest tests/test_acceptance.py -v
"""

from __future__ import annotations

import json
import math
import time

import numpy as np
import torch

from boxttt.backbones import (
    ANSWERING,
    GROUNDING,
    PAD_ID,
    build_toy_backbone,
    pad_ids,
)
from boxttt.cli import main
from boxttt.engine import EngineConfig, evidence_step, run_episode
from boxttt.evaluation import (
    check_result_table,
    closed_accuracy,
    normalize_answer,
    open_recall,
)
from boxttt.geometry import WHITE, BoundingBox, crop_and_pad
from boxttt.losses import answer_loss, answer_view_loss, box_loss
from boxttt.prompts import (
    ANSWER,
    EVIDENCE,
    SoftPrompt,
    ema_update,
    init_prompt,
    prompt_distance,
    sync_teacher,
)

from conftest import make_image
from scripted_fixtures import emitting_backbone, uniform_backbone
from test_geometry import brute_force_crop


def _report(n: int, text: str) -> None:
    print(f"PASS {n}: {text}")


def _max_rel_error(analytic: torch.Tensor, evaluate, prompt, h=1e-5) -> float:
    """Max per-coordinate relative FD error, denominator floored at 1e-6.

    The floor turns the comparison absolute for coordinates whose true
    gradient sits below the central-difference noise floor (~1e-11 here);
    without it, agreement at the noise level would read as failure.
    """
    worst = 0.0
    rows, cols = prompt.embeddings.shape
    for r in range(rows):
        for c in range(cols):
            bumped = SoftPrompt(embeddings=prompt.embeddings.clone(), role=prompt.role)
            bumped.embeddings[r, c] += h
            plus = evaluate(bumped)
            bumped.embeddings[r, c] -= 2 * h
            minus = evaluate(bumped)
            fd = (plus - minus) / (2 * h)
            a = float(analytic[r, c])
            denom = max(abs(fd), abs(a), 1e-6)
            worst = max(worst, abs(fd - a) / denom)
    return worst


def test_criterion_01_gradient_fidelity():
    """Analytic prompt gradients match central finite differences.

    Toy backbone (vocab 10, embed_dim 8), prompts 24/32 tokens, FD step
    1e-5 in double precision, max relative error < 1e-4, runtime < 30 s.
    """
    start = time.monotonic()
    grounding = build_toy_backbone(seed=3, vocab=10, embed_dim=8, kind=GROUNDING)
    answerer = build_toy_backbone(seed=4, vocab=10, embed_dim=8, kind=ANSWERING)
    image = make_image(17)
    crop = make_image(18, 6, 6)
    rng = np.random.default_rng(0)

    vis = init_prompt(EVIDENCE, 24, 8)
    vis.embeddings.add_(0.05 * torch.from_numpy(rng.standard_normal((24, 8))))
    box_targets = pad_ids([int(t) for t in rng.integers(2, 10, size=6)] + [0], 32)
    box = box_loss(grounding, image, "where?", vis, box_targets)
    box_err = _max_rel_error(
        box.grad,
        lambda p: box_loss(grounding, image, "where?", p, box_targets).value,
        vis,
    )
    assert box_err < 1e-4, f"box-loss gradient error {box_err:.2e}"

    ans = init_prompt(ANSWER, 32, 8)
    ans.embeddings.add_(0.05 * torch.from_numpy(rng.standard_normal((32, 8))))
    t_orig, t_crop = [3, 0], [5, 2, 0]
    answer = answer_loss(answerer, image, crop, "what?", ans, t_orig, t_crop)
    ans_err = _max_rel_error(
        answer.grad,
        lambda p: answer_loss(answerer, image, crop, "what?", p, t_orig, t_crop).value,
        ans,
    )
    assert ans_err < 1e-4, f"answer-loss gradient error {ans_err:.2e}"

    elapsed = time.monotonic() - start
    assert elapsed < 30.0, f"gradient check took {elapsed:.1f} s"
    _report(
        1,
        f"gradient fidelity: box err {box_err:.2e}, answer err {ans_err:.2e}, "
        f"{elapsed:.1f} s (< 30 s)",
    )


def test_criterion_02_frozen_backbone_and_disjoint_prompts(
    toy_grounding, toy_answerer
):
    """20-mini-epoch episode: fingerprints frozen; each step moves only
    its own prompt set, bit for bit. Runtime < 10 s."""
    start = time.monotonic()
    image = make_image(23)
    g_print, f_print = toy_grounding.fingerprint(), toy_answerer.fingerprint()

    states: list[tuple[str, dict[str, torch.Tensor]]] = []

    def observer(phase, epoch, state):
        states.append((phase, {k: v.embeddings.clone() for k, v in state.items()}))

    run_episode(
        image,
        "what stands out?",
        toy_grounding,
        toy_answerer,
        EngineConfig(mini_epochs=20),
        observer=observer,
    )
    assert toy_grounding.fingerprint() == g_print
    assert toy_answerer.fingerprint() == f_print

    vis_moves = ans_moves = 0
    for (_, before), (phase, after) in zip(states, states[1:]):
        if phase == "evidence":
            assert torch.equal(after["prompt_ans"], before["prompt_ans"])
            vis_moves += int(not torch.equal(after["prompt_vis"], before["prompt_vis"]))
        elif phase == "answer":
            assert torch.equal(after["prompt_vis"], before["prompt_vis"])
            ans_moves += int(not torch.equal(after["prompt_ans"], before["prompt_ans"]))
        elif phase == "teacher":
            assert torch.equal(after["prompt_vis"], before["prompt_vis"])
            assert torch.equal(after["prompt_ans"], before["prompt_ans"])
    assert vis_moves == 20 and ans_moves == 20  # prompts actually trained

    elapsed = time.monotonic() - start
    assert elapsed < 10.0, f"episode invariants took {elapsed:.1f} s"
    _report(
        2,
        "frozen backbones and bitwise prompt disjointness over 20 mini-epochs "
        f"({elapsed:.1f} s < 10 s)",
    )


def test_criterion_03_ema_closed_form():
    """20 iterative teacher updates equal decay^k t0 + (1 - decay^k) s
    within 1e-10 relative error at decay 0.9."""
    decay, steps = 0.9, 20
    rng = np.random.default_rng(7)
    student = SoftPrompt(
        embeddings=torch.from_numpy(rng.standard_normal((6, 5))), role=ANSWER
    )
    teacher = SoftPrompt(
        embeddings=torch.from_numpy(rng.standard_normal((6, 5))), role=ANSWER
    )
    t0 = teacher.embeddings.clone()
    for _ in range(steps):
        teacher = ema_update(teacher, student, decay)
    closed = decay**steps * t0 + (1 - decay**steps) * student.embeddings
    rel = float(
        ((teacher.embeddings - closed).abs() / closed.abs().clamp(min=1e-300)).max()
    )
    assert rel < 1e-10, f"EMA relative error {rel:.2e}"
    _report(3, f"EMA closed form over 20 steps, max rel error {rel:.2e} (< 1e-10)")


def test_criterion_04_loss_oracles():
    """Uniform scripts (V=10) give ln 10 +- 1e-12; certainty gives 0."""
    image = make_image(31)
    uniform_g = uniform_backbone(GROUNDING, vocab_size=10)
    uniform_a = uniform_backbone(ANSWERING, vocab_size=10)
    vis = init_prompt(EVIDENCE, 4, uniform_g.embed_dim)
    ans = init_prompt(ANSWER, 4, uniform_a.embed_dim)

    b = box_loss(uniform_g, image, "q", vis, [3] * 32)
    assert abs(b.value - math.log(10)) <= 1e-12
    v = answer_view_loss(uniform_a, image, "q", ans, [4, 0, 2])
    assert abs(v.value - math.log(10)) <= 1e-12

    certain_g = emitting_backbone(GROUNDING, '{"bbox":[1,1,5,5]}')
    ids = pad_ids(certain_g.tokenizer.encode('{"bbox":[1,1,5,5]}') + [0], 32)
    assert box_loss(certain_g, image, "q", init_prompt(EVIDENCE, 4, 8), ids).value == 0.0
    certain_a = emitting_backbone(ANSWERING, "no")
    own = certain_a.tokenizer.encode("no") + [0]
    assert (
        answer_view_loss(certain_a, image, "q", init_prompt(ANSWER, 4, 8), own).value
        == 0.0
    )
    _report(4, "loss oracles: uniform = ln 10 +- 1e-12, certainty = 0 exactly")


def test_criterion_05_crop_operator_brute_force():
    """crop_and_pad equals the per-pixel oracle on 100 seeded cases
    (sizes <= 16x16); full-box identity is byte-exact; outside-box
    pixels are white before resizing."""
    rng = np.random.default_rng(1234)
    for case in range(100):
        h, w = rng.integers(1, 17, size=2)
        image = rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8)
        x1 = int(rng.integers(0, w))
        x2 = int(rng.integers(x1 + 1, w + 1))
        y1 = int(rng.integers(0, h))
        y2 = int(rng.integers(y1 + 1, h + 1))
        box = BoundingBox(x1, y1, x2, y2)
        tw, th = (int(v) for v in rng.integers(1, 17, size=2))
        got = crop_and_pad(image, box, (tw, th))
        np.testing.assert_array_equal(
            got, brute_force_crop(image, box, tw, th), err_msg=f"case {case}"
        )

    image = make_image(9, 8, 10)
    full = crop_and_pad(image, BoundingBox(0, 0, 10, 8), (10, 8))
    assert full.tobytes() == image.tobytes()

    boxed = crop_and_pad(image, BoundingBox(2, 3, 5, 6), (10, 8))
    outside = np.ones((8, 10), dtype=bool)
    outside[3:6, 2:5] = False
    assert (boxed[outside] == WHITE).all()
    _report(5, "crop operator matches per-pixel oracle on 100 seeded cases")


def test_criterion_06_cmd_adapt_determinism(tmp_path):
    """Two default-flag adapt runs over the 10-record fixture are
    byte-identical in traces, predictions, and reports. Runtime < 60 s."""
    start = time.monotonic()
    fixture = tmp_path / "fixture"
    assert main(["synth", "--out", str(fixture), "--num-records", "10"]) == 0
    outs = []
    for name in ("run-a", "run-b"):
        out = tmp_path / name
        code = main(
            ["adapt", "--dataset", str(fixture / "records.jsonl"), "--out", str(out)]
        )
        assert code == 0
        outs.append(out)
    for artifact in ("traces.jsonl", "predictions.jsonl", "report.json", "report.csv"):
        a = (outs[0] / artifact).read_bytes()
        b = (outs[1] / artifact).read_bytes()
        assert a == b, f"{artifact} differs between identical runs"
    elapsed = time.monotonic() - start
    assert elapsed < 60.0, f"determinism check took {elapsed:.1f} s"
    _report(
        6,
        f"cmd_adapt byte-identical across reruns at default flags "
        f"({elapsed:.1f} s < 60 s)",
    )


def test_criterion_07_descent_sanity(toy_grounding):
    """At lr 1e-4, the box objective does not increase after one
    evidence update in >= 95 of 100 seeded cases."""
    non_increasing = 0
    for seed in range(100):
        image = make_image(1000 + seed, 10, 10)
        prompt = init_prompt(EVIDENCE, 6, toy_grounding.embed_dim)
        step = evidence_step(
            image, f"case {seed}?", toy_grounding, prompt, lr_vis=1e-4
        )
        after = box_loss(
            toy_grounding,
            image,
            f"case {seed}?",
            step.prompt_vis,
            step.target_string.token_ids,
        )
        non_increasing += int(after.value <= step.loss.value)
    assert non_increasing >= 95, f"descent held in only {non_increasing}/100 cases"
    _report(7, f"descent sanity: {non_increasing}/100 cases non-increasing (>= 95)")


def test_criterion_08_metric_suites():
    """Closed accuracy and open recall behave per their definitions,
    including normalization, bounds, and recall monotonicity."""
    assert normalize_answer("Yes.") == "yes"
    assert normalize_answer("  NO !") == "no"
    assert closed_accuracy(["Yes", "no."], ["yes", "No"]) == 1.0
    assert closed_accuracy(["yes", "no"], ["yes", "yes"]) == 0.5
    assert open_recall("the lower lobe", "left lower lobe", frozenset()) == 2 / 3
    assert open_recall("shows hyaline arteriolosclerosis", "hyaline arteriolosclerosis") == 1.0

    rng = np.random.default_rng(5)
    words = ["lobe", "left", "mass", "cyst", "apex", "rib", "the", "of"]
    for _ in range(200):
        gold = " ".join(rng.choice(words, size=rng.integers(1, 5)))
        pred = " ".join(rng.choice(words, size=rng.integers(0, 6)))
        value = open_recall(pred, gold, frozenset())
        assert 0.0 <= value <= 1.0
        extra = pred + " " + " ".join(rng.choice(words, size=2))
        assert open_recall(extra, gold, frozenset()) >= value
    _report(8, "metric suites: normalization, bounds, and monotonicity hold")


def test_criterion_09_published_table_consistency():
    """All 48 transcribed cell pairs improve, and the headline closed
    gain is 12.32 (within 0.05 of the stated 12.3)."""
    check = check_result_table()
    assert check.problems == ()
    assert len(check.deltas) == 48
    assert all(d.delta > 0 for d in check.deltas)
    headline = next(
        d
        for d in check.deltas
        if d.model == "llava"
        and d.dataset == "pathvqa"
        and d.metric == "closed"
        and d.source == "main"
    )
    assert abs(headline.delta - 12.32) <= 0.005
    assert abs(headline.delta - 12.3) <= 0.05
    _report(
        9,
        "table consistency: 48/48 positive deltas, headline closed gain "
        "12.32 (optional official-file split check skipped: files not bundled)",
    )


def test_criterion_10_ablation_modes(tmp_path):
    """--no-evidence-consistency leaves no second box in any trace row;
    --no-ema-teacher keeps teacher-student distance at 0 throughout."""
    fixture = tmp_path / "fixture"
    assert main(["synth", "--out", str(fixture), "--num-records", "3"]) == 0
    dataset = str(fixture / "records.jsonl")

    single = tmp_path / "single-pass"
    assert (
        main(
            ["adapt", "--dataset", dataset, "--out", str(single),
             "--no-evidence-consistency"]
        )
        == 0
    )
    rows = [
        json.loads(line)
        for line in (single / "traces.jsonl").read_text().splitlines()
    ]
    assert rows and all(r["b2"] is None and r["b2_flag"] is None for r in rows)

    tied = tmp_path / "tied-teacher"
    assert (
        main(["adapt", "--dataset", dataset, "--out", str(tied), "--no-ema-teacher"])
        == 0
    )
    rows = [
        json.loads(line) for line in (tied / "traces.jsonl").read_text().splitlines()
    ]
    assert rows and all(r["teacher_distance"] == 0.0 for r in rows)

    # The same toggles hold at the engine level, including live equality
    # of the tied teacher after each refresh.
    image = make_image(51)
    grounding = build_toy_backbone(seed=11, kind=GROUNDING)
    answerer = build_toy_backbone(seed=12, kind=ANSWERING)
    teachers: list[tuple[torch.Tensor, torch.Tensor]] = []

    def observer(phase, epoch, state):
        if phase == "teacher":
            teachers.append(
                (state["teacher"].embeddings.clone(), state["prompt_ans"].embeddings.clone())
            )

    run_episode(
        image,
        "q",
        grounding,
        answerer,
        EngineConfig(mini_epochs=5, ema_teacher=False, max_answer_len=16),
        observer=observer,
    )
    assert len(teachers) == 5
    assert all(torch.equal(t, s) for t, s in teachers)
    _report(10, "ablation modes: no second pass under the single-pass flag; "
               "tied teacher stays at distance 0")
