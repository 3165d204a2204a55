"""Shipping gate: one test per release criterion, one verdict line each.

Run `pytest tests/test_acceptance.py -v` to get a pass/fail line per
criterion. Each test checks its criterion at the stated tolerance and
prints the measured values for the record.
"""

import math
import time

import numpy as np
import pytest

from helpers import broad_word_fixture, seventy_five_eligible_dag
from test_montage import grid_layout
from test_preprocess import _tone_amplitude
from test_sampler import pool_for_dag

from heeg.analysis import (
    EvalRecord,
    aggregate,
    normalized_accuracy,
    span_bins_report,
)
from heeg.cli import main
from heeg.config import RunConfig
from heeg.errors import DataError
from heeg.hierarchy import build_dag, eligible_nodes, filter_broad_words, prune_to_level
from heeg.metalearn import (
    AdaptConfig,
    EpisodeTensors,
    LinearHead,
    evaluate_episode,
    gather_episode,
    head_for_mode,
    init_mlp,
    inner_adapt,
    loss_and_grads,
    meta_gradient,
    proto_head_init,
    train_baseline,
)
from heeg.montage import ElectrodeLayout, align_layouts
from heeg.preprocess import (
    EegRecording,
    average_rereference,
    bandpass_zero_phase,
    preprocess_recording,
)
from heeg.sampler import (
    SamplerConfig,
    compute_query_shots,
    compute_support_size,
    derive_seed,
    fixed_way_episode,
    sample_classes,
    sample_eval_suite,
)
from heeg.synth import SynthSpec, bayes_oracle_accuracy, gen_hierarchy_gaussians


# ---------------------------------------------------------------------------
# criterion 1: episode-sampling laws over ten thousand episodes
# ---------------------------------------------------------------------------


def test_criterion_01_sampler_laws_hold_over_10000_episodes():
    dag = seventy_five_eligible_dag()
    pool = pool_for_dag(dag)
    cfg = SamplerConfig()
    instances = math.ceil(10_000 / len(eligible_nodes(dag)))

    t0 = time.perf_counter()
    suite = sample_eval_suite(dag, pool, "meta-test", instances, base_seed=2024)
    assert len(suite.episodes) >= 10_000
    assert not suite.rejections

    global_support: set[str] = set()
    global_query: set[str] = set()
    for ep in suite.episodes:
        support_ids = {sid for sid, _ in ep.support}
        query_ids = {sid for sid, _ in ep.query}
        assert not support_ids & query_ids
        global_support |= support_ids
        global_query |= query_ids

        # independent replay of the documented rng stream
        rng = np.random.default_rng(ep.seed)
        classes = sample_classes(dag, ep.node, rng, cfg.way_cap, cfg.min_span)
        assert classes == ep.classes
        way = len(classes)
        assert 2 <= way <= cfg.way_cap

        k_q = compute_query_shots(pool, classes)
        assert ep.k_q == k_q == min(10, min(pool.size(c) for c in classes) // 2)
        assert len(ep.query) == way * k_q

        beta = 1.0 - float(rng.random())
        d_sup = compute_support_size(pool, classes, k_q, beta, cfg.support_cap)
        assert d_sup == min(
            cfg.support_cap,
            sum(
                math.ceil(beta * min(cfg.support_cap, pool.size(c) - k_q))
                for c in classes
            ),
        )

        alphas = {c: float(rng.uniform(cfg.alpha_low, cfg.alpha_high)) for c in classes}
        weights = np.array(
            [math.exp(alphas[c] + math.log(pool.size(c))) for c in classes]
        )
        ratios = weights / weights.sum()
        assert abs(float(ratios.sum()) - 1.0) <= 1e-12
        assert sum(ep.shots.values()) <= d_sup
        for c, r in zip(classes, ratios):
            wanted = min(int(r * (d_sup - way)) + 1, pool.size(c) - k_q)
            assert ep.shots[c] == min(wanted, len(pool.support_reservoir(c)))
            assert ep.shots[c] >= 1
            assert ep.shots[c] + k_q <= pool.size(c)

    assert not global_support & global_query
    elapsed = time.perf_counter() - t0
    assert elapsed < 60.0
    print(
        f"criterion 1: {len(suite.episodes)} episodes, zero law violations, "
        f"{elapsed:.1f}s"
    )


# ---------------------------------------------------------------------------
# criterion 2: the broad-word filter removes exactly the known set
# ---------------------------------------------------------------------------


def test_criterion_02_broad_word_filter_removes_exactly_the_known_set():
    dag = build_dag(broad_word_fixture())
    filtered, removed = filter_broad_words(dag, threshold=45)
    assert removed == ["ANIMAL", "BEAST", "CREATURE", "MAMMAL", "PERSON"]
    assert set(filtered.leaf_words()) == set(dag.leaf_words()) - set(removed)
    print(f"criterion 2: removed exactly {removed}")


# ---------------------------------------------------------------------------
# criterion 3: chance-normalization identities and affinity
# ---------------------------------------------------------------------------


def test_criterion_03_normalized_accuracy_identities_and_affinity():
    for way in range(2, 51):
        assert normalized_accuracy(1.0 / way, way) == 0.0
        assert normalized_accuracy(1.0, way) == 100.0
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(500):
        way = int(rng.integers(2, 51))
        a1, a2, lam = float(rng.random()), float(rng.random()), float(rng.random())
        lhs = normalized_accuracy(lam * a1 + (1.0 - lam) * a2, way)
        rhs = lam * normalized_accuracy(a1, way) + (1.0 - lam) * normalized_accuracy(
            a2, way
        )
        worst = max(worst, abs(lhs - rhs))
    assert worst <= 1e-12
    print(f"criterion 3: identities exact for 2..50 ways, affinity gap {worst:.2e}")


# ---------------------------------------------------------------------------
# criterion 4: analytic gradients vs central finite differences
# ---------------------------------------------------------------------------


def _random_tensors(rng, d_in, way, shots, queries) -> EpisodeTensors:
    means = rng.normal(0.0, 3.0, size=(way, d_in))
    xs, ys, xq, yq = [], [], [], []
    for i in range(way):
        xs.append(means[i] + rng.normal(size=(shots, d_in)))
        ys.extend([i] * shots)
        xq.append(means[i] + rng.normal(size=(queries, d_in)))
        yq.extend([i] * queries)
    return EpisodeTensors(
        x_support=np.concatenate(xs),
        y_support=np.array(ys),
        x_query=np.concatenate(xq),
        y_query=np.array(yq),
        way=way,
    )


def _assert_fd(analytic_flat, fun, vec0, coords, eps=1e-6, tol=1e-4):
    for i in coords:
        up = vec0.copy()
        up[i] += eps
        dn = vec0.copy()
        dn[i] -= eps
        fd = (fun(up) - fun(dn)) / (2.0 * eps)
        diff = abs(fd - analytic_flat[i])
        if diff <= 1e-8:
            continue  # below the f64 central-difference noise floor
        assert diff / (abs(fd) + abs(analytic_flat[i])) <= tol, (
            f"coord {i}: analytic {analytic_flat[i]}, central diff {fd}"
        )


def test_criterion_04_gradients_match_central_differences():
    rng = np.random.default_rng(4)
    t0 = time.perf_counter()
    for case in range(20):
        d_in = int(rng.integers(3, 7))
        dim = int(rng.integers(3, 7))
        way = int(rng.integers(2, 4))
        mode = ("fomaml", "proto")[case % 2]
        params = init_mlp(d_in, dim, rng, dropout_rate=0.0)
        assert params.n_params() + way * dim + way <= 1000
        ep = _random_tensors(rng, d_in, way, int(rng.integers(2, 5)), 3)
        cfg = AdaptConfig(inner_steps=2, inner_lr=0.05)
        head0 = head_for_mode(params, ep, mode, cfg)
        vec0 = params.to_vector()

        # the adaptation-step gradient: support loss at the initial params
        _, grads, (dw, db), _ = loss_and_grads(
            params, head0, ep.x_support, ep.y_support
        )
        flat = np.concatenate([grads[n].ravel() for n in ("w1", "b1", "w2", "b2")])

        def support_loss(vec):
            return loss_and_grads(
                params.from_vector(vec), head0, ep.x_support, ep.y_support
            )[0]

        _assert_fd(flat, support_loss, vec0, rng.choice(len(vec0), 8, replace=False))

        hvec0 = np.concatenate([head0.w.ravel(), head0.b])
        hflat = np.concatenate([dw.ravel(), db])

        def head_loss(vec):
            h = LinearHead(w=vec[: way * dim].reshape(way, dim), b=vec[way * dim :])
            return loss_and_grads(params, h, ep.x_support, ep.y_support)[0]

        _assert_fd(
            hflat, head_loss, hvec0, rng.choice(len(hvec0), 6, replace=False)
        )

        # first-order meta-gradient, inner trajectory frozen
        analytic = meta_gradient(params, [ep], cfg, mode=mode)
        mflat = np.concatenate(
            [analytic[n].ravel() for n in ("w1", "b1", "w2", "b2")]
        )
        adapted, head = inner_adapt(params, head0, ep.x_support, ep.y_support, cfg)
        delta = adapted.to_vector() - vec0

        def frozen_query_loss(vec):
            return loss_and_grads(
                params.from_vector(vec + delta), head, ep.x_query, ep.y_query
            )[0]

        _assert_fd(
            mflat, frozen_query_loss, vec0, rng.choice(len(vec0), 8, replace=False)
        )
    elapsed = time.perf_counter() - t0
    assert elapsed < 120.0
    print(f"criterion 4: 20 instances, rel err <= 1e-4, {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# criterion 5: prototype head scores rank exactly like prototype distances
# ---------------------------------------------------------------------------


def test_criterion_05_proto_head_argmax_equals_nearest_prototype():
    rng = np.random.default_rng(5)
    ties = 0
    for draw in range(1000):
        way = int(rng.integers(2, 11))
        dim = int(rng.integers(2, 17))
        shots = int(rng.integers(1, 9))
        groups = [rng.normal(size=(shots, dim)) for _ in range(way)]
        if draw % 97 == 0 and way >= 3:
            groups[1] = groups[0].copy()  # exact prototype tie, index rule applies
            ties += 1
        head = proto_head_init(groups)
        protos = np.stack([g.mean(axis=0) for g in groups])
        zq = rng.normal(size=(5, dim))
        scores = zq @ head.w.T + head.b
        d2 = ((zq[:, None, :] - protos[None, :, :]) ** 2).sum(axis=2)
        assert (scores.argmax(axis=1) == d2.argmin(axis=1)).all()
    print(f"criterion 5: 1000 draws identical, {ties} crafted tie cases included")


# ---------------------------------------------------------------------------
# criteria 6 and 7: trained trends match exact inference on synthetic data
# ---------------------------------------------------------------------------

TREND_SPEC = SynthSpec(seed=7)
TREND_TRIALS = 150
PIPELINE_SEEDS = (0, 1, 2)
TREND_EPOCHS = 20


def _baseline_level(data, feats, h, seed):
    """Train a classification embedder at level h, score an episode suite."""
    level_dag, label_map = prune_to_level(data.dag, h)
    level_pool = data.pool.relabel(label_map.classes)
    classes = sorted(level_pool.classes)
    index = {c: i for i, c in enumerate(classes)}
    xs, ys = [], []
    for c in classes:
        for sid in level_pool.support_reservoir(c):
            xs.append(feats[sid])
            ys.append(index[c])
    cfg = AdaptConfig(epochs=TREND_EPOCHS)
    params = init_mlp(
        len(xs[0]), 64, np.random.default_rng(derive_seed(seed, "gate", "init", h))
    )
    trained, _, _ = train_baseline(
        params,
        np.stack(xs),
        np.asarray(ys),
        len(classes),
        cfg,
        np.random.default_rng(derive_seed(seed, "gate", "fit", h)),
    )

    instances = max(1, math.ceil(TREND_TRIALS / len(eligible_nodes(level_dag))))
    suite = sample_eval_suite(
        level_dag,
        level_pool,
        "meta-test",
        instances,
        derive_seed(seed, "gate", "suite", h),
    )
    records = []
    for ep in suite.episodes[:TREND_TRIALS]:
        acc, _ = evaluate_episode(trained, gather_episode(ep, feats), "baseline", cfg)
        records.append(
            EvalRecord(
                node=ep.node,
                way=len(ep.classes),
                accuracy=acc,
                mode="baseline",
                span_length=level_dag.span_length(ep.node),
                way_label="native",
            )
        )
    mean = aggregate(records).suite_mean("baseline", "native")
    return mean, trained, level_dag, level_pool


def _two_way_records(trained, dag, pool, feats, seed):
    cfg = AdaptConfig(epochs=TREND_EPOCHS)
    suite = sample_eval_suite(
        dag, pool, "meta-test", 4, derive_seed(seed, "gate", "span")
    )
    records = []
    for ep in suite.episodes:
        sub = fixed_way_episode(ep, 2)
        if sub is None:
            continue
        acc, _ = evaluate_episode(trained, gather_episode(sub, feats), "baseline", cfg)
        records.append(
            EvalRecord(
                node=sub.node,
                way=2,
                accuracy=acc,
                mode="baseline",
                span_length=dag.span_length(sub.node),
                way_label="2",
            )
        )
    return records


@pytest.fixture(scope="module")
def trend():
    t0 = time.perf_counter()
    data = gen_hierarchy_gaussians(TREND_SPEC)
    feats = {sid: win.ravel() for sid, win in data.windows.items()}
    oracle = {
        h: bayes_oracle_accuracy(data, h=h, trials=TREND_TRIALS, base_seed=101)
        for h in (0, 1, 2)
    }
    runs = []
    for seed in PIPELINE_SEEDS:
        levels = {}
        span = None
        for h in (0, 1, 2):
            levels[h], trained, level_dag, level_pool = _baseline_level(
                data, feats, h, seed
            )
            if h == 0:
                span = span_bins_report(
                    aggregate(_two_way_records(trained, level_dag, level_pool, feats, seed))
                )
        runs.append({"levels": levels, "span": span})
    return {"oracle": oracle, "runs": runs, "elapsed": time.perf_counter() - t0}


def test_criterion_06_abstraction_gain_matches_exact_inference_order(trend):
    oracle = trend["oracle"]
    oracle_order = tuple(sorted((0, 1, 2), key=lambda h: oracle[h]))
    for seed, run in zip(PIPELINE_SEEDS, trend["runs"]):
        levels = run["levels"]
        assert levels[2] - levels[0] >= 5.0, f"seed {seed}: margin too small"
        trained_order = tuple(sorted((0, 1, 2), key=lambda h: levels[h]))
        assert trained_order == oracle_order, f"seed {seed}: ordering differs"
    assert trend["elapsed"] < 600.0
    print(
        "criterion 6: exact inference "
        + "/".join(f"{oracle[h]:.1f}" for h in (0, 1, 2))
        + "; trained "
        + "; ".join(
            "/".join(f"{run['levels'][h]:.1f}" for h in (0, 1, 2))
            for run in trend["runs"]
        )
        + f"; 3 of 3 seeds ordered, {trend['elapsed']:.0f}s"
    )


def test_criterion_07_two_way_accuracy_highest_for_broadest_spans(trend):
    gaps = []
    for seed, run in zip(PIPELINE_SEEDS, trend["runs"]):
        bins = [
            b
            for b in run["span"].bins
            if b.mode == "baseline" and b.way_label == "2" and b.nodes
        ]
        assert len(bins) >= 2, f"seed {seed}: need at least two occupied bins"
        assert bins[-1].mean > bins[0].mean, f"seed {seed}: broad bin not on top"
        gaps.append(bins[-1].mean - bins[0].mean)
    print(
        "criterion 7: top-over-bottom bin gaps "
        + ", ".join(f"{g:.1f}" for g in gaps)
        + " on 3 of 3 seeds"
    )


# ---------------------------------------------------------------------------
# criterion 8: montage recovery and injectivity
# ---------------------------------------------------------------------------


def test_criterion_08_montage_identity_jitter_and_injectivity():
    ref = grid_layout("ref", 27)
    twin = ElectrodeLayout("twin", ref.labels, ref.positions.copy())
    amap = align_layouts(ref, [twin], k=4)
    assert amap.reference_labels() == sorted(ref.labels)
    assert all(e["twin"] == e["ref"] for e in amap.entries)

    rng = np.random.default_rng(8)
    recovered = total = 0
    for _ in range(5):
        base = grid_layout("ref", 64)
        labels = tuple(f"T{i:03d}" for i in range(64))
        true_ref = dict(zip(labels, base.labels))
        jittered = ElectrodeLayout(
            "tgt",
            labels,
            base.positions + rng.normal(0.0, 0.1, base.positions.shape),
        )
        amap = align_layouts(base, [jittered], k=6)
        for e in amap.entries:
            total += 1
            recovered += true_ref[e["tgt"]] == e["ref"]
    rate = recovered / total
    assert rate >= 0.95

    rng = np.random.default_rng(88)
    checked = 0
    for _ in range(1000):
        n_ref = int(rng.integers(5, 30))
        n_tgt = int(rng.integers(8, 30))
        a = ElectrodeLayout(
            "ref", tuple(f"R{i:02d}" for i in range(n_ref)), rng.random((n_ref, 3))
        )
        b = ElectrodeLayout(
            "tgt", tuple(f"T{i:02d}" for i in range(n_tgt)), rng.random((n_tgt, 3))
        )
        try:
            amap = align_layouts(a, [b], k=min(8, n_tgt))
        except DataError:
            continue  # nothing resolved everywhere; no map to check
        used = [e["tgt"] for e in amap.entries]
        assert len(set(used)) == len(used)
        checked += 1
    assert checked >= 900
    print(
        f"criterion 8: identity 100%, jitter recovery {rate:.1%}, "
        f"injectivity on {checked} random layouts"
    )


# ---------------------------------------------------------------------------
# criterion 9: signal-conditioning checks
# ---------------------------------------------------------------------------


def test_criterion_09_signal_conditioning_checks():
    rate = 200
    t = np.arange(rate * 20) / rate
    tone = np.sin(2 * np.pi * 50.0 * t)[None, :]
    ripple = abs(_tone_amplitude(bandpass_zero_phase(tone, rate), 50.0, rate) - 1.0)
    assert ripple <= 0.05

    t = np.arange(rate * 120) / rate
    drift = np.sin(2 * np.pi * 0.05 * t)[None, :]
    residual = _tone_amplitude(bandpass_zero_phase(drift, rate), 0.05, rate)
    atten_db = -20.0 * np.log10(max(residual, 1e-12))
    assert atten_db >= 20.0

    rng = np.random.default_rng(9)
    data = rng.normal(size=(6, 1000))
    once = average_rereference(data)
    twice = average_rereference(once)
    idem = np.abs(twice - once).max() / np.abs(once).max()
    assert idem <= 1e-9

    rec = EegRecording(
        data=rng.normal(size=(4, 1024)),
        rate=512.0,
        channel_labels=("a", "b", "c", "d"),
    )
    out = preprocess_recording(rec)
    assert out.data.shape == (4, 400)
    assert out.rate == 200.0
    print(
        f"criterion 9: ripple {ripple:.3f}, drift attenuation {atten_db:.0f} dB, "
        f"re-reference residual {idem:.1e}, 1024@512 -> 400@200"
    )


# ---------------------------------------------------------------------------
# criterion 10: two full CLI runs are byte-identical
# ---------------------------------------------------------------------------

GATE_CFG = """\
[sampler]
min_span = 2
i_val = 1
i_test = 2

[splits]
min_occurrences = 7

[model]
embedding_dim = 16

[adapt]
epochs = 3
batch_size = 32
total_meta_steps = 4
meta_batch = 2

[synth]
branching = 3
depth = 2
sigma_level = 2.0
sigma_obs = 0.5
samples_per_leaf = 12
n_channels = 2
window_samples = 4
n_subjects = 4
"""


def _full_chain(root, cfg_path):
    base = ["--config", str(cfg_path), "--seed", "7", "--jobs", "2"]
    d = {
        name: str(root / name)
        for name in ("data", "dag0", "dag", "win", "splits", "suite", "model", "report")
    }
    steps = [
        ["synth-gen", "--out", d["data"]],
        ["build-dag", "--hypernyms", f"{d['data']}/hypernyms.tsv", "--out", d["dag0"]],
        ["filter-dag", "--dag", f"{d['dag0']}/dag.json", "--out", d["dag"]],
        [
            "preprocess", "--manifest", f"{d['data']}/manifest.csv",
            "--data-dir", d["data"], "--window-samples", "4", "--out", d["win"],
        ],
        [
            "make-splits", "--manifest", f"{d['data']}/manifest.csv",
            "--dag", f"{d['dag']}/dag.json",
            "--hypernyms", f"{d['data']}/hypernyms.tsv", "--out", d["splits"],
        ],
        [
            "sample-episodes", "--dag", f"{d['splits']}/meta-test/dag.json",
            "--rows", f"{d['splits']}/meta-test/rows.csv",
            "--split", "meta-test", "--out", d["suite"],
        ],
        [
            "train", "--mode", "baseline", "--windows", d["win"],
            "--dag", f"{d['splits']}/meta-train/dag.json",
            "--rows", f"{d['splits']}/meta-train/rows.csv", "--out", d["model"],
        ],
        [
            "evaluate", "--suite", f"{d['suite']}/episodes.jsonl",
            "--checkpoint", f"{d['model']}/model.hmlc1", "--windows", d["win"],
            "--dag", f"{d['splits']}/meta-test/dag.json", "--out", d["report"],
        ],
    ]
    for step in steps:
        assert main([step[0], *base, *step[1:]]) == 0, step
    return d


def test_criterion_10_cli_runs_are_byte_identical(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(GATE_CFG)
    a = _full_chain(tmp_path / "a", cfg)
    b = _full_chain(tmp_path / "b", cfg)
    compared = [
        ("suite", "episodes.jsonl"),
        ("model", "model.hmlc1"),
        ("model", "train_log.csv"),
        ("report", "report.json"),
        ("report", "node.csv"),
        ("report", "suite.csv"),
        ("report", "suite.png"),
        ("win", "windows.heeg1"),
        ("splits", "splits.json"),
    ]
    for key, name in compared:
        pa = open(f"{a[key]}/{name}", "rb").read()
        pb = open(f"{b[key]}/{name}", "rb").read()
        assert pa == pb, f"{key}/{name} differs between runs"
    print(f"criterion 10: {len(compared)} artifacts byte-identical across two runs")


# ---------------------------------------------------------------------------
# criterion 11: default configuration carries the reference constants
# ---------------------------------------------------------------------------


def test_criterion_11_default_config_matches_reference_constants():
    cfg = RunConfig()
    assert cfg.sampler.way_cap == 10
    assert cfg.sampler.support_cap == 100
    assert cfg.sampler.min_span == 5
    assert cfg.sampler.i_val == 5
    assert cfg.sampler.i_test == 10
    assert cfg.adapt.inner_lr == 0.01
    assert cfg.adapt.inner_steps == 5
    assert cfg.adapt.outer_lr == 3e-4
    assert cfg.adapt.meta_batch == 4
    assert cfg.dropout == 0.05
    print("criterion 11: all ten default constants match")
