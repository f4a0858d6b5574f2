"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -s`` to see the per-criterion
lines.  Tolerances are pinned here exactly as stated; nothing is deferred
to later calibration.
"""

import json
import math
import sys
import time
from contextlib import contextmanager

import numpy as np
import pytest

import malformed_fixtures
import naive_refs as ref
from massrank import (
    BiasedFamilySpec,
    CandidateRecord,
    ColorSample,
    FoilSample,
    ParetoPoint,
    QueryRecord,
    RetrievalDataset,
    ScoreMatrix,
    TableFormatError,
    WinogroundSample,
    bias_at_k,
    color_bias_stats,
    decompose_loglik,
    exact_conditional,
    exact_marginal,
    exact_pmi,
    export_family,
    export_tables,
    load_score_matrix,
    load_table,
    make_biased_family,
    mass_score,
    mc_marginal_avg_log,
    pairwise_ranking_accuracy,
    pareto_frontier,
    rank,
    recall_at_k,
    random_model,
    sample_marginal,
    sample_texts,
    tl_score,
    two_stage_rerank,
    winoground_scores,
)
from massrank.cli import main as cli_main
from massrank.toy import ToyModel


@contextmanager
def criterion(number: int, name: str):
    try:
        yield
    except BaseException:
        print(f"ACCEPTANCE {number} {name}: FAIL")
        raise
    print(f"ACCEPTANCE {number} {name}: PASS")


def _pick_model_shape(rng) -> tuple[int, int, int]:
    """(images, vocab, max_len) within the stated bounds, row count capped."""
    n_images = int(rng.integers(1, 7))
    max_len = int(rng.integers(1, 6))
    vocab = int(rng.integers(2, 13))
    while sum((vocab - 1) ** k for k in range(max_len)) > 500:
        if vocab > 3:
            vocab -= 1
        else:
            max_len -= 1
    return n_images, vocab, max_len


def test_criterion_1_oracle_pmi_equivalence():
    """mass over exported (conditional, null-by-construction) == exact PMI."""
    with criterion(1, "oracle PMI equivalence"):
        started = time.perf_counter()
        rng = np.random.default_rng(101)
        n_models = 100
        checked = 0
        for i in range(n_models):
            n_images, vocab, max_len = _pick_model_shape(rng)
            model = random_model(n_images, vocab, max_len, seed=int(rng.integers(0, 2**31)))
            captions = sample_texts(model, 3, seed=i)
            table = export_tables(model, captions)
            for j, tokens in enumerate(captions):
                tid = f"c{j:03d}"
                null_row = table.conditional("null", tid)
                for image in model.images:
                    got = mass_score(table.conditional(image, tid), null_row).value
                    want = exact_pmi(model, image, tokens)
                    assert abs(got - want) < 1e-12
                    checked += 1
        elapsed = time.perf_counter() - started
        assert checked >= n_models
        assert elapsed < 10.0, f"took {elapsed:.2f}s, budget 10s"


def test_criterion_2_decomposition_identity():
    """linguistic + association == total conditional log-likelihood (1e-12)."""
    with criterion(2, "decomposition identity"):
        rng = np.random.default_rng(202)
        pairs = 0
        while pairs < 10_000:
            n_images, vocab, max_len = _pick_model_shape(rng)
            model = random_model(n_images, vocab, max_len, seed=int(rng.integers(0, 2**31)))
            for tokens in sample_texts(model, 25, seed=pairs):
                for image in model.images:
                    cond = exact_conditional(model, image, tokens)
                    marg = exact_marginal(model, tokens)
                    linguistic, association = decompose_loglik(cond, marg)
                    assert abs((linguistic + association) - math.fsum(cond)) < 1e-12
                    pairs += 1


def test_criterion_3_debiasing_property():
    """MASS pairwise accuracy 1.0 and TL(prob-mean) 0.0 on 100 biased instances."""
    with criterion(3, "debiasing property"):
        instances = make_biased_family(BiasedFamilySpec(0.9, 100, seed=33))
        table, foils = export_family(instances)
        queries = table.image_ids()
        candidates = table.text_ids()
        mass_entries = {}
        tl_entries = {}
        for image in queries:
            for text in candidates:
                cond = table.conditional(image, text)
                null_row = table.conditional("null", text)
                mass_entries[(image, text)] = mass_score(cond, null_row).value
                tl_entries[(image, text)] = tl_score(cond, "prob-mean").value
        mass_matrix = ScoreMatrix.from_entries(mass_entries, queries, candidates)
        tl_matrix = ScoreMatrix.from_entries(tl_entries, queries, candidates)
        assert pairwise_ranking_accuracy(mass_matrix, foils) == 1.0
        assert pairwise_ranking_accuracy(tl_matrix, foils) == 0.0


def _mc_fixture_model() -> ToyModel:
    """Six images sharing a uniform first-token row, so the uniform-draw
    mixture estimator is consistent for the enumerated marginal."""
    rng = np.random.default_rng(404)
    vocab = ("a", "b", "c", "</s>")
    first = np.array([1 / 3, 1 / 3, 1 / 3, 0.0])
    transitions = {}
    for i in range(6):
        rows = {(): first.copy()}
        for tok in ("a", "b", "c"):
            row = rng.dirichlet(np.ones(4))
            row = np.maximum(row, 1e-6)
            rows[(tok,)] = row / row.sum()
        transitions[f"img{i}"] = rows
    return ToyModel(vocab, "</s>", tuple(f"img{i}" for i in range(6)),
                    np.full(6, 1 / 6), transitions, 2)


def test_criterion_4_monte_carlo_behavior():
    """Median |error| strictly decreases over N in {10,100,1000,10000};
    Jensen (avg-log <= log-mean-exp) holds position-wise on every batch."""
    with criterion(4, "Monte-Carlo behavior"):
        model = _mc_fixture_model()
        caption = ("a", "b")
        table = export_tables(model, [caption])
        exact = exact_marginal(model, caption)
        n_values = (10, 100, 1000, 10_000)
        medians = []
        for n in n_values:
            errors = []
            for seed in range(50):
                est = sample_marginal(table, "c000", "mc-log-mean-exp", n, seed)
                avg = sample_marginal(table, "c000", "mc-avg-log", n, seed)
                assert np.all(avg.logp <= est.logp + 1e-12)  # Jensen, every batch
                errors.append(float(np.max(np.abs(est.logp - exact))))
            medians.append(float(np.median(errors)))
        for a, b in zip(medians, medians[1:]):
            assert b < a, f"medians not strictly decreasing: {medians}"


def _random_small_dataset(rng):
    n_q = int(rng.integers(1, 21))
    n_c = int(rng.integers(2, 51))
    genders = ("masculine", "feminine", "neutral", "unknown", "both")
    cands = tuple(
        CandidateRecord(f"c{j:02d}", genders[int(rng.integers(0, 5))]) for j in range(n_c)
    )
    queries = tuple(
        QueryRecord(
            f"q{i:02d}",
            frozenset(
                f"c{int(j):02d}"
                for j in rng.choice(n_c, int(rng.integers(1, min(4, n_c) + 1)), replace=False)
            ),
        )
        for i in range(n_q)
    )
    ds = RetrievalDataset("text-to-image", queries, cands)
    matrix = ScoreMatrix(
        tuple(q.id for q in queries),
        tuple(c.id for c in cands),
        rng.uniform(-2, 2, (n_q, n_c)),
    )
    return ds, matrix


def test_criterion_5_metric_oracle_equivalence():
    """Every metric matches the independent naive reference exactly on 1000
    randomized small datasets; runtime < 60 s."""
    with criterion(5, "metric oracle equivalence"):
        started = time.perf_counter()
        rng = np.random.default_rng(505)
        for trial in range(1000):
            ds, matrix = _random_small_dataset(rng)
            scores = {
                (q, c): matrix.score(q, c) for q in matrix.queries for c in matrix.candidates
            }
            queries = [(q.id, set(q.gold), q.gender) for q in ds.queries]
            cands = [(c.id, c.gender) for c in ds.candidates]
            k = int(rng.integers(1, min(8, len(cands) + 1)))
            use_two_stage = trial % 4 == 0
            if use_two_stage:
                first = ScoreMatrix(
                    matrix.queries,
                    matrix.candidates,
                    rng.uniform(-2, 2, matrix.values.shape),
                )
                shortlist = int(rng.integers(k, len(matrix.candidates) + 1))
                first_dict = {
                    (q, c): first.score(q, c) for q in first.queries for c in first.candidates
                }
                two_stage = (first, shortlist)
            else:
                first_dict = shortlist = None
                two_stage = None

            assert recall_at_k(matrix, ds, k, two_stage) == ref.naive_recall(
                scores, queries, cands, k, first_dict, shortlist
            )
            for absolute in (False, True):
                for policy in ("both", "neither"):
                    assert bias_at_k(
                        matrix, ds, k, absolute, two_stage, policy
                    ) == ref.naive_bias(
                        scores, queries, cands, k, absolute, first_dict, shortlist, policy
                    )

            # Winoground-style samples over a dedicated even-sized pool.
            n_w = int(rng.integers(1, 11))
            w_queries = tuple(f"i{j}" for j in range(2 * n_w))
            w_cands = tuple(f"t{j}" for j in range(2 * n_w))
            w_matrix = ScoreMatrix(w_queries, w_cands, rng.uniform(-1, 1, (2 * n_w, 2 * n_w)))
            w_scores = {(q, c): w_matrix.score(q, c) for q in w_queries for c in w_cands}
            samples = [
                WinogroundSample(f"s{j}", f"i{2*j}", f"i{2*j+1}", f"t{2*j}", f"t{2*j+1}")
                for j in range(n_w)
            ]
            got = winoground_scores(w_matrix, samples)
            want = ref.naive_winoground(w_scores, [(s.i0, s.i1, s.c0, s.c1) for s in samples])
            assert (got["text"], got["image"], got["group"]) == (
                want["text"], want["image"], want["group"],
            )

            foils = [
                FoilSample(f"i{2*j}", f"t{2*j}", f"t{2*j+1}", category="x")
                for j in range(n_w)
            ]
            assert pairwise_ranking_accuracy(w_matrix, foils) == ref.naive_pairwise(
                w_scores, [(f.image, f.caption_true, f.caption_foil) for f in foils]
            )

            n_color = int(rng.integers(1, 15))
            color = [
                ColorSample(
                    f"img{j}",
                    f"fruit{int(rng.integers(0, 4))}",
                    float(rng.uniform(-1, 1)),
                    float(rng.uniform(-1, 1)),
                )
                for j in range(n_color)
            ]
            got_c = color_bias_stats(color)
            want_c = ref.naive_color([(s.fruit_type, s.score_true, s.score_adv) for s in color])
            assert got_c["biased_sample_ratio"] == want_c["biased_sample_ratio"]
            assert got_c["biased_type_ratio"] == want_c["biased_type_ratio"]
            assert got_c["per_type_mean"] == want_c["per_type_mean"]

            n_points = int(rng.integers(1, 12))
            points = [
                ParetoPoint(f"p{j}", float(rng.uniform(0, 1)), float(rng.uniform(-1, 1)))
                for j in range(n_points)
            ]
            got_labels = {p.label for p in pareto_frontier(points)}
            want_labels = ref.naive_pareto([(p.label, p.recall, p.bias) for p in points])
            assert got_labels == want_labels
        elapsed = time.perf_counter() - started
        assert elapsed < 60.0, f"took {elapsed:.2f}s, budget 60s"


def test_criterion_6_chance_level_calibration():
    """Uniform-random scorer over 1e5 synthetic samples: text/image within
    3 sigma of 1/4, group within 3 sigma of 1/6."""
    with criterion(6, "chance-level calibration"):
        rng = np.random.default_rng(606)
        total = 100_000
        batch = 500
        text_correct = image_correct = group_correct = 0
        for _ in range(total // batch):
            queries = tuple(f"i{j}" for j in range(2 * batch))
            cands = tuple(f"c{j}" for j in range(2 * batch))
            matrix = ScoreMatrix(
                queries, cands, rng.uniform(0.0, 1.0, (2 * batch, 2 * batch))
            )
            samples = [
                WinogroundSample(f"s{j}", f"i{2*j}", f"i{2*j+1}", f"c{2*j}", f"c{2*j+1}")
                for j in range(batch)
            ]
            got = winoground_scores(matrix, samples)
            text_correct += got["text_correct"]
            image_correct += got["image_correct"]
            group_correct += got["group_correct"]
        sigma_quarter = math.sqrt(0.25 * 0.75 / total)
        sigma_sixth = math.sqrt((1 / 6) * (5 / 6) / total)
        assert abs(text_correct / total - 0.25) < 3 * sigma_quarter
        assert abs(image_correct / total - 0.25) < 3 * sigma_quarter
        assert abs(group_correct / total - 1 / 6) < 3 * sigma_sixth


def test_criterion_7_argsort_invariance():
    """Rankings and all matrix-consuming metrics unchanged under x->2x+1
    and x->tanh(x); exact equality."""
    with criterion(7, "argsort invariance"):
        rng = np.random.default_rng(707)
        for trial in range(100):
            n_q, n_c = 8, 16
            queries = tuple(f"q{i:02d}" for i in range(n_q))
            cands = tuple(f"c{j:02d}" for j in range(n_c))
            values = rng.uniform(-2.0, 2.0, (n_q, n_c))
            matrix = ScoreMatrix(queries, cands, values)
            genders = ("masculine", "feminine", "neutral")
            ds = RetrievalDataset(
                "text-to-image",
                tuple(
                    QueryRecord(q, frozenset({cands[int(rng.integers(0, n_c))]}))
                    for q in queries
                ),
                tuple(CandidateRecord(c, genders[j % 3]) for j, c in enumerate(cands)),
            )
            samples = [
                WinogroundSample(f"s{j}", queries[2 * j], queries[2 * j + 1],
                                 cands[2 * j], cands[2 * j + 1])
                for j in range(n_q // 2)
            ]
            foils = [
                FoilSample(queries[j], cands[2 * j], cands[2 * j + 1]) for j in range(n_q // 2)
            ]
            first = ScoreMatrix(queries, cands, rng.uniform(-2.0, 2.0, (n_q, n_c)))

            def snapshot(m: ScoreMatrix):
                return {
                    "rank": [tuple(rank(m, q, 5).ids()) for q in queries],
                    "two_stage": [
                        tuple(two_stage_rerank(first, m, q, shortlist=8, k=3).ids())
                        for q in queries
                    ],
                    "recall": [recall_at_k(m, ds, k) for k in (1, 3, 5)],
                    "bias": [bias_at_k(m, ds, k, absolute) for k in (1, 3, 5)
                             for absolute in (False, True)],
                    "wino": winoground_scores(m, samples),
                    "pairwise": pairwise_ranking_accuracy(m, foils),
                }

            base = snapshot(matrix)
            for transform in (lambda x: 2.0 * x + 1.0, np.tanh):
                other = ScoreMatrix(queries, cands, transform(values))
                assert snapshot(other) == base


def test_criterion_8_cli_determinism(tmp_path):
    """Byte-identical outputs for every CLI command under a fixed seed
    across --jobs in {1, 4, 8} (and across reruns where --jobs is N/A)."""
    with criterion(8, "CLI determinism"):
        def run(*argv):
            code = cli_main([str(a) for a in argv])
            assert code == 0, f"command failed: {argv}"

        # oracle gen / export / family: no --jobs; rerun twice.
        hashes = []
        for attempt in (1, 2):
            d = tmp_path / f"att{attempt}"
            d.mkdir()
            run("oracle", "gen", "--images", 4, "--vocab", 5, "--max-len", 3,
                "--seed", 11, d / "model.json")
            run("oracle", "export", "--sample-captions", 5, "--seed", 3,
                "--pairs-out", d / "pairs.jsonl", d / "model.json", d / "table.jsonl")
            run("oracle", "family", "--strength", 0.9, "--n", 8, "--seed", 21, d / "fam")
            hashes.append(
                [
                    (d / name).read_bytes()
                    for name in (
                        "model.json", "table.jsonl", "table.emb.jsonl", "table.itm.jsonl",
                        "pairs.jsonl", "fam/table.jsonl", "fam/pairs.jsonl",
                        "fam/foils.jsonl", "fam/meta.json",
                    )
                ]
            )
        assert hashes[0] == hashes[1]

        base = tmp_path / "att1"
        # score across --jobs (same input paths for every run).
        score_outputs = {}
        for jobs in (1, 4, 8):
            mass_out = tmp_path / f"mass-{jobs}.jsonl"
            run("score", "--similarity", "mass", "--marginal", "mc-log-mean-exp",
                "--mc-n", 16, "--seed", 9, "--jobs", jobs,
                base / "table.jsonl", base / "pairs.jsonl", mass_out)
            tl_out = tmp_path / f"tl-{jobs}.jsonl"
            run("score", "--similarity", "tl", "--jobs", jobs,
                base / "fam/table.jsonl", base / "fam/pairs.jsonl", tl_out)
            score_outputs.setdefault("mass", set()).add(mass_out.read_bytes())
            score_outputs.setdefault("tl", set()).add(tl_out.read_bytes())
        assert all(len(v) == 1 for v in score_outputs.values()), "score varies with --jobs"

        # eval across --jobs, over identical input files.
        mass_scores = tmp_path / "mass-1.jsonl"
        tl_scores = tmp_path / "tl-1.jsonl"
        matrix, _ = load_score_matrix(mass_scores)
        manifest = tmp_path / "retr.json"
        manifest.write_text(json.dumps({
            "direction": "image-to-text",
            "queries": [
                {"id": q, "gold": [matrix.candidates[0]]} for q in matrix.queries
            ],
            "candidates": [{"id": c} for c in matrix.candidates],
        }), encoding="utf-8")
        eval_outputs = {}
        for jobs in (1, 4, 8):
            eval_out = tmp_path / f"eval-{jobs}.json"
            run("eval", "--metric", "retrieval", "--k", 1, "--k", 2, "--jobs", jobs,
                mass_scores, manifest, eval_out)
            eval_outputs.setdefault("retrieval", set()).add(eval_out.read_bytes())
            foil_out = tmp_path / f"foil-{jobs}.json"
            run("eval", "--metric", "foil", "--jobs", jobs,
                tl_scores, base / "fam/foils.jsonl", foil_out)
            eval_outputs.setdefault("foil", set()).add(foil_out.read_bytes())
        assert all(len(v) == 1 for v in eval_outputs.values()), "eval varies with --jobs"

        # pareto: rerun twice on the same inputs.
        doc = tmp_path / "eval-1.json"
        csvs = []
        for attempt in (1, 2):
            out_csv = tmp_path / f"pareto-{attempt}.csv"
            run("pareto", "--k", 1, doc, out_csv)
            csvs.append(out_csv.read_bytes())
        assert csvs[0] == csvs[1]

        # adapter-probe: PASS output (identity digest) is stable.
        import io
        from contextlib import redirect_stdout

        probe_out = []
        for attempt in (1, 2):
            buf = io.StringIO()
            with redirect_stdout(buf):
                run("adapter-probe", "--adapter",
                    f"proc:{sys.executable} -m massrank.echo_adapter")
            probe_out.append(buf.getvalue())
        assert probe_out[0] == probe_out[1] and probe_out[0].startswith("PASS")


def test_criterion_9_format_robustness(tmp_path):
    """Each of the >= 20 malformed fixtures is rejected with the documented
    error class (TableFormatError)."""
    with criterion(9, "format robustness"):
        assert len(malformed_fixtures.MALFORMED) >= 20
        for name, kind, content in malformed_fixtures.MALFORMED:
            d = tmp_path / name
            d.mkdir()
            table_path = d / "table.jsonl"
            emb_path = itm_path = None
            if kind == "table":
                table_path.write_text(content, encoding="utf-8")
            else:
                table_path.write_text(malformed_fixtures.VALID_TABLE, encoding="utf-8")
                side = d / f"{kind}.jsonl"
                side.write_text(content, encoding="utf-8")
                if kind == "emb":
                    emb_path = side
                else:
                    itm_path = side
            with pytest.raises(TableFormatError):
                load_table(table_path, embeddings_path=emb_path, itm_path=itm_path)
