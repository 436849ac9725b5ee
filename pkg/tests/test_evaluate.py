"""Error-rate scoring, report aggregation, probes, embedding export."""

from __future__ import annotations

import json
from dataclasses import replace

import numpy as np
import pytest

from accentasr.corpus import (SyntheticSpec, generate_synthetic_corpus,
                              read_features)
from accentasr.errors import ValidationError
from accentasr.evaluate import (ProbeConfig, WerCounts, collect_embeddings,
                                discriminator_accuracy, evaluate,
                                export_embeddings, probe_accent,
                                validation_accuracy, wer)
from accentasr.model import Architecture, ModelBundle, TokenInventory, build_targets
from accentasr.tape import Tensor, no_grad
from oracles import edit_distance_oracle

SPEC = SyntheticSpec(num_accents=3, vocab_size=5, feature_dim=6,
                     tokens_per_utt=(2, 4), frames_per_token=(2, 3), seed=23)


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("evalcorpus")
    return generate_synthetic_corpus(SPEC, 24, root / "eval.tsv")


def small_bundle(corpus, seed=0):
    arch = Architecture(feature_dim=corpus.feature_dim, num_accents=3,
                        invariant_hidden=6, invariant_layers=1, specific_hidden=5,
                        specific_layers=1, disc_hidden=5, recon_hidden=6,
                        recon_layers=1, encoder_hidden=6, encoder_layers=1,
                        decoder_hidden=6, decoder_layers=1, attention_dim=5,
                        token_embed_dim=5, accent_embed_dim=3, dropout=0.0)
    return ModelBundle(arch, TokenInventory.from_units(corpus.units), seed)


# WER ------------------------------------------------------------------------


def test_wer_matches_brute_force_on_random_pairs():
    rng = np.random.default_rng(99)
    alphabet = [f"w{i}" for i in range(4)]
    for _ in range(1000):
        ref = tuple(rng.choice(alphabet, size=rng.integers(1, 9)))
        hyp = tuple(rng.choice(alphabet, size=rng.integers(0, 9)))
        counts = wer(list(ref), list(hyp))
        assert counts.errors == edit_distance_oracle(ref, hyp)
        # alignment bookkeeping identities
        matches_ref = len(ref) - counts.substitutions - counts.deletions
        matches_hyp = len(hyp) - counts.substitutions - counts.insertions
        assert matches_ref == matches_hyp >= 0
        assert counts.ref_tokens == len(ref)


def test_wer_known_cases():
    assert wer("a b c".split(), "a b c".split()).errors == 0
    one_sub = wer("a b c".split(), "a x c".split())
    assert (one_sub.substitutions, one_sub.insertions, one_sub.deletions) == (1, 0, 0)
    assert one_sub.wer == pytest.approx(1 / 3)
    empty_hyp = wer("a b c".split(), [])
    assert (empty_hyp.deletions, empty_hyp.errors) == (3, 3)
    long_hyp = wer("a".split(), "a b c".split())
    assert long_hyp.wer == pytest.approx(2.0)  # may exceed 1
    with pytest.raises(ValidationError, match="empty"):
        wer([], "x y".split())  # undefined denominator


def test_wer_counts_add():
    total = WerCounts()
    total.add(wer("a b".split(), "a".split()))
    total.add(wer("c".split(), "c d".split()))
    assert (total.substitutions, total.insertions, total.deletions) == (0, 1, 1)
    assert total.ref_tokens == 3 and total.utterances == 2
    assert total.wer == pytest.approx(2 / 3)


# Report ------------------------------------------------------------------------


def craft_hyps(corpus):
    """Per accent: accent 0 exact, accent 1 first token substituted,
    accent 2 one token appended."""
    hyps = {}
    for rec in corpus.records:
        toks = rec.tokens[:]
        if rec.accent_id == 1:
            toks[0] = "zz"
        elif rec.accent_id == 2:
            toks.append("zz")
        hyps[rec.utt_id] = " ".join(toks)
    return hyps


def test_evaluate_per_accent_and_overall(corpus):
    hyps = craft_hyps(corpus)
    report = evaluate(corpus, hyps)
    by_accent = {name: c for name, c in report.per_accent.items()}
    n = {a: sum(1 for r in corpus.records if r.accent_id == a) for a in range(3)}
    assert by_accent[corpus.accent_names[0]].errors == 0
    assert by_accent[corpus.accent_names[1]].substitutions == n[1]
    assert by_accent[corpus.accent_names[2]].insertions == n[2]
    total = WerCounts()
    for c in report.per_accent.values():
        total.add(c)
    assert report.overall.errors == total.errors
    assert report.overall.ref_tokens == total.ref_tokens
    assert report.failed == [] and report.warnings == []


def test_evaluate_missing_and_empty_hypotheses(corpus):
    hyps = craft_hyps(corpus)
    victims = sorted(hyps)[:2]
    del hyps[victims[0]]
    hyps[victims[1]] = "   "
    report = evaluate(corpus, hyps)
    assert report.failed == victims
    by_id = {r.utt_id: r for r in corpus.records}
    expected_deletions = sum(len(by_id[v].tokens) for v in victims)
    assert report.overall.deletions >= expected_deletions


def test_evaluate_is_order_independent(corpus):
    hyps = craft_hyps(corpus)
    forward = evaluate(corpus, hyps).to_dict()
    backward_hyps = dict(reversed(list(hyps.items())))
    shuffled = replace(corpus, records=list(reversed(corpus.records)))
    assert evaluate(shuffled, backward_hyps).to_dict() == forward


def test_evaluate_strips_accent_tokens(corpus):
    hyps = {r.utt_id: "<acc:a00> " + r.transcript for r in corpus.records}
    report = evaluate(corpus, hyps)
    assert report.overall.errors == 0


def test_evaluate_group_split(corpus):
    hyps = craft_hyps(corpus)
    report = evaluate(corpus, hyps, group_accents={0})
    assert report.group_accents == (0,)
    assert report.group.errors == 0
    assert report.rest.errors == report.overall.errors
    assert report.group.ref_tokens + report.rest.ref_tokens == \
        report.overall.ref_tokens
    with pytest.raises(ValidationError, match="out of range"):
        evaluate(corpus, hyps, group_accents={7})


def test_evaluate_requires_transcripts(corpus):
    bare = replace(corpus, records=[replace(corpus.records[0], transcript=None)])
    with pytest.raises(ValidationError, match="transcript"):
        evaluate(bare, {})


def test_report_save_and_warning(tmp_path, corpus):
    only_two = replace(corpus,
                       records=[r for r in corpus.records if r.accent_id != 2])
    report = evaluate(only_two, craft_hyps(only_two))
    assert any("no test utterances" in w for w in report.warnings)
    assert corpus.accent_names[2] not in report.per_accent
    out = tmp_path / "report.json"
    report.save(out)
    loaded = json.loads(out.read_text())
    assert loaded["units"] == "whitespace tokens"
    assert loaded["overall"]["ref_tokens"] == report.overall.ref_tokens
    report.save(out)
    first = out.read_bytes()
    report.save(out)
    assert out.read_bytes() == first


# Probes --------------------------------------------------------------------------


def gaussian_rows(n, d, separation, seed, classes=2):
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, classes, n)
    centers = rng.standard_normal((classes, d)) * separation
    return centers[labels] + rng.standard_normal((n, d)), labels


def test_probe_separable_data():
    rows, labels = gaussian_rows(400, 8, separation=4.0, seed=1)
    result = probe_accent(rows, labels, ProbeConfig())
    assert result.accuracy >= 0.95
    assert result.classes == 2
    assert result.train_rows + result.test_rows == 400


def test_probe_shuffled_labels_score_near_chance():
    rows, labels = gaussian_rows(600, 8, separation=4.0, seed=2, classes=3)
    shuffled = np.random.default_rng(3).permutation(labels)
    result = probe_accent(rows, shuffled, ProbeConfig())
    assert result.accuracy <= result.chance + 0.1


def test_probe_chance_is_majority_prior():
    rows, _ = gaussian_rows(200, 4, separation=0.0, seed=4)
    labels = np.array([0] * 150 + [1] * 50)
    result = probe_accent(rows, labels, ProbeConfig())
    # stratified split keeps the 3:1 prior in the test fold
    assert result.chance == pytest.approx(0.75, abs=0.05)
    assert result.accuracy >= 0.5


def test_probe_is_deterministic():
    rows, labels = gaussian_rows(300, 6, separation=2.0, seed=5, classes=3)
    a = probe_accent(rows, labels, ProbeConfig())
    b = probe_accent(rows, labels, ProbeConfig())
    assert a == b
    c = probe_accent(rows, labels, ProbeConfig(seed=9))
    assert c.classes == a.classes  # different split, same task shape


def test_probe_input_validation():
    rows = np.zeros((4, 3))
    with pytest.raises(ValidationError):
        probe_accent(rows, np.zeros(3, dtype=np.int64), ProbeConfig())
    with pytest.raises(ValidationError):
        probe_accent(rows, np.zeros(4, dtype=np.int64), ProbeConfig())  # one class
    with pytest.raises(ValidationError):
        ProbeConfig(train_fraction=1.5)


# Embeddings ------------------------------------------------------------------------


def test_collect_embeddings_shapes_and_labels(corpus):
    bundle = small_bundle(corpus)
    total_frames = sum(corpus.feature_array(r).shape[0] for r in corpus.records)
    for which, dim in (("invariant", bundle.arch.invariant_hidden),
                       ("specific", bundle.arch.specific_hidden),
                       ("raw", corpus.feature_dim)):
        rows, labels, ids = collect_embeddings(bundle, corpus, which)
        assert rows.shape == (total_frames, dim)
        assert labels.shape == (total_frames,)
        assert len(ids) == total_frames
    with pytest.raises(ValidationError, match="bogus"):
        collect_embeddings(bundle, corpus, "bogus")


def test_collect_raw_returns_features(corpus):
    bundle = small_bundle(corpus)
    rows, _, ids = collect_embeddings(bundle, corpus, "raw")
    first = corpus.records[0]
    t = corpus.feature_array(first).shape[0]
    got = rows[np.array([i == first.utt_id for i in ids])]
    np.testing.assert_allclose(got, corpus.feature_array(first), atol=1e-12)
    assert t == got.shape[0]


def test_pooled_embeddings_are_frame_means(corpus):
    bundle = small_bundle(corpus)
    frames, _, frame_ids = collect_embeddings(bundle, corpus, "invariant")
    pooled, labels, pooled_ids = collect_embeddings(bundle, corpus, "invariant",
                                                    pooled=True)
    assert pooled.shape[0] == len(corpus.records) == len(pooled_ids)
    frame_ids = np.array(frame_ids)
    for row, utt_id in zip(pooled, pooled_ids):
        np.testing.assert_allclose(row, frames[frame_ids == utt_id].mean(axis=0),
                                   atol=1e-12)
    by_id = {r.utt_id: r.accent_id for r in corpus.records}
    assert [by_id[i] for i in pooled_ids] == list(labels)


def test_export_embeddings_round_trip(tmp_path, corpus):
    bundle = small_bundle(corpus)
    out = tmp_path / "emb.aipf"
    n = export_embeddings(bundle, corpus, "specific", out)
    assert n == len(corpus.records)
    rows = read_features(out)
    assert rows.shape == (n, bundle.arch.specific_hidden)
    assert rows.dtype == np.float32
    sidecar = (tmp_path / "emb.aipf.labels").read_text().splitlines()
    assert len(sidecar) == n
    first_id, first_accent = sidecar[0].split("\t")
    assert any(r.utt_id == first_id and r.accent_id == int(first_accent)
               for r in corpus.records)
    export_embeddings(bundle, corpus, "specific", out)
    once = out.read_bytes()
    export_embeddings(bundle, corpus, "specific", out)
    assert out.read_bytes() == once


# Model-level diagnostics --------------------------------------------------------------


def test_validation_accuracy_matches_hand_count(corpus):
    bundle = small_bundle(corpus)
    correct = total = 0
    with no_grad():
        for rec in corpus.records:
            feats = corpus.feature_array(rec)
            targets = np.array([build_targets(bundle.inventory, rec.transcript,
                                              rec.accent_id)])
            h = bundle.encode_invariant(Tensor(feats[None]))
            enc = bundle.recognizer_encode(h)
            posts, _ = bundle.recognize_teacher_forced(
                enc, np.ones((1, feats.shape[0])), targets)
            pred = posts.data[0].argmax(axis=-1)
            correct += int((pred == targets[0, 1:]).sum())
            total += targets.shape[1] - 1
    assert validation_accuracy(bundle, corpus) == pytest.approx(correct / total)


def test_validation_accuracy_requires_transcripts(corpus):
    bundle = small_bundle(corpus)
    silent = replace(corpus, records=[replace(r, transcript=None)
                                      for r in corpus.records])
    with pytest.raises(ValidationError, match="transcribed"):
        validation_accuracy(bundle, silent)


def test_discriminator_accuracy_bounds(corpus):
    acc = discriminator_accuracy(small_bundle(corpus), corpus)
    assert 0.0 <= acc <= 1.0
