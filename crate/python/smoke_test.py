#!/usr/bin/env python3
"""End-to-end smoke test for the duplexflat_py extension module.

Builds the cdylib with cargo (unless DUPLEXFLAT_SKIP_BUILD is set), copies it
next to this script under the importable name, then drives a miniature
pipeline: codec round trip, simulation, flattening, round-trip validation,
n-gram training, streaming inference, and the metrics/judge helpers.
"""

import json
import os
import pathlib
import shutil
import subprocess
import sys

ROOT = pathlib.Path(__file__).resolve().parent.parent


def build_and_import():
    if not os.environ.get("DUPLEXFLAT_SKIP_BUILD"):
        subprocess.run(
            ["cargo", "build", "-p", "duplexflat-py", "--release"],
            cwd=ROOT,
            check=True,
        )
    built = ROOT / "target" / "release" / "libduplexflat_py.so"
    target = pathlib.Path(__file__).resolve().parent / "duplexflat_py.so"
    shutil.copyfile(built, target)
    sys.path.insert(0, str(target.parent))
    import duplexflat_py

    return duplexflat_py


def main():
    dx = build_and_import()

    layout = dx.VocabLayout()
    assert layout.total_size() == 256 + 4096 + 10
    assert layout.classify(0) == ("text", 0)
    assert layout.classify(256) == ("speech", 0)
    assert layout.classify(4352) == ("special", "ASR")
    assert layout.special_id("TTS") == 4353
    print("vocab: ok")

    codec = dx.CodecMap(layout, group_size=2, seed=7)
    text = layout.encode_text("hello world")
    speech = codec.encode(text)
    assert len(speech) == 2 * len(text)
    assert codec.decode(speech) == text
    print("codec: round trip ok")

    verdict = dx.filter_script([("user", "hi there"), ("assistant", "hello")])
    assert verdict == "accept"
    rejected = dx.filter_script([("user", " ".join(["w"] * 201)), ("assistant", "x")])
    assert rejected == "reject:WordCount"
    print("filter: ok")

    turns = [
        ("user", "how are you today"),
        ("assistant", "quite well thank you"),
        ("user", "good to hear"),
        ("assistant", "indeed"),
    ]
    timeline = dx.simulate(codec, turns, seed=3, interruption_prob=1.0)
    kinds = [kind for kind, _ in timeline.events]
    assert "UserTurnEnd" in kinds and "InterruptionOnset" in kinds
    assert len(timeline.user_lane) == len(timeline.assistant_lane)
    print(f"simulate: {len(timeline.user_lane)} slots, events {kinds}")

    sample = dx.flatten_three_stream(layout, timeline)
    assert len(sample) % (2 * 10 + 2) == 0
    fmt, user_lane, text_lane, assistant_lane = dx.unflatten(layout, sample)
    assert fmt == "3stream"
    n = len(timeline.user_lane)
    assert user_lane[:n] == timeline.user_lane
    silent_text = layout.silent_text()
    spoken_text = [t for t in text_lane if t != silent_text]
    truth_text = [
        tok
        for speaker, toks, _, _ in timeline.turn_texts
        if speaker == "assistant"
        for tok in toks
    ]
    assert spoken_text == truth_text
    print("flatten: three-stream round trip ok")

    four = dx.flatten_half_duplex(layout, timeline)
    fmt, exchanges = dx.unflatten(layout, four)
    assert fmt == "4stream" and len(exchanges) == 2
    print("flatten: four-stream round trip ok")

    model = dx.NGramModel(layout, order=3, alpha=0.1)
    for seed in range(20):
        tl = dx.simulate(codec, turns, seed=seed)
        model.absorb(dx.flatten_three_stream(layout, tl))
    ce = model.masked_cross_entropy(sample)
    assert ce > 0.0
    dist = model.next_distribution([])
    assert abs(sum(dist) - 1.0) < 1e-9
    print(f"ngram: masked cross-entropy {ce:.3f} nats")

    # Alignment pairs make the codec exactly decodable at order 3.
    asr_model = dx.NGramModel(layout, order=3, alpha=0.1)
    for sym in range(30):
        asr_model.absorb(dx.build_asr_sample(layout, codec.encode([sym]), [sym]))
    probe = [17, 3, 29, 0, 8]
    assert asr_model.transcribe(codec.encode(probe), 2) == probe
    print("ngram: exact transcription of seen symbols")

    text_lane, speech_lane = dx.run_duplex(
        model, layout, timeline.user_lane, temperature=0.8, seed=11
    )
    padded = (len(timeline.user_lane) + 9) // 10 * 10
    assert len(speech_lane) == padded
    assert len(text_lane) == padded // 10 * 2
    again = dx.run_duplex(model, layout, timeline.user_lane, temperature=0.8, seed=11)
    assert again == (text_lane, speech_lane)
    print("engine: lane-level inference deterministic")

    session = dx.DuplexSession(model, layout, seed=5)
    out_text, out_speech = session.feed_user_chunk(timeline.user_lane[:10])
    assert len(out_text) == 2 and len(out_speech) == 10
    ctx = session.context_sample()
    assert dx.unflatten(layout, ctx)[0] == "3stream"
    print("engine: chunk session context stays schedule-valid")

    assert dx.word_error_rate("a b c", "a x c") == 1 / 3
    assert dx.char_error_rate("abc", "abc") == 0.0
    assert dx.edit_distance([1, 2, 3], [1, 3]) == 1
    report = json.loads(dx.assistant_turntaking(layout, timeline))
    assert report["n_events"] == 2
    print(f"metrics: assistant turn-taking {report['acc_at_k']}")

    prompt = dx.render_prompt("What is two plus two?", "Four.")
    for criterion in ("Relevance", "Accuracy", "Completeness", "Conversational Nature"):
        assert prompt.count(criterion) == 1
    judgment = dx.parse_judgment(
        'Here you go: {"Strengths": "concise", "Weaknesses": "terse", '
        '"Overall Evaluation": "good", "Total Score": "9"}'
    )
    assert judgment["total_score"] == 9.0
    print("judge: prompt and parsing ok")

    print("smoke test: PASS")


if __name__ == "__main__":
    main()
