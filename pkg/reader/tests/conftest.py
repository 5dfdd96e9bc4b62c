"""Shared fixtures. The tracker package is exercised only through its
installed CLI and file formats; nothing here imports it."""

from __future__ import annotations

import json
import shutil
import subprocess
import sys

import pytest

DSTRC = shutil.which("dstrc")


def run_dstrc(*args: str) -> None:
    result = subprocess.run(
        [DSTRC, *args], capture_output=True, text=True, timeout=300
    )
    assert result.returncode == 0, f"dstrc {args[0]} failed: {result.stderr}"


@pytest.fixture(scope="session")
def workdir(tmp_path_factory):
    """Replica corpus, a 20-dialogue fixture, and its JSONL examples."""
    if DSTRC is None:
        pytest.skip("dstrc CLI not installed")
    root = tmp_path_factory.mktemp("readerwork")
    corpus = root / "corpus"
    run_dstrc("synth", "--out", str(corpus), "--seed", "11")

    with open(corpus / "test.dialogues.json", encoding="utf-8") as f:
        n_test = len(json.load(f))
    fixture = root / "fix20.json"
    run_dstrc(
        "subsample",
        "--dialogues", str(corpus / "test.dialogues.json"),
        "--fraction", repr(20 / n_test),
        "--seed", "3",
        "--out", str(fixture),
    )
    with open(fixture, encoding="utf-8") as f:
        assert len(json.load(f)) == 20

    examples = root / "fix20.jsonl"
    run_dstrc(
        "generate",
        "--dialogues", str(fixture),
        "--ontology", str(corpus / "ontology.json"),
        "--aliases", str(corpus / "aliases.json"),
        "--out", str(examples),
    )
    toy = root / "toy200.jsonl"
    with open(examples, encoding="utf-8") as src, open(toy, "w", encoding="utf-8") as dst:
        for number, line in enumerate(src):
            if number >= 200:
                break
            dst.write(line)
    return {
        "root": root,
        "corpus": corpus,
        "fixture": fixture,
        "examples": examples,
        "toy": toy,
    }


@pytest.fixture(scope="session")
def toy_checkpoint(workdir, tmp_path_factory):
    """Small checkpoint for protocol-level tests; accuracy irrelevant."""
    from rcreader.model import ModelConfig
    from rcreader.train import TrainConfig, train

    out = tmp_path_factory.mktemp("ckpt") / "toy.pt"
    config = TrainConfig(
        stage="dst-fine", seed=5, epochs=1, lr=1e-3, batch_size=32,
        model=ModelConfig(d_model=32, ffn=64, heads=4, layers=1, choice_context=64),
    )
    train(str(workdir["toy"]), config, str(out))
    return out


@pytest.fixture()
def serve_command(toy_checkpoint):
    return [sys.executable, "-m", "rcreader.cli", "serve", "--checkpoint", str(toy_checkpoint)]
