"""Shared fixtures: one replica corpus per session, loaded once.

The replica is regenerated from a fixed seed into a session temp dir, so
every test run sees byte-identical corpus files without checking data
into the repository.
"""

from __future__ import annotations

import pytest

from dstrc import synth
from dstrc.corpus import corpus_from_records, load_corpus
from dstrc.stats import classify_slots, compute_slot_stats

REPLICA_SEED = 11


@pytest.fixture(scope="session")
def replica_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("replica")
    synth.write_replica(str(out), seed=REPLICA_SEED)
    return out


@pytest.fixture(scope="session")
def ontology():
    return synth.build_ontology()


@pytest.fixture(scope="session")
def train_corpus(replica_dir):
    return load_corpus(
        str(replica_dir / "train.dialogues.json"),
        str(replica_dir / "ontology.json"),
        aliases_file=str(replica_dir / "aliases.json"),
    )


@pytest.fixture(scope="session")
def dev_corpus(replica_dir):
    return load_corpus(
        str(replica_dir / "dev.dialogues.json"),
        str(replica_dir / "ontology.json"),
        aliases_file=str(replica_dir / "aliases.json"),
    )


@pytest.fixture(scope="session")
def test_corpus(replica_dir):
    return load_corpus(
        str(replica_dir / "test.dialogues.json"),
        str(replica_dir / "ontology.json"),
        aliases_file=str(replica_dir / "aliases.json"),
    )


@pytest.fixture(scope="session")
def train_specs(train_corpus):
    return classify_slots(compute_slot_stats(train_corpus), train_corpus.ontology)


@pytest.fixture(scope="session")
def fixture_corpus(ontology):
    return corpus_from_records(synth.fixture_records(50), ontology)
