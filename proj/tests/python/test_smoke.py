# Copyright 2026 The clinenc Authors.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

import math

import numpy as np
import pytest

import clinenc


def test_version():
    assert clinenc.__version__ == "0.1.0"


def test_vocab_round_trip(tmp_path):
    texts = ["patient admitted with fever", "kinase binds receptor"] * 5
    v = clinenc.Vocab.train(texts, 40)
    assert len(v) == 40
    ids = v.encode("patient admitted")
    assert ids[0] == clinenc.Vocab.CLS and ids[-1] == clinenc.Vocab.SEP
    assert v.decode(ids) == "patient admitted"
    v.save(tmp_path / "v.bin")
    assert clinenc.Vocab.load(tmp_path / "v.bin").encode("fever") == v.encode("fever")


def test_packed_matches_padded():
    cfg = clinenc.ModelConfig.preset("preset-tiny")
    cfg.dropout = 0.0
    model = clinenc.Model(cfg, 3)
    docs = [[2, 10, 11, 12, 3], [2, 20, 3]]
    packed = model.mlm_logits(docs)
    padded = model.mlm_logits(docs, packed=False)
    assert packed.shape == (8, cfg.vocab_size)
    assert padded.shape == (10, cfg.vocab_size)
    rows = np.concatenate([padded[0:5], padded[5:8]])
    assert np.max(np.abs(rows - packed)) < 1e-5


def test_pack_layout():
    d = clinenc.pack([[2, 7, 3], [2, 3]])
    assert d["cu_seqlens"] == [0, 3, 5]
    assert d["positions"] == [0, 1, 2, 0, 1]


def test_schedule_boundaries():
    s = clinenc.full_decay_schedule(3e-4, 100)
    assert clinenc.lr_at(s, 0) == 3e-4
    assert clinenc.lr_at(s, 100) == 0.0
    assert math.isclose(clinenc.lr_at(s, 25), 3e-4 * (1 - math.sqrt(0.25)))
    with pytest.raises(IndexError):
        clinenc.lr_at(s, 101)


def test_metrics():
    assert clinenc.bio_extract(["B-DRUG", "I-DRUG", "O", "B-X"]) == [(0, 1, "DRUG"), (3, 3, "X")]
    p, r, f = clinenc.entity_f1([["B-A", "O"]], [["B-A", "O"]])
    assert (p, r, f) == (1.0, 1.0, 1.0)
    assert clinenc.weighted_f1([0, 0, 1], [0, 1, 1]) == pytest.approx(2 / 3)
    assert clinenc.median([3.0, 1.0, 2.0, 4.0]) == 2.5


def test_masking_stats():
    docs = clinenc.generate_workload(200, "fixed", 64, 1, 512)
    st = clinenc.masking_stats(docs, 0.3, 512, 0)
    assert st["eligible"] == 200 * 64
    assert abs(st["selected"] / st["eligible"] - 0.3) < 0.02


def test_errors_map_to_python():
    with pytest.raises(clinenc.ConfigError):
        clinenc.ModelConfig.preset("nope")
    with pytest.raises(ValueError) as e:
        clinenc.validate_run_config('{"bogus": 1, "model": {"n_heads": 3}}')
    assert "2 problems" in str(e.value)
