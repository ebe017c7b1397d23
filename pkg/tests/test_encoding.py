import numpy as np
import pytest
import torch

from graphtrex.encoding import (
    CONTEXT_ONLY,
    OWNED,
    PAD,
    SPECIAL,
    ConfigError,
    EncodingError,
    HashEncoder,
    build_window_plan,
    encode_document,
    set_frozen,
)

# Reference masks for 8 tokens and window size 6.
TABLE_MASKS = [
    [-3, 1, 1, 1, -2, -3],
    [-3, -2, 1, 1, -2, -3],
    [-3, -2, 1, 1, -2, -3],
    [-3, -2, 1, -3, -4, -4],
]


def test_reference_masks():
    plan = build_window_plan(8, 6)
    assert plan.masks.tolist() == TABLE_MASKS
    assert plan.stride == 2
    assert plan.slots[0, 1:5].tolist() == [0, 1, 2, 3]
    assert plan.slots[3, 1:3].tolist() == [6, 7]


def check_ownership(plan):
    owned = plan.slots[plan.masks == OWNED]
    assert sorted(owned.tolist()) == list(range(plan.token_count))
    seen = plan.slots[plan.slots >= 0]
    assert set(seen.tolist()) == set(range(plan.token_count))
    assert np.all(plan.masks[:, 0] == SPECIAL) if plan.num_windows else True
    for row in plan.masks:
        vals = set(row.tolist())
        assert vals <= {OWNED, CONTEXT_ONLY, SPECIAL, PAD}


@pytest.mark.parametrize("t,n", [(0, 6), (1, 4), (4, 6), (5, 6), (1000, 512), (513, 512), (2000, 4)])
def test_ownership_cases(t, n):
    check_ownership(build_window_plan(t, n))


def test_single_window_documents():
    plan = build_window_plan(300, 512)
    assert plan.num_windows == 1
    assert (plan.masks[0] == OWNED).sum() == 300


def test_bad_window_size():
    with pytest.raises(ConfigError):
        build_window_plan(10, 3)


def test_encode_document_assembles_owned_slots():
    enc = HashEncoder(hidden_size=16, max_length=8)
    tokens = [f"t{i}" for i in range(21)]
    out = encode_document(tokens, enc, 8)
    assert out.token_embeddings.shape == (21, 16)
    assert out.window_summaries.shape == (out.window_plan.num_windows, 16)
    # a token's vector comes from the window owning it
    owners = out.window_plan.owners()
    ids = torch.tensor(enc.token_ids(tokens))
    w, p = owners[5]
    assert out.window_plan.slots[w, p] == 5
    assert torch.isfinite(out.token_embeddings).all()
    assert ids.shape == (21,)


def test_encode_empty_document():
    out = encode_document([], HashEncoder(hidden_size=8, max_length=8))
    assert out.token_embeddings.shape == (0, 8)


def test_encode_rejects_oversized_window():
    with pytest.raises(ConfigError):
        encode_document(["a"], HashEncoder(hidden_size=8, max_length=8), 16)


def test_encoding_error_names_window():
    class Broken(HashEncoder):
        def forward(self, ids, mask):
            if (ids == self.token_ids(["boom"])[0]).any():
                raise RuntimeError("bad window")
            return super().forward(ids, mask)

    enc = Broken(hidden_size=8, max_length=6)
    tokens = ["a"] * 12 + ["boom"] + ["a"] * 3
    with pytest.raises(EncodingError) as info:
        encode_document(tokens, enc, 6)
    plan = build_window_plan(len(tokens), 6)
    first = int(np.nonzero((plan.slots == 12).any(axis=1))[0][0])
    assert info.value.window_index == first


def test_hash_encoder_is_deterministic():
    a, b = HashEncoder(hidden_size=8, max_length=8, seed=3), HashEncoder(hidden_size=8, max_length=8, seed=3)
    for p, q in zip(a.parameters(), b.parameters()):
        assert torch.equal(p, q)
    set_frozen(a)
    assert not any(p.requires_grad for p in a.parameters())
