import numpy as np
import pytest
import torch

from videdit import textenc
from videdit.config import TextConfig
from videdit.textenc import TemplateTextEncoder, TextProjection


@pytest.fixture(scope="module")
def enc():
    return TemplateTextEncoder()


def test_encode_deterministic_and_unit_norm(enc):
    a = enc.encode("There is a big blue capsule.")
    b = enc.encode("There is a big blue capsule.")
    assert np.array_equal(a, b)
    assert a.shape == (512,)
    assert abs(np.linalg.norm(a) - 1.0) < 1e-6


def test_tokenizer_ignores_spacing_and_case(enc):
    a = enc.encode("There is a big blue capsule.")
    b = enc.encode("There is a big blue capsule .")
    c = enc.encode("there is a BIG blue Capsule.")
    assert float(a @ b) == pytest.approx(1.0, abs=1e-12)
    assert float(a @ c) == pytest.approx(1.0, abs=1e-12)


def test_color_change_cosine_matches_slot_inner_product(enc):
    # hand oracle: slots share size+shape (2 of 3 ones), norms are sqrt(3)
    a = enc.encode("There is a big blue capsule.")
    b = enc.encode("There is a big red capsule.")
    cos = float(a @ b)
    va = enc.slot_vector(7, 2, 3)
    vb = enc.slot_vector(0, 2, 3)
    expected = float(va @ vb) / (np.linalg.norm(va) * np.linalg.norm(vb))
    assert expected == pytest.approx(2.0 / 3.0)
    assert cos < 1.0
    assert cos == pytest.approx(expected, abs=1e-9)


def test_fallback_handles_arbitrary_text(enc):
    v = enc.encode("the quick brown fox")
    assert v.shape == (512,)
    assert abs(np.linalg.norm(v) - 1.0) < 1e-6
    assert np.array_equal(v, enc.encode("the quick brown fox"))
    assert abs(np.linalg.norm(enc.encode("")) - 1.0) < 1e-6


def test_distinct_attribute_combinations_near_orthogonal(enc):
    a = enc.encode("There is a small red cube.")
    b = enc.encode("There is a big blue capsule.")
    assert abs(float(a @ b)) < 0.05


def test_projection_output_dimension_and_zero_init():
    proj = TextProjection(out_dim=3)
    w = torch.randn(4, 512)
    out = proj(w)
    assert out.shape == (4, 3)
    assert torch.isfinite(out).all()

    torch.nn.init.zeros_(proj.net[-1].weight)
    torch.nn.init.zeros_(proj.net[-1].bias)
    assert torch.all(proj(torch.randn(2, 512)) == 0)

    with pytest.raises(ValueError):
        proj(torch.randn(2, 100))


def test_projection_matches_dense_algebra_oracle():
    torch.manual_seed(0)
    proj = TextProjection(out_dim=3).double()
    w = torch.randn(5, 512, dtype=torch.float64)
    out = proj(w).detach().numpy()

    x = w.numpy()
    for layer in proj.net:
        if isinstance(layer, torch.nn.Linear):
            x = x @ layer.weight.detach().numpy().T + layer.bias.detach().numpy()
        else:
            x = np.where(x > 0, x, 0.2 * x)
    assert np.max(np.abs(out - x)) < 1e-6


def test_clip_adapter_unavailable_raises_and_build_falls_back():
    with pytest.raises(textenc.AdapterUnavailableError):
        textenc.ClipAdapterTextEncoder("")
    with pytest.raises(textenc.AdapterUnavailableError):
        textenc.ClipAdapterTextEncoder("/nonexistent/model/path")

    cfg = TextConfig(text_encoder="clip_adapter", clip_model_path="/nonexistent")
    with pytest.warns(UserWarning):
        enc = textenc.build_text_encoder(cfg)
    assert isinstance(enc, TemplateTextEncoder)


def test_encode_batch_and_dump(tmp_path, enc):
    texts = ["There is a big blue capsule.", "There is a small red cube."]
    batch = textenc.encode_batch(enc, texts)
    assert batch.shape == (2, 512)
    assert batch.dtype == torch.float32

    out = tmp_path / "emb.csv"
    textenc.dump_embeddings(enc, texts, out)
    lines = out.read_text().strip().splitlines()
    assert len(lines) == 3
    assert lines[0].startswith("text,e_0")
