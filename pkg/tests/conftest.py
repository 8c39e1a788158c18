import pytest
import torch

# Tiny tensors dominate these tests; a single thread is both faster and
# keeps run-to-run comparisons on one deterministic code path.
torch.set_num_threads(1)


@pytest.fixture
def toy_encoder_config():
    from mtltext.encoders import EncoderConfig

    return EncoderConfig(backend="toy", max_length=16, width=8, layers=1,
                         heads=2, ff_width=16, vocab_size=64, seed=0)
