"""Small shared builders for model-level tests."""
import numpy as np

from dgatnet.data import SubjectRecord
from dgatnet.dfc import GraphConfig, WindowConfig, extract_sequence
from dgatnet.model import ModelConfig

# acceptance verdicts, printed by the terminal-summary hook in conftest
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record(criterion: int, passed: bool, detail: str) -> bool:
    ACCEPTANCE[criterion] = (bool(passed), detail)
    return bool(passed)


TINY = ModelConfig(embed_dim=4, gat_dims=(5, 4, 3), pool_hidden=3, conv_filters=4, attn_hidden=3,
                   fc_dims=(5, 4), dropout=(0.5, 0.4))


def random_graphs(rng, B, T, n, p=0.4):
    A = (rng.random((B, T, n, n)) < p).astype(float)
    A = np.maximum(A, np.swapaxes(A, -1, -2))
    A[..., range(n), range(n)] = 1
    return A


def toy_sequences(n_per_class=6, n=6, seed=0):
    rng = np.random.default_rng(seed)
    seqs = []
    for i in range(2 * n_per_class):
        label = i % 2
        x = rng.standard_normal((80, n))
        if label:
            x[:, :3] += 1.5 * rng.standard_normal((80, 1))
        seqs.append(extract_sequence(SubjectRecord(f"s{i}", x, label), WindowConfig(40, 20),
                                     GraphConfig(0.3)))
    return seqs
