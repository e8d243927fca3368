import io

import numpy as np
import pytest

from btc_anomaly.features import FeatureMatrix, FeatureSchema, normalize
from btc_anomaly.ledger import parse_ledger


def make_matrix(
    values, ids=None, kind="user", normalized=False, pre_normalized=False
) -> FeatureMatrix:
    """Wrap a raw array into a FeatureMatrix with generated column names.

    ``normalized=True`` applies the signed-log/z-score pipeline;
    ``pre_normalized=True`` marks the values as already being the feature
    space to use (for constructions whose geometry must survive as-is).
    """
    values = np.asarray(values, dtype=float)
    names = tuple(f"f{i}" for i in range(values.shape[1]))
    fm = FeatureMatrix(
        entity_ids=tuple(ids) if ids is not None else tuple(range(values.shape[0])),
        values=values,
        schema=FeatureSchema(names=names, graph_kind=kind),
        normalized=pre_normalized,
    )
    return normalize(fm) if normalized else fm


def ledger_from_text(text: str):
    return parse_ledger(io.StringIO(text))


@pytest.fixture
def diamond_ledger():
    """t1 funds aB and aC; t2 spends aB, t3 spends aC, t4 joins both."""
    return ledger_from_text(
        "t1,100,,aB:1.00000000|aC:2.00000000\n"
        "t2,200,aB:1.00000000,aD:1.00000000\n"
        "t3,300,aC:2.00000000,aE:2.00000000\n"
        "t4,400,aD:1.00000000|aE:2.00000000,aF:3.00000000\n"
    )
