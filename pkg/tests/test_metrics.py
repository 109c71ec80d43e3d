import numpy as np
import pytest

from fedpost.core.exceptions import FairnessUnmeasurableError, MetricInputError
from fedpost.metrics import (
    GroupConfusion,
    GroupRates,
    accuracy,
    accuracy_from_rates,
    balanced_accuracy,
    balanced_accuracy_from_rates,
    confusion_by_group,
    eod,
    eod_reduction,
    pooled_eod,
    weighted_average,
)


def expand(confusion_by_attr):
    """Build (predictions, labels, attrs) vectors from per-group confusion counts."""
    predictions, labels, attrs = [], [], []
    for a, counts in confusion_by_attr.items():
        for (y_hat, y), count in (
            ((1, 1), counts["tp"]),
            ((0, 1), counts["fn"]),
            ((1, 0), counts["fp"]),
            ((0, 0), counts["tn"]),
        ):
            predictions += [y_hat] * count
            labels += [y] * count
            attrs += [a] * count
    return np.array(predictions), np.array(labels), np.array(attrs)


HAND_TABLE = {
    1: {"tp": 2, "fn": 2, "fp": 1, "tn": 3},
    0: {"tp": 3, "fn": 1, "fp": 2, "tn": 2},
}


def test_confusion_by_group_perfect_predictions():
    labels = np.array([1, 0, 1, 0, 1, 0])
    attrs = np.array([1, 1, 0, 0, 1, 0])
    rates = confusion_by_group(labels, labels, attrs)

    assert (rates.tpr_0, rates.tpr_1, rates.fpr_0, rates.fpr_1) == (1.0, 1.0, 0.0, 0.0)


def test_confusion_by_group_hand_table():
    rates = confusion_by_group(*expand(HAND_TABLE))

    assert rates.group1 == GroupConfusion(tp=2, fn=2, fp=1, tn=3)
    assert rates.group0 == GroupConfusion(tp=3, fn=1, fp=2, tn=2)
    assert (rates.tpr_1, rates.tpr_0, rates.fpr_1, rates.fpr_0) == (0.5, 0.75, 0.25, 0.5)
    assert eod(rates) == 0.25


def test_confusion_by_group_empty_group():
    with pytest.raises(FairnessUnmeasurableError) as exc_info:
        confusion_by_group([1, 0, 1], [1, 0, 0], [1, 1, 1])
    assert exc_info.value.group == 0
    assert exc_info.value.to_dict()["error"] == "fairness_unmeasurable"


def test_confusion_by_group_lenient_mode_raises_lazily():
    rates = confusion_by_group([1, 0, 1], [1, 0, 0], [1, 1, 1], strict=False)

    assert rates.total == 3
    assert rates.tpr_1 == 1.0
    with pytest.raises(FairnessUnmeasurableError):
        rates.tpr_0


def test_confusion_by_group_input_errors():
    with pytest.raises(MetricInputError):
        confusion_by_group([1, 0], [1, 0, 1], [1, 0, 1])
    with pytest.raises(MetricInputError):
        confusion_by_group([], [], [])
    with pytest.raises(MetricInputError):
        confusion_by_group([2, 0], [1, 0], [1, 0])


def test_confusion_counts_are_permutation_invariant():
    predictions, labels, attrs = expand(HAND_TABLE)
    order = np.random.default_rng(0).permutation(len(labels))

    shuffled = confusion_by_group(predictions[order], labels[order], attrs[order])
    assert shuffled == confusion_by_group(predictions, labels, attrs)


def test_eod_examples():
    equal = GroupRates(
        group0=GroupConfusion(tp=1, fn=1, fp=1, tn=1),
        group1=GroupConfusion(tp=2, fn=2, fp=3, tn=3),
    )
    assert eod(equal) == 0.0

    gaps = GroupRates(
        group1=GroupConfusion(tp=5, fn=5, fp=1, tn=9),
        group0=GroupConfusion(tp=6, fn=4, fp=4, tn=6),
    )
    assert eod(gaps) == pytest.approx(0.3)


def test_eod_is_symmetric_and_bounded():
    rng = np.random.default_rng(1)
    for _ in range(50):
        counts = rng.integers(1, 20, size=8)
        rates = GroupRates(
            group0=GroupConfusion(tp=counts[0], fn=counts[1], fp=counts[2], tn=counts[3]),
            group1=GroupConfusion(tp=counts[4], fn=counts[5], fp=counts[6], tn=counts[7]),
        )
        assert eod(rates) == eod(rates.swapped())
        assert 0.0 <= eod(rates) <= 1.0


def test_accuracy_examples():
    labels = [1, 0, 1, 0]

    assert accuracy(labels, labels) == 1.0
    assert accuracy([0, 1, 0, 1], labels) == 0.0
    assert accuracy([1, 0, 1, 1], labels) == 0.75
    with pytest.raises(MetricInputError):
        accuracy([], [])


def test_balanced_accuracy_examples():
    labels = [1] * 5 + [0] * 5

    assert balanced_accuracy(labels, labels) == 1.0
    assert balanced_accuracy([0] * 10, labels) == 0.5
    # TPR = 4/5, TNR = 3/5
    assert balanced_accuracy([1, 1, 1, 1, 0, 0, 0, 0, 1, 1], labels) == pytest.approx(0.7)
    with pytest.raises(MetricInputError):
        balanced_accuracy([1, 0], [1, 1])


def test_weighted_average_examples():
    assert weighted_average([0.2, 0.4, 0.6], [5, 5, 5]) == pytest.approx(0.4)
    assert weighted_average([0.1, 0.3], [1, 3]) == pytest.approx(0.25)
    assert weighted_average([0.37], [12]) == 0.37
    with pytest.raises(MetricInputError):
        weighted_average([0.1, 0.2], [1])


def test_weighted_average_stays_within_range():
    rng = np.random.default_rng(2)
    for _ in range(100):
        values = rng.random(4)
        sizes = rng.integers(1, 1000, size=4)
        result = weighted_average(values, sizes)
        assert values.min() <= result <= values.max()


def test_count_based_metrics_match_label_metrics():
    predictions, labels, attrs = expand(HAND_TABLE)
    rates = confusion_by_group(predictions, labels, attrs)

    assert accuracy_from_rates(rates) == pytest.approx(accuracy(predictions, labels))
    assert balanced_accuracy_from_rates(rates) == pytest.approx(
        balanced_accuracy(predictions, labels)
    )


def test_pooled_eod_equals_eod_on_union():
    predictions, labels, attrs = expand(HAND_TABLE)
    first = confusion_by_group(predictions[::2], labels[::2], attrs[::2], strict=False)
    second = confusion_by_group(predictions[1::2], labels[1::2], attrs[1::2], strict=False)

    union = confusion_by_group(predictions, labels, attrs)
    assert pooled_eod([first, second]) == pytest.approx(eod(union))
    with pytest.raises(MetricInputError):
        pooled_eod([])


def test_eod_reduction():
    assert eod_reduction(0.4, 0.1) == pytest.approx(0.75)
    assert eod_reduction(0.0, 0.0) == 0.0
