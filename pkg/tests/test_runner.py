import dataclasses
import json

import numpy as np
import pandas as pd
import pytest

import fedpost.runner as runner
from fedpost.core.exceptions import ConfigurationError, ReportError
from fedpost.data import Dataset, DatasetSource
from fedpost.partition import ClientPartition
from fedpost.runner import (
    ClientStatus,
    ExperimentConfig,
    Method,
    SeedResult,
    WeightedMetrics,
    default_hyperparameters,
    read_report,
    read_reports,
    report_frame,
    run_experiment,
    run_sweep,
    summarize,
    write_report,
    write_reports,
)


@pytest.fixture
def make_config(balanced_spec):
    def _make(**overrides):
        document = {
            "dataset": "synthetic",
            "synthetic": balanced_spec.model_dump(),
            "alpha": 5.0,
            "clients": 4,
            "seeds": [0],
            "method": "fedavg",
            "fed": {"global_rounds": 2},
            "record_timing": False,
        }
        document.update(overrides)
        return ExperimentConfig.from_dict(document)

    return _make


def test_default_hyperparameters():
    adult = default_hyperparameters("adult")
    compas = default_hyperparameters(DatasetSource.COMPAS)

    assert adult["fed"]["global_rounds"] == 20
    assert compas["fed"]["global_rounds"] == 40
    assert adult["ft"]["alpha_ft"] == 1.0
    assert compas["ft"]["alpha_ft"] == 2.0
    train = {"learning_rate": 0.01, "batch_size": 32, "local_epochs": 1}
    assert adult["fed"]["train_config"] == train
    assert compas["ft"]["eta"] == 0.05
    assert compas["ft"]["rounds"] == 200
    assert compas["ft"]["max_bacc_drop"] == 0.01
    assert default_hyperparameters("synthetic")["ft"]["alpha_ft"] == 1.0


def test_config_merges_defaults(make_config):
    config = make_config(
        clients=3, model_dims=[4, 1], fed={"global_rounds": 3, "train_config": {"batch_size": 8}}
    )

    assert config.fed.global_rounds == 3
    assert config.fed.train_config.batch_size == 8
    assert config.fed.train_config.learning_rate == 0.01
    assert config.fed.clients == 3
    assert tuple(config.fed.model_dims) == (4, 1)
    assert config.ft.alpha_ft == 1.0
    assert config.ft.max_bacc_drop == 0.01


@pytest.mark.parametrize(
    "overrides",
    [
        {"alpha": 0.0},
        {"seeds": []},
        {"seeds": [-1]},
        {"method": "ft"},
        {"model_dims": [4, 2]},
        {"synthetic": None},
        {"method": "magic"},
        {"alphas": [0.5, 0.0]},
    ],
)
def test_invalid_configs(make_config, overrides):
    with pytest.raises(ConfigurationError):
        make_config(**overrides)


def test_from_json_file(tmp_path, balanced_spec):
    path = tmp_path / "experiment.json"
    path.write_text(
        json.dumps(
            {
                "dataset": "synthetic",
                "synthetic": balanced_spec.model_dump(),
                "alpha": 1.0,
                "seeds": [0, 1],
            }
        )
    )

    config = ExperimentConfig.from_json_file(path, method="pp", alpha=None)
    assert config.method is Method.PP
    assert config.alpha == 1.0

    path.write_text("{not json")
    with pytest.raises(ConfigurationError):
        ExperimentConfig.from_json_file(path)
    with pytest.raises(ConfigurationError):
        ExperimentConfig.from_json_file(tmp_path / "missing.json")


def test_resolved_csv_path_uses_data_dir(monkeypatch, tmp_path):
    monkeypatch.setenv("FEDPOST_DATA_DIR", str(tmp_path))
    config = ExperimentConfig.from_dict({"dataset": "adult", "alpha": 1.0, "seeds": [0]})

    assert config.resolved_csv_path() == tmp_path / "adult.csv"
    assert config.fed.global_rounds == 20


def test_methods_share_the_federated_model(make_config):
    fedavg = run_experiment(make_config(method="fedavg"))
    pp = run_experiment(make_config(method="pp"))

    assert fedavg.seeds[0].model_digest == pp.seeds[0].model_digest
    assert fedavg.comm_rounds == pp.comm_rounds == 4 * (2 * 2 + 1)
    assert all(c.debiased and c.derived_predictor is not None for c in pp.seeds[0].clients)
    assert not any(c.debiased for c in fedavg.seeds[0].clients)


def test_ft_shares_the_federated_model(make_config):
    dims = {"model_dims": [4, 1]}
    fedavg = run_experiment(make_config(method="fedavg", **dims))
    ft = run_experiment(make_config(method="ft", ft={"rounds": 2}, **dims))

    assert fedavg.seeds[0].model_digest == ft.seeds[0].model_digest
    assert fedavg.comm_rounds == ft.comm_rounds
    assert all(c.debiased for c in ft.seeds[0].clients)


def test_single_client(make_config):
    report = run_experiment(make_config(clients=1, method="pp"))
    (result,) = report.seeds

    assert len(result.clients) == 1
    assert result.weighted.accuracy == result.clients[0].accuracy
    assert report.comm_rounds == 5


def test_skip_debias_clients(make_config):
    fedavg = run_experiment(make_config(method="fedavg")).seeds[0]
    pp = run_experiment(make_config(method="pp", skip_debias_clients=[2])).seeds[0]

    skipped = pp.clients[1]
    assert skipped.client == 2
    assert not skipped.debiased
    assert skipped.derived_predictor is None
    assert skipped.accuracy == fedavg.clients[1].accuracy
    assert skipped.eod == fedavg.clients[1].eod
    assert pp.clients[0].debiased


def test_runs_are_deterministic(make_config):
    config = make_config(method="pp", seeds=[0, 1])

    assert run_experiment(config).model_dump_json() == run_experiment(config).model_dump_json()


def test_sampled_pp_mode_is_deterministic(make_config):
    config = make_config(method="pp", pp_mode="sampled")
    first = run_experiment(config)

    assert first.model_dump_json() == run_experiment(config).model_dump_json()
    assert all(c.debiased for c in first.seeds[0].clients)


def test_debiasing_never_reads_test_data(make_config, monkeypatch):
    config = make_config(method="pp")
    clean = run_experiment(config).seeds[0]

    real_split = runner.split_clients

    def poisoned_split(*args, **kwargs):
        result = real_split(*args, **kwargs)
        partitions = []
        for partition in result.partitions:
            test = partition.test
            flipped = Dataset(
                features=-test.features,
                labels=1 - test.labels,
                sensitive=test.sensitive,
                feature_names=test.feature_names,
                source=test.source,
                index=test.index,
            )
            partitions.append(
                ClientPartition(client_id=partition.client_id, train=partition.train, test=flipped)
            )
        return dataclasses.replace(result, partitions=partitions)

    monkeypatch.setattr(runner, "split_clients", poisoned_split)
    poisoned = run_experiment(config).seeds[0]

    assert poisoned.model_digest == clean.model_digest
    for before, after in zip(clean.clients, poisoned.clients):
        assert before.derived_predictor == after.derived_predictor


def _drop_cell(dataset: Dataset, label: int, group: int) -> Dataset:
    keep = ~((dataset.labels == label) & (dataset.sensitive == group))
    return dataset.subset(np.flatnonzero(keep))


@pytest.mark.parametrize("method", ["pp", "ft"])
def test_unmeasurable_clients_are_reported(make_config, monkeypatch, balanced_spec, method):
    spec = balanced_spec.model_copy(update={"n": 4000})
    config = make_config(
        method=method, synthetic=spec.model_dump(), model_dims=[4, 1], ft={"rounds": 2}
    )
    real_split = runner.split_clients

    def split_with_missing_cells(*args, **kwargs):
        result = real_split(*args, **kwargs)
        partitions = []
        for partition in result.partitions:
            train, test = partition.train, partition.test
            if partition.client_id == 2:
                test = _drop_cell(test, label=1, group=0)
            if partition.client_id == 3:
                train = _drop_cell(train, label=0, group=1)
            partitions.append(
                ClientPartition(client_id=partition.client_id, train=train, test=test)
            )
        return dataclasses.replace(result, partitions=partitions)

    monkeypatch.setattr(runner, "split_clients", split_with_missing_cells)
    (result,) = run_experiment(config).seeds
    by_client = {c.client: c for c in result.clients}

    assert by_client[2].status is ClientStatus.FAIRNESS_UNMEASURABLE
    assert by_client[2].eod is None
    assert not by_client[3].debiased
    assert by_client[3].derived_predictor is None
    assert by_client[3].status is ClientStatus.OK
    assert by_client[1].debiased and by_client[4].debiased
    assert result.degenerate_clients == [3]

    measured = [c for c in result.clients if c.eod is not None]
    assert len(measured) == 3
    expected = np.average([c.eod for c in measured], weights=[c.n_test for c in measured])
    assert result.weighted.eod == pytest.approx(expected)
    assert result.weighted.accuracy == pytest.approx(
        np.average([c.accuracy for c in result.clients], weights=[c.n_test for c in result.clients])
    )


def test_keep_policy_runs_with_tiny_shards(balanced_spec):
    spec = balanced_spec.model_copy(update={"n": 3000})
    config = ExperimentConfig.from_dict(
        {
            "dataset": "synthetic",
            "synthetic": spec.model_dump(),
            "alpha": 0.1,
            "clients": 4,
            "seeds": list(range(10)),
            "method": "pp",
            "fed": {"global_rounds": 2},
            "degenerate_partition_policy": "keep",
            "record_timing": False,
        }
    )
    report = run_experiment(config)

    assert len(report.seeds) == 10
    for result in report.seeds:
        assert all(c.n_train >= 1 and c.n_test >= 1 for c in result.clients)
        for client in result.clients:
            if client.client in result.degenerate_clients:
                assert not client.debiased
                assert client.derived_predictor is None


def test_default_ft_lowers_eod(skewed_spec):
    results = {}
    for method in ("fedavg", "ft"):
        config = ExperimentConfig.from_dict(
            {
                "dataset": "synthetic",
                "synthetic": skewed_spec.model_dump(),
                "alpha": 0.5,
                "seeds": [0, 1, 2],
                "method": method,
                "model_dims": [8, 1],
                "fed": {"global_rounds": 5},
                "record_timing": False,
            }
        )
        results[method] = run_experiment(config).summary["eod"].mean

    assert results["ft"] < results["fedavg"]


def test_pp_reduces_eod(skewed_spec):
    spec = skewed_spec.model_copy(update={"n": 12000})
    results = {}
    for method in ("fedavg", "pp"):
        config = ExperimentConfig.from_dict(
            {
                "dataset": "synthetic",
                "synthetic": spec.model_dump(),
                "alpha": 5.0,
                "seeds": [0, 1, 2],
                "method": method,
                "fed": {"global_rounds": 5},
                "record_timing": False,
            }
        )
        results[method] = run_experiment(config).summary["eod"].mean

    assert results["fedavg"] > 0.1
    assert results["pp"] <= 0.5 * results["fedavg"]


def test_summarize_mean_and_std():
    results = [
        SeedResult(
            seed=seed,
            clients=[],
            weighted=WeightedMetrics(accuracy=0.8, eod=eod),
            model_digest="sha256:0",
        )
        for seed, eod in ((0, 0.2), (1, 0.4))
    ]
    summary = summarize(results)

    assert summary["eod"].mean == pytest.approx(0.3)
    assert summary["eod"].std == pytest.approx(0.1)
    assert summary["accuracy"].std == 0.0
    assert summary["balanced_accuracy"].mean is None

    with pytest.raises(ReportError):
        summarize([])


def test_write_csv_report(tmp_path, make_config):
    report = run_experiment(make_config(method="pp", seeds=[0, 1]))
    path = tmp_path / "report.csv"
    write_report(report, path, "csv")

    frame = pd.read_csv(path, dtype={"client": str})
    assert len(frame) == 2 * (4 + 1)
    assert list(frame.columns) == runner.CSV_COLUMNS
    assert set(frame["comm_rounds"]) == {report.comm_rounds}

    for seed, rows in frame.groupby("seed"):
        clients = rows[rows["client"] != "avg"]
        (avg,) = rows[rows["client"] == "avg"].itertuples()
        recomputed = np.average(clients["accuracy"], weights=clients["n_test"])
        assert abs(avg.accuracy - recomputed) <= 1e-12
        assert avg.n_test == clients["n_test"].sum()


def test_report_frame_matches_report(make_config):
    report = run_experiment(make_config(seeds=[3]))
    frame = report_frame(report)

    assert frame["client"].tolist() == ["1", "2", "3", "4", "avg"]
    assert frame["method"].unique().tolist() == ["fedavg"]


def test_json_report_round_trip(tmp_path, make_config):
    report = run_experiment(make_config(method="pp"))
    path = tmp_path / "report.json"
    write_report(report, path, "json")

    restored = read_report(path)
    assert restored.seeds[0].model_digest == report.seeds[0].model_digest
    first_client = report.seeds[0].clients[0]
    assert restored.seeds[0].clients[0].derived_predictor == first_client.derived_predictor
    assert restored.comm_rounds == report.comm_rounds


def test_report_errors(tmp_path, make_config):
    report = run_experiment(make_config())

    with pytest.raises(ReportError):
        write_report(report, tmp_path / "report.xml", "xml")
    with pytest.raises(ReportError):
        write_report(report, tmp_path / "missing" / "report.json", "json")

    bad = tmp_path / "bad.json"
    bad.write_text('{"seeds": 3}')
    with pytest.raises(ReportError):
        read_report(bad)


def test_alpha_sweep_runs_one_report_per_alpha(make_config):
    config = make_config(alphas=[0.5, 5.0])
    reports = run_sweep(config)

    assert [r.config.alpha for r in reports] == [0.5, 5.0]
    assert all(r.config.alphas == [] for r in reports)
    assert [c.alpha for c in make_config().sweep()] == [5.0]


def test_config_alpha_defaults_to_first_sweep_entry(balanced_spec):
    config = ExperimentConfig.from_dict(
        {"dataset": "synthetic", "synthetic": balanced_spec.model_dump(), "alphas": [2.0, 8.0]}
    )

    assert config.alpha == 2.0
    assert [c.alpha for c in config.sweep()] == [2.0, 8.0]


def test_write_sweep_reports(tmp_path, make_config):
    reports = run_sweep(make_config(method="pp", alphas=[0.5, 5.0]))

    csv_path = tmp_path / "sweep.csv"
    write_reports(reports, csv_path, "csv")
    frame = pd.read_csv(csv_path, dtype={"client": str})
    assert len(frame) == 2 * (4 + 1)
    assert sorted(frame["alpha"].unique()) == [0.5, 5.0]

    json_path = tmp_path / "sweep.json"
    write_reports(reports, json_path, "json")
    restored = read_reports(json_path)
    assert [r.config.alpha for r in restored] == [0.5, 5.0]
    assert restored[1].seeds[0].model_digest == reports[1].seeds[0].model_digest

    single = tmp_path / "single.json"
    write_reports(reports[:1], single, "json")
    assert read_reports(single)[0].config.alpha == 0.5

    empty = tmp_path / "empty.json"
    empty.write_text("[]")
    with pytest.raises(ReportError):
        read_reports(empty)
    with pytest.raises(ReportError):
        write_reports(reports, tmp_path / "sweep.xml", "xml")
