"""Tests for the self-training loop."""

import json
from unittest.mock import patch

import pytest

from veraz.cli import prepare
from veraz.config import RunConfig
from veraz.dataset import FoldPlan, make_folds
from veraz.errors import ConfigError, ContractError, LeakageError
from veraz.model import HybridNewsModel, ModelConfig
from veraz.selftrain import (
    ACCEPTED_FAKE, ACCEPTED_REAL, REJECTED, PseudoLabel, PseudoLabelBatch, SelfTrainConfig,
    SelfTrainer, augment_train_set, decide, evaluate, pseudo_label, round_label,
    run_self_training, verify_run_log
)


@pytest.fixture
def prepared(corpus_path):
    return prepare(RunConfig(data_path=str(corpus_path), min_frequency=1, max_seq_len=8))


@pytest.fixture
def model_config(prepared):
    return ModelConfig(
        vocab_size=len(prepared.vocab),
        aux_dim=prepared.assembler.aux_dim,
        embed_dim=4,
        hidden_dim=4,
        dense_dim=4,
        max_seq_len=8,
    )


def _config(**overrides):
    values = dict(k=3, sigma=0.95, epochs_per_round=1, seed=0, batch_size=16)
    values.update(overrides)
    return SelfTrainConfig(**values)


def _trainer(prepared, model_config, config, log_path=None, plan=None):
    if plan is None:
        plan = make_folds(prepared.split, prepared.records, k=config.k, seed=config.seed)
    return SelfTrainer(prepared.split, plan, prepared.records, prepared.features,
                       model_config, config, log_path=log_path)


def _scripted(script, sigma=0.95, default=0.5):
    """A _score stand-in that returns scripted probabilities."""
    def score(model, ids, round_index):
        entries = []
        for record_id in ids:
            p = script.get((round_index, record_id), default)
            entries.append(PseudoLabel(record_id, p, decide(p, sigma), round_index))
        return PseudoLabelBatch(round_index, sigma, entries)
    return score


def test_decide_rule():
    """Test the three decision outcomes."""
    assert decide(0.97, 0.95) == ACCEPTED_FAKE
    assert decide(0.50, 0.95) == REJECTED
    assert decide(0.03, 0.95) == ACCEPTED_REAL
    assert decide(0.95, 0.95) == REJECTED
    assert decide(0.05, 0.95) == REJECTED


@pytest.mark.parametrize("sigma", [0.6, 0.75, 0.9, 0.95, 0.99])
def test_decide_is_symmetric_at_threshold(sigma):
    """Test a score of exactly sigma or 1 - sigma is rejected on both sides."""
    assert decide(sigma, sigma) == REJECTED
    assert decide(1.0 - sigma, sigma) == REJECTED
    assert decide(min(1.0, sigma + 1e-9), sigma) == ACCEPTED_FAKE
    assert decide(max(0.0, 1.0 - sigma - 1e-9), sigma) == ACCEPTED_REAL


def test_round_labels():
    """Test row names for five rounds."""
    assert [round_label(i, 5) for i in range(1, 6)] == [
        "Fold1-Val", "Fold+2-Val", "Fold+3-Val", "Fold+4-Val", "Fold+5-Test"
    ]


def _batch(decisions):
    return PseudoLabelBatch(2, 0.95, [
        PseudoLabel(record_id, p, decide(p, 0.95), 2) for record_id, p in decisions
    ])


def test_augment_train_set():
    """Test empty, growing and colliding unions."""
    train = {f"t{i}": i % 2 for i in range(20)}

    unchanged, deferred = augment_train_set(train, _batch([("x", 0.5)]))
    assert unchanged == train
    assert deferred == []

    grown, _ = augment_train_set(train, _batch([(f"n{i}", 0.99 if i % 2 else 0.01)
                                                for i in range(10)]))
    assert len(grown) == 30
    assert grown["n1"] == 1 and grown["n0"] == 0
    assert len(train) == 20

    with pytest.raises(ContractError):
        augment_train_set(train, _batch([("t3", 0.99)]))


def test_augment_train_set_defer_policy():
    """Test rejected ids are deferred once."""
    batch = _batch([("a", 0.5), ("b", 0.6), ("c", 0.99)])
    _, deferred = augment_train_set({}, batch, reject_policy="defer")
    assert deferred == ["a", "b"]

    _, again = augment_train_set({}, batch, reject_policy="defer",
                                 previously_deferred=frozenset({"a"}))
    assert again == ["b"]

    with pytest.raises(ConfigError):
        augment_train_set({}, batch, reject_policy="keep")


def test_self_train_config_validation():
    """Test sigma must exceed 0.5."""
    with pytest.raises(ConfigError):
        _config(sigma=0.4).validate()
    with pytest.raises(ConfigError):
        _config(k=1).validate()
    with pytest.raises(ConfigError):
        _config(reject_policy="keep").validate()


def test_pseudo_label_leaves_model_untouched(prepared, model_config):
    """Test scoring applies the rule and does not move parameters."""
    model = HybridNewsModel(model_config, seed=0)
    before = model.state_dict()
    fold = [prepared.features[i] for i in prepared.split.train[:10]]

    batch = pseudo_label(model, fold, sigma=0.6, round_index=2)
    assert len(batch.entries) == 10
    for entry in batch.entries:
        assert entry.decision == decide(entry.probability, 0.6)
    for name, value in model.state_dict().items():
        assert (value == before[name]).all()

    with pytest.raises(ContractError):
        pseudo_label(model, [], sigma=0.9)


def test_stricter_sigma_accepts_subset(prepared, model_config):
    """Test sigma 0.999 never accepts more than sigma 0.9 on the same scores."""
    model = HybridNewsModel(model_config, seed=1)
    fold = [prepared.features[i] for i in prepared.split.train]
    loose = {e.record_id for e in pseudo_label(model, fold, 0.9).accepted}
    strict = {e.record_id for e in pseudo_label(model, fold, 0.999).accepted}
    assert strict <= loose


def test_evaluate_rejects_foreign_ids(prepared, model_config):
    """Test ids outside the named split."""
    model = HybridNewsModel(model_config, seed=0)
    labels = {i: r.label for i, r in prepared.records.items() if r.is_labeled}
    ids = list(prepared.split.test[:2]) + [prepared.split.validation[0]]
    with pytest.raises(ContractError):
        evaluate(model, ids, prepared.split, "test", prepared.features, labels)

    metrics = evaluate(model, prepared.split.test, prepared.split, "test",
                       prepared.features, labels)
    assert all(0.0 <= m <= 1.0 for m in metrics)


def test_run_produces_one_report_per_round(prepared, model_config, tmp_path):
    """Test k reports, growing train sets and a replayable log."""
    log = tmp_path / "rounds.jsonl"
    trainer = _trainer(prepared, model_config, _config(sigma=0.6), log_path=log)
    reports = trainer.run()

    assert [r.label for r in reports] == ["Fold1-Val", "Fold+2-Val", "Fold+3-Test"]
    assert [r.split for r in reports] == ["validation", "validation", "test"]
    assert trainer.train_sizes == sorted(trainer.train_sizes)
    for report, batch in zip(reports[1:], trainer.batches):
        assert report.accepted + report.rejected == len(batch.entries)

    entries = [json.loads(line) for line in log.read_text().splitlines()]
    assert len(entries) == 3
    assert [e["train_size"] for e in entries] == trainer.train_sizes
    assert verify_run_log(log, prepared.split) == sum(len(b.entries) for b in trainer.batches)


def test_run_is_deterministic(prepared, model_config, tmp_path):
    """Test identical inputs give identical reports and logs."""
    config = _config(sigma=0.6)
    first = _trainer(prepared, model_config, config, tmp_path / "a.jsonl").run()
    second = _trainer(prepared, model_config, config, tmp_path / "b.jsonl").run()
    assert [r.to_dict() for r in first] == [r.to_dict() for r in second]
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()


def test_run_self_training_function(prepared, model_config):
    """Test the functional wrapper."""
    config = _config(k=2)
    plan = make_folds(prepared.split, prepared.records, k=2, seed=0)
    reports = run_self_training(prepared.split, plan, prepared.records, prepared.features,
                                model_config, config)
    assert [r.label for r in reports] == ["Fold1-Val", "Fold+2-Test"]


def test_zero_acceptance_keeps_train_set(prepared, model_config, caplog):
    """Test a round that accepts nothing retrains on fold 1 only."""
    trainer = _trainer(prepared, model_config, _config(k=2))
    with patch.object(trainer, "_score", side_effect=_scripted({})):
        reports = trainer.run()

    fold_one = len(trainer.fold_plan.labeled)
    assert trainer.train_sizes == [fold_one, fold_one]
    assert reports[1].accepted == 0
    assert reports[1].rejected == len(trainer.fold_plan.fold(2))
    assert "accepted no records" in caplog.text


def _defer_script(plan):
    fold2, fold3 = plan.fold(2), plan.fold(3)
    held = fold2[0]
    script = {(2, i): 0.99 for i in fold2[1:]}
    script[(2, held)] = 0.5
    script.update({(3, i): 0.01 for i in fold3})
    script[(3, held)] = 0.96
    return held, script


def test_defer_policy_rescores_rejected_record(prepared, model_config):
    """Test a record rejected in round 2 joins in round 3 under defer."""
    config = _config(reject_policy="defer")
    trainer = _trainer(prepared, model_config, config)
    held, script = _defer_script(trainer.fold_plan)

    with patch.object(trainer, "_score", side_effect=_scripted(script)) as score:
        reports = trainer.run()

    assert held in score.call_args_list[1].args[1]
    assert held in {e.record_id for e in trainer.batches[1].accepted}
    sizes = [len(trainer.fold_plan.fold(n)) for n in (1, 2, 3)]
    assert trainer.train_sizes == [sizes[0], sizes[0] + sizes[1] - 1, sum(sizes)]
    assert reports[2].accepted == sizes[2] + 1


def test_drop_policy_discards_rejected_record(prepared, model_config):
    """Test the same script under drop never rescores the record."""
    trainer = _trainer(prepared, model_config, _config(reject_policy="drop"))
    held, script = _defer_script(trainer.fold_plan)

    with patch.object(trainer, "_score", side_effect=_scripted(script)) as score:
        trainer.run()

    assert held not in score.call_args_list[1].args[1]
    assert trainer.train_sizes[-1] == len(trainer.fold_plan.all_ids()) - 1


def test_corrupted_fold_plan_aborts(prepared, model_config):
    """Test a plan holding a validation id stops the run before training."""
    plan = make_folds(prepared.split, prepared.records, k=3, seed=0)
    leaked = FoldPlan(
        plan.k,
        (plan.folds[0], plan.folds[1] + (prepared.split.validation[0],), plan.folds[2]),
        plan.seed,
        plan.labeled,
    )
    trainer = _trainer(prepared, model_config, _config(), plan=leaked)
    with patch.object(trainer, "_fit") as fit:
        with pytest.raises(LeakageError):
            trainer.run()
    fit.assert_not_called()


def test_fold_plan_marking_unlabeled_record_aborts(prepared, model_config):
    """Test a plan claiming a label the corpus lacks stops the run before training."""
    plan = make_folds(prepared.split, prepared.records, k=3, seed=0)
    unlabeled = next(i for i in prepared.split.train if not prepared.records[i].is_labeled)
    folds = [tuple(i for i in fold if i != unlabeled) for fold in plan.folds]
    folds[0] = folds[0] + (unlabeled,)
    forged = FoldPlan(plan.k, tuple(folds), plan.seed, plan.labeled | {unlabeled})

    trainer = _trainer(prepared, model_config, _config(), plan=forged)
    with patch.object(trainer, "_fit") as fit:
        with pytest.raises(ContractError, match="carry no label"):
            trainer.run()
    fit.assert_not_called()


def test_fold_plan_k_must_match(prepared, model_config):
    """Test a plan built for another k."""
    plan = make_folds(prepared.split, prepared.records, k=2, seed=0)
    with pytest.raises(ConfigError):
        _trainer(prepared, model_config, _config(k=3), plan=plan)


def test_verify_run_log_catches_tampering(prepared, model_config, tmp_path):
    """Test a decision that contradicts sigma fails replay."""
    log = tmp_path / "rounds.jsonl"
    trainer = _trainer(prepared, model_config, _config(k=2), log_path=log)
    script = {(2, i): 0.99 for i in trainer.fold_plan.fold(2)}
    with patch.object(trainer, "_score", side_effect=_scripted(script)):
        trainer.run()
    assert verify_run_log(log) == len(trainer.fold_plan.fold(2))

    entries = [json.loads(line) for line in log.read_text().splitlines()]
    entries[1]["decisions"][0]["p"] = 0.5
    log.write_text("\n".join(json.dumps(e) for e in entries) + "\n")
    with pytest.raises(ContractError):
        verify_run_log(log)

    entries[1]["decisions"][0]["p"] = 0.99
    entries[1]["decisions"][0]["id"] = prepared.split.test[0]
    log.write_text("\n".join(json.dumps(e) for e in entries) + "\n")
    with pytest.raises(LeakageError):
        verify_run_log(log, prepared.split)
