import pytest

from erann.augment import MixupVariant
from erann.config import RunConfig, apply_overrides, load_config, parse_config, serialize_config
from erann.errors import InvalidConfig


def test_defaults_validate():
    cfg = RunConfig().validate()
    assert cfg.model.head == "softmax" and cfg.train.task == "classification"


def test_parse_and_types():
    cfg = parse_config(
        """
        # small run
        model.W=2
        model.N=10
        train.total_iterations=50   # short
        train.lr=0.0002
        augment.mixup_variant=modified-spectrogram
        augment.t_c=none
        augment.specaugment_on=true
        seed=7
        """
    )
    assert cfg.model.W == 2 and cfg.model.n_classes == 10
    assert cfg.train.total_iterations == 50 and cfg.train.lr == 0.0002
    assert cfg.augment.mixup_variant is MixupVariant.MODIFIED_SPECTROGRAM
    assert cfg.augment.t_c is None and cfg.augment.specaugment_on is True
    assert cfg.seed == 7


def test_serialize_round_trip(tmp_path):
    cfg = apply_overrides(RunConfig(), [("model.s_m", "3"), ("augment.t_c", "2.5"), ("features.f_min", "60")])
    (tmp_path / "c.txt").write_text(serialize_config(cfg))
    assert load_config(tmp_path / "c.txt") == cfg


def test_train_config_folds_sections():
    cfg = apply_overrides(RunConfig(), [("seed", "3"), ("augment.specaugment_on", "yes")])
    tc = cfg.train_config()
    assert tc.seed == 3 and tc.augment.specaugment_on and tc.mel == cfg.features


@pytest.mark.parametrize(
    "key, value, fragment",
    [
        ("model.depth", "3", "model.depth"),
        ("optim.lr", "1", "optim.lr"),
        ("train.seed", "1", "train.seed"),
        ("model.W", "two", "model.W"),
        ("augment.specaugment_on", "maybe", "augment.specaugment_on"),
    ],
)
def test_bad_keys_name_the_key(key, value, fragment):
    with pytest.raises(InvalidConfig, match=fragment.replace(".", r"\.")):
        apply_overrides(RunConfig(), [(key, value)])


def test_validation_names_section():
    with pytest.raises(InvalidConfig, match="^model:"):
        apply_overrides(RunConfig(), [("model.s_m", "5")]).validate()
    with pytest.raises(InvalidConfig, match="^augment:"):
        apply_overrides(RunConfig(), [("augment.mixup_alpha", "0")]).validate()


def test_head_must_fit_task():
    with pytest.raises(InvalidConfig):
        apply_overrides(RunConfig(), [("train.task", "tagging")]).validate()
    apply_overrides(RunConfig(), [("train.task", "tagging"), ("model.head", "sigmoid")]).validate()


def test_malformed_line_and_missing_file(tmp_path):
    with pytest.raises(InvalidConfig, match="line 2"):
        parse_config("seed=1\nnot a pair\n")
    with pytest.raises(InvalidConfig):
        load_config(tmp_path / "absent.txt")
