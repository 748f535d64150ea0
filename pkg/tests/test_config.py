import copy
import json
from pathlib import Path

import pytest

from jdsr.config import DEFAULT_MILESTONES, SCHEMA, ConfigError, RunConfig, validate

ROOT = Path(__file__).resolve().parents[1]


def test_schema_file_in_sync():
    on_disk = json.loads((ROOT / "schema" / "run_config.schema.json").read_text())
    assert on_disk == json.loads(json.dumps(SCHEMA))


@pytest.mark.parametrize("name", ["toy_overfit.json", "full_x4.json"])
def test_shipped_configs_load(name):
    cfg = RunConfig.load(ROOT / "configs" / name)
    assert RunConfig.from_dict(cfg.to_dict()) == cfg


def test_full_size_config_values():
    cfg = RunConfig.load(ROOT / "configs" / "full_x4.json")
    assert (cfg.network.num_blocks, cfg.network.modules_per_block, cfg.network.channels) == (16, 6, 64)
    assert cfg.network.reduction == 16 and cfg.network.scale == 4
    assert (cfg.loss.lambda_adv, cfg.loss.lambda_l1) == (5e-3, 1e-2)
    assert cfg.trainer.lr == 1e-4 and cfg.trainer.batch_size == 16 and cfg.trainer.patch_size == 48
    assert tuple(cfg.trainer.milestones) == DEFAULT_MILESTONES and cfg.trainer.factor == 0.5


def test_defaults_round_trip(tmp_path):
    cfg = RunConfig()
    p = tmp_path / "c.json"
    cfg.save(p)
    again = RunConfig.load(p)
    assert again == cfg and again.digest() == cfg.digest()


def test_digest_changes_with_content():
    a, b = RunConfig(), RunConfig(seed=1)
    assert a.digest() != b.digest()


BASE = {"seed": 1, "trainer": {"lr": 1e-3}, "data": {"synthetic": {"size": 32, "count": 1, "kind": "smooth"}}}

MUTATIONS = [  # (path into doc, bad value, expected error path)
    (("seed",), -1, "seed"),
    (("seed",), "one", "seed"),
    (("network", "scale"), 5, "network/scale"),
    (("network", "channels"), 0, "network/channels"),
    (("network", "long_skip"), "middle", "network/long_skip"),
    (("network", "depth"), 3, "network"),
    (("loss", "gamma"), -0.5, "loss/gamma"),
    (("loss", "clamp_eps"), 0.7, "loss/clamp_eps"),
    (("loss", "extractor", "kind"), "alexnet", "loss/extractor/kind"),
    (("loss", "extractor", "kind"), "vgg19", "loss/extractor/weights"),
    (("trainer", "lr"), 0, "trainer/lr"),
    (("trainer", "patch_size"), 50, "trainer/patch_size"),
    (("trainer", "milestones"), [100, 50], "trainer/milestones"),
    (("trainer", "milestones"), [100, "x"], "trainer/milestones/1"),
    (("trainer", "factor"), 1.5, "trainer/factor"),
    (("data", "phase"), "RGBG", "data/phase"),
    (("data", "synthetic"), {"size": 4}, "data/synthetic"),
    (("demosaic", "init_method"), "ahd", "demosaic/init_method"),
    (("demosaic", "iterations"), 0, "demosaic/iterations"),
    (("metrics", "crop"), True, "metrics"),
    (("extra",), 1, "<root>"),
]


def _set(doc, keys, value):
    for k in keys[:-1]:
        doc = doc.setdefault(k, {})
    doc[keys[-1]] = value


@pytest.mark.parametrize("keys,value,where", MUTATIONS, ids=["/".join(m[0]) + f"={m[1]!r}" for m in MUTATIONS])
def test_malformed_config_rejected_with_path(keys, value, where):
    validate(BASE)
    doc = copy.deepcopy(BASE)
    _set(doc, keys, value)
    with pytest.raises(ConfigError) as info:
        RunConfig.from_dict(doc)
    assert info.value.path == where


def test_cross_field_network_error():
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"network": {"channels": 60, "reduction": 16}})


def test_invalid_json(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(ConfigError):
        RunConfig.load(p)
