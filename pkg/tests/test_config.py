import json

import pytest

from common.config import PROJECT_ROOT, AppConfig, load_env
from common.errors import ConfigError
from common.models.specs import AdmmConfig, NoiseSpec, QuantizerSpec
from common.utils.validators import ensure_nonnegative_int, ensure_positive, ensure_positive_int
from config import StudyConfig, apply_overrides, parse_override


def _write(tmp_path, payload):
    path = tmp_path / "study.json"
    path.write_text(json.dumps(payload), encoding="utf-8")
    return path


def test_defaults_are_valid():
    cfg = StudyConfig.load()
    assert cfg.study.kind == "dadmm"
    assert cfg.admm.eta1 == 1e-6
    assert cfg.ctr.learning_rate is None
    assert cfg.admm.quantizer is cfg.quantizer


def test_load_file_with_auto_steps(tmp_path):
    path = _write(
        tmp_path,
        {
            "study": {"kind": "dadmm-k", "name": "demo"},
            "phantom": {"side": 32},
            "geometry": {"n_angles": 60},
            "partition": {"nodes": 4},
            "admm": {"eta1": "auto", "outer_iters": 20},
            "quantizer": {"kind": "kmeans", "k": 5},
            "ctr": {"learning_rate": None},
        },
    )
    cfg = StudyConfig.load(path)
    assert cfg.source == path
    assert cfg.admm.eta1 is None
    assert cfg.admm.quantizer.k == 5
    assert cfg.partition.nodes == 4
    assert cfg.phantom.side == 32


def test_overrides_parse_json_values():
    assert parse_override("admm.rho=0.5") == ("admm", "rho", 0.5)
    assert parse_override("quantizer.kind=jpeg") == ("quantizer", "kind", "jpeg")
    assert parse_override("sweep.k_values=[2,4,8]") == ("sweep", "k_values", [2, 4, 8])
    cfg = StudyConfig.load(overrides=["partition.nodes=3", "noise.nsd=0.77", "admm.eta1=auto"])
    assert cfg.partition.nodes == 3
    assert cfg.noise.nsd == 0.77
    assert cfg.admm.eta1 is None


@pytest.mark.parametrize("text", ["admm.rho", "=1", "rho=1", "admm.rho.x=1"])
def test_malformed_overrides(text):
    with pytest.raises(ConfigError):
        parse_override(text)


def test_apply_overrides_does_not_mutate_input():
    raw = {"admm": {"rho": 1.0}}
    out = apply_overrides(raw, ["admm.rho=2"])
    assert raw == {"admm": {"rho": 1.0}}
    assert out["admm"]["rho"] == 2


@pytest.mark.parametrize(
    "payload,location",
    [
        ({"bogus": {}}, "bogus"),
        ({"admm": {"speed": 1}}, "admm.speed"),
        ({"admm": {"quantizer": {}}}, "admm.quantizer"),
        ({"admm": {"rho": -1}}, "admm.rho"),
        ({"admm": {"outer_iters": 1.5}}, "admm.outer_iters"),
        ({"geometry": {"pad": "yes"}}, "geometry.pad"),
        ({"quantizer": {"kind": "png"}}, "quantizer.kind"),
        ({"quantizer": {"quality": 0}}, "quantizer.quality"),
        ({"phantom": {"side": 8}}, "phantom.side"),
        ({"phantom": {"kind": "file"}}, "phantom.path"),
        ({"sweep": {"k_values": [2, 3]}}, "sweep.k_values"),
        ({"sweep": {"k_values": [4, 3, 5]}}, "sweep.k_values"),
        ({"noise_ladder": {"methods": ["fbp"]}}, "noise_ladder.methods[0]"),
        ({"partition": {"nodes": 10}, "geometry": {"n_angles": 4}}, "partition.nodes"),
        ({"study": {"kind": "bogus"}}, "study.kind"),
        ({"sweep": {"qualities": [30, 101]}}, "sweep.qualities[1]"),
        ({"sweep": {"qualities": [50, 30]}}, "sweep.qualities"),
        ({"partition": {"node_counts": [2, 0]}}, "partition.node_counts[1]"),
        ({"study": {"kind": "scalability"}, "geometry": {"n_angles": 8}}, "partition.node_counts[1]"),
    ],
)
def test_invalid_values_name_their_location(tmp_path, payload, location):
    with pytest.raises(ConfigError) as info:
        StudyConfig.load(_write(tmp_path, payload))
    assert info.value.location == location


def test_missing_and_malformed_files(tmp_path):
    with pytest.raises(ConfigError, match="file not found"):
        StudyConfig.load(tmp_path / "nope.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json", encoding="utf-8")
    with pytest.raises(ConfigError, match="invalid JSON"):
        StudyConfig.load(bad)
    arr = tmp_path / "arr.json"
    arr.write_text("[]", encoding="utf-8")
    with pytest.raises(ConfigError):
        StudyConfig.load(arr)


def test_config_hash_is_stable_and_sensitive(tmp_path):
    a = StudyConfig.load(overrides=["admm.rho=2"])
    b = StudyConfig.load(overrides=["admm.rho=2.0"])
    c = StudyConfig.load(overrides=["admm.rho=3"])
    assert a.config_hash() == b.config_hash()
    assert a.config_hash() != c.config_hash()
    assert len(a.config_hash()) == 64


def test_to_dict_round_trips_through_from_dict():
    cfg = StudyConfig.load(overrides=["quantizer.kind=jpeg", "quantizer.quality=50", "admm.eta1=auto"])
    again = StudyConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert again.to_dict() == cfg.to_dict()
    assert "quantizer" not in cfg.to_dict()["admm"]
    assert cfg.seeds() == {"quantizer": 0, "noise": 0}
    changed = cfg.with_overrides(["noise.seed=9"])
    assert changed.seeds()["noise"] == 9
    assert cfg.noise.seed == 0


def test_geometry_build_uses_image_side_for_detectors():
    cfg = StudyConfig.load(overrides=["geometry.n_angles=10"])
    geom = cfg.geometry.build(23)
    assert geom.n_angles == 10
    assert geom.n_detectors == 23
    assert geom.image_side == 23


def test_load_env_reads_environment(monkeypatch, tmp_path):
    monkeypatch.setenv("DTOMO_OUTPUT_DIR", str(tmp_path / "out"))
    monkeypatch.setenv("DTOMO_LOG_LEVEL", "debug")
    monkeypatch.setenv("DTOMO_WORKER_TIMEOUT", "5")
    env = load_env()
    assert isinstance(env, AppConfig)
    assert env.output_dir == tmp_path / "out"
    assert env.worker_timeout == 5.0
    monkeypatch.setenv("DTOMO_WORKER_TIMEOUT", "soon")
    with pytest.raises(ValueError):
        load_env()


def test_bundled_study_configs_are_valid():
    paths = sorted((PROJECT_ROOT / "data" / "studies").glob("*.json"))
    assert paths
    kinds = {StudyConfig.load(p).study.kind for p in paths}
    assert {"ctr-baseline", "k-sweep", "quality-sweep", "noise-ladder", "scalability"} <= kinds


@pytest.mark.parametrize("value", ["three", [3], {"k": 3}, float("nan"), float("inf"), 2.5, True, None])
def test_int_validators_reject_non_integers_with_config_error(value):
    with pytest.raises(ConfigError) as info:
        ensure_positive_int(value, "quantizer.k")
    assert info.value.location == "quantizer.k"
    with pytest.raises(ConfigError):
        ensure_nonnegative_int(value, "noise.seed")


@pytest.mark.parametrize("value", ["fast", [1.0], object(), float("nan"), True, None])
def test_float_validators_reject_non_numbers_with_config_error(value):
    with pytest.raises(ConfigError) as info:
        ensure_positive(value, "admm.rho")
    assert info.value.location == "admm.rho"


def test_specs_built_in_code_report_bad_types_as_config_errors():
    with pytest.raises(ConfigError) as info:
        QuantizerSpec(kind="kmeans", k="three").validate()
    assert info.value.location == "quantizer.k"
    with pytest.raises(ConfigError) as info:
        AdmmConfig(rho="fast").validate()
    assert info.value.location == "admm.rho"
    with pytest.raises(ConfigError) as info:
        NoiseSpec(nsd=1.0, seed="x").validate()
    assert info.value.location == "noise.seed"
    assert ensure_positive_int(4.0, "quantizer.k") == 4
