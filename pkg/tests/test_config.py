"""Config file parsing, key registry and RunConfig assembly."""

import pytest

from tactilerl.config import (
    REGISTRY,
    ConfigError,
    apply_env_doc,
    build_run_config,
    default_values,
    env_config_doc,
    load_run_config,
    make_env,
    parse_config_text,
)


def test_defaults_are_complete_and_runnable() -> None:
    cfg = build_run_config(parse_config_text(""))
    assert cfg.task == "slope"
    assert cfg.seeds == (0, 1, 2)
    assert cfg.planner.population >= cfg.planner.elites
    cfg.validate()


def test_parse_overrides_and_comments() -> None:
    text = """
    # a comment line
    run.task = screw
    run.episodes = 12

    planner.beta = 0.25  # trailing comment
    model.hidden = 32,16
    run.seeds = 4, 5
    """
    values = parse_config_text(text)
    assert values["run.task"] == "screw"
    assert values["run.episodes"] == 12
    assert values["planner.beta"] == 0.25
    assert values["model.hidden"] == (32, 16)
    assert values["run.seeds"] == (4, 5)


def test_unknown_key_reports_line_number() -> None:
    with pytest.raises(ConfigError) as exc:
        parse_config_text("run.task = slope\nrun.bogus = 3\n")
    assert "run.bogus" in str(exc.value)
    assert "2" in str(exc.value)


def test_malformed_line_rejected() -> None:
    with pytest.raises(ConfigError):
        parse_config_text("run.task slope\n")


def test_bad_value_type_rejected() -> None:
    with pytest.raises(ConfigError):
        parse_config_text("run.episodes = many\n")
    with pytest.raises(ConfigError):
        parse_config_text("planner.beta = fast\n")


def test_bad_choice_rejected() -> None:
    with pytest.raises(ConfigError):
        build_run_config(parse_config_text("run.task = hover\n"))
    with pytest.raises(ConfigError):
        build_run_config(parse_config_text("slope.reward = shaped\n"))


def test_bool_parsing() -> None:
    values = parse_config_text("run.curiosity_off = true\nplanner.warm_start = false\n")
    assert values["run.curiosity_off"] is True
    assert values["planner.warm_start"] is False
    with pytest.raises(ConfigError):
        parse_config_text("run.curiosity_off = maybe\n")


def test_ablations_mutually_exclusive() -> None:
    with pytest.raises(ConfigError):
        build_run_config(
            parse_config_text("run.curiosity_off = true\nrun.random_policy = true\n")
        )


def test_registry_docs_complete() -> None:
    for key, spec in REGISTRY.items():
        assert spec.doc, key
        assert spec.kind in ("int", "float", "str", "bool", "ints"), key


def test_load_run_config_file(tmp_path) -> None:
    path = tmp_path / "run.cfg"
    path.write_text("run.task = screw\nrun.episodes = 3\nrun.out_dir = %s\n" % tmp_path)
    cfg = load_run_config(str(path))
    assert cfg.task == "screw"
    assert cfg.episodes == 3


def test_load_run_config_missing_file() -> None:
    with pytest.raises(ConfigError):
        load_run_config("/nonexistent/path.cfg")


def test_make_env_matches_task() -> None:
    slope_cfg = build_run_config(parse_config_text("run.task = slope\n"))
    screw_cfg = build_run_config(parse_config_text("run.task = screw\n"))
    assert make_env(slope_cfg).observation_dim == 13
    assert make_env(screw_cfg).observation_dim == 7


def test_env_doc_roundtrip() -> None:
    text = "run.task = slope\nslope.goal_radius = 0.07\nslope.shape = box\n"
    cfg = build_run_config(parse_config_text(text))
    doc = env_config_doc(cfg)
    values = apply_env_doc(default_values(), doc)
    cfg2 = build_run_config(values)
    assert cfg2.slope.goal_radius == 0.07
    assert cfg2.slope.shape == "box"
    assert cfg2.task == "slope"


def test_validation_catches_bad_planner() -> None:
    with pytest.raises(ConfigError):
        build_run_config(parse_config_text("planner.elites = 900\n"))


def test_negative_seed_rejected() -> None:
    with pytest.raises(ConfigError):
        build_run_config(parse_config_text("run.seeds = -1, 0\n"))
