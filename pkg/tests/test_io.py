import json
import math

import numpy as np
import pytest
from helpers import make_hyper
from hypothesis import given
from hypothesis import strategies as st

from tssbvb import (
    ConfigError,
    DataParseError,
    Dataset,
    ModelFormatError,
    ParameterDomainError,
    RunConfig,
    build_hyperparams,
    build_tree,
    canon_dumps,
    config_from_mapping,
    export_dot,
    fit,
    format_float,
    generate_dataset,
    parse_config,
    read_csv_dataset,
    read_model,
    write_assignments,
    write_dataset,
    write_model,
)
from tssbvb.dataio import TOY_MEANS


# ---------------------------------------------------------------------------
# float and JSON canonicalization


@given(st.floats(allow_nan=False, allow_infinity=False))
def test_float_serialization_round_trips(value):
    assert float(format_float(value)) == value


def test_float_serialization_collapses_negative_zero():
    assert format_float(-0.0) == format_float(0.0)
    assert "-" not in format_float(-0.0)


@pytest.mark.parametrize("bad", [math.inf, -math.inf, math.nan])
def test_float_serialization_rejects_non_finite(bad):
    with pytest.raises(ValueError, match="non-finite"):
        format_float(bad)


def test_canonical_json_sorts_keys_and_stays_compact():
    text = canon_dumps({"b": 1, "a": [1.5, True, None, "x"]})
    assert text == '{"a":[1.5,true,null,"x"],"b":1}'


def test_canonical_json_rejects_unknown_types():
    with pytest.raises(TypeError):
        canon_dumps({"a": object()})


# ---------------------------------------------------------------------------
# CSV datasets


def test_read_headerless_csv(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("1.5,2\n-3,4e2\n")
    data = read_csv_dataset(path)
    assert np.array_equal(data.x, [[1.5, 2.0], [-3.0, 400.0]])
    assert data.labels is None
    assert data.names is None


def test_read_csv_with_header_and_labels(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("u,v,Label\n1,2,0\n3,4,6\n")
    data = read_csv_dataset(path)
    assert data.p == 2
    assert data.names == ["u", "v"]
    assert np.array_equal(data.labels, [0, 6])


def test_dataset_round_trip_preserves_floats_exactly(tmp_path):
    rng = np.random.default_rng(0)
    x = rng.standard_normal((20, 3)) * np.array([1e-8, 1.0, 1e12])
    labels = rng.integers(0, 5, size=20)
    path = tmp_path / "d.csv"
    write_dataset(path, Dataset(x=x, labels=labels))
    back = read_csv_dataset(path)
    assert np.array_equal(back.x, x)
    assert np.array_equal(back.labels, labels)
    assert back.names == ["x0", "x1", "x2"]


@pytest.mark.parametrize(
    "text,fragment",
    [
        ("1,2\n3\n", "line 2: expected 2 columns, found 1"),
        ("1,2\n3,zap\n", "line 2: non-numeric value 'zap'"),
        ("1,2\n3,inf\n", "line 2: non-finite value 'inf'"),
        ("a,label\n1,1.5\n", "line 2: label is not an integer"),
        ("", "no rows"),
        ("a,b\n", "header but no data rows"),
    ],
)
def test_csv_errors_carry_line_numbers(tmp_path, text, fragment):
    path = tmp_path / "bad.csv"
    path.write_text(text)
    with pytest.raises(DataParseError, match=fragment) as err:
        read_csv_dataset(path)
    assert "bad.csv" in str(err.value)


def test_missing_dataset_file_is_a_parse_error(tmp_path):
    with pytest.raises(DataParseError, match="cannot read dataset"):
        read_csv_dataset(tmp_path / "absent.csv")


# ---------------------------------------------------------------------------
# configuration


def test_config_defaults():
    cfg = config_from_mapping({})
    assert (cfg.K, cfg.D) == (2, 3)
    assert (cfg.iters, cfg.restarts, cfg.seed, cfg.tol) == (400, 100, 0, 1e-8)
    assert cfg.preset == "toy"
    assert (cfg.a, cfg.b, cfg.alpha) == (3.0, 1.0, 0.5)
    assert (cfg.u, cfg.v, cfg.nu, cfg.w, cfg.m_root) == (5.0, 0.1, 2.0, 0.2, 0.0)
    assert cfg.p is None


def test_depth_scaled_spreading_rate():
    cfg = config_from_mapping({"a": {"base": 2.0, "depth_factor": 0.5}, "p": 2})
    shape = build_tree(2, 3)
    hyper = build_hyperparams(cfg, shape, 2)
    assert np.allclose(hyper.a, [2.0, 1.0, 1.0, 0.5, 0.5, 0.5, 0.5])


def test_alpha_list_binds_per_child():
    cfg = config_from_mapping({"K": 3, "D": 2, "alpha": [0.2, 0.3, 0.5], "p": 2})
    hyper = build_hyperparams(cfg, build_tree(3, 2), 2)
    assert np.allclose(hyper.alpha, np.tile([0.2, 0.3, 0.5], (4, 1)))


@pytest.mark.parametrize(
    "raw,fragment",
    [
        ({"zap": 1}, "unknown configuration field 'zap'"),
        ({"K": 1}, "K must be >= 2"),
        ({"K": True}, "K must be an integer"),
        ({"D": 0}, "D must be >= 1"),
        ({"restarts": 0}, "restarts must be >= 1"),
        ({"seed": -1}, "seed must be >= 0"),
        ({"tol": -1e-9}, "tol must be a number >= 0"),
        ({"preset": "zap"}, "preset must be 'toy' or 'tssb'"),
        ({"alpha": [0.5]}, "alpha list must have K = 2 entries"),
        ({"alpha": [0.5, -1.0]}, "alpha must be positive"),
        ({"a": {"base": 1.0}}, "depth rule needs both base and depth_factor"),
        ({"a": {"base": 1.0, "depth_factor": 1.0, "zap": 1}}, "unknown keys"),
        ({"V": [[1.0, 0.0]]}, "V matrix must be square"),
        ({"W": "zap"}, "W must be a number"),
        ({"p": 4}, "nu"),
        ({"m_root": "zap"}, "m_root must be a number or list"),
    ],
)
def test_config_rejections(raw, fragment):
    with pytest.raises(ConfigError, match=fragment):
        config_from_mapping(raw)


def test_config_matrix_must_match_data_dimension():
    cfg = config_from_mapping({"V": [[1.0, 0.0], [0.0, 1.0]]})
    with pytest.raises(ConfigError, match="V matrix must be 3x3"):
        build_hyperparams(cfg, build_tree(2, 2), 3)


def test_configured_p_must_match_data():
    cfg = config_from_mapping({"p": 2})
    with pytest.raises(ConfigError, match="configured p = 2 but the dataset has p = 3"):
        build_hyperparams(cfg, build_tree(2, 2), 3)


def test_parse_config_file_errors(tmp_path):
    path = tmp_path / "c.json"
    path.write_text("{nope")
    with pytest.raises(ConfigError, match="invalid JSON"):
        parse_config(path)
    with pytest.raises(ConfigError, match="cannot read config"):
        parse_config(tmp_path / "absent.json")


def test_parse_config_file_round_trip(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"K": 3, "D": 2, "seed": 9, "W": 0.5}))
    cfg = parse_config(path)
    assert (cfg.K, cfg.D, cfg.seed, cfg.w) == (3, 2, 9, 0.5)


# ---------------------------------------------------------------------------
# dataset generation


def test_toy_generation_is_deterministic_and_labeled():
    cfg = config_from_mapping({})
    a = generate_dataset(cfg, 300, seed=4)
    b = generate_dataset(cfg, 300, seed=4)
    assert np.array_equal(a.x, b.x)
    assert np.array_equal(a.labels, b.labels)
    assert a.x.shape == (300, 2)
    assert set(np.unique(a.labels)) <= set(range(len(TOY_MEANS)))
    centered = a.x - TOY_MEANS[a.labels]
    assert np.abs(centered.mean(axis=0)).max() < 0.3


def test_tree_preset_generation_labels_are_node_ids():
    cfg = config_from_mapping({"preset": "tssb", "K": 2, "D": 2, "p": 3, "nu": 4})
    data = generate_dataset(cfg, 50, seed=1)
    again = generate_dataset(cfg, 50, seed=1)
    assert data.x.shape == (50, 3)
    assert np.array_equal(data.x, again.x)
    n_nodes = build_tree(2, 2).n_nodes
    assert np.all((data.labels >= 0) & (data.labels < n_nodes))


def test_generation_rejects_empty_request():
    with pytest.raises(ParameterDomainError, match="sample count"):
        generate_dataset(config_from_mapping({}), 0, seed=0)


# ---------------------------------------------------------------------------
# model files


@pytest.fixture(scope="module")
def fitted(tmp_path_factory):
    rng = np.random.default_rng(8)
    shape = build_tree(2, 2)
    hyper = make_hyper(shape)
    x = np.concatenate(
        [
            rng.standard_normal((10, 2)) + np.array([3.0, 0.0]),
            rng.standard_normal((10, 2)) - np.array([3.0, 0.0]),
        ]
    )
    result = fit(x, shape, hyper, iters=8, restarts=2, seed=3, tol=0.0)
    path = tmp_path_factory.mktemp("model") / "model.json"
    write_model(result, path)
    return result, path


def test_model_round_trip_preserves_everything(fitted):
    result, path = fitted
    back = read_model(path)
    assert (back.shape.K, back.shape.D) == (2, 2)
    assert np.array_equal(back.hyper.alpha, result.hyper.alpha)
    assert np.array_equal(back.hyper.w, result.hyper.w)
    assert np.array_equal(back.hyper.m_root, result.hyper.m_root)
    for name in (
        "alpha_hat",
        "a_hat",
        "b_hat",
        "mean_hat",
        "mean_prec_hat",
        "wish_dof_hat",
        "wish_scale_hat",
        "chain_scale_hat",
    ):
        assert np.array_equal(getattr(back.state, name), getattr(result.state, name)), name
    assert back.state.chain_dof_hat == result.state.chain_dof_hat
    assert back.elbo_trace == result.elbo_trace
    assert back.restart_final_elbos == result.restart_final_elbos
    assert back.selected_restart == result.selected_restart
    assert back.converged == result.converged
    assert np.array_equal(back.resp, result.resp)
    assert (back.seed, back.max_iters, back.tol) == (result.seed, result.max_iters, result.tol)
    assert back.map_node is None and back.node_post is None
    assert back.state.spread_hat.shape == (0, 7)
    assert back.state.route_hat.shape == (0, 3, 2)


def test_model_rewrite_is_byte_identical(fitted, tmp_path):
    _, path = fitted
    back = read_model(path)
    out = tmp_path / "again.json"
    write_model(back, out)
    assert out.read_bytes() == path.read_bytes()


def _tamper(path, out, mutate):
    raw = json.loads(path.read_text())
    mutate(raw)
    out.write_text(json.dumps(raw))
    return out


@pytest.mark.parametrize(
    "mutate,fragment",
    [
        (lambda r: r.pop("format"), "missing 'format'"),
        (lambda r: r.update(format="zap/9"), "unsupported model format"),
        (lambda r: r["state"].pop("a_hat"), "missing state.'a_hat'"),
        (lambda r: r["state"].update(a_hat=[1.0]), "state.a_hat has shape"),
        (lambda r: r.update(selected_restart=7), "selected_restart 7 out of range"),
        (lambda r: r["hyper"].update(nu=[0.5] * 7), "nu"),
        (lambda r: r.update(restart_final_elbos=[]), "non-empty list"),
    ],
)
def test_model_violations_are_format_errors(fitted, tmp_path, mutate, fragment):
    _, path = fitted
    bad = _tamper(path, tmp_path / "bad.json", mutate)
    with pytest.raises(ModelFormatError, match=fragment):
        read_model(bad)


def test_model_must_be_a_json_object(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("[1,2]")
    with pytest.raises(ModelFormatError, match="must hold a JSON object"):
        read_model(path)
    path.write_text("{nope")
    with pytest.raises(ModelFormatError, match="invalid JSON"):
        read_model(path)
    with pytest.raises(ModelFormatError, match="cannot read model"):
        read_model(tmp_path / "absent.json")


# ---------------------------------------------------------------------------
# assignments and graph export


def test_assignment_export(fitted, tmp_path):
    result, _ = fitted
    path = tmp_path / "assign.csv"
    write_assignments(result, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "index,node,prob,depth"
    assert len(lines) == 1 + 20
    first = lines[1].split(",")
    assert int(first[0]) == 0
    assert int(first[1]) == int(result.map_node[0])
    assert float(first[2]) == result.node_post[0, int(result.map_node[0])]
    assert int(first[3]) == int(result.shape.depth[int(result.map_node[0])])


def test_assignments_need_per_point_posteriors(fitted, tmp_path):
    _, path = fitted
    back = read_model(path)
    with pytest.raises(ParameterDomainError, match="no per-point posteriors"):
        write_assignments(back, tmp_path / "assign.csv")


def test_dot_export_structure(fitted, tmp_path):
    result, _ = fitted
    text = export_dot(result, dashed_below=0.0)
    assert text.startswith("digraph tree {")
    assert text.count("->") == result.shape.n_nodes - 1
    assert text.count("[label=") == result.shape.n_nodes
    assert "dashed" not in text
    all_dashed = export_dot(result, dashed_below=float(result.resp.max()) + 1.0)
    assert all_dashed.count("dashed") == result.shape.n_nodes
    out = tmp_path / "tree.dot"
    export_dot(result, path=out)
    assert out.read_text() == export_dot(result)
