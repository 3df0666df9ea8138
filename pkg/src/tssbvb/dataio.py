"""Dataset, configuration, and model-file formats.

CSV for bulk data, JSON for config and models.  Every float is written
with 17 significant digits, which round-trips 64-bit values exactly, and
the model writer emits keys in sorted order with fixed separators, so
equal results produce byte-identical files.
"""

import csv
import json
import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, DataParseError, ModelFormatError, ParameterDomainError
from .fit import FitResult
from .generative import (
    Hyperparams,
    sample_datapoint,
    sample_parameters,
    sample_path,
    sample_subtree,
    resolve_node,
)
from .state import VariationalState
from .tree import TreeShape, build_tree

MODEL_FORMAT = "tssb-vb/1"

# Seven well-separated planar clusters with unit covariance; the standard
# small demonstration target for this model family.
TOY_MEANS = np.array(
    [
        [-15.0, -5.0],
        [-15.0, 5.0],
        [-10.0, 0.0],
        [0.0, 0.0],
        [10.0, 0.0],
        [15.0, -5.0],
        [15.0, 5.0],
    ]
)


def format_float(value: float) -> str:
    """Decimal form with 17 significant digits; exact for 64-bit floats."""
    value = float(value)
    if not math.isfinite(value):
        raise ValueError(f"cannot serialize non-finite value {value!r}")
    if value == 0.0:
        value = 0.0  # collapse negative zero for stable output
    return format(value, ".17g")


def _canon_json(obj, out: list[str]) -> None:
    if obj is None:
        out.append("null")
    elif obj is True:
        out.append("true")
    elif obj is False:
        out.append("false")
    elif isinstance(obj, int):
        out.append(str(obj))
    elif isinstance(obj, float):
        out.append(format_float(obj))
    elif isinstance(obj, str):
        out.append(json.dumps(obj))
    elif isinstance(obj, (list, tuple)):
        out.append("[")
        for idx, item in enumerate(obj):
            if idx:
                out.append(",")
            _canon_json(item, out)
        out.append("]")
    elif isinstance(obj, dict):
        out.append("{")
        for idx, key in enumerate(sorted(obj)):
            if idx:
                out.append(",")
            out.append(json.dumps(key))
            out.append(":")
            _canon_json(obj[key], out)
        out.append("}")
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__}")


def canon_dumps(obj) -> str:
    out: list[str] = []
    _canon_json(obj, out)
    return "".join(out)


# ---------------------------------------------------------------------------
# datasets


@dataclass
class Dataset:
    """A finite n x p matrix plus an optional integer label per row."""

    x: np.ndarray
    labels: np.ndarray | None = None
    names: list[str] | None = None

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]


def _is_numeric_row(cells: list[str]) -> bool:
    for cell in cells:
        try:
            float(cell)
        except ValueError:
            return False
    return True


def read_csv_dataset(path) -> Dataset:
    """Read a CSV dataset.

    A first row with any non-numeric cell is taken as a header; a trailing
    header column named "label" marks per-row integer labels.  Rows must
    be rectangular and every value finite; violations raise a parse error
    carrying the 1-based line number.
    """
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = [(ln, cells) for ln, cells in enumerate(csv.reader(fh), start=1) if cells]
    except OSError as exc:
        raise DataParseError(f"cannot read dataset {path}: {exc}") from exc
    if not rows:
        raise DataParseError(f"{path}: no rows")

    names: list[str] | None = None
    has_labels = False
    first_ln, first_cells = rows[0]
    if not _is_numeric_row(first_cells):
        names = [c.strip() for c in first_cells]
        has_labels = bool(names) and names[-1].lower() == "label"
        rows = rows[1:]
        if not rows:
            raise DataParseError(f"{path}: header but no data rows")

    width = len(names) if names is not None else len(rows[0][1])
    n_feat = width - 1 if has_labels else width
    if n_feat < 1:
        raise DataParseError(f"{path}: line {rows[0][0]}: no feature columns")

    x = np.empty((len(rows), n_feat))
    labels = np.empty(len(rows), dtype=np.int64) if has_labels else None
    for r, (ln, cells) in enumerate(rows):
        if len(cells) != width:
            raise DataParseError(
                f"{path}: line {ln}: expected {width} columns, found {len(cells)}"
            )
        for j in range(n_feat):
            try:
                value = float(cells[j])
            except ValueError:
                raise DataParseError(
                    f"{path}: line {ln}: non-numeric value {cells[j]!r}"
                ) from None
            if not math.isfinite(value):
                raise DataParseError(f"{path}: line {ln}: non-finite value {cells[j]!r}")
            x[r, j] = value
        if has_labels:
            try:
                labels[r] = int(cells[-1])
            except ValueError:
                raise DataParseError(
                    f"{path}: line {ln}: label is not an integer: {cells[-1]!r}"
                ) from None
    feature_names = names[:n_feat] if names is not None else None
    return Dataset(x=x, labels=labels, names=feature_names)


def write_dataset(path, data: Dataset) -> None:
    """Write a dataset with a header row; floats keep full precision."""
    names = data.names or [f"x{j}" for j in range(data.p)]
    header = list(names) + (["label"] if data.labels is not None else [])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for i in range(data.n):
            row = [format_float(v) for v in data.x[i]]
            if data.labels is not None:
                row.append(str(int(data.labels[i])))
            writer.writerow(row)


# ---------------------------------------------------------------------------
# configuration


@dataclass
class RunConfig:
    """Parsed run configuration with defaults already filled in.

    Hyperparameter entries stay in their schema form (scalars, lists, or
    the {base, depth_factor} spreading rule) until build_hyperparams binds
    them to a tree shape and data dimension.
    """

    K: int = 2
    D: int = 3
    iters: int = 400
    restarts: int = 100
    seed: int = 0
    tol: float = 1e-8
    p: int | None = None
    preset: str = "toy"
    a: object = 3.0
    b: object = 1.0
    alpha: object = 0.5
    u: float = 5.0
    v: object = 0.1
    nu: float = 2.0
    w: object = 0.2
    m_root: object = 0.0


_CONFIG_FIELDS = {
    "K", "D", "iters", "restarts", "seed", "tol", "p", "preset",
    "a", "b", "alpha", "u", "V", "nu", "W", "m_root",
}


def _want_int(raw, field: str, minimum: int) -> int:
    if isinstance(raw, bool) or not isinstance(raw, int):
        raise ConfigError(f"{field} must be an integer, got {raw!r}")
    if raw < minimum:
        raise ConfigError(f"{field} must be >= {minimum}, got {raw}")
    return raw


def _want_pos_number(raw, field: str) -> float:
    if isinstance(raw, bool) or not isinstance(raw, (int, float)):
        raise ConfigError(f"{field} must be a number, got {raw!r}")
    value = float(raw)
    if not math.isfinite(value) or value <= 0:
        raise ConfigError(f"{field} must be positive and finite, got {raw!r}")
    return value


def _parse_spread_rate(raw):
    if isinstance(raw, dict):
        extra = set(raw) - {"base", "depth_factor"}
        if extra:
            raise ConfigError(f"a: unknown keys {sorted(extra)}")
        if "base" not in raw or "depth_factor" not in raw:
            raise ConfigError("a: depth rule needs both base and depth_factor")
        return (_want_pos_number(raw["base"], "a.base"),
                _want_pos_number(raw["depth_factor"], "a.depth_factor"))
    return _want_pos_number(raw, "a")


def _parse_matrix_or_scale(raw, field: str):
    if isinstance(raw, list):
        try:
            mat = np.asarray(raw, dtype=np.float64)
        except (TypeError, ValueError):
            raise ConfigError(f"{field} must be a number or a square matrix") from None
        if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
            raise ConfigError(f"{field} matrix must be square, got shape {mat.shape}")
        if not np.all(np.isfinite(mat)):
            raise ConfigError(f"{field} matrix must be finite")
        return mat
    return _want_pos_number(raw, field)


def config_from_mapping(raw: dict) -> RunConfig:
    """Validate a configuration mapping; unknown fields are rejected."""
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a JSON object")
    unknown = set(raw) - _CONFIG_FIELDS
    if unknown:
        raise ConfigError(f"unknown configuration field {sorted(unknown)[0]!r}")

    cfg = RunConfig()
    if "K" in raw:
        cfg = replace(cfg, K=_want_int(raw["K"], "K", 2))
    if "D" in raw:
        cfg = replace(cfg, D=_want_int(raw["D"], "D", 1))
    if "iters" in raw:
        cfg = replace(cfg, iters=_want_int(raw["iters"], "iters", 0))
    if "restarts" in raw:
        cfg = replace(cfg, restarts=_want_int(raw["restarts"], "restarts", 1))
    if "seed" in raw:
        cfg = replace(cfg, seed=_want_int(raw["seed"], "seed", 0))
    if "tol" in raw:
        tol = raw["tol"]
        if isinstance(tol, bool) or not isinstance(tol, (int, float)) or tol < 0:
            raise ConfigError(f"tol must be a number >= 0, got {tol!r}")
        cfg = replace(cfg, tol=float(tol))
    if "p" in raw:
        cfg = replace(cfg, p=_want_int(raw["p"], "p", 1))
    if "preset" in raw:
        preset = raw["preset"]
        if preset not in ("toy", "tssb"):
            raise ConfigError(f"preset must be 'toy' or 'tssb', got {preset!r}")
        cfg = replace(cfg, preset=preset)

    if "a" in raw:
        cfg = replace(cfg, a=_parse_spread_rate(raw["a"]))
    if "b" in raw:
        cfg = replace(cfg, b=_want_pos_number(raw["b"], "b"))
    if "alpha" in raw:
        alpha = raw["alpha"]
        if isinstance(alpha, list):
            if len(alpha) != cfg.K:
                raise ConfigError(
                    f"alpha list must have K = {cfg.K} entries, got {len(alpha)}"
                )
            alpha = [_want_pos_number(v, "alpha") for v in alpha]
            cfg = replace(cfg, alpha=alpha)
        else:
            cfg = replace(cfg, alpha=_want_pos_number(alpha, "alpha"))
    if "u" in raw:
        cfg = replace(cfg, u=_want_pos_number(raw["u"], "u"))
    if "V" in raw:
        cfg = replace(cfg, v=_parse_matrix_or_scale(raw["V"], "V"))
    if "nu" in raw:
        cfg = replace(cfg, nu=_want_pos_number(raw["nu"], "nu"))
    if "W" in raw:
        cfg = replace(cfg, w=_parse_matrix_or_scale(raw["W"], "W"))
    if "m_root" in raw:
        m = raw["m_root"]
        if isinstance(m, list):
            m = [float(v) for v in m]
            if not all(math.isfinite(v) for v in m):
                raise ConfigError("m_root entries must be finite")
            cfg = replace(cfg, m_root=m)
        elif isinstance(m, bool) or not isinstance(m, (int, float)):
            raise ConfigError(f"m_root must be a number or list, got {m!r}")
        else:
            cfg = replace(cfg, m_root=float(m))

    if cfg.p is not None:
        # dimension known at parse time: surface domain errors immediately
        build_hyperparams(cfg, build_tree(cfg.K, cfg.D), cfg.p)
    return cfg


def parse_config(path) -> RunConfig:
    """Load and validate a JSON configuration file."""
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    return config_from_mapping(raw)


def build_hyperparams(cfg: RunConfig, shape: TreeShape, p: int) -> Hyperparams:
    """Bind the configured hyperparameters to a tree shape and dimension."""
    if cfg.p is not None and cfg.p != p:
        raise ConfigError(f"configured p = {cfg.p} but the dataset has p = {p}")

    if isinstance(cfg.a, tuple):
        base, factor = cfg.a
        a = base * factor ** shape.depth[: shape.n_inner].astype(np.float64)
    else:
        a = np.full(shape.n_inner, float(cfg.a))

    if isinstance(cfg.alpha, list):
        if len(cfg.alpha) != shape.K:
            raise ConfigError(
                f"alpha list must have K = {shape.K} entries, got {len(cfg.alpha)}"
            )
        alpha = np.tile(np.asarray(cfg.alpha, dtype=np.float64), (shape.n_inner, 1))
    else:
        alpha = float(cfg.alpha)

    def bind_matrix(value, field: str) -> np.ndarray:
        if isinstance(value, np.ndarray):
            if value.shape != (p, p):
                raise ConfigError(
                    f"{field} matrix must be {p}x{p} for this dataset, got {value.shape}"
                )
            return value
        return float(value) * np.eye(p)

    v = bind_matrix(cfg.v, "V")
    w = bind_matrix(cfg.w, "W")

    if isinstance(cfg.m_root, list):
        if len(cfg.m_root) != p:
            raise ConfigError(
                f"m_root must have p = {p} entries, got {len(cfg.m_root)}"
            )
        m_root = np.asarray(cfg.m_root, dtype=np.float64)
    else:
        m_root = float(cfg.m_root)

    try:
        return Hyperparams.create(
            shape, p, alpha=alpha, a=a, b=float(cfg.b), nu=float(cfg.nu),
            w=w, u=float(cfg.u), v=v, m_root=m_root,
        )
    except ParameterDomainError as exc:
        raise ConfigError(str(exc)) from exc


# ---------------------------------------------------------------------------
# dataset generation


def generate_dataset(cfg: RunConfig, n: int, seed: int) -> Dataset:
    """Draw a dataset for the configured preset.

    "toy" emits the fixed seven-cluster planar mixture with unit
    covariance and uniform weights; "tssb" draws model parameters from the
    configured prior and then samples each point through its latent tree
    and path.  Labels are the true component (or emitting node) ids.
    """
    if n < 1:
        raise ParameterDomainError(f"sample count must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    if cfg.preset == "toy":
        comp = rng.integers(0, len(TOY_MEANS), size=n)
        x = TOY_MEANS[comp] + rng.standard_normal((n, 2))
        return Dataset(x=x, labels=comp.astype(np.int64))

    p = cfg.p if cfg.p is not None else 2
    shape = build_tree(cfg.K, cfg.D)
    hyper = build_hyperparams(cfg, shape, p)
    params = sample_parameters(shape, hyper, rng)
    x = np.empty((n, p))
    nodes = np.empty(n, dtype=np.int64)
    for i in range(n):
        t = sample_subtree(shape, params, rng)
        z = sample_path(shape, params, rng)
        s = resolve_node(shape, t, z)
        x[i] = sample_datapoint(shape, params, s, rng)
        nodes[i] = s
    return Dataset(x=x, labels=nodes)


# ---------------------------------------------------------------------------
# model files


def _model_mapping(result: FitResult) -> dict:
    hyper = result.hyper
    state = result.state
    return {
        "format": MODEL_FORMAT,
        "k": result.shape.K,
        "depth": result.shape.D,
        "dim": hyper.p,
        "seed": result.seed,
        "iters": result.max_iters,
        "restarts": len(result.restart_final_elbos),
        "tol": result.tol,
        "converged": result.converged,
        "selected_restart": result.selected_restart,
        "restart_final_elbos": list(result.restart_final_elbos),
        "elbo_trace": list(result.elbo_trace),
        "hyper": {
            "alpha": hyper.alpha.tolist(),
            "a": hyper.a.tolist(),
            "b": hyper.b.tolist(),
            "nu": hyper.nu.tolist(),
            "W": hyper.w.tolist(),
            "u": hyper.u,
            "V": hyper.v.tolist(),
            "m_root": hyper.m_root.tolist(),
        },
        "state": {
            "alpha_hat": state.alpha_hat.tolist(),
            "a_hat": state.a_hat.tolist(),
            "b_hat": state.b_hat.tolist(),
            "mean_hat": state.mean_hat.tolist(),
            "mean_prec_hat": state.mean_prec_hat.tolist(),
            "wish_dof_hat": state.wish_dof_hat.tolist(),
            "wish_scale_hat": state.wish_scale_hat.tolist(),
            "chain_dof_hat": state.chain_dof_hat,
            "chain_scale_hat": state.chain_scale_hat.tolist(),
        },
        "resp": result.resp.tolist(),
    }


def write_model(result: FitResult, path) -> None:
    text = canon_dumps(_model_mapping(result)) + "\n"
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def _require_key(obj: dict, key: str, where: str):
    if key not in obj:
        raise ModelFormatError(f"model file is missing {where}{key!r}")
    return obj[key]


def _as_array(value, shape: tuple, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    if arr.shape != shape:
        raise ModelFormatError(f"model field {name} has shape {arr.shape}, expected {shape}")
    return arr


def read_model(path) -> FitResult:
    """Load a model file back into a result without per-point posteriors."""
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ModelFormatError(f"cannot read model {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ModelFormatError("model file must hold a JSON object")

    fmt = _require_key(raw, "format", "")
    if fmt != MODEL_FORMAT:
        raise ModelFormatError(f"unsupported model format {fmt!r}, expected {MODEL_FORMAT!r}")

    try:
        shape = build_tree(int(_require_key(raw, "k", "")), int(_require_key(raw, "depth", "")))
    except ParameterDomainError as exc:
        raise ModelFormatError(str(exc)) from exc
    p = int(_require_key(raw, "dim", ""))

    hy = _require_key(raw, "hyper", "")
    if not isinstance(hy, dict):
        raise ModelFormatError("model field hyper must be an object")
    try:
        hyper = Hyperparams.create(
            shape, p,
            alpha=_as_array(_require_key(hy, "alpha", "hyper."), (shape.n_inner, shape.K), "hyper.alpha"),
            a=_as_array(_require_key(hy, "a", "hyper."), (shape.n_inner,), "hyper.a"),
            b=_as_array(_require_key(hy, "b", "hyper."), (shape.n_inner,), "hyper.b"),
            nu=_as_array(_require_key(hy, "nu", "hyper."), (shape.n_nodes,), "hyper.nu"),
            w=_as_array(_require_key(hy, "W", "hyper."), (shape.n_nodes, p, p), "hyper.W"),
            u=float(_require_key(hy, "u", "hyper.")),
            v=_as_array(_require_key(hy, "V", "hyper."), (p, p), "hyper.V"),
            m_root=_as_array(_require_key(hy, "m_root", "hyper."), (p,), "hyper.m_root"),
        )
    except ParameterDomainError as exc:
        raise ModelFormatError(str(exc)) from exc

    st = _require_key(raw, "state", "")
    if not isinstance(st, dict):
        raise ModelFormatError("model field state must be an object")
    s_tot, n_inner = shape.n_nodes, shape.n_inner
    state = VariationalState(
        alpha_hat=_as_array(_require_key(st, "alpha_hat", "state."), (n_inner, shape.K), "state.alpha_hat"),
        a_hat=_as_array(_require_key(st, "a_hat", "state."), (n_inner,), "state.a_hat"),
        b_hat=_as_array(_require_key(st, "b_hat", "state."), (n_inner,), "state.b_hat"),
        mean_hat=_as_array(_require_key(st, "mean_hat", "state."), (s_tot, p), "state.mean_hat"),
        mean_prec_hat=_as_array(_require_key(st, "mean_prec_hat", "state."), (s_tot, p, p), "state.mean_prec_hat"),
        wish_dof_hat=_as_array(_require_key(st, "wish_dof_hat", "state."), (s_tot,), "state.wish_dof_hat"),
        wish_scale_hat=_as_array(_require_key(st, "wish_scale_hat", "state."), (s_tot, p, p), "state.wish_scale_hat"),
        chain_dof_hat=float(_require_key(st, "chain_dof_hat", "state.")),
        chain_scale_hat=_as_array(_require_key(st, "chain_scale_hat", "state."), (p, p), "state.chain_scale_hat"),
        spread_hat=np.zeros((0, s_tot)),
        route_hat=np.zeros((0, n_inner, shape.K)),
    )

    finals_raw = _require_key(raw, "restart_final_elbos", "")
    if not isinstance(finals_raw, list) or not finals_raw:
        raise ModelFormatError("model field restart_final_elbos must be a non-empty list")
    finals = [None if v is None else float(v) for v in finals_raw]
    trace = [float(v) for v in _require_key(raw, "elbo_trace", "")]
    selected = int(_require_key(raw, "selected_restart", ""))
    if not 0 <= selected < len(finals):
        raise ModelFormatError(f"selected_restart {selected} out of range")

    return FitResult(
        shape=shape,
        hyper=hyper,
        state=state,
        elbo_trace=trace,
        restart_final_elbos=finals,
        selected_restart=selected,
        converged=bool(_require_key(raw, "converged", "")),
        map_node=None,
        node_post=None,
        resp=_as_array(_require_key(raw, "resp", ""), (s_tot,), "resp"),
        seed=int(_require_key(raw, "seed", "")),
        max_iters=int(_require_key(raw, "iters", "")),
        tol=float(_require_key(raw, "tol", "")),
    )


# ---------------------------------------------------------------------------
# result exports


def write_assignments(result: FitResult, path) -> None:
    """CSV of per-point MAP nodes: index, node, posterior mass, depth."""
    if result.map_node is None or result.node_post is None:
        raise ParameterDomainError("result carries no per-point posteriors")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["index", "node", "prob", "depth"])
        for i, s in enumerate(result.map_node):
            s = int(s)
            writer.writerow(
                [i, s, format_float(result.node_post[i, s]), int(result.shape.depth[s])]
            )


def export_dot(result: FitResult, path=None, dashed_below: float = 1.0) -> str:
    """Graphviz text of the fitted tree.

    Each node shows its id, mean to 2 significant digits, and weight;
    nodes carrying less weight than the threshold are dashed.
    """
    shape = result.shape
    lines = ["digraph tree {", "  node [shape=box];"]
    for s in range(shape.n_nodes):
        mean = ", ".join(format(v, ".2g") for v in result.state.mean_hat[s])
        label = f"{s}\\n[{mean}]\\nn={format(float(result.resp[s]), '.3g')}"
        style = ' style="dashed"' if float(result.resp[s]) < dashed_below else ""
        lines.append(f'  n{s} [label="{label}"{style}];')
    for s in range(1, shape.n_nodes):
        lines.append(f"  n{int(shape.parent[s])} -> n{s};")
    lines.append("}")
    text = "\n".join(lines) + "\n"
    if path is not None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    return text
