"""
Scenario runner: configuration, presets, single runs, comparisons and sweeps.

A :class:`Scenario` is a plain mapping-backed description of one experiment.
Every algorithm listed in it is simulated against the same scene, reference
and compensation bank; the outcome is one :class:`RunRecord` holding an
:class:`AlgorithmResult` per algorithm.

Config files are JSON objects whose keys map one-to-one onto the
:class:`Scenario` fields. A ``preset`` key (``"desk"`` or ``"paper"``)
supplies defaults that the remaining keys override.
"""

from __future__ import annotations

import copy
import csv
import hashlib
import json
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .analysis import DEFAULT_NSE_WINDOW, nse, nse_trace, write_json
from .compensation import CompensationBank, CompTrainConfig, train_all
from .controllers import (
    DEFAULT_CEILING,
    DecentralizedFxlms,
    DiffusionFxlms,
    McFxlms,
    MgdNodeNetwork,
    check_topology,
    ring_topology,
)
from .dsp import FilePlaybackSource, make_source
from .errors import (
    ComparisonError,
    ConfigError,
    DivergedError,
    DmancError,
    EndOfStream,
)
from .network import NetworkBus, schedule_from_config
from .scene import Plant, SceneRecipe, load_paths, synthesize_scene

__all__ = [
    "ALGORITHMS",
    "PRESETS",
    "Scenario",
    "AlgorithmResult",
    "RunRecord",
    "SweepResult",
    "preset",
    "load_scenario",
    "build_scene",
    "build_reference",
    "build_compensation",
    "build_delay_schedules",
    "run",
    "compare",
    "sweep",
    "write_csv",
]

ALGORITHMS = ("mcfxlms", "decentralized", "dfxlms", "mgdfxlms", "asss-mgdfxlms")
_MGD = ("mgdfxlms", "asss-mgdfxlms")
_ENGINES = ("compiled", "reference")
CSV_COLUMNS = ("sample", "node", "nse_db", "mu", "delta")

# Desk scale halves the sampling rate, so delays given in seconds shrink
# to half as many samples automatically. Both presets draw scenes whose
# cross paths are exactly representable by the compensation filters;
# filters are still trained unless the config asks for the true ones.
PRESETS = {
    "desk": {
        "fs": 8000,
        "duration": 80_000,
        "N": 128,
        "scene": {
            "recipe": {
                "K": 4, "L": 64, "H": 16, "self_delay": [2, 6], "cross_extra_delay": [1, 6],
                "primary_delay": [24, 28], "tail": 36, "decay": 0.9, "cross_gain": 0.5,
                "exact_compensation": True,
            }
        },
        "noise": {"kind": "bandpass-broadband", "low_hz": 100.0, "high_hz": 1000.0},
        "compensation": {"method": "train", "H": 16},
    },
    "paper": {
        "fs": 16000,
        "duration": 320_000,
        "N": 512,
        "scene": {
            "recipe": {
                "K": 6, "L": 256, "H": 33, "self_delay": [8, 20], "cross_extra_delay": [4, 16],
                "primary_delay": [96, 112], "tail": 144, "decay": 0.974, "cross_gain": 0.5,
                "exact_compensation": True,
            }
        },
        "noise": {"kind": "bandpass-broadband", "low_hz": 100.0, "high_hz": 1000.0},
        "compensation": {"method": "train", "H": 33},
    },
}

_FIELDS = (
    "name", "preset", "seed", "fs", "duration", "N", "scene", "noise", "algorithms",
    "compensation", "H_sweep", "delay", "nse_window", "stride", "engine", "combine",
    "ceiling", "out",
)


def _merge(base, over):
    out = copy.deepcopy(base)
    for key, val in over.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict) and key != "algorithms":
            out[key] = _merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def preset(name):
    """Return a deep copy of a preset mapping."""
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return copy.deepcopy(PRESETS[name])


def _int_like(v):
    return isinstance(v, (int, np.integer)) and not isinstance(v, bool)


def _num(v):
    return isinstance(v, (int, float, np.integer, np.floating)) and not isinstance(v, bool)


@dataclass
class Scenario:
    """One experiment.

    Attributes
    ----------
    name : str
    preset : str or None
        Preset the config was layered on; informational once resolved.
    seed : int
        Master seed. The scene recipe, reference source and compensation
        training derive ``seed``, ``seed + 1`` and ``seed + 2`` unless they
        set their own ``seed``.
    fs : float
        Sampling rate in Hz.
    duration : int
        Number of samples.
    N : int
        Control filter length.
    scene : dict
        ``{"recipe": {...SceneRecipe fields}}`` or ``{"file": path}``.
    noise : dict
        Source mapping understood by :func:`dmanc.dsp.make_source`.
    algorithms : dict
        Algorithm name to options. Every entry needs ``mu`` (scalar, or a
        per-node list for the decentralized and diffusion controllers).
        ``dfxlms`` also takes ``mode`` (``"ATC"``/``"CTA"``) and either
        ``hops`` for a ring or an explicit ``topology`` matrix.
    compensation : dict
        ``method`` is ``"train"``, ``"true"`` (the scene's exact filters)
        or ``"file"`` (with ``path``); ``H`` sets the length and ``train``
        holds :class:`CompTrainConfig` overrides.
    H_sweep : list of int
        Values used when sweeping the ``H`` axis without explicit values.
    delay : dict
        ``default`` schedule mapping plus optional ``links`` keyed
        ``"m->k"``. A bare schedule mapping is taken as the default.
    nse_window, stride : int
        NSE averaging window and CSV row stride.
    engine : {"compiled", "reference"}
        Compiled loops or the per-sample object controllers.
    combine : {"tap", "temporal"}
        Mixed-gradient combine rule; ``"temporal"`` needs the reference engine.
    ceiling : float
        Divergence threshold on ``max |w|``.
    out : str or None
        Output directory; ``None`` skips writing files.
    """

    name: str = "scenario"
    preset: str | None = None
    seed: int = 0
    fs: float = 8000.0
    duration: int = 80_000
    N: int = 128
    scene: dict = field(default_factory=lambda: {"recipe": {}})
    noise: dict = field(default_factory=lambda: {"kind": "white-gaussian"})
    algorithms: dict = field(default_factory=dict)
    compensation: dict = field(default_factory=lambda: {"method": "train"})
    H_sweep: list = field(default_factory=list)
    delay: dict = field(default_factory=lambda: {"default": {"kind": "constant", "delay": 0}})
    nse_window: int = DEFAULT_NSE_WINDOW
    stride: int = 100
    engine: str = "compiled"
    combine: str = "tap"
    ceiling: float = DEFAULT_CEILING
    out: str | None = None

    @classmethod
    def from_dict(cls, cfg, preset_name=None):
        """Build from a config mapping, layering it over a preset if named."""
        if not isinstance(cfg, dict):
            raise ConfigError("scenario config must be a JSON object")
        unknown = sorted(set(cfg) - set(_FIELDS))
        if unknown:
            raise ConfigError(f"unknown scenario keys: {unknown}")
        name = preset_name or cfg.get("preset")
        merged = _merge(preset(name), cfg) if name else dict(cfg)
        merged["preset"] = name
        return cls(**copy.deepcopy(merged))

    def to_dict(self):
        return {f: copy.deepcopy(getattr(self, f)) for f in _FIELDS}

    def replace(self, **changes):
        d = self.to_dict()
        d.update(changes)
        return Scenario(**d)

    def digest(self):
        """SHA-256 of the canonical JSON form, ignoring the output directory."""
        d = self.to_dict()
        d.pop("out")
        text = json.dumps(d, sort_keys=True, separators=(",", ":"), default=float)
        return hashlib.sha256(text.encode()).hexdigest()

    # -- validation ---------------------------------------------------------

    def validate(self):
        """Check every field and that referenced files exist; raise :class:`ConfigError`."""
        if not _int_like(self.seed) or self.seed < 0:
            raise ConfigError("seed must be a non-negative integer")
        if not _num(self.fs) or not self.fs > 0:
            raise ConfigError("fs must be a positive number")
        if not _int_like(self.duration) or self.duration < 0:
            raise ConfigError("duration must be a non-negative integer sample count")
        if not _int_like(self.N) or self.N < 1:
            raise ConfigError("N must be a positive integer")
        for key in ("nse_window", "stride"):
            v = getattr(self, key)
            if not _int_like(v) or v < 1:
                raise ConfigError(f"{key} must be a positive integer")
        if self.engine not in _ENGINES:
            raise ConfigError(f"engine must be one of {_ENGINES}")
        if self.combine not in ("tap", "temporal"):
            raise ConfigError("combine must be 'tap' or 'temporal'")
        if self.combine == "temporal" and self.engine != "reference":
            raise ConfigError("the temporal combine rule is only available with engine 'reference'")
        if not _num(self.ceiling) or not self.ceiling > 0:
            raise ConfigError("ceiling must be positive")
        self._validate_scene()
        self._validate_noise()
        self._validate_algorithms()
        if self.needs_compensation():
            self._validate_compensation()
        if not isinstance(self.H_sweep, list) or not all(_int_like(h) and h >= 1 for h in self.H_sweep):
            raise ConfigError("H_sweep must be a list of positive integers")
        self._validate_delay()
        return self

    def _validate_scene(self):
        sc = self.scene
        if not isinstance(sc, dict) or len(set(sc) & {"recipe", "file"}) != 1:
            raise ConfigError("scene needs exactly one of 'recipe' or 'file'")
        if "file" in sc:
            if not os.path.isfile(sc["file"]):
                raise ConfigError(f"scene file not found: {sc['file']}")
        else:
            known = set(SceneRecipe.__dataclass_fields__)
            bad = sorted(set(sc["recipe"]) - known)
            if bad:
                raise ConfigError(f"unknown recipe keys: {bad}")

    def _validate_noise(self):
        kind = self.noise.get("kind") if isinstance(self.noise, dict) else None
        if kind not in ("white-gaussian", "bandpass-broadband", "sine", "file-playback"):
            raise ConfigError(f"unknown noise kind {kind!r}")
        if kind == "file-playback":
            path = self.noise.get("path")
            if not path or not os.path.isfile(path):
                raise ConfigError(f"noise file not found: {path}")
        if kind == "sine" and "f0" not in self.noise:
            raise ConfigError("sine noise needs f0")
        if kind == "bandpass-broadband":
            lo = self.noise.get("low_hz", 100.0)
            hi = self.noise.get("high_hz", 1000.0)
            if not 0 < lo < hi < self.fs / 2:
                raise ConfigError(f"band edges must satisfy 0 < low < high < fs/2, got {lo}, {hi}")

    def _validate_algorithms(self):
        if not isinstance(self.algorithms, dict) or not self.algorithms:
            raise ConfigError("algorithms must name at least one algorithm")
        for alg, opts in self.algorithms.items():
            if alg not in ALGORITHMS:
                raise ConfigError(f"unknown algorithm {alg!r}; choose from {ALGORITHMS}")
            if not isinstance(opts, dict) or "mu" not in opts:
                raise ConfigError(f"{alg}: options must include mu")
            mu = opts["mu"]
            if isinstance(mu, list):
                if alg not in ("decentralized", "dfxlms"):
                    raise ConfigError(f"{alg}: per-node mu is only supported for decentralized/dfxlms")
                if not all(_num(m) and m >= 0 for m in mu):
                    raise ConfigError(f"{alg}: mu entries must be non-negative numbers")
            elif not _num(mu) or mu < 0 or not math.isfinite(mu):
                raise ConfigError(f"{alg}: mu must be a non-negative number")
            if alg == "dfxlms" and opts.get("mode", "ATC") not in ("ATC", "CTA"):
                raise ConfigError("dfxlms mode must be ATC or CTA")

    def _validate_compensation(self):
        comp = self.compensation
        method = comp.get("method", "train")
        if method not in ("train", "true", "file"):
            raise ConfigError(f"unknown compensation method {method!r}")
        if method == "file" and not os.path.isfile(comp.get("path", "")):
            raise ConfigError(f"compensation file not found: {comp.get('path')}")
        H = comp.get("H", 16)
        if not _int_like(H) or H < 1:
            raise ConfigError("compensation H must be a positive integer")
        train = comp.get("train", {})
        bad = sorted(set(train) - set(CompTrainConfig.__dataclass_fields__))
        if bad:
            raise ConfigError(f"unknown compensation training keys: {bad}")

    def _validate_delay(self):
        if not isinstance(self.delay, dict):
            raise ConfigError("delay must be a mapping")
        try:
            build_delay_schedules(self, self.num_nodes())
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid delay schedule: {exc}") from exc

    # -- helpers ------------------------------------------------------------

    def needs_compensation(self):
        return any(a in _MGD for a in self.algorithms)

    def num_nodes(self):
        if "recipe" in self.scene:
            return int(self.scene["recipe"].get("K", SceneRecipe.K))
        return load_paths(self.scene["file"]).K


def load_scenario(path, preset_name=None, seed=None, out=None):
    """Read a JSON config, apply CLI overrides and validate."""
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    sc = Scenario.from_dict(cfg, preset_name)
    if seed is not None:
        sc.seed = int(seed)
    if out is not None:
        sc.out = str(out)
    return sc.validate()


# -- building blocks -----------------------------------------------------------------


def build_scene(sc):
    if "file" in sc.scene:
        return load_paths(sc.scene["file"])
    recipe = dict(sc.scene["recipe"])
    recipe.setdefault("seed", sc.seed)
    for key in ("self_delay", "cross_extra_delay", "primary_delay"):
        if key in recipe:
            recipe[key] = tuple(recipe[key])
    return synthesize_scene(SceneRecipe(**recipe))


def build_reference(sc):
    """The reference record ``x`` of length ``duration``."""
    spec = dict(sc.noise)
    spec.setdefault("seed", sc.seed + 1)
    src = make_source(spec, sc.fs)
    if isinstance(src, FilePlaybackSource) and not src.loop and len(src) < sc.duration:
        raise ConfigError(f"noise file holds {len(src)} samples, duration needs {sc.duration}")
    try:
        return src.take(sc.duration)
    except EndOfStream as exc:
        raise ConfigError(str(exc)) from exc


def build_compensation(sc, scene):
    comp = sc.compensation
    method = comp.get("method", "train")
    H = int(comp.get("H", 16))
    if method == "true":
        if scene.comp_true is None:
            raise ConfigError("compensation method 'true' needs an exact-compensation scene")
        if scene.comp_true.shape[2] != H:
            raise ConfigError(f"scene carries H={scene.comp_true.shape[2]} filters, config asks for H={H}")
        return CompensationBank(scene.comp_true, {"H": H, "method": "true"})
    if method == "file":
        bank = CompensationBank.load(comp["path"])
        if bank.K != scene.K:
            raise ConfigError(f"compensation bank is for K={bank.K}, scene has K={scene.K}")
        return bank
    train = dict(comp.get("train", {}))
    train.setdefault("seed", sc.seed + 2)
    train["H"] = H
    bank = train_all(scene, CompTrainConfig(**train))
    bank.meta["method"] = "train"
    return bank


def _link_key(key):
    try:
        a, b = key.split("->")
        return int(a), int(b)
    except ValueError as exc:
        raise ConfigError(f"link keys look like 'm->k', got {key!r}") from exc


def build_delay_schedules(sc, K):
    """Map ``(sender, receiver)`` to a :class:`DelaySchedule`.

    Schedules marked ``per_node`` take their index from the receiving node.
    """
    cfg = sc.delay
    default = cfg.get("default", cfg if "kind" in cfg else {"kind": "constant", "delay": 0})
    links = {}
    for key, val in cfg.get("links", {}).items():
        m, k = _link_key(key)
        if not (0 <= m < K and 0 <= k < K) or m == k:
            raise ConfigError(f"link {key!r} is not a valid pair for K={K}")
        links[(m, k)] = val
    per_node = bool(default.get("per_node"))
    shared = None if per_node else schedule_from_config(default, sc.fs)
    table = {}
    for m in range(K):
        for k in range(K):
            if m == k:
                continue
            if (m, k) in links:
                table[(m, k)] = schedule_from_config(links[(m, k)], sc.fs, node=k)
            else:
                table[(m, k)] = shared or schedule_from_config(default, sc.fs, node=k)
    return table


def _delay_tables(table, K, T):
    """Distinct schedules tabulated over ``range(T)`` plus the per-link row index."""
    rows, index = [], {}
    sched_of = np.zeros((K, K), dtype=np.int64)
    ns = np.arange(T)
    for (m, k), sched in table.items():
        key = id(sched)
        if key not in index:
            index[key] = len(rows)
            rows.append(np.asarray(sched.evaluate(ns), dtype=np.int64).reshape(T))
        sched_of[m, k] = index[key]
    tab = np.stack(rows) if rows else np.zeros((1, T), dtype=np.int64)
    return sched_of, np.ascontiguousarray(tab)


def _topology(opts, K):
    if "topology" in opts:
        A = np.asarray(opts["topology"], dtype=np.float64)
        check_topology(A)
        return A
    return ring_topology(K, int(opts.get("hops", 1)))


# -- results -------------------------------------------------------------------------


@dataclass
class AlgorithmResult:
    """Outcome of one algorithm inside a run.

    ``samples``/``nse_db``/``mu``/``delta`` are the strided trace;
    ``terminal_nse`` is per-node NSE over the last ``nse_window`` valid
    samples (NaN if undefined).
    """

    algorithm: str
    samples: np.ndarray
    nse_db: np.ndarray
    mu: np.ndarray
    delta: np.ndarray
    weights: np.ndarray
    diverged: bool
    diverged_at: int | None
    diverged_node: int | None
    terminal_nse: np.ndarray
    wall_clock: float
    e: np.ndarray | None = None
    d: np.ndarray | None = None

    def summary(self):
        return {
            "algorithm": self.algorithm,
            "diverged": self.diverged,
            "diverged_at": self.diverged_at,
            "diverged_node": self.diverged_node,
            "terminal_nse_db": [float(v) for v in self.terminal_nse],
            "wall_clock_s": self.wall_clock,
        }


@dataclass
class RunRecord:
    scenario: Scenario
    scenario_hash: str
    results: dict
    compensation_meta: dict = field(default_factory=dict)
    wall_clock: float = 0.0

    @property
    def diverged(self):
        return {a: r.diverged for a, r in self.results.items()}

    def to_json(self):
        return {
            "scenario": self.scenario.to_dict(),
            "scenario_hash": self.scenario_hash,
            "wall_clock_s": self.wall_clock,
            "compensation": self.compensation_meta,
            "results": [dict(r.summary(), weights=r.weights.tolist()) for r in self.results.values()],
        }

    @classmethod
    def from_json(cls, obj):
        """Rebuild a weights-and-summary record (traces are not stored in JSON)."""
        sc = Scenario(**obj["scenario"])
        results = {}
        for r in obj["results"]:
            a = r["algorithm"]
            W = np.asarray(r["weights"], dtype=np.float64)
            results[a] = AlgorithmResult(
                a, np.zeros(0, dtype=np.int64), np.zeros((0, W.shape[0])), np.zeros((0, W.shape[0])),
                np.zeros((0, W.shape[0]), dtype=np.int64), W, r["diverged"], r["diverged_at"],
                r["diverged_node"], np.asarray(r["terminal_nse_db"], dtype=np.float64), r["wall_clock_s"],
            )
        return cls(sc, obj["scenario_hash"], results, obj.get("compensation", {}), obj.get("wall_clock_s", 0.0))


def _fmt(v):
    return repr(float(v))


def write_csv(result, path):
    """One row per (strided sample, node): ``sample,node,nse_db,mu,delta``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        K = result.weights.shape[0]
        for i, n in enumerate(result.samples):
            for k in range(K):
                w.writerow((int(n), k, _fmt(result.nse_db[i, k]), _fmt(result.mu[i, k]), int(result.delta[i, k])))


# -- simulation ----------------------------------------------------------------------


def _simulate_compiled(alg, opts, sc, scene, x, bank, table):
    K, N = scene.K, sc.N
    T = len(x)
    if alg in _MGD:
        sched_of, tab = _delay_tables(table, K, T)
        s_self = np.ascontiguousarray(np.array([scene.estimates[k, k] for k in range(K)]))
        e, d, mu, delta, W, _, div_at, div_node = kernels.mgd_loop(
            x, scene.primary, scene.secondary, s_self, np.ascontiguousarray(bank.filters), sched_of, tab,
            float(opts["mu"]), float(sc.fs), alg == "asss-mgdfxlms", N, float(sc.ceiling), 0,
        )
        valid = min(div_at, T) if div_at >= 0 else T
        return e, d, mu, delta, W, div_at, div_node, valid
    mode = {"mcfxlms": kernels.MODE_MC, "decentralized": kernels.MODE_DEC}.get(alg)
    A = np.eye(K)
    if alg == "dfxlms":
        mode = kernels.MODE_ATC if opts.get("mode", "ATC") == "ATC" else kernels.MODE_CTA
        A = _topology(opts, K)
    mu_vec = np.broadcast_to(np.asarray(opts["mu"], dtype=np.float64), (K,)).copy()
    e, d, W, _, div_at, div_node = kernels.fxlms_loop(
        mode, x, scene.primary, scene.secondary, scene.estimates, N, mu_vec, A, float(sc.ceiling), 0,
    )
    valid = div_at + 1 if div_at >= 0 else T
    mu = np.broadcast_to(mu_vec, (T, K)).copy()
    return e, d, mu, np.zeros((T, K), dtype=np.int64), W, div_at, div_node, valid


def _simulate_reference(alg, opts, sc, scene, x, bank, table):
    K, N = scene.K, sc.N
    T = len(x)
    if alg == "mcfxlms":
        ctrl = McFxlms(scene.estimates, N, float(opts["mu"]), sc.ceiling)
    elif alg == "decentralized":
        ctrl = DecentralizedFxlms(scene.estimates, N, opts["mu"], sc.ceiling)
    elif alg == "dfxlms":
        ctrl = DiffusionFxlms(scene.estimates, N, opts["mu"], _topology(opts, K), opts.get("mode", "ATC"),
                              sc.ceiling)
    else:
        ctrl = MgdNodeNetwork(scene.estimates, N, bank.filters, float(opts["mu"]), sc.fs,
                              asss=alg == "asss-mgdfxlms", bus=NetworkBus(K, table), combine=sc.combine,
                              ceiling=sc.ceiling)
    plant = Plant(scene)
    e = np.zeros((T, K))
    d = np.zeros((T, K))
    mu = np.zeros((T, K))
    delta = np.zeros((T, K), dtype=np.int64)
    div_at = div_node = -1
    valid = T
    for n in range(T):
        xn = float(x[n])
        try:
            y = ctrl.output(xn, n)
        except DivergedError as exc:
            div_at, div_node, valid = n, exc.node, n
            break
        mu[n] = ctrl.mu
        delta[n] = ctrl.delta
        d[n], e[n] = plant.propagate(xn, y)
        try:
            ctrl.adapt(e[n], n)
        except DivergedError as exc:
            div_at, div_node, valid = n, exc.node, n + 1
            break
    if div_at < 0 and alg in _MGD:
        # fold in the last gradient, matching the compiled engine
        try:
            ctrl.output(0.0, T)
        except DivergedError as exc:
            div_at, div_node = T, exc.node
    return e, d, mu, delta, ctrl.W.copy(), div_at, div_node, valid


def _terminal(e, d, window):
    K = e.shape[1]
    out = np.full(K, np.nan)
    if len(e) == 0:
        return out
    lo = max(0, len(e) - window)
    for k in range(K):
        try:
            out[k] = nse(e[lo:, k], d[lo:, k])
        except DmancError:
            pass
    return out


def _simulate(alg, sc, scene, x, bank, table, keep_signals):
    opts = sc.algorithms[alg]
    t0 = time.perf_counter()
    sim = _simulate_compiled if sc.engine == "compiled" else _simulate_reference
    e, d, mu, delta, W, div_at, div_node, valid = sim(alg, opts, sc, scene, x, bank, table)
    wall = time.perf_counter() - t0
    e, d, mu, delta = e[:valid], d[:valid], mu[:valid], delta[:valid]
    samples, vals = nse_trace(e, d, sc.nse_window, sc.stride)
    diverged = div_at >= 0
    return AlgorithmResult(
        algorithm=alg,
        samples=samples,
        nse_db=vals,
        mu=mu[samples],
        delta=delta[samples],
        weights=np.asarray(W),
        diverged=diverged,
        diverged_at=int(div_at) if diverged else None,
        diverged_node=int(div_node) if diverged else None,
        terminal_nse=_terminal(e, d, sc.nse_window),
        wall_clock=wall,
        e=e if keep_signals else None,
        d=d if keep_signals else None,
    )


def run(sc, keep_signals=False, write=True):
    """Simulate every algorithm of a validated scenario.

    Divergence is recorded per algorithm rather than raised. When
    ``sc.out`` is set and ``write`` is true, ``<algorithm>.csv`` files and
    ``record.json`` are written there.

    Parameters
    ----------
    keep_signals : bool
        Keep the full ``e``/``d`` records on each result.
    """
    sc.validate()
    t0 = time.perf_counter()
    scene = build_scene(sc)
    x = build_reference(sc)
    bank = build_compensation(sc, scene) if sc.needs_compensation() else None
    table = build_delay_schedules(sc, scene.K)
    results = {alg: _simulate(alg, sc, scene, x, bank, table, keep_signals) for alg in sc.algorithms}
    record = RunRecord(sc, sc.digest(), results, dict(bank.meta) if bank else {},
                       time.perf_counter() - t0)
    if write and sc.out:
        save_record(record, sc.out)
    return record


def save_record(record, out):
    os.makedirs(out, exist_ok=True)
    for alg, res in record.results.items():
        write_csv(res, os.path.join(out, f"{alg}.csv"))
    write_json(record.to_json(), os.path.join(out, "record.json"))


# -- comparison and sweeps -----------------------------------------------------------


def _entries(records):
    out = []
    for i, rec in enumerate(records):
        label = rec.scenario.name if len(records) == 1 else f"{i}:{rec.scenario.name}"
        for alg, res in rec.results.items():
            out.append((f"{label}/{alg}", res))
    return out


def compare(records, mode="steady-state-weights"):
    """Compare every algorithm result against the first one.

    Parameters
    ----------
    records : RunRecord or list of RunRecord
    mode : {"steady-state-weights", "nse-curves"}
        Weight mode reports per-node relative L2 and max-abs differences
        of the final filters; curve mode reports terminal NSE deltas in dB.

    Returns
    -------
    dict
        ``{"reference": label, "mode": mode, "entries": {label: {...}}}``.
    """
    if isinstance(records, RunRecord):
        records = [records]
    entries = _entries(list(records))
    if not entries:
        raise ComparisonError("nothing to compare")
    ref_label, ref = entries[0]
    report = {"reference": ref_label, "mode": mode, "entries": {}}
    for label, res in entries:
        if res.weights.shape != ref.weights.shape:
            raise ComparisonError(f"{label} has weights {res.weights.shape}, reference {ref.weights.shape}")
        row = {"diverged": res.diverged}
        if mode == "steady-state-weights":
            diff = res.weights - ref.weights
            norm = np.linalg.norm(ref.weights, axis=1)
            with np.errstate(divide="ignore", invalid="ignore"):
                rel = np.where(norm > 0, np.linalg.norm(diff, axis=1) / norm, np.linalg.norm(diff, axis=1))
            row["relative_l2"] = rel.tolist()
            row["max_abs"] = np.abs(diff).max(axis=1).tolist()
        elif mode == "nse-curves":
            row["terminal_nse_db"] = res.terminal_nse.tolist()
            row["delta_db"] = (res.terminal_nse - ref.terminal_nse).tolist()
        else:
            raise ComparisonError(f"unknown comparison mode {mode!r}")
        report["entries"][label] = row
    return report


@dataclass
class SweepResult:
    axis: str
    values: list
    records: list
    errors: dict
    summary: list

    def to_json(self):
        return {"axis": self.axis, "values": self.values, "errors": self.errors, "summary": self.summary}


def _apply_axis(base, axis, value):
    if axis == "H":
        comp = dict(base.compensation, H=int(value))
        return base.replace(compensation=comp, name=f"{base.name}-H{value}")
    if axis == "mu":
        algs = {a: dict(o, mu=value) for a, o in base.algorithms.items()}
        return base.replace(algorithms=algs, name=f"{base.name}-mu{value:g}")
    if axis == "delta":
        return base.replace(delay={"default": {"kind": "constant", "delay": int(value)}},
                            name=f"{base.name}-delta{value}")
    raise ConfigError(f"sweep axis must be H, mu or delta, got {axis!r}")


def sweep(base, axis, values=None, write=True):
    """Run ``base`` once per value on one axis.

    Failures of individual runs (for example a compensation filter that
    cannot be trained) are collected in ``errors`` instead of aborting
    the sweep. The summary lists the mean terminal NSE and divergence
    flags per value and algorithm.
    """
    if values is None:
        values = list(base.H_sweep) if axis == "H" else []
    base.validate()
    records, errors, summary = [], {}, []
    for value in values:
        sc = _apply_axis(base, axis, value)
        if base.out:
            sc.out = os.path.join(base.out, f"{axis}={value}")
        try:
            rec = run(sc, write=write)
        except DmancError as exc:
            errors[str(value)] = f"{type(exc).__name__}: {exc}"
            continue
        records.append(rec)
        for alg, res in rec.results.items():
            finite = res.terminal_nse[np.isfinite(res.terminal_nse)]
            summary.append({
                "value": value,
                "algorithm": alg,
                "diverged": res.diverged,
                "terminal_nse_db": float(np.mean(finite)) if finite.size else None,
            })
    result = SweepResult(axis, list(values), records, errors, summary)
    if write and base.out:
        os.makedirs(base.out, exist_ok=True)
        write_json(result.to_json(), os.path.join(base.out, "sweep.json"))
    return result
