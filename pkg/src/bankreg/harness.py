"""Experiment configuration, runners and result emission.

A config is a JSON tree. Every subcommand starts from built-in defaults that
reproduce the simulated FireSim SoC (8-bank DDR3, map on bits 9-11, tRC 47)
and deep-merges the user's file on top, so any experiment can be expressed
as a single config without code changes.
"""

from __future__ import annotations

import copy
import csv
import io
import json
import math
import re
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from bankreg.bankmap import BankMap, RowColumnLayout, maps_equivalent, random_map, resolve_map
from bankreg.cachefront import LlcConfig
from bankreg.dramcore import CsvTrace, DramConfig, guaranteed_bw
from bankreg.regulator import ALL_BANK, PER_BANK, RegulatorConfig, budget_from_bandwidth
from bankreg.system import SimReport, System, run_victim
from bankreg.workloadgen import CoreBinding, SequentialVictim, build_pll

EXPERIMENTS = ("guaranteed-bw", "mlp-sweep", "attack", "regulate", "bank-scaling", "write-batching", "revmap")

LINE = 64
VICTIM = {
    "name": "victim",
    "kind": "sequential",
    "role": "victim",
    "core": 0,
    "domain": 0,
    "array_bytes": 2 << 20,
    "quota_lines": 32768,
    "start_cycle": 300_000,
    # Streaming reads keep more lines in flight than a pointer chase.
    "mlp": 10,
}
ATTACKER = {"lists": 16, "entries": 4096, "cores": [1, 2, 3], "domain": 1, "mlp": 6}

COMMON_DEFAULTS: dict[str, Any] = {
    "seed": 1,
    "map": "firesim",
    "address_width": 32,
    "layout": {"row_shift": 16, "row_width": 16},
    "dram": {},
    "llc": {},
    "domains": [
        {"name": "real-time", "regulated": False},
        {"name": "best-effort", "regulated": True, "budget_mbps": 53.0},
    ],
    "regulator": None,
    "workloads": [],
    "core_mlp": 6,
    "duration_cycles": 1_000_000,
    "warmup_cycles": 0,
    "max_cycles": 50_000_000,
    "trace": None,
    # Pre-fill co-runner LLC partitions so short runs start in steady state.
    "llc_warm": False,
    "experiment": {},
}

_REGULATOR = {"mode": PER_BANK, "period_cycles": 1_000_000, "count_writebacks": True}

EXPERIMENT_DEFAULTS: dict[str, dict[str, Any]] = {
    "guaranteed-bw": {
        "workloads": [
            {"name": "sb-pll", "kind": "pll", "core": 0, "domain": 0, "rw": "read", "lists": 16, "entries": 4096, "banks": [0]}
        ],
        "duration_cycles": 2_000_000,
        "warmup_cycles": 200_000,
    },
    "mlp-sweep": {
        "duration_cycles": 200_000,
        "warmup_cycles": 20_000,
        "experiment": {
            "lists": [1, 2, 4, 8, 16],
            "configurations": ["1xSB", "4xSB", "1xAB", "4xAB"],
            "footprint_lines": 65536,
            "bank": 0,
        },
    },
    "attack": {
        "llc_warm": True,
        "workloads": [VICTIM],
        "experiment": {"scenarios": ["ABr", "ABw", "SBr", "SBw"], "attacker": ATTACKER},
    },
    "regulate": {
        "llc_warm": True,
        "workloads": [dict(VICTIM, quota_lines=229376, start_cycle=1_000_000)],
        "regulator": _REGULATOR,
        "max_cycles": 20_000_000,
        "experiment": {"scenarios": ["SBw", "ABw"], "modes": [PER_BANK, ALL_BANK], "attacker": ATTACKER},
    },
    "bank-scaling": {
        "llc_warm": True,
        "regulator": _REGULATOR,
        "duration_cycles": 10_000_000,
        "warmup_cycles": 1_000_000,
        "experiment": {"banks": [1, 2, 4, 8], "attacker_kind": "ABw", "attacker": ATTACKER},
    },
    "write-batching": {
        "duration_cycles": 1_000_000,
        "warmup_cycles": 100_000,
        "experiment": {"attacker_kind": "ABw", "attacker": ATTACKER, "unbatched": {"write_batching": False}},
    },
    "revmap": {
        "experiment": {"map": "firesim", "samples_per_bank": 32, "hidden_bits": 3, "hidden_width": 32, "jitter": 1.5},
    },
}


class ConfigError(ValueError):
    pass


def deep_merge(base: Any, over: Any) -> Any:
    """Recursive dict merge; lists and scalars in ``over`` replace ``base``."""
    if isinstance(base, dict) and isinstance(over, dict):
        out = {k: copy.deepcopy(v) for k, v in base.items() if k not in over}
        for k, v in over.items():
            out[k] = deep_merge(base[k], v) if k in base else copy.deepcopy(v)
        return out
    return copy.deepcopy(over)


def default_tree(experiment: str) -> dict:
    if experiment not in EXPERIMENT_DEFAULTS:
        raise ConfigError(f"unknown experiment {experiment!r}")
    return deep_merge(COMMON_DEFAULTS, EXPERIMENT_DEFAULTS[experiment])


@dataclass
class WorkloadSpec:
    name: str
    kind: str = "pll"  # pll | sequential
    core: int = 0
    domain: int = 0
    role: str = "attacker"  # victim | attacker
    rw: str = "read"
    lists: int = 16
    entries: int = 4096
    banks: str | list[int] = "all"
    mlp: int | None = None
    array_bytes: int = 2 << 20
    quota_lines: int = 32768
    start_cycle: int = 0
    base: int = 0

    def __post_init__(self):
        if self.kind not in ("pll", "sequential"):
            raise ConfigError(f"workload {self.name}: kind must be pll or sequential")
        if self.rw not in ("read", "write"):
            raise ConfigError(f"workload {self.name}: rw must be read or write")
        if self.role not in ("victim", "attacker"):
            raise ConfigError(f"workload {self.name}: role must be victim or attacker")
        if self.core < 0 or self.domain < 0:
            raise ConfigError(f"workload {self.name}: negative core or domain")
        if self.kind == "pll" and (self.lists < 1 or self.entries < 1):
            raise ConfigError(f"workload {self.name}: lists and entries must be >= 1")
        if self.kind == "sequential" and (self.quota_lines < 1 or self.array_bytes < LINE):
            raise ConfigError(f"workload {self.name}: empty victim")
        if self.base % LINE:
            raise ConfigError(f"workload {self.name}: base must be line aligned")
        if self.banks != "all":
            self.banks = [int(b) for b in self.banks]

    @classmethod
    def from_dict(cls, d: dict) -> "WorkloadSpec":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown workload keys {sorted(extra)}")
        if "name" not in d:
            raise ConfigError("workload needs a name")
        return cls(**d)


@dataclass
class DomainSpec:
    name: str
    regulated: bool = False
    budget_mbps: float | None = None
    budget_accesses: int | None = None


@dataclass
class ExperimentConfig:
    experiment: str
    seed: int
    bank_map: BankMap
    layout: RowColumnLayout
    dram: DramConfig
    llc: LlcConfig
    domains: list[DomainSpec]
    regulator: RegulatorConfig | None
    workloads: list[WorkloadSpec]
    core_mlp: int
    duration_cycles: int
    warmup_cycles: int
    max_cycles: int
    params: dict = field(default_factory=dict)
    trace: str | None = None
    llc_warm: bool = False
    out: str | None = None
    trace_runs: int = field(default=0, repr=False)

    @property
    def n_domains(self) -> int:
        return len(self.domains)

    def regulator_for(self, mode: str | None = None, n_banks: int | None = None) -> RegulatorConfig | None:
        if self.regulator is None:
            return None
        r = self.regulator
        return RegulatorConfig(
            mode=mode or r.mode,
            period_cycles=r.period_cycles,
            budgets=list(r.budgets),
            n_banks=n_banks or r.n_banks,
            regulated=list(r.regulated),
            count_writebacks=r.count_writebacks,
        )

    def validate_workloads(self, specs: Sequence[WorkloadSpec]) -> None:
        cores = [w.core for w in specs]
        if len(set(cores)) != len(cores):
            raise ConfigError(f"two workloads share a core: {sorted(cores)}")
        names = [w.name for w in specs]
        if len(set(names)) != len(names):
            raise ConfigError("workload names must be unique")
        for w in specs:
            if w.domain >= self.n_domains:
                raise ConfigError(f"workload {w.name}: domain {w.domain} not defined")
            if w.banks != "all" and any(not 0 <= b < self.dram.n_banks for b in w.banks):
                raise ConfigError(f"workload {w.name}: bank out of range")


def _build_dataclass(cls, d: dict | None, what: str):
    d = d or {}
    known = {f.name for f in fields(cls) if f.init}
    extra = set(d) - known
    if extra:
        raise ConfigError(f"unknown {what} keys {sorted(extra)}")
    try:
        return cls(**d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{what}: {exc}") from exc


def build_config(experiment: str, user: dict | None = None, seed: int | None = None, out: str | None = None) -> ExperimentConfig:
    """Merge ``user`` over the experiment defaults and validate the result."""
    tree = default_tree(experiment)
    if user:
        unknown = set(user) - set(tree)
        if unknown:
            raise ConfigError(f"unknown config sections {sorted(unknown)}")
        tree = deep_merge(tree, user)
    if seed is not None:
        tree["seed"] = seed
    try:
        bank_map = resolve_map(str(tree["map"]), int(tree["address_width"]))
    except ValueError as exc:
        raise ConfigError(f"map: {exc}") from exc
    layout = _build_dataclass(RowColumnLayout, tree["layout"], "layout")
    try:
        layout.check(bank_map.width)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    dram = _build_dataclass(DramConfig, dict({"n_banks": bank_map.n_banks}, **tree["dram"]), "dram")
    if dram.n_banks != bank_map.n_banks:
        raise ConfigError(f"dram.n_banks={dram.n_banks} but the map defines {bank_map.n_banks} banks")
    llc = _build_dataclass(LlcConfig, tree["llc"], "llc")
    domains = [_build_dataclass(DomainSpec, d, "domain") for d in tree["domains"]]
    if not domains:
        raise ConfigError("at least one domain is required")

    reg = None
    if tree["regulator"]:
        r = dict(tree["regulator"])
        period = int(r.pop("period_cycles", 1_000_000))
        budgets = []
        for d in domains:
            if d.budget_accesses is not None:
                budgets.append(int(d.budget_accesses))
            elif d.budget_mbps is not None:
                budgets.append(budget_from_bandwidth(d.budget_mbps, period, dram.clock_freq, dram.line_size))
            elif d.regulated:
                raise ConfigError(f"domain {d.name} is regulated but has no budget")
            else:
                budgets.append(0)
        r.update(period_cycles=period, budgets=budgets, regulated=[d.regulated for d in domains], n_banks=dram.n_banks)
        reg = _build_dataclass(RegulatorConfig, r, "regulator")

    workloads = [WorkloadSpec.from_dict(w) for w in tree["workloads"]]
    cfg = ExperimentConfig(
        experiment=experiment,
        seed=int(tree["seed"]),
        bank_map=bank_map,
        layout=layout,
        dram=dram,
        llc=llc,
        domains=domains,
        regulator=reg,
        workloads=workloads,
        core_mlp=int(tree["core_mlp"]),
        duration_cycles=int(tree["duration_cycles"]),
        warmup_cycles=int(tree["warmup_cycles"]),
        max_cycles=int(tree["max_cycles"]),
        params=tree["experiment"],
        trace=tree["trace"],
        llc_warm=bool(tree["llc_warm"]),
        out=out,
    )
    cfg.validate_workloads(workloads)
    if cfg.core_mlp < 1:
        raise ConfigError("core_mlp must be >= 1")
    if not 0 <= cfg.warmup_cycles < cfg.duration_cycles:
        raise ConfigError("warmup_cycles must lie inside duration_cycles")
    if reg is not None:
        horizon = cfg.max_cycles if experiment in ("attack", "regulate") else cfg.duration_cycles
        if horizon < 10 * reg.period_cycles:
            raise ConfigError("an active regulator needs a run of at least 10 periods")
    return cfg


def read_config_file(path: str | Path) -> dict:
    try:
        user = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(user, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return user


def load_config(experiment: str, path: str | Path | None, seed: int | None = None, out: str | None = None) -> ExperimentConfig:
    user = read_config_file(path) if path is not None else None
    return build_config(experiment, user, seed, out)


# -- results ----------------------------------------------------------------


@dataclass
class ResultRow:
    experiment: str
    metric: str
    unit: str
    value: Any

    COLUMNS = ("experiment", "metric", "unit", "value")


@dataclass
class ExperimentResult:
    experiment: str
    scenario: str = ""
    workload_bw: dict[str, float] = field(default_factory=dict)
    solo_cycles: int | None = None
    contended_cycles: int | None = None
    slowdown: float | None = None
    attacker_bw: float | None = None
    dram_bw: dict[str, float] = field(default_factory=dict)
    dram: dict = field(default_factory=dict)
    regulator: dict = field(default_factory=dict)
    metrics: list[tuple[str, str, Any]] = field(default_factory=list)

    @property
    def id(self) -> str:
        return f"{self.experiment}/{self.scenario}" if self.scenario else self.experiment

    def metric(self, name: str) -> Any:
        for m, _, v in self.metrics:
            if m == name:
                return v
        raise KeyError(name)

    def rows(self) -> list[ResultRow]:
        out: list[ResultRow] = []
        add = lambda m, u, v: out.append(ResultRow(self.id, m, u, v))  # noqa: E731
        if self.solo_cycles is not None:
            add("victim_solo_cycles", "cycles", self.solo_cycles)
        if self.contended_cycles is not None:
            add("victim_contended_cycles", "cycles", self.contended_cycles)
        if self.slowdown is not None:
            add("victim_slowdown", "ratio", self.slowdown)
        if self.attacker_bw is not None:
            add("attacker_bandwidth", "MB/s", self.attacker_bw)
        for name, bw in self.workload_bw.items():
            add(f"bandwidth[{name}]", "MB/s", bw)
        for dom, bw in self.dram_bw.items():
            add(f"dram_bandwidth[{dom}]", "MB/s", bw)
        for m, u, v in self.metrics:
            add(m, u, v)
        for k, v in self.dram.items():
            add(f"dram.{k}", "count", v)
        for k, vals in self.regulator.items():
            for d, v in enumerate(vals):
                add(f"regulator.{k}[{d}]", "cycles" if "cycles" in k else "count", v)
        return out

    def to_dict(self) -> dict:
        d = asdict(self)
        d["id"] = self.id
        d["workload_bw"] = {k: _round("MB/s", v) for k, v in self.workload_bw.items()}
        d["dram_bw"] = {k: _round("MB/s", v) for k, v in self.dram_bw.items()}
        d["slowdown"] = _round("ratio", self.slowdown)
        d["attacker_bw"] = _round("MB/s", self.attacker_bw)
        d["metrics"] = [{"metric": m, "unit": u, "value": _round(u, v)} for m, u, v in self.metrics]
        return d


def _round(unit: str, v: Any) -> Any:
    if v is None or isinstance(v, (str, bool)):
        return v
    if unit == "MB/s":
        return round(float(v), 1)
    if unit == "ratio":
        return round(float(v), 2)
    if unit == "fraction":
        return round(float(v), 4)
    if unit in ("cycles", "count"):
        return int(v)
    return v


def _fmt(unit: str, v: Any) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return v
    if unit == "MB/s":
        return f"{float(v):.1f}"
    if unit == "ratio":
        return f"{float(v):.2f}"
    if unit == "fraction":
        return f"{float(v):.4f}"
    if unit in ("cycles", "count"):
        return str(int(v))
    return repr(v) if isinstance(v, float) else str(v)


def render_csv(results: Sequence[ExperimentResult]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ResultRow.COLUMNS)
    for r in results:
        for row in r.rows():
            w.writerow([row.experiment, row.metric, row.unit, _fmt(row.unit, row.value)])
    return buf.getvalue()


def render_json(results: Sequence[ExperimentResult]) -> str:
    return json.dumps([r.to_dict() for r in results], indent=2, ensure_ascii=False) + "\n"


def emit_results(results: Sequence[ExperimentResult], path: str | Path | None, fmt: str | None = None) -> str:
    """Write results as CSV or JSON (picked from ``fmt`` or the file suffix); returns the text."""
    if fmt is None:
        fmt = "json" if path is not None and str(path).endswith(".json") else "csv"
    if fmt not in ("csv", "json"):
        raise ValueError(f"unknown format {fmt!r}")
    text = render_csv(results) if fmt == "csv" else render_json(results)
    if path is not None:
        try:
            Path(path).write_text(text, encoding="utf-8")
        except OSError as exc:
            raise OSError(f"cannot write results to {path}: {exc}") from exc
    return text


# -- building and running simulations ---------------------------------------


def _sub_seed(seed: int, *keys: int) -> int:
    return int(np.random.SeedSequence([seed, *keys]).generate_state(1)[0])


def build_bindings(cfg: ExperimentConfig, specs: Sequence[WorkloadSpec], bank_map: BankMap | None = None) -> list[CoreBinding]:
    """Instantiate workloads; PLL nodes never overlap victim arrays or each other."""
    bank_map = bank_map or cfg.bank_map
    taken: set[int] = set()
    out = []
    for w in specs:
        if w.kind == "sequential":
            taken.update(range(w.base, w.base + w.array_bytes, LINE))
    for w in specs:
        mlp = w.mlp or cfg.core_mlp
        if w.kind == "sequential":
            wl = SequentialVictim(w.name, w.base, w.array_bytes, w.quota_lines, LINE, w.rw == "write", w.start_cycle)
        else:
            banks = range(bank_map.n_banks) if w.banks == "all" else w.banks
            wl = build_pll(
                w.lists, w.entries, banks, bank_map, cfg.layout, w.rw == "write",
                seed=_sub_seed(cfg.seed, w.core), name=w.name, exclude=taken,
            )
            for chain in wl.lists:
                taken.update(chain)
        out.append(CoreBinding(wl, w.core, w.domain, mlp=mlp, role=w.role))
    return out


def simulate(
    cfg: ExperimentConfig,
    specs: Sequence[WorkloadSpec],
    duration: int | None = None,
    warmup: int | None = None,
    reg: RegulatorConfig | None = None,
    dram: DramConfig | None = None,
    bank_map: BankMap | None = None,
    victim_run: bool = False,
) -> SimReport:
    """One simulation of ``specs``.

    With ``victim_run`` the run ends when the victim finishes its quota and
    the measurement window starts at the victim's start cycle, so co-runner
    bandwidth covers exactly the victim's execution.
    """
    cfg.validate_workloads(specs)
    bm = bank_map or cfg.bank_map
    system = System(
        bm, cfg.layout, build_bindings(cfg, specs, bm), dram or cfg.dram, cfg.llc, reg,
        n_domains=cfg.n_domains, seed=cfg.seed, warm_llc=cfg.llc_warm,
    )
    if not cfg.trace:
        return _run(system, cfg, specs, duration, warmup, victim_run)
    path = _trace_path(cfg)
    with open(path, "w", newline="") as fh:
        system.dram.trace = CsvTrace(fh)
        return _run(system, cfg, specs, duration, warmup, victim_run)


def _trace_path(cfg: ExperimentConfig) -> Path:
    # One file per simulation: trace.csv -> trace.0.csv, trace.1.csv, ...
    n = cfg.trace_runs
    cfg.trace_runs += 1
    p = Path(cfg.trace)
    return p.with_name(f"{p.stem}.{n}{p.suffix or '.csv'}")


def _run(system: System, cfg: ExperimentConfig, specs, duration, warmup, victim_run) -> SimReport:
    if victim_run:
        start = _victim(specs).start_cycle
        return run_victim(system, cfg.max_cycles, warmup=start)
    return system.run(duration or cfg.duration_cycles, cfg.warmup_cycles if warmup is None else warmup)


def attacker_specs(kind: str, template: dict) -> list[WorkloadSpec]:
    """Attacker set for ``kind`` in {ABr, ABw, SBr, SBw}, one PLL per core in the template."""
    m = re.fullmatch(r"(AB|SB)([rw])", kind)
    if not m:
        raise ConfigError(f"unknown attacker kind {kind!r}")
    banks: str | list[int] = "all" if m.group(1) == "AB" else [int(template.get("bank", 0))]
    rw = "write" if m.group(2) == "w" else "read"
    return [
        WorkloadSpec(
            name=f"{kind}-{c}", kind="pll", core=int(c), domain=int(template.get("domain", 1)), role="attacker",
            rw=rw, lists=int(template.get("lists", 16)), entries=int(template.get("entries", 4096)),
            banks=banks, mlp=template.get("mlp"),
        )
        for c in template.get("cores", [1, 2, 3])
    ]


def _scenario_specs(scenario: str | dict, template: dict) -> tuple[str, list[WorkloadSpec]]:
    if isinstance(scenario, str):
        return scenario, attacker_specs(scenario, template)
    name = scenario.get("name")
    if not name or "workloads" not in scenario:
        raise ConfigError("explicit scenarios need a name and a workloads list")
    return name, [WorkloadSpec.from_dict(w) for w in scenario["workloads"]]


def _victim(specs: Sequence[WorkloadSpec]) -> WorkloadSpec:
    v = [w for w in specs if w.role == "victim"]
    if len(v) != 1:
        raise ConfigError(f"exactly one victim workload required, found {len(v)}")
    return v[0]


def _reg_stats(rep: SimReport) -> dict:
    if not rep.throttle_cycles:
        return {}
    return {"throttle_cycles": rep.throttle_cycles, "issued": rep.issued_per_domain}


def _dram_bw(cfg: ExperimentConfig, rep: SimReport) -> dict[str, float]:
    """DRAM-level traffic per domain (fills plus writebacks) over the measurement window."""
    window = rep.end_cycle - rep.warmup_cycle
    out = {}
    for d, spec in enumerate(cfg.domains):
        n = rep.dram_issued_per_domain[d] if d < len(rep.dram_issued_per_domain) else 0
        out[spec.name] = n * cfg.dram.line_size / (window / cfg.dram.clock_freq) / 1e6 if window > 0 else 0.0
    return out


def run_solo_then_contended(
    cfg: ExperimentConfig,
    attackers: Sequence[WorkloadSpec] | None = None,
    reg: RegulatorConfig | None = None,
    scenario: str = "",
    solo: SimReport | None = None,
) -> ExperimentResult:
    """Victim alone, then victim plus co-runners, with identical seeds.

    ``attackers`` defaults to every non-victim workload in ``cfg``. ``solo``
    may carry an earlier solo report so sweeps simulate it only once.
    """
    victim = _victim(cfg.workloads)
    if attackers is None:
        attackers = [w for w in cfg.workloads if w.role != "victim"]
    attackers = list(attackers)
    if solo is None:
        solo = simulate(cfg, [victim], reg=reg, victim_run=True)
    solo_rt = solo.core(victim.name).runtime
    cont = simulate(cfg, [victim, *attackers], reg=reg, victim_run=True) if attackers else solo
    runtime = cont.core(victim.name).runtime
    bw = {c.name: c.bandwidth_mbps for c in cont.cores}
    return ExperimentResult(
        experiment=cfg.experiment,
        scenario=scenario,
        workload_bw=bw,
        solo_cycles=solo_rt,
        contended_cycles=runtime,
        slowdown=runtime / solo_rt,
        attacker_bw=sum(c.bandwidth_mbps for c in cont.cores if c.role == "attacker"),
        dram_bw=_dram_bw(cfg, cont),
        dram=cont.dram,
        regulator=_reg_stats(cont),
    )


# -- experiments ------------------------------------------------------------


def exp_guaranteed_bw(cfg: ExperimentConfig) -> list[ExperimentResult]:
    """Theoretical one-line-per-tRC bound against a measured single-bank PLL."""
    theory = guaranteed_bw(cfg.dram)
    rep = simulate(cfg, cfg.workloads)
    measured = sum(c.bandwidth_mbps for c in rep.cores)
    return [
        ExperimentResult(
            experiment=cfg.experiment,
            workload_bw={c.name: c.bandwidth_mbps for c in rep.cores},
            dram=rep.dram,
            metrics=[
                ("theory", "MB/s", theory),
                ("measured", "MB/s", measured),
                ("measured_over_theory", "ratio", measured / theory),
                ("tRC", "cycles", cfg.dram.tRC),
            ],
        )
    ]


def _parse_configuration(c: str | dict) -> tuple[str, int, str]:
    if isinstance(c, dict):
        return c["name"], int(c["instances"]), c["placement"]
    m = re.fullmatch(r"(\d+)x(SB|AB)", c)
    if not m:
        raise ConfigError(f"bad MLP sweep configuration {c!r}; expected e.g. 4xSB")
    return c, int(m.group(1)), m.group(2)


def sweep_mlp(cfg: ExperimentConfig) -> list[ExperimentResult]:
    """Read-PLL bandwidth for every (configuration, L); entries shrink as L grows."""
    p = cfg.params
    Ls = [int(x) for x in p["lists"]]
    if any(L < 1 for L in Ls):
        raise ConfigError("list counts must be >= 1")
    out = []
    for conf in p["configurations"]:
        name, n, placement = _parse_configuration(conf)
        if n < 1:
            raise ConfigError("instances must be >= 1")
        banks: str | list[int] = [int(p.get("bank", 0))] if placement == "SB" else "all"
        metrics = []
        for L in Ls:
            entries = max(1, int(p["footprint_lines"]) // L)
            specs = [
                WorkloadSpec(name=f"{name}-{i}", kind="pll", core=i, domain=0, lists=L, entries=entries, banks=banks)
                for i in range(n)
            ]
            rep = simulate(cfg, specs)
            metrics.append((f"bandwidth_L{L}", "MB/s", sum(c.bandwidth_mbps for c in rep.cores)))
        out.append(ExperimentResult(experiment=cfg.experiment, scenario=name, metrics=metrics))
    return out


def exp_attack(cfg: ExperimentConfig) -> list[ExperimentResult]:
    victim = _victim(cfg.workloads)
    reg = cfg.regulator_for()
    solo = simulate(cfg, [victim], reg=reg, victim_run=True)
    out = []
    for sc in cfg.params["scenarios"]:
        name, specs = _scenario_specs(sc, cfg.params.get("attacker", ATTACKER))
        out.append(run_solo_then_contended(cfg, specs, reg, name, solo))
    return out


def exp_regulate(cfg: ExperimentConfig) -> list[ExperimentResult]:
    """Victim slowdown and attacker throughput per (regulation mode, attacker set)."""
    if cfg.regulator is None:
        raise ConfigError("regulate needs a regulator section")
    victim = _victim(cfg.workloads)
    out = []
    # An unregulated victim runs alone identically under every mode.
    shared = cfg.regulator.regulated[victim.domain] is False
    solo = simulate(cfg, [victim], reg=cfg.regulator_for(), victim_run=True) if shared else None
    for mode in cfg.params["modes"]:
        reg = cfg.regulator_for(mode)
        if not shared:
            solo = simulate(cfg, [victim], reg=reg, victim_run=True)
        for sc in cfg.params["scenarios"]:
            name, specs = _scenario_specs(sc, cfg.params.get("attacker", ATTACKER))
            res = run_solo_then_contended(cfg, specs, reg, f"{mode}/{name}", solo)
            res.metrics.append(("budget_per_period", "count", max(reg.budgets)))
            out.append(res)
    return out


def sweep_bank_scaling(cfg: ExperimentConfig) -> list[ExperimentResult]:
    """Regulated attacker throughput as the bank count grows under a fixed per-bank budget.

    The N-bank system keeps the first log2(N) functions of the configured map
    and a per-bank regulator over N banks.
    """
    if cfg.regulator is None:
        raise ConfigError("bank-scaling needs a regulator section")
    p = cfg.params
    template = p.get("attacker", ATTACKER)
    specs = attacker_specs(p.get("attacker_kind", "ABw"), template)
    out = []
    base = None
    for n in p["banks"]:
        n = int(n)
        k = n.bit_length() - 1
        if n < 1 or 1 << k != n:
            raise ConfigError(f"bank count {n} is not a power of two")
        if k > cfg.bank_map.n_bits:
            raise ConfigError(f"map has only {cfg.bank_map.n_banks} banks, cannot scale to {n}")
        bm = BankMap(cfg.bank_map.functions[:k], width=cfg.bank_map.width)
        dram = DramConfig(**dict(asdict(cfg.dram), n_banks=n))
        reg = cfg.regulator_for(PER_BANK, n_banks=n)
        rep = simulate(cfg, specs, reg=reg, dram=dram, bank_map=bm)
        thr = sum(c.bandwidth_mbps for c in rep.cores if c.role == "attacker")
        if base is None:
            base = thr
        out.append(
            ExperimentResult(
                experiment=cfg.experiment,
                scenario=f"{n}-bank",
                workload_bw={c.name: c.bandwidth_mbps for c in rep.cores},
                dram_bw=_dram_bw(cfg, rep),
                dram=rep.dram,
                regulator=_reg_stats(rep),
                metrics=[
                    ("banks", "count", n),
                    ("throughput", "MB/s", thr),
                    ("speedup", "ratio", thr / base if base else math.nan),
                ],
            )
        )
    return out


def exp_write_batching(cfg: ExperimentConfig) -> list[ExperimentResult]:
    """Bus mode switches with the configured watermarks against a no-batching controller."""
    p = cfg.params
    specs = attacker_specs(p.get("attacker_kind", "ABw"), p.get("attacker", ATTACKER))
    unbatched = DramConfig(**dict(asdict(cfg.dram), **p["unbatched"]))
    out = []
    switches = {}
    for label, dram in (("batched", cfg.dram), ("unbatched", unbatched)):
        rep = simulate(cfg, specs, dram=dram)
        switches[label] = rep.dram["bus_mode_switches"]
        out.append(
            ExperimentResult(
                experiment=cfg.experiment,
                scenario=label,
                workload_bw={c.name: c.bandwidth_mbps for c in rep.cores},
                dram=rep.dram,
                metrics=[
                    ("write_batching", "bool", dram.write_batching),
                    ("write_high_watermark", "count", dram.write_high_watermark),
                    ("write_low_watermark", "count", dram.write_low_watermark),
                ],
            )
        )
    ratio = switches["unbatched"] / switches["batched"] if switches["batched"] else math.inf
    out.append(ExperimentResult(experiment=cfg.experiment, scenario="summary", metrics=[("switch_reduction", "ratio", ratio)]))
    return out


def resolve_revmap_target(name: str, seed: int, bits: int = 3, width: int = 32) -> BankMap:
    """``hidden`` draws a seeded random map; anything else is a platform or inline spec."""
    if name.strip().lower() == "hidden":
        return random_map(bits, width, seed=seed)
    return resolve_map(name)


def exp_revmap(cfg: ExperimentConfig) -> list[ExperimentResult]:
    from bankreg import revmap

    p = cfg.params
    truth = resolve_revmap_target(str(p["map"]), cfg.seed, int(p["hidden_bits"]), int(p["hidden_width"]))
    rec = revmap.recover(truth, int(p["samples_per_bank"]), seed=cfg.seed, jitter=float(p["jitter"]))
    spec = rec.spec() if rec.bank_map is not None else ""
    equivalent = rec.bank_map is not None and rec.bank_map.n_bits == truth.n_bits and maps_equivalent(rec.bank_map, truth)
    return [
        ExperimentResult(
            experiment=cfg.experiment,
            scenario=str(p["map"]),
            metrics=[
                ("recovered_map", "spec", spec),
                ("confidence", "fraction", rec.confidence),
                ("rank", "count", rec.rank),
                ("expected_bits", "count", truth.n_bits),
                ("samples", "count", int(p["samples_per_bank"]) * truth.n_banks),
                ("equivalent", "bool", bool(equivalent)),
            ],
        )
    ]


RUNNERS: dict[str, Callable[[ExperimentConfig], list[ExperimentResult]]] = {
    "guaranteed-bw": exp_guaranteed_bw,
    "mlp-sweep": sweep_mlp,
    "attack": exp_attack,
    "regulate": exp_regulate,
    "bank-scaling": sweep_bank_scaling,
    "write-batching": exp_write_batching,
    "revmap": exp_revmap,
}


def run_experiment(cfg: ExperimentConfig) -> list[ExperimentResult]:
    return RUNNERS[cfg.experiment](cfg)
