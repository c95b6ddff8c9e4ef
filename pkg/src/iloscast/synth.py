"""Seeded synthetic PM telemetry emulating the production data regime.

Healthy ports report stable signal quality with zero-suppressed counters;
a configurable fraction of ports degrades (signal quality drifts down,
instability up, transient error-seconds spike) before an outage day, and a
further share of outages appears with no precursor at all, which is what
bounds achievable recall. Whole port-days are dropped at random to reach a
target missing rate. Every stream of randomness derives from
(seed, network, port), so parallel and serial generation agree byte for
byte.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import date, timedelta
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError

START_DATE = date(2024, 1, 1)

#: Core PM vocabulary every synthetic network reports. QAVG/QSTDEV carry
#: the degradation signature; UAS/HCCS are the label sources; TRAFFIC is
#: the protocol indicator; the rest are benign context metrics.
CORE_PMS = ("QAVG", "QSTDEV", "UAS", "HCCS", "CV", "OPR", "OPT", "INFRAMES", "TRAFFIC")
COUNTER_PMS = ("UAS", "HCCS", "CV")
PROTOCOL_INDICATORS = ("TRAFFIC",)

FACILITIES = ("OTM", "ETH")


@dataclass(frozen=True)
class GenConfig:
    seed: int
    n_networks: int = 3
    ports_per_network: tuple[int, ...] = (150, 110, 40)
    days: int = 120
    facility_mix: tuple[tuple[str, float], ...] = (("OTM", 0.55), ("ETH", 0.45))
    dual_facility_prob: float = 0.15
    extra_features_per_network: int = 4
    feature_overlap: float = 0.5
    target_missing_rate: float = 0.75
    degrade_fraction: float = 0.62
    unpredictable_fraction: float = 0.3
    benign_dip_fraction: float = 0.12
    degradation_days: tuple[int, int] = (12, 40)
    zero_suppression: bool = True

    def __post_init__(self) -> None:
        if self.days < 14:
            raise ConfigError("need at least 14 days to form one window")
        for name in (
            "dual_facility_prob",
            "feature_overlap",
            "target_missing_rate",
            "degrade_fraction",
            "unpredictable_fraction",
            "benign_dip_fraction",
        ):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1], got {v}")
        if len(self.ports_per_network) != self.n_networks:
            raise ConfigError("ports_per_network must list one count per network")
        if self.degradation_days[0] < 4 or self.degradation_days[0] > self.degradation_days[1]:
            raise ConfigError("degradation_days must be an increasing pair >= 4")


@dataclass(frozen=True)
class OutageEvent:
    network_id: str
    port_id: str
    outage_day: int  # 0-based day index
    has_precursor: bool

    def outage_date(self) -> date:
        return START_DATE + timedelta(days=self.outage_day)


@dataclass
class GenResult:
    csv_paths: list[Path]
    truth_path: Path
    events: list[OutageEvent]
    summary: dict


def network_vocabulary(cfg: GenConfig, net_idx: int) -> tuple[str, ...]:
    """Core PMs plus extras; a ``feature_overlap`` share of the extras is
    common to all networks, the rest is network-specific."""
    n_shared = round(cfg.feature_overlap * cfg.extra_features_per_network)
    shared = [f"PMS{j:02d}" for j in range(n_shared)]
    unique = [
        f"PMU{net_idx}{j:02d}" for j in range(cfg.extra_features_per_network - n_shared)
    ]
    return CORE_PMS + tuple(shared) + tuple(unique)


def _port_events(cfg: GenConfig, rng: np.random.Generator) -> str | None:
    """Draw the port's event kind: precursor outage, bare outage, or none."""
    if cfg.unpredictable_fraction >= 1.0:
        bare_share = 0.0 if cfg.degrade_fraction == 0 else 1.0 - cfg.degrade_fraction
        return "bare" if rng.random() < bare_share else None
    # Share of ports with a precursor-free outage, chosen so the requested
    # fraction of all outages lacks a precursor.
    bare_share = (
        cfg.degrade_fraction
        * cfg.unpredictable_fraction
        / (1.0 - cfg.unpredictable_fraction)
    )
    u = rng.random()
    if u < cfg.degrade_fraction:
        return "precursor"
    if u < cfg.degrade_fraction + bare_share:
        return "bare"
    return None


@dataclass
class _PortDraft:
    """Pre-drop values per (day, pm) plus bookkeeping for pass two."""

    network_id: str
    port_id: str
    facilities: list[str]
    values: dict[str, np.ndarray]  # pm -> per-day values; NaN = not emitted
    exempt_days: set[int]
    event: OutageEvent | None


def _synthesize_port(
    cfg: GenConfig, net_idx: int, port_idx: int, vocab: tuple[str, ...]
) -> _PortDraft:
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, net_idx, port_idx, 1]))
    days = cfg.days
    network_id = f"net{net_idx + 1}"
    port_id = f"p{port_idx:04d}"

    names = [f for f, _ in cfg.facility_mix]
    weights = np.array([w for _, w in cfg.facility_mix], dtype=np.float64)
    weights /= weights.sum()
    primary = str(rng.choice(names, p=weights))
    facilities = [primary]
    if len(names) > 1 and rng.random() < cfg.dual_facility_prob:
        others = [f for f in names if f != primary]
        facilities.append(str(rng.choice(others)))

    qavg_base = rng.normal(13.0, 0.5)
    qstdev_base = rng.uniform(0.2, 0.4)
    opr_base = rng.normal(-5.0, 0.8)
    opt_base = rng.normal(-2.0, 0.5)
    frames_base = rng.uniform(1e6, 5e7)

    qavg = qavg_base + rng.normal(0.0, 0.15, size=days)
    qstdev = qstdev_base + np.abs(rng.normal(0.0, 0.03, size=days))
    opr = opr_base + rng.normal(0.0, 0.1, size=days)
    opt = opt_base + rng.normal(0.0, 0.1, size=days)
    inframes = frames_base * rng.uniform(0.8, 1.2, size=days)
    traffic = np.ones(days)
    cv = np.where(rng.random(days) < 0.03, rng.integers(1, 50, size=days).astype(float), 0.0)
    uas = np.zeros(days)
    hccs = np.zeros(days)

    exempt: set[int] = {0, days - 1}
    event: OutageEvent | None = None
    kind = _port_events(cfg, rng)
    if kind is not None and days >= 30:
        outage = int(rng.integers(20, days - 7))
        uas[outage] = float(rng.integers(3600, 40000))
        exempt.add(outage)
        event = OutageEvent(network_id, port_id, outage, has_precursor=(kind == "precursor"))
        if kind == "precursor":
            ramp_len = int(rng.integers(cfg.degradation_days[0], cfg.degradation_days[1] + 1))
            ramp_len = min(ramp_len, outage - 1)
            start = outage - ramp_len
            progress = np.arange(1, ramp_len + 1) / ramp_len
            amp_q = rng.uniform(1.5, 3.5)
            amp_s = rng.uniform(0.5, 1.4)
            qavg[start:outage] -= amp_q * progress
            qstdev[start:outage] += amp_s * progress
            # Transient error-seconds with rising probability near the outage.
            spike_span = min(14, ramp_len)
            for k in range(spike_span):
                day = outage - spike_span + k
                p_spike = 0.12 + 0.38 * (k + 1) / spike_span
                if rng.random() < p_spike:
                    hccs[day] = float(rng.integers(1, 61))
            hccs[outage] = float(rng.integers(30, 61))
            qavg[outage] = qavg_base - amp_q - 1.0
            # Witness day: one clean pre-outage present day is always
            # collectable so the outage has at least one usable window.
            witness = outage - 4
            hccs[witness] = 0.0
            exempt.add(witness)

    if kind is None and rng.random() < cfg.benign_dip_fraction and days >= 40:
        # Degradation-shaped transient that recovers without an outage:
        # the hard negatives that keep precision away from a free ceiling.
        dip_len = int(rng.integers(6, 14))
        dip_start = int(rng.integers(10, days - dip_len - 10))
        dip_amp = rng.uniform(0.8, 2.2)
        shape = np.sin(np.linspace(0.0, np.pi, dip_len))
        qavg[dip_start : dip_start + dip_len] -= dip_amp * shape
        qstdev[dip_start : dip_start + dip_len] += 0.4 * dip_amp * shape

    values: dict[str, np.ndarray] = {
        "QAVG": qavg,
        "QSTDEV": qstdev,
        "UAS": uas,
        "HCCS": hccs,
        "CV": cv,
        "OPR": opr,
        "OPT": opt,
        "INFRAMES": inframes,
        "TRAFFIC": traffic,
    }
    for pm in vocab:
        if pm in values:
            continue
        base = rng.normal(50.0, 10.0)
        values[pm] = base + rng.normal(0.0, 2.0, size=days)

    if cfg.zero_suppression:
        for pm in COUNTER_PMS:
            vals = values[pm]
            values[pm] = np.where(vals > 0, vals, np.nan)

    return _PortDraft(
        network_id=network_id,
        port_id=port_id,
        facilities=facilities,
        values=values,
        exempt_days=exempt,
        event=event,
    )


def _apply_day_drops(cfg: GenConfig, drafts: list[list[_PortDraft]]) -> float:
    """Drop whole port-days at random to close the gap to the target
    missing rate; returns the drop probability used."""
    total_cells = 0
    observed = 0
    for net_idx, net_drafts in enumerate(drafts):
        vocab = network_vocabulary(cfg, net_idx)
        for draft in net_drafts:
            total_cells += cfg.days * len(vocab)
            for pm in vocab:
                observed += int(np.sum(~np.isnan(draft.values[pm])))
    intrinsic = 1.0 - observed / total_cells
    if intrinsic > cfg.target_missing_rate:
        raise DataError(
            f"target missing rate {cfg.target_missing_rate:.2f} infeasible: "
            f"zero-suppression alone leaves {intrinsic:.2f} missing"
        )
    drop_p = (cfg.target_missing_rate - intrinsic) / (1.0 - intrinsic)
    for net_idx, net_drafts in enumerate(drafts):
        for port_idx, draft in enumerate(net_drafts):
            rng = np.random.default_rng(
                np.random.SeedSequence([cfg.seed, net_idx, port_idx, 2])
            )
            dropped = rng.random(cfg.days) < drop_p
            for day in draft.exempt_days:
                dropped[day] = False
            for pm in draft.values:
                draft.values[pm] = np.where(dropped, np.nan, draft.values[pm])
    return drop_p


def _format_value(v: float) -> str:
    return f"{v:.6g}"


def generate(cfg: GenConfig, out_dir: str | Path, threads: int = 1) -> GenResult:
    """Write one ingest CSV per network plus the ground-truth event log.

    Output is byte-identical across runs with the same config regardless of
    ``threads``: per-port randomness derives from (seed, network, port) and
    results are collected in submission order.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    drafts: list[list[_PortDraft]] = []
    events: list[OutageEvent] = []
    for net_idx in range(cfg.n_networks):
        vocab = network_vocabulary(cfg, net_idx)
        port_ids = range(cfg.ports_per_network[net_idx])
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                net_drafts = list(
                    pool.map(lambda p: _synthesize_port(cfg, net_idx, p, vocab), port_ids)
                )
        else:
            net_drafts = [_synthesize_port(cfg, net_idx, p, vocab) for p in port_ids]
        drafts.append(net_drafts)
        events.extend(d.event for d in net_drafts if d.event is not None)

    drop_p = _apply_day_drops(cfg, drafts)

    csv_paths: list[Path] = []
    n_outages = 0
    for net_idx, net_drafts in enumerate(drafts):
        vocab = network_vocabulary(cfg, net_idx)
        path = out_dir / f"net{net_idx + 1}.csv"
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["network_id", "port_id", "facility_type", "date", "pm_name", "pm_value"])
            for draft in net_drafts:
                # Per-facility offsets keep dual-facility ports exercising
                # the max-merge; counters are emitted once.
                offsets = {
                    fac: (0.0 if i == 0 else -0.3) for i, fac in enumerate(draft.facilities)
                }
                for day in range(cfg.days):
                    day_str = (START_DATE + timedelta(days=day)).isoformat()
                    for fac_i, fac in enumerate(draft.facilities):
                        for pm in vocab:
                            v = draft.values[pm][day]
                            if np.isnan(v):
                                continue
                            if pm in COUNTER_PMS and fac_i > 0:
                                continue
                            if pm in ("QAVG", "OPR", "OPT"):
                                v = v + offsets[fac]
                            writer.writerow(
                                [draft.network_id, draft.port_id, fac, day_str, pm, _format_value(v)]
                            )
        csv_paths.append(path)
        n_outages += sum(1 for d in net_drafts if d.event is not None)

    truth_path = out_dir / "ground_truth.csv"
    with open(truth_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["network_id", "port_id", "outage_date", "has_precursor"])
        for ev in sorted(events, key=lambda e: (e.network_id, e.port_id)):
            writer.writerow(
                [ev.network_id, ev.port_id, ev.outage_date().isoformat(), int(ev.has_precursor)]
            )

    summary = {
        "networks": cfg.n_networks,
        "ports": sum(cfg.ports_per_network),
        "days": cfg.days,
        "outages": n_outages,
        "precursor_outages": sum(1 for e in events if e.has_precursor),
        "day_drop_probability": drop_p,
    }
    return GenResult(csv_paths=csv_paths, truth_path=truth_path, events=events, summary=summary)


def load_ground_truth(path: str | Path) -> list[OutageEvent]:
    events = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            day = (date.fromisoformat(row["outage_date"]) - START_DATE).days
            events.append(
                OutageEvent(
                    network_id=row["network_id"],
                    port_id=row["port_id"],
                    outage_day=day,
                    has_precursor=bool(int(row["has_precursor"])),
                )
            )
    return events


def dataset_stats(dataset) -> dict:
    """Table-style summary: per network and merged counts, missing rate
    over numeric window entries, and positive sample rate."""
    k = dataset.schema.n_numeric

    def block(idx: np.ndarray) -> dict:
        x = dataset.x[idx][:, :, :k]
        day_lo = int(dataset.present_day[idx].min())
        day_hi = int(dataset.present_day[idx].max())
        return {
            "samples": int(idx.size),
            "ports": int(len(set(zip(dataset.network[idx], dataset.port[idx])))),
            "days": day_hi - day_lo + 1,
            "features": k,
            "missing_rate": float(np.isnan(x).mean()),
            "positive_rate": float(dataset.label[idx].mean()),
        }

    out = {"networks": {}, "merged": block(np.arange(dataset.n))}
    for net in dataset.networks:
        out["networks"][net] = block(dataset.indices(network=net))
    return out
