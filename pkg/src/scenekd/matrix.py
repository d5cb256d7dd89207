"""Experiment matrix: teacher grid -> logit ensembles -> distilled students.

A matrix config (TOML) names a teacher grid (architectures x device-
generalization presets x seeds), any number of ensemble cells selecting
subsets of that grid, and one student recipe trained per ensemble. Running
the matrix trains everything in a fixed order, exports teacher logits,
averages them per cell, distills students under the complexity budget, and
writes ``results.csv`` (machine precision, byte-stable for a given config
and machine) plus ``results.md`` (readable tables).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import augment
from .config import apply_table, dg_params
from .data import SceneDataset, make_toy_dataset
from .distill import LogitStore, ensemble_logits
from .harness import (TrainSettings, evaluate_store, export_logits,
                      train_model, train_runs)
from .models import ModelConfig, build_model, count_complexity


@dataclass(frozen=True)
class TeacherJob:
    name: str
    arch: str
    base_channels: int
    dg_preset: str
    seed: int


@dataclass(frozen=True)
class EnsembleJob:
    name: str
    members: tuple  # teacher job names


@dataclass(frozen=True)
class StudentJob:
    name: str
    ensemble: str
    arch: str
    base_channels: int
    dg_preset: str
    lam: float
    tau: float


@dataclass
class MatrixPlan:
    teachers: list = field(default_factory=list)
    ensembles: list = field(default_factory=list)
    students: list = field(default_factory=list)

    @property
    def jobs(self):
        return len(self.teachers) + len(self.ensembles) + len(self.students)


_DEFAULT_WIDTH = {"cpr": 16, "cpm": 32}


def plan(config):
    """Expand a parsed matrix config into concrete jobs.

    Teachers: one per arch x dg preset x seed index. Ensembles: one per
    ``[[ensembles]]`` cell, its members being every teacher whose arch and
    preset the cell selects (all seeds). Students: one per ensemble.
    """
    tcfg = config.get("teachers", {})
    archs = list(tcfg.get("archs", ["cpr"]))
    widths = {**_DEFAULT_WIDTH, **tcfg.get("base_channels", {})}
    presets = list(tcfg.get("dg_presets", ["dirfms"]))
    seeds = int(tcfg.get("seeds", 3))
    if seeds < 1 or not archs or not presets:
        raise ValueError("matrix needs at least one arch, one preset and one seed")

    out = MatrixPlan()
    for arch in archs:
        if arch not in widths:
            raise ValueError(f"no base_channels given for teacher arch {arch!r}")
        for preset in presets:
            for s in range(seeds):
                out.teachers.append(TeacherJob(
                    f"{arch}{widths[arch]}-{preset}-s{s}", arch, widths[arch], preset, s))

    cells = config.get("ensembles") or [{"name": "ens-all"}]
    by_key = {}
    for t in out.teachers:
        by_key.setdefault((t.arch, t.dg_preset), []).append(t.name)
    for cell in cells:
        cell_archs = cell.get("archs", archs)
        cell_presets = cell.get("dg_presets", presets)
        members = []
        for a in cell_archs:
            for p in cell_presets:
                if (a, p) not in by_key:
                    raise ValueError(f"ensemble cell selects untrained teacher ({a}, {p})")
                members.extend(by_key[(a, p)])
        name = cell.get("name", "ens-" + "-".join(cell_archs + cell_presets))
        out.ensembles.append(EnsembleJob(name, tuple(members)))
    if len({e.name for e in out.ensembles}) != len(out.ensembles):
        raise ValueError("ensemble names must be unique")

    scfg = config.get("student", {})
    arch = scfg.get("arch", "cpm")
    for ens in out.ensembles:
        out.students.append(StudentJob(
            f"student-{ens.name}", ens.name, arch,
            int(scfg.get("base_channels", _DEFAULT_WIDTH.get(arch, 32))),
            scfg.get("dg_preset", "dirfms"),
            float(scfg.get("lam", 0.02)), float(scfg.get("tau", 2.0))))
    return out


def _settings(table, role, preset, enforce_budget=False):
    st = TrainSettings(enforce_budget=enforce_budget)
    apply_table(st, table, f"{role}.train")
    st.alpha_fms, st.p_fms, st.p_dir = dg_params(preset, role)
    return st


@dataclass
class ResultRow:
    kind: str
    name: str
    arch: str = ""
    base_channels: str = ""
    dg_preset: str = ""
    members: str = ""
    params: str = ""
    macs: str = ""
    overall_acc: float = None
    unseen_acc: float = None
    loss_first: float = None
    loss_last: float = None

    FIELDS = ("kind", "name", "arch", "base_channels", "dg_preset", "members",
              "params", "macs", "overall_acc", "unseen_acc", "loss_first", "loss_last")

    def csv_values(self):
        out = []
        for f in self.FIELDS:
            v = getattr(self, f)
            out.append("" if v is None else (repr(float(v)) if isinstance(v, float) else str(v)))
        return out


def _tail_mean(values, k):
    tail = values[-k:]
    if any(v is None for v in tail):
        return None
    return float(np.mean(tail))


@dataclass
class MatrixOutcome:
    plan: MatrixPlan
    rows: list
    csv_path: Path
    teacher_results: dict = field(default_factory=dict)   # name -> RunResult
    student_results: dict = field(default_factory=dict)   # name -> TrainResult


def run_matrix(config, workdir, log=None):
    """Run every job in the plan; returns a MatrixOutcome."""
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    jobs = plan(config)

    dcfg = dict(config.get("data", {}))
    if "manifest" in dcfg:
        manifest = Path(dcfg["manifest"])
        if not manifest.is_absolute():
            manifest = workdir / manifest
    else:
        root = Path(dcfg.get("root", "toy"))
        if not root.is_absolute():
            root = workdir / root
        manifest = root / "manifest.csv"
        if not manifest.exists():
            make_toy_dataset(root, int(dcfg.get("clips_per_cell", 2)),
                             int(dcfg.get("seed", 0)),
                             n_scenes=int(dcfg.get("n_scenes", 10)),
                             n_devices=int(dcfg.get("n_devices", 9)),
                             n_unseen=int(dcfg.get("n_unseen", 3)))
    dataset = SceneDataset(manifest)
    ir_bank = augment.default_ir_bank()

    rows = []
    stores = {}
    teacher_results = {}
    student_results = {}
    tcfg = config.get("teachers", {})
    for job in jobs.teachers:
        if log:
            log(f"[teacher {job.name}]")
        mcfg = ModelConfig(arch=job.arch, base_channels=job.base_channels,
                           n_classes=dataset.n_classes)
        st = _settings(dict(tcfg.get("train", {})), "teacher", job.dg_preset)
        st.seed = int(np.random.SeedSequence([int(tcfg.get("seed", 0)), job.seed])
                      .generate_state(1)[0])
        st.runs = 1
        model = build_model(mcfg, seed=st.seed)
        rr = train_model(model, dataset, st, workdir / job.name,
                         ir_bank=ir_bank, log=log)
        teacher_results[job.name] = rr
        store = export_logits(model, dataset)
        store.save(workdir / f"{job.name}.dflg")
        stores[job.name] = store
        comp = count_complexity(model)
        rows.append(ResultRow(
            "teacher", job.name, job.arch, str(job.base_channels), job.dg_preset,
            params=str(comp.params), macs=str(comp.macs),
            overall_acc=_tail_mean([h.overall_acc for h in rr.history], st.keep_last),
            unseen_acc=_tail_mean([h.unseen_acc for h in rr.history], st.keep_last),
            loss_first=rr.train_losses[0], loss_last=rr.train_losses[-1]))

    for job in jobs.ensembles:
        if log:
            log(f"[ensemble {job.name}] <- {len(job.members)} stores")
        ens = ensemble_logits([stores[m] for m in job.members])
        ens.save(workdir / f"{job.name}.dflg")
        stores[job.name] = ens
        rep = evaluate_store(ens, dataset)
        rows.append(ResultRow(
            "ensemble", job.name, members=str(len(job.members)),
            overall_acc=rep.overall_acc, unseen_acc=rep.unseen_acc))

    scfg = config.get("student", {})
    for job in jobs.students:
        if log:
            log(f"[student {job.name}] lam={job.lam} tau={job.tau}")
        mcfg = ModelConfig(arch=job.arch, base_channels=job.base_channels,
                           n_classes=dataset.n_classes)
        st = _settings(dict(scfg.get("train", {})), "student", job.dg_preset,
                       enforce_budget=True)
        st.lam, st.tau = job.lam, job.tau
        tr = train_runs(mcfg, dataset, st, workdir / job.name,
                        teacher_store=stores[job.ensemble], ir_bank=ir_bank, log=log)
        student_results[job.name] = tr
        comp = count_complexity(build_model(mcfg, seed=0))
        losses_first = [r.train_losses[0] for r in tr.runs]
        losses_last = [r.train_losses[-1] for r in tr.runs]
        rows.append(ResultRow(
            "student", job.name, job.arch, str(job.base_channels), job.dg_preset,
            members=job.ensemble, params=str(comp.params), macs=str(comp.macs),
            overall_acc=tr.overall_acc, unseen_acc=tr.unseen_acc,
            loss_first=float(np.mean(losses_first)), loss_last=float(np.mean(losses_last))))

    csv_path = workdir / "results.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(ResultRow.FIELDS)
        writer.writerows(r.csv_values() for r in rows)
    _write_markdown(workdir / "results.md", rows)
    return MatrixOutcome(jobs, rows, csv_path, teacher_results, student_results)


def _acc(v):
    return "" if v is None else f"{100 * v:.2f}"


def _write_markdown(path, rows):
    lines = ["# Matrix results", ""]
    for kind, title, cols in (
        ("teacher", "Teachers", ("name", "dg_preset", "params", "macs")),
        ("ensemble", "Teacher ensembles", ("name", "members")),
        ("student", "Distilled students", ("name", "members", "params", "macs")),
    ):
        group = [r for r in rows if r.kind == kind]
        if not group:
            continue
        lines.append(f"## {title}")
        lines.append("")
        header = list(cols) + ["acc %", "unseen acc %"]
        lines.append("| " + " | ".join(header) + " |")
        lines.append("|" + "---|" * len(header))
        for r in group:
            cells = [str(getattr(r, c)) for c in cols]
            cells += [_acc(r.overall_acc), _acc(r.unseen_acc)]
            lines.append("| " + " | ".join(cells) + " |")
        lines.append("")
    path.write_text("\n".join(lines))
