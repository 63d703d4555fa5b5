"""Command-line driver.

    rydberg-anyons <gs|sweep|strings|braid|codesim|validate> [--config FILE]
                   [--seed N] [--out DIR] [--threads N]

Exit status is 0 on success, 1 for an invalid configuration and 2 when a
numerical stage fails (for example an unconverged eigensolver).
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import math
import os
import platform
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

__all__ = ["ConfigError", "NumericalFailure", "ExperimentConfig", "RunManifest", "default_config", "load_config", "run", "main"]

STAGES = ("gs", "sweep", "strings", "braid", "codesim", "validate")


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


class NumericalFailure(RuntimeError):
    pass


_DEFAULTS = {
    "lattice": {"cells_x": 1, "cells_y": 4, "boundary_y": "periodic", "spacing": 1.0},
    "punctures": [],
    "model": {
        "rabi": 1.0,
        "detuning": 3.5,
        "phase": 0.0,
        "blockade_radius": 2.4,
        "trunc_radius": math.sqrt(7.0),
        "boundary_detuning_ratio": 0.48,
    },
    "evolution": {"blockade_radius": 1.53, "trunc_radius": 1.0},
    "solver": {"k": 1, "tol": 1e-10, "seed": 0, "krylov_dim": 60, "max_restarts": 500, "basis": "triangle_restricted"},
    "measure": {"columns": None, "open_length": None},
    "sweep": {"detunings": [1.0, 1.75, 3.5, 5.25]},
    "thresholds": {"vanishing": 0.1, "finite": 0.3},
    "braid": {"N": 1, "word": "R2 R2"},
    "codesim": {"patch": None, "script": None, "runs": 1},
    "output": "run",
}


@dataclass
class ExperimentConfig:
    """Nested configuration; see ``default_config`` for every field."""

    data: dict = field(default_factory=lambda: copy.deepcopy(_DEFAULTS))

    def __getitem__(self, key):
        return self.data[key]

    def to_json(self) -> str:
        return json.dumps(self.data, indent=2, sort_keys=True)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.data, sort_keys=True).encode()).hexdigest()

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        merged = copy.deepcopy(_DEFAULTS)
        for key, val in d.items():
            if key not in merged:
                raise ConfigError(f"{key}: unknown section")
            if isinstance(merged[key], dict) and isinstance(val, dict):
                for k2 in val:
                    if k2 not in merged[key]:
                        raise ConfigError(f"{key}.{k2}: unknown field")
                merged[key].update(val)
            else:
                merged[key] = val
        cfg = cls(merged)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        d = self.data
        lat = d["lattice"]
        for k in ("cells_x", "cells_y"):
            if not isinstance(lat[k], int) or lat[k] < 1:
                raise ConfigError(f"lattice.{k}: must be a positive integer")
        if lat["boundary_y"] not in ("open", "periodic"):
            raise ConfigError("lattice.boundary_y: must be 'open' or 'periodic'")
        _positive(lat["spacing"], "lattice.spacing")
        m = d["model"]
        for k in ("rabi", "blockade_radius", "trunc_radius", "boundary_detuning_ratio"):
            _positive(m[k], f"model.{k}")
        _number(m["detuning"], "model.detuning")
        _number(m["phase"], "model.phase")
        for k in ("blockade_radius", "trunc_radius"):
            _positive(d["evolution"][k], f"evolution.{k}")
        s = d["solver"]
        if not isinstance(s["k"], int) or s["k"] < 1:
            raise ConfigError("solver.k: must be a positive integer")
        _positive(s["tol"], "solver.tol")
        if not isinstance(s["seed"], int):
            raise ConfigError("solver.seed: must be an integer")
        if s["basis"] not in ("full", "triangle_restricted"):
            raise ConfigError("solver.basis: must be 'full' or 'triangle_restricted'")
        th = d["thresholds"]
        _positive(th["vanishing"], "thresholds.vanishing")
        _positive(th["finite"], "thresholds.finite")
        if th["vanishing"] > th["finite"]:
            raise ConfigError("thresholds: vanishing must not exceed finite")
        dets = d["sweep"]["detunings"]
        if not isinstance(dets, list) or not dets:
            raise ConfigError("sweep.detunings: must be a non-empty list")
        for i, x in enumerate(dets):
            _positive(x, f"sweep.detunings[{i}]")
        for i, p in enumerate(d["punctures"]):
            if "cells" not in p:
                raise ConfigError(f"punctures[{i}].cells: required")
            if p.get("split", "half") not in ("half", "e", "m"):
                raise ConfigError(f"punctures[{i}].split: must be half, e or m")
        b = d["braid"]
        if not isinstance(b["N"], int) or b["N"] < 1:
            raise ConfigError("braid.N: must be a positive integer")
        if not isinstance(b["word"], str):
            raise ConfigError("braid.word: must be a string")
        if not isinstance(d["codesim"]["runs"], int) or d["codesim"]["runs"] < 1:
            raise ConfigError("codesim.runs: must be a positive integer")


def _number(x, name):
    if not isinstance(x, (int, float)) or isinstance(x, bool) or not math.isfinite(x):
        raise ConfigError(f"{name}: must be a finite number")


def _positive(x, name):
    _number(x, name)
    if x <= 0:
        raise ConfigError(f"{name}: must be positive")


def default_config() -> ExperimentConfig:
    """Energies in units of the Rabi frequency, lengths in units of ``a``."""
    return ExperimentConfig()


def load_config(path) -> ExperimentConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"config: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config: top level must be an object")
    return ExperimentConfig.from_dict(raw)


@dataclass
class RunManifest:
    stage: str
    config_hash: str
    versions: dict
    wall_clock: float
    files: list
    summary: dict
    status: str = "ok"

    def to_json(self) -> str:
        return json.dumps(self.__dict__, indent=2, sort_keys=True)

    def verify(self, root) -> bool:
        root = Path(root)
        return all(_sha256(root / f["path"]) == f["sha256"] for f in self.files)


def _sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _versions() -> dict:
    import numpy
    import scipy

    from . import __version__

    return {"python": platform.python_version(), "numpy": numpy.__version__, "scipy": scipy.__version__, "package": __version__}


# ------------------------------------------------------------------ stages


def _lattice(cfg: ExperimentConfig):
    from .geometry import Boundary, LatticeSpec, apply_puncture, build_ruby_lattice, split_boundary

    L = cfg["lattice"]
    lat = build_ruby_lattice(LatticeSpec(L["cells_x"], L["cells_y"], Boundary(L["boundary_y"]), L["spacing"]))
    for p in cfg["punctures"]:
        cells = [tuple(c) for c in p["cells"]]
        lat = apply_puncture(lat, split_boundary(lat, cells, p.get("split", "half")), cfg["model"]["boundary_detuning_ratio"])
    return lat


def _params(cfg: ExperimentConfig, detuning=None):
    from .operators import ModelParams

    m = cfg["model"]
    return ModelParams(m["rabi"], m["detuning"] if detuning is None else detuning, m["phase"], m["blockade_radius"], m["trunc_radius"])


def _dual(cfg: ExperimentConfig):
    from .operators import dual_params

    e = cfg["evolution"]
    return dual_params(cfg["model"]["rabi"], e["blockade_radius"], e["trunc_radius"])


def _solve(cfg, lat, detuning=None, seed=None):
    from .operators import OccupationBasis, build_hamiltonian
    from .spectra import ground_states

    s = cfg["solver"]
    basis = OccupationBasis(lat, s["basis"])
    H = build_hamiltonian(lat, _params(cfg, detuning), basis)
    res = ground_states(H, s["k"], s["tol"], s["seed"] if seed is None else seed, s["krylov_dim"], s["max_restarts"])
    if not res.converged:
        raise NumericalFailure(f"eigensolver did not converge (residuals {list(res.residuals)})")
    return basis, res


def _fmt(x) -> str:
    return f"{float(x):.12g}"


def _write(out: Path, name: str, text: str, files: list) -> None:
    path = out / name
    path.write_text(text)
    files.append(name)


def _stage_gs(cfg, out, seed, files):
    from .spectra import save_eigenresult

    lat = _lattice(cfg)
    basis, res = _solve(cfg, lat, seed=seed)
    save_eigenresult(res, out, "eigen", {"config_hash": cfg.digest(), "basis": basis.mode.value, "dim": basis.dim})
    files += ["eigen.npy", "eigen.json"]
    rows = ["level,energy,residual"] + [f"{i},{_fmt(e)},{_fmt(r)}" for i, (e, r) in enumerate(zip(res.eigenvalues, res.residuals))]
    _write(out, "energies.csv", "\n".join(rows) + "\n", files)
    gaps = [float(x) for x in (res.eigenvalues[1:] - res.eigenvalues[:-1])]
    return {"energies": [float(e) for e in res.eigenvalues], "gaps": gaps, "dim": basis.dim}


def _survey(cfg, lat, basis, res):
    from .observables import Thresholds, classify_phase, measurements_to_csv, phase_survey
    from .spectra import StateVector

    th = Thresholds(**cfg["thresholds"])
    rows, labels = [], []
    for k in range(res.eigenvectors.shape[1]):
        psi = StateVector(res.eigenvectors[:, k].astype(complex), basis)
        sv = phase_survey(psi, lat, _dual(cfg), cfg["measure"]["columns"], cfg["measure"]["open_length"])
        rows += [(k, sv[name]) for name in ("closed_z", "closed_x", "open_z", "open_x")]
        labels.append(classify_phase(sv["closed_z"], sv["closed_x"], sv["open_z"], sv["open_x"], th).value)
    return measurements_to_csv(rows), labels


def _stage_strings(cfg, out, seed, files):
    lat = _lattice(cfg)
    basis, res = _solve(cfg, lat, seed=seed)
    text, labels = _survey(cfg, lat, basis, res)
    _write(out, "strings.csv", text, files)
    summary = {"energies": [float(e) for e in res.eigenvalues], "phase_labels": labels}
    _write(out, "summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n", files)
    return summary


def _stage_sweep(cfg, out, seed, files):
    lat = _lattice(cfg)
    points = []
    lines = None
    for d in cfg["sweep"]["detunings"]:
        basis, res = _solve(cfg, lat, detuning=d, seed=seed)
        text, labels = _survey(cfg, lat, basis, res)
        head, *body = text.splitlines()
        if lines is None:
            lines = ["detuning," + head]
        lines += [f"{_fmt(d)},{row}" for row in body]
        points.append({"detuning": d, "energy": float(res.eigenvalues[0]), "phase_label": labels[0]})
    _write(out, "sweep.csv", "\n".join(lines) + "\n", files)
    summary = {"points": points}
    _write(out, "summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n", files)
    return summary


def _stage_braid(cfg, out, seed, files):
    from .anyons import AnyonError, compile_braid

    b = cfg["braid"]
    try:
        c = compile_braid(b["word"], b["N"])
    except AnyonError as exc:
        raise ConfigError(f"braid.word: {exc}") from None
    _write(out, "braid.json", c.to_json() + "\n", files)
    return {"word": c.word, "N": c.N, "global_phase": c.global_phase, "leakage": c.leakage}


def _stage_codesim(cfg, out, seed, files):
    from .codesim import (
        CodeSimError,
        PatchSpec,
        ProtocolScript,
        build_patch,
        log_to_jsonl,
        measure_table1_signature,
        run_protocol,
        table1_states,
        two_puncture_prep_script,
    )

    c = cfg["codesim"]
    try:
        spec = PatchSpec.from_dict(c["patch"]) if c["patch"] else PatchSpec()
        patch, tab = build_patch(spec, seed)
        if c["script"] is None:
            script = two_puncture_prep_script()
        elif isinstance(c["script"], dict):
            script = ProtocolScript.from_json(json.dumps(c["script"]))
        else:
            script = ProtocolScript.from_json(Path(c["script"]).read_text())
        script.validate(patch)
    except (CodeSimError, OSError, KeyError, TypeError) as exc:
        raise ConfigError(f"codesim: {exc}") from None
    reference = {}
    if all(n in patch.operators for n in ("Z_C", "X_C", "Z_S", "X_S")):
        for name, t in table1_states(patch, tab, seed).items():
            reference[name] = measure_table1_signature(t, patch).label
    log_lines, counts = [], {}
    for r in range(c["runs"]):
        t = tab.copy(seed + r)
        log = run_protocol(script, patch, t)
        label = measure_table1_signature(t, patch).label if reference else "n/a"
        counts[label] = counts.get(label, 0) + 1
        for rec in log:
            rec = dict(rec, run=r)
            log_lines.append(rec)
        log_lines.append({"run": r, "signature": label})
    _write(out, "protocol.jsonl", log_to_jsonl(log_lines), files)
    summary = {"n_qubits": patch.n_qubits, "logical_qubits": patch.logical_count, "reference_signatures": reference, "label_counts": counts}
    _write(out, "codesim.json", json.dumps(summary, indent=2, sort_keys=True) + "\n", files)
    return summary


_RUNNERS = {"gs": _stage_gs, "strings": _stage_strings, "sweep": _stage_sweep, "braid": _stage_braid, "codesim": _stage_codesim}


def run(config: ExperimentConfig, stage: str, out=None, seed: int | None = None) -> RunManifest:
    """Execute one stage, write its artifacts and ``manifest.json``."""
    if stage not in STAGES:
        raise ConfigError(f"stage: unknown stage {stage!r}")
    config.validate()
    if stage == "validate":
        return RunManifest(stage, config.digest(), _versions(), 0.0, [], {"valid": True})
    outdir = Path(out if out is not None else config["output"])
    outdir.mkdir(parents=True, exist_ok=True)
    seed = config["solver"]["seed"] if seed is None else seed
    t0 = time.perf_counter()
    files: list[str] = []
    status = "ok"
    from .geometry import GeometryError
    from .operators import OperatorError

    try:
        summary = _RUNNERS[stage](config, outdir, seed, files)
    except (GeometryError, OperatorError) as exc:
        raise ConfigError(f"lattice/model: {exc}") from None
    except NumericalFailure as exc:
        status, summary = "numerical_failure", {"error": str(exc)}
    (outdir / "config.json").write_text(config.to_json() + "\n")
    files.append("config.json")
    manifest = RunManifest(
        stage,
        config.digest(),
        _versions(),
        round(time.perf_counter() - t0, 3),
        [{"path": f, "sha256": _sha256(outdir / f)} for f in files],
        summary,
        status,
    )
    (outdir / "manifest.json").write_text(manifest.to_json() + "\n")
    return manifest


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rydberg-anyons", description=__doc__.splitlines()[0])
    p.add_argument("stage", choices=STAGES)
    p.add_argument("--config", help="JSON experiment configuration")
    p.add_argument("--seed", type=int, help="override solver/measurement seed")
    p.add_argument("--out", help="output directory")
    p.add_argument("--threads", type=int, help="BLAS/OpenMP thread count")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads is not None:
        if args.threads < 1:
            print("error: --threads must be positive", file=sys.stderr)
            return 1
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(args.threads)
    try:
        cfg = load_config(args.config) if args.config else default_config()
        manifest = run(cfg, args.stage, args.out, args.seed)
    except ConfigError as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return 1
    except NumericalFailure as exc:  # pragma: no cover - surfaced through the manifest
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    print(json.dumps({"stage": manifest.stage, "status": manifest.status, "summary": manifest.summary}, sort_keys=True))
    return 0 if manifest.status == "ok" else 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
