"""End-to-end runner: build tasks, learn a representation, weight, report.

One run is a grid of seed x method cells. Every cell produces per-task
weights, the plug-in estimate (mean of weighted pseudo-outcomes), and,
when the data comes with oracle outcome models (synthetic benchmarks), the
joint-bias metric. Cells fail independently; a failed cell is recorded
with its reason and the rest of the grid still runs.

Design-phase discipline is structural: representation learning and every
weighting method receive a masked task family whose pseudo-outcomes are
absent. Outcomes only enter when the estimator and the report are
computed.

Artifacts (all byte-stable for a fixed config): `results.tsv` (one record
per seed x method x task), `table.txt` (method rows, mean with standard
error over seeds), per-cell weight files, and `timings.tsv` (wall times;
kept out of results.tsv so determinism is checkable by byte comparison).
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass, replace

import numpy as np

from .baselines import (
    PropensityContext,
    entropy_balance,
    fit_logistic,
    ipw_weights,
    pca_representation,
    ps_vector_representation,
    uniform_weights,
)
from .config import RunConfig, parse_method
from .kernels import Kernel, as_rep_matrix, median_bandwidth
from .oracle import SyntheticOracle, joint_bias_metric, make_synthetic_dgp
from .qp import WeightVector, kom_weights
from .repnet import RepNet, extract_representation, nn_head_weights, train
from .tasks import (
    CsvSchema,
    Dataset,
    TaskFamily,
    build_att_task,
    build_ate_tasks,
    build_transport_task,
    load_dataset_csv,
)

__all__ = ["run_pipeline", "emit_report", "RESULT_COLUMNS", "PipelineResult"]

RESULT_COLUMNS = (
    "method",
    "seed",
    "task",
    "tau",
    "joint_bias",
    "solver_iterations",
    "solver_converged",
    "solver_primal_residual",
    "solver_dual_residual",
    "status",
)


@dataclass
class SeedData:
    kind: str
    family: TaskFamily
    design_family: TaskFamily
    raw_family: TaskFamily
    pooled_x: np.ndarray
    ps_x: np.ndarray
    ps_labels: np.ndarray  # integer codes into ps_alphabet
    ps_alphabet: tuple
    oracle: SyntheticOracle | None


@dataclass
class PipelineResult:
    records: list
    output_dir: str
    n_ok: int
    n_failed: int


def _fmt(value) -> str:
    if value is None:
        return "NA"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return f"{value:.12g}"
    return str(value)


def _standardize_datasets(datasets):
    pooled = np.vstack([ds.covariates for ds in datasets])
    mu = pooled.mean(axis=0)
    sd = pooled.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    out = []
    for ds in datasets:
        out.append(
            Dataset(
                covariates=(ds.covariates - mu) / sd,
                treatment=ds.treatment,
                outcome=ds.outcome,
                rct_indicator=ds.rct_indicator,
                treatment_alphabet=ds.treatment_alphabet,
            )
        )
    return out


def _build_family(cfg: RunConfig, datasets) -> TaskFamily:
    if cfg.task == "att":
        return build_att_task(datasets[0])
    if cfg.task == "ate":
        return build_ate_tasks(datasets[0], arm_weighting=cfg.arm_weighting)
    return build_transport_task(datasets[0], datasets[1])


def _load_csv_datasets(cfg: RunConfig):
    spec = cfg.csv
    schema = CsvSchema(
        covariates=spec.covariates,
        treatment=spec.treatment,
        outcome=spec.outcome,
        rct_indicator=spec.rct_indicator,
    )
    ds = load_dataset_csv(spec.path, schema)
    if cfg.task != "transport":
        return [ds]
    s = ds.rct_indicator
    if s is None:
        raise ValueError("transport task needs an rct indicator column")
    rct = Dataset(
        covariates=ds.covariates[s == 1],
        treatment=np.asarray(ds.treatment_alphabet, dtype=object)[ds.treatment[s == 1]]
        if ds.treatment is not None
        else None,
        outcome=ds.outcome[s == 1] if ds.outcome is not None else None,
    )
    obs = Dataset(covariates=ds.covariates[s == 0])
    return [rct, obs]


def prepare_seed_data(cfg: RunConfig, seed: int) -> SeedData:
    oracle = None
    if cfg.synthetic is not None:
        spec = cfg.synthetic
        if cfg.task == "transport":
            (rct, obs), oracle = make_synthetic_dgp(
                d=spec.d,
                n_source=spec.n_source,
                confounder_dim=spec.confounder_dim,
                seed=seed,
                n_target=spec.n_target,
                framing="transport",
                noise_sd=spec.noise_sd,
            )
            raw_datasets = [rct, obs]
        else:
            ds, oracle = make_synthetic_dgp(
                d=spec.d,
                n_source=spec.n_source,
                confounder_dim=spec.confounder_dim,
                seed=seed,
                framing="treatment",
                noise_sd=spec.noise_sd,
            )
            raw_datasets = [ds]
    else:
        raw_datasets = _load_csv_datasets(cfg)

    raw_family = _build_family(cfg, raw_datasets)
    datasets = _standardize_datasets(raw_datasets) if cfg.standardize else raw_datasets
    family = _build_family(cfg, datasets)

    if cfg.task == "transport":
        ps_x = np.vstack([datasets[0].covariates, datasets[1].covariates])
        ps_labels = np.concatenate(
            [np.ones(datasets[0].n, dtype=int), np.zeros(datasets[1].n, dtype=int)]
        )
        ps_alphabet = (0, 1)
        pooled = ps_x
    else:
        ps_x = datasets[0].covariates
        ps_labels = datasets[0].treatment
        ps_alphabet = datasets[0].treatment_alphabet
        pooled = datasets[0].covariates

    return SeedData(
        kind=cfg.task,
        family=family,
        design_family=family.masked(),
        raw_family=raw_family,
        pooled_x=pooled,
        ps_x=ps_x,
        ps_labels=ps_labels,
        ps_alphabet=ps_alphabet,
        oracle=oracle,
    )


def _train_seed(cfg: RunConfig, sd: SeedData, seed: int) -> RepNet:
    train_seed = int(np.random.SeedSequence((seed, 0xC0FFEE)).generate_state(1)[0])
    train_cfg = replace(cfg.train, rng_seed=train_seed)
    return train(
        sd.design_family,
        train_cfg,
        rep_dim=cfg.rep_dim,
        trunk_hidden=cfg.trunk_hidden,
        head_hidden=cfg.head_hidden,
    )


def _representation(rep_name, sd: SeedData, net, cfg: RunConfig):
    if rep_name is None:
        return None
    if rep_name == "ours":
        if net is None:
            raise RuntimeError("no trained network available")
        return extract_representation(net)
    if rep_name == "pca":
        return pca_representation(sd.pooled_x, cfg.rep_dim)
    label_ds = Dataset(covariates=sd.ps_x, treatment=sd.ps_labels)
    return ps_vector_representation(label_ds)


def _kernel_for_task(kernel_name, task, phi, cfg: RunConfig) -> Kernel:
    if kernel_name != "gaussian":
        return Kernel(kernel_name)
    if cfg.gaussian_bandwidth != "median":
        return Kernel("gaussian", bandwidth=float(cfg.gaussian_bandwidth))
    apply = (lambda x: x) if phi is None else phi
    pooled = np.vstack(
        [as_rep_matrix(apply(task.source_x)), as_rep_matrix(apply(task.target_x))]
    )
    return Kernel("gaussian", bandwidth=median_bandwidth(pooled))


def _ipw_for_tasks(sd: SeedData):
    weights = []
    if sd.kind == "att":
        model = fit_logistic(sd.ps_x, (np.asarray(sd.ps_labels) == 1).astype(float))
        ctx = PropensityContext("att", model.predict_proba)
        return [ipw_weights(t, ctx) for t in sd.design_family]
    if sd.kind == "transport":
        model = fit_logistic(sd.ps_x, (np.asarray(sd.ps_labels) == 1).astype(float))
        ctx = PropensityContext("transport", model.predict_proba)
        return [ipw_weights(t, ctx) for t in sd.design_family]
    # one-vs-rest model per arm; task.index is the arm label, ps_labels are codes
    labels = np.asarray(sd.ps_labels)
    for task in sd.design_family:
        if task.index not in sd.ps_alphabet:
            raise RuntimeError(f"cannot match task arm {task.index!r} to data labels")
        code = sd.ps_alphabet.index(task.index)
        model = fit_logistic(sd.ps_x, (labels == code).astype(float))
        ctx = PropensityContext("ate", model.predict_proba)
        weights.append(ipw_weights(task, ctx))
    return weights


def compute_method_weights(method: str, sd: SeedData, net, cfg: RunConfig):
    """Per-task weights for one method, computed from the masked family."""
    rep_name, kernel_name = parse_method(method)
    if method == "unweighted":
        return [uniform_weights(t) for t in sd.design_family]
    if method == "entropy":
        return [entropy_balance(t) for t in sd.design_family]
    if method == "ipw":
        return _ipw_for_tasks(sd)
    if method == "nn-head":
        if net is None:
            raise RuntimeError("no trained network available")
        return [nn_head_weights(net, t) for t in sd.design_family]
    phi = _representation(rep_name, sd, net, cfg)
    out = []
    for task in sd.design_family:
        kernel = _kernel_for_task(kernel_name, task, phi, cfg)
        out.append(kom_weights(task, kernel, phi, sigma=cfg.sigma, config=cfg.solver))
    return out


def _target_model_values(sd: SeedData):
    """Oracle outcome-model means on each task's target rows (raw coords)."""
    if sd.oracle is None:
        return None
    values = []
    for task in sd.raw_family:
        if sd.kind == "ate":
            values.append(sd.oracle.outcome_model(task.target_x, int(task.index)))
        elif sd.kind == "att":
            values.append(sd.oracle.outcome_model(task.target_x, 0))
        else:
            values.append(
                sd.oracle.outcome_model(task.target_x, 1)
                - sd.oracle.outcome_model(task.target_x, 0)
            )
    return values


def _validate_weights(w: np.ndarray) -> None:
    if np.any(w < 0):
        raise RuntimeError("weight file validation failed: negative weight")
    if abs(w.mean() - 1.0) > 1e-6:
        raise RuntimeError("weight file validation failed: mean differs from 1")


def _write_weight_file(path, w: np.ndarray) -> None:
    _validate_weights(w)
    with open(path, "w", encoding="utf-8") as fh:
        fh.writelines(f"{value:.12g}\n" for value in w)


def run_pipeline(cfg: RunConfig) -> PipelineResult:
    out_dir = os.environ.get("REPWEIGHT_OUTPUT_DIR", cfg.output_dir)
    weights_dir = os.path.join(out_dir, "weights")
    os.makedirs(weights_dir, exist_ok=True)

    needs_net = any(
        m == "nn-head" or parse_method(m)[0] == "ours" for m in cfg.methods
    )
    records = []
    timings = []
    n_ok = n_failed = 0

    for seed in cfg.seeds:
        try:
            sd = prepare_seed_data(cfg, seed)
        except Exception as exc:  # data failures poison the whole seed
            for method in cfg.methods:
                records.append(_fail_record(method, seed, f"data: {exc}"))
                n_failed += 1
            continue
        model_values = _target_model_values(sd)

        net = None
        net_error = None
        if needs_net:
            start = time.perf_counter()
            try:
                net = _train_seed(cfg, sd, seed)
            except Exception as exc:
                net_error = f"training: {exc}"
            timings.append(("__train__", seed, time.perf_counter() - start))

        for method in cfg.methods:
            start = time.perf_counter()
            uses_net = method == "nn-head" or parse_method(method)[0] == "ours"
            if uses_net and net_error is not None:
                records.append(_fail_record(method, seed, net_error))
                n_failed += 1
                continue
            try:
                weight_vectors = compute_method_weights(method, sd, net, cfg)
                cell_records = _cell_records(
                    method, seed, sd, weight_vectors, model_values
                )
                for task, wv in zip(sd.design_family, weight_vectors):
                    fname = f"seed{seed}_{method}_task{task.index}.txt"
                    _write_weight_file(os.path.join(weights_dir, fname), wv.w)
            except Exception as exc:
                records.append(_fail_record(method, seed, str(exc)))
                n_failed += 1
                continue
            records.extend(cell_records)
            n_ok += 1
            timings.append((method, seed, time.perf_counter() - start))

    tsv = results_tsv(records)
    with open(os.path.join(out_dir, "results.tsv"), "w", encoding="utf-8") as fh:
        fh.write(tsv)
    with open(os.path.join(out_dir, "table.txt"), "w", encoding="utf-8") as fh:
        fh.write(emit_report(records))
    with open(os.path.join(out_dir, "timings.tsv"), "w", encoding="utf-8") as fh:
        fh.write("method\tseed\tseconds\n")
        for method, seed, seconds in timings:
            fh.write(f"{method}\t{seed}\t{seconds:.3f}\n")
    return PipelineResult(records=records, output_dir=out_dir, n_ok=n_ok, n_failed=n_failed)


def _fail_record(method, seed, reason) -> dict:
    reason = " ".join(str(reason).split())  # keep the TSV single-line
    return {
        "method": method,
        "seed": seed,
        "task": "*",
        "tau": None,
        "joint_bias": None,
        "solver_iterations": None,
        "solver_converged": None,
        "solver_primal_residual": None,
        "solver_dual_residual": None,
        "status": f"FAIL({reason})",
    }


def _cell_records(method, seed, sd: SeedData, weight_vectors, model_values) -> list:
    jb = None
    if model_values is not None:
        jb = joint_bias_metric(
            sd.raw_family, [wv.w for wv in weight_vectors], model_values
        )
    out = []
    for task, raw_task, wv in zip(sd.family, sd.raw_family, weight_vectors):
        tau = (
            float(np.mean(wv.w * raw_task.source_pseudo_y))
            if raw_task.source_pseudo_y is not None
            else None
        )
        cert = wv.certificate
        out.append(
            {
                "method": method,
                "seed": seed,
                "task": task.index,
                "tau": tau,
                "joint_bias": jb,
                "solver_iterations": None if cert is None else cert.iterations,
                "solver_converged": None if cert is None else cert.converged,
                "solver_primal_residual": None if cert is None else cert.primal_residual,
                "solver_dual_residual": None if cert is None else cert.dual_residual,
                "status": "ok",
            }
        )
    return out


def results_tsv(records) -> str:
    lines = ["\t".join(RESULT_COLUMNS)]
    for rec in records:
        lines.append("\t".join(_fmt(rec[col]) for col in RESULT_COLUMNS))
    return "\n".join(lines) + "\n"


def parse_results_tsv(text: str) -> list:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0].split("\t") != list(RESULT_COLUMNS):
        raise ValueError("not a results file (header mismatch)")
    records = []
    for line in lines[1:]:
        cells = line.split("\t")
        rec = dict(zip(RESULT_COLUMNS, cells))
        for key in ("tau", "joint_bias", "solver_primal_residual", "solver_dual_residual"):
            rec[key] = None if rec[key] == "NA" else float(rec[key])
        rec["solver_iterations"] = (
            None if rec["solver_iterations"] == "NA" else int(rec["solver_iterations"])
        )
        rec["solver_converged"] = (
            None if rec["solver_converged"] == "NA" else rec["solver_converged"] == "true"
        )
        records.append(rec)
    return records


def _mean_se(values) -> str:
    values = [v for v in values if v is not None]
    if not values:
        return "NA"
    arr = np.asarray(values, dtype=float)
    mean = arr.mean()
    if arr.size < 2:
        return f"{mean:.4g}"
    se = arr.std(ddof=1) / np.sqrt(arr.size)
    return f"{mean:.4g} ({se:.4g})"


def emit_report(records) -> str:
    """Aligned text table: one method per row, seed-aggregated columns."""
    methods = []
    for rec in records:
        if rec["method"] not in methods:
            methods.append(rec["method"])
    tasks = []
    for rec in records:
        if rec["task"] != "*" and rec["task"] not in tasks:
            tasks.append(rec["task"])

    header = ["method", "joint_bias"] + [f"tau[{t}]" for t in tasks] + ["failures"]
    rows = []
    for method in methods:
        mine = [r for r in records if r["method"] == method]
        ok = [r for r in mine if r["status"] == "ok"]
        fails = [r for r in mine if r["status"] != "ok"]
        jb_by_seed = {}
        for r in ok:
            jb_by_seed.setdefault(r["seed"], r["joint_bias"])
        row = [method, _mean_se(list(jb_by_seed.values()))]
        for t in tasks:
            row.append(_mean_se([r["tau"] for r in ok if str(r["task"]) == str(t)]))
        row.append("; ".join(sorted({r["status"] for r in fails})) if fails else "-")
        rows.append(row)

    widths = [max(len(header[i]), *(len(r[i]) for r in rows)) if rows else len(header[i]) for i in range(len(header))]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
    lines.append("  ".join("-" * w for w in widths))
    for row in rows:
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)))
    return "\n".join(lines) + "\n"
