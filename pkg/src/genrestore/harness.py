"""Experiment drivers behind the CLI tasks.

Seeding: image ``i`` of a run with seed ``s`` is synthesised from stream
``s ^ i``; its optimiser restarts use base seed ``(s ^ i) + 2**32`` so that
initial latents never coincide with the synthesised ones. Every method run
on the same image shares those restart seeds.
"""

import json
import os
from dataclasses import dataclass

import numpy as np

from . import estimators as est
from . import gradcheck as gc
from . import transforms as tf
from .config import _path, build_model, image_shape, resolve_transform
from .errors import ConfigError
from .io import load_vector, save_tensor, write_image
from .metrics import MetricsReport, format_value, mse, psnr
from .numerics import Prng, derive_seed
from .optim import OptimizerConfig, RestartPolicy, multi_restart
from .synth import SynthSpec, synth_problem

RESTART_SEED_OFFSET = 2**32
DESK_ITERATIONS = 20_000


@dataclass
class Image:
    index: int
    y: np.ndarray
    truth: object
    seed: int


@dataclass
class Method:
    name: str
    kind: str  # "known" | "unknown" | "baseline"
    lam: object = None
    power: int = 2

    @property
    def slug(self):
        return self.name.replace("(", "-").replace(")", "").replace(",", "-").replace("=", "")


def optimizer_config(cfg):
    opt = dict(cfg.get("optimizer", {}))
    opt.setdefault("iterations", DESK_ITERATIONS)
    return OptimizerConfig(**opt)


def noise_model(cfg):
    noise = cfg.get("noise", {})
    beta = noise.get("beta", "profiled")
    return est.NoiseModel(beta=None if beta == "profiled" else float(beta),
                          exponent_mode=noise.get("exponent_mode", "n"))


def restart_policy(cfg, image_seed):
    r = cfg.get("restarts", {})
    return RestartPolicy(restarts=r.get("restarts", 3),
                         base_seed=image_seed + RESTART_SEED_OFFSET,
                         selection=r.get("selection", "final_objective"))


def _baseline_methods(spec, separation):
    power = spec.get("power", 2)
    lams = spec["lambda_grid"] if "lambda_grid" in spec else [spec.get("lambda", 0.0)]
    out = []
    for lam in lams:
        if separation:
            lam = list(np.broadcast_to(np.asarray(lam, float), (2,)))
            label = f"baseline(lambda={lam[0]:g}/{lam[1]:g},power={power})"
        else:
            if isinstance(lam, list):
                raise ConfigError("single-image baselines take a scalar lambda")
            label = f"baseline(lambda={lam:g},power={power})"
        out.append(Method(label, "baseline", lam, power))
    return out


def parse_methods(entries, separation):
    methods = []
    for entry in entries:
        if entry == "proposed-known":
            methods.append(Method(entry, "known"))
        elif entry == "proposed-unknown":
            methods.append(Method(entry, "unknown"))
        else:
            methods.extend(_baseline_methods(entry["baseline"], separation))
    return methods


def _default_methods(cfg, separation):
    entries = ["proposed-unknown" if cfg.get("unknown_params") else "proposed-known"]
    if "baseline" in cfg:
        entries.append({"baseline": cfg["baseline"]})
    return parse_methods(entries, separation)


# --- problem setup -----------------------------------------------------------

class _Setup:
    """Models, transforms and images for a config (shared by all methods)."""

    def __init__(self, cfg):
        self.cfg = cfg
        self.separation = "models" in cfg
        if self.separation:
            self.generators = [build_model(cfg, s) for s in cfg["models"]]
        else:
            self.generators = [build_model(cfg, cfg["model"])]
        self.shape = image_shape(cfg, self.generators[0])
        if self.shape.size != self.generators[0].output_dim:
            raise ConfigError(f"image shape {self.shape.dims} does not match generator "
                              f"output {self.generators[0].output_dim}")
        if self.separation:
            self.true_alpha = cfg.get("mixture", {}).get("alpha")
            self.known = self.unknown = None
            self.truth = {"alpha": self.true_alpha}
        else:
            self.known, self.unknown, self.truth = resolve_transform(cfg, self.shape)
            if cfg.get("constraint") == "sum_to_one":
                if not isinstance(self.unknown, tf.ParametricFamily) or self.unknown.param_dim < 2:
                    raise ConfigError("sum_to_one needs a parametric family with >= 2 members")
                self.unknown.constraint = "sum_to_one"
        self.noise = noise_model(cfg)
        self.joint = cfg.get("profiling", "profiled") == "joint"
        self.images = self._images()

    def _images(self):
        cfg, seed = self.cfg, self.cfg.get("seed", 0)
        if "observation" in cfg:
            obs = cfg["observation"]
            try:
                y = load_vector(_path(cfg, obs["path"]))
                truth = (load_vector(_path(cfg, obs["ground_truth"]))
                         if "ground_truth" in obs else None)
            except OSError as exc:
                raise ConfigError(f"cannot read observation: {exc}") from exc
            return [Image(0, y, truth, seed)]
        syn = cfg["synthesis"]
        spec = self._synth_spec(syn.get("beta", 0.0))
        out_dir = cfg.get("output_dir")
        images = []
        for i in range(syn.get("images", 1)):
            s = derive_seed(seed, i)
            sample = synth_problem(spec, s, out_dir, prefix=f"img{i:03d}_")
            images.append(Image(i, sample.y, sample.x_true, s))
        return images

    def _synth_spec(self, beta):
        if self.separation:
            if self.true_alpha is None:
                raise ConfigError("synthesising a mixture needs mixture.alpha")
            return SynthSpec(self.generators, est.Mixture(np.asarray(self.true_alpha, float)),
                             beta)
        if self.known is None:
            raise ConfigError("synthesis needs the true transform "
                              "(synthesis.alpha / synthesis.channel)")
        return SynthSpec(self.generators, self.known, beta)

    def problem(self, y, method):
        if self.separation:
            if method.kind == "unknown":
                mix = est.Mixture(None, self.cfg.get("constraint", "none"))
            else:
                if self.true_alpha is None:
                    raise ConfigError("known-coefficient separation needs mixture.alpha")
                mix = est.Mixture(np.asarray(self.true_alpha, float))
            baseline = est.Baseline(method.lam) if method.kind == "baseline" else None
            return est.Problem(y, self.generators, mix, self.noise, baseline=baseline)
        if method.kind == "unknown":
            return est.Problem(y, self.generators, self.unknown, self.noise, joint=self.joint)
        if self.known is None:
            raise ConfigError(f"method {method.name} needs the true transform")
        baseline = est.Baseline(method.lam, method.power) if method.kind == "baseline" else None
        return est.Problem(y, self.generators, self.known, self.noise, baseline=baseline)


# --- output ------------------------------------------------------------------

def _write_outputs(out_dir, stem, res, shape, separation):
    save_tensor(np.concatenate(res.z_hat) if separation else res.z_hat,
                os.path.join(out_dir, f"{stem}_z_hat.gtn"))
    xs = res.x_hat if separation else (res.x_hat,)
    for k, x in enumerate(xs, 1):
        tag = f"x{k}_hat" if separation else "x_hat"
        save_tensor(x, os.path.join(out_dir, f"{stem}_{tag}.gtn"))
        if shape.channels in (1, 3):
            ext = "ppm" if shape.channels == 3 else "pgm"
            write_image(os.path.join(out_dir, f"{stem}_{tag}.{ext}"), shape.unflatten(x))
    if res.alpha_hat is not None:
        save_tensor(res.alpha_hat, os.path.join(out_dir, f"{stem}_alpha_hat.gtn"))
    if res.trace is not None:
        with open(os.path.join(out_dir, f"{stem}_trace.csv"), "w") as fh:
            fh.write("iteration,objective\n")
            for it, v in zip(res.trace.iterations, res.trace.values):
                fh.write(f"{it},{format_value(v)}\n")


def _summary_entry(image, method, res):
    entry = {"image": image.index, "method": method.name, "seed": image.seed,
             "objective": res.objective_final, "beta2_hat": res.beta2_hat,
             "restart_index": res.restart_index, "zero_residual": res.zero_residual}
    if res.alpha_hat is not None:
        entry["alpha_hat"] = [float(a) for a in res.alpha_hat]
    if res.chosen_index is not None:
        entry["chosen_index"] = int(res.chosen_index)
    return entry


def _report_columns(separation):
    if separation:
        return (["error (1)", "error (2)", "psnr_db (1)", "psnr_db (2)"],
                ["alpha_1", "alpha_2", "beta2_hat", "objective", "restart"])
    return ["error", "psnr_db"], ["beta2_hat", "objective", "restart", "chosen_index"]


def run_methods(cfg, methods):
    """Solve every image with every method; one report row per pair."""
    setup = _Setup(cfg)
    opt = optimizer_config(cfg)
    out_dir = cfg.get("output_dir")
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    metric_cols, extra_cols = _report_columns(setup.separation)
    report = MetricsReport(metric_cols, extra_cols)
    results, summary = [], []
    for image in setup.images:
        policy = restart_policy(cfg, image.seed)
        if policy.selection == "oracle_mse" and image.truth is None:
            raise ConfigError("oracle_mse selection needs ground truth")
        for method in methods:
            problem = setup.problem(image.y, method)
            res = multi_restart(problem, opt, policy, ground_truth=image.truth)
            results.append((image, method, res))
            report.add(image.index, method.name, **_row(setup, image, res))
            summary.append(_summary_entry(image, method, res))
            if out_dir:
                _write_outputs(out_dir, f"img{image.index:03d}_{method.slug}", res,
                               setup.shape, setup.separation)
    if out_dir:
        report.write(os.path.join(out_dir, "report.csv"))
        with open(os.path.join(out_dir, "summary.json"), "w") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
    return report, results


def _row(setup, image, res):
    row = {"beta2_hat": res.beta2_hat, "objective": res.objective_final,
           "restart": res.restart_index}
    if setup.separation:
        if res.alpha_hat is not None:
            row["alpha_1"], row["alpha_2"] = (float(a) for a in res.alpha_hat)
        if image.truth is not None:
            for k in (0, 1):
                row[f"error ({k + 1})"] = mse(image.truth[k], res.x_hat[k])
                row[f"psnr_db ({k + 1})"] = psnr(image.truth[k], res.x_hat[k])
        return row
    row["chosen_index"] = res.chosen_index
    if image.truth is not None:
        row["error"] = mse(image.truth, res.x_hat)
        row["psnr_db"] = psnr(image.truth, res.x_hat)
    return row


def run_restore(cfg):
    if "models" in cfg:
        raise ConfigError("restore takes a single 'model'; use the separate task")
    return run_methods(cfg, _default_methods(cfg, separation=False))


def run_separate(cfg):
    return run_methods(cfg, _default_methods(cfg, separation=True))


def run_benchmark(cfg):
    separation = "models" in cfg
    entries = cfg.get("methods", ["proposed-known", "proposed-unknown"])
    return run_methods(cfg, parse_methods(entries, separation))


def run_mmse(cfg):
    """Monte-Carlo posterior mean for a known transform, one row per image."""
    setup = _Setup(cfg)
    if setup.separation or setup.known is None:
        raise ConfigError("mmse needs one model and a fully known transform")
    opts = cfg.get("mmse", {})
    samples, batch = opts.get("samples", 100_000), opts.get("batch_size", 65536)
    report = MetricsReport(["error", "psnr_db"], ["effective_samples", "near_manifold"])
    g = setup.generators[0]
    results = []
    for image in setup.images:
        prng = Prng(image.seed + RESTART_SEED_OFFSET)
        res = est.mmse_estimate(image.y, g, setup.known, samples, prng, batch)
        x_hat = g.forward(res.z_hat)
        row = {"effective_samples": res.effective_samples, "near_manifold": res.near_manifold}
        if image.truth is not None:
            row["error"], row["psnr_db"] = mse(image.truth, x_hat), psnr(image.truth, x_hat)
        report.add(image.index, "mmse", **row)
        results.append((image, res))
        out_dir = cfg.get("output_dir")
        if out_dir:
            os.makedirs(out_dir, exist_ok=True)
            save_tensor(res.z_hat, os.path.join(out_dir, f"img{image.index:03d}_mmse_z_hat.gtn"))
            save_tensor(x_hat, os.path.join(out_dir, f"img{image.index:03d}_mmse_x_hat.gtn"))
    if cfg.get("output_dir"):
        report.write(os.path.join(cfg["output_dir"], "report.csv"))
    return report, results


def run_gradcheck(cfg):
    """Finite-difference suites; returns the per-objective results."""
    opts = cfg.get("gradcheck", {})
    dims = {"latent_dim": opts.get("latent_dim", 8),
            "shape": tf.ImageShape(*opts.get("output_shape", [8, 8, 3]))}
    return gc.run_checks(opts.get("objectives", gc.OBJECTIVES), opts.get("instances", 10),
                         cfg.get("seed", 0), opts.get("step", 1e-6), **dims)
