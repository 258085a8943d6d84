"""Command-line front end.

Subcommands: segment (full pipeline), crf (saliency refinement), slic
(superpixels only), eval (metric suite over a manifest), synth (fixture
generation), netcheck (network-kernel verification suite). Configuration
precedence is flags > JSON config file > defaults. Logging goes to stderr;
set SIS_LOG=debug|info|warn to control verbosity. Exit codes: 0 success,
1 I/O or format failure, 2 infeasible instance count.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import os
import sys
import time

import numpy as np

from . import metrics, netblocks, report
from .crf import CrfParams, UnaryField, binarize, mean_field_refine
from .pipeline import PipelineConfig, run_pipeline
from .slic import rgb_to_lab, slic_segment
from .spectral import InstanceCountError
from .synth import PlacementError, synth_fixture, write_fixture
from .tensorio import (
    FormatError,
    image_to_tensor,
    labels_to_buffer,
    load_npy,
    load_pnm,
    save_npy,
    save_pnm,
    tensor_to_image,
    write_bytes_atomic,
)

log = logging.getLogger("salinst")

EXIT_OK = 0
EXIT_IO = 1
EXIT_INFEASIBLE = 2


def _setup_logging() -> None:
    level = {"debug": logging.DEBUG, "info": logging.INFO, "warn": logging.WARNING}.get(
        os.environ.get("SIS_LOG", "info").lower(), logging.INFO
    )
    logging.basicConfig(
        stream=sys.stderr, level=level, format="%(levelname)s %(name)s: %(message)s"
    )


def _load_image(path: str) -> np.ndarray:
    buf = load_pnm(path)
    t = image_to_tensor(buf)
    if t.shape[2] == 1:
        t = np.repeat(t, 3, axis=2)
    return t


def _load_saliency(path: str) -> np.ndarray:
    buf = load_pnm(path)
    if buf.channels != 1:
        raise FormatError("saliency map must be a single-channel PGM")
    return image_to_tensor(buf)[:, :, 0]


def _load_features(path: str) -> np.ndarray:
    arr = load_npy(path)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise FormatError(f"feature map must be (h, w) or (h, w, c), got shape {arr.shape}")
    return arr


def _resolve_k(args) -> int:
    if args.k is not None:
        return args.k
    if args.subitizing:
        with open(args.subitizing, "r", encoding="utf-8") as fh:
            data = json.load(fh)
        if "k" in data:
            return int(data["k"])
        if "subitizing" in data:
            # classifier buckets 1, 2, 3, 4+; the open bucket maps to 4
            value = str(data["subitizing"])
            return 4 if value.endswith("+") else int(value)
        raise ValueError("subitizing sidecar needs a 'k' or 'subitizing' entry")
    raise ValueError("instance count required: pass --k or --subitizing")


def _config_from_args(args) -> PipelineConfig:
    config = PipelineConfig.from_json_file(args.config) if args.config else PipelineConfig()
    overrides = {}
    for flag, field_name in (
        ("superpixels", "n_superpixels"),
        ("compactness", "compactness"),
        ("lam", "lam"),
        ("sigma2", "sigma2"),
        ("threshold", "saliency_threshold"),
        ("crf_iters", "iters"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[field_name] = value
    return config.override(**overrides)


def _cmd_segment(args) -> int:
    image = _load_image(args.image)
    saliency = _load_saliency(args.saliency)
    features = _load_features(args.features)
    k = _resolve_k(args)
    config = _config_from_args(args)
    if saliency.shape != image.shape[:2]:
        from .tensorio import resize_bilinear

        saliency = resize_bilinear(saliency, *image.shape[:2])

    start = time.perf_counter()
    result = run_pipeline(image, saliency, features, k, config, refine_crf=args.refine_crf)
    log.info("timing stage=total seconds=%.4f", time.perf_counter() - start)

    seg = result.segmentation
    save_pnm(args.out, labels_to_buffer(seg.labels))
    sidecar = os.path.splitext(args.out)[0] + ".confidences.json"
    payload = {"k": int(seg.confidences.size), "confidences": [round(float(c), 6) for c in seg.confidences]}
    write_bytes_atomic(sidecar, (json.dumps(payload, indent=2) + "\n").encode("utf-8"))
    if args.refined_saliency_out:
        save_pnm(args.refined_saliency_out, tensor_to_image(result.saliency, bits=8))
    log.info("wrote %s and %s", args.out, sidecar)
    return EXIT_OK


def _cmd_crf(args) -> int:
    image = _load_image(args.image)
    if args.unary:
        probs = load_npy(args.unary)
        field = UnaryField(probs)
    elif args.saliency:
        field = UnaryField.from_saliency(_load_saliency(args.saliency))
    else:
        raise ValueError("crf needs --saliency or --unary")
    params = PipelineConfig.from_json_file(args.config).crf if args.config else CrfParams()
    if args.iters is not None:
        params = dataclasses.replace(params, iters=args.iters)
    start = time.perf_counter()
    refined = mean_field_refine(field, image * 255.0, params, grid_limit=args.grid_limit)
    log.info("timing stage=crf seconds=%.4f", time.perf_counter() - start)
    save_pnm(args.out, tensor_to_image(refined.saliency, bits=8))
    if args.out_npy:
        save_npy(args.out_npy, refined.probs)
    if args.mask_out:
        save_pnm(args.mask_out, labels_to_buffer(binarize(refined, args.threshold or 0.5)))
    return EXIT_OK


def _cmd_slic(args) -> int:
    image = _load_image(args.image)
    if args.saliency:
        saliency = _load_saliency(args.saliency)
        if saliency.shape != image.shape[:2]:
            raise ValueError("saliency shape does not match the image")
        image = image.copy()
        image[saliency < (args.threshold or 0.5)] = 0.0
    start = time.perf_counter()
    part = slic_segment(
        rgb_to_lab(image), args.superpixels or 250, args.compactness or 10.0, args.iters
    )
    log.info("timing stage=slic seconds=%.4f", time.perf_counter() - start)
    save_pnm(args.out, labels_to_buffer(part.labels))
    log.info("wrote %s (%d superpixels)", args.out, part.n_superpixels)
    return EXIT_OK


def _parse_taus(spec: str) -> tuple[float, ...]:
    taus = tuple(float(tok) for tok in spec.split(",") if tok.strip())
    if not taus:
        raise ValueError("no IoU thresholds given")
    return taus


def _cmd_eval(args) -> int:
    with open(args.manifest, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    taus = _parse_taus(args.iou)
    rep = metrics.evaluate_manifest(manifest, base_dir=os.path.dirname(os.path.abspath(args.manifest)), taus=taus)
    write_bytes_atomic(args.out, rep.to_json().encode("utf-8"))
    log.info("wrote %s", args.out)
    if args.csv:
        report.write_csv(rep, args.csv)
        log.info("wrote %s", args.csv)
    if args.figures:
        for path in report.render_figures(rep, args.figures):
            log.info("wrote %s", path)
    for tau in sorted(rep.ap_r):
        print(f"ap_r@{tau:g} {rep.ap_r[tau]:.4f}")
    if rep.max_f is not None:
        print(f"max_f {rep.max_f:.4f}")
        print(f"mae {rep.mae:.4f}")
    return EXIT_OK


def _cmd_synth(args) -> int:
    try:
        h_str, w_str = args.size.lower().split("x")
        height, width = int(h_str), int(w_str)
    except ValueError:
        raise ValueError(f"bad --size {args.size!r}, expected HxW") from None
    fixture = synth_fixture(
        args.count, height, width, seed=args.seed, shapes=args.shapes, feature_scale=args.feature_scale
    )
    paths = write_fixture(fixture, args.out)
    log.info("wrote fixture with %d shapes under %s", fixture.k, args.out)
    print("\n".join(paths[key] for key in ("image", "saliency", "features", "instances", "k")))
    return EXIT_OK


def _cmd_netcheck(args) -> int:
    rng = np.random.default_rng(7)
    failures = 0

    def check(name: str, ok: bool, detail: str = "") -> None:
        nonlocal failures
        if ok:
            print(f"PASS {name}")
        else:
            failures += 1
            print(f"FAIL {name} {detail}".rstrip())

    # gate under zero weights is exactly one half
    c, r = 8, 4
    zero = netblocks.SeParams(
        w1=np.zeros((c // r, c)), b1=np.zeros(c // r), w2=np.zeros((c, c // r)), b2=np.zeros(c), r=r
    )
    x = rng.normal(size=(5, 4, c))
    check("se_zero_weights_halves_input", np.array_equal(netblocks.se_forward(x, zero), 0.5 * x))

    gates_ok = True
    for _ in range(args.trials):
        cc = int(rng.integers(1, 5)) * 4
        params = netblocks.SeParams(
            w1=rng.normal(size=(cc // 4, cc)),
            b1=rng.normal(size=cc // 4),
            w2=rng.normal(size=(cc, cc // 4)),
            b2=rng.normal(size=cc),
            r=4,
        )
        gate = netblocks.se_gate(rng.normal(size=(3, 3, cc)), params)
        if not (np.all(gate > 0.0) and np.all(gate < 1.0)):
            gates_ok = False
            break
    check("se_gate_strictly_inside_unit_interval", gates_ok)

    if args.se_manifest:
        params = netblocks.se_params_from_manifest(netblocks.load_param_manifest(args.se_manifest))
        gate = netblocks.se_gate(rng.normal(size=(4, 4, params.channels)), params)
        check("se_manifest_gate_in_range", bool(np.all(gate > 0) and np.all(gate < 1)))

    shapes_ok = True
    for _ in range(args.trials):
        c0 = int(rng.integers(1, 6))
        growth = int(rng.integers(1, 5))
        n_layers = int(rng.integers(0, 6))
        layers = []
        for layer_idx in range(n_layers):
            cin = c0 + layer_idx * growth
            layers.append(
                netblocks.DenseLayerParams(
                    bn_gamma=rng.normal(size=cin),
                    bn_beta=rng.normal(size=cin),
                    bn_mean=rng.normal(size=cin),
                    bn_var=rng.uniform(0.5, 2.0, size=cin),
                    conv_kernel=rng.normal(size=(3, 3, cin, growth)),
                )
            )
        out = netblocks.dense_block_forward(rng.normal(size=(4, 5, c0)), layers)
        if out.shape != (4, 5, c0 + n_layers * growth):
            shapes_ok = False
            break
    check("dense_block_channel_count", shapes_ok)

    if args.dense_manifest:
        layers = netblocks.dense_layers_from_manifest(
            netblocks.load_param_manifest(args.dense_manifest)
        )
        c0 = layers[0].in_channels if layers else 3
        out = netblocks.dense_block_forward(rng.normal(size=(4, 4, c0)), layers)
        expected = c0 + sum(l.growth for l in layers)
        check("dense_manifest_channel_count", out.shape[2] == expected)

    uniform = np.full((6, 2), 0.5)
    onehot = np.zeros((6, 2))
    onehot[:, 0] = 1.0
    loss = netblocks.weighted_cross_entropy(uniform, onehot).loss
    check("uniform_binary_loss_is_ln2", abs(loss - math.log(2.0)) <= 1e-12, f"loss={loss!r}")

    yhat = rng.dirichlet(np.ones(4), size=5)
    y = np.zeros_like(yhat)
    y[np.arange(5), rng.integers(0, 4, size=5)] = 1.0
    weights = rng.uniform(0.5, 2.0, size=4)
    err = netblocks.finite_diff_check(netblocks.loss_surface(y, weights), yhat, eps=1e-5)
    check("cross_entropy_gradient_matches_central_differences", err <= 1e-6, f"err={err:.3g}")

    quad = lambda z: (float((z**2).sum()), 2.0 * z)
    err = netblocks.finite_diff_check(quad, rng.normal(size=(3, 2)), eps=1e-5)
    check("quadratic_gradient_exact", err <= 1e-7, f"err={err:.3g}")

    return EXIT_OK if failures == 0 else EXIT_IO


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="salinst", description="Proposal-free salient instance segmentation toolkit"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    seg = sub.add_parser("segment", help="run the full pipeline on one image")
    seg.add_argument("--image", required=True)
    seg.add_argument("--saliency", required=True)
    seg.add_argument("--features", required=True)
    seg.add_argument("--k", type=int)
    seg.add_argument("--subitizing", help="JSON sidecar with {'k': N} or {'subitizing': '4+'}")
    seg.add_argument("--out", required=True, help="output 16-bit label PGM")
    seg.add_argument("--refined-saliency-out")
    seg.add_argument("--config")
    seg.add_argument("--refine-crf", action="store_true")
    seg.add_argument("--superpixels", type=int)
    seg.add_argument("--compactness", type=float)
    seg.add_argument("--lambda", dest="lam", type=float)
    seg.add_argument("--sigma2", type=float)
    seg.add_argument("--threshold", type=float)
    seg.add_argument("--crf-iters", dest="crf_iters", type=int)
    seg.set_defaults(func=_cmd_segment)

    crf = sub.add_parser("crf", help="refine a saliency map with the dense CRF")
    crf.add_argument("--image", required=True)
    crf.add_argument("--saliency")
    crf.add_argument("--unary", help="NPY (h, w, 2) unary field instead of a saliency PGM")
    crf.add_argument("--out", required=True, help="refined saliency PGM")
    crf.add_argument("--out-npy", help="also write the refined (h, w, 2) field as NPY")
    crf.add_argument("--mask-out", help="also write the thresholded binary mask PGM")
    crf.add_argument("--threshold", type=float)
    crf.add_argument("--iters", type=int)
    crf.add_argument("--grid-limit", type=int, default=128)
    crf.add_argument("--config")
    crf.set_defaults(func=_cmd_crf)

    slic_cmd = sub.add_parser("slic", help="superpixel segmentation only")
    slic_cmd.add_argument("--image", required=True)
    slic_cmd.add_argument("--saliency", help="optional mask applied before segmentation")
    slic_cmd.add_argument("--superpixels", type=int)
    slic_cmd.add_argument("--compactness", type=float)
    slic_cmd.add_argument("--iters", type=int, default=10)
    slic_cmd.add_argument("--threshold", type=float)
    slic_cmd.add_argument("--out", required=True, help="output 16-bit label PGM")
    slic_cmd.set_defaults(func=_cmd_slic)

    ev = sub.add_parser("eval", help="score predictions listed in a JSON manifest")
    ev.add_argument("--manifest", required=True)
    ev.add_argument("--out", required=True, help="output report JSON")
    ev.add_argument("--csv", help="also write a per-image CSV table")
    ev.add_argument("--figures", help="also render summary figures into this directory")
    ev.add_argument("--iou", default="0.5,0.6,0.7,0.8,0.9", help="comma-separated IoU thresholds")
    ev.set_defaults(func=_cmd_eval)

    sy = sub.add_parser("synth", help="generate a synthetic fixture")
    sy.add_argument("--count", type=int, required=True)
    sy.add_argument("--size", default="64x64", help="canvas as HxW")
    sy.add_argument("--seed", type=int, default=0)
    sy.add_argument("--shapes", choices=("disk", "rect", "mix"), default="disk")
    sy.add_argument("--feature-scale", type=float, default=255.0)
    sy.add_argument("--out", required=True, help="output directory")
    sy.set_defaults(func=_cmd_synth)

    nc = sub.add_parser("netcheck", help="verify the network kernels numerically")
    nc.add_argument("--trials", type=int, default=50)
    nc.add_argument("--se-manifest", help="JSON parameter manifest for the SE gate")
    nc.add_argument("--dense-manifest", help="JSON parameter manifest for dense layers")
    nc.set_defaults(func=_cmd_netcheck)
    return parser


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InstanceCountError as exc:
        log.error("%s", exc)
        print(f"infeasible instance count: maximum feasible k is {exc.feasible}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (OSError, FormatError, PlacementError, ValueError, json.JSONDecodeError) as exc:
        log.error("%s", exc)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
