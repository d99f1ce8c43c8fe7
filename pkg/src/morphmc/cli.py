"""Command-line front end.

``morphmc sample run.yaml`` runs the configured chain and writes draws plus a
report; ``morphmc probe run.yaml`` prints tail probes of the target and, when
a morph is configured, of the transformed target.

Exit codes: 0 on success, 2 for configuration errors, 3 for failures while
sampling, probing or writing output.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Annotated, Literal, Union

import numpy as np
import yaml
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    NonNegativeInt,
    PositiveFloat,
    PositiveInt,
    ValidationError,
)

from morphmc.density import (
    CauchyLocationPosterior,
    Gaussian,
    LogitObservation,
    MultinomialLogitPosterior,
    MultivariateT,
    TargetDensity,
    TransformedDensity,
)
from morphmc.diagnostics import (
    ProbeError,
    autocorrelation,
    batch_means_mcse,
    format_value,
    ray_tail_probe,
)
from morphmc.morph import MorphSpec
from morphmc.sampler import (
    ChainConfig,
    ChainOutput,
    ConfigurationError,
    ProposalSpec,
    SamplingError,
    run_chain,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

FORMAT_VERSION = 1
N_BATCHES = 20
MAX_LAG = 50


class ConfigError(ValueError):
    """The run configuration cannot be read, parsed or assembled."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class GaussianTarget(_Strict):
    family: Literal["gaussian"]
    mean: list[float] = Field(min_length=1)
    cov: list[list[float]] | None = None

    def build(self) -> TargetDensity:
        return Gaussian(self.mean, self.cov)


class MvtTarget(_Strict):
    family: Literal["mvt"]
    df: PositiveFloat
    loc: list[float] = Field(min_length=1)
    scale: list[list[float]] | None = None

    def build(self) -> TargetDensity:
        return MultivariateT(self.df, self.loc, self.scale)


class CauchyLocationTarget(_Strict):
    family: Literal["cauchy_location"]
    data: list[float] = Field(min_length=1)

    def build(self) -> TargetDensity:
        return CauchyLocationPosterior(self.data)


class LogitObservationConfig(_Strict):
    counts: list[float]
    prior_prob: list[float]
    prior_size: float
    model_matrix: list[list[float]]


class MlogitTarget(_Strict):
    family: Literal["mlogit"]
    observations: list[LogitObservationConfig] = Field(min_length=1)

    def build(self) -> TargetDensity:
        return MultinomialLogitPosterior(
            [LogitObservation(**obs.model_dump()) for obs in self.observations]
        )


TargetConfig = Annotated[
    Union[GaussianTarget, MvtTarget, CauchyLocationTarget, MlogitTarget],
    Field(discriminator="family"),
]


class PolynomialConfig(_Strict):
    R: PositiveFloat
    p: float = Field(3.0, gt=2.0)


class ExponentialConfig(_Strict):
    b: PositiveFloat = 0.1


class MorphConfig(_Strict):
    model_config = ConfigDict(extra="forbid", frozen=True, populate_by_name=True)

    lambda_: list[float] = Field(alias="lambda", min_length=1)
    polynomial: PolynomialConfig | None = None
    exponential: ExponentialConfig | None = None

    def build(self) -> MorphSpec:
        poly, expo = self.polynomial, self.exponential
        return MorphSpec.from_constants(
            self.lambda_,
            R=None if poly is None else poly.R,
            p=3.0 if poly is None else poly.p,
            b=None if expo is None else expo.b,
        )


class SamplerConfig(_Strict):
    sigma: PositiveFloat
    n_iterations: PositiveInt
    burn_in: NonNegativeInt = 0
    thin: PositiveInt = 1
    seed: int = Field(ge=0, lt=2**64)
    initial_beta: list[float] = Field(min_length=1)


class OutputConfig(_Strict):
    samples_path: str | None = None
    report_path: str | None = None
    format: Literal["csv", "jsonl"] = "csv"


class RunConfig(_Strict):
    format_version: Literal[1] = FORMAT_VERSION
    target: TargetConfig
    morph: MorphConfig | None = None
    sampler: SamplerConfig | None = None
    output: OutputConfig | None = None

    def to_json(self) -> str:
        return self.model_dump_json(by_alias=True)


def _line_of(root, loc) -> int | None:
    """1-based line of the deepest YAML node along a validation path."""
    node, line = root, None if root is None else root.start_mark.line + 1
    for part in loc:
        if isinstance(node, yaml.MappingNode):
            hit = next(((k, v) for k, v in node.value if k.value == str(part)), None)
            if hit is None:
                # discriminator tags appear in the path but not in the file
                continue
            line = hit[0].start_mark.line + 1
            node = hit[1]
        elif isinstance(node, yaml.SequenceNode) and isinstance(part, int) and part < len(node.value):
            node = node.value[part]
            line = node.start_mark.line + 1
    return line


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{source}:{mark.line + 1}" if mark is not None else source
        raise ConfigError(f"{where}: {getattr(exc, 'problem', None) or exc}") from exc
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        root = yaml.compose(text)
        lines = []
        for err in exc.errors():
            key = ".".join(str(p) for p in err["loc"]) or "<root>"
            line = _line_of(root, err["loc"])
            where = source if line is None else f"{source}:{line}"
            lines.append(f"{where}: {key}: {err['msg']}")
        raise ConfigError("\n".join(lines)) from exc


def load_config(path: str | os.PathLike) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror or exc}") from exc
    return parse_config(text, str(path))


def build_target(config: RunConfig) -> TargetDensity:
    try:
        return config.target.build()
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise ConfigError(f"target: {exc}") from exc


def build_morph(config: RunConfig, dim: int) -> MorphSpec:
    if config.morph is None:
        return MorphSpec.identity(dim)
    try:
        morph = config.morph.build()
    except ValueError as exc:
        raise ConfigError(f"morph: {exc}") from exc
    if morph.dimension != dim:
        raise ConfigError(f"morph.lambda: length {morph.dimension} but the target has dimension {dim}")
    return morph


def build_chain(config: RunConfig, stream: int | None = None) -> ChainConfig:
    if config.sampler is None:
        raise ConfigError("sampler: section is required for sampling")
    target = build_target(config)
    morph = build_morph(config, target.dim)
    s = config.sampler
    try:
        return ChainConfig(
            target=target,
            morph=morph,
            proposal=ProposalSpec(s.sigma),
            initial_beta=s.initial_beta,
            n_iterations=s.n_iterations,
            burn_in=s.burn_in,
            thin=s.thin,
            seed=s.seed,
            stream=stream,
        )
    except ConfigurationError as exc:
        raise ConfigError(f"sampler: {exc}") from exc


def suffixed(path: str, stream: int | None) -> str:
    if stream is None:
        return path
    p = Path(path)
    return str(p.with_name(f"{p.stem}.chain{stream}{p.suffix}"))


def write_samples(output: ChainOutput, path: str, fmt: str, emit_gamma: bool) -> None:
    k = output.beta_draws.shape[1]
    columns = ["iter"] + [f"beta_{j + 1}" for j in range(k)]
    if emit_gamma:
        columns += [f"gamma_{j + 1}" for j in range(k)]
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        if fmt == "csv":
            fh.write(f"# format_version={FORMAT_VERSION}\n")
            fh.write(",".join(columns) + "\n")
            for i, it in enumerate(output.iterations):
                values = output.beta_draws[i].tolist()
                if emit_gamma:
                    values += output.gamma_draws[i].tolist()
                fh.write(f"{it}," + ",".join("%.17g" % v for v in values) + "\n")
        else:
            fh.write(json.dumps({"format_version": FORMAT_VERSION, "columns": columns}) + "\n")
            for i, it in enumerate(output.iterations):
                row = {"iter": int(it), "beta": output.beta_draws[i].tolist()}
                if emit_gamma:
                    row["gamma"] = output.gamma_draws[i].tolist()
                fh.write(json.dumps(row) + "\n")


def summary_fields(output: ChainOutput) -> list[tuple[str, object]]:
    """Per-coordinate mean, batch-means MCSE, quartiles and autocorrelations."""
    n = output.beta_draws.shape[0]
    n_batches = min(N_BATCHES, n // 2)
    max_lag = min(MAX_LAG, (n - 1) // 2)
    fields: list[tuple[str, object]] = [
        ("acceptance_rate", output.acceptance_rate),
        ("n_kept", n),
        ("n_batches", n_batches if n_batches >= 2 else None),
    ]
    for j in range(output.beta_draws.shape[1]):
        x = output.beta_draws[:, j]
        if n_batches >= 2:
            mean, mcse = batch_means_mcse(x, n_batches)
        else:
            mean, mcse = float(x.mean()), None
        q25, median, q75 = np.quantile(x, [0.25, 0.5, 0.75])
        name = f"beta_{j + 1}"
        fields += [
            (f"{name}.mean", mean),
            (f"{name}.mcse", mcse),
            (f"{name}.q25", float(q25)),
            (f"{name}.median", float(median)),
            (f"{name}.q75", float(q75)),
            (f"{name}.acf", autocorrelation(x, max_lag).tolist() if max_lag >= 1 else None),
        ]
    return fields


def report_text(config: RunConfig, output: ChainOutput, samples_path: str) -> str:
    s = config.sampler
    fields = [
        ("format_version", FORMAT_VERSION),
        ("command", "sample"),
        ("seed", output.seed),
        ("stream", output.stream),
        ("n_iterations", s.n_iterations),
        ("burn_in", s.burn_in),
        ("thin", s.thin),
        ("samples_path", samples_path),
        *summary_fields(output),
        ("config", config.to_json()),
    ]
    return "".join(f"{key} = {format_value(value)}\n" for key, value in fields)


def _sample_one(config: RunConfig, stream: int | None):
    """Run one chain; failures come back as text so they cross process boundaries."""
    try:
        return run_chain(build_chain(config, stream)), None
    except SamplingError as exc:
        return None, f"sampling failed at iteration {exc.iteration}: {exc}"


def cmd_sample(
    path: str, chains: int | None = None, emit_gamma: bool = False, quiet: bool = False
) -> int:
    try:
        config = load_config(path)
        streams = [None] if chains is None else list(range(chains))
        # fail fast on configuration problems before starting any chain
        build_chain(config, streams[0])
        if config.output is None or config.output.samples_path is None or config.output.report_path is None:
            raise ConfigError("output: samples_path and report_path are required for sampling")
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    if len(streams) > 1:
        workers = min(len(streams), os.cpu_count() or 1)
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_sample_one, [config] * len(streams), streams))
    else:
        results = [_sample_one(config, streams[0])]

    status = EXIT_OK
    out = config.output
    for stream, (output, failure) in zip(streams, results):
        label = "chain" if stream is None else f"chain {stream}"
        if failure is not None:
            print(f"{label}: {failure}", file=sys.stderr)
            print(f"{label}: seed = {config.sampler.seed}, stream = {format_value(stream)}", file=sys.stderr)
            status = EXIT_RUNTIME
            continue
        samples_path = suffixed(out.samples_path, stream)
        report_path = suffixed(out.report_path, stream)
        try:
            write_samples(output, samples_path, out.format, emit_gamma)
            Path(report_path).parent.mkdir(parents=True, exist_ok=True)
            Path(report_path).write_text(report_text(config, output, samples_path), encoding="utf-8")
        except OSError as exc:
            print(f"{label}: cannot write output: {exc}", file=sys.stderr)
            status = EXIT_RUNTIME
            continue
        if not quiet:
            print(
                f"{label}: {output.beta_draws.shape[0]} draws -> {samples_path}; "
                f"report -> {report_path}; acceptance rate {output.acceptance_rate:.4f}"
            )
    return status


def _natural_center(target: TargetDensity) -> np.ndarray:
    if isinstance(target, Gaussian):
        return target.mean
    if isinstance(target, MultivariateT):
        return target.loc
    if isinstance(target, CauchyLocationPosterior):
        return np.array([np.median(target.data)])
    return np.zeros(target.dim)


def probe_text(config: RunConfig) -> str:
    """Tail reports for the target and, with a morph, the transformed target."""
    target = build_target(config)
    text = f"format_version = {FORMAT_VERSION}\ncommand = probe\n"
    if config.morph is None:
        return text + ray_tail_probe(target, center=_natural_center(target)).to_text("beta.")
    morph = build_morph(config, target.dim)
    text += ray_tail_probe(target, center=morph.center).to_text("beta.")
    return text + ray_tail_probe(TransformedDensity(target, morph)).to_text("gamma.")


def cmd_probe(path: str, quiet: bool = False) -> int:
    try:
        config = load_config(path)
        text = probe_text(config)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ProbeError as exc:
        print(f"probe failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    if config.output is not None and config.output.report_path is not None:
        try:
            Path(config.output.report_path).parent.mkdir(parents=True, exist_ok=True)
            Path(config.output.report_path).write_text(text, encoding="utf-8")
        except OSError as exc:
            print(f"cannot write report: {exc}", file=sys.stderr)
            return EXIT_RUNTIME
    if not quiet:
        sys.stdout.write(text)
    return EXIT_OK


def _positive_int(value: str) -> int:
    n = int(value)
    if n < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return n


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("config", help="YAML run configuration")
    common.add_argument("--quiet", action="store_true", help="print nothing on success")

    parser = argparse.ArgumentParser(
        prog="morphmc", description="Random-walk Metropolis on isotropically transformed targets."
    )
    sub = parser.add_subparsers(dest="command", required=True)
    sample = sub.add_parser("sample", parents=[common], help="run the configured chain")
    sample.add_argument(
        "--chains", type=_positive_int, default=None,
        help="run N chains on independent streams 0..N-1, writing .chainI suffixed files",
    )
    sample.add_argument("--emit-gamma", action="store_true", help="also write transformed-space draws")
    sub.add_parser("probe", parents=[common], help="probe tail behaviour of the target")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "sample":
        return cmd_sample(args.config, args.chains, args.emit_gamma, args.quiet)
    return cmd_probe(args.config, args.quiet)


if __name__ == "__main__":
    sys.exit(main())
