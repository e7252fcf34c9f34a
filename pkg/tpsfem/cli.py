"""Command line front end: ``tpsfem fit``, ``tpsfem compare`` and ``tpsfem gen-peaks``."""
import argparse
import logging
import math
import os
import sys
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

from .assembly import assemble_system
from .data import PEAKS_DOMAIN, NoiseSpec, ScatteredData, gen_peaks, load_xyz, locate
from .domain import BoundaryCondition, BoundaryKind, DomainShape, DomainSpec
from .driver import AdaptiveDriver, RefineConfig, RefineMode, RunResult
from .export import dump_blocks, save_mesh_json, save_smoother_json, write_comparison_csv, write_indicator_csv, \
    write_json, write_metrics_csv, write_outside_csv, write_surface_csv, write_xyz
from .gcv import GcvConfig
from .indicators import IndicatorKind, compute_field
from .rbf_baselines import compare_kernels, tpsfem_rows
from .tps_errors import EXIT_OK, ConfigurationError, RunAbortedError, TpsfemError, exit_status
from .version import __version__

logger = logging.getLogger(__name__)

# Loaded data is scaled into this box inside the unit square
DATA_TARGET = (0.2, 0.8, 0.2, 0.8)
UNIT_BOX = (0.0, 1.0, 0.0, 1.0)

MESH_FILE = 'mesh.json'
SMOOTHER_FILE = 'smoother.json'
METRICS_FILE = 'metrics.csv'
SURFACE_FILE = 'surface.csv'
INDICATOR_FILE = 'indicators.csv'
OUTSIDE_FILE = 'outside.csv'
COMPARISON_FILE = 'comparison.csv'
RUN_FILE = 'run.json'


@dataclass
class RunConfig:
    """Validated options of one command."""
    command: str
    data: Optional[str] = None
    gen_peaks: Optional[int] = None
    sigma: float = 0.0
    domain: DomainShape = DomainShape.SQUARE
    bc: BoundaryKind = BoundaryKind.DIRICHLET
    bc_s: float = 0.0
    bc_u1: float = 0.0
    bc_u2: float = 0.0
    refine: RefineMode = RefineMode.UNIFORM
    indicator: Optional[IndicatorKind] = None
    tol: float = 0.0
    max_iters: Optional[int] = None
    gamma: float = 0.75
    seed: int = 0
    out: str = 'out'
    spacings: List[float] = field(default_factory=lambda: [1.0 / 16, 1.0 / 32])
    targets: List[int] = field(default_factory=lambda: [100, 200])
    sweeps: List[int] = field(default_factory=lambda: [3, 4])
    dump_blocks: Optional[str] = None
    verbose: bool = False


    @classmethod
    def from_args(cls, args: argparse.Namespace) -> 'RunConfig':
        return cls(
            command=args.command,
            data=getattr(args, 'data', None),
            gen_peaks=getattr(args, 'gen_peaks', None),
            sigma=args.sigma,
            domain=DomainShape(getattr(args, 'domain', 'square')),
            bc=BoundaryKind(getattr(args, 'bc', 'dirichlet')),
            bc_s=getattr(args, 'bc_s', 0.0),
            bc_u1=getattr(args, 'bc_u1', 0.0),
            bc_u2=getattr(args, 'bc_u2', 0.0),
            refine=RefineMode(getattr(args, 'refine', 'uniform')),
            indicator=IndicatorKind(args.indicator) if getattr(args, 'indicator', None) else None,
            tol=getattr(args, 'tol', 0.0),
            max_iters=getattr(args, 'max_iters', None),
            gamma=getattr(args, 'gamma', 0.75),
            seed=args.seed,
            out=args.out,
            spacings=getattr(args, 'spacings', None) or [1.0 / 16, 1.0 / 32],
            targets=getattr(args, 'targets', None) or [100, 200],
            sweeps=getattr(args, 'sweeps', None) or [3, 4],
            dump_blocks=getattr(args, 'dump_blocks', None),
            verbose=args.verbose,
        )


    def validate(self) -> 'RunConfig':
        if self.command in ('fit', 'compare'):
            if (self.data is None) == (self.gen_peaks is None):
                raise ConfigurationError('give exactly one of --data and --gen-peaks')
        if self.command == 'gen-peaks' and self.gen_peaks is None:
            raise ConfigurationError('gen-peaks needs a sample count')
        if self.gen_peaks is not None and self.gen_peaks < 1:
            raise ConfigurationError('--gen-peaks needs a positive count, got {}'.format(self.gen_peaks))
        if not (self.sigma >= 0 and math.isfinite(self.sigma)):
            raise ConfigurationError('--sigma must be finite and >= 0, got {}'.format(self.sigma))
        if self.indicator is not None and self.refine is not RefineMode.ADAPTIVE:
            raise ConfigurationError('--indicator requires --refine adaptive')
        if self.max_iters is not None and self.max_iters < 0:
            raise ConfigurationError('--max-iters must be >= 0, got {}'.format(self.max_iters))
        if any(not s > 0 for s in self.spacings) or any(t < 1 for t in self.targets):
            raise ConfigurationError('spacings must be positive and targets at least 1')
        if self.command == 'fit':
            self.refine_config().validate()
        return self


    def domain_spec(self) -> DomainSpec:
        box = PEAKS_DOMAIN if self.gen_peaks is not None else UNIT_BOX
        if self.domain is DomainShape.LSHAPE:
            return DomainSpec.lshape(*box)
        return DomainSpec.square(*box)


    def boundary(self) -> BoundaryCondition:
        if self.bc is BoundaryKind.NEUMANN:
            return BoundaryCondition.neumann()
        return BoundaryCondition.dirichlet(self.bc_s, self.bc_u1, self.bc_u2)


    def refine_config(self) -> RefineConfig:
        return RefineConfig(mode=self.refine, indicator=self.indicator or IndicatorKind.NORM, rmse_tol=self.tol,
                            max_outer_iters=self.max_iters, mark_fraction=self.gamma,
                            gcv=GcvConfig(seed=self.seed))


    def noise(self) -> NoiseSpec:
        return NoiseSpec(self.sigma, self.seed)


    def load_data(self) -> ScatteredData:
        if self.gen_peaks is not None:
            domain = self.domain_spec()
            return gen_peaks(self.gen_peaks, noise=self.noise(),
                             domain=domain if domain.shape is DomainShape.LSHAPE else None)
        return load_xyz(self.data, target=DATA_TARGET)


    def to_dict(self) -> dict:
        out = dict(self.__dict__)
        for key in ('domain', 'bc', 'refine', 'indicator'):
            out[key] = out[key].value if out[key] is not None else None
        out['tol'] = self.tol if math.isfinite(self.tol) else 'inf'
        return out


class ArgumentParser(argparse.ArgumentParser):
    """Reports usage errors as ConfigurationError instead of exiting."""
    def error(self, message):
        raise ConfigurationError(message)


def _common(parser: argparse.ArgumentParser) -> None:
    source = parser.add_argument_group('data')
    source.add_argument('--data', help='whitespace separated x y z file')
    source.add_argument('--gen-peaks', type=int, metavar='N', help='generate N noisy peaks samples instead')
    source.add_argument('--sigma', type=float, default=0.0, help='noise standard deviation for --gen-peaks')
    source.add_argument('--seed', type=int, default=0, help='seed for sampling, noise and GCV probes')
    parser.add_argument('--domain', choices=[s.value for s in DomainShape], default='square')
    parser.add_argument('--out', default='out', help='output directory')
    parser.add_argument('--verbose', action='store_true', help='debug logging')


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(prog='tpsfem', description='Finite element thin plate spline smoothing')
    parser.add_argument('--version', action='version', version='%(prog)s ' + __version__)
    sub = parser.add_subparsers(dest='command', parser_class=ArgumentParser)
    sub.required = True

    fit = sub.add_parser('fit', help='fit a surface with uniform or adaptive refinement')
    _common(fit)
    fit.add_argument('--bc', choices=[k.value for k in BoundaryKind], default='dirichlet')
    fit.add_argument('--bc-s', type=float, default=0.0)
    fit.add_argument('--bc-u1', type=float, default=0.0)
    fit.add_argument('--bc-u2', type=float, default=0.0)
    fit.add_argument('--refine', choices=[m.value for m in RefineMode], default='uniform')
    fit.add_argument('--indicator', choices=[k.value for k in IndicatorKind])
    fit.add_argument('--tol', type=float, default=0.0, help='stop once the RMSE is at or below this')
    fit.add_argument('--max-iters', type=int, help='outer iterations, 10 uniform and 8 adaptive by default')
    fit.add_argument('--gamma', type=float, default=0.75, help='marking fraction of the largest indicator')
    fit.add_argument('--dump-blocks', metavar='PATH', help='write the final system blocks as "block row col value" lines')

    compare = sub.add_parser('compare', help='compare against radial basis function smoothers')
    _common(compare)
    compare.add_argument('--bc', choices=[k.value for k in BoundaryKind], default='dirichlet')
    compare.add_argument('--spacings', type=float, nargs='+', help='control grid spacings relative to the domain')
    compare.add_argument('--targets', type=int, nargs='+', help='data points per kernel support')
    compare.add_argument('--sweeps', type=int, nargs='+', help='uniform refinements of the finite element rows')

    gen = sub.add_parser('gen-peaks', help='write noisy peaks samples as x y z')
    gen.add_argument('gen_peaks', type=int, metavar='N')
    gen.add_argument('--sigma', type=float, default=0.02)
    gen.add_argument('--seed', type=int, default=0)
    gen.add_argument('--domain', choices=[s.value for s in DomainShape], default='square')
    gen.add_argument('--out', default='peaks.xyz', help='output file')
    gen.add_argument('--verbose', action='store_true')
    return parser


def _write_fit_outputs(config: RunConfig, result: RunResult, data: ScatteredData, domain: DomainSpec,
                       boundary: BoundaryCondition) -> List[str]:
    out = config.out
    written = []

    def path(name):
        written.append(name)
        return os.path.join(out, name)

    write_metrics_csv(path(METRICS_FILE), result.records)
    save_mesh_json(path(MESH_FILE), result.mesh)
    buckets = result.buckets if result.buckets is not None else locate(result.mesh, data)
    write_outside_csv(path(OUTSIDE_FILE), data, buckets)
    if result.smoother is not None and result.smoother.mesh_version == result.mesh.version:
        save_smoother_json(path(SMOOTHER_FILE), result.smoother)
        write_surface_csv(path(SURFACE_FILE), result.smoother)
        if config.refine is RefineMode.ADAPTIVE:
            kind = config.indicator or IndicatorKind.NORM
            etas = compute_field(kind, result.smoother, data, buckets)
            write_indicator_csv(path(INDICATOR_FILE), etas, result.mesh)
        if config.dump_blocks:
            dump_blocks(config.dump_blocks, assemble_system(result.mesh, data, buckets, boundary))
    written.append(RUN_FILE)
    write_json(os.path.join(out, RUN_FILE), {
        'version': __version__,
        'command': config.command,
        'config': config.to_dict(),
        'refine': config.refine_config().to_dict(),
        'seeds': {'data': config.seed, 'gcv': config.seed},
        'source': data.source,
        'transform': data.transform.to_dict(),
        'domain': domain.to_dict(),
        'boundary': boundary.to_dict(),
        'stop_reason': result.stop_reason,
        'iterations': len(result.records),
        'diagnostics': result.diagnostics,
        'outputs': written,
        'blocks': config.dump_blocks,
    })
    return written


def cmd_fit(config: RunConfig) -> int:
    os.makedirs(config.out, exist_ok=True)
    data = config.load_data()
    domain = config.domain_spec()
    boundary = config.boundary()
    driver = AdaptiveDriver(data, domain, boundary, config.refine_config())
    driver.register('iteration', lambda r: logger.info('iter {} nodes {} rmse {:.5g}'.format(r.iter, r.nodes, r.rmse)))
    try:
        result = driver.run()
    except RunAbortedError as e:
        if e.result is not None and e.result.records:
            _write_fit_outputs(config, e.result, data, domain, boundary)
        raise
    _write_fit_outputs(config, result, data, domain, boundary)
    return EXIT_OK


def cmd_compare(config: RunConfig) -> int:
    os.makedirs(config.out, exist_ok=True)
    data = config.load_data()
    domain = config.domain_spec()
    spacings = [s * domain.scale for s in config.spacings]
    rows = compare_kernels(data, domain, spacings, config.targets)
    rows.extend(tpsfem_rows(data, domain, config.boundary(), config.sweeps, GcvConfig(seed=config.seed)))
    write_comparison_csv(os.path.join(config.out, COMPARISON_FILE), rows)
    write_json(os.path.join(config.out, RUN_FILE), {
        'version': __version__,
        'command': config.command,
        'config': config.to_dict(),
        'domain': domain.to_dict(),
        'outputs': [COMPARISON_FILE, RUN_FILE],
    })
    return EXIT_OK


def cmd_gen_peaks(config: RunConfig) -> int:
    data = config.load_data()
    parent = os.path.dirname(config.out)
    if parent:
        os.makedirs(parent, exist_ok=True)
    write_xyz(config.out, data)
    logger.info('wrote {} samples to {}'.format(data.n, config.out))
    return EXIT_OK


COMMANDS = {'fit': cmd_fit, 'compare': cmd_compare, 'gen-peaks': cmd_gen_peaks}


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Runs one command and returns its exit status: 0 success, 1 bad input, 2 runtime failure."""
    try:
        args = build_parser().parse_args(argv)
        config = RunConfig.from_args(args).validate()
        logging.basicConfig(level=logging.DEBUG if config.verbose else logging.INFO, stream=sys.stderr,
                            format='%(asctime)s %(name)s %(levelname)s: %(message)s')
        return COMMANDS[config.command](config)
    except (TpsfemError, OSError) as e:
        print('tpsfem: error: {}'.format(e), file=sys.stderr)
        return exit_status(e)


if __name__ == '__main__':
    sys.exit(main())
