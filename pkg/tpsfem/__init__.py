"""tpsfem

Finite element thin plate spline smoothing of scattered (x, y, z) data on triangular grids
refined by newest-node bisection, with smoothing parameter selection by generalised cross
validation and per-edge error indicators that steer the refinement.

## Examples

### Fitting

**Uniform refinement of generated peaks data**

```python
data = gen_peaks(62500, noise=NoiseSpec(sigma=0.02, seed=1))
domain = DomainSpec.square(-3.0, 3.0)
config = RefineConfig(mode=RefineMode.UNIFORM, max_outer_iters=10, stall_count=0)

smoother, records = run(data, domain, BoundaryCondition.dirichlet(), config)
print(records[-1].nodes, records[-1].rmse)
```

**Adaptive refinement steered by an indicator**

```python
config = RefineConfig(mode=RefineMode.ADAPTIVE, indicator=IndicatorKind.RECOVERY)
driver = AdaptiveDriver(data, domain, BoundaryCondition.dirichlet(), config)
driver.register('iteration', lambda record: print(record.iter, record.nodes, record.rmse))
result = driver.run()
```

**Evaluating the surface**

```python
smoother.evaluate((0.5, -1.0))
smoother.evaluate_grad((0.5, -1.0))
```

### Lower level pieces

`build_initial_grid`, `locate`, `assemble_system`, `alpha_initial` and `solve` compose into a
single fit on a fixed grid; `compute_field` evaluates any indicator on a fitted surface.

### Baselines

`compare_kernels` fits thin plate spline and compactly supported RBF smoothers at control points
selected from the data and reports their sparsity, time and RMSE.
"""

from .domain import BoundaryCondition, BoundaryKind, DirichletValues, DomainShape, DomainSpec, Quadrant
from .mesh import BisectionResult, EdgeKind, TriMesh, bisect_edge, build_initial_grid, mesh_size, uniform_refine
from .data import (
    AffineTransform, DataBuckets, NoiseSpec, ScatteredData,
    gen_bump, gen_peaks, load_xyz, locate, max_data_gap, peaks, rebucket,
)
from .assembly import SystemAssembler, TpsfemSystem, apply_dirichlet, assemble_data, assemble_fem, assemble_system
from .solver import FitMetrics, SaddleFactorization, Smoother, factorize, fit_metrics, max_err, rmse, rmspe, solve
from .gcv import AlphaSearch, GcvConfig, alpha_initial, alpha_update, gcv_score, hutchinson_trace
from .indicators import (
    IndicatorConfig, IndicatorField, IndicatorKind, LocalProblem,
    compute_field, edge_jump, eta_auxiliary, eta_norm, eta_recovery, eta_regression, eta_residual,
)
from .driver import AdaptiveDriver, IterationRecord, RefineConfig, RefineMode, RunResult, mark, run
from .rbf_baselines import (
    ComparisonRow, ControlPointSet, Kernel, KernelKind, RbfFit,
    compare_kernels, fit_rbf, kernel_matrix, radius_for_coverage, select_control_points,
)
from .tps_errors import (
    TpsfemError,
    ConfigurationError, ContractViolationError, MeshError, DataParseError, EmptyDataError, DomainError,
    AssemblyError, SolverError, MetricError, GcvScoreError, IndicatorError, SelectionError, FormatError,
    RunAbortedError,
)
from .version import __version__
