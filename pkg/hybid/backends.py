"""MILP backends behind a common interface.

`HighsBackend` solves in memory through `scipy.optimize.milp`; `CbcBackend`
writes an LP file and runs the `cbc` executable.
"""

import logging
import shutil
import subprocess
import tempfile
import time
from abc import ABC, abstractmethod
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
from scipy import sparse
from scipy.optimize import Bounds, LinearConstraint, milp

from hybid.errors import BackendUnavailable, NumericFailure
from hybid.model_ir import (
    ModelIR,
    Sense,
    SolveResult,
    SolveStatus,
    column_index,
    write_lp,
)
from hybid.schemas import SolveOptions

logger = logging.getLogger(__name__)


class Backend(ABC):
    name: str = "abstract"

    @abstractmethod
    def solve(self, model: ModelIR, options: SolveOptions) -> SolveResult:
        """Maximize `model`."""

    def _finish(
        self,
        model: ModelIR,
        status: SolveStatus,
        x: Optional[np.ndarray],
        mip_gap: float,
        started: float,
        message: str = "",
    ) -> SolveResult:
        wall_time = time.perf_counter() - started
        objective = None if x is None else model.evaluate_objective(x)
        logger.info(
            f"{self.name}: {model.summary()} -> {status.value}"
            f" objective={objective} in {wall_time:.2f}s"
        )
        return SolveResult(
            status=status,
            objective_value=objective,
            primal=None if x is None else [float(v) for v in x],
            var_names=[v.name for v in model.variables],
            mip_gap=mip_gap,
            wall_time=wall_time,
            message=message,
        )


def _matrix(model: ModelIR) -> Tuple[sparse.csr_matrix, np.ndarray, np.ndarray]:
    rows, cols, vals = [], [], []
    lower = np.empty(model.n_constraints)
    upper = np.empty(model.n_constraints)
    for k, row in enumerate(model.constraints):
        for i, coef in row.terms.items():
            rows.append(k)
            cols.append(i)
            vals.append(coef)
        lower[k] = -np.inf if row.sense is Sense.LE else row.rhs
        upper[k] = np.inf if row.sense is Sense.GE else row.rhs
    A = sparse.csr_matrix(
        (vals, (rows, cols)), shape=(model.n_constraints, model.n_vars)
    )
    return A, lower, upper


_HIGHS_STATUS = {
    0: SolveStatus.OPTIMAL,
    1: SolveStatus.TIME_LIMIT,
    2: SolveStatus.INFEASIBLE,
    3: SolveStatus.UNBOUNDED,
    4: SolveStatus.NUMERIC_FAILURE,
}


class HighsBackend(Backend):
    """HiGHS through scipy.

    After a MILP that returned an incumbent (optimal or stopped at the time
    limit) the binaries are fixed to their rounded values and the remaining LP
    is re-solved, which removes integrality slack from the primal values.
    `threads` cannot be set through scipy and is only recorded.
    """

    name = "highs"

    def solve(self, model: ModelIR, options: SolveOptions) -> SolveResult:
        started = time.perf_counter()
        c = np.zeros(model.n_vars)
        for i, coef in model.objective.terms.items():
            c[i] = -coef
        lb = np.array([v.lower for v in model.variables])
        ub = np.array([v.upper for v in model.variables])
        integrality = np.array([1 if v.is_binary else 0 for v in model.variables])
        constraints = []
        if model.n_constraints:
            A, row_lb, row_ub = _matrix(model)
            constraints.append(LinearConstraint(A, row_lb, row_ub))
        milp_options = {
            "disp": False,
            "time_limit": options.time_limit,
            "mip_rel_gap": options.mip_gap_tol,
        }
        res = milp(
            c,
            constraints=constraints or None,
            integrality=integrality,
            bounds=Bounds(lb, ub),
            options=milp_options,
        )
        status = _HIGHS_STATUS.get(res.status, SolveStatus.NUMERIC_FAILURE)
        if status is SolveStatus.NUMERIC_FAILURE:
            raise NumericFailure(f"HiGHS failed: {res.message}", log_excerpt=str(res.message))
        x = res.x if status in (SolveStatus.OPTIMAL, SolveStatus.TIME_LIMIT) else None
        mip_gap = float(res.get("mip_gap", 0.0) or 0.0)
        if x is not None and integrality.any():
            binaries = integrality.astype(bool)
            fixed = np.round(x[binaries])
            lb_fixed, ub_fixed = lb.copy(), ub.copy()
            lb_fixed[binaries] = fixed
            ub_fixed[binaries] = fixed
            remaining = max(options.time_limit - (time.perf_counter() - started), 1.0)
            polished = milp(
                c,
                constraints=constraints or None,
                integrality=np.zeros_like(integrality),
                bounds=Bounds(lb_fixed, ub_fixed),
                options={"disp": False, "time_limit": remaining},
            )
            if polished.status == 0 and polished.x is not None:
                x = polished.x
                x[binaries] = fixed
            else:
                logger.warning(f"LP polish after MILP failed: {polished.message}")
        return self._finish(model, status, x, mip_gap, started, message=str(res.message))


def _parse_cbc_solution(text: str, n_vars: int) -> Tuple[SolveStatus, Optional[np.ndarray]]:
    lines = text.splitlines()
    if not lines:
        return SolveStatus.NUMERIC_FAILURE, None
    head = lines[0].strip().lower()
    if head.startswith("optimal"):
        status = SolveStatus.OPTIMAL
    elif "infeasible" in head:
        return SolveStatus.INFEASIBLE, None
    elif "unbounded" in head:
        return SolveStatus.UNBOUNDED, None
    elif head.startswith("stopped"):
        status = SolveStatus.TIME_LIMIT
    else:
        return SolveStatus.NUMERIC_FAILURE, None
    x = np.zeros(n_vars)
    for line in lines[1:]:
        tokens = line.split()
        if tokens and tokens[0] == "**":
            tokens = tokens[1:]
        if len(tokens) < 3:
            continue
        i = column_index(tokens[1])
        if i is not None and i < n_vars:
            x[i] = float(tokens[2])
    if status is SolveStatus.TIME_LIMIT and "no integer solution" in head:
        return status, None
    return status, x


class CbcBackend(Backend):
    """COIN-OR CBC run on an LP file."""

    name = "cbc"

    def __init__(self, executable: str = "cbc", workdir: Optional[str | Path] = None):
        self.executable = executable
        self.workdir = workdir

    def command(self, lp_path: Path, sol_path: Path, options: SolveOptions) -> List[str]:
        return [
            self.executable,
            str(lp_path),
            "-seconds",
            str(options.time_limit),
            "-ratioGap",
            str(options.mip_gap_tol),
            "-threads",
            str(options.threads),
            "-solve",
            "-solution",
            str(sol_path),
        ]

    def solve(self, model: ModelIR, options: SolveOptions) -> SolveResult:
        executable = shutil.which(self.executable)
        if executable is None:
            raise BackendUnavailable(f"{self.executable} executable not found on PATH")
        started = time.perf_counter()
        with tempfile.TemporaryDirectory(dir=self.workdir) as tmp:
            lp_path = write_lp(model, Path(tmp) / "model.lp", minimize=True)
            sol_path = Path(tmp) / "solution.txt"
            cmd = self.command(lp_path, sol_path, options)
            logger.debug(f"Running {' '.join(cmd)}")
            proc = subprocess.run(cmd, capture_output=True, text=True)
            log = proc.stdout + proc.stderr
            if proc.returncode != 0 or not sol_path.exists():
                excerpt = "\n".join(log.splitlines()[-20:])
                logger.warning(f"cbc exited with code {proc.returncode}:\n{excerpt}")
                raise NumericFailure(f"cbc exited with code {proc.returncode}", excerpt)
            status, x = _parse_cbc_solution(sol_path.read_text(), model.n_vars)
        if status is SolveStatus.NUMERIC_FAILURE:
            excerpt = "\n".join(log.splitlines()[-20:])
            logger.warning(f"cbc returned an unrecognised status:\n{excerpt}")
            raise NumericFailure("cbc returned an unrecognised status", excerpt)
        return self._finish(model, status, x, 0.0, started)


BACKENDS = {"highs": HighsBackend, "cbc": CbcBackend}


def get_backend(name: str, **kwargs) -> Backend:
    try:
        cls = BACKENDS[name.lower()]
    except KeyError:
        raise BackendUnavailable(
            f"unknown backend {name!r}, expected one of {sorted(BACKENDS)}"
        ) from None
    return cls(**kwargs)


def solve(
    model: ModelIR,
    options: Optional[SolveOptions] = None,
    backend: Optional[Backend] = None,
) -> SolveResult:
    options = options or SolveOptions()
    backend = backend or get_backend(options.backend)
    return backend.solve(model, options)
