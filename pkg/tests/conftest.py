import numpy as np
import pytest

from uascorrect import autodiff as ad
from uascorrect.autodiff import Tensor


def check_gradients(build, arrays, h=1e-3, tol=1e-4, seed=0, floor=1e-6):
    """Compare autodiff gradients of a random projection of ``build(*tensors)``
    with central finite differences. Returns the worst relative error."""
    rng = np.random.default_rng(seed)
    tensors = [Tensor(np.array(a, dtype=np.float64), requires_grad=True) for a in arrays]
    out = build(*tensors)
    proj = rng.uniform(0.5, 1.5, size=out.shape) if out.data.ndim else None

    def scalar(t):
        return ad.sum(t * proj) if proj is not None else t

    loss = scalar(out)
    loss.backward()
    worst = 0.0
    for t in tensors:
        def f():
            with ad.no_grad():
                return float(scalar(build(*tensors)).data)

        numeric = ad.numerical_gradient(f, t.data, h)
        err = ad.relative_error(t.grad, numeric, floor)
        worst = max(worst, err)
        assert err < tol, f"relative error {err:.3e} >= {tol}"
    return worst


@pytest.fixture
def gradcheck():
    return check_gradients


ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, ok: bool, detail: str) -> None:
    """Keep one verdict line per acceptance criterion for the end-of-run summary."""
    ACCEPTANCE_LINES.append(f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}")
    print(ACCEPTANCE_LINES[-1])


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
