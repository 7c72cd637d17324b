import numpy as np
import pytest

from scmix import autodiff as ad


def finite_diff_check(build_loss, leaves, rng, n_points=5, step=1e-5, rel_tol=1e-4):
    """Compare analytic gradients of ``build_loss()`` against central differences.

    ``build_loss`` must rebuild the graph from ``leaves`` on every call and
    return a scalar Tensor. Checks ``n_points`` randomly chosen coordinates
    per leaf. The oracle never touches the tape: it just re-evaluates the loss
    at perturbed inputs.
    """
    for leaf in leaves:
        leaf.zero_grad()
    loss = build_loss()
    loss.backward()
    for leaf in leaves:
        assert leaf.grad is not None, "leaf did not receive a gradient"
        flat = leaf.data.reshape(-1)
        grad = leaf.grad.reshape(-1)
        coords = rng.choice(flat.size, size=min(n_points, flat.size), replace=False)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + step
            up = build_loss().item()
            flat[c] = orig - step
            down = build_loss().item()
            flat[c] = orig
            fd = (up - down) / (2 * step)
            denom = max(abs(fd), abs(grad[c]), 1e-8)
            rel = abs(fd - grad[c]) / denom
            assert rel < rel_tol, (
                f"finite-difference mismatch at coord {c}: fd={fd}, analytic={grad[c]}, rel={rel}"
            )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def fd_check():
    return finite_diff_check
