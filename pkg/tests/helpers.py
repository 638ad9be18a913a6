"""Shared test utilities: finite-difference probes and independent oracles.

Oracles here must stay independent of the library code paths they check.
"""

import numpy as np

from pointillist.autodiff import Tensor


def fd_check_params(loss_fn, params, rng, n_probes=10, h=1e-6, rtol=1e-3, atol=1e-10):
    """Compare analytic parameter gradients against central differences.

    `loss_fn()` must rebuild the graph from the current parameter data and
    return a scalar Tensor.  Probes `n_probes` random entries per tensor.
    Returns the worst relative error seen.
    """
    for p in params:
        p.grad = None
    loss = loss_fn()
    loss.backward()
    grads = {id(p): (p.grad.copy() if p.grad is not None else np.zeros_like(p.data)) for p in params}

    worst = 0.0
    for p in params:
        flat = p.data.reshape(-1)
        n = min(n_probes, flat.size)
        idxs = rng.choice(flat.size, size=n, replace=False)
        for i in idxs:
            keep = flat[i]
            flat[i] = keep + h
            lp = float(loss_fn().data)
            flat[i] = keep - h
            lm = float(loss_fn().data)
            flat[i] = keep
            fd = (lp - lm) / (2 * h)
            an = grads[id(p)].reshape(-1)[i]
            err = abs(an - fd) / max(abs(fd), abs(an), atol / rtol)
            worst = max(worst, err)
            assert err < rtol or abs(an - fd) < atol, (
                f"grad mismatch {getattr(p, 'name', '?')}[{i}]: analytic={an:.8g} fd={fd:.8g} rel={err:.3g}"
            )
    return worst


def fd_check_input(loss_fn, x: Tensor, rng, n_probes=10, h=1e-6, rtol=1e-3, atol=1e-10):
    """FD check of d(loss)/d(x) for a non-parameter input tensor."""
    x.requires_grad = True
    x.grad = None
    loss = loss_fn(x)
    loss.backward()
    an_full = x.grad.copy()

    flat = x.data.reshape(-1)
    n = min(n_probes, flat.size)
    idxs = rng.choice(flat.size, size=n, replace=False)
    worst = 0.0
    for i in idxs:
        keep = flat[i]
        flat[i] = keep + h
        lp = float(loss_fn(Tensor(x.data)).data)
        flat[i] = keep - h
        lm = float(loss_fn(Tensor(x.data)).data)
        flat[i] = keep
        fd = (lp - lm) / (2 * h)
        an = an_full.reshape(-1)[i]
        err = abs(an - fd) / max(abs(fd), abs(an), atol / rtol)
        worst = max(worst, err)
        assert err < rtol or abs(an - fd) < atol, (
            f"input grad mismatch [{i}]: analytic={an:.8g} fd={fd:.8g} rel={err:.3g}"
        )
    return worst


def compose_affine(rotation, translation, scale):
    """Homogeneous 4x4 matrix for x -> scale * rotation @ x + translation."""
    m = np.eye(4)
    m[:3, :3] = scale * rotation
    m[:3, 3] = translation
    return m


def quat_to_matrix_oracle(q):
    """Rotation matrix from a scalar-first unit quaternion (textbook form)."""
    w, x, y, z = q / np.linalg.norm(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def random_rotation(rng):
    """Uniform-ish random rotation via QR of a Gaussian matrix."""
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q *= np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q
