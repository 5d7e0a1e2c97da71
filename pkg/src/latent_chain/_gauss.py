import numpy as np
from scipy.linalg import cho_factor, solve_triangular

LOG_2PI = float(np.log(2.0 * np.pi))


class SingularCovarianceError(np.linalg.LinAlgError):
    pass


def mvn_logpdf(x: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> np.ndarray:
    """Row-wise log N(x_t; mean, cov) for ``x`` of shape ``(n, p)``."""
    x = np.atleast_2d(x)
    p = x.shape[1]
    try:
        L = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise SingularCovarianceError("covariance is not positive definite") from exc
    z = solve_triangular(L, (x - mean).T, lower=True)
    return -0.5 * np.sum(z * z, axis=0) - np.sum(np.log(np.diag(L))) - 0.5 * p * LOG_2PI


def rcond_spd(m: np.ndarray) -> float:
    w = np.linalg.eigvalsh(m)
    if w[-1] <= 0:
        return 0.0
    return float(w[0] / w[-1])


def spd_factor(m: np.ndarray):
    return cho_factor(m, lower=True, check_finite=False)
