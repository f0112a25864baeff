"""Differential geometry of the diffusion metric.

All functions accept a single point of shape ``(dim,)`` or a batch of shape
``(..., dim)`` and return arrays with the same leading shape.

Conventions
-----------
* ``g_upper = sum_i ghat_i^G ghat_i^G'`` is the diffusion matrix and
  ``g_lower`` its inverse, the metric. ``det_g = det(g_lower)``.
* Christoffel symbols of the second kind
  ``gamma[F, J, K] = 1/2 g^{LF} (g_{JL,K} + g_{KL,J} - g_{JK,L})``.
* The scalar curvature is the double contraction
  ``g^{JL} g^{FK} R_{FJKL}`` of the covariant curvature tensor built from
  second metric derivatives and Christoffel products, with the overall sign
  chosen so that the round 2-sphere of radius ``a`` has ``R = 2 / a**2``.

All derivatives come from the field evaluators' exact jets; nothing here
differentiates numerically.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateMetricError
from .model.spec import ModelSpec

DEGENERACY_RTOL = 1e-12
FEYNMAN_CURVATURE_WEIGHT = 1.0 / 6.0
WKB_CURVATURE_WEIGHT = 1.0 / 12.0


@dataclass
class GeometryBundle:
    """Derived quantities at one point or a batch of points.

    Fields that were not requested are ``None``.
    """

    point: np.ndarray
    g_upper: np.ndarray
    g_lower: np.ndarray
    det_g: np.ndarray
    g_drift: np.ndarray | None = None
    h: np.ndarray | None = None
    h_div: np.ndarray | None = None
    gamma: np.ndarray | None = None
    R: np.ndarray | None = None
    potential: np.ndarray | None = None


def _field_jets(fields, x, order):
    n, dim = x.shape
    vals = np.zeros((len(fields), n))
    grads = np.zeros((len(fields), n, dim))
    hess = np.zeros((len(fields), n, dim, dim)) if order >= 2 else None
    for k, f in enumerate(fields):
        if getattr(f, "is_zero", False):
            continue
        v, g, h = f.jet(x, order=order)
        vals[k] = v
        grads[k] = g
        if order >= 2:
            hess[k] = h
    return vals, grads, hess


def _noise_jets(spec, x, order):
    """ghat (n, I, D), d ghat (n, I, D, a), d2 ghat (n, I, D, a, b)."""
    flat = [f for row in spec.noise for f in row]
    v, g, h = _field_jets(flat, x, order)
    n_src, dim = spec.n_sources, spec.dim
    n = x.shape[0]
    G = v.reshape(n_src, dim, n).transpose(2, 0, 1)
    dG = g.reshape(n_src, dim, n, dim).transpose(2, 0, 1, 3)
    d2G = None
    if h is not None:
        d2G = h.reshape(n_src, dim, n, dim, dim).transpose(2, 0, 1, 3, 4)
    return G, dG, d2G


def _check_metric(gup, x, labels):
    try:
        np.linalg.cholesky(gup)
        ok = np.ones(gup.shape[0], dtype=bool)
    except np.linalg.LinAlgError:
        ok = np.array([_is_spd(m) for m in gup])
    det = np.linalg.det(gup)
    diag = np.prod(np.diagonal(gup, axis1=-2, axis2=-1), axis=-1)
    ok &= det > DEGENERACY_RTOL * np.abs(diag)
    if not ok.all():
        bad = int(np.nonzero(~ok)[0][0])
        where = ", ".join(f"{lab}={val:.6g}" for lab, val in zip(labels, x[bad]))
        raise DegenerateMetricError(f"degenerate diffusion metric at ({where})", point=x[bad])
    return det


def _is_spd(m):
    try:
        np.linalg.cholesky(m)
        return True
    except np.linalg.LinAlgError:
        return False


def compute_bundle(spec: ModelSpec, point, epoch: int | None = None, level: str = "full",
                   curvature: bool = True) -> GeometryBundle:
    """Evaluate the geometry at ``point``.

    ``level`` selects how much is computed: ``"metric"`` (diffusion, metric,
    determinant), ``"prepoint"`` (adds induced drift and potential) or
    ``"full"`` (adds ``h``, its covariant divergence, the connection and,
    if ``curvature`` is set, the scalar curvature).
    """
    x = np.asarray(point, dtype=float)
    batch = x.shape[:-1]
    x = x.reshape(-1, spec.dim)
    dim = spec.dim
    order = 2 if level == "full" else (1 if level == "prepoint" else 0)

    if level == "metric":
        G = spec.noise_values(x)
    else:
        G, dG, d2G = _noise_jets(spec, x, order)
    gup = np.einsum("nig,nih->ngh", G, G)
    det_up = _check_metric(gup, x, spec.labels)
    glow = np.linalg.inv(gup)
    glow = 0.5 * (glow + np.swapaxes(glow, -1, -2))
    det_g = 1.0 / det_up
    out = GeometryBundle(point=x, g_upper=gup, g_lower=glow, det_g=det_g)

    if level != "metric":
        f, df, _ = _field_jets(spec.drift, x, 1)
        f = f.T
        df = df.transpose(1, 0, 2)
        out.g_drift = f + 0.5 * np.einsum("nip,nigp->ng", G, dG)
        out.potential = spec.potential_values(x, epoch)

    if level == "full":
        if not (dG.any() or d2G.any()):
            # state-independent noise: flat metric, every derivative term vanishes
            n = x.shape[0]
            out.h = out.g_drift
            out.h_div = np.einsum("ngg->n", df)
            out.gamma = np.zeros((n, dim, dim, dim))
            out.R = np.zeros(n)
        else:
            _derivative_terms(out, G, dG, d2G, df, gup, glow, dim, curvature)

    for name in ("point", "g_upper", "g_lower", "det_g", "g_drift", "h", "h_div", "gamma", "R",
                 "potential"):
        val = getattr(out, name)
        if val is not None:
            setattr(out, name, val.reshape(batch + val.shape[1:]))
    return out


def _derivative_terms(out, G, dG, d2G, df, gup, glow, dim, curvature):
    dgup = np.einsum("niga,nih->ngha", dG, G)
    dgup = dgup + np.swapaxes(dgup, 1, 2)
    t1 = np.einsum("nigab,nih->nghab", d2G, G)
    t2 = np.einsum("niga,nihb->nghab", dG, dG)
    d2gup = t1 + np.swapaxes(t1, 1, 2) + t2 + np.swapaxes(t2, 1, 2)

    dgdrift = df + 0.5 * (np.einsum("nipa,nigp->nga", dG, dG)
                          + np.einsum("nip,nigpa->nga", G, d2G))
    dlng = -np.einsum("nhg,ngha->na", glow, dgup)
    dglow = -np.einsum("ngp,npqa,nqh->ngha", glow, dgup, glow, optimize=True)
    d2lng = -(np.einsum("nhgb,ngha->nab", dglow, dgup)
              + np.einsum("nhg,nghab->nab", glow, d2gup))

    div_gup = np.einsum("ngpp->ng", dgup)
    h = out.g_drift - 0.5 * (div_gup + 0.5 * np.einsum("ngp,np->ng", gup, dlng))
    ddiv_gup = np.einsum("ngppa->nga", d2gup)
    dh = dgdrift - 0.5 * (ddiv_gup + 0.5 * (np.einsum("ngpa,np->nga", dgup, dlng)
                                            + np.einsum("ngp,npa->nga", gup, d2lng)))
    out.h = h
    out.h_div = np.einsum("ngg->n", dh) + 0.5 * np.einsum("ng,ng->n", h, dlng)

    # gamma[F, J, K] = 1/2 g^{LF} (g_{JL,K} + g_{KL,J} - g_{JK,L})
    bracket = dglow + np.transpose(dglow, (0, 3, 2, 1)) - np.transpose(dglow, (0, 1, 3, 2))
    out.gamma = 0.5 * np.einsum("nlf,njlk->nfjk", gup, bracket)

    if dim == 1 or not curvature:
        out.R = np.zeros(G.shape[0])
    else:
        out.R = _curvature(gup, glow, dgup, d2gup, dglow, out.gamma)


def _curvature(gup, glow, dgup, d2gup, dglow, gamma):
    # second derivatives of the metric: d_b d_a g_lower
    d2glow = -(np.einsum("ngpb,npqa,nqh->nghab", dglow, dgup, glow, optimize=True)
               + np.einsum("ngp,npqab,nqh->nghab", glow, d2gup, glow, optimize=True)
               + np.einsum("ngp,npqa,nqhb->nghab", glow, dgup, dglow, optimize=True))
    # R_FJKL = 1/2 (g_FK,JL - g_JK,FL - g_FL,JK + g_JL,FK)
    #          + g_MN (G^M_FK G^N_JL - G^M_FL G^N_JK)
    second = 0.5 * (np.einsum("nfkjl->nfjkl", d2glow)
                    - np.einsum("njkfl->nfjkl", d2glow)
                    - np.einsum("nfljk->nfjkl", d2glow)
                    + np.einsum("njlfk->nfjkl", d2glow))
    quad = (np.einsum("nmo,nmfk,nojl->nfjkl", glow, gamma, gamma, optimize=True)
            - np.einsum("nmo,nmfl,nojk->nfjkl", glow, gamma, gamma, optimize=True))
    riemann = second + quad
    # this index placement gives R < 0 on spheres; flip to the R > 0 convention
    return -np.einsum("njl,nfk,nfjkl->n", gup, gup, riemann, optimize=True)


# -- per-quantity entry points ---------------------------------------------

def diffusion_matrix(spec: ModelSpec, point) -> np.ndarray:
    return compute_bundle(spec, point, level="metric").g_upper


def metric(spec: ModelSpec, point) -> np.ndarray:
    return compute_bundle(spec, point, level="metric").g_lower


def induced_drift(spec: ModelSpec, point) -> np.ndarray:
    """Drift plus the midpoint noise correction ``1/2 ghat^G' d ghat^G / dM^G'``."""
    x = np.asarray(point, dtype=float)
    batch = x.shape[:-1]
    xf = x.reshape(-1, spec.dim)
    G, dG, _ = _noise_jets(spec, xf, 1)
    g = spec.drift_values(xf) + 0.5 * np.einsum("nip,nigp->ng", G, dG)
    return g.reshape(batch + (spec.dim,))


def mean_drift_h(spec: ModelSpec, point) -> np.ndarray:
    return compute_bundle(spec, point, curvature=False).h


def affine_connection(spec: ModelSpec, point) -> np.ndarray:
    """Christoffel symbols ``gamma[..., F, J, K]``."""
    return compute_bundle(spec, point, curvature=False).gamma


def curvature_scalar(spec: ModelSpec, point) -> np.ndarray:
    return compute_bundle(spec, point).R


def covariant_divergence(spec: ModelSpec, point) -> np.ndarray:
    return compute_bundle(spec, point, curvature=False).h_div


def feynman_lagrangian(spec: ModelSpec, point, mdot, epoch: int | None = None,
                       curvature_weight: float = FEYNMAN_CURVATURE_WEIGHT,
                       bundle: GeometryBundle | None = None) -> np.ndarray:
    """Midpoint Lagrangian
    ``1/2 (mdot - h) g_lower (mdot - h) + 1/2 h_div + w R - V``.

    ``curvature_weight`` ``w`` is 1/6 for the Feynman form; the WKB
    reference uses 1/12.
    """
    b = bundle or compute_bundle(spec, point, epoch=epoch, curvature=curvature_weight != 0.0)
    d = np.asarray(mdot, dtype=float) - b.h
    kinetic = 0.5 * np.einsum("...g,...gh,...h->...", d, b.g_lower, d)
    return kinetic + 0.5 * b.h_div + curvature_weight * b.R - b.potential


def prepoint_lagrangian(spec: ModelSpec, point, mdot, epoch: int | None = None,
                        bundle: GeometryBundle | None = None) -> np.ndarray:
    """Prepoint Lagrangian ``1/2 (mdot - g) g_lower (mdot - g) - V`` with the
    induced drift ``g``; no explicit curvature terms."""
    b = bundle or compute_bundle(spec, point, epoch=epoch, level="prepoint")
    d = np.asarray(mdot, dtype=float) - b.g_drift
    return 0.5 * np.einsum("...g,...gh,...h->...", d, b.g_lower, d) - b.potential


def lagrangian(spec, point, mdot, discretization="midpoint", epoch=None,
               curvature_weight=FEYNMAN_CURVATURE_WEIGHT):
    if discretization == "midpoint":
        return feynman_lagrangian(spec, point, mdot, epoch, curvature_weight)
    if discretization == "prepoint":
        return prepoint_lagrangian(spec, point, mdot, epoch)
    raise ValueError(f"unknown discretization {discretization!r}")
