# -*- coding: utf-8 -*-
"""
一维输运模块
分位数复合给出的一维最优输运映射、Caffarelli 1-Lipschitz 压缩检验、
输运雅可比恒等式，以及基于求积的对数 Sobolev 不等式验证
"""

from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from loguru import logger
from scipy.integrate import cumulative_simpson

from config import CHECK_CONFIG, TRANSPORT_CONFIG
from gaussian_calculus import GaussianSpace, det2_batch
from logconcave_ops import CheckReport, check_slc, log_report
from measure_core import (
    BoxDomain, GeometryError, GridDensity, GridFunction, MeasureSpec, Reference,
    discretize, gaussian_weight, grid_nodes, integrate_values, measure_potential, normalize_resolution,
)
from potential_dsl import DiffConfig, DomainError, evaluate_points, grad_points


@dataclass(frozen=True, eq=False)
class Cdf1D:
    """一维累积分布：x 严格递增，F 单调不减且端点为 0 和 1；pdf 为同一归一化下的节点密度（可选）"""
    x: np.ndarray
    F: np.ndarray
    pdf: Optional[np.ndarray] = None

    def __post_init__(self):
        if np.any(np.diff(self.x) <= 0):
            raise GeometryError("Cdf1D: x 必须严格递增")
        if np.any(np.diff(self.F) < 0):
            raise ValueError("Cdf1D: F 必须单调不减")
        if abs(self.F[0]) > 1e-9 or abs(self.F[-1] - 1.0) > 1e-9:
            raise ValueError(f"Cdf1D: 端点应为 0 和 1: {self.F[0]}, {self.F[-1]}")

    def __call__(self, x) -> np.ndarray:
        return np.interp(np.asarray(x, dtype=float), self.x, self.F)


@dataclass
class TransportMap1D:
    """单调重排 T = F_target⁻¹∘F_source 在源网格上的取值"""
    x: np.ndarray
    T: np.ndarray
    dT: np.ndarray
    source_cdf: Cdf1D
    target_cdf: Cdf1D
    ambiguous: bool = False
    notes: List[str] = field(default_factory=list)

    def __call__(self, x) -> np.ndarray:
        return np.interp(np.asarray(x, dtype=float), self.x, self.T)

    def window_mask(self, window: Tuple[float, float]) -> np.ndarray:
        p = self.source_cdf.F
        return (p >= window[0]) & (p <= window[1])


def _require_1d(rho: GridFunction):
    if rho.dim != 1:
        raise GeometryError(f"只支持一维密度: d={rho.dim}")


def cdf(rho: GridDensity) -> Cdf1D:
    """累积 Simpson 求和，并归一化到终点为 1"""
    _require_1d(rho)
    x = rho.axes[0]
    F = cumulative_simpson(np.asarray(rho.values), x=x, initial=0.0)
    F = np.maximum.accumulate(np.maximum(F, 0.0))
    total = F[-1]
    if not total > 0:
        raise DomainError("总质量为零，无法构造累积分布")
    return Cdf1D(x, F / total, np.asarray(rho.values, dtype=float) / total)


def quantile(F: Cdf1D, p):
    """单调分段线性逆；p 恰落在平台上时取平台中点

    Args:
        F: 累积分布
        p: (0, 1) 内的概率，标量或数组

    Returns:
        与 p 同形的分位数
    """
    p_arr = np.atleast_1d(np.asarray(p, dtype=float))
    if np.any((p_arr <= 0) | (p_arr >= 1)):
        raise ValueError(f"p 必须在 (0, 1) 内: {p}")
    lo = np.searchsorted(F.F, p_arr, side='left')
    hi = np.searchsorted(F.F, p_arr, side='right')
    out = np.empty_like(p_arr)
    flat = hi > lo
    out[flat] = 0.5 * (F.x[lo[flat]] + F.x[hi[flat] - 1])
    j = lo[~flat]
    F0, F1 = F.F[j - 1], F.F[j]
    x0, x1 = F.x[j - 1], F.x[j]
    out[~flat] = x0 + (p_arr[~flat] - F0) / (F1 - F0) * (x1 - x0)
    return float(out[0]) if np.ndim(p) == 0 else out


def _support_connected(rho: GridDensity) -> bool:
    positive = np.asarray(rho.values) > 0
    idx = np.flatnonzero(positive)
    return idx.size == 0 or bool(positive[idx[0]:idx[-1] + 1].all())


def _map_derivative(Fs: Cdf1D, Ft: Cdf1D, T: np.ndarray, clipped: np.ndarray) -> np.ndarray:
    """T' = ρ_s / ρ_t∘T，不对 T 做差分"""
    fallback = np.gradient(T, Fs.x)
    target_pdf = np.interp(T, Ft.x, Ft.pdf)
    usable = (target_pdf > TRANSPORT_CONFIG['density_floor'] * Ft.pdf.max()) & ~clipped
    return np.where(usable, Fs.pdf / np.where(usable, target_pdf, 1.0), fallback)


def monge_map(source: GridDensity, target: GridDensity,
              p_clip: float = TRANSPORT_CONFIG['p_clip']) -> TransportMap1D:
    """一维单调重排 T = F_target⁻¹∘F_source

    Returns:
        TransportMap1D: T 单调不减；T' 取 ρ_s(x) / ρ_t(T(x))，目标密度为零或 p 被裁剪处退回中心差分
    """
    _require_1d(source)
    _require_1d(target)
    Fs = cdf(source)
    Ft = cdf(target)
    notes = []
    ambiguous = not _support_connected(target)
    if ambiguous:
        logger.warning("monge_map: 目标支撑不连通，分位数平台存在歧义")
        notes.append("目标支撑不连通，平台处取中点")
    p = np.clip(Fs.F, p_clip, 1.0 - p_clip)
    T = np.maximum.accumulate(quantile(Ft, p))
    dT = np.maximum(_map_derivative(Fs, Ft, T, Fs.F != p), 0.0)
    return TransportMap1D(Fs.x, T, dT, Fs, Ft, ambiguous, notes)


def check_pushforward(T: TransportMap1D,
                      window: Tuple[float, float] = TRANSPORT_CONFIG['pushforward_window']) -> float:
    """窗口内 sup |F_target(T(x)) - F_source(x)|"""
    mask = T.window_mask(window)
    if not mask.any():
        raise ValueError(f"窗口 {window} 内没有网格点")
    return float(np.max(np.abs(T.target_cdf(T.T[mask]) - T.source_cdf.F[mask])))


def lipschitz_estimate(T: TransportMap1D,
                       quantile_window: Tuple[float, float] = TRANSPORT_CONFIG['window']) -> float:
    """分位数窗口内前向差分斜率的最大值"""
    p_lo, p_hi = quantile_window
    if not 0 < p_lo < p_hi < 1:
        raise ValueError(f"分位数窗口必须在 (0, 1) 内: {quantile_window}")
    idx = np.flatnonzero(T.window_mask(quantile_window))
    if idx.size < TRANSPORT_CONFIG['min_window_points']:
        raise ValueError(f"窗口内网格点过少: {idx.size} < {TRANSPORT_CONFIG['min_window_points']}")
    slopes = np.diff(T.T[idx]) / np.diff(T.x[idx])
    return float(np.max(slopes))


def export_transport_map(T: TransportMap1D) -> pd.DataFrame:
    """两列 (x, T(x)) 以及导数估计"""
    return pd.DataFrame({'x': T.x, 'T': T.T, 'dT': T.dT})


# ---------------------------------------------------------------------------
# 高斯目标与雅可比恒等式
# ---------------------------------------------------------------------------

def _relative(L: Union[Callable, GridFunction]) -> Callable:
    if isinstance(L, GridFunction):
        def interp(X, grid=L):
            return grid(X)
        interp.dim = 1
        return interp
    return L


def gaussian_target(L: Union[Callable, GridFunction], dom: BoxDomain, res,
                    space: Optional[GaussianSpace] = None) -> Tuple[GridDensity, Callable]:
    """目标测度 L·dμ 的网格密度，按 E_μ[L] = 1 归一化

    Returns:
        (GridDensity, Callable): 目标密度与归一化后的 L
    """
    if dom.dim != 1:
        raise GeometryError("gaussian_target 只支持一维")
    res = normalize_resolution(res, 1)
    func = _relative(L)
    X = grid_nodes(dom, res)
    if isinstance(L, GridFunction):
        constant = integrate_values(evaluate_points(func, X) * gaussian_weight(X), dom.axes(res))
    else:
        constant = (space or GaussianSpace(1)).expect(func)
    if not constant > 0:
        raise DomainError(f"E_μ[L] 必须为正: {constant}")

    def normalized(points, f=func, c=constant):
        return evaluate_points(f, points) / c

    normalized.dim = 1
    values = (normalized(X) * gaussian_weight(X)).reshape(res)
    return GridDensity(dom, values, {'normalizer': constant}), normalized


def transport_jacobian_identity(L: Union[Callable, GridFunction], T: TransportMap1D,
                                tol: float = 1e-4,
                                window: Tuple[float, float] = TRANSPORT_CONFIG['window']) -> CheckReport:
    """L(T(x))·Λ(T)(x) = 1 的检验

    Λ 由 u = T - I 组装：det₂(T' - 1)·exp(-δu - u²/2)，δu = u·x - (T' - 1)，
    与闭式 T'·exp(-(T² - x²)/2) 一致

    Returns:
        CheckReport: 裕量 = -sup |L∘T·Λ - 1|（窗口内）
    """
    mask = T.window_mask(window)
    if mask.sum() < TRANSPORT_CONFIG['min_window_points']:
        raise ValueError(f"窗口内网格点过少: {int(mask.sum())}")
    x = T.x[mask]
    Tx = T.T[mask]
    grad_u = (T.dT[mask] - 1.0).reshape(-1, 1, 1)
    u = Tx - x
    d2 = det2_batch(grad_u)
    div = u * x - grad_u[:, 0, 0]
    lam = d2 * np.exp(-div - 0.5 * u * u)
    if np.any(lam <= 0):
        k = int(np.argmax(lam <= 0))
        raise ValueError(f"窗口内 Λ 非正: x={x[k]}")
    product = evaluate_points(_relative(L), Tx.reshape(-1, 1)) * lam
    err = np.abs(product - 1.0)
    k = int(np.argmax(err))
    details = {'window': list(window), 'trimmed_below': float(T.x[mask][0]), 'trimmed_above': float(T.x[mask][-1]),
               'max_abs_error': float(err[k])}
    report = CheckReport.from_margin('transport_jacobian_identity', -float(err[k]), tol, int(x.size),
                                     [[x[k]]] if err[k] > tol else None, details=details)
    return log_report(report)


def check_caffarelli(q: Callable, alpha: float, dom: BoxDomain, res,
                     tol: float = 0.01,
                     window: Tuple[float, float] = TRANSPORT_CONFIG['window']) -> CheckReport:
    """源为 N(0, 1/α)、目标为 q·dμ_α 的输运映射是否 1-Lipschitz

    Returns:
        CheckReport: 裕量 = 1 - Lipschitz 估计
    """
    if not alpha > 0:
        raise ValueError(f"alpha 必须为正: {alpha}")
    res = normalize_resolution(res, 1)
    X = grid_nodes(dom, res)
    base = np.exp(-0.5 * alpha * X[:, 0] ** 2)
    source = GridDensity(dom, base.reshape(res))
    target = GridDensity(dom, (evaluate_points(q, X) * base).reshape(res))
    T = monge_map(source, target)
    estimate = lipschitz_estimate(T, window)
    details = {'lipschitz': estimate, 'alpha': alpha, 'pushforward_error': check_pushforward(T)}
    report = CheckReport.from_margin('check_caffarelli', 1.0 - estimate, tol, int(T.window_mask(window).sum()),
                                     [[float(T.x[T.window_mask(window)][0])]] if 1.0 - estimate < -tol else None,
                                     details=details)
    return log_report(report)


# ---------------------------------------------------------------------------
# 对数 Sobolev 不等式
# ---------------------------------------------------------------------------

def _lsi_single(f: Callable, weights: Callable, mass: np.ndarray, X: np.ndarray, alpha: float, tol: float,
                cfg: DiffConfig, label: str) -> CheckReport:
    values = evaluate_points(f, X)
    grads = grad_points(f, X, cfg)
    norm_sq = weights(values * values)
    if not norm_sq > 0:
        raise ValueError(f"ρ(f²) = 0，无法归一化: {label}")
    g2 = values * values / norm_sq
    with np.errstate(divide='ignore', invalid='ignore'):
        entropy = np.where(g2 > 0, g2 * np.log(np.where(g2 > 0, g2, 1.0)), 0.0)
    lhs = weights(entropy)
    energy = weights(np.sum(grads * grads, axis=1)) / norm_sq
    rhs = 2.0 / alpha * energy
    details = {'lhs': lhs, 'rhs': rhs, 'constant': 2.0 / alpha, 'rho_f2': norm_sq, 'f': label}
    witness = None
    if rhs - lhs < -tol:
        # 熵减能量的逐点贡献最大处
        excess = mass * (entropy - 2.0 / alpha * np.sum(grads * grads, axis=1) / norm_sq)
        witness = [X[int(np.argmax(excess))]]
    return CheckReport.from_margin('verify_lsi', rhs - lhs, tol, int(X.shape[0]), witness, details=details)


def verify_lsi(rho: MeasureSpec, fs: Sequence[Callable], space: Optional[GaussianSpace] = None,
               tol: float = CHECK_CONFIG['tolerance'], alpha: Optional[float] = None,
               dom: Optional[BoxDomain] = None, res=None, seed: int = 0,
               cfg: Optional[DiffConfig] = None) -> List[CheckReport]:
    """对数 Sobolev 不等式 ρ(f² log f²) <= (2/α) ρ(|∇f|²)，ρ(f²) = 1

    先用 check_slc 认证 ρ 为 α-s.l.c.；每个 f 内部归一化，0·log 0 = 0。
    高斯参考且给出 space 时用 Gauss–Hermite 求积，否则在截断区域的网格上做 Simpson 积分

    Returns:
        List[CheckReport]: 每个 f 一份报告
    """
    alpha = alpha if alpha is not None else rho.declared_alpha
    if alpha is None or not alpha > 0:
        raise ValueError(f"verify_lsi 需要正的 alpha: {alpha}")
    if not fs:
        raise ValueError("测试函数列表为空")
    cfg = cfg or DiffConfig()
    d = rho.dim or getattr(fs[0], 'dim', 1)
    dom = dom or BoxDomain.cube(-8.0, 8.0, d)
    res = normalize_resolution(res if res is not None else (513 if d == 1 else 129), d)

    if isinstance(rho.source, GridFunction):
        cert = check_slc(discretize(rho, dom, res), alpha, seed=seed)
    else:
        cert = check_slc(measure_potential(rho), alpha, dom, seed=seed, cfg=cfg)
    if not cert.valid:
        report = cert.to_report()
        report.kind = 'verify_lsi'
        report.failure = 'precondition'
        report.notes.append(f"ρ 未通过 {alpha}-s.l.c. 认证")
        return [log_report(report)]

    gauss_quadrature = (space is not None and rho.reference is Reference.GAUSSIAN
                        and not isinstance(rho.source, GridFunction))
    if gauss_quadrature:
        X = space.nodes()
        mass = space.weights() * rho.density(X)
        mass = mass / mass.sum()

        def weights(v):
            return float(mass @ v)
    else:
        grid = discretize(rho, dom, res)
        X = grid.nodes()
        mass = np.asarray(grid.values).ravel() / grid.mass

        def weights(v):
            return integrate_values((mass * v).reshape(grid.resolution), grid.axes)

    reports = []
    for i, f in enumerate(fs):
        label = getattr(f, 'source', None) or f"f{i + 1}"
        report = _lsi_single(f, weights, mass, X, alpha, tol, cfg, label)
        report.details['quadrature'] = 'gauss-hermite' if gauss_quadrature else 'grid'
        report.notes.append("f 限于表达式语法可表示的光滑函数")
        reports.append(log_report(report))
    return reports
