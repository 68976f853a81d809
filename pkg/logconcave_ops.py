# -*- coding: utf-8 -*-
"""
对数凹检验模块
对数凹与 α-超对数凹证书、上卷积、Prékopa–Leindler 与 Brunn–Minkowski 验证、
卷积、边缘化、高斯光滑及其 δ 界、盒平均局部化诊断
"""

import itertools
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from loguru import logger
from scipy import signal
from scipy.integrate import simpson
from scipy.interpolate import RegularGridInterpolator
from scipy.ndimage import maximum_filter

from config import CHECK_CONFIG, GRID_CONFIG
from measure_core import (
    BoxDomain, GeometryError, GridDensity, GridFunction, GridMask, MeasureSpec,
    grid_nodes, integrate_values, masked_integral, measure_potential,
    normalize_resolution, require_same_geometry, tensor_weights,
)
from potential_dsl import DiffConfig, Expr, as_points, hess_points

__all__ = [
    'Verdict', 'CheckReport', 'GridMask', 'SlcCertificate', 'SmoothingBound',
    'check_logconcave', 'check_slc', 'sup_convolution', 'verify_prekopa_leindler',
    'verify_slc_prekopa_leindler', 'minkowski_combine', 'verify_brunn_minkowski',
    'convolve', 'marginalize', 'gaussian_smooth', 'slc_delta_bound', 'box_average',
]


class Verdict(Enum):
    """检验结论"""
    PASS = 'pass'
    FAIL = 'fail'
    INCONCLUSIVE = 'inconclusive'


def _plain(value):
    """转换为可 JSON 序列化的 Python 值，非有限浮点数记为 None"""
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else None
    return value


@dataclass
class CheckReport:
    """通用检验报告

    verdict == FAIL 当且仅当 worst_margin < -tolerance；失败时必须给出 witness
    运行异常（failure='error'）记为 worst_margin = -inf、witness = []，没有可定位的点
    failure: 'precondition'（假设不成立）| 'conclusion'（结论不成立）| 'error'（运行异常）
    """
    kind: str
    verdict: Verdict
    worst_margin: float
    tolerance: float
    samples: int
    witness: Optional[List[List[float]]] = None
    notes: List[str] = field(default_factory=list)
    details: Dict[str, Any] = field(default_factory=dict)
    failure: Optional[str] = None

    @property
    def passed(self) -> bool:
        return self.verdict is Verdict.PASS

    @property
    def failed(self) -> bool:
        return self.verdict is Verdict.FAIL

    @classmethod
    def from_margin(cls, kind: str, margin: float, tolerance: float, samples: int,
                    witness=None, failure: str = 'conclusion', **extra) -> 'CheckReport':
        failed = margin < -tolerance
        return cls(
            kind=kind,
            verdict=Verdict.FAIL if failed else Verdict.PASS,
            worst_margin=float(margin),
            tolerance=float(tolerance),
            samples=int(samples),
            witness=_witness(witness),
            failure=failure if failed else None,
            **extra,
        )

    @classmethod
    def inconclusive(cls, kind: str, tolerance: float, samples: int = 0, note: str = '', **extra) -> 'CheckReport':
        notes = list(extra.pop('notes', []))
        if note:
            notes.append(note)
        return cls(kind=kind, verdict=Verdict.INCONCLUSIVE, worst_margin=float('nan'),
                   tolerance=float(tolerance), samples=int(samples), notes=notes, **extra)

    def to_dict(self) -> Dict[str, Any]:
        return _plain({
            'kind': self.kind,
            'verdict': self.verdict,
            'worst_margin': self.worst_margin,
            'tolerance': self.tolerance,
            'samples': self.samples,
            'witness': self.witness,
            'notes': self.notes,
            'details': self.details,
            'failure': self.failure,
        })


def _witness(points) -> Optional[List[List[float]]]:
    if points is None:
        return None
    return [[float(v) for v in np.ravel(p)] for p in points]


def log_report(report: CheckReport) -> CheckReport:
    message = f"{report.kind}: {report.verdict.value}, 最差裕量={report.worst_margin:.3e}, 样本={report.samples}"
    if report.failed:
        logger.info(f"{message}, 反例={report.witness}")
    else:
        logger.info(message)
    return report


# ---------------------------------------------------------------------------
# 中点对数凹检验
# ---------------------------------------------------------------------------

def _parity_pairs(rng: np.random.Generator, candidates: np.ndarray, shape, count: int):
    """随机抽取节点对；逐轴调整第二个下标的奇偶性，使中点恰好落在节点上"""
    i1 = candidates[rng.integers(candidates.shape[0], size=count)]
    i2 = candidates[rng.integers(candidates.shape[0], size=count)]
    odd = (i1 + i2) % 2 == 1
    step = np.where(i2 + 1 < np.asarray(shape), 1, -1)
    return i1, np.where(odd, i2 + step, i2)


def _mode_pairs(L: np.ndarray, positive: np.ndarray, limit: int):
    """最强局部极大值两两配对（同样做奇偶调整）"""
    peaks = positive & (L >= maximum_filter(L, size=3, mode='nearest'))
    idx = np.argwhere(peaks)
    if idx.shape[0] < 2:
        return None
    order = np.argsort(-L[tuple(idx.T)], kind='stable')[:limit]
    idx = idx[order]
    a, b = zip(*itertools.combinations(range(idx.shape[0]), 2))
    i1, i2 = idx[list(a)], idx[list(b)]
    odd = (i1 + i2) % 2 == 1
    step = np.where(i2 + 1 < np.asarray(L.shape), 1, -1)
    return i1, np.where(odd, i2 + step, i2)


def _midpoint_test(L: np.ndarray, positive: np.ndarray, axes, pairs: int, seed: int,
                   mode_pairs: int) -> Dict[str, Any]:
    """对数值 L 做中点凹性检验

    Returns:
        dict: margin（最差裕量）、witness（[中点, x, y]）以及各族检验数量
    """
    shape = L.shape
    best = {'margin': float('inf'), 'witness': None, 'triples': 0, 'pairs': 0, 'mode_pairs': 0}

    def point(index):
        return [float(ax[i]) for ax, i in zip(axes, index)]

    def consider(margins, i1, i2, family):
        best[family] += int(margins.shape[0])
        if margins.shape[0] == 0:
            return
        k = int(np.argmin(margins))
        if margins[k] < best['margin']:
            best['margin'] = float(margins[k])
            mid = (i1[k] + i2[k]) // 2
            best['witness'] = [point(mid), point(i1[k]), point(i2[k])]

    for axis in range(L.ndim):
        if shape[axis] < 3:
            continue
        n = shape[axis]
        idx_mid = np.argwhere(np.ones(tuple(n - 2 if a == axis else s for a, s in enumerate(shape)), dtype=bool))
        idx_mid[:, axis] += 1
        i1 = idx_mid.copy()
        i1[:, axis] -= 1
        i2 = idx_mid.copy()
        i2[:, axis] += 1
        valid = positive[tuple(i1.T)] & positive[tuple(i2.T)]
        i1, i2, mid = i1[valid], i2[valid], idx_mid[valid]
        margins = L[tuple(mid.T)] - 0.5 * (L[tuple(i1.T)] + L[tuple(i2.T)])
        consider(margins, i1, i2, 'triples')

    candidates = np.argwhere(positive)
    families = []
    if candidates.shape[0] > 0 and pairs > 0:
        rng = np.random.default_rng(seed)
        families.append(('pairs', _parity_pairs(rng, candidates, shape, pairs)))
    modes = _mode_pairs(L, positive, mode_pairs)
    if modes is not None:
        families.append(('mode_pairs', modes))
    for family, (i1, i2) in families:
        valid = positive[tuple(i1.T)] & positive[tuple(i2.T)]
        i1, i2 = i1[valid], i2[valid]
        mid = (i1 + i2) // 2
        margins = L[tuple(mid.T)] - 0.5 * (L[tuple(i1.T)] + L[tuple(i2.T)])
        consider(margins, i1, i2, family)
    return best


def _log_values(values: np.ndarray):
    """对数值与正值掩码；低于 zero_floor·峰值 的节点按零处理"""
    peak = float(values.max())
    positive = values > GRID_CONFIG['zero_floor'] * peak
    floor_log = math.log(GRID_CONFIG['zero_floor'] * peak) - 1.0
    L = np.full(values.shape, floor_log)
    L[positive] = np.log(values[positive])
    return L, positive


def check_logconcave(f: GridFunction, tol: float = CHECK_CONFIG['tolerance'],
                     pairs: int = CHECK_CONFIG['pairs'], seed: int = 0,
                     mode_pairs: int = CHECK_CONFIG['mode_pairs']) -> CheckReport:
    """网格密度的对数凹检验

    检验 log f(mid) >= (log f(x) + log f(y))/2 - tol：全部轴向相邻三元组、
    pairs 个随机节点对、以及局部极大值之间的配对；任一端点为零时该不等式不作要求

    Args:
        f: 网格密度
        tol: 容差（对数尺度）
        pairs: 随机节点对数量
        seed: 随机种子

    Returns:
        CheckReport: 检验报告，反例为 [中点, x, y]
    """
    if pairs < 0:
        raise ValueError(f"节点对数量必须非负: {pairs}")
    values = np.asarray(f.values)
    if not values.max() > 0:
        return log_report(CheckReport.inconclusive('check_logconcave', tol, note="网格全为零"))
    L, positive = _log_values(values)
    best = _midpoint_test(L, positive, f.axes, pairs, seed, mode_pairs)
    samples = best['triples'] + best['pairs'] + best['mode_pairs']
    details = {k: best[k] for k in ('triples', 'pairs', 'mode_pairs')}
    details['zero_floor'] = GRID_CONFIG['zero_floor']
    if samples == 0:
        return log_report(CheckReport.inconclusive('check_logconcave', tol, note="没有可检验的节点三元组", details=details))
    report = CheckReport.from_margin('check_logconcave', best['margin'], tol, samples,
                                     best['witness'] if best['margin'] < -tol else None, details=details)
    if not report.failed and best['witness'] is not None:
        report.details['tightest'] = best['witness']
    return log_report(report)


# ---------------------------------------------------------------------------
# α-超对数凹证书
# ---------------------------------------------------------------------------

@dataclass
class SlcCertificate:
    """α-s.l.c. 证书"""
    alpha: float
    method: str                  # 'hessian-bound' | 'weighted-midpoint'
    margin: float
    samples: int
    tolerance: float
    sample_points: Optional[np.ndarray] = None
    witness: Optional[List[List[float]]] = None
    notes: List[str] = field(default_factory=list)

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError(f"alpha 必须非负: {self.alpha}")

    @property
    def valid(self) -> bool:
        return self.margin >= -self.tolerance

    def to_report(self) -> CheckReport:
        report = CheckReport.from_margin(
            'check_slc', self.margin, self.tolerance, self.samples,
            self.witness if not self.valid else None,
            notes=list(self.notes), details={'alpha': self.alpha, 'method': self.method},
        )
        return report


def _weighted_log_grid(f: GridFunction, alpha: float):
    X = f.nodes()
    values = np.asarray(f.values).ravel()
    L, positive = _log_values(values)
    L = L + 0.5 * alpha * np.sum(X * X, axis=1)
    return L.reshape(f.resolution), positive.reshape(f.resolution)


def check_slc(V: Union[Expr, Callable, GridFunction, MeasureSpec], alpha: float,
              dom: Optional[BoxDomain] = None, samples: int = CHECK_CONFIG['slc_samples'],
              tol: float = CHECK_CONFIG['slc_tolerance'], seed: int = 0,
              cfg: Optional[DiffConfig] = None, pairs: int = CHECK_CONFIG['pairs']) -> SlcCertificate:
    """α-超对数凹证书

    势函数输入：裕量 = 采样点上 λ_min(∇²V) - α 的最小值；
    网格密度输入：对 e^{α|x|²/2}·密度 做中点对数凹检验

    Args:
        V: 势函数（Expr 或向量化函数）、网格密度或测度描述
        alpha: 声称的参数 α >= 0
        dom: 采样区域（网格输入可省略）
        samples: 海森采样点数

    Returns:
        SlcCertificate: 证书，margin >= -tol 时有效
    """
    if alpha < 0:
        raise ValueError(f"alpha 必须非负: {alpha}")
    if isinstance(V, MeasureSpec):
        V = V.source if isinstance(V.source, GridFunction) else measure_potential(V)
    if isinstance(V, GridFunction):
        L, positive = _weighted_log_grid(V, alpha)
        best = _midpoint_test(L, positive, V.axes, pairs, seed, CHECK_CONFIG['mode_pairs'])
        count = best['triples'] + best['pairs'] + best['mode_pairs']
        cert = SlcCertificate(alpha, 'weighted-midpoint', best['margin'], count, tol,
                              witness=best['witness'])
    else:
        if dom is None:
            raise GeometryError("势函数输入需要给出采样区域")
        cfg = cfg or DiffConfig()
        cfg.validate_for(dom.diameter)
        rng = np.random.default_rng(seed)
        lo = np.asarray(dom.lo) + 1e-3 * dom.widths
        hi = np.asarray(dom.hi) - 1e-3 * dom.widths
        X = rng.uniform(lo, hi, size=(samples, dom.dim))
        X = np.vstack([0.5 * (lo + hi), X])
        H = hess_points(V, X, cfg)
        lam = np.linalg.eigvalsh(H)[:, 0] - alpha
        k = int(np.argmin(lam))
        cert = SlcCertificate(alpha, 'hessian-bound', float(lam[k]), X.shape[0], tol,
                              sample_points=X, witness=[X[k].tolist()])
    verdict = '有效' if cert.valid else '无效'
    logger.info(f"check_slc: α={alpha}, 方法={cert.method}, 裕量={cert.margin:.3e}, 证书{verdict}")
    return cert


# ---------------------------------------------------------------------------
# 上卷积与 Prékopa–Leindler
# ---------------------------------------------------------------------------

def _validate_fraction(s: float) -> float:
    if not 0.0 <= s <= 1.0:
        raise ValueError(f"s 必须在 [0, 1] 内: {s}")
    return float(s)


@require_same_geometry
def sup_convolution(f: GridDensity, g: GridDensity, s: float,
                    chunk: int = CHECK_CONFIG['chunk_size']) -> GridDensity:
    """上卷积 k(x) = sup{ f(u)^s g(v)^t : x = s·u + t·v }

    u 穷举 f 的正值节点，v 由 x 解出后多线性插值（区域外按 0）

    Args:
        f, g: 同几何网格密度
        s: 权重，t = 1 - s

    Returns:
        GridDensity: 满足全部已检验分解的最小网格函数
    """
    s = _validate_fraction(s)
    t = 1.0 - s
    if s == 1.0:
        return GridDensity(f.domain, f.values, {'source': 'sup_convolution', 's': s})
    if s == 0.0:
        return GridDensity(g.domain, g.values, {'source': 'sup_convolution', 's': s})
    X = f.nodes()
    fv = np.asarray(f.values).ravel()
    support = fv > 0
    U = X[support]
    fu = fv[support] ** s
    g_interp = RegularGridInterpolator(g.axes, g.values, method='linear', bounds_error=False, fill_value=0.0)
    out = np.zeros(X.shape[0])
    if U.shape[0] > 0:
        for start in range(0, X.shape[0], chunk):
            block = X[start:start + chunk]
            V = (block[:, None, :] - s * U[None, :, :]) / t
            gv = g_interp(V.reshape(-1, f.dim)).reshape(block.shape[0], U.shape[0])
            out[start:start + chunk] = np.max(fu[None, :] * np.maximum(gv, 0.0) ** t, axis=1)
    logger.debug(f"上卷积完成: s={s}, 输出节点={X.shape[0]}, u 节点={U.shape[0]}")
    return GridDensity(f.domain, out.reshape(f.resolution), {'source': 'sup_convolution', 's': s})


def snapped_max(a: np.ndarray, p: np.ndarray) -> np.ndarray:
    """下标空间点 p 的最近节点（平局时取全部）上 a 的最大值"""
    eps = 1e-9
    lo = np.ceil(p - 0.5 - eps).astype(np.int64)
    hi = np.floor(p + 0.5 + eps).astype(np.int64)
    shape = np.asarray(a.shape)
    best = np.full(p.shape[0], -np.inf)
    for bits in itertools.product((0, 1), repeat=p.shape[1]):
        idx = lo + np.asarray(bits)
        ok = np.all((idx <= hi) & (idx >= 0) & (idx < shape), axis=1)
        vals = np.full(p.shape[0], -np.inf)
        vals[ok] = a[tuple(idx[ok].T)]
        best = np.maximum(best, vals)
    return np.where(np.isfinite(best), best, 0.0)


def _check_pl_hypothesis(a: GridDensity, b: GridDensity, c: GridDensity, s: float,
                         pairs: int, seed: int):
    """抽查 a(sx+ty) >= b(x)^s c(y)^t，返回 (最差裕量, 反例, 样本数)"""
    t = 1.0 - s
    ib = np.argwhere(np.asarray(b.values) > 0)
    ic = np.argwhere(np.asarray(c.values) > 0)
    if ib.shape[0] == 0 or ic.shape[0] == 0:
        return float('inf'), None, 0
    rng = np.random.default_rng(seed)
    i1 = ib[rng.integers(ib.shape[0], size=pairs)]
    i2 = ic[rng.integers(ic.shape[0], size=pairs)]
    p = s * i1 + t * i2
    lhs = snapped_max(np.asarray(a.values), p)
    rhs = np.asarray(b.values)[tuple(i1.T)] ** s * np.asarray(c.values)[tuple(i2.T)] ** t
    margins = lhs - rhs
    k = int(np.argmin(margins))
    witness = [b.node_point(i1[k]), c.node_point(i2[k])]
    return float(margins[k]), witness, pairs


def _integral_against(rho: GridDensity, f: GridFunction) -> float:
    return integrate_values(np.asarray(rho.values) * np.asarray(f.values), rho.axes)


@require_same_geometry
def verify_prekopa_leindler(rho: GridDensity, b: GridDensity, c: GridDensity,
                            a: Optional[GridDensity] = None, s: float = 0.5,
                            tol: float = CHECK_CONFIG['tolerance'],
                            pairs: int = CHECK_CONFIG['hypothesis_pairs'], seed: int = 0) -> CheckReport:
    """Prékopa–Leindler 验证

    a 为 None 时取 a = sup_convolution(b, c, s)（自动满足假设）；
    否则先抽查假设，假设不成立时报告 precondition 失败

    Returns:
        CheckReport: 裕量 = ρ(a) - ρ(b)^s ρ(c)^t，details 中包含三个积分
    """
    s = _validate_fraction(s)
    t = 1.0 - s
    notes = []
    details: Dict[str, Any] = {'s': s}
    if a is None:
        a = sup_convolution(b, c, s)
        notes.append("a 取自上卷积（自动满足假设）")
        details['mode'] = 'auto'
    else:
        if not a.same_geometry(rho):
            raise GeometryError("verify_prekopa_leindler: a 的网格几何不一致")
        details['mode'] = 'supplied'
        h_margin, h_witness, h_samples = _check_pl_hypothesis(a, b, c, s, pairs, seed)
        details['hypothesis_margin'] = h_margin
        details['hypothesis_samples'] = h_samples
        if h_margin < -tol:
            report = CheckReport.from_margin('verify_prekopa_leindler', h_margin, tol, h_samples,
                                             h_witness, failure='precondition', notes=["假设 a(sx+ty) >= b(x)^s c(y)^t 不成立"],
                                             details=details)
            return log_report(report)
    ra = _integral_against(rho, a)
    rb = _integral_against(rho, b)
    rc = _integral_against(rho, c)
    margin = ra - rb ** s * rc ** t
    details.update({'rho_a': ra, 'rho_b': rb, 'rho_c': rc})
    witness = None
    if margin < -tol:
        witness = _pl_witness(rho, b, c)
    report = CheckReport.from_margin('verify_prekopa_leindler', margin, tol,
                                     int(np.prod(rho.resolution)), witness, notes=notes, details=details)
    return log_report(report)


def _pl_witness(rho: GridDensity, b: GridDensity, c: GridDensity):
    """结论失败时，以 b、c 的加权质心作为反例定位"""
    X = rho.nodes()
    pts = []
    for f in (b, c):
        w = (np.asarray(rho.values) * np.asarray(f.values)).ravel()
        pts.append((X * w[:, None]).sum(axis=0) / w.sum() if w.sum() > 0 else X[0])
    return pts


@require_same_geometry
def verify_slc_prekopa_leindler(rho: GridDensity, b: GridDensity, c: GridDensity,
                                alpha: float, s: float = 0.5,
                                tol: float = CHECK_CONFIG['tolerance']) -> CheckReport:
    """α-加权 Prékopa–Leindler：ρ 为 α-s.l.c. 当且仅当 e^{α|x|²/2}ρ 满足 PL 性质

    以 a = sup_convolution(b, c, s) 检验 ρ(a_α) >= ρ(b_α)^s ρ(c_α)^t，f_α = e^{α|x|²/2} f
    """
    if alpha < 0:
        raise ValueError(f"alpha 必须非负: {alpha}")
    X = rho.nodes()
    weight = np.exp(0.5 * alpha * np.sum(X * X, axis=1)).reshape(rho.resolution)
    weighted = GridDensity(rho.domain, np.asarray(rho.values) * weight, {'alpha': alpha})
    report = verify_prekopa_leindler(weighted, b, c, None, s, tol)
    report.kind = 'verify_slc_prekopa_leindler'
    report.details['alpha'] = alpha
    return report


# ---------------------------------------------------------------------------
# Brunn–Minkowski
# ---------------------------------------------------------------------------

@require_same_geometry
def minkowski_combine(A: GridMask, B: GridMask, s: float,
                      chunk: int = CHECK_CONFIG['chunk_size']) -> GridMask:
    """网格上的 Minkowski 组合 sA + tB

    节点 x 被标记当且仅当存在标记节点 u∈A, v∈B 使 |x - (su+tv)|∞ <= 半个网格；
    通过节点对膨胀计算，平局时两侧节点都标记
    """
    s = _validate_fraction(s)
    t = 1.0 - s
    out = np.zeros(A.resolution, dtype=bool)
    if A.is_empty or B.is_empty:
        logger.warning("minkowski_combine: A 或 B 为空集，输出空集")
        return GridMask(A.domain, out)
    ia = np.argwhere(A.marks)
    ib = np.argwhere(B.marks)
    if s == 1.0:
        return GridMask(A.domain, A.marks)
    if s == 0.0:
        return GridMask(B.domain, B.marks)
    eps = 1e-9
    shape = np.asarray(A.resolution)
    for start in range(0, ia.shape[0], chunk):
        block = ia[start:start + chunk]
        p = (s * block[:, None, :] + t * ib[None, :, :]).reshape(-1, ia.shape[1])
        lo = np.ceil(p - 0.5 - eps).astype(np.int64)
        hi = np.floor(p + 0.5 + eps).astype(np.int64)
        for bits in itertools.product((0, 1), repeat=ia.shape[1]):
            idx = lo + np.asarray(bits)
            ok = np.all((idx <= hi) & (idx >= 0) & (idx < shape), axis=1)
            out[tuple(idx[ok].T)] = True
    return GridMask(A.domain, out)


@require_same_geometry
def verify_brunn_minkowski(rho: GridDensity, A: GridMask, B: GridMask, s: float = 0.5,
                           tol: float = CHECK_CONFIG['tolerance']) -> CheckReport:
    """Brunn–Minkowski 验证：裕量 = ρ(sA+tB) - ρ(A)^s ρ(B)^t（集合测度按单元积分）"""
    s = _validate_fraction(s)
    t = 1.0 - s
    C = minkowski_combine(A, B, s)
    rA = masked_integral(rho, A)
    rB = masked_integral(rho, B)
    rC = masked_integral(rho, C)
    margin = rC - rA ** s * rB ** t
    details = {'s': s, 'rho_A': rA, 'rho_B': rB, 'rho_sA_tB': rC, 'combined_nodes': C.count,
               'cell_uncertainty': [float(h) for h in rho.spacing]}
    notes = ["sA+tB 按半网格就近取整，几何不确定度为一个网格"]
    witness = None
    if margin < -tol and not C.is_empty:
        witness = [C.marked_points().mean(axis=0)]
    report = CheckReport.from_margin('verify_brunn_minkowski', margin, tol, A.count + B.count,
                                     witness, notes=notes, details=details)
    return log_report(report)


# ---------------------------------------------------------------------------
# 卷积、边缘化、高斯光滑
# ---------------------------------------------------------------------------

def _separable_factors(arr: np.ndarray) -> Optional[List[np.ndarray]]:
    """秩一张量的逐轴因子（按总和归一化）；不可分时返回 None"""
    if arr.ndim < 2:
        return None
    total = float(arr.sum())
    if total <= 0:
        return None
    factors = []
    for axis in range(arr.ndim):
        others = tuple(k for k in range(arr.ndim) if k != axis)
        factors.append(arr.sum(axis=others))
    recon = factors[0]
    for fac in factors[1:]:
        recon = np.multiply.outer(recon, fac)
    recon = recon / total ** (arr.ndim - 1)
    if np.max(np.abs(recon - arr)) > 1e-12 * np.max(np.abs(arr)):
        return None
    factors[0] = factors[0] / total ** (arr.ndim - 1)
    return factors


def _full_convolution(fvals: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    factors = _separable_factors(kernel)
    if factors is None:
        return signal.convolve(fvals, kernel, mode='full', method='direct')
    out = fvals
    for axis, fac in enumerate(factors):
        shape = [1] * fvals.ndim
        shape[axis] = fac.shape[0]
        out = signal.convolve(out, fac.reshape(shape), mode='full', method='direct')
    return out


def _resample(full: np.ndarray, full_lo: np.ndarray, h: np.ndarray,
              out_dom: BoxDomain, res: Tuple[int, ...], c: float) -> np.ndarray:
    """在 c·x（x 为输出节点）处取完整卷积的值；对齐时直接取节点，否则多线性插值，支撑外为 0"""
    out_axes = out_dom.axes(res)
    positions = [(c * ax - lo) / hk for ax, lo, hk in zip(out_axes, full_lo, h)]
    if all(np.allclose(p, np.round(p), rtol=0.0, atol=1e-9) for p in positions):
        idx = [np.round(p).astype(np.int64) for p in positions]
        valid = [(i >= 0) & (i < n) for i, n in zip(idx, full.shape)]
        clipped = [np.clip(i, 0, n - 1) for i, n in zip(idx, full.shape)]
        out = full[np.ix_(*clipped)]
        mask = valid[0]
        for v in valid[1:]:
            mask = np.multiply.outer(mask, v)
        return np.where(mask, out, 0.0)
    full_axes = [lo + np.arange(n) * hk for lo, n, hk in zip(full_lo, full.shape, h)]
    interp = RegularGridInterpolator(full_axes, full, method='linear', bounds_error=False, fill_value=0.0)
    X = grid_nodes(out_dom, res) * c
    return interp(X).reshape(res)


def convolve(f: GridDensity, g: GridDensity, c: float = 1.0,
             out_dom: Optional[BoxDomain] = None, res=None) -> GridDensity:
    """卷积 f⋆_c g(x) = ∫ f(cx - y) g(y) dy

    对积分变量用梯形权重做直接求和；核为秩一张量时逐轴分离计算；
    结果截断到 out_dom（默认 f 的区域），截断质量超过阈值时告警

    Args:
        f, g: 网格间距相同的密度
        c: 缩放参数，c = 1 为普通卷积
        out_dom: 输出区域
        res: 输出分辨率（默认保持相同间距）

    Returns:
        GridDensity: 卷积结果
    """
    if f.dim != g.dim or not np.allclose(f.spacing, g.spacing, rtol=1e-12, atol=0.0):
        raise GeometryError("convolve: 两个网格的维数或间距不一致")
    if c == 0:
        raise ValueError("c 不能为 0")
    h = f.spacing
    kernel = np.asarray(g.values) * tensor_weights(g.axes)
    full = np.maximum(_full_convolution(np.asarray(f.values), kernel), 0.0)
    full_lo = np.asarray(f.domain.lo) + np.asarray(g.domain.lo)
    if out_dom is None:
        out_dom = f.domain
        res = f.resolution if res is None else res
    if res is None:
        res = tuple(int(round(w / hk)) + 1 for w, hk in zip(out_dom.widths, h))
    res = normalize_resolution(res, out_dom.dim)
    values = _resample(full, full_lo, h, out_dom, res, c)
    out = GridDensity(out_dom, values, {'source': 'convolve', 'c': c})
    full_mass = float(full.sum() * np.prod(h))
    leak = 1.0 - out.mass * abs(c) ** f.dim / full_mass if full_mass > 0 else 0.0
    out.meta['clipped_mass'] = leak
    if leak > GRID_CONFIG['mass_loss_warn']:
        logger.warning(f"卷积: 输出区域截断了 {leak:.2e} 比例的质量")
    return out


def marginalize(f: GridDensity, keep: Sequence[int]) -> GridDensity:
    """对未保留的坐标做 Simpson 积分；keep 为从 1 开始的轴编号"""
    keep = sorted({int(k) for k in keep})
    if not keep or len(keep) >= f.dim or keep[0] < 1 or keep[-1] > f.dim:
        raise GeometryError(f"keep 必须是 1..{f.dim} 的非空真子集: {keep}")
    kept = [k - 1 for k in keep]
    dropped = [k for k in range(f.dim) if k not in kept]
    values = np.asarray(f.values)
    for axis in reversed(dropped):
        values = simpson(values, x=f.axes[axis], axis=axis)
    return GridDensity(f.domain.select(kept), np.maximum(values, 0.0), {'source': 'marginalize', 'keep': keep})


def gaussian_smooth(rho: GridDensity, sigma: float) -> GridDensity:
    """与方差为 sigma 的归一化高斯核卷积（核在网格上离散归一化，半宽 8√σ）"""
    if sigma < 0:
        raise ValueError(f"sigma 必须非负: {sigma}")
    if sigma == 0:
        return GridDensity(rho.domain, rho.values, dict(rho.meta, smoothed=0.0))
    out = np.asarray(rho.values)
    for axis, hk in enumerate(rho.spacing):
        J = int(math.ceil(8.0 * math.sqrt(sigma) / hk))
        x = np.arange(-J, J + 1) * hk
        k = np.exp(-x * x / (2.0 * sigma))
        k /= k.sum()
        shape = [1] * rho.dim
        shape[axis] = k.shape[0]
        out = signal.convolve(out, k.reshape(shape), mode='same', method='direct')
    result = GridDensity(rho.domain, np.maximum(out, 0.0), {'source': 'gaussian_smooth', 'sigma': sigma,
                                                            'kernel': 'normalized'})
    leak = 1.0 - result.mass / rho.mass if rho.mass > 0 else 0.0
    result.meta['clipped_mass'] = leak
    if leak > GRID_CONFIG['mass_loss_warn']:
        logger.warning(f"高斯光滑: 区域边界截断了 {leak:.2e} 比例的质量")
    return result


@dataclass(frozen=True)
class SmoothingBound:
    """高斯光滑后的 δ 界：1/δ - 1/α > σ，即 δ < α/(1+ασ)"""
    alpha: float
    sigma: float
    delta_max: float
    certified: float
    strict: bool = True

    def admits(self, delta: float) -> bool:
        return delta <= self.certified


def slc_delta_bound(alpha: float, sigma: float) -> SmoothingBound:
    """α-s.l.c. 测度与方差 σ 的高斯卷积后的 δ_max = α/(1+ασ)

    边界本身不在证书内：只认证 δ <= δ_max·(1 - strict_factor)
    """
    if not alpha > 0:
        raise ValueError(f"alpha 必须为正: {alpha}")
    if sigma < 0:
        raise ValueError(f"sigma 必须非负: {sigma}")
    delta_max = alpha / (1.0 + alpha * sigma)
    return SmoothingBound(float(alpha), float(sigma), delta_max,
                          delta_max * (1.0 - CHECK_CONFIG['strict_factor']))


def box_average(f: GridFunction, z, eps: float) -> float:
    """立方体 z + ε·[-1/2, 1/2]^d 上的平均值 ε^{-d}∫f

    立方体端点落在节点上时直接对子网格做 Simpson；否则在立方体内建立细网格，三次插值后积分
    """
    z = as_points(z, f.dim)[0]
    h = f.spacing
    if np.any(eps < 2.0 * h - 1e-12):
        raise ValueError(f"eps 至少为两个网格: eps={eps}, 网格={h.tolist()}")
    lo = z - 0.5 * eps
    hi = z + 0.5 * eps
    tol = 1e-9 * np.max(f.domain.widths)
    if np.any(lo < np.asarray(f.domain.lo) - tol) or np.any(hi > np.asarray(f.domain.hi) + tol):
        raise GeometryError(f"立方体超出区域: 中心 {z.tolist()}, eps={eps}")
    i_lo = (lo - np.asarray(f.domain.lo)) / h
    i_hi = (hi - np.asarray(f.domain.lo)) / h
    aligned = np.allclose(i_lo, np.round(i_lo), atol=1e-9) and np.allclose(i_hi, np.round(i_hi), atol=1e-9)
    if aligned:
        a = np.round(i_lo).astype(int)
        b = np.round(i_hi).astype(int)
        sl = tuple(slice(int(i), int(j) + 1) for i, j in zip(a, b))
        axes = [ax[s] for ax, s in zip(f.axes, sl)]
        integral = integrate_values(np.asarray(f.values)[sl], axes)
    else:
        m = max(2 * int(math.ceil(eps / float(np.min(h)))) + 1, 33)
        axes = [np.linspace(l, u, m) for l, u in zip(lo, hi)]
        interp = RegularGridInterpolator(f.axes, f.values, method='cubic')
        mesh = np.meshgrid(*axes, indexing='ij')
        X = np.clip(np.stack([g.ravel() for g in mesh], axis=1), f.domain.lo, f.domain.hi)
        integral = integrate_values(interp(X).reshape((m,) * f.dim), axes)
    return float(integral / eps ** f.dim)
