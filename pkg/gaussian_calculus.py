# -*- coding: utf-8 -*-
"""
高斯微积分模块
有限维 (d <= 4) 的标准高斯空间：Gauss–Hermite 求积、散度、Carleman–Fredholm 行列式、
雅可比 Λ(U)、单调平移、Ornstein–Uhlenbeck 半群、条件期望、1-对数凹性，
以及高斯测度下的 Prékopa–Leindler / Brunn–Minkowski 验证
"""

import math
import warnings
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from loguru import logger
from numpy.polynomial.hermite import hermgauss
from scipy.linalg import LinAlgWarning, lu_factor

from config import CHECK_CONFIG, GAUSSIAN_CONFIG, GRID_CONFIG
from logconcave_ops import CheckReport, log_report, snapped_max, sup_convolution
from measure_core import (
    BoxDomain, GeometryError, GridDensity, GridFunction, GridMask,
    gaussian_weight, grid_nodes, integrate_values, masked_integral, normalize_resolution,
)
from potential_dsl import DiffConfig, Expr, as_points, evaluate_points, grad_points, parse

Source = Union[Expr, Callable, GridFunction]


# ---------------------------------------------------------------------------
# 高斯空间
# ---------------------------------------------------------------------------

class GaussianSpace:
    """标准高斯测度 N(0, I_d) 与张量 Gauss–Hermite 求积

    节点按 √2 缩放、权重除以 √π，使 Σ w·f(x) ≈ E[f(Z)]；
    构造时用 0、2、4 阶矩校验求积
    """

    def __init__(self, dim: int, order: Optional[int] = None):
        order = int(order or GAUSSIAN_CONFIG['order'])
        if not 1 <= dim <= GRID_CONFIG['max_dim']:
            raise GeometryError(f"高斯空间维数必须在 1..{GRID_CONFIG['max_dim']}: {dim}")
        if order < 3:
            raise ValueError(f"Gauss–Hermite 阶数至少为 3: {order}")
        x, w = hermgauss(order)
        self.dim = dim
        self.order = order
        self.nodes_1d = x * np.sqrt(2.0)
        self.weights_1d = w / np.sqrt(np.pi)
        self._validate()
        if order ** dim > GAUSSIAN_CONFIG['eval_chunk']:
            logger.warning(f"高斯空间节点数 {order ** dim} 较大，求期望将分批进行")

    def _validate(self):
        for k, expected in ((0, 1.0), (2, 1.0), (4, 3.0)):
            got = float(np.sum(self.weights_1d * self.nodes_1d ** k))
            if abs(got - expected) > 1e-10:
                raise ValueError(f"Gauss–Hermite 校验失败: E[x^{k}]={got}, 期望 {expected}")

    @property
    def size(self) -> int:
        return self.order ** self.dim

    @property
    def hull(self) -> float:
        """求积节点的最大坐标绝对值"""
        return float(np.max(np.abs(self.nodes_1d)))

    def node_chunks(self, chunk: Optional[int] = None) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
        chunk = chunk or GAUSSIAN_CONFIG['eval_chunk']
        shape = (self.order,) * self.dim
        for start in range(0, self.size, chunk):
            flat = np.arange(start, min(start + chunk, self.size))
            idx = np.unravel_index(flat, shape)
            X = np.stack([self.nodes_1d[i] for i in idx], axis=1)
            W = np.prod(np.stack([self.weights_1d[i] for i in idx], axis=1), axis=1)
            yield X, W

    def nodes(self) -> np.ndarray:
        return np.concatenate([X for X, _ in self.node_chunks()], axis=0)

    def weights(self) -> np.ndarray:
        return np.concatenate([W for _, W in self.node_chunks()], axis=0)

    def expect(self, func: Callable) -> float:
        """E[func(Z)]，按固定顺序分批累加"""
        total = 0.0
        for X, W in self.node_chunks():
            total += float(W @ evaluate_points(func, X))
        return total

    def __repr__(self) -> str:
        return f"GaussianSpace(d={self.dim}, order={self.order})"


# ---------------------------------------------------------------------------
# 平移映射
# ---------------------------------------------------------------------------

class _Combination:
    """a·f + b·g（逐点）"""

    def __init__(self, a: float, f: Callable, b: float, g: Callable, dim: int):
        self.a, self.f, self.b, self.g, self.dim = a, f, b, g, dim

    def __call__(self, X):
        return self.a * evaluate_points(self.f, X) + self.b * evaluate_points(self.g, X)


class _GradientComponent:
    """标量势函数 φ 的第 i 个偏导数（中心差分）"""

    def __init__(self, phi: Callable, index: int, dim: int, cfg: DiffConfig):
        self.phi, self.index, self.dim, self.cfg = phi, index, dim, cfg

    def __call__(self, X):
        return grad_points(self.phi, as_points(X, self.dim), self.cfg)[:, self.index]


class _Constant:
    def __init__(self, value: float, dim: int):
        self.value, self.dim = float(value), dim

    def __call__(self, X):
        return np.full(as_points(X, self.dim).shape[0], self.value)


@dataclass(frozen=True)
class ShiftMap:
    """向量场 u: R^d -> R^d，表示 U = I + u（或 T = I + ∇φ）"""

    components: Tuple[Callable, ...]
    cfg: DiffConfig = field(default_factory=DiffConfig)
    label: str = ''

    def __post_init__(self):
        object.__setattr__(self, 'components', tuple(self.components))
        for comp in self.components:
            dim = getattr(comp, 'dim', None)
            if dim is not None and dim != len(self.components):
                raise GeometryError(f"分量维数 {dim} 与分量个数 {len(self.components)} 不一致")

    @property
    def dim(self) -> int:
        return len(self.components)

    def __call__(self, points) -> np.ndarray:
        X = as_points(points, self.dim)
        return np.stack([evaluate_points(c, X) for c in self.components], axis=1)

    def jacobian(self, points) -> np.ndarray:
        """∇u，形状 (n, d, d)，J[:, i, j] = ∂u_i/∂x_j"""
        X = as_points(points, self.dim)
        return np.stack([grad_points(c, X, self.cfg) for c in self.components], axis=1)

    def combine(self, other: 'ShiftMap', a: float) -> 'ShiftMap':
        """M = a·U + (1-a)·V 的平移部分 a·u + (1-a)·v"""
        if other.dim != self.dim:
            raise GeometryError("combine: 维数不一致")
        comps = tuple(_Combination(a, f, 1.0 - a, g, self.dim) for f, g in zip(self.components, other.components))
        return ShiftMap(comps, self.cfg, f"{a}*{self.label or 'U'}+{1 - a}*{other.label or 'V'}")

    @classmethod
    def from_texts(cls, texts: Sequence[str], cfg: Optional[DiffConfig] = None, label: str = '') -> 'ShiftMap':
        dim = len(texts)
        return cls(tuple(parse(t, dim) for t in texts), cfg or DiffConfig(), label or ','.join(texts))

    @classmethod
    def gradient_of(cls, phi: Callable, dim: int, cfg: Optional[DiffConfig] = None) -> 'ShiftMap':
        """T = I + ∇φ 的平移部分"""
        cfg = cfg or DiffConfig()
        return cls(tuple(_GradientComponent(phi, i, dim, cfg) for i in range(dim)), cfg, 'grad')

    @classmethod
    def constant(cls, h: Sequence[float]) -> 'ShiftMap':
        h = list(h)
        return cls(tuple(_Constant(v, len(h)) for v in h), DiffConfig(), f"const{h}")


# ---------------------------------------------------------------------------
# 行列式、散度、雅可比
# ---------------------------------------------------------------------------

def det2(A) -> float:
    """Carleman–Fredholm 行列式 det₂(I+A) = det(I+A)·e^{-tr A}（部分主元 LU）"""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.shape[0] != A.shape[1]:
        raise GeometryError(f"det2 需要方阵: {A.shape}")
    M = np.eye(A.shape[0]) + A
    with warnings.catch_warnings():
        warnings.simplefilter('ignore', LinAlgWarning)
        warnings.simplefilter('ignore', RuntimeWarning)
        lu, piv = lu_factor(M, check_finite=True)
    diag = np.diag(lu)
    if np.any(diag == 0):
        return 0.0
    swaps = int(np.sum(piv != np.arange(piv.shape[0])))
    det = float(np.prod(diag)) * (-1.0 if swaps % 2 else 1.0)
    return det * math.exp(-float(np.trace(A)))


def det2_batch(A: np.ndarray) -> np.ndarray:
    """批量 det₂，A 形状 (n, d, d)"""
    A = np.asarray(A, dtype=float)
    d = A.shape[-1]
    return np.linalg.det(np.eye(d) + A) * np.exp(-np.trace(A, axis1=-2, axis2=-1))


def divergence_points(u: ShiftMap, points) -> np.ndarray:
    """高斯散度 δu(x) = <u(x), x> - tr ∇u(x)"""
    X = as_points(points, u.dim)
    return np.sum(u(X) * X, axis=1) - np.trace(u.jacobian(X), axis1=1, axis2=2)


def divergence(u: ShiftMap, x) -> float:
    return float(divergence_points(u, as_points(x, u.dim)[:1])[0])


@dataclass(frozen=True)
class JacobianEval:
    """Λ(U)(x) = det₂(I+∇u)·exp(-δu - |u|²/2) 的各个因子"""
    point: Tuple[float, ...]
    Lambda: float
    det2: float
    divergence: float
    half_norm_sq: float

    @property
    def j_value(self) -> float:
        """J(U) = det₂·e^{-δu}，满足 Λ = J·e^{-|u|²/2}"""
        return self.det2 * math.exp(-self.divergence)


def jacobian_points(U: ShiftMap, points) -> Dict[str, np.ndarray]:
    """批量计算 Λ(U) 及其因子"""
    X = as_points(points, U.dim)
    u = U(X)
    J = U.jacobian(X)
    d2 = det2_batch(J)
    div = np.sum(u * X, axis=1) - np.trace(J, axis1=1, axis2=2)
    half = 0.5 * np.sum(u * u, axis=1)
    with np.errstate(over='ignore', under='ignore'):
        lam = d2 * np.exp(-div - half)
    return {'points': X, 'Lambda': lam, 'det2': d2, 'divergence': div, 'half_norm_sq': half, 'u': u}


def lambda_jacobian(U: ShiftMap, x) -> JacobianEval:
    """单点 Λ(U)(x)"""
    r = jacobian_points(U, as_points(x, U.dim)[:1])
    return JacobianEval(tuple(float(v) for v in r['points'][0]), float(r['Lambda'][0]), float(r['det2'][0]),
                        float(r['divergence'][0]), float(r['half_norm_sq'][0]))


def export_jacobian_trace(U: ShiftMap, points) -> pd.DataFrame:
    """导出 (x, Λ, det₂, δu) 轨迹，便于绘图"""
    r = jacobian_points(U, points)
    columns = {f"x{i + 1}": r['points'][:, i] for i in range(U.dim)}
    columns.update({'Lambda': r['Lambda'], 'det2': r['det2'], 'divergence': r['divergence'],
                    'half_norm_sq': r['half_norm_sq']})
    return pd.DataFrame(columns)


def det2_logconcavity_check(pairs: int = 20, dim: int = 3, seed: int = 0,
                            tol: float = 1e-9) -> CheckReport:
    """t -> log det₂(I + (1-t)A + tB) 在 t ∈ {0, 1/2, 1} 上的中点凹性（对称矩阵，特征值 > -1）"""
    rng = np.random.default_rng(seed)
    worst = float('inf')
    witness = None
    for _ in range(pairs):
        mats = []
        for _ in range(2):
            Q, _ = np.linalg.qr(rng.normal(size=(dim, dim)))
            eig = rng.uniform(-0.9, 2.0, size=dim)
            mats.append((Q * eig) @ Q.T)
        A, B = mats
        logs = [math.log(det2(M)) for M in (A, 0.5 * (A + B), B)]
        margin = logs[1] - 0.5 * (logs[0] + logs[2])
        if margin < worst:
            worst = margin
            witness = [A.ravel(), B.ravel()]
    report = CheckReport.from_margin('det2_logconcavity', worst, tol, pairs,
                                     witness if worst < -tol else None, details={'dim': dim})
    return log_report(report)


# ---------------------------------------------------------------------------
# 单调平移与变量替换
# ---------------------------------------------------------------------------

def _directions(dim: int, count: int, rng: np.random.Generator) -> np.ndarray:
    if dim == 1:
        return np.array([[1.0], [-1.0]] * max(1, (count + 1) // 2))[:max(count, 2)]
    D = rng.normal(size=(count, dim))
    return D / np.linalg.norm(D, axis=1, keepdims=True)


def check_monotone(U: ShiftMap, sample_w: int = GAUSSIAN_CONFIG['w_samples'],
                   sample_h: int = 16, tol: float = CHECK_CONFIG['tolerance'], seed: int = 0,
                   radius: float = GAUSSIAN_CONFIG['monotone_radius'],
                   radii: int = GAUSSIAN_CONFIG['monotone_radii']) -> CheckReport:
    """单调平移检验：(h + u(w+h) - u(w), h) >= 0

    w 为带种子的标准高斯样本，h 取径向层 × 方向网格

    Returns:
        CheckReport: 反例为 [w, h]
    """
    if sample_w < 1 or sample_h < 1:
        raise ValueError("采样数必须 >= 1")
    rng = np.random.default_rng(seed)
    W = rng.normal(size=(sample_w, U.dim))
    D = _directions(U.dim, sample_h, rng)
    R = np.linspace(radius / radii, radius, radii)
    H = (R[:, None, None] * D[None, :, :]).reshape(-1, U.dim)
    Wr = np.repeat(W, H.shape[0], axis=0)
    Hr = np.tile(H, (sample_w, 1))
    uw = U(W)
    values = np.sum((Hr + U(Wr + Hr) - np.repeat(uw, H.shape[0], axis=0)) * Hr, axis=1)
    k = int(np.argmin(values))
    report = CheckReport.from_margin('check_monotone', float(values[k]), tol, values.shape[0],
                                     [Wr[k], Hr[k]] if values[k] < -tol else None,
                                     notes=["按增量形式 (h + u(w+h) - u(w), h) 检验"])
    return log_report(report)


def verify_change_of_variables(U: ShiftMap, f: Callable, space: GaussianSpace,
                               tol: float = CHECK_CONFIG['tolerance'], seed: int = 0,
                               require_monotone: bool = True) -> CheckReport:
    """E[f∘U·Λ(U)] <= E[f] 的 Gauss–Hermite 验证

    Returns:
        CheckReport: 裕量 = E[f] - E[f∘U·Λ(U)]，|裕量| <= tol 时 details['equality'] 为真
    """
    if U.dim != space.dim:
        raise GeometryError("平移映射与高斯空间维数不一致")
    if require_monotone:
        mono = check_monotone(U, seed=seed, tol=tol)
        if mono.failed:
            mono.kind = 'verify_change_of_variables'
            mono.failure = 'precondition'
            mono.notes.append("U 不是单调平移")
            return log_report(mono)
    ef = 0.0
    efu = 0.0
    count = 0
    worst_gain, worst_node = -np.inf, None
    for X, W in space.node_chunks():
        fx = evaluate_points(f, X)
        r = jacobian_points(U, X)
        Y = X + r['u']
        fy = evaluate_points(f, Y)
        neg = np.concatenate([fx, fy]) < 0
        if neg.any():
            k = int(np.argmax(neg))
            point = np.concatenate([X, Y])[k]
            report = CheckReport.from_margin('verify_change_of_variables', float(np.concatenate([fx, fy])[k]),
                                             0.0, count + X.shape[0], [point], failure='precondition',
                                             notes=["f 在求积节点上取负值"])
            return log_report(report)
        gain = W * (fy * r['Lambda'] - fx)
        k = int(np.argmax(gain))
        if gain[k] > worst_gain:
            worst_gain, worst_node = float(gain[k]), X[k]
        ef += float(W @ fx)
        efu += float(W @ (fy * r['Lambda']))
        count += X.shape[0]
    margin = ef - efu
    details = {'E_f': ef, 'E_fU_Lambda': efu, 'equality': abs(margin) <= tol, 'order': space.order}
    report = CheckReport.from_margin('verify_change_of_variables', margin, tol, count,
                                     [worst_node] if margin < -tol else None, details=details)
    return log_report(report)


# ---------------------------------------------------------------------------
# Ornstein–Uhlenbeck 半群与条件期望
# ---------------------------------------------------------------------------

def _as_callable(f: Source, log_space: bool = False) -> Callable:
    if isinstance(f, GridFunction):
        def interp(X, grid=f):
            return grid(X, log_space=log_space)
        interp.dim = f.dim
        return interp
    return f


def ou_evaluate(f: Source, tau: float, space: GaussianSpace, points) -> np.ndarray:
    """P_τ f(x) = E[f(e^{-τ}x + √(1-e^{-2τ}) Z)]（Mehler 公式，Z 用 Gauss–Hermite 求积）

    网格输入在区域外按边界值截断
    """
    if tau < 0:
        raise ValueError(f"tau 必须非负: {tau}")
    X = as_points(points, space.dim)
    func = _as_callable(f)
    if tau == 0:
        return evaluate_points(func, X)
    decay = math.exp(-tau)
    spread = math.sqrt(-math.expm1(-2.0 * tau))
    Z = space.nodes()
    W = space.weights()
    block = max(1, GAUSSIAN_CONFIG['eval_chunk'] // Z.shape[0])
    out = np.empty(X.shape[0])
    for start in range(0, X.shape[0], block):
        xb = X[start:start + block]
        Y = decay * xb[:, None, :] + spread * Z[None, :, :]
        vals = evaluate_points(func, Y.reshape(-1, space.dim)).reshape(xb.shape[0], Z.shape[0])
        out[start:start + block] = vals @ W
    return out


class OUSmoothed:
    """P_τ f 作为可调用对象，便于半群复合与有限差分"""

    def __init__(self, f: Source, tau: float, space: GaussianSpace):
        self.f, self.tau, self.space, self.dim = f, tau, space, space.dim

    def __call__(self, X):
        return ou_evaluate(self.f, self.tau, self.space, X)


def _grid_result(domain: BoxDomain, values: np.ndarray, meta: Dict[str, Any]) -> GridFunction:
    if np.all(values >= 0):
        return GridDensity(domain, values, meta)
    return GridFunction(domain, values, meta)


def _output_geometry(f: Source, dom: Optional[BoxDomain], res, dim: int):
    if dom is None:
        if isinstance(f, GridFunction):
            return f.domain, f.resolution
        dom = BoxDomain.cube(-8.0, 8.0, dim)
    if res is None:
        res = f.resolution if isinstance(f, GridFunction) and f.domain == dom else (129 if dim == 1 else 65)
    return dom, normalize_resolution(res, dom.dim)


def ou_apply(f: Source, tau: float, space: GaussianSpace,
             dom: Optional[BoxDomain] = None, res=None) -> GridFunction:
    """P_τ f 在网格上的取值；τ = 0 时原样返回（网格输入）或直接离散化"""
    if tau < 0:
        raise ValueError(f"tau 必须非负: {tau}")
    dom, res = _output_geometry(f, dom, res, space.dim)
    values = ou_evaluate(f, tau, space, grid_nodes(dom, res)).reshape(res)
    return _grid_result(dom, values, {'source': 'ou_apply', 'tau': tau})


def conditional_expectation(f: Source, keep: Sequence[int], space: GaussianSpace,
                            dom: Optional[BoxDomain] = None, res=None) -> GridFunction:
    """对未保留坐标按标准高斯积分（Gauss–Hermite）；keep 为从 1 开始的轴编号

    Returns:
        GridFunction: 保留轴上的网格（非负时为 GridDensity）
    """
    keep = sorted({int(k) for k in keep})
    d = space.dim
    if not keep or len(keep) >= d or keep[0] < 1 or keep[-1] > d:
        raise GeometryError(f"keep 必须是 1..{d} 的非空真子集: {keep}")
    kept = [k - 1 for k in keep]
    dropped = [k for k in range(d) if k not in kept]
    if dom is None:
        dom = f.domain.select(kept) if isinstance(f, GridFunction) else BoxDomain.cube(-8.0, 8.0, len(kept))
    if dom.dim != len(kept):
        raise GeometryError("输出区域维数与保留轴数不一致")
    if res is None:
        res = tuple(f.resolution[k] for k in kept) if isinstance(f, GridFunction) else (129 if len(kept) == 1 else 65)
    res = normalize_resolution(res, dom.dim)
    func = _as_callable(f)
    sub = GaussianSpace(len(dropped), space.order)
    Z = sub.nodes()
    W = sub.weights()
    Xk = grid_nodes(dom, res)
    block = max(1, GAUSSIAN_CONFIG['eval_chunk'] // Z.shape[0])
    out = np.empty(Xk.shape[0])
    for start in range(0, Xk.shape[0], block):
        xb = Xk[start:start + block]
        full = np.empty((xb.shape[0], Z.shape[0], d))
        full[:, :, kept] = xb[:, None, :]
        full[:, :, dropped] = Z[None, :, :]
        vals = evaluate_points(func, full.reshape(-1, d)).reshape(xb.shape[0], Z.shape[0])
        out[start:start + block] = vals @ W
    return _grid_result(dom, out.reshape(res), {'source': 'conditional_expectation', 'keep': keep})


# ---------------------------------------------------------------------------
# 1-对数凹性与保持性
# ---------------------------------------------------------------------------

def _log_of(func: Callable, X: np.ndarray) -> np.ndarray:
    values = evaluate_points(func, X)
    if np.any(values < 0):
        k = int(np.argmax(values < 0))
        raise ValueError(f"函数在 {X[k].tolist()} 处为负")
    with np.errstate(divide='ignore'):
        return np.log(values)


def check_one_logconcave(f: Source, space: GaussianSpace, s: float = 0.5,
                         hk_samples: int = GAUSSIAN_CONFIG['hk_samples'],
                         tol: float = CHECK_CONFIG['tolerance'], seed: int = 0,
                         w_samples: int = GAUSSIAN_CONFIG['w_samples'],
                         lattice_radius: Optional[float] = None,
                         lattice_points: int = GAUSSIAN_CONFIG['lattice_points']) -> CheckReport:
    """1-对数凹检验

    f(w+sh+th')·e^{-|sh+th'|²/2} >= (f(w+h)e^{-|h|²/2})^s (f(w+h')e^{-|h'|²/2})^t

    w 为带种子的高斯样本（首个样本固定为 0），h、h' 取半径 R 的格点（网格输入时 R 为区域宽度的 1/4）；
    裕量取相对形式 左边/右边 - 1，右边为零时不作要求；网格输入中越出区域的样本跳过并计数

    Returns:
        CheckReport: 反例为 [w, h, h']
    """
    if not 0.0 <= s <= 1.0:
        raise ValueError(f"s 必须在 [0, 1] 内: {s}")
    t = 1.0 - s
    d = space.dim
    is_grid = isinstance(f, GridFunction)
    if is_grid and f.dim != d:
        raise GeometryError("网格维数与高斯空间维数不一致")
    if lattice_radius is None:
        lattice_radius = float(np.min(f.domain.widths)) / 4.0 if is_grid else GAUSSIAN_CONFIG['lattice_radius']
    func = _as_callable(f, log_space=True)
    rng = np.random.default_rng(seed)
    W = np.vstack([np.zeros((1, d)), rng.normal(size=(max(w_samples, 1) - 1, d))])
    axis = np.linspace(-lattice_radius, lattice_radius, lattice_points)
    lattice = np.stack([m.ravel() for m in np.meshgrid(*([axis] * d), indexing='ij')], axis=1)
    i1 = rng.integers(lattice.shape[0], size=(W.shape[0], hk_samples))
    i2 = rng.integers(lattice.shape[0], size=(W.shape[0], hk_samples))
    Wr = np.repeat(W, hk_samples, axis=0)
    H = lattice[i1.ravel()]
    K = lattice[i2.ravel()]
    M = s * H + t * K
    P0, P1, P2 = Wr + M, Wr + H, Wr + K
    keep = np.ones(Wr.shape[0], dtype=bool)
    skipped = 0
    if is_grid:
        for P in (P0, P1, P2):
            keep &= f.domain.contains(P)
        skipped = int((~keep).sum())
        if skipped:
            logger.warning(f"1-对数凹检验: {skipped} 个样本越出区域，已跳过")
    Wr, H, K, M, P0, P1, P2 = (A[keep] for A in (Wr, H, K, M, P0, P1, P2))
    details = {'skipped': skipped, 'lattice_radius': lattice_radius, 's': s, 'w_samples': int(W.shape[0])}
    if Wr.shape[0] == 0:
        return log_report(CheckReport.inconclusive('check_one_logconcave', tol, 0, "全部样本越出区域", details=details))
    l0, l1, l2 = _log_of(func, P0), _log_of(func, P1), _log_of(func, P2)
    rhs_log = s * (l1 - 0.5 * np.sum(H * H, axis=1)) + t * (l2 - 0.5 * np.sum(K * K, axis=1))
    lhs_log = l0 - 0.5 * np.sum(M * M, axis=1)
    active = np.isfinite(rhs_log)
    if not active.any():
        return log_report(CheckReport.inconclusive('check_one_logconcave', tol, int(Wr.shape[0]),
                                                    "右边恒为零", details=details))
    with np.errstate(over='ignore', invalid='ignore'):
        margins = np.exp(lhs_log[active] - rhs_log[active]) - 1.0
    idx = np.flatnonzero(active)
    k = int(np.argmin(margins))
    j = idx[k]
    details['active'] = int(active.sum())
    report = CheckReport.from_margin('check_one_logconcave', float(margins[k]), tol, int(active.sum()),
                                     [Wr[j], H[j], K[j]] if margins[k] < -tol else None, details=details)
    return log_report(report)


def verify_preservation(f: Source, mode: str, space: GaussianSpace, s: float = 0.5,
                        tol: float = CHECK_CONFIG['tolerance'], keep: Optional[Sequence[int]] = None,
                        tau: Optional[float] = None, dom: Optional[BoxDomain] = None, res=None,
                        seed: int = 0, hk_samples: int = GAUSSIAN_CONFIG['hk_samples']) -> CheckReport:
    """1-对数凹性在条件期望 (mode='conditional') 或 OU 半群 (mode='ou') 下的保持性

    先检验输入，再对输出网格重新检验；条件期望模式下 h、k 只取保留轴方向
    """
    pre = check_one_logconcave(f, space, s, hk_samples, tol, seed)
    if pre.failed:
        pre.kind = 'verify_preservation'
        pre.failure = 'precondition'
        pre.notes.append("输入不是 1-对数凹函数")
        return log_report(pre)
    if mode == 'conditional':
        if keep is None:
            raise ValueError("conditional 模式需要 keep")
        out = conditional_expectation(f, keep, space, dom, res)
        out_space = GaussianSpace(out.dim, space.order)
    elif mode == 'ou':
        if tau is None:
            raise ValueError("ou 模式需要 tau")
        out = ou_apply(f, tau, space, dom, res)
        out_space = space
    else:
        raise ValueError(f"未知模式: {mode}")
    if np.any(out.values < 0):
        raise ValueError("输出含负值，输入不满足非负性")
    post = check_one_logconcave(out, out_space, s, hk_samples, tol, seed)
    post.kind = 'verify_preservation'
    post.details.update({'mode': mode, 'keep': list(keep) if keep else None, 'tau': tau,
                         'input_margin': pre.worst_margin})
    return log_report(post)


# ---------------------------------------------------------------------------
# 高斯 Prékopa–Leindler
# ---------------------------------------------------------------------------

def gaussian_sup_convolution(b: GridDensity, c: GridDensity, s: float) -> GridDensity:
    """满足高斯 PL 假设的最小 a：a(z) = e^{|z|²/2}·sup (b̃(x))^s (c̃(y))^t，b̃ = b·e^{-|x|²/2}"""
    X = b.nodes()
    tilt = np.exp(-0.5 * np.sum(X * X, axis=1)).reshape(b.resolution)
    bt = GridDensity(b.domain, np.asarray(b.values) * tilt)
    ct = GridDensity(c.domain, np.asarray(c.values) * tilt)
    at = sup_convolution(bt, ct, s)
    with np.errstate(over='ignore'):
        values = np.asarray(at.values) / tilt
    values = np.where(np.asarray(at.values) > 0, values, 0.0)
    return GridDensity(b.domain, values, {'source': 'gaussian_sup_convolution', 's': s})


def _first_geometry(*items):
    for item in items:
        if isinstance(item, GridFunction):
            return item.domain, item.resolution
        if isinstance(item, GridMask):
            return item.domain, item.resolution
    return None


def _on_grid(item, domain: BoxDomain, res) -> Tuple[np.ndarray, bool]:
    """转换为节点值数组，并标明是否为集合（掩码）"""
    if isinstance(item, GridMask):
        if item.domain != domain or item.resolution != tuple(res):
            raise GeometryError("掩码几何不一致")
        return item.marks.astype(float), True
    if isinstance(item, GridFunction):
        if item.domain != domain or item.resolution != tuple(res):
            raise GeometryError("网格几何不一致")
        return np.asarray(item.values, dtype=float), False
    return evaluate_points(item, grid_nodes(domain, res)).reshape(res), False


def verify_gaussian_pl(a, b, c, q: Optional[Callable] = None, s: float = 0.5,
                       space: Optional[GaussianSpace] = None, tol: float = CHECK_CONFIG['tolerance'],
                       pairs: int = CHECK_CONFIG['hypothesis_pairs'], seed: int = 0,
                       dom: Optional[BoxDomain] = None, res=None) -> CheckReport:
    """高斯测度下的 Prékopa–Leindler（集合输入时即高斯 Brunn–Minkowski）

    假设 a(w+sh+tk)e^{-|sh+tk|²/2} >= (b(w+h)e^{-|h|²/2})^s (c(w+k)e^{-|k|²/2})^t 中 w 可以消去，
    等价于 a(sx+ty) >= b(x)^s c(y)^t e^{-st|x-y|²/2}，按此形式抽查；
    a 为 None 时取 gaussian_sup_convolution(b, c, s)

    Args:
        a, b, c: Expr/可调用对象、网格函数或掩码
        q: 相对密度 dν = q dμ（None 表示 q ≡ 1），须为 1-对数凹

    Returns:
        CheckReport: 裕量 = ν(a) - ν(b)^s ν(c)^t
    """
    if not 0.0 <= s <= 1.0:
        raise ValueError(f"s 必须在 [0, 1] 内: {s}")
    t = 1.0 - s
    geometry = _first_geometry(a, b, c)
    if space is None:
        dim = geometry[0].dim if geometry else getattr(b, 'dim', 1)
        space = GaussianSpace(dim)
    details: Dict[str, Any] = {'s': s}
    notes: List[str] = []
    if q is not None:
        q_report = check_one_logconcave(q, space, 0.5, tol=tol, seed=seed)
        details['q_margin'] = q_report.worst_margin
        if q_report.failed:
            q_report.kind = 'verify_gaussian_pl'
            q_report.failure = 'precondition'
            q_report.notes.append("q 不是 1-对数凹函数")
            return log_report(q_report)
    if a is None:
        if geometry is None:
            dom = dom or BoxDomain.cube(-8.0, 8.0, space.dim)
            geometry = (dom, normalize_resolution(res if res is not None else 257, dom.dim))
        domain, resolution = geometry
        bv, _ = _on_grid(b, domain, resolution)
        cv, _ = _on_grid(c, domain, resolution)
        a = gaussian_sup_convolution(GridDensity(domain, bv), GridDensity(domain, cv), s)
        details['mode'] = 'auto'
        notes.append("a 取自高斯上卷积（自动满足假设）")
    else:
        details['mode'] = 'supplied'

    if geometry is None:
        # 全部为表达式：Gauss–Hermite 求积
        qf = q if q is not None else None
        integrals = []
        for item in (a, b, c):
            integrand = (lambda X, g=item: evaluate_points(g, X) * evaluate_points(qf, X)) if qf else item
            integrals.append(space.expect(integrand))
        if details['mode'] == 'supplied':
            h_margin, h_witness, h_count = _gaussian_hypothesis_expr(a, b, c, s, space.dim, pairs, seed)
            details['hypothesis_margin'] = h_margin
            if h_margin < -tol:
                return log_report(CheckReport.from_margin('verify_gaussian_pl', h_margin, tol, h_count, h_witness,
                                                           failure='precondition', details=details,
                                                           notes=["高斯 PL 假设不成立"]))
        samples = space.size
        details['quadrature'] = 'gauss-hermite'
    else:
        domain, resolution = geometry
        X = grid_nodes(domain, resolution)
        qv = evaluate_points(q, X) if q is not None else np.ones(X.shape[0])
        weight = GridDensity(domain, (qv * gaussian_weight(X)).reshape(resolution))
        arrays = [_on_grid(item, domain, resolution) for item in (a, b, c)]
        if details['mode'] == 'supplied':
            h_margin, h_witness, h_count = _gaussian_hypothesis_grid(arrays, domain, resolution, s, pairs, seed)
            details['hypothesis_margin'] = h_margin
            if h_margin < -tol:
                return log_report(CheckReport.from_margin('verify_gaussian_pl', h_margin, tol, h_count, h_witness,
                                                           failure='precondition', details=details,
                                                           notes=["高斯 PL 假设不成立"]))
        integrals = []
        for values, is_mask in arrays:
            if is_mask:
                integrals.append(masked_integral(weight, GridMask(domain, values > 0)))
            else:
                integrals.append(integrate_values(values * np.asarray(weight.values), weight.axes))
        samples = int(np.prod(resolution))
        details['quadrature'] = 'grid'
    nu_a, nu_b, nu_c = integrals
    margin = nu_a - nu_b ** s * nu_c ** t
    details.update({'nu_a': nu_a, 'nu_b': nu_b, 'nu_c': nu_c})
    witness = None
    if margin < -tol:
        if geometry is None:
            witness = [_deficit_node_expr(a, b, c, q, s, space)]
        else:
            witness = [_deficit_node_grid(arrays, weight, X, s)]
    report = CheckReport.from_margin('verify_gaussian_pl', margin, tol, samples, witness,
                                     notes=notes, details=details)
    return log_report(report)


def _deficit(av: np.ndarray, bv: np.ndarray, cv: np.ndarray, s: float) -> np.ndarray:
    """逐点亏量 b^s c^(1-s) - a"""
    with np.errstate(invalid='ignore', divide='ignore'):
        out = np.power(np.maximum(bv, 0.0), s) * np.power(np.maximum(cv, 0.0), 1.0 - s) - av
    return np.where(np.isfinite(out), out, -np.inf)


def _deficit_node_expr(a, b, c, q: Optional[Callable], s: float, space: GaussianSpace) -> np.ndarray:
    """加权亏量最大的求积节点"""
    best, node = -np.inf, None
    for X, W in space.node_chunks():
        weight = W * evaluate_points(q, X) if q is not None else W
        gap = weight * _deficit(evaluate_points(a, X), evaluate_points(b, X), evaluate_points(c, X), s)
        k = int(np.argmax(gap))
        if node is None or gap[k] > best:
            best, node = float(gap[k]), X[k]
    return node


def _deficit_node_grid(arrays, weight: GridDensity, X: np.ndarray, s: float) -> np.ndarray:
    """加权亏量最大的网格节点"""
    av, bv, cv = (np.ravel(values) for values, _ in arrays)
    gap = np.ravel(weight.values) * _deficit(av, bv, cv, s)
    return X[int(np.argmax(gap))]


def _gaussian_hypothesis_grid(arrays, domain: BoxDomain, res, s: float, pairs: int, seed: int):
    t = 1.0 - s
    (av, _), (bv, _), (cv, _) = arrays
    ib = np.argwhere(bv > 0)
    ic = np.argwhere(cv > 0)
    if ib.shape[0] == 0 or ic.shape[0] == 0:
        return float('inf'), None, 0
    rng = np.random.default_rng(seed)
    i1 = ib[rng.integers(ib.shape[0], size=pairs)]
    i2 = ic[rng.integers(ic.shape[0], size=pairs)]
    axes = domain.axes(res)
    x = np.stack([axes[k][i1[:, k]] for k in range(domain.dim)], axis=1)
    y = np.stack([axes[k][i2[:, k]] for k in range(domain.dim)], axis=1)
    lhs = snapped_max(av, s * i1 + t * i2)
    rhs = bv[tuple(i1.T)] ** s * cv[tuple(i2.T)] ** t * np.exp(-0.5 * s * t * np.sum((x - y) ** 2, axis=1))
    margins = lhs - rhs
    k = int(np.argmin(margins))
    # 以 w = 0 表示：h = x, k = y
    return float(margins[k]), [np.zeros(domain.dim), x[k], y[k]], pairs


def _gaussian_hypothesis_expr(a, b, c, s: float, dim: int, pairs: int, seed: int):
    t = 1.0 - s
    rng = np.random.default_rng(seed)
    R = GAUSSIAN_CONFIG['lattice_radius']
    axis = np.linspace(-R, R, GAUSSIAN_CONFIG['lattice_points'])
    lattice = np.stack([m.ravel() for m in np.meshgrid(*([axis] * dim), indexing='ij')], axis=1)
    W = rng.normal(size=(pairs, dim))
    H = lattice[rng.integers(lattice.shape[0], size=pairs)]
    K = lattice[rng.integers(lattice.shape[0], size=pairs)]
    M = s * H + t * K
    lhs = evaluate_points(a, W + M) * np.exp(-0.5 * np.sum(M * M, axis=1))
    rhs = ((evaluate_points(b, W + H) * np.exp(-0.5 * np.sum(H * H, axis=1))) ** s
           * (evaluate_points(c, W + K) * np.exp(-0.5 * np.sum(K * K, axis=1))) ** t)
    margins = lhs - rhs
    k = int(np.argmin(margins))
    return float(margins[k]), [W[k], H[k], K[k]], pairs


# ---------------------------------------------------------------------------
# 混合平移与光滑化序列
# ---------------------------------------------------------------------------

def mixture_lambda(T1: ShiftMap, T2: ShiftMap, a: float, points: Union[int, np.ndarray] = 200,
                   tol: float = 1e-8, seed: int = 0, require_monotone: bool = True) -> CheckReport:
    """Λ(aT₁ + bT₂) >= Λ(T₁)^a Λ(T₂)^b 的逐点对数裕量

    points 为整数时取带种子的高斯样本；Λ <= 0 的点记为不确定并排除
    """
    if not 0.0 <= a <= 1.0:
        raise ValueError(f"a 必须在 [0, 1] 内: {a}")
    b = 1.0 - a
    if require_monotone:
        for T in (T1, T2):
            mono = check_monotone(T, seed=seed)
            if mono.failed:
                mono.kind = 'mixture_lambda'
                mono.failure = 'precondition'
                mono.notes.append(f"{T.label or 'T'} 不是单调平移")
                return log_report(mono)
    if np.isscalar(points):
        X = np.random.default_rng(seed).normal(size=(int(points), T1.dim))
    else:
        X = as_points(points, T1.dim)
    M = T1.combine(T2, a)
    lm = jacobian_points(M, X)['Lambda']
    l1 = jacobian_points(T1, X)['Lambda']
    l2 = jacobian_points(T2, X)['Lambda']
    ok = (lm > 0) & (l1 > 0) & (l2 > 0)
    undecided = int((~ok).sum())
    details = {'a': a, 'inconclusive_points': undecided}
    if not ok.any():
        return log_report(CheckReport.inconclusive('mixture_lambda', tol, X.shape[0], "所有点上 Λ <= 0", details=details))
    margins = np.log(lm[ok]) - a * np.log(l1[ok]) - b * np.log(l2[ok])
    k = int(np.argmin(margins))
    report = CheckReport.from_margin('mixture_lambda', float(margins[k]), tol, int(ok.sum()),
                                     [X[ok][k]] if margins[k] < -tol else None, details=details)
    if undecided:
        report.notes.append(f"{undecided} 个点 Λ <= 0，记为不确定")
    return log_report(report)


@dataclass
class SmoothingSequence:
    """Λ(U_n) 序列与 liminf 近似"""
    n_list: List[int]
    grids: List[GridFunction]
    liminf: GridFunction
    diagnostics: Dict[str, Any]
    notes: List[str] = field(default_factory=list)


def smoothing_sequence_lambda(U: ShiftMap, n_list: Sequence[int], space: GaussianSpace,
                              dom: Optional[BoxDomain] = None, res=None,
                              tail: int = GAUSSIAN_CONFIG['liminf_tail']) -> SmoothingSequence:
    """u_n = P_{1/n} u（逐分量），在网格上计算 Λ(U_n)；liminf 以尾部逐点最小值近似

    Returns:
        SmoothingSequence: 各 n 的 Λ 网格、liminf 近似与收敛诊断
    """
    if GAUSSIAN_CONFIG['smoothing_family'] != 'ou':
        raise ValueError(f"未知的光滑化族: {GAUSSIAN_CONFIG['smoothing_family']}")
    n_list = [int(n) for n in n_list]
    if not n_list or min(n_list) < 1:
        raise ValueError(f"n_list 必须为正整数列表: {n_list}")
    dom = dom or BoxDomain.cube(-3.0, 3.0, U.dim)
    res = normalize_resolution(res if res is not None else (65 if U.dim == 1 else 33), dom.dim)
    X = grid_nodes(dom, res)
    grids = []
    for n in n_list:
        Un = ShiftMap(tuple(OUSmoothed(c, 1.0 / n, space) for c in U.components), U.cfg, f"P_1/{n} u")
        lam = jacobian_points(Un, X)['Lambda']
        grids.append(GridFunction(dom, lam.reshape(res), {'n': n}))
    tail = max(1, min(tail, len(grids)))
    stack = np.stack([g.values for g in grids[-tail:]])
    liminf = GridFunction(dom, stack.min(axis=0), {'tail': tail, 'approximation': 'running-min'})
    diffs = [float(np.max(np.abs(grids[i + 1].values - grids[i].values))) for i in range(len(grids) - 1)]
    diagnostics = {
        'successive_sup_diff': diffs,
        'ratio': diffs[-1] / diffs[-2] if len(diffs) >= 2 and diffs[-2] > 0 else None,
        'tail_spread': float(np.max(stack.max(axis=0) - stack.min(axis=0))),
    }
    logger.info(f"光滑化序列: n={n_list}, 尾部长度={tail}, 尾部离差={diagnostics['tail_spread']:.3e}")
    return SmoothingSequence(n_list, grids, liminf, diagnostics,
                             ["liminf 不可计算，以尾部逐点最小值近似"])
