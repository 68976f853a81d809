# -*- coding: utf-8 -*-
"""
测度表示模块
张量网格上的测度表示、数值积分，以及指数加权、乘积测度、线性推前三种闭包构造
"""

import hashlib
import itertools
import json
from dataclasses import dataclass
from enum import Enum
from functools import cached_property, wraps
from typing import Any, Callable, Dict, Iterable, Optional, Sequence, Tuple, Union

import numpy as np
from loguru import logger
from scipy.integrate import simpson
from scipy.interpolate import RegularGridInterpolator
from scipy.special import ndtr

from config import GRID_CONFIG
from potential_dsl import DimensionError, DomainError, Expr, as_points, evaluate_points


class GeometryError(DimensionError):
    """网格几何错误：维数、分辨率或区域不匹配"""


Resolution = Union[int, Sequence[int]]


@dataclass(frozen=True)
class BoxDomain:
    """轴对齐的矩形区域，维数 d <= 4"""

    lo: Tuple[float, ...]
    hi: Tuple[float, ...]

    def __post_init__(self):
        lo = tuple(float(v) for v in np.ravel(self.lo))
        hi = tuple(float(v) for v in np.ravel(self.hi))
        object.__setattr__(self, 'lo', lo)
        object.__setattr__(self, 'hi', hi)
        if len(lo) != len(hi):
            raise GeometryError(f"上下界维数不一致: {len(lo)} vs {len(hi)}")
        if not 1 <= len(lo) <= GRID_CONFIG['max_dim']:
            raise GeometryError(f"维数必须在 1..{GRID_CONFIG['max_dim']} 之间: {len(lo)}")
        for a, b in zip(lo, hi):
            if not (np.isfinite(a) and np.isfinite(b) and a < b):
                raise GeometryError(f"区域边界非法: [{a}, {b}]")

    @property
    def dim(self) -> int:
        return len(self.lo)

    @property
    def widths(self) -> np.ndarray:
        return np.asarray(self.hi) - np.asarray(self.lo)

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.widths))

    def contains(self, points, slack: float = 0.0) -> np.ndarray:
        X = as_points(points, self.dim)
        return np.all((X >= np.asarray(self.lo) - slack) & (X <= np.asarray(self.hi) + slack), axis=1)

    def clip(self, points) -> np.ndarray:
        X = as_points(points, self.dim)
        return np.clip(X, self.lo, self.hi)

    def axes(self, res: Resolution):
        res = normalize_resolution(res, self.dim)
        return [np.linspace(a, b, n) for a, b, n in zip(self.lo, self.hi, res)]

    def to_dict(self) -> Dict[str, Any]:
        return {'lo': list(self.lo), 'hi': list(self.hi)}

    @classmethod
    def cube(cls, lo: float, hi: float, dim: int) -> 'BoxDomain':
        return cls((lo,) * dim, (hi,) * dim)

    def product(self, other: 'BoxDomain') -> 'BoxDomain':
        return BoxDomain(self.lo + other.lo, self.hi + other.hi)

    def select(self, axes: Sequence[int]) -> 'BoxDomain':
        return BoxDomain(tuple(self.lo[i] for i in axes), tuple(self.hi[i] for i in axes))


def normalize_resolution(res: Resolution, dim: int) -> Tuple[int, ...]:
    if np.isscalar(res):
        res = (int(res),) * dim
    res = tuple(int(n) for n in res)
    if len(res) != dim:
        raise GeometryError(f"分辨率维数 {len(res)} 与区域维数 {dim} 不一致")
    if min(res) < 2:
        raise GeometryError(f"每轴至少需要 2 个节点: {res}")
    return res


def grid_nodes(domain: BoxDomain, res: Resolution) -> np.ndarray:
    """按行主序列出全部节点，返回 (N, d)"""
    mesh = np.meshgrid(*domain.axes(res), indexing='ij')
    return np.stack([m.ravel() for m in mesh], axis=1)


def trapezoid_weights(axis: np.ndarray) -> np.ndarray:
    """单轴复合梯形权重"""
    h = axis[1] - axis[0]
    w = np.full(axis.shape[0], h)
    w[0] = w[-1] = 0.5 * h
    return w


def tensor_weights(axes) -> np.ndarray:
    w = trapezoid_weights(axes[0])
    for ax in axes[1:]:
        w = np.multiply.outer(w, trapezoid_weights(ax))
    return w


class GridFunction:
    """张量网格上的有限实值函数

    节点值只读；可按多线性插值在任意点求值，区域外的点截断到边界
    """

    def __init__(self, domain: BoxDomain, values, meta: Optional[Dict[str, Any]] = None):
        values = np.array(values, dtype=float)
        if values.ndim != domain.dim:
            raise GeometryError(f"节点值维数 {values.ndim} 与区域维数 {domain.dim} 不一致")
        if min(values.shape) < GRID_CONFIG['min_resolution']:
            raise GeometryError(f"每轴节点数不少于 {GRID_CONFIG['min_resolution']}: {values.shape}")
        if not np.all(np.isfinite(values)):
            bad = np.argwhere(~np.isfinite(values))[0]
            point = [ax[i] for ax, i in zip(domain.axes(values.shape), bad)]
            raise DomainError("网格值非有限", point)
        values.flags.writeable = False
        self.domain = domain
        self.values = values
        self.meta = dict(meta or {})

    @property
    def dim(self) -> int:
        return self.domain.dim

    @property
    def resolution(self) -> Tuple[int, ...]:
        return tuple(self.values.shape)

    @cached_property
    def axes(self):
        return self.domain.axes(self.resolution)

    @property
    def spacing(self) -> np.ndarray:
        return np.array([ax[1] - ax[0] for ax in self.axes])

    def nodes(self) -> np.ndarray:
        return grid_nodes(self.domain, self.resolution)

    def node_point(self, index) -> np.ndarray:
        return np.array([ax[i] for ax, i in zip(self.axes, index)])

    def same_geometry(self, other: 'GridFunction') -> bool:
        return self.domain == other.domain and self.resolution == other.resolution

    @cached_property
    def _interpolator(self) -> RegularGridInterpolator:
        return RegularGridInterpolator(self.axes, self.values, method='linear')

    @cached_property
    def _log_interpolator(self) -> RegularGridInterpolator:
        with np.errstate(divide='ignore'):
            logs = np.where(self.values > 0, np.log(np.where(self.values > 0, self.values, 1.0)),
                            GRID_CONFIG['interp_log_floor'])
        return RegularGridInterpolator(self.axes, logs, method='linear')

    def __call__(self, points, log_space: bool = False) -> np.ndarray:
        """插值求值；log_space=True 时在对数空间插值，零值按下界处理"""
        X = self.domain.clip(points)
        if log_space:
            return np.exp(self._log_interpolator(X))
        return self._interpolator(X)

    def with_values(self, values, meta: Optional[Dict[str, Any]] = None) -> 'GridFunction':
        merged = dict(self.meta)
        merged.update(meta or {})
        return type(self)(self.domain, values, merged)

    @classmethod
    def from_function(cls, domain: BoxDomain, res: Resolution, func: Callable,
                      meta: Optional[Dict[str, Any]] = None) -> 'GridFunction':
        res = normalize_resolution(res, domain.dim)
        values = evaluate_points(func, grid_nodes(domain, res)).reshape(res)
        return cls(domain, values, meta)

    def __repr__(self) -> str:
        return f"{type(self).__name__}(d={self.dim}, res={self.resolution}, lo={self.domain.lo}, hi={self.domain.hi})"


class GridDensity(GridFunction):
    """非负网格密度，缓存总质量"""

    def __init__(self, domain: BoxDomain, values, meta: Optional[Dict[str, Any]] = None):
        super().__init__(domain, values, meta)
        if np.any(self.values < 0):
            bad = np.unravel_index(int(np.argmin(self.values)), self.values.shape)
            raise DomainError("密度值为负", self.node_point(bad))

    @cached_property
    def mass(self) -> float:
        return quadrature_integral(self)

    @property
    def peak(self) -> float:
        return float(self.values.max())

    def normalized(self) -> 'GridDensity':
        if self.mass <= 0:
            raise DomainError("总质量为零，无法归一化")
        return self.with_values(self.values / self.mass, {'normalizer': self.mass})


@dataclass(frozen=True, eq=False)
class GridMask:
    """区域网格节点上的布尔指示（集合 A、B、C）"""

    domain: BoxDomain
    marks: np.ndarray

    def __post_init__(self):
        marks = np.array(self.marks, dtype=bool)
        if marks.ndim != self.domain.dim:
            raise GeometryError(f"掩码维数 {marks.ndim} 与区域维数 {self.domain.dim} 不一致")
        marks.flags.writeable = False
        object.__setattr__(self, 'marks', marks)

    @property
    def resolution(self) -> Tuple[int, ...]:
        return tuple(self.marks.shape)

    @property
    def count(self) -> int:
        return int(self.marks.sum())

    @property
    def is_empty(self) -> bool:
        return not self.marks.any()

    def same_geometry(self, other) -> bool:
        return self.domain == other.domain and self.resolution == tuple(np.shape(getattr(other, 'marks', getattr(other, 'values', None))))

    def marked_points(self) -> np.ndarray:
        axes = self.domain.axes(self.resolution)
        idx = np.argwhere(self.marks)
        return np.stack([axes[k][idx[:, k]] for k in range(self.domain.dim)], axis=1)

    def as_density(self) -> GridDensity:
        return GridDensity(self.domain, self.marks.astype(float), {'source': 'mask'})


def require_same_geometry(func):
    """检查所有网格型位置参数几何一致的装饰器"""
    @wraps(func)
    def wrapper(*args, **kwargs):
        grids = [a for a in args if isinstance(a, (GridFunction, GridMask))]
        for other in grids[1:]:
            if not grids[0].same_geometry(other):
                raise GeometryError(f"{func.__name__}: 网格几何不一致")
        return func(*args, **kwargs)
    return wrapper


# ---------------------------------------------------------------------------
# 积分
# ---------------------------------------------------------------------------

def integrate_values(values: np.ndarray, axes) -> float:
    """逐轴复合 Simpson 积分（从最后一轴开始）"""
    out = np.asarray(values, dtype=float)
    for ax in reversed(axes):
        out = simpson(out, x=ax, axis=-1)
    return float(out)


def quadrature_integral(f: GridFunction) -> float:
    """张量积复合 Simpson 积分

    Args:
        f: 网格函数

    Returns:
        float: 积分值
    """
    return integrate_values(f.values, f.axes)


@require_same_geometry
def masked_integral(rho: GridFunction, mask: GridMask) -> float:
    """集合测度 ρ(A)：只累加四角全部被标记的网格单元，单元内用梯形规则"""
    d = rho.dim
    cell_volume = float(np.prod(rho.spacing))
    inside = None
    total = None
    for bits in itertools.product((0, 1), repeat=d):
        sl = tuple(slice(1, None) if b else slice(0, -1) for b in bits)
        corner_mask = mask.marks[sl]
        inside = corner_mask if inside is None else inside & corner_mask
        total = rho.values[sl] if total is None else total + rho.values[sl]
    return float(np.sum(np.where(inside, total, 0.0)) * cell_volume / 2 ** d)


# ---------------------------------------------------------------------------
# 掩码构造
# ---------------------------------------------------------------------------

def mask_from_boxes(domain: BoxDomain, res: Resolution, boxes: Iterable) -> GridMask:
    """由若干盒子的并集构造掩码，盒子格式 [[lo...], [hi...]]"""
    res = normalize_resolution(res, domain.dim)
    X = grid_nodes(domain, res)
    slack = 1e-9 * float(np.min(domain.widths / (np.asarray(res) - 1)))
    marks = np.zeros(X.shape[0], dtype=bool)
    for box in boxes:
        lo, hi = box
        lo = np.broadcast_to(np.asarray(lo, dtype=float), (domain.dim,))
        hi = np.broadcast_to(np.asarray(hi, dtype=float), (domain.dim,))
        marks |= np.all((X >= lo - slack) & (X <= hi + slack), axis=1)
    return GridMask(domain, marks.reshape(res))


def mask_from_predicate(domain: BoxDomain, res: Resolution, predicate: Callable) -> GridMask:
    """predicate(x) >= 0 的节点被标记"""
    res = normalize_resolution(res, domain.dim)
    values = evaluate_points(predicate, grid_nodes(domain, res))
    return GridMask(domain, (values >= 0).reshape(res))


def indicator_grid(domain: BoxDomain, res: Resolution, boxes: Iterable) -> GridDensity:
    return mask_from_boxes(domain, res, boxes).as_density()


def lebesgue_grid(domain: BoxDomain, res: Resolution) -> GridDensity:
    """区域上的 Lebesgue 测度（密度恒为 1）"""
    res = normalize_resolution(res, domain.dim)
    return GridDensity(domain, np.ones(res), {'label': 'lebesgue', 'reference': Reference.LEBESGUE.value})


# ---------------------------------------------------------------------------
# 测度描述与离散化
# ---------------------------------------------------------------------------

class Reference(Enum):
    """参考测度"""
    LEBESGUE = 'lebesgue'
    GAUSSIAN = 'gaussian'


def gaussian_weight(X: np.ndarray) -> np.ndarray:
    """标准高斯密度 φ_d"""
    d = X.shape[1]
    return np.exp(-0.5 * np.sum(X * X, axis=1)) / (2.0 * np.pi) ** (d / 2.0)


@dataclass(frozen=True)
class MeasureSpec:
    """测度描述：参考测度 + 密度来源

    kind='potential' 时 source 为势函数 V，密度为 e^{-V}；
    reference=GAUSSIAN 时密度为相对密度 q，dν = q dμ
    """

    source: Union[Expr, Callable, GridFunction]
    reference: Reference = Reference.LEBESGUE
    kind: str = 'density'
    declared_alpha: Optional[float] = None
    label: str = ''

    def __post_init__(self):
        if self.kind not in ('density', 'potential'):
            raise ValueError(f"未知的密度类型: {self.kind}")
        if self.declared_alpha is not None and self.declared_alpha < 0:
            raise ValueError(f"declared_alpha 必须非负: {self.declared_alpha}")
        if isinstance(self.source, GridFunction) and self.kind == 'potential':
            raise ValueError("网格来源只能作为密度")

    @property
    def dim(self) -> Optional[int]:
        if isinstance(self.source, GridFunction):
            return self.source.dim
        return getattr(self.source, 'dim', None)

    def density(self, points) -> np.ndarray:
        """相对参考测度的密度值"""
        if isinstance(self.source, GridFunction):
            return self.source(points)
        values = evaluate_points(self.source, points)
        if self.kind == 'potential':
            with np.errstate(over='ignore', under='ignore'):
                return np.exp(-values)
        return values


def measure_potential(spec: MeasureSpec) -> Callable[[np.ndarray], np.ndarray]:
    """Lebesgue 意义下的势函数 V，dρ = e^{-V} dx（高斯参考时加上 |x|²/2）"""
    gaussian = spec.reference is Reference.GAUSSIAN

    def potential(points):
        X = as_points(points, spec.dim)
        if spec.kind == 'potential':
            V = evaluate_points(spec.source, X)
        else:
            with np.errstate(divide='ignore'):
                V = -np.log(spec.density(X))
        if gaussian:
            V = V + 0.5 * np.sum(X * X, axis=1) + 0.5 * X.shape[1] * np.log(2.0 * np.pi)
        return V

    potential.dim = spec.dim
    return potential


def discretize(spec: MeasureSpec, dom: BoxDomain, res: Resolution) -> GridDensity:
    """把测度描述离散到网格上

    Args:
        spec: 测度描述
        dom: 截断区域
        res: 每轴分辨率

    Returns:
        GridDensity: 节点值 = 密度 × (高斯参考时的 φ_d)，meta 中记录截断诊断
    """
    res = normalize_resolution(res, dom.dim)
    if spec.dim is not None and spec.dim != dom.dim:
        raise GeometryError(f"测度维数 {spec.dim} 与区域维数 {dom.dim} 不一致")
    X = grid_nodes(dom, res)
    if isinstance(spec.source, GridFunction) and spec.source.domain == dom and spec.source.resolution == res:
        values = np.array(spec.source.values, dtype=float).ravel()
    else:
        values = spec.density(X)
    meta = {'label': spec.label, 'reference': spec.reference.value}
    if spec.reference is Reference.GAUSSIAN:
        values = values * gaussian_weight(X)
        inner = np.prod(ndtr(np.asarray(dom.hi)) - ndtr(np.asarray(dom.lo)))
        meta['exterior_gaussian_mass'] = float(1.0 - inner)
    if np.any(values < 0):
        i = int(np.argmin(values))
        raise DomainError("密度值为负", X[i])
    values = values.reshape(res)
    peak = float(values.max())
    if peak > 0:
        edge = 0.0
        for axis in range(dom.dim):
            edge = max(edge, float(np.take(values, 0, axis=axis).max()),
                       float(np.take(values, -1, axis=axis).max()))
        meta['edge_ratio'] = edge / peak
        if edge / peak > GRID_CONFIG['edge_ratio_warn']:
            logger.warning(f"离散化 {spec.label or '测度'}: 边界值/峰值 = {edge / peak:.2e}，截断质量可能不可忽略")
    else:
        logger.warning(f"离散化 {spec.label or '测度'}: 所有节点值为零")
    if spec.declared_alpha is not None:
        meta['declared_alpha'] = float(spec.declared_alpha)
    grid = GridDensity(dom, values, meta)
    logger.debug(f"离散化完成: {grid}, 质量={grid.mass:.10g}")
    return grid


# ---------------------------------------------------------------------------
# 闭包构造
# ---------------------------------------------------------------------------

def weight_by_convex(rho: GridDensity, F: Callable) -> GridDensity:
    """指数加权 dν = e^{-F} dρ"""
    X = rho.nodes()
    Fv = evaluate_points(F, X)
    with np.errstate(over='ignore', under='ignore'):
        w = np.exp(-Fv)
    if not np.all(np.isfinite(w)):
        i = int(np.argmax(~np.isfinite(w)))
        raise DomainError("权重 e^{-F} 溢出", X[i])
    values = rho.values * w.reshape(rho.resolution)
    return GridDensity(rho.domain, values, dict(rho.meta, weighted=True))


def product_measure(r1: GridDensity, r2: GridDensity) -> GridDensity:
    """乘积测度 ρ₁⊗ρ₂，维数相加不超过 4"""
    if r1.dim + r2.dim > GRID_CONFIG['max_dim']:
        raise GeometryError(f"乘积维数 {r1.dim + r2.dim} 超过上限 {GRID_CONFIG['max_dim']}")
    values = np.multiply.outer(r1.values, r2.values)
    meta = {'factors': [r1.meta.get('label', ''), r2.meta.get('label', '')]}
    alpha = product_alpha(r1.meta.get('declared_alpha'), r2.meta.get('declared_alpha'))
    if alpha is not None:
        meta['declared_alpha'] = alpha
    return GridDensity(r1.domain.product(r2.domain), values, meta)


def product_alpha(a1: Optional[float], a2: Optional[float]) -> Optional[float]:
    """α₁-s.l.c. 与 α₂-s.l.c. 的乘积是 min(α₁, α₂)-s.l.c."""
    if a1 is None or a2 is None:
        return None
    return float(min(a1, a2))


def linear_pushforward(rho: GridDensity, F, out_dom: BoxDomain,
                       res: Optional[Resolution] = None) -> GridDensity:
    """线性映射 F: R^m -> R^n 下的推前测度

    每个源节点的质量（梯形权重 × 值）按多线性权重分摊到 Fx 所在输出单元的角点，
    保持质量与一阶矩

    Args:
        rho: 源密度 (m 维)
        F: n×m 满行秩矩阵
        out_dom: 输出区域 (n 维)
        res: 输出分辨率，默认取源网格前 n 轴的分辨率

    Returns:
        GridDensity: 推前密度，meta['mass_loss'] 为落在输出区域外的相对质量
    """
    F = np.atleast_2d(np.asarray(F, dtype=float))
    n, m = F.shape
    if m != rho.dim:
        raise GeometryError(f"矩阵列数 {m} 与源维数 {rho.dim} 不一致")
    if n > m or n != out_dom.dim:
        raise GeometryError(f"输出维数非法: n={n}, m={m}, out_dom.dim={out_dom.dim}")
    if np.linalg.matrix_rank(F) < n:
        raise GeometryError("线性映射不满秩")
    res = normalize_resolution(res if res is not None else rho.resolution[:n], n)

    masses = (rho.values * tensor_weights(rho.axes)).ravel()
    keep = masses > 0
    total = float(masses.sum())
    Y = rho.nodes()[keep] @ F.T
    w = masses[keep]

    lo = np.asarray(out_dom.lo)
    h = out_dom.widths / (np.asarray(res) - 1)
    t = (Y - lo) / h
    base = np.floor(t).astype(np.int64)
    frac = t - base
    out = np.zeros(res)
    for bits in itertools.product((0, 1), repeat=n):
        bits = np.asarray(bits)
        idx = base + bits
        weight = w * np.prod(np.where(bits == 1, frac, 1.0 - frac), axis=1)
        valid = np.all((idx >= 0) & (idx < np.asarray(res)), axis=1) & (weight > 0)
        np.add.at(out, tuple(idx[valid].T), weight[valid])
    deposited = float(out.sum())
    loss = 1.0 - deposited / total if total > 0 else 0.0
    if loss > GRID_CONFIG['mass_loss_warn']:
        logger.warning(f"线性推前: 输出区域未覆盖像的支撑，损失质量比例 {loss:.2e}")
    values = out / float(np.prod(h))
    return GridDensity(out_dom, values, {'mass_loss': loss, 'deposited_mass': deposited, 'source_mass': total})


# ---------------------------------------------------------------------------
# 序列化
# ---------------------------------------------------------------------------

def grid_to_bytes(grid: GridFunction) -> bytes:
    """二进制布局：<i8 维数；每轴 <f8 lo, <f8 hi, <i8 res；随后行主序 <f8 节点值"""
    parts = [np.array([grid.dim], dtype='<i8').tobytes()]
    for lo, hi, n in zip(grid.domain.lo, grid.domain.hi, grid.resolution):
        parts.append(np.array([lo, hi], dtype='<f8').tobytes())
        parts.append(np.array([n], dtype='<i8').tobytes())
    parts.append(np.ascontiguousarray(grid.values, dtype='<f8').tobytes())
    return b''.join(parts)


def grid_from_bytes(data: bytes, cls=GridDensity) -> GridFunction:
    if len(data) < 8:
        raise GeometryError("网格文件过短")
    dim = int(np.frombuffer(data, dtype='<i8', count=1)[0])
    if not 1 <= dim <= GRID_CONFIG['max_dim']:
        raise GeometryError(f"网格文件维数非法: {dim}")
    offset = 8
    lo, hi, res = [], [], []
    for _ in range(dim):
        if len(data) < offset + 24:
            raise GeometryError("网格文件头不完整")
        a, b = np.frombuffer(data, dtype='<f8', count=2, offset=offset)
        n = int(np.frombuffer(data, dtype='<i8', count=1, offset=offset + 16)[0])
        lo.append(float(a))
        hi.append(float(b))
        res.append(n)
        offset += 24
    count = int(np.prod(res))
    if len(data) != offset + 8 * count:
        raise GeometryError(f"网格文件长度与头部不符: 期望 {offset + 8 * count} 字节，实际 {len(data)}")
    values = np.frombuffer(data, dtype='<f8', count=count, offset=offset).reshape(res)
    return cls(BoxDomain(tuple(lo), tuple(hi)), values)


def save_grid_binary(grid: GridFunction, path) -> str:
    """写入二进制网格文件，返回内容的 sha256"""
    data = grid_to_bytes(grid)
    with open(path, 'wb') as fh:
        fh.write(data)
    return hashlib.sha256(data).hexdigest()


def load_grid_binary(path, sha256: Optional[str] = None, cls=GridDensity) -> GridFunction:
    with open(path, 'rb') as fh:
        data = fh.read()
    if sha256 is not None and hashlib.sha256(data).hexdigest() != sha256:
        raise GeometryError(f"网格文件哈希不匹配: {path}")
    return grid_from_bytes(data, cls)


def grid_digest(grid: GridFunction) -> str:
    return hashlib.sha256(grid_to_bytes(grid)).hexdigest()


def grid_to_json(grid: GridFunction) -> str:
    """小网格的 JSON 形式（行主序展平）"""
    payload = {
        'dim': grid.dim,
        'lo': list(grid.domain.lo),
        'hi': list(grid.domain.hi),
        'resolution': list(grid.resolution),
        'values': [float(v) for v in grid.values.ravel()],
    }
    return json.dumps(payload, sort_keys=True)


def grid_from_json(text: str, cls=GridDensity) -> GridFunction:
    payload = json.loads(text)
    try:
        res = tuple(int(n) for n in payload['resolution'])
        values = np.asarray(payload['values'], dtype=float).reshape(res)
        domain = BoxDomain(tuple(payload['lo']), tuple(payload['hi']))
    except (KeyError, ValueError, TypeError) as e:
        raise GeometryError(f"网格 JSON 格式错误: {e}") from e
    if domain.dim != int(payload.get('dim', domain.dim)):
        raise GeometryError("网格 JSON 维数字段不一致")
    return cls(domain, values)
