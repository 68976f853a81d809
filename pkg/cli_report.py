# -*- coding: utf-8 -*-
"""
场景与报告模块
场景 JSON 的加载与校验、检验分发（线程池，按声明顺序收集）、运行报告与输出、参数扫描
"""

import copy
import hashlib
import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from loguru import logger

from config import CHECK_CONFIG, RUN_CONFIG, TOOLKIT_VERSION
from gaussian_calculus import (
    GaussianSpace, ShiftMap, check_monotone, check_one_logconcave, det2_logconcavity_check,
    mixture_lambda, smoothing_sequence_lambda, verify_change_of_variables, verify_gaussian_pl,
    verify_preservation,
)
from logconcave_ops import (
    CheckReport, Verdict, box_average, check_logconcave, check_slc, convolve, gaussian_smooth,
    log_report, marginalize, minkowski_combine, slc_delta_bound, verify_brunn_minkowski,
    verify_prekopa_leindler, verify_slc_prekopa_leindler,
)
from measure_core import (
    BoxDomain, GridDensity, GridFunction, GridMask, MeasureSpec, Reference, discretize,
    grid_nodes, linear_pushforward, load_grid_binary, mask_from_boxes, mask_from_predicate,
    normalize_resolution, product_measure, weight_by_convex,
)
from potential_dsl import ParseError, lambda_expr, parse
from transport_1d import (
    check_caffarelli, check_pushforward, gaussian_target, lipschitz_estimate, monge_map,
    transport_jacobian_identity, verify_lsi,
)

__all__ = [
    'ScenarioError', 'MeasureDef', 'CheckDef', 'Scenario', 'RunReport', 'REGISTRY',
    'load_scenario', 'parse_scenario', 'normalize_scenario', 'run', 'emit', 'sweep', 'exit_code',
]

FORMATS = ('json', 'csv', 'summary')


class ScenarioError(ValueError):
    """场景文件错误，带 JSON 指针与错误码

    code: parse | schema | seed_required | missing_param | undefined_label | unknown_kind | duplicate_label | grid_file
    """

    def __init__(self, message: str, pointer: str = '', code: str = 'schema'):
        self.message = message
        self.pointer = pointer or '/'
        self.code = code
        super().__init__(f"{self.pointer}: {message} [{code}]")


# ---------------------------------------------------------------------------
# 场景数据结构
# ---------------------------------------------------------------------------

@dataclass
class MeasureDef:
    """场景中的测度定义"""
    label: str
    reference: Reference
    domain: BoxDomain
    resolution: Tuple[int, ...]
    alpha: Optional[float] = None
    potential: Optional[str] = None
    density: Optional[str] = None
    grid_file: Optional[str] = None
    sha256: Optional[str] = None
    grid: Optional[GridFunction] = None

    @property
    def dim(self) -> int:
        return self.domain.dim

    def spec(self) -> MeasureSpec:
        if self.grid is not None:
            return MeasureSpec(self.grid, self.reference, 'density', self.alpha, self.label)
        if self.potential is not None:
            return MeasureSpec(parse(self.potential, self.dim), self.reference, 'potential', self.alpha, self.label)
        return MeasureSpec(parse(self.density, self.dim), self.reference, 'density', self.alpha, self.label)

    def function(self) -> Union[Callable, GridFunction]:
        """密度（相对参考测度）作为函数：表达式、e^{-V} 包装或网格"""
        if self.grid is not None:
            return self.grid
        if self.density is not None:
            return parse(self.density, self.dim)
        spec = self.spec()
        return lambda_expr(lambda X: spec.density(X), self.dim)

    def discretize(self) -> GridDensity:
        return discretize(self.spec(), self.domain, self.resolution)


@dataclass
class CheckDef:
    """场景中的一项检验"""
    index: int
    kind: str
    measures: Dict[str, str]
    params: Dict[str, Any]
    tolerance: float
    seed: Optional[int]
    label: str


@dataclass
class Scenario:
    version: str
    measures: Dict[str, MeasureDef]
    checks: List[CheckDef]
    output: Dict[str, Any]
    digest: str
    base_dir: str = '.'
    document: Dict[str, Any] = field(default_factory=dict)


# ---------------------------------------------------------------------------
# 检验注册表
# ---------------------------------------------------------------------------

@dataclass
class CheckContext:
    """单项检验的执行上下文，各检验之间不共享可变状态"""
    check: CheckDef
    scenario: Scenario
    seed: int

    @property
    def tol(self) -> float:
        return self.check.tolerance

    def param(self, name: str, default: Any = None) -> Any:
        return self.check.params.get(name, default)

    def require(self, name: str) -> Any:
        if name not in self.check.params:
            raise ScenarioError(f"缺少参数 {name}", f"/checks/{self.check.index}/params/{name}")
        return self.check.params[name]

    def measure(self, role: str) -> Optional[MeasureDef]:
        label = self.check.measures.get(role)
        return self.scenario.measures[label] if label is not None else None

    def grid(self, role: str) -> GridDensity:
        return self.measure(role).discretize()

    def alpha(self, role: str) -> float:
        alpha = self.param('alpha', self.measure(role).alpha if self.measure(role) else None)
        if alpha is None:
            raise ScenarioError("需要 alpha（检验参数或测度声明）", f"/checks/{self.check.index}/params/alpha")
        return float(alpha)

    def shift(self, name: str) -> ShiftMap:
        texts = self.require(name)
        if isinstance(texts, str):
            texts = [texts]
        return ShiftMap.from_texts(list(texts), label=name)

    def domain(self, dim: int, default: Tuple[float, float] = (-8.0, 8.0)) -> BoxDomain:
        spec = self.param('domain')
        if spec is None:
            return BoxDomain.cube(default[0], default[1], dim)
        return BoxDomain(spec['lo'], spec['hi'])

    def mask(self, name: str, dom: BoxDomain, res) -> GridMask:
        value = self.require(name)
        if isinstance(value, str):
            return mask_from_predicate(dom, res, parse(value, dom.dim))
        return mask_from_boxes(dom, res, value)


@dataclass(frozen=True)
class CheckKind:
    name: str
    handler: Callable[[CheckContext], CheckReport]
    roles: Tuple[str, ...] = ()
    optional_roles: Tuple[str, ...] = ()
    sampled: Union[bool, Callable[[Dict[str, str]], bool]] = True
    tolerance: float = CHECK_CONFIG['tolerance']
    required_params: Tuple[str, ...] = ()

    def requires_seed(self, measures: Dict[str, str]) -> bool:
        return self.sampled(measures) if callable(self.sampled) else bool(self.sampled)


REGISTRY: Dict[str, CheckKind] = {}


def register(name: str, roles: Sequence[str] = (), optional_roles: Sequence[str] = (),
             sampled: Union[bool, Callable] = True, tolerance: float = CHECK_CONFIG['tolerance'],
             required_params: Sequence[str] = ()):
    """注册检验种类的装饰器；required_params 在加载场景时校验"""
    def decorator(func):
        REGISTRY[name] = CheckKind(name, func, tuple(roles), tuple(optional_roles), sampled, tolerance,
                                   tuple(required_params))
        return func
    return decorator


def _merge_reports(kind: str, reports: List[CheckReport]) -> CheckReport:
    """多份报告合并为一份：取最差裕量，细节按顺序保留"""
    worst = min(reports, key=lambda r: r.worst_margin if math.isfinite(r.worst_margin) else float('inf'))
    failed = [r for r in reports if r.failed]
    head = failed[0] if failed else worst
    merged = CheckReport(
        kind=kind,
        verdict=Verdict.FAIL if failed else worst.verdict,
        worst_margin=worst.worst_margin,
        tolerance=worst.tolerance,
        samples=sum(r.samples for r in reports),
        witness=head.witness if failed else None,
        notes=sorted({n for r in reports for n in r.notes}),
        details={'items': [r.details for r in reports]},
        failure=head.failure if failed else None,
    )
    return merged


@register('check_logconcave', roles=('measure',))
def _run_check_logconcave(ctx: CheckContext) -> CheckReport:
    return check_logconcave(ctx.grid('measure'), ctx.tol, pairs=ctx.param('pairs', CHECK_CONFIG['pairs']),
                            seed=ctx.seed, mode_pairs=ctx.param('mode_pairs', CHECK_CONFIG['mode_pairs']))


@register('check_slc', roles=('measure',), tolerance=CHECK_CONFIG['slc_tolerance'])
def _run_check_slc(ctx: CheckContext) -> CheckReport:
    m = ctx.measure('measure')
    method = ctx.param('method', 'grid' if m.grid is not None else 'potential')
    if method == 'grid':
        source = m.discretize()
    elif method == 'potential':
        source = m.spec()
    else:
        raise ValueError(f"未知的证书方法: {method}")
    cert = check_slc(source, ctx.alpha('measure'), m.domain, samples=ctx.param('samples', CHECK_CONFIG['slc_samples']),
                     tol=ctx.tol, seed=ctx.seed, pairs=ctx.param('pairs', CHECK_CONFIG['pairs']))
    return cert.to_report()


@register('verify_prekopa_leindler', roles=('rho', 'b', 'c'), optional_roles=('a',))
def _run_prekopa_leindler(ctx: CheckContext) -> CheckReport:
    a = ctx.grid('a') if ctx.measure('a') else None
    return verify_prekopa_leindler(ctx.grid('rho'), ctx.grid('b'), ctx.grid('c'), a, s=ctx.param('s', 0.5),
                                   tol=ctx.tol, pairs=ctx.param('pairs', CHECK_CONFIG['hypothesis_pairs']),
                                   seed=ctx.seed)


@register('verify_slc_prekopa_leindler', roles=('rho', 'b', 'c'), sampled=False)
def _run_slc_prekopa_leindler(ctx: CheckContext) -> CheckReport:
    return verify_slc_prekopa_leindler(ctx.grid('rho'), ctx.grid('b'), ctx.grid('c'), ctx.alpha('rho'),
                                       s=ctx.param('s', 0.5), tol=ctx.tol)


@register('verify_brunn_minkowski', roles=('rho',), sampled=False, required_params=('A', 'B'))
def _run_brunn_minkowski(ctx: CheckContext) -> CheckReport:
    rho = ctx.grid('rho')
    A = ctx.mask('A', rho.domain, rho.resolution)
    B = ctx.mask('B', rho.domain, rho.resolution)
    return verify_brunn_minkowski(rho, A, B, s=ctx.param('s', 0.5), tol=ctx.tol)


@register('closure', roles=('f',), optional_roles=('g',), required_params=('op',))
def _run_closure(ctx: CheckContext) -> CheckReport:
    """构造运算的输出再做对数凹检验"""
    op = ctx.require('op')
    f = ctx.grid('f')
    if op == 'convolve':
        out_dom = BoxDomain(**ctx.param('out_domain')) if ctx.param('out_domain') else None
        out = convolve(f, ctx.grid('g'), c=ctx.param('c', 1.0), out_dom=out_dom, res=ctx.param('out_resolution'))
    elif op == 'marginalize':
        out = marginalize(f, ctx.require('keep'))
    elif op == 'product':
        out = product_measure(f, ctx.grid('g'))
    elif op == 'pushforward':
        out_dom = BoxDomain(**ctx.param('out_domain')) if ctx.param('out_domain') else f.domain
        out = linear_pushforward(f, np.asarray(ctx.require('matrix'), dtype=float), out_dom,
                                 ctx.param('out_resolution'))
    elif op == 'weight':
        out = weight_by_convex(f, parse(ctx.require('convex'), f.dim))
    elif op == 'smooth':
        out = gaussian_smooth(f, float(ctx.require('sigma')))
    else:
        raise ValueError(f"未知的构造运算: {op}")
    report = check_logconcave(out, ctx.tol, pairs=ctx.param('pairs', CHECK_CONFIG['pairs']), seed=ctx.seed)
    report.kind = 'closure'
    report.details.update({'op': op, 'output_mass': out.mass})
    return report


@register('slc_delta_bound', optional_roles=('measure',), sampled=lambda measures: 'measure' in measures,
          tolerance=0.0, required_params=('sigma', 'delta'))
def _run_slc_delta_bound(ctx: CheckContext) -> CheckReport:
    sigma = float(ctx.require('sigma'))
    delta = float(ctx.require('delta'))
    m = ctx.measure('measure')
    if m is None:
        bound = slc_delta_bound(float(ctx.require('alpha')), sigma)
        details = {'alpha': bound.alpha, 'sigma': sigma, 'delta': delta, 'delta_max': bound.delta_max,
                   'admits': bound.admits(delta)}
        return log_report(CheckReport.from_margin('slc_delta_bound', bound.certified - delta, ctx.tol, 1,
                                                  [[delta]] if not bound.admits(delta) else None, details=details))
    alpha = ctx.alpha('measure')
    bound = slc_delta_bound(alpha, sigma)
    smoothed = gaussian_smooth(m.discretize(), sigma)
    cert = check_slc(smoothed, delta, tol=ctx.tol if ctx.tol > 0 else CHECK_CONFIG['slc_tolerance'], seed=ctx.seed,
                     pairs=ctx.param('pairs', CHECK_CONFIG['pairs']))
    report = cert.to_report()
    report.kind = 'slc_delta_bound'
    report.details.update({'sigma': sigma, 'delta': delta, 'delta_max': bound.delta_max,
                           'admits': bound.admits(delta)})
    return report


@register('box_average', roles=('measure',), sampled=False, required_params=('z', 'eps'))
def _run_box_average(ctx: CheckContext) -> CheckReport:
    grid = ctx.grid('measure')
    value = box_average(grid, ctx.require('z'), float(ctx.require('eps')))
    expected = ctx.param('expected')
    details = {'value': value, 'expected': expected}
    if expected is None:
        return log_report(CheckReport.from_margin('box_average', 0.0, ctx.tol, 1, details=details))
    err = abs(value - float(expected)) / max(1.0, abs(float(expected)))
    return log_report(CheckReport.from_margin('box_average', -err, ctx.tol, 1, [ctx.require('z')], details=details))


@register('det2_logconcavity', tolerance=1e-9)
def _run_det2(ctx: CheckContext) -> CheckReport:
    return det2_logconcavity_check(ctx.param('pairs', 20), ctx.param('dim', 3), ctx.seed, ctx.tol)


@register('check_monotone', required_params=('shift',))
def _run_check_monotone(ctx: CheckContext) -> CheckReport:
    return check_monotone(ctx.shift('shift'), tol=ctx.tol, seed=ctx.seed)


@register('verify_change_of_variables', required_params=('shift', 'f'))
def _run_change_of_variables(ctx: CheckContext) -> CheckReport:
    U = ctx.shift('shift')
    space = GaussianSpace(U.dim, ctx.param('order'))
    return verify_change_of_variables(U, parse(ctx.require('f'), U.dim), space, ctx.tol, ctx.seed,
                                      require_monotone=ctx.param('require_monotone', True))


@register('mixture_lambda', tolerance=1e-8, required_params=('T1', 'T2', 'a'))
def _run_mixture_lambda(ctx: CheckContext) -> CheckReport:
    return mixture_lambda(ctx.shift('T1'), ctx.shift('T2'), float(ctx.require('a')), ctx.param('points', 200),
                          ctx.tol, ctx.seed, require_monotone=ctx.param('require_monotone', True))


@register('smoothing_sequence', sampled=False, tolerance=1e-3, required_params=('shift', 'n_list'))
def _run_smoothing_sequence(ctx: CheckContext) -> CheckReport:
    U = ctx.shift('shift')
    space = GaussianSpace(U.dim, ctx.param('order'))
    result = smoothing_sequence_lambda(U, ctx.require('n_list'), space, ctx.domain(U.dim, (-3.0, 3.0)),
                                       ctx.param('resolution'), ctx.param('tail', 3))
    spread = result.diagnostics['tail_spread']
    report = CheckReport.from_margin('smoothing_sequence', -spread, ctx.tol, len(result.n_list) * result.liminf.values.size,
                                     notes=list(result.notes), details=dict(result.diagnostics))
    return log_report(report)


@register('check_one_logconcave', roles=('f',))
def _run_one_logconcave(ctx: CheckContext) -> CheckReport:
    m = ctx.measure('f')
    space = GaussianSpace(m.dim, ctx.param('order'))
    return check_one_logconcave(m.function(), space, ctx.param('s', 0.5), ctx.param('hk_samples', 512),
                                ctx.tol, ctx.seed, lattice_radius=ctx.param('lattice_radius'))


@register('verify_preservation', roles=('f',), required_params=('mode',))
def _run_preservation(ctx: CheckContext) -> CheckReport:
    m = ctx.measure('f')
    space = GaussianSpace(m.dim, ctx.param('order'))
    out_dom = BoxDomain(**ctx.param('out_domain')) if ctx.param('out_domain') else None
    return verify_preservation(m.function(), ctx.require('mode'), space, ctx.param('s', 0.5), ctx.tol,
                               keep=ctx.param('keep'), tau=ctx.param('tau'), dom=out_dom,
                               res=ctx.param('out_resolution'), seed=ctx.seed)


@register('verify_gaussian_pl', optional_roles=('a', 'b', 'c', 'q'))
def _run_gaussian_pl(ctx: CheckContext) -> CheckReport:
    s = ctx.param('s', 0.5)
    q = ctx.measure('q').function() if ctx.measure('q') else None
    if 'A' in ctx.check.params:
        dim = len(ctx.require('domain')['lo'])
        dom = ctx.domain(dim)
        res = normalize_resolution(ctx.param('resolution', 257), dim)
        A = ctx.mask('A', dom, res)
        B = ctx.mask('B', dom, res)
        return verify_gaussian_pl(minkowski_combine(A, B, s), A, B, q, s, tol=ctx.tol,
                                  pairs=ctx.param('pairs', CHECK_CONFIG['hypothesis_pairs']), seed=ctx.seed)
    b, c = ctx.measure('b'), ctx.measure('c')
    if b is None or c is None:
        raise ScenarioError("需要测度 b 和 c，或集合参数 A 和 B", f"/checks/{ctx.check.index}/measures")
    a = ctx.measure('a').function() if ctx.measure('a') else None
    space = GaussianSpace(b.dim, ctx.param('order'))
    return verify_gaussian_pl(a, b.function(), c.function(), q, s, space, ctx.tol,
                              pairs=ctx.param('pairs', CHECK_CONFIG['hypothesis_pairs']), seed=ctx.seed,
                              dom=b.domain, res=b.resolution)


@register('monge_map', roles=('source', 'target'), sampled=False, tolerance=1e-3)
def _run_monge_map(ctx: CheckContext) -> CheckReport:
    T = monge_map(ctx.grid('source'), ctx.grid('target'))
    err = check_pushforward(T)
    window = tuple(ctx.param('window', (0.05, 0.95)))
    details = {'pushforward_error': err, 'lipschitz': lipschitz_estimate(T, window), 'ambiguous': T.ambiguous}
    report = CheckReport.from_margin('monge_map', -err, ctx.tol, int(T.x.size), notes=list(T.notes), details=details)
    return log_report(report)


@register('check_caffarelli', roles=('measure',), sampled=False, tolerance=0.01)
def _run_caffarelli(ctx: CheckContext) -> CheckReport:
    m = ctx.measure('measure')
    return check_caffarelli(m.function(), ctx.alpha('measure'), m.domain, m.resolution, ctx.tol,
                            tuple(ctx.param('window', (0.05, 0.95))))


@register('transport_jacobian_identity', roles=('measure',), sampled=False, tolerance=1e-3)
def _run_transport_identity(ctx: CheckContext) -> CheckReport:
    m = ctx.measure('measure')
    target, L = gaussian_target(m.function(), m.domain, m.resolution)
    X = grid_nodes(m.domain, m.resolution)
    source = GridDensity(m.domain, np.exp(-0.5 * X[:, 0] ** 2).reshape(m.resolution))
    T = monge_map(source, target)
    return transport_jacobian_identity(L, T, ctx.tol, tuple(ctx.param('window', (0.05, 0.95))))


@register('verify_lsi', roles=('measure',), required_params=('fs',))
def _run_lsi(ctx: CheckContext) -> CheckReport:
    m = ctx.measure('measure')
    fs = [parse(text, m.dim) for text in ctx.require('fs')]
    space = GaussianSpace(m.dim, ctx.param('order')) if m.reference is Reference.GAUSSIAN else None
    reports = verify_lsi(m.spec(), fs, space, ctx.tol, ctx.param('alpha'), m.domain, m.resolution, ctx.seed)
    return _merge_reports('verify_lsi', reports)


# ---------------------------------------------------------------------------
# 场景加载与校验
# ---------------------------------------------------------------------------

def _canonical(document: Dict[str, Any]) -> str:
    return json.dumps(document, sort_keys=True, separators=(',', ':'), ensure_ascii=False)


def _expect(condition: bool, message: str, pointer: str, code: str = 'schema'):
    if not condition:
        raise ScenarioError(message, pointer, code)


def _is_number(value) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool) and math.isfinite(value)


def _parse_measure(i: int, item: Any, base_dir: str) -> MeasureDef:
    ptr = f"/measures/{i}"
    _expect(isinstance(item, dict), "测度定义必须是对象", ptr)
    known = {'label', 'reference', 'potential', 'density', 'grid_file', 'sha256', 'domain', 'resolution', 'alpha'}
    extra = sorted(set(item) - known)
    _expect(not extra, f"未知字段 {extra}", ptr)
    label = item.get('label')
    _expect(isinstance(label, str) and label != '', "label 必须是非空字符串", f"{ptr}/label")
    reference = item.get('reference', 'lebesgue')
    _expect(reference in ('lebesgue', 'gaussian'), f"未知参考测度 {reference}", f"{ptr}/reference")
    sources = [k for k in ('potential', 'density', 'grid_file') if k in item]
    _expect(len(sources) == 1, "potential、density、grid_file 必须恰好给出一个", ptr)
    alpha = item.get('alpha')
    _expect(alpha is None or (_is_number(alpha) and alpha >= 0), "alpha 必须是非负数", f"{ptr}/alpha")

    grid = None
    if 'grid_file' in item:
        path = os.path.join(base_dir, item['grid_file'])
        try:
            grid = load_grid_binary(path, item.get('sha256'))
        except (OSError, ValueError) as e:
            raise ScenarioError(f"网格文件无法读取: {e}", f"{ptr}/grid_file", 'grid_file')
        domain, resolution = grid.domain, grid.resolution
    else:
        dom = item.get('domain')
        _expect(isinstance(dom, dict) and set(dom) == {'lo', 'hi'}, "domain 必须是 {lo, hi}", f"{ptr}/domain")
        try:
            domain = BoxDomain(dom['lo'], dom['hi'])
            resolution = normalize_resolution(item.get('resolution', 257 if len(dom['lo']) == 1 else 65), domain.dim)
        except (TypeError, ValueError) as e:
            raise ScenarioError(str(e), f"{ptr}/domain")
        text = item[sources[0]]
        _expect(isinstance(text, str), "表达式必须是字符串", f"{ptr}/{sources[0]}")
        try:
            parse(text, domain.dim)
        except ParseError as e:
            raise ScenarioError(f"表达式解析失败: {e}", f"{ptr}/{sources[0]}", 'parse')

    return MeasureDef(label, Reference(reference), domain, resolution,
                      float(alpha) if alpha is not None else None,
                      potential=item.get('potential'), density=item.get('density'),
                      grid_file=item.get('grid_file'), sha256=item.get('sha256'), grid=grid)


def _parse_check(i: int, item: Any, measures: Dict[str, MeasureDef]) -> CheckDef:
    ptr = f"/checks/{i}"
    _expect(isinstance(item, dict), "检验定义必须是对象", ptr)
    known = {'kind', 'label', 'measure', 'measures', 'params', 'tolerance', 'seed'}
    extra = sorted(set(item) - known)
    _expect(not extra, f"未知字段 {extra}", ptr)
    kind_name = item.get('kind')
    _expect(kind_name in REGISTRY, f"未知的检验种类 {kind_name}", f"{ptr}/kind", 'unknown_kind')
    kind = REGISTRY[kind_name]

    if 'measure' in item:
        _expect('measures' not in item, "measure 与 measures 不能同时给出", ptr)
        roles = kind.roles or kind.optional_roles
        _expect(len(roles) >= 1, f"{kind_name} 不接受测度", f"{ptr}/measure")
        refs = {roles[0]: item['measure']}
        ref_ptr = {roles[0]: f"{ptr}/measure"}
    else:
        refs = dict(item.get('measures', {}))
        ref_ptr = {role: f"{ptr}/measures/{role}" for role in refs}
    for role in kind.roles:
        _expect(role in refs, f"缺少测度角色 {role}", f"{ptr}/measures")
    for role, label in refs.items():
        _expect(role in kind.roles + kind.optional_roles, f"{kind_name} 没有测度角色 {role}", ref_ptr[role])
        _expect(label in measures, f"未定义的测度标签 {label}", ref_ptr[role], 'undefined_label')

    params = item.get('params', {})
    _expect(isinstance(params, dict), "params 必须是对象", f"{ptr}/params")
    for name in kind.required_params:
        _expect(name in params, f"{kind_name} 缺少参数 {name}", f"{ptr}/params/{name}", 'missing_param')
    tolerance = item.get('tolerance', kind.tolerance)
    _expect(_is_number(tolerance) and tolerance >= 0, "tolerance 必须是非负数", f"{ptr}/tolerance")
    seed = item.get('seed')
    if seed is None:
        _expect(not kind.requires_seed(refs), "seed required", f"{ptr}/seed", 'seed_required')
    else:
        _expect(isinstance(seed, int) and not isinstance(seed, bool) and seed >= 0,
                "seed 必须是非负整数", f"{ptr}/seed")
    label = item.get('label', f"{kind_name}#{i}")
    return CheckDef(i, kind_name, refs, copy.deepcopy(params), float(tolerance), seed, str(label))


def parse_scenario(document: Any, base_dir: str = '.') -> Scenario:
    """校验场景文档（已解析的 JSON），返回 Scenario；第一个错误以 ScenarioError 报告"""
    _expect(isinstance(document, dict), "场景必须是 JSON 对象", '/')
    extra = sorted(set(document) - {'version', 'measures', 'checks', 'output'})
    _expect(not extra, f"未知字段 {extra}", '/')
    version = str(document.get('version', ''))
    _expect(version == RUN_CONFIG['scenario_version'],
            f"不支持的场景版本 {version!r}，期望 {RUN_CONFIG['scenario_version']!r}", '/version')
    raw_measures = document.get('measures', [])
    raw_checks = document.get('checks', [])
    _expect(isinstance(raw_measures, list), "measures 必须是数组", '/measures')
    _expect(isinstance(raw_checks, list), "checks 必须是数组", '/checks')

    measures: Dict[str, MeasureDef] = {}
    for i, item in enumerate(raw_measures):
        m = _parse_measure(i, item, base_dir)
        _expect(m.label not in measures, f"重复的测度标签 {m.label}", f"/measures/{i}/label", 'duplicate_label')
        measures[m.label] = m
    checks = [_parse_check(i, item, measures) for i, item in enumerate(raw_checks)]

    output = document.get('output', {})
    _expect(isinstance(output, dict), "output 必须是对象", '/output')
    fmt = output.get('format', RUN_CONFIG['format'])
    _expect(fmt in FORMATS, f"未知输出格式 {fmt}", '/output/format')

    digest = hashlib.sha256(_canonical(document).encode('utf-8')).hexdigest()
    scenario = Scenario(version, measures, checks, dict(output), digest, base_dir, copy.deepcopy(document))
    logger.debug(f"场景校验通过: {len(measures)} 个测度, {len(checks)} 项检验, 摘要 {digest[:12]}")
    return scenario


def load_scenario(path) -> Scenario:
    """读取并校验场景文件

    Raises:
        ScenarioError: JSON 语法错误（code='parse'）或结构错误，带 JSON 指针
    """
    with open(path, 'r', encoding='utf-8') as fh:
        text = fh.read()
    try:
        document = json.loads(text)
    except json.JSONDecodeError as e:
        raise ScenarioError(f"JSON 解析失败: 第 {e.lineno} 行第 {e.colno} 列: {e.msg}", '/', 'parse')
    scenario = parse_scenario(document, os.path.dirname(os.path.abspath(path)))
    logger.info(f"加载场景 {path}: {len(scenario.checks)} 项检验")
    return scenario


def normalize_scenario(scenario: Scenario) -> str:
    """规范化场景：默认值显式写出，键排序，两空格缩进"""
    measures = []
    for m in scenario.measures.values():
        item = {'label': m.label, 'reference': m.reference.value, 'alpha': m.alpha}
        if m.grid_file is not None:
            item.update({'grid_file': m.grid_file, 'sha256': m.sha256})
        else:
            item.update({'domain': m.domain.to_dict(), 'resolution': list(m.resolution)})
            if m.potential is not None:
                item['potential'] = m.potential
            else:
                item['density'] = m.density
        measures.append(item)
    checks = [{
        'kind': c.kind,
        'label': c.label,
        'measures': dict(c.measures),
        'params': c.params,
        'tolerance': c.tolerance,
        'seed': c.seed,
    } for c in scenario.checks]
    output = {'format': scenario.output.get('format', RUN_CONFIG['format'])}
    if 'path' in scenario.output:
        output['path'] = scenario.output['path']
    document = {'version': scenario.version, 'measures': measures, 'checks': checks, 'output': output}
    return json.dumps(document, sort_keys=True, indent=2, ensure_ascii=False) + '\n'


# ---------------------------------------------------------------------------
# 运行
# ---------------------------------------------------------------------------

@dataclass
class RunReport:
    """运行报告；timings 单独存放，其余字段给定种子时逐字节可复现"""
    digest: str
    version: str
    scenario_version: str
    labels: List[str]
    checks: List[CheckReport]
    timings: List[float] = field(default_factory=list)

    @property
    def verdict(self) -> str:
        return 'fail' if any(r.failed for r in self.checks) else 'pass'

    def to_dict(self, include_timings: bool = True) -> Dict[str, Any]:
        payload = {
            'scenario_digest': self.digest,
            'toolkit_version': self.version,
            'scenario_version': self.scenario_version,
            'verdict': self.verdict,
            'checks': [dict(r.to_dict(), label=label) for label, r in zip(self.labels, self.checks)],
        }
        if include_timings:
            payload['timings'] = {label: round(t, 6) for label, t in zip(self.labels, self.timings)}
        return payload


def _error_report(check: CheckDef, error: Exception) -> CheckReport:
    return CheckReport(kind=check.kind, verdict=Verdict.FAIL, worst_margin=float('-inf'),
                       tolerance=check.tolerance, samples=0, witness=[],
                       notes=[f"{type(error).__name__}: {error}"], failure='error')


def _run_check(scenario: Scenario, check: CheckDef, seed_override: Optional[int]) -> Tuple[CheckReport, float]:
    seed = seed_override if seed_override is not None else (check.seed if check.seed is not None else 0)
    start = time.perf_counter()
    try:
        report = REGISTRY[check.kind].handler(CheckContext(check, scenario, seed))
    except ScenarioError:
        raise
    except Exception as e:
        logger.error(f"检验 {check.label} 出错: {type(e).__name__}: {e}")
        report = _error_report(check, e)
    elapsed = time.perf_counter() - start
    logger.debug(f"检验 {check.label} 用时 {elapsed:.3f}s")
    return report, elapsed


def run(scenario: Scenario, jobs: Optional[int] = None, seed_override: Optional[int] = None) -> RunReport:
    """按声明顺序执行全部检验（线程池并行，结果按声明顺序收集）

    单项检验的异常记为该项失败（failure='error'），不中断运行；
    场景本身的错误（缺少参数、缺少 alpha 等）以 ScenarioError 抛出
    """
    jobs = max(1, int(jobs or RUN_CONFIG['jobs']))
    if not scenario.checks:
        logger.warning("场景中没有检验，结果视为通过")
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        futures = [pool.submit(_run_check, scenario, c, seed_override) for c in scenario.checks]
        results = [f.result() for f in futures]
    report = RunReport(scenario.digest, TOOLKIT_VERSION, scenario.version,
                       [c.label for c in scenario.checks],
                       [r for r, _ in results], [t for _, t in results])
    failed = sum(r.failed for r in report.checks)
    logger.info(f"运行完成: {len(report.checks)} 项检验, {failed} 项失败, 总体 {report.verdict}")
    return report


def exit_code(report: RunReport) -> int:
    return 0 if report.verdict == 'pass' else 1


# ---------------------------------------------------------------------------
# 输出
# ---------------------------------------------------------------------------

_MARKS = {Verdict.PASS: '✓', Verdict.FAIL: '✗', Verdict.INCONCLUSIVE: '?'}


def report_frame(report: RunReport) -> pd.DataFrame:
    """每项检验一行"""
    rows = []
    for label, r in zip(report.labels, report.checks):
        rows.append({
            'label': label,
            'kind': r.kind,
            'verdict': r.verdict.value,
            'margin': r.worst_margin,
            'tolerance': r.tolerance,
            'samples': r.samples,
            'failure': r.failure or '',
            'witness': json.dumps(r.witness) if r.witness is not None else '',
        })
    columns = ['label', 'kind', 'verdict', 'margin', 'tolerance', 'samples', 'failure', 'witness']
    return pd.DataFrame(rows, columns=columns)


def emit(report: RunReport, fmt: str = 'summary', include_timings: bool = True) -> str:
    """输出报告

    Args:
        fmt: 'json'（完整结构）| 'csv'（每项检验一行）| 'summary'（文本表格）
    """
    if fmt == 'json':
        return json.dumps(report.to_dict(include_timings), sort_keys=True, indent=2, ensure_ascii=False,
                          allow_nan=False, default=str) + '\n'
    frame = report_frame(report)
    if fmt == 'csv':
        return frame.to_csv(index=False, float_format='%.12g')
    if fmt == 'summary':
        head = f"场景 {report.digest[:12]}  版本 {report.version}  总体: {report.verdict.upper()}"
        if frame.empty:
            return head + "\n（没有检验）\n"
        frame.insert(0, '', [_MARKS[r.verdict] for r in report.checks])
        frame['margin'] = frame['margin'].map(lambda v: f"{v:.3e}")
        frame['tolerance'] = frame['tolerance'].map(lambda v: f"{v:.0e}")
        return head + '\n' + frame.drop(columns=['witness']).to_string(index=False) + '\n'
    raise ValueError(f"未知输出格式: {fmt}")


def sweep(scenario: Scenario, check_index: int, param: str, values: Sequence[Any],
          seed_override: Optional[int] = None) -> pd.DataFrame:
    """对一项检验的单个标量参数做扫描（如 δ 或 τ）

    Returns:
        DataFrame: 每个取值一行，含结论、裕量以及细节中的标量
    """
    if not 0 <= check_index < len(scenario.checks):
        raise ScenarioError(f"检验下标越界: {check_index}", '/checks', 'schema')
    base = scenario.checks[check_index]
    rows = []
    for value in values:
        check = copy.deepcopy(base)
        if param == 'tolerance':
            check.tolerance = float(value)
        elif param == 'seed':
            check.seed = int(value)
        else:
            check.params[param] = value
        report, elapsed = _run_check(scenario, check, seed_override)
        row = {param: value, 'verdict': report.verdict.value, 'margin': report.worst_margin,
               'tolerance': report.tolerance, 'samples': report.samples}
        for key, item in report.details.items():
            if _is_number(item) or isinstance(item, bool):
                row.setdefault(key, item)
        rows.append(row)
    frame = pd.DataFrame(rows)
    logger.info(f"扫描 {base.label}.{param}: {len(values)} 个取值")
    return frame
