# -*- coding: utf-8 -*-
"""
配置文件
对数凹测度数值验证工具包的全部可调参数
"""

import os
from dotenv import load_dotenv

load_dotenv()

TOOLKIT_VERSION = '0.3.0'

# 有限差分配置
DIFF_CONFIG = {
    'grad_scale': 1e-5,    # 梯度步长 h = grad_scale * (1 + |p|∞)
    'hess_scale': 1e-4,    # 海森步长，二阶差分对舍入误差更敏感
    'richardson': False,   # 是否做一次Richardson外推
}

# 网格配置
GRID_CONFIG = {
    'max_dim': 4,                   # 张量网格维数上限
    'min_resolution': 8,            # 每轴最少节点数
    'zero_floor': 1e-13,            # 相对峰值低于此值的节点按0处理
    'mass_loss_warn': 1e-3,         # 推前/卷积截断质量告警阈值
    'edge_ratio_warn': 1e-6,        # 离散化边界值/峰值告警阈值
    'interp_log_floor': -1e6,       # 对数插值中零值的替代下界
}

# 检验配置
CHECK_CONFIG = {
    'tolerance': 1e-6,        # 默认容差
    'pairs': 4096,            # 随机节点对数量
    'mode_pairs': 32,         # 局部极大值两两配对的上限
    'slc_tolerance': 1e-5,    # 海森下界证书容差
    'slc_samples': 256,       # 海森抽样点数
    'hypothesis_pairs': 2048, # PL假设抽查的节点对数量
    'chunk_size': 256,        # 上卷积每批处理的输出节点数
    'strict_factor': 1e-9,    # 严格不等式边界的相对收缩
}

# 高斯空间配置
GAUSSIAN_CONFIG = {
    'order': int(os.getenv('LCTK_GH_ORDER', '64')),  # 每轴Gauss-Hermite阶数
    'lattice_radius': 2.0,    # h, h' 格点半径（网格输入时取区域宽度的1/4）
    'lattice_points': 17,     # 每轴格点数
    'w_samples': 8,           # w 的蒙特卡洛样本数
    'hk_samples': 512,        # 每个 w 的 (h, h') 对数量
    'monotone_radii': 8,      # 单调性检验的径向层数
    'monotone_radius': 3.0,   # 单调性检验的最大半径
    'liminf_tail': 3,         # liminf 近似所取的尾部长度
    'smoothing_family': 'ou', # 光滑化族 u_n = P_{1/n} u
    'eval_chunk': 1 << 20,    # 单批求值点数上限
}

# 一维输运配置
TRANSPORT_CONFIG = {
    'window': (0.05, 0.95),            # 中心90%分位窗口
    'pushforward_window': (0.01, 0.99),
    'min_window_points': 10,
    'p_clip': 1e-12,                   # 分位数输入的裁剪
    'density_floor': 1e-10,            # 相对峰值低于此值的目标密度按零处理，导数退回差分
}

# 运行配置
RUN_CONFIG = {
    'scenario_version': '1',
    'jobs': int(os.getenv('LCTK_JOBS', '1')),
    'format': 'summary',
}

# 日志配置
LOG_CONFIG = {
    'level': os.getenv('LCTK_LOG_LEVEL', 'INFO'),
    'log_dir': os.getenv('LCTK_LOG_DIR', './logs'),
    'rotation': '10 MB',
    'retention': '7 days',
    'format': '{time:YYYY-MM-DD HH:mm:ss} | {level} | {name}:{function}:{line} | {message}',
}
