# -*- coding: utf-8 -*-
"""
对数凹测度工具箱主程序
命令: check（运行场景）、sweep（单参数扫描，输出 CSV）、fmt（校验并规范化场景）、version
退出码: 0 全部通过，1 至少一项检验失败，2 输入或配置错误
"""

import argparse
import json
import os
import sys
from datetime import datetime
from typing import List, Optional

from loguru import logger

from cli_report import FORMATS, ScenarioError, emit, exit_code, load_scenario, normalize_scenario, run, sweep
from config import LOG_CONFIG, RUN_CONFIG, TOOLKIT_VERSION

EXIT_PASS = 0
EXIT_FAIL = 1
EXIT_INPUT = 2


def setup_logging(level: Optional[str] = None, to_file: bool = True):
    """设置日志：控制台输出到 stderr（stdout 留给报告），文件按大小轮转"""
    logger.remove()
    logger.add(
        sys.stderr,
        format="<green>{time:YYYY-MM-DD HH:mm:ss}</green> | <level>{level: <8}</level> | <cyan>{name}</cyan>:<cyan>{function}</cyan>:<cyan>{line}</cyan> - <level>{message}</level>",
        level=level or LOG_CONFIG['level'],
    )
    if to_file:
        os.makedirs(LOG_CONFIG['log_dir'], exist_ok=True)
        logger.add(
            os.path.join(LOG_CONFIG['log_dir'], f"lctk_{datetime.now().strftime('%Y-%m-%d')}.log"),
            rotation=LOG_CONFIG['rotation'],
            retention=LOG_CONFIG['retention'],
            level='DEBUG',
            format=LOG_CONFIG['format'],
            encoding='utf-8',
        )


def _write(text: str, out: Optional[str]):
    if out:
        with open(out, 'w', encoding='utf-8', newline='') as fh:
            fh.write(text)
        logger.info(f"输出已写入 {out}")
    else:
        sys.stdout.write(text)


def _parse_values(text: str) -> List:
    """'0.1,0.2,0.3' 或 JSON 数组"""
    text = text.strip()
    if text.startswith('['):
        return json.loads(text)
    return [json.loads(v) for v in text.split(',') if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='lctk', description='对数凹与超对数凹测度的数值验证工具箱')
    parser.add_argument('--log-level', default=None, help='控制台日志级别（默认取 LOG_CONFIG）')
    parser.add_argument('--no-log-file', action='store_true', help='不写日志文件')
    sub = parser.add_subparsers(dest='verb', required=True)

    check = sub.add_parser('check', help='运行场景中的全部检验')
    check.add_argument('--scenario', required=True, help='场景 JSON 文件')
    check.add_argument('--out', default=None, help='报告输出路径（默认标准输出）')
    check.add_argument('--format', choices=FORMATS, default=None, help='报告格式')
    check.add_argument('--jobs', type=int, default=None, help='并行线程数')
    check.add_argument('--seed-override', type=int, default=None, help='覆盖所有检验的种子')
    check.add_argument('--no-timings', action='store_true', help='JSON 报告中省略耗时字段')

    sw = sub.add_parser('sweep', help='对一项检验的单个参数做扫描，输出 CSV')
    sw.add_argument('--scenario', required=True)
    sw.add_argument('--check', type=int, default=0, help='检验下标（从 0 开始）')
    sw.add_argument('--param', required=True, help='参数名，如 delta、tau、tolerance')
    sw.add_argument('--values', required=True, help="取值列表，如 '0.4,0.45,0.5' 或 JSON 数组")
    sw.add_argument('--out', default=None)
    sw.add_argument('--seed-override', type=int, default=None)

    fmt = sub.add_parser('fmt', help='校验并规范化场景文件')
    fmt.add_argument('--scenario', required=True)
    fmt.add_argument('--out', default=None)

    sub.add_parser('version', help='显示版本')
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """主函数，返回退出码"""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_PASS if e.code == 0 else EXIT_INPUT
    setup_logging(args.log_level, not args.no_log_file)

    if args.verb == 'version':
        sys.stdout.write(f"lctk {TOOLKIT_VERSION} (scenario version {RUN_CONFIG['scenario_version']})\n")
        return EXIT_PASS

    try:
        scenario = load_scenario(args.scenario)
        if args.verb == 'fmt':
            _write(normalize_scenario(scenario), args.out)
            return EXIT_PASS
        if args.verb == 'sweep':
            frame = sweep(scenario, args.check, args.param, _parse_values(args.values), args.seed_override)
            _write(frame.to_csv(index=False, float_format='%.12g'), args.out)
            return EXIT_FAIL if (frame['verdict'] == 'fail').any() else EXIT_PASS
        report = run(scenario, args.jobs, args.seed_override)
        fmt = args.format or scenario.output.get('format', RUN_CONFIG['format'])
        _write(emit(report, fmt, include_timings=not args.no_timings), args.out or scenario.output.get('path'))
        return exit_code(report)
    except ScenarioError as e:
        logger.error(f"场景错误 {e.pointer} [{e.code}]: {e.message}")
        sys.stderr.write(f"error: {e}\n")
        return EXIT_INPUT
    except (OSError, ValueError) as e:
        logger.error(f"输入错误: {e}")
        sys.stderr.write(f"error: {e}\n")
        return EXIT_INPUT
    except KeyboardInterrupt:
        logger.info("接收到停止信号，正在退出...")
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
