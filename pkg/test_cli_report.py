# -*- coding: utf-8 -*-
"""
场景加载、检验分发、报告输出与命令行退出码测试
"""

import copy
import hashlib
import io
import json
from pathlib import Path

import pandas as pd
import pytest
from loguru import logger

import main as cli
from cli_report import (
    REGISTRY, ScenarioError, emit, exit_code, load_scenario, normalize_scenario, parse_scenario,
    run, sweep,
)
from measure_core import BoxDomain, GridDensity, save_grid_binary
from potential_dsl import parse

SCENARIOS = Path(__file__).resolve().parent / 'scenarios'


def gauss_measure(label: str = 'gauss', **extra) -> dict:
    item = {"label": label, "potential": "x1^2/2", "domain": {"lo": [-8.0], "hi": [8.0]},
            "resolution": 257, "alpha": 1.0}
    item.update(extra)
    return item


def document(checks, measures=None) -> dict:
    return {"version": "1", "measures": [gauss_measure()] if measures is None else measures, "checks": checks}


def scenario_error(doc) -> ScenarioError:
    with pytest.raises(ScenarioError) as info:
        parse_scenario(doc)
    return info.value


def test_minimal_scenario_passes():
    scenario = load_scenario(SCENARIOS / 'minimal.json')
    report = run(scenario)
    assert report.verdict == 'pass'
    assert exit_code(report) == 0
    data = json.loads(emit(report, 'json'))
    assert data['verdict'] == 'pass'
    assert data['scenario_digest'] == scenario.digest
    assert data['checks'][0]['label'] == 'check_logconcave#0'
    assert set(data['timings']) == {'check_logconcave#0'}


def test_prekopa_scenario_passes():
    report = run(load_scenario(SCENARIOS / 'prekopa_gaussian.json'), jobs=2)
    assert report.verdict == 'pass', emit(report, 'summary')
    assert len(report.checks) == 8


def test_bimodal_scenario_fails_with_witness():
    report = run(load_scenario(SCENARIOS / 'bimodal_counterexample.json'))
    assert report.verdict == 'fail'
    assert exit_code(report) == 1
    bad, good = report.checks
    assert bad.failed and bad.witness is not None
    assert good.passed
    text = emit(report, 'summary')
    assert '总体: FAIL' in text
    assert '✗' in text and '✓' in text
    frame = pd.read_csv(io.StringIO(emit(report, 'csv')))
    assert list(frame['label']) == ['bimodal-logconcave', 'gauss-logconcave']
    assert list(frame['verdict']) == ['fail', 'pass']


def test_report_is_deterministic_without_timings():
    scenario = load_scenario(SCENARIOS / 'bimodal_counterexample.json')
    first = emit(run(scenario, jobs=1), 'json', include_timings=False)
    second = emit(run(scenario, jobs=4), 'json', include_timings=False)
    assert first == second
    assert 'timings' not in json.loads(first)


def test_seed_override_changes_only_sampling():
    scenario = load_scenario(SCENARIOS / 'minimal.json')
    a = run(scenario, seed_override=5).checks[0]
    b = run(scenario, seed_override=5).checks[0]
    assert a.to_dict() == b.to_dict()


def test_digest_ignores_key_order():
    doc = document([{"kind": "check_logconcave", "measure": "gauss", "seed": 0}])
    shuffled = {"checks": doc["checks"], "measures": doc["measures"], "version": "1"}
    canonical = json.dumps(doc, sort_keys=True, separators=(',', ':'), ensure_ascii=False)
    assert parse_scenario(doc).digest == parse_scenario(shuffled).digest
    assert parse_scenario(doc).digest == hashlib.sha256(canonical.encode('utf-8')).hexdigest()


def test_undefined_label():
    err = scenario_error(document([{"kind": "check_logconcave", "measure": "nope", "seed": 0}]))
    assert err.code == 'undefined_label'
    assert err.pointer == '/checks/0/measure'
    assert 'nope' in err.message


def test_seed_required_for_sampled_kinds():
    err = scenario_error(document([{"kind": "check_logconcave", "measure": "gauss"}]))
    assert err.code == 'seed_required'
    assert err.pointer == '/checks/0/seed'
    parse_scenario(document([{"kind": "slc_delta_bound", "params": {"alpha": 1, "sigma": 1, "delta": 0.4}}]))
    err = scenario_error(document([{"kind": "slc_delta_bound", "measure": "gauss",
                                    "params": {"sigma": 1, "delta": 0.4}}]))
    assert err.code == 'seed_required'


def test_schema_errors():
    assert scenario_error(document([{"kind": "no_such_check", "seed": 0}])).code == 'unknown_kind'
    assert scenario_error(document([], [gauss_measure(), gauss_measure()])).code == 'duplicate_label'
    bad_version = document([])
    bad_version['version'] = '2'
    assert scenario_error(bad_version).pointer == '/version'
    err = scenario_error(document([], [gauss_measure(potential="x1^")]))
    assert err.code == 'parse'
    assert err.pointer == '/measures/0/potential'
    err = scenario_error(document([{"kind": "check_logconcave", "measures": {"rho": "gauss"}, "seed": 0}]))
    assert err.code == 'schema'
    err = scenario_error(document([{"kind": "check_logconcave", "measure": "gauss", "seed": 0, "extra": 1}]))
    assert err.pointer == '/checks/0'
    both = gauss_measure(density="1")
    assert scenario_error(document([], [both])).pointer == '/measures/0'


def test_required_params_checked_at_load():
    err = scenario_error(document([{"kind": "slc_delta_bound", "params": {"alpha": 1.0}}]))
    assert err.code == 'missing_param'
    assert err.pointer == '/checks/0/params/sigma'
    err = scenario_error(document([{"kind": "closure", "measure": "gauss", "seed": 0}]))
    assert err.pointer == '/checks/0/params/op'
    err = scenario_error(document([{"kind": "verify_lsi", "measure": "gauss", "seed": 0}]))
    assert err.pointer == '/checks/0/params/fs'


def test_operation_params_abort_the_run():
    """closure 的 marginalize 缺少 keep：不是检验失败，而是场景错误"""
    doc = document([{"kind": "closure", "measure": "gauss", "params": {"op": "marginalize"}, "seed": 0}])
    scenario = parse_scenario(doc)
    with pytest.raises(ScenarioError) as info:
        run(scenario)
    assert info.value.pointer == '/checks/0/params/keep'
    with pytest.raises(ScenarioError):
        sweep(scenario, 0, 'seed', [1])


def test_json_syntax_error(tmp_path):
    path = tmp_path / 'broken.json'
    path.write_text('{"version": "1", "measures": [', encoding='utf-8')
    with pytest.raises(ScenarioError) as info:
        load_scenario(path)
    assert info.value.code == 'parse'


def test_grid_file_measure(tmp_path):
    grid = GridDensity.from_function(BoxDomain.cube(-6.0, 6.0, 1), 129, parse("exp(-x1^2/2)", 1))
    sha = save_grid_binary(grid, tmp_path / 'g.bin')
    doc = document([{"kind": "check_logconcave", "measure": "g", "seed": 0}],
                   [{"label": "g", "grid_file": "g.bin", "sha256": sha}])
    path = tmp_path / 'scenario.json'
    path.write_text(json.dumps(doc), encoding='utf-8')
    assert run(load_scenario(path)).verdict == 'pass'

    doc['measures'][0]['sha256'] = '0' * 64
    path.write_text(json.dumps(doc), encoding='utf-8')
    with pytest.raises(ScenarioError) as info:
        load_scenario(path)
    assert info.value.code == 'grid_file'


def test_empty_check_list_passes():
    report = run(parse_scenario(document([])))
    assert report.verdict == 'pass'
    assert '没有检验' in emit(report, 'summary')
    assert json.loads(emit(report, 'json'))['checks'] == []


def test_check_errors_become_failures():
    doc = document([{"kind": "closure", "measure": "gauss", "params": {"op": "explode"}, "seed": 0}])
    report = run(parse_scenario(doc))
    r = report.checks[0]
    assert r.failed
    assert r.failure == 'error'
    assert r.worst_margin == float('-inf')
    assert r.worst_margin < -r.tolerance
    assert r.witness == []
    assert any('ValueError' in n for n in r.notes)
    assert json.loads(emit(report, 'json'))['checks'][0]['worst_margin'] is None
    assert '-inf' in emit(report, 'summary')


def test_closure_operations():
    measures = [gauss_measure(resolution=129), gauss_measure('g', potential="abs(x1)", resolution=129)]
    checks = [
        {"kind": "closure", "measures": {"f": "gauss", "g": "g"}, "params": {"op": "convolve"}, "seed": 0},
        {"kind": "closure", "measures": {"f": "gauss", "g": "g"}, "params": {"op": "product"}, "seed": 0},
        {"kind": "closure", "measure": "gauss", "params": {"op": "weight", "convex": "x1^2"}, "seed": 0},
        {"kind": "closure", "measure": "gauss", "params": {"op": "smooth", "sigma": 0.5}, "seed": 0},
    ]
    report = run(parse_scenario(document(checks, measures)))
    assert [r.verdict.value for r in report.checks] == ['pass'] * 4
    assert report.checks[1].details['op'] == 'product'


def test_gaussian_brunn_minkowski_set_form():
    check = {"kind": "verify_gaussian_pl", "seed": 0,
             "params": {"A": [[[-1.0], [0.0]]], "B": [[[0.0], [1.0]]],
                        "domain": {"lo": [-8.0], "hi": [8.0]}, "resolution": 1025}}
    report = run(parse_scenario(document([check])))
    r = report.checks[0]
    assert r.passed
    assert r.details['nu_a'] == pytest.approx(0.38292, abs=1e-4)


def test_transport_kinds():
    line = {"lo": [-8.0], "hi": [8.0]}
    measures = [
        gauss_measure(resolution=2049),
        gauss_measure('narrow', potential="x1^2/(2*0.36)", resolution=2049),
        {"label": "q", "reference": "gaussian", "density": "exp(-x1^4)", "domain": line,
         "resolution": 2049, "alpha": 1.0},
        {"label": "L", "reference": "gaussian", "density": "exp(x1)", "domain": line, "resolution": 2049},
    ]
    checks = [
        {"kind": "monge_map", "measures": {"source": "gauss", "target": "narrow"}},
        {"kind": "check_caffarelli", "measure": "q"},
        {"kind": "transport_jacobian_identity", "measure": "L"},
        {"kind": "verify_lsi", "measure": "gauss", "params": {"fs": ["x1", "exp(x1/2)"]}, "seed": 0},
    ]
    report = run(parse_scenario(document(checks, measures)))
    assert [r.verdict.value for r in report.checks] == ['pass'] * 4, emit(report, 'summary')
    assert report.checks[0].details['lipschitz'] == pytest.approx(0.6, abs=0.01)
    assert len(report.checks[3].details['items']) == 2


def test_sweep_over_delta():
    doc = document([{"kind": "slc_delta_bound", "params": {"alpha": 1.0, "sigma": 1.0, "delta": 0.4}}])
    frame = sweep(parse_scenario(doc), 0, 'delta', [0.4, 0.49, 0.51])
    assert list(frame['delta']) == [0.4, 0.49, 0.51]
    assert list(frame['verdict']) == ['pass', 'pass', 'fail']
    assert frame['delta_max'].iloc[0] == pytest.approx(0.5)
    with pytest.raises(ScenarioError):
        sweep(parse_scenario(doc), 3, 'delta', [0.1])


def test_normalize_is_idempotent():
    scenario = load_scenario(SCENARIOS / 'prekopa_gaussian.json')
    text = normalize_scenario(scenario)
    again = normalize_scenario(parse_scenario(json.loads(text)))
    assert text == again
    assert json.loads(text)['checks'][0]['tolerance'] == REGISTRY['check_logconcave'].tolerance


def test_sweep_does_not_mutate_scenario():
    doc = document([{"kind": "slc_delta_bound", "params": {"alpha": 1.0, "sigma": 1.0, "delta": 0.4}}])
    scenario = parse_scenario(doc)
    before = copy.deepcopy(scenario.checks[0].params)
    sweep(scenario, 0, 'delta', [0.9])
    assert scenario.checks[0].params == before


# ---------------------------------------------------------------------------
# 命令行
# ---------------------------------------------------------------------------

@pytest.fixture
def reset_logger():
    yield
    logger.remove()


def test_main_exit_codes(tmp_path, capsys, reset_logger):
    out = tmp_path / 'report.json'
    code = cli.main(['--no-log-file', 'check', '--scenario', str(SCENARIOS / 'minimal.json'),
                     '--format', 'json', '--out', str(out)])
    assert code == cli.EXIT_PASS
    assert json.loads(out.read_text(encoding='utf-8'))['verdict'] == 'pass'

    code = cli.main(['--no-log-file', 'check', '--scenario', str(SCENARIOS / 'bimodal_counterexample.json'),
                     '--format', 'csv'])
    assert code == cli.EXIT_FAIL
    assert 'bimodal-logconcave' in capsys.readouterr().out

    assert cli.main(['--no-log-file', 'check', '--scenario', str(tmp_path / 'missing.json')]) == cli.EXIT_INPUT
    bad = tmp_path / 'bad.json'
    bad.write_text(json.dumps(document([{"kind": "check_logconcave", "measure": "gauss"}])), encoding='utf-8')
    assert cli.main(['--no-log-file', 'check', '--scenario', str(bad)]) == cli.EXIT_INPUT
    assert 'seed_required' in capsys.readouterr().err
    missing = tmp_path / 'missing_param.json'
    missing.write_text(json.dumps(document([{"kind": "slc_delta_bound", "params": {"alpha": 1}}])),
                       encoding='utf-8')
    assert cli.main(['--no-log-file', 'check', '--scenario', str(missing)]) == cli.EXIT_INPUT
    assert 'missing_param' in capsys.readouterr().err
    runtime = tmp_path / 'runtime_param.json'
    runtime.write_text(json.dumps(document([{"kind": "closure", "measure": "gauss", "seed": 0,
                                             "params": {"op": "pushforward"}}])), encoding='utf-8')
    assert cli.main(['--no-log-file', 'check', '--scenario', str(runtime)]) == cli.EXIT_INPUT
    assert '/checks/0/params/matrix' in capsys.readouterr().err
    assert cli.main(['--no-log-file']) == cli.EXIT_INPUT


def test_main_version_fmt_and_sweep(tmp_path, capsys, reset_logger):
    assert cli.main(['--no-log-file', 'version']) == cli.EXIT_PASS
    assert 'lctk' in capsys.readouterr().out

    out = tmp_path / 'normalized.json'
    assert cli.main(['--no-log-file', 'fmt', '--scenario', str(SCENARIOS / 'minimal.json'),
                     '--out', str(out)]) == cli.EXIT_PASS
    assert json.loads(out.read_text(encoding='utf-8'))['version'] == '1'

    path = tmp_path / 'delta.json'
    path.write_text(json.dumps(document([{"kind": "slc_delta_bound",
                                          "params": {"alpha": 1.0, "sigma": 1.0, "delta": 0.4}}])),
                    encoding='utf-8')
    code = cli.main(['--no-log-file', 'sweep', '--scenario', str(path), '--param', 'delta',
                     '--values', '0.3,0.6'])
    assert code == cli.EXIT_FAIL
    frame = pd.read_csv(io.StringIO(capsys.readouterr().out))
    assert list(frame['verdict']) == ['pass', 'fail']
