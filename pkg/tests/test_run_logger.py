from run_logger import RunLogger


def rows(*verdicts):
    return [{'suite': 'twist', 'case': f"c{i}", 'lhs': 0.0, 'rhs': 0.0, 'tol': 1e-10, 'pass': v, 'note': ''}
            for i, v in enumerate(verdicts)]


def test_run_is_appended_as_one_json_line(tmp_path):
    log_file = tmp_path / "logs" / "runs.jsonl"
    run_logger = RunLogger(str(log_file))
    run_id = run_logger.start_run('verify', 'twist', 'inputs/run_rational.json', cases=['p1-step'])
    run_logger.record_rows(rows(True, False, True))
    run_logger.end_run('FAILED')

    assert run_id.startswith('run_')
    assert len(log_file.read_text().splitlines()) == 1
    run = run_logger.get_recent_runs()[0]
    assert run.run_id == run_id
    assert run.status == 'FAILED'
    assert run.cases == ['p1-step']
    assert (run.rows_total, run.rows_failed) == (3, 1)
    assert [entry.stage for entry in run.log_entries] == ['INIT', 'ROWS', 'COMPLETE']
    assert run.log_entries[1].level == 'WARNING'
    assert run.total_duration_ms is not None


def test_recent_runs_newest_first(tmp_path):
    run_logger = RunLogger(str(tmp_path / "runs.jsonl"))
    for suite in ('twist', 'basechange', 'growth'):
        run_logger.start_run('verify', suite)
        run_logger.end_run()
    assert [run.suite for run in run_logger.get_recent_runs()] == ['growth', 'basechange', 'twist']
    assert [run.suite for run in run_logger.get_recent_runs(limit=2)] == ['growth', 'basechange']


def test_without_a_log_file_nothing_is_written(tmp_path):
    run_logger = RunLogger(None)
    run_logger.start_run('verify', 'twist')
    run_logger.record_rows(rows(True))
    run_logger.end_run()
    assert run_logger.get_recent_runs() == []
    assert list(tmp_path.iterdir()) == []


def test_calls_outside_a_run_are_ignored(tmp_path):
    run_logger = RunLogger(str(tmp_path / "runs.jsonl"))
    run_logger.record_rows(rows(False))
    run_logger.end_run()
    assert not (tmp_path / "runs.jsonl").exists()


def test_corrupt_lines_are_reported_not_raised(tmp_path):
    log_file = tmp_path / "runs.jsonl"
    log_file.write_text("{not json\n")
    assert RunLogger(str(log_file)).get_recent_runs() == []
