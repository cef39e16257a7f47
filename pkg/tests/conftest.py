import report


def pytest_runtest_makereport(item, call):
    # a criterion that crashes before reaching its verdict still gets a line
    if call.when != "call" or call.excinfo is None:
        return
    number = report.number_from_nodeid(item.nodeid)
    if number is not None and number not in report.RESULTS:
        report.RESULTS[number] = f"criterion {number:>2} FAIL  {item.name}: {call.excinfo.typename}: {call.excinfo.value}"


def pytest_terminal_summary(terminalreporter):
    if not report.RESULTS:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(report.RESULTS):
        terminalreporter.write_line(report.RESULTS[number])
