"""Pytest wiring: one printed summary line per acceptance criterion.

The acceptance tests in test_acceptance.py carry criterion ids P1..P8;
this hook turns their outcomes into a compact PASS/FAIL block at the
end of the run so the verdicts survive output capture.
"""

_CRITERIA = {
    "test_p1_scripted_flow_purity": "P1 scripted-flow purity",
    "test_p2_terminal_status_accounting": "P2 terminal-status accounting",
    "test_p3_determinism_and_replay": "P3 determinism and replay",
    "test_p4_reward_composition_identities": "P4 reward composition identities",
    "test_p5_car_following_oracle": "P5 car-following oracle",
    "test_p6_vehicle_dynamics_and_speed_control": "P6 vehicle dynamics and speed control",
    "test_p7_network_inference_fidelity": "P7 network inference fidelity",
    "test_p8_adversarial_context_structure": "P8 adversarial context structure",
}


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = {}
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, ()):
            name = getattr(rep, "nodeid", "").rsplit("::", 1)[-1]
            if name in _CRITERIA:
                results[name] = "PASS" if outcome == "passed" else "FAIL"
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for name, label in _CRITERIA.items():
        if name in results:
            terminalreporter.write_line(f"{label}: {results[name]}")
