import random
import uuid

import pytest

from scotcloud.service import AnnotationService, Page, paginate
from scotcloud.sim import (
    LatencyModel,
    ReassemblyError,
    ScriptFormatError,
    ScriptLine,
    SimClock,
    SimError,
    Simulator,
    parse_command,
    parse_script,
    reassemble,
)

from conftest import TAGGER, store_state

AVATAR = uuid.UUID("00000000-0000-4000-8000-00000000beef")


def make_sim(units=1, seed=0, **kwargs) -> Simulator:
    return Simulator(AnnotationService(), units=units, seed=seed, **kwargs)


def chat_at(sim: Simulator, t: int, text: str, channel: int = 0) -> None:
    sim._push(t, "chat", ScriptLine(t, channel, AVATAR, text))


def issue_times(trace: str, unit: str | None = None) -> list[int]:
    times = []
    for line in trace.splitlines():
        parts = line.split(" ")
        if parts[1] == "issue" and (unit is None or parts[2] == unit):
            times.append(int(parts[0]))
    return times


def window_ok(times: list[int], window_ms: int = 20000, cap: int = 25) -> bool:
    # sliding-window oracle over the issue log: closed window ending at each issue
    return all(sum(1 for s in times if t - window_ms <= s <= t) <= cap for t in times)


class TestClock:
    def test_monotone(self):
        clock = SimClock()
        clock.advance_to(10)
        with pytest.raises(SimError):
            clock.advance_to(5)

    def test_advance_zero_fires_nothing(self):
        sim = make_sim()
        assert sim.advance(0) == []


class TestLatency:
    def test_degenerate_jitter_is_base(self):
        model = LatencyModel(50, 0, seed=3)
        assert [model.sample() for _ in range(5)] == [50] * 5

    def test_same_seed_same_sequence(self):
        a = LatencyModel(10, 40, seed=9)
        b = LatencyModel(10, 40, seed=9)
        assert [a.sample() for _ in range(50)] == [b.sample() for _ in range(50)]

    def test_response_arrives_at_base_delay(self):
        sim = make_sim()
        chat_at(sim, 0, "tag mouse laser")
        trace = sim.run([])
        response_lines = [l for l in trace.splitlines() if " response " in l]
        assert response_lines[0].startswith("50 ")


class TestSpawn:
    def test_listener_starts_empty(self):
        sim = make_sim()
        assert sim.listener.role == "listener"
        assert sim.listener.memory_used == 0

    def test_zero_budget_rejected(self):
        sim = make_sim()
        with pytest.raises(SimError):
            sim.spawn_unit("comm-unit", 0)

    def test_zero_units_rejected(self):
        with pytest.raises(SimError):
            make_sim(units=0)

    def test_four_units_give_hundred_per_window(self):
        sim = make_sim(units=4)
        for i in range(100):
            chat_at(sim, 0, f"tag r t{i}")
        trace = sim.run([])
        times = issue_times(trace)
        assert times == [0] * 100
        for unit in ("u1", "u2", "u3", "u4"):
            per_unit = issue_times(trace, unit)  # per-unit token replay oracle
            assert len(per_unit) == 25
            assert window_ok(per_unit)


class TestChat:
    def test_tag_command_issues_one_request(self):
        sim = make_sim()
        lines = sim.post_chat(0, AVATAR, "tag mouse laser")
        assert any(l.split(" ", 2)[1] == "issue" for l in lines)
        assert "/tag?resource=mouse&tag=laser" in "".join(lines)

    def test_help_gets_usage_and_no_request(self):
        sim = make_sim()
        lines = sim.post_chat(0, AVATAR, "help")
        assert any(" usage " in l for l in lines)
        assert not any(" issue " in l for l in lines)

    def test_gibberish_gets_usage_reply(self):
        sim = make_sim()
        lines = sim.post_chat(0, AVATAR, "frobnicate the spline")
        assert any(" usage " in l for l in lines)

    def test_map_command_carries_depth(self):
        sim = make_sim()
        lines = sim.post_chat(0, AVATAR, "map shoe 2")
        assert "/map?root=shoe&depth=2" in "".join(lines)

    def test_other_channel_is_ignored(self):
        sim = make_sim()
        lines = sim.post_chat(5, AVATAR, "tag mouse laser")
        assert len(lines) == 1 and " chat " in lines[0]

    def test_empty_message_rejected(self):
        sim = make_sim()
        with pytest.raises(ValueError):
            sim.post_chat(0, AVATAR, "")

    @pytest.mark.parametrize(
        "text,expected",
        [
            ("tag mouse laser", ("tag", ["mouse", "laser"])),
            ("cloud mouse", ("cloud", ["mouse"])),
            ("map shoe", ("map", ["shoe"])),
            ("map shoe 2", ("map", ["shoe", "2"])),
            ("attach shoe rubber", ("attach", ["shoe", "rubber"])),
            ("help", ("help", [])),
            ("tag onlyone", None),
            ("map shoe zero", None),
            ("map shoe 0", None),
            ("", None),
        ],
    )
    def test_grammar(self, text, expected):
        assert parse_command(text) == expected


class TestRateLimit:
    def test_26_requests_defer_the_last_to_20001(self):
        sim = make_sim(units=1)
        for i in range(26):
            chat_at(sim, 0, f"tag r t{i}")
        trace = sim.run([])
        times = issue_times(trace)
        assert times == [0] * 25 + [20001]
        assert any(l.split(" ")[1] == "defer" for l in trace.splitlines())

    def test_50_requests_two_units_all_at_zero(self):
        sim = make_sim(units=2)
        for i in range(50):
            chat_at(sim, 0, f"tag r t{i}")
        times = issue_times(sim.run([]))
        assert times == [0] * 50

    def test_random_schedule_respects_sliding_window(self):
        rng = random.Random(17)
        for trial in range(10):
            sim = make_sim(units=rng.randint(1, 3), seed=trial)
            t = 0
            for i in range(rng.randint(30, 120)):
                t += rng.randint(0, 2000)
                chat_at(sim, t, f"tag r{rng.randint(0, 3)} t{i}")
            trace = sim.run([])
            for unit in {f"u{k + 1}" for k in range(len(sim.units))}:
                assert window_ok(issue_times(trace, unit))

    def test_fixed_window_mode_resets_at_boundary(self):
        sim = make_sim(units=1, window_mode="fixed")
        for i in range(26):
            chat_at(sim, 0, f"tag r t{i}")
        times = issue_times(sim.run([]))
        assert times == [0] * 25 + [20000]

    def test_direct_issue_without_headroom_raises(self):
        sim = make_sim(units=1)
        unit = sim.units[0]
        unit.issued = [0] * 25
        from scotcloud.sim import _Command, _Pending

        with pytest.raises(SimError):
            sim.unit_issue(unit, _Pending(_Command("cloud", [("resource", "r")]), 0))


class TestReassembly:
    def test_single_page(self):
        assert reassemble([Page(1, 1, b"abc")]) == b"abc"

    def test_three_page_5000_byte_body(self):
        body = bytes(random.Random(4).randrange(256) for _ in range(5000))
        pages = paginate(body, 2048)
        assert len(pages) == 3
        shuffled = [pages[2], pages[0], pages[1]]
        assert reassemble(shuffled) == body  # compared against the unpaged body

    def test_missing_page_is_an_error(self):
        pages = paginate(b"x" * 5000, 2048)
        with pytest.raises(ReassemblyError, match="missing page 2"):
            reassemble([pages[0], pages[2]])

    def test_duplicate_page_is_an_error(self):
        with pytest.raises(ReassemblyError, match="duplicate"):
            reassemble([Page(1, 2, b"a"), Page(1, 2, b"a")])

    def test_inconsistent_totals_is_an_error(self):
        with pytest.raises(ReassemblyError, match="inconsistent"):
            reassemble([Page(1, 2, b"a"), Page(2, 3, b"b")])

    def test_empty_list_is_an_error(self):
        with pytest.raises(ReassemblyError):
            reassemble([])

    def test_multi_page_response_is_fetched_and_reassembled(self):
        service = AnnotationService()
        for i in range(120):
            service.handle_url(f"/tag?resource=big&tag=tag{i:03d}&tagger={TAGGER}")
        direct = service.handle_url("/cloud?resource=big")
        assert direct.page.total >= 3

        sim = Simulator(service, units=1)
        chat_at(sim, 0, "cloud big")
        trace = sim.run([])
        times = issue_times(trace)
        assert len(times) == direct.page.total
        completes = [l for l in trace.splitlines() if " complete " in l]
        assert len(completes) == 1
        import hashlib

        from conftest import fetch_full

        body = fetch_full(service, "cloud", {"resource": "big"})
        assert completes[0].endswith(f"{len(body)} {hashlib.sha256(body).hexdigest()[:8]}")


class TestMemory:
    def test_65537_bytes_exceeds_default_budget(self):
        sim = make_sim()
        unit = sim.units[0]
        sim.memory_account(unit, 65537)
        assert unit.frozen
        assert any("memory-exceeded" in l for l in sim.trace)

    def test_1024_bytes_is_fine(self):
        sim = make_sim()
        unit = sim.units[0]
        sim.memory_account(unit, 1024)
        assert unit.memory_used == 1024
        assert not unit.frozen

    def test_warning_at_25600_keeps_unit_live(self):
        sim = make_sim()
        unit = sim.units[0]
        sim.memory_account(unit, 25600)
        assert any("memory-warn" in l for l in sim.trace)
        assert not unit.frozen

    def test_budget_boundary_is_inclusive(self):
        sim = make_sim()
        unit = sim.units[0]
        sim.memory_account(unit, 65536)
        assert not unit.frozen
        sim.memory_account(unit, 1)
        assert unit.frozen

    def test_frozen_unit_issues_nothing(self):
        sim = make_sim(units=1)
        sim.memory_account(sim.units[0], 70000)
        chat_at(sim, 0, "tag r t")
        trace = sim.run([])
        assert issue_times(trace) == []

    def test_pending_requests_cost_memory(self):
        sim = make_sim(units=1, request_cost=512)
        chat_at(sim, 0, "tag r t")
        sim.advance(0)
        assert sim.units[0].memory_used == 512
        sim.advance(100)  # response at t=50 releases the reservation
        assert sim.units[0].memory_used == 0


class TestAdvance:
    def test_deferred_request_fires_after_window_clears(self):
        sim = make_sim(units=1)
        for i in range(26):
            chat_at(sim, 0, f"tag r t{i}")
        sim.advance(0)
        assert len(issue_times("\n".join(sim.trace))) == 25
        sim.advance(20000)
        assert len(issue_times("\n".join(sim.trace))) == 25
        sim.advance(1)
        assert len(issue_times("\n".join(sim.trace))) == 26

    def test_negative_advance_rejected(self):
        sim = make_sim()
        with pytest.raises(SimError):
            sim.advance(-1)


class TestDeterminism:
    def build_script(self, n=40) -> list[ScriptLine]:
        rng = random.Random(1234)
        lines = []
        t = 0
        for i in range(n):
            t += rng.randint(0, 700)
            kind = rng.choice(["tag", "tag", "tag", "cloud", "map", "help"])
            if kind == "tag":
                text = f"tag r{rng.randint(0, 4)} t{rng.randint(0, 9)}"
            elif kind == "cloud":
                text = f"cloud r{rng.randint(0, 4)}"
            elif kind == "map":
                text = "map shoe 2"
            else:
                text = "help"
            lines.append(ScriptLine(t, 0, AVATAR, text))
        return lines

    def test_identical_seeds_identical_traces(self):
        script = self.build_script()
        runs = []
        for _ in range(2):
            sim = Simulator(AnnotationService(), units=2, seed=42, latency=LatencyModel(40, 30, 42))
            runs.append(sim.run(script))
        assert runs[0] == runs[1]

    def test_different_seed_changes_latency_trace(self):
        script = self.build_script()
        a = Simulator(AnnotationService(), units=2, seed=1, latency=LatencyModel(40, 30, 1)).run(script)
        b = Simulator(AnnotationService(), units=2, seed=2, latency=LatencyModel(40, 30, 2)).run(script)
        assert a != b

    def test_every_accepted_command_completes_exactly_once(self):
        rng = random.Random(7)
        sim = make_sim(units=2, seed=7)
        accepted = 0
        t = 0
        for i in range(150):
            t += rng.randint(0, 400)
            chat_at(sim, t, f"tag r{rng.randint(0, 2)} t{rng.randint(0, 30)}")
            accepted += 1
        trace = sim.run([])
        completes = [l for l in trace.splitlines() if l.split(" ")[1] == "complete"]
        assert len(completes) == accepted
        assert len(issue_times(trace)) == accepted

    def test_store_matches_direct_replay(self):
        script = self.build_script()
        service = AnnotationService()
        Simulator(service, units=1, seed=5).run(script)

        direct = AnnotationService()
        for line in script:
            parsed = parse_command(line.text)
            if parsed is None or parsed[0] == "help":
                continue
            kind, args = parsed
            if kind == "tag":
                direct.handle_url(f"/tag?resource={args[0]}&tag={args[1]}&tagger={line.sender}")
            elif kind == "attach":
                direct.handle_url(f"/attach?parent={args[0]}&child={args[1]}&tagger={line.sender}")
        assert store_state(service.store)[0] == store_state(direct.store)[0]


class TestScriptFormat:
    def test_parse_and_roundtrip(self):
        text = (
            "# warmup\n"
            f"@0 0 {AVATAR} tag mouse laser\n"
            f"@120 0 {AVATAR} cloud mouse\n"
            f"@120 0 {AVATAR} help\n"
        )
        lines = parse_script(text)
        assert [l.time_ms for l in lines] == [0, 120, 120]
        assert lines[0].text == "tag mouse laser"

    def test_unsorted_times_rejected(self):
        text = f"@10 0 {AVATAR} help\n@5 0 {AVATAR} help\n"
        with pytest.raises(ScriptFormatError):
            parse_script(text)

    def test_malformed_lines_rejected(self):
        for bad in ["nope", "@x 0 u help", f"@1 zero {AVATAR} help", "@1 0 not-a-uuid help"]:
            with pytest.raises(ScriptFormatError):
                parse_script(bad + "\n")
