import csv
import json

import pytest

from passive_outage.cli import main
from passive_outage.detector import DOWN
from passive_outage.simulator import DEFAULT_EPOCH, hybrid_population
from passive_outage.training import DAY

DAY3 = str(DEFAULT_EPOCH + 2 * DAY)


def rows(path):
    with open(path) as fh:
        return list(csv.DictReader(l for l in fh if not l.startswith("#")))


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "scenario.json").write_text(json.dumps(hybrid_population(seed=3, n_addresses=100).to_dict()))
    assert main(["simulate", "--scenario", str(d / "scenario.json"), "--out-dir", str(d / "sim")]) == 0
    assert main(["train", "--observations", str(d / "sim/observations.csv"), "--day", DAY3,
                 "--out", str(d / "models.csv")]) == 0
    assert main(["detect", "--observations", str(d / "sim/observations.csv"), "--models", str(d / "models.csv"),
                 "--day", DAY3, "--out-dir", str(d / "det"), "--trace"]) == 0
    return d


class TestTrain:
    def test_one_row_per_address(self, workdir):
        models = rows(workdir / "models.csv")
        addrs = [r["address"] for r in models]
        observed = {r["src"] for r in rows(workdir / "sim/observations.csv")}
        assert len(addrs) == len(set(addrs)) == len(observed)

    def test_provenance_header(self, workdir):
        head = (workdir / "models.csv").read_text().splitlines()[:5]
        assert head[0].startswith("# config_sha256=")
        assert head[1].startswith("# config={")
        assert any(l.startswith("# observations_sha256=") for l in head)

    def test_rerun_identical_bytes(self, workdir, tmp_path):
        out = tmp_path / "again.csv"
        assert main(["train", "--observations", str(workdir / "sim/observations.csv"), "--day", DAY3,
                     "--out", str(out)]) == 0
        assert out.read_bytes() == (workdir / "models.csv").read_bytes()

    def test_missing_file_exit_2(self, tmp_path, capsys):
        missing = tmp_path / "nope.csv"
        assert main(["train", "--observations", str(missing), "--day", DAY3, "--out", str(tmp_path / "m.csv")]) == 2
        assert str(missing) in capsys.readouterr().err

    def test_strict_empty_window(self, tmp_path):
        obs = tmp_path / "o.csv"
        obs.write_text("timestamp,src\n")
        args = ["train", "--observations", str(obs), "--day", DAY3, "--out", str(tmp_path / "m.csv")]
        assert main(args) == 0
        assert main(args + ["--strict"]) == 2

    def test_bad_config_exit_3(self, workdir, tmp_path):
        assert main(["train", "--observations", str(workdir / "sim/observations.csv"), "--day", DAY3,
                     "--out", str(tmp_path / "m.csv"), "--set", "theta_measurable=0.9"]) == 3


class TestDetect:
    def test_outputs_exist(self, workdir):
        for name in ("events.csv", "blocks.csv", "state.csv", "trace.csv"):
            assert (workdir / "det" / name).is_file()

    def test_stale_models_exit_3(self, workdir, tmp_path):
        late = str(DEFAULT_EPOCH + 5 * DAY)
        args = ["detect", "--observations", str(workdir / "sim/observations.csv"),
                "--models", str(workdir / "models.csv"), "--day", late, "--out-dir", str(tmp_path / "d")]
        assert main(args) == 3
        assert main(args + ["--allow-stale"]) == 0

    def test_empty_day_takes_every_measurable_block_down(self, workdir, tmp_path):
        src = rows(workdir / "sim/observations.csv")
        quiet = tmp_path / "quiet.csv"
        with open(quiet, "w") as fh:
            fh.write("timestamp,src\n")
            for r in src:
                if float(r["timestamp"]) < float(DAY3):
                    fh.write(f"{r['timestamp']},{r['src']}\n")
        assert main(["detect", "--observations", str(quiet), "--models", str(workdir / "models.csv"),
                     "--day", DAY3, "--out-dir", str(tmp_path / "d")]) == 0
        measurable = {r["block"] for r in rows(tmp_path / "d/blocks.csv") if r["measurable"] == "1"}
        down = {r["block"] for r in rows(tmp_path / "d/events.csv") if r["kind"] == DOWN}
        assert measurable and down == measurable

    def test_initial_state_carries_over(self, workdir, tmp_path):
        next_day = str(float(DAY3) + DAY)
        assert main(["detect", "--observations", str(workdir / "sim/observations.csv"),
                     "--models", str(workdir / "models.csv"), "--day", next_day, "--allow-stale",
                     "--initial-state", str(workdir / "det/state.csv"), "--out-dir", str(tmp_path / "d")]) == 0


class TestEvaluate:
    def test_cells_print_metrics(self, capsys):
        assert main(["evaluate", "--cells", "52525765695,13147965,2471178,78163261"]) == 0
        assert capsys.readouterr().out.strip() == "PPV=0.9999 recall=0.9985 TNR=0.8417"

    def test_bad_cells(self):
        assert main(["evaluate", "--cells", "1,2,3"]) == 2

    def test_against_truth(self, workdir, tmp_path, capsys):
        out = tmp_path / "report.csv"
        assert main(["evaluate", "--detections", str(workdir / "det"), "--truth", str(workdir / "sim/truth.csv"),
                     "--out", str(out)]) == 0
        assert "precision_aware" in capsys.readouterr().out
        agg = [r for r in rows(out) if r["scope"] == "aggregate"]
        assert [r["comparison"] for r in agg] == ["direct", "precision_aware", "events"]

    def test_self_comparison_is_perfect(self, workdir, tmp_path, capsys):
        blocks = rows(workdir / "det/blocks.csv")
        events = rows(workdir / "det/events.csv")
        truth = tmp_path / "self_truth.csv"
        with open(truth, "w") as fh:
            fh.write("block,start,end,state\n")
            for b in blocks:
                cursor, end = b["start"], b["end"]
                for e in sorted((e for e in events if e["block"] == b["block"] and e["kind"] == DOWN),
                                key=lambda e: float(e["start"])):
                    if float(e["start"]) > float(cursor):
                        fh.write(f"{b['block']},{cursor},{e['start']},up\n")
                    fh.write(f"{b['block']},{e['start']},{e['end']},down\n")
                    cursor = e["end"]
                if float(cursor) < float(end):
                    fh.write(f"{b['block']},{cursor},{end},up\n")
        out = tmp_path / "self.csv"
        assert main(["evaluate", "--detections", str(workdir / "det"), "--truth", str(truth), "--out", str(out)]) == 0
        for r in rows(out):
            if r["scope"] == "aggregate":
                assert (r["ppv"], r["recall"], r["tnr"]) == ("1.0000", "1.0000", "1.0000"), r

    def test_sweep_theta_b(self, workdir, tmp_path):
        out = tmp_path / "sweep.csv"
        assert main(["evaluate", "--sweep", "theta_b=0.3,0.6,0.8", "--observations",
                     str(workdir / "sim/observations.csv"), "--truth", str(workdir / "sim/truth.csv"),
                     "--day", DAY3, "--out", str(out)]) == 0
        table = rows(out)
        assert [r["value"] for r in table] == ["0.3", "0.6", "0.8"]

    def test_missing_truth(self, workdir, tmp_path):
        assert main(["evaluate", "--detections", str(workdir / "det"), "--truth", str(tmp_path / "x.csv")]) == 2


class TestReport:
    def test_durations_and_series(self, workdir, tmp_path, capsys):
        trace = rows(workdir / "det/trace.csv")
        addr = trace[0]["address"]
        out, series = tmp_path / "dur.csv", tmp_path / "series.csv"
        assert main(["report", "--detections", str(workdir / "det"), "--out", str(out),
                     "--trace", str(workdir / "det/trace.csv"), "--address", addr,
                     "--series-out", str(series)]) == 0
        assert "coverage" in capsys.readouterr().out
        assert all(float(r["duration"]) > 0 for r in rows(out))
        assert len(rows(series)) == sum(r["address"] == addr for r in trace)

    def test_unknown_address(self, workdir):
        assert main(["report", "--detections", str(workdir / "det"), "--trace", str(workdir / "det/trace.csv"),
                     "--address", "203.0.113.1"]) == 2


class TestDarknet:
    def test_spoofed_records_dropped(self, tmp_path, capsys):
        day = DEFAULT_EPOCH + 2 * DAY
        lines = ["timestamp,src,ttl,protocol,dst,icmp"]
        for i in range(576):
            t = DEFAULT_EPOCH + i * 300 + 1
            lines.append(f"{t},192.0.2.7,64,6,198.51.100.1,0")
            lines.append(f"{t},192.0.2.8,250,6,198.51.100.1,0")
        obs = tmp_path / "darknet.csv"
        obs.write_text("\n".join(lines) + "\n")
        assert main(["train", "--mode", "darknet", "--observations", str(obs), "--day", str(day),
                     "--out", str(tmp_path / "m.csv")]) == 0
        assert [r["address"] for r in rows(tmp_path / "m.csv")] == ["192.0.2.7"]
        assert rows(tmp_path / "m.csv")[0]["timebin"] == "1200"

    def test_darknet_needs_full_records(self, tmp_path):
        obs = tmp_path / "o.csv"
        obs.write_text("1,192.0.2.7\n")
        assert main(["train", "--mode", "darknet", "--observations", str(obs), "--day", DAY3,
                     "--out", str(tmp_path / "m.csv")]) == 3


def test_preset_simulation(tmp_path):
    assert main(["simulate", "--preset", "frequent-gap", "--family", "v6", "--out-dir", str(tmp_path)]) == 0
    assert rows(tmp_path / "truth.csv")[0]["block"] == "2001:db8::/48"


def test_config_file(workdir, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"theta_a": 0.5, "t_long": 1500}))
    assert main(["detect", "--config", str(cfg), "--observations", str(workdir / "sim/observations.csv"),
                 "--models", str(workdir / "models.csv"), "--day", DAY3, "--out-dir", str(tmp_path / "d")]) == 0
    assert '"theta_a":0.5' in (tmp_path / "d/events.csv").read_text().splitlines()[1]
    cfg.write_text("{broken")
    assert main(["detect", "--config", str(cfg), "--observations", str(workdir / "sim/observations.csv"),
                 "--models", str(workdir / "models.csv"), "--day", DAY3, "--out-dir", str(tmp_path / "d")]) == 3
