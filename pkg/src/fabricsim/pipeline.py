"""The end-to-end telemetry application.

Data path one: a station at the edge reports weather telemetry every five
minutes; records travel over the sliced wireless hop and the internet to the
repository node, landing in a persistent log via remote append.

Data path two: on a thirty-minute duty cycle the repository evaluates the
most recent six records against the previous six through the dataflow-hosted
change detector. Votes land in an alert log, a forwarder pushes fresh alerts
to the HPC node on the same duty cycle, and each alert drives an embedded
simulation task through the pilot controller. Results carry the telemetry
timestamp they model, so a result's validity window is whatever remains of
the duty cycle once the simulation completes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .dataflow import (
    BYTES,
    DataflowGraph,
    DeployedGraph,
    GraphNode,
    OpDef,
    compile_graph,
    unpack_operand,
)
from .detect import ALERT_SIZE, DUTY_CYCLE_S, ChangeAlert, Window, detect_change
from .errors import ConfigError
from .events import AppendEffect
from .netsim import Network
from .node import FabricNode
from .pilot import (
    TASK_RESULT_SIZE,
    CfdCostModel,
    Facility,
    PilotController,
    QueueDelayModel,
    SystemSpec,
    TaskResult,
    TaskSpec,
    audit_payload,
)
from .simcore import Simulator, s_to_us, sleep
from .weather import RECORD_SIZE, REPORT_CADENCE_S, TelemetryRecord, WeatherModel

TELEMETRY_ELEMENT = 1024  # matches the measured 1 KB message workload


@dataclass
class CupsParams:
    duration_s: float
    cadence_s: float = REPORT_CADENCE_S
    duty_cycle_s: float = DUTY_CYCLE_S
    window_len: int = 6
    alpha: float = 0.05
    channels: tuple[str, ...] = ("wind_speed",)
    eval_offset_s: float = 2.0      # after the duty tick, lets the last record land
    forward_offset_s: float = 4.0   # alert fetch offset within the duty cycle
    threshold_bytes: int = 1024
    task_cores: int = 64
    estimated_runtime_s: float = 420.39
    strategy: str = "proactive"
    telemetry_capacity: int = 4096
    dataflow_window: int = 256
    unl: str = "unl-edge"
    ucsb: str = "ucsb-repo"
    nd: str = "nd-hpc"

    def __post_init__(self):
        if self.duration_s < 2 * self.duty_cycle_s:
            raise ConfigError("scenario too short for a single evaluation")
        if self.window_len * self.cadence_s != self.duty_cycle_s:
            raise ConfigError("window must span exactly one duty cycle")


@dataclass
class CupsMetrics:
    telemetry_latency_ms: list[float] = field(default_factory=list)
    evaluations: list[dict] = field(default_factory=list)
    alerts: list[dict] = field(default_factory=list)
    tasks: list[dict] = field(default_factory=list)
    skipped_evaluations: int = 0
    handler_failures: int = 0


class CupsPipeline:
    """Wires the three-node deployment and runs it on one clock."""

    def __init__(self, sim: Simulator, network: Network, state_dir: str | Path,
                 params: CupsParams, weather: WeatherModel, system: SystemSpec,
                 cost_model: CfdCostModel):
        self.sim = sim
        self.network = network
        self.params = params
        self.weather = weather
        self.metrics = CupsMetrics()

        state_dir = Path(state_dir)
        self.unl = FabricNode(sim, network, params.unl, state_dir / params.unl)
        self.ucsb = FabricNode(sim, network, params.ucsb, state_dir / params.ucsb)
        self.nd = FabricNode(sim, network, params.nd, state_dir / params.nd)
        self.nodes = {n.name: n for n in (self.unl, self.ucsb, self.nd)}

        self.ucsb.create_log("telemetry", TELEMETRY_ELEMENT, params.telemetry_capacity)
        self.ucsb.create_log("alerts", ALERT_SIZE, params.dataflow_window)
        self.nd.create_log("pilot_events", 256, 1024)

        self.facility = Facility(sim, system, label=params.nd)
        self.facility.on_event = self._audit
        self.controller = PilotController(
            self.facility, cost_model, threshold_bytes=params.threshold_bytes,
            task_cores=params.task_cores, strategy=params.strategy)

        self.detector = self._deploy_detector()
        self.cfd = self._deploy_cfd()
        self._wire_alert_filter()

    # -- deployment ------------------------------------------------------

    def _deploy_detector(self) -> DeployedGraph:
        pair_bytes = 2 * self.params.window_len * RECORD_SIZE

        def detect_op(pair: bytes):
            records = [TelemetryRecord.unpack(pair[i * RECORD_SIZE:(i + 1) * RECORD_SIZE])
                       for i in range(2 * self.params.window_len)]
            previous = Window(tuple(records[:self.params.window_len]))
            current = Window(tuple(records[self.params.window_len:]))
            chosen = None
            for channel in self.params.channels:
                alert = detect_change(current, previous, self.params.alpha, channel)
                if chosen is None or (alert.vote and not chosen.vote):
                    chosen = alert
            return chosen.pack()

        graph = DataflowGraph(
            graph_id="cups",
            nodes=[GraphNode("detect", (("pair", BYTES(pair_bytes)),),
                             BYTES(ALERT_SIZE), "detect_change")],
            edges=[],
            placement={"detect": self.params.ucsb})
        return compile_graph(graph, self.nodes,
                             {"detect_change": OpDef(detect_op)},
                             window=self.params.dataflow_window)

    def _deploy_cfd(self) -> DeployedGraph:
        params = self.params

        def cfd_op(alert_bytes: bytes):
            alert = ChangeAlert.unpack(alert_bytes)
            task = TaskSpec(
                data_size_bytes=2 * params.window_len * RECORD_SIZE,
                threshold_bytes=params.threshold_bytes,
                estimated_runtime_s=params.estimated_runtime_s,
                cores=params.task_cores,
                telemetry_timestamp_us=alert.timestamp_us)
            result = yield from self.controller.handle_task(task)
            return result.pack()

        graph = DataflowGraph(
            graph_id="cups",
            nodes=[GraphNode("cfd", (("alert", BYTES(ALERT_SIZE)),),
                             BYTES(TASK_RESULT_SIZE), "run_simulation")],
            edges=[],
            placement={"cfd": self.params.nd})
        return compile_graph(graph, self.nodes,
                             {"run_simulation": OpDef(cfd_op, activity=True)},
                             window=self.params.dataflow_window)

    def _wire_alert_filter(self) -> None:
        ucsb = self.params.ucsb
        vt = BYTES(ALERT_SIZE)

        def filter_votes(entry, ctx):
            _, raw = unpack_operand(vt, entry.payload)
            alert = ChangeAlert.unpack(raw)
            if not alert.vote:
                return []
            return [AppendEffect(ucsb, "alerts", alert.pack())]

        self.ucsb.engine.register_handler("alert.filter", filter_votes)
        self.ucsb.engine.bind(self.detector.out_log("detect"), "alert.filter")

    def _audit(self, event: dict) -> None:
        self.nd.append_local("pilot_events", audit_payload(event)[:256])

    # -- processes ----------------------------------------------------------

    def station(self):
        """Telemetry source at the edge; one record per cadence interval."""
        rng = self.sim.rng("weather")
        count = int(self.params.duration_s // self.params.cadence_s)
        for i in range(1, count + 1):
            target_us = s_to_us(i * self.params.cadence_s)
            if target_us > self.sim.now_us:
                yield sleep(target_us - self.sim.now_us)
            record = self.weather.record_at(i * self.params.cadence_s, rng)
            t0 = self.sim.now_us
            yield from self.unl.client.remote_append(
                self.params.ucsb, "telemetry", record.pack())
            self.metrics.telemetry_latency_ms.append((self.sim.now_us - t0) / 1000.0)

    def evaluator(self):
        """Duty-cycle change detection at the repository node."""
        p = self.params
        window_span = int(p.window_len)
        ticks = int(p.duration_s // p.duty_cycle_s)
        for m in range(2, ticks + 1):
            target_us = s_to_us(m * p.duty_cycle_s + p.eval_offset_s)
            if target_us > self.sim.now_us:
                yield sleep(target_us - self.sim.now_us)
            records = self._telemetry_between(s_to_us((m - 2) * p.duty_cycle_s),
                                              s_to_us(m * p.duty_cycle_s))
            if len(records) != 2 * window_span:
                self.metrics.skipped_evaluations += 1
                continue
            pair = b"".join(r.pack() for r in records)
            yield from self.detector.inject(self.ucsb, "detect", "pair",
                                            iteration=m, value=pair)

    def _telemetry_between(self, lo_us: int, hi_us: int) -> list[TelemetryRecord]:
        store = self.ucsb.registry.get("telemetry")
        result = store.scan(store.earliest_seq, store.next_seq - 1)
        records = [TelemetryRecord.unpack(e.payload) for e in result.entries]
        return [r for r in records if lo_us < r.timestamp_us <= hi_us]

    def forwarder(self):
        """Pushes fresh vote=true alerts to the HPC node each duty cycle."""
        p = self.params
        forwarded = 0
        ticks = int(p.duration_s // p.duty_cycle_s)
        for m in range(2, ticks + 2):
            target_us = s_to_us(m * p.duty_cycle_s + p.forward_offset_s)
            if target_us > self.sim.now_us:
                yield sleep(target_us - self.sim.now_us)
            store = self.ucsb.registry.get("alerts")
            result = store.scan(forwarded + 1, store.next_seq - 1)
            for entry in result.entries:
                iteration = entry.seq - 1
                yield from self.cfd.inject(self.ucsb, "cfd", "alert",
                                           iteration=iteration,
                                           value=entry.payload)
                forwarded = entry.seq

    # -- run -------------------------------------------------------------------

    def run(self) -> CupsMetrics:
        self.controller.start()
        procs = [self.sim.spawn(self.station(), name="station"),
                 self.sim.spawn(self.evaluator(), name="evaluator"),
                 self.sim.spawn(self.forwarder(), name="forwarder")]
        # generous tail so queued pilots and in-flight tasks finish
        self.sim.run(until_us=s_to_us(self.params.duration_s + 48 * 3600))
        self.sim.run()
        for proc in procs:
            if proc.error is not None:
                raise proc.error
        self._collect()
        return self.metrics

    def _collect(self) -> None:
        alert_vt = BYTES(ALERT_SIZE)
        result_vt = BYTES(TASK_RESULT_SIZE)
        out = self.ucsb.registry.get(self.detector.out_log("detect"))
        for entry in out.scan(out.earliest_seq, out.next_seq - 1).entries:
            alert = ChangeAlert.unpack(unpack_operand(alert_vt, entry.payload)[1])
            row = {
                "timestamp_us": alert.timestamp_us,
                "channel": alert.channel,
                "vote": alert.vote,
                **{f"p_{r.test_name}": r.p_value for r in alert.results},
                **{f"reject_{r.test_name}": r.reject for r in alert.results},
            }
            self.metrics.evaluations.append(row)
            if alert.vote:
                self.metrics.alerts.append(row)
        results = self.nd.registry.get(self.cfd.out_log("cfd"))
        for entry in results.scan(results.earliest_seq, results.next_seq - 1).entries:
            result = TaskResult.unpack(unpack_operand(result_vt, entry.payload)[1])
            validity_s = (self.params.duty_cycle_s
                          - (result.complete_us - result.telemetry_timestamp_us) / 1e6)
            self.metrics.tasks.append({
                "pilot_id": result.pilot_id,
                "cores": result.cores,
                "start_us": result.start_us,
                "complete_us": result.complete_us,
                "runtime_s": result.runtime_s,
                "telemetry_timestamp_us": result.telemetry_timestamp_us,
                "validity_s": validity_s,
            })
        self.metrics.handler_failures = (len(self.unl.engine.failures)
                                         + len(self.ucsb.engine.failures)
                                         + len(self.nd.engine.failures))

    def check_invariants(self) -> dict[str, bool]:
        alert_ts = {a["timestamp_us"] for a in self.metrics.alerts}
        tasks_have_alerts = all(t["telemetry_timestamp_us"] in alert_ts
                                for t in self.metrics.tasks)
        telemetry = self.ucsb.registry.get("telemetry")
        head = telemetry.next_seq - 1
        expected = int(self.params.duration_s // self.params.cadence_s)
        return {
            "no_task_without_alert": tasks_have_alerts,
            "every_alert_completed": len(self.metrics.tasks) == len(self.metrics.alerts),
            "telemetry_complete": head == expected,
            "no_handler_failures": self.metrics.handler_failures == 0,
        }


def sustained_rate_s(seed: int, tasks: int = 8, cores: int = 64,
                     cost_model: CfdCostModel | None = None) -> list[float]:
    """Gaps between completions of back-to-back runs on one dedicated pilot."""
    sim = Simulator(seed=seed)
    system = SystemSpec(total_nodes=1, cores_per_node=cores,
                        queue_delay=QueueDelayModel("constant", 0.0))
    facility = Facility(sim, system, label="dedicated")
    model = cost_model or CfdCostModel()
    pilot = facility.submit_pilot(1, model.mean_runtime_s * (tasks + 2))

    completions: list[int] = []

    def runner():
        rng = sim.rng("sustained")
        for i in range(tasks):
            task = TaskSpec(0, 1, model.mean_runtime_s, cores,
                            telemetry_timestamp_us=i)
            result = yield from facility.execute_task(task, pilot, model, rng)
            completions.append(result.complete_us)

    sim.spawn(runner())
    sim.run()
    return [(b - a) / 1e6 for a, b in zip(completions, completions[1:])]
