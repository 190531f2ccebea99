"""Tool-calling conversation workload with end-of-session reward replay.

A user simulator and an assistant exchange turns; each assistant turn may
issue tool commands that a tool executor runs one per hop against the
container acquired under the task's id. When the session ends, a reward
calculator acquires the same container, resets it, replays the recorded
tool-call log, and scores the trajectory from state assertions. The
container is released at the sink.

All agents are stateless: the exchange plan is derived from the task seed
and the current position is reconstructed from the conversation history.
"""

from __future__ import annotations

import json
import random

from ..model import Orchestrator, TaskInput, derive_seed
from ..orchestration import StepResult, make_branching
from ..runtime import AgentContext, RoleConfig
from ..services import GenerationRequest, apply_command, pseudo_bytes
from .base import WorkloadContext, WorkloadPlan

ROLE_USER = "user_simulator"
ROLE_ASSISTANT = "assistant"
ROLE_TOOL = "tool_executor"
ROLE_REWARD = "reward_calculator"


class SessionPlan:
    """Seed-derived script: exchanges, tool commands, and message sizes."""

    def __init__(self, rng_seed: int, params: dict):
        rng = random.Random(derive_seed(rng_seed, "tau2_plan"))
        self.n_exchanges = rng.randint(
            int(params.get("exchanges_min", 1)), int(params.get("exchanges_max", 3))
        )
        tools_max = int(params.get("tools_per_turn_max", 2))
        self.commands: list[list[str]] = []
        for exchange in range(self.n_exchanges):
            n_tools = rng.randint(0, tools_max)
            turn_commands = []
            for j in range(n_tools):
                if j % 2 == 1:
                    # reads make the replay-vs-recorded comparison meaningful
                    turn_commands.append(f"get k{exchange}_0")
                else:
                    turn_commands.append(f"set k{exchange}_{j} v{rng.randrange(1000)}")
            self.commands.append(turn_commands)
        self.size_mu = float(params.get("size_mu", 5.0))
        self.size_sigma = float(params.get("size_sigma", 1.0))

    def all_commands(self) -> list[str]:
        return [c for turn in self.commands for c in turn]

    def text_size(self, rng_seed: int, tag: str, index: int) -> int:
        rng = random.Random(derive_seed(rng_seed, "tau2_size", tag, index))
        return max(10, min(4096, int(rng.lognormvariate(self.size_mu, self.size_sigma))))

    def expected_state(self) -> dict[str, str]:
        state: dict[str, str] = {}
        for command in self.all_commands():
            apply_command(state, command.encode("utf-8"))
        return state


def _parse_history(materialized: list[bytes]) -> list[dict]:
    return [json.loads(content.decode("utf-8")) for content in materialized]


def _session_position(parsed: list[dict]) -> tuple[int, int, list[str]]:
    """(exchanges done, tools executed since last assistant turn, its calls)."""
    user_turns = sum(1 for p in parsed if p.get("type") == "user")
    last_assistant = None
    for index in range(len(parsed) - 1, -1, -1):
        if parsed[index].get("type") == "assistant":
            last_assistant = index
            break
    if last_assistant is None:
        return user_turns, 0, []
    executed = sum(1 for p in parsed[last_assistant + 1 :] if p.get("type") == "tool")
    return user_turns, executed, list(parsed[last_assistant].get("tool_calls", []))


class _Tau2Behavior:
    def __init__(self, ctx: WorkloadContext):
        self.ctx = ctx

    def plan(self, orch: Orchestrator) -> SessionPlan:
        return SessionPlan(orch.rng_seed, self.ctx.params)

    async def llm_tokens(self, orch: Orchestrator, ctx: AgentContext) -> int:
        response = await ctx.services.llm(self.ctx.llm_service).generate(
            GenerationRequest(
                prompt=str(orch.task.payload.get("scenario_id", "")).encode("utf-8"),
                seed=derive_seed(orch.rng_seed, "llm", orch.turns()),
            )
        )
        return response.output_token_count


class UserSimulator(_Tau2Behavior):
    """Opens each exchange; hands over to the reward step when done."""

    async def process(self, orch: Orchestrator, ctx: AgentContext) -> StepResult:
        plan = self.plan(orch)
        parsed = _parse_history(_materialize(orch, ctx))
        exchanges_done, _, _ = _session_position(parsed)
        if exchanges_done >= plan.n_exchanges:
            content = json.dumps({"type": "session_end"}).encode("utf-8")
            return StepResult(
                author_role=ctx.agent.role, content=content, route_hint=ROLE_REWARD
            )
        tokens = await self.llm_tokens(orch, ctx)
        size = plan.text_size(orch.rng_seed, "user", exchanges_done)
        content = json.dumps(
            {
                "type": "user",
                "text": pseudo_bytes(
                    derive_seed(orch.rng_seed, "user_text", exchanges_done), size
                ).decode("ascii"),
            }
        ).encode("utf-8")
        return StepResult(
            author_role=ctx.agent.role,
            content=content,
            token_count=tokens,
            route_hint=ROLE_ASSISTANT,
        )


class Assistant(_Tau2Behavior):
    """Replies once per exchange, declaring that turn's tool calls."""

    async def process(self, orch: Orchestrator, ctx: AgentContext) -> StepResult:
        plan = self.plan(orch)
        parsed = _parse_history(_materialize(orch, ctx))
        exchanges_done, _, _ = _session_position(parsed)
        exchange = exchanges_done - 1  # the user turn that triggered us
        tokens = await self.llm_tokens(orch, ctx)
        calls = plan.commands[exchange] if 0 <= exchange < len(plan.commands) else []
        size = plan.text_size(orch.rng_seed, "assistant", exchange)
        content = json.dumps(
            {
                "type": "assistant",
                "text": pseudo_bytes(
                    derive_seed(orch.rng_seed, "assistant_text", exchange), size
                ).decode("ascii"),
                "tool_calls": calls,
            }
        ).encode("utf-8")
        return StepResult(
            author_role=ctx.agent.role,
            content=content,
            token_count=tokens,
            route_hint=ROLE_TOOL if calls else ROLE_USER,
        )


class ToolExecutor(_Tau2Behavior):
    """Runs one pending command per hop against the task's container."""

    async def process(self, orch: Orchestrator, ctx: AgentContext) -> StepResult:
        parsed = _parse_history(_materialize(orch, ctx))
        _, executed, calls = _session_position(parsed)
        command = calls[executed]
        pool = ctx.services.containers(self.ctx.container_service)
        handle = pool.acquire(orch.task.task_id, owner_task=orch.task.task_id)
        result = await pool.execute(handle, command.encode("utf-8"))
        content = json.dumps(
            {
                "type": "tool",
                "command": command,
                "result": result.decode("utf-8", errors="replace"),
                "instance": handle.instance_tag,
            }
        ).encode("utf-8")
        more = executed + 1 < len(calls)
        return StepResult(
            author_role=ctx.agent.role,
            content=content,
            route_hint=ROLE_TOOL if more else ROLE_USER,
        )


class RewardCalculator(_Tau2Behavior):
    """Replays the tool-call log from a reset container and scores it."""

    async def process(self, orch: Orchestrator, ctx: AgentContext) -> StepResult:
        plan = self.plan(orch)
        parsed = _parse_history(_materialize(orch, ctx))
        log = [p for p in parsed if p.get("type") == "tool"]
        pool = ctx.services.containers(self.ctx.container_service)
        handle = pool.acquire(orch.task.task_id, owner_task=orch.task.task_id)
        await pool.execute(handle, b"reset")
        replay_ok = True
        for record in log:
            replayed = await pool.execute(handle, record["command"].encode("utf-8"))
            if replayed.decode("utf-8", errors="replace") != record["result"]:
                replay_ok = False
        if not replay_ok:
            score = 0.0
        else:
            expected = plan.expected_state()
            if expected:
                satisfied = sum(
                    1 for key, value in expected.items() if handle.state.get(key) == value
                )
                extra = len(set(handle.state) - set(expected))
                score = satisfied / (len(expected) + extra)
            else:
                score = 1.0
        content = json.dumps(
            {"type": "reward", "score": score, "replayed": len(log)}
        ).encode("utf-8")
        return StepResult(
            author_role=ctx.agent.role, content=content, done_signal=True, score=score
        )


def _materialize(orch: Orchestrator, ctx: AgentContext) -> list[bytes]:
    return ctx.resolve_history(orch)


def release_container_hook(ctx: WorkloadContext):
    assert ctx.hub is not None

    async def hook(orch: Orchestrator, materialized: list[bytes]) -> None:
        pool = ctx.hub.containers(ctx.container_service)
        handle = pool.live_handle(orch.task.task_id)
        if handle is not None:
            await pool.release(handle)

    return hook


def sample_dataset(n: int) -> list[TaskInput]:
    return [
        TaskInput(task_id=f"tau2-{i}", payload={"scenario_id": f"scenario-{i}"})
        for i in range(n)
    ]


def build(ctx: WorkloadContext, metrics) -> WorkloadPlan:
    def factory(task: TaskInput) -> Orchestrator:
        if "scenario_id" not in task.payload:
            raise ValueError(f"task {task.task_id}: payload must contain a scenario id")
        return make_branching(
            task,
            ROLE_USER,
            rng_seed=derive_seed(ctx.run_seed, task.task_id),
            budget=ctx.budget,
        )

    pool_capacity = None
    if ctx.hub is not None and ctx.container_service in ctx.hub.container_pools:
        pool_capacity = ctx.hub.containers(ctx.container_service).capacity
    return WorkloadPlan(
        name="tau2_like",
        role_configs=[
            RoleConfig(ROLE_USER, UserSimulator(ctx)),
            RoleConfig(ROLE_ASSISTANT, Assistant(ctx)),
            RoleConfig(ROLE_TOOL, ToolExecutor(ctx)),
            RoleConfig(ROLE_REWARD, RewardCalculator(ctx)),
        ],
        orch_factory=factory,
        completion_hooks=[release_container_hook(ctx)],
        sample_dataset=sample_dataset,
        max_concurrency_cap=pool_capacity,
    )
