"""Two-persona collaborative dialogue workload.

One model plays both sides of a discussion; turns alternate strictly between
the personas until a consensus marker appears in a turn or the budget runs
out. In sim mode the marker turn and the agree/disagree outcome are seeded
draws; in HTTP mode the marker is parsed from the model's reply.
"""

from __future__ import annotations

import random

from ..metrics import MetricsRegistry
from ..model import Orchestrator, OutcomeStatus, TaskInput, derive_seed
from ..orchestration import StepResult, make_sequential
from ..runtime import AgentContext, RoleConfig
from ..services import GenerationRequest
from .base import SIM, WorkloadContext, WorkloadPlan

CONSENSUS_AGREE = b"[consensus:agree]"
CONSENSUS_DISAGREE = b"[consensus:disagree]"

ROLE_A = "persona_a"
ROLE_B = "persona_b"


class CoralPersona:
    """One side of the dialogue; emits the consensus marker on its final turn."""

    def __init__(self, ctx: WorkloadContext):
        self.ctx = ctx
        p = ctx.params
        self.turns_min = int(p.get("turns_min", 4))
        self.turns_max = int(p.get("turns_max", 8))
        self.agree_rate = float(p.get("agree_rate", 0.6))
        self.max_tokens = int(p.get("max_tokens", 0))

    def _planned_turns(self, orch: Orchestrator) -> int:
        rng = random.Random(derive_seed(orch.rng_seed, "coral_plan"))
        return rng.randint(self.turns_min, self.turns_max)

    def _agrees(self, orch: Orchestrator) -> bool:
        rng = random.Random(derive_seed(orch.rng_seed, "coral_agree"))
        return rng.random() < self.agree_rate

    async def process(self, orch: Orchestrator, ctx: AgentContext) -> StepResult:
        turn = orch.turns()
        response = await ctx.services.llm(self.ctx.llm_service).generate(
            GenerationRequest(
                prompt=self._prompt(orch, ctx),
                max_tokens=self.max_tokens,
                seed=derive_seed(orch.rng_seed, "llm", turn),
            )
        )
        content = response.content
        if self.ctx.mode == SIM and turn + 1 >= self._planned_turns(orch):
            marker = CONSENSUS_AGREE if self._agrees(orch) else CONSENSUS_DISAGREE
            content = content + b" " + marker
        done = CONSENSUS_AGREE in content or CONSENSUS_DISAGREE in content
        return StepResult(
            author_role=ctx.agent.role,
            content=content,
            token_count=response.output_token_count,
            done_signal=done,
        )

    def _prompt(self, orch: Orchestrator, ctx: AgentContext) -> bytes:
        question = str(orch.task.payload["question"]).encode("utf-8")
        transcript = b"\n".join(ctx.resolve_history(orch))
        return question + b"\n" + transcript


def agreement_hook(metrics: MetricsRegistry):
    """Sink-side tally of the agreement flag parsed from the final turn."""

    def hook(orch: Orchestrator, materialized: list[bytes]) -> None:
        if orch.outcome is None or orch.outcome.status is not OutcomeStatus.SUCCESS:
            return
        if materialized and CONSENSUS_AGREE in materialized[-1]:
            metrics.inc("coral_agreement_total")
        metrics.inc("coral_finished_total")

    return hook


def sample_dataset(n: int) -> list[TaskInput]:
    return [
        TaskInput(task_id=f"coral-{i}", payload={"question": f"Is {i} a perfect square?"})
        for i in range(n)
    ]


def build(ctx: WorkloadContext, metrics: MetricsRegistry) -> WorkloadPlan:
    persona = CoralPersona(ctx)

    def factory(task: TaskInput) -> Orchestrator:
        if "question" not in task.payload:
            raise ValueError(f"task {task.task_id}: payload must contain a question field")
        return make_sequential(
            task,
            [ROLE_A, ROLE_B],
            rng_seed=derive_seed(ctx.run_seed, task.task_id),
            budget=ctx.budget,
        )

    return WorkloadPlan(
        name="coral",
        role_configs=[RoleConfig(ROLE_A, persona), RoleConfig(ROLE_B, persona)],
        orch_factory=factory,
        control_kind="sequential",
        completion_hooks=[agreement_hook(metrics)],
        sample_dataset=sample_dataset,
    )
