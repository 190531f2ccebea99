"""Document-curation cascade: filter -> score -> question.

Each stage either drops the document with a named filter reason or routes it
onward; survivors end with a generated question/answer. Sim mode draws the
stage decisions from seeded streams calibrated so the *unconditional*
category fractions match the configured targets; HTTP mode parses the model
reply instead.
"""

from __future__ import annotations

import random

from ..errors import ConfigError
from ..model import Orchestrator, TaskInput, derive_seed
from ..orchestration import StepResult, make_branching
from ..runtime import AgentContext, RoleConfig
from ..services import GenerationRequest
from .base import SIM, WorkloadContext, WorkloadPlan

FILTER_BY_EN = "filter_by_en"
FILTER_BY_CLASSIFIER = "filter_by_classifier"
FILTER_BY_SCORE = "filter_by_score"
FILTER_BY_NO_BOXED_ANSWER = "filter_by_no_boxed_answer"

FILTER_STAGES = [
    FILTER_BY_EN,
    FILTER_BY_CLASSIFIER,
    FILTER_BY_SCORE,
    FILTER_BY_NO_BOXED_ANSWER,
]

# Unconditional drop fractions observed on the reference web-document corpus.
DEFAULT_STAGE_FRACTIONS = {
    FILTER_BY_EN: 0.0368,
    FILTER_BY_CLASSIFIER: 0.9024,
    FILTER_BY_SCORE: 0.0044,
    FILTER_BY_NO_BOXED_ANSWER: 0.0019,
}

ROLE_FILTER = "filter"
ROLE_SCORE = "score"
ROLE_QUESTION = "question"


def conditional_rates(fractions: dict[str, float]) -> dict[str, float]:
    """Convert unconditional category fractions to per-stage drop rates.

    A stage only sees documents that survived every earlier stage, so the
    configured fraction must be rescaled by the surviving mass.
    """
    rates: dict[str, float] = {}
    surviving = 1.0
    for stage in FILTER_STAGES:
        fraction = float(fractions.get(stage, 0.0))
        if fraction < 0.0:
            raise ConfigError(f"stage_fractions.{stage}", "must be >= 0")
        if fraction == 0.0:
            rates[stage] = 0.0
            continue
        if fraction > surviving + 1e-12:
            raise ConfigError(
                f"stage_fractions.{stage}",
                f"fraction {fraction} exceeds surviving mass {surviving:.6f}",
            )
        rates[stage] = fraction / surviving
        surviving -= fraction
    return rates


def _draw(orch: Orchestrator, stage: str, rate: float) -> bool:
    rng = random.Random(derive_seed(orch.rng_seed, "draw", stage))
    return rng.random() < rate


class _StageBehavior:
    def __init__(self, ctx: WorkloadContext, rates: dict[str, float]):
        self.ctx = ctx
        self.rates = rates

    async def _generate(self, orch: Orchestrator, ctx: AgentContext, max_tokens: int):
        return await ctx.services.llm(self.ctx.llm_service).generate(
            GenerationRequest(
                prompt=str(orch.task.payload.get("document", "")).encode("utf-8"),
                max_tokens=max_tokens,
                seed=derive_seed(orch.rng_seed, "llm", orch.turns()),
            )
        )


class FilterBehavior(_StageBehavior):
    """Language check plus reasoning-content classification, one token each."""

    async def process(self, orch: Orchestrator, ctx: AgentContext) -> StepResult:
        response = await self._generate(orch, ctx, max_tokens=1)
        base = dict(
            author_role=ctx.agent.role,
            content=response.content,
            token_count=response.output_token_count,
        )
        if self.ctx.mode == SIM:
            if _draw(orch, FILTER_BY_EN, self.rates[FILTER_BY_EN]):
                return StepResult(filtered_reason=FILTER_BY_EN, **base)
            if _draw(orch, FILTER_BY_CLASSIFIER, self.rates[FILTER_BY_CLASSIFIER]):
                return StepResult(filtered_reason=FILTER_BY_CLASSIFIER, **base)
        else:
            if not str(orch.task.payload.get("document", "")).isascii():
                return StepResult(filtered_reason=FILTER_BY_EN, **base)
            if response.content.strip().lower().startswith(b"no"):
                return StepResult(filtered_reason=FILTER_BY_CLASSIFIER, **base)
        return StepResult(route_hint=ROLE_SCORE, **base)


class ScoreBehavior(_StageBehavior):
    async def process(self, orch: Orchestrator, ctx: AgentContext) -> StepResult:
        response = await self._generate(orch, ctx, max_tokens=0)
        base = dict(
            author_role=ctx.agent.role,
            content=response.content,
            token_count=response.output_token_count,
        )
        if self.ctx.mode == SIM:
            dropped = _draw(orch, FILTER_BY_SCORE, self.rates[FILTER_BY_SCORE])
        else:
            dropped = response.content.strip().lower().startswith(b"low")
        if dropped:
            return StepResult(filtered_reason=FILTER_BY_SCORE, **base)
        return StepResult(route_hint=ROLE_QUESTION, **base)


class QuestionBehavior(_StageBehavior):
    async def process(self, orch: Orchestrator, ctx: AgentContext) -> StepResult:
        response = await self._generate(orch, ctx, max_tokens=0)
        base = dict(
            author_role=ctx.agent.role,
            content=response.content,
            token_count=response.output_token_count,
        )
        if self.ctx.mode == SIM:
            dropped = _draw(
                orch, FILTER_BY_NO_BOXED_ANSWER, self.rates[FILTER_BY_NO_BOXED_ANSWER]
            )
        else:
            dropped = b"\\boxed{" not in response.content
        if dropped:
            return StepResult(filtered_reason=FILTER_BY_NO_BOXED_ANSWER, **base)
        return StepResult(done_signal=True, **base)


def sample_dataset(n: int) -> list[TaskInput]:
    return [
        TaskInput(task_id=f"doc-{i}", payload={"document": f"Web document number {i}."})
        for i in range(n)
    ]


def build(ctx: WorkloadContext, metrics) -> WorkloadPlan:
    overrides = dict(ctx.params.get("stage_fractions", {}))
    unknown = set(overrides) - set(FILTER_STAGES)
    if unknown:
        raise ConfigError(
            "workload_params.stage_fractions",
            f"unknown filter stages {sorted(unknown)}; declared: {FILTER_STAGES}",
        )
    fractions = dict(DEFAULT_STAGE_FRACTIONS)
    fractions.update(overrides)
    rates = conditional_rates(fractions)

    def factory(task: TaskInput) -> Orchestrator:
        if "document" not in task.payload:
            raise ValueError(f"task {task.task_id}: payload must contain a document field")
        return make_branching(
            task,
            ROLE_FILTER,
            rng_seed=derive_seed(ctx.run_seed, task.task_id),
            budget=ctx.budget,
        )

    return WorkloadPlan(
        name="natural_reasoning",
        role_configs=[
            RoleConfig(ROLE_FILTER, FilterBehavior(ctx, rates)),
            RoleConfig(ROLE_SCORE, ScoreBehavior(ctx, rates)),
            RoleConfig(ROLE_QUESTION, QuestionBehavior(ctx, rates)),
        ],
        orch_factory=factory,
        filter_stages=list(FILTER_STAGES),
        sample_dataset=sample_dataset,
    )
