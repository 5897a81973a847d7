"""A discrete-event model of one stage's backward pass.

Every block costs ``recompute_time`` to recompute and ``grad_time`` to
backpropagate through. Times are exact ``Fraction`` values, so makespans
and their ratios are exact.
"""
from __future__ import annotations

from fractions import Fraction
from typing import Dict
from typing import Generator
from typing import List
from typing import Union

import simpy

from .stats import EngineKind

Time = Union[int, Fraction]
Process = Generator[simpy.Event, object, None]


def _sequential(env: simpy.Environment, depth: int, *costs: Fraction) -> Process:
    for _ in range(depth):
        for cost in costs:
            yield env.timeout(cost)


def _pipelined(
    env: simpy.Environment,
    depth: int,
    recompute_time: Fraction,
    grad_time: Fraction,
) -> List[Process]:
    recomputed: Dict[int, simpy.Event] = {i: env.event() for i in range(1, depth + 1)}
    graded: Dict[int, simpy.Event] = {i: env.event() for i in range(1, depth + 1)}

    def recompute_lane() -> Process:
        for i in range(depth, 0, -1):
            # Rendezvous depth one: R_i starts once G has taken R_{i+1}.
            waits = [
                event
                for event in (recomputed.get(i + 1), graded.get(i + 2))
                if event is not None
            ]
            if waits:
                yield env.all_of(waits)
            yield env.timeout(recompute_time)
            recomputed[i].succeed()

    def grad_lane() -> Process:
        for i in range(depth, 0, -1):
            yield recomputed[i]
            yield env.timeout(grad_time)
            graded[i].succeed()

    return [recompute_lane(), grad_lane()]


def simulate_backward(
    kind: EngineKind,
    depth: int,
    recompute_time: Time = 1,
    grad_time: Time = 1,
) -> Fraction:
    """Makespan of a _depth_-block stage's backward pass under _kind_.

    ``VANILLA`` only backpropagates (``depth * grad_time``). ``REPROP``
    recomputes then backpropagates each block in turn. ``PAREPROP`` runs
    the recompute of block ``i - 1`` alongside the gradients of block ``i``,
    so with equal costs the makespan is ``(depth + 1) * grad_time``.
    """
    if depth < 0:
        raise ValueError(f"depth must be non-negative, got {depth}")
    r = Fraction(recompute_time)
    g = Fraction(grad_time)
    env = simpy.Environment(initial_time=Fraction(0))

    if kind is EngineKind.VANILLA:
        env.process(_sequential(env, depth, g))
    elif kind is EngineKind.REPROP:
        env.process(_sequential(env, depth, r, g))
    else:
        for process in _pipelined(env, depth, r, g):
            env.process(process)

    env.run()
    return Fraction(env.now)


def overlap_ratio(
    depth: int,
    recompute_time: Time = 1,
    grad_time: Time = 1,
) -> Fraction:
    """Pipelined over sequential backward makespan for a _depth_-block stage."""
    return simulate_backward(
        EngineKind.PAREPROP, depth, recompute_time, grad_time
    ) / simulate_backward(EngineKind.REPROP, depth, recompute_time, grad_time)
