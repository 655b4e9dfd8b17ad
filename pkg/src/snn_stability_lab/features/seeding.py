"""
Task seeds.

Every random stream of an experiment is derived from the master seed and the
coordinates of the task that consumes it, so results do not depend on the order
(or the process) in which tasks run.
"""

from __future__ import annotations

from enum import IntEnum

import numpy as np

__all__ = ("Role", "task_seed")


class Role(IntEnum):
    SAMPLE = 0
    GHOST = 1
    STREAM = 2
    MC = 3
    REFERENCE = 4
    TEACHER = 5
    INIT = 6
    CHECK = 7
    NEIGHBOR = 8


def task_seed(master: int, role: Role, *coords: int) -> int:
    """64-bit seed of the stream `role` at the task coordinates `coords`"""
    ss = np.random.SeedSequence(int(master), spawn_key=(int(role), *(int(c) for c in coords)))
    return int(ss.generate_state(1, np.uint64)[0])
