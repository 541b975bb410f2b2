import heapq
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Any, List, Optional


class EventKind(IntEnum):
    # lower value runs first at equal time
    ARRIVE = 0
    EMIT = 1


@dataclass(frozen=True)
class Event:
    time: int
    kind: EventKind
    payload: Any = field(default=None, compare=False)


class EventQueue:
    """Events come out ordered by time, then kind, then insertion."""

    def __init__(self):
        self._queue: List = []
        self._counter = 0

    def push(self, event: Event):
        heapq.heappush(self._queue, (event.time, int(event.kind), self._counter, event))
        self._counter += 1

    def pop(self) -> Optional[Event]:
        if self._queue:
            _, _, _, event = heapq.heappop(self._queue)
            return event
        return None

    def peek(self) -> Optional[Event]:
        if self._queue:
            return self._queue[0][3]
        return None

    def peek_time(self) -> Optional[int]:
        return self._queue[0][0] if self._queue else None

    def is_empty(self) -> bool:
        return len(self._queue) == 0

    def clear(self):
        self._queue.clear()
        self._counter = 0

    def __len__(self):
        return len(self._queue)

    def __repr__(self):
        return 'EventQueue(size=%d)' % len(self._queue)
