"""
Event records shared by the engine, protection and result files.
"""
import heapq
from dataclasses import dataclass, field
from typing import Any, Dict, List

from ldlgrid.constants import EventKind
from ldlgrid.utils import to_builtin


@dataclass
class Event:
    """
    A scheduled or fired event.

    device holds the device id, or the branch id for network events.
    """

    time: float
    kind: EventKind
    device: str = ""
    payload: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.time = float(self.time)
        if not isinstance(self.kind, EventKind):
            self.kind = EventKind.from_str(self.kind)
        self.device = str(self.device)

    @property
    def sort_key(self):
        return self.time, self.kind.priority, self.device

    def to_dict(self):
        return {
            "t": self.time,
            "kind": self.kind.str_value,
            "device": self.device,
            "payload": to_builtin(self.payload),
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            time=data["t"],
            kind=EventKind.from_str(data["kind"]),
            device=data.get("device", ""),
            payload=dict(data.get("payload", {})),
        )


class EventQueue:
    """
    Scheduled events keyed by the integration step at which they fire.
    Events due at the same step pop in (time, kind priority, device id) order.
    """

    def __init__(self, events=(), step=1e-3):
        self.step = step
        self._heap = []
        self._counter = 0
        for event in events:
            self.push(event)

    def step_index(self, time):
        return int(round(time / self.step))

    def push(self, event: Event):
        heapq.heappush(
            self._heap, (self.step_index(event.time), event.sort_key, self._counter, event)
        )
        self._counter += 1

    def pop_due(self, step_index) -> List[Event]:
        due = []
        while self._heap and self._heap[0][0] <= step_index:
            due.append(heapq.heappop(self._heap)[-1])
        return due

    def __len__(self):
        return len(self._heap)
