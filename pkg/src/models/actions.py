from enum import IntEnum


class Action(IntEnum):
    """Per-component maintenance actions (repair with inspection is excluded)."""

    DN_NI = 0  # do-nothing / no-inspection
    DN_I = 1  # do-nothing / inspection
    R_NI = 2  # perfect repair / no-inspection


class Observation(IntEnum):
    """Per-component inspection outcome; NONE unless the action was DN_I."""

    NONE = 0
    DETECTION = 1
    NO_DETECTION = 2


N_ACTIONS = len(Action)
