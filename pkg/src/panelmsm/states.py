"""State codings for the six-state and five-state model structures.

Six-state structure (movers occupy states 1-4, stayers 5-6):

    1: not active, not damaged      4: active, damaged
    2: active, not damaged          5: not active, not damaged (stayer)
    3: not active, damaged          6: active, not damaged (stayer)

Five-state structure (movers 1-3, stayers 4-5):

    1: not active   2: active   3: damaged (absorbing)
    4: not active (stayer)      5: active (stayer)

Damage is absorbing: damaged states are never left for undamaged states,
and stayer states never reach damage.
"""

SIX_STATE = "six_state"
FIVE_STATE = "five_state"

MODELS = (SIX_STATE, FIVE_STATE)

# Number of mover states (kernel size) per model.
N_MOVER_STATES = {SIX_STATE: 4, FIVE_STATE: 3}


class StayerImpossibleError(ValueError):
    """A damaged observation cannot occur under the stayer hypothesis."""


def six_state_code(active: int, damaged: int, stayer: bool = False) -> int:
    """Map (active, damaged) flags to a six-state code."""
    if stayer:
        if damaged:
            raise StayerImpossibleError("stayers cannot occupy damaged states")
        return 6 if active else 5
    if damaged:
        return 4 if active else 3
    return 2 if active else 1


def six_state_flags(code: int) -> tuple[int, int, bool]:
    """Inverse of six_state_code: (active, damaged, stayer)."""
    if code not in (1, 2, 3, 4, 5, 6):
        raise ValueError(f"invalid six-state code {code}")
    stayer = code >= 5
    if stayer:
        return (int(code == 6), 0, True)
    return (int(code in (2, 4)), int(code in (3, 4)), False)


def five_state_code(active: int, damaged: int, stayer: bool = False) -> int:
    """Map (active, damaged) flags to a five-state code.

    Damage absorbs the activity process: any damaged observation maps to
    state 3 regardless of the activity flag.
    """
    if stayer:
        if damaged:
            raise StayerImpossibleError("stayers cannot occupy the damaged state")
        return 5 if active else 4
    if damaged:
        return 3
    return 2 if active else 1


def five_state_flags(code: int) -> tuple[int, int, bool]:
    """Inverse of five_state_code: (active, damaged, stayer).

    State 3 returns active=0 by convention (activity is not modelled after
    damage in the five-state structure).
    """
    if code not in (1, 2, 3, 4, 5):
        raise ValueError(f"invalid five-state code {code}")
    if code >= 4:
        return (int(code == 5), 0, True)
    if code == 3:
        return (0, 1, False)
    return (int(code == 2), 0, False)


def mover_state_index(active: int, damaged: int, model: str) -> int:
    """0-based mover-state index into the model's transition kernel."""
    if model == SIX_STATE:
        return six_state_code(active, damaged) - 1
    if model == FIVE_STATE:
        return five_state_code(active, damaged) - 1
    raise ValueError(f"unknown model {model!r}")


def is_valid_mover_pair(i: int, j: int, model: str) -> bool:
    """Whether a transition between 0-based mover states is structurally allowed.

    Damage is absorbing, so any pair moving from a damaged state back to an
    undamaged one is a structural zero.
    """
    if model == SIX_STATE:
        return not (i >= 2 and j < 2)
    if model == FIVE_STATE:
        return not (i == 2 and j != 2)
    raise ValueError(f"unknown model {model!r}")
