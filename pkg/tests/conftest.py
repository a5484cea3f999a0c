import pytest
from hypothesis import settings

from stemos.sim import World, generate_world, initial_memory, make_team
from stemos.stem import StemStore

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


def seeded_memory(level: str = "L1", seed: int = 0, team=("wheeled", "wheeled")):
    """Memory for a generated world with its robots registered."""
    spec = generate_world("HOUSEHOLD", level, seed)
    world = World(spec, make_team(list(team), spec), seed)
    state, deltas = initial_memory(world)
    store = StemStore(state)
    for d in deltas:
        store.append(0, embodiment=d)
    return store.state, world


@pytest.fixture
def m0():
    return seeded_memory()[0]


def memory_for(spec, team):
    """Registered memory and world for an explicit spec and team kinds."""
    from stemos.sim import World, initial_memory, make_team

    world = World(spec, make_team(list(team), spec), 0)
    state, deltas = initial_memory(world)
    store = StemStore(state)
    for d in deltas:
        store.append(0, embodiment=d)
    return store.state, world
