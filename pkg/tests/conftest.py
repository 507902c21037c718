import pytest

from pimionet.dynamics import FreeSystem
from pimionet.fem import RayleighCoefficients, TrussGeometry, assemble_system, build_truss_model


@pytest.fixture(scope="session")
def preset_model():
    return build_truss_model(TrussGeometry())


@pytest.fixture(scope="session")
def preset_system(preset_model):
    return assemble_system(preset_model, RayleighCoefficients(0.1, 0.05))


@pytest.fixture(scope="session")
def preset_free(preset_system):
    return FreeSystem.from_assembled(preset_system)


@pytest.fixture(scope="session")
def toy_geometry():
    return TrussGeometry(span=2.0, height=1.0, panels=2, chord_divisions=1,
                         vertical_divisions=1, diagonal_divisions=1)


SMALL_GEOMETRY = TrussGeometry(span=2.0, height=1.0, panels=2, chord_divisions=2,
                               vertical_divisions=1, diagonal_divisions=1)


def small_generation(**kw):
    from pimionet.pipeline import GenerationConfig
    base = dict(velocities=(2.0, 3.0), loads_per_case=4, geometry=SMALL_GEOMETRY, n_steps=12,
                train_ratio=0.5, schur_count=2, duration=1.5)
    base.update(kw)
    return GenerationConfig(**base)


@pytest.fixture(scope="session")
def small_generated():
    from pimionet.pipeline import generate
    return generate(small_generation(), companion_factors=(2,))


@pytest.fixture(scope="session")
def small_dataset(small_generated):
    return small_generated.dataset


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE_LINES
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
