import numpy as np
import pytest

import voltsense as vs

# Per-unit friendly bases: z_base = 1 ohm, s_base = 1e6 VA per phase,
# v_base = 1000 V line-to-neutral.
_BASE = """
BASE
power_va 3000000
voltage_v 1732.0508075688772
source 1
"""

TWO_NODE = _BASE + """
NODES
1 a 1000 0.0
2 a 1000 0.0

LINES
1 2 0.05+0j 0j 0j 0j 0j 0j

LOADS
2 a 100000 50000
"""

# source 1 -- trunk --> 2, with leaves 3 and 4 on separate laterals
FOUR_NODE = _BASE + """
NODES
1 abc 1000 0.0
2 abc 1000 0.0
3 abc 1000 0.0
4 abc 1000 0.0

LINES
1 2 0.04+0.03j 0.01+0.005j 0.01+0.005j 0.04+0.03j 0.01+0.005j 0.04+0.03j
2 3 0.06+0.04j 0.015+0.008j 0.015+0.008j 0.06+0.04j 0.015+0.008j 0.06+0.04j
2 4 0.05+0.02j 0.012+0.006j 0.012+0.006j 0.05+0.02j 0.012+0.006j 0.05+0.02j

LOADS
2 abc 60000 30000
3 a 50000 20000
3 b 40000 15000
3 c 45000 18000
4 abc 30000 12000
"""


@pytest.fixture(scope="session")
def feeder37():
    return vs.bundled_feeder()


@pytest.fixture(scope="session")
def base_state37(feeder37):
    rep = vs.solve(feeder37, vs.base_injections(feeder37))
    assert rep.converged
    return rep.voltages


@pytest.fixture(scope="session")
def pack():
    return vs.bundled_pack()


@pytest.fixture()
def feeder2():
    return vs.parse_feeder(TWO_NODE)


@pytest.fixture()
def feeder4():
    return vs.parse_feeder(FOUR_NODE)


@pytest.fixture()
def state4(feeder4):
    rep = vs.solve(feeder4, vs.base_injections(feeder4))
    assert rep.converged
    return rep.voltages


def rel_err(a, b):
    """Relative error of complex 3-vectors, 2-norm."""
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    return float(np.linalg.norm(a - b) / np.linalg.norm(b))
