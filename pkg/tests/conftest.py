import pytest

from dualdep.tables import CellCounts, SurveyData

# Quarterly dual-list counts (stratum A = small & medium entities, B = large),
# each triple is (x11, x10, x01).
QUARTER_COUNTS = {
    "Q1": ((100, 8900, 3641), (534, 2584, 3780)),
    "Q2": ((129, 8571, 3543), (582, 2705, 3608)),
    "Q3": ((107, 8199, 3116), (552, 2657, 3506)),
    "Q4": ((76, 4019, 2795), (303, 1528, 3202)),
}


def make_survey(quarter: str) -> SurveyData:
    (a, b) = QUARTER_COUNTS[quarter]
    return SurveyData(CellCounts(*a), CellCounts(*b), "Small & medium", "Large")


@pytest.fixture
def q1() -> SurveyData:
    return make_survey("Q1")


@pytest.fixture
def tiny() -> SurveyData:
    return SurveyData(CellCounts(2, 3, 4), CellCounts(1, 2, 3))
