import numpy as np
import pytest

from ordconverge.core import Group, OrdinalScale, Panel, RespondentRecord

LIKERT = OrdinalScale(
    ("strongly_agree", "agree", "neither", "disagree", "strongly_disagree")
)


@pytest.fixture
def likert():
    return LIKERT


def make_record(
    person="p1",
    family="f1",
    group=Group.TREATED,
    question="q1",
    response=1,
    treatment=0.0,
    sex=0,
    oldest=0,
    age=20,
    wave="j",
    country=None,
):
    if Group.coerce(group) is Group.REFERENCE:
        treatment = None
    return RespondentRecord(
        person_id=person,
        family_id=family,
        group=group,
        question_id=question,
        response=response,
        treatment=treatment,
        sex=sex,
        oldest=oldest,
        age_at_interview=age,
        wave=wave,
        country_code=country,
    )


def make_panel(records, scale=LIKERT, wave_order=("b", "d", "j")):
    return Panel(records=tuple(records), scale=scale, wave_order=wave_order)


def random_panel(
    rng,
    n_families=8,
    k=4,
    sibs=(2, 4),
    treat_max=9,
    question="q1",
    with_reference=True,
    scale=None,
):
    """A small arbitrary panel; responses and treatments are unrelated."""
    scale = scale or OrdinalScale(tuple(f"c{i}" for i in range(1, k + 1)))
    records = []
    for f in range(n_families):
        size = int(rng.integers(sibs[0], sibs[1] + 1))
        for s in range(size):
            records.append(
                make_record(
                    person=f"t{f}_{s}",
                    family=f"tf{f}",
                    question=question,
                    response=int(rng.integers(1, scale.size + 1)),
                    treatment=float(rng.integers(0, treat_max + 1)),
                    sex=int(rng.integers(0, 2)),
                    oldest=int(s == 0),
                    age=int(rng.integers(18, 40)),
                    wave="j",
                )
            )
    if with_reference:
        for f in range(n_families):
            for s in range(2):
                records.append(
                    make_record(
                        person=f"r{f}_{s}",
                        family=f"rf{f}",
                        group=Group.REFERENCE,
                        question=question,
                        response=int(rng.integers(1, scale.size + 1)),
                        sex=int(rng.integers(0, 2)),
                        oldest=int(s == 0),
                        age=int(rng.integers(18, 40)),
                        wave="j",
                    )
                )
    return Panel(records=tuple(records), scale=scale, wave_order=("b", "d", "j"))


def random_simplex(rng, k, floor=0.0):
    """A proper probability vector; optionally bounded away from zero."""
    raw = rng.dirichlet(np.ones(k))
    if floor > 0.0:
        raw = (1 - k * floor) * raw + floor
    return raw / raw.sum()
