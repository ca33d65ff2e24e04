import numpy as np
import pytest
from hypothesis import settings

from pairq.data import AnnotatedItem, Database

settings.register_profile("pairq", deadline=None, max_examples=200)
settings.load_profile("pairq")


def make_item(idx: int, db: str = "demo", content: str | None = None,
              mu: float = 0.0, sigma: float = 1.0, features=None) -> AnnotatedItem:
    if features is None:
        features = np.array([float(idx), 1.0])
    return AnnotatedItem(id=f"{db}-{idx:03d}", db=db,
                         content=content if content is not None else f"g{idx}",
                         mu=mu, sigma=sigma, features=features)


def make_database(n: int = 6, db: str = "demo", polarity: str = "MOS",
                  scenario: str = "synthetic", group_size: int = 1,
                  mu_fn=None, sigma_fn=None) -> Database:
    items = []
    for i in range(n):
        items.append(make_item(
            i, db=db, content=f"g{i // group_size}",
            mu=mu_fn(i) if mu_fn else float(i),
            sigma=sigma_fn(i) if sigma_fn else 1.0 + 0.1 * i))
    return Database(name=db, scenario=scenario, polarity=polarity, items=items)


@pytest.fixture
def small_db() -> Database:
    return make_database(n=8, group_size=2)
