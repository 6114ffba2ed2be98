import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, Optional, TypeVar

from posner.core.config import settings

logger = logging.getLogger(__name__)

Item = TypeVar("Item")
Result = TypeVar("Result")


def resolve_workers(workers: Optional[int] = None) -> int:
    return max(1, int(workers if workers is not None else settings.POSNER_WORKERS))


def ordered_map(
    fn: Callable[[Item], Result],
    items: Iterable[Item],
    workers: Optional[int] = None,
) -> list[Result]:
    """
    Apply `fn` to every item; results come back in input order whatever the
    worker count. One worker runs inline.
    """
    items = list(items)
    workers = resolve_workers(workers)
    if workers == 1 or len(items) < 2:
        return [fn(item) for item in items]

    logger.debug(f"Mapping {len(items)} items over {workers} threads")
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
