"""Pool de hilos compartido por los módulos que reparten trabajo independiente."""

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, TypeVar

from app.core.config import settings

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


def resolve_threads(threads: int | None) -> int:
    """`None` = lo que diga LAB_THREADS."""
    if threads is None:
        return settings.LAB_THREADS
    if threads < 1:
        raise ValueError(f"threads debe ser >= 1 (llegó {threads})")
    return threads


def run_parallel(fn: Callable[[T], R], items: Iterable[T], threads: int | None = None) -> List[R]:
    """
    Aplica `fn` a cada item y devuelve los resultados EN ORDEN.

    Con un solo hilo corre en línea, sin executor: así los tracebacks quedan limpios y la
    salida es idéntica bit a bit a la de la corrida con varios hilos.
    """
    items = list(items)
    workers = resolve_threads(threads)
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    logger.debug(f"Repartiendo {len(items)} tareas en {workers} hilos")
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
