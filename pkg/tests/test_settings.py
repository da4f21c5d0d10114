"""Settings del laboratorio (app/core/config.py) y el pool de hilos."""

import threading

import pytest
from pydantic import ValidationError

from app.core.config import Settings, settings
from app.core.workers import resolve_threads, run_parallel


def test_log_level_se_normaliza():
    assert Settings(LOG_LEVEL="debug").LOG_LEVEL == "DEBUG"


def test_log_level_invalido_explota():
    with pytest.raises(ValidationError, match="LOG_LEVEL"):
        Settings(LOG_LEVEL="VERBOSE")


@pytest.mark.parametrize("field", ["LAB_THREADS", "INVERSION_NODES", "BOX_MAX_DEPTH"])
def test_enteros_deben_ser_positivos(field):
    with pytest.raises(ValidationError, match=field):
        Settings(**{field: 0})


@pytest.mark.parametrize("field", ["QUAD_TOL", "CS_TOLERANCE", "TIKHONOV_WEIGHT", "SMIN_FRACTION"])
def test_tolerancias_deben_ser_positivas(field):
    with pytest.raises(ValidationError, match=field):
        Settings(**{field: 0.0})


# ---------- hilos ----------

def test_hilos_por_defecto_salen_de_la_config():
    assert resolve_threads(None) == settings.LAB_THREADS
    assert resolve_threads(3) == 3
    with pytest.raises(ValueError):
        resolve_threads(0)


def test_run_parallel_conserva_el_orden():
    def square(x):
        return x * x

    assert run_parallel(square, range(20), threads=4) == [x * x for x in range(20)]
    assert run_parallel(square, [], threads=4) == []


def test_un_hilo_corre_en_linea():
    idents = run_parallel(lambda _: threading.get_ident(), range(3), threads=1)
    assert set(idents) == {threading.get_ident()}
