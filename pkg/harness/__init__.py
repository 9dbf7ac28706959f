"""
harness -- Auditorias de equivarianza y gradientes, runner de entrenamiento,
mapas de atencion y reportes rich.
"""
