"""
training -- Parametros, Adam, datos sinteticos/IDX y ensamblado del modelo.
"""
