"""
core -- Base numerica de steerkit: grupo SE(d), campos de Fourier, E/S STFL,
configuracion, errores y logging.
"""
