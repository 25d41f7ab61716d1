import os

# Pin BLAS/OpenMP pools to one thread before numpy loads anywhere, so every
# reduction has a fixed order and training runs are bitwise reproducible
# (the determinism acceptance criterion is checked under this pinning).
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
             "NUMEXPR_NUM_THREADS"):
    os.environ.setdefault(_var, "1")
