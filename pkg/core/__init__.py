# Solver core: problem model, prox toolbox, DDRSM, ADMM, benchmarks and diagnostics
