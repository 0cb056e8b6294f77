# benchmarks/__init__.py