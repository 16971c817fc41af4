from hypothesis import HealthCheck, settings

# first calls into freshly built models pay numba dispatch/compile cost, so
# per-example deadlines are meaningless here
settings.register_profile(
    "manifold-ghmc",
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("manifold-ghmc")
