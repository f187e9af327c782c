"""Plug-and-play run: per-stage sharing metrics and the frequency excursion."""
from vpdroop.acceptance import frequency_excursion, load_scenario, simulate, stage_windows
from vpdroop.timedomain import measure_metrics

if __name__ == "__main__":
    sf = load_scenario("plug_and_play")
    trace = simulate(sf)
    for end, conn in stage_windows(sf):
        rep = measure_metrics(trace, sf.metrics.window, end)
        shares = ", ".join(f"#{k + 1} P={rep.P[k]:.1f} W Q={rep.Q[k]:.1f} var" for k in conn)
        print(f"stage ending {end:g} s: {shares}")
    print(f"max relative frequency deviation away from events: {frequency_excursion(trace, sf):.2e}")
