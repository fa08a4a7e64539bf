"""Smoke test for the dicert_py extension module."""

import json
import math

import dicert_py as d


def main() -> None:
    assert abs(d.quantum_max(0.0) - 2 * math.sqrt(2)) < 1e-12
    assert d.local_bound(1.0) == 3.0
    theta = d.theta_from_alpha(0.949)
    assert abs(theta - 0.45946) < 5e-3
    assert abs(d.alpha_from_theta(theta) - 0.949) < 1e-9
    assert abs(d.fidelity_bound(0.949, d.quantum_max(0.949)) - 1.0) < 1e-10

    p = d.tilted_behavior(0.5, 0.98)
    assert len(p) == 16 and abs(sum(p) - 4.0) < 1e-12
    p_guess, cert = d.guessing_probability(p, 1, "level2")
    assert 0.5 <= p_guess < 1.0
    assert "coefficients" in json.loads(cert)

    try:
        d.guessing_probability([0.25] * 15, 1, "level2")
    except ValueError:
        pass
    else:
        raise AssertionError("short behavior accepted")

    out = json.loads(d.run_pipeline(json.dumps({"theta_list": [0.7847], "counts_per_setting": None})))
    row = out["rows"][0]
    assert row["bell_value"] > row["local_bound"]
    print(f"ok: p_guess(θ=0.5, v=0.98) = {p_guess:.6f}, bits(π/4 row) = {row['randomness_bits']:.4f}")


if __name__ == "__main__":
    main()
