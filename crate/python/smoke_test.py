"""Smoke test for the `spinflip` extension module.

Build and install first:  pip install --no-build-isolation -e crates/python
"""

import math

import spinflip


def close(a, b, tol):
    return abs(a - b) < tol


def main():
    c1, c2 = spinflip.mag_extremal(0.5, 0.0, 1.0)
    assert close(c1, -0.00932868, 1e-8), c1
    assert close(c1 + c2, 0.5, 1e-12)

    assert spinflip.mag_hamiltonian(0.3, 0.0) == 0.0
    assert close(spinflip.mag_lagrangian(0.3, -0.6), 0.0, 1e-12)

    values, action, el = spinflip.minimize_action(0.5, 0.0, 1.0, steps=200)
    assert len(values) == 201 and values[0] == 0.5 and close(values[-1], 0.0, 1e-12)
    assert el < 1e-3, el

    model = spinflip.JumpModel.spin_flip(0.5)
    var = model.variational([0.0, 0.0])
    assert close(var, 0.1339746, 1e-6), var
    value, nu = model.dual([0.0, 0.0])
    assert close(value, var, 1e-7) and len(nu) == 2
    assert model.closed_form([0.0, 0.0]) > var

    dw = spinflip.RateFunction.double_well(1.5)
    assert dw.is_bad(0.0, 3.0)
    assert not spinflip.RateFunction.bernoulli(0.2).is_bad(0.0, 3.0)
    assert len(dw.optimal_initials(0.0, 3.0)) == 2

    cfg = spinflip.SpinConfiguration.random(1, 10, 0.1, seed=3)
    assert cfg.side == 21
    rates = spinflip.RateTable.random(1, 1, 0.5, 2.0, seed=4)
    again = spinflip.RateTable.from_json(rates.to_json())
    assert again.to_json() == rates.to_json()
    lhs, rhs = spinflip.nonlinear_generator_exact(cfg, [([(0, 0), (1, 0)], 0.7), ([(0, 0)], -0.3)], rates)
    assert close(lhs, rhs, 1e-9), (lhs, rhs)

    series = spinflip.glauber_moments(
        spinflip.SpinConfiguration.constant(1, 20, 1), spinflip.RateTable.constant(1, 1.0),
        [0.5, 1.0], [[(0, 0)]], replicas=4, seed=7,
    )
    assert len(series) == 4 and len(series[0]) == 2
    # Unit rates: the mean spin decays like exp(-2t).
    mean = sum(row[1] for row in series) / len(series)
    assert abs(mean - math.exp(-2.0)) < 0.2, mean

    [(cid, name, passed, detail)] = spinflip.verify(check=1)
    assert cid == 1 and passed, detail

    try:
        model.variational([1.0, 1.0])
    except ValueError:
        pass
    else:
        raise AssertionError("expected ValueError")

    print("python smoke test passed")


if __name__ == "__main__":
    main()
