"""Smoke test for the adaptive_nmpc_py extension module.

Build and install first:

    pip install --no-build-isolation ./crates/py

then run `python python/smoke_test.py`.
"""

import json
import math
import tempfile
from pathlib import Path

import adaptive_nmpc_py as an

REPO = Path(__file__).resolve().parent.parent


def check_mlp():
    net = an.Mlp([2, 16, 1], "tanh", seed=3)
    assert net.layer_sizes == [2, 16, 1]
    assert net.param_count == 2 * 16 + 16 + 16 + 1
    inputs = [[0.1, -0.2], [0.5, 0.3], [-0.4, 0.9]]
    targets = [[0.2], [-0.1], [0.4]]
    loss, grad = net.gradient(inputs, targets)
    assert math.isclose(loss, net.loss(inputs, targets))
    h = 1e-6
    params = net.params()
    for i in (0, 17, len(params) - 1):
        up = list(params)
        up[i] += h
        down = list(params)
        down[i] -= h
        fd = (net.with_params(up).loss(inputs, targets) - net.with_params(down).loss(inputs, targets)) / (2 * h)
        assert abs(fd - grad[i]) < 1e-6, (i, fd, grad[i])
    jac = net.input_jacobian([0.1, 0.2])
    assert len(jac) == 1 and len(jac[0]) == 2
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "net.json"
        net.save(path)
        assert an.Mlp.load(path).params() == params


def check_plant_and_solver():
    plant = an.Plant("cart_pole")
    assert (plant.state_dim, plant.input_dim) == (4, 1)
    x = [0.0, 0.0, 0.1, 0.0]
    assert plant.eval_true(x, [0.0]) != plant.eval_nominal(x, [0.0])
    assert plant.matched().eval_true(x, [0.0]) == plant.eval_nominal(x, [0.0])
    assert an.Plant.from_json(plant.to_json()).to_json() == plant.to_json()
    sol = an.solve_ocp(plant, x, [0.0] * 4, [0.0], [5.0, 0.1, 5.0, 0.1], [0.1])
    assert sol["converged"]
    assert len(sol["controls"]) == 20 and len(sol["states"]) == 21
    residual = an.Mlp([5, 8, 2], seed=1)
    with_net = an.solve_ocp(plant, x, [0.0] * 4, [0.0], [5.0, 0.1, 5.0, 0.1], [0.1], residual=residual)
    assert len(with_net["controls"]) == 20


def check_errors():
    try:
        an.Plant("bicycle")
    except ValueError:
        pass
    else:
        raise AssertionError("unknown plant accepted")
    try:
        an.Mlp([2, 4, 1]).forward([1.0])
    except ValueError:
        pass
    else:
        raise AssertionError("wrong input width accepted")


def check_experiment():
    config = json.loads((REPO / "configs" / "vdp_predict.json").read_text())
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        config["meta"]["epochs"] = 20
        config["meta"]["checkpoint"] = str(tmp / "meta.json")
        config["output_dir"] = str(tmp / "out")
        path = tmp / "config.json"
        path.write_text(json.dumps(config))
        assert Path(an.meta_train(path)).exists()
        summary = json.loads(an.run_experiment(path, trials=2))
        assert summary["trials"] == 2
        assert set(summary["kinds"]) == {"nominal", "residual_mlp", "meta_mlp"}
        assert json.loads(an.aggregate(tmp / "out")) == summary


if __name__ == "__main__":
    check_mlp()
    check_plant_and_solver()
    check_errors()
    check_experiment()
    print("python smoke test passed")
