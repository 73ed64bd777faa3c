"""Smoke test for the Python bindings.

Build and install first:  pip install --no-build-isolation -e crates/py
Run:                      python python/smoke_test.py
"""

import math
import os
import tempfile

import momentflow_py as mf


def close(a, b, tol):
    assert abs(a - b) <= tol, f"{a} != {b} (tol {tol})"


def main():
    # Moment maps.
    mean, var = mf.activation_moments("name=relu", 0.0, 1.0)
    close(mean, 1.0 / math.sqrt(2.0 * math.pi), 1e-9)
    close(var, 0.5 - 1.0 / (2.0 * math.pi), 1e-9)
    mean, _ = mf.activation_moments("name=heaviside", 1.0, 0.0)
    close(mean, 1.0, 0.0)

    # Softmax and KL.
    p = mf.softmax([1.0, 0.0, -1.0], [0.5, 0.5, 0.5])
    close(sum(p), 1.0, 1e-12)
    assert p[0] > p[1] > p[2]
    close(mf.posterior_kl([0.8, 0.2], [0.6, 0.4]), 0.8 * math.log(4 / 3) + 0.2 * math.log(0.5), 1e-12)

    # AND gate.
    gate = mf.AndGate(0.05)
    rows = gate.table()
    assert len(rows) == 6
    close(rows[3][3], 0.078207, 1e-6)
    close(gate.ap1(0.25, 0.25), 0.00276243, 1e-8)
    try:
        mf.AndGate(0.7)
    except ValueError:
        pass
    else:
        raise AssertionError("epsilon outside (0, 0.5) must be rejected")

    # A small network: forward in every mode, then training on blobs.
    net = mf.Network(
        "input shape=2 seed=4\n"
        "linear in=2 out=8\n"
        "activation name=relu\n"
        "dropout p=0.1\n"
        "linear in=8 out=2\n"
        "softmax\n"
    )
    assert net.shapes == [[2], [8], [8], [8], [2], [2]]
    x = [0.5, -0.5, 1.0, 2.0]
    for mode in ("ap1", "ap2", "sample"):
        means, variances, probs = net.forward(x, mode=mode, noise=0.1)
        assert len(means) == 4 and len(variances) == 4 and len(probs) == 2
        for row in probs:
            close(sum(row), 1.0, 1e-9)
    a = net.forward(x, mode="sample", seed=7)
    b = net.forward(x, mode="sample", seed=7)
    assert a == b, "sampling must be reproducible for a fixed seed"

    features, labels = mf.synthetic_blobs(2, 100, 2, 10.0, 3)
    log = net.fit(features, labels, epochs=10, batch_size=16, lr=0.02, val_fraction=0.0, seed=3)
    assert len(log) == 10
    acc = net.accuracy(features, labels)
    assert acc >= 0.99, acc

    csv = net.report(x, noise=0.1, samples=200, seed=1)
    assert csv.splitlines()[0].startswith("layer_index,layer_kind,eps_mu_ap1,eps_mu_ap2")

    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "net.ckpt")
        net.save(path)
        again = mf.Network.load(net.config_text(), path)
        assert again.forward(x) == net.forward(x)

    print("python smoke test: ok")


if __name__ == "__main__":
    main()
