"""The tape: record a forward pass, pull gradients back, check them numerically."""

import numpy as np

from marketrec.models import Model, ModelConfig
from marketrec.nn import Tape, Tensor, bce_loss, relu, sigmoid, tsum

# A tiny logistic unit by hand.
w = Tensor(np.array([0.5, -1.0]), requires_grad=True)
x = np.array([[1.0, 2.0], [0.5, -0.5], [2.0, 0.0]])
y = np.array([1.0, 0.0, 1.0])
with Tape() as tape:
    loss = bce_loss(sigmoid(x @ w), y)
print("loss", loss.item())
print("dL/dw", tape.gradient(loss, w))

# Same thing by central differences.
def f(v):
    p = 1 / (1 + np.exp(-(x @ v)))
    return -np.mean(y * np.log(p) + (1 - y) * np.log(1 - p))

h = 1e-5
fd = np.array([(f(w.value + h * e) - f(w.value - h * e)) / (2 * h) for e in np.eye(2)])
print("finite differences", fd)

# Second order: differentiate the gradient again (used by full MAML).
a = Tensor(np.array(1.5), requires_grad=True)
with Tape() as tape:
    out = tsum(relu(a) * a * a)  # a^3 for a > 0
    (g,) = tape.gradient(out, [a], create_graph=True)
    (gg,) = tape.gradient(g, [a])
print("d/da a^3 =", g.value, " d2 =", gg, "(expect 6.75 and 9)")

# A whole model: MA-NMF, BCE plus the L2 term, every tensor checked.
cfg = ModelConfig("nmf", True, n_users=4, n_items=5, n_markets=2)
model = Model(cfg, seed=3)
rng = np.random.default_rng(0)
for k in model.params:
    model.params[k] += rng.normal(0, 0.2, model.params[k].shape)
u, i, m = rng.integers(0, 4, 8), rng.integers(0, 5, 8), rng.integers(0, 2, 8)
labels = rng.integers(0, 2, 8).astype(float)
lam = 1e-7

def objective():
    t = model.tensors(requires_grad=False)
    s = model.forward(t, u, i, m).value
    s = np.clip(s, 1e-12, 1 - 1e-12)
    return -np.mean(labels * np.log(s) + (1 - labels) * np.log(1 - s)) + 0.5 * lam * sum(
        np.sum(v * v) for v in model.params.values()
    )

t = model.tensors()
with Tape() as tape:
    loss = bce_loss(model.forward(t, u, i, m), labels)
    for v in t.values():
        loss = loss + 0.5 * lam * tsum(v * v)
grads = tape.gradient(loss, t)

for name in ("market", "mlp.W2", "h", "h.bias"):
    p = model.params[name]
    num = np.zeros_like(p)
    for idx in np.ndindex(p.shape):
        old = p[idx]
        p[idx] = old + h
        up = objective()
        p[idx] = old - h
        down = objective()
        p[idx] = old
        num[idx] = (up - down) / (2 * h)
    err = np.linalg.norm(grads[name] - num) / (np.linalg.norm(grads[name]) + np.linalg.norm(num))
    print(f"{name:8s} relative error {err:.1e}")
