import numpy as np


class SGD:
    def __init__(self, named_params, lr=0.01):
        self.params = list(named_params)
        self.lr = lr

    def step(self):
        for _, p in self.params:
            if p.grad is not None:
                p.data -= (self.lr * p.grad).astype(p.data.dtype)

    def zero_grad(self):
        for _, p in self.params:
            p.grad = None


class Adam:
    """Adam with bias correction; moment buffers are keyed by parameter name."""

    def __init__(self, named_params, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(named_params)
        names = [n for n, _ in self.params]
        if len(set(names)) != len(names):
            raise ValueError("parameter names must be unique")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.state = {n: (np.zeros_like(p.data, dtype=np.float64),
                          np.zeros_like(p.data, dtype=np.float64)) for n, p in self.params}

    def step(self):
        self.t += 1
        c1 = 1 - self.beta1 ** self.t
        c2 = 1 - self.beta2 ** self.t
        for name, p in self.params:
            if p.grad is None:
                continue
            m, v = self.state[name]
            g = p.grad.astype(np.float64)
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            update = self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.data -= update.astype(p.data.dtype)

    def zero_grad(self):
        for _, p in self.params:
            p.grad = None
