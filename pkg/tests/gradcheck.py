"""End-to-end finite-difference check shared by several test modules."""
import numpy as np

from mmgcn import numerics as nx
from mmgcn.model import forward
from mmgcn.training import dialogue_loss


def end_to_end_errors(spec, dlg, params, h=1e-5):
    """Relative error per parameter between tape and central-difference gradients."""
    with nx.Tape() as tape:
        trace = forward(spec, dlg, params)
        loss = dialogue_loss(spec, trace, dlg, params)
    grads = nx.backward(tape, loss, wrt=params)
    errors = {}
    for name, p in params.items():
        def f():
            frozen = {k: nx.Tensor(v.data) for k, v in params.items()}
            return dialogue_loss(spec, forward(spec, dlg, frozen), dlg, frozen).item()

        num = nx.numeric_gradient(f, p.data, h)
        scale = max(np.linalg.norm(num), np.linalg.norm(grads[name]), 1e-8)
        errors[name] = float(np.linalg.norm(grads[name] - num) / scale)
    return errors
