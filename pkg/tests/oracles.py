"""Independent brute-force oracles the library is checked against.

Everything here is deliberately naive (recursion, scalar loops, O(N^2)
summation) and shares no code with the package.
"""

import math

import numpy as np


# --- B-splines -------------------------------------------------------------

def cox_de_boor(knots, i, k, x):
    """Textbook recursive B-spline basis B_{i,k}(x)."""
    if k == 0:
        return 1.0 if knots[i] <= x < knots[i + 1] else 0.0
    left = 0.0
    if knots[i + k] != knots[i]:
        left = (x - knots[i]) / (knots[i + k] - knots[i]) * cox_de_boor(knots, i, k - 1, x)
    right = 0.0
    if knots[i + k + 1] != knots[i + 1]:
        right = ((knots[i + k + 1] - x) / (knots[i + k + 1] - knots[i + 1])
                 * cox_de_boor(knots, i + 1, k - 1, x))
    return left + right


def basis_vector_naive(grid, x):
    """All basis values at one point via the recursive oracle, with the same
    clamping convention as the library."""
    x = min(max(x, grid.t_min), grid.t_max)
    return np.array([cox_de_boor(grid.knots, i, grid.degree, x)
                     for i in range(grid.basis_count)])


# --- DCT ---------------------------------------------------------------------

def dct_direct(x):
    n = len(x)
    out = np.zeros(n)
    for k in range(n):
        s = math.sqrt(1.0 / n) if k == 0 else math.sqrt(2.0 / n)
        acc = 0.0
        for i in range(n):
            acc += x[i] * math.cos(math.pi / n * (i + 0.5) * k)
        out[k] = s * acc
    return out


def idct_direct(spec):
    n = len(spec)
    out = np.zeros(n)
    for i in range(n):
        acc = 0.0
        for k in range(n):
            s = math.sqrt(1.0 / n) if k == 0 else math.sqrt(2.0 / n)
            acc += s * spec[k] * math.cos(math.pi / n * (i + 0.5) * k)
        out[i] = acc
    return out


# --- scalar activations ------------------------------------------------------

def silu_ref(x):
    return x / (1.0 + math.exp(-x)) if x >= 0 else x * math.exp(x) / (1.0 + math.exp(x))


def edge_activation_ref(layer, j, i, x):
    bv = basis_vector_naive(layer.grid, x)
    spline = sum(layer.coeffs[j, i, m] * bv[m] for m in range(layer.grid.basis_count))
    return layer.prune_mask[j, i] * (layer.w_b[j, i] * silu_ref(x)
                                     + layer.w_s[j, i] * spline)


def layer_forward_ref(layer, x):
    batch = x.shape[0]
    out = np.zeros((batch, layer.out_dim))
    for b in range(batch):
        for j in range(layer.out_dim):
            out[b, j] = sum(edge_activation_ref(layer, j, i, x[b, i])
                            for i in range(layer.in_dim))
    return out


def kan_forward_ref(model, x):
    h = x
    layer0 = None
    for k, layer in enumerate(model.layers):
        h = layer_forward_ref(layer, h)
        if k == 0:
            layer0 = h.copy()
    return h, layer0


def mlp_forward_ref(model, x):
    out = np.zeros((x.shape[0], model.weights[-1].shape[0]))
    for b in range(x.shape[0]):
        h = x[b]
        for k, (w, bias) in enumerate(zip(model.weights, model.biases)):
            z = np.array([sum(w[r, c] * h[c] for c in range(w.shape[1])) + bias[r]
                          for r in range(w.shape[0])])
            h = z if k == len(model.weights) - 1 else np.maximum(z, 0.0)
        out[b] = h
    return out


# --- optimizers ----------------------------------------------------------------

def adam_scalar_ref(p0, grads, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """Hand-rolled scalar Adam loop; returns the parameter after len(grads) steps."""
    p, m, v = p0, 0.0, 0.0
    for t, g in enumerate(grads, start=1):
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)
        p -= lr * m_hat / (math.sqrt(v_hat) + eps)
    return p


# --- finite differences -----------------------------------------------------

def central_diff(f, arrays, h=1e-5):
    """Central finite-difference gradient of scalar f() w.r.t. each array,
    mutating entries in place."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        flat = a.ravel()
        gflat = g.ravel()
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + h
            f_plus = f()
            flat[idx] = orig - h
            f_minus = f()
            flat[idx] = orig
            gflat[idx] = (f_plus - f_minus) / (2.0 * h)
        grads.append(g)
    return grads


def assert_grads_close(analytic, numeric, rel_tol=1e-4, abs_floor=1e-8):
    """Relative comparison; entries in the finite-difference noise floor
    (absolute difference below abs_floor) pass on the absolute check."""
    for a, n in zip(analytic, numeric):
        a = np.asarray(a).ravel()
        n = np.asarray(n).ravel()
        for x, y in zip(a, n):
            if abs(x - y) < abs_floor:
                continue
            rel = abs(x - y) / max(abs(x), abs(y))
            assert rel < rel_tol, f"gradient mismatch: {x} vs {y} (rel {rel:.2e})"


# --- Feynman formulas ---------------------------------------------------------

def feynman_ref(fid, row):
    """Independent scalar evaluation of every registry formula."""
    v = [float(x) for x in row]
    if fid == "I.6.2":
        return math.exp(-v[0] ** 2 / (2 * v[1] ** 2)) / math.sqrt(2 * math.pi * v[1] ** 2)
    if fid == "I.6.2b":
        return math.exp(-(v[0] - v[1]) ** 2 / (2 * v[2] ** 2)) / math.sqrt(2 * math.pi * v[2] ** 2)
    if fid == "I.9.18":
        return v[0] / ((v[1] - 1) ** 2 + (v[2] - v[3]) ** 2 + (v[4] - v[5]) ** 2)
    if fid == "I.12.11":
        return 1 + v[0] * math.sin(v[1])
    if fid == "I.13.12":
        return v[0] * (1 / v[1] - 1)
    if fid == "I.15.3x":
        return (1 - v[0]) / math.sqrt(1 - v[1] ** 2)
    if fid == "I.16.6":
        return (v[0] + v[1]) / (1 + v[0] * v[1])
    if fid == "I.18.4":
        return (1 + v[0] * v[1]) / (1 + v[0])
    if fid == "I.26.2":
        return math.asin(v[0] * math.sin(v[1]))
    if fid == "I.27.2":
        return 1 / (1 + v[0] * v[1])
    if fid == "I.29.16":
        return math.sqrt(1 + v[0] ** 2 - 2 * v[0] * math.cos(v[1] - v[2]))
    if fid == "I.30.3":
        return math.sin(v[0] * v[1] / 2) ** 2 / math.sin(v[1] / 2) ** 2
    if fid == "I.40.1":
        return v[0] * math.exp(-v[1])
    if fid == "I.50.26":
        return math.cos(v[0]) + v[0] * math.cos(v[0]) ** 2
    if fid == "II.2.42":
        return (v[0] - 1) * v[1]
    if fid == "II.6.15a":
        return v[2] * math.sqrt(v[0] ** 2 + v[1] ** 2) / (4 * math.pi)
    if fid == "II.11.7":
        return v[0] * (1 + v[1] * math.cos(v[2]))
    if fid == "II.11.27":
        return v[0] * v[1] / (1 - v[0] * v[1] / 3)
    if fid == "II.35.18":
        return v[0] / (math.exp(v[1]) + math.exp(-v[1]))
    if fid == "II.36.38":
        return v[0] + v[1] * v[2]
    if fid == "II.38.3":
        return v[0] / v[1]
    if fid == "III.9.52":
        return v[0] * math.sin((v[1] - v[2]) / 2) ** 2 / ((v[1] - v[2]) / 2) ** 2
    if fid == "III.10.19":
        return math.sqrt(1 + v[0] ** 2 + v[1] ** 2)
    if fid == "III.17.37":
        return v[1] * (1 + v[0] * math.cos(v[2]))
    raise KeyError(fid)
