"""Hot loops of the two-layer network: forward pass, tangent features, ridge loss
gradient and the empirical tangent kernel.

Every kernel exists twice: a fused numba loop (``*_nb``) and a vectorised numpy
version (``*_np``).  The public names dispatch on ``_accel.USE_NUMBA``.

Activation ids: 0 = quadratic u**2, 1 = sine sin(u + phase), 2 = relu power
max(u, 0)**(s + 1).  ``amp`` multiplies the activation (and its derivative).
"""
import math

import numpy as np

from . import _accel
from ._accel import njit, prange

QUADRATIC = 0
SINE = 1
RELU_POWER = 2


# --- numpy path -------------------------------------------------------------

def _act_np(pre, act_id, s, amp):
    if act_id == QUADRATIC:
        return amp * pre * pre
    if act_id == SINE:
        return amp * np.sin(pre)
    return amp * np.maximum(pre, 0.0) ** (s + 1)


def _dact_np(pre, act_id, s, amp):
    if act_id == QUADRATIC:
        return 2.0 * amp * pre
    if act_id == SINE:
        return amp * np.cos(pre)
    return amp * (s + 1) * np.maximum(pre, 0.0) ** s


def forward_np(W, b, phase, amp, act_id, s, Z):
    pre = Z @ W.T + phase
    return _act_np(pre, act_id, s, amp) @ b / math.sqrt(W.shape[0])


def tangent_np(W, b, phase, amp, act_id, s, Z):
    pre = Z @ W.T + phase
    coef = _dact_np(pre, act_id, s, amp) * b / math.sqrt(W.shape[0])
    return (coef[:, :, None] * Z[:, None, :]).reshape(Z.shape[0], -1)


def loss_grad_np(W, W0, b, phase, amp, act_id, s, Z, y, lam):
    n_neurons = W.shape[0]
    pre = Z @ W.T + phase
    f = _act_np(pre, act_id, s, amp) @ b / math.sqrt(n_neurons)
    resid = f - y
    diff = W - W0
    loss = float(resid @ resid + lam * np.sum(diff * diff))
    coef = _dact_np(pre, act_id, s, amp) * b / math.sqrt(n_neurons)
    grad = 2.0 * (coef * resid[:, None]).T @ Z + 2.0 * lam * diff
    return loss, grad


def tangent_gram_np(W, b, phase, amp, act_id, s, Z1, Z2):
    A1 = _dact_np(Z1 @ W.T + phase, act_id, s, amp) * b
    A2 = _dact_np(Z2 @ W.T + phase, act_id, s, amp) * b
    return (A1 @ A2.T) / W.shape[0] * (Z1 @ Z2.T)


# --- numba path -------------------------------------------------------------

@njit(cache=True)
def _act_nb(u, act_id, s, amp):
    if act_id == 0:
        return amp * u * u
    if act_id == 1:
        return amp * math.sin(u)
    if u <= 0.0:
        return 0.0
    return amp * u ** (s + 1)


@njit(cache=True)
def _dact_nb(u, act_id, s, amp):
    if act_id == 0:
        return 2.0 * amp * u
    if act_id == 1:
        return amp * math.cos(u)
    if u <= 0.0:
        return 0.0
    return amp * (s + 1) * u ** s


@njit(cache=True, parallel=True)
def forward_nb(W, b, phase, amp, act_id, s, Z):
    n, d = Z.shape
    n_neurons = W.shape[0]
    scale = 1.0 / math.sqrt(n_neurons)
    out = np.zeros(n)
    for i in prange(n):
        acc = 0.0
        for j in range(n_neurons):
            u = phase[j]
            for k in range(d):
                u += W[j, k] * Z[i, k]
            acc += b[j] * _act_nb(u, act_id, s, amp)
        out[i] = acc * scale
    return out


@njit(cache=True, parallel=True)
def tangent_nb(W, b, phase, amp, act_id, s, Z):
    n, d = Z.shape
    n_neurons = W.shape[0]
    scale = 1.0 / math.sqrt(n_neurons)
    out = np.empty((n, n_neurons * d))
    for i in prange(n):
        for j in range(n_neurons):
            u = phase[j]
            for k in range(d):
                u += W[j, k] * Z[i, k]
            c = b[j] * _dact_nb(u, act_id, s, amp) * scale
            for k in range(d):
                out[i, j * d + k] = c * Z[i, k]
    return out


@njit(cache=True, parallel=True)
def loss_grad_nb(W, W0, b, phase, amp, act_id, s, Z, y, lam):
    n, d = Z.shape
    n_neurons = W.shape[0]
    scale = 1.0 / math.sqrt(n_neurons)
    pre = np.empty((n_neurons, n))
    resid = np.empty(n)
    for i in prange(n):
        acc = 0.0
        for j in range(n_neurons):
            u = phase[j]
            for k in range(d):
                u += W[j, k] * Z[i, k]
            pre[j, i] = u
            acc += b[j] * _act_nb(u, act_id, s, amp)
        resid[i] = acc * scale - y[i]
    grad = np.empty_like(W)
    penalty = np.empty(n_neurons)
    for j in prange(n_neurons):
        pen = 0.0
        for k in range(d):
            diff = W[j, k] - W0[j, k]
            pen += diff * diff
            grad[j, k] = 2.0 * lam * diff
        for i in range(n):
            c = 2.0 * resid[i] * b[j] * _dact_nb(pre[j, i], act_id, s, amp) * scale
            for k in range(d):
                grad[j, k] += c * Z[i, k]
        penalty[j] = pen
    loss = 0.0
    for i in range(n):
        loss += resid[i] * resid[i]
    return loss + lam * penalty.sum(), grad


@njit(cache=True, parallel=True)
def tangent_gram_nb(W, b, phase, amp, act_id, s, Z1, Z2):
    n1, d = Z1.shape
    n2 = Z2.shape[0]
    n_neurons = W.shape[0]
    A1 = np.empty((n1, n_neurons))
    A2 = np.empty((n2, n_neurons))
    for i in prange(n1):
        for j in range(n_neurons):
            u = phase[j]
            for k in range(d):
                u += W[j, k] * Z1[i, k]
            A1[i, j] = b[j] * _dact_nb(u, act_id, s, amp)
    for i in prange(n2):
        for j in range(n_neurons):
            u = phase[j]
            for k in range(d):
                u += W[j, k] * Z2[i, k]
            A2[i, j] = b[j] * _dact_nb(u, act_id, s, amp)
    return np.dot(A1, A2.T) / n_neurons * np.dot(Z1, Z2.T)


# --- dispatch ---------------------------------------------------------------

def _pick(nb_fn, np_fn):
    def call(*args):
        if _accel.USE_NUMBA:
            return nb_fn(*args)
        return np_fn(*args)

    call.__name__ = np_fn.__name__[:-3]
    return call


forward = _pick(forward_nb, forward_np)
tangent = _pick(tangent_nb, tangent_np)
loss_grad = _pick(loss_grad_nb, loss_grad_np)
tangent_gram = _pick(tangent_gram_nb, tangent_gram_np)
