# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled trial kernel: one C loop over patients.

Mirrors funcurn._kernel_py.run_trial operation-for-operation (same libm and
Cephes calls, same accumulation order) so both backends produce
bitwise-identical trajectories.  Dimensions are capped at 8 treatments and
32 strata; the engine falls back to the object path beyond that.
"""

from libc.math cimport log, pow, sqrt

from scipy.special.cython_special cimport ndtr, ndtri

import numpy as np

COMPILED = True

DEF MAXD = 8
DEF MAXK = 32


def run_trial(
    Py_ssize_t n,
    double[:, ::1] uniforms,
    int d,
    int K,
    int model_kind,
    int rule_kind,
    int known_model,
    int sigma_known,
    double[::1] cum_mu,
    double[:, ::1] par,
    double[::1] sd,
    double[::1] ref_mean,
    double ref_sd,
    double m_min,
    double eps_p,
    int n_burn,
    double prior_p,
    double prior_mean,
    double prior_sd,
    double prior_exponent,
    double[:, ::1] Y,
    long long[:, ::1] Nstrat,
    long long[::1] Ntot,
    long long[:, ::1] count,
    double[:, ::1] sum_y,
    double[:, ::1] sum_y2,
    double[:, ::1] sum_neglog,
    int record,
    long long[::1] rec_stratum,
    long long[::1] rec_arm,
    double[::1] rec_response,
    double[:, :, ::1] rec_Z,
):
    cdef double ghat[MAXD][MAXK]
    cdef double sdhat[MAXD]
    cdef double ahat[MAXK]
    cdef double cum_t[MAXD + 1]
    cdef double cum_s[MAXD + 1]
    cdef double X[MAXD]
    cdef Py_ssize_t i
    cdef int s, k, t, j, c, dof
    cdef long long cc, ctot
    cdef double u0, u1, u2, y, colmass, target, acc, raw, eps, stot
    cdef double m1, m2, s1, s2, sa, sb, rho, lo, hi, a, b, w, q, xj, share
    cdef double pjt, pks, mass_k, mj, sse, tot

    if d > MAXD or K > MAXK:
        raise ValueError("kernel supports at most 8 treatments and 32 strata")

    with nogil:
        for i in range(n):
            u0 = uniforms[i, 0]
            u1 = uniforms[i, 1]
            u2 = uniforms[i, 2]
            if u2 <= 0.0:
                u2 = 1e-300

            s = K - 1
            for t in range(K):
                if u0 <= cum_mu[t]:
                    s = t
                    break

            colmass = <double> (d + i)
            target = u1 * colmass
            k = d - 1
            acc = 0.0
            for c in range(d):
                acc += Y[c, s]
                if target <= acc:
                    k = c
                    break

            if model_kind == 0:
                y = par[k, s] + sd[k] * ndtri(u2)
            elif model_kind == 1:
                y = 1.0 if u2 >= 1.0 - par[k, s] else 0.0
            else:
                y = pow(u2, par[k, s])

            if known_model:
                pass
            elif model_kind == 2:
                for t in range(K):
                    ctot = 0
                    stot = 0.0
                    for j in range(d):
                        ctot += count[j, t]
                        stot += sum_neglog[j, t]
                    ahat[t] = stot / ctot if ctot >= n_burn else prior_exponent
            else:
                for j in range(d):
                    for t in range(K):
                        cc = count[j, t]
                        if cc < n_burn:
                            ghat[j][t] = prior_p if model_kind == 1 else prior_mean
                        elif model_kind == 1:
                            raw = sum_y[j, t] / cc
                            eps = eps_p if eps_p > 0.0 else 1.0 / (cc + 2.0)
                            if raw < eps:
                                raw = eps
                            if raw > 1.0 - eps:
                                raw = 1.0 - eps
                            ghat[j][t] = raw
                        else:
                            ghat[j][t] = sum_y[j, t] / cc
                if model_kind == 0:
                    for j in range(d):
                        if sigma_known:
                            sdhat[j] = sd[j]
                        else:
                            sse = 0.0
                            dof = 0
                            for t in range(K):
                                cc = count[j, t]
                                if cc >= 2:
                                    mj = sum_y[j, t] / cc
                                    sse += sum_y2[j, t] - cc * mj * mj
                                    dof += <int> (cc - 1)
                            sdhat[j] = sqrt(sse / dof) if dof >= 1 and sse > 0.0 else prior_sd

            cum_s[0] = 0.0
            for c in range(d):
                cum_s[c + 1] = cum_s[c] + Y[c, s]
            mass_k = Y[k, s]

            for t in range(K):
                if t == s:
                    for j in range(d):
                        X[j] = 0.0
                    X[k] = 1.0
                else:
                    cum_t[0] = 0.0
                    for c in range(d):
                        cum_t[c + 1] = cum_t[c] + Y[c, t]
                    lo = cum_s[k]
                    hi = cum_s[k + 1]
                    for j in range(d):
                        a = cum_t[j] if cum_t[j] > lo else lo
                        b = cum_t[j + 1] if cum_t[j + 1] < hi else hi
                        w = b - a
                        X[j] = w / mass_k if w > 0.0 else 0.0

                if rule_kind == 2:
                    if known_model:
                        m1 = par[0, t]
                        m2 = par[1, t]
                        s1 = sd[0]
                        s2 = sd[1]
                    else:
                        m1 = ghat[0][t]
                        m2 = ghat[1][t]
                        s1 = sdhat[0]
                        s2 = sdhat[1]
                    if m1 < m_min:
                        m1 = m_min
                    if m2 < m_min:
                        m2 = m_min
                    sa = s1 * sqrt(m2)
                    sb = s2 * sqrt(m1)
                    rho = sa / (sa + sb)
                    for j in range(d):
                        Y[0, t] += X[j] * rho
                        Y[1, t] += X[j] * (1.0 - rho)
                else:
                    for j in range(d):
                        xj = X[j]
                        if xj == 0.0:
                            continue
                        if model_kind == 1:
                            if known_model:
                                pjt = par[j, t]
                                pks = par[k, s]
                            else:
                                pjt = ghat[j][t]
                                pks = ghat[k][s]
                            if y == 1.0:
                                w = (pjt if pjt < pks else pks) / pks
                            else:
                                w = (pjt - pks) / (1.0 - pks) if pjt > pks else 0.0
                        elif model_kind == 0:
                            if t == s and j == k:
                                q = y
                            elif known_model:
                                q = par[j, t] + (sd[j] / sd[k]) * (y - par[k, s])
                            else:
                                q = ghat[j][t] + (sdhat[j] / sdhat[k]) * (y - ghat[k][s])
                            w = q
                        else:
                            if t == s and j == k:
                                q = y
                            elif known_model:
                                q = pow(y, par[j, t] / par[k, s])
                            else:
                                q = pow(y, ahat[t] / ahat[s])
                            w = q
                        if rule_kind == 3:
                            w = ndtr((w - ref_mean[t]) / ref_sd)
                            Y[j, t] += xj * w
                            Y[1 - j, t] += xj * (1.0 - w)
                        else:
                            share = xj * (1.0 - w) / (d - 1)
                            for c in range(d):
                                Y[c, t] += xj * w if c == j else share

            count[k, s] += 1
            sum_y[k, s] += y
            sum_y2[k, s] += y * y
            if y > 0.0:
                sum_neglog[k, s] += -log(y)
            Nstrat[k, s] += 1
            Ntot[k] += 1

            if record:
                rec_stratum[i] = s
                rec_arm[i] = k
                rec_response[i] = y
                tot = <double> (d + i + 1)
                for c in range(d):
                    for t in range(K):
                        rec_Z[i, c, t] = Y[c, t] / tot
