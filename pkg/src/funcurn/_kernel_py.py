"""Pure-Python twin of the compiled trial kernel.

Same packed-array contract and the same scalar operation order as
funcurn._kernel, so the two backends produce bitwise-identical trajectories;
this one is the import-time fallback when the extension is unavailable.
Model kinds: 0 gaussian, 1 bernoulli, 2 unit-power.  Rule kinds: 0
play-the-winner, 1 identity-on-unit, 2 square-root weights, 3 gaussian test.
"""

from __future__ import annotations

import math

from scipy.special import ndtr, ndtri

COMPILED = False


def run_trial(
    n,
    uniforms,
    d,
    K,
    model_kind,
    rule_kind,
    known_model,
    sigma_known,
    cum_mu,
    par,
    sd,
    ref_mean,
    ref_sd,
    m_min,
    eps_p,
    n_burn,
    prior_p,
    prior_mean,
    prior_sd,
    prior_exponent,
    Y,
    Nstrat,
    Ntot,
    count,
    sum_y,
    sum_y2,
    sum_neglog,
    record,
    rec_stratum,
    rec_arm,
    rec_response,
    rec_Z,
):
    ghat = [[0.0] * K for _ in range(d)]
    sdhat = [0.0] * d
    ahat = [0.0] * K
    cum_t = [0.0] * (d + 1)
    cum_s = [0.0] * (d + 1)
    X = [0.0] * d

    for i in range(n):
        u0 = uniforms[i, 0]
        u1 = uniforms[i, 1]
        u2 = uniforms[i, 2]
        if u2 <= 0.0:
            u2 = 1e-300

        # stratum: left-open right-closed intervals of the covariate weights
        s = K - 1
        for t in range(K):
            if u0 <= cum_mu[t]:
                s = t
                break

        # colour from the stratum-s urn; compare in ball-mass units
        colmass = float(d + i)
        target = u1 * colmass
        k = d - 1
        acc = 0.0
        for c in range(d):
            acc += Y[c, s]
            if target <= acc:
                k = c
                break

        # response from the true family through the shared uniform level
        if model_kind == 0:
            y = par[k, s] + sd[k] * ndtri(u2)
        elif model_kind == 1:
            y = 1.0 if u2 >= 1.0 - par[k, s] else 0.0
        else:
            y = math.pow(u2, par[k, s])

        # plug-in parameters (estimated mode): patients 1..i only
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
                    c = count[j, t]
                    if c < n_burn:
                        ghat[j][t] = prior_p if model_kind == 1 else prior_mean
                    elif model_kind == 1:
                        raw = sum_y[j, t] / c
                        eps = eps_p if eps_p > 0.0 else 1.0 / (c + 2.0)
                        if raw < eps:
                            raw = eps
                        if raw > 1.0 - eps:
                            raw = 1.0 - eps
                        ghat[j][t] = raw
                    else:
                        ghat[j][t] = sum_y[j, t] / c
            if model_kind == 0:
                for j in range(d):
                    if sigma_known:
                        sdhat[j] = sd[j]
                    else:
                        sse = 0.0
                        dof = 0
                        for t in range(K):
                            c = count[j, t]
                            if c >= 2:
                                mj = sum_y[j, t] / c
                                sse += sum_y2[j, t] - c * mj * mj
                                dof += c - 1
                        sdhat[j] = math.sqrt(sse / dof) if dof >= 1 and sse > 0.0 else prior_sd

        # cumulative masses of the observed stratum
        cum_s[0] = 0.0
        for c in range(d):
            cum_s[c + 1] = cum_s[c] + Y[c, s]
        mass_k = Y[k, s]

        for t in range(K):
            # weighting vector X(t)
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

            # replacement column per arm, folded straight into the urn
            if rule_kind == 2:
                # square-root weights: constant columns
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
                sa = s1 * math.sqrt(m2)
                sb = s2 * math.sqrt(m1)
                rho = sa / (sa + sb)
                for j in range(d):
                    Y[0, t] += X[j] * rho
                    Y[1, t] += X[j] * (1.0 - rho)
            else:
                for j in range(d):
                    xj = X[j]
                    if xj == 0.0:
                        continue
                    # effective response for arm j in stratum t
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
                            q = math.pow(y, par[j, t] / par[k, s])
                        else:
                            q = math.pow(y, ahat[t] / ahat[s])
                        w = q
                    if rule_kind == 3:
                        w = ndtr((w - ref_mean[t]) / ref_sd)
                        Y[j, t] += xj * w
                        Y[1 - j, t] += xj * (1.0 - w)
                    else:
                        # play-the-winner / identity pattern
                        share = xj * (1.0 - w) / (d - 1)
                        for c in range(d):
                            Y[c, t] += xj * w if c == j else share

        # fold the response into the running statistics
        count[k, s] += 1
        sum_y[k, s] += y
        sum_y2[k, s] += y * y
        if y > 0.0:
            sum_neglog[k, s] += -math.log(y)
        Nstrat[k, s] += 1
        Ntot[k] += 1

        if record:
            rec_stratum[i] = s
            rec_arm[i] = k
            rec_response[i] = y
            tot = float(d + i + 1)
            for c in range(d):
                for t in range(K):
                    rec_Z[i, c, t] = Y[c, t] / tot
