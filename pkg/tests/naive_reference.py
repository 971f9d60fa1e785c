"""Independent loop-based reimplementation of the full head forward pass.

Deliberately written with explicit Python loops and math-module scalars so it
shares nothing with the vectorized implementation it is used to check.
"""

import math


def naive_head_forward(x, decomp, gate_w, message_w, classifier, mix_ratio):
    """Single-sample forward pass; returns a dict of every stage's values.

    x: length-P list/array; decomp: (M, P, D); gate_w/message_w: (M, D, D);
    classifier: (D, K). All indexing is done with plain loops.
    """
    M = len(decomp)
    P = len(x)
    D = len(decomp[0][0])
    K = len(classifier[0])

    latents = [[0.0] * D for _ in range(M)]
    for j in range(M):
        for d in range(D):
            acc = 0.0
            for p in range(P):
                acc += decomp[j][p][d] * x[p]
            latents[j][d] = acc if acc > 0.0 else 0.0

    gates = [[0.0] * D for _ in range(M)]
    for j in range(M):
        for e in range(D):
            acc = 0.0
            for d in range(D):
                acc += gate_w[j][d][e] * latents[j][d]
            gates[j][e] = 1.0 / (1.0 + math.exp(-acc))

    weights = [sum(gates[j]) for j in range(M)]

    scaled = [[weights[j] * latents[j][d] for d in range(D)] for j in range(M)]

    messages = [[0.0] * D for _ in range(M)]
    for j in range(M):
        for e in range(D):
            acc = 0.0
            for d in range(D):
                acc += message_w[j][d][e] * scaled[j][d]
            messages[j][e] = acc if acc > 0.0 else 0.0

    omega = [[0.0] * M for _ in range(M)]
    for j in range(M):
        for m in range(M):
            if j == m:
                continue
            sq = 0.0
            for d in range(D):
                diff = messages[j][d] - messages[m][d]
                sq += diff * diff
            # coincident messages carry exactly zero weight
            omega[j][m] = math.tanh(math.sqrt(sq + 1e-12)) if sq > 0.0 else 0.0

    aggregated = [[0.0] * D for _ in range(M)]
    for j in range(M):
        for d in range(D):
            acc = 0.0
            for m in range(M):
                acc += omega[j][m] * messages[m][d]
            aggregated[j][d] = acc

    mixed = [
        [mix_ratio * scaled[j][d] + (1.0 - mix_ratio) * aggregated[j][d] for d in range(D)]
        for j in range(M)
    ]

    feature = [0.0] * D
    for d in range(D):
        for j in range(M):
            feature[d] += mixed[j][d]

    logits = [0.0] * K
    for k in range(K):
        for d in range(D):
            logits[k] += classifier[d][k] * feature[d]

    return {
        "latents": latents,
        "gates": gates,
        "weights": weights,
        "scaled": scaled,
        "messages": messages,
        "omega": omega,
        "aggregated": aggregated,
        "mixed": mixed,
        "feature": feature,
        "logits": logits,
    }


def naive_losses(forward_results, labels, latent_centers, class_centers, lambdas):
    """Loop evaluation of the four losses over per-sample forward results."""
    n = len(forward_results)
    m = len(latent_centers)

    cls = 0.0
    for res, label in zip(forward_results, labels):
        logits = res["logits"]
        top = max(logits)
        norm = sum(math.exp(z - top) for z in logits)
        cls += math.log(norm) - (logits[label] - top)
    cls /= n

    compact = 0.0
    for res in forward_results:
        for j in range(m):
            for d in range(len(latent_centers[0])):
                diff = res["latents"][j][d] - latent_centers[j][d]
                compact += diff * diff
    compact /= n

    mean_w = [0.0] * m
    for res in forward_results:
        for j in range(m):
            mean_w[j] += res["weights"][j] / n
    balance = sum(abs(mean_w[j] - 1.0 / m) for j in range(m))

    distribution = 0.0
    for res, label in zip(forward_results, labels):
        for j in range(m):
            diff = res["weights"][j] - class_centers[label][j]
            distribution += diff * diff
    distribution /= n

    l_compact, l_balance, l_distribution = lambdas
    total = cls + l_compact * compact + l_balance * balance + l_distribution * distribution
    return {
        "cls": cls,
        "compact": compact,
        "balance": balance,
        "distribution": distribution,
        "total": total,
    }
