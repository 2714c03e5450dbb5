#pragma once

// Shared oracles for the numeric tests. These are written independently of
// the production kernels: they materialize an explicitly zero-padded input
// and then run plain direct loops, so a shared indexing bug is unlikely.

#include <cmath>
#include <functional>
#include <vector>

#include "svqa/tensor.hpp"

namespace svqa::testing {

// Direct 2D cross-correlation over an explicitly padded copy of the input.
inline Tensor oracle_conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride,
                            int pad) {
    const int N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
    const int M = w.shape[0], kh = w.shape[2], kw = w.shape[3];
    const int Hp = H + 2 * pad, Wp = W + 2 * pad;
    std::vector<double> padded(static_cast<size_t>(N) * C * Hp * Wp, 0.0);
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
            for (int h = 0; h < H; ++h)
                for (int v = 0; v < W; ++v)
                    padded[((static_cast<size_t>(n) * C + c) * Hp + h + pad) * Wp + v + pad] =
                        x.data[((static_cast<size_t>(n) * C + c) * H + h) * W + v];
    const int Ho = (Hp - kh) / stride + 1;
    const int Wo = (Wp - kw) / stride + 1;
    Tensor y({N, M, Ho, Wo});
    for (int n = 0; n < N; ++n)
        for (int m = 0; m < M; ++m)
            for (int oh = 0; oh < Ho; ++oh)
                for (int ow = 0; ow < Wo; ++ow) {
                    double acc = b.data[m];
                    for (int c = 0; c < C; ++c)
                        for (int u = 0; u < kh; ++u)
                            for (int v = 0; v < kw; ++v)
                                acc += padded[((static_cast<size_t>(n) * C + c) * Hp +
                                               oh * stride + u) *
                                                  Wp +
                                              ow * stride + v] *
                                       w.data[((static_cast<size_t>(m) * C + c) * kh + u) * kw +
                                              v];
                    y.data[((static_cast<size_t>(n) * M + m) * Ho + oh) * Wo + ow] =
                        static_cast<float>(acc);
                }
    return y;
}

// Direct frame-axis cross-correlation, same padded-copy strategy.
inline Tensor oracle_conv1d_temporal(const Tensor& x, const Tensor& w, const Tensor& b,
                                     int stride, int pad) {
    const int N = x.shape[0], C = x.shape[1], F = x.shape[2], L = x.shape[3];
    const int M = w.shape[0], t = w.shape[2];
    const int Fp = F + 2 * pad;
    std::vector<double> padded(static_cast<size_t>(N) * C * Fp * L, 0.0);
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
            for (int f = 0; f < F; ++f)
                for (int l = 0; l < L; ++l)
                    padded[((static_cast<size_t>(n) * C + c) * Fp + f + pad) * L + l] =
                        x.data[((static_cast<size_t>(n) * C + c) * F + f) * L + l];
    const int Fo = (Fp - t) / stride + 1;
    Tensor y({N, M, Fo, L});
    for (int n = 0; n < N; ++n)
        for (int m = 0; m < M; ++m)
            for (int of = 0; of < Fo; ++of)
                for (int l = 0; l < L; ++l) {
                    double acc = b.data[m];
                    for (int c = 0; c < C; ++c)
                        for (int u = 0; u < t; ++u)
                            acc += padded[((static_cast<size_t>(n) * C + c) * Fp + of * stride +
                                           u) *
                                              L +
                                          l] *
                                   w.data[(static_cast<size_t>(m) * C + c) * t + u];
                    y.data[((static_cast<size_t>(n) * M + m) * Fo + of) * L + l] =
                        static_cast<float>(acc);
                }
    return y;
}

inline float max_abs_diff(const Tensor& a, const Tensor& b) {
    float worst = 0.0f;
    for (size_t i = 0; i < a.data.size(); ++i)
        worst = std::max(worst, std::abs(a.data[i] - b.data[i]));
    return worst;
}

// Central finite-difference check of d(loss)/d(params). `loss_of` must build
// a fresh graph from the current parameter values and return the scalar loss.
// Samples coordinates across all parameters and returns the worst relative
// error observed.
//
// Two measurement realities are handled without relaxing the comparison
// tolerance itself:
//  * ReLU-style kinks make the central difference meaningless when the
//    +-step interval straddles one. Any kink perturbs the step-h and
//    step-h/2 estimates by different amounts, so a coordinate where the two
//    disagree is locally non-smooth and gets redrawn.
//  * The loss is a float32; its rounding (~6e-8 relative) divided by the
//    step is an irreducible noise floor on the difference quotient. A
//    measured |fd - an| below that floor is indistinguishable from exact.
struct FdReport {
    double worst_rel = 0.0;
    std::string worst_at;
    int checked = 0;
    int skipped_kinks = 0;
};

inline FdReport fd_check(const std::function<double()>& loss_of,
                         const std::function<void()>& backward_pass,
                         std::vector<Parameter*> params, int max_coords, Rng& rng,
                         double eps = 1e-3) {
    for (Parameter* p : params) p->grad.fill(0.0f);
    backward_pass();

    int64_t total = 0;
    for (Parameter* p : params) total += p->value.numel();
    FdReport rep;
    const int n_checks = static_cast<int>(std::min<int64_t>(max_coords, total));
    int attempts_left = n_checks * 6;
    while (rep.checked < n_checks && attempts_left-- > 0) {
        int64_t flat = static_cast<int64_t>(rng.next_below(static_cast<uint64_t>(total)));
        Parameter* p = nullptr;
        for (Parameter* cand : params) {
            if (flat < cand->value.numel()) {
                p = cand;
                break;
            }
            flat -= cand->value.numel();
        }
        const size_t i = static_cast<size_t>(flat);
        const float keep = p->value.data[i];
        auto probe = [&](double delta) {
            p->value.data[i] = static_cast<float>(keep + delta);
            double v = loss_of();
            p->value.data[i] = keep;
            return v;
        };
        const double up = probe(eps);
        const double down = probe(-eps);
        const double up_h = probe(eps / 2);
        const double down_h = probe(-eps / 2);

        const double fd = (up - down) / (2.0 * eps);
        const double fd_half = (up_h - down_h) / eps;
        const double loss_scale = std::max({std::abs(up), std::abs(down), 0.5});
        // ~8 roundings of a float32 loss, over the half-step difference.
        const double noise = 8.0 * 6e-8 * loss_scale / eps;

        // Smooth functions give matching estimates up to O(eps^2) + noise;
        // a kink inside the interval shifts the two by different amounts.
        const double agree_scale = std::max({std::abs(fd), std::abs(fd_half), 1e-3});
        if (std::abs(fd - fd_half) > std::max(4.0 * noise, 0.02 * agree_scale)) {
            ++rep.skipped_kinks;
            continue;
        }

        const double an = p->grad.data[i];
        const double rel =
            std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), noise / 1e-2, 1e-4});
        ++rep.checked;
        if (rel > rep.worst_rel) {
            rep.worst_rel = rel;
            rep.worst_at = p->name + "[" + std::to_string(i) + "]";
        }
    }
    return rep;
}

}  // namespace svqa::testing
