#include "gradalign/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gradalign/criteria.hpp"
#include "gradalign/ops.hpp"
#include "gradalign/rng.hpp"

namespace gradalign {

namespace {

double cossim_raw(const Tensor& a, const Tensor& b) {
    double ab = 0.0, aa = 0.0, bb = 0.0;
    for (std::int64_t i = 0; i < a.size(); ++i) {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    double na = std::sqrt(aa), nb = std::sqrt(bb);
    if (na == 0.0 && nb == 0.0) return 1.0;  // identical degenerate maps
    if (na == 0.0 || nb == 0.0) return 0.0;
    return ab / (na * nb);
}

double pcc_raw(const Tensor& a, const Tensor& b) {
    const std::int64_t n = a.size();
    double ma = 0.0, mb = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= n;
    mb /= n;
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    if (saa == 0.0 || sbb == 0.0)
        throw Error("pcc: correlation is undefined for a constant map");
    return sab / std::sqrt(saa * sbb);
}

Tensor to_spatial(const Tensor& s) {
    if (s.shape().size() == 3) {
        const int C = s.shape()[0], H = s.shape()[1], W = s.shape()[2];
        Tensor out(Shape{H, W});
        for (int c = 0; c < C; ++c)
            for (std::int64_t i = 0; i < static_cast<std::int64_t>(H) * W; ++i)
                out[i] += s[c * static_cast<std::int64_t>(H) * W + i];
        return out;
    }
    if (s.shape().size() == 2) return s.clone();
    Tensor out(Shape{1, static_cast<int>(s.size())});
    for (std::int64_t i = 0; i < s.size(); ++i) out[i] = s[i];
    return out;
}

Tensor minmax01(const Tensor& t) {
    double mn = t[0], mx = t[0];
    for (std::int64_t i = 1; i < t.size(); ++i) {
        mn = std::min(mn, t[i]);
        mx = std::max(mx, t[i]);
    }
    Tensor out(t.shape());
    if (mx > mn)
        for (std::int64_t i = 0; i < t.size(); ++i) out[i] = (t[i] - mn) / (mx - mn);
    return out;
}

// two-term structural similarity over a sliding uniform window;
// maps are min-max normalized first so the dynamic range is 1
double ssim_raw(const Tensor& a_full, const Tensor& b_full) {
    constexpr double kC1 = 0.01 * 0.01;  // (0.01 * R)^2 with R = 1
    constexpr double kC2 = 0.03 * 0.03;
    constexpr int kWin = 7;
    Tensor a = minmax01(to_spatial(a_full));
    Tensor b = minmax01(to_spatial(b_full));
    const int H = a.shape()[0], W = a.shape()[1];
    const int wh = std::min(kWin, H), ww = std::min(kWin, W);
    double total = 0.0;
    int windows = 0;
    for (int i = 0; i + wh <= H; ++i) {
        for (int j = 0; j + ww <= W; ++j) {
            double ma = 0.0, mb = 0.0;
            for (int u = 0; u < wh; ++u)
                for (int v = 0; v < ww; ++v) {
                    ma += a[static_cast<std::int64_t>(i + u) * W + j + v];
                    mb += b[static_cast<std::int64_t>(i + u) * W + j + v];
                }
            const double n = static_cast<double>(wh) * ww;
            ma /= n;
            mb /= n;
            double va = 0.0, vb = 0.0, cov = 0.0;
            for (int u = 0; u < wh; ++u)
                for (int v = 0; v < ww; ++v) {
                    double da = a[static_cast<std::int64_t>(i + u) * W + j + v] - ma;
                    double db = b[static_cast<std::int64_t>(i + u) * W + j + v] - mb;
                    va += da * da;
                    vb += db * db;
                    cov += da * db;
                }
            va /= n;
            vb /= n;
            cov /= n;
            total += ((2.0 * ma * mb + kC1) * (2.0 * cov + kC2)) /
                     ((ma * ma + mb * mb + kC1) * (va + vb + kC2));
            ++windows;
        }
    }
    return total / windows;
}

}  // namespace

double similarity(const Tensor& a, const Tensor& b, Similarity kind) {
    if (a.shape() != b.shape())
        throw Error("similarity: shape mismatch " + shape_str(a.shape()) + " vs " +
                    shape_str(b.shape()));
    switch (kind) {
        case Similarity::cossim: return cossim_raw(a, b);
        case Similarity::pcc: return pcc_raw(a, b);
        case Similarity::ssim: return ssim_raw(a, b);
    }
    throw Error("similarity: unknown kind");
}

double similarity(const AttributionMap& a, const AttributionMap& b, Similarity kind) {
    return similarity(a.scores, b.scores, kind);
}

double random_perturbation_similarity(const Network& net, const Dataset& ds, AttrMethod method,
                                      Similarity measure, double eps, int n_samples,
                                      std::uint64_t seed, const AttrOptions& attr_opts) {
    if (ds.inputs.empty()) throw Error("rps: dataset is empty");
    if (eps < 0.0) throw Error("rps: epsilon must be nonnegative");
    if (n_samples < 1) throw Error("rps: need at least one draw");
    AttrOptions opts = attr_opts;
    if (opts.lo.empty() || opts.hi.empty()) {
        opts.lo = ds.lo;
        opts.hi = ds.hi;
    }
    Rng rng(seed);
    double total = 0.0;
    std::int64_t count = 0;
    for (std::size_t s = 0; s < ds.inputs.size(); ++s) {
        const Tensor& x = ds.inputs[s];
        const int y = ds.labels[s];
        AttributionMap base = compute_attribution(net, x, y, method, opts);
        for (int k = 0; k < n_samples; ++k) {
            Tensor xp(x.shape());
            for (std::int64_t i = 0; i < x.size(); ++i)
                xp[i] = x[i] + rng.uniform(-eps, eps);
            AttributionMap pert = compute_attribution(net, xp, y, method, opts);
            total += similarity(pert, base, measure);
            ++count;
        }
    }
    return total / static_cast<double>(count);
}

Tensor insertion_mask(const Tensor& map, double gamma) {
    if (gamma < 0.0 || gamma > 1.0) throw Error("insertion_mask: gamma must be in [0,1]");
    const std::int64_t d = map.size();
    const std::int64_t k = std::llround(gamma * static_cast<double>(d));
    std::vector<std::int64_t> order(static_cast<std::size_t>(d));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::int64_t i, std::int64_t j) {
        if (map[i] != map[j]) return map[i] > map[j];
        return i < j;
    });
    Tensor mask(map.shape());
    for (std::int64_t i = 0; i < k; ++i) mask[order[static_cast<std::size_t>(i)]] = 1.0;
    return mask;
}

std::vector<double> default_gamma_grid() {
    std::vector<double> g;
    for (int i = 0; i <= 20; ++i) g.push_back(i * 0.05);
    return g;
}

namespace {

InsertionCurve curve_from_orders(const Network& net, const Dataset& ds,
                                 const std::vector<Tensor>& order_maps,
                                 const std::vector<Tensor>& pixel_sources,
                                 const std::vector<double>& gamma_grid) {
    InsertionCurve curve;
    curve.gammas = gamma_grid;
    curve.probabilities.assign(gamma_grid.size(), 0.0);
    NoRecord plain;
    for (std::size_t s = 0; s < ds.inputs.size(); ++s) {
        const Tensor& x = pixel_sources[s];
        const int y = ds.labels[s];
        for (std::size_t gi = 0; gi < gamma_grid.size(); ++gi) {
            Tensor m = insertion_mask(order_maps[s], gamma_grid[gi]);
            Tensor xg(x.shape());  // baseline is the zero-valued image
            for (std::int64_t i = 0; i < x.size(); ++i) xg[i] = x[i] * m[i];
            Tensor p = forward_probs(net, xg);
            curve.probabilities[gi] += p[y];
        }
    }
    for (auto& v : curve.probabilities) v /= static_cast<double>(ds.inputs.size());
    curve.mean_over_gamma =
        std::accumulate(curve.probabilities.begin(), curve.probabilities.end(), 0.0) /
        static_cast<double>(curve.probabilities.size());
    return curve;
}

}  // namespace

InsertionCurve insertion_curve(const Network& net, const Dataset& ds, AttrMethod method,
                               const std::vector<double>& gamma_grid,
                               const AttrOptions& attr_opts) {
    if (ds.inputs.empty()) throw Error("insertion: dataset is empty");
    AttrOptions opts = attr_opts;
    if (opts.lo.empty() || opts.hi.empty()) {
        opts.lo = ds.lo;
        opts.hi = ds.hi;
    }
    std::vector<Tensor> orders, sources;
    for (std::size_t s = 0; s < ds.inputs.size(); ++s) {
        orders.push_back(
            compute_attribution(net, ds.inputs[s], ds.labels[s], method, opts).scores);
        sources.push_back(ds.inputs[s]);
    }
    return curve_from_orders(net, ds, orders, sources, gamma_grid);
}

InsertionCurve adv_insertion_curve(const Network& net, const Dataset& ds, AttrMethod method,
                                   const AttackConfig& attack_cfg,
                                   const std::vector<double>& gamma_grid,
                                   const AttrOptions& attr_opts, bool reconstruct_adv_pixels) {
    if (ds.inputs.empty()) throw Error("adv-insertion: dataset is empty");
    AttrOptions opts = attr_opts;
    if (opts.lo.empty() || opts.hi.empty()) {
        opts.lo = ds.lo;
        opts.hi = ds.hi;
    }
    std::vector<Tensor> orders, sources;
    for (std::size_t s = 0; s < ds.inputs.size(); ++s) {
        const Tensor& x = ds.inputs[s];
        AttackConfig cfg = attack_cfg;
        if (cfg.mode == AttackMode::targeted && !cfg.target_map)
            cfg.target_map = make_frame_target(x.shape(), std::max(1, x.shape().back() / 8)).scores;
        AttackResult attacked = run_aam(net, x, cfg, ds.lo, ds.hi);
        // ordering from the manipulated attribution, at the true label
        AttributionMap adv_map =
            compute_attribution(net, attacked.x_adv, ds.labels[s], method, opts);
        orders.push_back(adv_map.scores);
        sources.push_back(reconstruct_adv_pixels ? attacked.x_adv : x);
    }
    return curve_from_orders(net, ds, orders, sources, gamma_grid);
}

const char* similarity_name(Similarity s) {
    switch (s) {
        case Similarity::cossim: return "cossim";
        case Similarity::pcc: return "pcc";
        case Similarity::ssim: return "ssim";
    }
    return "?";
}

Similarity similarity_from_name(const std::string& s) {
    if (s == "cossim") return Similarity::cossim;
    if (s == "pcc") return Similarity::pcc;
    if (s == "ssim") return Similarity::ssim;
    throw Error("unknown similarity measure '" + s + "'");
}

}  // namespace gradalign
