#include "softmorph/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "softmorph/errors.hpp"
#include "softmorph/rng.hpp"

namespace softmorph {

namespace {

// Everything the backward passes need from one forward evaluation.
struct ForwardPass {
    Grid mask;        // y = sigmoid(s)
    Grid mask_slope;  // y * (1 - y)
    SobelComponents sobel;
    Grid edge;  // E
    double n = 0.0;
    double mask_sum = 0.0;   // S
    double perimeter = 0.0;  // P
    double area = 0.0;
    double rough_raw = 0.0;
    double compact_pre = 0.0;  // before clipping
    double compactness = 0.0;
    double weighted_gray = 0.0;  // M = sum(y * g)
    double mean_gray = 0.0;      // mu
    double tex_raw = 0.0;
    double rough_norm = 0.0;
    double tex_norm = 0.0;
    Vec4 f{};
    Vec4 w{};
    double phi = 0.0;
    double p_hat = 0.0;
    double seg = 0.0;
    double cls = 0.0;
    double cons = 0.0;
    double ntp = 0.0;
    double l2 = 0.0;
};

ForwardPass run_forward(const SampleInputs& in, const GraphContext& ctx) {
    const Grid& s = in.logits.grid();
    ForwardPass fp;
    fp.n = static_cast<double>(s.size());
    fp.mask = Grid(s.height(), s.width());
    fp.mask_slope = Grid(s.height(), s.width());
    for (std::size_t i = 0; i < s.size(); ++i) {
        const double y = sigmoid(s[i]);
        fp.mask[i] = y;
        fp.mask_slope[i] = y * (1.0 - y);
        fp.mask_sum += y;
    }
    fp.sobel = sobel_components(fp.mask);
    fp.edge = Grid(s.height(), s.width());
    for (std::size_t i = 0; i < s.size(); ++i) {
        fp.edge[i] = std::sqrt(fp.sobel.gx[i] * fp.sobel.gx[i] + fp.sobel.gy[i] * fp.sobel.gy[i] + kEdgeEps);
        fp.perimeter += fp.edge[i];
    }
    fp.area = fp.mask_sum / fp.n;
    fp.rough_raw = fp.perimeter / std::sqrt(fp.mask_sum + kFeatureEps);
    fp.compact_pre = 4.0 * std::numbers::pi * fp.mask_sum / (fp.perimeter * fp.perimeter + kFeatureEps);
    fp.compactness = std::clamp(fp.compact_pre, 0.0, 1.0);

    const Grid& g = in.image.grid();
    for (std::size_t i = 0; i < s.size(); ++i) fp.weighted_gray += fp.mask[i] * g[i];
    const double denom = fp.mask_sum + kFeatureEps;
    fp.mean_gray = fp.weighted_gray / denom;
    double var = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        const double d = g[i] - fp.mean_gray;
        var += fp.mask[i] * d * d;
    }
    fp.tex_raw = var / denom;

    fp.rough_norm = ctx.norm_roughness.apply(fp.rough_raw);
    fp.tex_norm = ctx.norm_texture.apply(fp.tex_raw);
    fp.f = {fp.area, fp.rough_norm, 1.0 - fp.compactness, fp.tex_norm};
    fp.w = ctx.prior.weights();
    fp.phi = 0.0;
    for (std::size_t i = 0; i < 4; ++i) fp.phi += fp.w[i] * fp.f[i];

    fp.p_hat = sigmoid(in.malig_logit);
    fp.seg = bce_with_logits(s, in.targets.mask_gt);
    fp.cls = bce_with_logits(in.malig_logit, static_cast<double>(in.targets.label));
    fp.cons = consistency_loss(fp.p_hat, fp.phi);
    fp.ntp = in.targets.has_tumor ? 0.0 : fp.area;
    fp.l2 = ctx.prior.penalty();
    return fp;
}

// Adjoint of the Sobel pass: scatter each output pixel's kernel taps back to
// the (clamped) source pixels, which is exactly the replicate-padding
// transpose.
Grid sobel_adjoint(const Grid& dgx, const Grid& dgy) {
    const int h = dgx.height();
    const int w = dgx.width();
    Grid out(h, w);
    static constexpr double kx[3][3] = {{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}};
    static constexpr double ky[3][3] = {{-1, -2, -1}, {0, 0, 0}, {1, 2, 1}};
    auto clamp = [](int v, int hi) { return v < 0 ? 0 : (v > hi ? hi : v); };
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            const double ax = dgx(r, c);
            const double ay = dgy(r, c);
            for (int i = 0; i < 3; ++i) {
                const int rr = clamp(r + i - 1, h - 1);
                for (int j = 0; j < 3; ++j) {
                    const int cc = clamp(c + j - 1, w - 1);
                    out(rr, cc) += kx[i][j] * ax + ky[i][j] * ay;
                }
            }
        }
    }
    return out;
}

// dP/dy where P = sum(E).
Grid perimeter_grad_mask(const ForwardPass& fp) {
    const int h = fp.mask.height();
    const int w = fp.mask.width();
    Grid dgx(h, w);
    Grid dgy(h, w);
    for (std::size_t i = 0; i < fp.edge.size(); ++i) {
        dgx[i] = fp.sobel.gx[i] / fp.edge[i];
        dgy[i] = fp.sobel.gy[i] / fp.edge[i];
    }
    return sobel_adjoint(dgx, dgy);
}

// Gradients of the four features w.r.t. the soft mask, each optional so the
// caller pays only for the paths it needs.
struct FeatureMaskGrads {
    bool want_area = false, want_rough = false, want_compact = false, want_texture = false;
    double area_coeff = 0.0;  // dA/dy is constant 1/n
    Grid rough;               // dR_raw/dy
    Grid compact;             // dC/dy (zero when the clip is active)
    Grid texture;             // dT_raw/dy
};

FeatureMaskGrads feature_mask_grads(const ForwardPass& fp, const SampleInputs& in, bool want_area, bool want_rough,
                                    bool want_compact, bool want_texture) {
    FeatureMaskGrads out;
    out.want_area = want_area;
    out.want_rough = want_rough;
    out.want_compact = want_compact;
    out.want_texture = want_texture;
    if (want_area) out.area_coeff = 1.0 / fp.n;

    if (want_rough || want_compact) {
        const Grid dp = perimeter_grad_mask(fp);
        if (want_rough) {
            const double inv_sqrt = 1.0 / std::sqrt(fp.mask_sum + kFeatureEps);
            const double sum_term = -0.5 * fp.perimeter * inv_sqrt * inv_sqrt * inv_sqrt;
            out.rough = Grid(fp.mask.height(), fp.mask.width());
            for (std::size_t i = 0; i < dp.size(); ++i) out.rough[i] = dp[i] * inv_sqrt + sum_term;
        }
        if (want_compact) {
            out.compact = Grid(fp.mask.height(), fp.mask.width());
            if (fp.compact_pre > 0.0 && fp.compact_pre < 1.0) {
                const double denom = fp.perimeter * fp.perimeter + kFeatureEps;
                const double dsum = 4.0 * std::numbers::pi / denom;
                const double dperim = -8.0 * std::numbers::pi * fp.mask_sum * fp.perimeter / (denom * denom);
                for (std::size_t i = 0; i < dp.size(); ++i) out.compact[i] = dsum + dperim * dp[i];
            }
        }
    }

    if (want_texture) {
        const Grid& g = in.image.grid();
        const double inv_denom = 1.0 / (fp.mask_sum + kFeatureEps);
        // sum_j y_j (g_j - mu); differs from zero by the eps in the mean.
        const double centered_mass = fp.weighted_gray - fp.mean_gray * fp.mask_sum;
        out.texture = Grid(fp.mask.height(), fp.mask.width());
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double d = g[i] - fp.mean_gray;
            const double dvar = d * d - 2.0 * centered_mass * d * inv_denom;
            out.texture[i] = (dvar - fp.tex_raw) * inv_denom;
        }
    }
    return out;
}

// Combines per-feature mask gradients with feature-space coefficients and
// chains through the sigmoid slope onto the logits.
Grid chain_to_logits(const ForwardPass& fp, const FeatureMaskGrads& fg, double area_w, double rough_w,
                     double compact_w, double texture_w) {
    Grid out(fp.mask.height(), fp.mask.width());
    for (std::size_t i = 0; i < out.size(); ++i) {
        double dmask = 0.0;
        if (fg.want_area) dmask += area_w * fg.area_coeff;
        if (fg.want_rough) dmask += rough_w * fg.rough[i];
        if (fg.want_compact) dmask += compact_w * fg.compact[i];
        if (fg.want_texture) dmask += texture_w * fg.texture[i];
        out[i] = dmask * fp.mask_slope[i];
    }
    return out;
}

GraphGradients zero_gradients(const SampleInputs& in) {
    GraphGradients g;
    g.wrt_logits = Grid(in.logits.height(), in.logits.width());
    return g;
}

// d phi / d logits, plus the feature-space pieces the consistency term needs.
Grid phi_grad_logits(const ForwardPass& fp, const SampleInputs& in, const GraphContext& ctx) {
    const double rough_chain = ctx.norm_roughness.gradient(fp.rough_raw);
    const double tex_chain = ctx.norm_texture.gradient(fp.tex_raw);
    const FeatureMaskGrads fg = feature_mask_grads(fp, in, true, rough_chain != 0.0, true, tex_chain != 0.0);
    return chain_to_logits(fp, fg, fp.w[0], fp.w[1] * rough_chain, -fp.w[2], fp.w[3] * tex_chain);
}

Vec4 phi_grad_u(const ForwardPass& fp) {
    Vec4 grad;
    for (std::size_t i = 0; i < 4; ++i) grad[i] = fp.w[i] * (fp.f[i] - fp.phi);
    return grad;
}

}  // namespace

const char* graph_scalar_name(GraphScalar scalar) {
    switch (scalar) {
        case GraphScalar::area: return "area";
        case GraphScalar::roughness_raw: return "roughness_raw";
        case GraphScalar::compactness: return "compactness";
        case GraphScalar::texture_raw: return "texture_raw";
        case GraphScalar::prior_score: return "prior_score";
        case GraphScalar::seg_loss: return "seg_loss";
        case GraphScalar::cls_loss: return "cls_loss";
        case GraphScalar::consistency_loss: return "consistency_loss";
        case GraphScalar::no_tumor_penalty: return "no_tumor_penalty";
        case GraphScalar::total_loss: return "total_loss";
    }
    throw UnsupportedGraphError("unknown graph scalar");
}

std::vector<GraphScalar> all_graph_scalars() {
    return {GraphScalar::area,       GraphScalar::roughness_raw, GraphScalar::compactness,
            GraphScalar::texture_raw, GraphScalar::prior_score,   GraphScalar::seg_loss,
            GraphScalar::cls_loss,    GraphScalar::consistency_loss, GraphScalar::no_tumor_penalty,
            GraphScalar::total_loss};
}

double graph_value(const SampleInputs& in, const GraphContext& ctx, GraphScalar scalar) {
    const ForwardPass fp = run_forward(in, ctx);
    switch (scalar) {
        case GraphScalar::area: return fp.area;
        case GraphScalar::roughness_raw: return fp.rough_raw;
        case GraphScalar::compactness: return fp.compactness;
        case GraphScalar::texture_raw: return fp.tex_raw;
        case GraphScalar::prior_score: return fp.phi;
        case GraphScalar::seg_loss: return fp.seg;
        case GraphScalar::cls_loss: return fp.cls;
        case GraphScalar::consistency_loss: return fp.cons;
        case GraphScalar::no_tumor_penalty: return fp.ntp;
        case GraphScalar::total_loss:
            return compose_breakdown(fp.seg, fp.cls, fp.cons, fp.ntp, fp.l2, ctx.hyper).total;
    }
    throw UnsupportedGraphError("unknown graph scalar");
}

namespace {
GraphGradients gradients_from_forward(const ForwardPass& fp, const SampleInputs& in, const GraphContext& ctx,
                                      GraphScalar scalar);
}  // namespace

GraphGradients graph_gradients(const SampleInputs& in, const GraphContext& ctx, GraphScalar scalar) {
    return gradients_from_forward(run_forward(in, ctx), in, ctx, scalar);
}

namespace {
GraphGradients gradients_from_forward(const ForwardPass& fp, const SampleInputs& in, const GraphContext& ctx,
                                      GraphScalar scalar) {
    GraphGradients out = zero_gradients(in);

    switch (scalar) {
        case GraphScalar::area: {
            const FeatureMaskGrads fg = feature_mask_grads(fp, in, true, false, false, false);
            out.wrt_logits = chain_to_logits(fp, fg, 1.0, 0.0, 0.0, 0.0);
            return out;
        }
        case GraphScalar::roughness_raw: {
            const FeatureMaskGrads fg = feature_mask_grads(fp, in, false, true, false, false);
            out.wrt_logits = chain_to_logits(fp, fg, 0.0, 1.0, 0.0, 0.0);
            return out;
        }
        case GraphScalar::compactness: {
            const FeatureMaskGrads fg = feature_mask_grads(fp, in, false, false, true, false);
            out.wrt_logits = chain_to_logits(fp, fg, 0.0, 0.0, 1.0, 0.0);
            return out;
        }
        case GraphScalar::texture_raw: {
            const FeatureMaskGrads fg = feature_mask_grads(fp, in, false, false, false, true);
            out.wrt_logits = chain_to_logits(fp, fg, 0.0, 0.0, 0.0, 1.0);
            return out;
        }
        case GraphScalar::prior_score: {
            out.wrt_logits = phi_grad_logits(fp, in, ctx);
            out.wrt_prior_logits = phi_grad_u(fp);
            return out;
        }
        case GraphScalar::seg_loss: {
            // BCE-with-logits differentiates directly in logit space.
            const Grid& t = in.targets.mask_gt;
            for (std::size_t i = 0; i < fp.mask.size(); ++i) out.wrt_logits[i] = (fp.mask[i] - t[i]) / fp.n;
            return out;
        }
        case GraphScalar::cls_loss: {
            out.wrt_malig_logit = fp.p_hat - static_cast<double>(in.targets.label);
            return out;
        }
        case GraphScalar::consistency_loss: {
            const double residual = 2.0 * (fp.p_hat - fp.phi);
            if (ctx.routing != ConsistencyGrad::prior_only) {
                out.wrt_malig_logit = residual * fp.p_hat * (1.0 - fp.p_hat);
            }
            if (ctx.routing != ConsistencyGrad::pred_only) {
                const Grid dphi = phi_grad_logits(fp, in, ctx);
                for (std::size_t i = 0; i < dphi.size(); ++i) out.wrt_logits[i] = -residual * dphi[i];
                const Vec4 du = phi_grad_u(fp);
                for (std::size_t i = 0; i < 4; ++i) out.wrt_prior_logits[i] = -residual * du[i];
            }
            return out;
        }
        case GraphScalar::no_tumor_penalty: {
            if (!in.targets.has_tumor) {
                const FeatureMaskGrads fg = feature_mask_grads(fp, in, true, false, false, false);
                out.wrt_logits = chain_to_logits(fp, fg, 1.0, 0.0, 0.0, 0.0);
            }
            return out;
        }
        case GraphScalar::total_loss: {
            const Hyper& h = ctx.hyper;
            const Grid& t = in.targets.mask_gt;
            const double residual = 2.0 * (fp.p_hat - fp.phi);

            // Logit-grid path: segmentation + consistency (through phi) + NTP.
            const bool phi_path = h.alpha > 0.0 && ctx.routing != ConsistencyGrad::pred_only;
            Grid dphi;
            if (phi_path) dphi = phi_grad_logits(fp, in, ctx);
            const double ntp_coeff = (!in.targets.has_tumor) ? h.alpha * h.lambda_nt / fp.n : 0.0;
            for (std::size_t i = 0; i < fp.mask.size(); ++i) {
                double v = h.w_seg * (fp.mask[i] - t[i]) / fp.n;
                if (phi_path) v += h.alpha * -residual * dphi[i];
                if (ntp_coeff != 0.0) v += ntp_coeff * fp.mask_slope[i];
                out.wrt_logits[i] = v;
            }

            // Malignancy-logit path: classification + consistency (through p_hat).
            out.wrt_malig_logit = h.w_cls * (fp.p_hat - static_cast<double>(in.targets.label));
            if (ctx.routing != ConsistencyGrad::prior_only) {
                out.wrt_malig_logit += h.alpha * residual * fp.p_hat * (1.0 - fp.p_hat);
            }

            // Prior-logit path: consistency (through phi) + L2.
            Vec4 du_phi{0.0, 0.0, 0.0, 0.0};
            if (phi_path) du_phi = phi_grad_u(fp);
            for (std::size_t i = 0; i < 4; ++i) {
                out.wrt_prior_logits[i] = h.alpha * -residual * du_phi[i] + 2.0 * h.beta * ctx.prior.u[i];
            }
            return out;
        }
    }
    throw UnsupportedGraphError("unknown graph scalar");
}
}  // namespace

GraphEvaluation total_loss_with_gradients(const SampleInputs& in, const GraphContext& ctx) {
    GraphEvaluation eval;
    const ForwardPass fp = run_forward(in, ctx);
    eval.breakdown = compose_breakdown(fp.seg, fp.cls, fp.cons, fp.ntp, fp.l2, ctx.hyper);
    eval.features = FeatureVector{fp.area, fp.rough_norm, fp.compactness, fp.tex_norm, fp.perimeter};
    eval.phi = fp.phi;
    eval.p_hat = fp.p_hat;
    eval.grads = gradients_from_forward(fp, in, ctx, GraphScalar::total_loss);
    return eval;
}

FiniteDiffReport finite_diff_check(const std::function<double(std::span<const double>)>& f,
                                   std::span<const double> params, std::span<const double> analytic_grad,
                                   const FdCheckConfig& config) {
    if (!(config.step > 0.0)) throw InvalidInputError("finite-difference step must be positive");
    if (params.size() != analytic_grad.size()) {
        throw InvalidInputError("analytic gradient size does not match parameter count");
    }
    if (params.empty()) throw InvalidInputError("finite-difference check needs at least one parameter");

    std::vector<double> x(params.begin(), params.end());
    std::vector<std::size_t> coords;
    const std::size_t n = x.size();
    if (config.probes <= 0 || static_cast<std::size_t>(config.probes) >= n) {
        coords.resize(n);
        for (std::size_t i = 0; i < n; ++i) coords[i] = i;
    } else {
        // Partial Fisher-Yates: the first `probes` entries of a seeded shuffle.
        std::vector<std::size_t> pool(n);
        for (std::size_t i = 0; i < n; ++i) pool[i] = i;
        Rng rng(config.seed);
        for (int k = 0; k < config.probes; ++k) {
            const std::size_t j = k + static_cast<std::size_t>(rng.next_u64() % (n - k));
            std::swap(pool[k], pool[j]);
            coords.push_back(pool[k]);
        }
    }

    FiniteDiffReport report;
    report.step = config.step;
    for (const std::size_t i : coords) {
        const double saved = x[i];
        x[i] = saved + config.step;
        const double up = f(x);
        x[i] = saved - config.step;
        const double down = f(x);
        x[i] = saved;
        if (!std::isfinite(up) || !std::isfinite(down)) {
            throw InvalidInputError("non-finite forward value during finite-difference probing");
        }
        const double numeric = (up - down) / (2.0 * config.step);
        const double analytic = analytic_grad[i];
        const double abs_err = std::abs(analytic - numeric);
        const double rel_err = abs_err / std::max({std::abs(analytic), std::abs(numeric), 1e-8});
        report.max_abs_err = std::max(report.max_abs_err, abs_err);
        report.max_rel_err = std::max(report.max_rel_err, rel_err);
        if (abs_err >= config.abs_tol) report.max_gated_rel_err = std::max(report.max_gated_rel_err, rel_err);
        if (!(abs_err < config.abs_tol || rel_err < config.rel_tol)) report.passed = false;
        ++report.probed_entries;
    }
    return report;
}

std::vector<GradCheckCase> run_graph_gradcheck(int height, int width, uint64_t seed, const FdCheckConfig& config) {
    Rng rng(seed);
    Grid logits(height, width);
    for (double& v : logits.values()) v = rng.normal(0.0, 1.2);
    Grid gray(height, width);
    for (double& v : gray.values()) v = rng.uniform();

    const bool tumor_free = (seed % 2) == 1;
    Grid mask_gt(height, width, 0.0);
    int label = 0;
    if (!tumor_free) {
        for (double& v : mask_gt.values()) v = rng.uniform() < 0.3 ? 1.0 : 0.0;
        // A mask that happened to come out empty counts as tumor-free.
        label = static_cast<int>(seed % 3 == 0);
    }
    const double malig_logit = rng.normal(0.0, 1.0);

    SampleInputs inputs{LogitGrid(std::move(logits)), malig_logit, GrayImage(std::move(gray)),
                        SampleTargets::from_mask(std::move(mask_gt), label)};

    GraphContext ctx;
    ctx.prior = PriorWeights::from_target_weights({0.15, 0.35, 0.25, 0.25});
    ctx.hyper = Hyper{0.9, 0.1, 0.17, 0.5, 0.001};
    // Freeze normalizer stats bracketing this instance's raw values so the
    // normalized path is active (clip inactive, gradient flowing).
    const SoftMask probe_mask = sigmoid_grid(inputs.logits);
    const double rough = roughness_raw(probe_mask).value;
    const double tex = texture_raw(probe_mask, inputs.image);
    const double rough_span = std::max(1.0, std::abs(rough));
    const double tex_span = std::max(0.05, std::abs(tex));
    ctx.norm_roughness = EmaNormalizer::restore(rough - 0.6 * rough_span, rough + 0.6 * rough_span, 0.99, true);
    ctx.norm_texture = EmaNormalizer::restore(tex - 0.6 * tex_span, tex + 0.6 * tex_span, 0.99, true);

    std::vector<GradCheckCase> cases;
    for (const GraphScalar scalar : all_graph_scalars()) {
        const GraphGradients analytic = graph_gradients(inputs, ctx, scalar);

        FdCheckConfig cfg = config;
        cfg.seed = seed ^ 0x5bf03635ULL;

        // w.r.t. the logit grid
        auto f_logits = [&](std::span<const double> x) {
            SampleInputs probe{LogitGrid(Grid::from_values(height, width, std::vector<double>(x.begin(), x.end()))),
                               inputs.malig_logit, inputs.image, inputs.targets};
            return graph_value(probe, ctx, scalar);
        };
        cases.push_back({scalar, "logits",
                         finite_diff_check(f_logits, inputs.logits.grid().values(),
                                           analytic.wrt_logits.values(), cfg)});

        // w.r.t. the prior-weight logits u
        auto f_u = [&](std::span<const double> x) {
            GraphContext probe_ctx = ctx;
            for (std::size_t i = 0; i < 4; ++i) probe_ctx.prior.u[i] = x[i];
            return graph_value(inputs, probe_ctx, scalar);
        };
        FdCheckConfig cfg_u = cfg;
        cfg_u.probes = 0;  // all four
        cases.push_back({scalar, "prior_logits",
                         finite_diff_check(f_u, ctx.prior.u, analytic.wrt_prior_logits, cfg_u)});

        // w.r.t. the malignancy logit
        auto f_m = [&](std::span<const double> x) {
            SampleInputs probe{inputs.logits, x[0], inputs.image, inputs.targets};
            return graph_value(probe, ctx, scalar);
        };
        const double m_param[1] = {inputs.malig_logit};
        const double m_grad[1] = {analytic.wrt_malig_logit};
        FdCheckConfig cfg_m = cfg;
        cfg_m.probes = 0;
        cases.push_back({scalar, "malig_logit", finite_diff_check(f_m, m_param, m_grad, cfg_m)});
    }
    return cases;
}

}  // namespace softmorph
