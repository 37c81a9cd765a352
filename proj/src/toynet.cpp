#include "softmorph/toynet.hpp"

#include <cmath>

#include "softmorph/errors.hpp"
#include "softmorph/rng.hpp"

namespace softmorph {

namespace {

// Parameter block order; indices are stable and used by the checkpoint code.
enum BlockIndex {
    kEnc1W, kEnc1B, kEnc2W, kEnc2B, kEnc3W, kEnc3B,
    kDec3W, kDec3B, kDec2W, kDec2B, kDec1W, kDec1B,
    kHeadW, kHeadB, kClsW, kClsB,
    kBlockCount,
};

template <typename T>
void conv3x3_forward(const Tensor3<T>& in, const ParamBlock<T>& weight, const ParamBlock<T>& bias, Tensor3<T>& out) {
    const int h = in.height, w = in.width;
    const int cin = in.channels, cout = out.channels;
    for (int co = 0; co < cout; ++co) {
        T* op = out.plane(co);
        const T b = bias.value[co];
        for (int i = 0; i < h * w; ++i) op[i] = b;
        for (int ci = 0; ci < cin; ++ci) {
            const T* ip = in.plane(ci);
            const T* wp = weight.value.data() + (static_cast<std::size_t>(co) * cin + ci) * 9;
            // the three horizontal taps of each kernel row share one sweep
            for (int ky = 0; ky < 3; ++ky) {
                const int dy = ky - 1;
                const int y0 = dy < 0 ? 1 : 0, y1 = dy > 0 ? h - 1 : h;
                const T w0 = wp[ky * 3 + 0], w1 = wp[ky * 3 + 1], w2 = wp[ky * 3 + 2];
                for (int y = y0; y < y1; ++y) {
                    T* __restrict__ orow = op + y * w;
                    const T* __restrict__ irow = ip + (y + dy) * w;
                    orow[0] += w1 * irow[0] + w2 * irow[1];
#pragma omp simd
                    for (int x = 1; x < w - 1; ++x) {
                        orow[x] += w0 * irow[x - 1] + w1 * irow[x] + w2 * irow[x + 1];
                    }
                    orow[w - 1] += w0 * irow[w - 2] + w1 * irow[w - 1];
                }
            }
        }
    }
}

template <typename T>
void conv3x3_backward(const Tensor3<T>& in, ParamBlock<T>& weight, ParamBlock<T>& bias, const Tensor3<T>& dout,
                      Tensor3<T>& din, bool want_data_grad = true) {
    const int h = in.height, w = in.width;
    const int cin = in.channels, cout = dout.channels;
    for (int co = 0; co < cout; ++co) {
        const T* dop = dout.plane(co);
        T acc_b = T(0);
#pragma omp simd reduction(+ : acc_b)
        for (int i = 0; i < h * w; ++i) acc_b += dop[i];
        bias.grad[co] += acc_b;
        for (int ci = 0; ci < cin; ++ci) {
            const T* ip = in.plane(ci);
            const std::size_t woff = (static_cast<std::size_t>(co) * cin + ci) * 9;

            // data gradient in gather form: each din row pulls the three
            // horizontal taps from the relevant dout rows in one sweep
            if (want_data_grad) {
                T* dip = din.plane(ci);
                for (int yy = 0; yy < h; ++yy) {
                    T* __restrict__ dirow = dip + yy * w;
                    for (int ky = 0; ky < 3; ++ky) {
                        const int y = yy - (ky - 1);
                        if (y < 0 || y >= h) continue;
                        const T* __restrict__ dorow = dop + y * w;
                        const T w0 = weight.value[woff + ky * 3 + 0];
                        const T w1 = weight.value[woff + ky * 3 + 1];
                        const T w2 = weight.value[woff + ky * 3 + 2];
                        dirow[0] += w1 * dorow[0] + w0 * dorow[1];
#pragma omp simd
                        for (int xx = 1; xx < w - 1; ++xx) {
                            dirow[xx] += w2 * dorow[xx - 1] + w1 * dorow[xx] + w0 * dorow[xx + 1];
                        }
                        dirow[w - 1] += w2 * dorow[w - 2] + w1 * dorow[w - 1];
                    }
                }
            }

            // weight gradient: each tap is one flat dot over the plane with
            // the shifted view, minus the row-wrap terms the flat sum
            // wrongly picks up at the horizontal borders
            const int n = h * w;
            for (int ky = 0; ky < 3; ++ky) {
                for (int kx = 0; kx < 3; ++kx) {
                    const int off = (ky - 1) * w + (kx - 1);
                    const int lo = off < 0 ? -off : 0;
                    const int hi = off > 0 ? n - off : n;
                    const T* __restrict__ shifted = ip + off;
                    T acc = T(0);
#pragma omp simd reduction(+ : acc)
                    for (int i = lo; i < hi; ++i) acc += dop[i] * shifted[i];
                    if (kx == 0) {
                        // drop pairs where x = 0 read the previous row's tail
                        for (int i = ((lo + w - 1) / w) * w; i < hi; i += w) acc -= dop[i] * shifted[i];
                    } else if (kx == 2) {
                        // drop pairs where x = w-1 read the next row's head
                        int i = (lo / w) * w + (w - 1);
                        if (i < lo) i += w;
                        for (; i < hi; i += w) acc -= dop[i] * shifted[i];
                    }
                    weight.grad[woff + ky * 3 + kx] += acc;
                }
            }
        }
    }
}

template <typename T>
void relu_inplace(Tensor3<T>& t) {
    for (T& v : t.v) v = v > T(0) ? v : T(0);
}

// d relu: pass gradient where the *activated* value is > 0.
template <typename T>
void relu_backward_inplace(const Tensor3<T>& activated, Tensor3<T>& grad) {
    for (std::size_t i = 0; i < grad.v.size(); ++i) {
        if (!(activated.v[i] > T(0))) grad.v[i] = T(0);
    }
}

template <typename T>
Tensor3<T> avgpool2_forward(const Tensor3<T>& in) {
    Tensor3<T> out(in.channels, in.height / 2, in.width / 2);
    for (int c = 0; c < in.channels; ++c) {
        const T* ip = in.plane(c);
        T* op = out.plane(c);
        for (int y = 0; y < out.height; ++y) {
            for (int x = 0; x < out.width; ++x) {
                const T* r0 = ip + (2 * y) * in.width + 2 * x;
                const T* r1 = r0 + in.width;
                op[y * out.width + x] = (r0[0] + r0[1] + r1[0] + r1[1]) * T(0.25);
            }
        }
    }
    return out;
}

template <typename T>
void avgpool2_backward(const Tensor3<T>& dout, Tensor3<T>& din) {
    for (int c = 0; c < dout.channels; ++c) {
        const T* dop = dout.plane(c);
        T* dip = din.plane(c);
        for (int y = 0; y < dout.height; ++y) {
            for (int x = 0; x < dout.width; ++x) {
                const T g = dop[y * dout.width + x] * T(0.25);
                T* r0 = dip + (2 * y) * din.width + 2 * x;
                T* r1 = r0 + din.width;
                r0[0] += g;
                r0[1] += g;
                r1[0] += g;
                r1[1] += g;
            }
        }
    }
}

// 2x bilinear tap table: out coordinate o reads in coordinates (i0, i1) with
// weights (1-frac, frac); sampling positions follow (o + 0.5)/2 - 0.5.
struct BilinearTaps {
    std::vector<int> lo, hi;
    std::vector<double> frac;
};

BilinearTaps bilinear_taps(int out_size, int in_size) {
    BilinearTaps t;
    t.lo.resize(out_size);
    t.hi.resize(out_size);
    t.frac.resize(out_size);
    for (int o = 0; o < out_size; ++o) {
        const double src = (o + 0.5) / 2.0 - 0.5;
        const double fl = std::floor(src);
        int i0 = static_cast<int>(fl);
        double f = src - fl;
        int i1 = i0 + 1;
        if (i0 < 0) i0 = 0;
        if (i1 < 0) i1 = 0;
        if (i0 > in_size - 1) i0 = in_size - 1;
        if (i1 > in_size - 1) i1 = in_size - 1;
        t.lo[o] = i0;
        t.hi[o] = i1;
        t.frac[o] = f;
    }
    return t;
}

template <typename T>
Tensor3<T> upsample2_forward(const Tensor3<T>& in) {
    Tensor3<T> out(in.channels, in.height * 2, in.width * 2);
    const BilinearTaps ty = bilinear_taps(out.height, in.height);
    const BilinearTaps tx = bilinear_taps(out.width, in.width);
    for (int c = 0; c < in.channels; ++c) {
        const T* ip = in.plane(c);
        T* op = out.plane(c);
        for (int y = 0; y < out.height; ++y) {
            const T fy = static_cast<T>(ty.frac[y]);
            const T* r0 = ip + ty.lo[y] * in.width;
            const T* r1 = ip + ty.hi[y] * in.width;
            for (int x = 0; x < out.width; ++x) {
                const T fx = static_cast<T>(tx.frac[x]);
                const T top = r0[tx.lo[x]] * (T(1) - fx) + r0[tx.hi[x]] * fx;
                const T bot = r1[tx.lo[x]] * (T(1) - fx) + r1[tx.hi[x]] * fx;
                op[y * out.width + x] = top * (T(1) - fy) + bot * fy;
            }
        }
    }
    return out;
}

template <typename T>
void upsample2_backward(const Tensor3<T>& dout, Tensor3<T>& din) {
    const BilinearTaps ty = bilinear_taps(dout.height, din.height);
    const BilinearTaps tx = bilinear_taps(dout.width, din.width);
    for (int c = 0; c < dout.channels; ++c) {
        const T* dop = dout.plane(c);
        T* dip = din.plane(c);
        for (int y = 0; y < dout.height; ++y) {
            const T fy = static_cast<T>(ty.frac[y]);
            T* r0 = dip + ty.lo[y] * din.width;
            T* r1 = dip + ty.hi[y] * din.width;
            for (int x = 0; x < dout.width; ++x) {
                const T fx = static_cast<T>(tx.frac[x]);
                const T g = dop[y * dout.width + x];
                r0[tx.lo[x]] += g * (T(1) - fy) * (T(1) - fx);
                r0[tx.hi[x]] += g * (T(1) - fy) * fx;
                r1[tx.lo[x]] += g * fy * (T(1) - fx);
                r1[tx.hi[x]] += g * fy * fx;
            }
        }
    }
}

template <typename T>
Tensor3<T> concat_channels(const Tensor3<T>& a, const Tensor3<T>& b) {
    Tensor3<T> out(a.channels + b.channels, a.height, a.width);
    std::copy(a.v.begin(), a.v.end(), out.v.begin());
    std::copy(b.v.begin(), b.v.end(), out.v.begin() + static_cast<std::ptrdiff_t>(a.v.size()));
    return out;
}

template <typename T>
void split_channels_backward(const Tensor3<T>& dcat, Tensor3<T>& da, Tensor3<T>& db) {
    const std::size_t na = da.v.size();
    for (std::size_t i = 0; i < na; ++i) da.v[i] += dcat.v[i];
    for (std::size_t i = 0; i < db.v.size(); ++i) db.v[i] += dcat.v[na + i];
}

}  // namespace

template <typename T>
ToyNet<T>::ToyNet(const NetConfig& config, uint64_t seed) : config_(config) {
    if (config.in_channels != 1 && config.in_channels != 3) {
        throw InvalidInputError("in_channels must be 1 or 3");
    }
    for (const int w : config.widths) {
        if (w < 1) throw InvalidInputError("encoder widths must be positive");
    }
    const int w1 = config.widths[0], w2 = config.widths[1], w3 = config.widths[2];

    auto conv = [](const std::string& name, int cout, int cin) {
        ParamBlock<T> weight{name + ".weight", {cout, cin, 3, 3}, {}, {}};
        weight.value.resize(static_cast<std::size_t>(cout) * cin * 9);
        weight.grad.resize(weight.value.size(), T(0));
        ParamBlock<T> bias{name + ".bias", {cout}, {}, {}};
        bias.value.resize(cout, T(0));
        bias.grad.resize(cout, T(0));
        return std::pair{std::move(weight), std::move(bias)};
    };

    auto [e1w, e1b] = conv("enc1", w1, config.in_channels);
    auto [e2w, e2b] = conv("enc2", w2, w1);
    auto [e3w, e3b] = conv("enc3", w3, w2);
    auto [d3w, d3b] = conv("dec3", w2, w3 + w3);
    auto [d2w, d2b] = conv("dec2", w1, w2 + w2);
    auto [d1w, d1b] = conv("dec1", w1, w1 + w1);

    ParamBlock<T> headw{"head.weight", {1, w1, 1, 1}, std::vector<T>(w1, T(0)), std::vector<T>(w1, T(0))};
    ParamBlock<T> headb{"head.bias", {1}, std::vector<T>(1, T(0)), std::vector<T>(1, T(0))};
    ParamBlock<T> clsw{"cls.weight", {1, w3}, std::vector<T>(w3, T(0)), std::vector<T>(w3, T(0))};
    ParamBlock<T> clsb{"cls.bias", {1}, std::vector<T>(1, T(0)), std::vector<T>(1, T(0))};

    params_ = {std::move(e1w), std::move(e1b), std::move(e2w), std::move(e2b), std::move(e3w), std::move(e3b),
               std::move(d3w), std::move(d3b), std::move(d2w), std::move(d2b), std::move(d1w), std::move(d1b),
               std::move(headw), std::move(headb), std::move(clsw), std::move(clsb)};

    // Fan-in-scaled uniform weights, U(-1/sqrt(fan_in), 1/sqrt(fan_in)),
    // zero biases; the two output layers stay zero-biased by the same rule.
    // Draws happen in double so float and double nets share the same
    // underlying stream.
    Rng rng(seed);
    for (ParamBlock<T>& p : params_) {
        if (p.name.ends_with(".bias")) continue;
        int fan_in = 1;
        for (std::size_t d = 1; d < p.shape.size(); ++d) fan_in *= p.shape[d];
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (T& v : p.value) v = static_cast<T>(rng.uniform(-bound, bound));
    }
}

template <typename T>
void ToyNet<T>::zero_grad() {
    for (ParamBlock<T>& p : params_) std::fill(p.grad.begin(), p.grad.end(), T(0));
}

template <typename T>
typename ToyNet<T>::Output ToyNet<T>::forward(const GrayImage& image) const {
    Trace trace;
    return forward(image, trace);
}

template <typename T>
typename ToyNet<T>::Output ToyNet<T>::forward(const GrayImage& image, Trace& tr) const {
    const Grid& g = image.grid();
    const int h = g.height(), w = g.width();
    if (h % 8 != 0 || w % 8 != 0) {
        throw InvalidInputError("input dimensions must be divisible by 8");
    }
    const int w1 = config_.widths[0], w2 = config_.widths[1], w3 = config_.widths[2];

    tr.input = Tensor3<T>(config_.in_channels, h, w);
    for (int c = 0; c < config_.in_channels; ++c) {
        T* plane = tr.input.plane(c);
        for (std::size_t i = 0; i < g.size(); ++i) plane[i] = static_cast<T>(g[i]);
    }

    tr.a1 = Tensor3<T>(w1, h, w);
    conv3x3_forward(tr.input, block(kEnc1W), block(kEnc1B), tr.a1);
    relu_inplace(tr.a1);
    tr.p1 = avgpool2_forward(tr.a1);

    tr.a2 = Tensor3<T>(w2, h / 2, w / 2);
    conv3x3_forward(tr.p1, block(kEnc2W), block(kEnc2B), tr.a2);
    relu_inplace(tr.a2);
    tr.p2 = avgpool2_forward(tr.a2);

    tr.a3 = Tensor3<T>(w3, h / 4, w / 4);
    conv3x3_forward(tr.p2, block(kEnc3W), block(kEnc3B), tr.a3);
    relu_inplace(tr.a3);
    tr.bottleneck = avgpool2_forward(tr.a3);

    tr.up3 = upsample2_forward(tr.bottleneck);
    tr.cat3 = concat_channels(tr.up3, tr.a3);
    tr.d3 = Tensor3<T>(w2, h / 4, w / 4);
    conv3x3_forward(tr.cat3, block(kDec3W), block(kDec3B), tr.d3);
    relu_inplace(tr.d3);

    tr.up2 = upsample2_forward(tr.d3);
    tr.cat2 = concat_channels(tr.up2, tr.a2);
    tr.d2 = Tensor3<T>(w1, h / 2, w / 2);
    conv3x3_forward(tr.cat2, block(kDec2W), block(kDec2B), tr.d2);
    relu_inplace(tr.d2);

    tr.up1 = upsample2_forward(tr.d2);
    tr.cat1 = concat_channels(tr.up1, tr.a1);
    tr.d1 = Tensor3<T>(w1, h, w);
    conv3x3_forward(tr.cat1, block(kDec1W), block(kDec1B), tr.d1);
    relu_inplace(tr.d1);

    // 1x1 logit head
    Grid logits(h, w);
    {
        const ParamBlock<T>& hw = block(kHeadW);
        const T hb = block(kHeadB).value[0];
        for (int i = 0; i < h * w; ++i) {
            T acc = hb;
            for (int c = 0; c < w1; ++c) acc += hw.value[c] * tr.d1.plane(c)[i];
            logits[static_cast<std::size_t>(i)] = static_cast<double>(acc);
        }
    }

    // classifier: global average pool of the bottleneck -> linear
    tr.pooled.assign(w3, T(0));
    const int hb_n = tr.bottleneck.height * tr.bottleneck.width;
    for (int c = 0; c < w3; ++c) {
        const T* p = tr.bottleneck.plane(c);
        T acc = T(0);
        for (int i = 0; i < hb_n; ++i) acc += p[i];
        tr.pooled[c] = acc / static_cast<T>(hb_n);
    }
    T m = block(kClsB).value[0];
    for (int c = 0; c < w3; ++c) m += block(kClsW).value[c] * tr.pooled[c];

    return Output{std::move(logits), static_cast<double>(m)};
}

template <typename T>
void ToyNet<T>::backward(const Trace& tr, const Grid& dlogits, double dmalig_logit) {
    const int h = tr.d1.height, w = tr.d1.width;
    const int w1 = config_.widths[0], w3 = config_.widths[2];

    // head (1x1 conv)
    Tensor3<T> dd1(w1, h, w);
    {
        ParamBlock<T>& hw = block(kHeadW);
        for (int c = 0; c < w1; ++c) {
            const T* d1p = tr.d1.plane(c);
            T* dd1p = dd1.plane(c);
            T acc_w = T(0);
            const T wv = hw.value[c];
#pragma omp simd reduction(+ : acc_w)
            for (int i = 0; i < h * w; ++i) {
                const T g = static_cast<T>(dlogits[static_cast<std::size_t>(i)]);
                acc_w += g * d1p[i];
                dd1p[i] = wv * g;
            }
            hw.grad[c] += acc_w;
        }
        T acc_b = T(0);
        for (int i = 0; i < h * w; ++i) acc_b += static_cast<T>(dlogits[static_cast<std::size_t>(i)]);
        block(kHeadB).grad[0] += acc_b;
    }

    // classifier
    Tensor3<T> dbottleneck(w3, tr.bottleneck.height, tr.bottleneck.width);
    {
        const T dm = static_cast<T>(dmalig_logit);
        ParamBlock<T>& cw = block(kClsW);
        const int n = tr.bottleneck.height * tr.bottleneck.width;
        const T inv_n = T(1) / static_cast<T>(n);
        for (int c = 0; c < w3; ++c) {
            cw.grad[c] += dm * tr.pooled[c];
            const T dpool = dm * cw.value[c] * inv_n;
            T* dbp = dbottleneck.plane(c);
            for (int i = 0; i < n; ++i) dbp[i] = dpool;
        }
        block(kClsB).grad[0] += dm;
    }

    // decoder stage 1
    relu_backward_inplace(tr.d1, dd1);
    Tensor3<T> dcat1(tr.cat1.channels, h, w);
    conv3x3_backward(tr.cat1, block(kDec1W), block(kDec1B), dd1, dcat1);
    Tensor3<T> dup1(tr.up1.channels, h, w);
    Tensor3<T> da1(tr.a1.channels, h, w);
    split_channels_backward(dcat1, dup1, da1);
    Tensor3<T> dd2(tr.d2.channels, tr.d2.height, tr.d2.width);
    upsample2_backward(dup1, dd2);

    // decoder stage 2
    relu_backward_inplace(tr.d2, dd2);
    Tensor3<T> dcat2(tr.cat2.channels, tr.cat2.height, tr.cat2.width);
    conv3x3_backward(tr.cat2, block(kDec2W), block(kDec2B), dd2, dcat2);
    Tensor3<T> dup2(tr.up2.channels, tr.up2.height, tr.up2.width);
    Tensor3<T> da2(tr.a2.channels, tr.a2.height, tr.a2.width);
    split_channels_backward(dcat2, dup2, da2);
    Tensor3<T> dd3(tr.d3.channels, tr.d3.height, tr.d3.width);
    upsample2_backward(dup2, dd3);

    // decoder stage 3
    relu_backward_inplace(tr.d3, dd3);
    Tensor3<T> dcat3(tr.cat3.channels, tr.cat3.height, tr.cat3.width);
    conv3x3_backward(tr.cat3, block(kDec3W), block(kDec3B), dd3, dcat3);
    Tensor3<T> dup3(tr.up3.channels, tr.up3.height, tr.up3.width);
    Tensor3<T> da3(tr.a3.channels, tr.a3.height, tr.a3.width);
    split_channels_backward(dcat3, dup3, da3);
    upsample2_backward(dup3, dbottleneck);  // joins the classifier seed

    // encoder stage 3
    Tensor3<T> da3_pool(tr.a3.channels, tr.a3.height, tr.a3.width);
    avgpool2_backward(dbottleneck, da3_pool);
    for (std::size_t i = 0; i < da3.v.size(); ++i) da3.v[i] += da3_pool.v[i];
    relu_backward_inplace(tr.a3, da3);
    Tensor3<T> dp2(tr.p2.channels, tr.p2.height, tr.p2.width);
    conv3x3_backward(tr.p2, block(kEnc3W), block(kEnc3B), da3, dp2);

    // encoder stage 2
    Tensor3<T> da2_pool(tr.a2.channels, tr.a2.height, tr.a2.width);
    avgpool2_backward(dp2, da2_pool);
    for (std::size_t i = 0; i < da2.v.size(); ++i) da2.v[i] += da2_pool.v[i];
    relu_backward_inplace(tr.a2, da2);
    Tensor3<T> dp1(tr.p1.channels, tr.p1.height, tr.p1.width);
    conv3x3_backward(tr.p1, block(kEnc2W), block(kEnc2B), da2, dp1);

    // encoder stage 1
    Tensor3<T> da1_pool(tr.a1.channels, tr.a1.height, tr.a1.width);
    avgpool2_backward(dp1, da1_pool);
    for (std::size_t i = 0; i < da1.v.size(); ++i) da1.v[i] += da1_pool.v[i];
    relu_backward_inplace(tr.a1, da1);
    Tensor3<T> dinput(tr.input.channels, h, w);
    conv3x3_backward(tr.input, block(kEnc1W), block(kEnc1B), da1, dinput, /*want_data_grad=*/false);
    // gradients w.r.t. the raw image are discarded: the image is data.
}

template <typename T>
std::size_t ToyNet<T>::parameter_count() const {
    std::size_t n = 0;
    for (const ParamBlock<T>& p : params_) n += p.count();
    return n;
}

template <typename T>
std::vector<double> ToyNet<T>::parameters_flat() const {
    std::vector<double> flat;
    flat.reserve(parameter_count());
    for (const ParamBlock<T>& p : params_) {
        for (const T v : p.value) flat.push_back(static_cast<double>(v));
    }
    return flat;
}

template <typename T>
void ToyNet<T>::set_parameters_flat(std::span<const double> flat) {
    if (flat.size() != parameter_count()) throw InvalidInputError("flat parameter size mismatch");
    std::size_t i = 0;
    for (ParamBlock<T>& p : params_) {
        for (T& v : p.value) v = static_cast<T>(flat[i++]);
    }
}

template <typename T>
std::vector<double> ToyNet<T>::gradients_flat() const {
    std::vector<double> flat;
    flat.reserve(parameter_count());
    for (const ParamBlock<T>& p : params_) {
        for (const T v : p.grad) flat.push_back(static_cast<double>(v));
    }
    return flat;
}

template class ToyNet<float>;
template class ToyNet<double>;

}  // namespace softmorph
