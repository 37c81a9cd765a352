#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "softmorph/grid.hpp"

namespace softmorph {

/// Encoder/decoder sizing. Widths are the three encoder stage channel
/// counts; the decoder mirrors them. in_channels 3 replicates the grayscale
/// input across channels.
struct NetConfig {
    int in_channels = 1;
    std::array<int, 3> widths{8, 16, 32};
};

/// Channel-major (C, H, W) dense tensor.
template <typename T>
struct Tensor3 {
    int channels = 0, height = 0, width = 0;
    std::vector<T> v;

    Tensor3() = default;
    Tensor3(int c, int h, int w) : channels(c), height(h), width(w), v(static_cast<std::size_t>(c) * h * w, T(0)) {}
    T* plane(int c) { return v.data() + static_cast<std::size_t>(c) * height * width; }
    const T* plane(int c) const { return v.data() + static_cast<std::size_t>(c) * height * width; }
    std::size_t size() const { return v.size(); }
};

template <typename T>
struct ParamBlock {
    std::string name;
    std::vector<int> shape;
    std::vector<T> value;
    std::vector<T> grad;

    std::size_t count() const { return value.size(); }
};

/// Minimal segmentation + classification network: three conv/relu/avgpool
/// encoder stages, a mirrored bilinear-upsampling decoder with skip
/// concatenations ending in a 1x1 logit head, and a classifier reading the
/// global-average-pooled bottleneck. Inputs must be divisible by 8 in both
/// dimensions. Instantiate with T = float for training speed, T = double
/// for gradient checking.
template <typename T>
class ToyNet {
public:
    ToyNet(const NetConfig& config, uint64_t seed);

    const NetConfig& config() const { return config_; }

    std::vector<ParamBlock<T>>& params() { return params_; }
    const std::vector<ParamBlock<T>>& params() const { return params_; }
    void zero_grad();

    struct Output {
        Grid logits;
        double malig_logit;
    };

    /// Activations kept for the backward pass.
    struct Trace {
        Tensor3<T> input;             // possibly channel-replicated
        Tensor3<T> a1, p1, a2, p2, a3, bottleneck;
        Tensor3<T> up3, cat3, d3, up2, cat2, d2, up1, cat1, d1;
        std::vector<T> pooled;        // classifier input
    };

    Output forward(const GrayImage& image) const;
    Output forward(const GrayImage& image, Trace& trace) const;

    /// Accumulates parameter gradients from the output seeds
    /// (d loss / d logits, d loss / d malignancy logit).
    void backward(const Trace& trace, const Grid& dlogits, double dmalig_logit);

    std::size_t parameter_count() const;
    std::vector<double> parameters_flat() const;
    void set_parameters_flat(std::span<const double> flat);
    std::vector<double> gradients_flat() const;

private:
    NetConfig config_;
    std::vector<ParamBlock<T>> params_;

    const ParamBlock<T>& block(int index) const { return params_[index]; }
    ParamBlock<T>& block(int index) { return params_[index]; }
};

using ToyNetF = ToyNet<float>;
using ToyNetD = ToyNet<double>;

}  // namespace softmorph
