#pragma once

#include <filesystem>

#include "softmorph/errors.hpp"
#include "softmorph/features.hpp"
#include "softmorph/prior.hpp"
#include "softmorph/toynet.hpp"

namespace softmorph {

struct NamedTensor {
    std::string name;
    std::vector<int> shape;
    std::vector<double> values;
};

/// Everything needed to reproduce evaluation bitwise: network parameters
/// (stored as 64-bit reals), the prior-weight logits, both normalizer
/// states, and run provenance.
///
/// On disk this is a little-endian binary container:
///   magic "SMCP" | u32 version (1)
///   u32 in_channels | u32 widths[3]
///   f64 prior_u[4]
///   2 x normalizer: f64 running_min | f64 running_max | f64 momentum | u8 initialized
///   u64 step | u64 seed
///   u32 n_blocks, each: u32 name_len | name | u32 ndim | u32 dims[] | f64 data[]
struct Checkpoint {
    NetConfig net;
    std::vector<NamedTensor> net_params;
    Vec4 prior_u{0.0, 0.0, 0.0, 0.0};
    EmaNormalizer norm_roughness{0.99};
    EmaNormalizer norm_texture{0.99};
    int64_t step = 0;
    uint64_t seed = 0;

    void save(const std::filesystem::path& path) const;
    static Checkpoint load(const std::filesystem::path& path);

    PriorWeights prior() const { return PriorWeights{prior_u}; }

    /// Rebuild a network (any precision) from the stored parameters.
    template <typename T>
    ToyNet<T> build_net() const {
        ToyNet<T> net_out(net, /*seed=*/0);
        auto& blocks = net_out.params();
        if (blocks.size() != net_params.size()) {
            throw InvalidInputError("checkpoint block count does not match architecture");
        }
        for (std::size_t b = 0; b < blocks.size(); ++b) {
            if (blocks[b].name != net_params[b].name || blocks[b].count() != net_params[b].values.size()) {
                throw InvalidInputError("checkpoint block " + net_params[b].name + " does not match architecture");
            }
            for (std::size_t i = 0; i < blocks[b].value.size(); ++i) {
                blocks[b].value[i] = static_cast<T>(net_params[b].values[i]);
            }
        }
        return net_out;
    }

    template <typename T>
    static Checkpoint capture(const ToyNet<T>& net_in, const PriorWeights& prior, const EmaNormalizer& norm_roughness,
                              const EmaNormalizer& norm_texture, int64_t step, uint64_t seed) {
        Checkpoint ck;
        ck.net = net_in.config();
        for (const ParamBlock<T>& p : net_in.params()) {
            NamedTensor t{p.name, p.shape, {}};
            t.values.reserve(p.value.size());
            for (const T v : p.value) t.values.push_back(static_cast<double>(v));
            ck.net_params.push_back(std::move(t));
        }
        ck.prior_u = prior.u;
        ck.norm_roughness = norm_roughness;
        ck.norm_texture = norm_texture;
        ck.step = step;
        ck.seed = seed;
        return ck;
    }
};

}  // namespace softmorph
