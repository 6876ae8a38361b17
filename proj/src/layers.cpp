#include "fedbary/layers.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace fedbary {

void validate_layer_specs(const std::vector<LayerSpec>& specs) {
    if (specs.empty())
        throw std::invalid_argument("layer specs: empty architecture");
    bool seen_bayesian = false;
    for (std::size_t i = 0; i < specs.size(); ++i) {
        const LayerSpec& s = specs[i];
        if (s.inputs == 0 || s.outputs == 0)
            throw std::invalid_argument("layer specs: zero width");
        if (i > 0 && specs[i - 1].outputs != s.inputs)
            throw std::invalid_argument("layer specs: widths do not chain");
        const bool last = (i + 1 == specs.size());
        if (last != (s.activation == Activation::SoftmaxOutput))
            throw std::invalid_argument("layer specs: softmax-output must be exactly the last layer");
        if (s.kind == LayerKind::Bayesian)
            seen_bayesian = true;
        else if (seen_bayesian)
            throw std::invalid_argument("layer specs: Bayesian layers must form a suffix");
    }
}

std::size_t PosteriorParams::bayesian_parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers)
        if (const auto* g = std::get_if<GaussianLayer>(&l))
            n += g->weight_means.size() + g->bias_means.size();
    return n;
}

std::size_t PosteriorParams::total_parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) {
        if (const auto* g = std::get_if<GaussianLayer>(&l))
            n += g->weight_means.size() + g->bias_means.size();
        else
            n += std::get<PointMassLayer>(l).weights.size() +
                 std::get<PointMassLayer>(l).biases.size();
    }
    return n;
}

bool PosteriorParams::same_structure(const PosteriorParams& other) const {
    if (layers.size() != other.layers.size()) return false;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        if (layers[i].index() != other.layers[i].index()) return false;
        if (const auto* g = std::get_if<GaussianLayer>(&layers[i])) {
            const auto& o = std::get<GaussianLayer>(other.layers[i]);
            if (g->inputs != o.inputs || g->outputs != o.outputs) return false;
        } else {
            const auto& p = std::get<PointMassLayer>(layers[i]);
            const auto& o = std::get<PointMassLayer>(other.layers[i]);
            if (p.inputs != o.inputs || p.outputs != o.outputs) return false;
        }
    }
    return true;
}

void validate_params_against_specs(const PosteriorParams& params,
                                   const std::vector<LayerSpec>& specs) {
    if (params.layers.size() != specs.size())
        throw std::invalid_argument("params/specs: layer count mismatch");
    for (std::size_t i = 0; i < specs.size(); ++i) {
        const LayerSpec& s = specs[i];
        const std::size_t nw = s.inputs * s.outputs;
        if (s.kind == LayerKind::Bayesian) {
            const auto* g = std::get_if<GaussianLayer>(&params.layers[i]);
            if (!g || g->inputs != s.inputs || g->outputs != s.outputs ||
                g->weight_means.size() != nw || g->weight_rhos.size() != nw ||
                g->bias_means.size() != s.outputs || g->bias_rhos.size() != s.outputs)
                throw std::invalid_argument("params/specs: Bayesian layer shape mismatch");
        } else {
            const auto* p = std::get_if<PointMassLayer>(&params.layers[i]);
            if (!p || p->inputs != s.inputs || p->outputs != s.outputs ||
                p->weights.size() != nw || p->biases.size() != s.outputs)
                throw std::invalid_argument("params/specs: deterministic layer shape mismatch");
        }
    }
}

namespace {

constexpr std::uint32_t kMagic = 0x46425043;  // "FBPC"
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4))
        throw std::runtime_error("checkpoint: truncated header");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void write_f64s(std::ostream& os, const std::vector<double>& v) {
    static_assert(sizeof(double) == 8);
    for (double x : v) {
        std::uint64_t u;
        std::memcpy(&u, &x, 8);
        unsigned char b[8];
        for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(u >> (8 * i));
        os.write(reinterpret_cast<const char*>(b), 8);
    }
}

std::vector<double> read_f64s(std::istream& is, std::size_t n) {
    std::vector<double> v(n);
    for (std::size_t j = 0; j < n; ++j) {
        unsigned char b[8];
        if (!is.read(reinterpret_cast<char*>(b), 8))
            throw std::runtime_error("checkpoint: truncated array");
        std::uint64_t u = 0;
        for (int i = 0; i < 8; ++i) u |= static_cast<std::uint64_t>(b[i]) << (8 * i);
        std::memcpy(&v[j], &u, 8);
    }
    return v;
}

}  // namespace

void save_checkpoint(const PosteriorParams& params, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("checkpoint: cannot open " + path.string());
    write_u32(os, kMagic);
    write_u32(os, kVersion);
    write_u32(os, static_cast<std::uint32_t>(params.layers.size()));
    for (const auto& l : params.layers) {
        if (const auto* g = std::get_if<GaussianLayer>(&l)) {
            write_u32(os, 1);
            write_u32(os, static_cast<std::uint32_t>(g->inputs));
            write_u32(os, static_cast<std::uint32_t>(g->outputs));
            write_f64s(os, g->weight_means);
            write_f64s(os, g->weight_rhos);
            write_f64s(os, g->bias_means);
            write_f64s(os, g->bias_rhos);
        } else {
            const auto& p = std::get<PointMassLayer>(l);
            write_u32(os, 0);
            write_u32(os, static_cast<std::uint32_t>(p.inputs));
            write_u32(os, static_cast<std::uint32_t>(p.outputs));
            write_f64s(os, p.weights);
            write_f64s(os, p.biases);
        }
    }
    if (!os) throw std::runtime_error("checkpoint: write failed for " + path.string());
}

PosteriorParams load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open " + path.string());
    if (read_u32(is) != kMagic) throw std::runtime_error("checkpoint: bad magic");
    if (read_u32(is) != kVersion) throw std::runtime_error("checkpoint: unsupported version");
    const std::uint32_t n_layers = read_u32(is);
    PosteriorParams params;
    params.layers.reserve(n_layers);
    for (std::uint32_t i = 0; i < n_layers; ++i) {
        const std::uint32_t kind = read_u32(is);
        const std::size_t in = read_u32(is);
        const std::size_t out = read_u32(is);
        if (kind == 1) {
            GaussianLayer g;
            g.inputs = in;
            g.outputs = out;
            g.weight_means = read_f64s(is, in * out);
            g.weight_rhos = read_f64s(is, in * out);
            g.bias_means = read_f64s(is, out);
            g.bias_rhos = read_f64s(is, out);
            params.layers.emplace_back(std::move(g));
        } else if (kind == 0) {
            PointMassLayer p;
            p.inputs = in;
            p.outputs = out;
            p.weights = read_f64s(is, in * out);
            p.biases = read_f64s(is, out);
            params.layers.emplace_back(std::move(p));
        } else {
            throw std::runtime_error("checkpoint: unknown layer kind");
        }
    }
    return params;
}

}  // namespace fedbary
