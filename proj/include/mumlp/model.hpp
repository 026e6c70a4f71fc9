#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "error.hpp"
#include "ops.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace mumlp {

/// Architecture hyperparameters. Field names double as checkpoint/config keys.
struct ModelConfig {
    std::size_t bands = 144;       // C: spectral bands per pixel
    std::size_t classes = 15;      // cls
    std::size_t pixel_c = 256;     // P: Pixel-C width, a power of two
    std::size_t msc_hidden = 512;  // hidden width of the spectral MLP
    std::size_t gen_c = 0;         // G: Gen-C channels; 0 means "same as classes"
    std::size_t n_msc_stack = 2;
    std::size_t n_umlp_stack = 4;
    std::size_t u_depth = 3;
    double dropout_p = 0.1;
    double eps = 1e-5;
    bool enable_msc2 = true;
    bool enable_umlp = true;
    bool mixer_residual = false;

    std::size_t gen_channels() const { return gen_c == 0 ? classes : gen_c; }

    void validate() const {
        auto fail = [](const std::string& msg) { throw Error(ErrorKind::ConfigError, msg); };
        if (bands < 1) fail("bands must be >= 1");
        if (classes < 2) fail("classes must be >= 2");
        if (pixel_c == 0 || (pixel_c & (pixel_c - 1)) != 0) fail("pixel_c must be a power of two, got " + std::to_string(pixel_c));
        if (u_depth >= 63 || pixel_c % (std::size_t{1} << u_depth) != 0) {
            fail("pixel_c " + std::to_string(pixel_c) + " not divisible by 2^u_depth (u_depth=" + std::to_string(u_depth) + ")");
        }
        if (msc_hidden < 1) fail("msc_hidden must be >= 1");
        if (gen_channels() < 2) fail("gen_c must be >= 2");
        if (n_msc_stack < 1) fail("n_msc_stack must be >= 1");
        if (n_umlp_stack < 1) fail("n_umlp_stack must be >= 1");
        if (!(dropout_p >= 0.0 && dropout_p < 1.0)) fail("dropout_p must lie in [0, 1)");
        if (!(eps > 0.0)) fail("eps must be positive");
    }

    bool operator==(const ModelConfig&) const = default;
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = nlohmann::json{{"bands", c.bands},
                       {"classes", c.classes},
                       {"pixel_c", c.pixel_c},
                       {"msc_hidden", c.msc_hidden},
                       {"gen_c", c.gen_c},
                       {"n_msc_stack", c.n_msc_stack},
                       {"n_umlp_stack", c.n_umlp_stack},
                       {"u_depth", c.u_depth},
                       {"dropout_p", c.dropout_p},
                       {"eps", c.eps},
                       {"enable_msc2", c.enable_msc2},
                       {"enable_umlp", c.enable_umlp},
                       {"mixer_residual", c.mixer_residual}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
    ModelConfig d;
    c.bands = j.value("bands", d.bands);
    c.classes = j.value("classes", d.classes);
    c.pixel_c = j.value("pixel_c", d.pixel_c);
    c.msc_hidden = j.value("msc_hidden", d.msc_hidden);
    c.gen_c = j.value("gen_c", d.gen_c);
    c.n_msc_stack = j.value("n_msc_stack", d.n_msc_stack);
    c.n_umlp_stack = j.value("n_umlp_stack", d.n_umlp_stack);
    c.u_depth = j.value("u_depth", d.u_depth);
    c.dropout_p = j.value("dropout_p", d.dropout_p);
    c.eps = j.value("eps", d.eps);
    c.enable_msc2 = j.value("enable_msc2", d.enable_msc2);
    c.enable_umlp = j.value("enable_umlp", d.enable_umlp);
    c.mixer_residual = j.value("mixer_residual", d.mixer_residual);
}

/// Declared shape of one named parameter. `axis_fields` names the config
/// field that fixes each axis, for diagnostics when a checkpoint disagrees.
struct ParamSpec {
    enum class Init { Uniform, Ones, Zeros };
    std::string name;
    Shape shape;
    std::vector<std::string> axis_fields;
    Init init = Init::Uniform;
    double bound = 0.0;
};

/// Widths visited by one U-shape pass, plus the (decoder output, skip) shape
/// pairs that were summed. Filled on request by umlp_forward.
struct UmlpTrace {
    std::vector<std::size_t> widths;
    std::vector<std::pair<Shape, Shape>> skip_shapes;
};

struct ParameterCount {
    std::map<std::string, std::size_t> breakdown;  // keyed by block
    std::size_t norms = 0;                         // LayerNorm subtotal, overlaps the blocks
    std::size_t total = 0;
};

namespace detail {

inline std::string block_of(const std::string& name) { return name.substr(0, name.find('.')); }

inline std::vector<ParamSpec> declare_parameters(const ModelConfig& cfg) {
    const std::size_t C = cfg.bands, P = cfg.pixel_c, G = cfg.gen_channels(), H = cfg.msc_hidden;
    std::vector<ParamSpec> specs;
    auto affine = [&specs](const std::string& prefix, std::size_t in, std::size_t out, std::string in_field,
                           std::string out_field) {
        const double bound = std::sqrt(1.0 / static_cast<double>(in));
        specs.push_back({prefix + ".weight", {in, out}, {in_field, out_field}, ParamSpec::Init::Uniform, bound});
        specs.push_back({prefix + ".bias", {out}, {out_field}, ParamSpec::Init::Uniform, bound});
    };
    auto norm = [&specs](const std::string& prefix, std::size_t d, std::string field) {
        specs.push_back({prefix + ".gamma", {d}, {field}, ParamSpec::Init::Ones, 0.0});
        specs.push_back({prefix + ".beta", {d}, {field}, ParamSpec::Init::Zeros, 0.0});
    };

    norm("msc1.norm", C, "bands");
    affine("msc1.fc1", C, H, "bands", "msc_hidden");
    affine("msc1.fc2", H, P, "msc_hidden", "pixel_c");

    affine("gen_c.conv", 1, G, "1", "gen_c");
    norm("gen_c.norm", G, "gen_c");

    if (cfg.enable_msc2) {
        for (std::size_t i = 0; i < cfg.n_msc_stack; ++i) {
            const std::string p = "msc." + std::to_string(i);
            affine(p + ".conv", G, G, "gen_c", "gen_c");
            norm(p + ".norm", G, "gen_c");
        }
    }

    for (std::size_t s = 0; s < cfg.n_umlp_stack; ++s) {
        const std::string m = "mixer." + std::to_string(s);
        affine(m + ".token", P, P, "pixel_c", "pixel_c");
        affine(m + ".channel", G, G, "gen_c", "gen_c");
        norm(m + ".norm", G, "gen_c");
    }
    if (cfg.enable_umlp) {
        for (std::size_t s = 0; s < cfg.n_umlp_stack; ++s) {
            const std::string u = "umlp." + std::to_string(s);
            std::size_t w = P;
            for (std::size_t l = 0; l < cfg.u_depth; ++l, w /= 2) {
                const std::string e = u + ".enc." + std::to_string(l);
                affine(e + ".gen", G, G, "gen_c", "gen_c");
                affine(e + ".width", w, w / 2, "pixel_c", "pixel_c");
                norm(e + ".norm", G, "gen_c");
            }
            norm(u + ".mid.norm", G, "gen_c");
            for (std::size_t l = 0; l < cfg.u_depth; ++l, w *= 2) {
                const std::string d = u + ".dec." + std::to_string(l);
                affine(d + ".gen", G, G, "gen_c", "gen_c");
                affine(d + ".width", w, w * 2, "pixel_c", "pixel_c");
                norm(d + ".norm", G, "gen_c");
            }
        }
    }

    affine("head", G, cfg.classes, "gen_c", "classes");
    return specs;
}

}  // namespace detail

/// Parameter totals straight from the declared shapes; needs no tensors.
inline ParameterCount count_parameters(const ModelConfig& cfg) {
    cfg.validate();
    ParameterCount count;
    for (const auto& spec : detail::declare_parameters(cfg)) {
        const std::size_t n = numel(spec.shape);
        count.breakdown[detail::block_of(spec.name)] += n;
        if (spec.name.find(".norm.") != std::string::npos) count.norms += n;
        count.total += n;
    }
    return count;
}

/// Forward-pass arithmetic estimate for `batch` pixels (inference mode).
/// Matrix products cost 2*m*k*n; biases, activations, residual and skip adds
/// one op per element; LayerNorm five per element. Transposes and dropout
/// are free. This is a count, not a hardware measurement.
inline std::uint64_t estimate_flops(const ModelConfig& cfg, std::uint64_t batch) {
    cfg.validate();
    using u64 = std::uint64_t;
    const u64 C = cfg.bands, P = cfg.pixel_c, G = cfg.gen_channels(), H = cfg.msc_hidden, K = cfg.classes;
    auto affine = [](u64 rows, u64 in, u64 out) { return rows * (2 * in * out + out); };
    auto norm = [](u64 rows, u64 d) { return rows * 5 * d; };

    u64 per_pixel = norm(1, C) + affine(1, C, H) + H + affine(1, H, P);
    per_pixel += affine(P, 1, G) + norm(P, G);
    if (cfg.enable_msc2) per_pixel += cfg.n_msc_stack * (affine(P, G, G) + norm(P, G));
    u64 mixer = affine(G, P, P) + P * G + affine(P, G, G) + norm(P, G);
    if (cfg.mixer_residual) mixer += P * G;
    u64 umlp = 0;
    if (cfg.enable_umlp) {
        u64 w = P;
        for (std::size_t l = 0; l < cfg.u_depth; ++l, w /= 2) umlp += affine(w, G, G) + affine(G, w, w / 2) + norm(w / 2, G);
        umlp += norm(w, G);
        for (std::size_t l = 0; l < cfg.u_depth; ++l, w *= 2)
            umlp += affine(w, G, G) + affine(G, w, 2 * w) + 2 * w * G + norm(2 * w, G);
    }
    per_pixel += cfg.n_umlp_stack * (mixer + umlp);
    per_pixel += P * G + affine(1, G, K);
    return per_pixel * batch;
}

/// MUMLP pixel classifier with its named parameter set.
template <class T>
class Model {
public:
    explicit Model(ModelConfig config, std::uint64_t seed = 0) : config_(std::move(config)) {
        config_.validate();
        specs_ = detail::declare_parameters(config_);
        const RngStream root = RngStream(seed).split("init");
        params_.reserve(specs_.size());
        for (std::size_t i = 0; i < specs_.size(); ++i) {
            const auto& spec = specs_[i];
            std::vector<T> values(numel(spec.shape));
            RngStream rng = root.split(spec.name);
            for (auto& v : values) {
                switch (spec.init) {
                    case ParamSpec::Init::Uniform: v = static_cast<T>(rng.uniform(-spec.bound, spec.bound)); break;
                    case ParamSpec::Init::Ones: v = T{1}; break;
                    case ParamSpec::Init::Zeros: v = T{0}; break;
                }
            }
            params_.push_back(Tensor<T>::from(spec.shape, std::move(values), true));
            index_.emplace(spec.name, i);
        }
    }

    const ModelConfig& config() const { return config_; }
    const std::vector<ParamSpec>& specs() const { return specs_; }
    std::size_t num_tensors() const { return params_.size(); }
    const std::string& name(std::size_t i) const { return specs_[i].name; }
    Tensor<T>& tensor(std::size_t i) { return params_[i]; }
    const Tensor<T>& tensor(std::size_t i) const { return params_[i]; }

    bool has(const std::string& name) const { return index_.contains(name); }
    const Tensor<T>& param(const std::string& name) const { return params_[lookup(name)]; }
    Tensor<T>& param(const std::string& name) { return params_[lookup(name)]; }

    void zero_grad() {
        for (auto& p : params_) p.zero_grad();
    }

    /// Deep copy with independent parameter storage.
    Model clone() const {
        Model copy = *this;
        for (auto& p : copy.params_) p = Tensor<T>::from(p.shape(), std::vector<T>(p.data().begin(), p.data().end()), true);
        return copy;
    }

    /// Same architecture and values at another scalar precision.
    template <class U>
    Model<U> cast() const {
        Model<U> out(config_);
        for (std::size_t i = 0; i < params_.size(); ++i) {
            auto src = params_[i].data();
            auto dst = out.tensor(i).data();
            for (std::size_t k = 0; k < src.size(); ++k) dst[k] = static_cast<U>(src[k]);
        }
        return out;
    }

    /// Spectral embedding: dropout(fc2(gelu(fc1(layer_norm(x))))), [B x C] -> [B x P].
    Tensor<T> msc1_forward(const Tensor<T>& x, bool training, RngStream& rng) const {
        if (x.rank() != 2 || x.dim(1) != config_.bands) {
            throw Error(ErrorKind::ShapeMismatch, "msc1 expects [B x " + std::to_string(config_.bands) + "], got " +
                                                      to_string(x.shape()));
        }
        auto h = norm(x, "msc1.norm");
        h = affine(h, "msc1.fc1");
        h = gelu(h);
        h = affine(h, "msc1.fc2");
        return dropout(h, config_.dropout_p, training, rng);
    }

    /// 1x1 convolution from one channel to G channels at every Pixel-C
    /// position, then LayerNorm over G: [B x P] -> [B x P x G].
    Tensor<T> msc2_forward(const Tensor<T>& x) const {
        if (x.rank() != 2 || x.dim(1) != config_.pixel_c) {
            throw Error(ErrorKind::ShapeMismatch, "msc2 expects [B x " + std::to_string(config_.pixel_c) + "], got " +
                                                      to_string(x.shape()));
        }
        auto h = reshape(x, {x.dim(0), config_.pixel_c, 1});
        h = affine(h, "gen_c.conv");
        return norm(h, "gen_c.norm");
    }

    /// Stacked per-position G -> G refinements after the Gen-C expansion.
    Tensor<T> msc_stack_forward(const Tensor<T>& u) const {
        check_pgc(u, "msc stack");
        if (!config_.enable_msc2) return u;
        auto h = u;
        for (std::size_t i = 0; i < config_.n_msc_stack; ++i) {
            const std::string p = "msc." + std::to_string(i);
            h = norm(affine(h, p + ".conv"), p + ".norm");
        }
        return h;
    }

    /// Token mixing along Pixel-C, GELU, dropout, channel mixing along Gen-C,
    /// dropout, optional residual, LayerNorm over Gen-C.
    Tensor<T> mixer_block_forward(const Tensor<T>& u, std::size_t stack, bool training, RngStream& rng) const {
        check_pgc(u, "mixer block");
        const std::string m = "mixer." + std::to_string(stack);
        auto h = transpose_last2(u);  // [B x G x P]
        h = affine(h, m + ".token");
        h = gelu(h);
        h = dropout(h, config_.dropout_p, training, rng);
        h = transpose_last2(h);  // [B x P x G]
        h = affine(h, m + ".channel");
        h = dropout(h, config_.dropout_p, training, rng);
        if (config_.mixer_residual) h = add(h, u);
        return norm(h, m + ".norm");
    }

    /// U-shape pass over the Pixel-C axis. Each encoder stage mixes along
    /// Gen-C, rotates, halves the width, rotates back and normalizes; decoder
    /// stages double the width and add the encoder activation of equal width.
    Tensor<T> umlp_forward(const Tensor<T>& x, std::size_t stack, UmlpTrace* trace = nullptr) const {
        check_pgc(x, "umlp");
        const std::string u = "umlp." + std::to_string(stack);
        std::vector<Tensor<T>> skips{x};
        auto h = x;
        if (trace) trace->widths.push_back(h.dim(1));
        for (std::size_t l = 0; l < config_.u_depth; ++l) {
            const std::string e = u + ".enc." + std::to_string(l);
            h = affine(h, e + ".gen");
            h = transpose_last2(h);
            h = affine(h, e + ".width");
            h = transpose_last2(h);
            h = norm(h, e + ".norm");
            if (trace) trace->widths.push_back(h.dim(1));
            skips.push_back(h);
        }
        h = norm(h, u + ".mid.norm");
        for (std::size_t l = 0; l < config_.u_depth; ++l) {
            const std::string d = u + ".dec." + std::to_string(l);
            h = affine(h, d + ".gen");
            h = transpose_last2(h);
            h = affine(h, d + ".width");
            h = transpose_last2(h);
            const auto& skip = skips[config_.u_depth - 1 - l];
            if (trace) {
                trace->widths.push_back(h.dim(1));
                trace->skip_shapes.emplace_back(h.shape(), skip.shape());
            }
            h = norm(add(h, skip), d + ".norm");
        }
        return h;
    }

    /// Pixels [B x C] to logits [B x cls].
    Tensor<T> forward(const Tensor<T>& pixels, bool training, RngStream& rng) const {
        auto x = msc1_forward(pixels, training, rng);
        auto u = msc2_forward(x);
        u = msc_stack_forward(u);
        for (std::size_t s = 0; s < config_.n_umlp_stack; ++s) {
            u = mixer_block_forward(u, s, training, rng);
            if (config_.enable_umlp) u = umlp_forward(u, s);
        }
        auto pooled = mean_axis(u, 1);  // [B x G]
        return affine(pooled, "head");
    }

    /// Inference forward with no graph recording.
    Tensor<T> predict_logits(const Tensor<T>& pixels) const {
        NoGradGuard guard;
        RngStream unused;
        return forward(pixels, false, unused);
    }

    ParameterCount count_parameters() const { return mumlp::count_parameters(config_); }

private:
    std::size_t lookup(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw Error(ErrorKind::ConfigError, "no parameter named '" + name + "'");
        return it->second;
    }

    Tensor<T> affine(const Tensor<T>& x, const std::string& prefix) const {
        return linear(x, param(prefix + ".weight"), param(prefix + ".bias"));
    }

    Tensor<T> norm(const Tensor<T>& x, const std::string& prefix) const {
        return layer_norm(x, param(prefix + ".gamma"), param(prefix + ".beta"), config_.eps);
    }

    void check_pgc(const Tensor<T>& u, const char* where) const {
        if (u.rank() != 3 || u.dim(1) != config_.pixel_c || u.dim(2) != config_.gen_channels()) {
            throw Error(ErrorKind::ShapeMismatch, std::string(where) + " expects [B x " + std::to_string(config_.pixel_c) +
                                                      " x " + std::to_string(config_.gen_channels()) + "], got " +
                                                      to_string(u.shape()));
        }
    }

    ModelConfig config_;
    std::vector<ParamSpec> specs_;
    std::vector<Tensor<T>> params_;
    std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace mumlp
