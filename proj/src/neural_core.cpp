#include "catr/neural_core.hpp"

#include <Eigen/Core>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>

namespace catr {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatMap = Eigen::Map<const RowMat>;
using MatMap = Eigen::Map<RowMat>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;
using VecMap = Eigen::Map<Eigen::VectorXd>;

constexpr int kRouteInputs = 9;
constexpr int kNodeInputs = 6;

int slots_for_levels(int levels) {
    int total = 0;
    for (int l = 0, w = 1; l < levels; ++l, w *= 3) {
        total += w;
    }
    return total;
}

int level_begin(int level) { return slots_for_levels(level); }
int level_width(int level) {
    int w = 1;
    for (int l = 0; l < level; ++l) {
        w *= 3;
    }
    return w;
}

// y = act(W x + b)
void dense(const LayerShape& L, std::span<const double> p, const double* x, std::vector<double>& y) {
    y.resize(static_cast<std::size_t>(L.out));
    ConstMatMap W(p.data() + L.offset, L.out, L.in);
    ConstVecMap b(p.data() + L.offset + L.weight_count(), L.out);
    VecMap out(y.data(), L.out);
    out.noalias() = W * ConstVecMap(x, L.in) + b;
    if (L.activation) {
        out = out.array().tanh();
    }
}

// Given dL/dy (post-activation), accumulates parameter gradients and, when
// dx is non-null, writes dL/dx.
void dense_backward(const LayerShape& L, std::span<const double> p, const double* x, const std::vector<double>& y,
                    const double* dy, std::span<double> grad, double* dx, Eigen::VectorXd& scratch) {
    scratch = ConstVecMap(dy, L.out);
    if (L.activation) {
        scratch.array() *= 1.0 - ConstVecMap(y.data(), L.out).array().square();
    }
    MatMap dW(grad.data() + L.offset, L.out, L.in);
    VecMap db(grad.data() + L.offset + L.weight_count(), L.out);
    dW.noalias() += scratch * ConstVecMap(x, L.in).transpose();
    db += scratch;
    if (dx != nullptr) {
        ConstMatMap W(p.data() + L.offset, L.out, L.in);
        VecMap(dx, L.in).noalias() = W.transpose() * scratch;
    }
}

}  // namespace

// ---------------------------------------------------------------------------
// Layout and parameters

NetLayout::NetLayout(NetConfig config) : config_(std::move(config)) {
    if (config_.actions < 1 || config_.value_components < 1 || config_.hftr_levels < 0) {
        throw std::invalid_argument("invalid network configuration");
    }
    hftr_slots_ = slots_for_levels(config_.hftr_levels);
    input_size_ = kRouteInputs + kNodeInputs * hftr_slots_;

    int width = kRouteInputs;
    route_first_ = 0;
    for (int h : config_.route_hidden) {
        if (h < 1) {
            throw std::invalid_argument("route layer widths must be positive");
        }
        add_layer(width, h, true);
        width = h;
    }
    int concat = width;
    if (config_.hftr_levels > 0) {
        if (config_.node_embed < 1) {
            throw std::invalid_argument("node embedding width must be positive");
        }
        embed_ = add_layer(kNodeInputs, config_.node_embed, true);
        proj_first_ = static_cast<int>(layers_.size());
        for (int l = 0; l < config_.hftr_levels; ++l) {
            add_layer(config_.node_embed, config_.node_embed, true);
        }
        concat += config_.node_embed * config_.hftr_levels;
    }
    width = concat;
    if (config_.fusion > 0) {
        fusion_ = add_layer(width, config_.fusion, true);
        width = config_.fusion;
    }
    if (config_.trunk > 0) {
        trunk_ = add_layer(width, config_.trunk, true);
        width = config_.trunk;
    }
    actor_ = add_layer(width, config_.actions, false);
    critic_ = add_layer(width, config_.value_components, false);
}

int NetLayout::add_layer(int in, int out, bool activation) {
    LayerShape L{in, out, param_count_, activation};
    param_count_ += L.param_count();
    layers_.push_back(L);
    return static_cast<int>(layers_.size()) - 1;
}

std::vector<std::pair<std::size_t, std::size_t>> NetLayout::critic_path_ranges() const {
    std::vector<std::pair<std::size_t, std::size_t>> r;
    if (trunk_ >= 0) {
        const auto& t = layers_[static_cast<std::size_t>(trunk_)];
        r.emplace_back(t.offset, t.offset + t.param_count());
    }
    const auto& c = layers_[static_cast<std::size_t>(critic_)];
    r.emplace_back(c.offset, c.offset + c.param_count());
    return r;
}

std::vector<std::pair<std::uint32_t, std::uint32_t>> NetLayout::descriptor() const {
    std::vector<std::pair<std::uint32_t, std::uint32_t>> d;
    for (const auto& L : layers_) {
        d.emplace_back(static_cast<std::uint32_t>(L.in), static_cast<std::uint32_t>(L.out));
    }
    return d;
}

ModelParams::ModelParams(std::shared_ptr<const NetLayout> layout)
    : layout_(std::move(layout)), values_(layout_->param_count(), 0.0) {}

ModelParams init_params(std::shared_ptr<const NetLayout> layout, std::uint64_t seed) {
    ModelParams params(std::move(layout));
    std::mt19937_64 rng(seed);
    auto v = params.mutable_values();
    for (const auto& L : params.layout().layers()) {
        const double bound = std::sqrt(6.0 / static_cast<double>(L.in + L.out));
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (std::size_t i = 0; i < L.weight_count(); ++i) {
            v[L.offset + i] = dist(rng);
        }
    }
    return params;
}

// ---------------------------------------------------------------------------
// Distribution helpers

std::vector<double> masked_softmax(std::span<const double> logits, const ActionMaskBits& mask) {
    if (mask.size() != logits.size()) {
        throw ContractViolation("mask size does not match logit count");
    }
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < logits.size(); ++i) {
        if (mask[i]) {
            mx = std::max(mx, logits[i]);
        }
    }
    if (!std::isfinite(mx)) {
        throw ContractViolation("action mask has no valid entry");
    }
    std::vector<double> p(logits.size(), 0.0);
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        if (mask[i]) {
            p[i] = std::exp(logits[i] - mx);
            sum += p[i];
        }
    }
    for (double& x : p) {
        x /= sum;
    }
    return p;
}

std::vector<double> masked_softmax_backward(std::span<const double> probs, std::span<const double> dprobs) {
    double dot = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        dot += probs[i] * dprobs[i];
    }
    std::vector<double> d(probs.size());
    for (std::size_t i = 0; i < probs.size(); ++i) {
        d[i] = probs[i] * (dprobs[i] - dot);
    }
    return d;
}

int sample_action(std::span<const double> probs, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    const double u = u01(rng);
    double cum = 0.0;
    int last_valid = -1;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        if (probs[i] <= 0.0) {
            continue;
        }
        last_valid = static_cast<int>(i);
        cum += probs[i];
        if (u < cum) {
            return last_valid;
        }
    }
    return last_valid;
}

double log_prob(std::span<const double> probs, int action) {
    const double p = probs[static_cast<std::size_t>(action)];
    return p > 0.0 ? std::log(p) : -std::numeric_limits<double>::infinity();
}

double entropy(std::span<const double> probs) {
    double h = 0.0;
    for (double p : probs) {
        if (p > 0.0) {
            h -= p * std::log(p);
        }
    }
    return h;
}

int argmax_valid(std::span<const double> scores, const ActionMaskBits& mask) {
    int best = -1;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (mask[i] && (best < 0 || scores[i] > scores[static_cast<std::size_t>(best)])) {
            best = static_cast<int>(i);
        }
    }
    if (best < 0) {
        throw ContractViolation("argmax over an empty mask");
    }
    return best;
}

// ---------------------------------------------------------------------------
// Forward / backward

void forward_into(const ModelParams& params, std::span<const double> observation, const ActionMaskBits& mask,
                  ForwardOutput& out) {
    const NetLayout& layout = params.layout();
    const auto& cfg = layout.config();
    const auto& layers = layout.layers();
    const auto p = params.values();
    if (static_cast<int>(observation.size()) != layout.input_size()) {
        throw ContractViolation("observation has " + std::to_string(observation.size()) + " entries, network expects " +
                                std::to_string(layout.input_size()));
    }
    if (static_cast<int>(mask.size()) != cfg.actions) {
        throw ContractViolation("mask size does not match action count");
    }

    out.params = &params;
    out.version = params.version();
    out.input.assign(observation.begin(), observation.end());

    out.route_act.resize(static_cast<std::size_t>(layout.route_depth()) + 1);
    out.route_act[0].assign(observation.begin(), observation.begin() + kRouteInputs);
    for (int i = 0; i < layout.route_depth(); ++i) {
        dense(layers[static_cast<std::size_t>(layout.route_layer(i))], p, out.route_act[static_cast<std::size_t>(i)].data(),
              out.route_act[static_cast<std::size_t>(i) + 1]);
    }
    out.concat = out.route_act.back();

    const int levels = cfg.hftr_levels;
    out.node_act.resize(static_cast<std::size_t>(layout.hftr_slots()));
    out.pooled.resize(static_cast<std::size_t>(levels));
    out.pooled_count.assign(static_cast<std::size_t>(levels), 0);
    out.level_act.resize(static_cast<std::size_t>(levels));
    if (levels > 0) {
        const auto& embed = layers[static_cast<std::size_t>(layout.embed_layer())];
        for (int l = 0; l < levels; ++l) {
            auto& pooled = out.pooled[static_cast<std::size_t>(l)];
            pooled.assign(static_cast<std::size_t>(cfg.node_embed), 0.0);
            int count = 0;
            for (int s = level_begin(l); s < level_begin(l) + level_width(l); ++s) {
                const double* node = observation.data() + kRouteInputs + kNodeInputs * s;
                auto& act = out.node_act[static_cast<std::size_t>(s)];
                if (node[kNodeInputs - 1] <= 0.5) {
                    act.clear();
                    continue;
                }
                dense(embed, p, node, act);
                VecMap(pooled.data(), cfg.node_embed) += ConstVecMap(act.data(), cfg.node_embed);
                ++count;
            }
            if (count > 0) {
                VecMap(pooled.data(), cfg.node_embed) /= static_cast<double>(count);
            }
            out.pooled_count[static_cast<std::size_t>(l)] = count;
            dense(layers[static_cast<std::size_t>(layout.proj_layer(l))], p, pooled.data(),
                  out.level_act[static_cast<std::size_t>(l)]);
            out.concat.insert(out.concat.end(), out.level_act[static_cast<std::size_t>(l)].begin(),
                              out.level_act[static_cast<std::size_t>(l)].end());
        }
    }

    const std::vector<double>* h = &out.concat;
    if (layout.fusion_layer() >= 0) {
        dense(layers[static_cast<std::size_t>(layout.fusion_layer())], p, h->data(), out.fusion_act);
        h = &out.fusion_act;
    }
    if (layout.trunk_layer() >= 0) {
        dense(layers[static_cast<std::size_t>(layout.trunk_layer())], p, h->data(), out.trunk_act);
        h = &out.trunk_act;
    }
    out.head_input = *h;
    dense(layers[static_cast<std::size_t>(layout.actor_layer())], p, out.head_input.data(), out.logits);
    dense(layers[static_cast<std::size_t>(layout.critic_layer())], p, out.head_input.data(), out.value_vec);
    out.action_probs = masked_softmax(out.logits, mask);
}

ForwardOutput forward(const ModelParams& params, std::span<const double> observation, const ActionMaskBits& mask) {
    ForwardOutput out;
    forward_into(params, observation, mask, out);
    return out;
}

void backward_accumulate(const ModelParams& params, const ForwardOutput& cache, std::span<const double> dlogits,
                         std::span<const double> dvalues, std::span<double> grad, GradScope scope) {
    if (cache.params != &params || cache.version != params.version()) {
        throw ContractViolation("forward cache is stale: parameters changed since forward");
    }
    const NetLayout& layout = params.layout();
    const auto& cfg = layout.config();
    const auto& layers = layout.layers();
    const auto p = params.values();
    if (grad.size() != params.size()) {
        throw ContractViolation("gradient buffer size mismatch");
    }
    if (static_cast<int>(dlogits.size()) != cfg.actions || static_cast<int>(dvalues.size()) != cfg.value_components) {
        throw ContractViolation("head gradient size mismatch");
    }

    Eigen::VectorXd scratch;
    const int head_in = static_cast<int>(cache.head_input.size());
    std::vector<double> dh(static_cast<std::size_t>(head_in), 0.0);
    std::vector<double> tmp(static_cast<std::size_t>(head_in), 0.0);

    const bool actor_needed = scope == GradScope::all;
    if (actor_needed) {
        dense_backward(layers[static_cast<std::size_t>(layout.actor_layer())], p, cache.head_input.data(), cache.logits,
                       dlogits.data(), grad, dh.data(), scratch);
    }
    dense_backward(layers[static_cast<std::size_t>(layout.critic_layer())], p, cache.head_input.data(), cache.value_vec,
                   dvalues.data(), grad, tmp.data(), scratch);
    for (int i = 0; i < head_in; ++i) {
        dh[static_cast<std::size_t>(i)] += tmp[static_cast<std::size_t>(i)];
    }

    // Walk back through trunk and fusion.
    std::vector<double> d_cur = std::move(dh);
    if (layout.trunk_layer() >= 0) {
        const auto& L = layers[static_cast<std::size_t>(layout.trunk_layer())];
        const std::vector<double>& x = layout.fusion_layer() >= 0 ? cache.fusion_act : cache.concat;
        std::vector<double> dx(static_cast<std::size_t>(L.in));
        dense_backward(L, p, x.data(), cache.trunk_act, d_cur.data(), grad,
                       scope == GradScope::all ? dx.data() : nullptr, scratch);
        d_cur = std::move(dx);
    }
    if (scope == GradScope::critic_path) {
        return;
    }
    if (layout.fusion_layer() >= 0) {
        const auto& L = layers[static_cast<std::size_t>(layout.fusion_layer())];
        std::vector<double> dx(static_cast<std::size_t>(L.in));
        dense_backward(L, p, cache.concat.data(), cache.fusion_act, d_cur.data(), grad, dx.data(), scratch);
        d_cur = std::move(dx);
    }

    // d_cur is now d(loss)/d(concat).
    const int route_out = static_cast<int>(cache.route_act.back().size());
    const int levels = cfg.hftr_levels;
    if (levels > 0) {
        const auto& embed = layers[static_cast<std::size_t>(layout.embed_layer())];
        std::vector<double> dpool(static_cast<std::size_t>(cfg.node_embed));
        for (int l = 0; l < levels; ++l) {
            const auto& L = layers[static_cast<std::size_t>(layout.proj_layer(l))];
            const double* dlevel = d_cur.data() + route_out + l * cfg.node_embed;
            const int count = cache.pooled_count[static_cast<std::size_t>(l)];
            dense_backward(L, p, cache.pooled[static_cast<std::size_t>(l)].data(),
                           cache.level_act[static_cast<std::size_t>(l)], dlevel, grad,
                           count > 0 ? dpool.data() : nullptr, scratch);
            if (count == 0) {
                continue;
            }
            for (double& v : dpool) {
                v /= static_cast<double>(count);
            }
            for (int s = level_begin(l); s < level_begin(l) + level_width(l); ++s) {
                const auto& act = cache.node_act[static_cast<std::size_t>(s)];
                if (act.empty()) {
                    continue;
                }
                const double* node = cache.input.data() + kRouteInputs + kNodeInputs * s;
                dense_backward(embed, p, node, act, dpool.data(), grad, nullptr, scratch);
            }
        }
    }

    std::vector<double> d_route(d_cur.begin(), d_cur.begin() + route_out);
    for (int i = layout.route_depth() - 1; i >= 0; --i) {
        const auto& L = layers[static_cast<std::size_t>(layout.route_layer(i))];
        std::vector<double> dx(static_cast<std::size_t>(L.in));
        dense_backward(L, p, cache.route_act[static_cast<std::size_t>(i)].data(),
                       cache.route_act[static_cast<std::size_t>(i) + 1], d_route.data(), grad,
                       i > 0 ? dx.data() : nullptr, scratch);
        d_route = std::move(dx);
    }
}

std::vector<double> backward(const ModelParams& params, const ForwardOutput& cache, std::span<const double> dlogits,
                             std::span<const double> dvalues, GradScope scope) {
    std::vector<double> grad(params.size(), 0.0);
    backward_accumulate(params, cache, dlogits, dvalues, grad, scope);
    return grad;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

void put_u32(std::ostream& out, std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), sizeof v); }

std::uint32_t get_u32(std::istream& in) {
    std::uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!in) {
        throw std::runtime_error("truncated checkpoint");
    }
    return v;
}

constexpr std::uint32_t kCheckpointVersion = 1;

}  // namespace

void save_checkpoint(const ModelParams& params, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw std::runtime_error("cannot write checkpoint: " + path);
    }
    out.write("CATR", 4);
    put_u32(out, kCheckpointVersion);
    const auto desc = params.layout().descriptor();
    put_u32(out, static_cast<std::uint32_t>(desc.size()));
    for (const auto& [in, o] : desc) {
        put_u32(out, in);
        put_u32(out, o);
    }
    const auto v = params.values();
    out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
    if (!out) {
        throw std::runtime_error("failed writing checkpoint: " + path);
    }
}

ModelParams load_checkpoint(const std::string& path, std::shared_ptr<const NetLayout> layout) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot open checkpoint: " + path);
    }
    char magic[4] = {};
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "CATR", 4) != 0) {
        throw std::runtime_error("not a checkpoint file: " + path);
    }
    if (get_u32(in) != kCheckpointVersion) {
        throw std::runtime_error("unsupported checkpoint version");
    }
    const std::uint32_t count = get_u32(in);
    std::vector<std::pair<std::uint32_t, std::uint32_t>> desc;
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto a = get_u32(in);
        const auto b = get_u32(in);
        desc.emplace_back(a, b);
    }
    if (desc != layout->descriptor()) {
        throw std::runtime_error("checkpoint layout does not match the configured network");
    }
    ModelParams params(std::move(layout));
    auto v = params.mutable_values();
    in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
    if (!in) {
        throw std::runtime_error("truncated checkpoint parameters");
    }
    return params;
}

}  // namespace catr
