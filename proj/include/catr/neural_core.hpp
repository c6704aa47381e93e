#pragma once

// Dual-branch actor-critic network with hand-written backpropagation.
//
// Route branch:  9 -> route_hidden... (tanh)
// HFTR branch:   per-node embedder 6 -> E (tanh), mean-pooled over the present
//                nodes of each level, then a per-level projection E -> E (tanh)
// Fusion:        [route | level_0 | ... | level_{L-1}] -> fusion (tanh)
// Trunk:         fusion -> trunk (tanh)
// Heads:         actor trunk -> 4 logits, critic trunk -> K values (linear)
//
// Weights are stored row-major (out x in) followed by the bias, layer by layer
// in the order above.

#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace catr {

struct NetConfig {
    std::vector<int> route_hidden{64, 64};
    int node_embed = 16;
    int hftr_levels = 3;  // 0 removes the HFTR branch
    int fusion = 128;     // 0 skips the fusion layer
    int trunk = 128;      // 0 skips the trunk layer
    int actions = 4;
    int value_components = 5;
};

struct LayerShape {
    int in = 0;
    int out = 0;
    std::size_t offset = 0;  // weights at offset, bias at offset + in * out
    bool activation = true;

    std::size_t weight_count() const { return static_cast<std::size_t>(in) * static_cast<std::size_t>(out); }
    std::size_t param_count() const { return weight_count() + static_cast<std::size_t>(out); }
};

class NetLayout {
public:
    explicit NetLayout(NetConfig config);

    const NetConfig& config() const { return config_; }
    const std::vector<LayerShape>& layers() const { return layers_; }
    std::size_t param_count() const { return param_count_; }
    int input_size() const { return input_size_; }
    int hftr_slots() const { return hftr_slots_; }

    int route_layer(int i) const { return route_first_ + i; }
    int route_depth() const { return static_cast<int>(config_.route_hidden.size()); }
    int embed_layer() const { return embed_; }
    int proj_layer(int level) const { return proj_first_ + level; }
    int fusion_layer() const { return fusion_; }
    int trunk_layer() const { return trunk_; }
    int actor_layer() const { return actor_; }
    int critic_layer() const { return critic_; }

    // Parameter index ranges [begin, end) updated by value-loss gradients in
    // the value decomposition: trunk and critic head.
    std::vector<std::pair<std::size_t, std::size_t>> critic_path_ranges() const;

    // (in, out) per layer, as written to checkpoints.
    std::vector<std::pair<std::uint32_t, std::uint32_t>> descriptor() const;

    friend bool operator==(const NetLayout& a, const NetLayout& b) { return a.descriptor() == b.descriptor(); }

private:
    int add_layer(int in, int out, bool activation);

    NetConfig config_;
    std::vector<LayerShape> layers_;
    std::size_t param_count_ = 0;
    int input_size_ = 0;
    int hftr_slots_ = 0;
    int route_first_ = 0;
    int embed_ = -1;
    int proj_first_ = -1;
    int fusion_ = -1;
    int trunk_ = -1;
    int actor_ = -1;
    int critic_ = -1;
};

class ModelParams {
public:
    explicit ModelParams(std::shared_ptr<const NetLayout> layout);

    const NetLayout& layout() const { return *layout_; }
    std::shared_ptr<const NetLayout> layout_ptr() const { return layout_; }
    std::span<const double> values() const { return values_; }
    // Any mutable access invalidates forward caches taken earlier.
    std::span<double> mutable_values() {
        ++version_;
        return values_;
    }
    std::size_t size() const { return values_.size(); }
    std::uint64_t version() const { return version_; }

private:
    std::shared_ptr<const NetLayout> layout_;
    std::vector<double> values_;
    std::uint64_t version_ = 0;
};

ModelParams init_params(std::shared_ptr<const NetLayout> layout, std::uint64_t seed);

using ActionMaskBits = std::vector<bool>;

struct ForwardOutput {
    std::vector<double> logits;
    std::vector<double> action_probs;
    std::vector<double> value_vec;

    // Cached activations for backward.
    const ModelParams* params = nullptr;
    std::uint64_t version = 0;
    std::vector<double> input;
    std::vector<std::vector<double>> route_act;  // route_act[0] = route input
    std::vector<std::vector<double>> node_act;   // per slot embedder output (empty when absent)
    std::vector<std::vector<double>> pooled;     // per level
    std::vector<int> pooled_count;
    std::vector<std::vector<double>> level_act;  // per level projection output
    std::vector<double> concat;
    std::vector<double> fusion_act;
    std::vector<double> trunk_act;
    std::vector<double> head_input;
};

class ContractViolation : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

ForwardOutput forward(const ModelParams& params, std::span<const double> observation, const ActionMaskBits& mask);
// Reuses the buffers of `out`.
void forward_into(const ModelParams& params, std::span<const double> observation, const ActionMaskBits& mask,
                  ForwardOutput& out);

enum class GradScope { all, critic_path };

// Accumulates d(loss)/d(params) into `grad` given the loss gradient at the
// actor logits and critic values.
void backward_accumulate(const ModelParams& params, const ForwardOutput& cache, std::span<const double> dlogits,
                         std::span<const double> dvalues, std::span<double> grad, GradScope scope = GradScope::all);

std::vector<double> backward(const ModelParams& params, const ForwardOutput& cache, std::span<const double> dlogits,
                             std::span<const double> dvalues, GradScope scope = GradScope::all);

// Softmax restricted to valid entries; invalid entries get probability 0.
std::vector<double> masked_softmax(std::span<const double> logits, const ActionMaskBits& mask);
// Chain rule through the masked softmax: d(loss)/d(logits) from d(loss)/d(probs).
std::vector<double> masked_softmax_backward(std::span<const double> probs, std::span<const double> dprobs);

int sample_action(std::span<const double> probs, std::mt19937_64& rng);
double log_prob(std::span<const double> probs, int action);
double entropy(std::span<const double> probs);
int argmax_valid(std::span<const double> scores, const ActionMaskBits& mask);

void save_checkpoint(const ModelParams& params, const std::string& path);
// Throws when the stored layout does not match `layout`.
ModelParams load_checkpoint(const std::string& path, std::shared_ptr<const NetLayout> layout);

}  // namespace catr
