#pragma once

// PPO with action masking and gradient-weighted value decomposition, the
// plain-PPO ablation, and a masked DQN baseline.

#include <cstdint>
#include <deque>
#include <memory>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include "catr/neural_core.hpp"
#include "catr/observation.hpp"
#include "catr/surface_env.hpp"

namespace catr {

enum class OptimizerKind { sgd, adam };

struct TrainConfig {
    double gamma = 0.99;
    double gae_lambda = 0.95;
    double clip_eps = 0.2;
    double entropy_coef = 0.01;
    double value_coef = 0.5;
    double learning_rate = 3e-4;
    int epochs = 4;
    int minibatch_size = 256;
    int rollout_steps = 4096;
    int updates = 100;
    double weight_temperature = 1.0;
    double max_grad_norm = 0.5;
    OptimizerKind optimizer = OptimizerKind::sgd;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    bool use_decomposition = true;
    bool hftr_enabled = true;
    // The first curriculum_updates updates collect at curriculum_start_density
    // instead of the target multiplier; 0 disables.
    int curriculum_updates = 0;
    double curriculum_start_density = 0.1;
    // Learning rate decays linearly from learning_rate to 0 over `updates`.
    bool anneal_lr = false;
    std::uint64_t seed = 0;
};

void validate(const TrainConfig& cfg);

// Traffic multiplier used while collecting for update `update` (0-based).
double curriculum_density(const TrainConfig& cfg, double target, int update);

// Learning rate applied during update `update` (0-based).
double scheduled_learning_rate(const TrainConfig& cfg, int update);

struct Transition {
    std::vector<double> observation;
    ActionMaskBits mask;
    int action = 0;
    double log_prob_old = 0.0;
    std::vector<double> reward_vec;      // component order (dist, move, arrive, prox, conf)
    std::vector<double> value_vec_old;
    bool done = false;
    int aircraft_id = 0;
    int step = 0;
    // Filled by the advantage pass.
    double advantage = 0.0;
    std::vector<double> component_returns;
};

// Reward components as seen by a critic with K outputs: K = 5 keeps all
// components, K = 1 uses the total.
std::vector<double> reward_components(const RewardVector& r, int k);

struct GaeResult {
    std::vector<double> advantages;
    std::vector<double> returns;
};

// dones[t] marks a terminal transition: no bootstrapping past it. The
// bootstrap value applies after the final transition when it is not terminal.
GaeResult compute_gae(std::span<const double> rewards, std::span<const double> values, const std::vector<bool>& dones,
                      double bootstrap, double gamma, double lambda);

struct ComponentWeights {
    std::vector<double> w;
    std::vector<double> g;
};

// w = softmax(g / temperature), computed with max subtraction.
ComponentWeights weights_from_norms(std::span<const double> g, double temperature);

struct ValueLoss {
    double total = 0.0;
    std::vector<double> per_component;  // mean squared error per component
};

// predictions and returns are row-major (batch x K).
ValueLoss decomposed_value_loss(std::span<const double> predictions, std::span<const double> returns,
                                std::span<const double> w, int k);

// g_i = L1 norm over the trunk and critic-head parameters of the gradient of
// the i-th component's mean squared value error over the minibatch.
ComponentWeights component_weights(const ModelParams& params, std::span<const ForwardOutput> caches,
                                   std::span<const double> returns, double temperature);

class Optimizer {
public:
    Optimizer(const TrainConfig& cfg, std::size_t size);
    void step(ModelParams& params, std::span<const double> grad);
    void set_learning_rate(double lr) { lr_ = lr; }

private:
    OptimizerKind kind_;
    double lr_;
    double beta1_;
    double beta2_;
    double eps_;
    std::uint64_t t_ = 0;
    std::vector<double> m_;
    std::vector<double> v_;
};

// Scales `grad` to L2 norm at most max_norm; returns the norm before scaling.
double clip_grad_norm(std::span<double> grad, double max_norm);

struct UpdateStats {
    int update = 0;
    double mean_return = 0.0;
    int finished_trajectories = 0;
    std::vector<double> value_losses;
    std::vector<double> weights;
    std::vector<double> grad_norms;
    double entropy = 0.0;
    double policy_loss = 0.0;
    double clip_fraction = 0.0;
    std::size_t transitions = 0;
    // Greedy evaluation, when run for this update.
    bool evaluated = false;
    double eval_hcr = 0.0;
    double eval_pcr = 0.0;
    double eval_sr = 0.0;
};

class TrainingAborted : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Clipped-surrogate update over a batch whose advantages and component
// returns are already filled in. Restores the input parameters and throws
// TrainingAborted on non-finite losses or gradients.
UpdateStats ppo_update(ModelParams& params, Optimizer& opt, std::vector<Transition>& batch, const TrainConfig& cfg,
                       std::mt19937_64& rng);

// Zeroes the HFTR part of an observation (plain-PPO ablation).
void mask_hftr(std::vector<double>& observation);

struct ScenarioSource {
    std::shared_ptr<const GridMap> map;
    TrafficSpec traffic;
    RunwayScheduleSpec runway;

    Scenario make(std::uint64_t seed) const;
};

// Runs the shared policy on all active aircraft, collecting per-aircraft
// trajectories with advantages and per-component returns.
class RolloutCollector {
public:
    RolloutCollector(ScenarioSource source, EnvConfig env_cfg, ObsConfig obs_cfg, std::uint64_t seed);

    std::vector<Transition> collect(const ModelParams& params, const TrainConfig& cfg, std::mt19937_64& rng,
                                    std::vector<double>& finished_returns);
    // Takes effect from the next episode.
    void set_traffic_multiplier(double m) { source_.traffic.multiplier = m; }

private:
    void start_episode();

    ScenarioSource source_;
    ObsConfig obs_cfg_;
    SurfaceEnv env_;
    std::uint64_t episode_seed_;
    std::uint64_t episodes_ = 0;
    std::vector<std::pair<int, double>> running_returns_;
};

// Fills advantage and component_returns for transitions grouped per aircraft
// trajectory. `bootstrap_values` holds, per trajectory, the critic vector at
// the state after the last transition (ignored when it is terminal).
void compute_batch_targets(std::vector<Transition>& batch, const std::vector<std::vector<std::size_t>>& trajectories,
                           const std::vector<std::vector<double>>& bootstrap_values, const TrainConfig& cfg);

// ---------------------------------------------------------------------------
// DQN baseline

struct DqnConfig {
    double eps_start = 1.0;
    double eps_end = 0.05;
    double eps_fraction = 0.2;
    int buffer_capacity = 100000;
    int batch_size = 256;
    int target_sync = 1000;
    int learning_starts = 1000;
    int gradient_steps = 8;  // per collected rollout
    double huber_delta = 1.0;
};

struct DqnTransition {
    std::vector<double> observation;
    ActionMaskBits mask;
    int action = 0;
    double reward = 0.0;
    std::vector<double> next_observation;
    ActionMaskBits next_mask;
    bool done = false;
};

class ReplayBuffer {
public:
    explicit ReplayBuffer(std::size_t capacity);
    void push(DqnTransition t);
    std::size_t size() const { return items_.size(); }
    const DqnTransition& at(std::size_t i) const { return items_[i]; }
    std::vector<std::size_t> sample(std::size_t n, std::mt19937_64& rng) const;

private:
    std::size_t capacity_;
    std::size_t next_ = 0;
    std::vector<DqnTransition> items_;
};

// Linear epsilon schedule over the first eps_fraction of total steps.
double dqn_epsilon(const DqnConfig& cfg, std::uint64_t step, std::uint64_t total_steps);
// Epsilon-greedy restricted to valid actions.
int dqn_select(std::span<const double> q, const ActionMaskBits& mask, double epsilon, std::mt19937_64& rng);
// r for terminal transitions, else r + gamma * max over valid next actions.
double dqn_target(double reward, bool done, double gamma, std::span<const double> next_q, const ActionMaskBits& next_mask);

// One Huber-loss gradient step on a uniformly sampled minibatch; returns the loss.
double dqn_update(ModelParams& qnet, const ModelParams& target, const ReplayBuffer& buffer, const DqnConfig& dcfg,
                  const TrainConfig& cfg, Optimizer& opt, std::mt19937_64& rng);

// Alternates rollout collection and clipped-surrogate updates.
class PpoTrainer {
public:
    PpoTrainer(ScenarioSource source, EnvConfig env_cfg, ObsConfig obs_cfg, const NetConfig& net_cfg,
               TrainConfig cfg);

    UpdateStats iterate();
    const ModelParams& params() const { return params_; }
    ModelParams& params() { return params_; }
    int updates_done() const { return updates_; }

private:
    TrainConfig cfg_;
    ModelParams params_;
    Optimizer opt_;
    double target_density_;
    RolloutCollector collector_;
    std::mt19937_64 rng_;
    int updates_ = 0;
};

class DqnTrainer {
public:
    DqnTrainer(ScenarioSource source, EnvConfig env_cfg, ObsConfig obs_cfg, const NetConfig& net_cfg, TrainConfig cfg,
               DqnConfig dcfg);

    UpdateStats iterate();
    const ModelParams& params() const { return qnet_; }
    int updates_done() const { return iterations_; }

private:
    void start_episode();

    TrainConfig cfg_;
    DqnConfig dcfg_;
    ObsConfig obs_cfg_;
    ScenarioSource source_;
    SurfaceEnv env_;
    ModelParams qnet_;
    ModelParams target_;
    Optimizer opt_;
    ReplayBuffer buffer_;
    std::mt19937_64 rng_;
    std::uint64_t env_steps_ = 0;
    std::uint64_t gradient_updates_ = 0;
    std::uint64_t episodes_ = 0;
    int iterations_ = 0;
    std::vector<std::pair<int, DqnTransition>> pending_;
    std::vector<std::pair<int, double>> running_returns_;
};

}  // namespace catr
