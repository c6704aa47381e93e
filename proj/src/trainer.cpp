#include "catr/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace catr {

void validate(const TrainConfig& cfg) {
    if (!(cfg.gamma > 0.0 && cfg.gamma <= 1.0) || !(cfg.gae_lambda > 0.0 && cfg.gae_lambda <= 1.0)) {
        throw std::invalid_argument("gamma and gae_lambda must lie in (0, 1]");
    }
    if (!(cfg.clip_eps > 0.0)) {
        throw std::invalid_argument("clip epsilon must be positive");
    }
    if (cfg.epochs < 1 || cfg.minibatch_size < 1 || cfg.rollout_steps < 1 || !(cfg.weight_temperature > 0.0)) {
        throw std::invalid_argument("epochs, minibatch size, rollout steps and temperature must be positive");
    }
    if (cfg.curriculum_updates < 0 || !(cfg.curriculum_start_density > 0.0)) {
        throw std::invalid_argument("curriculum length must be non-negative and its start density positive");
    }
}

double curriculum_density(const TrainConfig& cfg, double target, int update) {
    return update < cfg.curriculum_updates ? cfg.curriculum_start_density : target;
}

double scheduled_learning_rate(const TrainConfig& cfg, int update) {
    if (!cfg.anneal_lr) {
        return cfg.learning_rate;
    }
    return cfg.learning_rate * std::max(0.0, 1.0 - static_cast<double>(update) / static_cast<double>(cfg.updates));
}

std::vector<double> reward_components(const RewardVector& r, int k) {
    if (k == kRewardComponents) {
        const auto a = r.as_array();
        return {a.begin(), a.end()};
    }
    if (k == 1) {
        return {r.total()};
    }
    throw std::invalid_argument("critic must have 1 or 5 value components");
}

GaeResult compute_gae(std::span<const double> rewards, std::span<const double> values, const std::vector<bool>& dones,
                      double bootstrap, double gamma, double lambda) {
    const std::size_t n = rewards.size();
    if (n == 0) {
        throw std::invalid_argument("compute_gae needs a non-empty sequence");
    }
    if (values.size() != n || dones.size() != n) {
        throw std::invalid_argument("compute_gae inputs must have equal lengths");
    }
    GaeResult out;
    out.advantages.assign(n, 0.0);
    out.returns.assign(n, 0.0);
    double carry = 0.0;
    for (std::size_t i = n; i-- > 0;) {
        const double next_value = dones[i] ? 0.0 : (i + 1 < n ? values[i + 1] : bootstrap);
        const double delta = rewards[i] + gamma * next_value - values[i];
        carry = dones[i] ? delta : delta + gamma * lambda * carry;
        out.advantages[i] = carry;
        out.returns[i] = carry + values[i];
    }
    return out;
}

ComponentWeights weights_from_norms(std::span<const double> g, double temperature) {
    ComponentWeights cw;
    cw.g.assign(g.begin(), g.end());
    cw.w.assign(g.size(), 0.0);
    double mx = -std::numeric_limits<double>::infinity();
    for (double x : g) {
        mx = std::max(mx, x / temperature);
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
        cw.w[i] = std::exp(g[i] / temperature - mx);
        sum += cw.w[i];
    }
    for (double& w : cw.w) {
        w /= sum;
    }
    return cw;
}

ValueLoss decomposed_value_loss(std::span<const double> predictions, std::span<const double> returns,
                                std::span<const double> w, int k) {
    if (k < 1 || predictions.size() != returns.size() || predictions.size() % static_cast<std::size_t>(k) != 0 ||
        w.size() != static_cast<std::size_t>(k)) {
        throw std::invalid_argument("decomposed_value_loss: inputs are not K-aligned");
    }
    const std::size_t b = predictions.size() / static_cast<std::size_t>(k);
    ValueLoss out;
    out.per_component.assign(static_cast<std::size_t>(k), 0.0);
    for (std::size_t s = 0; s < b; ++s) {
        for (std::size_t i = 0; i < static_cast<std::size_t>(k); ++i) {
            const double d = predictions[s * static_cast<std::size_t>(k) + i] - returns[s * static_cast<std::size_t>(k) + i];
            out.per_component[i] += d * d;
        }
    }
    double weighted = 0.0;
    for (std::size_t i = 0; i < static_cast<std::size_t>(k); ++i) {
        out.per_component[i] /= static_cast<double>(b);
        weighted += w[i] * out.per_component[i];
    }
    out.total = static_cast<double>(k) * weighted;
    return out;
}

ComponentWeights component_weights(const ModelParams& params, std::span<const ForwardOutput> caches,
                                   std::span<const double> returns, double temperature) {
    const int k = params.layout().config().value_components;
    const std::size_t b = caches.size();
    if (b == 0 || returns.size() != b * static_cast<std::size_t>(k)) {
        throw std::invalid_argument("component_weights: returns must be batch x K");
    }
    const auto ranges = params.layout().critic_path_ranges();
    std::vector<double> grad(params.size(), 0.0);
    std::vector<double> dlogits(static_cast<std::size_t>(params.layout().config().actions), 0.0);
    std::vector<double> dvalues(static_cast<std::size_t>(k), 0.0);
    std::vector<double> g(static_cast<std::size_t>(k), 0.0);
    for (int i = 0; i < k; ++i) {
        for (const auto& [lo, hi] : ranges) {
            std::fill(grad.begin() + static_cast<std::ptrdiff_t>(lo), grad.begin() + static_cast<std::ptrdiff_t>(hi), 0.0);
        }
        for (std::size_t s = 0; s < b; ++s) {
            const double v = caches[s].value_vec[static_cast<std::size_t>(i)];
            const double r = returns[s * static_cast<std::size_t>(k) + static_cast<std::size_t>(i)];
            std::fill(dvalues.begin(), dvalues.end(), 0.0);
            dvalues[static_cast<std::size_t>(i)] = 2.0 * (v - r) / static_cast<double>(b);
            backward_accumulate(params, caches[s], dlogits, dvalues, grad, GradScope::critic_path);
        }
        double l1 = 0.0;
        for (const auto& [lo, hi] : ranges) {
            for (std::size_t j = lo; j < hi; ++j) {
                l1 += std::abs(grad[j]);
            }
        }
        if (!std::isfinite(l1)) {
            throw TrainingAborted("non-finite value-loss gradient for component " + std::to_string(i));
        }
        g[static_cast<std::size_t>(i)] = l1;
    }
    return weights_from_norms(g, temperature);
}

Optimizer::Optimizer(const TrainConfig& cfg, std::size_t size)
    : kind_(cfg.optimizer),
      lr_(cfg.learning_rate),
      beta1_(cfg.adam_beta1),
      beta2_(cfg.adam_beta2),
      eps_(cfg.adam_eps),
      m_(kind_ == OptimizerKind::adam ? size : 0, 0.0),
      v_(kind_ == OptimizerKind::adam ? size : 0, 0.0) {}

void Optimizer::step(ModelParams& params, std::span<const double> grad) {
    auto p = params.mutable_values();
    if (kind_ == OptimizerKind::sgd) {
        for (std::size_t i = 0; i < p.size(); ++i) {
            p[i] -= lr_ * grad[i];
        }
        return;
    }
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < p.size(); ++i) {
        m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grad[i];
        v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grad[i] * grad[i];
        p[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
    }
}

double clip_grad_norm(std::span<double> grad, double max_norm) {
    double sq = 0.0;
    for (double g : grad) {
        sq += g * g;
    }
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        const double s = max_norm / norm;
        for (double& g : grad) {
            g *= s;
        }
    }
    return norm;
}

void mask_hftr(std::vector<double>& observation) {
    std::fill(observation.begin() + std::min<std::ptrdiff_t>(kRouteObsSize, static_cast<std::ptrdiff_t>(observation.size())),
              observation.end(), 0.0);
}

// ---------------------------------------------------------------------------
// PPO update

UpdateStats ppo_update(ModelParams& params, Optimizer& opt, std::vector<Transition>& batch, const TrainConfig& cfg,
                       std::mt19937_64& rng) {
    validate(cfg);
    const int k = params.layout().config().value_components;
    const int actions = params.layout().config().actions;
    const std::size_t n = batch.size();
    UpdateStats stats;
    stats.transitions = n;
    stats.value_losses.assign(static_cast<std::size_t>(k), 0.0);
    stats.weights.assign(static_cast<std::size_t>(k), 0.0);
    stats.grad_norms.assign(static_cast<std::size_t>(k), 0.0);
    if (n == 0) {
        return stats;
    }

    double mean = 0.0;
    for (const auto& t : batch) {
        mean += t.advantage;
    }
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (const auto& t : batch) {
        var += (t.advantage - mean) * (t.advantage - mean);
    }
    const double sd = std::sqrt(var / static_cast<double>(n));
    std::vector<double> adv(n);
    for (std::size_t i = 0; i < n; ++i) {
        adv[i] = (batch[i].advantage - mean) / (sd + 1e-8);
    }

    const std::vector<double> last_good(params.values().begin(), params.values().end());
    const auto abort = [&](const std::string& why) {
        auto p = params.mutable_values();
        std::copy(last_good.begin(), last_good.end(), p.begin());
        throw TrainingAborted(why);
    };

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::vector<ForwardOutput> caches;
    std::vector<double> grad(params.size());
    std::vector<double> dlogits(static_cast<std::size_t>(actions));
    std::vector<double> dvalues(static_cast<std::size_t>(k));
    std::vector<double> uniform(static_cast<std::size_t>(k), 1.0 / k);
    int minibatches = 0;
    double clipped = 0.0;
    double samples = 0.0;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(cfg.minibatch_size)) {
            const std::size_t end = std::min(n, start + static_cast<std::size_t>(cfg.minibatch_size));
            const std::size_t mb = end - start;
            const double mbd = static_cast<double>(mb);
            caches.resize(mb);
            std::vector<double> preds(mb * static_cast<std::size_t>(k));
            std::vector<double> rets(mb * static_cast<std::size_t>(k));
            for (std::size_t j = 0; j < mb; ++j) {
                const auto& t = batch[order[start + j]];
                forward_into(params, t.observation, t.mask, caches[j]);
                for (int i = 0; i < k; ++i) {
                    preds[j * static_cast<std::size_t>(k) + static_cast<std::size_t>(i)] =
                        caches[j].value_vec[static_cast<std::size_t>(i)];
                    rets[j * static_cast<std::size_t>(k) + static_cast<std::size_t>(i)] =
                        t.component_returns[static_cast<std::size_t>(i)];
                }
            }

            ComponentWeights cw;
            if (cfg.use_decomposition) {
                cw = component_weights(params, caches, rets, cfg.weight_temperature);
            } else {
                cw.w = uniform;
                cw.g.assign(static_cast<std::size_t>(k), 0.0);
            }
            const ValueLoss vl = decomposed_value_loss(preds, rets, cw.w, k);

            std::fill(grad.begin(), grad.end(), 0.0);
            double policy_loss = 0.0;
            double ent_sum = 0.0;
            double scalar_vloss = 0.0;
            for (std::size_t j = 0; j < mb; ++j) {
                const std::size_t idx = order[start + j];
                const auto& t = batch[idx];
                const auto& c = caches[j];
                const double a = adv[idx];
                const double lp = log_prob(c.action_probs, t.action);
                const double ratio = std::exp(lp - t.log_prob_old);
                const double clipped_ratio = std::clamp(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps);
                const double surr1 = ratio * a;
                const double surr2 = clipped_ratio * a;
                policy_loss -= std::min(surr1, surr2) / mbd;
                const double pg = surr1 <= surr2 ? a * ratio : 0.0;
                if (surr1 > surr2) {
                    clipped += 1.0;
                }
                samples += 1.0;
                const double h = entropy(c.action_probs);
                ent_sum += h;
                for (int q = 0; q < actions; ++q) {
                    const double p = c.action_probs[static_cast<std::size_t>(q)];
                    const double onehot = q == t.action ? 1.0 : 0.0;
                    const double dh = p > 0.0 ? -p * (std::log(p) + h) : 0.0;
                    dlogits[static_cast<std::size_t>(q)] = -pg * (onehot - p) / mbd - cfg.entropy_coef * dh / mbd;
                }
                if (cfg.use_decomposition) {
                    for (int i = 0; i < k; ++i) {
                        const double scale = cfg.value_coef * static_cast<double>(k) * cw.w[static_cast<std::size_t>(i)];
                        const double v = c.value_vec[static_cast<std::size_t>(i)];
                        const double r = t.component_returns[static_cast<std::size_t>(i)];
                        dvalues[static_cast<std::size_t>(i)] = scale * 2.0 * (v - r) / mbd;
                    }
                } else {
                    double v = 0.0;
                    double r = 0.0;
                    for (int i = 0; i < k; ++i) {
                        v += c.value_vec[static_cast<std::size_t>(i)];
                        r += t.component_returns[static_cast<std::size_t>(i)];
                    }
                    const double scale = cfg.value_coef;
                    const double d = scale * 2.0 * (v - r) / mbd;
                    scalar_vloss += (v - r) * (v - r) / mbd;
                    std::fill(dvalues.begin(), dvalues.end(), d);
                }
                backward_accumulate(params, c, dlogits, dvalues, grad);
            }
            const double value_loss = cfg.use_decomposition ? vl.total : scalar_vloss;
            const double loss = policy_loss + cfg.value_coef * value_loss - cfg.entropy_coef * ent_sum / mbd;
            if (!std::isfinite(loss)) {
                abort("non-finite PPO loss");
            }
            const double norm = clip_grad_norm(grad, cfg.max_grad_norm);
            if (!std::isfinite(norm)) {
                abort("non-finite PPO gradient");
            }
            opt.step(params, grad);

            ++minibatches;
            for (int i = 0; i < k; ++i) {
                stats.value_losses[static_cast<std::size_t>(i)] += vl.per_component[static_cast<std::size_t>(i)];
                stats.weights[static_cast<std::size_t>(i)] += cw.w[static_cast<std::size_t>(i)];
                stats.grad_norms[static_cast<std::size_t>(i)] += cw.g[static_cast<std::size_t>(i)];
            }
            stats.entropy += ent_sum / mbd;
            stats.policy_loss += policy_loss;
        }
    }
    const double m = static_cast<double>(minibatches);
    for (int i = 0; i < k; ++i) {
        stats.value_losses[static_cast<std::size_t>(i)] /= m;
        stats.weights[static_cast<std::size_t>(i)] /= m;
        stats.grad_norms[static_cast<std::size_t>(i)] /= m;
    }
    stats.entropy /= m;
    stats.policy_loss /= m;
    stats.clip_fraction = samples > 0.0 ? clipped / samples : 0.0;
    return stats;
}

// ---------------------------------------------------------------------------
// Rollouts

Scenario ScenarioSource::make(std::uint64_t seed) const {
    Scenario s;
    s.flights = generate_traffic(*map, traffic, seed);
    s.runway_events = generate_runway_events(*map, runway, seed);
    return s;
}

void compute_batch_targets(std::vector<Transition>& batch, const std::vector<std::vector<std::size_t>>& trajectories,
                           const std::vector<std::vector<double>>& bootstrap_values, const TrainConfig& cfg) {
    for (std::size_t tr = 0; tr < trajectories.size(); ++tr) {
        const auto& idx = trajectories[tr];
        if (idx.empty()) {
            continue;
        }
        const std::size_t k = batch[idx.front()].reward_vec.size();
        const std::size_t len = idx.size();
        std::vector<bool> dones(len);
        for (std::size_t j = 0; j < len; ++j) {
            dones[j] = batch[idx[j]].done;
            batch[idx[j]].component_returns.assign(k, 0.0);
        }
        std::vector<double> rewards(len);
        std::vector<double> values(len);
        // Policy advantage: total reward against total value.
        for (std::size_t j = 0; j < len; ++j) {
            const auto& t = batch[idx[j]];
            rewards[j] = std::accumulate(t.reward_vec.begin(), t.reward_vec.end(), 0.0);
            values[j] = std::accumulate(t.value_vec_old.begin(), t.value_vec_old.end(), 0.0);
        }
        const auto& boot = bootstrap_values[tr];
        const double boot_total = std::accumulate(boot.begin(), boot.end(), 0.0);
        const GaeResult total = compute_gae(rewards, values, dones, boot_total, cfg.gamma, cfg.gae_lambda);
        for (std::size_t j = 0; j < len; ++j) {
            batch[idx[j]].advantage = total.advantages[j];
        }
        for (std::size_t i = 0; i < k; ++i) {
            for (std::size_t j = 0; j < len; ++j) {
                rewards[j] = batch[idx[j]].reward_vec[i];
                values[j] = batch[idx[j]].value_vec_old[i];
            }
            const GaeResult comp = compute_gae(rewards, values, dones, boot.empty() ? 0.0 : boot[i], cfg.gamma,
                                               cfg.gae_lambda);
            for (std::size_t j = 0; j < len; ++j) {
                batch[idx[j]].component_returns[i] = comp.returns[j];
            }
        }
    }
}

RolloutCollector::RolloutCollector(ScenarioSource source, EnvConfig env_cfg, ObsConfig obs_cfg, std::uint64_t seed)
    : source_(std::move(source)), obs_cfg_(obs_cfg), env_(source_.map, env_cfg), episode_seed_(seed) {
    start_episode();
}

void RolloutCollector::start_episode() {
    const std::uint64_t seed = episode_seed_ * 1000003ULL + episodes_++;
    env_.reset(source_.make(seed));
    running_returns_.clear();
}

std::vector<Transition> RolloutCollector::collect(const ModelParams& params, const TrainConfig& cfg,
                                                  std::mt19937_64& rng, std::vector<double>& finished_returns) {
    const int k = params.layout().config().value_components;
    std::vector<Transition> batch;
    std::vector<std::vector<std::size_t>> trajectories;
    std::vector<std::vector<double>> bootstraps;
    std::vector<std::pair<int, std::size_t>> open;  // aircraft id -> trajectory index
    ForwardOutput fo;

    const auto observe = [&](int id) {
        auto obs = build_observation(env_, id, obs_cfg_);
        if (!cfg.hftr_enabled) {
            mask_hftr(obs);
        }
        return obs;
    };
    const auto running = [&](int id) -> double& {
        for (auto& [rid, v] : running_returns_) {
            if (rid == id) {
                return v;
            }
        }
        running_returns_.emplace_back(id, 0.0);
        return running_returns_.back().second;
    };
    // Truncated trajectories bootstrap from the critic at the current state.
    const auto close_open = [&]() {
        for (const auto& [id, tr] : open) {
            const auto obs = observe(id);
            ActionMaskBits mask(static_cast<std::size_t>(kNumActions), false);
            mask[static_cast<std::size_t>(to_int(Action::stop))] = true;
            forward_into(params, obs, mask, fo);
            bootstraps[tr] = fo.value_vec;
        }
        open.clear();
    };

    while (static_cast<int>(batch.size()) < cfg.rollout_steps) {
        if (env_.done()) {
            close_open();
            for (const auto& [id, v] : running_returns_) {
                if (env_.aircraft(id).active()) {
                    finished_returns.push_back(v);
                }
            }
            start_episode();
        }
        const auto ids = env_.active_ids();
        std::vector<std::pair<int, std::size_t>> this_step;
        for (int id : ids) {
            Transition t;
            t.observation = observe(id);
            const ActionMask m = env_.valid_actions(id);
            t.mask.assign(m.valid.begin(), m.valid.end());
            forward_into(params, t.observation, t.mask, fo);
            t.action = sample_action(fo.action_probs, rng);
            t.log_prob_old = log_prob(fo.action_probs, t.action);
            t.value_vec_old = fo.value_vec;
            t.aircraft_id = id;
            t.step = env_.step_index();
            env_.reserve(id, static_cast<Action>(t.action));
            this_step.emplace_back(id, batch.size());
            batch.push_back(std::move(t));
        }
        const StepResult res = env_.step();
        for (const auto& [id, r] : res.rewards) {
            running(id) += r.total();
            const auto it = std::find_if(this_step.begin(), this_step.end(), [id = id](const auto& e) { return e.first == id; });
            if (it != this_step.end()) {
                batch[it->second].reward_vec = reward_components(r, k);
            }
        }
        for (const auto& [id, bi] : this_step) {
            auto oit = std::find_if(open.begin(), open.end(), [id = id](const auto& e) { return e.first == id; });
            if (oit == open.end()) {
                trajectories.emplace_back();
                bootstraps.emplace_back(static_cast<std::size_t>(k), 0.0);
                open.emplace_back(id, trajectories.size() - 1);
                oit = open.end() - 1;
            }
            trajectories[oit->second].push_back(bi);
            if (!env_.aircraft(id).active()) {
                batch[bi].done = true;
                finished_returns.push_back(running(id));
                open.erase(oit);
            }
        }
    }
    close_open();
    compute_batch_targets(batch, trajectories, bootstraps, cfg);
    return batch;
}

namespace {

ScenarioSource with_multiplier(ScenarioSource s, double m) {
    s.traffic.multiplier = m;
    return s;
}

}  // namespace

PpoTrainer::PpoTrainer(ScenarioSource source, EnvConfig env_cfg, ObsConfig obs_cfg, const NetConfig& net_cfg,
                       TrainConfig cfg)
    : cfg_(cfg),
      params_(init_params(std::make_shared<const NetLayout>(net_cfg), cfg.seed)),
      opt_(cfg, params_.size()),
      target_density_(source.traffic.multiplier),
      collector_(with_multiplier(std::move(source), curriculum_density(cfg, target_density_, 0)), env_cfg, obs_cfg,
                 cfg.seed),
      rng_(cfg.seed ^ 0x9e3779b97f4a7c15ULL) {
    validate(cfg_);
    if (observation_size(obs_cfg.hftr_levels) != params_.layout().input_size()) {
        throw std::invalid_argument("network input size does not match the observation layout");
    }
}

UpdateStats PpoTrainer::iterate() {
    std::vector<double> finished;
    collector_.set_traffic_multiplier(curriculum_density(cfg_, target_density_, updates_));
    opt_.set_learning_rate(scheduled_learning_rate(cfg_, updates_));
    auto batch = collector_.collect(params_, cfg_, rng_, finished);
    UpdateStats stats = ppo_update(params_, opt_, batch, cfg_, rng_);
    stats.update = ++updates_;
    stats.finished_trajectories = static_cast<int>(finished.size());
    stats.mean_return =
        finished.empty() ? 0.0 : std::accumulate(finished.begin(), finished.end(), 0.0) / static_cast<double>(finished.size());
    return stats;
}

// ---------------------------------------------------------------------------
// DQN

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
    if (capacity_ == 0) {
        throw std::invalid_argument("replay buffer capacity must be positive");
    }
}

void ReplayBuffer::push(DqnTransition t) {
    if (items_.size() < capacity_) {
        items_.push_back(std::move(t));
    } else {
        items_[next_] = std::move(t);
    }
    next_ = (next_ + 1) % capacity_;
}

std::vector<std::size_t> ReplayBuffer::sample(std::size_t n, std::mt19937_64& rng) const {
    std::uniform_int_distribution<std::size_t> pick(0, items_.size() - 1);
    std::vector<std::size_t> out(n);
    for (auto& i : out) {
        i = pick(rng);
    }
    return out;
}

double dqn_epsilon(const DqnConfig& cfg, std::uint64_t step, std::uint64_t total_steps) {
    const double horizon = std::max(1.0, cfg.eps_fraction * static_cast<double>(total_steps));
    const double frac = std::min(1.0, static_cast<double>(step) / horizon);
    return cfg.eps_start + frac * (cfg.eps_end - cfg.eps_start);
}

int dqn_select(std::span<const double> q, const ActionMaskBits& mask, double epsilon, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    if (u01(rng) < epsilon) {
        std::vector<int> valid;
        for (std::size_t i = 0; i < mask.size(); ++i) {
            if (mask[i]) {
                valid.push_back(static_cast<int>(i));
            }
        }
        std::uniform_int_distribution<std::size_t> pick(0, valid.size() - 1);
        return valid[pick(rng)];
    }
    return argmax_valid(q, mask);
}

double dqn_target(double reward, bool done, double gamma, std::span<const double> next_q, const ActionMaskBits& next_mask) {
    if (done) {
        return reward;
    }
    return reward + gamma * next_q[static_cast<std::size_t>(argmax_valid(next_q, next_mask))];
}

double dqn_update(ModelParams& qnet, const ModelParams& target, const ReplayBuffer& buffer, const DqnConfig& dcfg,
                  const TrainConfig& cfg, Optimizer& opt, std::mt19937_64& rng) {
    if (buffer.size() == 0) {
        return 0.0;
    }
    const std::size_t b = std::min<std::size_t>(static_cast<std::size_t>(dcfg.batch_size), buffer.size());
    const auto picks = buffer.sample(b, rng);
    const int actions = qnet.layout().config().actions;
    const int k = qnet.layout().config().value_components;
    std::vector<double> grad(qnet.size(), 0.0);
    std::vector<double> dlogits(static_cast<std::size_t>(actions));
    const std::vector<double> dvalues(static_cast<std::size_t>(k), 0.0);
    ForwardOutput cur;
    ForwardOutput nxt;
    double loss = 0.0;
    for (std::size_t i : picks) {
        const auto& t = buffer.at(i);
        double y = t.reward;
        if (!t.done) {
            forward_into(target, t.next_observation, t.next_mask, nxt);
            y = dqn_target(t.reward, false, cfg.gamma, nxt.logits, t.next_mask);
        }
        forward_into(qnet, t.observation, t.mask, cur);
        const double diff = cur.logits[static_cast<std::size_t>(t.action)] - y;
        const double ad = std::abs(diff);
        loss += (ad <= dcfg.huber_delta ? 0.5 * diff * diff : dcfg.huber_delta * (ad - 0.5 * dcfg.huber_delta)) /
                static_cast<double>(b);
        std::fill(dlogits.begin(), dlogits.end(), 0.0);
        dlogits[static_cast<std::size_t>(t.action)] =
            std::clamp(diff, -dcfg.huber_delta, dcfg.huber_delta) / static_cast<double>(b);
        backward_accumulate(qnet, cur, dlogits, dvalues, grad);
    }
    if (!std::isfinite(loss)) {
        throw TrainingAborted("non-finite DQN loss");
    }
    const double norm = clip_grad_norm(grad, cfg.max_grad_norm);
    if (!std::isfinite(norm)) {
        throw TrainingAborted("non-finite DQN gradient");
    }
    opt.step(qnet, grad);
    return loss;
}

DqnTrainer::DqnTrainer(ScenarioSource source, EnvConfig env_cfg, ObsConfig obs_cfg, const NetConfig& net_cfg,
                       TrainConfig cfg, DqnConfig dcfg)
    : cfg_(cfg),
      dcfg_(dcfg),
      obs_cfg_(obs_cfg),
      source_(std::move(source)),
      env_(source_.map, env_cfg),
      qnet_(init_params(std::make_shared<const NetLayout>(net_cfg), cfg.seed)),
      target_(qnet_),
      opt_(cfg, qnet_.size()),
      buffer_(static_cast<std::size_t>(dcfg.buffer_capacity)),
      rng_(cfg.seed ^ 0x5851f42d4c957f2dULL) {
    validate(cfg_);
    if (observation_size(obs_cfg.hftr_levels) != qnet_.layout().input_size()) {
        throw std::invalid_argument("network input size does not match the observation layout");
    }
    start_episode();
}

void DqnTrainer::start_episode() {
    env_.reset(source_.make(cfg_.seed * 1000003ULL + episodes_++));
    pending_.clear();
    running_returns_.clear();
}

UpdateStats DqnTrainer::iterate() {
    UpdateStats stats;
    std::vector<double> finished;
    const std::uint64_t total_steps = static_cast<std::uint64_t>(cfg_.updates) * static_cast<std::uint64_t>(cfg_.rollout_steps);
    ForwardOutput fo;
    const auto observe = [&](int id) {
        auto obs = build_observation(env_, id, obs_cfg_);
        if (!cfg_.hftr_enabled) {
            mask_hftr(obs);
        }
        return obs;
    };
    const auto running = [&](int id) -> double& {
        for (auto& [rid, v] : running_returns_) {
            if (rid == id) {
                return v;
            }
        }
        running_returns_.emplace_back(id, 0.0);
        return running_returns_.back().second;
    };

    std::size_t collected = 0;
    while (static_cast<int>(collected) < cfg_.rollout_steps) {
        if (env_.done()) {
            // Truncated: bootstrap from the final state.
            for (auto& [id, t] : pending_) {
                t.next_observation = observe(id);
                const ActionMask m = env_.valid_actions(id);
                t.next_mask.assign(m.valid.begin(), m.valid.end());
                buffer_.push(std::move(t));
                finished.push_back(running(id));
            }
            start_episode();
        }
        const auto ids = env_.active_ids();
        std::vector<std::pair<int, DqnTransition>> fresh;
        for (int id : ids) {
            DqnTransition t;
            t.observation = observe(id);
            const ActionMask m = env_.valid_actions(id);
            t.mask.assign(m.valid.begin(), m.valid.end());
            for (auto it = pending_.begin(); it != pending_.end(); ++it) {
                if (it->first == id) {
                    it->second.next_observation = t.observation;
                    it->second.next_mask = t.mask;
                    buffer_.push(std::move(it->second));
                    pending_.erase(it);
                    break;
                }
            }
            forward_into(qnet_, t.observation, t.mask, fo);
            t.action = dqn_select(fo.logits, t.mask, dqn_epsilon(dcfg_, env_steps_, total_steps), rng_);
            env_.reserve(id, static_cast<Action>(t.action));
            fresh.emplace_back(id, std::move(t));
            ++env_steps_;
            ++collected;
        }
        const StepResult res = env_.step();
        for (const auto& [id, r] : res.rewards) {
            running(id) += r.total();
            for (auto& [fid, t] : fresh) {
                if (fid == id) {
                    t.reward = r.total();
                }
            }
        }
        for (auto& [id, t] : fresh) {
            if (!env_.aircraft(id).active()) {
                t.done = true;
                t.next_observation.assign(t.observation.size(), 0.0);
                t.next_mask = {false, true, false, false};
                finished.push_back(running(id));
                buffer_.push(std::move(t));
            } else {
                pending_.emplace_back(id, std::move(t));
            }
        }
    }

    double loss = 0.0;
    int steps = 0;
    if (static_cast<int>(buffer_.size()) >= std::min(dcfg_.learning_starts, dcfg_.buffer_capacity)) {
        for (int s = 0; s < dcfg_.gradient_steps; ++s) {
            loss += dqn_update(qnet_, target_, buffer_, dcfg_, cfg_, opt_, rng_);
            ++steps;
            if (++gradient_updates_ % static_cast<std::uint64_t>(std::max(1, dcfg_.target_sync)) == 0) {
                target_ = qnet_;
            }
        }
    }
    const int k = qnet_.layout().config().value_components;
    stats.update = ++iterations_;
    stats.transitions = collected;
    stats.policy_loss = steps > 0 ? loss / steps : 0.0;
    stats.value_losses.assign(static_cast<std::size_t>(k), 0.0);
    stats.weights.assign(static_cast<std::size_t>(k), 0.0);
    stats.grad_norms.assign(static_cast<std::size_t>(k), 0.0);
    stats.finished_trajectories = static_cast<int>(finished.size());
    stats.mean_return =
        finished.empty() ? 0.0 : std::accumulate(finished.begin(), finished.end(), 0.0) / static_cast<double>(finished.size());
    return stats;
}

}  // namespace catr
