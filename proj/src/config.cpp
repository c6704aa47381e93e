#include "catr/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>
#include <utility>

namespace catr {

ConfigError::ConfigError(const std::string& message, int line)
    : std::runtime_error(line > 0 ? "config line " + std::to_string(line) + ": " + message : message), line_(line) {}

namespace {

std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) {
        return {};
    }
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(std::string_view v) {
    T out{};
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size()) {
        throw std::invalid_argument("'" + std::string(v) + "' is not a valid number");
    }
    return out;
}

std::vector<int> parse_int_list(std::string_view v) {
    std::vector<int> out;
    while (!v.empty()) {
        const auto comma = v.find(',');
        out.push_back(parse_number<int>(trim(v.substr(0, comma))));
        v = comma == std::string_view::npos ? std::string_view{} : v.substr(comma + 1);
    }
    if (out.empty()) {
        throw std::invalid_argument("empty list");
    }
    return out;
}

using Setter = std::function<void(Config&, std::string_view)>;

template <class T>
Setter flag(T Config::*group, bool T::*member) {
    return [group, member](Config& c, std::string_view v) {
        if (v != "true" && v != "false") {
            throw std::invalid_argument("'" + std::string(v) + "' is not true or false");
        }
        (c.*group).*member = v == "true";
    };
}

template <class T>
Setter num(T Config::*group, auto member) {
    return [group, member](Config& c, std::string_view v) {
        auto& field = (c.*group).*member;
        field = parse_number<std::remove_reference_t<decltype(field)>>(v);
    };
}

const std::vector<std::pair<std::string, Setter>>& table() {
    static const std::vector<std::pair<std::string, Setter>> t = {
        // surface environment
        {"d_prox", num(&Config::env, &EnvConfig::d_prox)},
        {"r_dist_scale", num(&Config::env, &EnvConfig::r_dist_scale)},
        {"r_move", num(&Config::env, &EnvConfig::r_move)},
        {"r_arrive", num(&Config::env, &EnvConfig::r_arrive)},
        {"r_prox", num(&Config::env, &EnvConfig::r_prox)},
        {"r_conf", num(&Config::env, &EnvConfig::r_conf)},
        {"episode_steps", num(&Config::env, &EnvConfig::episode_steps)},
        // traffic and runway schedule
        {"base_density", num(&Config::traffic, &TrafficSpec::base_density)},
        {"density", num(&Config::traffic, &TrafficSpec::multiplier)},
        {"horizon_steps", num(&Config::traffic, &TrafficSpec::horizon_steps)},
        {"step_seconds", num(&Config::traffic, &TrafficSpec::step_seconds)},
        {"min_od_steps", num(&Config::traffic, &TrafficSpec::min_od_steps)},
        {"runway_period", num(&Config::runway, &RunwayScheduleSpec::period)},
        {"runway_duration", num(&Config::runway, &RunwayScheduleSpec::duration)},
        {"runway_horizon", num(&Config::runway, &RunwayScheduleSpec::horizon_steps)},
        // observation and network
        {"hftr_levels",
         [](Config& c, std::string_view v) {
             c.obs.hftr_levels = parse_number<int>(v);
             c.net.hftr_levels = c.obs.hftr_levels;
         }},
        {"n_cap", num(&Config::obs, &ObsConfig::n_cap)},
        {"tau_max", num(&Config::obs, &ObsConfig::tau_max)},
        {"route_hidden", [](Config& c, std::string_view v) { c.net.route_hidden = parse_int_list(v); }},
        {"node_embed", num(&Config::net, &NetConfig::node_embed)},
        {"fusion", num(&Config::net, &NetConfig::fusion)},
        {"trunk", num(&Config::net, &NetConfig::trunk)},
        {"value_components", num(&Config::net, &NetConfig::value_components)},
        // trainer
        {"gamma", num(&Config::train, &TrainConfig::gamma)},
        {"gae_lambda", num(&Config::train, &TrainConfig::gae_lambda)},
        {"clip_eps", num(&Config::train, &TrainConfig::clip_eps)},
        {"entropy_coef", num(&Config::train, &TrainConfig::entropy_coef)},
        {"value_coef", num(&Config::train, &TrainConfig::value_coef)},
        {"learning_rate", num(&Config::train, &TrainConfig::learning_rate)},
        {"epochs", num(&Config::train, &TrainConfig::epochs)},
        {"minibatch_size", num(&Config::train, &TrainConfig::minibatch_size)},
        {"rollout_steps", num(&Config::train, &TrainConfig::rollout_steps)},
        {"updates", num(&Config::train, &TrainConfig::updates)},
        {"weight_temperature", num(&Config::train, &TrainConfig::weight_temperature)},
        {"max_grad_norm", num(&Config::train, &TrainConfig::max_grad_norm)},
        {"curriculum_updates", num(&Config::train, &TrainConfig::curriculum_updates)},
        {"curriculum_start_density", num(&Config::train, &TrainConfig::curriculum_start_density)},
        {"anneal_lr", flag(&Config::train, &TrainConfig::anneal_lr)},
        {"optimizer",
         [](Config& c, std::string_view v) {
             if (v == "sgd") {
                 c.train.optimizer = OptimizerKind::sgd;
             } else if (v == "adam") {
                 c.train.optimizer = OptimizerKind::adam;
             } else {
                 throw std::invalid_argument("optimizer must be sgd or adam");
             }
         }},
        {"adam_beta1", num(&Config::train, &TrainConfig::adam_beta1)},
        {"adam_beta2", num(&Config::train, &TrainConfig::adam_beta2)},
        {"adam_eps", num(&Config::train, &TrainConfig::adam_eps)},
        // DQN
        {"dqn_eps_start", num(&Config::dqn, &DqnConfig::eps_start)},
        {"dqn_eps_end", num(&Config::dqn, &DqnConfig::eps_end)},
        {"dqn_eps_fraction", num(&Config::dqn, &DqnConfig::eps_fraction)},
        {"dqn_buffer_capacity", num(&Config::dqn, &DqnConfig::buffer_capacity)},
        {"dqn_batch_size", num(&Config::dqn, &DqnConfig::batch_size)},
        {"dqn_target_sync", num(&Config::dqn, &DqnConfig::target_sync)},
        {"dqn_learning_starts", num(&Config::dqn, &DqnConfig::learning_starts)},
        {"dqn_gradient_steps", num(&Config::dqn, &DqnConfig::gradient_steps)},
        {"dqn_huber_delta", num(&Config::dqn, &DqnConfig::huber_delta)},
        // planners
        {"c_occ", num(&Config::astar, &AstarConfig::c_occ)},
        {"replan_period", num(&Config::astar, &AstarConfig::replan_period)},
        {"ga_population", num(&Config::ga, &GaConfig::population_size)},
        {"ga_generations", num(&Config::ga, &GaConfig::generations)},
        {"ga_crossover_rate", num(&Config::ga, &GaConfig::crossover_rate)},
        {"ga_mutation_rate", num(&Config::ga, &GaConfig::mutation_rate)},
        {"ga_conflict_weight", num(&Config::ga, &GaConfig::conflict_weight)},
        {"ga_tournament_k", num(&Config::ga, &GaConfig::tournament_k)},
        {"ga_init_retries", num(&Config::ga, &GaConfig::init_retries)},
        {"ga_dead_end_penalty", num(&Config::ga, &GaConfig::dead_end_penalty)},
        // evaluation
        {"snapshot_pixels", num(&Config::eval, &EvalConfig::snapshot_pixels)},
        {"eval_every", num(&Config::eval, &EvalConfig::eval_every)},
        {"eval_episodes", num(&Config::eval, &EvalConfig::eval_episodes)},
        {"checkpoint_every", num(&Config::eval, &EvalConfig::checkpoint_every)},
        {"keep_best", flag(&Config::eval, &EvalConfig::keep_best)},
        {"timing",
         [](Config& c, std::string_view v) {
             if (v == "wall") {
                 c.eval.wall_timing = true;
             } else if (v == "off") {
                 c.eval.wall_timing = false;
             } else {
                 throw std::invalid_argument("timing must be wall or off");
             }
         }},
    };
    return t;
}

}  // namespace

Config parse_config(std::string_view text, Config base) {
    int line_no = 0;
    while (!text.empty()) {
        ++line_no;
        const auto nl = text.find('\n');
        std::string_view line = text.substr(0, nl);
        text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
        if (const auto hash = line.find('#'); hash != std::string_view::npos) {
            line = line.substr(0, hash);
        }
        line = trim(line);
        if (line.empty()) {
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) {
            throw ConfigError("expected 'key = value'", line_no);
        }
        const std::string key(trim(line.substr(0, eq)));
        const std::string_view value = trim(line.substr(eq + 1));
        if (value.empty()) {
            throw ConfigError("missing value for '" + key + "'", line_no);
        }
        const auto& t = table();
        const auto it = std::find_if(t.begin(), t.end(), [&](const auto& e) { return e.first == key; });
        if (it == t.end()) {
            throw ConfigError("unknown key '" + key + "'", line_no);
        }
        try {
            it->second(base, value);
        } catch (const std::invalid_argument& e) {
            throw ConfigError(key + ": " + e.what(), line_no);
        }
    }
    return base;
}

Config load_config(const std::string& path, Config base) {
    std::ifstream f(path);
    if (!f) {
        throw ConfigError("cannot open config file '" + path + "'", 0);
    }
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse_config(ss.str(), std::move(base));
}

std::vector<std::string> config_keys() {
    std::vector<std::string> keys;
    for (const auto& [k, _] : table()) {
        keys.push_back(k);
    }
    return keys;
}

}  // namespace catr
