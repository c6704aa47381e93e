#pragma once

// Line-oriented `key = value` configuration covering every module. Blank
// lines and text after '#' are ignored; unknown keys are errors.

#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "catr/baseline_planners.hpp"
#include "catr/eval_harness.hpp"
#include "catr/neural_core.hpp"
#include "catr/observation.hpp"
#include "catr/surface_env.hpp"
#include "catr/trainer.hpp"

namespace catr {

class ConfigError : public std::runtime_error {
public:
    ConfigError(const std::string& message, int line);
    int line() const { return line_; }

private:
    int line_;
};

struct Config {
    EnvConfig env;
    TrafficSpec traffic;
    RunwayScheduleSpec runway;
    ObsConfig obs;
    NetConfig net;
    TrainConfig train;
    DqnConfig dqn;
    GaConfig ga;
    AstarConfig astar;
    EvalConfig eval;
};

// Applies the pairs in `text` over `base`. `hftr_levels` sets both the
// observation and the network depth.
Config parse_config(std::string_view text, Config base = {});
Config load_config(const std::string& path, Config base = {});

// Every recognised key, in documentation order.
std::vector<std::string> config_keys();

}  // namespace catr
