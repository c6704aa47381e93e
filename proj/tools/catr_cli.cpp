// Command-line front end: plan, train, eval and scenario generation.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>

#include "catr/config.hpp"
#include "catr/eval_harness.hpp"

namespace {

using namespace catr;

struct Common {
    std::string map_path;
    std::string config_path;
    std::uint64_t seed = 0;
    std::string timing;
};

Config read_config(const Common& c) {
    Config cfg = c.config_path.empty() ? Config{} : load_config(c.config_path);
    if (c.timing == "wall") {
        cfg.eval.wall_timing = true;
    } else if (c.timing == "off") {
        cfg.eval.wall_timing = false;
    }
    return cfg;
}

std::shared_ptr<const GridMap> read_map(const std::string& path) {
    return std::make_shared<const GridMap>(load_map(path));
}

ScenarioSource make_source(std::shared_ptr<const GridMap> map, const Config& cfg) {
    return ScenarioSource{std::move(map), cfg.traffic, cfg.runway};
}

EvalSetup make_setup(std::shared_ptr<const GridMap> map, const Config& cfg, Method m) {
    EvalSetup s;
    s.map = std::move(map);
    s.env = cfg.env;
    s.obs = cfg.obs;
    s.astar = cfg.astar;
    s.ga = cfg.ga;
    s.eval = cfg.eval;
    s.method = m;
    return s;
}

void write_rows(const std::string& out_path, const EvalResult& res, bool with_mean) {
    std::ofstream file;
    std::ostream* out = &std::cout;
    if (out_path != "-") {
        file.open(out_path, std::ios::binary);
        if (!file) {
            throw std::runtime_error("cannot write '" + out_path + "'");
        }
        out = &file;
    }
    write_metrics_header(*out);
    for (const auto& row : res.per_episode) {
        write_metrics_row(*out, row);
    }
    if (with_mean) {
        write_metrics_row(*out, res.mean);
    }
}

// Per-decision means go to the log; the CSV keeps per-scenario totals.
void log_decision_time(const EvalResult& res) {
    double seconds = 0.0;
    long decisions = 0;
    for (const auto& log : res.logs) {
        seconds += log.decision_seconds;
        decisions += log.decisions;
    }
    if (decisions > 0) {
        std::cerr << "decision time: " << seconds / static_cast<double>(decisions) << " s mean over " << decisions
                  << " decisions\n";
    }
}

double parse_density_spec(const std::string& spec) {
    const std::string prefix = "density:";
    if (spec.rfind(prefix, 0) != 0) {
        throw CLI::ValidationError("--scenario-gen", "expected density:<multiplier>");
    }
    return std::stod(spec.substr(prefix.size()));
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multi-aircraft taxiway routing: planners, training and evaluation"};
    app.require_subcommand(1);

    // plan
    Common plan_c;
    std::string plan_method;
    std::string plan_scenario;
    std::string plan_out = "-";
    auto* plan = app.add_subcommand("plan", "Run a planner on a scenario file and write its metrics row");
    plan->add_option("--method", plan_method, "dijkstra | astar | ga")
        ->required()
        ->check(CLI::IsMember({"dijkstra", "astar", "ga"}));
    plan->add_option("--map", plan_c.map_path, "Map file")->required()->check(CLI::ExistingFile);
    plan->add_option("--scenario", plan_scenario, "Scenario file")->required()->check(CLI::ExistingFile);
    plan->add_option("--config", plan_c.config_path, "key = value config file")->check(CLI::ExistingFile);
    plan->add_option("--seed", plan_c.seed, "Seed");
    plan->add_option("--out", plan_out, "Output CSV ('-' for stdout)");
    plan->add_option("--timing", plan_c.timing, "wall | off (default off: RT reported as 0)")->check(CLI::IsMember({"wall", "off"}));

    // train
    Common train_c;
    std::string train_method;
    std::optional<std::string> scenario_gen;  // overrides the config density when given
    std::string out_dir;
    auto* train = app.add_subcommand("train", "Train a policy on generated traffic");
    train->add_option("--method", train_method, "catr | ppo | dqn")
        ->required()
        ->check(CLI::IsMember({"catr", "ppo", "dqn"}));
    train->add_option("--map", train_c.map_path, "Map file")->required()->check(CLI::ExistingFile);
    train->add_option("--scenario-gen", scenario_gen, "Traffic generator, density:<multiplier> (default: config density)");
    train->add_option("--config", train_c.config_path, "key = value config file")->check(CLI::ExistingFile);
    train->add_option("--seed", train_c.seed, "Seed");
    train->add_option("--out-dir", out_dir, "Directory for train.csv and checkpoints")->required();

    // eval
    Common eval_c;
    std::string eval_method;
    std::string checkpoint;
    std::string eval_scenario;
    std::optional<double> density;
    int episodes = 1;
    std::string eval_out = "-";
    int snapshot_every = 0;
    auto* eval = app.add_subcommand("eval", "Evaluate a policy or planner over generated episodes");
    eval->add_option("--map", eval_c.map_path, "Map file")->required()->check(CLI::ExistingFile);
    eval->add_option("--method", eval_method, "catr | ppo | dqn | dijkstra | astar | ga | random")
        ->required()
        ->check(CLI::IsMember({"catr", "ppo", "dqn", "dijkstra", "astar", "ga", "random"}));
    eval->add_option("--checkpoint", checkpoint, "Checkpoint for learned methods")->check(CLI::ExistingFile);
    eval->add_option("--scenario", eval_scenario, "Fixed scenario file instead of generated traffic")
        ->check(CLI::ExistingFile);
    eval->add_option("--density", density, "Traffic density multiplier")->check(CLI::PositiveNumber);
    eval->add_option("--episodes", episodes, "Episodes")->check(CLI::PositiveNumber);
    eval->add_option("--seed", eval_c.seed, "Seed");
    eval->add_option("--config", eval_c.config_path, "key = value config file")->check(CLI::ExistingFile);
    eval->add_option("--out", eval_out, "Output CSV ('-' for stdout)");
    eval->add_option("--snapshot-every", snapshot_every, "Write a PPM snapshot every K steps (0 disables)");
    eval->add_option("--timing", eval_c.timing, "wall | off (default off: RT reported as 0)")->check(CLI::IsMember({"wall", "off"}));

    // scenario
    Common gen_c;
    double gen_density = 1.0;
    std::string gen_out = "-";
    auto* gen = app.add_subcommand("scenario", "Generate a scenario file from the traffic model");
    gen->add_option("--map", gen_c.map_path, "Map file")->required()->check(CLI::ExistingFile);
    gen->add_option("--density", gen_density, "Traffic density multiplier")->check(CLI::PositiveNumber);
    gen->add_option("--config", gen_c.config_path, "key = value config file")->check(CLI::ExistingFile);
    gen->add_option("--seed", gen_c.seed, "Seed");
    gen->add_option("--out", gen_out, "Output file ('-' for stdout)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*plan) {
            const Config cfg = read_config(plan_c);
            auto map = read_map(plan_c.map_path);
            const Scenario sc = load_scenario(plan_scenario);
            const EvalSetup setup = make_setup(map, cfg, parse_method(plan_method));
            const std::string name = std::filesystem::path(plan_scenario).stem().string();
            const EvalResult res = run_eval(setup, sc, make_source(map, cfg), 1, plan_c.seed, name,
                                            cfg.traffic.multiplier);
            write_rows(plan_out, res, false);
            if (setup.eval.wall_timing) {
                log_decision_time(res);
            }
        } else if (*train) {
            Config cfg = read_config(train_c);
            if (scenario_gen) {
                cfg.traffic.multiplier = parse_density_spec(*scenario_gen);
            }
            cfg.train.seed = train_c.seed;
            TrainRequest req;
            req.method = parse_method(train_method);
            req.source = make_source(read_map(train_c.map_path), cfg);
            req.env = cfg.env;
            req.obs = cfg.obs;
            req.net = cfg.net;
            req.train = cfg.train;
            req.dqn = cfg.dqn;
            req.eval = cfg.eval;
            req.out_dir = out_dir;
            const TrainOutcome outcome = run_training(req);
            std::cerr << "trained " << outcome.history.size() << " updates into " << out_dir << '\n';
        } else if (*eval) {
            Config cfg = read_config(eval_c);
            if (density) {
                cfg.traffic.multiplier = *density;
            }
            auto map = read_map(eval_c.map_path);
            const Method m = parse_method(eval_method);
            EvalSetup setup = make_setup(map, cfg, m);
            if (is_learned(m)) {
                if (checkpoint.empty()) {
                    throw std::invalid_argument("--checkpoint is required for method " + eval_method);
                }
                auto layout = std::make_shared<const NetLayout>(net_config_for(m, cfg.net));
                setup.params = std::make_shared<const ModelParams>(load_checkpoint(checkpoint, layout));
            }
            std::optional<Scenario> sc;
            std::string name = std::filesystem::path(eval_c.map_path).stem().string();
            if (!eval_scenario.empty()) {
                sc = load_scenario(eval_scenario);
                name = std::filesystem::path(eval_scenario).stem().string();
            }
            EpisodeSnapshots snaps;
            if (snapshot_every > 0) {
                snaps.every = snapshot_every;
                const auto base = eval_out == "-" ? std::filesystem::path("snapshot")
                                                  : std::filesystem::path(eval_out).replace_extension();
                snaps.prefix = base.string() + "_" + eval_method;
            }
            const EvalResult res = run_eval(setup, sc, make_source(map, cfg), episodes, eval_c.seed, name,
                                            cfg.traffic.multiplier, snaps);
            write_rows(eval_out, res, true);
            if (setup.eval.wall_timing) {
                log_decision_time(res);
            }
        } else if (*gen) {
            Config cfg = read_config(gen_c);
            cfg.traffic.multiplier = gen_density;
            const Scenario sc = make_source(read_map(gen_c.map_path), cfg).make(gen_c.seed);
            const std::string text = format_scenario(sc);
            if (gen_out == "-") {
                std::cout << text;
            } else {
                std::ofstream(gen_out, std::ios::binary) << text;
            }
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
