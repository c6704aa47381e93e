// Acceptance checks. Prints one PASS/FAIL line per criterion; per-seed and
// per-case detail goes to stderr. Exit status is non-zero if any selected
// criterion fails.
//
//   catr_acceptance               all criteria
//   catr_acceptance --criterion N one criterion

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "catr/baseline_planners.hpp"
#include "catr/config.hpp"
#include "catr/eval_harness.hpp"
#include "catr/observation.hpp"
#include "catr/trainer.hpp"
#include "oracles/bfs_oracle.hpp"
#include "oracles/gae_oracle.hpp"
#include "oracles/gradcheck.hpp"
#include "oracles/hftr_oracle.hpp"
#include "oracles/ppo_fixture.hpp"
#include "oracles/worlds.hpp"

namespace {

using namespace catr;
using Clock = std::chrono::steady_clock;

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string data(const std::string& rel) { return std::string(CATR_DATA_DIR) + "/" + rel; }

std::shared_ptr<const GridMap> map_at(const std::string& name) {
    return std::make_shared<const GridMap>(load_map(data("maps/" + name)));
}

std::shared_ptr<const GridMap> map_text(const std::string& text) {
    return std::make_shared<const GridMap>(parse_map(text));
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v, int precision = 3) {
    std::ostringstream s;
    s.precision(precision);
    s << v;
    return s.str();
}

// ---------------------------------------------------------------------------
// 1. Uniform-random masked play never co-locates or swaps aircraft.

Outcome mask_safety() {
    const auto t0 = Clock::now();
    const auto map = map_at("grid12.map");
    std::mt19937_64 rng(1);
    constexpr int kAircraft = 8;
    constexpr int kSteps = 10000;
    SurfaceEnv env(map, {});
    const auto fresh_world = [&] {
        Scenario sc;
        do {
            sc = oracle::random_placement(*map, rng, kAircraft);
            for (auto& f : sc.flights) {
                while (f.destination == f.origin) {
                    f.destination = oracle::random_placement(*map, rng, 1).flights[0].origin;
                }
            }
            env.reset(sc);
        } while (static_cast<int>(env.active_ids().size()) < kAircraft);
    };
    fresh_world();
    long co_occupancy = 0;
    long swaps = 0;
    long resets = 0;
    for (int step = 0; step < kSteps; ++step) {
        // Keep all eight aircraft in play: a world that loses one is replaced.
        if (env.done() || static_cast<int>(env.active_ids().size()) < kAircraft) {
            fresh_world();
            ++resets;
        }
        const auto ids = env.active_ids();
        std::vector<Point> before;
        for (int id : ids) {
            before.push_back(env.aircraft(id).pose.cell());
            const ActionMask m = env.valid_actions(id);
            std::vector<Action> valid;
            for (Action a : kAllActions) {
                if (m[a]) {
                    valid.push_back(a);
                }
            }
            std::uniform_int_distribution<std::size_t> pick(0, valid.size() - 1);
            env.reserve(id, valid[pick(rng)]);
        }
        env.step();
        std::vector<Point> after;
        for (int id : ids) {
            after.push_back(env.aircraft(id).pose.cell());
        }
        for (std::size_t i = 0; i < ids.size(); ++i) {
            for (std::size_t j = i + 1; j < ids.size(); ++j) {
                co_occupancy += after[i] == after[j] ? 1 : 0;
                swaps += (after[i] == before[j] && after[j] == before[i] && before[i] != before[j]) ? 1 : 0;
            }
        }
    }
    const double secs = seconds_since(t0);
    Outcome o;
    o.pass = co_occupancy == 0 && swaps == 0 && secs < 10.0;
    o.detail = std::to_string(kSteps) + " steps, " + std::to_string(kAircraft) + " aircraft, " +
               std::to_string(resets) + " world resets: co-occupancy " + std::to_string(co_occupancy) + ", swaps " +
               std::to_string(swaps) + ", " + fmt(secs) + " s (limit 10 s)";
    return o;
}

// ---------------------------------------------------------------------------
// 2. Backward pass against central finite differences.

Outcome gradient_correctness() {
    std::mt19937_64 rng(2);
    std::vector<NetConfig> nets;
    NetConfig a;
    a.route_hidden = {8, 6};
    a.node_embed = 5;
    a.hftr_levels = 3;
    a.fusion = 7;
    a.trunk = 6;
    a.value_components = 5;
    nets.push_back(a);
    NetConfig b = a;
    b.route_hidden = {6};
    b.hftr_levels = 2;
    b.fusion = 0;
    b.value_components = 1;
    nets.push_back(b);
    double worst = 0.0;
    std::size_t params = 0;
    int cases = 0;
    for (const auto& c : nets) {
        for (int t = 0; t < 6; ++t) {
            ModelParams p = init_params(std::make_shared<const NetLayout>(c), static_cast<std::uint64_t>(100 + t));
            const auto x = oracle::random_observation(p.layout(), rng);
            // Masks with one to three invalid actions exercise the masked softmax.
            ActionMaskBits mask{true, true, true, true};
            for (int k = 0; k <= t % 3; ++k) {
                mask[static_cast<std::size_t>((t + 2 * k) % 4)] = false;
            }
            mask[1] = true;
            const auto r = oracle::gradient_check(p, x, mask, oracle::random_probe(c, rng));
            worst = std::max(worst, r.max_rel_error);
            params += r.checked;
            ++cases;
        }
    }
    Outcome o;
    o.pass = worst < 1e-4;
    o.detail = "max relative error " + fmt(worst) + " over " + std::to_string(params) + " parameters in " +
               std::to_string(cases) + " cases (limit 1e-4)";
    return o;
}

// ---------------------------------------------------------------------------
// 3. GAE recursion against the double-sum definition.

Outcome gae_oracle() {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> g(0.0, 1.0);
    std::bernoulli_distribution term(0.1);
    std::uniform_real_distribution<double> u(0.8, 1.0);
    double worst_adv = 0.0;
    for (int seq = 0; seq < 1000; ++seq) {
        constexpr int n = 20;
        std::vector<double> r(n);
        std::vector<double> v(n);
        std::vector<bool> d(n);
        for (int i = 0; i < n; ++i) {
            r[i] = g(rng);
            v[i] = g(rng);
            d[i] = term(rng);
        }
        const double gamma = u(rng);
        const double lambda = u(rng);
        const double boot = g(rng);
        const auto fast = compute_gae(r, v, d, boot, gamma, lambda);
        const auto slow = oracle::gae_double_sum(r, v, d, boot, gamma, lambda);
        for (int i = 0; i < n; ++i) {
            worst_adv = std::max(worst_adv, std::abs(fast.advantages[i] - slow[i]));
        }
    }
    // Component returns against the scalar return on the summed signals.
    double worst_sum = 0.0;
    TrainConfig cfg;
    for (int trial = 0; trial < 1000; ++trial) {
        std::vector<Transition> batch(20);
        for (std::size_t i = 0; i < batch.size(); ++i) {
            for (int c = 0; c < kRewardComponents; ++c) {
                batch[i].reward_vec.push_back(g(rng));
                batch[i].value_vec_old.push_back(g(rng));
            }
            batch[i].done = term(rng) || i + 1 == batch.size();
        }
        std::vector<std::size_t> idx(batch.size());
        std::iota(idx.begin(), idx.end(), 0);
        compute_batch_targets(batch, {idx}, {std::vector<double>(kRewardComponents, 0.0)}, cfg);
        std::vector<double> r;
        std::vector<double> v;
        std::vector<bool> d;
        for (const auto& t : batch) {
            r.push_back(std::accumulate(t.reward_vec.begin(), t.reward_vec.end(), 0.0));
            v.push_back(std::accumulate(t.value_vec_old.begin(), t.value_vec_old.end(), 0.0));
            d.push_back(t.done);
        }
        const auto scalar = compute_gae(r, v, d, 0.0, cfg.gamma, cfg.gae_lambda);
        for (std::size_t i = 0; i < batch.size(); ++i) {
            const auto& cr = batch[i].component_returns;
            worst_sum = std::max(worst_sum, std::abs(std::accumulate(cr.begin(), cr.end(), 0.0) - scalar.returns[i]));
        }
    }
    Outcome o;
    o.pass = worst_adv < 1e-10 && worst_sum < 1e-9;
    o.detail = "1000 sequences of 20 steps: max |A - A_oracle| " + fmt(worst_adv) +
               " (limit 1e-10); max |sum component returns - return| " + fmt(worst_sum) + " (limit 1e-9)";
    return o;
}

// ---------------------------------------------------------------------------
// 4. Weight algebra and the K = 1 reduction.

bool same_bits(const ModelParams& a, const ModelParams& b) {
    return std::equal(a.values().begin(), a.values().end(), b.values().begin(), b.values().end());
}

Outcome weight_algebra() {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(0.0, 500.0);
    double worst_sum = 0.0;
    for (int t = 0; t < 10000; ++t) {
        std::vector<double> g(static_cast<std::size_t>(1 + t % 8));
        for (double& x : g) {
            x = u(rng);
        }
        const auto w = weights_from_norms(g, 0.1 + u(rng) / 50.0);
        worst_sum = std::max(worst_sum, std::abs(std::accumulate(w.w.begin(), w.w.end(), 0.0) - 1.0));
    }
    bool equal_exact = true;
    for (int k = 1; k <= 8; ++k) {
        for (double v : {0.0, 1.0, 123.456, 1e6}) {
            for (double x : weights_from_norms(std::vector<double>(static_cast<std::size_t>(k), v), 1.0).w) {
                equal_exact = equal_exact && x == 1.0 / k;
            }
        }
    }
    // Uniform weights: the weighted loss equals the plain sum, per minibatch.
    const ModelParams p = init_params(std::make_shared<const NetLayout>(NetConfig{}), 4);
    auto batch = oracle::random_batch(p, 256, rng);
    double worst_uniform = 0.0;
    for (std::size_t start = 0; start < batch.size(); start += 64) {
        std::vector<double> pred;
        std::vector<double> ret;
        for (std::size_t j = start; j < start + 64; ++j) {
            const auto f = forward(p, batch[j].observation, batch[j].mask);
            pred.insert(pred.end(), f.value_vec.begin(), f.value_vec.end());
            ret.insert(ret.end(), batch[j].component_returns.begin(), batch[j].component_returns.end());
        }
        const auto vl = decomposed_value_loss(pred, ret, std::vector<double>(5, 0.2), 5);
        const double plain = std::accumulate(vl.per_component.begin(), vl.per_component.end(), 0.0);
        worst_uniform = std::max(worst_uniform, std::abs(vl.total - plain) / std::max(1.0, plain));
    }
    // K = 1: decomposed and scalar critics over three full updates.
    const auto map = map_at("grid12.map");
    ScenarioSource src{map, {}, {}};
    src.traffic.horizon_steps = 60;
    EnvConfig env;
    env.episode_steps = 100;
    NetConfig net;
    net.value_components = 1;
    TrainConfig cfg;
    cfg.rollout_steps = 512;
    cfg.minibatch_size = 128;
    cfg.seed = 7;
    TrainConfig scalar_cfg = cfg;
    cfg.use_decomposition = true;
    scalar_cfg.use_decomposition = false;
    PpoTrainer dec(src, env, {}, net, cfg);
    PpoTrainer sca(src, env, {}, net, scalar_cfg);
    bool identical = true;
    for (int u = 0; u < 3; ++u) {
        dec.iterate();
        sca.iterate();
        identical = identical && same_bits(dec.params(), sca.params());
    }
    Outcome o;
    o.pass = worst_sum <= 1e-12 && equal_exact && worst_uniform <= 1e-12 && identical;
    o.detail = "max |sum w - 1| " + fmt(worst_sum) + " (limit 1e-12); equal norms give 1/K exactly: " +
               (equal_exact ? "yes" : "no") + "; uniform-weight loss vs sum of component losses " +
               fmt(worst_uniform) + "; K=1 decomposed vs scalar after 3 updates bit-identical: " +
               (identical ? "yes" : "no");
    return o;
}

// ---------------------------------------------------------------------------
// 5. Planner oracles.

Outcome planner_oracles() {
    std::mt19937_64 rng(5);
    int maps = 0;
    int bfs_cases = 0;
    int bfs_mismatch = 0;
    int astar_cases = 0;
    int astar_mismatch = 0;
    int ga_traces = 0;
    int ga_increasing = 0;
    while (maps < 50) {
        std::uniform_int_distribution<int> dim(4, 12);
        const auto map = map_text(oracle::random_map_text(rng, dim(rng), dim(rng), 0.75));
        const auto cells = [&] {
            std::vector<Point> out;
            for (int y = 0; y < map->height(); ++y) {
                for (int x = 0; x < map->width(); ++x) {
                    if (map->traversable(x, y)) {
                        out.push_back({x, y});
                    }
                }
            }
            return out;
        }();
        if (cells.size() < 4) {
            continue;
        }
        ++maps;
        std::uniform_int_distribution<std::size_t> pick(0, cells.size() - 1);
        std::vector<GaAgent> agents;
        for (int q = 0; q < 20; ++q) {
            const Point from = cells[pick(rng)];
            const Pose start{from.x, from.y, heading_from_int(static_cast<int>(rng() % 4))};
            const Point goal = cells[pick(rng)];
            const int expect = oracle::bfs_steps(*map, start, goal);
            if (expect < 0) {
                continue;
            }
            ++bfs_cases;
            const auto d = plan_dijkstra(*map, 0, start, goal);
            bfs_mismatch += static_cast<int>(d.actions.size()) == expect ? 0 : 1;

            AircraftState a;
            a.origin = from;
            a.destination = goal;
            a.spawn_heading = start.h;
            SurfaceEnv world(map, {});
            world.reset({{a}, {}});
            if (world.aircraft(0).active()) {
                ++astar_cases;
                const auto s = plan_astar_congestion(*map, world, world.aircraft(0), {});
                astar_mismatch += (s.cost == d.cost && s.actions.size() == d.actions.size()) ? 0 : 1;
            }
            if (agents.size() < 3 && expect > 0) {
                agents.push_back({static_cast<int>(agents.size()), start, goal, static_cast<int>(agents.size())});
            }
        }
        if (!agents.empty()) {
            GaConfig cfg;
            cfg.seed = static_cast<std::uint64_t>(maps);
            cfg.generations = 40;
            cfg.population_size = 30;
            try {
                const auto res = plan_ga(*map, agents, cfg);
                for (const auto& trace : res.best_fitness) {
                    ++ga_traces;
                    for (std::size_t i = 1; i < trace.size(); ++i) {
                        if (trace[i] > trace[i - 1]) {
                            ++ga_increasing;
                            break;
                        }
                    }
                }
            } catch (const PlanningError&) {
                // No feasible random initial decode on this map; nothing to check.
            }
        }
    }
    // Single aircraft on the plus map: every gate-to-gate pair reaches the shortest route.
    const auto plus = map_at("plus.map");
    int plus_cases = 0;
    int plus_miss = 0;
    for (Point from : plus->gate_cells()) {
        for (Point to : plus->gate_cells()) {
            if (from == to) {
                continue;
            }
            for (int h = 0; h < 4; ++h) {
                const Pose start{from.x, from.y, heading_from_int(h)};
                const int best = shortest_steps(*plus, start, to);
                if (best == kUnreachable) {
                    continue;
                }
                GaConfig cfg;
                cfg.seed = static_cast<std::uint64_t>(plus_cases);
                const std::vector<GaAgent> one{{0, start, to, 0}};
                const auto res = plan_ga(*plus, one, cfg);
                ++plus_cases;
                plus_miss += static_cast<int>(res.routes[0].actions.size()) == best ? 0 : 1;
                for (std::size_t i = 1; i < res.best_fitness[0].size(); ++i) {
                    ga_increasing += res.best_fitness[0][i] > res.best_fitness[0][i - 1] ? 1 : 0;
                }
            }
        }
    }
    Outcome o;
    o.pass = bfs_mismatch == 0 && astar_mismatch == 0 && ga_increasing == 0 && plus_cases > 0 && plus_miss == 0;
    o.detail = std::to_string(maps) + " maps: Dijkstra vs BFS mismatches " + std::to_string(bfs_mismatch) + "/" +
               std::to_string(bfs_cases) + "; A* vs Dijkstra on empty worlds mismatches " +
               std::to_string(astar_mismatch) + "/" + std::to_string(astar_cases) +
               "; GA best-fitness increases " + std::to_string(ga_increasing) + " over " +
               std::to_string(ga_traces + plus_cases) + " traces; plus-map GA off shortest " +
               std::to_string(plus_miss) + "/" + std::to_string(plus_cases);
    return o;
}

// ---------------------------------------------------------------------------
// 6. HFTR features against a brute-force segment scan.

Outcome hftr_fidelity() {
    std::mt19937_64 rng(6);
    int worlds = 0;
    long nodes = 0;
    long mismatches = 0;
    long over_cap = 0;
    while (worlds < 200) {
        std::uniform_int_distribution<int> dim(3, 14);
        const auto map = map_text(oracle::random_map_text(rng, dim(rng), dim(rng), 0.7));
        if (map->traversable_count() < 2) {
            continue;
        }
        ++worlds;
        SurfaceEnv env(map, {});
        env.reset(oracle::random_placement(*map, rng, 10));
        for (int id : env.active_ids()) {
            const HftrTensor t = build_hftr(env, id, 3, {});
            int cap = 1;
            for (std::size_t l = 0; l < t.levels.size(); ++l, cap *= 3) {
                over_cap += t.present_count(static_cast<int>(l)) > cap ? 1 : 0;
                for (const auto& n : t.levels[l]) {
                    if (!n.present) {
                        continue;
                    }
                    ++nodes;
                    const auto b = oracle::scan_node(env, id, n.segment, n.travel, l == 0);
                    const int len = map->segment(n.segment).length();
                    const bool ok = std::abs(n.feature.d_head_norm - oracle::norm_distance(b.head, len)) < 1e-12 &&
                                    std::abs(n.feature.d_same_norm - oracle::norm_distance(b.same, len)) < 1e-12 &&
                                    std::abs(n.feature.n_norm - std::min(1.0, b.count / 8.0)) < 1e-12;
                    mismatches += ok ? 0 : 1;
                }
            }
        }
    }
    Outcome o;
    o.pass = mismatches == 0 && over_cap == 0 && nodes > 0;
    o.detail = std::to_string(worlds) + " worlds, " + std::to_string(nodes) + " present nodes: mismatches " +
               std::to_string(mismatches) + ", levels over 3^l " + std::to_string(over_cap);
    return o;
}

// ---------------------------------------------------------------------------
// 7. Toy training: ordering of head-on rates and CaTR success rate.

Outcome toy_training() {
    const auto t0 = Clock::now();
    const Config cfg = load_config(data("configs/toy.cfg"));
    const auto map = map_at("bays20.map");
    const ScenarioSource source{map, cfg.traffic, cfg.runway};
    const int per_episode = traffic_count(cfg.traffic);
    constexpr int kSeeds = 5;
    constexpr int kEvalEpisodes = 10;
    int holds = 0;
    double catr_sr_sum = 0.0;
    std::ostringstream rows;
    for (int seed = 0; seed < kSeeds; ++seed) {
        const auto evaluate = [&](Method m, std::shared_ptr<const ModelParams> params) {
            EvalSetup s;
            s.map = map;
            s.env = cfg.env;
            s.obs = cfg.obs;
            s.astar = cfg.astar;
            s.ga = cfg.ga;
            s.method = m;
            s.params = std::move(params);
            return run_eval(s, std::nullopt, source, kEvalEpisodes, 1000000ULL + 100ULL * seed, "toy",
                            cfg.traffic.multiplier)
                .mean;
        };
        const auto train = [&](Method m) {
            TrainRequest req;
            req.method = m;
            req.source = source;
            req.env = cfg.env;
            req.obs = cfg.obs;
            req.net = cfg.net;
            req.train = cfg.train;
            req.train.seed = static_cast<std::uint64_t>(seed);
            req.eval = cfg.eval;
            return run_training(req);
        };
        const TrainOutcome catr_run = train(Method::catr);
        const TrainOutcome ppo_run = train(Method::ppo);
        const MetricsRow catr = evaluate(Method::catr, catr_run.params);
        const MetricsRow ppo = evaluate(Method::ppo, ppo_run.params);
        const MetricsRow dijkstra = evaluate(Method::dijkstra, nullptr);
        const bool ok = catr.sr >= 90.0 && catr.hcr <= 0.5 * ppo.hcr && dijkstra.hcr >= catr.hcr &&
                        dijkstra.hcr >= ppo.hcr;
        holds += ok ? 1 : 0;
        catr_sr_sum += catr.sr;
        std::cerr << "  seed " << seed << ": CaTR HCR " << fmt(catr.hcr) << " SR " << fmt(catr.sr) << " | PPO HCR "
                  << fmt(ppo.hcr) << " SR " << fmt(ppo.sr) << " | Dijkstra HCR " << fmt(dijkstra.hcr) << " SR "
                  << fmt(dijkstra.sr) << " | selected updates " << catr_run.selected_update << "/"
                  << ppo_run.selected_update << " -> " << (ok ? "holds" : "fails") << " (" << fmt(seconds_since(t0), 4)
                  << " s)\n";
        rows << (seed ? "," : "") << (ok ? "y" : "n");
    }
    const double secs = seconds_since(t0);
    Outcome o;
    o.pass = holds >= 4 && cfg.train.updates <= 500 && secs < 7200.0;
    o.detail = "ordering and CaTR SR >= 90 hold in " + std::to_string(holds) + "/" + std::to_string(kSeeds) +
               " seeds [" + rows.str() + "] (need 4); " + std::to_string(cfg.train.updates) + " updates, " +
               std::to_string(per_episode) + " aircraft per episode, mean CaTR SR " +
               fmt(catr_sr_sum / kSeeds) + "; " + fmt(secs, 5) + " s (limit 7200 s)";
    return o;
}

// ---------------------------------------------------------------------------
// 8. CLI determinism: repeated invocations write identical bytes.

std::string slurp(const std::filesystem::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::ostringstream s;
    s << f.rdbuf();
    return s.str();
}

Outcome cli_determinism() {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "catr_acceptance_cli";
    fs::remove_all(dir);
    fs::create_directories(dir);
    {
        std::ofstream cfg(dir / "small.cfg");
        cfg << "horizon_steps = 60\nepisode_steps = 80\nrollout_steps = 128\nminibatch_size = 64\nupdates = 2\n"
               "eval_every = 1\neval_episodes = 1\ncheckpoint_every = 1\ndqn_learning_starts = 64\n";
    }
    const std::string cli = CATR_CLI_PATH;
    const std::string map = data("maps/airport20.map");
    const std::string cfg = (dir / "small.cfg").string();
    const auto run = [&](const std::string& args) {
        const std::string cmd = "\"" + cli + "\" " + args + " 2>/dev/null";
        return std::system(cmd.c_str()) == 0;
    };
    struct Case {
        std::string name;
        std::function<std::string(const std::string&)> args;  // run tag -> arguments
        std::vector<std::string> outputs;                      // files relative to the run tag
    };
    const auto p = [&](const std::string& tag, const std::string& f) { return (dir / (tag + f)).string(); };
    const std::vector<Case> cases = {
        {"scenario",
         [&](const std::string& t) { return "scenario --map " + map + " --density 1.25 --seed 3 --out " + p(t, "s.scn"); },
         {"s.scn"}},
        {"plan dijkstra",
         [&](const std::string& t) {
             return "plan --method dijkstra --map " + map + " --scenario " + data("scenarios/sample.scn") +
                    " --seed 3 --out " + p(t, "pd.csv");
         },
         {"pd.csv"}},
        {"plan astar",
         [&](const std::string& t) {
             return "plan --method astar --map " + map + " --scenario " + data("scenarios/sample.scn") +
                    " --seed 3 --out " + p(t, "pa.csv");
         },
         {"pa.csv"}},
        {"plan ga",
         [&](const std::string& t) {
             return "plan --method ga --map " + map + " --scenario " + data("scenarios/sample.scn") +
                    " --seed 3 --out " + p(t, "pg.csv");
         },
         {"pg.csv"}},
        {"eval random",
         [&](const std::string& t) {
             return "eval --method random --map " + map + " --config " + cfg + " --density 1.5 --episodes 2 --seed 9 --out " +
                    p(t, "er.csv");
         },
         {"er.csv"}},
        {"train catr",
         [&](const std::string& t) {
             return "train --method catr --map " + map + " --config " + cfg + " --seed 4 --out-dir " + p(t, "tc");
         },
         {"tc/train.csv", "tc/final.ckpt"}},
        {"train ppo",
         [&](const std::string& t) {
             return "train --method ppo --map " + map + " --config " + cfg + " --seed 4 --out-dir " + p(t, "tp");
         },
         {"tp/train.csv", "tp/final.ckpt"}},
        {"train dqn",
         [&](const std::string& t) {
             return "train --method dqn --map " + map + " --config " + cfg + " --seed 4 --out-dir " + p(t, "tq");
         },
         {"tq/train.csv", "tq/final.ckpt"}},
        {"eval catr",
         [&](const std::string& t) {
             return "eval --method catr --checkpoint " + p("a_", "tc/final.ckpt") + " --map " + map + " --config " +
                    cfg + " --episodes 2 --seed 9 --snapshot-every 40 --out " + p(t, "ec.csv");
         },
         {"ec.csv", "ec_catr_ep0_step0040.ppm"}},
    };
    int identical = 0;
    std::vector<std::string> broken;
    for (const auto& c : cases) {
        const bool ran = run(c.args("a_")) && run(c.args("b_"));
        bool same = ran;
        for (const auto& f : c.outputs) {
            const auto a = slurp(dir / ("a_" + f));
            same = same && !a.empty() && a == slurp(dir / ("b_" + f));
        }
        if (same) {
            ++identical;
        } else {
            broken.push_back(c.name + (ran ? "" : " (did not run)"));
        }
    }
    fs::remove_all(dir);
    Outcome o;
    o.pass = broken.empty();
    o.detail = std::to_string(identical) + "/" + std::to_string(cases.size()) +
               " invocations byte-identical across two runs";
    for (const auto& b : broken) {
        o.detail += "; differs: " + b;
    }
    return o;
}

}  // namespace

int main(int argc, char** argv) {
    int only = 0;
    for (int i = 1; i < argc; ++i) {
        const std::string a = argv[i];
        if (a == "--criterion" && i + 1 < argc) {
            only = std::atoi(argv[++i]);
        } else {
            std::cerr << "usage: catr_acceptance [--criterion N]\n";
            return 2;
        }
    }
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
        {"mask safety fuzz", mask_safety},
        {"gradient correctness", gradient_correctness},
        {"GAE oracle", gae_oracle},
        {"component weight algebra", weight_algebra},
        {"planner oracles", planner_oracles},
        {"HFTR fidelity", hftr_fidelity},
        {"toy training ordering", toy_training},
        {"CLI determinism", cli_determinism},
    };
    if (only < 0 || only > static_cast<int>(criteria.size())) {
        std::cerr << "no criterion " << only << '\n';
        return 2;
    }
    bool all = true;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        if (only != 0 && static_cast<int>(i) + 1 != only) {
            continue;
        }
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        all = all && o.pass;
        std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << i + 1 << " (" << criteria[i].first
                  << "): " << o.detail << std::endl;
    }
    return all ? 0 : 1;
}
