#include "catr/eval_harness.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

namespace catr {

namespace {

constexpr std::array<const char*, 7> kMethodNames{"catr", "ppo", "dqn", "dijkstra", "astar", "ga", "random"};

}  // namespace

const char* method_name(Method m) { return kMethodNames[static_cast<std::size_t>(m)]; }

Method parse_method(const std::string& name) {
    for (std::size_t i = 0; i < kMethodNames.size(); ++i) {
        if (name == kMethodNames[i]) {
            return static_cast<Method>(i);
        }
    }
    throw std::invalid_argument("unknown method '" + name + "'");
}

bool is_learned(Method m) { return m == Method::catr || m == Method::ppo || m == Method::dqn; }

// ---------------------------------------------------------------------------
// Logs and metrics

int EpisodeLog::spawned() const {
    return static_cast<int>(std::count_if(aircraft.begin(), aircraft.end(),
                                          [](const AircraftLog& a) { return a.activation_step.has_value(); }));
}

int EpisodeLog::arrived() const {
    return static_cast<int>(std::count_if(aircraft.begin(), aircraft.end(),
                                          [](const AircraftLog& a) { return a.status == AircraftStatus::arrived; }));
}

int EpisodeLog::failed() const {
    return static_cast<int>(std::count_if(aircraft.begin(), aircraft.end(),
                                          [](const AircraftLog& a) { return a.status == AircraftStatus::failed; }));
}

int EpisodeLog::headon_events() const {
    int n = 0;
    for (const auto& s : steps) {
        n += static_cast<int>(s.headon_pairs.size());
    }
    return n;
}

int EpisodeLog::proximity_events() const {
    int n = 0;
    for (const auto& s : steps) {
        n += static_cast<int>(s.proximity_pairs.size());
    }
    return n;
}

MetricsRow compute_metrics(const std::vector<EpisodeLog>& logs) {
    long spawned = 0;
    long arrived = 0;
    long headon = 0;
    long proximity = 0;
    double dr = 0.0;
    double etr = 0.0;
    long routed = 0;  // arrivals with a non-empty shortest route
    double seconds = 0.0;
    for (const auto& log : logs) {
        spawned += log.spawned();
        headon += log.headon_events();
        proximity += log.proximity_events();
        seconds += log.decision_seconds;
        for (const auto& a : log.aircraft) {
            if (a.status != AircraftStatus::arrived) {
                continue;
            }
            ++arrived;
            if (a.shortest <= 0) {
                continue;
            }
            ++routed;
            const double base = static_cast<double>(a.shortest);
            dr += (a.path_length - a.shortest) / base;
            etr += (a.taxi_steps - a.shortest) / base;
        }
    }
    if (spawned == 0) {
        throw MetricsError("no aircraft were activated");
    }
    MetricsRow row;
    const double sp = static_cast<double>(spawned);
    row.hcr = 100.0 * static_cast<double>(headon) / sp;
    row.pcr = 100.0 * static_cast<double>(proximity) / sp;
    row.sr = 100.0 * static_cast<double>(arrived) / sp;
    row.dr = routed > 0 ? 100.0 * dr / static_cast<double>(routed) : 0.0;
    row.etr = routed > 0 ? 100.0 * etr / static_cast<double>(routed) : 0.0;
    row.rt = seconds / static_cast<double>(logs.size());
    return row;
}

EpisodeLog make_episode_log(const SurfaceEnv& env, std::vector<StepEvents> steps, double decision_seconds,
                            long decisions, std::uint64_t seed) {
    EpisodeLog log;
    log.seed = seed;
    log.steps = std::move(steps);
    log.decision_seconds = decision_seconds;
    log.decisions = decisions;
    for (const auto& a : env.aircraft()) {
        AircraftLog l;
        l.id = a.id;
        l.status = a.status;
        l.spawn_step = a.spawn_step;
        l.activation_step = a.activation_step;
        l.arrival_step = a.step_of_arrival;
        l.path_length = a.moves;
        std::set<Point> cells;
        for (const auto& p : a.path_log) {
            cells.insert(p.cell());
        }
        l.distinct_cells = static_cast<int>(cells.size());
        l.shortest = shortest_steps(env.map(), Pose{a.origin.x, a.origin.y, a.spawn_heading}, a.destination);
        if (a.activation_step && a.step_of_arrival) {
            l.taxi_steps = *a.step_of_arrival - *a.activation_step;
        }
        log.aircraft.push_back(l);
    }
    return log;
}

// ---------------------------------------------------------------------------
// Decision sources

namespace {

class PolicySource final : public DecisionSource {
public:
    PolicySource(std::shared_ptr<const ModelParams> params, ObsConfig obs, bool mask_tree, bool q_values)
        : params_(std::move(params)), obs_(obs), mask_tree_(mask_tree), q_values_(q_values) {}

    void begin_episode(const SurfaceEnv&) override {}

    Action decide(const SurfaceEnv& env, int id, const ActionMask& mask) override {
        auto x = build_observation(env, id, obs_);
        if (mask_tree_) {
            mask_hftr(x);
        }
        const ActionMaskBits bits(mask.valid.begin(), mask.valid.end());
        forward_into(*params_, x, bits, out_);
        return static_cast<Action>(argmax_valid(q_values_ ? out_.logits : out_.action_probs, bits));
    }

private:
    std::shared_ptr<const ModelParams> params_;
    ObsConfig obs_;
    bool mask_tree_;
    bool q_values_;
    ForwardOutput out_;
};

class RandomSource final : public DecisionSource {
public:
    explicit RandomSource(std::uint64_t seed) : rng_(seed) {}
    void begin_episode(const SurfaceEnv&) override {}
    Action decide(const SurfaceEnv&, int, const ActionMask& mask) override {
        std::vector<Action> valid;
        for (Action a : kAllActions) {
            if (mask[a]) {
                valid.push_back(a);
            }
        }
        std::uniform_int_distribution<std::size_t> pick(0, valid.size() - 1);
        return valid[pick(rng_)];
    }

private:
    std::mt19937_64 rng_;
};

// Shared follow-the-route logic; subclasses decide when to (re)plan.
class FollowerSource : public DecisionSource {
public:
    void begin_episode(const SurfaceEnv&) override { follower_.clear(); }

    Action decide(const SurfaceEnv& env, int id, const ActionMask& mask) override {
        if (needs_plan(env, id)) {
            follower_.set_route(plan(env, id));
        }
        return follower_.next_action(id, mask);
    }

    void end_step(const std::vector<std::pair<int, Action>>& executed) override {
        for (const auto& [id, a] : executed) {
            follower_.advance(id, a);
        }
    }

protected:
    virtual bool needs_plan(const SurfaceEnv& env, int id) const { (void)env; return !follower_.has_route(id); }
    virtual PlannedRoute plan(const SurfaceEnv& env, int id) = 0;
    RouteFollower follower_;
};

class DijkstraSource final : public FollowerSource {
protected:
    PlannedRoute plan(const SurfaceEnv& env, int id) override { return plan_dijkstra(env.map(), env.aircraft(id)); }
};

class AstarSource final : public FollowerSource {
public:
    explicit AstarSource(AstarConfig cfg) : cfg_(cfg) {}

protected:
    bool needs_plan(const SurfaceEnv&, int id) const override {
        return !follower_.has_route(id) || follower_.steps_since_plan(id) >= cfg_.replan_period;
    }
    PlannedRoute plan(const SurfaceEnv& env, int id) override {
        return plan_astar_congestion(env.map(), env, env.aircraft(id), cfg_);
    }

private:
    AstarConfig cfg_;
};

// Plans every scheduled aircraft once at episode start, in id order. Routes
// that end short of the destination fall back to a shortest route from
// wherever the aircraft stands.
class GaSource final : public FollowerSource {
public:
    GaSource(GaConfig cfg, std::uint64_t seed) : cfg_(cfg) { cfg_.seed = seed; }

    void begin_episode(const SurfaceEnv& env) override {
        FollowerSource::begin_episode(env);
        std::vector<GaAgent> agents;
        for (const auto& a : env.aircraft()) {
            agents.push_back({a.id, Pose{a.origin.x, a.origin.y, a.spawn_heading}, a.destination, a.spawn_step});
        }
        remaining_.clear();
        if (agents.empty()) {
            return;
        }
        const GaResult res = plan_ga(env.map(), agents, cfg_);
        for (const auto& r : res.routes) {
            follower_.set_route(r);
            remaining_.emplace_back(r.aircraft_id, static_cast<int>(r.actions.size()));
        }
    }

    void end_step(const std::vector<std::pair<int, Action>>& executed) override {
        FollowerSource::end_step(executed);
        for (const auto& [id, a] : executed) {
            if (a == Action::stop) {
                continue;
            }
            for (auto& [rid, left] : remaining_) {
                if (rid == id) {
                    --left;
                }
            }
        }
    }

protected:
    bool needs_plan(const SurfaceEnv&, int id) const override {
        for (const auto& [rid, left] : remaining_) {
            if (rid == id) {
                return left <= 0;
            }
        }
        return true;
    }
    PlannedRoute plan(const SurfaceEnv& env, int id) override {
        PlannedRoute r = plan_dijkstra(env.map(), env.aircraft(id));
        bool found = false;
        for (auto& [rid, left] : remaining_) {
            if (rid == id) {
                left = static_cast<int>(r.actions.size());
                found = true;
            }
        }
        if (!found) {
            remaining_.emplace_back(id, static_cast<int>(r.actions.size()));
        }
        return r;
    }

private:
    GaConfig cfg_;
    std::vector<std::pair<int, int>> remaining_;
};

}  // namespace

std::unique_ptr<DecisionSource> make_decision_source(const EvalSetup& setup, std::uint64_t seed) {
    if (is_learned(setup.method) && !setup.params) {
        throw std::invalid_argument(std::string("method ") + method_name(setup.method) + " needs a checkpoint");
    }
    switch (setup.method) {
        case Method::catr:
            return std::make_unique<PolicySource>(setup.params, setup.obs, false, false);
        case Method::ppo:
            return std::make_unique<PolicySource>(setup.params, setup.obs, true, false);
        case Method::dqn:
            return std::make_unique<PolicySource>(setup.params, setup.obs, false, true);
        case Method::dijkstra:
            return std::make_unique<DijkstraSource>();
        case Method::astar:
            return std::make_unique<AstarSource>(setup.astar);
        case Method::ga:
            return std::make_unique<GaSource>(setup.ga, seed);
        case Method::random:
            return std::make_unique<RandomSource>(seed);
    }
    throw std::invalid_argument("unknown method");
}

// ---------------------------------------------------------------------------
// Episodes

EpisodeLog run_episode(const EvalSetup& setup, const Scenario& scenario, std::uint64_t seed,
                       const EpisodeSnapshots& snapshots) {
    if (is_learned(setup.method)) {
        if (!setup.params) {
            throw std::invalid_argument(std::string("method ") + method_name(setup.method) + " needs a checkpoint");
        }
        if (setup.params->layout().input_size() != observation_size(setup.obs.hftr_levels)) {
            throw std::invalid_argument("checkpoint layout does not match the observation configuration");
        }
    }
    SurfaceEnv env(setup.map, setup.env);
    env.reset(scenario);
    auto source = make_decision_source(setup, seed);
    using clock = std::chrono::steady_clock;
    double seconds = 0.0;
    long decisions = 0;
    const auto timed = [&](auto&& fn) {
        if (!setup.eval.wall_timing) {
            return fn();
        }
        const auto t0 = clock::now();
        auto r = fn();
        seconds += std::chrono::duration<double>(clock::now() - t0).count();
        return r;
    };
    timed([&] {
        source->begin_episode(env);
        return 0;
    });

    std::vector<StepEvents> steps;
    std::vector<std::pair<int, Action>> executed;
    const auto snap = [&] {
        if (snapshots.every > 0 && env.step_index() % snapshots.every == 0) {
            std::ostringstream name;
            name << snapshots.prefix << "_step" << std::setw(4) << std::setfill('0') << env.step_index() << ".ppm";
            write_snapshot(env, name.str(), setup.eval.snapshot_pixels);
        }
    };
    snap();
    while (!env.done()) {
        executed.clear();
        timed([&] {
            source->begin_step(env);
            return 0;
        });
        for (int id : env.active_ids()) {
            const ActionMask mask = env.valid_actions(id);
            const Action a = timed([&] { return source->decide(env, id, mask); });
            ++decisions;
            env.reserve(id, a);
            executed.emplace_back(id, a);
        }
        StepResult res = env.step();
        source->end_step(executed);
        steps.push_back(std::move(res.events));
        snap();
    }
    return make_episode_log(env, std::move(steps), seconds, decisions, seed);
}

EvalResult run_eval(const EvalSetup& setup, const std::optional<Scenario>& scenario, const ScenarioSource& generator,
                    int episodes, std::uint64_t seed, const std::string& scenario_name, double density,
                    const EpisodeSnapshots& snapshots) {
    if (episodes < 1) {
        throw std::invalid_argument("run_eval needs at least one episode");
    }
    EvalResult out;
    for (int k = 0; k < episodes; ++k) {
        const std::uint64_t s = seed + static_cast<std::uint64_t>(k);
        const Scenario sc = scenario ? *scenario : generator.make(s);
        EpisodeSnapshots snaps = snapshots;
        if (snaps.every > 0) {
            snaps.prefix += "_ep" + std::to_string(k);
        }
        out.logs.push_back(run_episode(setup, sc, s, snaps));
        MetricsRow row = compute_metrics({out.logs.back()});
        row.scenario = scenario_name;
        row.method = method_name(setup.method);
        row.density = density;
        row.seed = s;
        out.per_episode.push_back(row);
    }
    MetricsRow& m = out.mean;
    m.scenario = scenario_name + ":mean";
    m.method = method_name(setup.method);
    m.density = density;
    m.seed = seed;
    for (const auto& r : out.per_episode) {
        m.hcr += r.hcr;
        m.pcr += r.pcr;
        m.sr += r.sr;
        m.dr += r.dr;
        m.etr += r.etr;
        m.rt += r.rt;
    }
    const double n = static_cast<double>(out.per_episode.size());
    m.hcr /= n;
    m.pcr /= n;
    m.sr /= n;
    m.dr /= n;
    m.etr /= n;
    m.rt /= n;
    return out;
}

void write_metrics_header(std::ostream& out) { out << "scenario,method,density,seed,HCR,PCR,SR,DR,ETR,RT\n"; }

void write_metrics_row(std::ostream& out, const MetricsRow& row) {
    std::ostringstream s;
    s << std::fixed;
    s << row.scenario << ',' << row.method << ',' << std::setprecision(2) << row.density << ',' << row.seed << ','
      << std::setprecision(4) << row.hcr << ',' << row.pcr << ',' << row.sr << ',' << row.dr << ',' << row.etr << ','
      << std::setprecision(6) << row.rt << '\n';
    out << s.str();
}

// ---------------------------------------------------------------------------
// Snapshots

namespace {

using Rgb = std::array<std::uint8_t, 3>;

Rgb cell_colour(const GridCell& c, const std::array<RunwayState, 2>& runways) {
    switch (c.kind) {
        case CellKind::blocked:
            return {40, 40, 40};
        case CellKind::taxiway:
            return {200, 200, 200};
        case CellKind::gate:
            return {90, 140, 220};
        case CellKind::runway:
            switch (runways[static_cast<std::size_t>(c.runway_id - 1)].mode) {
                case RunwayMode::takeoff:
                    return {200, 60, 60};
                case RunwayMode::landing:
                    return {230, 140, 40};
                case RunwayMode::crossing:
                    return {220, 210, 60};
                case RunwayMode::empty:
                    return {100, 110, 120};
            }
    }
    return {0, 0, 0};
}

}  // namespace

std::string render_snapshot(const SurfaceEnv& env, int s) {
    if (s < 1) {
        throw std::invalid_argument("snapshot pixels per cell must be positive");
    }
    const GridMap& map = env.map();
    const int w = map.width() * s;
    const int h = map.height() * s;
    std::vector<Rgb> px(static_cast<std::size_t>(w) * static_cast<std::size_t>(h));
    const auto put = [&](int x, int y, Rgb c) {
        if (x >= 0 && y >= 0 && x < w && y < h) {
            px[static_cast<std::size_t>(y) * static_cast<std::size_t>(w) + static_cast<std::size_t>(x)] = c;
        }
    };
    for (int cy = 0; cy < map.height(); ++cy) {
        for (int cx = 0; cx < map.width(); ++cx) {
            const Rgb c = cell_colour(map.cell(cx, cy), env.runways());
            for (int j = 0; j < s; ++j) {
                for (int i = 0; i < s; ++i) {
                    put(cx * s + i, cy * s + j, c);
                }
            }
        }
    }
    for (const auto& a : env.aircraft()) {
        if (!a.active()) {
            continue;
        }
        const int x0 = a.pose.x * s;
        const int y0 = a.pose.y * s;
        const int m = s / 4;
        for (int j = m; j < s - m; ++j) {
            for (int i = m; i < s - m; ++i) {
                put(x0 + i, y0 + j, {255, 255, 255});
            }
        }
        const int c = s / 2;
        for (int t = 0; t <= c; ++t) {
            put(x0 + c + heading_dx(a.pose.h) * t, y0 + c + heading_dy(a.pose.h) * t, {0, 0, 0});
        }
    }
    std::string out = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
    out.reserve(out.size() + px.size() * 3);
    for (const auto& p : px) {
        out.append(reinterpret_cast<const char*>(p.data()), 3);
    }
    return out;
}

void write_snapshot(const SurfaceEnv& env, const std::string& path, int pixels_per_cell) {
    const std::string data = render_snapshot(env, pixels_per_cell);
    std::ofstream f(path, std::ios::binary);
    if (!f || !f.write(data.data(), static_cast<std::streamsize>(data.size()))) {
        throw std::runtime_error("cannot write snapshot '" + path + "'");
    }
}

// ---------------------------------------------------------------------------
// Training driver

NetConfig net_config_for(Method m, const NetConfig& base) {
    NetConfig n = base;
    if (m == Method::ppo) {
        n.value_components = 1;
    }
    return n;
}

TrainConfig train_config_for(Method m, const TrainConfig& base) {
    TrainConfig t = base;
    t.use_decomposition = m == Method::catr;
    t.hftr_enabled = m != Method::ppo;
    return t;
}

void write_train_header(std::ostream& out, int k) {
    out << "update,mean_return,finished";
    for (const char* p : {"L", "w", "g"}) {
        for (int i = 0; i < k; ++i) {
            out << ',' << p << i;
        }
    }
    out << ",entropy,policy_loss,clip_fraction,eval_HCR,eval_PCR,eval_SR\n";
}

void write_train_row(std::ostream& out, const UpdateStats& s) {
    std::ostringstream o;
    o << std::setprecision(10);
    o << s.update << ',' << s.mean_return << ',' << s.finished_trajectories;
    for (const auto* v : {&s.value_losses, &s.weights, &s.grad_norms}) {
        for (double x : *v) {
            o << ',' << x;
        }
    }
    o << ',' << s.entropy << ',' << s.policy_loss << ',' << s.clip_fraction;
    if (s.evaluated) {
        o << ',' << s.eval_hcr << ',' << s.eval_pcr << ',' << s.eval_sr;
    } else {
        o << ",,,";
    }
    o << '\n';
    out << o.str();
}

TrainOutcome run_training(const TrainRequest& req) {
    if (!is_learned(req.method)) {
        throw std::invalid_argument(std::string("method ") + method_name(req.method) + " is not trainable");
    }
    const NetConfig net = net_config_for(req.method, req.net);
    const TrainConfig tc = train_config_for(req.method, req.train);
    std::optional<PpoTrainer> ppo;
    std::optional<DqnTrainer> dqn;
    if (req.method == Method::dqn) {
        dqn.emplace(req.source, req.env, req.obs, net, tc, req.dqn);
    } else {
        ppo.emplace(req.source, req.env, req.obs, net, tc);
    }
    const auto current = [&]() -> const ModelParams& { return dqn ? dqn->params() : ppo->params(); };

    std::ofstream csv;
    const std::filesystem::path dir(req.out_dir);
    if (!req.out_dir.empty()) {
        std::filesystem::create_directories(dir);
        csv.open(dir / "train.csv");
        if (!csv) {
            throw std::runtime_error("cannot write " + (dir / "train.csv").string());
        }
        write_train_header(csv, net.value_components);
    }

    EvalSetup setup;
    setup.map = req.source.map;
    setup.env = req.env;
    setup.obs = req.obs;
    setup.eval = req.eval;
    setup.eval.wall_timing = false;
    setup.method = req.method;

    TrainOutcome outcome;
    std::shared_ptr<const ModelParams> best;
    double best_sr = 0.0;
    double best_hcr = 0.0;
    for (int u = 0; u < tc.updates; ++u) {
        UpdateStats st = dqn ? dqn->iterate() : ppo->iterate();
        const bool last = u + 1 == tc.updates;
        if (req.eval.eval_every > 0 && req.eval.eval_episodes > 0 && (st.update % req.eval.eval_every == 0 || last)) {
            setup.params = std::make_shared<const ModelParams>(current());
            // Fixed evaluation scenarios, disjoint from the training stream.
            const EvalResult ev = run_eval(setup, std::nullopt, req.source, req.eval.eval_episodes,
                                           tc.seed + 0x100000000ULL, "train-eval", req.source.traffic.multiplier);
            st.evaluated = true;
            st.eval_hcr = ev.mean.hcr;
            st.eval_pcr = ev.mean.pcr;
            st.eval_sr = ev.mean.sr;
            // Ties go to the later update.
            const bool better = !best || ev.mean.sr > best_sr || (ev.mean.sr == best_sr && ev.mean.hcr <= best_hcr);
            if (req.eval.keep_best && better) {
                best = setup.params;
                best_sr = ev.mean.sr;
                best_hcr = ev.mean.hcr;
                outcome.selected_update = st.update;
            }
        }
        if (csv.is_open()) {
            write_train_row(csv, st);
            csv.flush();
            if (req.eval.checkpoint_every > 0 && st.update % req.eval.checkpoint_every == 0) {
                save_checkpoint(current(), (dir / ("update_" + std::to_string(st.update) + ".ckpt")).string());
            }
        }
        outcome.history.push_back(std::move(st));
    }
    if (!req.out_dir.empty()) {
        save_checkpoint(current(), (dir / "final.ckpt").string());
        if (best) {
            save_checkpoint(*best, (dir / "best.ckpt").string());
        }
    }
    if (best) {
        outcome.params = best;
    } else {
        outcome.params = std::make_shared<const ModelParams>(current());
        outcome.selected_update = tc.updates;
    }
    return outcome;
}

}  // namespace catr
