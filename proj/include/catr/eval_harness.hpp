#pragma once

// Scenario evaluation under learned policies and planners, the six surface
// metrics, CSV output, map snapshots and the training driver.

#include <cstdint>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "catr/baseline_planners.hpp"
#include "catr/neural_core.hpp"
#include "catr/observation.hpp"
#include "catr/surface_env.hpp"
#include "catr/trainer.hpp"

namespace catr {

enum class Method { catr, ppo, dqn, dijkstra, astar, ga, random };

const char* method_name(Method m);
// Throws std::invalid_argument for unknown names.
Method parse_method(const std::string& name);
bool is_learned(Method m);

struct EvalConfig {
    int snapshot_pixels = 8;
    int eval_every = 10;      // training updates between greedy evaluations; 0 disables
    int eval_episodes = 2;
    int checkpoint_every = 50;
    // Training returns the parameters with the best periodic evaluation
    // (highest SR, then lowest HCR, then latest) instead of the last ones.
    bool keep_best = false;
    bool wall_timing = false;  // off reports RT as 0 so CSVs are reproducible
};

struct AircraftLog {
    int id = 0;
    AircraftStatus status = AircraftStatus::pending;
    int spawn_step = 0;
    std::optional<int> activation_step;
    std::optional<int> arrival_step;
    int path_length = 0;  // movement actions; stops excluded
    int distinct_cells = 0;
    int shortest = 0;     // shortest_steps from the spawn pose
    int taxi_steps = 0;   // arrival step minus activation step
};

struct EpisodeLog {
    std::uint64_t seed = 0;
    std::vector<AircraftLog> aircraft;
    std::vector<StepEvents> steps;
    double decision_seconds = 0.0;
    long decisions = 0;

    int spawned() const;
    int arrived() const;
    int failed() const;
    int headon_events() const;
    int proximity_events() const;
};

struct MetricsRow {
    std::string scenario;
    std::string method;
    double density = 1.0;
    std::uint64_t seed = 0;
    double hcr = 0.0;
    double pcr = 0.0;
    double sr = 0.0;
    double dr = 0.0;
    double etr = 0.0;
    double rt = 0.0;
};

class MetricsError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Pools events and aircraft over all logs. RT is the mean per-log decision
// time. Throws MetricsError when no aircraft were activated.
MetricsRow compute_metrics(const std::vector<EpisodeLog>& logs);

EpisodeLog make_episode_log(const SurfaceEnv& env, std::vector<StepEvents> steps, double decision_seconds,
                            long decisions, std::uint64_t seed);

// Per-step decisions. Implementations see reservations of lower ids through
// the mask they are handed.
class DecisionSource {
public:
    virtual ~DecisionSource() = default;
    virtual void begin_episode(const SurfaceEnv& env) = 0;
    // Called once per step before the per-aircraft decisions.
    virtual void begin_step(const SurfaceEnv& env) { (void)env; }
    virtual Action decide(const SurfaceEnv& env, int id, const ActionMask& mask) = 0;
    virtual void end_step(const std::vector<std::pair<int, Action>>& executed) { (void)executed; }
};

struct EvalSetup {
    std::shared_ptr<const GridMap> map;
    EnvConfig env;
    ObsConfig obs;
    AstarConfig astar;
    GaConfig ga;
    EvalConfig eval;
    Method method = Method::dijkstra;
    std::shared_ptr<const ModelParams> params;  // learned methods only
};

std::unique_ptr<DecisionSource> make_decision_source(const EvalSetup& setup, std::uint64_t seed);

struct EpisodeSnapshots {
    int every = 0;  // 0 disables
    std::string prefix;
};

EpisodeLog run_episode(const EvalSetup& setup, const Scenario& scenario, std::uint64_t seed,
                       const EpisodeSnapshots& snapshots = {});

struct EvalResult {
    std::vector<MetricsRow> per_episode;
    MetricsRow mean;
    std::vector<EpisodeLog> logs;
};

// Episode k uses seed + k for traffic generation and stochastic sources. A
// fixed scenario, when given, replaces generation.
EvalResult run_eval(const EvalSetup& setup, const std::optional<Scenario>& scenario, const ScenarioSource& generator,
                    int episodes, std::uint64_t seed, const std::string& scenario_name, double density,
                    const EpisodeSnapshots& snapshots = {});

void write_metrics_header(std::ostream& out);
void write_metrics_row(std::ostream& out, const MetricsRow& row);

// Binary PPM (P6): cells coloured by kind, runways shaded by mode, aircraft
// drawn as a heading bar from the cell centre.
std::string render_snapshot(const SurfaceEnv& env, int pixels_per_cell);
void write_snapshot(const SurfaceEnv& env, const std::string& path, int pixels_per_cell);

// Network configuration actually used by a learned method: the PPO ablation
// keeps a scalar critic.
NetConfig net_config_for(Method m, const NetConfig& base);
TrainConfig train_config_for(Method m, const TrainConfig& base);

struct TrainRequest {
    Method method = Method::catr;
    ScenarioSource source;
    EnvConfig env;
    ObsConfig obs;
    NetConfig net;
    TrainConfig train;
    DqnConfig dqn;
    EvalConfig eval;
    std::string out_dir;  // empty: no files written
};

struct TrainOutcome {
    std::vector<UpdateStats> history;
    std::shared_ptr<const ModelParams> params;
    int selected_update = 0;  // update whose parameters are in `params`
};

// Runs train.updates iterations, writing train.csv, periodic checkpoints and
// final.ckpt into out_dir; with eval.keep_best also best.ckpt.
TrainOutcome run_training(const TrainRequest& req);

void write_train_header(std::ostream& out, int k);
void write_train_row(std::ostream& out, const UpdateStats& s);

}  // namespace catr
