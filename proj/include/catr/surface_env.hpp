#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "catr/map_topology.hpp"

namespace catr {

enum class RunwayMode : std::uint8_t { empty = 0, takeoff = 1, landing = 2, crossing = 3 };

const char* runway_mode_name(RunwayMode m);

struct RunwayState {
    RunwayMode mode = RunwayMode::empty;
    int tau_remaining = 0;

    // Entry is masked while a takeoff or landing is in progress.
    bool blocks_entry() const {
        return (mode == RunwayMode::takeoff || mode == RunwayMode::landing) && tau_remaining > 0;
    }
    friend bool operator==(const RunwayState&, const RunwayState&) = default;
};

struct RunwayEvent {
    int runway_id = 1;
    RunwayMode mode = RunwayMode::takeoff;
    int start_step = 0;
    int duration = 1;
};

enum class AircraftStatus : std::uint8_t { pending, active, arrived, failed };

const char* status_name(AircraftStatus s);

struct AircraftState {
    int id = 0;
    Pose pose;
    Point origin;
    Point destination;
    Heading spawn_heading = Heading::north;
    int spawn_step = 0;
    AircraftStatus status = AircraftStatus::pending;
    std::vector<Pose> path_log;
    std::optional<int> step_of_arrival;
    std::optional<int> activation_step;
    std::optional<int> step_of_failure;
    int moves = 0;  // non-stop actions executed

    bool active() const { return status == AircraftStatus::active; }
};

struct ActionMask {
    std::array<bool, 4> valid{false, true, false, false};

    bool operator[](Action a) const { return valid[static_cast<std::size_t>(to_int(a))]; }
    int count() const;
    friend bool operator==(const ActionMask&, const ActionMask&) = default;
};

using AircraftPair = std::pair<int, int>;  // first < second

struct StepEvents {
    std::vector<AircraftPair> headon_pairs;
    std::vector<AircraftPair> proximity_pairs;
    std::vector<int> arrivals;
    // Aircraft left with no route to their destination.
    std::vector<int> stranded;
};

inline constexpr int kRewardComponents = 5;

struct RewardVector {
    double dist = 0.0;
    double move = 0.0;
    double arrive = 0.0;
    double prox = 0.0;
    double conf = 0.0;

    double total() const { return dist + move + arrive + prox + conf; }
    // Component order (dist, move, arrive, prox, conf).
    std::array<double, kRewardComponents> as_array() const { return {dist, move, arrive, prox, conf}; }
};

struct Scenario {
    std::vector<AircraftState> flights;
    std::vector<RunwayEvent> runway_events;
};

class ScenarioError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

Scenario parse_scenario(std::string_view text);
Scenario load_scenario(const std::string& path);
std::string format_scenario(const Scenario& s);
// Throws ScenarioError on overlapping events on one runway or bad fields.
void validate_runway_events(const std::vector<RunwayEvent>& events);

struct EnvConfig {
    int d_prox = 2;
    double r_dist_scale = 0.1;
    double r_move = -0.01;
    double r_arrive = 10.0;
    double r_prox = -0.5;
    double r_conf = -5.0;
    int episode_steps = 400;
};

struct TrafficSpec {
    double base_density = 42.0;  // aircraft per hour
    double multiplier = 1.0;
    int horizon_steps = 360;
    double step_seconds = 10.0;
    int min_od_steps = 4;
};

int traffic_count(const TrafficSpec& spec);

class TrafficError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

std::vector<AircraftState> generate_traffic(const GridMap& map, const TrafficSpec& spec,
                                            std::uint64_t seed);

struct RunwayScheduleSpec {
    int period = 0;  // 0 disables generated events
    int duration = 0;
    int horizon_steps = 0;
};

// Alternating takeoff / landing blocks on each runway with seeded phase.
std::vector<RunwayEvent> generate_runway_events(const GridMap& map, const RunwayScheduleSpec& spec,
                                                std::uint64_t seed);

struct StepResult {
    StepEvents events;
    // One entry per aircraft that was active when the step began, id order.
    std::vector<std::pair<int, RewardVector>> rewards;
};

class ContractError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

// Synchronized multi-aircraft surface simulation. Joint actions are resolved
// by reservation in increasing aircraft-id order: each aircraft's mask sees the
// targets already reserved by lower ids in the same step.
class SurfaceEnv {
public:
    SurfaceEnv(std::shared_ptr<const GridMap> map, EnvConfig config);

    void reset(const Scenario& scenario);

    const GridMap& map() const { return *map_; }
    std::shared_ptr<const GridMap> map_ptr() const { return map_; }
    const EnvConfig& config() const { return config_; }
    int step_index() const { return step_; }
    bool done() const;

    const std::vector<AircraftState>& aircraft() const { return aircraft_; }
    const AircraftState& aircraft(int id) const;
    std::vector<int> active_ids() const;
    const std::array<RunwayState, 2>& runways() const { return runways_; }
    // Aircraft id at a cell, or -1.
    int occupant(Point p) const { return occupancy_[static_cast<std::size_t>(map_->index(p))]; }

    // Movement actions still needed to reach the destination from the
    // current pose, or kUnreachable.
    int steps_to_go(int id) const;
    int steps_to_go(const AircraftState& a, const Pose& pose) const;

    ActionMask valid_actions(int id) const;
    // Must be called in increasing id order within a step.
    void reserve(int id, Action action);
    // Active aircraft without a reservation stop.
    StepResult step();
    // One action per active aircraft, in id order.
    StepResult step(const std::vector<Action>& actions);

    // Test hook: overrides the live runway state until the next step.
    void set_runway_state(int runway_id, RunwayState state);

private:
    std::size_t slot(int id) const;
    const DistanceField& field_for(Point goal) const;
    void advance_runway_schedule();
    void activate_pending();

    std::shared_ptr<const GridMap> map_;
    EnvConfig config_;
    int step_ = 0;
    std::vector<AircraftState> aircraft_;
    std::vector<RunwayEvent> events_;
    std::array<RunwayState, 2> runways_{};
    std::vector<int> occupancy_;
    std::vector<int> reserved_;
    std::vector<std::optional<Action>> planned_;
    int last_reserved_id_ = -1;
    mutable std::map<Point, std::shared_ptr<const DistanceField>> fields_;
};

}  // namespace catr
