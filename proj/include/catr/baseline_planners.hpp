#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "catr/surface_env.hpp"

namespace catr {

struct PlannedRoute {
    int aircraft_id = 0;
    std::vector<Action> actions;
    std::vector<Point> cells;  // start cell first
    double cost = 0.0;
};

class PlanningError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Replays `actions` from `start` via successor; nullopt if any step is
// infeasible on the map.
std::optional<std::vector<Point>> replay_route(const GridMap& map, const Pose& start, std::span<const Action> actions);

// Traffic-blind minimum-step route over the (x, y, heading) graph.
PlannedRoute plan_dijkstra(const GridMap& map, int aircraft_id, const Pose& start, Point goal);
PlannedRoute plan_dijkstra(const GridMap& map, const AircraftState& aircraft);

struct AstarConfig {
    double c_occ = 0.5;
    int replan_period = 5;
};

// A* with Manhattan heuristic; each move costs 1 + c_occ * (aircraft other
// than the planner on the target cell's segment in the live world).
PlannedRoute plan_astar_congestion(const GridMap& map, const SurfaceEnv& world, const AircraftState& aircraft,
                                   const AstarConfig& cfg);

struct GaConfig {
    int population_size = 50;
    int generations = 100;
    double crossover_rate = 0.8;
    double mutation_rate = 0.1;
    double conflict_weight = 20.0;
    int tournament_k = 3;
    std::uint64_t seed = 0;
    int init_retries = 10;
    double dead_end_penalty = 1000.0;
};

struct GaAgent {
    int id = 0;
    Pose start;
    Point goal;
    int start_time = 0;
};

// Time-indexed poses of a route assumed to be flown without waiting.
struct TimedRoute {
    int start_time = 0;
    std::vector<Pose> poses;
};

struct GaResult {
    std::vector<PlannedRoute> routes;
    std::vector<std::vector<double>> best_fitness;  // per aircraft, per generation
};

struct GaDecode {
    std::vector<Action> actions;
    std::vector<Pose> poses;
    bool reached = false;
};

// Greedy decode of a maneuver genotype (0 left, 1 straight, 2 right) into a
// route. Genes are consumed at cells offering more than one move; once they
// run out the route follows steepest descent of steps-to-go.
GaDecode ga_decode(const GridMap& map, const DistanceField& field, const Pose& start, std::span<const std::uint8_t> genes);
int ga_genotype_length(const GridMap& map, const Pose& start, Point goal);
// Conflicts of `route` against earlier timed routes: co-occupancy, swaps and
// head-on adjacency on one segment.
int count_conflicts(const GridMap& map, const TimedRoute& route, std::span<const TimedRoute> earlier);
double ga_fitness(const GridMap& map, const GaDecode& decode, int start_time, std::span<const TimedRoute> earlier,
                  const GaConfig& cfg);

// Prioritized planning in the given order.
GaResult plan_ga(const GridMap& map, std::span<const GaAgent> agents, const GaConfig& cfg);

// Executes planned routes under the environment's masks: a masked planned
// action is replaced by stop and retried next step.
class RouteFollower {
public:
    void set_route(const PlannedRoute& route);
    bool has_route(int aircraft_id) const;
    Action next_action(int aircraft_id, const ActionMask& mask);
    // Call after the step with the action that was executed.
    void advance(int aircraft_id, Action executed);
    int steps_since_plan(int aircraft_id) const;
    void clear();

private:
    struct Progress {
        std::vector<Action> actions;
        std::size_t next = 0;
        int age = 0;
    };
    std::vector<std::pair<int, Progress>> routes_;
    Progress* find(int id);
    const Progress* find(int id) const;
};

}  // namespace catr
