#include "catr/baseline_planners.hpp"

#include <algorithm>
#include <functional>
#include <limits>
#include <queue>
#include <random>

namespace catr {

std::optional<std::vector<Point>> replay_route(const GridMap& map, const Pose& start, std::span<const Action> actions) {
    std::vector<Point> cells{start.cell()};
    Pose p = start;
    for (Action a : actions) {
        const auto q = successor(p, a, map);
        if (!q) {
            return std::nullopt;
        }
        p = *q;
        if (a != Action::stop) {
            cells.push_back(p.cell());
        }
    }
    return cells;
}

namespace {

// Best-first search over (x, y, heading). Ties are broken by lower g, then
// insertion order, so results are deterministic.
PlannedRoute search_route(const GridMap& map, int aircraft_id, const Pose& start, Point goal,
                          const std::function<double(const Pose&)>& move_cost,
                          const std::function<double(Point)>& heuristic) {
    if (!map.traversable(start.x, start.y) || !map.traversable(goal)) {
        throw PlanningError("start or goal is not traversable");
    }
    PlannedRoute route;
    route.aircraft_id = aircraft_id;
    route.cells.push_back(start.cell());
    if (start.cell() == goal) {
        return route;
    }
    const auto key = [&](const Pose& p) {
        return static_cast<std::size_t>(map.index(p.x, p.y)) * 4 + static_cast<std::size_t>(to_int(p.h));
    };
    const std::size_t n = static_cast<std::size_t>(map.width() * map.height()) * 4;
    std::vector<double> g(n, std::numeric_limits<double>::infinity());
    std::vector<std::size_t> parent(n, std::numeric_limits<std::size_t>::max());
    std::vector<Action> via(n, Action::stop);
    std::vector<std::uint8_t> closed(n, 0);

    struct Entry {
        double f;
        double g;
        std::uint64_t order;
        Pose pose;
    };
    const auto worse = [](const Entry& a, const Entry& b) {
        if (a.f != b.f) {
            return a.f > b.f;
        }
        if (a.g != b.g) {
            return a.g < b.g;
        }
        return a.order > b.order;
    };
    std::priority_queue<Entry, std::vector<Entry>, decltype(worse)> open(worse);
    std::uint64_t counter = 0;
    g[key(start)] = 0.0;
    open.push({heuristic(start.cell()), 0.0, counter++, start});

    std::optional<Pose> reached;
    while (!open.empty()) {
        const Entry e = open.top();
        open.pop();
        const std::size_t k = key(e.pose);
        if (closed[k]) {
            continue;
        }
        closed[k] = 1;
        if (e.pose.cell() == goal) {
            reached = e.pose;
            break;
        }
        for (Action a : kMoveActions) {
            const auto q = successor(e.pose, a, map);
            if (!q) {
                continue;
            }
            const std::size_t qk = key(*q);
            const double ng = e.g + move_cost(*q);
            if (ng < g[qk]) {
                g[qk] = ng;
                parent[qk] = k;
                via[qk] = a;
                open.push({ng + heuristic(q->cell()), ng, counter++, *q});
            }
        }
    }
    if (!reached) {
        throw PlanningError("destination unreachable for aircraft " + std::to_string(aircraft_id));
    }
    std::vector<Action> actions;
    for (std::size_t k = key(*reached); k != key(start); k = parent[k]) {
        actions.push_back(via[k]);
    }
    std::reverse(actions.begin(), actions.end());
    route.actions = std::move(actions);
    route.cells = *replay_route(map, start, route.actions);
    route.cost = g[key(*reached)];
    return route;
}

}  // namespace

PlannedRoute plan_dijkstra(const GridMap& map, int aircraft_id, const Pose& start, Point goal) {
    return search_route(
        map, aircraft_id, start, goal, [](const Pose&) { return 1.0; }, [](Point) { return 0.0; });
}

PlannedRoute plan_dijkstra(const GridMap& map, const AircraftState& aircraft) {
    return plan_dijkstra(map, aircraft.id, aircraft.pose, aircraft.destination);
}

PlannedRoute plan_astar_congestion(const GridMap& map, const SurfaceEnv& world, const AircraftState& aircraft,
                                   const AstarConfig& cfg) {
    std::vector<int> load(static_cast<std::size_t>(map.segment_count()), 0);
    for (const auto& other : world.aircraft()) {
        if (other.active() && other.id != aircraft.id) {
            ++load[static_cast<std::size_t>(map.segment_of(other.pose.cell()))];
        }
    }
    const Point goal = aircraft.destination;
    return search_route(
        map, aircraft.id, aircraft.pose, goal,
        [&](const Pose& q) {
            return 1.0 + cfg.c_occ * load[static_cast<std::size_t>(map.segment_of(q.cell()))];
        },
        [goal](Point c) { return static_cast<double>(manhattan(c, goal)); });
}

// ---------------------------------------------------------------------------
// Genetic algorithm

namespace {

Action maneuver_action(std::uint8_t gene) {
    switch (gene % 3) {
        case 0:
            return Action::left;
        case 1:
            return Action::forward;
        default:
            return Action::right;
    }
}

}  // namespace

GaDecode ga_decode(const GridMap& map, const DistanceField& field, const Pose& start,
                   std::span<const std::uint8_t> genes) {
    GaDecode out;
    out.poses.push_back(start);
    const Point goal = field.goal();
    Pose p = start;
    std::size_t gi = 0;
    const int cap = map.traversable_count() * 4;
    for (int guard = 0; guard < cap; ++guard) {
        if (p.cell() == goal) {
            out.reached = true;
            return out;
        }
        std::vector<std::pair<Action, Pose>> moves;
        for (Action a : kMoveActions) {
            if (const auto q = successor(p, a, map)) {
                moves.emplace_back(a, *q);
            }
        }
        if (moves.empty()) {
            return out;  // dead end
        }
        const auto greedy = [&]() {
            auto best = moves.front();
            int best_d = std::numeric_limits<int>::max();
            for (const auto& m : moves) {
                const int d = field.steps(m.second);
                const int dd = d == kUnreachable ? std::numeric_limits<int>::max() - 1 : d;
                if (dd < best_d) {
                    best_d = dd;
                    best = m;
                }
            }
            return best;
        };
        std::pair<Action, Pose> chosen = moves.front();
        if (moves.size() > 1) {
            if (gi < genes.size()) {
                const Action want = maneuver_action(genes[gi++]);
                const auto it = std::find_if(moves.begin(), moves.end(), [&](const auto& m) { return m.first == want; });
                chosen = it != moves.end() ? *it : greedy();
            } else {
                chosen = greedy();
            }
        }
        out.actions.push_back(chosen.first);
        p = chosen.second;
        out.poses.push_back(p);
    }
    out.reached = p.cell() == goal;
    return out;
}

int ga_genotype_length(const GridMap& map, const Pose& start, Point goal) {
    const PlannedRoute shortest = plan_dijkstra(map, -1, start, goal);
    int decisions = 0;
    Pose p = start;
    for (Action a : shortest.actions) {
        int options = 0;
        for (Action m : kMoveActions) {
            options += successor(p, m, map).has_value() ? 1 : 0;
        }
        decisions += options > 1 ? 1 : 0;
        p = *successor(p, a, map);
    }
    return 2 * decisions + 4;
}

int count_conflicts(const GridMap& map, const TimedRoute& route, std::span<const TimedRoute> earlier) {
    int conflicts = 0;
    const auto at = [](const TimedRoute& r, int t) -> const Pose* {
        const int k = t - r.start_time;
        if (k < 0 || k >= static_cast<int>(r.poses.size())) {
            return nullptr;
        }
        return &r.poses[static_cast<std::size_t>(k)];
    };
    for (const auto& other : earlier) {
        const int t0 = std::max(route.start_time, other.start_time);
        const int t1 = std::min(route.start_time + static_cast<int>(route.poses.size()),
                                other.start_time + static_cast<int>(other.poses.size()));
        for (int t = t0; t < t1; ++t) {
            const Pose* a = at(route, t);
            const Pose* b = at(other, t);
            if (a->cell() == b->cell()) {
                ++conflicts;
                continue;
            }
            if (manhattan(a->cell(), b->cell()) == 1 && a->h == opposite(b->h) &&
                map.segment_of(a->cell()) == map.segment_of(b->cell())) {
                ++conflicts;
                continue;
            }
            const Pose* a2 = at(route, t + 1);
            const Pose* b2 = at(other, t + 1);
            if (a2 && b2 && a2->cell() == b->cell() && b2->cell() == a->cell()) {
                ++conflicts;
            }
        }
    }
    return conflicts;
}

double ga_fitness(const GridMap& map, const GaDecode& decode, int start_time, std::span<const TimedRoute> earlier,
                  const GaConfig& cfg) {
    const TimedRoute timed{start_time, decode.poses};
    double f = static_cast<double>(decode.actions.size());
    f += cfg.conflict_weight * count_conflicts(map, timed, earlier);
    if (!decode.reached) {
        f += cfg.dead_end_penalty;
    }
    return f;
}

GaResult plan_ga(const GridMap& map, std::span<const GaAgent> agents, const GaConfig& cfg) {
    if (cfg.population_size < 2) {
        throw std::invalid_argument("GA population must hold at least two individuals");
    }
    if (cfg.crossover_rate < 0.0 || cfg.crossover_rate > 1.0 || cfg.mutation_rate < 0.0 || cfg.mutation_rate > 1.0) {
        throw std::invalid_argument("GA rates must lie in [0, 1]");
    }
    GaResult result;
    std::vector<TimedRoute> planned;
    std::mt19937_64 rng(cfg.seed);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::uniform_int_distribution<int> gene_dist(0, 2);

    for (const auto& agent : agents) {
        const DistanceField field(map, agent.goal);
        if (field.steps(agent.start) == kUnreachable) {
            throw PlanningError("destination unreachable for aircraft " + std::to_string(agent.id));
        }
        const int len = ga_genotype_length(map, agent.start, agent.goal);
        using Genome = std::vector<std::uint8_t>;

        const auto random_genome = [&]() {
            Genome g(static_cast<std::size_t>(len));
            for (auto& x : g) {
                x = static_cast<std::uint8_t>(gene_dist(rng));
            }
            return g;
        };
        const auto evaluate = [&](const Genome& g) {
            return ga_fitness(map, ga_decode(map, field, agent.start, g), agent.start_time, planned, cfg);
        };

        std::vector<Genome> pop;
        std::vector<double> fit;
        for (int attempt = 0; attempt < cfg.init_retries; ++attempt) {
            pop.clear();
            fit.clear();
            bool any_feasible = false;
            for (int i = 0; i < cfg.population_size; ++i) {
                pop.push_back(random_genome());
                fit.push_back(evaluate(pop.back()));
                any_feasible = any_feasible || ga_decode(map, field, agent.start, pop.back()).reached;
            }
            if (any_feasible) {
                break;
            }
            if (attempt + 1 == cfg.init_retries) {
                throw PlanningError("GA found no feasible decode for aircraft " + std::to_string(agent.id));
            }
        }

        const auto tournament = [&]() -> const Genome& {
            std::uniform_int_distribution<std::size_t> pick(0, pop.size() - 1);
            std::size_t best = pick(rng);
            for (int k = 1; k < cfg.tournament_k; ++k) {
                const std::size_t c = pick(rng);
                if (fit[c] < fit[best]) {
                    best = c;
                }
            }
            return pop[best];
        };
        const auto best_index = [&]() {
            return static_cast<std::size_t>(std::min_element(fit.begin(), fit.end()) - fit.begin());
        };

        std::vector<double> trace;
        trace.push_back(fit[best_index()]);
        for (int gen = 0; gen < cfg.generations; ++gen) {
            std::vector<Genome> next;
            std::vector<double> next_fit;
            const std::size_t elite = best_index();
            next.push_back(pop[elite]);
            next_fit.push_back(fit[elite]);
            while (static_cast<int>(next.size()) < cfg.population_size) {
                Genome a = tournament();
                Genome b = tournament();
                if (len > 1 && u01(rng) < cfg.crossover_rate) {
                    std::uniform_int_distribution<int> cut_dist(1, len - 1);
                    const int cut = cut_dist(rng);
                    std::swap_ranges(a.begin() + cut, a.end(), b.begin() + cut);
                }
                for (Genome* child : {&a, &b}) {
                    for (auto& x : *child) {
                        if (u01(rng) < cfg.mutation_rate) {
                            x = static_cast<std::uint8_t>((x + 1 + gene_dist(rng) % 2) % 3);
                        }
                    }
                    if (static_cast<int>(next.size()) < cfg.population_size) {
                        next_fit.push_back(evaluate(*child));
                        next.push_back(std::move(*child));
                    }
                }
            }
            pop = std::move(next);
            fit = std::move(next_fit);
            trace.push_back(fit[best_index()]);
        }

        const Genome& best = pop[best_index()];
        const GaDecode decode = ga_decode(map, field, agent.start, best);
        PlannedRoute route;
        route.aircraft_id = agent.id;
        route.actions = decode.actions;
        for (const auto& p : decode.poses) {
            route.cells.push_back(p.cell());
        }
        route.cost = fit[best_index()];
        planned.push_back({agent.start_time, decode.poses});
        result.routes.push_back(std::move(route));
        result.best_fitness.push_back(std::move(trace));
    }
    return result;
}

// ---------------------------------------------------------------------------
// Route execution

RouteFollower::Progress* RouteFollower::find(int id) {
    for (auto& [rid, p] : routes_) {
        if (rid == id) {
            return &p;
        }
    }
    return nullptr;
}

const RouteFollower::Progress* RouteFollower::find(int id) const {
    for (const auto& [rid, p] : routes_) {
        if (rid == id) {
            return &p;
        }
    }
    return nullptr;
}

void RouteFollower::set_route(const PlannedRoute& route) {
    Progress fresh{route.actions, 0, 0};
    if (auto* p = find(route.aircraft_id)) {
        *p = std::move(fresh);
    } else {
        routes_.emplace_back(route.aircraft_id, std::move(fresh));
    }
}

bool RouteFollower::has_route(int aircraft_id) const { return find(aircraft_id) != nullptr; }

Action RouteFollower::next_action(int aircraft_id, const ActionMask& mask) {
    const Progress* p = find(aircraft_id);
    if (p == nullptr || p->next >= p->actions.size()) {
        return Action::stop;
    }
    const Action want = p->actions[p->next];
    return mask[want] ? want : Action::stop;
}

void RouteFollower::advance(int aircraft_id, Action executed) {
    Progress* p = find(aircraft_id);
    if (p == nullptr) {
        return;
    }
    ++p->age;
    if (executed != Action::stop && p->next < p->actions.size()) {
        ++p->next;
    }
}

int RouteFollower::steps_since_plan(int aircraft_id) const {
    const Progress* p = find(aircraft_id);
    return p == nullptr ? 0 : p->age;
}

void RouteFollower::clear() { routes_.clear(); }

}  // namespace catr
