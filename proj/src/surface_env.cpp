#include "catr/surface_env.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

namespace catr {

const char* runway_mode_name(RunwayMode m) {
    switch (m) {
        case RunwayMode::empty:
            return "empty";
        case RunwayMode::takeoff:
            return "takeoff";
        case RunwayMode::landing:
            return "landing";
        case RunwayMode::crossing:
            return "crossing";
    }
    return "?";
}

const char* status_name(AircraftStatus s) {
    switch (s) {
        case AircraftStatus::pending:
            return "pending";
        case AircraftStatus::active:
            return "active";
        case AircraftStatus::arrived:
            return "arrived";
        case AircraftStatus::failed:
            return "failed";
    }
    return "?";
}

int ActionMask::count() const {
    return static_cast<int>(std::count(valid.begin(), valid.end(), true));
}

// ---------------------------------------------------------------------------
// Scenario files

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) {
        return {};
    }
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

RunwayMode parse_mode(const std::string& word, int line_no) {
    if (word == "takeoff") {
        return RunwayMode::takeoff;
    }
    if (word == "landing") {
        return RunwayMode::landing;
    }
    if (word == "crossing") {
        return RunwayMode::crossing;
    }
    throw ScenarioError("line " + std::to_string(line_no) + ": unknown runway mode '" + word + "'");
}

}  // namespace

void validate_runway_events(const std::vector<RunwayEvent>& events) {
    for (const auto& e : events) {
        if (e.runway_id < 1 || e.runway_id > 2) {
            throw ScenarioError("runway event has runway id " + std::to_string(e.runway_id));
        }
        if (e.duration < 1 || e.start_step < 0) {
            throw ScenarioError("runway event needs start_step >= 0 and duration >= 1");
        }
        if (e.mode == RunwayMode::empty) {
            throw ScenarioError("runway event mode must be takeoff, landing or crossing");
        }
    }
    for (std::size_t i = 0; i < events.size(); ++i) {
        for (std::size_t j = i + 1; j < events.size(); ++j) {
            const auto& a = events[i];
            const auto& b = events[j];
            if (a.runway_id != b.runway_id) {
                continue;
            }
            const bool overlap =
                a.start_step < b.start_step + b.duration && b.start_step < a.start_step + a.duration;
            if (overlap) {
                throw ScenarioError("overlapping events on runway " + std::to_string(a.runway_id) +
                                    " at steps " + std::to_string(a.start_step) + " and " +
                                    std::to_string(b.start_step));
            }
        }
    }
}

Scenario parse_scenario(std::string_view text) {
    Scenario s;
    std::istringstream in{std::string(text)};
    std::string raw;
    enum class Section { none, flights, events } section = Section::none;
    int line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        std::string line = raw;
        if (const auto hash = line.find('#'); hash != std::string::npos) {
            line.resize(hash);
        }
        line = trim(line);
        if (line.empty()) {
            continue;
        }
        if (line == "[flights]") {
            section = Section::flights;
            continue;
        }
        if (line == "[runway_events]") {
            section = Section::events;
            continue;
        }
        std::istringstream fields(line);
        std::string extra;
        if (section == Section::flights) {
            AircraftState a;
            int heading = 0;
            if (!(fields >> a.id >> a.spawn_step >> a.origin.x >> a.origin.y >> a.destination.x >>
                  a.destination.y >> heading) ||
                (fields >> extra)) {
                throw ScenarioError("line " + std::to_string(line_no) +
                                    ": flight needs 'id spawn_step origin_x origin_y dest_x dest_y heading'");
            }
            if (heading < 0 || heading > 3 || a.id < 0 || a.spawn_step < 0) {
                throw ScenarioError("line " + std::to_string(line_no) + ": field out of range");
            }
            a.spawn_heading = heading_from_int(heading);
            a.pose = {a.origin.x, a.origin.y, a.spawn_heading};
            s.flights.push_back(a);
        } else if (section == Section::events) {
            RunwayEvent e;
            std::string mode;
            if (!(fields >> e.runway_id >> mode >> e.start_step >> e.duration) || (fields >> extra)) {
                throw ScenarioError("line " + std::to_string(line_no) +
                                    ": runway event needs 'runway_id mode start_step duration'");
            }
            e.mode = parse_mode(mode, line_no);
            s.runway_events.push_back(e);
        } else {
            throw ScenarioError("line " + std::to_string(line_no) + ": content outside a section");
        }
    }
    validate_runway_events(s.runway_events);
    return s;
}

Scenario load_scenario(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open scenario file: " + path);
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_scenario(buf.str());
}

std::string format_scenario(const Scenario& s) {
    std::ostringstream out;
    out << "[flights]\n";
    for (const auto& a : s.flights) {
        out << a.id << ' ' << a.spawn_step << ' ' << a.origin.x << ' ' << a.origin.y << ' '
            << a.destination.x << ' ' << a.destination.y << ' ' << to_int(a.spawn_heading) << '\n';
    }
    out << "[runway_events]\n";
    for (const auto& e : s.runway_events) {
        out << e.runway_id << ' ' << runway_mode_name(e.mode) << ' ' << e.start_step << ' ' << e.duration
            << '\n';
    }
    return out.str();
}

// ---------------------------------------------------------------------------
// Traffic generation

int traffic_count(const TrafficSpec& spec) {
    if (!(spec.multiplier > 0.0)) {
        throw TrafficError("traffic multiplier must be positive");
    }
    const double hours = spec.horizon_steps * spec.step_seconds / 3600.0;
    return static_cast<int>(std::lround(spec.base_density * spec.multiplier * hours));
}

std::vector<AircraftState> generate_traffic(const GridMap& map, const TrafficSpec& spec,
                                            std::uint64_t seed) {
    const int count = traffic_count(spec);
    const auto& gates = map.gate_cells();
    if (gates.size() < 2) {
        throw TrafficError("traffic generation needs at least two gate cells");
    }
    if (spec.horizon_steps < 1) {
        throw TrafficError("traffic horizon must be at least one step");
    }

    struct Candidate {
        Point origin;
        Point destination;
        Heading heading;
    };
    std::vector<Candidate> candidates;
    for (Point dest : gates) {
        const DistanceField field(map, dest);
        for (Point origin : gates) {
            if (origin == dest) {
                continue;
            }
            int best = kUnreachable;
            Heading best_h = Heading::north;
            for (Heading h : kAllHeadings) {
                const Pose p{origin.x, origin.y, h};
                const bool can_move = std::any_of(kMoveActions.begin(), kMoveActions.end(),
                                                  [&](Action a) { return successor(p, a, map).has_value(); });
                const int d = field.steps(p);
                if (can_move && d != kUnreachable && (best == kUnreachable || d < best)) {
                    best = d;
                    best_h = h;
                }
            }
            if (best != kUnreachable && best >= spec.min_od_steps) {
                candidates.push_back({origin, dest, best_h});
            }
        }
    }
    if (candidates.empty()) {
        throw TrafficError("no gate pair satisfies the reachability and minimum-distance constraints");
    }

    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> spawn_dist(0, spec.horizon_steps - 1);
    std::uniform_int_distribution<std::size_t> pick(0, candidates.size() - 1);
    std::vector<int> spawns(static_cast<std::size_t>(count));
    for (auto& s : spawns) {
        s = spawn_dist(rng);
    }
    std::sort(spawns.begin(), spawns.end());

    std::vector<AircraftState> out;
    out.reserve(spawns.size());
    for (std::size_t i = 0; i < spawns.size(); ++i) {
        const Candidate& c = candidates[pick(rng)];
        AircraftState a;
        a.id = static_cast<int>(i);
        a.spawn_step = spawns[i];
        a.origin = c.origin;
        a.destination = c.destination;
        a.spawn_heading = c.heading;
        a.pose = {c.origin.x, c.origin.y, c.heading};
        out.push_back(std::move(a));
    }
    return out;
}

std::vector<RunwayEvent> generate_runway_events(const GridMap& map, const RunwayScheduleSpec& spec,
                                                std::uint64_t seed) {
    std::vector<RunwayEvent> events;
    if (spec.period <= 0 || spec.duration <= 0) {
        return events;
    }
    if (spec.duration >= spec.period) {
        throw ScenarioError("runway event duration must be shorter than its period");
    }
    std::mt19937_64 rng(seed ^ 0x52554e5741595345ULL);
    std::uniform_int_distribution<int> phase_dist(0, spec.period - 1);
    for (int rid = 1; rid <= 2; ++rid) {
        if (map.runway_cells(rid).empty()) {
            continue;
        }
        const int phase = phase_dist(rng);
        bool takeoff = rid == 1;
        for (int start = phase; start < spec.horizon_steps; start += spec.period) {
            events.push_back({rid, takeoff ? RunwayMode::takeoff : RunwayMode::landing, start, spec.duration});
            takeoff = !takeoff;
        }
    }
    return events;
}

// ---------------------------------------------------------------------------
// Environment

SurfaceEnv::SurfaceEnv(std::shared_ptr<const GridMap> map, EnvConfig config)
    : map_(std::move(map)), config_(config) {
    if (!map_) {
        throw std::invalid_argument("SurfaceEnv needs a map");
    }
    occupancy_.assign(static_cast<std::size_t>(map_->width() * map_->height()), -1);
    reserved_ = occupancy_;
}

const DistanceField& SurfaceEnv::field_for(Point goal) const {
    auto it = fields_.find(goal);
    if (it == fields_.end()) {
        it = fields_.emplace(goal, std::make_shared<const DistanceField>(*map_, goal)).first;
    }
    return *it->second;
}

void SurfaceEnv::reset(const Scenario& scenario) {
    validate_runway_events(scenario.runway_events);
    aircraft_ = scenario.flights;
    std::sort(aircraft_.begin(), aircraft_.end(),
              [](const AircraftState& a, const AircraftState& b) { return a.id < b.id; });
    for (std::size_t i = 0; i < aircraft_.size(); ++i) {
        auto& a = aircraft_[i];
        if (a.id < 0 || (i > 0 && aircraft_[i - 1].id == a.id)) {
            throw ScenarioError("aircraft ids must be unique and non-negative");
        }
        if (!map_->traversable(a.origin) || !map_->traversable(a.destination)) {
            throw ScenarioError("flight " + std::to_string(a.id) + " has a non-traversable origin or destination");
        }
        a.status = AircraftStatus::pending;
        a.pose = {a.origin.x, a.origin.y, a.spawn_heading};
        a.path_log.clear();
        a.step_of_arrival.reset();
        a.activation_step.reset();
        a.step_of_failure.reset();
        a.moves = 0;
        field_for(a.destination);
    }
    events_ = scenario.runway_events;
    runways_ = {};
    step_ = 0;
    std::fill(occupancy_.begin(), occupancy_.end(), -1);
    std::fill(reserved_.begin(), reserved_.end(), -1);
    planned_.assign(aircraft_.size(), std::nullopt);
    last_reserved_id_ = -1;
    for (const auto& e : events_) {
        if (e.start_step == 0) {
            runways_[static_cast<std::size_t>(e.runway_id - 1)] = {e.mode, e.duration};
        }
    }
    activate_pending();
}

bool SurfaceEnv::done() const {
    if (step_ >= config_.episode_steps) {
        return true;
    }
    return std::none_of(aircraft_.begin(), aircraft_.end(), [](const AircraftState& a) {
        return a.status == AircraftStatus::pending || a.status == AircraftStatus::active;
    });
}

std::size_t SurfaceEnv::slot(int id) const {
    const auto it = std::lower_bound(aircraft_.begin(), aircraft_.end(), id,
                                     [](const AircraftState& a, int v) { return a.id < v; });
    if (it == aircraft_.end() || it->id != id) {
        throw std::domain_error("unknown aircraft id " + std::to_string(id));
    }
    return static_cast<std::size_t>(it - aircraft_.begin());
}

const AircraftState& SurfaceEnv::aircraft(int id) const { return aircraft_[slot(id)]; }

std::vector<int> SurfaceEnv::active_ids() const {
    std::vector<int> ids;
    for (const auto& a : aircraft_) {
        if (a.active()) {
            ids.push_back(a.id);
        }
    }
    return ids;
}

int SurfaceEnv::steps_to_go(const AircraftState& a, const Pose& pose) const {
    return field_for(a.destination).steps(pose);
}

int SurfaceEnv::steps_to_go(int id) const {
    const auto& a = aircraft(id);
    return steps_to_go(a, a.pose);
}

ActionMask SurfaceEnv::valid_actions(int id) const {
    const auto& a = aircraft(id);
    if (!a.active()) {
        throw std::domain_error("valid_actions: aircraft " + std::to_string(id) + " is not active");
    }
    ActionMask mask;
    for (Action act : kMoveActions) {
        const auto next = successor(a.pose, act, *map_);
        bool ok = next.has_value();
        if (ok) {
            // Targets must be free at the start of the step, which also rules
            // out swaps with lower-id aircraft.
            const auto cell_idx = static_cast<std::size_t>(map_->index(next->cell()));
            ok = occupancy_[cell_idx] < 0 && reserved_[cell_idx] < 0;
            const auto& target = map_->cell(next->cell());
            if (ok && target.kind == CellKind::runway) {
                ok = !runways_[static_cast<std::size_t>(target.runway_id - 1)].blocks_entry();
            }
        }
        mask.valid[static_cast<std::size_t>(to_int(act))] = ok;
    }
    mask.valid[static_cast<std::size_t>(to_int(Action::stop))] = true;
    return mask;
}

void SurfaceEnv::reserve(int id, Action action) {
    if (id <= last_reserved_id_) {
        throw ContractError("reservations must follow increasing aircraft id order");
    }
    const ActionMask mask = valid_actions(id);
    if (!mask[action]) {
        throw ContractError(std::string("action ") + action_name(action) + " is masked for aircraft " +
                            std::to_string(id));
    }
    const std::size_t s = slot(id);
    planned_[s] = action;
    last_reserved_id_ = id;
    if (action != Action::stop) {
        const auto next = successor(aircraft_[s].pose, action, *map_);
        reserved_[static_cast<std::size_t>(map_->index(next->cell()))] = id;
    }
}

StepResult SurfaceEnv::step(const std::vector<Action>& actions) {
    const auto ids = active_ids();
    if (actions.size() != ids.size()) {
        throw ContractError("step expects " + std::to_string(ids.size()) + " actions, got " +
                            std::to_string(actions.size()));
    }
    for (std::size_t i = 0; i < ids.size(); ++i) {
        reserve(ids[i], actions[i]);
    }
    return step();
}

void SurfaceEnv::set_runway_state(int runway_id, RunwayState state) {
    if (runway_id < 1 || runway_id > 2) {
        throw std::out_of_range("runway id must be 1 or 2");
    }
    runways_[static_cast<std::size_t>(runway_id - 1)] = state;
}

void SurfaceEnv::advance_runway_schedule() {
    for (auto& r : runways_) {
        if (r.mode != RunwayMode::empty) {
            r.tau_remaining = std::max(0, r.tau_remaining - 1);
            if (r.tau_remaining == 0) {
                r.mode = RunwayMode::empty;
            }
        }
    }
    for (const auto& e : events_) {
        if (e.start_step == step_) {
            runways_[static_cast<std::size_t>(e.runway_id - 1)] = {e.mode, e.duration};
        }
    }
}

void SurfaceEnv::activate_pending() {
    for (auto& a : aircraft_) {
        if (a.status != AircraftStatus::pending || a.spawn_step > step_) {
            continue;
        }
        auto& occ = occupancy_[static_cast<std::size_t>(map_->index(a.origin))];
        if (occ >= 0) {
            continue;  // deferred until the origin clears
        }
        a.status = AircraftStatus::active;
        a.activation_step = step_;
        a.pose = {a.origin.x, a.origin.y, a.spawn_heading};
        a.path_log.push_back(a.pose);
        occ = a.id;
    }
}

StepResult SurfaceEnv::step() {
    StepResult result;
    struct Before {
        std::size_t slot;
        int to_go;
    };
    std::vector<Before> movers;
    for (std::size_t s = 0; s < aircraft_.size(); ++s) {
        if (aircraft_[s].active()) {
            movers.push_back({s, steps_to_go(aircraft_[s], aircraft_[s].pose)});
        }
    }

    // Apply reserved moves.
    for (const auto& m : movers) {
        auto& a = aircraft_[m.slot];
        const Action act = planned_[m.slot].value_or(Action::stop);
        if (act != Action::stop) {
            const auto next = successor(a.pose, act, *map_);
            occupancy_[static_cast<std::size_t>(map_->index(a.pose.cell()))] = -1;
            a.pose = *next;
            ++a.moves;
        }
    }
    for (const auto& m : movers) {
        auto& a = aircraft_[m.slot];
        occupancy_[static_cast<std::size_t>(map_->index(a.pose.cell()))] = a.id;
        a.path_log.push_back(a.pose);
    }
    ++step_;
    advance_runway_schedule();

    std::map<int, RewardVector> rewards;
    for (const auto& m : movers) {
        rewards[aircraft_[m.slot].id].move = config_.r_move;
    }

    // Arrivals leave the surface before conflicts are scanned.
    for (const auto& m : movers) {
        auto& a = aircraft_[m.slot];
        if (a.pose.cell() == a.destination) {
            a.status = AircraftStatus::arrived;
            a.step_of_arrival = step_;
            occupancy_[static_cast<std::size_t>(map_->index(a.pose.cell()))] = -1;
            result.events.arrivals.push_back(a.id);
            auto& r = rewards[a.id];
            r.arrive = config_.r_arrive;
            r.dist = config_.r_dist_scale * static_cast<double>(m.to_go);
        }
    }

    std::vector<std::size_t> live;
    for (const auto& m : movers) {
        if (aircraft_[m.slot].active()) {
            live.push_back(m.slot);
        }
    }
    for (std::size_t i = 0; i < live.size(); ++i) {
        for (std::size_t j = i + 1; j < live.size(); ++j) {
            const auto& a = aircraft_[live[i]];
            const auto& b = aircraft_[live[j]];
            const int dist = manhattan(a.pose.cell(), b.pose.cell());
            const bool headon = dist == 1 && a.pose.h == opposite(b.pose.h) &&
                                map_->segment_of(a.pose.cell()) == map_->segment_of(b.pose.cell());
            if (headon) {
                result.events.headon_pairs.emplace_back(a.id, b.id);
                rewards[a.id].conf += config_.r_conf;
                rewards[b.id].conf += config_.r_conf;
            } else if (dist <= config_.d_prox) {
                result.events.proximity_pairs.emplace_back(a.id, b.id);
                rewards[a.id].prox += config_.r_prox;
                rewards[b.id].prox += config_.r_prox;
            }
        }
    }
    for (const auto& [ida, idb] : result.events.headon_pairs) {
        for (int id : {ida, idb}) {
            auto& a = aircraft_[slot(id)];
            if (a.active()) {
                a.status = AircraftStatus::failed;
                a.step_of_failure = step_;
                occupancy_[static_cast<std::size_t>(map_->index(a.pose.cell()))] = -1;
            }
        }
    }

    // Potential-based distance shaping for aircraft still on the surface.
    for (const auto& m : movers) {
        auto& a = aircraft_[m.slot];
        if (a.status == AircraftStatus::arrived) {
            continue;
        }
        const int after = steps_to_go(a, a.pose);
        if (after == kUnreachable) {
            if (a.active()) {
                a.status = AircraftStatus::failed;
                a.step_of_failure = step_;
                occupancy_[static_cast<std::size_t>(map_->index(a.pose.cell()))] = -1;
                result.events.stranded.push_back(a.id);
            }
            continue;
        }
        if (m.to_go != kUnreachable) {
            rewards[a.id].dist = config_.r_dist_scale * static_cast<double>(m.to_go - after);
        }
    }

    std::fill(reserved_.begin(), reserved_.end(), -1);
    std::fill(planned_.begin(), planned_.end(), std::nullopt);
    last_reserved_id_ = -1;
    activate_pending();

    result.rewards.assign(rewards.begin(), rewards.end());
    return result;
}

}  // namespace catr
