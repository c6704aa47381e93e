#include "catr/observation.hpp"

#include <algorithm>
#include <stdexcept>

namespace catr {

int HftrTensor::present_count(int level) const {
    const auto& nodes = levels.at(static_cast<std::size_t>(level));
    return static_cast<int>(std::count_if(nodes.begin(), nodes.end(), [](const HftrNode& n) { return n.present; }));
}

namespace {

const AircraftState& require_active(const SurfaceEnv& env, int id) {
    const auto& a = env.aircraft(id);
    if (!a.active()) {
        throw std::domain_error("observation requested for inactive aircraft " + std::to_string(id));
    }
    return a;
}

bool towards_high_end(Heading h) { return h == Heading::east || h == Heading::south; }

bool along(const Segment& seg, Heading h) {
    if (seg.orientation == Orientation::horizontal) {
        return h == Heading::east || h == Heading::west;
    }
    if (seg.orientation == Orientation::vertical) {
        return h == Heading::north || h == Heading::south;
    }
    return false;
}

// Distance in cells from the reference point to cell index `pos` when moving
// in `travel`. With `from_entry` the reference is just outside the upstream
// end; otherwise it is the cell at `self_pos` and only cells ahead count.
int along_distance(const Segment& seg, Heading travel, int pos, bool from_entry, int self_pos) {
    const int len = seg.length();
    if (len == 1 || !along(seg, travel)) {
        return from_entry && len == 1 ? 1 : -1;
    }
    const int rank = towards_high_end(travel) ? pos : len - 1 - pos;  // 0 at upstream end
    if (from_entry) {
        return rank + 1;
    }
    const int self_rank = towards_high_end(travel) ? self_pos : len - 1 - self_pos;
    return rank > self_rank ? rank - self_rank : -1;
}

SegmentTraffic scan_segment(const SurfaceEnv& env, int segment_id, Heading travel, bool from_entry,
                            int self_pos, int self_id) {
    const GridMap& map = env.map();
    const Segment& seg = map.segment(segment_id);
    SegmentTraffic t;
    for (Point c : seg.cells) {
        const int other = env.occupant(c);
        if (other < 0 || other == self_id) {
            continue;
        }
        ++t.count;
        const auto& o = env.aircraft(other);
        const int d = along_distance(seg, travel, map.position_in_segment(c), from_entry, self_pos);
        if (d < 0) {
            continue;
        }
        if (o.pose.h == opposite(travel) && (t.nearest_head < 0 || d < t.nearest_head)) {
            t.nearest_head = d;
        }
        if (o.pose.h == travel && (t.nearest_same < 0 || d < t.nearest_same)) {
            t.nearest_same = d;
        }
    }
    return t;
}

SegmentFeature make_feature(const GridMap& map, const Segment& seg, int remaining, const SegmentTraffic& t,
                            const ObsConfig& cfg) {
    SegmentFeature f;
    const double len = seg.length();
    f.id_norm = static_cast<double>(seg.id) / static_cast<double>(map.segment_count());
    f.l_rem_norm = static_cast<double>(remaining) / len;
    f.d_head_norm = t.nearest_head < 0 ? 1.0 : t.nearest_head / (len + 1.0);
    f.d_same_norm = t.nearest_same < 0 ? 1.0 : t.nearest_same / (len + 1.0);
    f.n_norm = std::min(1.0, t.count / cfg.n_cap);
    return f;
}

}  // namespace

RouteObs build_route_obs(const SurfaceEnv& env, int aircraft_id, const ObsConfig& cfg) {
    const auto& a = require_active(env, aircraft_id);
    const double w = env.map().width();
    const double h = env.map().height();
    RouteObs r;
    r.x = a.pose.x / w;
    r.y = a.pose.y / h;
    r.h = to_int(a.pose.h);
    r.dx = (a.destination.x - a.pose.x) / w;
    r.dy = (a.destination.y - a.pose.y) / h;
    const auto& rw = env.runways();
    r.eta1 = static_cast<double>(rw[0].mode);
    r.tau1 = std::min(1.0, rw[0].tau_remaining / cfg.tau_max);
    r.eta2 = static_cast<double>(rw[1].mode);
    r.tau2 = std::min(1.0, rw[1].tau_remaining / cfg.tau_max);
    return r;
}

HftrTensor build_hftr(const SurfaceEnv& env, int aircraft_id, int levels, const ObsConfig& cfg) {
    if (levels < 1) {
        throw std::invalid_argument("HFTR needs at least one level");
    }
    const auto& a = require_active(env, aircraft_id);
    const GridMap& map = env.map();
    HftrTensor out;
    out.levels.resize(static_cast<std::size_t>(levels));

    const int seg_id = map.segment_of(a.pose.cell());
    const Segment& seg = map.segment(seg_id);
    const int pos = map.position_in_segment(a.pose.cell());
    int remaining = 1;
    if (seg.length() > 1 && along(seg, a.pose.h)) {
        remaining = towards_high_end(a.pose.h) ? seg.length() - pos : pos + 1;
    }
    HftrNode root;
    root.present = true;
    root.segment = seg_id;
    root.travel = a.pose.h;
    root.feature = make_feature(map, seg, remaining, scan_segment(env, seg_id, a.pose.h, false, pos, a.id), cfg);
    out.levels[0].push_back(root);

    for (int l = 1; l < levels; ++l) {
        const auto& parents = out.levels[static_cast<std::size_t>(l - 1)];
        auto& nodes = out.levels[static_cast<std::size_t>(l)];
        nodes.assign(parents.size() * 3, HftrNode{});
        for (std::size_t s = 0; s < parents.size(); ++s) {
            if (!parents[s].present) {
                continue;
            }
            for (const auto& child : map.downstream_children(parents[s].segment, parents[s].travel)) {
                HftrNode& n = nodes[3 * s + static_cast<std::size_t>(child.maneuver)];
                const Segment& cs = map.segment(child.segment);
                n.present = true;
                n.segment = child.segment;
                n.travel = child.travel;
                n.feature = make_feature(map, cs, cs.length(),
                                         scan_segment(env, child.segment, child.travel, true, -1, a.id), cfg);
            }
        }
    }
    return out;
}

int hftr_slot_count(int levels) {
    int total = 0;
    int width = 1;
    for (int l = 0; l < levels; ++l) {
        total += width;
        width *= 3;
    }
    return total;
}

int observation_size(int levels) { return kRouteObsSize + kHftrNodeSize * hftr_slot_count(levels); }

std::vector<double> flatten(const RouteObs& route, const HftrTensor& hftr) {
    std::vector<double> v;
    v.reserve(static_cast<std::size_t>(observation_size(static_cast<int>(hftr.levels.size()))));
    // Heading and runway modes are scaled into [0, 1] for the network input.
    v.insert(v.end(), {route.x, route.y, route.h / 3.0, route.dx, route.dy, route.eta1 / 3.0, route.tau1,
                       route.eta2 / 3.0, route.tau2});
    for (const auto& level : hftr.levels) {
        for (const auto& n : level) {
            if (n.present) {
                const auto& f = n.feature;
                v.insert(v.end(), {f.id_norm, f.l_rem_norm, f.d_head_norm, f.d_same_norm, f.n_norm, 1.0});
            } else {
                v.insert(v.end(), kHftrNodeSize, 0.0);
            }
        }
    }
    return v;
}

std::vector<double> build_observation(const SurfaceEnv& env, int aircraft_id, const ObsConfig& cfg) {
    return flatten(build_route_obs(env, aircraft_id, cfg), build_hftr(env, aircraft_id, cfg.hftr_levels, cfg));
}

}  // namespace catr
