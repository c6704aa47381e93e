#pragma once

#include <array>
#include <vector>

#include "catr/surface_env.hpp"

namespace catr {

struct ObsConfig {
    int hftr_levels = 3;
    double n_cap = 8.0;
    double tau_max = 20.0;
};

// Per-aircraft routing state. h and the runway modes are raw small integers.
struct RouteObs {
    double x = 0.0;
    double y = 0.0;
    double h = 0.0;
    double dx = 0.0;
    double dy = 0.0;
    double eta1 = 0.0;
    double tau1 = 0.0;
    double eta2 = 0.0;
    double tau2 = 0.0;
};

inline constexpr int kRouteObsSize = 9;
inline constexpr int kSegmentFeatureSize = 5;
inline constexpr int kHftrNodeSize = kSegmentFeatureSize + 1;  // features + presence bit

struct SegmentFeature {
    double id_norm = 0.0;
    double l_rem_norm = 0.0;
    double d_head_norm = 0.0;
    double d_same_norm = 0.0;
    double n_norm = 0.0;

    friend bool operator==(const SegmentFeature&, const SegmentFeature&) = default;
};

struct HftrNode {
    SegmentFeature feature;
    bool present = false;
    int segment = -1;
    Heading travel = Heading::north;

    friend bool operator==(const HftrNode&, const HftrNode&) = default;
};

// Level l holds 3^l slots; the child of slot s under maneuver m sits at
// 3*s + m with m ordered left, straight, right.
struct HftrTensor {
    std::vector<std::vector<HftrNode>> levels;

    int present_count(int level) const;
    friend bool operator==(const HftrTensor&, const HftrTensor&) = default;
};

// Raw traffic statistics of one segment as seen by a traveller.
struct SegmentTraffic {
    int nearest_head = -1;  // cells, -1 when absent
    int nearest_same = -1;
    int count = 0;
};

RouteObs build_route_obs(const SurfaceEnv& env, int aircraft_id, const ObsConfig& cfg);
HftrTensor build_hftr(const SurfaceEnv& env, int aircraft_id, int levels, const ObsConfig& cfg);

int hftr_slot_count(int levels);
int observation_size(int levels);
std::vector<double> flatten(const RouteObs& route, const HftrTensor& hftr);
std::vector<double> build_observation(const SurfaceEnv& env, int aircraft_id, const ObsConfig& cfg);

}  // namespace catr
