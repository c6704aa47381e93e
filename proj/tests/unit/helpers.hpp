#pragma once

#include <memory>
#include <random>
#include <string>
#include <vector>

#include "catr/map_topology.hpp"
#include "catr/surface_env.hpp"

namespace catr::test {

inline std::shared_ptr<const GridMap> map_from(const std::string& text) {
    return std::make_shared<const GridMap>(parse_map(text));
}

inline std::string data_path(const std::string& rel) { return std::string(CATR_DATA_DIR) + "/" + rel; }

inline std::shared_ptr<const GridMap> data_map(const std::string& name) {
    return std::make_shared<const GridMap>(load_map(data_path("maps/" + name)));
}

// Random taxiway-only map; each cell traversable with probability p.
inline std::string random_map_text(std::mt19937_64& rng, int w, int h, double p) {
    std::bernoulli_distribution open(p);
    std::string s = std::to_string(w) + " " + std::to_string(h) + "\n";
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            s += open(rng) ? 't' : '.';
        }
        s += '\n';
    }
    return s;
}

inline std::vector<Point> traversable_cells(const GridMap& map) {
    std::vector<Point> out;
    for (int y = 0; y < map.height(); ++y) {
        for (int x = 0; x < map.width(); ++x) {
            if (map.traversable(x, y)) {
                out.push_back({x, y});
            }
        }
    }
    return out;
}

inline AircraftState flight(int id, int spawn, Point origin, Point dest, Heading h) {
    AircraftState a;
    a.id = id;
    a.spawn_step = spawn;
    a.origin = origin;
    a.destination = dest;
    a.spawn_heading = h;
    return a;
}

}  // namespace catr::test
