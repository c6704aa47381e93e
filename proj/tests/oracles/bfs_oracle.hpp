#pragma once

// Breadth-first search over (x, y, heading) written from the movement rules:
// forward keeps the heading, left and right rotate and then advance one cell.

#include <array>
#include <queue>
#include <vector>

#include "catr/map_topology.hpp"

namespace catr::oracle {

inline int bfs_steps(const GridMap& map, Pose start, Point goal) {
    if (start.cell() == goal) {
        return 0;
    }
    const int w = map.width();
    const auto key = [w](int x, int y, int h) { return (y * w + x) * 4 + h; };
    std::vector<int> dist(static_cast<std::size_t>(map.width() * map.height() * 4), -1);
    std::queue<std::array<int, 3>> q;
    dist[static_cast<std::size_t>(key(start.x, start.y, to_int(start.h)))] = 0;
    q.push({start.x, start.y, to_int(start.h)});
    constexpr int dx[4] = {0, 1, 0, -1};
    constexpr int dy[4] = {-1, 0, 1, 0};
    while (!q.empty()) {
        const auto [x, y, h] = q.front();
        q.pop();
        const int d = dist[static_cast<std::size_t>(key(x, y, h))];
        for (int turn : {0, 3, 1}) {
            const int nh = (h + turn) % 4;
            const int nx = x + dx[nh];
            const int ny = y + dy[nh];
            if (!map.traversable(nx, ny)) {
                continue;
            }
            if (Point{nx, ny} == goal) {
                return d + 1;
            }
            auto& slot = dist[static_cast<std::size_t>(key(nx, ny, nh))];
            if (slot < 0) {
                slot = d + 1;
                q.push({nx, ny, nh});
            }
        }
    }
    return -1;
}

}  // namespace catr::oracle
