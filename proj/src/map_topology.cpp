#include "catr/map_topology.hpp"

#include <algorithm>
#include <deque>
#include <fstream>
#include <sstream>

namespace catr {

const char* action_name(Action a) {
    switch (a) {
        case Action::forward:
            return "forward";
        case Action::stop:
            return "stop";
        case Action::left:
            return "left";
        case Action::right:
            return "right";
    }
    return "?";
}

ParseError::ParseError(const std::string& message, int line, int column)
    : std::runtime_error("line " + std::to_string(line) + ", col " + std::to_string(column) + ": " +
                         message),
      line_(line),
      column_(column) {}

GridMap::GridMap(int width, int height, std::vector<GridCell> cells)
    : width_(width), height_(height), cells_(std::move(cells)) {
    if (width_ <= 0 || height_ <= 0) {
        throw std::invalid_argument("grid map must have positive dimensions");
    }
    if (cells_.size() != static_cast<std::size_t>(width_) * static_cast<std::size_t>(height_)) {
        throw std::invalid_argument("grid map cell count does not match dimensions");
    }
    build_topology();
}

int GridMap::degree(Point p) const {
    int d = 0;
    for (Heading h : kAllHeadings) {
        if (traversable(step_towards(p, h))) {
            ++d;
        }
    }
    return d;
}

void GridMap::build_topology() {
    const std::size_t n = cells_.size();
    intersection_.assign(n, 0);
    seg_id_.assign(n, -1);
    seg_pos_.assign(n, -1);
    segments_.clear();
    gates_.clear();
    for (auto& r : runway_cells_) {
        r.clear();
    }
    traversable_count_ = 0;

    for (int y = 0; y < height_; ++y) {
        for (int x = 0; x < width_; ++x) {
            const GridCell& c = cell(x, y);
            if (!c.traversable()) {
                continue;
            }
            ++traversable_count_;
            if (c.kind == CellKind::gate) {
                gates_.push_back({x, y});
            }
            if (c.kind == CellKind::runway) {
                runway_cells_[static_cast<std::size_t>(c.runway_id - 1)].push_back({x, y});
            }
            const Point p{x, y};
            const bool ns = traversable(step_towards(p, Heading::north)) ||
                            traversable(step_towards(p, Heading::south));
            const bool ew = traversable(step_towards(p, Heading::east)) ||
                            traversable(step_towards(p, Heading::west));
            // Three or more exits, or a corner where a horizontal and a
            // vertical run meet.
            if (degree(p) >= 3 || (ns && ew)) {
                intersection_[index(p)] = 1;
            }
        }
    }

    for (int y = 0; y < height_; ++y) {
        for (int x = 0; x < width_; ++x) {
            const Point p{x, y};
            if (!traversable(p) || seg_id_[index(p)] >= 0) {
                continue;
            }
            Segment seg;
            seg.id = static_cast<int>(segments_.size());
            if (is_intersection(p)) {
                seg.intersection = true;
                seg.cells.push_back(p);
            } else {
                // Row-major scan reaches the leftmost / topmost cell first.
                const bool horizontal = traversable(step_towards(p, Heading::east)) ||
                                        traversable(step_towards(p, Heading::west));
                const bool vertical = traversable(step_towards(p, Heading::south)) ||
                                      traversable(step_towards(p, Heading::north));
                Heading along = Heading::east;
                if (horizontal) {
                    seg.orientation = Orientation::horizontal;
                } else if (vertical) {
                    seg.orientation = Orientation::vertical;
                    along = Heading::south;
                }
                Point q = p;
                while (true) {
                    seg.cells.push_back(q);
                    if (seg.orientation == Orientation::none) {
                        break;
                    }
                    const Point next = step_towards(q, along);
                    if (!traversable(next) || is_intersection(next)) {
                        break;
                    }
                    q = next;
                }
                const Heading back = opposite(along);
                const Point lo = step_towards(seg.cells.front(), back);
                const Point hi = step_towards(seg.cells.back(), along);
                if (seg.orientation != Orientation::none) {
                    if (traversable(lo)) {
                        seg.endpoints[0] = lo;
                    }
                    if (traversable(hi)) {
                        seg.endpoints[1] = hi;
                    }
                }
            }
            for (std::size_t i = 0; i < seg.cells.size(); ++i) {
                seg_id_[index(seg.cells[i])] = seg.id;
                seg_pos_[index(seg.cells[i])] = static_cast<int>(i);
            }
            segments_.push_back(std::move(seg));
        }
    }
    validate_runways();
}

void GridMap::validate_runways() const {
    for (int rid = 1; rid <= 2; ++rid) {
        const auto& rc = runway_cells_[static_cast<std::size_t>(rid - 1)];
        if (rc.empty()) {
            continue;
        }
        std::vector<std::uint8_t> seen(cells_.size(), 0);
        std::deque<Point> queue{rc.front()};
        seen[index(rc.front())] = 1;
        std::size_t reached = 0;
        while (!queue.empty()) {
            const Point p = queue.front();
            queue.pop_front();
            ++reached;
            for (Heading h : kAllHeadings) {
                const Point q = step_towards(p, h);
                if (in_bounds(q) && !seen[index(q)] && cell(q).kind == CellKind::runway &&
                    cell(q).runway_id == rid) {
                    seen[index(q)] = 1;
                    queue.push_back(q);
                }
            }
        }
        if (reached != rc.size()) {
            for (Point p : rc) {
                if (!seen[index(p)]) {
                    throw ParseError("runway " + std::to_string(rid) + " is not connected", p.y + 2,
                                     p.x + 1);
                }
            }
        }
    }
}

int GridMap::segment_of(int x, int y) const {
    if (!traversable(x, y)) {
        throw std::domain_error("segment_of: cell (" + std::to_string(x) + ", " + std::to_string(y) +
                                ") is not traversable");
    }
    return seg_id_[index(x, y)];
}

std::vector<DownstreamChild> GridMap::downstream_children(int segment_id, Heading travel) const {
    const Segment& seg = segment(segment_id);
    std::vector<DownstreamChild> out;
    Point pivot;
    if (seg.intersection) {
        pivot = seg.cells.front();
    } else {
        const bool along_h = seg.orientation == Orientation::horizontal &&
                             (travel == Heading::east || travel == Heading::west);
        const bool along_v = seg.orientation == Orientation::vertical &&
                             (travel == Heading::north || travel == Heading::south);
        if (seg.orientation != Orientation::none && !along_h && !along_v) {
            return out;
        }
        const bool towards_high = travel == Heading::east || travel == Heading::south;
        const Point end = towards_high ? seg.cells.back() : seg.cells.front();
        pivot = step_towards(end, travel);
        if (!traversable(pivot)) {
            return out;
        }
    }
    for (Maneuver m : kAllManeuvers) {
        const Heading h = apply_maneuver(travel, m);
        const Point c = step_towards(pivot, h);
        if (traversable(c)) {
            out.push_back({m, segment_of(c), h});
        }
    }
    return out;
}

const std::vector<Point>& GridMap::runway_cells(int runway_id) const {
    if (runway_id < 1 || runway_id > 2) {
        throw std::out_of_range("runway id must be 1 or 2");
    }
    return runway_cells_[static_cast<std::size_t>(runway_id - 1)];
}

namespace {

std::string_view rstrip(std::string_view s) {
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
        s.remove_suffix(1);
    }
    return s;
}

}  // namespace

GridMap parse_map(std::string_view text) {
    std::vector<std::string_view> lines;
    std::size_t start = 0;
    while (start <= text.size()) {
        const std::size_t end = text.find('\n', start);
        if (end == std::string_view::npos) {
            lines.push_back(rstrip(text.substr(start)));
            break;
        }
        lines.push_back(rstrip(text.substr(start, end - start)));
        start = end + 1;
    }
    while (!lines.empty() && lines.back().empty()) {
        lines.pop_back();
    }
    if (lines.empty()) {
        throw ParseError("empty map", 1, 1);
    }

    int width = 0;
    int height = 0;
    {
        std::istringstream header{std::string(lines[0])};
        std::string extra;
        if (!(header >> width >> height) || (header >> extra)) {
            throw ParseError("header must be '<width> <height>'", 1, 1);
        }
        if (width <= 0 || height <= 0) {
            throw ParseError("empty map: dimensions must be positive", 1, 1);
        }
    }
    const int rows = static_cast<int>(lines.size()) - 1;
    if (rows != height) {
        throw ParseError("expected " + std::to_string(height) + " rows, found " + std::to_string(rows),
                         static_cast<int>(lines.size()), 1);
    }

    std::vector<GridCell> cells;
    cells.reserve(static_cast<std::size_t>(width) * static_cast<std::size_t>(height));
    for (int y = 0; y < height; ++y) {
        const std::string_view row = lines[static_cast<std::size_t>(y) + 1];
        const int line_no = y + 2;
        for (int x = 0; x < width && x < static_cast<int>(row.size()); ++x) {
            GridCell c{x, y, CellKind::blocked, 0};
            switch (row[static_cast<std::size_t>(x)]) {
                case '.':
                    break;
                case 't':
                    c.kind = CellKind::taxiway;
                    break;
                case 'g':
                    c.kind = CellKind::gate;
                    break;
                case '1':
                    c.kind = CellKind::runway;
                    c.runway_id = 1;
                    break;
                case '2':
                    c.kind = CellKind::runway;
                    c.runway_id = 2;
                    break;
                case '0':
                    throw ParseError("runway id 0 is not allowed", line_no, x + 1);
                default: {
                    const char sym = row[static_cast<std::size_t>(x)];
                    if (sym >= '3' && sym <= '9') {
                        throw ParseError(std::string("runway id ") + sym + " exceeds 2", line_no, x + 1);
                    }
                    throw ParseError(std::string("unknown symbol '") + sym + "'", line_no, x + 1);
                }
            }
            cells.push_back(c);
        }
        if (static_cast<int>(row.size()) != width) {
            throw ParseError("row has " + std::to_string(row.size()) + " symbols, expected " +
                                 std::to_string(width),
                             line_no, static_cast<int>(std::min<std::size_t>(row.size(), static_cast<std::size_t>(width))) + 1);
        }
    }
    return GridMap(width, height, std::move(cells));
}

GridMap load_map(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open map file: " + path);
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_map(buf.str());
}

std::optional<Pose> successor(const Pose& pose, Action action, const GridMap& map) {
    Heading h = pose.h;
    switch (action) {
        case Action::stop:
            return pose;
        case Action::forward:
            break;
        case Action::left:
            h = turn_left(h);
            break;
        case Action::right:
            h = turn_right(h);
            break;
    }
    const Point target = step_towards(pose.cell(), h);
    if (!map.traversable(target)) {
        return std::nullopt;
    }
    return Pose{target.x, target.y, h};
}

int shortest_steps(const GridMap& map, const Pose& from, Point to) {
    if (!map.traversable(from.x, from.y) || !map.traversable(to)) {
        return kUnreachable;
    }
    if (from.cell() == to) {
        return 0;
    }
    const auto key = [&](const Pose& p) {
        return static_cast<std::size_t>(map.index(p.x, p.y)) * 4 + static_cast<std::size_t>(to_int(p.h));
    };
    std::vector<int> dist(static_cast<std::size_t>(map.width() * map.height()) * 4, kUnreachable);
    std::deque<Pose> queue{from};
    dist[key(from)] = 0;
    while (!queue.empty()) {
        const Pose p = queue.front();
        queue.pop_front();
        const int d = dist[key(p)];
        for (Action a : kMoveActions) {
            const auto q = successor(p, a, map);
            if (!q || dist[key(*q)] != kUnreachable) {
                continue;
            }
            if (q->cell() == to) {
                return d + 1;
            }
            dist[key(*q)] = d + 1;
            queue.push_back(*q);
        }
    }
    return kUnreachable;
}

DistanceField::DistanceField(const GridMap& map, Point goal)
    : width_(map.width()),
      goal_(goal),
      dist_(static_cast<std::size_t>(map.width() * map.height()) * 4, kUnreachable) {
    if (!map.traversable(goal)) {
        return;
    }
    std::deque<Pose> queue;
    for (Heading h : kAllHeadings) {
        const Pose g{goal.x, goal.y, h};
        dist_[state_index(g)] = 0;
        queue.push_back(g);
    }
    // A state (c', h') is entered from cell c' - dir(h') with heading h'
    // (forward), right(h') (left turn) or left(h') (right turn).
    while (!queue.empty()) {
        const Pose p = queue.front();
        queue.pop_front();
        const int d = dist_[state_index(p)];
        const Point src = step_towards(p.cell(), opposite(p.h));
        if (!map.traversable(src)) {
            continue;
        }
        for (Heading prev : {p.h, turn_right(p.h), turn_left(p.h)}) {
            const Pose q{src.x, src.y, prev};
            if (q.cell() == goal || dist_[state_index(q)] != kUnreachable) {
                continue;
            }
            dist_[state_index(q)] = d + 1;
            queue.push_back(q);
        }
    }
}

}  // namespace catr
