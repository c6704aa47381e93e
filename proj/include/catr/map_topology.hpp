#pragma once

// Grid model of the airport surface: cells, headings, taxiway segments and
// intersections, plus reachability queries over the (x, y, heading) graph.

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace catr {

enum class Heading : std::uint8_t { north = 0, east = 1, south = 2, west = 3 };

inline constexpr std::array<Heading, 4> kAllHeadings{Heading::north, Heading::east, Heading::south,
                                                     Heading::west};

constexpr int to_int(Heading h) { return static_cast<int>(h); }
constexpr Heading heading_from_int(int v) { return static_cast<Heading>(((v % 4) + 4) % 4); }
constexpr Heading turn_left(Heading h) { return heading_from_int(to_int(h) + 3); }
constexpr Heading turn_right(Heading h) { return heading_from_int(to_int(h) + 1); }
constexpr Heading opposite(Heading h) { return heading_from_int(to_int(h) + 2); }
constexpr int heading_dx(Heading h) { return h == Heading::east ? 1 : (h == Heading::west ? -1 : 0); }
constexpr int heading_dy(Heading h) { return h == Heading::south ? 1 : (h == Heading::north ? -1 : 0); }

// Index order matches the action mask layout.
enum class Action : std::uint8_t { forward = 0, stop = 1, left = 2, right = 3 };

inline constexpr int kNumActions = 4;
inline constexpr std::array<Action, 4> kAllActions{Action::forward, Action::stop, Action::left,
                                                   Action::right};
// Movement actions in planner expansion order.
inline constexpr std::array<Action, 3> kMoveActions{Action::forward, Action::left, Action::right};

constexpr int to_int(Action a) { return static_cast<int>(a); }
const char* action_name(Action a);

enum class Maneuver : std::uint8_t { left = 0, straight = 1, right = 2 };

inline constexpr std::array<Maneuver, 3> kAllManeuvers{Maneuver::left, Maneuver::straight,
                                                       Maneuver::right};

constexpr Heading apply_maneuver(Heading h, Maneuver m) {
    switch (m) {
        case Maneuver::left:
            return turn_left(h);
        case Maneuver::right:
            return turn_right(h);
        default:
            return h;
    }
}

enum class CellKind : std::uint8_t { blocked, taxiway, runway, gate };

struct Point {
    int x = 0;
    int y = 0;
    friend constexpr bool operator==(Point, Point) = default;
    friend constexpr auto operator<=>(Point, Point) = default;
};

struct Pose {
    int x = 0;
    int y = 0;
    Heading h = Heading::north;
    constexpr Point cell() const { return {x, y}; }
    friend constexpr bool operator==(const Pose&, const Pose&) = default;
};

constexpr int manhattan(Point a, Point b) {
    return (a.x > b.x ? a.x - b.x : b.x - a.x) + (a.y > b.y ? a.y - b.y : b.y - a.y);
}

constexpr Point step_towards(Point p, Heading h) { return {p.x + heading_dx(h), p.y + heading_dy(h)}; }

struct GridCell {
    int x = 0;
    int y = 0;
    CellKind kind = CellKind::blocked;
    int runway_id = 0;  // 1 or 2 when kind == runway, 0 otherwise

    bool traversable() const { return kind != CellKind::blocked; }
    std::optional<int> runway() const {
        return kind == CellKind::runway ? std::optional<int>(runway_id) : std::nullopt;
    }
};

enum class Orientation : std::uint8_t { none, horizontal, vertical };

// A maximal straight run of non-intersection cells, or a single intersection
// cell. Cells are ordered by increasing x (horizontal) or y (vertical).
struct Segment {
    int id = 0;
    std::vector<Point> cells;
    Orientation orientation = Orientation::none;
    bool intersection = false;
    // Intersection cell just beyond each end (low end, high end); nullopt
    // marks a boundary (blocked or off-map).
    std::array<std::optional<Point>, 2> endpoints;

    int length() const { return static_cast<int>(cells.size()); }
};

struct DownstreamChild {
    Maneuver maneuver = Maneuver::straight;
    int segment = 0;
    Heading travel = Heading::north;  // heading after the maneuver
};

class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& message, int line, int column);
    int line() const { return line_; }
    int column() const { return column_; }

private:
    int line_;
    int column_;
};

inline constexpr int kUnreachable = -1;

class GridMap {
public:
    GridMap(int width, int height, std::vector<GridCell> cells);

    int width() const { return width_; }
    int height() const { return height_; }
    bool in_bounds(int x, int y) const { return x >= 0 && y >= 0 && x < width_ && y < height_; }
    bool in_bounds(Point p) const { return in_bounds(p.x, p.y); }
    const GridCell& cell(int x, int y) const { return cells_[index(x, y)]; }
    const GridCell& cell(Point p) const { return cell(p.x, p.y); }
    bool traversable(int x, int y) const { return in_bounds(x, y) && cell(x, y).traversable(); }
    bool traversable(Point p) const { return traversable(p.x, p.y); }
    int index(int x, int y) const { return y * width_ + x; }
    int index(Point p) const { return index(p.x, p.y); }

    bool is_intersection(Point p) const { return intersection_[index(p)] != 0; }
    // Number of traversable 4-neighbours.
    int degree(Point p) const;

    const std::vector<Segment>& segments() const { return segments_; }
    const Segment& segment(int id) const { return segments_.at(static_cast<std::size_t>(id)); }
    int segment_count() const { return static_cast<int>(segments_.size()); }

    // Throws std::domain_error for blocked or off-map cells.
    int segment_of(int x, int y) const;
    int segment_of(Point p) const { return segment_of(p.x, p.y); }
    // Position of a cell inside its segment's ordered cell list.
    int position_in_segment(Point p) const { return seg_pos_[index(p)]; }

    std::vector<DownstreamChild> downstream_children(int segment_id, Heading travel) const;

    // Runway ids are 1 and 2.
    const std::vector<Point>& runway_cells(int runway_id) const;
    const std::vector<Point>& gate_cells() const { return gates_; }
    int traversable_count() const { return traversable_count_; }

private:
    void build_topology();
    void validate_runways() const;

    int width_;
    int height_;
    std::vector<GridCell> cells_;
    std::vector<std::uint8_t> intersection_;
    std::vector<int> seg_id_;
    std::vector<int> seg_pos_;
    std::vector<Segment> segments_;
    std::array<std::vector<Point>, 2> runway_cells_;
    std::vector<Point> gates_;
    int traversable_count_ = 0;
};

GridMap parse_map(std::string_view text);
GridMap load_map(const std::string& path);

std::optional<Pose> successor(const Pose& pose, Action action, const GridMap& map);

// Minimum number of movement actions from `from` to any heading at `to`, or
// kUnreachable.
int shortest_steps(const GridMap& map, const Pose& from, Point to);

// Steps-to-go from every (x, y, heading) state to a fixed goal cell, computed
// once by a reverse breadth-first sweep.
class DistanceField {
public:
    DistanceField(const GridMap& map, Point goal);

    Point goal() const { return goal_; }
    int steps(const Pose& p) const { return dist_[state_index(p)]; }

private:
    std::size_t state_index(const Pose& p) const {
        return (static_cast<std::size_t>(p.y) * static_cast<std::size_t>(width_) +
                static_cast<std::size_t>(p.x)) *
                   4 +
               static_cast<std::size_t>(to_int(p.h));
    }

    int width_;
    Point goal_;
    std::vector<int> dist_;
};

}  // namespace catr
