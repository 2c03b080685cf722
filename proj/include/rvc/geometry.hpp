#pragma once

#include <cmath>
#include <numbers>

namespace rvc {

struct Vec2 {
    double x = 0.0;
    double y = 0.0;

    constexpr Vec2 operator+(Vec2 o) const { return {x + o.x, y + o.y}; }
    constexpr Vec2 operator-(Vec2 o) const { return {x - o.x, y - o.y}; }
    constexpr Vec2 operator*(double s) const { return {x * s, y * s}; }
    constexpr Vec2 operator/(double s) const { return {x / s, y / s}; }
    constexpr bool operator==(const Vec2&) const = default;
};

constexpr double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
constexpr double cross(Vec2 a, Vec2 b) { return a.x * b.y - a.y * b.x; }
inline double norm(Vec2 a) { return std::hypot(a.x, a.y); }
inline Vec2 normalized(Vec2 a) {
    const double n = norm(a);
    return n > 0.0 ? a / n : Vec2{1.0, 0.0};
}
constexpr Vec2 perp(Vec2 a) { return {-a.y, a.x}; }

/// Position in the robot task frame, millimetres. XOY is the microscope
/// image plane, z points up.
struct Pose3 {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;

    constexpr Vec2 xy() const { return {x, y}; }
    constexpr Pose3 operator+(Pose3 o) const { return {x + o.x, y + o.y, z + o.z}; }
    constexpr Pose3 operator-(Pose3 o) const { return {x - o.x, y - o.y, z - o.z}; }
    constexpr Pose3 operator*(double s) const { return {x * s, y * s, z * s}; }
    constexpr bool operator==(const Pose3&) const = default;

    bool finite() const { return std::isfinite(x) && std::isfinite(y) && std::isfinite(z); }
};

inline double norm(Pose3 p) { return std::sqrt(p.x * p.x + p.y * p.y + p.z * p.z); }
constexpr double dot(Pose3 a, Pose3 b) { return a.x * b.x + a.y * b.y + a.z * b.z; }

constexpr double deg_to_rad(double deg) { return deg * std::numbers::pi / 180.0; }

/// Axis-aligned rectangle in continuous pixel coordinates (pixel centres sit
/// on integers).
struct PixelRect {
    double u0 = 0.0;
    double v0 = 0.0;
    double width = 0.0;
    double height = 0.0;

    bool operator==(const PixelRect&) const = default;
};

}  // namespace rvc
