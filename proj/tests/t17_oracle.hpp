#pragma once

// Brute-force oracle for the toy curve y^2 = x^3 + 2x + 2 over F_17.
// Deliberately independent of the library: plain int arithmetic, naive
// modular inverse by exhaustive scan, points found by enumerating the
// full 17x17 coordinate grid. Slow and simple on purpose.

#include <optional>
#include <utility>
#include <vector>

namespace t17_oracle {

constexpr int kP = 17;
constexpr int kA = 2;
constexpr int kB = 2;
constexpr int kOrder = 19;  // group order, identity included

// (x, y) pair; std::nullopt is the identity.
using Point = std::optional<std::pair<int, int>>;

inline int mod(int v) { return ((v % kP) + kP) % kP; }

inline bool on_curve(int x, int y) {
    return mod(y * y - (x * x * x + kA * x + kB)) == 0;
}

inline std::vector<Point> all_points() {
    std::vector<Point> pts;
    pts.push_back(std::nullopt);
    for (int x = 0; x < kP; ++x)
        for (int y = 0; y < kP; ++y)
            if (on_curve(x, y)) pts.push_back(std::make_pair(x, y));
    return pts;
}

inline int inverse(int v) {
    v = mod(v);
    for (int z = 1; z < kP; ++z)
        if (mod(v * z) == 1) return z;
    return 0;  // unreachable for v != 0, p prime
}

inline Point add(const Point& p, const Point& q) {
    if (!p) return q;
    if (!q) return p;
    auto [x1, y1] = *p;
    auto [x2, y2] = *q;
    int lambda;
    if (x1 == x2) {
        if (mod(y1 + y2) == 0) return std::nullopt;
        lambda = mod((3 * x1 * x1 + kA) * inverse(2 * y1));
    } else {
        lambda = mod((y2 - y1) * inverse(x2 - x1));
    }
    int x3 = mod(lambda * lambda - x1 - x2);
    int y3 = mod(lambda * (x1 - x3) - y1);
    return std::make_pair(x3, y3);
}

// k-fold repeated addition, the long way.
inline Point multiply(int k, const Point& p) {
    Point acc = std::nullopt;
    for (int i = 0; i < k; ++i) acc = add(acc, p);
    return acc;
}

}  // namespace t17_oracle
