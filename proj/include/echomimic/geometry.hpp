#pragma once

// Planar polygon primitives. Polygons are stored as an open exterior ring
// (first vertex not repeated) in counter-clockwise order.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <vector>

namespace echomimic {

class GeometryError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Point {
    double x = 0.0;
    double y = 0.0;

    friend bool operator==(const Point&, const Point&) = default;
};

inline Point operator+(Point a, Point b) { return {a.x + b.x, a.y + b.y}; }
inline Point operator-(Point a, Point b) { return {a.x - b.x, a.y - b.y}; }
inline Point operator*(double s, Point p) { return {s * p.x, s * p.y}; }
inline double dot(Point a, Point b) { return a.x * b.x + a.y * b.y; }
inline double cross(Point a, Point b) { return a.x * b.y - a.y * b.x; }
inline double norm(Point p) { return std::hypot(p.x, p.y); }

struct Polygon {
    std::vector<Point> ring;

    bool empty() const { return ring.size() < 3; }
    friend bool operator==(const Polygon&, const Polygon&) = default;
};

struct BoundingBox {
    double min_x = 0.0, min_y = 0.0, max_x = 0.0, max_y = 0.0;
};

/// Closed half-plane { p : dot(normal, p) <= offset }.
struct HalfPlane {
    Point normal;
    double offset = 0.0;

    double signed_distance(Point p) const { return dot(normal, p) - offset; }
    HalfPlane complement() const { return {-1.0 * normal, -offset}; }
};

inline double signed_area(const Polygon& poly) {
    const auto& r = poly.ring;
    if (r.size() < 3) return 0.0;
    double acc = 0.0;
    for (std::size_t i = 0, n = r.size(); i < n; ++i) {
        const Point& a = r[i];
        const Point& b = r[(i + 1) % n];
        acc += a.x * b.y - b.x * a.y;
    }
    return 0.5 * acc;
}

inline double area(const Polygon& poly) { return std::abs(signed_area(poly)); }

inline double total_area(const std::vector<Polygon>& polys) {
    double s = 0.0;
    for (const auto& p : polys) s += area(p);
    return s;
}

/// Area centroid. Falls back to the vertex mean for zero-area rings.
inline Point centroid(const Polygon& poly) {
    const auto& r = poly.ring;
    if (r.empty()) return {};
    const double a = signed_area(poly);
    if (std::abs(a) < std::numeric_limits<double>::min() * 1e10) {
        Point m{};
        for (const auto& p : r) m = m + p;
        return (1.0 / static_cast<double>(r.size())) * m;
    }
    // Shift to the first vertex to limit cancellation on large coordinates.
    const Point o = r.front();
    double cx = 0.0, cy = 0.0;
    for (std::size_t i = 0, n = r.size(); i < n; ++i) {
        const Point p = r[i] - o;
        const Point q = r[(i + 1) % n] - o;
        const double c = p.x * q.y - q.x * p.y;
        cx += (p.x + q.x) * c;
        cy += (p.y + q.y) * c;
    }
    return {o.x + cx / (6.0 * a), o.y + cy / (6.0 * a)};
}

inline BoundingBox bounding_box(const Polygon& poly) {
    BoundingBox b{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(),
                  -std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
    for (const auto& p : poly.ring) {
        b.min_x = std::min(b.min_x, p.x);
        b.min_y = std::min(b.min_y, p.y);
        b.max_x = std::max(b.max_x, p.x);
        b.max_y = std::max(b.max_y, p.y);
    }
    return b;
}

inline Polygon rectangle(double min_x, double min_y, double max_x, double max_y) {
    return Polygon{{{min_x, min_y}, {max_x, min_y}, {max_x, max_y}, {min_x, max_y}}};
}

inline Polygon make_ccw(Polygon poly) {
    if (signed_area(poly) < 0.0) std::reverse(poly.ring.begin(), poly.ring.end());
    return poly;
}

/// Removes consecutive duplicates and collinear vertices (within `eps`).
inline Polygon simplify(Polygon poly, double eps = 1e-12) {
    auto& r = poly.ring;
    bool changed = true;
    while (changed && r.size() >= 3) {
        changed = false;
        for (std::size_t i = 0; i < r.size() && r.size() >= 3; ++i) {
            const std::size_t n = r.size();
            const Point& prev = r[(i + n - 1) % n];
            const Point& cur = r[i];
            const Point& next = r[(i + 1) % n];
            const double scale = std::max({norm(cur - prev), norm(next - cur), 1.0});
            if (norm(cur - prev) <= eps * scale || std::abs(cross(cur - prev, next - cur)) <= eps * scale * scale) {
                r.erase(r.begin() + static_cast<std::ptrdiff_t>(i));
                changed = true;
                break;
            }
        }
    }
    if (r.size() < 3) r.clear();
    return poly;
}

/// Sutherland-Hodgman clip against a single half-plane. Exact in area for any
/// simple subject polygon; convex subjects stay convex.
inline Polygon clip(const Polygon& poly, const HalfPlane& hp) {
    Polygon out;
    const auto& r = poly.ring;
    const std::size_t n = r.size();
    if (n < 3) return out;
    out.ring.reserve(n + 2);
    for (std::size_t i = 0; i < n; ++i) {
        const Point& a = r[i];
        const Point& b = r[(i + 1) % n];
        const double da = hp.signed_distance(a);
        const double db = hp.signed_distance(b);
        if (da <= 0.0) out.ring.push_back(a);
        if ((da < 0.0 && db > 0.0) || (da > 0.0 && db < 0.0)) {
            const double t = da / (da - db);
            out.ring.push_back(a + t * (b - a));
        }
    }
    return simplify(std::move(out));
}

inline Polygon clip(Polygon poly, const std::vector<HalfPlane>& planes) {
    for (const auto& hp : planes) {
        poly = clip(poly, hp);
        if (poly.empty()) break;
    }
    return poly;
}

/// Points closer to `site` than to `other`.
inline HalfPlane bisector_halfplane(Point site, Point other) {
    const Point n = other - site;
    const Point mid = 0.5 * (site + other);
    return {n, dot(n, mid)};
}

inline bool is_convex(const Polygon& poly, double eps = 1e-12) {
    const auto& r = poly.ring;
    const std::size_t n = r.size();
    if (n < 3) return false;
    int sign = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double c = cross(r[(i + 1) % n] - r[i], r[(i + 2) % n] - r[(i + 1) % n]);
        const double scale = norm(r[(i + 1) % n] - r[i]) * norm(r[(i + 2) % n] - r[(i + 1) % n]);
        if (std::abs(c) <= eps * scale) continue;
        const int s = c > 0 ? 1 : -1;
        if (sign == 0) sign = s;
        else if (s != sign) return false;
    }
    return sign != 0;
}

/// Inward half-planes of a CCW convex polygon; intersecting them gives the polygon.
inline std::vector<HalfPlane> edge_halfplanes(const Polygon& convex_ccw, double inset = 0.0) {
    std::vector<HalfPlane> planes;
    const auto& r = convex_ccw.ring;
    for (std::size_t i = 0, n = r.size(); i < n; ++i) {
        const Point e = r[(i + 1) % n] - r[i];
        const double len = norm(e);
        if (len == 0.0) continue;
        const Point outward{e.y / len, -e.x / len};
        planes.push_back({outward, dot(outward, r[i]) - inset});
    }
    return planes;
}

/// Intersection of two polygons where `clipper` is convex.
inline Polygon intersect_convex(const Polygon& subject, const Polygon& clipper) {
    return clip(subject, edge_halfplanes(make_ccw(clipper)));
}

/// Convex decomposition of `outer \ inner` for convex CCW polygons. Pieces are
/// pairwise interior-disjoint.
inline std::vector<Polygon> difference_convex(const Polygon& outer, const Polygon& inner) {
    std::vector<Polygon> pieces;
    if (outer.empty()) return pieces;
    if (inner.empty()) {
        pieces.push_back(outer);
        return pieces;
    }
    Polygon remaining = outer;
    for (const auto& hp : edge_halfplanes(make_ccw(inner))) {
        Polygon outside = clip(remaining, hp.complement());
        if (!outside.empty() && area(outside) > 0.0) pieces.push_back(std::move(outside));
        remaining = clip(remaining, hp);
        if (remaining.empty()) break;
    }
    return pieces;
}

inline double point_segment_distance(Point p, Point a, Point b) {
    const Point ab = b - a;
    const double len2 = dot(ab, ab);
    if (len2 == 0.0) return norm(p - a);
    const double t = std::clamp(dot(p - a, ab) / len2, 0.0, 1.0);
    return norm(p - (a + t * ab));
}

inline bool segments_intersect(Point a, Point b, Point c, Point d) {
    auto orient = [](Point p, Point q, Point r) {
        const double v = cross(q - p, r - p);
        return (v > 0) - (v < 0);
    };
    auto on_segment = [](Point p, Point q, Point r) {
        return std::min(p.x, r.x) <= q.x && q.x <= std::max(p.x, r.x) && std::min(p.y, r.y) <= q.y &&
               q.y <= std::max(p.y, r.y);
    };
    const int o1 = orient(a, b, c), o2 = orient(a, b, d), o3 = orient(c, d, a), o4 = orient(c, d, b);
    if (o1 != o2 && o3 != o4) return true;
    if (o1 == 0 && on_segment(a, c, b)) return true;
    if (o2 == 0 && on_segment(a, d, b)) return true;
    if (o3 == 0 && on_segment(c, a, d)) return true;
    if (o4 == 0 && on_segment(c, b, d)) return true;
    return false;
}

inline double segment_distance(Point a, Point b, Point c, Point d) {
    if (segments_intersect(a, b, c, d)) return 0.0;
    return std::min({point_segment_distance(a, c, d), point_segment_distance(b, c, d),
                     point_segment_distance(c, a, b), point_segment_distance(d, a, b)});
}

/// Even-odd containment; boundary points count as inside.
inline bool contains(const Polygon& poly, Point p, double eps = 1e-12) {
    const auto& r = poly.ring;
    const std::size_t n = r.size();
    if (n < 3) return false;
    for (std::size_t i = 0; i < n; ++i) {
        if (point_segment_distance(p, r[i], r[(i + 1) % n]) <= eps) return true;
    }
    bool inside = false;
    for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
        const Point& a = r[i];
        const Point& b = r[j];
        if ((a.y > p.y) != (b.y > p.y)) {
            const double x = (b.x - a.x) * (p.y - a.y) / (b.y - a.y) + a.x;
            if (p.x < x) inside = !inside;
        }
    }
    return inside;
}

/// Euclidean distance between two closed simple polygons (0 when they touch or overlap).
inline double distance(const Polygon& p, const Polygon& q) {
    if (p.empty() || q.empty()) return std::numeric_limits<double>::infinity();
    if (contains(p, q.ring.front()) || contains(q, p.ring.front())) return 0.0;
    double best = std::numeric_limits<double>::infinity();
    const auto& a = p.ring;
    const auto& b = q.ring;
    for (std::size_t i = 0; i < a.size(); ++i) {
        for (std::size_t j = 0; j < b.size(); ++j) {
            best = std::min(best, segment_distance(a[i], a[(i + 1) % a.size()], b[j], b[(j + 1) % b.size()]));
            if (best == 0.0) return 0.0;
        }
    }
    return best;
}

inline double distance(const std::vector<Polygon>& a, const std::vector<Polygon>& b) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& p : a)
        for (const auto& q : b) best = std::min(best, distance(p, q));
    return best;
}

/// Length of boundary shared by two polygons (collinear overlapping edges).
inline double shared_boundary_length(const Polygon& p, const Polygon& q, double tol) {
    double total = 0.0;
    const auto& a = p.ring;
    const auto& b = q.ring;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const Point a0 = a[i], a1 = a[(i + 1) % a.size()];
        const Point dir = a1 - a0;
        const double len = norm(dir);
        if (len == 0.0) continue;
        const Point u = (1.0 / len) * dir;
        for (std::size_t j = 0; j < b.size(); ++j) {
            const Point b0 = b[j], b1 = b[(j + 1) % b.size()];
            if (std::abs(cross(u, b0 - a0)) > tol || std::abs(cross(u, b1 - a0)) > tol) continue;
            double t0 = dot(b0 - a0, u), t1 = dot(b1 - a0, u);
            if (t0 > t1) std::swap(t0, t1);
            const double overlap = std::min(len, t1) - std::max(0.0, t0);
            if (overlap > 0.0) total += overlap;
        }
    }
    return total;
}

/// True when the ring has no self-intersections between non-adjacent edges.
inline bool is_simple(const Polygon& poly) {
    const auto& r = poly.ring;
    const std::size_t n = r.size();
    if (n < 3) return false;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            if (j == i + 1 || (i == 0 && j == n - 1)) continue;
            if (segments_intersect(r[i], r[(i + 1) % n], r[j], r[(j + 1) % n])) return false;
        }
    }
    return true;
}

}  // namespace echomimic
