#pragma once

#include <cmath>
#include <set>
#include <string>

#include "ssr/errors.hpp"
#include "ssr/geometry.hpp"

namespace ssr::geom::detail {

inline void reject_unknown(const nlohmann::json& j, const std::set<std::string>& known,
                           const std::string& what) {
    if (!j.is_object()) throw ConfigError(what + " must be a JSON object");
    for (const auto& [key, _] : j.items()) {
        if (!known.count(key)) throw ConfigError("unknown key '" + key + "' in " + what);
    }
}

template <class T>
void read_field(const nlohmann::json& j, const char* key, T& out, const std::string& what) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError(what + "." + key + " has the wrong type");
    }
}

/// Closest points between o1 + s d1 and o2 + u d2; false when parallel.
inline bool closest_points(const Vec3& o1, const Vec3& d1, const Vec3& o2, const Vec3& d2,
                           double& s, double& u) {
    const Vec3 w0 = o1 - o2;
    const double a = d1.dot(d1), b = d1.dot(d2), c = d2.dot(d2);
    const double d = d1.dot(w0), e = d2.dot(w0);
    const double den = a * c - b * b;
    if (!(std::abs(den) > 1e-15 * a * c)) return false;
    s = (b * e - c * d) / den;
    u = (a * e - b * d) / den;
    return true;
}

}  // namespace ssr::geom::detail
