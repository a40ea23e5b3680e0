/**
 * @file cosiatec.h
 * @brief Geometric pattern discovery (SIA, SIATEC) and COSIATEC compression.
 *
 * Points are (x, y) integer pairs. Vectors are differences of points and are
 * "forward" when lexicographically greater than zero.
 */

#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "cpdrums/rational.h"

namespace cpdrums {

struct Point {
  std::int64_t x = 0;
  std::int64_t y = 0;

  auto operator<=>(const Point&) const = default;
  bool operator==(const Point&) const = default;

  Point operator+(const Point& o) const { return {x + o.x, y + o.y}; }
  Point operator-(const Point& o) const { return {x - o.x, y - o.y}; }
};

/// Sorted, duplicate-free.
using PointSet = std::vector<Point>;

PointSet make_point_set(std::vector<Point> points);

struct Mtp {
  Point vector;
  PointSet pattern;  // {p : p + vector in D}

  bool operator==(const Mtp&) const = default;
};

/// Maximal translatable patterns for every forward difference vector, sorted by vector.
std::vector<Mtp> sia(const PointSet& points);

struct Tec {
  PointSet pattern;
  std::vector<Point> translators;  // sorted, includes the zero vector

  /// Union of the pattern's translated occurrences.
  PointSet covered() const;
  /// |pattern| + |translators| - 1: the identity occurrence costs nothing.
  std::size_t encoding_size() const { return pattern.size() + translators.size() - 1; }

  bool operator==(const Tec&) const = default;
};

/// All translators t with pattern + t inside `points`.
std::vector<Point> find_translators(const PointSet& pattern, const PointSet& points);

/// One TEC per distinct MTP shape. A singleton set yields its single trivial TEC.
std::vector<Tec> siatec(const PointSet& points);

struct CompressionResult {
  std::vector<Tec> tecs;
  Rational ratio{1};
};

/// Greedy cover: repeatedly pick the best TEC of the remaining points by compression
/// ratio, then coverage, then smaller pattern bounding box, then lexicographic order.
CompressionResult cosiatec(const PointSet& points);

/// Union of all TEC occurrences.
PointSet decode(const CompressionResult& result);

/// One "x y" pair per line; blank lines and '#' comments ignored.
PointSet read_point_set(std::istream& in);
void write_point_set(std::ostream& out, const PointSet& points);

}  // namespace cpdrums
