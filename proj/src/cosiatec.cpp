/**
 * @file cosiatec.cpp
 * @brief SIA, SIATEC and COSIATEC.
 */

#include "cpdrums/cosiatec.h"

#include <algorithm>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <tuple>
#include <unordered_set>

namespace cpdrums {

namespace {

struct PointHash {
  std::size_t operator()(const Point& p) const noexcept {
    const auto h = static_cast<std::uint64_t>(p.x) * 0x9E3779B97F4A7C15ULL ^
                   (static_cast<std::uint64_t>(p.y) + 0x632BE59BD9B4E019ULL);
    return static_cast<std::size_t>(h ^ (h >> 29));
  }
};

using PointLookup = std::unordered_set<Point, PointHash>;

PointLookup lookup_of(const PointSet& points) {
  PointLookup s(points.begin(), points.end());
  return s;
}

std::vector<Point> translators_in(const PointSet& pattern, const PointSet& points,
                                  const PointLookup& lookup) {
  std::vector<Point> out;
  if (pattern.empty()) return out;
  const Point p0 = pattern.front();
  for (const auto& d : points) {
    const Point t = d - p0;
    bool ok = true;
    for (std::size_t i = 1; i < pattern.size() && ok; ++i) ok = lookup.count(pattern[i] + t) > 0;
    if (ok) out.push_back(t);
  }
  return out;  // sorted because `points` is
}

std::int64_t bbox_area(const PointSet& p) {
  std::int64_t x0 = p.front().x, x1 = p.front().x, y0 = p.front().y, y1 = p.front().y;
  for (const auto& q : p) {
    x0 = std::min(x0, q.x);
    x1 = std::max(x1, q.x);
    y0 = std::min(y0, q.y);
    y1 = std::max(y1, q.y);
  }
  return (x1 - x0 + 1) * (y1 - y0 + 1);
}

struct Candidate {
  Tec tec;
  PointSet covered;
  Rational ratio;
  std::int64_t area;
};

/// True when `a` should be chosen over `b`.
bool better(const Candidate& a, const Candidate& b) {
  if (a.ratio != b.ratio) return a.ratio > b.ratio;
  if (a.covered.size() != b.covered.size()) return a.covered.size() > b.covered.size();
  if (a.area != b.area) return a.area < b.area;
  return std::tie(a.tec.pattern, a.tec.translators) < std::tie(b.tec.pattern, b.tec.translators);
}

Candidate make_candidate(Tec tec) {
  Candidate c;
  c.covered = tec.covered();
  c.ratio = Rational(static_cast<std::int64_t>(c.covered.size()),
                     static_cast<std::int64_t>(tec.encoding_size()));
  c.area = bbox_area(tec.pattern);
  c.tec = std::move(tec);
  return c;
}

}  // namespace

PointSet make_point_set(std::vector<Point> points) {
  std::sort(points.begin(), points.end());
  points.erase(std::unique(points.begin(), points.end()), points.end());
  return points;
}

std::vector<Mtp> sia(const PointSet& points) {
  const std::size_t n = points.size();
  std::vector<std::pair<Point, std::uint32_t>> table;
  table.reserve(n * (n - (n > 0 ? 1 : 0)) / 2);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      table.emplace_back(points[j] - points[i], static_cast<std::uint32_t>(i));
    }
  }
  std::sort(table.begin(), table.end());
  std::vector<Mtp> out;
  for (std::size_t k = 0; k < table.size();) {
    Mtp m;
    m.vector = table[k].first;
    while (k < table.size() && table[k].first == m.vector) m.pattern.push_back(points[table[k++].second]);
    out.push_back(std::move(m));
  }
  return out;
}

PointSet Tec::covered() const {
  std::vector<Point> out;
  out.reserve(pattern.size() * translators.size());
  for (const auto& t : translators) {
    for (const auto& p : pattern) out.push_back(p + t);
  }
  return make_point_set(std::move(out));
}

std::vector<Point> find_translators(const PointSet& pattern, const PointSet& points) {
  return translators_in(pattern, points, lookup_of(points));
}

std::vector<Tec> siatec(const PointSet& points) {
  if (points.empty()) return {};
  if (points.size() == 1) return {Tec{points, {Point{0, 0}}}};
  const auto lookup = lookup_of(points);
  std::map<PointSet, std::size_t> seen;  // shape at origin -> index into out
  std::vector<Tec> out;
  for (auto& m : sia(points)) {
    PointSet shape = m.pattern;
    const Point origin = shape.front();
    for (auto& p : shape) p = p - origin;
    if (seen.count(shape)) continue;
    seen.emplace(std::move(shape), out.size());
    auto translators = translators_in(m.pattern, points, lookup);
    out.push_back({std::move(m.pattern), std::move(translators)});
  }
  return out;
}

CompressionResult cosiatec(const PointSet& input) {
  CompressionResult result;
  PointSet remaining = input;
  std::size_t cost = 0;
  while (!remaining.empty()) {
    Candidate best = make_candidate(Tec{remaining, {Point{0, 0}}});
    for (auto& tec : siatec(remaining)) {
      auto c = make_candidate(std::move(tec));
      if (better(c, best)) best = std::move(c);
    }
    PointSet rest;
    std::set_difference(remaining.begin(), remaining.end(), best.covered.begin(), best.covered.end(),
                        std::back_inserter(rest));
    remaining = std::move(rest);
    cost += best.tec.encoding_size();
    result.tecs.push_back(std::move(best.tec));
  }
  if (cost > 0) {
    result.ratio = Rational(static_cast<std::int64_t>(input.size()), static_cast<std::int64_t>(cost));
  }
  return result;
}

PointSet decode(const CompressionResult& result) {
  std::vector<Point> out;
  for (const auto& t : result.tecs) {
    const auto c = t.covered();
    out.insert(out.end(), c.begin(), c.end());
  }
  return make_point_set(std::move(out));
}

PointSet read_point_set(std::istream& in) {
  std::vector<Point> pts;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream ss(line);
    Point p;
    if (!(ss >> p.x)) continue;
    std::string extra;
    if (!(ss >> p.y) || (ss >> extra)) {
      throw std::runtime_error("point set line " + std::to_string(line_no) + ": expected 'x y'");
    }
    pts.push_back(p);
  }
  return make_point_set(std::move(pts));
}

void write_point_set(std::ostream& out, const PointSet& points) {
  for (const auto& p : points) out << p.x << ' ' << p.y << '\n';
}

}  // namespace cpdrums
