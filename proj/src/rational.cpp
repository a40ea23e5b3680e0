/**
 * @file rational.cpp
 * @brief Rational helpers.
 */

#include "cpdrums/rational.h"

#include <charconv>
#include <stdexcept>

namespace cpdrums {

std::string to_string(const Rational& r) {
  if (r.denominator() == 1) return std::to_string(r.numerator());
  return std::to_string(r.numerator()) + "/" + std::to_string(r.denominator());
}

namespace {

std::int64_t parse_int(std::string_view s, const std::string& whole) {
  std::int64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw std::invalid_argument("malformed rational: '" + whole + "'");
  }
  return v;
}

}  // namespace

Rational parse_rational(const std::string& text) {
  const auto slash = text.find('/');
  std::string_view sv(text);
  if (slash == std::string::npos) return Rational(parse_int(sv, text));
  const auto num = parse_int(sv.substr(0, slash), text);
  const auto den = parse_int(sv.substr(slash + 1), text);
  if (den == 0) throw std::invalid_argument("zero denominator: '" + text + "'");
  return Rational(num, den);
}

double to_double(const Rational& r) {
  return static_cast<double>(r.numerator()) / static_cast<double>(r.denominator());
}

std::int64_t floor_int(const Rational& r) {
  // boost normalizes the denominator to be positive.
  auto q = r.numerator() / r.denominator();
  if (r.numerator() % r.denominator() != 0 && r.numerator() < 0) --q;
  return q;
}

std::int64_t round_half_down(const Rational& r) {
  const auto lo = floor_int(r);
  const Rational frac = r - Rational(lo);
  return frac > Rational(1, 2) ? lo + 1 : lo;
}

}  // namespace cpdrums
