/**
 * @file rational.h
 * @brief Exact rational arithmetic for musical positions (quarters, tempi).
 */

#pragma once

#include <boost/rational.hpp>

#include <cstdint>
#include <string>

// Boost's mixed rational/integer operator== recurses forever under C++20 rewritten
// comparisons. Exact-match overloads win overload resolution and break the cycle.
namespace boost {
inline bool operator==(const rational<std::int64_t>& a, int b) { return a == rational<std::int64_t>(b); }
inline bool operator==(const rational<std::int64_t>& a, long b) { return a == rational<std::int64_t>(b); }
inline bool operator==(const rational<std::int64_t>& a, long long b) {
  return a == rational<std::int64_t>(static_cast<std::int64_t>(b));
}
}  // namespace boost

namespace cpdrums {

using Rational = boost::rational<std::int64_t>;

/// "3/4", or "2" when the denominator is 1.
std::string to_string(const Rational& r);

/// Inverse of to_string. Throws std::invalid_argument on malformed text.
Rational parse_rational(const std::string& text);

double to_double(const Rational& r);

/// Floor of a rational as an integer.
std::int64_t floor_int(const Rational& r);

/// Nearest integer, ties toward the smaller value.
std::int64_t round_half_down(const Rational& r);

}  // namespace cpdrums
