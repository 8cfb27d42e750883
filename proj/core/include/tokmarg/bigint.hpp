#pragma once

#include <string>

#include <boost/multiprecision/cpp_int.hpp>

namespace tokmarg {

using BigInt = boost::multiprecision::cpp_int;

inline std::string to_decimal(const BigInt& value) { return value.str(); }

inline BigInt parse_decimal(const std::string& text) { return BigInt(text); }

}  // namespace tokmarg
