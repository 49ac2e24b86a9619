#pragma once

#include <cstdlib>
#include <sstream>
#include <string>

namespace masksurf::detail {

// strtod accepts "nan" and "inf", which stream extraction rejects; loaders
// need to see them to report a data error rather than a parse error.
inline bool parse_double(const std::string& tok, double& out) {
  if (tok.empty()) return false;
  char* end = nullptr;
  out = std::strtod(tok.c_str(), &end);
  return end == tok.c_str() + tok.size();
}

inline bool read_double(std::istream& in, double& out) {
  std::string tok;
  return static_cast<bool>(in >> tok) && parse_double(tok, out);
}

}  // namespace masksurf::detail
