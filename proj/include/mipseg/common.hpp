#pragma once

#include <cstddef>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace mipseg {

// Error taxonomy. Everything user-facing derives from Error so the CLI can
// catch one type and exit nonzero.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& msg) : Error("shape error: " + msg) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& msg) : Error("config error: " + msg) {}
};

class FormatError : public Error {
 public:
  explicit FormatError(const std::string& msg) : Error("format error: " + msg) {}
};

class UsageError : public Error {
 public:
  explicit UsageError(const std::string& msg) : Error("usage error: " + msg) {}
};

class TrainError : public Error {
 public:
  explicit TrainError(const std::string& msg) : Error("train error: " + msg) {}
};

using Shape = std::vector<int>;

inline long long numel(const Shape& s) {
  long long n = 1;
  for (int e : s) n *= e;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << 'x';
    os << s[i];
  }
  os << ']';
  return os.str();
}

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw Error(msg);
}

// Worker count for kernels that parallelize over independent output chunks.
// 1 (the default) means strictly sequential execution. Kernels partition
// work so that every output element is written by exactly one thread, so
// results are identical for any setting.
inline int& thread_count_ref() {
  static int n = 1;
  return n;
}

inline int num_threads() { return thread_count_ref(); }

inline void set_num_threads(int n) { thread_count_ref() = n < 1 ? 1 : n; }

}  // namespace mipseg
