#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace cxr {

/// Domain error raised by every module (bad input, malformed files,
/// violated preconditions). The CLI maps it to exit code 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A per-query failure inside a batch, tagged with the query's position.
class QueryError : public Error {
 public:
  QueryError(std::size_t query_index, const std::string& what)
      : Error("query " + std::to_string(query_index) + ": " + what),
        query_index_(query_index) {}

  std::size_t query_index() const noexcept { return query_index_; }

 private:
  std::size_t query_index_;
};

}  // namespace cxr
