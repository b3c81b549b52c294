#pragma once

#include <stdexcept>
#include <string>

namespace fbftl {

// Bad configuration, bad file, bad CLI usage. CLI maps this to exit code 1.
class config_error : public std::runtime_error {
 public:
  explicit config_error(const std::string& what) : std::runtime_error(what) {}
};

// Numeric fault (non-finite values, overflow). CLI maps this to exit code 2.
class numeric_error : public std::runtime_error {
 public:
  explicit numeric_error(const std::string& what) : std::runtime_error(what) {}
};

// A training run that blew up mid-flight. Carries a short diagnostic trace.
class aborted_run_error : public numeric_error {
 public:
  aborted_run_error(const std::string& what, std::string trace)
      : numeric_error(what), trace_(std::move(trace)) {}
  const std::string& trace() const { return trace_; }

 private:
  std::string trace_;
};

}  // namespace fbftl
